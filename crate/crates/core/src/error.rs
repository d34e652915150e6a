use thiserror::Error;

/// Errors raised while building, solving or simulating a line.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid line specification: {0}")]
    InvalidSpec(String),

    #[error("echelon capacities must be non-increasing and at least 1, got {0:?}")]
    NonMonotoneCapacities(Vec<usize>),

    #[error("state count does not fit in 64 bits")]
    Overflow,

    #[error("invalid subsystem parameters: {0}")]
    InvalidParams(String),

    #[error("no convergence after {iterations} iterations (worst residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("downstream production probability is zero at level {0}")]
    DegenerateDownstream(usize),

    #[error("stage {stage} has negative average WIP {value}")]
    NegativeStageWip { stage: usize, value: f64 },

    #[error("state {0:?} violates the capacity constraints")]
    InfeasibleState(Vec<u32>),

    #[error("chain has {states} states, above the cap of {cap}")]
    TooLarge { states: u64, cap: u64 },

    #[error("stationary system is singular: {0}")]
    SingularSystem(String),

    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;
