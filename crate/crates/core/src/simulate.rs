//! Time-driven simulation of Bernoulli lines.
//!
//! Every period each machine checks eligibility against the state at the
//! start of the period, eligible machines produce independently with their
//! own probability, and all moves are applied at once. That is the same
//! transition law the analytical chains encode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::line::{EchelonCapacities, LineSpec, Policy};

/// Blocking rule of a line, with stage WIP `y_1..y_{N-1}` as the state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LineDynamics {
    /// Echelon capacities `K_1..K_{N-1}`.
    Echelon(EchelonCapacities),
    /// Installation capacities `1 + C_n`.
    Installation(Vec<usize>),
    /// A single cap on total WIP, enforced only at the first machine.
    Conwip(usize),
}

impl LineDynamics {
    pub fn for_spec(spec: &LineSpec) -> Self {
        match spec.policy() {
            Policy::Eb => Self::Echelon(spec.echelon().clone()),
            Policy::Ib => Self::Installation(spec.buffer_caps().iter().map(|c| c + 1).collect()),
        }
    }

    /// Number of stages, `N − 1`.
    pub fn stages(&self) -> usize {
        match self {
            Self::Echelon(k) => k.len(),
            Self::Installation(caps) => caps.len(),
            Self::Conwip(_) => 0,
        }
    }

    pub fn is_feasible(&self, y: &[u32]) -> bool {
        match self {
            Self::Echelon(k) => {
                let mut x = 0u64;
                for (n, &yn) in y.iter().enumerate().rev() {
                    x += u64::from(yn);
                    if x > k.as_slice()[n] as u64 {
                        return false;
                    }
                }
                true
            }
            Self::Installation(caps) => y.iter().zip(caps).all(|(&w, &c)| w as usize <= c),
            Self::Conwip(cap) => y.iter().map(|&v| v as u64).sum::<u64>() <= *cap as u64,
        }
    }

    /// Eligibility of `M_1..M_N` in state `y` (writes `y.len() + 1` flags).
    fn eligibility(&self, y: &[u32], elig: &mut [bool]) {
        let stages = y.len();
        // echelon WIP x_n, computed on the fly from the back
        let mut x = 0usize;
        elig[stages] = y[stages - 1] >= 1;
        for n in (0..stages).rev() {
            x += y[n] as usize;
            let starved = n > 0 && y[n - 1] == 0;
            let blocked = match self {
                Self::Echelon(k) => x >= k.as_slice()[n],
                Self::Installation(caps) => y[n] as usize >= caps[n],
                Self::Conwip(cap) => n == 0 && x >= *cap,
            };
            elig[n] = !starved && !blocked;
        }
    }

    /// Stage-WIP threshold above which an arriving part at stage `n` (0-based)
    /// has to be stored remotely, i.e. `C_n + 1`.
    fn overflow_threshold(&self, n: usize) -> Option<u32> {
        match self {
            Self::Echelon(k) => Some((k.as_slice()[n] - k.as_slice()[n + 1] + 1) as u32),
            _ => None,
        }
    }
}

/// Result of a single simulated period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub next: Vec<u32>,
    pub produced: Vec<bool>,
    /// Remote-storage events at stages `1..N-2` (empty for IB).
    pub overflow: Vec<bool>,
}

/// Working buffers for the period update.
struct Stepper {
    elig: Vec<bool>,
}

impl Stepper {
    fn new(stages: usize) -> Self {
        Self {
            elig: vec![false; stages + 1],
        }
    }

    /// Applies one period in place. `draws[n]` says whether `M_{n+1}` would
    /// produce if eligible. Returns whether the last machine produced.
    fn step(
        &mut self,
        dyn_: &LineDynamics,
        y: &mut [u32],
        draws: &[bool],
        produced: &mut [bool],
        overflow: &mut [bool],
    ) -> bool {
        let stages = y.len();
        dyn_.eligibility(y, &mut self.elig);
        for n in 0..=stages {
            produced[n] = self.elig[n] && draws[n];
        }
        for (n, flag) in overflow.iter_mut().enumerate() {
            *flag = match dyn_.overflow_threshold(n) {
                Some(t) => produced[n] && !produced[n + 1] && y[n] >= t,
                None => false,
            };
        }
        for n in 0..stages {
            y[n] = y[n] + u32::from(produced[n]) - u32::from(produced[n + 1]);
        }
        debug_assert!(dyn_.is_feasible(y), "infeasible state {y:?}");
        produced[stages]
    }
}

fn check_step_input(dyn_: &LineDynamics, y: &[u32], draws: &[bool]) -> Result<()> {
    if y.is_empty() || draws.len() != y.len() + 1 {
        return Err(Error::InvalidParams(format!(
            "{} stages need {} draws, got {}",
            y.len(),
            y.len() + 1,
            draws.len()
        )));
    }
    if dyn_.stages() != 0 && dyn_.stages() != y.len() {
        return Err(Error::InvalidParams("state length does not match the line".into()));
    }
    if !dyn_.is_feasible(y) {
        return Err(Error::InfeasibleState(y.to_vec()));
    }
    Ok(())
}

fn step_with(dyn_: &LineDynamics, y: &[u32], draws: &[bool]) -> Result<StepOutcome> {
    check_step_input(dyn_, y, draws)?;
    let mut next = y.to_vec();
    let mut produced = vec![false; y.len() + 1];
    let mut overflow = vec![false; y.len().saturating_sub(1)];
    Stepper::new(y.len()).step(dyn_, &mut next, draws, &mut produced, &mut overflow);
    if !matches!(dyn_, LineDynamics::Echelon(_)) {
        overflow.clear();
    }
    Ok(StepOutcome {
        next,
        produced,
        overflow,
    })
}

/// One EB period from stage WIP `y`.
pub fn step_eb(y: &[u32], draws: &[bool], k: &EchelonCapacities) -> Result<StepOutcome> {
    step_with(&LineDynamics::Echelon(k.clone()), y, draws)
}

/// One IB period from installation WIP `w` with buffer capacities `c`
/// (machine `M_n` blocks at `w_n = 1 + C_n`).
pub fn step_ib(w: &[u32], draws: &[bool], c: &[usize]) -> Result<StepOutcome> {
    step_with(&LineDynamics::Installation(c.iter().map(|v| v + 1).collect()), w, draws)
}

/// One CONWIP period: only `M_1` can block, at total WIP `cap`.
pub fn step_conwip(y: &[u32], draws: &[bool], cap: usize) -> Result<StepOutcome> {
    step_with(&LineDynamics::Conwip(cap), y, draws)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub replications: usize,
    pub horizon: u64,
    pub base_seed: u64,
    #[serde(default)]
    pub warmup: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            replications: 30,
            horizon: 500_000,
            base_seed: 0,
            warmup: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 || self.horizon == 0 {
            return Err(Error::InvalidSpec(
                "simulation needs at least one replication and one period".into(),
            ));
        }
        if self.warmup >= self.horizon {
            return Err(Error::InvalidSpec("warmup must be shorter than the horizon".into()));
        }
        Ok(())
    }
}

/// Across-replication mean with a Student-t 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEstimate {
    pub mean: f64,
    pub half_width_95: f64,
    pub n: usize,
}

impl SimEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                half_width_95: 0.0,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Self {
                mean,
                half_width_95: 0.0,
                n,
            };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        Self {
            mean,
            half_width_95: t * (var / n as f64).sqrt(),
            n,
        }
    }

    /// Whether `value` lies inside the interval widened by `extra`.
    pub fn covers(&self, value: f64, extra: f64) -> bool {
        (self.mean - value).abs() <= self.half_width_95 + extra
    }
}

/// Time averages of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationStats {
    pub throughput: f64,
    pub stage_wip: Vec<f64>,
    pub overflow: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: Policy,
    pub throughput: SimEstimate,
    pub stage_wip: Vec<SimEstimate>,
    /// Remote-storage rates `θ_1..θ_{N-2}`; empty for IB.
    pub overflow: Vec<SimEstimate>,
    pub replications: Vec<ReplicationStats>,
}

fn replication_rng(base_seed: u64, replication: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(replication as u64);
    rng
}

/// Runs one replication from the empty line and calls `observe` with the
/// start-of-period state of every period.
///
/// Exactly one uniform is drawn per machine and period, so the random
/// numbers depend only on (seed, replication, period, machine).
pub fn for_each_state(
    dyn_: &LineDynamics,
    p: &[f64],
    base_seed: u64,
    replication: usize,
    horizon: u64,
    mut observe: impl FnMut(&[u32], &[bool], &[bool]),
) {
    let stages = p.len() - 1;
    let mut rng = replication_rng(base_seed, replication);
    let mut stepper = Stepper::new(stages);
    let mut y = vec![0u32; stages];
    let mut draws = vec![false; stages + 1];
    let mut produced = vec![false; stages + 1];
    let mut overflow = vec![false; stages.saturating_sub(1)];
    for _ in 0..horizon {
        for (d, &pn) in draws.iter_mut().zip(p) {
            *d = rng.random::<f64>() < pn;
        }
        let before = y.clone();
        stepper.step(dyn_, &mut y, &draws, &mut produced, &mut overflow);
        observe(&before, &produced, &overflow);
    }
}

/// State trajectory (start-of-period states) of one replication.
pub fn trace(dyn_: &LineDynamics, p: &[f64], base_seed: u64, replication: usize, horizon: u64) -> Vec<Vec<u32>> {
    let mut out = Vec::with_capacity(horizon as usize);
    for_each_state(dyn_, p, base_seed, replication, horizon, |y, _, _| out.push(y.to_vec()));
    out
}

fn run_replication(dyn_: &LineDynamics, p: &[f64], config: &SimConfig, replication: usize) -> ReplicationStats {
    let stages = p.len() - 1;
    let mut rng = replication_rng(config.base_seed, replication);
    let mut stepper = Stepper::new(stages);
    let mut y = vec![0u32; stages];
    let mut draws = vec![false; stages + 1];
    let mut produced = vec![false; stages + 1];
    let mut overflow = vec![false; stages.saturating_sub(1)];
    let mut wip_sum = vec![0u64; stages];
    let mut overflow_count = vec![0u64; stages.saturating_sub(1)];
    let mut out_count = 0u64;
    for period in 0..config.horizon {
        for (d, &pn) in draws.iter_mut().zip(p) {
            *d = rng.random::<f64>() < pn;
        }
        let counting = period >= config.warmup;
        if counting {
            wip_sum.iter_mut().zip(&y).for_each(|(s, &v)| *s += u64::from(v));
        }
        let out = stepper.step(dyn_, &mut y, &draws, &mut produced, &mut overflow);
        if counting {
            out_count += u64::from(out);
            overflow_count
                .iter_mut()
                .zip(&overflow)
                .for_each(|(c, &f)| *c += u64::from(f));
        }
    }
    let periods = (config.horizon - config.warmup) as f64;
    ReplicationStats {
        throughput: out_count as f64 / periods,
        stage_wip: wip_sum.iter().map(|&s| s as f64 / periods).collect(),
        overflow: if matches!(dyn_, LineDynamics::Echelon(_)) {
            overflow_count.iter().map(|&c| c as f64 / periods).collect()
        } else {
            Vec::new()
        },
    }
}

/// Replicated simulation of a line under arbitrary dynamics; replications
/// run in parallel and are merged in index order.
pub fn simulate_dynamics(dyn_: &LineDynamics, p: &[f64], policy: Policy, config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    if p.len() < 2 || (dyn_.stages() != 0 && dyn_.stages() != p.len() - 1) {
        return Err(Error::InvalidSpec("production vector does not match the line".into()));
    }
    let reps: Vec<ReplicationStats> = (0..config.replications)
        .into_par_iter()
        .map(|k| run_replication(dyn_, p, config, k))
        .collect();
    let column = |f: &dyn Fn(&ReplicationStats) -> f64| -> SimEstimate {
        SimEstimate::from_samples(&reps.iter().map(f).collect::<Vec<_>>())
    };
    let stages = p.len() - 1;
    let stage_wip = (0..stages).map(|n| column(&|r| r.stage_wip[n])).collect();
    let n_overflow = reps[0].overflow.len();
    let overflow = (0..n_overflow).map(|n| column(&|r| r.overflow[n])).collect();
    Ok(SimReport {
        policy,
        throughput: column(&|r| r.throughput),
        stage_wip,
        overflow,
        replications: reps,
    })
}

/// Simulates a line under its own policy.
pub fn simulate(spec: &LineSpec, config: &SimConfig) -> Result<SimReport> {
    simulate_dynamics(
        &LineDynamics::for_spec(spec),
        spec.production_probs(),
        spec.policy(),
        config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(v: &[usize]) -> EchelonCapacities {
        EchelonCapacities::new(v.to_vec()).unwrap()
    }

    #[test]
    fn nothing_happens_without_draws() {
        let out = step_eb(&[1, 2], &[false; 3], &k(&[4, 2])).unwrap();
        assert_eq!(out.next, vec![1, 2]);
        assert!(out.produced.iter().chain(&out.overflow).all(|&f| !f));
        let out = step_ib(&[1, 2], &[false; 3], &[1, 1]).unwrap();
        assert_eq!(out.next, vec![1, 2]);
    }

    #[test]
    fn blocked_first_machine_only_last_acts() {
        let out = step_eb(&[2], &[true, true], &k(&[2])).unwrap();
        assert_eq!(out.next, vec![1]);
        assert_eq!(out.produced, vec![false, true]);
    }

    #[test]
    fn overflow_needs_a_full_local_buffer() {
        // K = (4, 2): C_1 = 2, overflow when y_1 >= 3 and M_2 does not start
        let kk = k(&[4, 2]);
        let out = step_eb(&[3, 0], &[true, false, false], &kk).unwrap();
        assert_eq!(out.next, vec![4, 0]);
        assert_eq!(out.overflow, vec![true]);
        let out = step_eb(&[2, 0], &[true, false, false], &kk).unwrap();
        assert_eq!(out.overflow, vec![false]);
        let out = step_eb(&[3, 0], &[true, true, false], &kk).unwrap();
        assert_eq!(out.next, vec![3, 1]);
        assert_eq!(out.overflow, vec![false]);
    }

    #[test]
    fn echelon_blocking_looks_downstream() {
        // x_2 = K_2 blocks M_2 even though y_2 alone is small under IB rules
        let out = step_eb(&[1, 2], &[false, true, false], &k(&[4, 2])).unwrap();
        assert_eq!(out.next, vec![1, 2]);
        // M_1 blocked at x_1 = K_1 = 3
        let out = step_eb(&[1, 2], &[true, false, false], &k(&[3, 2])).unwrap();
        assert_eq!(out.next, vec![1, 2]);
    }

    #[test]
    fn infeasible_input_is_rejected() {
        assert!(matches!(
            step_eb(&[3, 2], &[false; 3], &k(&[4, 2])),
            Err(Error::InfeasibleState(_))
        ));
        assert!(step_ib(&[3, 0], &[false; 3], &[1, 1]).is_err());
        assert!(step_eb(&[0, 0], &[false; 2], &k(&[4, 2])).is_err());
    }

    #[test]
    fn estimate_of_constant_samples() {
        let e = SimEstimate::from_samples(&[0.5; 10]);
        assert_eq!(e.mean, 0.5);
        assert_eq!(e.half_width_95, 0.0);
        let single = SimEstimate::from_samples(&[0.3]);
        assert_eq!(single.half_width_95, 0.0);
    }

    #[test]
    fn t_half_width() {
        // samples 1..=5: s = sqrt(2.5), t_{0.975,4} = 2.776445
        let e = SimEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!((e.half_width_95 - 2.776445 * (2.5f64 / 5.0).sqrt()).abs() < 1e-5);
    }

    #[test]
    fn config_validation() {
        let spec = LineSpec::new(vec![0.5, 0.5], vec![1], Policy::Eb).unwrap();
        let bad = SimConfig {
            replications: 0,
            ..SimConfig::default()
        };
        assert!(simulate(&spec, &bad).is_err());
        let bad = SimConfig {
            replications: 1,
            horizon: 10,
            base_seed: 0,
            warmup: 10,
        };
        assert!(simulate(&spec, &bad).is_err());
    }
}
