//! Performance evaluation of discrete-time Bernoulli serial production lines
//! operated under echelon-buffer (EB), installation-buffer (IB) or CONWIP
//! control.
//!
//! * [`decomposition`] approximates EB lines by nested two-machine subsystems.
//! * [`simulate`] runs replicated time-driven simulations of EB, IB and CONWIP lines.
//! * [`exact`] builds and solves the full line chain for small instances.

pub mod birth_death;
pub mod decomposition;
pub mod error;
pub mod exact;
pub mod line;
pub mod simulate;
pub mod subsystem;

pub use decomposition::{decompose, DecompositionOptions, PerformanceReport};
pub use error::{Error, Result};
pub use line::{EchelonCapacities, LineSpec, Policy};
pub use simulate::{simulate, SimConfig, SimEstimate, SimReport};
