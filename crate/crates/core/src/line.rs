//! Line specifications, capacity transforms and state-space sizes.
//!
//! A line has `N` Bernoulli machines `M_1..M_N` and `N - 1` intermediate
//! buffers with installation capacities `C_1..C_{N-1}`. The echelon capacity
//! following machine `n` is `K_n = 1 + C_n + ... + C_{N-1}`; every solver in
//! this crate indexes on `K`, so that is what [`LineSpec`] stores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Buffer-control policy of a line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Echelon buffer: a machine may park parts in any downstream buffer.
    Eb,
    /// Installation buffer: a machine may only use its own downstream buffer.
    Ib,
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Policy::Eb => f.write_str("eb"),
            Policy::Ib => f.write_str("ib"),
        }
    }
}

/// Echelon capacities `K_1 >= K_2 >= ... >= K_{N-1} >= 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct EchelonCapacities(Vec<usize>);

impl EchelonCapacities {
    pub fn new(k: Vec<usize>) -> Result<Self> {
        let monotone = k.windows(2).all(|w| w[0] >= w[1]);
        if k.is_empty() || !monotone || k.contains(&0) {
            return Err(Error::NonMonotoneCapacities(k));
        }
        Ok(Self(k))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `K_n` with the 1-based index used throughout the line model.
    pub fn get(&self, n: usize) -> usize {
        self.0[n - 1]
    }

    /// The installation view `C_n = K_n - K_{n+1}`, `C_{N-1} = K_{N-1} - 1`.
    pub fn installation(&self) -> Vec<usize> {
        let k = &self.0;
        (0..k.len())
            .map(|n| if n + 1 < k.len() { k[n] - k[n + 1] } else { k[n] - 1 })
            .collect()
    }
}

impl TryFrom<Vec<usize>> for EchelonCapacities {
    type Error = Error;

    fn try_from(k: Vec<usize>) -> Result<Self> {
        Self::new(k)
    }
}

impl From<EchelonCapacities> for Vec<usize> {
    fn from(k: EchelonCapacities) -> Self {
        k.0
    }
}

/// A serial line: production probabilities, capacities and policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSpec {
    production: Vec<f64>,
    echelon: EchelonCapacities,
    policy: Policy,
}

impl LineSpec {
    /// Builds a line from per-machine production probabilities and
    /// installation buffer capacities `C_1..C_{N-1}`.
    pub fn new(production: Vec<f64>, buffers: Vec<usize>, policy: Policy) -> Result<Self> {
        let n = production.len();
        if n < 2 {
            return Err(Error::InvalidSpec(format!("a line needs at least 2 machines, got {n}")));
        }
        if buffers.len() != n - 1 {
            return Err(Error::InvalidSpec(format!(
                "{n} machines need {} buffer capacities, got {}",
                n - 1,
                buffers.len()
            )));
        }
        if let Some((m, p)) = production.iter().enumerate().find(|(_, &p)| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::InvalidSpec(format!(
                "production probability of machine {} must lie in (0, 1], got {p}",
                m + 1
            )));
        }
        let echelon = echelon_from_buffers(&buffers)?;
        Ok(Self {
            production,
            echelon,
            policy,
        })
    }

    pub fn from_echelon(production: Vec<f64>, echelon: EchelonCapacities, policy: Policy) -> Result<Self> {
        Self::new(production, echelon.installation(), policy)
    }

    pub fn n_machines(&self) -> usize {
        self.production.len()
    }

    pub fn production_probs(&self) -> &[f64] {
        &self.production
    }

    /// `p_n`, 1-based.
    pub fn p(&self, n: usize) -> f64 {
        self.production[n - 1]
    }

    pub fn buffer_caps(&self) -> Vec<usize> {
        self.echelon.installation()
    }

    pub fn echelon(&self) -> &EchelonCapacities {
        &self.echelon
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn with_policy(&self, policy: Policy) -> Self {
        Self { policy, ..self.clone() }
    }

    /// Throughput can never exceed the slowest machine.
    pub fn bottleneck_rate(&self) -> f64 {
        self.production.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn echelon_from_buffers(buffers: &[usize]) -> Result<EchelonCapacities> {
    let mut k = vec![0usize; buffers.len()];
    let mut acc = 1usize;
    for (n, &c) in buffers.iter().enumerate().rev() {
        acc = acc
            .checked_add(c)
            .ok_or_else(|| Error::InvalidSpec("buffer capacities overflow".into()))?;
        k[n] = acc;
    }
    EchelonCapacities::new(k)
}

/// `K_n = 1 + sum_{m >= n} C_m`.
pub fn echelon_capacities(spec: &LineSpec) -> EchelonCapacities {
    spec.echelon.clone()
}

/// Inverse transform `C_n = K_n - K_{n+1}`, `C_{N-1} = K_{N-1} - 1`.
pub fn installation_capacities(k: &[usize]) -> Result<Vec<usize>> {
    Ok(EchelonCapacities::new(k.to_vec())?.installation())
}

/// Number of feasible echelon-WIP vectors `K_1 >= x_1 >= x_2 >= ... >= x_{N-1} >= 0`
/// with `x_n <= K_n`.
///
/// Runs a prefix-sum dynamic program from the last buffer upstream instead of
/// the literal nested sums.
pub fn state_count_eb(k: &EchelonCapacities) -> Result<u64> {
    let k = k.as_slice();
    let last = k.len() - 1;
    // ways[v]: number of feasible tails (x_n..x_{N-1}) with x_n = v.
    let mut ways: Vec<u64> = vec![1; k[last] + 1];
    for n in (0..last).rev() {
        let mut next = Vec::with_capacity(k[n] + 1);
        let mut running = 0u64;
        for v in 0..=k[n] {
            if v < ways.len() {
                running = running.checked_add(ways[v]).ok_or(Error::Overflow)?;
            }
            next.push(running);
        }
        ways = next;
    }
    ways.iter()
        .try_fold(0u64, |acc, &w| acc.checked_add(w))
        .ok_or(Error::Overflow)
}

/// `prod_n (C_n + 1)`.
pub fn state_count_ib(buffers: &[usize]) -> Result<u64> {
    buffers.iter().try_fold(1u64, |acc, &c| {
        (c as u64)
            .checked_add(1)
            .and_then(|f| acc.checked_mul(f))
            .ok_or(Error::Overflow)
    })
}

/// True when every buffer but the last has zero capacity, i.e. the
/// echelon-buffer line is a CONWIP line with WIP cap `K_1`.
pub fn is_conwip(spec: &LineSpec) -> bool {
    let k = spec.echelon.as_slice();
    k.iter().all(|&v| v == k[0])
}
