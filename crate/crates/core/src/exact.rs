//! Exact stationary analysis of the full line chain for small instances.
//!
//! EB lines are modelled on echelon-WIP vectors `x_1 ≥ … ≥ x_{N-1}` with
//! `x_n ≤ K_n`, IB lines on installation-WIP vectors `w_n ≤ 1 + C_n`. The
//! transition law is written here independently of the simulator, directly
//! in those coordinates.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::decomposition::PerformanceReport;
use crate::error::{Error, Result};
use crate::line::{state_count_eb, state_count_ib, LineSpec, Policy};

pub const DEFAULT_STATE_CAP: u64 = 200_000;
const DENSE_LIMIT: usize = 1500;

/// Bijection between feasible state vectors and `0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateIndex {
    policy: Policy,
    states: Vec<Vec<u32>>,
    lookup: HashMap<Vec<u32>, usize>,
}

impl StateIndex {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    /// The state vector (echelon WIP for EB, installation WIP for IB).
    pub fn state(&self, i: usize) -> &[u32] {
        &self.states[i]
    }

    pub fn index_of(&self, s: &[u32]) -> Option<usize> {
        self.lookup.get(s).copied()
    }

    /// Stage WIP `y_1..y_{N-1}` of state `i`.
    pub fn stage_wip(&self, i: usize) -> Vec<u32> {
        let s = &self.states[i];
        match self.policy {
            Policy::Ib => s.clone(),
            Policy::Eb => (0..s.len())
                .map(|n| s[n] - s.get(n + 1).copied().unwrap_or(0))
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> {
        self.states.iter().map(Vec::as_slice)
    }

    fn from_states(policy: Policy, states: Vec<Vec<u32>>) -> Self {
        let lookup = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { policy, states, lookup }
    }
}

/// Sparse row-stochastic matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    row_start: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl TransitionMatrix {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_start = Vec::with_capacity(rows.len() + 1);
        let (mut col, mut val) = (Vec::new(), Vec::new());
        row_start.push(0);
        for row in rows {
            for (c, v) in row {
                col.push(c);
                val.push(v);
            }
            row_start.push(col.len());
        }
        Self { row_start, col, val }
    }

    pub fn dim(&self) -> usize {
        self.row_start.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.col.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_start[i]..self.row_start[i + 1];
        self.col[r.clone()].iter().copied().zip(self.val[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).filter(|&(c, _)| c == j).map(|(_, v)| v).sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    fn transpose(&self) -> Self {
        let n = self.dim();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for i in 0..n {
            for (j, v) in self.row(i) {
                rows[j].push((i, v));
            }
        }
        Self::from_rows(rows)
    }

    /// `pi · P`.
    fn left_mul(&self, pi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (i, &w) in pi.iter().enumerate() {
            if w != 0.0 {
                for (j, v) in self.row(i) {
                    out[j] += w * v;
                }
            }
        }
        out
    }
}

/// Maximum absolute entry of `pi · P − pi`.
pub fn stationary_residual(matrix: &TransitionMatrix, pi: &[f64]) -> f64 {
    matrix
        .left_mul(pi)
        .iter()
        .zip(pi)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn enumerate_echelon(k: &[usize]) -> Vec<Vec<u32>> {
    fn rec(k: &[usize], n: usize, upper: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if n == k.len() {
            out.push(cur.clone());
            return;
        }
        for v in 0..=upper.min(k[n]) {
            cur.push(v as u32);
            rec(k, n + 1, v, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, 0, usize::MAX, &mut Vec::new(), &mut out);
    out
}

fn enumerate_box(caps: &[usize]) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for &c in caps {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..=c as u32).map(move |v| {
                    let mut t = s.clone();
                    t.push(v);
                    t
                })
            })
            .collect();
    }
    out
}

/// Which of `M_1..M_N` may produce in state `s`.
fn eligible(spec: &LineSpec, s: &[u32]) -> Vec<bool> {
    let big_n = spec.n_machines();
    let mut e = vec![false; big_n];
    match spec.policy() {
        Policy::Eb => {
            let k = spec.echelon().as_slice();
            for n in 0..big_n - 1 {
                let has_input = n == 0 || s[n - 1] > s[n];
                e[n] = has_input && (s[n] as usize) < k[n];
            }
            e[big_n - 1] = s[big_n - 2] > 0;
        }
        Policy::Ib => {
            let c = spec.buffer_caps();
            for n in 0..big_n - 1 {
                let has_input = n == 0 || s[n - 1] >= 1;
                e[n] = has_input && (s[n] as usize) < c[n] + 1;
            }
            e[big_n - 1] = s[big_n - 2] >= 1;
        }
    }
    e
}

fn successor(policy: Policy, s: &[u32], produced: &[bool]) -> Vec<u32> {
    let last = produced[produced.len() - 1];
    (0..s.len())
        .map(|n| match policy {
            // every echelon loses a part when the last machine produces
            Policy::Eb => s[n] + u32::from(produced[n]) - u32::from(last),
            Policy::Ib => s[n] + u32::from(produced[n]) - u32::from(produced[n + 1]),
        })
        .collect()
}

/// Enumerates the state space and transition matrix of the line.
pub fn build_chain(spec: &LineSpec) -> Result<(StateIndex, TransitionMatrix)> {
    build_chain_capped(spec, DEFAULT_STATE_CAP)
}

pub fn build_chain_capped(spec: &LineSpec, cap: u64) -> Result<(StateIndex, TransitionMatrix)> {
    // the IB chain tracks w_n up to 1 + C_n, one level more than the
    // buffer-content count of `state_count_ib`
    let count = match spec.policy() {
        Policy::Eb => state_count_eb(spec.echelon())?,
        Policy::Ib => state_count_ib(&spec.buffer_caps().iter().map(|c| c + 1).collect::<Vec<_>>())?,
    };
    if count > cap {
        return Err(Error::TooLarge { states: count, cap });
    }
    let states = match spec.policy() {
        Policy::Eb => enumerate_echelon(spec.echelon().as_slice()),
        Policy::Ib => enumerate_box(&spec.buffer_caps().iter().map(|c| c + 1).collect::<Vec<_>>()),
    };
    let index = StateIndex::from_states(spec.policy(), states);
    let p = spec.production_probs();
    let rows = index
        .states
        .iter()
        .map(|s| {
            let elig = eligible(spec, s);
            let active: Vec<usize> = (0..elig.len()).filter(|&m| elig[m]).collect();
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(1 << active.len());
            let mut produced = vec![false; elig.len()];
            for mask in 0u32..(1 << active.len()) {
                let mut prob = 1.0;
                for (bit, &m) in active.iter().enumerate() {
                    let on = mask & (1 << bit) != 0;
                    produced[m] = on;
                    prob *= if on { p[m] } else { 1.0 - p[m] };
                }
                if prob == 0.0 {
                    continue;
                }
                let next = successor(spec.policy(), s, &produced);
                let j = index
                    .index_of(&next)
                    .ok_or_else(|| Error::InfeasibleState(next.clone()))?;
                row.push((j, prob));
            }
            row.sort_unstable_by_key(|&(j, _)| j);
            row.dedup_by(|later, first| {
                if later.0 == first.0 {
                    first.1 += later.1;
                    true
                } else {
                    false
                }
            });
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((index, TransitionMatrix::from_rows(rows)))
}

/// Stationary distribution with residual at most `1e-12`.
///
/// Small chains use a dense LU solve of `π(P − I) = 0` with one equation
/// replaced by the normalization; larger ones sparse Gauss-Seidel, with
/// power iteration on the lazy chain as a fallback.
pub fn stationary(matrix: &TransitionMatrix) -> Result<Vec<f64>> {
    const TOL: f64 = 1e-12;
    let n = matrix.dim();
    if n == 0 {
        return Err(Error::SingularSystem("empty chain".into()));
    }
    if n <= DENSE_LIMIT {
        if let Some(pi) = dense_solve(matrix) {
            if stationary_residual(matrix, &pi) <= TOL {
                return Ok(pi);
            }
        }
    }
    if let Some(pi) = gauss_seidel(matrix, TOL) {
        return Ok(pi);
    }
    power_iteration(matrix, TOL)
}

fn dense_solve(matrix: &TransitionMatrix) -> Option<Vec<f64>> {
    let n = matrix.dim();
    // A = Pᵀ − I with the last row replaced by ones; A π = e_n
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for (j, v) in matrix.row(i) {
            a[(j, i)] += v;
        }
        a[(i, i)] -= 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let pi = a.lu().solve(&b)?;
    let mut pi: Vec<f64> = pi.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = pi.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    pi.iter_mut().for_each(|v| *v /= total);
    Some(pi)
}

fn gauss_seidel(matrix: &TransitionMatrix, tol: f64) -> Option<Vec<f64>> {
    let n = matrix.dim();
    let incoming = matrix.transpose();
    let stay: Vec<f64> = (0..n).map(|i| matrix.get(i, i)).collect();
    let mut pi = vec![1.0 / n as f64; n];
    for sweep in 1..=200_000 {
        for j in 0..n {
            let out = 1.0 - stay[j];
            if out <= 0.0 {
                continue;
            }
            let inflow: f64 = incoming.row(j).filter(|&(i, _)| i != j).map(|(i, v)| pi[i] * v).sum();
            pi[j] = inflow / out;
        }
        let total: f64 = pi.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return None;
        }
        pi.iter_mut().for_each(|v| *v /= total);
        if sweep % 10 == 0 && stationary_residual(matrix, &pi) <= tol {
            return Some(pi);
        }
    }
    None
}

fn power_iteration(matrix: &TransitionMatrix, tol: f64) -> Result<Vec<f64>> {
    let n = matrix.dim();
    let mut pi = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    for _ in 0..1_000_000 {
        let next = matrix.left_mul(&pi);
        // lazy step keeps periodic chains from oscillating
        pi.iter_mut().zip(&next).for_each(|(a, b)| *a = 0.5 * (*a + b));
        residual = stationary_residual(matrix, &pi);
        if residual <= tol {
            return Ok(pi);
        }
    }
    Err(Error::SingularSystem(format!(
        "no stationary vector found (residual {residual:e})"
    )))
}

/// Exact line measures from a stationary vector.
pub fn exact_measures(spec: &LineSpec, index: &StateIndex, pi: &[f64]) -> PerformanceReport {
    let big_n = spec.n_machines();
    let p = spec.production_probs();
    let c = spec.buffer_caps();
    let mut throughput = 0.0;
    let mut stage_wip = vec![0.0; big_n - 1];
    let mut overflow = vec![0.0; big_n.saturating_sub(2)];
    for (i, &w) in pi.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let s = index.state(i);
        let y = index.stage_wip(i);
        let elig = eligible(spec, s);
        if elig[big_n - 1] {
            throughput += w * p[big_n - 1];
        }
        for (acc, &v) in stage_wip.iter_mut().zip(&y) {
            *acc += w * v as f64;
        }
        for (n, acc) in overflow.iter_mut().enumerate() {
            if elig[n] && y[n] as usize > c[n] {
                let next_starts = if elig[n + 1] { p[n + 1] } else { 0.0 };
                *acc += w * p[n] * (1.0 - next_starts);
            }
        }
    }
    let mut echelon_wip = stage_wip.clone();
    for n in (0..echelon_wip.len().saturating_sub(1)).rev() {
        echelon_wip[n] += echelon_wip[n + 1];
    }
    PerformanceReport {
        throughput,
        stage_wip,
        echelon_wip,
        overflow,
        outer_iterations: 0,
        wall_time: 0.0,
    }
}

/// Builds, solves and measures the full chain in one go.
pub fn solve_exact(spec: &LineSpec) -> Result<PerformanceReport> {
    let started = Instant::now();
    let (index, matrix) = build_chain(spec)?;
    let pi = stationary(&matrix)?;
    let mut report = exact_measures(spec, &index, &pi);
    report.wall_time = started.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn one_state_chain() {
        let m = TransitionMatrix::from_rows(vec![vec![(0, 1.0)]]);
        assert_eq!(stationary(&m).unwrap(), vec![1.0]);
    }

    #[test]
    fn doubly_stochastic_is_uniform() {
        let m = TransitionMatrix::from_rows(vec![
            vec![(0, 0.2), (1, 0.5), (2, 0.3)],
            vec![(0, 0.5), (1, 0.3), (2, 0.2)],
            vec![(0, 0.3), (1, 0.2), (2, 0.5)],
        ]);
        for v in stationary(&m).unwrap() {
            assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-14);
        }
        assert_relative_eq!(gauss_seidel(&m, 1e-13).unwrap()[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(power_iteration(&m, 1e-13).unwrap()[0], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn echelon_state_space_matches_count() {
        let spec = LineSpec::new(vec![0.5; 4], vec![2, 0, 1], Policy::Eb).unwrap();
        let (index, m) = build_chain(&spec).unwrap();
        assert_eq!(index.len() as u64, state_count_eb(spec.echelon()).unwrap());
        for s in m.row_sums() {
            assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn large_line_is_refused() {
        let spec = LineSpec::new(vec![0.5; 7], vec![5; 6], Policy::Eb).unwrap();
        assert_eq!(
            build_chain(&spec).unwrap_err(),
            Error::TooLarge {
                states: 992_446,
                cap: DEFAULT_STATE_CAP
            }
        );
    }

    #[test]
    fn saturated_line() {
        let spec = LineSpec::new(vec![1.0; 3], vec![1, 1], Policy::Eb).unwrap();
        let r = solve_exact(&spec).unwrap();
        assert_relative_eq!(r.throughput, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn sparse_and_dense_solves_agree() {
        let spec = LineSpec::new(vec![0.6, 0.5, 0.7, 0.55], vec![2, 1, 2], Policy::Eb).unwrap();
        let (_, m) = build_chain(&spec).unwrap();
        let dense = dense_solve(&m).unwrap();
        let sparse = gauss_seidel(&m, 1e-13).unwrap();
        for (a, b) in dense.iter().zip(&sparse) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
