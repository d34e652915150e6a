//! Fixed-point decomposition of an echelon-buffer line into N−1 nested
//! two-machine subsystems.
//!
//! Subsystem `n` (2 ≤ n ≤ N−1) sees the parts produced by `M_1..M_{n-1}` as
//! arrivals `r_{n-1}(x_{n-1})`, machine `M_n` as its upstream server and
//! `M_{n+1}..M_N` as an aggregate downstream machine `q_{n+1}(x_n)`. Two
//! neighbours are coupled by requiring the internal arrival probability
//! `λ_n` of subsystem `n` to equal the external one `r_n` of subsystem `n+1`,
//! and the conditional throughput `v_{n+1}` to equal `q_{n+1}`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::line::{LineSpec, Policy};
use crate::subsystem::{
    init_marginal_product, solve_first_subsystem, solve_stationary, SolverOptions, SubsystemMeasures, SubsystemParams,
    TriangularDistribution,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionOptions {
    /// Tolerance of the `λ_n ≈ r_n` test.
    pub eps: f64,
    pub inner: SolverOptions,
    /// Cap on the number of interior subsystem solves.
    pub max_solves: usize,
    /// Denominator floor of the `λ_n ≈ r_n` relative test.
    pub floor: f64,
    /// Drop the blocking rule at echelon buffers whose capacity equals the
    /// upstream one; such buffers can never fill before their predecessor.
    pub eliminate_obsolete: bool,
}

impl Default for DecompositionOptions {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            inner: SolverOptions::default(),
            max_solves: 100_000,
            floor: 1e-12,
            eliminate_obsolete: false,
        }
    }
}

impl DecompositionOptions {
    /// Same tolerance for the inner chain solves and the outer fixed point.
    pub fn with_eps(eps: f64) -> Self {
        Self {
            eps,
            inner: SolverOptions::with_eps(eps),
            ..Self::default()
        }
    }
}

/// Boundary vectors, warm starts and latest measures of all subsystems.
///
/// Everything is indexed by subsystem number `n`; slot 0 is unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionState {
    /// `arrival[n] = r_{n-1}` over `0..=K_{n-1}`, for 2 ≤ n ≤ N−1.
    arrival: Vec<Vec<f64>>,
    /// `downstream[n] = q_{n+1}` over `0..=K_n`, for 1 ≤ n ≤ N−1.
    downstream: Vec<Vec<f64>>,
    warm: Vec<Option<TriangularDistribution>>,
    measures: Vec<Option<SubsystemMeasures>>,
    /// Whether `λ_n ≈ r_n` held at the last check of boundary `n`.
    converged: Vec<bool>,
    solves: usize,
    sweeps: usize,
    worst_gap: f64,
}

impl DecompositionState {
    /// `r_{n-1}`, the external arrival vector of subsystem `n`.
    pub fn arrival(&self, n: usize) -> &[f64] {
        &self.arrival[n]
    }

    /// `q_{n+1}`, the downstream vector of subsystem `n`.
    pub fn downstream(&self, n: usize) -> &[f64] {
        &self.downstream[n]
    }

    pub fn warm_start(&self, n: usize) -> Option<&TriangularDistribution> {
        self.warm.get(n).and_then(Option::as_ref)
    }

    pub fn measures(&self, n: usize) -> Option<&SubsystemMeasures> {
        self.measures.get(n).and_then(Option::as_ref)
    }

    pub fn boundary_converged(&self, n: usize) -> bool {
        self.converged.get(n).copied().unwrap_or(false)
    }

    /// Number of interior subsystem solves so far.
    pub fn solves(&self) -> usize {
        self.solves
    }

    /// Total Gauss-Seidel sweeps over all solves so far.
    pub fn sweeps(&self) -> usize {
        self.sweeps
    }
}

/// Line-level estimates; vectors are 0-based (`stage_wip[0]` is `ȳ_1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub throughput: f64,
    pub stage_wip: Vec<f64>,
    pub echelon_wip: Vec<f64>,
    /// `θ_1..θ_{N-2}`; `θ_{N-1}` is identically zero and not listed.
    pub overflow: Vec<f64>,
    pub outer_iterations: usize,
    pub wall_time: f64,
}

fn min_p(spec: &LineSpec, range: std::ops::RangeInclusive<usize>) -> f64 {
    range.map(|m| spec.p(m)).fold(f64::INFINITY, f64::min)
}

fn below_cap(value: f64, cap: usize) -> Vec<f64> {
    (0..=cap).map(|x| if x < cap { value } else { 0.0 }).collect()
}

fn above_zero(value: f64, cap: usize) -> Vec<f64> {
    (0..=cap).map(|x| if x > 0 { value } else { 0.0 }).collect()
}

fn require_eb(spec: &LineSpec) -> Result<()> {
    match spec.policy() {
        Policy::Eb => Ok(()),
        Policy::Ib => Err(Error::Usage("decomposition requires EB policy".into())),
    }
}

/// Initial boundary vectors: every arrival stream runs at the slowest
/// upstream rate and every aggregate downstream machine at the slowest
/// downstream rate. Warm starts are products of birth-death marginals.
pub fn initialize(spec: &LineSpec) -> Result<DecompositionState> {
    initialize_with(spec, &DecompositionOptions::default())
}

fn initialize_with(spec: &LineSpec, opts: &DecompositionOptions) -> Result<DecompositionState> {
    require_eb(spec)?;
    let big_n = spec.n_machines();
    let k = spec.echelon();
    let mut state = DecompositionState {
        arrival: vec![Vec::new(); big_n],
        downstream: vec![Vec::new(); big_n],
        warm: vec![None; big_n],
        measures: vec![None; big_n],
        converged: vec![false; big_n],
        solves: 0,
        sweeps: 0,
        worst_gap: f64::INFINITY,
    };
    for n in 1..big_n {
        state.downstream[n] = above_zero(min_p(spec, n + 1..=big_n), k.get(n));
    }
    for n in 2..big_n {
        state.arrival[n] = below_cap(min_p(spec, 1..=n - 1), k.get(n - 1));
    }
    for n in 2..big_n {
        let params = subsystem_params(spec, &state, n, opts);
        let y_service = above_zero(min_p(spec, n..=big_n), k.get(n - 1));
        let x_arrival = below_cap(min_p(spec, 1..=n), k.get(n));
        state.warm[n] = Some(init_marginal_product(&params, &y_service, &x_arrival)?);
    }
    Ok(state)
}

fn subsystem_params(
    spec: &LineSpec,
    state: &DecompositionState,
    n: usize,
    opts: &DecompositionOptions,
) -> SubsystemParams {
    let (k_up, k_down) = (spec.echelon().get(n - 1), spec.echelon().get(n));
    let p = spec.p(n);
    SubsystemParams {
        k_up,
        k_down,
        arrival: state.arrival[n].clone(),
        production: (0..=k_up).map(|y| if y == 0 { 0.0 } else { p }).collect(),
        downstream: state.downstream[n].clone(),
        upstream_blocking: !(opts.eliminate_obsolete && k_up == k_down),
    }
}

fn solve_subsystem(
    spec: &LineSpec,
    state: &mut DecompositionState,
    n: usize,
    opts: &DecompositionOptions,
) -> Result<()> {
    let params = subsystem_params(spec, state, n, opts);
    let (dist, stats) = solve_stationary(&params, state.warm[n].as_ref(), &opts.inner)?;
    state.measures[n] = Some(SubsystemMeasures::compute(&params, &dist, stats));
    state.warm[n] = Some(dist);
    state.solves += 1;
    state.sweeps += stats.sweeps;
    Ok(())
}

/// Iterates backwards and forwards over the interior subsystems until every
/// internal arrival vector matches the external one of its successor.
pub fn run_fixed_point(spec: &LineSpec, state: &mut DecompositionState, opts: &DecompositionOptions) -> Result<()> {
    require_eb(spec)?;
    let big_n = spec.n_machines();
    if big_n < 3 {
        return Ok(());
    }
    let mut n = big_n - 1;
    while n >= 2 {
        if state.solves >= opts.max_solves {
            return Err(Error::NoConvergence {
                iterations: state.solves,
                residual: state.worst_gap,
            });
        }
        solve_subsystem(spec, state, n, opts)?;
        let m = state.measures[n].as_ref().expect("just solved");
        if n == big_n - 1 {
            state.downstream[n - 1] = m.cond_throughput.clone();
            n -= 1;
            continue;
        }
        let r_n = &state.arrival[n + 1];
        let k_n = spec.echelon().get(n);
        let gap = (0..k_n)
            .map(|x| (m.lambda[x] - r_n[x]).abs() / r_n[x].max(opts.floor))
            .fold(0.0, f64::max);
        state.worst_gap = gap;
        if gap < opts.eps {
            state.converged[n] = true;
            state.downstream[n - 1] = m.cond_throughput.clone();
            n -= 1;
        } else {
            state.converged[n] = false;
            state.arrival[n + 1] = m.lambda.clone();
            n += 1;
        }
    }
    Ok(())
}

/// Solves the first subsystem against the converged `q_2` and collects the
/// line-level estimates.
pub fn assemble_report(spec: &LineSpec, state: &DecompositionState) -> Result<PerformanceReport> {
    let big_n = spec.n_machines();
    let k1 = spec.echelon().get(1);
    let first = solve_first_subsystem(spec.p(1), &state.downstream[1], k1)?;

    let mut echelon_wip = vec![first.avg_wip];
    let mut overflow = Vec::with_capacity(big_n.saturating_sub(2));
    for n in 2..big_n {
        let m = state.measures[n]
            .as_ref()
            .ok_or_else(|| Error::Usage(format!("subsystem {n} has not been solved")))?;
        echelon_wip.push(m.avg_echelon_wip);
        overflow.push(m.overflow);
    }
    let mut stage_wip: Vec<f64> = echelon_wip.windows(2).map(|w| w[0] - w[1]).collect();
    stage_wip.push(*echelon_wip.last().expect("N >= 2"));
    if let Some((idx, &value)) = stage_wip.iter().enumerate().find(|(_, &v)| v < -1e-6) {
        return Err(Error::NegativeStageWip { stage: idx + 1, value });
    }
    Ok(PerformanceReport {
        throughput: first.throughput,
        stage_wip,
        echelon_wip,
        overflow,
        outer_iterations: state.solves,
        wall_time: 0.0,
    })
}

/// Runs the full decomposition of an EB line.
pub fn decompose(spec: &LineSpec, opts: &DecompositionOptions) -> Result<PerformanceReport> {
    let started = Instant::now();
    let mut state = initialize_with(spec, opts)?;
    run_fixed_point(spec, &mut state, opts)?;
    let mut report = assemble_report(spec, &state)?;
    report.wall_time = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Like [`decompose`], but also returns the converged state for inspection.
pub fn decompose_with_state(
    spec: &LineSpec,
    opts: &DecompositionOptions,
) -> Result<(PerformanceReport, DecompositionState)> {
    let started = Instant::now();
    let mut state = initialize_with(spec, opts)?;
    run_fixed_point(spec, &mut state, opts)?;
    let mut report = assemble_report(spec, &state)?;
    report.wall_time = started.elapsed().as_secs_f64();
    Ok((report, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn line(p: &[f64], c: &[usize]) -> LineSpec {
        LineSpec::new(p.to_vec(), c.to_vec(), Policy::Eb).unwrap()
    }

    #[test]
    fn initial_vectors_use_slowest_machines() {
        let spec = line(&[0.4, 0.5, 0.6, 0.7, 0.8], &[5, 5, 5, 5]);
        let s = initialize(&spec).unwrap();
        // r_1 feeds subsystem 2, q_2 is the downstream of subsystem 1
        assert_eq!(s.arrival(2).len(), 22);
        assert!(s.arrival(2)[..21].iter().all(|&v| v == 0.4));
        assert_eq!(s.arrival(2)[21], 0.0);
        assert!(s.downstream(1)[1..].iter().all(|&v| v == 0.5));
        assert_eq!(s.downstream(1)[0], 0.0);

        let spec = line(&[0.8, 0.7, 0.6, 0.5, 0.4], &[5, 5, 5, 5]);
        let s = initialize(&spec).unwrap();
        assert_eq!(s.downstream(1)[1], 0.4);
        assert_eq!(s.arrival(4)[0], 0.6); // r_3 feeds subsystem 4
        assert!(s.warm_start(4).is_some());
    }

    #[test]
    fn two_machine_line_skips_the_loop() {
        let spec = line(&[0.6, 0.7], &[3]);
        let (report, state) = decompose_with_state(&spec, &DecompositionOptions::default()).unwrap();
        assert_eq!(state.solves(), 0);
        let direct = solve_first_subsystem(0.6, &[0.0, 0.7, 0.7, 0.7, 0.7], 4).unwrap();
        assert_eq!(report.throughput, direct.throughput);
        assert_eq!(report.stage_wip, vec![direct.avg_wip]);
        assert!(report.overflow.is_empty());
    }

    #[test]
    fn ib_is_a_usage_error() {
        let spec = LineSpec::new(vec![0.5; 3], vec![1, 1], Policy::Ib).unwrap();
        assert!(matches!(
            decompose(&spec, &DecompositionOptions::default()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn solve_cap_is_reported() {
        let spec = line(&[0.6, 0.5, 0.7, 0.6], &[2, 2, 2]);
        let opts = DecompositionOptions {
            max_solves: 1,
            ..DecompositionOptions::default()
        };
        assert!(matches!(decompose(&spec, &opts), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn stage_wip_adds_up() {
        let spec = line(&[0.6, 0.5, 0.7, 0.6], &[2, 1, 3]);
        let r = decompose(&spec, &DecompositionOptions::default()).unwrap();
        assert_relative_eq!(r.stage_wip.iter().sum::<f64>(), r.echelon_wip[0], epsilon = 1e-12);
        assert!(r.throughput <= 0.5 + 1e-6);
        assert_eq!(r.overflow.len(), 2);
    }
}
