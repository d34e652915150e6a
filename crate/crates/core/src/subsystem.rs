//! Exact analysis of the two-machine building blocks of the decomposition.
//!
//! An interior subsystem has an infinite upstream queue fed by a
//! state-dependent arrival stream `r(x_up)`, an upstream machine with
//! load-dependent production probability `p(y)`, and an aggregate downstream
//! machine with load-dependent production probability `q(x)`. Its state is
//! `(i, j)` = (upstream stage WIP, downstream echelon WIP) on the triangle
//! `0 <= j <= k_down`, `0 <= i <= k_up - j`. In each period three independent
//! events may happen: an arrival (probability `r(i + j)`), a production by the
//! upstream machine (probability `p(i)`, impossible when it is blocked at
//! `j = k_down`), and a departure (probability `q(j)`). The corner, edge and
//! interior states give nine families of balance equations; all of them are
//! generated here from that single event model.
//!
//! The first subsystem has no upstream queue and reduces to a birth-death
//! chain, solved in closed form.

use serde::{Deserialize, Serialize};

use crate::birth_death;
use crate::error::{Error, Result};

/// Exogenous parameters of one interior subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemParams {
    /// Echelon capacity upstream, `K_{n-1}`.
    pub k_up: usize,
    /// Echelon capacity downstream, `K_n <= K_{n-1}`.
    pub k_down: usize,
    /// `r(x)` for total content `x = 0..=k_up`; `r(k_up) = 0`.
    pub arrival: Vec<f64>,
    /// `p(y)` for `y = 0..=k_up`; `p(0) = 0`.
    pub production: Vec<f64>,
    /// `q(x)` for `x = 0..=k_down`; `q(0) = 0`.
    pub downstream: Vec<f64>,
    /// Whether the upstream machine blocks when the downstream echelon buffer
    /// is full. Only switched off when modelling a line whose obsolete echelon
    /// buffers have been removed.
    #[serde(default = "default_blocking")]
    pub upstream_blocking: bool,
}

fn default_blocking() -> bool {
    true
}

impl SubsystemParams {
    pub fn new(
        k_up: usize,
        k_down: usize,
        arrival: Vec<f64>,
        production: Vec<f64>,
        downstream: Vec<f64>,
    ) -> Result<Self> {
        let params = Self {
            k_up,
            k_down,
            arrival,
            production,
            downstream,
            upstream_blocking: true,
        };
        params.validate()?;
        Ok(params)
    }

    /// A subsystem whose upstream machine has a constant production
    /// probability, as in a Bernoulli line.
    pub fn bernoulli(k_up: usize, k_down: usize, arrival: Vec<f64>, p: f64, downstream: Vec<f64>) -> Result<Self> {
        let production = (0..=k_up).map(|y| if y == 0 { 0.0 } else { p }).collect();
        Self::new(k_up, k_down, arrival, production, downstream)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.k_down == 0 || self.k_down > self.k_up {
            return bad(format!(
                "need 1 <= k_down <= k_up, got k_up = {}, k_down = {}",
                self.k_up, self.k_down
            ));
        }
        if self.arrival.len() != self.k_up + 1 || self.production.len() != self.k_up + 1 {
            return bad(format!("arrival and production vectors need {} entries", self.k_up + 1));
        }
        if self.downstream.len() != self.k_down + 1 {
            return bad(format!("downstream vector needs {} entries", self.k_down + 1));
        }
        let in_unit = |v: &f64| (0.0..=1.0).contains(v);
        if !(self.arrival.iter().all(in_unit)
            && self.production.iter().all(in_unit)
            && self.downstream.iter().all(in_unit))
        {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if self.arrival[self.k_up] != 0.0 || self.production[0] != 0.0 || self.downstream[0] != 0.0 {
            return bad("boundary convention r(k_up) = p(0) = q(0) = 0 violated".into());
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        triangle_size(self.k_up, self.k_down)
    }

    /// Whether the upstream machine is blocked in state `(i, j)`.
    fn blocked(&self, j: usize) -> bool {
        self.upstream_blocking && j >= self.k_down
    }
}

fn triangle_size(k_up: usize, k_down: usize) -> usize {
    (k_up + 1) * (k_down + 1) - (k_down + 1) * k_down / 2
}

fn column_offset(k_up: usize, j: usize) -> usize {
    j * (k_up + 1) - j * j.saturating_sub(1) / 2
}

/// Stationary probabilities `P(i, j)` over the triangular state space.
///
/// Stored column by column (`j` ascending, then `i` ascending), which is also
/// the Gauss-Seidel sweep order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangularDistribution {
    k_up: usize,
    k_down: usize,
    probs: Vec<f64>,
}

impl TriangularDistribution {
    pub fn uniform(k_up: usize, k_down: usize) -> Self {
        let n = triangle_size(k_up, k_down);
        Self {
            k_up,
            k_down,
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Builds a distribution from unnormalized weights `w(i, j)`.
    pub fn from_fn(k_up: usize, k_down: usize, mut w: impl FnMut(usize, usize) -> f64) -> Self {
        let mut probs = Vec::with_capacity(triangle_size(k_up, k_down));
        for j in 0..=k_down {
            for i in 0..=k_up - j {
                probs.push(w(i, j));
            }
        }
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Self { k_up, k_down, probs }
    }

    pub fn k_up(&self) -> usize {
        self.k_up
    }

    pub fn k_down(&self) -> usize {
        self.k_down
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= self.k_down && i + j <= self.k_up);
        column_offset(self.k_up, j) + i
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > self.k_down || i + j > self.k_up {
            return 0.0;
        }
        self.probs[self.index(i, j)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// `(i, j, P(i, j))` in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..=self.k_down)
            .flat_map(move |j| (0..=self.k_up - j).map(move |i| (i, j)))
            .zip(self.probs.iter())
            .map(|((i, j), &p)| (i, j, p))
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Marginal of the downstream echelon WIP `x = j`.
    pub fn downstream_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.k_down + 1];
        for (_, j, p) in self.iter() {
            m[j] += p;
        }
        m
    }

    /// Marginal of the total content `i + j`.
    pub fn total_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.k_up + 1];
        for (i, j, p) in self.iter() {
            m[i + j] += p;
        }
        m
    }
}

/// Incoming-transition lists of a subsystem chain, one row per target state.
struct InflowGraph {
    start: Vec<usize>,
    src: Vec<u32>,
    prob: Vec<f64>,
    /// Probability of leaving each state.
    out: Vec<f64>,
}

impl InflowGraph {
    fn build(params: &SubsystemParams) -> Self {
        let (k_up, k_down) = (params.k_up, params.k_down);
        let n = params.n_states();
        let idx = |i: usize, j: usize| column_offset(k_up, j) + i;
        let mut edges: Vec<(u32, u32, f64)> = Vec::with_capacity(6 * n);
        let mut out = vec![0.0; n];
        for j in 0..=k_down {
            for i in 0..=k_up - j {
                let s = idx(i, j);
                let r = params.arrival[i + j];
                let p = if params.blocked(j) { 0.0 } else { params.production[i] };
                let q = params.downstream[j];
                for (a, pa) in [(0, 1.0 - r), (1, r)] {
                    for (b, pb) in [(0, 1.0 - p), (1, p)] {
                        for (d, pd) in [(0, 1.0 - q), (1, q)] {
                            let w = pa * pb * pd;
                            if w == 0.0 || (a == b && b == d) {
                                continue;
                            }
                            let ti = i + a - b;
                            let tj = j + b - d;
                            out[s] += w;
                            edges.push((idx(ti, tj) as u32, s as u32, w));
                        }
                    }
                }
            }
        }
        let mut start = vec![0usize; n + 1];
        for &(t, _, _) in &edges {
            start[t as usize + 1] += 1;
        }
        for k in 0..n {
            start[k + 1] += start[k];
        }
        let mut fill = start.clone();
        let mut src = vec![0u32; edges.len()];
        let mut prob = vec![0.0; edges.len()];
        for (t, s, w) in edges {
            let slot = &mut fill[t as usize];
            src[*slot] = s;
            prob[*slot] = w;
            *slot += 1;
        }
        Self { start, src, prob, out }
    }

    fn inflow(&self, state: usize, probs: &[f64]) -> f64 {
        let range = self.start[state]..self.start[state + 1];
        self.src[range.clone()]
            .iter()
            .zip(&self.prob[range])
            .map(|(&s, &w)| probs[s as usize] * w)
            .sum()
    }
}

/// Knobs for the Gauss-Seidel stationary solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop once the largest relative change between sweeps is below this.
    pub eps: f64,
    pub max_sweeps: usize,
    /// Denominator floor in the relative-change test.
    pub floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            max_sweeps: 1_000_000,
            floor: 1e-12,
        }
    }
}

impl SolverOptions {
    pub fn with_eps(eps: f64) -> Self {
        Self { eps, ..Self::default() }
    }
}

/// Sweep count and final relative change of a stationary solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub sweeps: usize,
    pub change: f64,
}

/// Solves the balance equations of an interior subsystem by Gauss-Seidel.
///
/// Each sweep visits the states in storage order and replaces `P(s)` by
/// inflow / outflow-probability using the freshest values, then renormalizes.
/// Convergence is tested on the normalized vector.
pub fn solve_stationary(
    params: &SubsystemParams,
    warm_start: Option<&TriangularDistribution>,
    opts: &SolverOptions,
) -> Result<(TriangularDistribution, SolveStats)> {
    params.validate()?;
    if opts.eps.is_nan() || opts.eps <= 0.0 {
        return Err(Error::InvalidParams(format!("eps must be positive, got {}", opts.eps)));
    }
    let mut dist = match warm_start {
        Some(w) if w.k_up == params.k_up && w.k_down == params.k_down => w.clone(),
        Some(w) => {
            return Err(Error::InvalidParams(format!(
                "warm start is {}x{}, subsystem is {}x{}",
                w.k_up, w.k_down, params.k_up, params.k_down
            )))
        }
        None => TriangularDistribution::uniform(params.k_up, params.k_down),
    };
    let graph = InflowGraph::build(params);
    let p = &mut dist.probs;
    let mut prev = p.clone();
    let mut change = f64::INFINITY;
    for sweep in 1..=opts.max_sweeps {
        prev.copy_from_slice(p);
        for s in 0..p.len() {
            let out = graph.out[s];
            if out > 0.0 {
                p[s] = graph.inflow(s, p) / out;
            }
        }
        let total: f64 = p.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::NoConvergence {
                iterations: sweep,
                residual: f64::NAN,
            });
        }
        p.iter_mut().for_each(|v| *v /= total);
        change = p
            .iter()
            .zip(&prev)
            .map(|(&new, &old)| (new - old).abs() / old.abs().max(opts.floor))
            .fold(0.0, f64::max);
        if change < opts.eps {
            return Ok((dist, SolveStats { sweeps: sweep, change }));
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_sweeps,
        residual: change,
    })
}

/// Largest absolute violation of the balance equations,
/// `|P(s) * out(s) - inflow(s)|`, plus the normalization defect.
pub fn balance_residual(params: &SubsystemParams, dist: &TriangularDistribution) -> f64 {
    let graph = InflowGraph::build(params);
    let p = dist.as_slice();
    let worst = (0..p.len())
        .map(|s| (p[s] * graph.out[s] - graph.inflow(s, p)).abs())
        .fold(0.0, f64::max);
    worst.max((dist.total() - 1.0).abs())
}

/// A conditional rate vector together with the levels whose conditioning
/// event has zero probability (reported as rate 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateVector {
    pub values: Vec<f64>,
    pub degenerate: Vec<usize>,
}

/// `lambda(x)`: probability that the upstream machine produces given the
/// downstream echelon WIP is `x`; zero at `x = k_down`.
pub fn internal_arrival_probability(params: &SubsystemParams, dist: &TriangularDistribution) -> RateVector {
    let k_down = params.k_down;
    let mut values = vec![0.0; k_down + 1];
    let mut degenerate = Vec::new();
    for (x, value) in values.iter_mut().enumerate().take(k_down) {
        let (mut num, mut den) = (0.0, 0.0);
        for y in 0..=params.k_up - x {
            let pr = dist.get(y, x);
            num += pr * params.production[y];
            den += pr;
        }
        if den > 0.0 {
            *value = num / den;
        } else {
            degenerate.push(x);
        }
    }
    RateVector { values, degenerate }
}

/// `v(x)`: probability that the downstream machine produces given the total
/// subsystem content is `x`.
pub fn conditional_throughput(params: &SubsystemParams, dist: &TriangularDistribution) -> RateVector {
    let mut values = vec![0.0; params.k_up + 1];
    let mut degenerate = Vec::new();
    for (x, value) in values.iter_mut().enumerate() {
        let (mut num, mut den) = (0.0, 0.0);
        for y in x.saturating_sub(params.k_down)..=x {
            let pr = dist.get(y, x - y);
            num += pr * params.downstream[x - y];
            den += pr;
        }
        if den > 0.0 {
            *value = num / den;
        } else {
            degenerate.push(x);
        }
    }
    RateVector { values, degenerate }
}

/// Mean downstream echelon WIP.
pub fn average_echelon_wip(dist: &TriangularDistribution) -> f64 {
    dist.iter().map(|(_, j, p)| j as f64 * p).sum()
}

/// Probability per period that a part joins the upstream queue while the
/// local buffer is already full and the upstream machine does not start a
/// part, i.e. the part has to be stored remotely.
pub fn overflow_probability(params: &SubsystemParams, dist: &TriangularDistribution) -> f64 {
    let first = params.k_up - params.k_down + 1;
    let mut theta = 0.0;
    for x in 0..=params.k_down {
        for y in first..=params.k_up - x {
            theta += dist.get(y, x) * params.arrival[y + x] * (1.0 - params.production[y]);
        }
    }
    theta
}

/// All per-subsystem measures from one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemMeasures {
    pub lambda: Vec<f64>,
    pub cond_throughput: Vec<f64>,
    pub avg_echelon_wip: f64,
    pub overflow: f64,
    pub iterations: usize,
    pub residual: f64,
    /// Levels where a conditional rate had no probability mass.
    pub degenerate: Vec<usize>,
}

impl SubsystemMeasures {
    pub fn compute(params: &SubsystemParams, dist: &TriangularDistribution, stats: SolveStats) -> Self {
        let lambda = internal_arrival_probability(params, dist);
        let v = conditional_throughput(params, dist);
        let mut degenerate = lambda.degenerate;
        degenerate.extend(v.degenerate);
        degenerate.sort_unstable();
        degenerate.dedup();
        Self {
            lambda: lambda.values,
            cond_throughput: v.values,
            avg_echelon_wip: average_echelon_wip(dist),
            overflow: overflow_probability(params, dist),
            iterations: stats.sweeps,
            residual: stats.change,
            degenerate,
        }
    }
}

/// Solution of the first (birth-death) subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathResult {
    pub probs: Vec<f64>,
    pub throughput: f64,
    pub avg_wip: f64,
    pub lambda: Vec<f64>,
}

/// Closed-form solution of the first subsystem: a never-starved machine with
/// production probability `p1`, blocked at `K_1`, feeding an aggregate
/// downstream machine `q(x)`.
///
/// `P(j)` is proportional to
/// `G(j) = p^j prod_{i<j} (1-q(i)) / ((1-p)^j prod_{1<=i<=j} q(i))` for
/// `j < K_1`, with the exponent of `1-p` reduced to `K_1 - 1` at `j = K_1`
/// because the machine cannot be starved or produce while blocked there.
pub fn solve_first_subsystem(p1: f64, q: &[f64], k1: usize) -> Result<BirthDeathResult> {
    if !(p1 > 0.0 && p1 <= 1.0) {
        return Err(Error::InvalidParams(format!("p1 must lie in (0, 1], got {p1}")));
    }
    if k1 == 0 || q.len() != k1 + 1 {
        return Err(Error::InvalidParams(format!(
            "need K_1 >= 1 and K_1 + 1 downstream probabilities, got K_1 = {k1}, {} values",
            q.len()
        )));
    }
    if q[0] != 0.0 || q.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidParams("q must lie in [0, 1] with q(0) = 0".into()));
    }
    if let Some(x) = (1..=k1).find(|&x| q[x] <= 0.0) {
        return Err(Error::DegenerateDownstream(x));
    }

    let probs = if p1 < 1.0 {
        let (ln_p, ln_pbar) = (p1.ln(), (1.0 - p1).ln());
        let mut log_g = Vec::with_capacity(k1 + 1);
        // running sums of ln(1 - q(i)) for i < j and ln q(i) for 1 <= i <= j
        let (mut sum_qbar, mut sum_q) = (0.0, 0.0);
        for j in 0..=k1 {
            if j > 0 {
                sum_qbar += (1.0 - q[j - 1]).ln();
                sum_q += q[j].ln();
            }
            let pbar_power = if j == k1 { (k1 - 1) as f64 } else { j as f64 };
            log_g.push(j as f64 * ln_p + sum_qbar - pbar_power * ln_pbar - sum_q);
        }
        birth_death::normalize_log(&log_g)
    } else {
        // A perfectly reliable machine never lets the level drop except
        // from K_1; the G(j) ratios degenerate, so solve the chain directly.
        let (up, down) = first_subsystem_rates(p1, q, k1);
        birth_death::stationary(&up, &down)
    };

    let throughput = p1 * (1.0 - probs[k1]);
    let avg_wip = probs.iter().enumerate().map(|(j, p)| j as f64 * p).sum();
    let lambda = (0..=k1).map(|x| if x < k1 { p1 } else { 0.0 }).collect();
    Ok(BirthDeathResult {
        probs,
        throughput,
        avg_wip,
        lambda,
    })
}

/// Birth and death probabilities of the first-subsystem chain.
pub(crate) fn first_subsystem_rates(p1: f64, q: &[f64], k1: usize) -> (Vec<f64>, Vec<f64>) {
    let up = (0..=k1).map(|j| if j < k1 { p1 * (1.0 - q[j]) } else { 0.0 }).collect();
    let down = (0..=k1)
        .map(|j| if j < k1 { (1.0 - p1) * q[j] } else { q[j] })
        .collect();
    (up, down)
}

/// Warm start for the first solve of a subsystem: the normalized product of
/// two birth-death marginals restricted to the triangle.
///
/// The upstream marginal (over `0..=k_up`) is driven by `params.arrival` and
/// the service vector `y_service`; the downstream marginal (over
/// `0..=k_down`) by the arrival vector `x_arrival` and `params.downstream`.
pub fn init_marginal_product(
    params: &SubsystemParams,
    y_service: &[f64],
    x_arrival: &[f64],
) -> Result<TriangularDistribution> {
    params.validate()?;
    if y_service.len() != params.k_up + 1 || x_arrival.len() != params.k_down + 1 {
        return Err(Error::InvalidParams(
            "marginal driver vectors do not match the subsystem capacities".into(),
        ));
    }
    let marginal = |arrive: &[f64], serve: &[f64]| {
        let up: Vec<f64> = arrive.iter().zip(serve).map(|(a, s)| a * (1.0 - s)).collect();
        let down: Vec<f64> = arrive.iter().zip(serve).map(|(a, s)| (1.0 - a) * s).collect();
        birth_death::stationary(&up, &down)
    };
    let py = marginal(&params.arrival, y_service);
    let px = marginal(x_arrival, &params.downstream);
    let mass: f64 = (0..=params.k_down)
        .map(|j| px[j] * py[..=params.k_up - j].iter().sum::<f64>())
        .sum();
    if mass.is_nan() || mass <= 0.0 {
        return Ok(TriangularDistribution::uniform(params.k_up, params.k_down));
    }
    Ok(TriangularDistribution::from_fn(params.k_up, params.k_down, |i, j| {
        py[i] * px[j]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small() -> SubsystemParams {
        SubsystemParams::bernoulli(2, 1, vec![0.5, 0.5, 0.0], 0.6, vec![0.0, 0.7]).unwrap()
    }

    #[test]
    fn layout() {
        let d = TriangularDistribution::uniform(7, 4);
        assert_eq!(d.len(), 8 * 5 - 5 * 4 / 2);
        for (expect, (i, j, _)) in d.iter().enumerate() {
            assert_eq!(d.index(i, j), expect);
        }
        assert_eq!(d.get(4, 4), 0.0);
    }

    #[test]
    fn no_arrivals_empties_the_chain() {
        let params = SubsystemParams::bernoulli(4, 2, vec![0.0; 5], 0.6, vec![0.0, 0.5, 0.5]).unwrap();
        let (d, _) = solve_stationary(&params, None, &SolverOptions::with_eps(1e-10)).unwrap();
        assert_relative_eq!(d.get(0, 0), 1.0, epsilon = 1e-9);
        assert!(d.iter().skip(1).all(|(_, _, p)| p < 1e-9));
        let lambda = internal_arrival_probability(&params, &d);
        assert_eq!(lambda.values[0], 0.0);
        assert_eq!(overflow_probability(&params, &d), 0.0);
        assert_relative_eq!(average_echelon_wip(&d), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn boundary_values_of_measures() {
        let params = small();
        let (d, _) = solve_stationary(&params, None, &SolverOptions::with_eps(1e-12)).unwrap();
        let lambda = internal_arrival_probability(&params, &d);
        assert_eq!(lambda.values[params.k_down], 0.0);
        let v = conditional_throughput(&params, &d);
        assert_eq!(v.values[0], 0.0);
        assert!(lambda.degenerate.is_empty() && v.degenerate.is_empty());
    }

    #[test]
    fn wip_of_uniform_triangle() {
        let d = TriangularDistribution::uniform(1, 1);
        assert_relative_eq!(average_echelon_wip(&d), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn equal_capacities_count_every_queued_part_as_overflow() {
        let params = SubsystemParams::bernoulli(3, 3, vec![0.4, 0.4, 0.4, 0.0], 0.5, vec![0.0, 0.6, 0.6, 0.6]).unwrap();
        let (d, _) = solve_stationary(&params, None, &SolverOptions::with_eps(1e-12)).unwrap();
        let direct: f64 = d
            .iter()
            .filter(|&(i, _, _)| i >= 1)
            .map(|(i, j, p)| p * params.arrival[i + j] * 0.5)
            .sum();
        assert_relative_eq!(overflow_probability(&params, &d), direct, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_levels_are_flagged() {
        let params = small();
        let d = TriangularDistribution::from_fn(2, 1, |i, j| if (i, j) == (0, 0) { 1.0 } else { 0.0 });
        let lambda = internal_arrival_probability(&params, &d);
        assert_eq!(lambda.degenerate, Vec::<usize>::new());
        let v = conditional_throughput(&params, &d);
        assert_eq!(v.degenerate, vec![1, 2]);
        assert_eq!(v.values, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(SubsystemParams::bernoulli(2, 3, vec![0.5, 0.5, 0.0], 0.5, vec![0.0; 4]).is_err());
        assert!(SubsystemParams::bernoulli(2, 1, vec![0.5, 0.5, 0.5], 0.5, vec![0.0, 0.5]).is_err());
        assert!(SubsystemParams::bernoulli(2, 1, vec![0.5, 0.5, 0.0], 0.5, vec![0.1, 0.5]).is_err());
        let params = small();
        let wrong = TriangularDistribution::uniform(3, 1);
        assert!(solve_stationary(&params, Some(&wrong), &SolverOptions::default()).is_err());
    }

    #[test]
    fn sweep_cap_is_reported() {
        let params = small();
        let opts = SolverOptions {
            eps: 1e-12,
            max_sweeps: 1,
            floor: 1e-12,
        };
        assert!(matches!(
            solve_stationary(&params, None, &opts),
            Err(Error::NoConvergence { iterations: 1, .. })
        ));
    }

    #[test]
    fn first_subsystem_matches_generic_birth_death() {
        let q = [0.0, 0.3, 0.45, 0.5, 0.55, 0.6];
        for &p1 in &[0.2, 0.6, 0.95] {
            let res = solve_first_subsystem(p1, &q, 5).unwrap();
            let (up, down) = first_subsystem_rates(p1, &q, 5);
            let direct = birth_death::stationary(&up, &down);
            for (a, b) in res.probs.iter().zip(&direct) {
                assert_relative_eq!(a, b, max_relative = 1e-12);
            }
            assert_relative_eq!(res.throughput, p1 * (1.0 - res.probs[5]), epsilon = 1e-15);
            assert_eq!(res.lambda[5], 0.0);
            assert!(res.lambda[..5].iter().all(|&l| l == p1));
        }
    }

    #[test]
    fn first_subsystem_three_states_by_hand() {
        // K_1 = 2, p = q = 1/2: up(0) = 1/2, down(1) = 1/4, up(1) = 1/4, down(2) = 1/2
        // P1 = 2 P0, P2 = P1 / 2 = P0 -> (1/4, 1/2, 1/4)
        let res = solve_first_subsystem(0.5, &[0.0, 0.5, 0.5], 2).unwrap();
        assert_relative_eq!(res.probs[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(res.probs[1], 0.5, epsilon = 1e-15);
        assert_relative_eq!(res.probs[2], 0.25, epsilon = 1e-15);
        assert_relative_eq!(res.throughput, 0.375, epsilon = 1e-15);
        assert_relative_eq!(res.avg_wip, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn first_subsystem_edge_cases() {
        assert!(matches!(
            solve_first_subsystem(0.5, &[0.0, 0.5, 0.0], 2),
            Err(Error::DegenerateDownstream(2))
        ));
        assert!(solve_first_subsystem(0.0, &[0.0, 0.5], 1).is_err());
        let tiny = solve_first_subsystem(1e-9, &[0.0, 0.5, 0.5], 2).unwrap();
        assert!(tiny.throughput < 1e-8);
        // p1 = 1, K_1 = 1: P(0) q(1) ... P(0) = q / (1 + q)
        let sure = solve_first_subsystem(1.0, &[0.0, 0.25], 1).unwrap();
        assert_relative_eq!(sure.probs[0], 0.2, epsilon = 1e-15);
        assert_relative_eq!(sure.throughput, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn marginal_product_degenerate_and_uniform() {
        let params = SubsystemParams::bernoulli(2, 1, vec![0.0; 3], 0.5, vec![0.0, 0.5]).unwrap();
        let d = init_marginal_product(&params, &[0.0, 0.5, 0.5], &[0.0, 0.0]).unwrap();
        assert_eq!(d.get(0, 0), 1.0);

        let params = SubsystemParams::bernoulli(1, 1, vec![0.5, 0.0], 0.5, vec![0.0, 0.5]).unwrap();
        let d = init_marginal_product(&params, &[0.0, 0.5], &[0.5, 0.0]).unwrap();
        for (_, _, p) in d.iter() {
            assert_relative_eq!(p, 1.0 / 3.0, epsilon = 1e-15);
        }
    }
}
