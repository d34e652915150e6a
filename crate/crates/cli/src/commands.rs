use std::time::Instant;

use flowline::exact::solve_exact;
use flowline::line::state_count_eb;
use flowline::{decompose, simulate, DecompositionOptions, Policy, SimReport};

use crate::report::{percent_diff, ReportRow};
use crate::spec_file::Case;

/// Lines with more states than this are left out of the exact column of `compare`.
const COMPARE_EXACT_LIMIT: u64 = 20_000;

pub const DECOMPOSE_COLUMNS: &[&str] = &["nu", "cpu_s"];
pub const SIMULATE_COLUMNS: &[&str] = &["nu", "nu_hw", "cpu_s"];
pub const EXACT_COLUMNS: &[&str] = &["nu", "states", "cpu_s"];
pub const COMPARE_COLUMNS: &[&str] = &["nu_decomp", "nu_sim_eb", "nu_sim_ib", "pct_nu"];

pub fn decompose_case(case: &Case) -> ReportRow {
    let opts = DecompositionOptions::with_eps(case.epsilon);
    match decompose(&case.spec, &opts) {
        Ok(r) => {
            let mut row = ReportRow::new(&case.name);
            row.push_series("y", r.stage_wip.iter().copied());
            row.push("nu", r.throughput);
            row.push_series("theta", r.overflow.iter().copied());
            row.push("cpu_s", r.wall_time);
            row.meta("echelon_wip", &r.echelon_wip);
            row.meta("subsystem_solves", r.outer_iterations);
            row.meta("epsilon", case.epsilon);
            row
        }
        Err(e) => ReportRow::failed(&case.name, &e),
    }
}

fn push_sim(row: &mut ReportRow, sim: &SimReport) {
    for (i, e) in sim.stage_wip.iter().enumerate() {
        row.push(format!("y{}", i + 1), e.mean);
        row.push(format!("y{}_hw", i + 1), e.half_width_95);
    }
    row.push("nu", sim.throughput.mean);
    row.push("nu_hw", sim.throughput.half_width_95);
    for (i, e) in sim.overflow.iter().enumerate() {
        row.push(format!("theta{}", i + 1), e.mean);
        row.push(format!("theta{}_hw", i + 1), e.half_width_95);
    }
}

pub fn simulate_case(case: &Case) -> ReportRow {
    let started = Instant::now();
    match simulate(&case.spec, &case.sim) {
        Ok(sim) => {
            let mut row = ReportRow::new(&case.name);
            push_sim(&mut row, &sim);
            row.push("cpu_s", started.elapsed().as_secs_f64());
            row.meta("policy", case.spec.policy());
            row.meta("config", case.sim);
            row
        }
        Err(e) => ReportRow::failed(&case.name, &e),
    }
}

pub fn exact_case(case: &Case) -> ReportRow {
    match solve_exact(&case.spec) {
        Ok(r) => {
            let mut row = ReportRow::new(&case.name);
            row.push_series("y", r.stage_wip.iter().copied());
            row.push("nu", r.throughput);
            if case.spec.policy() == Policy::Eb {
                row.push_series("theta", r.overflow.iter().copied());
            }
            row.push("cpu_s", r.wall_time);
            row.meta("policy", case.spec.policy());
            row.meta("echelon_wip", &r.echelon_wip);
            row
        }
        Err(e) => ReportRow::failed(&case.name, &e),
    }
}

pub fn compare_case(case: &Case) -> ReportRow {
    let eb = case.spec.with_policy(Policy::Eb);
    let ib = case.spec.with_policy(Policy::Ib);
    let opts = DecompositionOptions::with_eps(case.epsilon);
    let ((decomp, sim_eb), (sim_ib, exact)) = rayon::join(
        || rayon::join(|| decompose(&eb, &opts), || simulate(&eb, &case.sim)),
        || {
            rayon::join(
                || simulate(&ib, &case.sim),
                || {
                    let small = state_count_eb(eb.echelon()).is_ok_and(|n| n <= COMPARE_EXACT_LIMIT);
                    small.then(|| solve_exact(&eb))
                },
            )
        },
    );
    let (decomp, sim_eb, sim_ib) = match (decomp, sim_eb, sim_ib) {
        (Ok(d), Ok(s), Ok(i)) => (d, s, i),
        (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => return ReportRow::failed(&case.name, &e),
    };
    let exact = match exact {
        Some(Err(e)) => return ReportRow::failed(&case.name, &e),
        Some(Ok(r)) => Some(r),
        None => None,
    };

    let mut row = ReportRow::new(&case.name);
    row.push("nu_decomp", decomp.throughput);
    row.push("nu_sim_eb", sim_eb.throughput.mean);
    row.push("nu_sim_eb_hw", sim_eb.throughput.half_width_95);
    row.push("nu_sim_ib", sim_ib.throughput.mean);
    row.push("nu_sim_ib_hw", sim_ib.throughput.half_width_95);
    row.push("nu_exact", exact.as_ref().map(|r| r.throughput));
    for (i, (d, s)) in decomp.stage_wip.iter().zip(&sim_eb.stage_wip).enumerate() {
        row.push(format!("pct_y{}", i + 1), percent_diff(*d, s.mean));
    }
    row.push("pct_nu", percent_diff(decomp.throughput, sim_eb.throughput.mean));
    for (i, (d, s)) in decomp.overflow.iter().zip(&sim_eb.overflow).enumerate() {
        row.push(format!("pct_theta{}", i + 1), percent_diff(*d, s.mean));
    }
    row.push(
        "pct_nu_exact",
        exact
            .as_ref()
            .and_then(|r| percent_diff(decomp.throughput, r.throughput)),
    );
    row.meta("config", case.sim);
    row
}
