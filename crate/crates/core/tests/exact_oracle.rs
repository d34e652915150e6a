use flowline::exact::{build_chain, exact_measures, solve_exact, stationary, stationary_residual};
use flowline::subsystem::solve_first_subsystem;
use flowline::{simulate, LineSpec, Policy, SimConfig};
use proptest::prelude::*;

#[test]
fn two_machine_line_is_the_birth_death_chain() {
    let spec = LineSpec::new(vec![0.6, 0.6], vec![1], Policy::Eb).unwrap();
    let (index, matrix) = build_chain(&spec).unwrap();
    assert_eq!(index.len(), 3);
    let pi = stationary(&matrix).unwrap();
    let bd = solve_first_subsystem(0.6, &[0.0, 0.6, 0.6], 2).unwrap();
    for (k, s) in index.iter().enumerate() {
        assert!((pi[k] - bd.probs[s[0] as usize]).abs() < 1e-12);
    }
}

#[test]
fn exact_throughput_inside_simulation_intervals() {
    // 95% intervals should cover the exact value for most seeds
    let spec = LineSpec::new(vec![0.6, 0.5, 0.7], vec![2, 1], Policy::Eb).unwrap();
    let exact = solve_exact(&spec).unwrap();
    let covered = (0..20)
        .filter(|&seed| {
            let cfg = SimConfig {
                replications: 10,
                horizon: 20_000,
                base_seed: seed,
                warmup: 0,
            };
            simulate(&spec, &cfg).unwrap().throughput.covers(exact.throughput, 0.0)
        })
        .count();
    assert!(covered >= 18, "covered in {covered} of 20 seeds");
}

fn line() -> impl Strategy<Value = (Vec<f64>, Vec<usize>, bool)> {
    (2usize..=4).prop_flat_map(|n| {
        (
            prop::collection::vec(0.1f64..0.95, n),
            prop::collection::vec(0usize..=2, n - 1),
            any::<bool>(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matrices_are_stochastic((p, c, ib) in line()) {
        let policy = if ib { Policy::Ib } else { Policy::Eb };
        let spec = LineSpec::new(p, c, policy).unwrap();
        let (_, m) = build_chain(&spec).unwrap();
        for i in 0..m.dim() {
            prop_assert!(m.row(i).all(|(_, v)| v >= 0.0));
        }
        for s in m.row_sums() {
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
        let pi = stationary(&m).unwrap();
        prop_assert!(stationary_residual(&m, &pi) <= 1e-12);
    }

    #[test]
    fn two_machine_reduction(p1 in 0.05f64..0.99, p2 in 0.05f64..0.99, c in 0usize..8) {
        let spec = LineSpec::new(vec![p1, p2], vec![c], Policy::Eb).unwrap();
        let (index, m) = build_chain(&spec).unwrap();
        let r = exact_measures(&spec, &index, &stationary(&m).unwrap());
        let q: Vec<f64> = (0..=c + 1).map(|x| if x > 0 { p2 } else { 0.0 }).collect();
        let bd = solve_first_subsystem(p1, &q, c + 1).unwrap();
        prop_assert!((r.throughput - bd.throughput).abs() <= 1e-10);
        prop_assert!((r.stage_wip[0] - bd.avg_wip).abs() <= 1e-10);
    }
}
