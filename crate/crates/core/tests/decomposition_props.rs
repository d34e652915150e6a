use flowline::decomposition::{decompose_with_state, initialize};
use flowline::exact::solve_exact;
use flowline::{decompose, DecompositionOptions, LineSpec, Policy};

fn eb(p: &[f64], c: &[usize]) -> LineSpec {
    LineSpec::new(p.to_vec(), c.to_vec(), Policy::Eb).unwrap()
}

#[test]
fn balanced_line_initial_values() {
    let s = initialize(&eb(&[0.6; 5], &[5; 4])).unwrap();
    for n in 2..=4 {
        assert!(s.arrival(n)[..s.arrival(n).len() - 1].iter().all(|&v| v == 0.6));
    }
    for n in 1..=4 {
        assert!(s.downstream(n)[1..].iter().all(|&v| v == 0.6));
    }
}

#[test]
fn three_machine_line_close_to_exact() {
    let spec = eb(&[0.6, 0.6, 0.6], &[1, 1]);
    let d = decompose(&spec, &DecompositionOptions::default()).unwrap();
    let x = solve_exact(&spec).unwrap();
    assert!((d.throughput - x.throughput).abs() / x.throughput < 0.01);
}

#[test]
fn throughput_grows_with_buffer_space() {
    let mut last = 0.0;
    for c in [1, 5, 10, 15] {
        let nu = decompose(&eb(&[0.6; 5], &[c; 4]), &DecompositionOptions::default())
            .unwrap()
            .throughput;
        assert!(nu >= last, "C = {c}: {nu} < {last}");
        last = nu;
    }
}

#[test]
fn report_invariants_and_flow_balance() {
    for (p, c) in [
        (vec![0.6; 5], vec![1, 1, 1, 1]),
        (vec![0.4, 0.5, 0.6, 0.7, 0.8], vec![5, 5, 5, 5]),
        (vec![0.8, 0.7, 0.6, 0.5, 0.4], vec![0, 0, 0, 4]),
        (vec![0.6, 0.6, 0.4, 0.6, 0.6], vec![2, 0, 3, 1]),
    ] {
        let spec = eb(&p, &c);
        let opts = DecompositionOptions::default();
        let (r, state) = decompose_with_state(&spec, &opts).unwrap();
        let slowest = p.iter().copied().fold(1.0, f64::min);
        assert!(r.throughput >= 0.0 && r.throughput <= slowest + 1e-6);
        let last = r.stage_wip.len() - 1;
        assert_eq!(r.stage_wip[last], r.echelon_wip[last]);
        for n in 0..last {
            assert!((r.stage_wip[n] - (r.echelon_wip[n] - r.echelon_wip[n + 1])).abs() < 1e-12);
            assert!(r.stage_wip[n] >= -1e-9);
        }
        // every interior subsystem carries the same throughput as the first
        for n in 2..p.len() {
            let m = state.measures(n).unwrap();
            let dist = state.warm_start(n).unwrap();
            let nu_n: f64 = dist
                .total_marginal()
                .iter()
                .zip(&m.cond_throughput)
                .map(|(w, v)| w * v)
                .sum();
            assert!(
                (nu_n - r.throughput).abs() <= 10.0 * opts.eps * r.throughput,
                "subsystem {n}: {nu_n} vs {}",
                r.throughput
            );
        }
    }
}

#[test]
fn eliminating_obsolete_buffers_changes_nothing() {
    for p in [
        vec![0.6; 5],
        vec![0.4, 0.5, 0.6, 0.7, 0.8],
        vec![0.6, 0.6, 0.4, 0.6, 0.6],
    ] {
        let spec = eb(&p, &[0, 0, 0, 20]);
        let kept = decompose(&spec, &DecompositionOptions::default()).unwrap();
        let dropped = decompose(
            &spec,
            &DecompositionOptions {
                eliminate_obsolete: true,
                ..DecompositionOptions::default()
            },
        )
        .unwrap();
        assert!((kept.throughput - dropped.throughput).abs() <= 1e-9);
        for (a, b) in kept.stage_wip.iter().zip(&dropped.stage_wip) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn repeated_runs_are_bit_identical() {
    let spec = eb(&[0.6, 0.5, 0.7, 0.6, 0.55], &[2, 3, 1, 2]);
    let opts = DecompositionOptions::default();
    let mut a = decompose(&spec, &opts).unwrap();
    let mut b = decompose(&spec, &opts).unwrap();
    a.wall_time = 0.0;
    b.wall_time = 0.0;
    assert_eq!(a, b);
}
