use ergolab::maps::MapSpec;
use ergolab::stats::linear_fit;
use ergolab::tower::*;
use proptest::prelude::*;

fn loglog_slope(tail: &ReturnTail, lo: usize, hi: usize) -> f64 {
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        (lo..=hi).map(|n| ((n as f64).ln(), tail.masses[n].ln())).unzip();
    linear_fit(&xs, &ys).unwrap().slope
}

#[test]
fn lsv_fast_builder_matches_brute_force() {
    let map = MapSpec::lsv(0.5).unwrap();
    let fast = intermittent_first_return(&map, 300).unwrap();
    let brute = first_return(&map, &[1], 300, 1 << 20, InverseMethod::Bisection).unwrap();
    assert_eq!(fast.branches.len(), brute.branches.len());
    for (a, b) in fast.branches.iter().zip(&brute.branches) {
        assert_eq!(a.return_time, b.return_time);
        assert!((a.left - b.left).abs() < 1e-12 && (a.right - b.right).abs() < 1e-12);
    }
    assert!((fast.deficit - brute.deficit).abs() < 1e-12);
}

#[test]
fn lsv_tail_slope() {
    let map = MapSpec::lsv(0.5).unwrap();
    let tower = intermittent_first_return(&map, 10_000).unwrap();
    let tail = return_tail(&tower, 10_000);
    let slope = loglog_slope(&tail, 10, 100);
    assert!((slope + 2.0).abs() < 0.2, "slope {slope}");
    match predict_decay(&tail, ObservableClass::Holder, None).unwrap().kind {
        DecayKind::Polynomial { exponent } => assert!((exponent - 1.0).abs() < 0.2, "{exponent}"),
        k => panic!("{k:?}"),
    }
}

#[test]
fn lsv_branches_map_onto_the_base() {
    let map = MapSpec::lsv(0.5).unwrap();
    let tower = intermittent_first_return(&map, 50).unwrap();
    for i in 0..tower.branches.len() {
        assert!(tower.endpoint_error(i).unwrap() < 1e-6);
    }
    assert_eq!(tower.gcd(), 1);
}

#[test]
fn cubic_tail_is_summable() {
    let tail = ReturnTail::from_masses((0..=1_000_000).map(|n| (n.max(1) as f64).powi(-3)).collect());
    let c = check_integrability(&tail);
    let zeta3 = 1.202_056_903_159_594;
    assert!(c.summable);
    assert!((c.partial_sum - (1.0 + zeta3)).abs() < 1e-9);
}

#[test]
fn slowly_varying_template_is_recognised() {
    let t = slowly_varying_example;
    let masses: Vec<f64> = (0..=20_000).map(|n: usize| {
        let n = n.max(16) as f64;
        t(n) - t(n + 1.0)
    }).collect();
    let tail = ReturnTail::from_masses(masses);
    let template = SlowTemplate::log_over_loglog();
    let c = predict_decay(&tail, ObservableClass::Holder, Some(&template)).unwrap();
    assert!(matches!(c.kind, DecayKind::SlowlyVarying { .. }));
    let cubic = ReturnTail::from_masses((0..=20_000).map(|n| (n.max(1) as f64).powi(-3)).collect());
    let c = predict_decay(&cubic, ObservableClass::Holder, Some(&template)).unwrap();
    assert!(matches!(c.kind, DecayKind::Polynomial { .. }));
}

#[test]
fn flat_tail_is_ambiguous() {
    let tail = ReturnTail::from_masses((0..=1000).map(|n| 1.0 / (n.max(1) as f64).powf(0.5)).collect());
    assert!(matches!(predict_decay(&tail, ObservableClass::Holder, None), Err(TowerError::Ambiguous { .. })));
}

#[test]
fn identity_tower_returns_points() {
    let t = InducedMarkovMap::synthetic((0.0, 1.0), &[(1, 1.0)]).unwrap();
    assert_eq!(t.apply(0.3).unwrap(), Some(0.3));
    assert_eq!(t.segment(0.3).unwrap(), Some(vec![0.3]));
}

#[test]
fn tower_json_round_trip() {
    let map = MapSpec::lsv(0.5).unwrap();
    let tower = intermittent_first_return(&map, 20).unwrap();
    let s = serde_json::to_string(&tower).unwrap();
    let back: InducedMarkovMap = serde_json::from_str(&s).unwrap();
    assert_eq!(tower, back);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn synthesized_towers_reproduce_their_tail(raw in proptest::collection::vec(0.0f64..1.0, 2..40)) {
        // A non-increasing tail with masses[0] ≤ 1.
        let total: f64 = raw.iter().sum::<f64>() + 1.0;
        let mut masses = Vec::with_capacity(raw.len());
        let mut acc = 1.0 - raw[0] / total;
        for r in &raw {
            masses.push(acc);
            acc -= r / total;
            acc = acc.max(0.0);
        }
        let tower = InducedMarkovMap::from_tail((0.0, 1.0), &masses).unwrap();
        let tail = return_tail(&tower, masses.len() - 1);
        for (a, b) in tail.masses.iter().zip(&masses) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for w in tail.masses.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        prop_assert!((tail.masses[0] - tower.modeled_mass()).abs() < 1e-12);
        prop_assert!(tail.masses[0] <= 1.0 + 1e-12);
    }

    #[test]
    fn classification_is_scale_invariant(scale in 1e-6f64..1e3, alpha in 1.5f64..4.0, rate in 0.05f64..1.0) {
        for masses in [
            (0..=2048).map(|n| (n.max(1) as f64).powf(-alpha)).collect::<Vec<_>>(),
            (0..=200).map(|n| (-rate * n as f64).exp()).collect::<Vec<_>>(),
        ] {
            let a = predict_decay(&ReturnTail::from_masses(masses.clone()), ObservableClass::Holder, None).unwrap();
            let b = predict_decay(
                &ReturnTail::from_masses(masses.iter().map(|m| m * scale).collect()),
                ObservableClass::Holder,
                None,
            ).unwrap();
            match (a.kind, b.kind) {
                (DecayKind::Polynomial { exponent: x }, DecayKind::Polynomial { exponent: y })
                | (DecayKind::Exponential { rate: x }, DecayKind::Exponential { rate: y }) => {
                    prop_assert!((x - y).abs() < 1e-9)
                }
                (x, y) => prop_assert!(false, "{:?} vs {:?}", x, y),
            }
        }
    }
}
