use ergolab::correlate::*;
use ergolab::folklore::{exact, DensityHistogram};
use ergolab::maps::MapSpec;
use ergolab::tower::{first_return, predict_decay, return_tail, DecayKind, InverseMethod, ObservableClass};
use proptest::prelude::*;

fn uniform() -> DensityHistogram {
    DensityHistogram::from_cdf(0.0, 1.0, 256, exact::uniform).unwrap()
}

#[test]
fn doubling_map_cosines_are_uncorrelated() {
    let u = uniform();
    let c = Observable::cosine(1);
    let s = correlation_function(&MapSpec::circle(2), &c, &c, 10, 1_000_000, Method::Ensemble { density: Some(&u) }, 1)
        .unwrap();
    assert!((s.values[0] - 0.5).abs() < 0.01);
    for n in 1..=10 {
        assert!(s.values[n] < 0.005, "C_{n} = {}", s.values[n]);
    }
}

#[test]
fn rotation_by_zero_never_decorrelates() {
    let c = Observable::cosine(1);
    let s = correlation_function(
        &MapSpec::circle(1),
        &c,
        &c,
        20,
        100_000,
        Method::SingleOrbit { orbits: 8, burn_in: 100 },
        2,
    )
    .unwrap();
    for n in 1..=20 {
        assert!((s.values[n] - s.values[0]).abs() < 1e-9);
    }
}

#[test]
fn four_branch_halves_do_not_mix() {
    let map = MapSpec::four_branch();
    let phi = Observable::indicator(0.0, 0.499_999_999);
    let psi = Observable::indicator(0.5, 1.0);
    // Single orbit from the left half: the lag products vanish.
    let mut orbit = ergolab::orbits::Orbit::new(&map, 0.123).unwrap();
    for _ in 0..10_000 {
        let x = orbit.advance();
        assert_eq!(psi.eval(x), 0.0);
    }
    let u = uniform();
    let s = correlation_function(&map, &phi, &psi, 10, 200_000, Method::Ensemble { density: Some(&u) }, 3).unwrap();
    for n in 0..=10 {
        assert!((s.values[n] - 0.25).abs() < 0.01);
    }
}

#[test]
fn doubling_map_decay_matches_the_tower_prediction() {
    let map = MapSpec::circle(2);
    let x = Observable::identity();
    let s = correlation_function(&map, &x, &x, 14, 100_000_000, Method::SingleOrbit { orbits: 4, burn_in: 10_000 }, 4)
        .unwrap();
    let fitted = fit_decay(&s).unwrap();
    println!("{fitted:?}");
    match fitted.kind {
        DecayKind::Exponential { rate } => assert!((rate - 2f64.ln()).abs() < 0.1),
        ref k => panic!("{k:?}"),
    }
    let tower = first_return(&map, &[0], 40, 1 << 20, InverseMethod::ClosedForm).unwrap();
    let predicted = predict_decay(&return_tail(&tower, 40), ObservableClass::Holder, None).unwrap();
    assert!(cross_check(&predicted, &fitted).is_consistent());
}

#[test]
fn lsv_correlations_decay_polynomially() {
    let map = MapSpec::lsv(0.5).unwrap();
    let x = Observable::identity();
    let s = correlation_function(&map, &x, &x, 200, 20_000_000, Method::SingleOrbit { orbits: 4, burn_in: 10_000 }, 5)
        .unwrap();
    let fitted = fit_decay(&s);
    println!("{fitted:?} usable {}", decay_fits(&s).usable.len());
    match fitted.unwrap().kind {
        DecayKind::Polynomial { exponent } => assert!((exponent - 1.0).abs() < 0.4),
        k => panic!("{k:?}"),
    }
}

#[test]
fn shift_consistency() {
    // Replacing φ by φ∘f moves Cₙ to C_{n+1}.
    let map = MapSpec::tent();
    let phi = Observable::identity();
    let psi = Observable::cosine(1);
    let u = uniform();
    let a = correlation_function(&map, &phi, &psi, 6, 400_000, Method::Ensemble { density: Some(&u) }, 6).unwrap();
    let b = correlation_function(&map, &phi.compose(&map), &psi, 5, 400_000, Method::Ensemble { density: Some(&u) }, 7)
        .unwrap();
    for n in 0..5 {
        let sigma = (a.stderr[n + 1].powi(2) + b.stderr[n].powi(2)).sqrt();
        assert!((a.signed[n + 1] - b.signed[n]).abs() < 3.0 * sigma + 1e-12, "n = {n}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn correlations_are_bilinear(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let map = MapSpec::tent();
        let u = uniform();
        let m = Method::Ensemble { density: Some(&u) };
        let p1 = Observable::identity();
        let p2 = Observable::cosine(2);
        let (pa, pb, q1, q2) = (p1.clone(), p2.clone(), p1.clone(), p2.clone());
        let mix = Observable::new("mix", p1.regularity, move |x| a * pa.eval(x) + b * pb.eval(x));
        let psi = Observable::cosine(1);
        let s = correlation_function(&map, &mix, &psi, 4, 5000, m, 8).unwrap();
        let s1 = correlation_function(&map, &q1, &psi, 4, 5000, m, 8).unwrap();
        let s2 = correlation_function(&map, &q2, &psi, 4, 5000, m, 8).unwrap();
        for n in 0..=4 {
            prop_assert!((s.signed[n] - (a * s1.signed[n] + b * s2.signed[n])).abs() < 1e-9);
        }
        let c0 = correlation_function(&map, &q1, &q1.clone(), 0, 5000, m, 9).unwrap();
        prop_assert!(c0.signed[0] >= 0.0);
    }

    #[test]
    fn fit_is_scale_invariant(scale in 1e-4f64..1e4, rate in 0.1f64..1.0) {
        let base: Vec<f64> = (0..=30).map(|n| (-rate * n as f64).exp()).collect();
        let a = fit_decay(&CorrelationSeries::synthetic(base.clone())).unwrap();
        let b = fit_decay(&CorrelationSeries::synthetic(base.iter().map(|v| v * scale).collect())).unwrap();
        match (a.kind, b.kind) {
            (DecayKind::Exponential { rate: x }, DecayKind::Exponential { rate: y }) => prop_assert!((x - y).abs() < 1e-9),
            (x, y) => prop_assert!(false, "{:?} {:?}", x, y),
        }
    }
}
