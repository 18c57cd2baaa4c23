use ergolab::maps::*;
use proptest::prelude::*;

fn families() -> Vec<MapSpec> {
    vec![
        MapSpec::circle(2),
        MapSpec::circle(3),
        MapSpec::tent(),
        MapSpec::quadratic(2.0).unwrap(),
        MapSpec::quadratic(1.5).unwrap(),
        MapSpec::lsv(0.5).unwrap(),
        MapSpec::neutral_tangency(),
        MapSpec::gauss(1_000_000),
        MapSpec::four_branch(),
    ]
}

fn finite_difference(map: &MapSpec, x: f64) -> f64 {
    // Central differences are exact for the quadratic, so a wide step only removes rounding.
    let h = if let Family::Quadratic { .. } = map.family() { 1e-3 } else { 1e-5 * (10.0 * x.abs()).min(1.0) };
    (map.eval(x + h).unwrap() - map.eval(x - h).unwrap()) / (2.0 * h)
}

#[test]
fn quadratic_interval_is_invariant() {
    for a in [1.0, 1.3, 1.7, 1.9, 2.0] {
        let m = MapSpec::quadratic(a).unwrap();
        let (lo, hi) = m.domain();
        assert_eq!((lo, hi), (-a, a * a - a));
        for i in 0..=10_000 {
            let x = lo + (hi - lo) * i as f64 / 10_000.0;
            let y = x * x - a;
            assert!(y >= lo - 1e-12 && y <= hi + 1e-12, "a = {a}, x = {x}");
        }
    }
}

#[test]
fn four_branch_quarter_point() {
    // The formula sends 1/4 to the fixed point 1/2, so [0, 1/2) is invariant only off this point.
    let m = MapSpec::four_branch();
    assert_eq!(m.orbit_segment(0.25, 2).unwrap(), vec![0.25, 0.5, 0.5]);
    assert_eq!(m.eval(0.3).unwrap(), 0.4);
}

#[test]
fn lsv_neutral_fixed_point() {
    for alpha in [0.1, 0.5, 0.9] {
        let m = MapSpec::lsv(alpha).unwrap();
        assert_eq!(m.eval(0.0).unwrap(), 0.0);
        assert_eq!(m.deriv(0.0).unwrap(), 1.0);
        // Expansion off the neutral point, on a geometric mesh down to 1e-8.
        let mut x = 0.999;
        while x > 1e-8 {
            assert!(m.deriv(x).unwrap() > 1.0, "alpha = {alpha}, x = {x}");
            x *= 0.9;
        }
    }
}

#[test]
fn gauss_branches_and_unmodelled_mass() {
    let r_max = 50;
    let m = MapSpec::gauss(r_max);
    let branches = m.markov_branches().unwrap();
    assert_eq!(branches.len(), r_max as usize);
    for (i, b) in branches.iter().rev().enumerate() {
        let r = i as f64 + 1.0;
        assert!((b.left - 1.0 / (r + 1.0)).abs() < 1e-15 && (b.right - 1.0 / r).abs() < 1e-15);
    }
    let covered: f64 = branches.iter().map(|b| b.len()).sum();
    assert!(1.0 - covered <= 1.0 / (r_max as f64 + 1.0) + 1e-15);
}

#[test]
fn critical_orders_match_log_log_slopes() {
    // Quadratic: |Df| = 2|x| so the slope is ℓ − 1 = 1. Gauss: |Df| = x⁻² so ℓ − 1 = −2.
    let cases = [(MapSpec::quadratic(2.0).unwrap(), 1.0), (MapSpec::gauss(1_000_000), -2.0)];
    for (m, expected) in cases {
        let c = m.critical_set().points[0];
        let xs: Vec<f64> = (1..=12).map(|i| c.location + 10f64.powf(-(i as f64) / 2.0)).collect();
        let lx: Vec<f64> = xs.iter().map(|x| (x - c.location).ln()).collect();
        let ly: Vec<f64> = xs.iter().map(|&x| m.deriv(x).unwrap().abs().ln()).collect();
        let fit = ergolab::stats::linear_fit(&lx, &ly).unwrap();
        assert!((fit.slope - expected).abs() < 1e-6, "{}: {}", m.family().name(), fit.slope);
        assert!((c.order - 1.0 - expected).abs() < 1e-12);
    }
}

#[test]
fn viana_derivative_matrix() {
    let a = misiurewicz_parameter();
    let m = MapSpec::viana(16, a, 1e-3).unwrap();
    let (t, x) = (0.3, 0.7);
    let j = m.jacobian(t, x).unwrap();
    let h = 1e-7;
    let (t1, x1) = m.eval_skew(t + h, x).unwrap();
    let (t0, x0) = m.eval_skew(t - h, x).unwrap();
    assert!(((t1 - t0) / (2.0 * h) - j[0][0]).abs() < 1e-5);
    assert!(((x1 - x0) / (2.0 * h) - j[1][0]).abs() < 1e-6);
    let (_, x1) = m.eval_skew(t, x + h).unwrap();
    let (_, x0) = m.eval_skew(t, x - h).unwrap();
    assert!(((x1 - x0) / (2.0 * h) - j[1][1]).abs() < 1e-6);
}

#[test]
fn families_round_trip_through_json() {
    for m in families() {
        let json = serde_json::to_string(m.family()).unwrap();
        let back: Family = serde_json::from_str(&json).unwrap();
        assert_eq!(&back, m.family());
        assert_eq!(MapSpec::new(back).unwrap(), m);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn eval_stays_in_phase_space(u in proptest::collection::vec(0.0f64..1.0, 160)) {
        for m in families() {
            let (lo, hi) = m.domain();
            for &v in &u {
                let x = lo + (hi - lo) * v;
                match m.eval(x) {
                    Ok(y) => prop_assert!(y >= lo && y <= hi, "{} f({x}) = {y}", m.family().name()),
                    Err(MapError::Truncated { .. }) => {}
                    Err(e) => prop_assert!(false, "{e}"),
                }
            }
        }
    }

    #[test]
    fn deriv_matches_finite_differences(u in proptest::collection::vec(0.0f64..1.0, 16)) {
        for m in families() {
            let (lo, hi) = m.domain();
            let branches = m.markov_branches().ok();
            for &v in &u {
                let x = lo + (hi - lo) * v;
                // Keep away from critical points, branch ends and the phase-space boundary.
                if m.critical_set().distance(x) <= 1e-3 || x - lo < 1e-3 || hi - x < 1e-3 {
                    continue;
                }
                if let Some(bs) = &branches {
                    if bs.iter().any(|b| (x - b.left).abs() < 1e-3 || (x - b.right).abs() < 1e-3) {
                        continue;
                    }
                }
                if matches!(m.family(), Family::FourBranchNonErgodic | Family::Tent)
                    && [0.25, 0.5, 0.75].iter().any(|c| (x - c).abs() < 1e-3)
                {
                    continue;
                }
                if m.is_circle() {
                    // Stay off the wrap-around.
                    let k = m.eval(x).unwrap();
                    if k < 1e-3 || k > 1.0 - 1e-3 {
                        continue;
                    }
                }
                if let Family::Gauss { .. } = m.family() {
                    if x < 1e-2 {
                        continue;
                    }
                }
                let d = m.deriv(x).unwrap();
                let fd = finite_difference(&m, x);
                prop_assert!((fd - d).abs() <= 1e-6 * d.abs(), "{} at {x}: {d} vs {fd}", m.family().name());
            }
        }
    }

    #[test]
    fn four_branch_halves_are_invariant(x in 0.0f64..0.5, index in 0u64..1000) {
        let m = MapSpec::four_branch();
        for (x0, lo, hi) in [(x, 0.0, 0.5), (x + 0.5, 0.5, 1.0 + 1e-300)] {
            let mut orbit = ergolab::orbits::Orbit::with_stream(&m, x0, 5, index).unwrap();
            for _ in 0..1000 {
                let y = orbit.advance();
                prop_assert!(y >= lo && y < hi, "{x0} reached {y}");
            }
        }
    }
}
