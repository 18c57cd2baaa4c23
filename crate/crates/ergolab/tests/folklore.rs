use ergolab::folklore::*;
use ergolab::maps::MapSpec;
use ergolab::tower::{first_return, intermittent_first_return, InverseMethod};
use proptest::prelude::*;

#[test]
fn circle_pullback_is_uniform() {
    let p = pullback_measure(&MapSpec::circle(2), 200, (0.0, 1.0, 256), 1_000_000, 1).unwrap();
    let e = p.density.sup_error(exact::uniform);
    println!("circle sup error {e}");
    assert!(e < 0.02);
    assert!((p.density.mass.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn gauss_pullback_matches_gauss_measure() {
    let g = MapSpec::gauss(1_000_000);
    let p = pullback_measure(&g, 50, (0.0, 1.0, 256), 1_000_000, 2).unwrap();
    let l1 = p.density.l1_to_cdf(exact::gauss, None);
    println!("gauss L1 {l1}");
    assert!(l1 < 0.02);
    let candidate = DensityHistogram::from_cdf(0.0, 1.0, 256, exact::gauss).unwrap();
    let r = invariance_residual(&g, &candidate, 1_000_000, 3).unwrap();
    let wrong = DensityHistogram::from_cdf(0.0, 1.0, 256, exact::uniform).unwrap();
    let w = invariance_residual(&g, &wrong, 1_000_000, 3).unwrap();
    println!("gauss residual {r}, uniform residual {w}");
    assert!(r < 0.02);
    assert!(w > 0.05);
}

#[test]
fn quadratic_pullback_matches_arcsine_law() {
    let q = MapSpec::quadratic(2.0).unwrap();
    let p = pullback_measure(&q, 50, (-2.0, 2.0, 256), 1_000_000, 4).unwrap();
    let l1 = p.density.l1_to_cdf(exact::chebyshev, Some((-1.9, 1.9)));
    println!("quadratic L1 {l1}");
    assert!(l1 < 0.03);
}

#[test]
fn uniform_is_invariant_for_the_doubling_map() {
    let u = DensityHistogram::from_cdf(0.0, 1.0, 256, exact::uniform).unwrap();
    let r = invariance_residual(&MapSpec::circle(2), &u, 1_000_000, 9).unwrap();
    println!("circle residual {r}");
    assert!(r < 0.01);
}

#[test]
fn pullbacks_stabilize() {
    let g = MapSpec::gauss(100_000);
    let a = pullback_measure(&g, 200, (0.0, 1.0, 256), 200_000, 6).unwrap();
    let b = pullback_measure(&g, 400, (0.0, 1.0, 256), 200_000, 6).unwrap();
    let tv = a.density.total_variation(&b.density);
    println!("tv {tv}");
    assert!(tv < 0.02);
}

#[test]
fn circle_first_return_projects_to_lebesgue() {
    let c = MapSpec::circle(2);
    let tower = first_return(&c, &[0], 45, 1 << 20, InverseMethod::ClosedForm).unwrap();
    let base = pullback_measure(&tower, 50, (0.0, 0.5, 128), 200_000, 7).unwrap();
    let p = project_measure(&tower, &base.density, (0.0, 1.0, 256), 400_000, 8).unwrap();
    let l1 = p.density.l1_to_cdf(exact::uniform, None);
    println!("projected L1 {l1}, mu_hat {}", p.mu_hat_total);
    assert!(l1 < 0.03);
    assert!((p.mu_hat_total - 2.0).abs() < 0.02);
}

#[test]
fn lsv_projections_concentrate_near_zero() {
    let mut near_zero = Vec::new();
    for alpha in [0.3, 0.5, 0.7] {
        let map = MapSpec::lsv(alpha).unwrap();
        let tower = intermittent_first_return(&map, 5000).unwrap();
        let base = pullback_measure(&tower, 30, (0.5, 1.0, 128), 100_000, 10).unwrap();
        let p = project_measure(&tower, &base.density, (0.0, 1.0, 256), 200_000, 11).unwrap();
        near_zero.push(p.density.mass[..8].iter().sum::<f64>());
    }
    println!("{near_zero:?}");
    assert!(near_zero[0] < near_zero[1] && near_zero[1] < near_zero[2]);
}

#[test]
fn neutral_tangency_has_non_summable_returns() {
    let map = MapSpec::neutral_tangency();
    let tower = intermittent_first_return(&map, 5000).unwrap();
    let base = DensityHistogram::from_cdf(0.5, 1.0, 64, |x| (x - 0.5) * 2.0).unwrap();
    let r = project_measure(&tower, &base, (0.0, 1.0, 64), 1000, 1);
    assert!(matches!(r, Err(FolkloreError::NonSummableReturns { .. })), "{r:?}");
}

#[test]
fn neutral_tangency_drifts_to_zero() {
    let t = std::time::Instant::now();
    let neutral = no_acip_diagnostic(&MapSpec::neutral_tangency(), 0.1, 2_000_000, 64, 12).unwrap();
    let control = no_acip_diagnostic(&MapSpec::lsv(0.5).unwrap(), 0.1, 2_000_000, 16, 13).unwrap();
    println!("{neutral:?}\n{control:?}\n{:?}", t.elapsed());
    assert!(neutral.increasing);
    assert!(neutral.fractions[3] - control.fractions[3] >= 0.1);
    assert!(control.fractions[3] < 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 20, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn absolute_continuity_bound(a in 0.0f64..0.95, len in 0.01f64..0.05) {
        // 𝒟 = 1 for the doubling map, so ν(A) ≤ 1.1·|A|.
        let p = pullback_measure(&MapSpec::circle(2), 20, (0.0, 1.0, 100), 50_000, 21).unwrap();
        let lo = (a * 100.0).floor() as usize;
        let hi = (((a + len) * 100.0).ceil() as usize).min(100);
        let nu: f64 = p.density.mass[lo..hi].iter().sum();
        prop_assert!(nu <= 1.1 * (hi - lo) as f64 / 100.0);
    }
}

