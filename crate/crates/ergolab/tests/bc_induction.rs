use ergolab::bc_induction::*;
use ergolab::maps::MapSpec;
use ergolab::tower::DecayKind;
use proptest::prelude::*;
use std::f64::consts::PI;

// At a = 2, x = 2cos(πθ) conjugates f to θ ↦ 2θ. With x = −2sin(πε) the
// critical orbit is c₀ = −2, cⱼ = 2, and |f^{j+1}(x) − cⱼ| = 4sin²(2ʲπε).
fn tent_deviation(x: f64, j: u32) -> f64 {
    let eps = (-0.5 * x).asin() / PI;
    4.0 * (2f64.powi(j as i32) * PI * eps).sin().powi(2)
}

fn oracle_binding(x: f64, alpha: f64) -> usize {
    (0..).find(|&j| tent_deviation(x, j) > (-2.0 * alpha * j as f64).exp()).unwrap() as usize
}

#[test]
fn conditions_at_the_top_parameter() {
    let cfg = BcConfig { alpha: 0.1, ..Default::default() };
    let c = check_bc_conditions(2.0, 40, 1.0, &cfg).unwrap();
    assert!(c.hyperbolicity && c.slow_recurrence);
    for (n, l) in c.log_dn.iter().enumerate() {
        assert!((l - (n + 1) as f64 * 4f64.ln()).abs() < 1e-12);
    }
    let d = check_bc_conditions(2.0, 40, 0.5, &BcConfig::default()).unwrap();
    assert!(d.hyperbolicity && d.slow_recurrence);
}

#[test]
fn conditions_fail_in_the_periodic_window() {
    let c = check_bc_conditions(1.5, 40, 0.5, &BcConfig::default()).unwrap();
    assert!(!c.hyperbolicity);
    assert!(c.first_hyperbolicity_failure.is_some());
}

#[test]
fn empty_range_is_vacuous() {
    for a in [1.0, 1.5, 1.77, 2.0] {
        let c = check_bc_conditions(a, 0, 0.5, &BcConfig::default()).unwrap();
        assert!(c.hyperbolicity && c.slow_recurrence && c.log_dn.is_empty());
    }
    assert!(check_bc_conditions(2.5, 5, 0.5, &BcConfig::default()).is_err());
    assert!(check_bc_conditions(2.0, 20_000, 0.5, &BcConfig::default()).is_err());
}

#[test]
fn growth_targets() {
    let exp = GrowthTarget::Exponential { c: 1.0, rate: 1.3 };
    assert_eq!(check_growth(2.0, 30, exp).unwrap(), None);
    let too_fast = GrowthTarget::Exponential { c: 1.0, rate: 1.5 };
    assert_eq!(check_growth(2.0, 30, too_fast).unwrap(), Some(1));
    assert_eq!(check_growth(2.0, 30, GrowthTarget::Polynomial { c: 1.0, tau: 2.0 }).unwrap(), None);
}

#[test]
fn far_points_do_not_bind() {
    let cfg = BcConfig::default();
    for x in [1.0 + 1e-12, -1.3, 1.9] {
        assert_eq!(binding_period_point(2.0, x, &cfg).unwrap(), 0);
    }
    // x² = 1 = e⁰ still satisfies the j = 0 inequality.
    assert_eq!(binding_period_point(2.0, -1.0, &cfg).unwrap(), 1);
}

#[test]
fn binding_matches_the_tent_oracle() {
    let cfg = BcConfig::default();
    for x in [1e-2, 3e-3, -7e-4, 1e-5, 2.5e-6] {
        assert_eq!(binding_period_point(2.0, x, &cfg).unwrap(), oracle_binding(x, cfg.alpha), "x = {x}");
    }
    for r in 7..=16u32 {
        let (lo, hi) = hat_interval(r);
        let want = [lo, 0.5 * (lo + hi), hi].iter().map(|&x| oracle_binding(x, cfg.alpha)).min().unwrap();
        let rep = binding_period(2.0, r, &cfg).unwrap();
        assert_eq!(rep.p, want, "r = {r}");
    }
    // Frozen from the oracle above.
    let p: Vec<usize> = [8, 12, 16].iter().map(|&r| binding_period(2.0, r, &cfg).unwrap().p).collect();
    assert_eq!(p, vec![9, 14, 19]);
}

#[test]
fn binding_length_bound() {
    let cfg = BcConfig::default();
    let rep = binding_period(2.0, cfg.r_delta() + 2, &cfg).unwrap();
    assert!(rep.p >= 1 && rep.bound_holds, "{rep:?}");
    for r in 7..=25u32 {
        let rep = binding_period(2.0, r, &cfg).unwrap();
        assert!(rep.bound_holds, "{rep:?}");
        assert!(rep.p <= binding_period(2.0, r + 3, &cfg).unwrap().p);
    }
    assert!(binding_period(2.0, 1, &cfg).is_err());
    let short = BcConfig { n_max: 10, ..Default::default() };
    assert_eq!(binding_period(2.0, 25, &short), Err(BcError::CapExceeded { cap: 10 }));
}

#[test]
fn expansion_after_binding() {
    let cfg = BcConfig::default();
    let margins: Vec<f64> = (cfg.r_delta() + 1..=cfg.r_delta() + 13).map(|r| binding_period(2.0, r, &cfg).unwrap().expansion_margin).collect();
    for (i, m) in margins.iter().take(10).enumerate() {
        assert!(*m >= -2.0, "r = {}: {m}", cfg.r_delta() + 1 + i as u32);
        assert!(margins[i + 3] > *m);
    }
}

#[test]
fn generalized_binding() {
    let map = MapSpec::quadratic(2.0).unwrap();
    let half = |k: usize| 0.5f64.powi(k as i32);
    let at_c = binding_period_generalized(&map, 0.0, half, 40).unwrap();
    assert!(at_c.capped && at_c.p == 40);
    let far = binding_period_generalized(&map, 1.2, half, 40).unwrap();
    assert!(far.p <= 1 && !far.capped);
    let g = |k: usize| 1.0 / ((k + 2) as f64).powi(2);
    let b = binding_period_generalized(&map, 0.01, g, 200).unwrap();
    // |f(x) − f(c)| = x², then |fᵏ(x) − fᵏ(c)| = 4sin²(2^{k−1}πε); |fᵏ(c) − c| = 2.
    let dev = |k: usize| if k == 1 { 1e-4 } else { tent_deviation(0.01, k as u32 - 1) };
    let want = (1..200).find(|&k| dev(k) > g(k) * 2.0).unwrap();
    assert_eq!((b.p, b.capped), (want, false));
    assert!(binding_period_generalized(&map, 0.01, |k| k as f64, 10).is_err());
}

fn check_partition(ep: &EscapePartition) {
    let (j0, j1) = ep.interval;
    let mut all: Vec<&EscapeElement> = ep.elements.iter().chain(&ep.residue).collect();
    all.sort_by(|a, b| a.left.total_cmp(&b.left).then(a.right.total_cmp(&b.right)));
    assert!((all[0].left - j0).abs() <= 1e-9 * (j1 - j0));
    assert!((all.last().unwrap().right - j1).abs() <= 1e-9 * (j1 - j0));
    for w in all.windows(2) {
        assert!(w[0].right <= w[1].left + 1e-12 * (j1 - j0), "{:?} {:?}", w[0], w[1]);
    }
    let total: f64 = all.iter().map(|e| e.len()).sum();
    assert!((total - (j1 - j0)).abs() <= 1e-9 * (j1 - j0), "{total}");
}

fn check_itineraries(ep: &EscapePartition) {
    for e in &ep.elements {
        for w in e.events.windows(2) {
            assert!(w[0].time < w[1].time, "{:?}", e.events);
        }
        let windows: Vec<(u32, u32)> =
            e.events.iter().filter(|v| v.kind == EventKind::BindingWindow).map(|v| (v.time, v.until)).collect();
        for v in e.events.iter().filter(|v| v.kind != EventKind::BindingWindow) {
            assert!(windows.iter().all(|&(s, t)| v.time < s || v.time > t), "{:?}", e.events);
        }
        let ess: u32 = e.events.iter().filter(|v| v.kind == EventKind::EssentialReturn).map(|v| v.depth).sum();
        assert_eq!(ess, e.essential_depth);
        let last = e.events.last().unwrap();
        assert_eq!((last.kind, Some(last.time)), (EventKind::Escape, e.escape_time));
    }
}

#[test]
fn escape_partition_from_an_outer_interval() {
    let cfg = BcConfig::default();
    let ep = escape_partition(2.0, (1.0, 1.0 + cfg.delta_hat()), &cfg).unwrap();
    check_partition(&ep);
    check_itineraries(&ep);
    // f³(J) = [−1, 0.229] is the first image to meet Δ and it is chopped there.
    assert!(ep.elements.iter().all(|e| e.events[0].time == 3));
    let tail = escape_tail(&ep.elements);
    assert!(tail.r_squared >= 0.9 && tail.rate > 0.0, "{tail:?}");
    assert!(ep.residue_mass < 1e-6 * cfg.delta_hat());
}

#[test]
fn escape_partition_with_returns() {
    let cfg = BcConfig::default();
    let ep = escape_partition(2.0, (-0.9, -0.9 + cfg.delta_hat()), &cfg).unwrap();
    check_partition(&ep);
    check_itineraries(&ep);
    assert!(ep.elements.iter().any(|e| e.essential_depth > 0));
    let k = escape_constants(&ep.elements);
    assert!(k.kappa_hat > 0.0);
    assert_eq!(tail_dominance(&ep.elements, k), None);
    assert!(escape_tail(&ep.elements).r_squared >= 0.9);
}

#[test]
fn covering_image_is_cut_into_cells() {
    let cfg = BcConfig::default();
    let s = (-1f64).exp();
    let j = ((2.0 - s).sqrt(), (2.0 + s).sqrt());
    let ep = escape_partition(2.0, j, &cfg).unwrap();
    check_partition(&ep);
    assert_eq!(ep.elements.len(), 11);
    assert!(ep.elements.iter().all(|e| e.escape_time == Some(1)));
    let markov: Vec<&EscapeElement> = ep.elements.iter().filter(|e| e.markov).collect();
    assert_eq!(markov.len(), 1);
    let d = cfg.delta_eff();
    let (l, r) = (markov[0].left * markov[0].left - 2.0, markov[0].right * markov[0].right - 2.0);
    assert!((l + d).abs() < 1e-12 && (r - d).abs() < 1e-12);
    let tail = escape_tail(&ep.elements);
    let len = j.1 - j.0;
    assert!((tail.masses[0] - len).abs() < 1e-12 && (tail.masses[1] - len).abs() < 1e-12);
    assert_eq!(&tail.masses[2..], &[0.0]);
}

fn synthetic(e: u32, left: f64, right: f64) -> EscapeElement {
    EscapeElement {
        left,
        right,
        created: 0,
        events: Vec::new(),
        escape_time: Some(e),
        essential_depth: 0,
        markov: false,
        escape_cell: None,
    }
}

#[test]
fn staircase_tail() {
    let els: Vec<EscapeElement> = (1..=10).map(|e| synthetic(e, 0.1 * (e - 1) as f64, 0.1 * e as f64)).collect();
    let tail = escape_tail(&els);
    assert_eq!(tail.masses.len(), 12);
    assert!((tail.masses[0] - 1.0).abs() < 1e-12);
    for n in 1..=10 {
        assert!((tail.masses[n] - 0.1 * (11 - n) as f64).abs() < 1e-12);
    }
    assert_eq!(tail.masses[11], 0.0);
}

#[test]
fn escape_partition_rejects_bad_intervals() {
    let cfg = BcConfig::default();
    assert!(matches!(escape_partition(2.0, (0.5, 0.4), &cfg), Err(BcError::Config(_))));
    assert!(matches!(escape_partition(2.0, (1.9, 2.1), &cfg), Err(BcError::Config(_))));
    let tiny = BcConfig { n_max: 10, ..Default::default() };
    assert!(matches!(escape_partition(2.0, (1.0, 1.0 + cfg.delta_hat()), &tiny), Err(BcError::ResidueTooLarge { .. })));
}

#[test]
fn induced_markov_map_at_the_top_parameter() {
    let cfg = BcConfig::default();
    let b = build_induced_markov(2.0, &cfg).unwrap();
    let delta = cfg.delta_eff();
    assert_eq!(b.gcd, 1);
    assert_eq!(b.tower.gcd(), 1);
    assert!(b.unresolved < 1e-3 * 2.0 * delta, "{}", b.unresolved);
    assert!(b.residue <= b.unresolved);
    match b.class.as_ref().map(|c| &c.kind) {
        Some(DecayKind::Exponential { rate }) => assert!(*rate > 0.0),
        k => panic!("{k:?}"),
    }
    let returned: f64 = b.return_masses.iter().sum();
    assert!((returned + b.unresolved - 2.0 * delta).abs() < 1e-12);
    assert!(!b.tower.branches.is_empty());
    for br in &b.tower.branches {
        assert!(markov_endpoint_error(2.0, &cfg, br) < 1e-6, "{br:?}");
    }
    assert!(b.xi > 0.0 && b.xi <= 1.0);
    let counted: f64 = b.escape_counts.iter().sum();
    // Escape counts follow every return, including those after n_max.
    assert!(counted <= 2.0 * delta - b.residue + 1e-12 && counted >= returned, "{counted} {returned}");
    let listed: f64 = b.tower.branches.iter().map(|x| x.len()).sum();
    assert!((listed + b.unlisted + b.unresolved - 2.0 * delta).abs() < 1e-12);
}

#[test]
fn expansion_outside_the_critical_neighbourhood() {
    let cfg = BcConfig::default();
    let good = expansion_outside_delta(2.0, 10_000, &cfg, 11).unwrap();
    assert_eq!((good.segments, good.violations), (10_000, 0));
    assert!(good.worst_margin >= 0.0 && good.fitted_c.unwrap() > 0.0);
    let bad = expansion_outside_delta(1.5, 10_000, &cfg, 11).unwrap();
    assert!(bad.violations > 0 && bad.worst_margin < 0.0);
    assert!(expansion_outside_delta(2.0, 999, &cfg, 11).is_err());
    // One step outside Δ: 2|x| ≥ 2δ ≥ δe^λ.
    assert!(2.0 * cfg.delta_eff() >= cfg.delta_eff() * cfg.lambda.exp());
    let again = expansion_outside_delta(2.0, 10_000, &cfg, 11).unwrap();
    assert_eq!(good, again);
}

#[test]
fn config_checks() {
    let cfg = BcConfig::default();
    assert!((cfg.beta() - 0.05 / 0.6).abs() < 1e-15);
    assert!((cfg.delta_hat() - (-2f64).exp()).abs() < 1e-15);
    assert!(BcConfig { iota: 1.0, ..cfg.clone() }.validate().is_err());
    assert!(BcConfig { r_cap: 5, ..cfg.clone() }.validate().is_err());
    let tight = BcConfig { lambda: 0.6, alpha: 0.06, delta: (-60f64).exp(), iota: 0.1, r_cap: 70, ..cfg };
    assert_eq!(tight.validate().unwrap(), Vec::<String>::new());
}

#[test]
fn grid_locates_points() {
    let g = IrPartition::new(2.0, &BcConfig { subdivide_r2: true, ..Default::default() });
    for r in 1..=12 {
        let (lo, hi) = IrPartition::interval(r);
        let mid = 0.5 * (lo + hi);
        assert_eq!(g.cells[g.locate(mid)].kind.depth(), r as u32);
        assert_eq!(g.cells[g.locate(-mid)].kind.depth(), r as u32);
    }
    let sub = g.cells.iter().filter(|c| matches!(c.kind, CellKind::Return { r: 9, .. })).count();
    assert_eq!(sub, 81);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn escape_partitions_tile_their_interval(start in -1.99f64..1.8, scale in 1.0f64..1.5) {
        let cfg = BcConfig::default();
        let len = cfg.delta_hat() * scale;
        let ep = escape_partition(2.0, (start, (start + len).min(2.0)), &cfg).unwrap();
        check_partition(&ep);
        check_itineraries(&ep);
        let k = escape_constants(&ep.elements);
        prop_assert_eq!(tail_dominance(&ep.elements, k), None);
    }

    #[test]
    fn binding_is_never_longer_for_shallower_points(x in 1e-8f64..1e-1) {
        let cfg = BcConfig::default();
        let p = binding_period_point(2.0, x, &cfg).unwrap();
        prop_assert_eq!(p, oracle_binding(x, cfg.alpha));
        prop_assert!(binding_period_point(2.0, x * 4.0, &cfg).unwrap() <= p);
    }
}
