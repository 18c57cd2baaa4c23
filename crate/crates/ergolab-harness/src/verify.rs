//! The acceptance suite: criteria 1 to 12, each a list of named checks against fixed
//! tolerances. Results never depend on the thread count; timings are kept out of them.

use ergolab::bc_induction::{self, build_induced_markov, check_bc_conditions, escape_partition, escape_tail, BcConfig};
use ergolab::combinatorics::{binomial, check_bound, count_compositions, enumerate_compositions};
use ergolab::correlate::{correlation_function, cross_check, fit_decay, CorrelationSeries, Method, Observable};
use ergolab::folklore::{exact, no_acip_diagnostic, pullback_measure, DensityHistogram};
use ergolab::maps::MapSpec;
use ergolab::orbits::{gamma_tail, lyapunov_exponent, GammaConfig};
use ergolab::paramex::{parameter_derivative_ratio, replay_essential_depth, run_exclusion, ParamConfig};
use ergolab::rng;
use ergolab::stats::linear_fit;
use ergolab::symbolic::{distortion_report, max_diameter, refine, tau, word_distortion, RefineOptions, DEFAULT_MESH};
use ergolab::tower::{
    first_return, intermittent_first_return, predict_decay, return_tail, DecayKind, InverseMethod, ObservableClass,
    ReturnTail,
};
use serde::{Deserialize, Serialize};

use crate::config::Profile;
use crate::output::{csv, field, num};
use crate::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// Measured value; absent when not finite or not numeric.
    pub value: Option<f64>,
    pub target: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    /// Set when a module call failed before the checks completed.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub profile: Profile,
    pub seed: u64,
    pub passed: bool,
    pub criteria: Vec<CriterionResult>,
}

impl VerifyReport {
    pub fn to_csv(&self) -> String {
        let rows = self.criteria.iter().flat_map(|c| {
            let mut rows: Vec<Vec<String>> = c
                .checks
                .iter()
                .map(|k| {
                    vec![
                        c.id.to_string(),
                        field(&k.name),
                        k.value.map_or(String::new(), num),
                        field(&k.target),
                        k.passed.to_string(),
                    ]
                })
                .collect();
            if let Some(e) = &c.error {
                rows.push(vec![c.id.to_string(), "error".into(), String::new(), field(e), "false".into()]);
            }
            rows
        });
        csv(&["criterion", "check", "value", "target", "passed"], rows)
    }

    /// One line per criterion.
    pub fn table(&self) -> String {
        self.criteria
            .iter()
            .map(|c| format!("{:>2} {} {}\n", c.id, if c.passed { "PASS" } else { "FAIL" }, c.name))
            .collect()
    }
}

struct Checks(Vec<Check>);

impl Checks {
    fn new() -> Self {
        Checks(Vec::new())
    }

    fn add(&mut self, name: impl Into<String>, value: f64, target: impl Into<String>, passed: bool) {
        let value = value.is_finite().then_some(value);
        self.0.push(Check { name: name.into(), value, target: target.into(), passed });
    }

    fn flag(&mut self, name: impl Into<String>, passed: bool) {
        self.add(name, if passed { 1.0 } else { 0.0 }, "true", passed);
    }
}

type Body = fn(&Scale, u64, &mut Checks) -> Result<(), String>;

/// Sample sizes per profile. Tolerances do not change with the profile.
#[derive(Clone, Copy, Debug)]
pub struct Scale {
    lyapunov_n: usize,
    pullback_samples: usize,
    no_acip_n: u64,
    no_acip_orbits: usize,
    control_orbits: usize,
    correlation_samples: usize,
    fit_samples: usize,
    paramex_depth: u32,
    horizon_target: u32,
    ratio_parameters: usize,
}

impl Scale {
    pub fn of(profile: Profile) -> Self {
        match profile {
            Profile::Full => Scale {
                lyapunov_n: 10_000_000,
                pullback_samples: 1_000_000,
                no_acip_n: 10_000_000,
                no_acip_orbits: 64,
                control_orbits: 16,
                correlation_samples: 1_000_000,
                fit_samples: 100_000_000,
                paramex_depth: 15,
                horizon_target: 15,
                ratio_parameters: 100,
            },
            Profile::Quick => Scale {
                lyapunov_n: 1_000_000,
                pullback_samples: 200_000,
                no_acip_n: 1_000_000,
                no_acip_orbits: 16,
                control_orbits: 8,
                correlation_samples: 200_000,
                fit_samples: 10_000_000,
                paramex_depth: 10,
                horizon_target: 15,
                ratio_parameters: 20,
            },
        }
    }
}

pub const NAMES: [&str; 12] = [
    "Lyapunov exactness",
    "Folklore densities",
    "Cylinder lemma",
    "Distortion",
    "Intermittency tail",
    "No-acip diagnostic",
    "Benedicks-Carleson construction",
    "Binding bound",
    "Correlation dictionary",
    "Parameter machinery",
    "Combinatorics oracle",
    "Reproducibility across thread counts",
];

const BODIES: [Body; 12] = [c1, c2, c3, c4, c5, c6, c7, c8, c9, c10, c11, c12];

/// Runs every criterion, or those listed in `only`.
pub fn run(profile: Profile, seed: u64, only: Option<&[u32]>) -> VerifyReport {
    let scale = Scale::of(profile);
    let mut criteria = Vec::new();
    for (i, body) in BODIES.iter().enumerate() {
        let id = i as u32 + 1;
        if only.is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let mut checks = Checks::new();
        let error = body(&scale, rng::derive_seed(seed, NAMES[i]), &mut checks).err();
        let passed = error.is_none() && !checks.0.is_empty() && checks.0.iter().all(|c| c.passed);
        criteria.push(CriterionResult { id, name: NAMES[i].into(), passed, checks: checks.0, error });
    }
    let passed = criteria.iter().all(|c| c.passed);
    VerifyReport { profile, seed, passed, criteria }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// ∫₀¹ log(1/x)·2/((1+x) ln 2) dx by Simpson's rule after x = e^{−t}.
fn gauss_lyapunov_oracle() -> f64 {
    let (t_max, n) = (60.0, 60_000);
    let h = t_max / n as f64;
    let g = |t: f64| 2.0 * t * (-t).exp() / ((1.0 + (-t).exp()) * 2f64.ln());
    let mut s = g(0.0) + g(t_max);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
    }
    s * h / 3.0
}

fn c1(sc: &Scale, seed: u64, ch: &mut Checks) -> Result<(), String> {
    let x0 = 0.1 + 0.5 * (seed % 1000) as f64 / 1000.0;
    let circle = lyapunov_exponent(&MapSpec::circle(2), x0, 1_000_000).map_err(err)?;
    let d = (circle.value - 2f64.ln()).abs();
    ch.add("circle2 |value - log 2|", d, "<= 1e-12", d <= 1e-12);
    let oracle = gauss_lyapunov_oracle();
    let gauss = lyapunov_exponent(&MapSpec::gauss(1_000_000), x0, sc.lyapunov_n).map_err(err)?;
    let rel = (gauss.value / oracle - 1.0).abs();
    ch.add("gauss oracle", oracle, "2.3731 +- 1e-4", (oracle - 2.3731).abs() < 1e-4);
    ch.add("gauss relative error", rel, "< 0.01", rel < 0.01);
    let q = MapSpec::quadratic(2.0).map_err(err)?;
    let quad = lyapunov_exponent(&q, x0 - 0.6, sc.lyapunov_n).map_err(err)?;
    let rel = (quad.value / 2f64.ln() - 1.0).abs();
    ch.add("quadratic(2) relative error", rel, "< 0.01", rel < 0.01);
    Ok(())
}

fn c2(sc: &Scale, seed: u64, ch: &mut Checks) -> Result<(), String> {
    let n = sc.pullback_samples;
    let p = pullback_measure(&MapSpec::circle(2), 200, (0.0, 1.0, 256), n, seed).map_err(err)?;
    let e = p.density.sup_error(exact::uniform);
    ch.add("circle2 sup error", e, "< 0.02", e < 0.02);
    let p = pullback_measure(&MapSpec::gauss(1_000_000), 50, (0.0, 1.0, 256), n, seed ^ 1).map_err(err)?;
    let e = p.density.l1_to_cdf(exact::gauss, None);
    ch.add("gauss L1", e, "< 0.02", e < 0.02);
    let q = MapSpec::quadratic(2.0).map_err(err)?;
    let p = pullback_measure(&q, 50, (-2.0, 2.0, 256), n, seed ^ 2).map_err(err)?;
    let e = p.density.l1_to_cdf(exact::chebyshev, Some((-1.9, 1.9)));
    ch.add("quadratic(2) L1 on [-1.9, 1.9]", e, "< 0.03", e < 0.03);
    Ok(())
}

fn c3(_: &Scale, _: u64, ch: &mut Checks) -> Result<(), String> {
    for map in [MapSpec::circle(2), MapSpec::tent()] {
        let t = refine(&map, 20, RefineOptions::default()).map_err(err)?;
        let mut worst = 0.0f64;
        let mut exact = true;
        for n in 1..=20 {
            let d = max_diameter(t.cylinders(n)).map_err(err)?;
            let target = (-(n as f64)).exp2();
            exact &= d == target;
            worst = worst.max((d - target).abs());
        }
        ch.add(format!("{} max diameter = 2^-n, n <= 20", map.family().name()), worst, "exact", exact);
    }
    let g = MapSpec::gauss(5);
    let t = refine(&g, 6, RefineOptions { max_truncation_loss: 1.0, ..Default::default() }).map_err(err)?;
    let report = distortion_report(&g, 12, 4000, DEFAULT_MESH, 7).map_err(err)?;
    let delta_max = max_diameter(t.cylinders(1)).map_err(err)?;
    let tau = tau(1.0, delta_max, report.constant());
    ch.add("gauss tau", tau, "< 1", tau < 1.0);
    let mut prev = f64::INFINITY;
    let (mut decreasing, mut bounded) = (true, true);
    let mut worst_ratio = 0.0f64;
    for n in 1..=6 {
        let d = max_diameter(t.cylinders(n)).map_err(err)?;
        decreasing &= d < prev;
        bounded &= d <= tau.powi(n as i32);
        worst_ratio = worst_ratio.max(d / tau.powi(n as i32));
        prev = d;
    }
    ch.flag("gauss diameters strictly decreasing", decreasing);
    ch.add("gauss max diameter / tau^n", worst_ratio, "<= 1", bounded);
    Ok(())
}

fn c4(_: &Scale, seed: u64, ch: &mut Checks) -> Result<(), String> {
    for map in [MapSpec::circle(2), MapSpec::circle(3), MapSpec::tent()] {
        let r = distortion_report(&map, 8, 200, DEFAULT_MESH, seed).map_err(err)?;
        let worst = r.max_by_depth.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        ch.add(format!("{:?} distortion", map.family()), worst, "< 1e-12", worst < 1e-12);
    }
    let d = word_distortion(&MapSpec::gauss(5), &[1], DEFAULT_MESH).map_err(err)?;
    ch.add("gauss [1/2, 1) distortion", d, "log 4 +- 1e-3", (d - 4f64.ln()).abs() < 1e-3);
    let r = distortion_report(&MapSpec::gauss(5), 12, 4000, DEFAULT_MESH, seed ^ 1).map_err(err)?;
    let ratio = r.increments[9] / r.increments[4];
    ch.add("gauss increment(10)/increment(5)", ratio, "< 0.5", ratio < 0.5);
    Ok(())
}

fn loglog_slope(tail: &ReturnTail, lo: usize, hi: usize) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = (lo..=hi).map(|n| ((n as f64).ln(), tail.masses[n].ln())).unzip();
    linear_fit(&xs, &ys).map(|f| f.slope)
}

fn c5(_: &Scale, _: u64, ch: &mut Checks) -> Result<(), String> {
    let map = MapSpec::lsv(0.5).map_err(err)?;
    let tower = intermittent_first_return(&map, 10_000).map_err(err)?;
    let tail = return_tail(&tower, 10_000);
    let slope = loglog_slope(&tail, 10, 100).ok_or("slope fit failed")?;
    ch.add("log-log slope on [10, 100]", slope, "-2 +- 0.2", (slope + 2.0).abs() <= 0.2);
    let p = predict_decay(&tail, ObservableClass::Holder, None).map_err(err)?;
    match p.kind {
        DecayKind::Polynomial { exponent } => {
            ch.add("predicted correlation exponent", exponent, "1 +- 0.2", (exponent - 1.0).abs() <= 0.2)
        }
        k => ch.add(format!("predicted class {k:?}"), f64::NAN, "polynomial", false),
    }
    Ok(())
}

fn c6(sc: &Scale, seed: u64, ch: &mut Checks) -> Result<(), String> {
    let neutral =
        no_acip_diagnostic(&MapSpec::neutral_tangency(), 0.1, sc.no_acip_n, sc.no_acip_orbits, seed).map_err(err)?;
    let control = no_acip_diagnostic(&MapSpec::lsv(0.5).map_err(err)?, 0.1, sc.no_acip_n, sc.control_orbits, seed ^ 1)
        .map_err(err)?;
    ch.add("neutral fraction at n", neutral.fractions[3], "increasing across checkpoints", neutral.increasing);
    let gap = neutral.fractions[3] - control.fractions[3];
    ch.add("neutral minus LSV(0.5) control", gap, ">= 0.1", gap >= 0.1);
    Ok(())
}

fn c7(_: &Scale, _: u64, ch: &mut Checks) -> Result<(), String> {
    let cfg = BcConfig::default();
    let c = check_bc_conditions(2.0, 40, cfg.hyperbolicity_c, &cfg).map_err(err)?;
    ch.add("hyperbolicity to N = 40", c.hyperbolicity_margin, "holds", c.hyperbolicity);
    ch.add("slow recurrence to N = 40", c.recurrence_margin, "holds", c.slow_recurrence);
    let ep = escape_partition(2.0, (1.0, 1.0 + cfg.delta_hat()), &cfg).map_err(err)?;
    let et = escape_tail(&ep.elements);
    ch.add("escape tail R^2", et.r_squared, ">= 0.9", et.r_squared >= 0.9);
    let b = build_induced_markov(2.0, &cfg).map_err(err)?;
    ch.add("return time gcd", b.gcd as f64, "1", b.gcd == 1);
    let exponential = matches!(b.class.as_ref().map(|c| &c.kind), Some(DecayKind::Exponential { .. }));
    ch.flag("tail classified exponential", exponential);
    let limit = 1e-3 * 2.0 * cfg.delta_eff();
    ch.add("unresolved deficit", b.unresolved, format!("< {limit:.3e}"), b.unresolved < limit);
    Ok(())
}

fn c8(_: &Scale, _: u64, ch: &mut Checks) -> Result<(), String> {
    let cfg = BcConfig::default();
    let rd = cfg.r_delta();
    for r in rd + 1..=rd + 10 {
        let rep = bc_induction::binding_period(2.0, r, &cfg).map_err(err)?;
        ch.add(format!("p({r}) + 1"), rep.p as f64 + 1.0, format!("<= {:.6}", rep.bound), rep.bound_holds);
    }
    Ok(())
}

fn c9(sc: &Scale, seed: u64, ch: &mut Checks) -> Result<(), String> {
    let circle = MapSpec::circle(2);
    let u = DensityHistogram::from_cdf(0.0, 1.0, 256, exact::uniform).map_err(err)?;
    let c = Observable::cosine(1);
    let s = correlation_function(&circle, &c, &c, 10, sc.correlation_samples, Method::Ensemble { density: Some(&u) }, seed)
        .map_err(err)?;
    ch.add("cos C0", s.values[0], "0.5 +- 0.01", (s.values[0] - 0.5).abs() <= 0.01);
    let worst = s.values[1..].iter().cloned().fold(0.0, f64::max);
    ch.add("cos max |Cn|, 1 <= n <= 10", worst, "< 0.005", worst < 0.005);

    // Decay of x against x, where the doubling map decorrelates at rate log 2.
    let x = Observable::identity();
    let method = Method::SingleOrbit { orbits: 4, burn_in: 10_000 };
    let s = correlation_function(&circle, &x, &x, 14, sc.fit_samples, method, seed ^ 1).map_err(err)?;
    let fitted = fit_decay(&s).map_err(err)?;
    let tower = first_return(&circle, &[0], 40, 1 << 20, InverseMethod::ClosedForm).map_err(err)?;
    let predicted = predict_decay(&return_tail(&tower, 40), ObservableClass::Holder, None).map_err(err)?;
    let exp_predicted = matches!(predicted.kind, DecayKind::Exponential { .. });
    ch.flag("tower prediction is exponential", exp_predicted);
    let fitted_rate = match fitted.kind {
        DecayKind::Exponential { rate } => rate,
        _ => f64::NAN,
    };
    let v = cross_check(&predicted, &fitted);
    ch.add("cross_check(prediction, fit)", fitted_rate, "consistent", v.is_consistent());

    let exp: Vec<f64> = (0..=30).map(|n| (-0.3 * n as f64).exp()).collect();
    match fit_decay(&CorrelationSeries::synthetic(exp)).map_err(err)?.kind {
        DecayKind::Exponential { rate } => ch.add("synthetic exponential rate", rate, "0.3 +- 0.02", (rate - 0.3).abs() <= 0.02),
        k => ch.add(format!("synthetic exponential class {k:?}"), f64::NAN, "exponential", false),
    }
    let poly: Vec<f64> = (0..=200).map(|n| (n.max(1) as f64).powf(-1.5)).collect();
    match fit_decay(&CorrelationSeries::synthetic(poly)).map_err(err)?.kind {
        DecayKind::Polynomial { exponent } => {
            ch.add("synthetic polynomial exponent", exponent, "1.5 +- 0.05", (exponent - 1.5).abs() <= 0.05)
        }
        k => ch.add(format!("synthetic polynomial class {k:?}"), f64::NAN, "polynomial", false),
    }
    Ok(())
}

fn c10(sc: &Scale, seed: u64, ch: &mut Checks) -> Result<(), String> {
    let mut worst = 0.0f64;
    for i in 0..sc.ratio_parameters {
        let a = rng::uniform(&mut rng::stream(seed, i as u64), 2.0 - 1e-3, 2.0);
        for k in 0..=30 {
            let r = parameter_derivative_ratio(a, k).map_err(err)?;
            worst = worst.max((r.ratio - r.series_value).abs() / r.series_value.abs());
        }
    }
    ch.add("derivative ratio identity, k <= 30", worst, "<= 1e-9 relative", worst <= 1e-9);

    // The default budget stops the run at level 14; the horizon check needs level 15.
    let cfg = ParamConfig { max_elements: 4_000_000, ..ParamConfig::default() };
    let run = run_exclusion(1e-3, sc.paramex_depth, &cfg).map_err(err)?;
    let n = sc.horizon_target;
    ch.add("reached depth", run.reached_depth as f64, format!("{}", sc.paramex_depth), run.reached_depth == sc.paramex_depth);
    let clean = run.first_exclusion_level.map_or(run.reached_depth >= n, |l| l > n);
    let first = run.first_exclusion_level.map_or(f64::NAN, |l| l as f64);
    ch.add(format!("first exclusion level (none for k <= {n})"), first, format!("> {n}"), clean);
    let total = run.measure();
    let drift = run.levels.iter().map(|l| (l.retained + l.excluded + l.unresolved - total).abs()).fold(0.0, f64::max);
    ch.add("measure conservation", drift, "< 1e-12", drift < 1e-12);
    let replay_ok = run
        .elements
        .iter()
        .all(|e| replay_essential_depth(&e.events.to_vec(), run.reached_depth) == e.essential_depth);
    ch.add("event log replay", run.elements.len() as f64, "identical depth for every element", replay_ok);
    Ok(())
}

fn c11(_: &Scale, _: u64, ch: &mut Checks) -> Result<(), String> {
    let mut enum_ok = true;
    for k in 1..=20 {
        for s in 1..=k {
            enum_ok &= Some(enumerate_compositions(k, s)) == binomial(k - 1, s - 1);
        }
    }
    ch.flag("enumeration = C(k-1, s-1), k <= 20", enum_ok);
    let (mut bound_ok, mut cases) = (true, 0);
    for k in 1..=48u64 {
        for s in 1..=k {
            let n = count_compositions(k, s).map_err(err)?;
            bound_ok &= binomial(k + s, s).is_some_and(|b| n <= b);
            cases += 1;
        }
    }
    ch.add("N(k, s) <= C(k+s, s), k <= 48", cases as f64, "all cases", bound_ok);
    let (mut eta_ok, mut met) = (true, 0);
    for eta_hat in [0.1, 0.25, 0.5, 1.0] {
        for k in 1..=48u64 {
            for s in 1..=k {
                let b = check_bound(k, s, eta_hat).map_err(err)?;
                if b.precondition_met {
                    met += 1;
                    eta_ok &= b.holds;
                }
            }
        }
    }
    ch.add("eta-hat bound where s <= eta k", met as f64, "holds in every case", eta_ok && met > 0);
    Ok(())
}

/// A deterministic subset of the computations, serialized.
pub fn determinism_probe(seed: u64) -> Result<String, String> {
    let circle = MapSpec::circle(2);
    let lsv = MapSpec::lsv(0.5).map_err(err)?;
    let p = pullback_measure(&MapSpec::gauss(1000), 20, (0.0, 1.0, 64), 50_000, seed).map_err(err)?;
    let g = GammaConfig {
        sample_size: 2000,
        n_max: 50,
        n_cap: 500,
        lambda: 0.1,
        delta: 0.1,
        eps_rec: 0.1,
        seed: seed ^ 1,
    };
    let gt = gamma_tail(&lsv, &g).map_err(err)?;
    let x = Observable::identity();
    let cs = correlation_function(&circle, &x, &x, 8, 100_000, Method::SingleOrbit { orbits: 4, burn_in: 100 }, seed ^ 2)
        .map_err(err)?;
    let na = no_acip_diagnostic(&lsv, 0.1, 20_000, 8, seed ^ 3).map_err(err)?;
    let run = run_exclusion(1e-3, 9, &ParamConfig::default()).map_err(err)?;
    let ep = escape_partition(2.0, (-0.9, -0.9 + BcConfig::default().delta_hat()), &BcConfig::default()).map_err(err)?;
    let v = serde_json::json!({
        "pullback": p, "gamma": gt, "correlation": cs, "no_acip": na,
        "paramex": run, "escape": ep,
    });
    serde_json::to_string(&v).map_err(err)
}

fn c12(_: &Scale, seed: u64, ch: &mut Checks) -> Result<(), String> {
    let mut outputs = Vec::new();
    for threads in [1, 4] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(err)?;
        outputs.push(pool.install(|| determinism_probe(seed))?);
    }
    ch.add("probe bytes", outputs[0].len() as f64, "identical under 1 and 4 threads", outputs[0] == outputs[1]);
    Ok(())
}

pub fn check_passed(report: &VerifyReport) -> Result<(), HarnessError> {
    if report.passed {
        return Ok(());
    }
    let failed: Vec<String> = report.criteria.iter().filter(|c| !c.passed).map(|c| c.id.to_string()).collect();
    Err(HarnessError::Verification(format!("criteria {} failed", failed.join(", "))))
}
