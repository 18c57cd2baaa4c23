//! One function per subcommand: run the module computation from the configuration and write
//! its outputs.

use ergolab::bc_induction::{build_induced_markov, check_bc_conditions, escape_partition, escape_tail};
use ergolab::combinatorics::{binomial, check_bound, enumerate_compositions};
use ergolab::correlate::{correlation_function, fit_decay, Method, Observable};
use ergolab::folklore::pullback_measure;
use ergolab::orbits::{gamma_tail, lyapunov_exponent, GammaConfig};
use ergolab::paramex::{composition_tail_check, run_exclusion, ExclusionRun};
use ergolab::symbolic::{distortion_report, max_diameter, refine, tau, RefineOptions};
use ergolab::tower::{
    check_integrability, first_return, predict_decay, return_tail, tail_csv, InducedMarkovMap, InverseMethod,
    ObservableClass,
};
use serde_json::json;

use crate::config::{ExperimentConfig, MethodChoice, ObservableChoice};
use crate::output::{csv, num, Output};
use crate::{numerical, HarnessError};

pub fn density(cfg: &ExperimentConfig, out: &mut Output) -> Result<(), HarnessError> {
    let map = cfg.map_spec()?;
    let d = &cfg.density;
    let (lo, hi) = d.range.unwrap_or(map.domain());
    let p = pullback_measure(&map, d.iterations, (lo, hi, d.bins), d.samples, cfg.seed).map_err(numerical)?;
    out.text("density.csv", &p.density.to_csv())?;
    out.json(
        "density.json",
        &json!({
            "family": map.family(),
            "iterations": d.iterations,
            "samples": d.samples,
            "max_density": p.max_density,
            "lost_orbits": p.lost_orbits,
        }),
    )
}

pub fn lyapunov(cfg: &ExperimentConfig, out: &mut Output) -> Result<(), HarnessError> {
    let map = cfg.map_spec()?;
    let l = &cfg.lyapunov;
    let e = lyapunov_exponent(&map, l.x0, l.iterations).map_err(numerical)?;
    let row = vec![map.family().name().to_string(), num(l.x0), e.steps.to_string(), num(e.value), num(e.stderr)];
    out.text("lyapunov.csv", &csv(&["family", "x0", "steps", "value", "stderr"], [row]))
}

pub fn gamma(cfg: &ExperimentConfig, out: &mut Output) -> Result<(), HarnessError> {
    let map = cfg.map_spec()?;
    let g = &cfg.gamma;
    let gc = GammaConfig {
        sample_size: g.sample_size,
        n_max: g.n_max,
        n_cap: g.n_cap,
        lambda: g.lambda,
        delta: g.delta,
        eps_rec: g.eps_rec,
        seed: cfg.seed,
    };
    let t = gamma_tail(&map, &gc).map_err(numerical)?;
    let rows = t.estimate.iter().zip(&t.stderr).enumerate().map(|(i, (e, s))| vec![(i + 1).to_string(), num(*e), num(*s)]);
    out.text("gamma_tail.csv", &csv(&["n", "estimate", "stderr"], rows))?;
    out.json("gamma_tail.json", &json!({ "sample_size": t.sample_size, "n_max": t.n_max, "beyond_horizon": t.beyond_horizon }))
}

pub fn cylinders(cfg: &ExperimentConfig, out: &mut Output) -> Result<(), HarnessError> {
    let map = cfg.map_spec()?;
    let c = &cfg.cylinders;
    let opts = RefineOptions { max_truncation_loss: c.max_truncation_loss, ..Default::default() };
    let tree = refine(&map, c.depth, opts).map_err(numerical)?;
    let mut rows = Vec::new();
    for n in 1..=tree.depth() {
        let cyl = tree.cylinders(n);
        rows.push(vec![n.to_string(), cyl.len().to_string(), num(max_diameter(cyl).map_err(numerical)?)]);
    }
    out.text("cylinders.csv", &csv(&["depth", "count", "max_diameter"], rows))?;
    let report = distortion_report(&map, c.distortion_depth, c.distortion_samples, c.mesh, cfg.seed).map_err(numerical)?;
    let rows = report
        .max_by_depth
        .iter()
        .zip(&report.increments)
        .enumerate()
        .map(|(i, (m, inc))| vec![(i + 1).to_string(), num(*m), num(*inc)]);
    out.text("distortion.csv", &csv(&["depth", "max_distortion", "increment"], rows))?;
    let (lo, hi) = map.domain();
    let delta_max = max_diameter(tree.cylinders(1)).map_err(numerical)?;
    out.json(
        "cylinders.json",
        &json!({
            "distortion_constant": report.constant(),
            "delta_max": delta_max,
            "tau": tau(hi - lo, delta_max, report.constant()),
        }),
    )
}

fn load_tower(cfg: &ExperimentConfig) -> Result<InducedMarkovMap, HarnessError> {
    let t = &cfg.tower;
    if let Some(path) = &t.input {
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        return serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("tower.input: {e}")));
    }
    if !t.pieces.is_empty() {
        return InducedMarkovMap::synthetic(t.base, &t.pieces).map_err(numerical);
    }
    let map = cfg.map_spec()?;
    first_return(&map, &t.base_labels, t.r_max, t.max_branches, InverseMethod::ClosedForm).map_err(numerical)
}

pub fn tower(cfg: &ExperimentConfig, out: &mut Output) -> Result<(), HarnessError> {
    let tower = load_tower(cfg)?;
    let tail = return_tail(&tower, cfg.tower.n_max);
    out.text("tail.csv", &tail_csv(&tail))?;
    let prediction = predict_decay(&tail, ObservableClass::Holder, None);
    out.json(
        "tower.json",
        &json!({
            "branches": tower.branches.len(),
            "gcd": tail.gcd,
            "deficit": tail.deficit,
            "integral": tail.integral,
            "integrability": check_integrability(&tail),
            "prediction": prediction.as_ref().ok(),
            "prediction_error": prediction.as_ref().err().map(|e| e.to_string()),
        }),
    )
}

pub fn bc_build(cfg: &ExperimentConfig, out: &mut Output) -> Result<(), HarnessError> {
    let b = &cfg.bc;
    let bc = &b.config;
    let cond = check_bc_conditions(b.a, b.check_n, bc.hyperbolicity_c, bc).map_err(numerical)?;
    out.json("bc_conditions.json", &cond)?;
    let j = b.interval.unwrap_or((1.0, 1.0 + bc.delta_hat()));
    let ep = escape_partition(b.a, j, bc).map_err(numerical)?;
    let et = escape_tail(&ep.elements);
    let rows = et.masses.iter().enumerate().map(|(n, m)| vec![n.to_string(), num(*m)]);
    out.text("escape_tail.csv", &csv(&["n", "mass"], rows))?;
    out.json(
        "escape_partition.json",
        &json!({
            "interval": ep.interval,
            "elements": ep.elements.len(),
            "residue_mass": ep.residue_mass,
            "rate": et.rate,
            "r_squared": et.r_squared,
            "warnings": ep.warnings,
        }),
    )?;
    if b.build_tower {
        let t = build_induced_markov(b.a, bc).map_err(numerical)?;
        out.text("return_tail.csv", &tail_csv(&t.tail))?;
        out.json(
            "bc_tower.json",
            &json!({
                "branches": t.tower.branches.len(),
                "gcd": t.gcd,
                "unresolved": t.unresolved,
                "residue": t.residue,
                "unlisted": t.unlisted,
                "class": t.class,
                "exponential_fit": t.exponential_fit,
                "xi": t.xi,
                "warnings": t.warnings,
            }),
        )?;
    }
    Ok(())
}

pub fn correlate(cfg: &ExperimentConfig, out: &mut Output) -> Result<(), HarnessError> {
    let map = cfg.map_spec()?;
    let c = &cfg.correlate;
    let obs = match c.observable {
        ObservableChoice::Identity => Observable::identity(),
        ObservableChoice::Cosine => Observable::cosine(c.frequency),
    };
    let density;
    let method = match c.method {
        MethodChoice::SingleOrbit => Method::SingleOrbit { orbits: c.orbits, burn_in: c.burn_in },
        MethodChoice::Ensemble => {
            let d = &cfg.density;
            let (lo, hi) = d.range.unwrap_or(map.domain());
            density = pullback_measure(&map, d.iterations, (lo, hi, d.bins), d.samples, cfg.seed ^ 1)
                .map_err(numerical)?
                .density;
            Method::Ensemble { density: Some(&density) }
        }
    };
    let s = correlation_function(&map, &obs, &obs, c.n_max, c.samples, method, cfg.seed).map_err(numerical)?;
    out.text("correlation.csv", &s.to_csv())?;
    let fit = fit_decay(&s);
    out.json(
        "correlation_fit.json",
        &json!({
            "observable": obs.name,
            "method": s.method,
            "samples": s.samples,
            "fit": fit.as_ref().ok(),
            "fit_error": fit.as_ref().err().map(|e| e.to_string()),
        }),
    )
}

pub fn levels_csv(run: &ExclusionRun) -> String {
    let rows = run.levels.iter().map(|l| {
        vec![
            l.level.to_string(),
            num(l.retained),
            num(l.excluded),
            num(l.unresolved),
            num(l.newly_excluded),
            l.active_elements.to_string(),
            l.excluded_elements.to_string(),
            l.chops.to_string(),
            l.max_depth.to_string(),
            l.sr_violations.to_string(),
            l.eg_violations.to_string(),
            l.bd_violations.to_string(),
            l.precision_exhausted.to_string(),
        ]
    });
    csv(
        &[
            "level",
            "retained",
            "excluded",
            "unresolved",
            "newly_excluded",
            "active_elements",
            "excluded_elements",
            "chops",
            "max_depth",
            "sr_violations",
            "eg_violations",
            "bd_violations",
            "precision_exhausted",
        ],
        rows,
    )
}

pub fn paramex(cfg: &ExperimentConfig, out: &mut Output) -> Result<(), HarnessError> {
    let p = &cfg.paramex;
    let run = run_exclusion(p.config.epsilon, p.depth, &p.config).map_err(numerical)?;
    out.text("levels.csv", &levels_csv(&run))?;
    let tail = composition_tail_check(&run, 1.0);
    out.json(
        "paramex_summary.json",
        &json!({
            "omega": run.omega,
            "requested_depth": run.requested_depth,
            "reached_depth": run.reached_depth,
            "horizon": run.horizon,
            "first_exclusion_level": run.first_exclusion_level,
            "status": run.status,
            "measure": run.measure(),
            "retained_fraction": run.retained_fraction(),
            "elements": run.elements.len(),
            "exclusion_fit": run.exclusion_fit,
            "gamma0_fit": run.gamma0_fit,
            "q_masses": run.q_masses,
            "q_sequences": run.q_sequences,
            "composition_tail": tail.as_ref().ok(),
            "composition_tail_error": tail.as_ref().err().map(|e| e.to_string()),
        }),
    )?;
    if p.dump_events {
        out.json("paramex_elements.json", &run.elements)?;
    }
    Ok(())
}

pub fn combinatorics(cfg: &ExperimentConfig, out: &mut Output) -> Result<(), HarnessError> {
    let c = &cfg.combinatorics;
    let mut rows = Vec::new();
    for k in 1..=c.k_max {
        for s in 1..=k {
            let b = check_bound(k, s, c.eta_hat).map_err(numerical)?;
            let enumerated = if k <= 20 { enumerate_compositions(k, s).to_string() } else { String::new() };
            let closed = binomial(k - 1, s - 1).map_or(String::new(), |v| v.to_string());
            rows.push(vec![
                k.to_string(),
                s.to_string(),
                b.count.to_string(),
                enumerated,
                closed,
                b.binom_bound.to_string(),
                num(b.exp_bound),
                b.precondition_met.to_string(),
                b.holds.to_string(),
            ]);
        }
    }
    let header =
        ["k", "s", "count", "enumerated", "binomial_k1_s1", "binomial_ks_s", "exp_bound", "precondition", "holds"];
    out.text("combinatorics.csv", &csv(&header, rows))
}

