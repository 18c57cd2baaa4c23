//! Correlation functions Cₙ(φ, ψ) = |∫ψ·(φ∘fⁿ) dμ − ∫ψ dμ ∫φ dμ|, decay fits, and the
//! comparison of fitted decay with the class predicted from a return tail.

use crate::folklore::DensityHistogram;
use crate::maps::{Dither, MapError, MapSpec};
use crate::orbits::Orbit;
use crate::rng;
use crate::stats::{linear_fit, LinearFit, Moments};
use crate::tower::{DecayClass, DecayKind};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub const DEFAULT_BURN_IN: u64 = 10_000;
pub const BATCHES: usize = 32;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum CorrelateError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("the ensemble method needs an invariant density estimate")]
    NoAcipAvailable,
    #[error("only {usable} values exceed three standard errors; need {needed}")]
    InsufficientSignal { usable: usize, needed: usize },
    #[error("best regression has R² {r_squared:.4} < 0.9")]
    Ambiguous { r_squared: f64 },
    #[error("invalid arguments: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Regularity {
    Holder { exponent: f64, constant: f64 },
    /// |ψ(x) − ψ(y)| ≤ C |log|x − y||^{−γ}.
    LogModulus { gamma: f64, constant: f64 },
    Indicator { lo: f64, hi: f64 },
    BoundedVariation,
}

/// A bounded observable with its regularity class.
#[derive(Clone)]
pub struct Observable {
    pub name: String,
    pub regularity: Regularity,
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Observable").field("name", &self.name).field("regularity", &self.regularity).finish()
    }
}

impl Observable {
    pub fn new(
        name: impl Into<String>,
        regularity: Regularity,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Observable { name: name.into(), regularity, eval: Arc::new(f) }
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    /// cos(2πkx).
    pub fn cosine(k: u32) -> Self {
        let c = 2.0 * std::f64::consts::PI * k as f64;
        Self::new(format!("cos(2pi*{k}x)"), Regularity::Holder { exponent: 1.0, constant: c }, move |x| (c * x).cos())
    }

    /// x ↦ x.
    pub fn identity() -> Self {
        Self::new("x", Regularity::Holder { exponent: 1.0, constant: 1.0 }, |x| x)
    }

    pub fn indicator(lo: f64, hi: f64) -> Self {
        Self::new(format!("1[{lo},{hi}]"), Regularity::Indicator { lo, hi }, move |x| {
            if x >= lo && x <= hi { 1.0 } else { 0.0 }
        })
    }

    /// x ↦ |log|x − c||^{−γ}, continuous with a logarithmic modulus but not Hölder at c.
    pub fn log_cusp(c: f64, gamma: f64) -> Self {
        Self::new(format!("|log|x-{c}||^-{gamma}"), Regularity::LogModulus { gamma, constant: 1.0 }, move |x| {
            let d = (x - c).abs();
            if d == 0.0 { 0.0 } else { (-d.ln()).abs().max(1.0).powf(-gamma) }
        })
    }

    /// ψ∘f (raw evaluation).
    pub fn compose(&self, map: &MapSpec) -> Self {
        let inner = self.clone();
        let m = map.clone();
        Self::new(format!("{}∘f", self.name), self.regularity, move |x| inner.eval(m.eval(x).unwrap_or(x)))
    }
}

/// Largest violation of the log-modulus inequality over pairs from a uniform mesh
/// (≤ 0 when the inequality holds everywhere on the mesh).
pub fn log_modulus_violation(obs: &Observable, domain: (f64, f64), mesh: usize) -> Option<f64> {
    let Regularity::LogModulus { gamma, constant } = obs.regularity else { return None };
    let pts: Vec<f64> = (0..=mesh).map(|i| domain.0 + (domain.1 - domain.0) * i as f64 / mesh as f64).collect();
    let mut worst = f64::NEG_INFINITY;
    for (i, &x) in pts.iter().enumerate() {
        for &y in &pts[i + 1..] {
            let bound = constant * (-(x - y).abs().ln()).abs().max(1.0).powf(-gamma);
            worst = worst.max((obs.eval(x) - obs.eval(y)).abs() - bound);
        }
    }
    Some(worst)
}

#[derive(Clone, Copy, Debug)]
pub enum Method<'a> {
    /// Birkhoff averages along `orbits` independent orbits after a burn-in.
    SingleOrbit { orbits: usize, burn_in: u64 },
    /// Monte Carlo over initial points drawn from the density.
    Ensemble { density: Option<&'a DensityHistogram> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSeries {
    /// |Cₙ| for n = 0..=n_max.
    pub values: Vec<f64>,
    /// Cₙ before the absolute value.
    pub signed: Vec<f64>,
    pub stderr: Vec<f64>,
    pub method: String,
    pub samples: usize,
}

impl CorrelationSeries {
    /// A series given directly (stderr 0).
    pub fn synthetic(values: Vec<f64>) -> Self {
        let n = values.len();
        CorrelationSeries {
            signed: values.clone(),
            values: values.iter().map(|v| v.abs()).collect(),
            stderr: vec![0.0; n],
            method: "synthetic".into(),
            samples: 0,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,Cn,stderr\n");
        for (n, (c, e)) in self.values.iter().zip(&self.stderr).enumerate() {
            s.push_str(&format!("{n},{c:.16e},{e:.16e}\n"));
        }
        s
    }
}

/// Per-batch sums; a batch estimate is mean(ψ·φₙ) − mean(ψ)·mean(φ).
#[derive(Clone)]
struct BatchSums {
    lag: Vec<f64>,
    psi: f64,
    phi: f64,
    count: f64,
}

impl BatchSums {
    fn new(n_max: usize) -> Self {
        BatchSums { lag: vec![0.0; n_max + 1], psi: 0.0, phi: 0.0, count: 0.0 }
    }

    fn estimate(&self) -> Vec<f64> {
        let (mp, mf) = (self.psi / self.count, self.phi / self.count);
        self.lag.iter().map(|s| s / self.count - mp * mf).collect()
    }
}

fn combine(batches: &[BatchSums], n_max: usize, method: &str, samples: usize) -> CorrelationSeries {
    let estimates: Vec<Vec<f64>> = batches.iter().filter(|b| b.count > 0.0).map(BatchSums::estimate).collect();
    let mut signed = Vec::with_capacity(n_max + 1);
    let mut stderr = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let mut m = Moments::default();
        estimates.iter().for_each(|e| m.push(e[n]));
        signed.push(m.mean());
        stderr.push(m.stderr());
    }
    CorrelationSeries {
        values: signed.iter().map(|v| v.abs()).collect(),
        signed,
        stderr,
        method: method.into(),
        samples,
    }
}

/// Estimates Cₙ(φ, ψ) for n = 0..=n_max from `samples` lag products.
pub fn correlation_function(
    map: &MapSpec,
    phi: &Observable,
    psi: &Observable,
    n_max: usize,
    samples: usize,
    method: Method<'_>,
    seed: u64,
) -> Result<CorrelationSeries, CorrelateError> {
    if samples < BATCHES {
        return Err(CorrelateError::Invalid(format!("need at least {BATCHES} samples")));
    }
    let (lo, hi) = map.domain();
    match method {
        Method::SingleOrbit { orbits, burn_in } => {
            let orbits = orbits.max(1);
            let per_orbit = samples.div_ceil(orbits);
            let batches_per_orbit = BATCHES.div_ceil(orbits);
            let batch_len = per_orbit.div_ceil(batches_per_orbit);
            let results: Vec<Result<Vec<BatchSums>, CorrelateError>> = rng::chunked_with(orbits, 1, |range| {
                let o = range.start as u64;
                let mut r = rng::stream(seed, o);
                let x0 = lo + (hi - lo) * r.gen::<f64>();
                let mut orbit = Orbit::with_stream(map, x0, seed ^ 0x51_7cc1_b727_220a, o)?;
                for _ in 0..burn_in {
                    orbit.advance();
                }
                // Ring buffer of the last n_max + 1 values of ψ.
                let mut psi_hist = vec![0.0; n_max + 1];
                for k in 0..n_max {
                    psi_hist[k] = psi.eval(orbit.current());
                    orbit.advance();
                }
                let mut out = Vec::with_capacity(batches_per_orbit);
                let mut b = BatchSums::new(n_max);
                let mut pos = n_max;
                for i in 0..per_orbit {
                    let x = orbit.current();
                    psi_hist[pos] = psi.eval(x);
                    let fx = phi.eval(x);
                    for n in 0..=n_max {
                        b.lag[n] += psi_hist[(pos + n_max + 1 - n) % (n_max + 1)] * fx;
                    }
                    b.psi += psi_hist[pos];
                    b.phi += fx;
                    b.count += 1.0;
                    pos = (pos + 1) % (n_max + 1);
                    orbit.advance();
                    if (i + 1) % batch_len == 0 {
                        out.push(std::mem::replace(&mut b, BatchSums::new(n_max)));
                    }
                }
                if b.count > 0.0 {
                    out.push(b);
                }
                Ok(out)
            });
            let mut all = Vec::new();
            for r in results {
                all.extend(r?);
            }
            Ok(combine(&all, n_max, "single_orbit", samples))
        }
        Method::Ensemble { density } => {
            let density = density.ok_or(CorrelateError::NoAcipAvailable)?;
            let cumulative = density.cumulative();
            let scale = map.dither_scale();
            let batch_len = samples.div_ceil(BATCHES);
            let batches = rng::chunked_with(samples, batch_len, |range| {
                let mut b = BatchSums::new(n_max);
                for i in range {
                    let mut r = rng::stream(seed, i as u64);
                    let mut x = density.sample(&cumulative, &mut r);
                    let mut dither = Dither::new(seed ^ 0x2545_f491_4f6c_dd1d, i as u64, scale);
                    let mut flagged = 0;
                    let p0 = psi.eval(x);
                    b.psi += p0;
                    b.phi += phi.eval(x);
                    b.count += 1.0;
                    for n in 0..=n_max {
                        b.lag[n] += p0 * phi.eval(x);
                        if n < n_max {
                            x = map.step(x, &mut dither, &mut flagged);
                        }
                    }
                }
                b
            });
            Ok(combine(&batches, n_max, "ensemble", samples))
        }
    }
}

pub const MIN_USABLE: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct DecayFits {
    pub exponential: Option<LinearFit>,
    pub polynomial: Option<LinearFit>,
    pub logarithmic: Option<LinearFit>,
    pub usable: Vec<usize>,
}

/// Regressions over the lags n ≥ 1 whose value exceeds three standard errors.
pub fn decay_fits(series: &CorrelationSeries) -> DecayFits {
    let usable: Vec<usize> = (1..series.values.len())
        .filter(|&n| series.values[n] > 0.0 && series.values[n] > 3.0 * series.stderr[n])
        .collect();
    let ys: Vec<f64> = usable.iter().map(|&n| series.values[n].ln()).collect();
    let xs_exp: Vec<f64> = usable.iter().map(|&n| n as f64).collect();
    let xs_poly: Vec<f64> = usable.iter().map(|&n| (n as f64).ln()).collect();
    // (log n)^{−γ} needs log log n, defined from n = 2 on.
    let (xs_log, ys_log): (Vec<f64>, Vec<f64>) =
        usable.iter().zip(&ys).filter(|(&n, _)| n >= 2).map(|(&n, &y)| ((n as f64).ln().ln(), y)).unzip();
    DecayFits {
        exponential: linear_fit(&xs_exp, &ys),
        polynomial: linear_fit(&xs_poly, &ys),
        logarithmic: linear_fit(&xs_log, &ys_log),
        usable,
    }
}

/// Best of the exponential, polynomial and logarithmic regressions.
pub fn fit_decay(series: &CorrelationSeries) -> Result<DecayClass, CorrelateError> {
    let fits = decay_fits(series);
    if fits.usable.len() < MIN_USABLE {
        return Err(CorrelateError::InsufficientSignal { usable: fits.usable.len(), needed: MIN_USABLE });
    }
    let candidates = [
        fits.exponential.map(|f| (f, 0)),
        fits.polynomial.map(|f| (f, 1)),
        fits.logarithmic.map(|f| (f, 2)),
    ];
    let (best, which) = candidates
        .into_iter()
        .flatten()
        .fold(None::<(LinearFit, u8)>, |acc, c| match acc {
            Some(a) if a.0.r_squared >= c.0.r_squared => Some(a),
            _ => Some(c),
        })
        .ok_or(CorrelateError::InsufficientSignal { usable: 0, needed: MIN_USABLE })?;
    if best.r_squared < 0.9 {
        return Err(CorrelateError::Ambiguous { r_squared: best.r_squared });
    }
    let rate = -best.slope;
    let (kind, provenance) = match which {
        0 => (DecayKind::Exponential { rate }, "exponential fit"),
        1 => (DecayKind::Polynomial { exponent: rate }, "polynomial fit"),
        _ => (DecayKind::SlowlyVarying { rho: format!("(log n)^-{rate:.4}") }, "logarithmic fit"),
    };
    Ok(DecayClass { kind, provenance: provenance.into(), uncertainty: best.slope_stderr, r_squared: best.r_squared })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "snake_case")]
pub enum Verdict {
    Consistent(String),
    Inconsistent(String),
}

impl Verdict {
    pub fn is_consistent(&self) -> bool {
        matches!(self, Verdict::Consistent(_))
    }
}

/// Compares a fitted decay with the predicted one. Predictions are upper bounds,
/// so decay faster than predicted is consistent.
pub fn cross_check(predicted: &DecayClass, fitted: &DecayClass) -> Verdict {
    use DecayKind::*;
    let ok = |s: &str| Verdict::Consistent(s.to_string());
    let bad = |s: &str| Verdict::Inconsistent(s.to_string());
    match (&predicted.kind, &fitted.kind) {
        (Exponential { .. }, Exponential { .. }) => ok("both exponential"),
        (Exponential { .. }, _) => bad("fitted decay is slower than exponential"),
        (Polynomial { .. }, Exponential { .. }) => ok("exponential decay is faster than the polynomial bound"),
        (Polynomial { exponent: p }, Polynomial { exponent: q }) => {
            let sigma = (predicted.uncertainty.powi(2) + fitted.uncertainty.powi(2)).sqrt();
            if *q >= p - 2.0 * sigma {
                ok("polynomial exponent at least the predicted one within two combined errors")
            } else {
                bad("polynomial exponent below the predicted one")
            }
        }
        (Polynomial { .. }, _) => bad("fitted decay is slower than polynomial"),
        (SlowlyVarying { .. }, _) => ok("any fitted decay meets a slowly varying bound"),
        (LogModulus { .. }, Exponential { .. } | Polynomial { .. }) => ok("polynomial or faster decay"),
        (LogModulus { .. }, _) => bad("fitted decay is slower than polynomial"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class(kind: DecayKind) -> DecayClass {
        DecayClass { kind, provenance: String::new(), uncertainty: 0.05, r_squared: 1.0 }
    }

    #[test]
    fn synthetic_rates() {
        let e = CorrelationSeries::synthetic((0..=40).map(|n| 5.0 * (-0.3 * n as f64).exp()).collect());
        match fit_decay(&e).unwrap().kind {
            DecayKind::Exponential { rate } => assert!((rate - 0.3).abs() < 0.02),
            k => panic!("{k:?}"),
        }
        let p = CorrelationSeries::synthetic((0..=200).map(|n| 2.0 * (n.max(1) as f64).powf(-1.5)).collect());
        match fit_decay(&p).unwrap().kind {
            DecayKind::Polynomial { exponent } => assert!((exponent - 1.5).abs() < 0.05),
            k => panic!("{k:?}"),
        }
    }

    #[test]
    fn too_little_signal() {
        let s = CorrelationSeries::synthetic(vec![1.0, 0.5, 0.25, 0.0, 0.0]);
        assert!(matches!(fit_decay(&s), Err(CorrelateError::InsufficientSignal { .. })));
    }

    #[test]
    fn upper_bound_semantics() {
        let exp = class(DecayKind::Exponential { rate: 0.5 });
        assert!(cross_check(&exp, &exp).is_consistent());
        assert!(cross_check(&class(DecayKind::Polynomial { exponent: 2.0 }), &exp).is_consistent());
        assert!(!cross_check(&exp, &class(DecayKind::Polynomial { exponent: 1.0 })).is_consistent());
        assert!(!cross_check(
            &class(DecayKind::Polynomial { exponent: 2.0 }),
            &class(DecayKind::Polynomial { exponent: 1.0 })
        )
        .is_consistent());
    }

    #[test]
    fn ensemble_needs_a_density() {
        let r = correlation_function(
            &MapSpec::circle(2),
            &Observable::identity(),
            &Observable::identity(),
            3,
            1000,
            Method::Ensemble { density: None },
            1,
        );
        assert!(matches!(r, Err(CorrelateError::NoAcipAvailable)));
    }

    #[test]
    fn log_cusp_has_a_log_modulus() {
        let o = Observable::log_cusp(0.5, 1.0);
        // Doubling the constant absorbs the mesh discretization.
        let o = Observable { regularity: Regularity::LogModulus { gamma: 1.0, constant: 2.0 }, ..o };
        assert!(log_modulus_violation(&o, (0.0, 1.0), 200).unwrap() <= 0.0);
    }
}
