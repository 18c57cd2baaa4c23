//! Birkhoff averages, Lyapunov exponents, expansion and recurrence times, and
//! Monte Carlo estimates of the tail |Γₙ| = |{max(𝓔, ℛ) > n}|.

use crate::maps::{Dither, MapError, MapSpec};
use crate::rng;
use crate::stats::{batch_means_stderr, Moments};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Seed of the dither stream used by single-orbit statistics; the stream index
/// is the bit pattern of the initial point, so orbits are reproducible from x0.
pub const ORBIT_DITHER_SEED: u64 = 0x5eed_0f0b_17a1_u64;

const LYAPUNOV_BATCHES: usize = 32;

/// A dithered forward orbit.
pub struct Orbit<'a> {
    map: &'a MapSpec,
    x: f64,
    dither: Dither,
    flagged: u64,
}

impl<'a> Orbit<'a> {
    pub fn new(map: &'a MapSpec, x0: f64) -> Result<Self, MapError> {
        Self::with_stream(map, x0, ORBIT_DITHER_SEED, x0.to_bits())
    }

    pub fn with_stream(map: &'a MapSpec, x0: f64, seed: u64, index: u64) -> Result<Self, MapError> {
        if map.is_skew() {
            return Err(MapError::NotOneDimensional);
        }
        let (lo, hi) = map.domain();
        if !(x0 >= lo - crate::maps::CLAMP_TOLERANCE && x0 <= hi + crate::maps::CLAMP_TOLERANCE) {
            return Err(MapError::OutOfDomain { x: x0, lo, hi });
        }
        Ok(Orbit { map, x: x0.clamp(lo, hi), dither: Dither::new(seed, index, map.dither_scale()), flagged: 0 })
    }

    pub fn current(&self) -> f64 {
        self.x
    }

    /// Advances one step and returns the new point.
    pub fn advance(&mut self) -> f64 {
        self.x = self.map.step(self.x, &mut self.dither, &mut self.flagged);
        self.x
    }

    /// Steps that landed in a truncated or otherwise flagged region.
    pub fn flagged(&self) -> u64 {
        self.flagged
    }
}

/// Running sums along one orbit: an observable, log|Df| and −log dist_δ(·, 𝒞).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BirkhoffAccumulator {
    pub lambda: f64,
    pub delta: f64,
    pub eps_rec: f64,
    pub sum_phi: f64,
    pub sum_log_df: f64,
    pub sum_neg_log_dist: f64,
    pub steps: u64,
}

impl BirkhoffAccumulator {
    pub fn new(lambda: f64, delta: f64, eps_rec: f64) -> Self {
        BirkhoffAccumulator { lambda, delta, eps_rec, sum_phi: 0.0, sum_log_df: 0.0, sum_neg_log_dist: 0.0, steps: 0 }
    }

    pub fn push(&mut self, map: &MapSpec, x: f64, phi: f64) {
        self.sum_phi += phi;
        self.sum_log_df += map.log_expansion(x).unwrap_or(f64::NEG_INFINITY);
        self.sum_neg_log_dist += -dist_delta(map.critical_set().distance(x), self.delta).ln();
        self.steps += 1;
    }

    pub fn mean_phi(&self) -> f64 {
        self.sum_phi / self.steps as f64
    }

    pub fn mean_log_df(&self) -> f64 {
        self.sum_log_df / self.steps as f64
    }

    pub fn mean_neg_log_dist(&self) -> f64 {
        self.sum_neg_log_dist / self.steps as f64
    }

    /// Whether the current averages meet the expansion and recurrence budgets.
    pub fn meets(&self) -> (bool, bool) {
        (self.mean_log_df() >= self.lambda / 2.0, self.mean_neg_log_dist() <= 2.0 * self.eps_rec)
    }
}

/// Truncated distance: `d` if `d ≤ δ`, else 1.
pub fn dist_delta(d: f64, delta: f64) -> f64 {
    if d <= delta { d } else { 1.0 }
}

/// (1/n) Σ_{i=1..n} φ(fⁱ(x0)).
pub fn birkhoff_average(map: &MapSpec, phi: &dyn Fn(f64) -> f64, x0: f64, n: usize) -> Result<f64, MapError> {
    let mut orbit = Orbit::new(map, x0)?;
    let mut sum = 0.0;
    for _ in 0..n {
        sum += phi(orbit.advance());
    }
    Ok(sum / n as f64)
}

/// Birkhoff averages of several observables along the same orbit.
pub fn birkhoff_averages(
    map: &MapSpec,
    phis: &[&dyn Fn(f64) -> f64],
    x0: f64,
    n: usize,
) -> Result<Vec<f64>, MapError> {
    let mut orbit = Orbit::new(map, x0)?;
    let mut sums = vec![0.0; phis.len()];
    for _ in 0..n {
        let x = orbit.advance();
        for (s, phi) in sums.iter_mut().zip(phis) {
            *s += phi(x);
        }
    }
    Ok(sums.into_iter().map(|s| s / n as f64).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub value: f64,
    /// Batch-means standard error over 32 consecutive blocks.
    pub stderr: f64,
    pub steps: usize,
    /// Iterates that entered a truncated region (Gauss tail).
    pub flagged: u64,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum OrbitError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("orbit hit a critical point at index {index}")]
    AtCriticalPoint { index: usize },
}

/// (1/n) Σ_{i=0..n−1} log|Df(fⁱ(x0))|.
pub fn lyapunov_exponent(map: &MapSpec, x0: f64, n: usize) -> Result<LyapunovEstimate, OrbitError> {
    let mut x0 = x0;
    if map.deriv(x0).is_err() {
        x0 = x0.next_up();
    }
    let mut orbit = Orbit::new(map, x0)?;
    let batch = (n / LYAPUNOV_BATCHES).max(1);
    let mut total = crate::stats::CompensatedSum::default();
    let mut batch_sum = 0.0;
    let mut batches = Vec::with_capacity(LYAPUNOV_BATCHES + 1);
    let mut x = orbit.current();
    for i in 0..n {
        let term = match map.log_expansion(x) {
            Ok(v) => v,
            Err(MapError::AtCriticalPoint { .. }) => return Err(OrbitError::AtCriticalPoint { index: i }),
            Err(e) => return Err(e.into()),
        };
        total.add(term);
        batch_sum += term;
        if (i + 1) % batch == 0 {
            batches.push(batch_sum / batch as f64);
            batch_sum = 0.0;
        }
        x = orbit.advance();
    }
    Ok(LyapunovEstimate {
        value: total.value() / n as f64,
        stderr: batch_means_stderr(&batches),
        steps: n,
        flagged: orbit.flagged(),
    })
}

/// Outcome of a finite-horizon time function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HorizonTime {
    Resolved(u64),
    Unresolved,
}

impl HorizonTime {
    /// Whether the time exceeds `n` (unresolved exceeds everything).
    pub fn exceeds(&self, n: u64) -> bool {
        match self {
            HorizonTime::Resolved(t) => *t > n,
            HorizonTime::Unresolved => true,
        }
    }
}

fn settle_time(last_failure: Option<u64>, n_cap: u64) -> HorizonTime {
    match last_failure {
        None => HorizonTime::Resolved(1),
        Some(f) if f >= n_cap => HorizonTime::Unresolved,
        Some(f) => HorizonTime::Resolved(f + 1),
    }
}

/// Per-step expansion and critical distance along a generic orbit.
trait Probe {
    fn log_expansion(&self) -> f64;
    fn critical_distance(&self) -> f64;
    fn advance(&mut self);
}

struct LineProbe<'a> {
    orbit: Orbit<'a>,
}

impl Probe for LineProbe<'_> {
    fn log_expansion(&self) -> f64 {
        self.orbit.map.log_expansion(self.orbit.x).unwrap_or(f64::NEG_INFINITY)
    }
    fn critical_distance(&self) -> f64 {
        self.orbit.map.critical_set().distance(self.orbit.x)
    }
    fn advance(&mut self) {
        self.orbit.advance();
    }
}

struct SkewProbe<'a> {
    map: &'a MapSpec,
    theta: f64,
    x: f64,
    dither: Dither,
}

impl Probe for SkewProbe<'_> {
    fn log_expansion(&self) -> f64 {
        self.map.skew_log_expansion(self.theta, self.x).unwrap_or(f64::NEG_INFINITY)
    }
    fn critical_distance(&self) -> f64 {
        self.x.abs()
    }
    fn advance(&mut self) {
        let (t, y) = self.map.step_skew(self.theta, self.x, &mut self.dither);
        self.theta = t;
        self.x = y;
    }
}

/// Both time functions from one pass over the orbit.
fn times(probe: &mut dyn Probe, lambda: f64, delta: f64, eps_rec: f64, n_cap: u64) -> (HorizonTime, HorizonTime) {
    let (mut s_exp, mut s_rec) = (0.0, 0.0);
    let (mut fail_exp, mut fail_rec) = (None, None);
    for n in 1..=n_cap {
        s_exp += probe.log_expansion();
        s_rec += -dist_delta(probe.critical_distance(), delta).ln();
        let nf = n as f64;
        if !(s_exp / nf >= lambda / 2.0) {
            fail_exp = Some(n);
        }
        if !(s_rec / nf <= 2.0 * eps_rec) {
            fail_rec = Some(n);
        }
        if n < n_cap {
            probe.advance();
        }
    }
    (settle_time(fail_exp, n_cap), settle_time(fail_rec, n_cap))
}

/// Least N ≤ n_cap with (1/n) Σ_{i<n} log|Df(fⁱx)| ≥ λ/2 for all n ∈ [N, n_cap].
pub fn expansion_time(map: &MapSpec, x: f64, lambda: f64, n_cap: u64) -> Result<HorizonTime, MapError> {
    let mut probe = LineProbe { orbit: Orbit::new(map, x)? };
    Ok(times(&mut probe, lambda, 0.5, f64::INFINITY, n_cap.max(1)).0)
}

/// Least N ≤ n_cap with (1/n) Σ_{j<n} −log dist_δ(fʲx, 𝒞) ≤ 2ε_rec for all n ∈ [N, n_cap].
pub fn recurrence_time(map: &MapSpec, x: f64, delta: f64, eps_rec: f64, n_cap: u64) -> Result<HorizonTime, MapError> {
    let mut probe = LineProbe { orbit: Orbit::new(map, x)? };
    Ok(times(&mut probe, f64::NEG_INFINITY, delta, eps_rec, n_cap.max(1)).1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaConfig {
    pub sample_size: usize,
    pub n_max: u64,
    /// Horizon standing in for "all n ≥ N".
    pub n_cap: u64,
    pub lambda: f64,
    pub delta: f64,
    pub eps_rec: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaTailEstimate {
    /// `estimate[n-1]` is the fraction of samples with max(𝓔, ℛ) > n, n = 1..=n_max.
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    pub sample_size: usize,
    pub n_max: u64,
    /// Samples whose max(𝓔, ℛ) exceeded n_max or was unresolved.
    pub beyond_horizon: usize,
}

/// Monte Carlo estimate of |Γₙ| for n = 1..=n_max under Lebesgue-uniform sampling.
pub fn gamma_tail(map: &MapSpec, cfg: &GammaConfig) -> Result<GammaTailEstimate, MapError> {
    let n_max = cfg.n_max.max(1);
    let n_cap = cfg.n_cap.max(n_max);
    let (lo, hi) = map.domain();
    let slots = n_max as usize + 2;
    let chunks = rng::chunked(cfg.sample_size, |range| {
        let mut hist = vec![0u64; slots];
        for i in range {
            let mut r = rng::stream(cfg.seed, i as u64);
            let t = if map.is_skew() {
                let theta = r.gen::<f64>();
                let x = rng::uniform(&mut r, lo, hi);
                let dither = Dither::new(cfg.seed ^ ORBIT_DITHER_SEED, i as u64, map.dither_scale());
                let mut probe = SkewProbe { map, theta, x, dither };
                times(&mut probe, cfg.lambda, cfg.delta, cfg.eps_rec, n_cap)
            } else {
                let x = rng::uniform(&mut r, lo, hi);
                let orbit = Orbit::with_stream(map, x, cfg.seed ^ ORBIT_DITHER_SEED, i as u64)
                    .expect("sample inside phase space");
                times(&mut LineProbe { orbit }, cfg.lambda, cfg.delta, cfg.eps_rec, n_cap)
            };
            // Slot holds min(max(𝓔, ℛ), n_max + 1); unresolved goes to the overflow slot.
            let slot = match (t.0, t.1) {
                (HorizonTime::Resolved(a), HorizonTime::Resolved(b)) => a.max(b).min(n_max + 1) as usize,
                _ => n_max as usize + 1,
            };
            hist[slot] += 1;
        }
        hist
    });
    let mut hist = vec![0u64; slots];
    for h in chunks {
        for (a, b) in hist.iter_mut().zip(h) {
            *a += b;
        }
    }
    let unresolved_or_late = hist[n_max as usize + 1];
    let total = cfg.sample_size as f64;
    let mut estimate = Vec::with_capacity(n_max as usize);
    let mut stderr = Vec::with_capacity(n_max as usize);
    let mut above: u64 = hist.iter().sum();
    for n in 1..=n_max as usize {
        above -= hist[n] + if n == 1 { hist[0] } else { 0 };
        let p = above as f64 / total;
        estimate.push(p);
        stderr.push((p * (1.0 - p) / total).sqrt());
    }
    Ok(GammaTailEstimate {
        estimate,
        stderr,
        sample_size: cfg.sample_size,
        n_max,
        beyond_horizon: unresolved_or_late as usize,
    })
}

/// Mean of independent per-orbit Lyapunov estimates, for ergodicity checks.
pub fn lyapunov_spread(map: &MapSpec, x0s: &[f64], n: usize) -> Result<(f64, f64), OrbitError> {
    let mut m = Moments::default();
    for &x in x0s {
        m.push(lyapunov_exponent(map, x, n)?.value);
    }
    Ok((m.mean(), m.stderr()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_observable_averages_to_one() {
        let m = MapSpec::tent();
        assert_eq!(birkhoff_average(&m, &|_| 1.0, 0.3, 1000).unwrap(), 1.0);
    }

    #[test]
    fn circle_lyapunov_is_exact() {
        let l = lyapunov_exponent(&MapSpec::circle(2), 0.123, 10_000).unwrap();
        assert!((l.value - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn circle_times_are_one() {
        let m = MapSpec::circle(3);
        for x in [0.0, 0.1, 0.5, 0.99] {
            assert_eq!(expansion_time(&m, x, 3f64.ln(), 100).unwrap(), HorizonTime::Resolved(1));
            assert_eq!(recurrence_time(&m, x, 0.1, 0.01, 100).unwrap(), HorizonTime::Resolved(1));
        }
    }

    #[test]
    fn neutral_point_delays_expansion() {
        let m = MapSpec::lsv(0.5).unwrap();
        match expansion_time(&m, 1e-6, 0.3, 100_000).unwrap() {
            HorizonTime::Resolved(t) => assert!(t > 100, "t = {t}"),
            HorizonTime::Unresolved => {}
        }
    }

    #[test]
    fn quadratic_expansion_time_is_finite() {
        let m = MapSpec::quadratic(2.0).unwrap();
        assert!(matches!(expansion_time(&m, 1.9, 0.5, 10_000).unwrap(), HorizonTime::Resolved(_)));
    }

    #[test]
    fn quadratic_recurrence_time_exceeds_one() {
        let m = MapSpec::quadratic(2.0).unwrap();
        match recurrence_time(&m, 0.01, 0.1, 0.1, 10_000).unwrap() {
            HorizonTime::Resolved(t) => assert!(t > 1),
            HorizonTime::Unresolved => panic!("expected a finite recurrence time"),
        }
    }

    #[test]
    fn lsv_recurrence_is_finite_for_generic_points() {
        let m = MapSpec::lsv(0.5).unwrap();
        assert!(matches!(recurrence_time(&m, 0.3, 0.1, 1.0, 10_000).unwrap(), HorizonTime::Resolved(_)));
    }

    #[test]
    fn circle_gamma_tail_vanishes() {
        let cfg = GammaConfig { sample_size: 2000, n_max: 20, n_cap: 100, lambda: 0.5, delta: 0.1, eps_rec: 0.1, seed: 1 };
        let g = gamma_tail(&MapSpec::circle(2), &cfg).unwrap();
        assert!(g.estimate.iter().all(|&p| p == 0.0));
    }
}
