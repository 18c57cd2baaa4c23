//! Pull-back measures νₙ, one-step invariance checks, the projected measure of
//! an induced map, and the no-acip diagnostic for a neutral tangency.

use crate::maps::{Dither, DitherScale, MapError, MapSpec};
use crate::rng;
use crate::stats::linear_fit;
use crate::tower::{check_integrability, return_tail, InducedMarkovMap, ReturnTail, TowerError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_BINS: usize = 256;
pub const MIN_BINS: usize = 16;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum FolkloreError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Tower(#[from] TowerError),
    #[error("return times are not summable (partial sum {partial_sum}, tail exponent {exponent})")]
    NonSummableReturns { partial_sum: f64, exponent: f64 },
    #[error("invalid arguments: {0}")]
    Invalid(String),
}

/// Histogram of a measure on [lo, hi].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityHistogram {
    pub lo: f64,
    pub hi: f64,
    pub mass: Vec<f64>,
    pub total: f64,
    pub normalized: bool,
}

impl DensityHistogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self, FolkloreError> {
        if bins < MIN_BINS || !(hi > lo) {
            return Err(FolkloreError::Invalid(format!("grid [{lo}, {hi}] with {bins} bins")));
        }
        Ok(DensityHistogram { lo, hi, mass: vec![0.0; bins], total: 0.0, normalized: false })
    }

    /// Exact bin masses of the measure with the given distribution function.
    pub fn from_cdf(lo: f64, hi: f64, bins: usize, cdf: impl Fn(f64) -> f64) -> Result<Self, FolkloreError> {
        let mut h = Self::new(lo, hi, bins)?;
        for i in 0..bins {
            h.mass[i] = cdf(h.edge(i + 1)) - cdf(h.edge(i));
        }
        h.total = h.mass.iter().sum();
        h.normalize();
        Ok(h)
    }

    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    pub fn edge(&self, i: usize) -> f64 {
        if i == self.bins() { self.hi } else { self.lo + self.width() * i as f64 }
    }

    pub fn bin_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo && x <= self.hi) {
            return None;
        }
        Some((((x - self.lo) / self.width()) as usize).min(self.bins() - 1))
    }

    pub fn add(&mut self, x: f64, w: f64) {
        if let Some(i) = self.bin_of(x) {
            self.mass[i] += w;
            self.total += w;
        }
    }

    /// Adds another histogram on the same grid.
    pub fn merge(&mut self, other: &DensityHistogram) {
        for (a, b) in self.mass.iter_mut().zip(&other.mass) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn normalize(&mut self) {
        let t: f64 = self.mass.iter().sum();
        if t > 0.0 {
            self.mass.iter_mut().for_each(|m| *m /= t);
        }
        self.total = 1.0;
        self.normalized = true;
    }

    pub fn density(&self, i: usize) -> f64 {
        self.mass[i] / self.width()
    }

    pub fn max_density(&self) -> f64 {
        (0..self.bins()).map(|i| self.density(i)).fold(0.0, f64::max)
    }

    /// max |density − target| over bins, comparing with the bin average of the target.
    pub fn sup_error(&self, cdf: impl Fn(f64) -> f64) -> f64 {
        (0..self.bins())
            .map(|i| (self.mass[i] - (cdf(self.edge(i + 1)) - cdf(self.edge(i)))).abs() / self.width())
            .fold(0.0, f64::max)
    }

    /// L¹ distance to the measure with distribution `cdf` over bins inside `window`.
    pub fn l1_to_cdf(&self, cdf: impl Fn(f64) -> f64, window: Option<(f64, f64)>) -> f64 {
        let (a, b) = window.unwrap_or((self.lo, self.hi));
        (0..self.bins())
            .filter(|&i| self.edge(i) >= a - 1e-12 && self.edge(i + 1) <= b + 1e-12)
            .map(|i| (self.mass[i] - (cdf(self.edge(i + 1)) - cdf(self.edge(i)))).abs())
            .sum()
    }

    pub fn total_variation(&self, other: &DensityHistogram) -> f64 {
        0.5 * self.mass.iter().zip(&other.mass).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    /// Draws a point from the histogram, uniform within the chosen bin.
    pub fn sample(&self, cumulative: &[f64], r: &mut ChaCha8Rng) -> f64 {
        let u: f64 = r.gen::<f64>() * cumulative[cumulative.len() - 1];
        let i = cumulative.partition_point(|&c| c <= u).min(self.bins() - 1);
        self.edge(i) + self.width() * r.gen::<f64>()
    }

    pub fn cumulative(&self) -> Vec<f64> {
        self.mass
            .iter()
            .scan(0.0, |acc, m| {
                *acc += m;
                Some(*acc)
            })
            .collect()
    }

    /// Rows `bin_left,bin_right,density`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_left,bin_right,density\n");
        for i in 0..self.bins() {
            s.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", self.edge(i), self.edge(i + 1), self.density(i)));
        }
        s
    }
}

/// A transformation whose pull-back measures can be estimated: a map or an induced map.
pub trait Transformation: Sync {
    fn domain(&self) -> (f64, f64);
    fn dither_scale(&self) -> DitherScale;
    /// One step; `None` ends the orbit (a point outside every modeled branch).
    fn step(&self, x: f64, dither: &mut Dither) -> Option<f64>;
}

impl Transformation for MapSpec {
    fn domain(&self) -> (f64, f64) {
        MapSpec::domain(self)
    }

    fn dither_scale(&self) -> DitherScale {
        MapSpec::dither_scale(self)
    }

    fn step(&self, x: f64, dither: &mut Dither) -> Option<f64> {
        let mut flagged = 0;
        Some(MapSpec::step(self, x, dither, &mut flagged))
    }
}

impl Transformation for InducedMarkovMap {
    fn domain(&self) -> (f64, f64) {
        self.base
    }

    fn dither_scale(&self) -> DitherScale {
        self.map().map_or(DitherScale::OFF, |m| m.dither_scale())
    }

    fn step(&self, x: f64, dither: &mut Dither) -> Option<f64> {
        let i = self.locate(x)?;
        let b = self.branches[i];
        match self.map() {
            None => self.apply(x).ok().flatten(),
            Some(m) => {
                let mut flagged = 0;
                let mut z = x;
                for _ in 0..b.return_time {
                    z = m.step(z, dither, &mut flagged);
                }
                Some(z.clamp(self.base.0, self.base.1))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PullbackEstimate {
    pub density: DensityHistogram,
    /// Largest bin density: the empirical constant in ν(A) ≤ 𝒟|A|.
    pub max_density: f64,
    /// Orbits ended early by leaving the modeled branches.
    pub lost_orbits: usize,
}

/// νₙ = (1/n) Σ_{i<n} Lebesgue ∘ F⁻ⁱ, estimated by binning Fⁱ(x) for uniform x.
pub fn pullback_measure<T: Transformation + ?Sized>(
    f: &T,
    n: usize,
    grid: (f64, f64, usize),
    samples: usize,
    seed: u64,
) -> Result<PullbackEstimate, FolkloreError> {
    if n == 0 || samples == 0 {
        return Err(FolkloreError::Invalid("n and samples must be positive".into()));
    }
    let empty = DensityHistogram::new(grid.0, grid.1, grid.2)?;
    let (lo, hi) = f.domain();
    let amp = f.dither_scale();
    let parts = rng::chunked(samples, |range| {
        let mut h = empty.clone();
        let mut lost = 0;
        for i in range {
            let mut r = rng::stream(seed, i as u64);
            let mut x = lo + (hi - lo) * r.gen::<f64>();
            let mut dither = Dither::new(seed ^ 0xd1b5_4a32_d192_ed03, i as u64, amp);
            for k in 0..n {
                h.add(x, 1.0);
                if k + 1 < n {
                    match f.step(x, &mut dither) {
                        Some(y) => x = y,
                        None => {
                            lost += 1;
                            break;
                        }
                    }
                }
            }
        }
        (h, lost)
    });
    let mut density = empty;
    let mut lost_orbits = 0;
    for (h, l) in &parts {
        density.merge(h);
        lost_orbits += l;
    }
    density.normalize();
    let max_density = density.max_density();
    Ok(PullbackEstimate { density, max_density, lost_orbits })
}

/// Total variation between `density` and the empirical push-forward of `samples`
/// points drawn from it.
pub fn invariance_residual<T: Transformation + ?Sized>(
    f: &T,
    density: &DensityHistogram,
    samples: usize,
    seed: u64,
) -> Result<f64, FolkloreError> {
    if !density.normalized {
        return Err(FolkloreError::Invalid("density must be normalized".into()));
    }
    let cumulative = density.cumulative();
    let empty = DensityHistogram::new(density.lo, density.hi, density.bins())?;
    let amp = f.dither_scale();
    let parts = rng::chunked(samples, |range| {
        let mut h = empty.clone();
        for i in range {
            let mut r = rng::stream(seed, i as u64);
            let x = density.sample(&cumulative, &mut r);
            let mut dither = Dither::new(seed ^ 0x9e37_79b9_7f4a_7c15, i as u64, amp);
            if let Some(y) = f.step(x, &mut dither) {
                h.add(y, 1.0);
            }
        }
        h
    });
    let mut pushed = empty;
    parts.iter().for_each(|h| pushed.merge(h));
    pushed.normalize();
    Ok(density.total_variation(&pushed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedMeasure {
    pub density: DensityHistogram,
    /// μ̂(M) = Σ R(ω) ν(ω), estimated as the mean return time of base samples.
    pub mu_hat_total: f64,
    /// Base samples falling outside every modeled branch.
    pub unmodeled_samples: usize,
    /// Polynomial exponent of the return tail used for the summability verdict.
    pub tail_exponent: f64,
}

/// Exponent above which a polynomial tail is treated as summable when the
/// truncated sum has not yet stabilized.
pub const SUMMABLE_EXPONENT: f64 = 1.05;

/// Log-log slope of the tail over the top seven octaves of the modeled range,
/// where lower-order corrections have died out.
fn upper_tail_exponent(tail: &ReturnTail) -> f64 {
    let n_max = (1..tail.masses.len()).take_while(|&n| tail.masses[n] > 0.0).last().unwrap_or(0);
    let mut n = (n_max / 128).max(1);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    while n <= n_max {
        xs.push((n as f64).ln());
        ys.push(tail.masses[n].ln());
        n *= 2;
    }
    linear_fit(&xs, &ys).map_or(f64::INFINITY, |f| -f.slope)
}

/// μ = μ̂/μ̂(M) with μ̂(A) = Σ_ω Σ_{j<R(ω)} ν_ω(f⁻ʲA), sampled by spreading
/// base points drawn from `base_density` along their orbit segments.
pub fn project_measure(
    tower: &InducedMarkovMap,
    base_density: &DensityHistogram,
    grid: (f64, f64, usize),
    samples: usize,
    seed: u64,
) -> Result<ProjectedMeasure, FolkloreError> {
    if !base_density.normalized {
        return Err(FolkloreError::Invalid("base density must be normalized".into()));
    }
    let tail = return_tail(tower, tower.max_return_time() as usize);
    let verdict = check_integrability(&tail);
    let tail_exponent = upper_tail_exponent(&tail);
    if !verdict.summable && !(tail_exponent > SUMMABLE_EXPONENT) {
        return Err(FolkloreError::NonSummableReturns { partial_sum: verdict.partial_sum, exponent: tail_exponent });
    }
    let cumulative = base_density.cumulative();
    let empty = DensityHistogram::new(grid.0, grid.1, grid.2)?;
    let parts = rng::chunked(samples, |range| -> Result<(DensityHistogram, u64, usize), FolkloreError> {
        let mut h = empty.clone();
        let mut returns = 0u64;
        let mut unmodeled = 0;
        for i in range {
            let mut r = rng::stream(seed, i as u64);
            let x = base_density.sample(&cumulative, &mut r);
            match tower.segment(x)? {
                Some(seg) => {
                    returns += seg.len() as u64;
                    seg.iter().for_each(|&y| h.add(y, 1.0));
                }
                None => unmodeled += 1,
            }
        }
        Ok((h, returns, unmodeled))
    });
    let mut density = empty;
    let (mut returns, mut unmodeled) = (0u64, 0usize);
    for p in parts {
        let (h, r, u) = p?;
        density.merge(&h);
        returns += r;
        unmodeled += u;
    }
    density.normalize();
    let kept = (samples - unmodeled).max(1);
    Ok(ProjectedMeasure { density, mu_hat_total: returns as f64 / kept as f64, unmodeled_samples: unmodeled, tail_exponent })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoAcipReport {
    pub checkpoints: Vec<u64>,
    /// Ensemble mean of the running fraction of time in [0, ρ] at each checkpoint.
    pub fractions: Vec<f64>,
    pub stderr: Vec<f64>,
    pub increasing: bool,
    /// Slope of the fractions against log n.
    pub log_slope: f64,
}

/// Running fraction of time spent in [0, ρ] at n/4, n/2, 3n/4, n, averaged over `orbits` orbits.
pub fn no_acip_diagnostic(
    map: &MapSpec,
    rho: f64,
    n: u64,
    orbits: usize,
    seed: u64,
) -> Result<NoAcipReport, FolkloreError> {
    if !(rho > 0.0 && rho < 1.0) || n < 4 || orbits == 0 {
        return Err(FolkloreError::Invalid(format!("rho = {rho}, n = {n}, orbits = {orbits}")));
    }
    let checkpoints: Vec<u64> = (1..=4).map(|q| n * q / 4).collect();
    let (lo, hi) = map.domain();
    let amp = map.dither_scale();
    let per_orbit: Vec<Vec<f64>> = rng::chunked_with(orbits, 1, |range| {
        let i = range.start as u64;
        let mut r = rng::stream(seed, i);
        let mut x = lo + (hi - lo) * r.gen::<f64>();
        let mut dither = Dither::new(seed ^ 0x6a09_e667_f3bc_c909, i, amp);
        let mut flagged = 0;
        let mut inside = 0u64;
        let mut out = Vec::with_capacity(4);
        let mut next = 0;
        for k in 1..=n {
            if x <= rho {
                inside += 1;
            }
            if k == checkpoints[next] {
                out.push(inside as f64 / k as f64);
                next += 1;
            }
            x = map.step(x, &mut dither, &mut flagged);
        }
        out
    });
    let mut fractions = Vec::with_capacity(4);
    let mut stderr = Vec::with_capacity(4);
    for c in 0..4 {
        let mut m = crate::stats::Moments::default();
        per_orbit.iter().for_each(|v| m.push(v[c]));
        fractions.push(m.mean());
        stderr.push(m.stderr());
    }
    let increasing = fractions.windows(2).all(|w| w[1] > w[0]);
    let xs: Vec<f64> = checkpoints.iter().map(|&c| (c as f64).ln()).collect();
    let log_slope = linear_fit(&xs, &fractions).map_or(0.0, |f| f.slope);
    Ok(NoAcipReport { checkpoints, fractions, stderr, increasing, log_slope })
}

/// Distribution functions of the known invariant densities.
pub mod exact {
    pub fn uniform(x: f64) -> f64 {
        x.clamp(0.0, 1.0)
    }

    /// Gauss measure: log₂(1 + x).
    pub fn gauss(x: f64) -> f64 {
        x.clamp(0.0, 1.0).ln_1p() / std::f64::consts::LN_2
    }

    /// Arcsine law of x² − 2 on [−2, 2].
    pub fn chebyshev(x: f64) -> f64 {
        0.5 + (x.clamp(-2.0, 2.0) / 2.0).asin() / std::f64::consts::PI
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_normalizes() {
        let mut h = DensityHistogram::new(0.0, 1.0, 16).unwrap();
        for i in 0..100 {
            h.add(i as f64 / 100.0, 1.0);
        }
        h.add(2.0, 1.0);
        h.normalize();
        assert!((h.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(DensityHistogram::new(0.0, 1.0, 8).is_err());
    }

    #[test]
    fn exact_histograms_match_their_cdf() {
        let h = DensityHistogram::from_cdf(0.0, 1.0, 64, exact::gauss).unwrap();
        assert!(h.l1_to_cdf(exact::gauss, None) < 1e-14);
        assert!((h.density(0) - 1.0 / std::f64::consts::LN_2).abs() < 0.02);
    }

    #[test]
    fn identity_tower_projects_to_its_base() {
        let tower = InducedMarkovMap::synthetic((0.0, 1.0), &[(1, 1.0)]).unwrap();
        let base = DensityHistogram::from_cdf(0.0, 1.0, 32, exact::gauss).unwrap();
        let p = project_measure(&tower, &base, (0.0, 1.0, 32), 200_000, 5).unwrap();
        assert_eq!(p.mu_hat_total, 1.0);
        for i in 0..32 {
            let sigma = (base.mass[i] / 200_000.0).sqrt();
            assert!((p.density.mass[i] - base.mass[i]).abs() < 3.0 * sigma + 1e-12);
        }
    }

    #[test]
    fn fractions_stay_in_unit_interval() {
        let r = no_acip_diagnostic(&MapSpec::neutral_tangency(), 0.25, 100_000, 8, 1).unwrap();
        assert!(r.fractions.iter().all(|f| (0.0..=1.0).contains(f)));
    }
}
