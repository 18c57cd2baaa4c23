//! Induced Markov maps F = f^R on a base Δ, their return-time tails, and the
//! tail → correlation-decay dictionary.

use crate::maps::{Branch, Family, MapError, MapSpec};
use crate::stats::{linear_fit, LinearFit};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TowerError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("invalid tower: {0}")]
    Invalid(String),
    #[error("return times have gcd {0}; pass the tower of f^{0} instead")]
    GcdNotOne(u64),
    #[error("no regression reaches the acceptance threshold (exponential R² {exp_r2:.4}, polynomial R² {poly_r2:.4})")]
    Ambiguous { exp_r2: f64, poly_r2: f64 },
    #[error("tower has no backing map to iterate")]
    NoDynamics,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerBranch {
    pub left: f64,
    pub right: f64,
    pub return_time: u64,
    /// +1 if f^R is increasing on the branch, −1 otherwise.
    pub orientation: i8,
}

impl TowerBranch {
    pub fn len(&self) -> f64 {
        self.right - self.left
    }

    pub fn is_empty(&self) -> bool {
        self.right <= self.left
    }
}

/// An induced Markov map. Branches are sorted by left endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InducedMarkovMap {
    pub base: (f64, f64),
    pub branches: Vec<TowerBranch>,
    /// Part of Δ not covered by modeled branches.
    pub deficit: f64,
    /// Whether the deficit is known to return later than every modeled branch
    /// (a truncated first-return map) rather than being unresolved.
    #[serde(default)]
    pub deficit_is_late: bool,
    /// Map iterated by f^R; `None` for synthetic towers, whose branches act affinely.
    pub family: Option<Family>,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

impl InducedMarkovMap {
    /// Builds a tower and checks disjointness and the mass balance.
    pub fn new(
        base: (f64, f64),
        mut branches: Vec<TowerBranch>,
        deficit: f64,
        map: Option<&MapSpec>,
    ) -> Result<Self, TowerError> {
        branches.sort_by(|a, b| a.left.total_cmp(&b.left));
        for w in branches.windows(2) {
            if w[0].right > w[1].left + 1e-12 {
                return Err(TowerError::Invalid(format!("branches overlap near {}", w[1].left)));
            }
        }
        if branches.iter().any(|b| b.return_time == 0 || b.left < base.0 - 1e-12 || b.right > base.1 + 1e-12) {
            return Err(TowerError::Invalid("branch outside the base or with zero return time".into()));
        }
        let t = InducedMarkovMap { base, branches, deficit, deficit_is_late: false, family: map.map(|m| m.family().clone()) };
        let err = (t.modeled_mass() + deficit - t.base_len()).abs();
        if err > 1e-8 {
            return Err(TowerError::Invalid(format!("mass balance off by {err}")));
        }
        Ok(t)
    }

    /// Consecutive affine branches with the given (R, length) pairs starting at `base.0`.
    /// Whatever the lengths leave uncovered becomes the deficit.
    pub fn synthetic(base: (f64, f64), pieces: &[(u64, f64)]) -> Result<Self, TowerError> {
        let mut cursor = base.0;
        let mut branches = Vec::with_capacity(pieces.len());
        for &(r, len) in pieces {
            if len <= 0.0 {
                continue;
            }
            branches.push(TowerBranch { left: cursor, right: cursor + len, return_time: r, orientation: 1 });
            cursor += len;
        }
        let deficit = (base.1 - cursor).max(0.0);
        Self::new(base, branches, deficit, None)
    }

    /// Tower whose tail is `masses[n] = |{R > n}|`, n = 0..=n_max; the mass
    /// beyond n_max sits on one branch with R = n_max + 1.
    pub fn from_tail(base: (f64, f64), masses: &[f64]) -> Result<Self, TowerError> {
        let mut pieces: Vec<(u64, f64)> =
            masses.windows(2).enumerate().map(|(n, w)| (n as u64 + 1, w[0] - w[1])).collect();
        if let Some(&last) = masses.last() {
            pieces.push((masses.len() as u64, last));
        }
        Self::synthetic(base, &pieces)
    }

    pub fn map(&self) -> Option<MapSpec> {
        self.family.clone().and_then(|f| MapSpec::new(f).ok())
    }

    pub fn base_len(&self) -> f64 {
        self.base.1 - self.base.0
    }

    pub fn modeled_mass(&self) -> f64 {
        self.branches.iter().map(TowerBranch::len).sum()
    }

    pub fn gcd(&self) -> u64 {
        self.branches.iter().fold(0, |g, b| gcd(g, b.return_time))
    }

    pub fn max_return_time(&self) -> u64 {
        self.branches.iter().map(|b| b.return_time).max().unwrap_or(0)
    }

    /// Index of the branch containing `x`, if modeled.
    pub fn locate(&self, x: f64) -> Option<usize> {
        let i = self.branches.partition_point(|b| b.left <= x);
        if i == 0 {
            return None;
        }
        let b = &self.branches[i - 1];
        (x < b.right || (x == b.right && i == self.branches.len() && b.right == self.base.1)).then_some(i - 1)
    }

    /// F(x) = f^{R(x)}(x), clamped into Δ; `None` outside the modeled branches.
    pub fn apply(&self, x: f64) -> Result<Option<f64>, TowerError> {
        let Some(i) = self.locate(x) else { return Ok(None) };
        let b = self.branches[i];
        let y = match self.map() {
            None => {
                let t = (x - b.left) / b.len();
                let t = if b.orientation >= 0 { t } else { 1.0 - t };
                self.base.0 + t * self.base_len()
            }
            Some(m) => {
                let mut z = x;
                for _ in 0..b.return_time {
                    z = m.eval(z)?;
                }
                z
            }
        };
        Ok(Some(y.clamp(self.base.0, self.base.1)))
    }

    /// The orbit segment fʲ(x), j < R(x); `None` outside the modeled branches.
    pub fn segment(&self, x: f64) -> Result<Option<Vec<f64>>, TowerError> {
        let Some(i) = self.locate(x) else { return Ok(None) };
        let r = self.branches[i].return_time as usize;
        match self.map() {
            Some(m) => Ok(Some(m.orbit_segment(x, r - 1)?)),
            None if r == 1 => Ok(Some(vec![x])),
            None => Err(TowerError::NoDynamics),
        }
    }

    /// Largest distance of f^R(endpoints) from the matching endpoints of Δ.
    pub fn endpoint_error(&self, index: usize) -> Result<f64, TowerError> {
        let m = self.map().ok_or(TowerError::NoDynamics)?;
        let b = self.branches[index];
        let push = |x: f64| -> Result<f64, MapError> {
            let mut z = x;
            for _ in 0..b.return_time {
                // Endpoints sit on branch boundaries, so use one-sided branch formulas.
                z = m.eval(z)?;
            }
            Ok(z)
        };
        let eps = b.len() * 1e-9;
        let (lo, hi) = (push(b.left + eps)?, push(b.right - eps)?);
        let (lo, hi) = if b.orientation >= 0 { (lo, hi) } else { (hi, lo) };
        Ok((lo - self.base.0).abs().max((hi - self.base.1).abs()))
    }
}

/// Inverse-branch evaluation used by the first-return builders.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InverseMethod {
    ClosedForm,
    Bisection,
}

/// First-return tower to the union Δ of the given Markov branches of `map`, built by
/// enumerating words a₀ a₁…a_{R−1} with a₀ ∈ Δ and a₁…a_{R−1} ∉ Δ and pulling Δ back
/// along each word. Branches with R > `r_max` (or past `max_branches`) go to the deficit.
pub fn first_return(
    map: &MapSpec,
    base_labels: &[u64],
    r_max: u64,
    max_branches: usize,
    method: InverseMethod,
) -> Result<InducedMarkovMap, TowerError> {
    let branches = map.markov_branches()?;
    let mut inside: Vec<Branch> = branches.iter().filter(|b| base_labels.contains(&b.label)).cloned().collect();
    inside.sort_by(|a, b| a.left.total_cmp(&b.left));
    if inside.is_empty() || inside.windows(2).any(|w| (w[0].right - w[1].left).abs() > 1e-15) {
        return Err(TowerError::Invalid("base must be a contiguous union of branches".into()));
    }
    let outside: Vec<Branch> = branches.iter().filter(|b| !base_labels.contains(&b.label)).cloned().collect();
    let base = (inside[0].left, inside[inside.len() - 1].right);
    let inv = |b: &Branch, y: f64| match method {
        InverseMethod::ClosedForm => map.inverse(b, y),
        InverseMethod::Bisection => map.inverse_by_bisection(b, y),
    };
    let pull = |word: &[Branch], y: f64| word.iter().rev().fold(y, |acc, b| inv(b, acc));
    let sign = |word: &[Branch]| -> i8 {
        if word.iter().filter(|b| !b.increasing).count() % 2 == 0 { 1 } else { -1 }
    };
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<Branch>> = inside.iter().map(|b| vec![*b]).collect();
    let mut r = 1;
    while r <= r_max && !frontier.is_empty() && out.len() < max_branches {
        for word in &frontier {
            let (u, v) = (pull(word, base.0), pull(word, base.1));
            out.push(TowerBranch { left: u.min(v), right: u.max(v), return_time: r, orientation: sign(word) });
        }
        frontier = frontier
            .iter()
            .flat_map(|w| {
                outside.iter().map(move |b| {
                    let mut w = w.clone();
                    w.push(*b);
                    w
                })
            })
            .collect();
        r += 1;
    }
    let modeled: f64 = out.iter().map(TowerBranch::len).sum();
    let deficit = (base.1 - base.0 - modeled).max(0.0);
    let mut t = InducedMarkovMap::new(base, out, deficit, Some(map))?;
    t.deficit_is_late = r > r_max;
    Ok(t)
}

/// First return of an intermittent map (LSV or the quadratic tangency) to [1/2, 1]
/// from the preimage chain w₀ = 1/2, w_k = g⁻¹(w_{k−1}) of the left branch g:
/// the branch with R = k + 1 is [(1 + w_k)/2, (1 + w_{k−1})/2), with w₋₁ = 1.
pub fn intermittent_first_return(map: &MapSpec, r_max: u64) -> Result<InducedMarkovMap, TowerError> {
    if !matches!(map.family(), Family::LsvIntermittent { .. } | Family::NeutralTangency) {
        return Err(TowerError::Invalid("needs an intermittent map".into()));
    }
    let branches = map.markov_branches()?;
    let left = branches[0];
    let mut prev = 1.0;
    let mut w = 0.5;
    let mut out = Vec::with_capacity(r_max as usize);
    for k in 0..r_max {
        out.push(TowerBranch { left: (1.0 + w) / 2.0, right: (1.0 + prev) / 2.0, return_time: k + 1, orientation: 1 });
        prev = w;
        w = map.inverse(&left, w);
    }
    let deficit = prev / 2.0;
    let mut t = InducedMarkovMap::new((0.5, 1.0), out, deficit, Some(map))?;
    t.deficit_is_late = true;
    Ok(t)
}

/// |{x ∈ Δ : R(x) > n}|. A late deficit counts as R > n for every n; an
/// unresolved one is left out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnTail {
    /// `masses[n]` for n = 0..=n_max.
    pub masses: Vec<f64>,
    /// R̂ₙ = Σ_{n̂ ≥ n} masses[n̂] within the modeled range.
    pub hat: Vec<f64>,
    /// Σ|ω|R(ω) over modeled branches.
    pub integral: f64,
    pub deficit: f64,
    pub gcd: u64,
}

impl ReturnTail {
    /// A tail given directly by its masses (synthetic tails have gcd 1).
    pub fn from_masses(masses: Vec<f64>) -> Self {
        let mut hat = masses.clone();
        for n in (0..hat.len().saturating_sub(1)).rev() {
            hat[n] += hat[n + 1];
        }
        let integral = masses.iter().sum();
        ReturnTail { masses, hat, integral, deficit: 0.0, gcd: 1 }
    }

    pub fn n_max(&self) -> usize {
        self.masses.len().saturating_sub(1)
    }
}

pub fn return_tail(tower: &InducedMarkovMap, n_max: usize) -> ReturnTail {
    let mut by_r = vec![0.0; n_max + 2];
    let mut integral = 0.0;
    for b in &tower.branches {
        integral += b.len() * b.return_time as f64;
        by_r[(b.return_time as usize).min(n_max + 1)] += b.len();
    }
    // masses[n] = Σ_{R > n} |ω|, accumulated from the top.
    let mut masses = vec![0.0; n_max + 1];
    let mut acc = by_r[n_max + 1] + if tower.deficit_is_late { tower.deficit } else { 0.0 };
    for n in (0..=n_max).rev() {
        masses[n] = acc;
        acc += by_r[n];
    }
    let mut t = ReturnTail::from_masses(masses);
    t.integral = integral;
    t.deficit = tower.deficit;
    t.gcd = tower.gcd();
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Integrability {
    pub summable: bool,
    pub partial_sum: f64,
}

/// Σ_{n ≥ 0} |R > n| with a stabilization verdict: the last decade of n must
/// add less than 10⁻³ of the total.
pub fn check_integrability(tail: &ReturnTail) -> Integrability {
    let n = tail.n_max();
    let total: f64 = tail.masses.iter().sum();
    let last_decade: f64 = tail.masses[(n / 10).max(1).min(n)..].iter().sum();
    let summable = total.is_finite() && (total == 0.0 || last_decade / total < 1e-3) && n >= 10;
    Integrability { summable, partial_sum: total }
}

/// Regularity class of the observables.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum ObservableClass {
    Holder,
    LogModulus { gamma: f64 },
}

/// Reference profile for the slowly-varying clause: R̂ₙ ≍ `hat(n)`.
pub struct SlowTemplate {
    pub description: String,
    pub hat: fn(f64) -> f64,
}

impl SlowTemplate {
    /// 1/ρ(n) for ρ(x) = e^{(log x)/(log log x)}.
    pub fn log_over_loglog() -> Self {
        SlowTemplate { description: "exp(-log n / log log n)".into(), hat: slowly_varying_example }
    }
}

pub fn slowly_varying_example(n: f64) -> f64 {
    let l = n.ln();
    (-l / l.ln()).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum DecayKind {
    /// Tail rate; correlations decay at some (smaller) exponential rate.
    Exponential { rate: f64 },
    /// Cₙ exponent α − 1 for a tail ~ n^{−α}.
    Polynomial { exponent: f64 },
    SlowlyVarying { rho: String },
    /// Modulus exponent γ of the observables.
    LogModulus { gamma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayClass {
    pub kind: DecayKind,
    /// Which clause fired.
    pub provenance: String,
    /// Standard error of the reported rate or exponent (0 when not fitted).
    pub uncertainty: f64,
    pub r_squared: f64,
}

/// Fitted regressions used by [`predict_decay`].
#[derive(Clone, Debug, PartialEq)]
pub struct TailFits {
    pub exponential: Option<LinearFit>,
    pub polynomial: Option<LinearFit>,
}

fn effective_range(tail: &ReturnTail) -> usize {
    let m1 = tail.masses.get(1).copied().unwrap_or(0.0);
    let floor = m1 * 1e-12;
    (1..tail.masses.len()).take_while(|&n| tail.masses[n] > floor && tail.masses[n] > 0.0).last().unwrap_or(0)
}

pub fn fit_tail(tail: &ReturnTail) -> TailFits {
    let n_eff = effective_range(tail);
    let lo = ((0.4 * n_eff as f64).floor() as usize).max(1);
    let (xs, ys): (Vec<f64>, Vec<f64>) = (lo..=n_eff).map(|n| (n as f64, tail.masses[n].ln())).unzip();
    let exponential = if xs.len() >= 5 { linear_fit(&xs, &ys) } else { None };
    let mut dyadic = Vec::new();
    let mut n = 1;
    while n <= n_eff {
        dyadic.push(n);
        n *= 2;
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        dyadic.iter().map(|&n| ((n as f64).ln(), tail.masses[n].ln())).unzip();
    let polynomial = if xs.len() >= 4 { linear_fit(&xs, &ys) } else { None };
    TailFits { exponential, polynomial }
}

fn matches_template(tail: &ReturnTail, t: &SlowTemplate) -> bool {
    // Compare R̂ₙ − R̂_m with T(n) − T(m): the unobserved remainder beyond the
    // modeled range cancels, leaving a ratio that must be constant.
    let n_eff = effective_range(tail);
    if n_eff < 64 {
        return false;
    }
    let m = n_eff;
    let mut ratios = Vec::new();
    let mut n = 16;
    while n * 2 <= m {
        let observed = tail.hat[n] - tail.hat[m];
        let expected = (t.hat)(n as f64) - (t.hat)(m as f64);
        if observed <= 0.0 || expected <= 0.0 {
            return false;
        }
        ratios.push((observed / expected).ln());
        n *= 2;
    }
    if ratios.len() < 3 {
        return false;
    }
    let max = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min < 0.05
}

/// Classifies the tail and returns the predicted correlation-decay class.
pub fn predict_decay(
    tail: &ReturnTail,
    observable: ObservableClass,
    template: Option<&SlowTemplate>,
) -> Result<DecayClass, TowerError> {
    if tail.gcd != 1 {
        return Err(TowerError::GcdNotOne(tail.gcd));
    }
    if let Some(t) = template {
        if matches_template(tail, t) {
            return Ok(DecayClass {
                kind: DecayKind::SlowlyVarying { rho: t.description.clone() },
                provenance: "slowly varying tail".into(),
                uncertainty: 0.0,
                r_squared: 1.0,
            });
        }
    }
    let fits = fit_tail(tail);
    let exp_r2 = fits.exponential.map_or(0.0, |f| f.r_squared);
    let poly_r2 = fits.polynomial.map_or(0.0, |f| f.r_squared);
    // The better-fitting regression decides; a polynomial tail that is too
    // flat to be integrable is ambiguous rather than exponential.
    let holder = match (fits.exponential, fits.polynomial) {
        (_, Some(p)) if p.r_squared >= 0.9 && p.r_squared > exp_r2 => {
            if -p.slope <= 1.0 {
                return Err(TowerError::Ambiguous { exp_r2, poly_r2 });
            }
            poly_class(p)
        }
        (Some(e), _) if e.r_squared >= 0.98 && e.slope < 0.0 => exp_class(e),
        _ => return Err(TowerError::Ambiguous { exp_r2, poly_r2 }),
    };
    Ok(match observable {
        ObservableClass::Holder => holder,
        ObservableClass::LogModulus { gamma } => DecayClass {
            kind: DecayKind::LogModulus { gamma },
            provenance: format!("logarithmic modulus of continuity over a {}", holder.provenance),
            ..holder
        },
    })
}

fn exp_class(f: LinearFit) -> DecayClass {
    DecayClass {
        kind: DecayKind::Exponential { rate: -f.slope },
        provenance: "exponential tail".into(),
        uncertainty: f.slope_stderr,
        r_squared: f.r_squared,
    }
}

fn poly_class(f: LinearFit) -> DecayClass {
    DecayClass {
        kind: DecayKind::Polynomial { exponent: -f.slope - 1.0 },
        provenance: "polynomial tail".into(),
        uncertainty: f.slope_stderr,
        r_squared: f.r_squared,
    }
}

/// Tail as CSV rows `n,mass`.
pub fn tail_csv(tail: &ReturnTail) -> String {
    let mut s = String::from("n,mass\n");
    for (n, m) in tail.masses.iter().enumerate() {
        s.push_str(&format!("{n},{m:.16e}\n"));
    }
    s
}
