//! Map families, their branches, derivatives and critical sets.
//!
//! Every family is an immutable [`MapSpec`]. Plain evaluation ([`MapSpec::eval`],
//! [`MapSpec::orbit_segment`]) is raw binary64 arithmetic. Long statistical
//! orbits go through [`MapSpec::step`] with a [`Dither`], which perturbs each
//! iterate by a few units in the last place so that dyadic maps do not collapse
//! onto their finitely many binary64 periodic orbits.

use crate::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Excursions beyond the phase space up to this size are clamped, larger ones rejected.
pub const CLAMP_TOLERANCE: f64 = 1.0 / (1u64 << 40) as f64;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum MapError {
    #[error("invalid parameter for {family}: {reason}")]
    InvalidParameter { family: &'static str, reason: String },
    #[error("point {x} outside phase space [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },
    #[error("derivative requested at critical point {c} (x = {x})")]
    AtCriticalPoint { x: f64, c: f64 },
    #[error("point {x} lies in the truncated Gauss tail [0, {cutoff})")]
    Truncated { x: f64, cutoff: f64 },
    #[error("operation needs a one-dimensional map; the skew product takes (theta, x)")]
    NotOneDimensional,
    #[error("map has no full-branch Markov structure")]
    NotMarkov,
}

/// The map families. Serialized with a `family` tag in snake case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// θ ↦ κθ mod 1. Degree 1 (the identity) is accepted as a degenerate control.
    CircleCovering { degree: u32 },
    Tent,
    /// x ↦ x² − a on [−a, a² − a].
    Quadratic { a: f64 },
    /// x(1 + 2^α x^α) on [0, 1/2), 2x − 1 on [1/2, 1].
    LsvIntermittent { alpha: f64 },
    /// x + 2x² on [0, 1/2), 2x − 1 on [1/2, 1]: a quadratic tangency at 0 with no acip.
    NeutralTangency,
    /// Continued-fraction map with branches r = 1..r_max.
    Gauss { r_max: u64 },
    FourBranchNonErgodic,
    /// (θ, x) ↦ (κθ mod 1, x² − a + ε sin 2πθ).
    Viana { kappa: u32, a: f64, epsilon: f64 },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::CircleCovering { .. } => "circle_covering",
            Family::Tent => "tent",
            Family::Quadratic { .. } => "quadratic",
            Family::LsvIntermittent { .. } => "lsv_intermittent",
            Family::NeutralTangency => "neutral_tangency",
            Family::Gauss { .. } => "gauss",
            Family::FourBranchNonErgodic => "four_branch_non_ergodic",
            Family::Viana { .. } => "viana",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalKind {
    /// Df vanishes.
    Critical,
    /// Df blows up.
    Singular,
    /// A branch boundary; the derivative there is taken one-sided from the owning branch.
    Discontinuity,
    /// Df = 1 at a fixed point; no error is raised there.
    Neutral,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub location: f64,
    /// Order ℓ with |Df(x)| ≍ |x − c|^{ℓ−1} near c.
    pub order: f64,
    pub kind: CriticalKind,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CriticalSet {
    pub points: Vec<CriticalPoint>,
    /// Non-degeneracy exponent β, kept as metadata only.
    pub beta: Option<f64>,
}

impl CriticalSet {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distance from `x` to the nearest point of the set (`inf` when empty).
    pub fn distance(&self, x: f64) -> f64 {
        self.points.iter().map(|p| (x - p.location).abs()).fold(f64::INFINITY, f64::min)
    }
}

/// One monotone branch of a full-branch Markov map. Domains are half-open
/// `[left, right)` except that the last branch also owns the right endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub label: u64,
    pub left: f64,
    pub right: f64,
    pub increasing: bool,
}

impl Branch {
    pub fn len(&self) -> f64 {
        self.right - self.left
    }

    pub fn is_empty(&self) -> bool {
        self.right <= self.left
    }
}

/// Size of the dither: `ulps` units of max(ulp(|y|), `floor`).
///
/// A positive floor makes the noise absolute away from 0. Uniform noise well
/// above the binary64 grid keeps Lebesgue measure invariant for the doubling
/// and tent maps; noise at the scale of the grid itself does not.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DitherScale {
    pub ulps: f64,
    pub floor: f64,
}

impl DitherScale {
    pub const OFF: DitherScale = DitherScale { ulps: 0.0, floor: 0.0 };
}

/// Small per-orbit perturbation source used by statistical orbit drivers.
pub struct Dither {
    rng: ChaCha8Rng,
    scale: DitherScale,
}

impl Dither {
    pub fn new(seed: u64, index: u64, scale: DitherScale) -> Self {
        Dither { rng: rng::stream(seed, index), scale }
    }

    /// A dither with zero amplitude: [`MapSpec::step`] then reproduces `eval`.
    pub fn off() -> Self {
        Dither { rng: rng::stream(0, 0), scale: DitherScale::OFF }
    }

    pub fn kick(&mut self, y: f64) -> f64 {
        if self.scale.ulps == 0.0 {
            return y;
        }
        let a = y.abs();
        let unit = (a.next_up() - a).max(self.scale.floor);
        y + (self.rng.gen::<f64>() - 0.5) * self.scale.ulps * unit
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapSpec {
    family: Family,
    lo: f64,
    hi: f64,
    critical: CriticalSet,
}

fn invalid(family: &'static str, reason: impl Into<String>) -> MapError {
    MapError::InvalidParameter { family, reason: reason.into() }
}

/// Parameter of x² − a whose critical orbit lands on the orientation-reversing
/// fixed point after three steps (0 ↦ −a ↦ a² − a ↦ fixed point). Used as the
/// "good" base parameter for the skew product.
pub fn misiurewicz_parameter() -> f64 {
    // a² − a = −p(a), p(a) = (1 − √(1+4a))/2 the negative fixed point.
    let g = |a: f64| a * a - a + (1.0 - (1.0 + 4.0 * a).sqrt()) / 2.0;
    let (mut lo, mut hi) = (1.5, 1.6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(lo) * g(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Half-width β of the forward-invariant fiber interval [−β, β] of the skew product.
pub fn viana_fiber_radius(a: f64, epsilon: f64) -> f64 {
    (1.0 + (1.0 + 4.0 * (a - epsilon)).sqrt()) / 2.0
}

impl MapSpec {
    pub fn new(family: Family) -> Result<Self, MapError> {
        let crit = |location, order, kind| CriticalPoint { location, order, kind };
        let (lo, hi, points) = match family {
            Family::CircleCovering { degree } => {
                if degree < 1 {
                    return Err(invalid("circle_covering", "degree must be at least 1"));
                }
                (0.0, 1.0, vec![])
            }
            Family::Tent => (0.0, 1.0, vec![crit(0.5, 1.0, CriticalKind::Discontinuity)]),
            Family::Quadratic { a } => {
                if !(1.0..=2.0).contains(&a) {
                    return Err(invalid("quadratic", format!("a = {a} outside [1, 2]")));
                }
                (-a, a * a - a, vec![crit(0.0, 2.0, CriticalKind::Critical)])
            }
            Family::LsvIntermittent { alpha } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(invalid("lsv_intermittent", format!("alpha = {alpha} outside (0, 1)")));
                }
                (0.0, 1.0, vec![crit(0.0, 1.0, CriticalKind::Neutral)])
            }
            Family::NeutralTangency => (0.0, 1.0, vec![crit(0.0, 1.0, CriticalKind::Neutral)]),
            Family::Gauss { r_max } => {
                if r_max < 1 {
                    return Err(invalid("gauss", "r_max must be at least 1"));
                }
                (0.0, 1.0, vec![crit(0.0, -1.0, CriticalKind::Singular)])
            }
            Family::FourBranchNonErgodic => (
                0.0,
                1.0,
                vec![
                    crit(0.25, 1.0, CriticalKind::Discontinuity),
                    crit(0.5, 1.0, CriticalKind::Discontinuity),
                    crit(0.75, 1.0, CriticalKind::Discontinuity),
                ],
            ),
            Family::Viana { kappa, a, epsilon } => {
                if kappa < 2 {
                    return Err(invalid("viana", "kappa must be at least 2"));
                }
                if !(1.0..2.0).contains(&a) {
                    return Err(invalid("viana", format!("a = {a} outside [1, 2)")));
                }
                let beta = viana_fiber_radius(a, epsilon);
                if !(epsilon > 0.0) || a + epsilon > beta {
                    return Err(invalid("viana", format!("epsilon = {epsilon} breaks fiber invariance")));
                }
                (-beta, beta, vec![crit(0.0, 2.0, CriticalKind::Critical)])
            }
        };
        let beta = matches!(family, Family::Quadratic { .. } | Family::Viana { .. }).then_some(1.0);
        Ok(MapSpec { family, lo, hi, critical: CriticalSet { points, beta } })
    }

    pub fn circle(degree: u32) -> Self {
        Self::new(Family::CircleCovering { degree }).expect("valid degree")
    }

    pub fn tent() -> Self {
        Self::new(Family::Tent).unwrap()
    }

    pub fn quadratic(a: f64) -> Result<Self, MapError> {
        Self::new(Family::Quadratic { a })
    }

    pub fn lsv(alpha: f64) -> Result<Self, MapError> {
        Self::new(Family::LsvIntermittent { alpha })
    }

    pub fn neutral_tangency() -> Self {
        Self::new(Family::NeutralTangency).unwrap()
    }

    pub fn gauss(r_max: u64) -> Self {
        Self::new(Family::Gauss { r_max }).expect("valid r_max")
    }

    pub fn four_branch() -> Self {
        Self::new(Family::FourBranchNonErgodic).unwrap()
    }

    pub fn viana(kappa: u32, a: f64, epsilon: f64) -> Result<Self, MapError> {
        Self::new(Family::Viana { kappa, a, epsilon })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// Phase-space interval (the fiber interval for the skew product).
    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn critical_set(&self) -> &CriticalSet {
        &self.critical
    }

    pub fn is_skew(&self) -> bool {
        matches!(self.family, Family::Viana { .. })
    }

    pub fn is_circle(&self) -> bool {
        matches!(self.family, Family::CircleCovering { .. })
    }

    /// Dither used by statistical orbits. Intermittent maps get purely relative
    /// noise so that excursions near the neutral point are not shortened.
    pub fn dither_scale(&self) -> DitherScale {
        match self.family {
            Family::LsvIntermittent { .. } | Family::NeutralTangency => DitherScale { ulps: 4.0, floor: 0.0 },
            _ => DitherScale { ulps: 16.0, floor: (self.hi - self.lo) * 2f64.powi(-50) },
        }
    }

    fn admit(&self, x: f64) -> Result<f64, MapError> {
        if !x.is_finite() || x < self.lo - CLAMP_TOLERANCE || x > self.hi + CLAMP_TOLERANCE {
            return Err(MapError::OutOfDomain { x, lo: self.lo, hi: self.hi });
        }
        Ok(x.clamp(self.lo, self.hi))
    }

    fn settle(&self, y: f64) -> f64 {
        match self.family {
            Family::CircleCovering { .. } => {
                let w = y - y.floor();
                if w >= 1.0 { 0.0 } else { w }
            }
            _ => y.clamp(self.lo, self.hi),
        }
    }

    /// f(x) for one-dimensional families.
    pub fn eval(&self, x: f64) -> Result<f64, MapError> {
        let x = self.admit(x)?;
        let y = match self.family {
            Family::CircleCovering { degree } => degree as f64 * x,
            Family::Tent => {
                if x < 0.5 { 2.0 * x } else { 2.0 - 2.0 * x }
            }
            Family::Quadratic { a } => x * x - a,
            Family::LsvIntermittent { alpha } => {
                if x < 0.5 { x * (1.0 + (2.0 * x).powf(alpha)) } else { 2.0 * x - 1.0 }
            }
            Family::NeutralTangency => {
                if x < 0.5 { x + 2.0 * x * x } else { 2.0 * x - 1.0 }
            }
            Family::Gauss { r_max } => {
                let cutoff = 1.0 / (r_max as f64 + 1.0);
                if x < cutoff {
                    return Err(MapError::Truncated { x, cutoff });
                }
                gauss_fract(x)
            }
            Family::FourBranchNonErgodic => four_branch(x),
            Family::Viana { .. } => return Err(MapError::NotOneDimensional),
        };
        Ok(self.settle(y))
    }

    /// Df(x) for one-dimensional families.
    pub fn deriv(&self, x: f64) -> Result<f64, MapError> {
        let x = self.admit(x)?;
        for p in &self.critical.points {
            if matches!(p.kind, CriticalKind::Critical | CriticalKind::Singular) && x == p.location {
                return Err(MapError::AtCriticalPoint { x, c: p.location });
            }
        }
        Ok(match self.family {
            Family::CircleCovering { degree } => degree as f64,
            Family::Tent => {
                if x < 0.5 { 2.0 } else { -2.0 }
            }
            Family::Quadratic { .. } => 2.0 * x,
            Family::LsvIntermittent { alpha } => {
                if x < 0.5 { 1.0 + (1.0 + alpha) * (2.0 * x).powf(alpha) } else { 2.0 }
            }
            Family::NeutralTangency => {
                if x < 0.5 { 1.0 + 4.0 * x } else { 2.0 }
            }
            Family::Gauss { .. } => -1.0 / (x * x),
            Family::FourBranchNonErgodic => {
                if x < 0.25 || (0.5..0.75).contains(&x) { 2.0 } else { -2.0 }
            }
            Family::Viana { .. } => return Err(MapError::NotOneDimensional),
        })
    }

    /// log|Df(x)|.
    pub fn log_expansion(&self, x: f64) -> Result<f64, MapError> {
        Ok(self.deriv(x)?.abs().ln())
    }

    /// [x0, f(x0), …, fⁿ(x0)] in raw binary64 arithmetic.
    pub fn orbit_segment(&self, x0: f64, n: usize) -> Result<Vec<f64>, MapError> {
        let mut out = Vec::with_capacity(n + 1);
        let mut x = self.admit(x0)?;
        out.push(x);
        for _ in 0..n {
            x = self.eval(x)?;
            out.push(x);
        }
        Ok(out)
    }

    /// One dithered step for long statistical orbits. Never fails: points in
    /// the truncated Gauss tail continue with the exact fractional part of 1/x
    /// and are counted in `flagged`.
    pub fn step(&self, x: f64, dither: &mut Dither, flagged: &mut u64) -> f64 {
        let y = match self.family {
            Family::Gauss { r_max } => {
                if x < 1.0 / (r_max as f64 + 1.0) {
                    *flagged += 1;
                }
                if x <= 0.0 {
                    // Exact landing on the singular point: restart uniformly.
                    dither.uniform()
                } else {
                    gauss_fract(x)
                }
            }
            _ => match self.eval(x) {
                Ok(y) => y,
                Err(_) => {
                    *flagged += 1;
                    self.settle(x)
                }
            },
        };
        self.settle(dither.kick(y))
    }

    /// Skew-product step (θ, x) ↦ (κθ mod 1, x² − a + ε sin 2πθ).
    pub fn eval_skew(&self, theta: f64, x: f64) -> Result<(f64, f64), MapError> {
        let Family::Viana { kappa, a, epsilon } = self.family else {
            return Err(MapError::NotOneDimensional);
        };
        let x = self.admit(x)?;
        let t = kappa as f64 * theta;
        let t = t - t.floor();
        let y = x * x - a + epsilon * (2.0 * PI * theta).sin();
        Ok((if t >= 1.0 { 0.0 } else { t }, y.clamp(self.lo, self.hi)))
    }

    /// Jacobian [[κ, 0], [2πε cos 2πθ, 2x]] of the skew product.
    pub fn jacobian(&self, theta: f64, x: f64) -> Result<[[f64; 2]; 2], MapError> {
        let Family::Viana { kappa, epsilon, .. } = self.family else {
            return Err(MapError::NotOneDimensional);
        };
        if x == 0.0 {
            return Err(MapError::AtCriticalPoint { x, c: 0.0 });
        }
        Ok([[kappa as f64, 0.0], [2.0 * PI * epsilon * (2.0 * PI * theta).cos(), 2.0 * x]])
    }

    /// log of the smallest singular value of the skew-product Jacobian, i.e. log ‖Df⁻¹‖⁻¹.
    pub fn skew_log_expansion(&self, theta: f64, x: f64) -> Result<f64, MapError> {
        let j = self.jacobian(theta, x)?;
        Ok(smallest_singular_value(j).ln())
    }

    pub fn step_skew(&self, theta: f64, x: f64, dither: &mut Dither) -> (f64, f64) {
        let (t, y) = self.eval_skew(theta, x).unwrap_or((theta, x));
        let t = dither.kick(t);
        let t = t - t.floor();
        let t = if t >= 1.0 { 0.0 } else { t };
        (t, dither.kick(y).clamp(self.lo, self.hi))
    }

    /// Full monotone branches, ordered by left endpoint.
    pub fn markov_branches(&self) -> Result<Vec<Branch>, MapError> {
        let b = |label, left, right, increasing| Branch { label, left, right, increasing };
        Ok(match self.family {
            Family::CircleCovering { degree } if degree >= 2 => (0..degree as u64)
                .map(|j| b(j, j as f64 / degree as f64, (j + 1) as f64 / degree as f64, true))
                .collect(),
            Family::Tent => vec![b(0, 0.0, 0.5, true), b(1, 0.5, 1.0, false)],
            Family::LsvIntermittent { .. } | Family::NeutralTangency => {
                vec![b(0, 0.0, 0.5, true), b(1, 0.5, 1.0, true)]
            }
            Family::Quadratic { a } if a == 2.0 => vec![b(0, -2.0, 0.0, false), b(1, 0.0, 2.0, true)],
            Family::Gauss { r_max } => (1..=r_max)
                .rev()
                .map(|r| b(r, 1.0 / (r as f64 + 1.0), 1.0 / r as f64, false))
                .collect(),
            _ => return Err(MapError::NotMarkov),
        })
    }

    /// Preimage of `y` under the given full branch.
    pub fn inverse(&self, branch: &Branch, y: f64) -> f64 {
        let y = y.clamp(self.lo, self.hi);
        match self.family {
            Family::CircleCovering { degree } => (y + branch.label as f64) / degree as f64,
            Family::Tent => {
                if branch.increasing { y / 2.0 } else { 1.0 - y / 2.0 }
            }
            Family::Quadratic { a } => {
                let s = (y + a).max(0.0).sqrt();
                if branch.increasing { s } else { -s }
            }
            Family::Gauss { .. } => 1.0 / (branch.label as f64 + y),
            Family::LsvIntermittent { alpha } if branch.label == 0 => lsv_left_inverse(alpha, y),
            Family::NeutralTangency if branch.label == 0 => 2.0 * y / (1.0 + (1.0 + 8.0 * y).sqrt()),
            Family::LsvIntermittent { .. } | Family::NeutralTangency => (y + 1.0) / 2.0,
            _ => self.inverse_by_bisection(branch, y),
        }
    }

    /// Preimage by bisection on the branch; an independent check of [`MapSpec::inverse`].
    pub fn inverse_by_bisection(&self, branch: &Branch, y: f64) -> f64 {
        let f = |x: f64| self.branch_value(branch, x);
        let (mut lo, mut hi) = (branch.left, branch.right);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let below = if branch.increasing { f(mid) < y } else { f(mid) > y };
            if below {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Branch formula evaluated at `x`, including the right endpoint of the branch
    /// (where `eval` would switch to the next branch or reduce mod 1).
    pub fn branch_value(&self, branch: &Branch, x: f64) -> f64 {
        match self.family {
            Family::CircleCovering { degree } => degree as f64 * x - branch.label as f64,
            Family::Tent => {
                if branch.increasing { 2.0 * x } else { 2.0 - 2.0 * x }
            }
            Family::Quadratic { a } => x * x - a,
            Family::Gauss { .. } => 1.0 / x - branch.label as f64,
            Family::LsvIntermittent { alpha } if branch.label == 0 => x * (1.0 + (2.0 * x).powf(alpha)),
            Family::NeutralTangency if branch.label == 0 => x + 2.0 * x * x,
            Family::LsvIntermittent { .. } | Family::NeutralTangency => 2.0 * x - 1.0,
            _ => self.eval(x).unwrap_or(f64::NAN),
        }
    }

    /// |Df| on a branch, valid at both branch endpoints.
    pub fn branch_abs_deriv(&self, branch: &Branch, x: f64) -> f64 {
        match self.family {
            Family::CircleCovering { degree } => degree as f64,
            Family::Tent => 2.0,
            Family::Quadratic { .. } => (2.0 * x).abs(),
            Family::Gauss { .. } => 1.0 / (x * x),
            Family::LsvIntermittent { alpha } if branch.label == 0 => 1.0 + (1.0 + alpha) * (2.0 * x).powf(alpha),
            Family::NeutralTangency if branch.label == 0 => 1.0 + 4.0 * x,
            Family::LsvIntermittent { .. } | Family::NeutralTangency => 2.0,
            _ => self.deriv(x).map(f64::abs).unwrap_or(f64::NAN),
        }
    }
}

fn gauss_fract(x: f64) -> f64 {
    let inv = 1.0 / x;
    let y = inv - inv.floor();
    if y >= 1.0 { 0.0 } else { y }
}

fn four_branch(x: f64) -> f64 {
    if x < 0.25 {
        2.0 * x
    } else if x < 0.5 {
        1.0 - 2.0 * x
    } else if x < 0.75 {
        2.0 * x - 0.5
    } else {
        2.5 - 2.0 * x
    }
}

/// Solves x(1 + 2^α x^α) = y on [0, 1/2] by Newton from the right (the map is convex).
fn lsv_left_inverse(alpha: f64, y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let c = 2f64.powf(alpha);
    let mut x = y.min(0.5);
    for _ in 0..100 {
        let xa = x.powf(alpha);
        let g = x * (1.0 + c * xa) - y;
        let dg = 1.0 + (1.0 + alpha) * c * xa;
        let next = (x - g / dg).max(0.0);
        if (next - x).abs() <= 1e-17 * x.max(f64::MIN_POSITIVE) {
            return next;
        }
        x = next;
    }
    x
}

fn smallest_singular_value(m: [[f64; 2]; 2]) -> f64 {
    let [[a, b], [c, d]] = m;
    let det = (a * d - b * c).abs();
    let fro = a * a + b * b + c * c + d * d;
    let disc = (fro * fro - 4.0 * det * det).max(0.0).sqrt();
    let s_max = ((fro + disc) / 2.0).sqrt();
    if s_max == 0.0 { 0.0 } else { det / s_max }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_evaluations() {
        assert_eq!(MapSpec::circle(2).eval(0.3).unwrap(), 0.6);
        assert_eq!(MapSpec::quadratic(2.0).unwrap().eval(0.0).unwrap(), -2.0);
        assert!((MapSpec::four_branch().eval(0.3).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn documented_derivatives() {
        assert_eq!(MapSpec::circle(2).deriv(0.77).unwrap(), 2.0);
        assert_eq!(MapSpec::quadratic(1.7).unwrap().deriv(0.4).unwrap(), 0.8);
        assert_eq!(MapSpec::gauss(1_000_000).deriv(0.5).unwrap().abs(), 4.0);
        assert!(matches!(
            MapSpec::quadratic(2.0).unwrap().deriv(0.0),
            Err(MapError::AtCriticalPoint { .. })
        ));
        assert_eq!(MapSpec::lsv(0.5).unwrap().deriv(0.0).unwrap(), 1.0);
    }

    #[test]
    fn documented_orbits() {
        let o = MapSpec::circle(2).orbit_segment(1.0 / 3.0, 3).unwrap();
        assert_eq!(o.len(), 4);
        for (x, e) in o.iter().zip([1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0]) {
            assert!((x - e).abs() < 1e-15);
        }
        assert_eq!(MapSpec::quadratic(2.0).unwrap().orbit_segment(0.0, 2).unwrap(), vec![0.0, -2.0, 2.0]);
        assert!(MapSpec::lsv(0.5).unwrap().orbit_segment(0.0, 5).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn parameter_validation() {
        assert!(MapSpec::quadratic(2.5).is_err());
        assert!(MapSpec::lsv(1.0).is_err());
        assert!(MapSpec::new(Family::Gauss { r_max: 0 }).is_err());
        assert!(MapSpec::viana(16, 2.0, 1e-3).is_err());
        assert!(MapSpec::viana(16, misiurewicz_parameter(), 1e-3).is_ok());
    }

    #[test]
    fn clamp_and_reject() {
        let q = MapSpec::quadratic(2.0).unwrap();
        assert_eq!(q.eval(2.0 + 1e-13).unwrap(), 2.0);
        assert!(matches!(q.eval(2.0 + 1e-9), Err(MapError::OutOfDomain { .. })));
    }

    #[test]
    fn gauss_truncation_is_an_error_for_eval() {
        let g = MapSpec::gauss(50);
        assert!(matches!(g.eval(0.01), Err(MapError::Truncated { .. })));
        let mut flagged = 0;
        let y = g.step(0.01, &mut Dither::off(), &mut flagged);
        assert_eq!(flagged, 1);
        assert!(y.abs() < 1e-9);
    }

    #[test]
    fn misiurewicz_orbit_is_preperiodic() {
        let a = misiurewicz_parameter();
        assert!((a - 1.543_689_012_692_076).abs() < 1e-12);
        let q = MapSpec::quadratic(a).unwrap();
        let o = q.orbit_segment(0.0, 4).unwrap();
        assert!((o[3] - o[4]).abs() < 1e-9);
    }

    #[test]
    fn closed_form_inverses_match_bisection() {
        for map in [
            MapSpec::circle(3),
            MapSpec::tent(),
            MapSpec::gauss(20),
            MapSpec::lsv(0.5).unwrap(),
            MapSpec::neutral_tangency(),
            MapSpec::quadratic(2.0).unwrap(),
        ] {
            let (lo, hi) = map.domain();
            for b in map.markov_branches().unwrap() {
                for k in 1..10 {
                    let y = lo + (hi - lo) * k as f64 / 10.0;
                    let x1 = map.inverse(&b, y);
                    let x2 = map.inverse_by_bisection(&b, y);
                    assert!((x1 - x2).abs() < 1e-12, "{:?} {b:?} y={y}", map.family());
                }
            }
        }
    }

    #[test]
    fn singular_values_of_diagonal_jacobian() {
        assert!((smallest_singular_value([[16.0, 0.0], [0.0, 0.5]]) - 0.5).abs() < 1e-15);
    }
}
