//! Benedicks–Carleson induction for f(x) = x² − a: binding periods along the
//! critical orbit, the escape partition and the return partition onto
//! Δ = (−δ, δ).
//!
//! Images of partition elements are tracked forward by their endpoints. Near
//! the critical orbit an image is stored as a deviation d from cⱼ = f^{j+1}(0),
//! stepped by d ↦ 2cⱼd + d², which keeps relative precision where plain
//! x² − a would round a tiny interval away.
//!
//! Chops cut images along a fixed grid of cells: I_{±r} (optionally split
//! into r² pieces) and the two outer pieces beyond |x| = 1. A child whose
//! image is a whole cell is canonical: what happens to it afterwards depends
//! only on the cell. The return partition is assembled from one simulation
//! per cell plus a renewal over the cell-to-cell transitions. Mass fractions
//! are taken in the gauge φ(x) = asin(x/2)/π at a = 2, where f is the tent map
//! and every branch of fᵏ is affine, so the renewal is exact there; for other
//! a the gauge is x itself and fractions carry the distortion of fᵏ.

use crate::maps::{CriticalKind, MapError, MapSpec};
use crate::rng;
use crate::stats::{linear_fit, LinearFit};
use crate::tower::{
    self, DecayClass, InducedMarkovMap, ObservableClass, ReturnTail, TowerBranch, TowerError,
};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Largest residue, relative to the starting interval, before a run is refused.
pub const RESIDUE_LIMIT: f64 = 1e-3;
/// Snapping tolerance, relative to a grid boundary.
const SNAP: f64 = 1e-11;
/// Deviation from the critical orbit beyond which an image is tracked in x.
const RELEASE: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum BcError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Tower(#[from] TowerError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("binding condition still holds after {cap} iterates")]
    CapExceeded { cap: usize },
    #[error("unresolved mass {residue:.3e} exceeds {limit:.3e}")]
    ResidueTooLarge { residue: f64, limit: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcConfig {
    /// Target exponent λ ∈ (0, log 2).
    pub lambda: f64,
    /// Recurrence exponent α.
    pub alpha: f64,
    /// Inner radius δ; Δ is taken as (−e^{−r_δ}, e^{−r_δ}).
    pub delta: f64,
    /// δ̂ = δ^ι.
    pub iota: f64,
    /// Iteration cap.
    pub n_max: usize,
    /// Split each I_r inside Δ into r² equal pieces.
    pub subdivide_r2: bool,
    /// Constant C of the hyperbolicity condition.
    pub hyperbolicity_c: f64,
    /// Deepest I_r kept in the grid; (−e^{−r_cap}, e^{−r_cap}) is residue.
    pub r_cap: u32,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            lambda: 0.6,
            alpha: 0.05,
            delta: (-6.0f64).exp(),
            iota: 1.0 / 3.0,
            n_max: 10_000,
            subdivide_r2: false,
            hyperbolicity_c: 0.5,
            r_cap: 30,
        }
    }
}

fn ceil_int(x: f64) -> u32 {
    (x - 1e-9).ceil().max(1.0) as u32
}

impl BcConfig {
    pub fn beta(&self) -> f64 {
        self.alpha / self.lambda
    }

    pub fn delta_hat(&self) -> f64 {
        self.delta.powf(self.iota)
    }

    pub fn r_delta(&self) -> u32 {
        ceil_int(-self.delta.ln())
    }

    pub fn r_delta_hat(&self) -> u32 {
        ceil_int(-self.delta_hat().ln())
    }

    /// Radius of Δ actually used, e^{−r_δ}.
    pub fn delta_eff(&self) -> f64 {
        (-(self.r_delta() as f64)).exp()
    }

    /// Hard checks, then the scale separations λ ≫ α ≫ δ̂ ≫ δ as warnings.
    pub fn validate(&self) -> Result<Vec<String>, BcError> {
        if !(self.lambda > 0.0 && self.lambda < 2f64.ln()) {
            return Err(BcError::Config(format!("lambda = {} must lie in (0, log 2)", self.lambda)));
        }
        if !(self.alpha > 0.0 && self.delta > 0.0 && self.delta < 1.0 && self.iota > 0.0 && self.iota < 1.0) {
            return Err(BcError::Config("need alpha > 0, 0 < delta < 1 and 0 < iota < 1".into()));
        }
        if self.r_delta_hat() >= self.r_delta() || self.r_cap <= self.r_delta() {
            return Err(BcError::Config(format!(
                "need r_delta_hat < r_delta < r_cap, got {} {} {}",
                self.r_delta_hat(),
                self.r_delta(),
                self.r_cap
            )));
        }
        if self.n_max < 10 {
            return Err(BcError::Config("n_max must be at least 10".into()));
        }
        let mut warnings = Vec::new();
        if self.alpha > self.lambda / 10.0 * (1.0 + 1e-9) {
            warnings.push(format!("alpha = {} exceeds lambda/10", self.alpha));
        }
        if self.delta_hat() > self.alpha / 10.0 * (1.0 + 1e-9) {
            warnings.push(format!("delta_hat = {:.4} exceeds alpha/10", self.delta_hat()));
        }
        if self.delta > self.delta_hat().powi(3) * (1.0 + 1e-9) {
            warnings.push(format!("delta = {:.3e} exceeds delta_hat^3", self.delta));
        }
        Ok(warnings)
    }
}

fn check_parameter(a: f64) -> Result<MapSpec, BcError> {
    Ok(MapSpec::quadratic(a)?)
}

/// c₀, c₁, …, c_n with cⱼ = f^{j+1}(0), clamped to the invariant interval.
pub fn critical_orbit(a: f64, n: usize) -> Vec<f64> {
    let hi = a * a - a;
    let mut out = Vec::with_capacity(n + 1);
    let mut c = -a;
    out.push(c);
    for _ in 0..n {
        c = (c * c - a).clamp(-a, hi);
        out.push(c);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcConditions {
    pub hyperbolicity: bool,
    pub slow_recurrence: bool,
    pub first_hyperbolicity_failure: Option<usize>,
    pub first_recurrence_failure: Option<usize>,
    /// log Dₙ for n = 1..=N, Dₙ = |Dfⁿ(c₀)|.
    pub log_dn: Vec<f64>,
    /// min over n of log Dₙ − log C − λn.
    pub hyperbolicity_margin: f64,
    /// min over n of log|cₙ| + αn.
    pub recurrence_margin: f64,
}

/// Checks Dₙ ≥ Ce^{λn} and |cₙ| ≥ e^{−αn} for 1 ≤ n ≤ N in log space.
pub fn check_bc_conditions(a: f64, n: usize, c: f64, cfg: &BcConfig) -> Result<BcConditions, BcError> {
    check_parameter(a)?;
    if n > cfg.n_max {
        return Err(BcError::Config(format!("N = {n} exceeds n_max = {}", cfg.n_max)));
    }
    if !(c > 0.0) {
        return Err(BcError::Config("C must be positive".into()));
    }
    let orbit = critical_orbit(a, n);
    let mut log_dn = Vec::with_capacity(n);
    let mut acc = 0.0;
    let mut out = BcConditions {
        hyperbolicity: true,
        slow_recurrence: true,
        first_hyperbolicity_failure: None,
        first_recurrence_failure: None,
        log_dn: Vec::new(),
        hyperbolicity_margin: f64::INFINITY,
        recurrence_margin: f64::INFINITY,
    };
    for k in 1..=n {
        acc += (2.0 * orbit[k - 1]).abs().ln();
        log_dn.push(acc);
        let hm = acc - c.ln() - cfg.lambda * k as f64;
        let rm = orbit[k].abs().ln() + cfg.alpha * k as f64;
        out.hyperbolicity_margin = out.hyperbolicity_margin.min(hm);
        out.recurrence_margin = out.recurrence_margin.min(rm);
        if !(hm >= 0.0) && out.first_hyperbolicity_failure.is_none() {
            out.first_hyperbolicity_failure = Some(k);
            out.hyperbolicity = false;
        }
        if !(rm >= 0.0) && out.first_recurrence_failure.is_none() {
            out.first_recurrence_failure = Some(k);
            out.slow_recurrence = false;
        }
    }
    out.log_dn = log_dn;
    Ok(out)
}

/// Growth targets for Dₙ slower than the exponential one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GrowthTarget {
    Exponential { c: f64, rate: f64 },
    Polynomial { c: f64, tau: f64 },
}

/// First n ≤ N with Dₙ below the target, if any.
pub fn check_growth(a: f64, n: usize, target: GrowthTarget) -> Result<Option<usize>, BcError> {
    check_parameter(a)?;
    let orbit = critical_orbit(a, n);
    let mut acc = 0.0;
    for k in 1..=n {
        acc += (2.0 * orbit[k - 1]).abs().ln();
        let want = match target {
            GrowthTarget::Exponential { c, rate } => c.ln() + rate * k as f64,
            GrowthTarget::Polynomial { c, tau } => c.ln() + tau * (k as f64).ln(),
        };
        if !(acc >= want) {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

/// Deviation recursion along the critical orbit: the first j with
/// |f^{j+1}(x) − cⱼ| > e^{−2αj}, or `None` if it never happens before `cap`.
fn point_binding(orbit: &[f64], x: f64, alpha: f64, cap: usize) -> Option<usize> {
    let mut d = x * x;
    for j in 0..cap.min(orbit.len()) {
        if d.abs() > (-2.0 * alpha * j as f64).exp() {
            return Some(j);
        }
        d = 2.0 * orbit[j] * d + d * d;
    }
    None
}

/// Binding period of a single point x.
pub fn binding_period_point(a: f64, x: f64, cfg: &BcConfig) -> Result<usize, BcError> {
    check_parameter(a)?;
    let orbit = critical_orbit(a, cfg.n_max);
    point_binding(&orbit, x, cfg.alpha, cfg.n_max).ok_or(BcError::CapExceeded { cap: cfg.n_max })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BindingReport {
    pub r: u32,
    pub p: usize,
    /// 3r/λ.
    pub bound: f64,
    /// p + 1 ≤ 3r/λ.
    pub bound_holds: bool,
    /// min over the endpoints of Î_r of log|Df^{p+1}(x)|.
    pub log_expansion: f64,
    /// log_expansion − (1 − 7β)r.
    pub expansion_margin: f64,
}

/// Î_r = I_{r−1} ∪ I_r ∪ I_{r+1} = [e^{−r−1}, e^{−r+2}).
pub fn hat_interval(r: u32) -> (f64, f64) {
    ((-(r as f64) - 1.0).exp(), (-(r as f64) + 2.0).exp())
}

/// p(r): the shortest binding over the endpoints and midpoint of Î_r.
pub fn binding_period(a: f64, r: u32, cfg: &BcConfig) -> Result<BindingReport, BcError> {
    check_parameter(a)?;
    if r <= cfg.r_delta_hat() {
        return Err(BcError::Config(format!("r = {r} lies outside the neighbourhood of radius delta_hat")));
    }
    let orbit = critical_orbit(a, cfg.n_max);
    let (lo, hi) = hat_interval(r);
    let points = [lo, 0.5 * (lo + hi), hi];
    let mut p = usize::MAX;
    for &x in &points {
        let q = point_binding(&orbit, x, cfg.alpha, cfg.n_max).ok_or(BcError::CapExceeded { cap: cfg.n_max })?;
        p = p.min(q);
    }
    let mut log_expansion = f64::INFINITY;
    for &x in &[lo, hi] {
        // |Df^{p+1}(x)| = |2x| · Π_{j<p} |2(cⱼ + dⱼ)|.
        let mut acc = (2.0 * x).ln();
        let mut d = x * x;
        for c in orbit.iter().take(p) {
            acc += (2.0 * (c + d)).abs().ln();
            d = 2.0 * c * d + d * d;
        }
        log_expansion = log_expansion.min(acc);
    }
    let bound = 3.0 * r as f64 / cfg.lambda;
    Ok(BindingReport {
        r,
        p,
        bound,
        bound_holds: (p + 1) as f64 <= bound,
        log_expansion,
        expansion_margin: log_expansion - (1.0 - 7.0 * cfg.beta()) * r as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedBinding {
    pub p: usize,
    /// The condition never failed inside the horizon.
    pub capped: bool,
}

/// p(x) = max{p : |fᵏ(x) − fᵏ(c)| ≤ γ_k|fᵏ(c) − c| for 1 ≤ k ≤ p − 1}, with
/// γ_k = `gamma(k)` checked to be decreasing in (0, 1) up to `horizon`.
pub fn binding_period_generalized(
    map: &MapSpec,
    x: f64,
    gamma: impl Fn(usize) -> f64,
    horizon: usize,
) -> Result<GeneralizedBinding, BcError> {
    let c = map
        .critical_set()
        .points
        .iter()
        .find(|p| p.kind == CriticalKind::Critical)
        .map(|p| p.location)
        .ok_or_else(|| BcError::Config("map has no critical point".into()))?;
    let mut prev = 1.0;
    for k in 1..horizon {
        let g = gamma(k);
        if !(g > 0.0 && g < 1.0 && g <= prev) {
            return Err(BcError::Config(format!("gamma_{k} = {g} breaks monotone decrease in (0, 1)")));
        }
        prev = g;
    }
    let (mut xk, mut ck) = (x, c);
    for k in 1..horizon {
        xk = map.eval(xk)?;
        ck = map.eval(ck)?;
        if (xk - ck).abs() > gamma(k) * (ck - c).abs() {
            return Ok(GeneralizedBinding { p: k, capped: false });
        }
    }
    Ok(GeneralizedBinding { p: horizon, capped: true })
}

// ---------------------------------------------------------------------------
// The grid of cells.

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellKind {
    /// (−e^{−r_cap}, e^{−r_cap}); never resolved.
    Core,
    /// Piece m of I_r inside Δ (m = 0 without subdivision).
    Return { r: i32, m: u32 },
    /// I_r with 1 ≤ |r| ≤ r_δ.
    Escape { r: i32 },
    /// [1, a² − a] or [−a, −1].
    Outer { side: i8 },
}

impl CellKind {
    pub fn depth(&self) -> u32 {
        match *self {
            CellKind::Core => u32::MAX,
            CellKind::Return { r, .. } | CellKind::Escape { r } => r.unsigned_abs(),
            CellKind::Outer { .. } => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub lo: f64,
    pub hi: f64,
    pub kind: CellKind,
}

/// I_r = [e^{−r}, e^{−r+1}), I_{−r} its mirror, cut to the invariant interval
/// and ordered left to right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrPartition {
    pub delta: f64,
    pub delta_hat: f64,
    pub r_delta: u32,
    pub r_delta_hat: u32,
    pub r_cap: u32,
    pub cells: Vec<Cell>,
}

impl IrPartition {
    pub fn new(a: f64, cfg: &BcConfig) -> Self {
        let (dlo, dhi) = (-a, a * a - a);
        let rd = cfg.r_delta();
        let mut pos = Vec::new();
        for r in 1..=cfg.r_cap {
            let (lo, hi) = ((-(r as f64)).exp(), (-(r as f64) + 1.0).exp());
            if r > rd {
                let pieces = if cfg.subdivide_r2 { r * r } else { 1 };
                let w = (hi - lo) / pieces as f64;
                for m in 0..pieces {
                    let l = lo + w * m as f64;
                    let h = if m + 1 == pieces { hi } else { lo + w * (m + 1) as f64 };
                    pos.push(Cell { lo: l, hi: h, kind: CellKind::Return { r: r as i32, m } });
                }
            } else {
                pos.push(Cell { lo, hi, kind: CellKind::Escape { r: r as i32 } });
            }
        }
        pos.push(Cell { lo: 1.0, hi: f64::INFINITY, kind: CellKind::Outer { side: 1 } });
        let mirror = |c: &Cell| Cell {
            lo: -c.hi,
            hi: -c.lo,
            kind: match c.kind {
                CellKind::Return { r, m } => CellKind::Return { r: -r, m },
                CellKind::Escape { r } => CellKind::Escape { r: -r },
                CellKind::Outer { .. } => CellKind::Outer { side: -1 },
                CellKind::Core => CellKind::Core,
            },
        };
        let mut cells: Vec<Cell> = pos.iter().map(mirror).collect();
        let core = (-(cfg.r_cap as f64)).exp();
        cells.push(Cell { lo: -core, hi: core, kind: CellKind::Core });
        cells.extend(pos);
        cells.sort_by(|x, y| x.lo.total_cmp(&y.lo));
        let cells = cells
            .into_iter()
            .map(|c| Cell { lo: c.lo.max(dlo), hi: c.hi.min(dhi), kind: c.kind })
            .filter(|c| c.hi > c.lo)
            .collect();
        IrPartition {
            delta: cfg.delta_eff(),
            delta_hat: (-(cfg.r_delta_hat() as f64)).exp(),
            r_delta: rd,
            r_delta_hat: cfg.r_delta_hat(),
            r_cap: cfg.r_cap,
            cells,
        }
    }

    /// I_r for r ≠ 0, unclipped.
    pub fn interval(r: i32) -> (f64, f64) {
        let k = r.unsigned_abs() as f64;
        let (lo, hi) = ((-k).exp(), (-k + 1.0).exp());
        if r > 0 { (lo, hi) } else { (-hi, -lo) }
    }

    /// Index of the cell containing x.
    pub fn locate(&self, x: f64) -> usize {
        self.cells.partition_point(|c| c.lo <= x).saturating_sub(1)
    }

    pub fn in_delta(&self, i: usize) -> bool {
        matches!(self.cells[i].kind, CellKind::Return { .. } | CellKind::Core)
    }

    /// Cells met by the closed image [lo, hi], with endpoints within the snapping
    /// tolerance of a boundary counted as on it.
    fn span(&self, lo: f64, hi: f64) -> (usize, usize) {
        let mut i = self.locate(lo);
        let mut j = self.locate(hi);
        if i < j && near(lo, self.cells[i].hi) {
            i += 1;
        }
        if j > i && near(hi, self.cells[j].lo) {
            j -= 1;
        }
        (i, j)
    }
}

fn near(x: f64, b: f64) -> bool {
    (x - b).abs() <= SNAP * b.abs().max(1e-300)
}

// ---------------------------------------------------------------------------
// Mass gauge.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gauge {
    /// φ(x) = asin(x/2)/π, in which f₂ is the tent map.
    Conjugate,
    Lebesgue,
}

impl Gauge {
    pub fn for_parameter(a: f64) -> Self {
        if a == 2.0 { Gauge::Conjugate } else { Gauge::Lebesgue }
    }

    pub fn phi(self, x: f64) -> f64 {
        match self {
            Gauge::Conjugate => (0.5 * x).clamp(-1.0, 1.0).asin() / PI,
            Gauge::Lebesgue => x,
        }
    }

    pub fn inv(self, p: f64) -> f64 {
        match self {
            Gauge::Conjugate => 2.0 * (PI * p).sin(),
            Gauge::Lebesgue => p,
        }
    }

    /// φ(t) − φ(s) without cancellation for short intervals.
    pub fn len(self, s: f64, t: f64) -> f64 {
        match self {
            Gauge::Lebesgue => t - s,
            Gauge::Conjugate => {
                let (u, v) = ((0.5 * s).clamp(-1.0, 1.0), (0.5 * t).clamp(-1.0, 1.0));
                let (cu, cv) = (((1.0 - u) * (1.0 + u)).sqrt(), ((1.0 - v) * (1.0 + v)).sqrt());
                (v * cu - u * cv).atan2(cu * cv + u * v) / PI
            }
        }
    }

    /// Point at gauge fraction f of [lo, hi].
    pub fn at(self, lo: f64, hi: f64, f: f64) -> f64 {
        if f <= 0.0 {
            return lo;
        }
        if f >= 1.0 {
            return hi;
        }
        match self {
            Gauge::Lebesgue => lo + f * (hi - lo),
            Gauge::Conjugate => self.inv(self.phi(lo) + f * self.len(lo, hi)),
        }
    }
}

// ---------------------------------------------------------------------------
// Elements and their images.

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    EssentialReturn,
    InessentialReturn,
    InessentialEscape,
    BindingWindow,
    Escape,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub time: u32,
    pub depth: u32,
    /// Last bound iterate, for binding windows.
    #[serde(default)]
    pub until: u32,
}

#[derive(Clone, Copy, Debug)]
enum Img {
    Abs(f64, f64),
    /// x = cⱼ + d, d ∈ [lo, hi].
    Bound { j: usize, lo: f64, hi: f64 },
}

#[derive(Clone, Debug)]
struct Elem {
    time: u32,
    created: u32,
    img: Img,
    /// +1 if fᵗⁱᵐᵉ preserves order on the element.
    o: i8,
    /// Gauge-fraction interval inside the root.
    pos: (f64, f64),
    bind_until: u32,
    ess: u32,
    events: Vec<Event>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Target {
    Markov,
    Cell(usize),
}

#[derive(Clone, Debug)]
struct Leaf {
    target: Target,
    time: u32,
    pos: (f64, f64),
    o: i8,
    created: u32,
    ess: u32,
    events: Vec<Event>,
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    /// Stop at every canonical child: one cell of the renewal.
    Cell,
    /// Stop at escapes and Markov pieces only.
    Escape,
}

struct Engine<'a> {
    a: f64,
    grid: &'a IrPartition,
    orbit: &'a [f64],
    gauge: Gauge,
    alpha: f64,
    cap: u32,
    min_weight: f64,
    mode: Mode,
    record: bool,
}

enum Advance {
    Done { leaves: Vec<Leaf>, children: Vec<Elem>, residue: Vec<(u32, f64, Elem)> },
}

impl<'a> Engine<'a> {
    fn domain(&self) -> (f64, f64) {
        (-self.a, self.a * self.a - self.a)
    }

    fn abs(&self, img: Img) -> (f64, f64) {
        match img {
            Img::Abs(l, h) => (l, h),
            Img::Bound { j, lo, hi } => {
                let (d0, d1) = self.domain();
                let c = self.orbit[j];
                ((c + lo).clamp(d0, d1), (c + hi).clamp(d0, d1))
            }
        }
    }

    /// One step of f; returns the new image and whether f reversed order.
    fn step(&self, img: Img) -> (Img, bool) {
        let (d0, d1) = self.domain();
        match img {
            Img::Abs(l, h) => {
                let flip = h <= 0.0 || (l < 0.0 && -l > h);
                if h.abs().max(l.abs()) < self.grid.delta_hat {
                    // Re-anchor on the critical orbit: f(x) = c₀ + x².
                    let (p, q) = (l * l, h * h);
                    return (Img::Bound { j: 0, lo: p.min(q), hi: p.max(q) }, flip);
                }
                let (p, q) = ((l * l - self.a).clamp(d0, d1), (h * h - self.a).clamp(d0, d1));
                (Img::Abs(p.min(q), p.max(q)), flip)
            }
            Img::Bound { j, lo, hi } => {
                let c = self.orbit[j];
                let flip = c + 0.5 * (lo + hi) < 0.0;
                let (p, q) = (2.0 * c * lo + lo * lo, 2.0 * c * hi + hi * hi);
                let (p, q) = (p.min(q), p.max(q));
                if p.abs().max(q.abs()) > RELEASE && j + 1 < self.orbit.len() {
                    let c1 = self.orbit[j + 1];
                    return (Img::Abs((c1 + p).clamp(d0, d1), (c1 + q).clamp(d0, d1)), flip);
                }
                (Img::Bound { j: j + 1, lo: p, hi: q }, flip)
            }
        }
    }

    fn binding_length(&self, lo: f64, hi: f64) -> u32 {
        let cap = (self.cap as usize).min(self.orbit.len());
        [lo, 0.5 * (lo + hi), hi]
            .iter()
            .map(|&x| point_binding(self.orbit, x, self.alpha, cap).unwrap_or(cap))
            .min()
            .unwrap() as u32
    }

    /// Records a return at the current time, opens its binding window and takes
    /// the first bound step.
    fn bind(&self, e: &mut Elem, kind: EventKind, depth: u32) {
        let (lo, hi) = self.abs(e.img);
        let p = self.binding_length(lo, hi);
        if kind == EventKind::EssentialReturn {
            e.ess += depth;
        }
        if self.record {
            e.events.push(Event { kind, time: e.time, depth, until: 0 });
            if p > 0 {
                e.events.push(Event { kind: EventKind::BindingWindow, time: e.time + 1, depth, until: e.time + p });
            }
        }
        e.bind_until = e.time + p;
        let (s, t) = (lo * lo, hi * hi);
        e.img = Img::Bound { j: 0, lo: s.min(t), hi: s.max(t) };
        if hi <= 0.0 {
            e.o = -e.o;
        }
        e.time += 1;
    }

    fn sub_pos(&self, e: &Elem, a: f64, b: f64, s: f64, t: f64) -> (f64, f64) {
        let total = self.gauge.len(a, b);
        let (fa, fb) = if total > 0.0 {
            ((self.gauge.len(a, s) / total).clamp(0.0, 1.0), (self.gauge.len(a, t) / total).clamp(0.0, 1.0))
        } else {
            (0.0, 1.0)
        };
        let w = e.pos.1 - e.pos.0;
        if e.o > 0 {
            (e.pos.0 + fa * w, e.pos.0 + fb * w)
        } else {
            (e.pos.1 - fb * w, e.pos.1 - fa * w)
        }
    }

    /// Runs one element until it terminates or is chopped.
    fn advance(&self, mut e: Elem) -> Advance {
        let g = self.grid;
        let mut leaves = Vec::new();
        let mut children = Vec::new();
        let mut residue = Vec::new();
        loop {
            let weight = e.pos.1 - e.pos.0;
            if weight < self.min_weight || e.time > self.cap {
                residue.push((e.time, weight, e));
                break;
            }
            let (a, b) = self.abs(e.img);
            let straddles = a < 0.0 && b > 0.0;
            if e.time <= e.bind_until && !straddles {
                let (img, flip) = self.step(e.img);
                e.img = img;
                if flip {
                    e.o = -e.o;
                }
                e.time += 1;
                continue;
            }
            if e.bind_until >= e.time {
                // The image reached the critical point: binding stops here.
                e.bind_until = e.time - 1;
                if let Some(w) = e.events.iter_mut().rev().find(|v| v.kind == EventKind::BindingWindow) {
                    w.until = w.until.min(e.time - 1);
                }
                e.events.retain(|v| v.kind != EventKind::BindingWindow || v.until >= v.time);
            }
            let meets_delta = a < g.delta && b > -g.delta && !near(a, g.delta) && !near(b, -g.delta);
            if !meets_delta {
                let (img, flip) = self.step(e.img);
                e.img = img;
                if flip {
                    e.o = -e.o;
                }
                e.time += 1;
                continue;
            }
            let (i, j) = g.span(a, b);
            let has_core = (i..=j).any(|k| g.cells[k].kind == CellKind::Core);
            if j - i < 2 && !has_core {
                let depth = (i..=j).map(|k| g.cells[k].kind.depth()).max().unwrap();
                e.img = Img::Abs(a, b);
                self.bind(&mut e, EventKind::InessentialReturn, depth);
                continue;
            }
            self.chop(e, a, b, i, j, &mut leaves, &mut children, &mut residue);
            break;
        }
        Advance::Done { leaves, children, residue }
    }

    #[allow(clippy::too_many_arguments)]
    fn chop(
        &self,
        e: Elem,
        a: f64,
        b: f64,
        i: usize,
        j: usize,
        leaves: &mut Vec<Leaf>,
        children: &mut Vec<Elem>,
        residue: &mut Vec<(u32, f64, Elem)>,
    ) {
        let g = self.grid;
        let k = e.time;
        let outer = (-(g.r_delta as f64) + 1.0).exp();
        let markov = a <= -outer * (1.0 - SNAP) && b >= outer * (1.0 - SNAP);
        let leaf = |target, pos, ev: &Elem, extra: Option<Event>| {
            let mut events = ev.events.clone();
            if let Some(x) = extra {
                events.push(x);
            }
            Leaf { target, time: k, pos, o: ev.o, created: k, ess: ev.ess, events }
        };
        if markov {
            let pos = self.sub_pos(&e, a, b, -g.delta, g.delta);
            let extra = self.record.then_some(Event { kind: EventKind::Escape, time: k, depth: g.r_delta, until: 0 });
            leaves.push(leaf(Target::Markov, pos, &e, extra));
        }
        for idx in i..=j {
            let cell = g.cells[idx];
            if markov && g.in_delta(idx) {
                continue;
            }
            let (s, t) = (a.max(cell.lo), b.min(cell.hi));
            if t <= s {
                continue;
            }
            let pos = self.sub_pos(&e, a, b, s, t);
            let full = (s <= cell.lo || near(s, cell.lo)) && (t >= cell.hi || near(t, cell.hi));
            let depth = cell.kind.depth();
            let mut child = Elem { time: k, created: k, img: Img::Abs(s, t), o: e.o, pos, bind_until: 0, ess: e.ess, events: e.events.clone() };
            match cell.kind {
                CellKind::Core => residue.push((k, pos.1 - pos.0, child)),
                CellKind::Return { .. } if full && self.mode == Mode::Cell => {
                    leaves.push(leaf(Target::Cell(idx), pos, &e, None));
                }
                CellKind::Return { .. } => {
                    let kind = if full { EventKind::EssentialReturn } else { EventKind::InessentialReturn };
                    self.bind(&mut child, kind, depth);
                    children.push(child);
                }
                CellKind::Escape { .. } | CellKind::Outer { .. } if full => {
                    let extra = self.record.then_some(Event { kind: EventKind::Escape, time: k, depth, until: 0 });
                    leaves.push(leaf(Target::Cell(idx), pos, &e, extra));
                }
                _ => {
                    if self.record {
                        child.events.push(Event { kind: EventKind::InessentialEscape, time: k, depth, until: 0 });
                    }
                    let (img, flip) = self.step(child.img);
                    child.img = img;
                    if flip {
                        child.o = -child.o;
                    }
                    child.time += 1;
                    children.push(child);
                }
            }
        }
    }

    /// Processes waves of elements in parallel until all have terminated.
    /// Leaves and residue come back in a thread-count independent order.
    fn run(&self, roots: Vec<Elem>, budget: usize) -> (Vec<Leaf>, Vec<(u32, f64, Elem)>) {
        let mut wave = roots;
        let mut leaves = Vec::new();
        let mut residue = Vec::new();
        let mut processed = 0usize;
        while !wave.is_empty() {
            if processed + wave.len() > budget {
                residue.extend(wave.into_iter().map(|e| (e.time, e.pos.1 - e.pos.0, e)));
                break;
            }
            processed += wave.len();
            let results: Vec<Advance> = wave.into_par_iter().map(|e| self.advance(e)).collect();
            let mut next = Vec::new();
            for Advance::Done { leaves: l, children, residue: r } in results {
                leaves.extend(l);
                next.extend(children);
                residue.extend(r);
            }
            wave = next;
        }
        leaves.sort_by(|x, y| x.pos.0.total_cmp(&y.pos.0));
        residue.sort_by(|x, y| x.2.pos.0.total_cmp(&y.2.pos.0));
        (leaves, residue)
    }
}

fn root(lo: f64, hi: f64) -> Elem {
    Elem { time: 0, created: 0, img: Img::Abs(lo, hi), o: 1, pos: (0.0, 1.0), bind_until: 0, ess: 0, events: Vec::new() }
}

// ---------------------------------------------------------------------------
// Escape partition.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeElement {
    pub left: f64,
    pub right: f64,
    /// Time of the chop that cut this element out.
    pub created: u32,
    pub events: Vec<Event>,
    /// E(ω); `None` for unresolved residue.
    pub escape_time: Option<u32>,
    /// ℰ(ω), the sum of essential return depths.
    pub essential_depth: u32,
    /// f^E maps the element exactly onto Δ.
    pub markov: bool,
    /// Grid cell of the escape image, when it is one.
    pub escape_cell: Option<CellKind>,
}

impl EscapeElement {
    pub fn len(&self) -> f64 {
        self.right - self.left
    }

    pub fn is_empty(&self) -> bool {
        self.right <= self.left
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapePartition {
    pub interval: (f64, f64),
    /// Resolved elements ordered by left endpoint.
    pub elements: Vec<EscapeElement>,
    /// Unresolved pieces at the cap (escape_time `None`).
    pub residue: Vec<EscapeElement>,
    pub residue_mass: f64,
    pub warnings: Vec<String>,
}

/// Element budget for one escape partition.
const ESCAPE_BUDGET: usize = 1_000_000;

/// Escape partition of J: every piece is followed until its image is a whole
/// escape cell or exactly Δ.
pub fn escape_partition(a: f64, j: (f64, f64), cfg: &BcConfig) -> Result<EscapePartition, BcError> {
    let map = check_parameter(a)?;
    let warnings = cfg.validate()?;
    let (d0, d1) = map.domain();
    if !(j.0 < j.1 && j.0 >= d0 && j.1 <= d1) {
        return Err(BcError::Config(format!("interval {j:?} is empty or leaves [{d0}, {d1}]")));
    }
    let grid = IrPartition::new(a, cfg);
    let orbit = critical_orbit(a, cfg.n_max + 2);
    let gauge = Gauge::for_parameter(a);
    let engine = Engine {
        a,
        grid: &grid,
        orbit: &orbit,
        gauge,
        alpha: cfg.alpha,
        cap: cfg.n_max as u32,
        min_weight: 1e-15,
        mode: Mode::Escape,
        record: true,
    };
    let (leaves, residue) = engine.run(vec![root(j.0, j.1)], ESCAPE_BUDGET);
    let place = |pos: (f64, f64)| (gauge.at(j.0, j.1, pos.0), gauge.at(j.0, j.1, pos.1));
    let elements: Vec<EscapeElement> = leaves
        .into_iter()
        .map(|l| {
            let (left, right) = place(l.pos);
            EscapeElement {
                left,
                right,
                created: l.created,
                events: l.events,
                escape_time: Some(l.time),
                essential_depth: l.ess,
                markov: l.target == Target::Markov,
                escape_cell: match l.target {
                    Target::Cell(i) => Some(grid.cells[i].kind),
                    Target::Markov => None,
                },
            }
        })
        .collect();
    let residue: Vec<EscapeElement> = residue
        .into_iter()
        .map(|(_, _, e)| {
            let (left, right) = place(e.pos);
            EscapeElement {
                left,
                right,
                created: e.created,
                events: e.events,
                escape_time: None,
                essential_depth: e.ess,
                markov: false,
                escape_cell: None,
            }
        })
        .collect();
    let residue_mass: f64 = residue.iter().map(EscapeElement::len).sum();
    let limit = RESIDUE_LIMIT * (j.1 - j.0);
    if residue_mass > limit {
        return Err(BcError::ResidueTooLarge { residue: residue_mass, limit });
    }
    Ok(EscapePartition { interval: j, elements, residue, residue_mass, warnings })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeTail {
    /// |{E ≥ n}| for n = 0..=max E + 1; the last entry is 0.
    pub masses: Vec<f64>,
    /// Log-linear fit from the first n where the tail drops below |J|.
    pub fit: Option<LinearFit>,
    /// γ = −slope.
    pub rate: f64,
    pub r_squared: f64,
}

/// Tail of the escape time over resolved elements.
pub fn escape_tail(elements: &[EscapeElement]) -> EscapeTail {
    let max_e = elements.iter().filter_map(|e| e.escape_time).max().unwrap_or(0) as usize;
    let mut by_e = vec![0.0; max_e + 1];
    for e in elements {
        if let Some(t) = e.escape_time {
            by_e[t as usize] += e.len();
        }
    }
    let mut masses = vec![0.0; max_e + 2];
    let mut acc = 0.0;
    for n in (0..=max_e).rev() {
        acc += by_e[n];
        masses[n] = acc;
    }
    let total = masses.first().copied().unwrap_or(0.0);
    let start = masses.iter().position(|&m| m < total * (1.0 - 1e-12)).unwrap_or(max_e);
    let (xs, ys): (Vec<f64>, Vec<f64>) = (start.max(1)..=max_e)
        .filter(|&n| masses[n] > total * 1e-14)
        .map(|n| (n as f64, masses[n].ln()))
        .unzip();
    let fit = if xs.len() >= 3 { linear_fit(&xs, &ys) } else { None };
    EscapeTail {
        masses,
        fit,
        rate: fit.map_or(0.0, |f| -f.slope),
        r_squared: fit.map_or(0.0, |f| f.r_squared),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeConstants {
    /// max E/ℰ over elements with ℰ > 0.
    pub kappa_hat: f64,
    /// max E over elements with ℰ = 0.
    pub t0: u32,
}

/// Empirical constants in E(ω) ≲ κℰ(ω) + T₀.
pub fn escape_constants(elements: &[EscapeElement]) -> EscapeConstants {
    let mut kappa_hat: f64 = 0.0;
    let mut t0 = 0;
    for e in elements {
        let Some(t) = e.escape_time else { continue };
        if e.essential_depth > 0 {
            kappa_hat = kappa_hat.max(t as f64 / e.essential_depth as f64);
        } else {
            t0 = t0.max(t);
        }
    }
    EscapeConstants { kappa_hat, t0 }
}

/// Checks |{E ≥ n}| ≤ |{ℰ ≥ (n − T₀)/κ̂}| for every n, the measured form of
/// E ≲ κℰ. Returns the first n where it fails.
pub fn tail_dominance(elements: &[EscapeElement], k: EscapeConstants) -> Option<u32> {
    let max_e = elements.iter().filter_map(|e| e.escape_time).max().unwrap_or(0);
    for n in 1..=max_e {
        let lhs: f64 = elements.iter().filter(|e| e.escape_time.is_some_and(|t| t >= n)).map(EscapeElement::len).sum();
        let rhs: f64 = if n <= k.t0 {
            elements.iter().map(EscapeElement::len).sum()
        } else {
            let need = (n - k.t0) as f64 / k.kappa_hat;
            elements.iter().filter(|e| e.escape_time.is_some() && e.essential_depth as f64 >= need).map(EscapeElement::len).sum()
        };
        if lhs > rhs * (1.0 + 1e-12) {
            return Some(n);
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Return partition.

#[derive(Clone, Debug)]
struct Transition {
    target: Target,
    time: u32,
    pos: (f64, f64),
    o: i8,
}

#[derive(Clone, Debug, Default)]
struct CellRun {
    transitions: Vec<Transition>,
    residue: Vec<(u32, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ListingLimits {
    pub max_branches: usize,
    pub max_return_time: u32,
    pub min_mass: f64,
    /// Branches shorter than this times |x| cannot be placed precisely enough
    /// in f64 to map onto ∂Δ and stay in the deficit.
    pub min_relative: f64,
}

impl Default for ListingLimits {
    fn default() -> Self {
        ListingLimits { max_branches: 20_000, max_return_time: 400, min_mass: 1e-16, min_relative: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcTower {
    /// Branches listed one by one; the tower deficit holds everything else.
    pub tower: InducedMarkovMap,
    /// |{R > n}| for n = 0..=n_max from the cell renewal; the mass still
    /// unresolved at n_max is counted as R > n.
    pub tail: ReturnTail,
    /// |{R = n}| for n = 0..=n_max.
    pub return_masses: Vec<f64>,
    /// Mass of Δ not returned by n_max, including residue.
    pub unresolved: f64,
    /// Part of `unresolved` lost to the core, precision or budget.
    pub residue: f64,
    /// Returned mass not listed as a branch.
    pub unlisted: f64,
    pub gcd: u64,
    pub exponential_fit: Option<LinearFit>,
    pub class: Option<DecayClass>,
    /// Smallest fraction of an escape cell that returns before escaping again.
    pub xi: f64,
    pub xi_by_cell: Vec<(CellKind, f64)>,
    /// Mass of Δ returning after exactly i escapes.
    pub escape_counts: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Per-cell element budget.
const CELL_BUDGET: usize = 2_000_000;

/// Builds the induced Markov map on Δ.
pub fn build_induced_markov(a: f64, cfg: &BcConfig) -> Result<BcTower, BcError> {
    build_induced_markov_with(a, cfg, ListingLimits::default())
}

pub fn build_induced_markov_with(a: f64, cfg: &BcConfig, limits: ListingLimits) -> Result<BcTower, BcError> {
    let map = check_parameter(a)?;
    let mut warnings = cfg.validate()?;
    let grid = IrPartition::new(a, cfg);
    let orbit = critical_orbit(a, cfg.n_max + 2);
    let gauge = Gauge::for_parameter(a);
    let cell_cap = cfg.n_max.min(2000) as u32;
    let engine = Engine {
        a,
        grid: &grid,
        orbit: &orbit,
        gauge,
        alpha: cfg.alpha,
        cap: cell_cap,
        min_weight: 1e-15,
        mode: Mode::Cell,
        record: false,
    };
    let n_cells = grid.cells.len();
    let runs: Vec<CellRun> = (0..n_cells)
        .into_par_iter()
        .map(|idx| {
            let cell = grid.cells[idx];
            if cell.kind == CellKind::Core {
                return CellRun::default();
            }
            let mut r = root(cell.lo, cell.hi);
            if grid.in_delta(idx) {
                engine.bind(&mut r, EventKind::EssentialReturn, cell.kind.depth());
            } else {
                let (img, flip) = engine.step(r.img);
                r.img = img;
                if flip {
                    r.o = -r.o;
                }
                r.time = 1;
            }
            let (leaves, residue) = engine.run(vec![r], CELL_BUDGET);
            CellRun {
                transitions: leaves
                    .into_iter()
                    .map(|l| Transition { target: l.target, time: l.time, pos: l.pos, o: l.o })
                    .collect(),
                residue: residue.into_iter().map(|(t, w, _)| (t, w)).collect(),
            }
        })
        .collect();

    // Renewal: rho[s][t] = fraction of cell s returning at time t.
    let t_max = cfg.n_max;
    let mut markov = vec![vec![0.0; t_max + 1]; n_cells];
    let mut lost = vec![vec![0.0; t_max + 1]; n_cells];
    let mut edges: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); n_cells];
    for (s, run) in runs.iter().enumerate() {
        for tr in &run.transitions {
            let w = tr.pos.1 - tr.pos.0;
            let t = tr.time as usize;
            debug_assert!(t >= 1);
            match tr.target {
                Target::Markov if t <= t_max => markov[s][t] += w,
                Target::Markov => {}
                Target::Cell(u) => edges[s].push((u, t, w)),
            }
        }
        for &(t, w) in &run.residue {
            if (t as usize) <= t_max {
                lost[s][t as usize] += w;
            }
        }
        edges[s].sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        edges[s].dedup_by(|x, y| {
            if x.0 == y.0 && x.1 == y.1 {
                y.2 += x.2;
                true
            } else {
                false
            }
        });
    }
    let mut rho = vec![vec![0.0; t_max + 1]; n_cells];
    let mut rlost = vec![vec![0.0; t_max + 1]; n_cells];
    for t in 1..=t_max {
        for s in 0..n_cells {
            let (mut v, mut l) = (markov[s][t], lost[s][t]);
            for &(u, tau, w) in &edges[s] {
                if tau < t {
                    v += w * rho[u][t - tau];
                    l += w * rlost[u][t - tau];
                }
            }
            rho[s][t] = v;
            rlost[s][t] = l;
        }
    }

    // Δ chops at time 0 into its return cells; weights are exact x-lengths.
    let delta = grid.delta;
    let base = (-delta, delta);
    let base_len = 2.0 * delta;
    let top: Vec<usize> = (0..n_cells).filter(|&i| grid.cells[i].kind != CellKind::Core && grid.in_delta(i)).collect();
    let core_mass: f64 = grid.cells.iter().filter(|c| c.kind == CellKind::Core).map(|c| c.hi - c.lo).sum();
    let mut return_masses = vec![0.0; t_max + 1];
    let mut residue = core_mass;
    for &c in &top {
        let w = grid.cells[c].hi - grid.cells[c].lo;
        for t in 1..=t_max {
            return_masses[t] += w * rho[c][t];
            residue += w * rlost[c][t];
        }
    }
    let returned: f64 = return_masses.iter().sum();
    let unresolved = (base_len - returned).max(0.0);
    let live = (unresolved - residue).max(0.0);
    let mut masses = vec![0.0; t_max + 1];
    let mut acc = live;
    for n in (0..=t_max).rev() {
        masses[n] = acc;
        acc += return_masses[n];
    }
    let gcd = return_masses
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0.0)
        .fold(0u64, |g, (t, _)| num_gcd(g, t as u64));
    let mut tail = ReturnTail::from_masses(masses);
    tail.deficit = unresolved;
    tail.gcd = gcd;
    if residue > RESIDUE_LIMIT * base_len {
        return Err(BcError::ResidueTooLarge { residue, limit: RESIDUE_LIMIT * base_len });
    }
    let exponential_fit = tower::fit_tail(&tail).exponential;
    if exponential_fit.map_or(true, |f| f.r_squared < 0.8) {
        warnings.push("return-time tail is not log-linear with R² ≥ 0.8".into());
    }
    let class = match tower::predict_decay(&tail, ObservableClass::Holder, None) {
        Ok(c) => Some(c),
        Err(e) => {
            warnings.push(format!("tail not classified: {e}"));
            None
        }
    };

    // ξ and escape counts from the time-integrated transition weights.
    // ξ and escape counts from the time-integrated transition weights, split
    // into moves that land in a return cell and moves that escape.
    let mut w_ret = vec![vec![0.0; n_cells]; n_cells];
    let mut w_esc = vec![vec![0.0; n_cells]; n_cells];
    for (s, es) in edges.iter().enumerate() {
        for &(u, _, w) in es {
            if grid.in_delta(u) {
                w_ret[s][u] += w;
            } else {
                w_esc[s][u] += w;
            }
        }
    }
    let m_tot: Vec<f64> = markov.iter().map(|v| v.iter().sum()).collect();
    // y = b + W_ret y; W_ret is substochastic with small row sums.
    let solve = |b: &[f64]| -> Vec<f64> {
        let mut y = b.to_vec();
        for _ in 0..10_000 {
            let next: Vec<f64> = (0..n_cells)
                .map(|s| b[s] + w_ret[s].iter().zip(&y).map(|(w, v)| w * v).sum::<f64>())
                .collect();
            let diff = next.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            y = next;
            if diff < 1e-16 {
                break;
            }
        }
        y
    };
    let before_escape = solve(&m_tot);
    let mut xi_by_cell = Vec::new();
    for (i, cell) in grid.cells.iter().enumerate() {
        if matches!(cell.kind, CellKind::Escape { .. } | CellKind::Outer { .. }) {
            xi_by_cell.push((cell.kind, before_escape[i]));
        }
    }
    let xi = xi_by_cell.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let top_mass = |eta: &[f64]| -> f64 { top.iter().map(|&c| (grid.cells[c].hi - grid.cells[c].lo) * eta[c]).sum() };
    let mut escape_counts = vec![top_mass(&before_escape)];
    let mut eta = before_escape;
    let mut counted = escape_counts[0];
    while escape_counts.len() < 100_000 && base_len - residue - counted > 1e-9 * base_len {
        let b: Vec<f64> = (0..n_cells).map(|s| w_esc[s].iter().zip(&eta).map(|(w, v)| w * v).sum()).collect();
        eta = solve(&b);
        let m = top_mass(&eta);
        if m <= 1e-15 * base_len {
            break;
        }
        counted += m;
        escape_counts.push(m);
    }

    // Explicit branches, heaviest first. Children are placed inside the parent
    // by gauge fraction directly in x, which keeps relative precision for
    // short branches.
    let mut by_time: Vec<Vec<&Transition>> = runs.iter().map(|r| r.transitions.iter().collect()).collect();
    for v in &mut by_time {
        v.sort_by_key(|t| t.time);
    }
    let mut branches = Vec::new();
    let mut heap = std::collections::BinaryHeap::new();
    for &c in &top {
        heap.push(Pending { mass: grid.cells[c].hi - grid.cells[c].lo, cell: c, lo: grid.cells[c].lo, hi: grid.cells[c].hi, o: 1, t0: 0 });
    }
    let mut nodes = 0usize;
    while let Some(node) = heap.pop() {
        if branches.len() >= limits.max_branches || nodes >= 10 * limits.max_branches {
            break;
        }
        nodes += 1;
        for tr in &by_time[node.cell] {
            let t = node.t0 + tr.time;
            if t > limits.max_return_time {
                break;
            }
            let (fa, fb) = if node.o > 0 { tr.pos } else { (1.0 - tr.pos.1, 1.0 - tr.pos.0) };
            let (left, right) = (gauge.at(node.lo, node.hi, fa), gauge.at(node.lo, node.hi, fb));
            if right - left < limits.min_mass.max(limits.min_relative * left.abs().max(right.abs())) {
                continue;
            }
            let o = node.o * tr.o;
            match tr.target {
                Target::Markov => branches.push(TowerBranch { left, right, return_time: t as u64, orientation: o }),
                Target::Cell(u) => heap.push(Pending { mass: right - left, cell: u, lo: left, hi: right, o, t0: t }),
            }
        }
    }
    branches.sort_by(|x, y| x.left.total_cmp(&y.left));
    let listed: f64 = branches.iter().map(TowerBranch::len).sum();
    let imm = InducedMarkovMap::new(base, branches, base_len - listed, Some(&map))?;
    Ok(BcTower {
        tower: imm,
        tail,
        return_masses,
        unresolved,
        residue,
        unlisted: (returned - listed).max(0.0),
        gcd,
        exponential_fit,
        class,
        xi,
        xi_by_cell,
        escape_counts,
        warnings,
    })
}

struct Pending {
    mass: f64,
    cell: usize,
    lo: f64,
    hi: f64,
    o: i8,
    t0: u32,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.mass.total_cmp(&other.mass).then_with(|| other.lo.total_cmp(&self.lo))
    }
}

fn num_gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { num_gcd(b, a % b) }
}

/// |f^R(endpoint) − ∂Δ| for a listed branch, iterating with the critical-orbit
/// anchoring used by the construction.
pub fn markov_endpoint_error(a: f64, cfg: &BcConfig, b: &TowerBranch) -> f64 {
    let grid_delta = cfg.delta_eff();
    let delta_hat = (-(cfg.r_delta_hat() as f64)).exp();
    let orbit = critical_orbit(a, b.return_time as usize + 2);
    let push = |x0: f64| {
        let mut img = (x0, None::<(usize, f64)>);
        for _ in 0..b.return_time {
            img = match img {
                (x, None) if x.abs() < delta_hat => (0.0, Some((0, x * x))),
                (x, None) => ((x * x - a).clamp(-a, a * a - a), None),
                (_, Some((j, d))) => {
                    let d1 = 2.0 * orbit[j] * d + d * d;
                    if d1.abs() > RELEASE { (orbit[j + 1] + d1, None) } else { (0.0, Some((j + 1, d1))) }
                }
            };
        }
        match img {
            (x, None) => x,
            (_, Some((j, d))) => orbit[j] + d,
        }
    };
    let (lo, hi) = (push(b.left), push(b.right));
    let (lo, hi) = if b.orientation >= 0 { (lo, hi) } else { (hi, lo) };
    (lo + grid_delta).abs().max((hi - grid_delta).abs())
}

// ---------------------------------------------------------------------------
// Expansion outside Δ.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub segments: usize,
    /// Segments with some n where |Dfⁿ(x)| < δe^{λn}.
    pub violations: usize,
    /// min over all checked n of log|Dfⁿ(x)| − log δ − λn.
    pub worst_margin: f64,
    /// min of |Dfⁿ(x)|e^{−λn} over segments ending in Δ̂ or starting in f(Δ̂).
    pub fitted_c: Option<f64>,
    pub reentry_checks: usize,
}

/// Samples orbit segments of length ≤ 30 that stay outside Δ and checks
/// |Dfⁿ(x)| ≥ δe^{λn}.
pub fn expansion_outside_delta(a: f64, trials: usize, cfg: &BcConfig, seed: u64) -> Result<ExpansionReport, BcError> {
    let map = check_parameter(a)?;
    if trials < 1000 {
        return Err(BcError::Config("need at least 1000 trials".into()));
    }
    let (d0, d1) = map.domain();
    let delta = cfg.delta_eff();
    let dh = (-(cfg.r_delta_hat() as f64)).exp();
    let f_dh = (-a, dh * dh - a);
    let lam = cfg.lambda;
    let per_chunk = rng::chunked(trials, |range| {
        let mut out = (0usize, 0usize, f64::INFINITY, f64::INFINITY, 0usize);
        for i in range {
            let mut r = rng::stream(seed, i as u64);
            let mut x = rng::uniform(&mut r, d0, d1);
            while x.abs() < delta {
                x = rng::uniform(&mut r, d0, d1);
            }
            let len = r.gen_range(1..=30usize);
            let starts_in_image = x >= f_dh.0 && x <= f_dh.1;
            let mut acc = 0.0;
            let mut bad = false;
            let mut y = x;
            for n in 1..=len {
                acc += (2.0 * y).abs().ln();
                y = (y * y - a).clamp(d0, d1);
                let margin = acc - delta.ln() - lam * n as f64;
                out.2 = out.2.min(margin);
                bad |= margin < 0.0;
                if y.abs() < dh || starts_in_image {
                    out.3 = out.3.min(acc - lam * n as f64);
                    out.4 += 1;
                }
                if y.abs() < delta {
                    break;
                }
            }
            out.0 += 1;
            out.1 += bad as usize;
        }
        out
    });
    let mut rep = ExpansionReport { segments: 0, violations: 0, worst_margin: f64::INFINITY, fitted_c: None, reentry_checks: 0 };
    let mut c_log = f64::INFINITY;
    for (s, v, w, c, k) in per_chunk {
        rep.segments += s;
        rep.violations += v;
        rep.worst_margin = rep.worst_margin.min(w);
        c_log = c_log.min(c);
        rep.reentry_checks += k;
    }
    if rep.reentry_checks > 0 {
        rep.fitted_c = Some(c_log.exp());
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_radii() {
        let cfg = BcConfig::default();
        assert_eq!((cfg.r_delta(), cfg.r_delta_hat()), (6, 2));
        let w = cfg.validate().unwrap();
        assert_eq!(w.len(), 1, "{w:?}");
        assert!(BcConfig { lambda: 0.8, ..cfg.clone() }.validate().is_err());
    }

    #[test]
    fn grid_tiles_the_interval() {
        for sub in [false, true] {
            let cfg = BcConfig { subdivide_r2: sub, r_cap: 12, ..Default::default() };
            let g = IrPartition::new(2.0, &cfg);
            assert_eq!(g.cells[0].lo, -2.0);
            assert_eq!(g.cells.last().unwrap().hi, 2.0);
            for w in g.cells.windows(2) {
                assert!((w[0].hi - w[1].lo).abs() <= 1e-15 * w[1].lo.abs().max(1e-300), "{:?}", w);
            }
            for c in &g.cells {
                if let CellKind::Escape { r } = c.kind {
                    let (lo, hi) = IrPartition::interval(r);
                    assert!((c.hi - c.lo - (hi - lo)).abs() < 1e-15);
                    assert!(((hi - lo) - (-(r.abs() as f64)).exp() * (std::f64::consts::E - 1.0)).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn gauge_lengths_add() {
        let g = Gauge::Conjugate;
        let (a, b, c) = (-1.3, 1e-9, 1.7);
        assert!((g.len(a, b) + g.len(b, c) - g.len(a, c)).abs() < 1e-15);
        assert!((g.len(1e-12, 2e-12) - 1e-12 / (2.0 * PI)).abs() < 1e-24);
        let x = g.at(-0.5, 0.25, 0.3);
        assert!((g.len(-0.5, x) / g.len(-0.5, 0.25) - 0.3).abs() < 1e-14);
    }

    #[test]
    fn critical_orbit_of_the_top_map() {
        assert_eq!(critical_orbit(2.0, 3), vec![-2.0, 2.0, 2.0, 2.0]);
    }
}
