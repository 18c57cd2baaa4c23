//! Finite-depth parameter exclusion for the quadratic family near a = 2.
//!
//! Parameters live in Ω = [2 − ε, 2]. The critical curve is c_k(a) = f_a^{k+1}(0),
//! so c₀(a) = −a. A parameter interval ω is followed through its images
//! ω_k = c_k(ω); whenever ω_k meets at least three cells of the grid on
//! Δ⁺ = (−δ̂, δ̂) it is chopped along that grid. Essential return depths are
//! accumulated in ℰ, and an element is excluded at level n once ℰ > αn.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::stats::{linear_fit, LinearFit};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ParamError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("c_{k} is not monotone on [{lo}, {hi}]")]
    MonotoneViolation { lo: f64, hi: f64, k: u32 },
    #[error("chop produced a parameter interval of width {width:e}")]
    DegenerateChop { width: f64 },
    #[error("orbit of a = {a} hits the critical point at step {step}")]
    AtCriticalPoint { a: f64, step: u32 },
    #[error("only {distinct} distinct return depths observed, need 5")]
    InsufficientData { distinct: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub lambda: f64,
    /// Growth rate for the (EG) proxy; must lie in (0, λ).
    pub lambda0: f64,
    pub delta: f64,
    pub iota: f64,
    pub depth: u32,
    /// Constant C in (EG).
    pub hyperbolicity_c: f64,
    /// Factor 𝒟 allowed between endpoint space derivatives.
    pub distortion: f64,
    /// Distortion allowance after substantial escapes. Reported, not derived.
    pub substantial_distortion: f64,
    pub subdivide_r2: bool,
    /// Deepest resolved cell; images inside (−e^{−r_cap}, e^{−r_cap}) are unresolved.
    pub r_cap: u32,
    pub max_elements: usize,
    /// Parameter intervals narrower than this are unresolved (precision exhausted).
    pub min_width: f64,
    pub binding_cap: u32,
}

impl Default for ParamConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            alpha: 0.1,
            lambda: 0.6,
            lambda0: 0.3,
            delta: (-6.0f64).exp(),
            iota: 1.0 / 3.0,
            depth: 30,
            hyperbolicity_c: 0.5,
            distortion: 10.0,
            substantial_distortion: 10.0,
            subdivide_r2: true,
            r_cap: 16,
            max_elements: 500_000,
            min_width: 1e-14,
            binding_cap: 200,
        }
    }
}

impl ParamConfig {
    pub fn r_delta(&self) -> u32 {
        (-self.delta.ln()).round() as u32
    }

    /// r_δ⁺ = ι log δ⁻¹, rounded.
    pub fn r_delta_plus(&self) -> u32 {
        (self.iota * -self.delta.ln()).round() as u32
    }

    pub fn delta_plus(&self) -> f64 {
        (-(self.r_delta_plus() as f64)).exp()
    }

    /// Minimum image length δ^ι/(log δ^{−ι})² of an edge component.
    pub fn edge_length(&self) -> f64 {
        let d = self.delta.powf(self.iota);
        d / d.ln().powi(2)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let bad = |m: &str| Err(ParamError::Config(m.to_string()));
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-2) {
            return bad("epsilon must lie in (0, 1e-2]");
        }
        if self.depth > 200 {
            return bad("depth must be at most 200");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(self.lambda > 0.0 && self.lambda0 > 0.0 && self.lambda0 < self.lambda) {
            return bad("need 0 < lambda0 < lambda");
        }
        if !(self.delta > 0.0 && self.delta < 1.0 && self.iota > 0.0 && self.iota < 1.0) {
            return bad("delta and iota must lie in (0, 1)");
        }
        if !(self.hyperbolicity_c > 0.0 && self.distortion >= 1.0) {
            return bad("C must be positive and the distortion factor at least 1");
        }
        if self.r_delta_plus() + 1 >= self.r_delta() || self.r_delta() > self.r_cap {
            return bad("need r_delta_plus + 1 < r_delta <= r_cap");
        }
        if !(self.min_width > 0.0) || self.max_elements == 0 {
            return bad("min_width and max_elements must be positive");
        }
        Ok(())
    }
}

/// c_k(a) = f_a^{k+1}(0).
pub fn critical_value(a: f64, k: u32) -> f64 {
    let mut x = -a;
    for _ in 0..k {
        x = x * x - a;
    }
    x
}

/// c_k(a) together with its parameter derivative.
fn critical_value_with_derivative(a: f64, k: u32) -> (f64, f64) {
    let (mut x, mut dx) = (-a, -1.0);
    for _ in 0..k {
        dx = 2.0 * x * dx - 1.0;
        x = x * x - a;
    }
    (x, dx)
}

/// c₀(a), …, c_n(a).
pub fn critical_orbit(a: f64, n: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut x = -a;
    out.push(x);
    for _ in 0..n {
        x = x * x - a;
        out.push(x);
    }
    out
}

/// Image interval ω_k, sorted, with the orientation of c_k on ω.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveImage {
    pub lo: f64,
    pub hi: f64,
    pub increasing: bool,
}

impl CurveImage {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }
}

/// ω_k from the endpoint images, with a midpoint monotonicity spot check.
pub fn critical_curve(omega: (f64, f64), k: u32) -> Result<CurveImage, ParamError> {
    let (lo, hi) = omega;
    let (y0, y1) = (critical_value(lo, k), critical_value(hi, k));
    let ym = critical_value(0.5 * (lo + hi), k);
    let (a, b) = if y0 <= y1 { (y0, y1) } else { (y1, y0) };
    if !(ym >= a && ym <= b) {
        return Err(ParamError::MonotoneViolation { lo, hi, k });
    }
    Ok(CurveImage { lo: a, hi: b, increasing: y1 >= y0 })
}

/// p(c_k(a)) = min{i : |c_{k+1+i}(a) − c_i(a)| ≥ e^{−2αi}}, capped.
pub fn binding_period(a: f64, k: u32, alpha: f64, cap: u32) -> u32 {
    let orbit = critical_orbit(a, k + 1 + cap);
    for i in 0..=cap {
        let d = (orbit[(k + 1 + i) as usize] - orbit[i as usize]).abs();
        if d >= (-2.0 * alpha * i as f64).exp() {
            return i;
        }
    }
    cap
}

/// Binding period of an interval: the minimum over both endpoints and the midpoint.
pub fn binding_period_interval(omega: (f64, f64), k: u32, alpha: f64, cap: u32) -> u32 {
    let mid = 0.5 * (omega.0 + omega.1);
    [omega.0, mid, omega.1]
        .into_iter()
        .map(|a| binding_period(a, k, alpha, cap))
        .min()
        .unwrap_or(0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamEventKind {
    SubstantialEscape,
    EssentialEscape,
    EssentialReturn,
    InessentialReturn,
    InessentialEscape,
}

impl ParamEventKind {
    /// Essential and substantial escapes delimit the Q-hierarchy segments.
    pub fn is_escape_boundary(self) -> bool {
        matches!(self, Self::SubstantialEscape | Self::EssentialEscape)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEvent {
    pub kind: ParamEventKind,
    pub time: u32,
    pub depth: u32,
    /// Binding period opened at this event; the window is time+1 ..= time+binding.
    pub binding: u32,
}

#[derive(Debug)]
struct LogNode {
    event: ParamEvent,
    prev: Option<Arc<LogNode>>,
}

/// Persistent event list; children share their parent's history.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(from = "Vec<ParamEvent>", into = "Vec<ParamEvent>")]
pub struct EventLog(Option<Arc<LogNode>>);

impl EventLog {
    pub fn push(&self, event: ParamEvent) -> Self {
        Self(Some(Arc::new(LogNode { event, prev: self.0.clone() })))
    }

    pub fn to_vec(&self) -> Vec<ParamEvent> {
        let mut out = Vec::new();
        let mut node = self.0.as_deref();
        while let Some(n) = node {
            out.push(n.event);
            node = n.prev.as_deref();
        }
        out.reverse();
        out
    }

    pub fn last(&self) -> Option<ParamEvent> {
        self.0.as_ref().map(|n| n.event)
    }
}

impl From<Vec<ParamEvent>> for EventLog {
    fn from(v: Vec<ParamEvent>) -> Self {
        v.into_iter().fold(EventLog::default(), |log, e| log.push(e))
    }
}

impl From<EventLog> for Vec<ParamEvent> {
    fn from(log: EventLog) -> Self {
        log.to_vec()
    }
}

impl PartialEq for EventLog {
    fn eq(&self, other: &Self) -> bool {
        self.to_vec() == other.to_vec()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnresolvedReason {
    MonotoneViolation,
    DegenerateChop,
    PrecisionExhausted,
    /// Image met the core (−e^{−r_cap}, e^{−r_cap}) below the resolved grid.
    Core,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElementStatus {
    Active,
    Excluded { level: u32 },
    Unresolved { level: u32, reason: UnresolvedReason },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamElement {
    pub lo: f64,
    pub hi: f64,
    pub status: ElementStatus,
    /// ℰ: the sum of essential return depths so far.
    pub essential_depth: u32,
    /// Last time of the current binding window (0 when none is open).
    pub bind_until: u32,
    pub events: EventLog,
}

impl ParamElement {
    pub fn root(epsilon: f64) -> Self {
        Self {
            lo: 2.0 - epsilon,
            hi: 2.0,
            status: ElementStatus::Active,
            essential_depth: 0,
            bind_until: 0,
            events: EventLog::default(),
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// ℰ⁽ᵏ⁾ recomputed from the event log.
    pub fn replay(&self, k: u32) -> u32 {
        replay_essential_depth(&self.events.to_vec(), k)
    }
}

/// Sum of essential return depths with time ≤ k.
pub fn replay_essential_depth(events: &[ParamEvent], k: u32) -> u32 {
    events
        .iter()
        .filter(|e| e.kind == ParamEventKind::EssentialReturn && e.time <= k)
        .map(|e| e.depth)
        .sum()
}

/// The exclusion rule ℰ⁽ⁿ⁾ > αn.
pub fn exceeds_threshold(essential_depth: u32, n: u32, alpha: f64) -> bool {
    essential_depth as f64 > alpha * n as f64
}

/// One cell I_{r,m} of the grid on Δ⁺. `r` carries the side: negative cells lie left of 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lo: f64,
    pub hi: f64,
    pub r: i32,
    pub m: u32,
    pub core: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StepEvent {
    None,
    BindingContinue,
    InessentialReturn { depth: u32 },
    InessentialEscape { depth: u32 },
    Chop,
}

/// The partition ℐ⁺ of Δ⁺ into the I_{r,m} (r_δ⁺ < |r| ≤ r_cap) and a core.
#[derive(Clone, Debug)]
pub struct ParamGrid {
    pub cells: Vec<GridCell>,
    pub delta_plus: f64,
    pub r_delta: u32,
    pub r_cap: u32,
    pub edge_length: f64,
    boundaries: Vec<f64>,
}

impl ParamGrid {
    pub fn new(cfg: &ParamConfig) -> Self {
        let rp = cfg.r_delta_plus();
        let mut cells = Vec::new();
        let core = (-(cfg.r_cap as f64)).exp();
        for r in rp + 1..=cfg.r_cap {
            let (a, b) = ((-(r as f64)).exp(), (-(r as f64) + 1.0).exp());
            let parts = if cfg.subdivide_r2 { r * r } else { 1 };
            let w = (b - a) / parts as f64;
            for m in 0..parts {
                let lo = if m == 0 { a } else { a + w * m as f64 };
                let hi = if m + 1 == parts { b } else { a + w * (m + 1) as f64 };
                // m counts outward from 0 on both sides.
                cells.push(GridCell { lo, hi, r: r as i32, m: m + 1, core: false });
                cells.push(GridCell { lo: -hi, hi: -lo, r: -(r as i32), m: m + 1, core: false });
            }
        }
        cells.push(GridCell { lo: -core, hi: core, r: 0, m: 0, core: true });
        cells.sort_by(|x, y| x.lo.total_cmp(&y.lo));
        let mut boundaries: Vec<f64> = cells.iter().map(|c| c.lo).collect();
        boundaries.push(cells.last().map(|c| c.hi).unwrap_or(0.0));
        Self {
            cells,
            delta_plus: cfg.delta_plus(),
            r_delta: cfg.r_delta(),
            r_cap: cfg.r_cap,
            edge_length: cfg.edge_length(),
            boundaries,
        }
    }

    pub fn depth_of(&self, cell: &GridCell) -> u32 {
        if cell.core {
            self.r_cap + 1
        } else {
            cell.r.unsigned_abs()
        }
    }

    /// Indices of cells meeting the open interval (lo, hi).
    pub fn overlapping(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let first = self.cells.partition_point(|c| c.hi <= lo);
        let last = self.cells.partition_point(|c| c.lo < hi);
        first..last.max(first)
    }

    /// Cell containing x; a boundary point goes to the deeper side.
    pub fn locate(&self, x: f64) -> Option<usize> {
        if !(x > -self.delta_plus && x < self.delta_plus) {
            return None;
        }
        let i = if x > 0.0 {
            self.cells.partition_point(|c| c.lo < x)
        } else {
            self.cells.partition_point(|c| c.lo <= x)
        };
        i.checked_sub(1)
    }

    /// Largest depth among cells met by [lo, hi], boundary ties counted deeper.
    pub fn depth_range(&self, lo: f64, hi: f64) -> u32 {
        let mut depth = self.overlapping(lo, hi).map(|i| self.depth_of(&self.cells[i])).max().unwrap_or(0);
        for x in [lo, hi] {
            if let Some(i) = self.locate(x) {
                depth = depth.max(self.depth_of(&self.cells[i]));
            }
        }
        depth
    }

    pub fn classify(&self, element: &ParamElement, image: &CurveImage, n: u32) -> StepEvent {
        if n <= element.bind_until && element.bind_until > 0 {
            return StepEvent::BindingContinue;
        }
        let (lo, hi) = (image.lo, image.hi);
        if hi <= -self.delta_plus || lo >= self.delta_plus {
            return StepEvent::None;
        }
        if self.overlapping(lo, hi).len() >= 3 {
            return StepEvent::Chop;
        }
        let depth = self.depth_range(lo, hi);
        // Δ ∪ I_{±r_δ} = (−e^{−(r_δ−1)}, e^{−(r_δ−1)}).
        let near = (-(self.r_delta as f64) + 1.0).exp();
        if lo < near && hi > -near {
            StepEvent::InessentialReturn { depth }
        } else {
            StepEvent::InessentialEscape { depth }
        }
    }

    /// Splits an element whose image ω_n meets at least three cells.
    pub fn chop(&self, element: &ParamElement, image: &CurveImage, n: u32, cfg: &ParamConfig) -> Vec<ParamElement> {
        // Image segments in increasing x.
        #[derive(Clone, Copy)]
        enum Piece {
            Outside,
            Cell(usize, bool),
        }
        let mut cuts = vec![image.lo];
        let start = self.boundaries.partition_point(|&y| y <= image.lo);
        let end = self.boundaries.partition_point(|&y| y < image.hi);
        cuts.extend_from_slice(&self.boundaries[start..end]);
        cuts.push(image.hi);
        let pieces: Vec<(f64, f64, Piece)> = cuts
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                let m = 0.5 * (a + b);
                let piece = if m <= -self.delta_plus || m >= self.delta_plus {
                    Piece::Outside
                } else {
                    let i = self.cells.partition_point(|c| c.lo <= m) - 1;
                    let c = &self.cells[i];
                    Piece::Cell(i, a <= c.lo && b >= c.hi)
                };
                (a, b, piece)
            })
            .collect();
        let anchor = |p: &(f64, f64, Piece)| match p.2 {
            Piece::Outside => p.1 - p.0 >= self.edge_length,
            Piece::Cell(_, full) => full,
        };
        let anchors: Vec<usize> = (0..pieces.len()).filter(|&i| anchor(&pieces[i])).collect();
        // Leading and trailing non-anchors are glued to the nearest anchor.
        let groups: Vec<(f64, f64, Piece)> = anchors
            .iter()
            .enumerate()
            .map(|(g, &i)| {
                let lo = if g == 0 { image.lo } else { pieces[i].0 };
                let hi = anchors.get(g + 1).map_or(image.hi, |&j| pieces[j].0);
                (lo, hi, pieces[i].2)
            })
            .collect();

        // Parameter boundaries between groups, solved in image order.
        let (a_lo, a_hi) = (element.lo, element.hi);
        let mut params = Vec::with_capacity(groups.len() + 1);
        params.push(if image.increasing { a_lo } else { a_hi });
        let (mut lo, mut hi) = (a_lo, a_hi);
        for g in &groups[..groups.len() - 1] {
            let a = solve_curve(n, lo, hi, image.increasing, g.1);
            if image.increasing {
                lo = a;
            } else {
                hi = a;
            }
            params.push(a);
        }
        params.push(if image.increasing { a_hi } else { a_lo });

        let mut children: Vec<ParamElement> = groups
            .iter()
            .enumerate()
            .map(|(g, &(_, _, piece))| {
                let (p0, p1) = (params[g], params[g + 1]);
                let (clo, chi) = if p0 <= p1 { (p0, p1) } else { (p1, p0) };
                let mut child = ParamElement {
                    lo: clo,
                    hi: chi,
                    status: ElementStatus::Active,
                    essential_depth: element.essential_depth,
                    bind_until: 0,
                    events: element.events.clone(),
                };
                if chi - clo < 1e-15 {
                    child.status = ElementStatus::Unresolved { level: n, reason: UnresolvedReason::DegenerateChop };
                    return child;
                }
                let (kind, depth) = match piece {
                    Piece::Outside => (ParamEventKind::SubstantialEscape, 0),
                    Piece::Cell(i, _) => {
                        let cell = &self.cells[i];
                        if cell.core {
                            child.status = ElementStatus::Unresolved { level: n, reason: UnresolvedReason::Core };
                            return child;
                        }
                        let d = self.depth_of(cell);
                        if d < self.r_delta {
                            (ParamEventKind::EssentialEscape, d)
                        } else {
                            (ParamEventKind::EssentialReturn, d)
                        }
                    }
                };
                let binding = if kind == ParamEventKind::SubstantialEscape {
                    0
                } else {
                    binding_period_interval((clo, chi), n, cfg.alpha, cfg.binding_cap)
                };
                if kind == ParamEventKind::EssentialReturn {
                    child.essential_depth += depth;
                }
                child.bind_until = if binding > 0 { n + binding } else { 0 };
                child.events = child.events.push(ParamEvent { kind, time: n, depth, binding });
                child
            })
            .collect();
        if !image.increasing {
            children.reverse();
        }
        children
    }
}

/// Solves c_n(a) = y on [lo, hi] by safeguarded Newton.
fn solve_curve(n: u32, lo: f64, hi: f64, increasing: bool, y: f64) -> f64 {
    let (mut l, mut h) = (lo, hi);
    let mut a = 0.5 * (l + h);
    for _ in 0..200 {
        let (c, dc) = critical_value_with_derivative(a, n);
        let g = c - y;
        if g == 0.0 {
            return a;
        }
        if (g > 0.0) == increasing {
            h = a;
        } else {
            l = a;
        }
        let mut next = a - g / dc;
        if !(next > l && next < h) {
            next = 0.5 * (l + h);
        }
        if next == a || (next - a).abs() <= f64::EPSILON * a.abs() {
            return next.clamp(l, h);
        }
        a = next;
    }
    a.clamp(l, h)
}

/// Classifies time n for an active element (builds the grid on each call).
pub fn classify_step(element: &ParamElement, n: u32, cfg: &ParamConfig) -> Result<StepEvent, ParamError> {
    let image = critical_curve((element.lo, element.hi), n)?;
    Ok(ParamGrid::new(cfg).classify(element, &image, n))
}

/// Chops an element at time n (builds the grid on each call).
pub fn chop(element: &ParamElement, n: u32, cfg: &ParamConfig) -> Result<Vec<ParamElement>, ParamError> {
    let image = critical_curve((element.lo, element.hi), n)?;
    Ok(ParamGrid::new(cfg).chop(element, &image, n, cfg))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RunStatus {
    Complete,
    /// The stored element count passed the budget; this level and later ones were not built.
    ElementBudget { level: u32 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: u32,
    pub retained: f64,
    /// Cumulative excluded measure.
    pub excluded: f64,
    /// Cumulative unresolved measure.
    pub unresolved: f64,
    pub newly_excluded: f64,
    pub active_elements: usize,
    pub excluded_elements: usize,
    pub chops: usize,
    pub max_depth: u32,
    pub sr_violations: usize,
    pub eg_violations: usize,
    pub bd_violations: usize,
    pub precision_exhausted: usize,
}

/// Mass of segments with Δℰ = R at escape index i.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QRecord {
    pub escape_index: u32,
    pub r_total: u32,
    pub mass: f64,
    pub segments: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExclusionRun {
    pub config: ParamConfig,
    pub omega: (f64, f64),
    pub requested_depth: u32,
    pub reached_depth: u32,
    /// Last level before the first chop (pre-inductive horizon N).
    pub horizon: u32,
    pub first_exclusion_level: Option<u32>,
    pub status: RunStatus,
    pub levels: Vec<LevelStats>,
    /// Final elements: active, excluded and unresolved, ordered by left endpoint.
    pub elements: Vec<ParamElement>,
    /// Exponential fit of newly excluded mass against level; γ stands in as −slope.
    pub exclusion_fit: Option<LinearFit>,
    pub q_records: Vec<QRecord>,
    /// Δℰ masses summed over escape indices (an element counts once per segment).
    pub q_masses: Vec<(u32, f64)>,
    /// Distinct return-depth sequences per Δℰ.
    pub q_sequences: Vec<(u32, usize)>,
    /// Fit of log #sequences against R; γ₀ stands in as the slope.
    pub gamma0_fit: Option<LinearFit>,
}

impl ExclusionRun {
    pub fn measure(&self) -> f64 {
        self.omega.1 - self.omega.0
    }

    pub fn retained_fraction(&self) -> f64 {
        self.levels.last().map(|l| l.retained).unwrap_or(0.0) / self.measure()
    }
}

#[derive(Default)]
struct Proxy {
    sr: bool,
    eg: bool,
    bd: bool,
}

/// (SR)/(EG)/(BD) proxies at the endpoints of an active element at level k.
fn proxies(e: &ParamElement, k: u32, cfg: &ParamConfig) -> Proxy {
    let mut out = Proxy::default();
    let mut dk = [0.0; 2];
    for (j, a) in [e.lo, e.hi].into_iter().enumerate() {
        let (mut x, mut dx, mut d) = (-a, -1.0, 1.0f64);
        let mut log_eg = 0.0;
        for i in 0..=k {
            if i == k {
                dk[j] = d;
                let ratio = -dx / d;
                if !(1.0 / 3.0..=3.0).contains(&ratio) {
                    out.bd = true;
                }
                if x.abs() < (-cfg.alpha * k as f64).exp() {
                    out.sr = true;
                }
            }
            log_eg += (2.0 * x).abs().ln();
            dx = 2.0 * x * dx - 1.0;
            d *= 2.0 * x;
            x = x * x - a;
        }
        if log_eg < cfg.hyperbolicity_c.ln() + cfg.lambda0 * (k + 1) as f64 {
            out.eg = true;
        }
    }
    let q = (dk[0] / dk[1]).abs();
    if !(q >= 1.0 / cfg.distortion && q <= cfg.distortion) {
        out.bd = true;
    }
    out
}

/// Builds Ω⁽⁰⁾ ⊃ Ω⁽¹⁾ ⊃ … ⊃ Ω⁽ⁿ⁾ for Ω = [2 − ε, 2].
pub fn run_exclusion(epsilon: f64, depth: u32, cfg: &ParamConfig) -> Result<ExclusionRun, ParamError> {
    let cfg = ParamConfig { epsilon, depth, ..cfg.clone() };
    cfg.validate()?;
    let grid = ParamGrid::new(&cfg);
    let root = ParamElement::root(epsilon);
    let omega = (root.lo, root.hi);
    let mut active = vec![root];
    let mut finished: Vec<ParamElement> = Vec::new();
    let mut levels = Vec::with_capacity(depth as usize + 1);
    let (mut excluded, mut unresolved) = (0.0, 0.0);
    let mut excluded_elements = 0usize;
    let mut max_depth = 0u32;
    let mut first_chop: Option<u32> = None;
    let mut first_exclusion: Option<u32> = None;
    let mut status = RunStatus::Complete;
    let mut reached = 0;

    for n in 0..=depth {
        if active.len() + finished.len() > cfg.max_elements {
            status = RunStatus::ElementBudget { level: n };
            break;
        }
        let results: Vec<(Vec<ParamElement>, bool)> = active
            .par_iter()
            .map(|e| step(e, n, &grid, &cfg))
            .collect();
        let chops = results.iter().filter(|r| r.1).count();
        let mut next = Vec::with_capacity(active.len());
        let mut newly_excluded = 0.0;
        let mut precision = 0;
        for child in results.into_iter().flat_map(|r| r.0) {
            match child.status {
                ElementStatus::Active => next.push(child),
                ElementStatus::Excluded { .. } => {
                    newly_excluded += child.width();
                    excluded_elements += 1;
                    max_depth = max_depth.max(child.events.last().map(|e| e.depth).unwrap_or(0));
                    finished.push(child);
                }
                ElementStatus::Unresolved { reason, .. } => {
                    if reason == UnresolvedReason::PrecisionExhausted {
                        precision += 1;
                    }
                    unresolved += child.width();
                    finished.push(child);
                }
            }
        }
        next.sort_by(|x, y| x.lo.total_cmp(&y.lo).then(x.hi.total_cmp(&y.hi)));
        active = next;
        excluded += newly_excluded;
        if chops > 0 && first_chop.is_none() {
            first_chop = Some(n);
        }
        if newly_excluded > 0.0 && first_exclusion.is_none() {
            first_exclusion = Some(n);
        }
        for e in &active {
            if let Some(ev) = e.events.last() {
                if ev.kind == ParamEventKind::EssentialReturn {
                    max_depth = max_depth.max(ev.depth);
                }
            }
        }
        let flags: Vec<Proxy> = active.par_iter().map(|e| proxies(e, n, &cfg)).collect();
        levels.push(LevelStats {
            level: n,
            retained: active.iter().map(|e| e.width()).sum(),
            excluded,
            unresolved,
            newly_excluded,
            active_elements: active.len(),
            excluded_elements,
            chops,
            max_depth,
            sr_violations: flags.iter().filter(|f| f.sr).count(),
            eg_violations: flags.iter().filter(|f| f.eg).count(),
            bd_violations: flags.iter().filter(|f| f.bd).count(),
            precision_exhausted: precision,
        });
        reached = n;
    }

    let mut elements = active;
    elements.extend(finished);
    elements.sort_by(|x, y| x.lo.total_cmp(&y.lo).then(x.hi.total_cmp(&y.hi)));

    let (xs, ys): (Vec<f64>, Vec<f64>) = levels
        .iter()
        .filter(|l| l.newly_excluded > 0.0)
        .map(|l| (l.level as f64, l.newly_excluded.ln()))
        .unzip();
    let exclusion_fit = linear_fit(&xs, &ys);
    let (q_records, q_masses, q_sequences) = q_hierarchy(&elements);
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        q_sequences.iter().filter(|q| q.0 > 0).map(|&(r, c)| (r as f64, (c as f64).ln())).unzip();
    let gamma0_fit = linear_fit(&xs, &ys);

    Ok(ExclusionRun {
        omega,
        requested_depth: depth,
        reached_depth: reached,
        horizon: first_chop.map(|c| c.saturating_sub(1)).unwrap_or(reached),
        first_exclusion_level: first_exclusion,
        status,
        levels,
        elements,
        exclusion_fit,
        q_records,
        q_masses,
        q_sequences,
        gamma0_fit,
        config: cfg,
    })
}

/// Advances one element through time n; the flag reports a chop.
fn step(e: &ParamElement, n: u32, grid: &ParamGrid, cfg: &ParamConfig) -> (Vec<ParamElement>, bool) {
    let unresolved = |reason| {
        let mut u = e.clone();
        u.status = ElementStatus::Unresolved { level: n, reason };
        (vec![u], false)
    };
    if e.width() < cfg.min_width {
        return unresolved(UnresolvedReason::PrecisionExhausted);
    }
    let image = match critical_curve((e.lo, e.hi), n) {
        Ok(im) => im,
        Err(_) => return unresolved(UnresolvedReason::MonotoneViolation),
    };
    match grid.classify(e, &image, n) {
        StepEvent::None | StepEvent::BindingContinue => (vec![e.clone()], false),
        event @ (StepEvent::InessentialReturn { depth } | StepEvent::InessentialEscape { depth }) => {
            let kind = if matches!(event, StepEvent::InessentialReturn { .. }) {
                ParamEventKind::InessentialReturn
            } else {
                ParamEventKind::InessentialEscape
            };
            let binding = binding_period_interval((e.lo, e.hi), n, cfg.alpha, cfg.binding_cap);
            let mut next = e.clone();
            next.events = next.events.push(ParamEvent { kind, time: n, depth, binding });
            next.bind_until = if binding > 0 { n + binding } else { 0 };
            (vec![next], false)
        }
        StepEvent::Chop => {
            let mut children = grid.chop(e, &image, n, cfg);
            for c in &mut children {
                if c.status == ElementStatus::Active && exceeds_threshold(c.essential_depth, n, cfg.alpha) {
                    c.status = ElementStatus::Excluded { level: n };
                }
            }
            (children, true)
        }
    }
}

type QSummary = (Vec<QRecord>, Vec<(u32, f64)>, Vec<(u32, usize)>);

/// Splits every itinerary at essential and substantial escapes and tallies Δℰ per segment.
fn q_hierarchy(elements: &[ParamElement]) -> QSummary {
    let mut records: BTreeMap<(u32, u32), (f64, usize)> = BTreeMap::new();
    let mut sequences: BTreeMap<u32, BTreeSet<Vec<u32>>> = BTreeMap::new();
    for e in elements {
        let events = e.events.to_vec();
        let mut index = 0u32;
        let mut depths: Vec<u32> = Vec::new();
        let mut close = |index: u32, depths: &mut Vec<u32>| {
            let r: u32 = depths.iter().sum();
            let entry = records.entry((index, r)).or_insert((0.0, 0));
            entry.0 += e.width();
            entry.1 += 1;
            sequences.entry(r).or_default().insert(std::mem::take(depths));
        };
        for ev in &events {
            if ev.kind == ParamEventKind::EssentialReturn {
                depths.push(ev.depth);
            }
            if ev.kind.is_escape_boundary() {
                close(index, &mut depths);
                index += 1;
            }
        }
        close(index, &mut depths);
    }
    let q_records: Vec<QRecord> = records
        .iter()
        .map(|(&(escape_index, r_total), &(mass, segments))| QRecord { escape_index, r_total, mass, segments })
        .collect();
    let mut masses: BTreeMap<u32, f64> = BTreeMap::new();
    for q in &q_records {
        *masses.entry(q.r_total).or_default() += q.mass;
    }
    let seqs = sequences.into_iter().map(|(r, s)| (r, s.len())).collect();
    (q_records, masses.into_iter().collect(), seqs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthTailFit {
    /// Fitted c in mass ≈ K e^{−cR}.
    pub c: f64,
    pub r_squared: f64,
    pub distinct: usize,
    /// Masses are non-increasing for R ≥ r_δ.
    pub monotone_beyond: bool,
}

/// Fits log mass against R over R > 0.
pub fn fit_depth_masses(masses: &[(u32, f64)], r_delta: u32) -> Result<DepthTailFit, ParamError> {
    let pts: Vec<(u32, f64)> = masses.iter().copied().filter(|&(r, m)| r > 0 && m > 0.0).collect();
    if pts.len() < 5 {
        return Err(ParamError::InsufficientData { distinct: pts.len() });
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let fit = linear_fit(&xs, &ys).ok_or(ParamError::InsufficientData { distinct: pts.len() })?;
    let beyond: Vec<f64> = pts.iter().filter(|p| p.0 >= r_delta).map(|p| p.1).collect();
    Ok(DepthTailFit {
        c: -fit.slope,
        r_squared: fit.r_squared,
        distinct: pts.len(),
        monotone_beyond: beyond.windows(2).all(|w| w[1] <= w[0]),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionTailReport {
    pub masses: Vec<(u32, f64)>,
    pub fit: DepthTailFit,
    /// Largest R where #sequences exceeds e^{ηR}, if any.
    pub count_bound_failure: Option<u32>,
}

/// Compares the Δℰ masses of a run with e^{−cR}, and the sequence counts with e^{ηR}.
pub fn composition_tail_check(run: &ExclusionRun, eta: f64) -> Result<CompositionTailReport, ParamError> {
    let fit = fit_depth_masses(&run.q_masses, run.config.r_delta())?;
    let count_bound_failure = run
        .q_sequences
        .iter()
        .filter(|&&(r, c)| r > 0 && c as f64 > (eta * r as f64).exp())
        .map(|q| q.0)
        .max();
    Ok(CompositionTailReport { masses: run.q_masses.clone(), fit, count_bound_failure })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeRatio {
    /// −c'_k(a)/(f_a^k)'(c₀) from the derivative recursion.
    pub ratio: f64,
    /// 1 + Σ_{i=1..k} 1/(f^i)'(c₀).
    pub series_value: f64,
}

/// The parameter-derivative ratio, computed by recursion and by the partial series.
pub fn parameter_derivative_ratio(a: f64, k: u32) -> Result<DerivativeRatio, ParamError> {
    let (mut x, mut dc, mut d) = (-a, -1.0f64, 1.0f64);
    let mut series = 1.0;
    for i in 0..k {
        if x == 0.0 {
            return Err(ParamError::AtCriticalPoint { a, step: i });
        }
        dc = 2.0 * x * dc - 1.0;
        d *= 2.0 * x;
        series += 1.0 / d;
        x = x * x - a;
    }
    Ok(DerivativeRatio { ratio: -dc / d, series_value: series })
}
