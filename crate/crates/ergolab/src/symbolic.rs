//! Cylinder sets of full-branch Markov maps, their diameters and derivative distortion.
//!
//! A depth-n cylinder has an n-letter word a₀…a_{n−1} and equals
//! {x : Fⁱ(x) ∈ B_{aᵢ}, i < n}. It is the image of the whole domain under the
//! composed inverse branches ψ_{a₀} ∘ … ∘ ψ_{a_{n−1}}, so endpoints and
//! distortion meshes are computed by pulling points back, never by pushing
//! them forward.

use crate::maps::{Branch, MapError, MapSpec};
use crate::rng;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_MESH: usize = 64;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SymbolicError {
    #[error("map has no full-branch Markov structure")]
    NotMarkov,
    #[error("truncation loss {loss} at depth {depth} exceeds {limit}")]
    TruncationLoss { depth: usize, loss: f64, limit: f64 },
    #[error("depth {depth} produces a cylinder of diameter {diameter}, below the rounding floor")]
    TooFine { depth: usize, diameter: f64 },
    #[error("cylinder touches the critical point {c}")]
    AtCriticalPoint { c: f64 },
    #[error("empty cylinder list")]
    Empty,
}

impl From<MapError> for SymbolicError {
    fn from(e: MapError) -> Self {
        match e {
            MapError::AtCriticalPoint { c, .. } => SymbolicError::AtCriticalPoint { c },
            _ => SymbolicError::NotMarkov,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    /// Largest tolerated mass outside all cylinders (Gauss truncation).
    pub max_truncation_loss: f64,
    /// Depths producing a smaller cylinder are refused.
    pub min_diameter: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions { max_truncation_loss: 1e-4, min_diameter: 1e-10 }
    }
}

/// One cylinder. The word is recovered through the parent chain with [`CylinderTree::word`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderNode {
    /// Last letter of the word.
    pub letter: u64,
    pub left: f64,
    pub right: f64,
    /// Number of letters.
    pub depth: usize,
    /// Index of the parent in the previous level.
    pub parent: Option<usize>,
}

impl CylinderNode {
    pub fn diameter(&self) -> f64 {
        self.right - self.left
    }
}

#[derive(Clone, Debug)]
pub struct CylinderTree {
    map: MapSpec,
    branches: Vec<Branch>,
    /// `levels[d - 1]` holds the depth-d cylinders ordered by left endpoint.
    pub levels: Vec<Vec<CylinderNode>>,
    /// Mass outside all cylinders of each depth.
    pub losses: Vec<f64>,
}

/// Gaps of the domain not covered by any branch.
fn gaps(domain: (f64, f64), branches: &[Branch]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut cursor = domain.0;
    for b in branches {
        if b.left > cursor {
            out.push((cursor, b.left));
        }
        cursor = cursor.max(b.right);
    }
    if cursor < domain.1 {
        out.push((cursor, domain.1));
    }
    out
}

/// ψ_{w₀} ∘ … ∘ ψ_{w_{n−1}}(y), applying the last letter first.
pub fn pull_back(map: &MapSpec, branches_by_label: &dyn Fn(u64) -> Branch, word: &[u64], y: f64) -> f64 {
    word.iter().rev().fold(y, |acc, &a| map.inverse(&branches_by_label(a), acc))
}

fn label_lookup(branches: &[Branch]) -> impl Fn(u64) -> Branch + '_ {
    move |label| {
        // Branches are sorted by left endpoint; labels are either ascending or descending in that order.
        let first = branches[0].label;
        let idx = if branches.len() > 1 && branches[1].label < first {
            (first - label) as usize
        } else {
            (label - first) as usize
        };
        branches[idx]
    }
}

impl CylinderTree {
    pub fn map(&self) -> &MapSpec {
        &self.map
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Cylinders of the given depth (1-based).
    pub fn cylinders(&self, depth: usize) -> &[CylinderNode] {
        &self.levels[depth - 1]
    }

    /// Full word of cylinder `index` at `depth`.
    pub fn word(&self, depth: usize, index: usize) -> Vec<u64> {
        let mut word = Vec::with_capacity(depth);
        let (mut d, mut i) = (depth, index);
        loop {
            let node = self.levels[d - 1][i];
            word.push(node.letter);
            match node.parent {
                Some(p) => {
                    d -= 1;
                    i = p;
                }
                None => break,
            }
        }
        word.reverse();
        word
    }

    pub fn branch(&self, label: u64) -> Branch {
        label_lookup(&self.branches)(label)
    }
}

/// All cylinders up to `depth`, refined level by level.
pub fn refine(map: &MapSpec, depth: usize, opts: RefineOptions) -> Result<CylinderTree, SymbolicError> {
    let branches = map.markov_branches().map_err(|_| SymbolicError::NotMarkov)?;
    if branches.is_empty() {
        return Err(SymbolicError::NotMarkov);
    }
    let domain = map.domain();
    let holes = gaps(domain, &branches);
    let mut tree = CylinderTree { map: map.clone(), branches: branches.clone(), levels: Vec::new(), losses: Vec::new() };
    if depth == 0 {
        return Ok(tree);
    }
    let first: Vec<CylinderNode> = branches
        .iter()
        .map(|b| CylinderNode { letter: b.label, left: b.left, right: b.right, depth: 1, parent: None })
        .collect();
    let first_loss: f64 = holes.iter().map(|(a, b)| b - a).sum();
    tree.levels.push(first);
    tree.losses.push(first_loss);
    check_level(&tree, 1, opts)?;
    for d in 2..=depth {
        let lookup = label_lookup(&branches);
        let parents = &tree.levels[d - 2];
        let per_parent: Vec<(Vec<CylinderNode>, f64)> = (0..parents.len())
            .into_par_iter()
            .map(|pi| {
                let word = tree.word(d - 1, pi);
                let mut kids: Vec<CylinderNode> = branches
                    .iter()
                    .map(|b| {
                        let u = pull_back(map, &lookup, &word, b.left);
                        let v = pull_back(map, &lookup, &word, b.right);
                        CylinderNode { letter: b.label, left: u.min(v), right: u.max(v), depth: d, parent: Some(pi) }
                    })
                    .collect();
                kids.sort_by(|a, b| a.left.total_cmp(&b.left));
                let lost: f64 = holes
                    .iter()
                    .map(|&(a, b)| (pull_back(map, &lookup, &word, b) - pull_back(map, &lookup, &word, a)).abs())
                    .sum();
                (kids, lost)
            })
            .collect();
        let mut level = Vec::with_capacity(parents.len() * branches.len());
        let mut loss = tree.losses[d - 2];
        for (kids, lost) in per_parent {
            level.extend(kids);
            loss += lost;
        }
        tree.levels.push(level);
        tree.losses.push(loss);
        check_level(&tree, d, opts)?;
    }
    Ok(tree)
}

fn check_level(tree: &CylinderTree, d: usize, opts: RefineOptions) -> Result<(), SymbolicError> {
    let loss = tree.losses[d - 1];
    if loss > opts.max_truncation_loss {
        return Err(SymbolicError::TruncationLoss { depth: d, loss, limit: opts.max_truncation_loss });
    }
    let min = tree.levels[d - 1].iter().map(CylinderNode::diameter).fold(f64::INFINITY, f64::min);
    if min < opts.min_diameter {
        return Err(SymbolicError::TooFine { depth: d, diameter: min });
    }
    Ok(())
}

/// Largest cylinder diameter.
pub fn max_diameter(cylinders: &[CylinderNode]) -> Result<f64, SymbolicError> {
    cylinders.iter().map(CylinderNode::diameter).reduce(f64::max).ok_or(SymbolicError::Empty)
}

/// τ = 1 − (|Δ| − δ_max)/(|Δ|𝒟), the contraction rate of cylinder diameters.
pub fn tau(domain_length: f64, delta_max: f64, distortion_constant: f64) -> f64 {
    1.0 - (domain_length - delta_max) / (domain_length * distortion_constant)
}

/// Dist(Fⁿ, ω) for the cylinder with the given word: the spread of log|DFⁿ| over
/// a mesh of `mesh + 1` points (endpoints included), placed uniformly in the
/// image Fⁿ(ω) = Δ and pulled back along the word.
pub fn word_distortion(map: &MapSpec, word: &[u64], mesh: usize) -> Result<f64, SymbolicError> {
    let branches = map.markov_branches().map_err(|_| SymbolicError::NotMarkov)?;
    let lookup = label_lookup(&branches);
    let (lo, hi) = map.domain();
    let crit = map.critical_set();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mesh = mesh.max(1);
    for j in 0..=mesh {
        let y = lo + (hi - lo) * j as f64 / mesh as f64;
        let mut z = y;
        let mut log_d = 0.0;
        for &a in word.iter().rev() {
            let b = lookup(a);
            z = map.inverse(&b, z);
            if let Some(p) = crit.points.iter().find(|p| {
                matches!(p.kind, crate::maps::CriticalKind::Critical | crate::maps::CriticalKind::Singular)
                    && z == p.location
            }) {
                return Err(SymbolicError::AtCriticalPoint { c: p.location });
            }
            log_d += map.branch_abs_deriv(&b, z).ln();
        }
        min = min.min(log_d);
        max = max.max(log_d);
    }
    Ok(max - min)
}

/// Distortion of a cylinder from a refined tree.
pub fn distortion(tree: &CylinderTree, depth: usize, index: usize, mesh: usize) -> Result<f64, SymbolicError> {
    word_distortion(tree.map(), &tree.word(depth, index), mesh)
}

/// Oscillation of log|DF| over the depth-`word.len()` cylinder: the one-step
/// contribution that cylinder makes to the distortion of longer compositions.
pub fn one_step_oscillation(map: &MapSpec, word: &[u64], mesh: usize) -> Result<f64, SymbolicError> {
    let branches = map.markov_branches().map_err(|_| SymbolicError::NotMarkov)?;
    let lookup = label_lookup(&branches);
    let (lo, hi) = map.domain();
    let first = lookup(word[0]);
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for j in 0..=mesh.max(1) {
        let y = lo + (hi - lo) * j as f64 / mesh.max(1) as f64;
        let x = pull_back(map, &lookup, word, y);
        let v = map.branch_abs_deriv(&first, x).ln();
        min = min.min(v);
        max = max.max(v);
    }
    Ok(max - min)
}

/// Itinerary of `x` for `depth` steps; `None` if the orbit enters a gap.
pub fn itinerary(map: &MapSpec, x: f64, depth: usize) -> Option<Vec<u64>> {
    let branches = map.markov_branches().ok()?;
    let mut word = Vec::with_capacity(depth);
    let mut z = x;
    let last = branches.len() - 1;
    for _ in 0..depth {
        let i = branches.partition_point(|b| b.left <= z);
        if i == 0 {
            return None;
        }
        let b = branches[i - 1];
        if z >= b.right && !(i - 1 == last && z == b.right) {
            return None;
        }
        word.push(b.label);
        z = map.branch_value(&b, z).clamp(map.domain().0, map.domain().1);
    }
    Some(word)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    /// `max_by_depth[d - 1]`: largest Dist(F^d, ω) among the sampled depth-d cylinders.
    pub max_by_depth: Vec<f64>,
    /// `increments[d - 1]`: largest one-step oscillation of log|DF| on a sampled depth-d cylinder.
    pub increments: Vec<f64>,
    pub mesh: usize,
    pub samples: usize,
}

impl DistortionReport {
    /// 𝒟 = exp(sup Dist) over every sampled depth.
    pub fn constant(&self) -> f64 {
        self.max_by_depth.iter().cloned().fold(0.0, f64::max).exp()
    }
}

/// Distortion statistics over cylinders containing `samples` seeded uniform points.
pub fn distortion_report(
    map: &MapSpec,
    max_depth: usize,
    samples: usize,
    mesh: usize,
    seed: u64,
) -> Result<DistortionReport, SymbolicError> {
    map.markov_branches().map_err(|_| SymbolicError::NotMarkov)?;
    let (lo, hi) = map.domain();
    let words: Vec<Vec<u64>> = (0..samples)
        .into_par_iter()
        .filter_map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let x = lo + (hi - lo) * r.gen::<f64>();
            itinerary(map, x, max_depth)
        })
        .collect();
    let per_word: Vec<Result<(Vec<f64>, Vec<f64>), SymbolicError>> = words
        .par_iter()
        .map(|w| {
            let mut dist = Vec::with_capacity(max_depth);
            let mut inc = Vec::with_capacity(max_depth);
            for d in 1..=max_depth {
                dist.push(word_distortion(map, &w[..d], mesh)?);
                inc.push(one_step_oscillation(map, &w[..d], mesh)?);
            }
            Ok((dist, inc))
        })
        .collect();
    let mut max_by_depth = vec![0.0; max_depth];
    let mut increments = vec![0.0; max_depth];
    for r in per_word {
        let (dist, inc) = r?;
        for d in 0..max_depth {
            max_by_depth[d] = f64::max(max_by_depth[d], dist[d]);
            increments[d] = f64::max(increments[d], inc[d]);
        }
    }
    Ok(DistortionReport { max_by_depth, increments, mesh, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_depth_three() {
        let t = refine(&MapSpec::circle(2), 3, RefineOptions::default()).unwrap();
        let c = t.cylinders(3);
        assert_eq!(c.len(), 8);
        assert!(c.iter().all(|n| n.diameter() == 0.125));
        assert_eq!(t.word(3, 5), vec![1, 0, 1]);
    }

    #[test]
    fn tent_depth_two() {
        let t = refine(&MapSpec::tent(), 2, RefineOptions::default()).unwrap();
        assert_eq!(t.cylinders(2).len(), 4);
        assert!(t.cylinders(2).iter().all(|n| n.diameter() == 0.25));
    }

    #[test]
    fn gauss_depth_one_matches_branch_domains() {
        let opts = RefineOptions { max_truncation_loss: 0.05, ..Default::default() };
        let t = refine(&MapSpec::gauss(50), 1, opts).unwrap();
        let c = t.cylinders(1);
        assert_eq!(c.len(), 50);
        for n in c {
            let r = n.letter as f64;
            assert!((n.left - 1.0 / (r + 1.0)).abs() < 1e-15 && (n.right - 1.0 / r).abs() < 1e-15);
        }
        assert!(matches!(
            refine(&MapSpec::gauss(50), 1, RefineOptions::default()),
            Err(SymbolicError::TruncationLoss { .. })
        ));
    }

    #[test]
    fn gauss_depth_two_shrinks() {
        let opts = RefineOptions { max_truncation_loss: 0.1, ..Default::default() };
        let t = refine(&MapSpec::gauss(50), 2, opts).unwrap();
        assert!(max_diameter(t.cylinders(2)).unwrap() < max_diameter(t.cylinders(1)).unwrap());
    }

    #[test]
    fn documented_distortions() {
        let g = MapSpec::gauss(10);
        assert!((word_distortion(&g, &[1], DEFAULT_MESH).unwrap() - 4f64.ln()).abs() < 1e-3);
        assert_eq!(word_distortion(&MapSpec::circle(2), &[1, 0, 1], DEFAULT_MESH).unwrap(), 0.0);
        assert_eq!(word_distortion(&MapSpec::tent(), &[1, 1, 0, 1], DEFAULT_MESH).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_cylinders_touch_the_critical_point() {
        let q = MapSpec::quadratic(2.0).unwrap();
        assert!(matches!(word_distortion(&q, &[1], 8), Err(SymbolicError::AtCriticalPoint { .. })));
    }

    #[test]
    fn non_markov_maps_are_refused() {
        assert!(matches!(refine(&MapSpec::four_branch(), 2, RefineOptions::default()), Err(SymbolicError::NotMarkov)));
    }

    #[test]
    fn tau_formula() {
        assert!((tau(1.0, 0.5, 4.0) - 0.875).abs() < 1e-15);
    }
}
