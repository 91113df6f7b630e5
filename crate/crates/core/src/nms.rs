//! Classical/Soft-NMS, unsupervised grouping and grouped differentiable
//! rescoring.
//!
//! Everything here works on score-sorted boxes: index 0 is the
//! highest-scored box. [`ScoredBoxSet`] performs the sort and keeps the
//! permutation back to the caller's ordering.
//!
//! Rescoring comes in two closed forms. The full form solves the
//! unit-lower-triangular system `(I + P) r = s` and clips. The grouped,
//! masked form keeps only the column of the prune matrix belonging to each
//! group's top box, so `I + M∘P` is a Gauss transform whose inverse is
//! `I − M∘P` and no solve is needed.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou2d, Box3D};

pub const DEFAULT_NT: f64 = 0.4;
pub const DEFAULT_VALID_THRESHOLD: f64 = 0.3;
pub const DEFAULT_MAX_GROUP_SIZE: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum NmsError {
    #[error("NMS threshold {0} must lie in (0, 1)")]
    InvalidThreshold(f64),
    #[error("{0:?} pruning needs a positive temperature")]
    MissingTemperature(PruneKind),
    #[error("hard pruning is not differentiable")]
    NotDifferentiable,
    #[error("score vector has length {scores} but overlap matrix is {rows}x{cols}")]
    ShapeMismatch {
        scores: usize,
        rows: usize,
        cols: usize,
    },
    #[error("overlap {0} outside [0, 1]")]
    InvalidOverlap(f64),
    #[error("grouping references box {index} but the set has {len} boxes")]
    InconsistentGrouping { index: usize, len: usize },
    #[error("maximum group size must be at least 1")]
    ZeroGroupSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneKind {
    Hard,
    Linear,
    Exponential,
    Sigmoidal,
}

impl std::str::FromStr for PruneKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hard" => Ok(Self::Hard),
            "linear" => Ok(Self::Linear),
            "exponential" | "exp" => Ok(Self::Exponential),
            "sigmoidal" | "sigmoid" => Ok(Self::Sigmoidal),
            other => Err(format!("unknown pruning function `{other}`")),
        }
    }
}

/// Pruning function `p(o)` with its threshold and temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneSpec {
    pub kind: PruneKind,
    pub nt: f64,
    pub tau: Option<f64>,
}

impl PruneSpec {
    pub fn new(kind: PruneKind, nt: f64, tau: Option<f64>) -> Result<Self, NmsError> {
        if !(nt > 0.0 && nt < 1.0) {
            return Err(NmsError::InvalidThreshold(nt));
        }
        if matches!(kind, PruneKind::Exponential | PruneKind::Sigmoidal)
            && !tau.is_some_and(|t| t > 0.0)
        {
            return Err(NmsError::MissingTemperature(kind));
        }
        Ok(Self { kind, nt, tau })
    }

    pub fn hard(nt: f64) -> Self {
        Self::new(PruneKind::Hard, nt, None).expect("valid hard spec")
    }

    pub fn linear(nt: f64) -> Self {
        Self::new(PruneKind::Linear, nt, None).expect("valid linear spec")
    }

    pub fn exponential(nt: f64, tau: f64) -> Result<Self, NmsError> {
        Self::new(PruneKind::Exponential, nt, Some(tau))
    }

    pub fn sigmoidal(nt: f64, tau: f64) -> Result<Self, NmsError> {
        Self::new(PruneKind::Sigmoidal, nt, Some(tau))
    }

    pub fn is_differentiable(&self) -> bool {
        self.kind != PruneKind::Hard
    }

    fn tau(&self) -> Result<f64, NmsError> {
        self.tau
            .filter(|t| *t > 0.0)
            .ok_or(NmsError::MissingTemperature(self.kind))
    }

    /// Evaluates `p(o)`.
    pub fn prune(&self, o: f64) -> Result<f64, NmsError> {
        Ok(match self.kind {
            PruneKind::Hard => {
                if o > self.nt {
                    1.0
                } else {
                    0.0
                }
            }
            PruneKind::Linear => o,
            PruneKind::Exponential => 1.0 - (-o * o / self.tau()?).exp(),
            PruneKind::Sigmoidal => sigmoid((o - self.nt) / self.tau()?),
        })
    }

    /// Derivative `p′(o)`; zero almost everywhere for hard pruning.
    pub fn prune_derivative(&self, o: f64) -> Result<f64, NmsError> {
        Ok(match self.kind {
            PruneKind::Hard => 0.0,
            PruneKind::Linear => 1.0,
            PruneKind::Exponential => {
                let tau = self.tau()?;
                2.0 * o / tau * (-o * o / tau).exp()
            }
            PruneKind::Sigmoidal => {
                let tau = self.tau()?;
                let y = sigmoid((o - self.nt) / tau);
                y * (1.0 - y) / tau
            }
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Evaluates `spec`'s pruning function at overlap `o`.
pub fn prune(spec: &PruneSpec, o: f64) -> Result<f64, NmsError> {
    spec.prune(o)
}

fn clip01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Clip gate: derivative of `clip01` taken as 1 on the closed interval.
fn clip_gate(x: f64) -> f64 {
    if (0.0..=1.0).contains(&x) {
        1.0
    } else {
        0.0
    }
}

/// Score-sorted boxes with their pairwise IoU2D matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBoxSet {
    /// Boxes in sorted order; empty when built from raw scores.
    pub boxes: Vec<Box3D>,
    /// Scores, non-increasing.
    pub scores: Vec<f64>,
    /// `perm[k]` is the caller's index of sorted box `k`.
    pub perm: Vec<usize>,
    /// Symmetric IoU2D matrix in sorted order with unit diagonal.
    pub overlaps: DMatrix<f64>,
}

fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable: ties keep the caller's order
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

impl ScoredBoxSet {
    pub fn from_boxes(boxes: &[Box3D]) -> Self {
        let scores: Vec<f64> = boxes.iter().map(|b| b.score).collect();
        let perm = descending_order(&scores);
        let sorted: Vec<Box3D> = perm.iter().map(|&i| boxes[i]).collect();
        let n = sorted.len();
        let overlaps = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else {
                iou2d(&sorted[i].box2d, &sorted[j].box2d)
            }
        });
        Self {
            scores: sorted.iter().map(|b| b.score).collect(),
            boxes: sorted,
            perm,
            overlaps,
        }
    }

    /// Builds a set from raw scores and a symmetric overlap matrix, both in
    /// the caller's order. The diagonal is forced to one.
    pub fn from_scores(scores: &[f64], overlaps: &DMatrix<f64>) -> Result<Self, NmsError> {
        let n = scores.len();
        if overlaps.nrows() != n || overlaps.ncols() != n {
            return Err(NmsError::ShapeMismatch {
                scores: n,
                rows: overlaps.nrows(),
                cols: overlaps.ncols(),
            });
        }
        if let Some(&bad) = overlaps.iter().find(|o| !(0.0..=1.0).contains(*o)) {
            return Err(NmsError::InvalidOverlap(bad));
        }
        let perm = descending_order(scores);
        let sorted = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else {
                overlaps[(perm[i], perm[j])]
            }
        });
        Ok(Self {
            boxes: Vec::new(),
            scores: perm.iter().map(|&i| scores[i]).collect(),
            perm,
            overlaps: sorted,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Maps a per-box vector in sorted order back to the caller's order.
    pub fn to_original_order(&self, sorted_values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; sorted_values.len()];
        for (k, &orig) in self.perm.iter().enumerate() {
            out[orig] = sorted_values[k];
        }
        out
    }
}

/// Groups of sorted indices produced by [`group_boxes`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grouping {
    pub groups: Vec<Vec<usize>>,
    pub alpha: usize,
    /// Boxes that overlapped a group top but did not fit under the size cap.
    pub suppressed_overflow: Vec<usize>,
}

impl Grouping {
    pub fn tops(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g[0]).collect()
    }
}

/// Greedy IoU2D grouping: the highest-scored remaining box collects every
/// remaining box overlapping it by more than `nt`; the first `alpha` form a
/// group, the rest overflow, and the loop continues on the low-overlap
/// remainder.
pub fn group_boxes(set: &ScoredBoxSet, nt: f64, alpha: usize) -> Result<Grouping, NmsError> {
    if alpha == 0 {
        return Err(NmsError::ZeroGroupSize);
    }
    let mut remaining: Vec<usize> = (0..set.len()).collect();
    let mut groups = Vec::new();
    let mut suppressed_overflow = Vec::new();
    while let Some(&top) = remaining.first() {
        let (high, low): (Vec<usize>, Vec<usize>) = remaining
            .iter()
            .partition(|&&i| i == top || set.overlaps[(i, top)] > nt);
        let kept = high.len().min(alpha);
        groups.push(high[..kept].to_vec());
        suppressed_overflow.extend_from_slice(&high[kept..]);
        remaining = low;
    }
    Ok(Grouping {
        groups,
        alpha,
        suppressed_overflow,
    })
}

/// Sparse Jacobian entry `∂r_row / ∂O[row, col]` (sorted indices).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapGrad {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Rescores in sorted order plus the original-index permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct RescoreResult {
    pub rescores: Vec<f64>,
    pub perm: Vec<usize>,
}

impl RescoreResult {
    /// Caller-order indices whose rescore is at least `v`.
    pub fn valid(&self, v: f64) -> Vec<usize> {
        select_valid(&self.rescores, &self.perm, v)
    }

    pub fn rescores_original(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rescores.len()];
        for (k, &orig) in self.perm.iter().enumerate() {
            out[orig] = self.rescores[k];
        }
        out
    }
}

/// Indices (in the caller's order, ascending) of boxes with `r ≥ v`.
pub fn select_valid(rescores: &[f64], perm: &[usize], v: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = rescores
        .iter()
        .zip(perm)
        .filter(|(r, _)| **r >= v)
        .map(|(_, &p)| p)
        .collect();
    idx.sort_unstable();
    idx
}

fn check_grouping(set: &ScoredBoxSet, grouping: &Grouping) -> Result<(), NmsError> {
    let len = set.len();
    let all = grouping
        .groups
        .iter()
        .flatten()
        .chain(&grouping.suppressed_overflow);
    for &index in all {
        if index >= len {
            return Err(NmsError::InconsistentGrouping { index, len });
        }
    }
    Ok(())
}

/// Pre-clip rescore of a box and the group top it was suppressed by.
type Preclip = Option<(f64, Option<usize>)>;

/// Pre-clip masked rescore of every box; overflow boxes map to `None`.
fn masked_preclip(
    set: &ScoredBoxSet,
    grouping: &Grouping,
    spec: &PruneSpec,
) -> Result<Vec<Preclip>, NmsError> {
    check_grouping(set, grouping)?;
    let mut pre = vec![None; set.len()];
    for group in &grouping.groups {
        let top = group[0];
        pre[top] = Some((set.scores[top], None));
        for &i in &group[1..] {
            let p = spec.prune(set.overlaps[(i, top)])?;
            pre[i] = Some((set.scores[i] - p * set.scores[top], Some(top)));
        }
    }
    Ok(pre)
}

/// Grouped, masked rescoring `r_G = clip((I − M∘P) s_G)`.
///
/// Group tops keep their score, other members lose `p(o_i,top)·s_top`, and
/// boxes dropped by the group-size cap are rescored to zero.
pub fn groomed_rescore(
    set: &ScoredBoxSet,
    grouping: &Grouping,
    spec: &PruneSpec,
) -> Result<RescoreResult, NmsError> {
    let pre = masked_preclip(set, grouping, spec)?;
    let rescores = pre
        .into_iter()
        .map(|p| p.map_or(0.0, |(x, _)| clip01(x)))
        .collect();
    Ok(RescoreResult {
        rescores,
        perm: set.perm.clone(),
    })
}

/// Ungrouped rescoring `r = clip((I + P)⁻¹ s)` by forward substitution on
/// the unit-lower-triangular system.
pub fn groomed_rescore_full(set: &ScoredBoxSet, spec: &PruneSpec) -> Result<RescoreResult, NmsError> {
    let n = set.len();
    let mut solved = vec![0.0; n];
    for i in 0..n {
        let mut acc = set.scores[i];
        for (j, r) in solved[..i].iter().enumerate() {
            acc -= spec.prune(set.overlaps[(i, j)])? * r;
        }
        solved[i] = acc;
    }
    Ok(RescoreResult {
        rescores: solved.into_iter().map(clip01).collect(),
        perm: set.perm.clone(),
    })
}

/// Greedy Classical/Soft-NMS: repeatedly take the remaining box with the
/// highest rescore and decay every other remaining box by `1 − p(o)`.
pub fn reference_nms(set: &ScoredBoxSet, spec: &PruneSpec) -> Result<RescoreResult, NmsError> {
    let n = set.len();
    let mut r = set.scores.clone();
    let mut remaining: Vec<usize> = (0..n).collect();
    while !remaining.is_empty() {
        let (pos, _) = remaining
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (pos, &i)| {
                if r[i] > best.1 {
                    (pos, r[i])
                } else {
                    best
                }
            });
        let top = remaining.remove(pos);
        for &i in &remaining {
            r[i] *= 1.0 - spec.prune(set.overlaps[(top, i)])?;
        }
    }
    Ok(RescoreResult {
        rescores: r,
        perm: set.perm.clone(),
    })
}

/// Analytic Jacobians of [`groomed_rescore`] at a fixed grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct RescoreJacobians {
    /// `jac_s[(i, j)] = ∂r_i/∂s_j`, sorted indices.
    pub jac_s: DMatrix<f64>,
    /// Non-zero `∂r_i/∂O[i, top]` entries.
    pub jac_o: Vec<OverlapGrad>,
}

pub fn rescore_jacobians(
    set: &ScoredBoxSet,
    grouping: &Grouping,
    spec: &PruneSpec,
) -> Result<RescoreJacobians, NmsError> {
    if !spec.is_differentiable() {
        return Err(NmsError::NotDifferentiable);
    }
    let n = set.len();
    let pre = masked_preclip(set, grouping, spec)?;
    let mut jac_s = DMatrix::zeros(n, n);
    let mut jac_o = Vec::new();
    for (i, entry) in pre.into_iter().enumerate() {
        let Some((x, top)) = entry else { continue };
        let gate = clip_gate(x);
        if gate == 0.0 {
            continue;
        }
        jac_s[(i, i)] = gate;
        if let Some(t) = top {
            let o = set.overlaps[(i, t)];
            jac_s[(i, t)] = -spec.prune(o)? * gate;
            jac_o.push(OverlapGrad {
                row: i,
                col: t,
                value: -spec.prune_derivative(o)? * set.scores[t] * gate,
            });
        }
    }
    Ok(RescoreJacobians { jac_s, jac_o })
}

/// Rescores with all three algorithms plus the groomed keep decision.
#[derive(Debug, Clone, PartialEq)]
pub struct NmsComparison {
    /// Caller-order rows.
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub box_id: usize,
    pub score: f64,
    pub rescore_classical: f64,
    pub rescore_soft: f64,
    pub rescore_groomed: f64,
    pub kept: bool,
}

/// Runs classical NMS (hard pruning), Soft-NMS and grouped rescoring with
/// `spec` side by side.
pub fn compare_nms(
    set: &ScoredBoxSet,
    spec: &PruneSpec,
    v: f64,
    alpha: usize,
) -> Result<NmsComparison, NmsError> {
    let classical = reference_nms(set, &PruneSpec::hard(spec.nt))?.rescores_original();
    let soft_spec = if spec.kind == PruneKind::Hard {
        PruneSpec::linear(spec.nt)
    } else {
        *spec
    };
    let soft = reference_nms(set, &soft_spec)?.rescores_original();
    let grouping = group_boxes(set, spec.nt, alpha)?;
    let groomed = groomed_rescore(set, &grouping, spec)?.rescores_original();
    let scores = set.to_original_order(&set.scores);
    let rows = (0..set.len())
        .map(|i| ComparisonRow {
            box_id: i,
            score: scores[i],
            rescore_classical: classical[i],
            rescore_soft: soft[i],
            rescore_groomed: groomed[i],
            kept: groomed[i] >= v,
        })
        .collect();
    Ok(NmsComparison { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_box_set() -> ScoredBoxSet {
        let o = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        ScoredBoxSet::from_scores(&[0.9, 0.6], &o).unwrap()
    }

    fn three_box_set() -> ScoredBoxSet {
        #[rustfmt::skip]
        let o = DMatrix::from_row_slice(3, 3, &[
            1.0, 0.6, 0.1,
            0.6, 1.0, 0.0,
            0.1, 0.0, 1.0,
        ]);
        ScoredBoxSet::from_scores(&[0.9, 0.8, 0.7], &o).unwrap()
    }

    #[test]
    fn prune_examples() {
        assert_eq!(PruneSpec::linear(0.4).prune(0.5).unwrap(), 0.5);
        let e = PruneSpec::exponential(0.4, 0.5).unwrap();
        assert_abs_diff_eq!(e.prune(0.5).unwrap(), 0.393_469_340_287_366_6, epsilon = 1e-12);
        let h = PruneSpec::hard(0.4);
        assert_eq!(h.prune(0.5).unwrap(), 1.0);
        assert_eq!(h.prune(0.3).unwrap(), 0.0);
        assert_eq!(h.prune(0.4).unwrap(), 0.0);
    }

    #[test]
    fn prune_requires_temperature() {
        assert_eq!(
            PruneSpec::new(PruneKind::Exponential, 0.4, None),
            Err(NmsError::MissingTemperature(PruneKind::Exponential))
        );
        assert!(PruneSpec::new(PruneKind::Sigmoidal, 0.4, Some(0.0)).is_err());
        assert!(PruneSpec::new(PruneKind::Linear, 1.0, None).is_err());
        // a hand-built spec without temperature fails at evaluation time
        let raw = PruneSpec { kind: PruneKind::Sigmoidal, nt: 0.4, tau: None };
        assert!(raw.prune(0.2).is_err());
    }

    #[test]
    fn prune_derivative_matches_central_difference() {
        let h = 1e-6;
        for spec in [
            PruneSpec::linear(0.4),
            PruneSpec::exponential(0.4, 0.5).unwrap(),
            PruneSpec::sigmoidal(0.4, 0.1).unwrap(),
        ] {
            for o in [0.1, 0.35, 0.5, 0.9] {
                let fd = (spec.prune(o + h).unwrap() - spec.prune(o - h).unwrap()) / (2.0 * h);
                assert_abs_diff_eq!(spec.prune_derivative(o).unwrap(), fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn grouping_examples() {
        let single = ScoredBoxSet::from_scores(&[0.5], &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(group_boxes(&single, 0.4, 100).unwrap().groups, vec![vec![0]]);

        let set = three_box_set();
        let g = group_boxes(&set, 0.4, 100).unwrap();
        assert_eq!(g.groups, vec![vec![0, 1], vec![2]]);
        assert!(g.suppressed_overflow.is_empty());

        let capped = group_boxes(&set, 0.4, 1).unwrap();
        assert_eq!(capped.groups, vec![vec![0], vec![2]]);
        assert_eq!(capped.suppressed_overflow, vec![1]);
    }

    #[test]
    fn grouping_empty_set() {
        let empty = ScoredBoxSet::from_scores(&[], &DMatrix::zeros(0, 0)).unwrap();
        let g = group_boxes(&empty, 0.4, 10).unwrap();
        assert!(g.groups.is_empty());
        assert!(group_boxes(&empty, 0.4, 0).is_err());
    }

    #[test]
    fn masked_rescore_examples() {
        let single = ScoredBoxSet::from_scores(&[0.9], &DMatrix::identity(1, 1)).unwrap();
        let g = group_boxes(&single, 0.4, 100).unwrap();
        assert_eq!(groomed_rescore(&single, &g, &PruneSpec::linear(0.4)).unwrap().rescores, vec![0.9]);

        let set = two_box_set();
        let g = group_boxes(&set, 0.4, 100).unwrap();
        let r = groomed_rescore(&set, &g, &PruneSpec::linear(0.4)).unwrap().rescores;
        assert_abs_diff_eq!(r[0], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(r[1], 0.15, epsilon = 1e-12);

        let r = groomed_rescore(&set, &g, &PruneSpec::hard(0.4)).unwrap().rescores;
        assert_eq!(r, vec![0.9, 0.0]);
    }

    #[test]
    fn overflow_boxes_rescored_to_zero() {
        let set = three_box_set();
        let g = group_boxes(&set, 0.4, 1).unwrap();
        let r = groomed_rescore(&set, &g, &PruneSpec::linear(0.4)).unwrap().rescores;
        assert_eq!(r, vec![0.9, 0.0, 0.7]);
    }

    #[test]
    fn full_rescore_examples() {
        let single = ScoredBoxSet::from_scores(&[0.9], &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(groomed_rescore_full(&single, &PruneSpec::linear(0.4)).unwrap().rescores, vec![0.9]);

        let r = groomed_rescore_full(&two_box_set(), &PruneSpec::linear(0.4)).unwrap().rescores;
        assert_abs_diff_eq!(r[1], 0.15, epsilon = 1e-12);

        #[rustfmt::skip]
        let o = DMatrix::from_row_slice(3, 3, &[
            1.0, 0.5, 0.2,
            0.5, 1.0, 0.4,
            0.2, 0.4, 1.0,
        ]);
        let set = ScoredBoxSet::from_scores(&[0.9, 0.6, 0.5], &o).unwrap();
        let r = groomed_rescore_full(&set, &PruneSpec::linear(0.4)).unwrap().rescores;
        assert_abs_diff_eq!(r[0], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(r[1], 0.15, epsilon = 1e-12);
        assert_abs_diff_eq!(r[2], 0.26, epsilon = 1e-12);
    }

    #[test]
    fn reference_nms_examples() {
        let apart = ScoredBoxSet::from_scores(&[0.9, 0.6], &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(reference_nms(&apart, &PruneSpec::hard(0.4)).unwrap().rescores, vec![0.9, 0.6]);

        let set = two_box_set();
        assert_eq!(reference_nms(&set, &PruneSpec::hard(0.4)).unwrap().rescores, vec![0.9, 0.0]);
        let r = reference_nms(&set, &PruneSpec::linear(0.4)).unwrap().rescores;
        assert_abs_diff_eq!(r[1], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn jacobian_examples() {
        let single = ScoredBoxSet::from_scores(&[0.9], &DMatrix::identity(1, 1)).unwrap();
        let g = group_boxes(&single, 0.4, 100).unwrap();
        let j = rescore_jacobians(&single, &g, &PruneSpec::linear(0.4)).unwrap();
        assert_eq!(j.jac_s, DMatrix::identity(1, 1));
        assert!(j.jac_o.is_empty());

        let set = two_box_set();
        let g = group_boxes(&set, 0.4, 100).unwrap();
        let j = rescore_jacobians(&set, &g, &PruneSpec::linear(0.4)).unwrap();
        assert_abs_diff_eq!(j.jac_s[(1, 0)], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(j.jac_s[(1, 1)], 1.0, epsilon = 1e-12);
        assert_eq!(j.jac_o.len(), 1);
        assert_eq!((j.jac_o[0].row, j.jac_o[0].col), (1, 0));
        assert_abs_diff_eq!(j.jac_o[0].value, -0.9, epsilon = 1e-12);

        assert_eq!(
            rescore_jacobians(&set, &g, &PruneSpec::hard(0.4)),
            Err(NmsError::NotDifferentiable)
        );
    }

    #[test]
    fn select_valid_examples() {
        let set = two_box_set();
        let g = group_boxes(&set, 0.4, 100).unwrap();
        let r = groomed_rescore(&set, &g, &PruneSpec::linear(0.4)).unwrap();
        assert_eq!(r.valid(0.3), vec![0]);
        assert_eq!(r.valid(0.1), vec![0, 1]);
        assert!(select_valid(&[], &[], 0.3).is_empty());
    }

    #[test]
    fn sorting_is_stable_and_restores_order() {
        let o = DMatrix::identity(3, 3);
        let set = ScoredBoxSet::from_scores(&[0.2, 0.8, 0.8], &o).unwrap();
        assert_eq!(set.perm, vec![1, 2, 0]);
        assert_eq!(set.to_original_order(&set.scores), vec![0.2, 0.8, 0.8]);
    }

    #[test]
    fn shape_and_overlap_validation() {
        let o = DMatrix::identity(2, 2);
        assert!(matches!(
            ScoredBoxSet::from_scores(&[0.5], &o),
            Err(NmsError::ShapeMismatch { .. })
        ));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 1.0]);
        assert!(ScoredBoxSet::from_scores(&[0.5, 0.4], &bad).is_err());
    }

    #[test]
    fn inconsistent_grouping_rejected() {
        let set = two_box_set();
        let g = Grouping { groups: vec![vec![0, 5]], alpha: 10, suppressed_overflow: vec![] };
        assert!(matches!(
            groomed_rescore(&set, &g, &PruneSpec::linear(0.4)),
            Err(NmsError::InconsistentGrouping { index: 5, .. })
        ));
    }
}
