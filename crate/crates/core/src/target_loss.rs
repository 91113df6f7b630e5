//! Best-box target assignment and the imagewise AP loss.

use thiserror::Error;

use crate::geometry::{giou3d, iou2d, Box3D, GeometryError};

#[derive(Debug, Error, PartialEq)]
pub enum TargetError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("beta {0} must lie in (0, 1)")]
    InvalidBeta(f64),
    #[error("image {image}: {rescores} rescores but {labels} labels")]
    LengthMismatch {
        image: usize,
        rescores: usize,
        labels: usize,
    },
    #[error("{images_r} rescore images but {images_l} label images")]
    ImageCountMismatch { images_r: usize, images_l: usize },
    #[error("quality matrix row {row} has {len} entries, expected {expected}")]
    RaggedQuality { row: usize, len: usize, expected: usize },
}

/// `q(b, g) = IoU2D(b, g) · (1 + gIoU3D(b, g)) / 2`.
pub fn quality(b: &Box3D, g: &Box3D) -> Result<f64, TargetError> {
    Ok(iou2d(&b.box2d, &g.box2d) * (1.0 + giou3d(b, g)?) / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub labels: Vec<u8>,
    /// Best quality of each box over all ground truths (0 when none).
    pub quality: Vec<f64>,
    /// Ground truth matched by each positive box.
    pub matched_gt: Vec<Option<usize>>,
}

impl Assignment {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

pub fn assign_targets(boxes: &[Box3D], gts: &[Box3D], beta: f64) -> Result<Assignment, TargetError> {
    let q = boxes
        .iter()
        .map(|b| gts.iter().map(|g| quality(b, g)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    assign_from_quality(&q, gts.len(), beta)
}

/// Assignment from a precomputed `boxes × gts` quality matrix.
///
/// Each ground truth nominates its argmax box (lowest index on ties); the
/// nomination stands if its quality reaches `beta`. A box nominated by
/// several ground truths keeps the one with the highest quality, then the
/// lowest index.
pub fn assign_from_quality(q: &[Vec<f64>], n_gts: usize, beta: f64) -> Result<Assignment, TargetError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(TargetError::InvalidBeta(beta));
    }
    for (row, r) in q.iter().enumerate() {
        if r.len() != n_gts {
            return Err(TargetError::RaggedQuality {
                row,
                len: r.len(),
                expected: n_gts,
            });
        }
    }
    let n = q.len();
    let mut matched_gt: Vec<Option<usize>> = vec![None; n];
    for l in 0..n_gts {
        let Some((best, best_q)) = (0..n).fold(None, |acc: Option<(usize, f64)>, j| match acc {
            Some((_, bq)) if q[j][l] <= bq => acc,
            _ => Some((j, q[j][l])),
        }) else {
            break;
        };
        if best_q < beta {
            continue;
        }
        match matched_gt[best] {
            Some(prev) if q[best][prev] >= best_q => {}
            _ => matched_gt[best] = Some(l),
        }
    }
    let labels = matched_gt.iter().map(|m| u8::from(m.is_some())).collect();
    let quality = q
        .iter()
        .map(|r| r.iter().copied().fold(0.0, f64::max))
        .collect();
    Ok(Assignment {
        labels,
        quality,
        matched_gt,
    })
}

/// Ranks boxes by descending rescore; ties keep index order.
/// Returns `rank[i]`, 1-based.
pub fn ranks(rescores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rescores.len()).collect();
    order.sort_by(|&a, &b| rescores[b].total_cmp(&rescores[a]));
    let mut rank = vec![0; rescores.len()];
    for (pos, &i) in order.iter().enumerate() {
        rank[i] = pos + 1;
    }
    rank
}

/// Average precision of one image: mean precision at each positive's rank.
/// An image without positives scores 1.
pub fn average_precision(rescores: &[f64], labels: &[u8]) -> Result<f64, TargetError> {
    if rescores.len() != labels.len() {
        return Err(TargetError::LengthMismatch {
            image: 0,
            rescores: rescores.len(),
            labels: labels.len(),
        });
    }
    let rank = ranks(rescores);
    let mut pos_ranks: Vec<usize> = rank
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&r, _)| r)
        .collect();
    if pos_ranks.is_empty() {
        return Ok(1.0);
    }
    pos_ranks.sort_unstable();
    let sum: f64 = pos_ranks
        .iter()
        .enumerate()
        .map(|(k, &r)| (k + 1) as f64 / r as f64)
        .sum();
    Ok(sum / pos_ranks.len() as f64)
}

/// `1 − mean AP` over images. No images gives a loss of 0.
pub fn imagewise_ap(rescores_per_image: &[Vec<f64>], labels_per_image: &[Vec<u8>]) -> Result<f64, TargetError> {
    let aps = per_image_ap(rescores_per_image, labels_per_image)?;
    if aps.is_empty() {
        return Ok(0.0);
    }
    Ok(1.0 - aps.iter().sum::<f64>() / aps.len() as f64)
}

pub fn per_image_ap(rescores_per_image: &[Vec<f64>], labels_per_image: &[Vec<u8>]) -> Result<Vec<f64>, TargetError> {
    if rescores_per_image.len() != labels_per_image.len() {
        return Err(TargetError::ImageCountMismatch {
            images_r: rescores_per_image.len(),
            images_l: labels_per_image.len(),
        });
    }
    rescores_per_image
        .iter()
        .zip(labels_per_image)
        .enumerate()
        .map(|(image, (r, l))| {
            average_precision(r, l).map_err(|e| match e {
                TargetError::LengthMismatch { rescores, labels, .. } => TargetError::LengthMismatch {
                    image,
                    rescores,
                    labels,
                },
                other => other,
            })
        })
        .collect()
}

/// One row of the per-image ranking table.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingRow {
    pub box_id: usize,
    pub rescore: f64,
    pub label: u8,
    pub rank: usize,
    pub ap: f64,
}

pub fn ranking_rows(rescores: &[f64], labels: &[u8]) -> Result<Vec<RankingRow>, TargetError> {
    let ap = average_precision(rescores, labels)?;
    let rank = ranks(rescores);
    Ok((0..rescores.len())
        .map(|i| RankingRow {
            box_id: i,
            rescore: rescores[i],
            label: labels[i],
            rank: rank[i],
            ap,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box2D;
    use approx::assert_abs_diff_eq;

    fn car(cx: f64, score: f64, b2: [f64; 4]) -> Box3D {
        Box3D::new(
            [cx, 1.0, 20.0],
            [4.0, 1.6, 1.5],
            0.0,
            score,
            Box2D::new(b2[0], b2[1], b2[2], b2[3]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn quality_of_identical_boxes_is_one() {
        let b = car(0.0, 0.9, [100.0, 100.0, 200.0, 160.0]);
        assert_abs_diff_eq!(quality(&b, &b).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn quality_zero_without_2d_overlap() {
        let b = car(0.0, 0.9, [100.0, 100.0, 200.0, 160.0]);
        let g = car(0.0, 0.9, [300.0, 100.0, 400.0, 160.0]);
        assert_eq!(quality(&b, &g).unwrap(), 0.0);
    }

    #[test]
    fn quality_formula_with_known_factors() {
        // IoU2D = 0.8 from a 10x10 box against a 10x8 box inside it, and
        // gIoU3D = 1/2 from two 2x1x1 boxes sharing 4/3 of their length
        // along x: IoU = (4/3)/(8/3) = 1/2 and the hull equals the union.
        let b2 = Box2D::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let g2 = Box2D::new(0.0, 0.0, 10.0, 8.0).unwrap();
        let b = Box3D::new([0.0, 0.0, 0.0], [2.0, 1.0, 1.0], 0.0, 0.5, b2).unwrap();
        let g = Box3D::new([2.0 / 3.0, 0.0, 0.0], [2.0, 1.0, 1.0], 0.0, 0.5, g2).unwrap();
        assert_abs_diff_eq!(iou2d(&b2, &g2), 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(giou3d(&b, &g).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(quality(&b, &g).unwrap(), 0.6, epsilon = 1e-12);
    }

    #[test]
    fn assignment_examples() {
        let a = assign_from_quality(&[vec![0.6]], 1, 0.3).unwrap();
        assert_eq!(a.labels, vec![1]);
        assert_eq!(a.matched_gt, vec![Some(0)]);
        let a = assign_from_quality(&[vec![0.2]], 1, 0.3).unwrap();
        assert_eq!(a.labels, vec![0]);
        let a = assign_from_quality(&[vec![0.6], vec![0.5]], 1, 0.3).unwrap();
        assert_eq!(a.labels, vec![1, 0]);
    }

    #[test]
    fn assignment_ties_and_conflicts() {
        let a = assign_from_quality(&[vec![0.5], vec![0.5]], 1, 0.3).unwrap();
        assert_eq!(a.labels, vec![1, 0]);
        // box 0 is the argmax for both gts; the higher-quality gt wins
        let a = assign_from_quality(&[vec![0.5, 0.7], vec![0.1, 0.2]], 2, 0.3).unwrap();
        assert_eq!(a.matched_gt, vec![Some(1), None]);
        let a = assign_from_quality(&[vec![0.7, 0.7]], 2, 0.3).unwrap();
        assert_eq!(a.matched_gt, vec![Some(0)]);
    }

    #[test]
    fn assignment_without_ground_truth() {
        let a = assign_from_quality(&[vec![], vec![]], 0, 0.3).unwrap();
        assert_eq!(a.labels, vec![0, 0]);
        let b = car(0.0, 0.9, [100.0, 100.0, 200.0, 160.0]);
        assert_eq!(assign_targets(&[b], &[], 0.3).unwrap().labels, vec![0]);
        assert!(assign_from_quality(&[], 0, 1.0).is_err());
    }

    #[test]
    fn assign_targets_on_boxes() {
        let g = car(0.0, 1.0, [100.0, 100.0, 200.0, 160.0]);
        let near = car(0.2, 0.8, [102.0, 101.0, 203.0, 161.0]);
        let far = car(1.5, 0.9, [130.0, 100.0, 230.0, 160.0]);
        let a = assign_targets(&[far, near], &[g], 0.3).unwrap();
        assert_eq!(a.labels, vec![0, 1]);
        assert!(a.quality[1] >= 0.3);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap(), 1.0);
        assert_abs_diff_eq!(average_precision(&[0.9, 0.8, 0.1], &[0, 0, 1]).unwrap(), 1.0 / 3.0, epsilon = 1e-12);
        assert_eq!(average_precision(&[0.9], &[0]).unwrap(), 1.0);
        // positives at ranks 1 and 3: (1/1 + 2/3) / 2
        assert_abs_diff_eq!(average_precision(&[0.9, 0.8, 0.7], &[1, 0, 1]).unwrap(), 5.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn imagewise_loss_examples() {
        let r = vec![vec![0.9, 0.2], vec![0.9, 0.8, 0.1]];
        let l = vec![vec![1, 0], vec![0, 0, 1]];
        assert_abs_diff_eq!(imagewise_ap(&r, &l).unwrap(), 1.0 / 3.0, epsilon = 1e-12);
        assert_eq!(imagewise_ap(&[vec![0.9, 0.1]], &[vec![1, 0]]).unwrap(), 0.0);
        assert_eq!(imagewise_ap(&[], &[]).unwrap(), 0.0);
        assert!(matches!(
            imagewise_ap(&[vec![0.1], vec![0.2]], &[vec![1], vec![1, 0]]),
            Err(TargetError::LengthMismatch { image: 1, .. })
        ));
    }

    #[test]
    fn ranking_rows_carry_rank_and_ap() {
        let rows = ranking_rows(&[0.2, 0.9, 0.5], &[1, 0, 0]).unwrap();
        assert_eq!(rows.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![3, 1, 2]);
        assert!(rows.iter().all(|r| (r.ap - 1.0 / 3.0).abs() < 1e-12));
    }
}
