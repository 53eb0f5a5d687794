//! Greedy confidence-ranked matching of detections to ground truth.
//!
//! Detections are ranked by confidence descending (ties: smaller box area
//! first, then a fixed total order for determinism). Each detection matches
//! the unmatched same-class, same-image ground truth of highest IoU when
//! that IoU reaches the threshold; each ground truth matches at most once.

use std::cmp::Ordering;

use crate::records::{Detection, GroundTruth};

#[derive(Debug, Clone)]
pub struct MatchResult {
    /// Indices into the input detections, in rank order.
    pub order: Vec<usize>,
    /// `tp[i]` says whether the detection `order[i]` matched.
    pub tp: Vec<bool>,
    /// Confidences in rank order.
    pub confidences: Vec<f64>,
}

/// Deterministic rank order: confidence desc, area asc, then image/class/
/// coordinates, then input position.
fn rank_cmp(a: &Detection, b: &Detection, ia: usize, ib: usize) -> Ordering {
    b.confidence
        .partial_cmp(&a.confidence)
        .unwrap_or(Ordering::Equal)
        .then_with(|| {
            a.bbox
                .area()
                .partial_cmp(&b.bbox.area())
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| a.image.cmp(&b.image))
        .then_with(|| a.class.cmp(&b.class))
        .then_with(|| {
            (a.bbox.cx, a.bbox.cy, a.bbox.w, a.bbox.h)
                .partial_cmp(&(b.bbox.cx, b.bbox.cy, b.bbox.w, b.bbox.h))
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| ia.cmp(&ib))
}

pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_thresh: f64,
) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| rank_cmp(&dets[a], &dets[b], a, b));

    let mut gt_taken = vec![false; gts.len()];
    let mut tp = Vec::with_capacity(dets.len());
    let mut confidences = Vec::with_capacity(dets.len());
    for &di in &order {
        let d = &dets[di];
        confidences.push(d.confidence);
        let mut best: Option<(f64, usize)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if gt_taken[gi] || g.class != d.class || g.image != d.image {
                continue;
            }
            let iou = d.bbox.iou(&g.bbox);
            if iou >= iou_thresh {
                let better = match best {
                    None => true,
                    Some((bi, _)) => iou > bi,
                };
                if better {
                    best = Some((iou, gi));
                }
            }
        }
        match best {
            Some((_, gi)) => {
                gt_taken[gi] = true;
                tp.push(true);
            }
            None => tp.push(false),
        }
    }
    MatchResult {
        order,
        tp,
        confidences,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use detectlab_loss::BBox;

    fn det(image: &str, class: usize, cx: f64, cy: f64, w: f64, h: f64, conf: f64) -> Detection {
        Detection {
            image: image.into(),
            class,
            bbox: BBox::new(cx, cy, w, h).unwrap(),
            confidence: conf,
        }
    }

    fn gt(image: &str, class: usize, cx: f64, cy: f64, w: f64, h: f64) -> GroundTruth {
        GroundTruth {
            image: image.into(),
            class,
            bbox: BBox::new(cx, cy, w, h).unwrap(),
        }
    }

    #[test]
    fn overlap_above_threshold_is_tp() {
        // IoU = 0.6: boxes [0,10]x[0,10] and [0,10]x[2,12] -> inter 80, union
        // 120 is 2/3; use offset 2.5 for exactly 0.6
        let d = det("i", 0, 5.0, 5.0, 10.0, 10.0, 0.9);
        let g = gt("i", 0, 5.0, 7.5, 10.0, 10.0);
        let iou = d.bbox.iou(&g.bbox);
        assert!((iou - 0.6).abs() < 1e-12);
        let r = match_detections(&[d], &[g], 0.5);
        assert_eq!(r.tp, vec![true]);
    }

    #[test]
    fn duplicate_of_matched_gt_is_fp() {
        let d1 = det("i", 0, 5.0, 5.0, 4.0, 4.0, 0.9);
        let d2 = det("i", 0, 5.0, 5.0, 4.0, 4.0, 0.8);
        let g = gt("i", 0, 5.0, 5.0, 4.0, 4.0);
        let r = match_detections(&[d1, d2], &[g], 0.5);
        assert_eq!(r.tp, vec![true, false]);
    }

    #[test]
    fn wrong_class_is_fp() {
        let d = det("i", 1, 5.0, 5.0, 4.0, 4.0, 0.9);
        let g = gt("i", 0, 5.0, 5.0, 4.0, 4.0);
        let r = match_detections(&[d], &[g], 0.5);
        assert_eq!(r.tp, vec![false]);
    }

    #[test]
    fn other_image_gt_not_matched() {
        let d = det("a", 0, 5.0, 5.0, 4.0, 4.0, 0.9);
        let g = gt("b", 0, 5.0, 5.0, 4.0, 4.0);
        let r = match_detections(&[d], &[g], 0.5);
        assert_eq!(r.tp, vec![false]);
    }

    #[test]
    fn equal_confidence_ranks_smaller_area_first() {
        let big = det("i", 0, 5.0, 5.0, 8.0, 8.0, 0.7);
        let small = det("i", 0, 5.0, 5.0, 4.0, 4.0, 0.7);
        let r = match_detections(&[big.clone(), small.clone()], &[], 0.5);
        assert_eq!(r.order, vec![1, 0]);
    }

    #[test]
    fn highest_iou_gt_wins() {
        let d = det("i", 0, 5.0, 5.0, 4.0, 4.0, 0.9);
        let g_far = gt("i", 0, 6.5, 5.0, 4.0, 4.0);
        let g_near = gt("i", 0, 5.5, 5.0, 4.0, 4.0);
        let r = match_detections(&[d.clone()], &[g_far.clone(), g_near.clone()], 0.3);
        assert_eq!(r.tp, vec![true]);
        // the nearer gt must be consumed: a second identical det gets the far one
        let r2 = match_detections(&[d.clone(), d], &[g_far, g_near], 0.3);
        assert_eq!(r2.tp, vec![true, true]);
    }
}
