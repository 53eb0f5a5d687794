//! The evaluator against an exhaustively coded oracle on randomized small
//! instances, plus the order/scale invariance properties.

use detectlab_loss::BBox;
use detectlab_metrics::{evaluate, standard_thresholds, Detection, GroundTruth};
use detectlab_tensor::XorShiftRng;

/// Brute-force per-class evaluation written independently of the library:
/// explicit rank ordering, quadratic envelope scans, no shared helpers.
mod oracle {
    use super::*;

    fn corner_iou(a: &BBox, b: &BBox) -> f64 {
        let ax1 = a.cx - a.w / 2.0;
        let ax2 = a.cx + a.w / 2.0;
        let ay1 = a.cy - a.h / 2.0;
        let ay2 = a.cy + a.h / 2.0;
        let bx1 = b.cx - b.w / 2.0;
        let bx2 = b.cx + b.w / 2.0;
        let by1 = b.cy - b.h / 2.0;
        let by2 = b.cy + b.h / 2.0;
        let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
        let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
        let inter = iw * ih;
        inter / ((ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter)
    }

    /// Rank ordering per the stated protocol: confidence desc, area asc,
    /// then image / class / coords / input index.
    fn ranked(dets: &[Detection]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..dets.len()).collect();
        idx.sort_by(|&i, &j| {
            let (a, b) = (&dets[i], &dets[j]);
            b.confidence
                .partial_cmp(&a.confidence)
                .unwrap()
                .then(a.bbox.area().partial_cmp(&b.bbox.area()).unwrap())
                .then(a.image.cmp(&b.image))
                .then(a.class.cmp(&b.class))
                .then(
                    (a.bbox.cx, a.bbox.cy, a.bbox.w, a.bbox.h)
                        .partial_cmp(&(b.bbox.cx, b.bbox.cy, b.bbox.w, b.bbox.h))
                        .unwrap(),
                )
                .then(i.cmp(&j))
        });
        idx
    }

    fn flags_for(dets: &[Detection], gts: &[GroundTruth], thresh: f64) -> Vec<bool> {
        let order = ranked(dets);
        let mut used = vec![false; gts.len()];
        let mut flags = Vec::new();
        for &di in &order {
            let d = &dets[di];
            let mut best_iou = -1.0;
            let mut best_gi = usize::MAX;
            for (gi, g) in gts.iter().enumerate() {
                if used[gi] || g.class != d.class || g.image != d.image {
                    continue;
                }
                let iou = corner_iou(&d.bbox, &g.bbox);
                if iou >= thresh && iou > best_iou {
                    best_iou = iou;
                    best_gi = gi;
                }
            }
            if best_gi != usize::MAX {
                used[best_gi] = true;
                flags.push(true);
            } else {
                flags.push(false);
            }
        }
        flags
    }

    pub fn class_ap(dets: &[Detection], gts: &[GroundTruth], class: usize, thresh: f64) -> f64 {
        let cd: Vec<Detection> = dets.iter().filter(|d| d.class == class).cloned().collect();
        let cg: Vec<GroundTruth> = gts.iter().filter(|g| g.class == class).cloned().collect();
        let num_gt = cg.len();
        if num_gt == 0 || cd.is_empty() {
            return 0.0;
        }
        let flags = flags_for(&cd, &cg, thresh);
        let n = flags.len();
        let mut ap = 0.0;
        for k in 0..n {
            if !flags[k] {
                continue;
            }
            // max precision over every rank >= k, rescanned from scratch
            let mut env: f64 = 0.0;
            for j in k..n {
                let tp_j = flags[..=j].iter().filter(|&&f| f).count();
                let p = tp_j as f64 / (j + 1) as f64;
                if p > env {
                    env = p;
                }
            }
            ap += env / num_gt as f64;
        }
        ap
    }
}

fn random_instance(rng: &mut XorShiftRng) -> (Vec<Detection>, Vec<GroundTruth>) {
    let images = ["img0", "img1"];
    let n_gts = rng.below(6);
    let n_dets = rng.below(9);
    let quantized = |rng: &mut XorShiftRng, lo: f64, hi: f64| {
        // dyadic grid: exercises exact confidence and geometry ties
        lo + (hi - lo) * (rng.below(16) as f64) / 16.0
    };
    let gts: Vec<GroundTruth> = (0..n_gts)
        .map(|_| GroundTruth {
            image: images[rng.below(2)].to_string(),
            class: rng.below(2),
            bbox: BBox::new(
                quantized(rng, 2.0, 18.0),
                quantized(rng, 2.0, 18.0),
                1.0 + quantized(rng, 0.0, 5.0),
                1.0 + quantized(rng, 0.0, 5.0),
            )
            .unwrap(),
        })
        .collect();
    let dets: Vec<Detection> = (0..n_dets)
        .map(|i| {
            // half the detections perturb a gt, half are random
            let bbox = if !gts.is_empty() && i % 2 == 0 {
                let g = &gts[rng.below(gts.len())].bbox;
                BBox::new(
                    g.cx + quantized(rng, -2.0, 2.0),
                    g.cy + quantized(rng, -2.0, 2.0),
                    (g.w + quantized(rng, -1.0, 1.0)).max(0.5),
                    (g.h + quantized(rng, -1.0, 1.0)).max(0.5),
                )
                .unwrap()
            } else {
                BBox::new(
                    quantized(rng, 2.0, 18.0),
                    quantized(rng, 2.0, 18.0),
                    1.0 + quantized(rng, 0.0, 5.0),
                    1.0 + quantized(rng, 0.0, 5.0),
                )
                .unwrap()
            };
            Detection {
                image: images[rng.below(2)].to_string(),
                class: rng.below(2),
                bbox,
                confidence: (rng.below(17) as f64) / 16.0,
            }
        })
        .collect();
    (dets, gts)
}

#[test]
fn two_hundred_random_instances_match_oracle_exactly() {
    let mut rng = XorShiftRng::new(2718);
    let thresholds = standard_thresholds();
    for case in 0..200 {
        let (dets, gts) = random_instance(&mut rng);
        let result = evaluate(&dets, &gts, &thresholds).unwrap();
        for c in &result.classes {
            for tm in &c.per_threshold {
                let want = oracle::class_ap(&dets, &gts, c.class, tm.iou_thresh);
                assert!(
                    tm.ap == want,
                    "case {case} class {} thresh {}: {} vs oracle {}",
                    c.class,
                    tm.iou_thresh,
                    tm.ap,
                    want
                );
            }
        }
        // aggregate, recomputed the long way from the oracle values
        let present: Vec<usize> = result
            .classes
            .iter()
            .filter(|c| c.num_gt > 0)
            .map(|c| c.class)
            .collect();
        if !present.is_empty() {
            let mut want50 = 0.0;
            for &cls in &present {
                want50 += oracle::class_ap(&dets, &gts, cls, 0.5);
            }
            want50 /= present.len() as f64;
            assert!(
                result.map50 == want50,
                "case {case}: map50 {} vs {}",
                result.map50,
                want50
            );
        }
    }
}

#[test]
fn ap_monotone_in_threshold() {
    let mut rng = XorShiftRng::new(555);
    let thresholds = standard_thresholds();
    for _ in 0..50 {
        let (dets, gts) = random_instance(&mut rng);
        let result = evaluate(&dets, &gts, &thresholds).unwrap();
        for c in &result.classes {
            for w in c.per_threshold.windows(2) {
                assert!(
                    w[0].ap >= w[1].ap,
                    "AP must not increase with the IoU threshold"
                );
            }
        }
    }
}

#[test]
fn detection_order_does_not_matter() {
    let mut rng = XorShiftRng::new(808);
    let thresholds = standard_thresholds();
    for _ in 0..30 {
        let (mut dets, gts) = random_instance(&mut rng);
        let before = evaluate(&dets, &gts, &thresholds).unwrap();
        rng.shuffle(&mut dets);
        let after = evaluate(&dets, &gts, &thresholds).unwrap();
        assert_eq!(before.map50, after.map50);
        assert_eq!(before.map5095, after.map5095);
        for (a, b) in before.classes.iter().zip(&after.classes) {
            for (ta, tb) in a.per_threshold.iter().zip(&b.per_threshold) {
                assert_eq!(ta.ap, tb.ap);
                assert_eq!(ta.tp, tb.tp);
            }
        }
    }
}

#[test]
fn strictly_increasing_confidence_maps_leave_ap_unchanged() {
    let mut rng = XorShiftRng::new(909);
    let thresholds = standard_thresholds();
    for _ in 0..30 {
        let (dets, gts) = random_instance(&mut rng);
        let before = evaluate(&dets, &gts, &thresholds).unwrap();
        // x -> x^2 is strictly increasing on [0, 1] and preserves ties
        let squashed: Vec<Detection> = dets
            .iter()
            .map(|d| Detection {
                confidence: d.confidence * d.confidence,
                ..d.clone()
            })
            .collect();
        let after = evaluate(&squashed, &gts, &thresholds).unwrap();
        for (a, b) in before.classes.iter().zip(&after.classes) {
            assert_eq!(a.ap50, b.ap50);
            assert_eq!(a.ap5095, b.ap5095);
        }
    }
}
