//! Per-class evaluation over an IoU threshold sweep, with the aggregate
//! row averaged over classes present in the ground truth.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::ap::average_precision;
use crate::error::{MetricsError, Result};
use crate::matching::match_detections;
use crate::records::{Detection, GroundTruth};

/// The ten COCO-style thresholds 0.50, 0.55, ..., 0.95.
pub fn standard_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ThreshMetrics {
    pub iou_thresh: f64,
    pub ap: f64,
    /// Precision/recall at the confidence cutoff maximizing F1.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub missed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassEval {
    pub class: usize,
    pub num_gt: usize,
    pub num_det: usize,
    pub per_threshold: Vec<ThreshMetrics>,
    pub ap50: f64,
    pub ap5095: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalResult {
    pub thresholds: Vec<f64>,
    pub classes: Vec<ClassEval>,
    /// Aggregates over classes present in the ground truth.
    pub map50: f64,
    pub map5095: f64,
    pub precision: f64,
    pub recall: f64,
}

fn best_f1_point(flags: &[bool], num_gt: usize) -> (f64, f64, f64, usize, usize, usize) {
    // candidate operating points: keep the top-k detections, k = 0..n
    let mut best = (0.0f64, 0.0, 0.0, 0usize, 0usize, num_gt); // (f1, p, r, tp, fp, fn)
    let mut tp = 0usize;
    for (k, &f) in flags.iter().enumerate() {
        if f {
            tp += 1;
        }
        let kept = k + 1;
        let p = tp as f64 / kept as f64;
        let r = if num_gt == 0 {
            0.0
        } else {
            tp as f64 / num_gt as f64
        };
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        if f1 > best.0 {
            best = (f1, p, r, tp, kept - tp, num_gt - tp);
        }
    }
    best
}

/// Evaluates detections against ground truth at each IoU threshold.
pub fn evaluate(
    dets: &[Detection],
    gts: &[GroundTruth],
    thresholds: &[f64],
) -> Result<EvalResult> {
    if thresholds.is_empty() {
        return Err(MetricsError::arg("thresholds", "need at least one"));
    }
    let mut class_ids: BTreeSet<usize> = gts.iter().map(|g| g.class).collect();
    class_ids.extend(dets.iter().map(|d| d.class));

    let mut classes = Vec::new();
    for class in class_ids {
        let cls_dets: Vec<Detection> = dets.iter().filter(|d| d.class == class).cloned().collect();
        let cls_gts: Vec<GroundTruth> = gts.iter().filter(|g| g.class == class).cloned().collect();
        if cls_gts.is_empty() && cls_dets.is_empty() {
            continue;
        }
        let num_gt = cls_gts.len();
        let per_threshold: Vec<ThreshMetrics> = thresholds
            .iter()
            .map(|&t| {
                let m = match_detections(&cls_dets, &cls_gts, t);
                let ap = average_precision(&m.tp, &m.confidences, num_gt);
                let (f1, precision, recall, tp, fp, missed) = best_f1_point(&m.tp, num_gt);
                ThreshMetrics {
                    iou_thresh: t,
                    ap,
                    precision,
                    recall,
                    f1,
                    tp,
                    fp,
                    missed,
                }
            })
            .collect();
        let ap50 = per_threshold
            .iter()
            .find(|m| (m.iou_thresh - 0.5).abs() < 1e-9)
            .map_or(per_threshold[0].ap, |m| m.ap);
        let ap5095 =
            per_threshold.iter().map(|m| m.ap).sum::<f64>() / per_threshold.len() as f64;
        classes.push(ClassEval {
            class,
            num_gt,
            num_det: cls_dets.len(),
            per_threshold,
            ap50,
            ap5095,
        });
    }

    // aggregate over classes present in the ground truth
    let present: Vec<&ClassEval> = classes.iter().filter(|c| c.num_gt > 0).collect();
    let k = present.len().max(1) as f64;
    let map50 = present.iter().map(|c| c.ap50).sum::<f64>() / k;
    let map5095 = present.iter().map(|c| c.ap5095).sum::<f64>() / k;
    let precision = present
        .iter()
        .map(|c| c.per_threshold[0].precision)
        .sum::<f64>()
        / k;
    let recall = present
        .iter()
        .map(|c| c.per_threshold[0].recall)
        .sum::<f64>()
        / k;
    Ok(EvalResult {
        thresholds: thresholds.to_vec(),
        classes,
        map50,
        map5095,
        precision,
        recall,
    })
}

/// Renders the per-class table: one row per class plus the aggregate.
pub fn render_table(result: &EvalResult, class_names: &[&str]) -> String {
    let name = |c: usize| -> String {
        class_names
            .get(c)
            .map_or_else(|| format!("class{c}"), |s| (*s).to_string())
    };
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>7} {:>10} {:>8} {:>9} {:>12}\n",
        "Type", "Labels", "Precision", "Recall", "AP@0.5", "AP@0.5:0.95"
    ));
    let total_gt: usize = result.classes.iter().map(|c| c.num_gt).sum();
    out.push_str(&format!(
        "{:<16} {:>7} {:>10.3} {:>8.3} {:>9.3} {:>12.3}\n",
        "All", total_gt, result.precision, result.recall, result.map50, result.map5095
    ));
    for c in &result.classes {
        out.push_str(&format!(
            "{:<16} {:>7} {:>10.3} {:>8.3} {:>9.3} {:>12.3}\n",
            name(c.class),
            c.num_gt,
            c.per_threshold[0].precision,
            c.per_threshold[0].recall,
            c.ap50,
            c.ap5095
        ));
    }
    out
}
