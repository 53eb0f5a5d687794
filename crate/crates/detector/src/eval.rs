//! Model evaluation helpers: detection collection, metric computation, and
//! a single-threaded inference-speed probe.

use std::time::Instant;

use detectlab_metrics::{evaluate, standard_thresholds, EvalResult};

use crate::decode::{decode, DEFAULT_NMS_IOU};
use crate::error::Result;
use crate::model::DetectorModel;
use crate::sample::Sample;

/// Low confidence floor used when collecting detections for mAP, so the
/// precision/recall curve is fully populated.
pub const EVAL_CONF_THRESH: f64 = 0.001;

/// Runs eval-mode inference over each sample and tags detections with the
/// sample id.
pub fn detect_all(
    model: &DetectorModel,
    samples: &[Sample],
    conf_thresh: f64,
    nms_iou: f64,
) -> Result<Vec<detectlab_metrics::Detection>> {
    let mut out = Vec::new();
    for s in samples {
        let batch = crate::sample::batch_images(&[s])?;
        let grid = model.predict(&batch)?;
        for d in decode(&grid, 0, conf_thresh, nms_iou)? {
            out.push(detectlab_metrics::Detection {
                image: s.id.clone(),
                class: d.class,
                bbox: d.bbox,
                confidence: d.confidence.clamp(0.0, 1.0),
            });
        }
    }
    Ok(out)
}

pub fn ground_truths(samples: &[Sample]) -> Vec<detectlab_metrics::GroundTruth> {
    samples
        .iter()
        .flat_map(|s| {
            s.boxes.iter().map(|&(bbox, class)| detectlab_metrics::GroundTruth {
                image: s.id.clone(),
                class,
                bbox,
            })
        })
        .collect()
}

/// Full evaluation at the standard thresholds.
pub fn evaluate_model(model: &DetectorModel, samples: &[Sample]) -> Result<EvalResult> {
    let dets = detect_all(model, samples, EVAL_CONF_THRESH, DEFAULT_NMS_IOU)?;
    let gts = ground_truths(samples);
    Ok(evaluate(&dets, &gts, &standard_thresholds())?)
}

/// Mean single-image forward wall time in milliseconds: `iters` timed passes
/// after `warmup` untimed ones, single-threaded.
pub fn measure_speed_ms(
    model: &DetectorModel,
    sample: &Sample,
    warmup: usize,
    iters: usize,
) -> Result<f64> {
    let batch = crate::sample::batch_images(&[sample])?;
    for _ in 0..warmup {
        model.predict(&batch)?;
    }
    let start = Instant::now();
    for _ in 0..iters {
        model.predict(&batch)?;
    }
    Ok(start.elapsed().as_secs_f64() * 1000.0 / iters.max(1) as f64)
}
