//! Prediction decoding and greedy per-class non-maximum suppression.

use detectlab_loss::BBox;

use crate::error::Result;
use crate::model::PredictionGrid;

#[derive(Debug, Clone)]
pub struct Detection {
    pub bbox: BBox,
    pub class: usize,
    pub confidence: f64,
}

pub const DEFAULT_NMS_IOU: f64 = 0.5;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of the cell decoding, for tests and target synthesis: returns
/// `(tx, ty, tw, th)` such that decoding reproduces `bbox` in cell
/// `(row, col)`. The center must lie strictly inside the cell.
pub fn encode_cell(bbox: &BBox, row: usize, col: usize, cell: f64) -> (f64, f64, f64, f64) {
    let px = (bbox.cx / cell - col as f64).clamp(1e-6, 1.0 - 1e-6);
    let py = (bbox.cy / cell - row as f64).clamp(1e-6, 1.0 - 1e-6);
    let logit = |p: f64| (p / (1.0 - p)).ln();
    (
        logit(px),
        logit(py),
        (bbox.w / cell).ln(),
        (bbox.h / cell).ln(),
    )
}

/// Decodes one image's grid into detections above `conf_thresh`, then runs
/// greedy per-class suppression at `nms_iou`.
pub fn decode(
    grid: &PredictionGrid,
    image: usize,
    conf_thresh: f64,
    nms_iou: f64,
) -> Result<Vec<Detection>> {
    let s = grid.grid_size;
    let k = grid.classes;
    let c = 5 + k;
    let cell = grid.cell;
    let data = grid.tensor.data();
    let base = image * s * s * c;
    let mut candidates = Vec::new();
    for row in 0..s {
        for col in 0..s {
            let at = |ch: usize| data[base + ((row * s) + col) * c + ch] as f64;
            let obj = sigmoid(at(4));
            let (mut best_k, mut best_p) = (0usize, f64::MIN);
            for ch in 0..k {
                let p = sigmoid(at(5 + ch));
                if p > best_p {
                    best_p = p;
                    best_k = ch;
                }
            }
            let confidence = obj * best_p;
            if confidence < conf_thresh {
                continue;
            }
            let bbox = BBox::new(
                (col as f64 + sigmoid(at(0))) * cell,
                (row as f64 + sigmoid(at(1))) * cell,
                at(2).exp() * cell,
                at(3).exp() * cell,
            )?;
            candidates.push(Detection {
                bbox,
                class: best_k,
                confidence,
            });
        }
    }
    Ok(nms(candidates, nms_iou))
}

/// Greedy per-class suppression; survivors come out confidence-descending.
pub fn nms(mut dets: Vec<Detection>, iou_thresh: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| {
                a.bbox
                    .area()
                    .partial_cmp(&b.bbox.area())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .then_with(|| {
                (a.bbox.cx, a.bbox.cy)
                    .partial_cmp(&(b.bbox.cx, b.bbox.cy))
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    let mut keep: Vec<Detection> = Vec::new();
    'outer: for d in dets {
        for k in &keep {
            if k.class == d.class && k.bbox.iou(&d.bbox) >= iou_thresh {
                continue 'outer;
            }
        }
        keep.push(d);
    }
    keep
}
