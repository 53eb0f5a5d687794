//! Composite detection loss: a box term from the configured IoU-family loss
//! averaged over positive cells, plus binary cross-entropy objectness and
//! classification terms.

use detectlab_loss::{ciou, wiou_v1, wiou_v3, BoxVar, FocusState, WIoUParams};
use detectlab_tensor::{Tape, Tensor, Var};

use crate::assign::Targets;
use crate::config::{BoxLossKind, DetectorConfig};
use crate::error::{DetectorError, Result};

pub struct LossOutput<'g> {
    pub box_loss: Var<'g, f32>,
    pub obj_loss: Var<'g, f32>,
    pub cls_loss: Var<'g, f32>,
    pub total: Var<'g, f32>,
}

impl LossOutput<'_> {
    pub fn values(&self) -> Result<(f64, f64, f64, f64)> {
        Ok((
            f64::from(self.box_loss.item()?),
            f64::from(self.obj_loss.item()?),
            f64::from(self.cls_loss.item()?),
            f64::from(self.total.item()?),
        ))
    }
}

/// Decodes the four box channels of one positive cell into a box on the tape:
/// center = (cell index + sigmoid(t)) * cell, size = exp(t) * cell.
fn decode_cell<'g>(
    raw: Var<'g, f32>,
    head_channels: usize,
    grid: usize,
    cell: f64,
    image: usize,
    row: usize,
    col: usize,
) -> Result<BoxVar<'g, f32>> {
    let flat = |ch: usize| ((image * head_channels + ch) * grid + row) * grid + col;
    let cellf = cell as f32;
    let tx = raw.index(flat(0))?;
    let ty = raw.index(flat(1))?;
    let tw = raw.index(flat(2))?;
    let th = raw.index(flat(3))?;
    Ok(BoxVar {
        cx: tx.sigmoid().add_scalar(col as f32).scale(cellf),
        cy: ty.sigmoid().add_scalar(row as f32).scale(cellf),
        w: tw.exp().scale(cellf),
        h: th.exp().scale(cellf),
    })
}

/// Builds the loss graph over the raw head output `[N, 5+K, S, S]`.
///
/// With the focused box loss, the running IoU-loss mean is folded once per
/// batch (before the per-anchor gains are computed); a frozen state is left
/// untouched, so evaluation passes do not drift it.
pub fn detector_loss<'g>(
    tape: &'g Tape<f32>,
    raw: Var<'g, f32>,
    targets: &Targets,
    config: &DetectorConfig,
    focus: &mut FocusState,
) -> Result<LossOutput<'g>> {
    let shape = raw.shape();
    let (n, c, s) = (shape[0], shape[1], shape[2]);
    debug_assert_eq!(c, config.head_channels());
    let cell = config.cell();
    let k = config.classes;

    // Objectness over every cell, balanced between positive and negative
    // cells: positives are outnumbered ~20:1 on this grid and a plain mean
    // drowns their gradient.
    let obj_logits = raw.slice_channels(4, 5)?;
    let obj_target = tape.constant(&targets.obj);
    let bce = obj_logits.bce_with_logits(obj_target)?;
    let npos_cells = targets.obj.data().iter().filter(|&&v| v == 1.0).count();
    let total_cells = targets.obj.numel();
    let obj_loss = if npos_cells == 0 || npos_cells == total_cells {
        bce.mean_all()
    } else {
        let pos_mask = tape.constant(&targets.obj);
        let neg_mask = tape.constant(&targets.obj.map(|v| 1.0 - v));
        let pos_mean = bce
            .mul(pos_mask)?
            .sum_all()
            .scale(1.0 / npos_cells as f32);
        let neg_mean = bce
            .mul(neg_mask)?
            .sum_all()
            .scale(1.0 / (total_cells - npos_cells) as f32);
        pos_mean.add(neg_mean)?.scale(0.5)
    };

    // box and class terms over positive cells
    let (box_loss, cls_loss) = if targets.positives.is_empty() {
        (tape.scalar(0.0), tape.scalar(0.0))
    } else {
        let mut pred_boxes = Vec::with_capacity(targets.positives.len());
        for p in &targets.positives {
            pred_boxes.push(decode_cell(raw, c, s, cell, p.image, p.row, p.col)?);
        }
        if config.box_loss == BoxLossKind::Wiou3 {
            let mean_l_iou = targets
                .positives
                .iter()
                .zip(&pred_boxes)
                .map(|(p, b)| b.to_bbox().map(|pb| pb.l_iou(&p.gt)))
                .collect::<detectlab_loss::Result<Vec<f64>>>()?
                .iter()
                .sum::<f64>()
                / targets.positives.len() as f64;
            focus.update(mean_l_iou);
        }
        let params = WIoUParams {
            alpha: config.wiou_alpha,
            delta: config.wiou_delta,
        };
        let mut box_sum = tape.scalar(0.0);
        let mut cls_sum = tape.scalar(0.0);
        for (p, pred) in targets.positives.iter().zip(&pred_boxes) {
            let gt = BoxVar::constant(tape, &p.gt);
            let term = match config.box_loss {
                BoxLossKind::Ciou => ciou(pred, &gt)?,
                BoxLossKind::Wiou1 => wiou_v1(pred, &gt)?,
                BoxLossKind::Wiou3 => wiou_v3(pred, &gt, focus, &params)?,
            };
            box_sum = box_sum.add(term)?;

            let flat = |ch: usize| ((p.image * c + ch) * s + p.row) * s + p.col;
            let mut logits = Vec::with_capacity(k);
            for ch in 0..k {
                logits.push(raw.index(flat(5 + ch))?);
            }
            let logits = tape.concat(&logits, 0)?;
            let mut one_hot = Tensor::zeros(&[k]);
            one_hot.data_mut()[p.class] = 1.0;
            let cls_term = logits.bce_with_logits(tape.constant(&one_hot))?.sum_all();
            cls_sum = cls_sum.add(cls_term)?;
        }
        let npos = targets.positives.len() as f32;
        (
            box_sum.scale(1.0 / npos),
            cls_sum.scale(1.0 / (npos * k as f32)),
        )
    };

    let total = box_loss
        .scale(config.w_box as f32)
        .add(obj_loss.scale(config.w_obj as f32))?
        .add(cls_loss.scale(config.w_cls as f32))?;

    let (b, o, cl, t) = (
        box_loss.item()?,
        obj_loss.item()?,
        cls_loss.item()?,
        total.item()?,
    );
    if !(b.is_finite() && o.is_finite() && cl.is_finite() && t.is_finite()) {
        return Err(DetectorError::Numerical(format!(
            "non-finite loss: box {b} obj {o} cls {cl} total {t} over {n} images, {} positives",
            targets.positives.len()
        )));
    }
    Ok(LossOutput {
        box_loss,
        obj_loss,
        cls_loss,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assign::assign_targets;
    use crate::model::build_model;
    use detectlab_loss::BBox;
    use detectlab_tensor::XorShiftRng;

    fn random_images(rng: &mut XorShiftRng, n: usize) -> Tensor<f32> {
        let len = n * 3 * 128 * 128;
        Tensor::new(
            vec![n, 3, 128, 128],
            (0..len).map(|_| rng.uniform(0.0, 1.0) as f32).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_positives_leaves_only_weighted_objectness() {
        let config = DetectorConfig::default();
        let model = build_model(&config).unwrap();
        let mut rng = XorShiftRng::new(1);
        let images = random_images(&mut rng, 1);
        let tape = Tape::new();
        let leaves = model.registry.leaves(&tape, false);
        let x = tape.constant(&images);
        let out = model.forward(&leaves, x, None).unwrap();
        let targets = assign_targets(&[vec![]], &config);
        let mut focus = FocusState::new(0.99).unwrap();
        let loss = detector_loss(&tape, out.raw, &targets, &config, &mut focus).unwrap();
        let (b, o, cl, t) = loss.values().unwrap();
        assert_eq!(b, 0.0);
        assert_eq!(cl, 0.0);
        assert!((t - o * config.w_obj).abs() < 1e-9);
    }

    #[test]
    fn total_is_exact_weighted_sum() {
        let config = DetectorConfig {
            w_box: 5.0,
            w_obj: 1.0,
            w_cls: 1.0,
            ..DetectorConfig::default()
        };
        let model = build_model(&config).unwrap();
        let mut rng = XorShiftRng::new(2);
        let images = random_images(&mut rng, 2);
        let gts = vec![
            vec![(BBox::new(30.0, 40.0, 20.0, 18.0).unwrap(), 0)],
            vec![
                (BBox::new(90.0, 90.0, 12.0, 12.0).unwrap(), 2),
                (BBox::new(20.0, 100.0, 10.0, 14.0).unwrap(), 1),
            ],
        ];
        let targets = assign_targets(&gts, &config);
        assert_eq!(targets.positives.len(), 3);
        let tape = Tape::new();
        let leaves = model.registry.leaves(&tape, false);
        let x = tape.constant(&images);
        let out = model.forward(&leaves, x, None).unwrap();
        let mut focus = FocusState::new(0.99).unwrap();
        let loss = detector_loss(&tape, out.raw, &targets, &config, &mut focus).unwrap();
        let (b, o, cl, t) = loss.values().unwrap();
        let expect = 5.0 * b + o + cl;
        assert!(((t - expect) / expect.abs().max(1.0)).abs() < 1e-6);
    }

    #[test]
    fn switching_box_loss_changes_only_the_box_component() {
        let mut rng = XorShiftRng::new(3);
        let images = random_images(&mut rng, 1);
        let gts = vec![vec![(BBox::new(50.0, 60.0, 24.0, 16.0).unwrap(), 1)]];

        let run = |kind: BoxLossKind| -> (f64, f64, f64) {
            let config = DetectorConfig {
                box_loss: kind,
                ..DetectorConfig::default()
            };
            let model = build_model(&config).unwrap();
            let targets = assign_targets(&gts, &config);
            let tape = Tape::new();
            let leaves = model.registry.leaves(&tape, false);
            let x = tape.constant(&images);
            let out = model.forward(&leaves, x, None).unwrap();
            let mut focus = FocusState::new(0.99).unwrap();
            focus.update(0.5);
            let loss = detector_loss(&tape, out.raw, &targets, &config, &mut focus).unwrap();
            let (b, o, cl, _) = loss.values().unwrap();
            (b, o, cl)
        };
        let (b_ciou, o_ciou, c_ciou) = run(BoxLossKind::Ciou);
        let (b_w1, o_w1, c_w1) = run(BoxLossKind::Wiou1);
        assert_ne!(b_ciou, b_w1);
        assert_eq!(o_ciou, o_w1);
        assert_eq!(c_ciou, c_w1);
    }

    #[test]
    fn near_perfect_predictions_drive_loss_small() {
        // Write ideal logits straight into a raw grid and check the loss.
        let config = DetectorConfig::default();
        let c = config.head_channels();
        let s = config.grid_size;
        let cell = config.cell();
        let gt = BBox::new(66.0, 70.0, 24.0, 20.0).unwrap();
        let (row, col) = (4usize, 4usize);
        let mut raw = Tensor::<f32>::zeros(&[1, c, s, s]);
        // saturate objectness negative everywhere, positive at the cell
        for row_i in 0..s {
            for col_i in 0..s {
                raw.data_mut()[((4 * s) + row_i) * s + col_i] = -12.0;
            }
        }
        let logit = |p: f64| (p / (1.0 - p)).ln() as f32;
        let flat = |ch: usize, r: usize, cl: usize| ((ch * s) + r) * s + cl;
        raw.data_mut()[flat(0, row, col)] = logit(gt.cx / cell - col as f64);
        raw.data_mut()[flat(1, row, col)] = logit(gt.cy / cell - row as f64);
        raw.data_mut()[flat(2, row, col)] = (gt.w / cell).ln() as f32;
        raw.data_mut()[flat(3, row, col)] = (gt.h / cell).ln() as f32;
        raw.data_mut()[flat(4, row, col)] = 12.0;
        for k in 0..config.classes {
            raw.data_mut()[flat(5 + k, row, col)] = if k == 1 { 12.0 } else { -12.0 };
        }

        let targets = assign_targets(&[vec![(gt, 1)]], &config);
        let tape = Tape::new();
        let raw_var = tape.constant(&raw);
        let mut focus = FocusState::new(0.99).unwrap();
        let loss = detector_loss(&tape, raw_var, &targets, &config, &mut focus).unwrap();
        let (b, _o, _cl, t) = loss.values().unwrap();
        assert!(b < 1e-4, "box {b}");
        assert!(t < 1e-2, "total {t}");
    }
}
