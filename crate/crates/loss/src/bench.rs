//! Pure box-regression bench: gradient descent on predicted box coordinates
//! under each loss, tracking the mean IoU loss per step. Used to compare how
//! fast the loss variants pull random boxes onto their targets.

use detectlab_tensor::{Tape, XorShiftRng};

use crate::bbox::BBox;
use crate::error::Result;
use crate::focus::{FocusState, WIoUParams};
use crate::graph::{ciou, wiou_v1, wiou_v3, BoxVar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchLoss {
    Ciou,
    Wiou1,
    Wiou3,
}

impl BenchLoss {
    pub fn name(&self) -> &'static str {
        match self {
            BenchLoss::Ciou => "ciou",
            BenchLoss::Wiou1 => "wiou1",
            BenchLoss::Wiou3 => "wiou3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ciou" => Some(BenchLoss::Ciou),
            "wiou1" => Some(BenchLoss::Wiou1),
            "wiou3" => Some(BenchLoss::Wiou3),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub steps: usize,
    pub seed: u64,
    pub pairs: usize,
    /// Fixed gradient-descent step size on the raw pixel coordinates.
    pub lr: f64,
    pub wiou_params: WIoUParams,
    pub focus_momentum: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            steps: 500,
            seed: 42,
            pairs: 256,
            lr: 20.0,
            wiou_params: WIoUParams::default(),
            focus_momentum: 0.99,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchCurve {
    pub loss: BenchLoss,
    /// Mean IoU loss over all pairs; index 0 is the initial state, index i
    /// the state after i descent steps.
    pub mean_l_iou: Vec<f64>,
}

/// First step index at which the curve drops below `threshold`.
pub fn first_step_below(curve: &[f64], threshold: f64) -> Option<usize> {
    curve.iter().position(|&v| v < threshold)
}

fn initial_pairs(cfg: &BenchConfig) -> (Vec<BBox>, Vec<BBox>) {
    let mut rng = XorShiftRng::new(cfg.seed);
    let mut preds = Vec::with_capacity(cfg.pairs);
    let mut gts = Vec::with_capacity(cfg.pairs);
    for _ in 0..cfg.pairs {
        let gt = BBox::new(
            rng.uniform(24.0, 104.0),
            rng.uniform(24.0, 104.0),
            rng.uniform(8.0, 48.0),
            rng.uniform(8.0, 48.0),
        )
        .expect("generated extents are positive");
        let pred = BBox::new(
            gt.cx + rng.uniform(-30.0, 30.0),
            gt.cy + rng.uniform(-30.0, 30.0),
            (gt.w * rng.uniform(-0.7, 0.7f64).exp()).max(1.0),
            (gt.h * rng.uniform(-0.7, 0.7f64).exp()).max(1.0),
        )
        .expect("generated extents are positive");
        preds.push(pred);
        gts.push(gt);
    }
    (preds, gts)
}

fn mean_l_iou(preds: &[BBox], gts: &[BBox]) -> f64 {
    preds
        .iter()
        .zip(gts)
        .map(|(p, g)| p.l_iou(g))
        .sum::<f64>()
        / preds.len() as f64
}

/// Runs the bench for one loss. All losses start from the same seeded pairs.
pub fn run_one(loss: BenchLoss, cfg: &BenchConfig) -> Result<BenchCurve> {
    let (mut preds, gts) = initial_pairs(cfg);
    let mut curve = Vec::with_capacity(cfg.steps + 1);
    curve.push(mean_l_iou(&preds, &gts));
    let mut focus = FocusState::new(cfg.focus_momentum)?;

    for _ in 0..cfg.steps {
        if loss == BenchLoss::Wiou3 {
            focus.update(mean_l_iou(&preds, &gts));
        }
        let tape = Tape::<f64>::new();
        let mut handles = Vec::with_capacity(preds.len());
        let mut total = tape.scalar(0.0);
        for (p, g) in preds.iter().zip(&gts) {
            let pv = BoxVar::leaf(&tape, p);
            let gv = BoxVar::constant(&tape, g);
            let li = match loss {
                BenchLoss::Ciou => ciou(&pv, &gv)?,
                BenchLoss::Wiou1 => wiou_v1(&pv, &gv)?,
                BenchLoss::Wiou3 => wiou_v3(&pv, &gv, &focus, &cfg.wiou_params)?,
            };
            total = total.add(li)?;
            handles.push(pv);
        }
        let objective = total.scale(1.0 / preds.len() as f64);
        let grads = tape.backward(objective)?;
        for (p, pv) in preds.iter_mut().zip(&handles) {
            let g = |v| grads.wrt(v).map_or(0.0, |g| g[0]);
            let cx = p.cx - cfg.lr * g(pv.cx);
            let cy = p.cy - cfg.lr * g(pv.cy);
            let w = (p.w - cfg.lr * g(pv.w)).max(1.0);
            let h = (p.h - cfg.lr * g(pv.h)).max(1.0);
            *p = BBox::new(cx, cy, w, h)?;
        }
        curve.push(mean_l_iou(&preds, &gts));
    }
    Ok(BenchCurve {
        loss,
        mean_l_iou: curve,
    })
}

/// Runs the bench for each requested loss from identical seeded pairs.
pub fn run_loss_bench(losses: &[BenchLoss], cfg: &BenchConfig) -> Result<Vec<BenchCurve>> {
    losses.iter().map(|&l| run_one(l, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_start_identically_and_descend() {
        let cfg = BenchConfig {
            steps: 40,
            pairs: 32,
            ..BenchConfig::default()
        };
        let curves = run_loss_bench(&[BenchLoss::Ciou, BenchLoss::Wiou1, BenchLoss::Wiou3], &cfg)
            .unwrap();
        let start = curves[0].mean_l_iou[0];
        for c in &curves {
            assert_eq!(c.mean_l_iou[0], start);
            assert_eq!(c.mean_l_iou.len(), 41);
            let end = *c.mean_l_iou.last().unwrap();
            assert!(end < start, "{:?}: {end} !< {start}", c.loss);
        }
    }

    #[test]
    fn bench_is_deterministic() {
        let cfg = BenchConfig {
            steps: 10,
            pairs: 16,
            ..BenchConfig::default()
        };
        let a = run_one(BenchLoss::Wiou3, &cfg).unwrap();
        let b = run_one(BenchLoss::Wiou3, &cfg).unwrap();
        for (x, y) in a.mean_l_iou.iter().zip(&b.mean_l_iou) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn first_step_below_finds_crossing() {
        assert_eq!(first_step_below(&[0.5, 0.3, 0.19, 0.1], 0.2), Some(2));
        assert_eq!(first_step_below(&[0.5, 0.3], 0.2), None);
    }
}
