//! Gradient-check harness for whole blocks and box losses, 64-bit mode.

use detectlab_loss::{ciou, wiou_v1, wiou_v3, BBox, BoxVar, FocusState, WIoUParams};
use detectlab_nn::{CaBlock, CaConfig, Cbs, LeafMap, ParamRegistry, RfbBlock, RfbConfig, SppcspcBlock};
use detectlab_tensor::{grad_check, GradCheckReport, Tape, Tensor, TensorError, Var, XorShiftRng};

use crate::error::{CliError, Result};

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_COORDS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckModule {
    Conv,
    Cbs,
    Ca,
    Rfb,
    Sppcspc,
    Wiou1,
    Wiou3,
    Ciou,
}

impl CheckModule {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "conv" => CheckModule::Conv,
            "cbs" => CheckModule::Cbs,
            "ca" => CheckModule::Ca,
            "rfb" => CheckModule::Rfb,
            "sppcspc" => CheckModule::Sppcspc,
            "wiou1" => CheckModule::Wiou1,
            "wiou3" => CheckModule::Wiou3,
            "ciou" => CheckModule::Ciou,
            other => {
                return Err(CliError::validation(format!(
                    "unknown module `{other}` (expected conv, cbs, ca, rfb, sppcspc, wiou1, wiou3 or ciou)"
                )))
            }
        })
    }

    pub fn all() -> [CheckModule; 8] {
        [
            CheckModule::Conv,
            CheckModule::Cbs,
            CheckModule::Ca,
            CheckModule::Rfb,
            CheckModule::Sppcspc,
            CheckModule::Wiou1,
            CheckModule::Wiou3,
            CheckModule::Ciou,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            CheckModule::Conv => "conv",
            CheckModule::Cbs => "cbs",
            CheckModule::Ca => "ca",
            CheckModule::Rfb => "rfb",
            CheckModule::Sppcspc => "sppcspc",
            CheckModule::Wiou1 => "wiou1",
            CheckModule::Wiou3 => "wiou3",
            CheckModule::Ciou => "ciou",
        }
    }
}

fn rand_tensor(rng: &mut XorShiftRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(lo, hi)).collect()).unwrap()
}

/// Checks a block over its input plus every registered parameter. The output
/// is scalarized as `sum(sigmoid(y) - 0.5)`: sigmoid weighting avoids exact
/// cancellation through batch norm, and the centering keeps the
/// finite-difference rounding noise small.
fn check_registered_block<F>(
    reg: &ParamRegistry<f64>,
    x: Tensor<f64>,
    forward: F,
    tol: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: for<'g> Fn(
        &LeafMap<'g, f64>,
        &ParamRegistry<f64>,
        Var<'g, f64>,
    ) -> detectlab_nn::Result<Var<'g, f64>>,
{
    let names: Vec<String> = reg.iter_params().map(|(n, _)| n.clone()).collect();
    let mut inputs = vec![x];
    for (_, t) in reg.iter_params() {
        inputs.push(t.clone());
    }
    grad_check(
        |_tape: &Tape<f64>, vars: &[Var<'_, f64>]| {
            let leaves =
                LeafMap::from_pairs(names.iter().cloned().zip(vars[1..].iter().copied()));
            let y = forward(&leaves, reg, vars[0])
                .map_err(|e| TensorError::arg("block", e.to_string()))?;
            Ok(y.sigmoid().add_scalar(-0.5).sum_all())
        },
        &inputs,
        GRADCHECK_STEP,
        tol,
        GRADCHECK_COORDS,
        seed,
    )
    .map_err(CliError::from)
}

/// Box-loss checks use the freeze-and-differentiate construction: the
/// detached quantities (the enclosing-box denominator, the focusing gain,
/// the aspect trade-off weight) are frozen at the unperturbed point, the
/// frozen surrogate is finite-differenced, and the surrogate's analytic
/// gradient is required to match the production loss's gradient exactly.
/// Differencing the production function directly would perturb through the
/// detached parts and disagree with the tape by design.
fn check_box_loss(module: CheckModule, seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = XorShiftRng::new(seed);
    let gt = BBox::new(
        rng.uniform(30.0, 90.0),
        rng.uniform(30.0, 90.0),
        rng.uniform(10.0, 40.0),
        rng.uniform(10.0, 40.0),
    )?;
    let pred = BBox::new(
        gt.cx + rng.uniform(-15.0, 15.0),
        gt.cy + rng.uniform(-15.0, 15.0),
        (gt.w * rng.uniform(0.6, 1.5)).max(1.0),
        (gt.h * rng.uniform(0.6, 1.5)).max(1.0),
    )?;
    let mut focus = FocusState::new(0.99)?;
    focus.update(0.4);
    let params = WIoUParams::default();

    // frozen constants at the unperturbed point
    let geo = detectlab_loss::PairGeometry::of(&pred, &gt);
    let frozen_diag = (geo.wg * geo.wg + geo.hg * geo.hg).max(1e-12);
    let frozen_r = detectlab_loss::gradient_gain(
        detectlab_loss::outlier_degree(pred.l_iou(&gt), &focus)?,
        &params,
    )?;
    let frozen_alpha_v = {
        let iou = pred.iou(&gt);
        let v = 4.0 / (std::f64::consts::PI * std::f64::consts::PI)
            * ((gt.w / gt.h).atan() - (pred.w / pred.h).atan()).powi(2);
        v / (1.0 - iou + v + 1e-12)
    };

    let frozen = FrozenLoss {
        module,
        gt,
        diag: frozen_diag,
        r: frozen_r,
        alpha_v: frozen_alpha_v,
    };

    // the surrogate's analytic gradient must equal the production gradient
    let coords = Tensor::new(vec![4], vec![pred.cx, pred.cy, pred.w, pred.h]).unwrap();
    let production_grad = {
        let tape = Tape::<f64>::new();
        let leaf = tape.leaf_grad(&coords);
        let p = BoxVar {
            cx: leaf.index(0).map_err(CliError::from)?,
            cy: leaf.index(1).map_err(CliError::from)?,
            w: leaf.index(2).map_err(CliError::from)?,
            h: leaf.index(3).map_err(CliError::from)?,
        };
        let g = BoxVar::constant(&tape, &gt);
        let y = match module {
            CheckModule::Wiou1 => wiou_v1(&p, &g)?,
            CheckModule::Wiou3 => wiou_v3(&p, &g, &focus, &params)?,
            _ => ciou(&p, &g)?,
        };
        let grads = tape.backward(y).map_err(CliError::from)?;
        grads.wrt(leaf).map(<[f64]>::to_vec).unwrap_or_default()
    };
    let surrogate_grad = {
        let tape = Tape::<f64>::new();
        let leaf = tape.leaf_grad(&coords);
        let y = frozen.eval(&tape, &[leaf]).map_err(CliError::from)?;
        let grads = tape.backward(y).map_err(CliError::from)?;
        grads.wrt(leaf).map(<[f64]>::to_vec).unwrap_or_default()
    };
    for (a, b) in production_grad.iter().zip(&surrogate_grad) {
        if (a - b).abs() > 1e-10 * (1.0 + a.abs()) {
            return Err(CliError::numerical(format!(
                "{}: production gradient {a} differs from frozen surrogate {b}",
                module.name()
            )));
        }
    }

    grad_check(
        |tape, vars| frozen.eval(tape, vars),
        &[coords],
        GRADCHECK_STEP,
        tol,
        GRADCHECK_COORDS,
        seed ^ 0xbeef,
    )
    .map_err(CliError::from)
}

/// The loss under check with its detached quantities pinned to constants.
struct FrozenLoss {
    module: CheckModule,
    gt: BBox,
    diag: f64,
    r: f64,
    alpha_v: f64,
}

impl FrozenLoss {
    fn eval<'g>(
        &self,
        tape: &'g Tape<f64>,
        vars: &[Var<'g, f64>],
    ) -> detectlab_tensor::Result<Var<'g, f64>> {
        let err = |e: detectlab_loss::LossError| TensorError::arg("loss", e.to_string());
        let p = BoxVar {
            cx: vars[0].index(0)?,
            cy: vars[0].index(1)?,
            w: vars[0].index(2)?,
            h: vars[0].index(3)?,
        };
        let g = BoxVar::constant(tape, &self.gt);
        let dx = p.cx.sub(g.cx)?;
        let dy = p.cy.sub(g.cy)?;
        let dist = dx.mul(dx)?.add(dy.mul(dy)?)?;
        match self.module {
            CheckModule::Wiou1 | CheckModule::Wiou3 => {
                let l_iou = detectlab_loss::l_iou(&p, &g).map_err(err)?;
                let amplifier = dist.scale(1.0 / self.diag).exp();
                let v1 = amplifier.mul(l_iou)?;
                Ok(if self.module == CheckModule::Wiou3 {
                    v1.scale(self.r)
                } else {
                    v1
                })
            }
            _ => {
                let iou = detectlab_loss::iou_var(&p, &g).map_err(err)?;
                // the enclosing diagonal stays live in this loss
                let right = p.right().map_err(err)?.maximum(g.right().map_err(err)?)?;
                let left = p.left().map_err(err)?.minimum(g.left().map_err(err)?)?;
                let bottom = p.bottom().map_err(err)?.maximum(g.bottom().map_err(err)?)?;
                let top = p.top().map_err(err)?.minimum(g.top().map_err(err)?)?;
                let wg = right.sub(left)?;
                let hg = bottom.sub(top)?;
                let diag = wg.mul(wg)?.add(hg.mul(hg)?)?.add_scalar(1e-12);
                let v = {
                    let d = p
                        .w
                        .div(p.h)?
                        .atan()
                        .neg()
                        .add_scalar((self.gt.w / self.gt.h).atan());
                    d.mul(d)?
                        .scale(4.0 / (std::f64::consts::PI * std::f64::consts::PI))
                };
                iou.neg()
                    .add_scalar(1.0)
                    .add(dist.div(diag)?)?
                    .add(v.scale(self.alpha_v))
            }
        }
    }
}

/// Runs the named module's gradient check.
pub fn run_check(module: CheckModule, seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = XorShiftRng::new(seed);
    match module {
        CheckModule::Conv => {
            let x = rand_tensor(&mut rng, &[1, 2, 9, 9], -1.0, 1.0);
            let w = rand_tensor(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
            let b = rand_tensor(&mut rng, &[3], -0.5, 0.5);
            grad_check(
                |_t: &Tape<f64>, v: &[Var<'_, f64>]| {
                    let y = v[0].conv2d(v[1], Some(v[2]), 1, 3, 3)?;
                    Ok(y.sigmoid().add_scalar(-0.5).sum_all())
                },
                &[x, w, b],
                GRADCHECK_STEP,
                tol,
                GRADCHECK_COORDS,
                seed ^ 0xc0,
            )
            .map_err(CliError::from)
        }
        CheckModule::Cbs => {
            let cbs = Cbs::new("c", 3, 4, 3, 1);
            let mut reg = ParamRegistry::new();
            cbs.register(&mut reg, &mut rng)?;
            let x = rand_tensor(&mut rng, &[2, 3, 6, 6], -1.0, 1.0);
            check_registered_block(
                &reg,
                x,
                move |leaves, reg, xv| cbs.forward(leaves, reg, xv, Some(&mut Vec::new())),
                tol,
                seed ^ 0xc1,
            )
        }
        CheckModule::Ca => {
            let block = CaBlock::new("ca", CaConfig::new(8, 2).map_err(CliError::from)?);
            let mut reg = ParamRegistry::new();
            block.register(&mut reg, &mut rng)?;
            let x = rand_tensor(&mut rng, &[2, 8, 5, 4], -1.0, 1.0);
            check_registered_block(
                &reg,
                x,
                move |leaves, reg, xv| {
                    block
                        .forward(leaves, reg, xv, Some(&mut Vec::new()))
                        .map(|(y, _, _)| y)
                },
                tol,
                seed ^ 0xc2,
            )
        }
        CheckModule::Rfb => {
            let block = RfbBlock::new("rfb", RfbConfig::default_for(8, 8))?;
            let mut reg = ParamRegistry::new();
            block.register(&mut reg, &mut rng)?;
            let x = rand_tensor(&mut rng, &[1, 8, 6, 6], -1.0, 1.0);
            check_registered_block(
                &reg,
                x,
                move |leaves, reg, xv| block.forward(leaves, reg, xv, Some(&mut Vec::new())),
                tol,
                seed ^ 0xc3,
            )
        }
        CheckModule::Sppcspc => {
            let block = SppcspcBlock::new("spp", 8, 8)?;
            let mut reg = ParamRegistry::new();
            block.register(&mut reg, &mut rng)?;
            // 14x14 keeps the kernel-13 pool windows distinct; smaller inputs
            // make pooled channels constant and batch-norm shift invariance
            // then zeroes some weight gradients exactly.
            let x = rand_tensor(&mut rng, &[1, 8, 14, 14], -1.0, 1.0);
            check_registered_block(
                &reg,
                x,
                move |leaves, reg, xv| block.forward(leaves, reg, xv, Some(&mut Vec::new())),
                tol,
                seed ^ 0xc4,
            )
        }
        CheckModule::Wiou1 | CheckModule::Wiou3 | CheckModule::Ciou => {
            check_box_loss(module, seed, tol)
        }
    }
}
