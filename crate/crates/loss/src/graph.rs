//! Tape-resident forms of the box losses, differentiable w.r.t. the
//! predicted box. Ground-truth boxes enter as constants.

use detectlab_tensor::{Scalar, Tape, Var};

use crate::bbox::BBox;
use crate::error::Result;
use crate::focus::{gradient_gain, outlier_degree, FocusState, WIoUParams};

/// Floor applied to the detached enclosing-box denominator so near-point
/// boxes cannot blow up the exponent.
const ENCLOSING_FLOOR: f64 = 1e-12;

/// A box whose four coordinates live on a tape.
#[derive(Clone, Copy)]
pub struct BoxVar<'g, T: Scalar> {
    pub cx: Var<'g, T>,
    pub cy: Var<'g, T>,
    pub w: Var<'g, T>,
    pub h: Var<'g, T>,
}

impl<'g, T: Scalar> BoxVar<'g, T> {
    /// Lifts a plain box onto the tape as constants.
    pub fn constant(tape: &'g Tape<T>, b: &BBox) -> Self {
        BoxVar {
            cx: tape.scalar(T::from_f64(b.cx)),
            cy: tape.scalar(T::from_f64(b.cy)),
            w: tape.scalar(T::from_f64(b.w)),
            h: tape.scalar(T::from_f64(b.h)),
        }
    }

    /// Lifts a plain box onto the tape as differentiable leaves.
    pub fn leaf(tape: &'g Tape<T>, b: &BBox) -> Self {
        BoxVar {
            cx: tape.leaf_grad(&detectlab_tensor::Tensor::scalar(T::from_f64(b.cx))),
            cy: tape.leaf_grad(&detectlab_tensor::Tensor::scalar(T::from_f64(b.cy))),
            w: tape.leaf_grad(&detectlab_tensor::Tensor::scalar(T::from_f64(b.w))),
            h: tape.leaf_grad(&detectlab_tensor::Tensor::scalar(T::from_f64(b.h))),
        }
    }

    pub fn left(&self) -> Result<Var<'g, T>> {
        Ok(self.cx.add(self.w.scale(T::from_f64(-0.5)))?)
    }
    pub fn right(&self) -> Result<Var<'g, T>> {
        Ok(self.cx.add(self.w.scale(T::from_f64(0.5)))?)
    }
    pub fn top(&self) -> Result<Var<'g, T>> {
        Ok(self.cy.add(self.h.scale(T::from_f64(-0.5)))?)
    }
    pub fn bottom(&self) -> Result<Var<'g, T>> {
        Ok(self.cy.add(self.h.scale(T::from_f64(0.5)))?)
    }
    pub fn area(&self) -> Result<Var<'g, T>> {
        Ok(self.w.mul(self.h)?)
    }

    /// Current values as a plain box.
    pub fn to_bbox(&self) -> Result<BBox> {
        Ok(BBox::new(
            self.cx.item()?.to_f64(),
            self.cy.item()?.to_f64(),
            self.w.item()?.to_f64(),
            self.h.item()?.to_f64(),
        )?)
    }
}

/// Intersection-over-union on the tape.
pub fn iou<'g, T: Scalar>(a: &BoxVar<'g, T>, b: &BoxVar<'g, T>) -> Result<Var<'g, T>> {
    let wi = a
        .right()?
        .minimum(b.right()?)?
        .sub(a.left()?.maximum(b.left()?)?)?
        .relu();
    let hi = a
        .bottom()?
        .minimum(b.bottom()?)?
        .sub(a.top()?.maximum(b.top()?)?)?
        .relu();
    let inter = wi.mul(hi)?;
    let union = a.area()?.add(b.area()?)?.sub(inter)?;
    Ok(inter.div(union)?)
}

/// IoU loss `1 - iou`.
pub fn l_iou<'g, T: Scalar>(pred: &BoxVar<'g, T>, gt: &BoxVar<'g, T>) -> Result<Var<'g, T>> {
    Ok(iou(pred, gt)?.neg().add_scalar(T::ONE))
}

/// Squared diagonal of the minimum enclosing box, `wg^2 + hg^2`.
fn enclosing_diag_sq<'g, T: Scalar>(
    a: &BoxVar<'g, T>,
    b: &BoxVar<'g, T>,
) -> Result<Var<'g, T>> {
    let wg = a.right()?.maximum(b.right()?)?.sub(a.left()?.minimum(b.left()?)?)?;
    let hg = a
        .bottom()?
        .maximum(b.bottom()?)?
        .sub(a.top()?.minimum(b.top()?)?)?;
    Ok(wg.mul(wg)?.add(hg.mul(hg)?)?)
}

/// Squared center distance.
fn center_dist_sq<'g, T: Scalar>(a: &BoxVar<'g, T>, b: &BoxVar<'g, T>) -> Result<Var<'g, T>> {
    let dx = a.cx.sub(b.cx)?;
    let dy = a.cy.sub(b.cy)?;
    Ok(dx.mul(dx)?.add(dy.mul(dy)?)?)
}

/// Center-distance amplifier `exp(dist^2 / (wg^2 + hg^2))` with the
/// enclosing-box denominator detached from the graph, so the gradient flows
/// through the numerator only. Equals 1 when centers coincide.
pub fn r_wiou<'g, T: Scalar>(pred: &BoxVar<'g, T>, gt: &BoxVar<'g, T>) -> Result<Var<'g, T>> {
    let floor = pred.cx.tape().scalar(T::from_f64(ENCLOSING_FLOOR));
    let denom = enclosing_diag_sq(pred, gt)?.detach().maximum(floor)?;
    Ok(center_dist_sq(pred, gt)?.div(denom)?.exp())
}

/// `r_wiou * l_iou`; zero iff the boxes coincide.
pub fn wiou_v1<'g, T: Scalar>(pred: &BoxVar<'g, T>, gt: &BoxVar<'g, T>) -> Result<Var<'g, T>> {
    Ok(r_wiou(pred, gt)?.mul(l_iou(pred, gt)?)?)
}

/// Focused variant: `r * wiou_v1` where `r` comes from the outlier degree of
/// the current IoU loss against `state`. `r` is a plain multiplier, so the
/// gradient is exactly `r` times the `wiou_v1` gradient. The state is not
/// updated here; callers fold in batch means via [`FocusState::update`].
pub fn wiou_v3<'g, T: Scalar>(
    pred: &BoxVar<'g, T>,
    gt: &BoxVar<'g, T>,
    state: &FocusState,
    params: &WIoUParams,
) -> Result<Var<'g, T>> {
    let v1 = wiou_v1(pred, gt)?;
    let l_iou_value = l_iou(pred, gt)?.item()?.to_f64();
    let beta = outlier_degree(l_iou_value, state)?;
    let r = gradient_gain(beta, params)?;
    Ok(v1.scale(T::from_f64(r)))
}

/// Baseline: `1 - iou + dist^2/diag^2 + alpha_v * v` with the standard
/// aspect-ratio consistency term; `alpha_v` is computed outside the graph.
pub fn ciou<'g, T: Scalar>(pred: &BoxVar<'g, T>, gt: &BoxVar<'g, T>) -> Result<Var<'g, T>> {
    let iou_var = iou(pred, gt)?;
    let dist = center_dist_sq(pred, gt)?;
    let diag = enclosing_diag_sq(pred, gt)?.add_scalar(T::from_f64(ENCLOSING_FLOOR));
    let base = iou_var.neg().add_scalar(T::ONE).add(dist.div(diag)?)?;

    let four_over_pi_sq = T::from_f64(4.0 / (std::f64::consts::PI * std::f64::consts::PI));
    let gt_atan = gt.w.div(gt.h)?.atan();
    let pred_atan = pred.w.div(pred.h)?.atan();
    let v = {
        let d = gt_atan.sub(pred_atan)?;
        d.mul(d)?.scale(four_over_pi_sq)
    };
    // trade-off weight, treated as a constant per the usual formulation
    let v_val = v.item()?.to_f64();
    let iou_val = iou_var.item()?.to_f64();
    let alpha_v = v_val / ((1.0 - iou_val) + v_val + 1e-12);
    Ok(base.add(v.scale(T::from_f64(alpha_v)))?)
}

/// Convenience value-level entry points (computed through the same graph).
pub fn r_wiou_value(pred: &BBox, gt: &BBox) -> Result<f64> {
    let tape = Tape::<f64>::new();
    let p = BoxVar::constant(&tape, pred);
    let g = BoxVar::constant(&tape, gt);
    Ok(r_wiou(&p, &g)?.item()?)
}

pub fn wiou_v1_value(pred: &BBox, gt: &BBox) -> Result<f64> {
    let tape = Tape::<f64>::new();
    let p = BoxVar::constant(&tape, pred);
    let g = BoxVar::constant(&tape, gt);
    Ok(wiou_v1(&p, &g)?.item()?)
}

pub fn wiou_v3_value(
    pred: &BBox,
    gt: &BBox,
    state: &FocusState,
    params: &WIoUParams,
) -> Result<f64> {
    let tape = Tape::<f64>::new();
    let p = BoxVar::constant(&tape, pred);
    let g = BoxVar::constant(&tape, gt);
    Ok(wiou_v3(&p, &g, state, params)?.item()?)
}

pub fn ciou_value(pred: &BBox, gt: &BBox) -> Result<f64> {
    let tape = Tape::<f64>::new();
    let p = BoxVar::constant(&tape, pred);
    let g = BoxVar::constant(&tape, gt);
    Ok(ciou(&p, &g)?.item()?)
}
