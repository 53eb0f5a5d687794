//! Loss invariants against independently coded corner-arithmetic oracles.

use detectlab_loss::{
    ciou_value, gradient_gain, wiou_v1_value, BBox, WIoUParams,
};
use detectlab_tensor::XorShiftRng;
use proptest::prelude::*;

/// Corner-arithmetic IoU written from scratch over (x1,y1,x2,y2) tuples,
/// independent of the center-size route in the library.
fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = (
        a.cx - a.w / 2.0,
        a.cy - a.h / 2.0,
        a.cx + a.w / 2.0,
        a.cy + a.h / 2.0,
    );
    let (bx1, by1, bx2, by2) = (
        b.cx - b.w / 2.0,
        b.cy - b.h / 2.0,
        b.cx + b.w / 2.0,
        b.cy + b.h / 2.0,
    );
    let ix = if ax2.min(bx2) > ax1.max(bx1) {
        ax2.min(bx2) - ax1.max(bx1)
    } else {
        0.0
    };
    let iy = if ay2.min(by2) > ay1.max(by1) {
        ay2.min(by2) - ay1.max(by1)
    } else {
        0.0
    };
    let inter = ix * iy;
    let ua = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
    inter / ua
}

/// Full WIoU v1 oracle from the same corner arithmetic.
fn oracle_wiou_v1(pred: &BBox, gt: &BBox) -> f64 {
    let l_iou = 1.0 - oracle_iou(pred, gt);
    let wg = (pred.cx + pred.w / 2.0).max(gt.cx + gt.w / 2.0)
        - (pred.cx - pred.w / 2.0).min(gt.cx - gt.w / 2.0);
    let hg = (pred.cy + pred.h / 2.0).max(gt.cy + gt.h / 2.0)
        - (pred.cy - pred.h / 2.0).min(gt.cy - gt.h / 2.0);
    let dist2 = (pred.cx - gt.cx).powi(2) + (pred.cy - gt.cy).powi(2);
    (dist2 / (wg * wg + hg * hg)).exp() * l_iou
}

/// Standard CIoU written out independently.
fn oracle_ciou(pred: &BBox, gt: &BBox) -> f64 {
    let iou = oracle_iou(pred, gt);
    let wg = (pred.cx + pred.w / 2.0).max(gt.cx + gt.w / 2.0)
        - (pred.cx - pred.w / 2.0).min(gt.cx - gt.w / 2.0);
    let hg = (pred.cy + pred.h / 2.0).max(gt.cy + gt.h / 2.0)
        - (pred.cy - pred.h / 2.0).min(gt.cy - gt.h / 2.0);
    let c2 = wg * wg + hg * hg + 1e-12;
    let rho2 = (pred.cx - gt.cx).powi(2) + (pred.cy - gt.cy).powi(2);
    let v = 4.0 / (std::f64::consts::PI * std::f64::consts::PI)
        * ((gt.w / gt.h).atan() - (pred.w / pred.h).atan()).powi(2);
    let alpha = v / (1.0 - iou + v + 1e-12);
    1.0 - iou + rho2 / c2 + alpha * v
}

fn random_box(rng: &mut XorShiftRng) -> BBox {
    BBox::new(
        rng.uniform(-50.0, 50.0),
        rng.uniform(-50.0, 50.0),
        rng.uniform(0.5, 40.0),
        rng.uniform(0.5, 40.0),
    )
    .unwrap()
}

#[test]
fn thousand_pairs_match_wiou_oracle_within_1e6() {
    let mut rng = XorShiftRng::new(12345);
    for _ in 0..1000 {
        let pred = random_box(&mut rng);
        let gt = random_box(&mut rng);
        let got = wiou_v1_value(&pred, &gt).unwrap();
        let want = oracle_wiou_v1(&pred, &gt);
        assert!(
            (got - want).abs() < 1e-6,
            "pred {pred:?} gt {gt:?}: {got} vs {want}"
        );
    }
}

#[test]
fn wiou_v1_dominates_l_iou() {
    let mut rng = XorShiftRng::new(777);
    for _ in 0..1000 {
        let pred = random_box(&mut rng);
        let gt = random_box(&mut rng);
        let v1 = wiou_v1_value(&pred, &gt).unwrap();
        assert!(v1 >= pred.l_iou(&gt) - 1e-12);
    }
}

#[test]
fn ciou_matches_independent_reference() {
    let mut rng = XorShiftRng::new(31415);
    for _ in 0..500 {
        let pred = random_box(&mut rng);
        let gt = random_box(&mut rng);
        let got = ciou_value(&pred, &gt).unwrap();
        let want = oracle_ciou(&pred, &gt);
        assert!(
            (got - want).abs() < 1e-10,
            "pred {pred:?} gt {gt:?}: {got} vs {want}"
        );
    }
}

#[test]
fn r_wiou_in_unit_e_interval_for_overlapping_pairs() {
    let mut rng = XorShiftRng::new(999);
    let mut checked = 0;
    while checked < 500 {
        let gt = random_box(&mut rng);
        // overlap by perturbing within half extents
        let pred = BBox::new(
            gt.cx + rng.uniform(-gt.w / 2.0, gt.w / 2.0),
            gt.cy + rng.uniform(-gt.h / 2.0, gt.h / 2.0),
            gt.w * rng.uniform(0.5, 1.5),
            gt.h * rng.uniform(0.5, 1.5),
        )
        .unwrap();
        if pred.iou(&gt) == 0.0 {
            continue;
        }
        checked += 1;
        let r = detectlab_loss::r_wiou_value(&pred, &gt).unwrap();
        assert!(
            (1.0..std::f64::consts::E).contains(&r),
            "pred {pred:?} gt {gt:?}: r = {r}"
        );
    }
}

#[test]
fn gain_monotone_up_then_down_by_grid_scan() {
    let params = WIoUParams { alpha: 1.9, delta: 3.0 };
    let peak = params.peak_beta();
    assert!((peak - 1.5578).abs() < 1e-3);
    let n = 4000;
    let max_beta = 12.0;
    let mut values = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let beta = max_beta * i as f64 / n as f64;
        values.push((beta, gradient_gain(beta, &params).unwrap()));
    }
    let mut maxima = 0;
    for w in values.windows(2) {
        let ((b0, r0), (_b1, r1)) = (w[0], w[1]);
        if b0 + max_beta / n as f64 <= peak {
            assert!(r1 > r0, "gain must increase before the peak (beta {b0})");
        } else if b0 >= peak {
            assert!(r1 < r0, "gain must decrease after the peak (beta {b0})");
        } else {
            maxima += 1; // the single cell containing the peak
        }
    }
    assert!(maxima <= 1);
}

proptest! {
    #[test]
    fn iou_invariant_under_similarity_transforms(
        cx in -20.0f64..20.0, cy in -20.0f64..20.0,
        w1 in 0.5f64..20.0, h1 in 0.5f64..20.0,
        dx in -15.0f64..15.0, dy in -15.0f64..15.0,
        w2 in 0.5f64..20.0, h2 in 0.5f64..20.0,
        tx in -100.0f64..100.0, ty in -100.0f64..100.0,
        scale in 0.1f64..10.0,
    ) {
        let a = BBox::new(cx, cy, w1, h1).unwrap();
        let b = BBox::new(cx + dx, cy + dy, w2, h2).unwrap();
        let t = |x: &BBox| BBox::new(
            x.cx * scale + tx,
            x.cy * scale + ty,
            x.w * scale,
            x.h * scale,
        ).unwrap();
        let before = a.iou(&b);
        let after = t(&a).iou(&t(&b));
        prop_assert!((before - after).abs() < 1e-12);
        // symmetry
        prop_assert!((a.iou(&b) - b.iou(&a)).abs() < 1e-12);
    }
}
