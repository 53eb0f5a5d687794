use serde::{Deserialize, Serialize};

use crate::error::{LossError, Result};

/// Axis-aligned box in pixels, stored as center plus size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Width and height must be strictly positive.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(LossError::DegenerateBox(format!(
                "cx={cx} cy={cy} w={w} h={h}"
            )));
        }
        Ok(BBox { cx, cy, w, h })
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }
    pub fn right(&self) -> f64 {
        self.cx + self.w / 2.0
    }
    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }
    pub fn bottom(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Intersection-over-union, in [0, 1]. Symmetric; 1 for identical boxes.
    pub fn iou(&self, other: &BBox) -> f64 {
        PairGeometry::of(self, other).iou
    }

    /// IoU loss, `1 - iou`.
    pub fn l_iou(&self, other: &BBox) -> f64 {
        1.0 - self.iou(other)
    }
}

/// Geometry of a box pair: overlap, minimum enclosing box and center offset.
#[derive(Debug, Clone, Copy)]
pub struct PairGeometry {
    pub iou: f64,
    /// Intersection width/height (>= 0).
    pub wi: f64,
    pub hi: f64,
    /// Minimum-enclosing-box width/height.
    pub wg: f64,
    pub hg: f64,
    pub center_dist_sq: f64,
}

impl PairGeometry {
    pub fn of(a: &BBox, b: &BBox) -> Self {
        let wi = (a.right().min(b.right()) - a.left().max(b.left())).max(0.0);
        let hi = (a.bottom().min(b.bottom()) - a.top().max(b.top())).max(0.0);
        let inter = wi * hi;
        let union = a.area() + b.area() - inter;
        let wg = a.right().max(b.right()) - a.left().min(b.left());
        let hg = a.bottom().max(b.bottom()) - a.top().min(b.top());
        let dx = a.cx - b.cx;
        let dy = a.cy - b.cy;
        PairGeometry {
            iou: inter / union,
            wi,
            hi,
            wg,
            hg,
            center_dist_sq: dx * dx + dy * dy,
        }
    }
}
