//! Bounding-box regression losses.
//!
//! The plain IoU loss is amplified by a detached center-distance factor
//! (`wiou_v1`), then scaled by a dynamic non-monotonic gain driven by a
//! running mean of IoU losses (`wiou_v3`). A standard CIoU implementation
//! serves as the comparison baseline.

pub mod bbox;
pub mod bench;
pub mod error;
pub mod focus;
pub mod graph;

pub use bbox::{BBox, PairGeometry};
pub use error::{LossError, Result};
pub use focus::{gradient_gain, outlier_degree, FocusState, WIoUParams};
pub use graph::{
    ciou, ciou_value, iou as iou_var, l_iou, r_wiou, r_wiou_value, wiou_v1, wiou_v1_value,
    wiou_v3, wiou_v3_value, BoxVar,
};
