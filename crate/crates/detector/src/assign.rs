//! Target assignment: the cell containing a ground-truth center is positive
//! for that ground truth; when two share a cell, the larger area wins.

use detectlab_loss::BBox;
use detectlab_tensor::Tensor;

use crate::config::DetectorConfig;


/// One positive cell and its assigned ground truth.
#[derive(Debug, Clone)]
pub struct PositiveCell {
    pub image: usize,
    pub row: usize,
    pub col: usize,
    pub gt: BBox,
    pub class: usize,
}

#[derive(Debug, Clone)]
pub struct Targets {
    pub positives: Vec<PositiveCell>,
    /// Objectness targets, `[N, 1, S, S]`: 1 at positive cells.
    pub obj: Tensor<f32>,
}

/// Assigns a batch of per-image ground-truth lists to grid cells.
/// Cell index = floor(coordinate / cell), clamped to the grid (half-open
/// cell intervals; a center exactly on the far edge lands in the last cell).
pub fn assign_targets(batch: &[Vec<(BBox, usize)>], config: &DetectorConfig) -> Targets {
    let s = config.grid_size;
    let cell = config.cell();
    let mut best: Vec<Option<(f64, BBox, usize)>> = vec![None; batch.len() * s * s];
    for (image, gts) in batch.iter().enumerate() {
        for &(bbox, class) in gts {
            let col = ((bbox.cx / cell).floor() as i64).clamp(0, s as i64 - 1) as usize;
            let row = ((bbox.cy / cell).floor() as i64).clamp(0, s as i64 - 1) as usize;
            let slot = &mut best[(image * s + row) * s + col];
            let replace = match slot {
                None => true,
                Some((area, _, _)) => bbox.area() > *area,
            };
            if replace {
                *slot = Some((bbox.area(), bbox, class));
            }
        }
    }
    let mut positives = Vec::new();
    let mut obj = Tensor::zeros(&[batch.len(), 1, s, s]);
    for image in 0..batch.len() {
        for row in 0..s {
            for col in 0..s {
                if let Some((_, gt, class)) = best[(image * s + row) * s + col] {
                    obj.data_mut()[(image * s + row) * s + col] = 1.0;
                    positives.push(PositiveCell {
                        image,
                        row,
                        col,
                        gt,
                        class,
                    });
                }
            }
        }
    }
    Targets { positives, obj }
}
