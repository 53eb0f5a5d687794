//! Training/evaluation samples and batching.

use detectlab_loss::BBox;
use detectlab_tensor::Tensor;

use crate::error::{DetectorError, Result};

#[derive(Debug, Clone)]
pub struct Sample {
    /// Stable identifier, used as the image key in metric records.
    pub id: String,
    /// `[3, H, W]` pixels in [0, 1].
    pub image: Tensor<f32>,
    pub boxes: Vec<(BBox, usize)>,
}

/// Stacks sample images into one `[B, 3, H, W]` batch.
pub fn batch_images(samples: &[&Sample]) -> Result<Tensor<f32>> {
    let first = samples
        .first()
        .ok_or_else(|| DetectorError::Config("empty batch".into()))?;
    let shape = first.image.shape().to_vec();
    let mut data = Vec::with_capacity(samples.len() * first.image.numel());
    for s in samples {
        if s.image.shape() != shape {
            return Err(DetectorError::Config(format!(
                "inconsistent image shapes in batch: {:?} vs {:?}",
                s.image.shape(),
                shape
            )));
        }
        data.extend_from_slice(s.image.data());
    }
    let mut out_shape = vec![samples.len()];
    out_shape.extend_from_slice(&shape);
    Ok(Tensor::new(out_shape, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batching_stacks_along_dim_zero() {
        let a = Sample {
            id: "a".into(),
            image: Tensor::full(&[3, 2, 2], 1.0),
            boxes: vec![],
        };
        let b = Sample {
            id: "b".into(),
            image: Tensor::full(&[3, 2, 2], 2.0),
            boxes: vec![],
        };
        let batch = batch_images(&[&a, &b]).unwrap();
        assert_eq!(batch.shape(), &[2, 3, 2, 2]);
        assert_eq!(batch.data()[0], 1.0);
        assert_eq!(batch.data()[12], 2.0);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let a = Sample {
            id: "a".into(),
            image: Tensor::zeros(&[3, 2, 2]),
            boxes: vec![],
        };
        let b = Sample {
            id: "b".into(),
            image: Tensor::zeros(&[3, 4, 4]),
            boxes: vec![],
        };
        assert!(batch_images(&[&a, &b]).is_err());
    }
}
