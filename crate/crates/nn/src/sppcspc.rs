//! Spatial-pyramid-pooling cross-stage block, the baseline the multi-branch
//! dilated block replaces in the ablation grid.
//!
//! Split paths: A is a single 1x1 unit; B runs 1x1 -> 3x3 -> 1x1, then three
//! parallel same-padded max pools (5/9/13) concatenated with the pre-pool
//! features, then 1x1 -> 3x3. A final 1x1 unit fuses concat(B, A).

use detectlab_tensor::{Scalar, Var, XorShiftRng};

use crate::cbs::Cbs;
use crate::error::{NnError, Result};
use crate::registry::{BnUpdate, LeafMap, ParamRegistry};

const POOL_KERNELS: [usize; 3] = [5, 9, 13];

#[derive(Debug, Clone)]
pub struct SppcspcBlock {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    hidden: usize,
    cv_a: Cbs,
    cv_b1: Cbs,
    cv_b2: Cbs,
    cv_b3: Cbs,
    cv_merge1: Cbs,
    cv_merge2: Cbs,
    cv_out: Cbs,
}

impl SppcspcBlock {
    pub fn new(name: impl Into<String>, in_ch: usize, out_ch: usize) -> Result<Self> {
        if out_ch < 2 {
            return Err(NnError::Config("output width must be at least 2".into()));
        }
        let name = name.into();
        let hidden = out_ch / 2;
        Ok(SppcspcBlock {
            cv_a: Cbs::new(format!("{name}.a"), in_ch, hidden, 1, 1),
            cv_b1: Cbs::new(format!("{name}.b1"), in_ch, hidden, 1, 1),
            cv_b2: Cbs::new(format!("{name}.b2"), hidden, hidden, 3, 1),
            cv_b3: Cbs::new(format!("{name}.b3"), hidden, hidden, 1, 1),
            cv_merge1: Cbs::new(format!("{name}.m1"), hidden * 4, hidden, 1, 1),
            cv_merge2: Cbs::new(format!("{name}.m2"), hidden, hidden, 3, 1),
            cv_out: Cbs::new(format!("{name}.out"), hidden * 2, out_ch, 1, 1),
            name,
            in_ch,
            out_ch,
            hidden,
        })
    }

    pub fn register<T: Scalar>(&self, reg: &mut ParamRegistry<T>, rng: &mut XorShiftRng) -> Result<()> {
        for cbs in [
            &self.cv_a,
            &self.cv_b1,
            &self.cv_b2,
            &self.cv_b3,
            &self.cv_merge1,
            &self.cv_merge2,
            &self.cv_out,
        ] {
            cbs.register(reg, rng)?;
        }
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Spatial size preserved (pools are stride 1, same-padded).
    pub fn forward<'g, T: Scalar>(
        &self,
        leaves: &LeafMap<'g, T>,
        reg: &ParamRegistry<T>,
        x: Var<'g, T>,
        mut bn_updates: Option<&mut Vec<BnUpdate<T>>>,
    ) -> Result<Var<'g, T>> {
        let a = self.cv_a.forward(leaves, reg, x, bn_updates.as_deref_mut())?;
        let mut b = self.cv_b1.forward(leaves, reg, x, bn_updates.as_deref_mut())?;
        b = self.cv_b2.forward(leaves, reg, b, bn_updates.as_deref_mut())?;
        b = self.cv_b3.forward(leaves, reg, b, bn_updates.as_deref_mut())?;
        let mut pyramid = vec![b];
        for k in POOL_KERNELS {
            pyramid.push(b.pool_max2d(k, 1, (k - 1) / 2)?);
        }
        let mut merged = x.tape().concat(&pyramid, 1)?;
        merged = self
            .cv_merge1
            .forward(leaves, reg, merged, bn_updates.as_deref_mut())?;
        merged = self
            .cv_merge2
            .forward(leaves, reg, merged, bn_updates.as_deref_mut())?;
        let cat = x.tape().concat(&[merged, a], 1)?;
        self.cv_out.forward(leaves, reg, cat, bn_updates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use detectlab_tensor::{Tape, Tensor};

    #[test]
    fn preserves_spatial_shape() {
        let block = SppcspcBlock::new("spp", 32, 32).unwrap();
        let mut reg = ParamRegistry::<f64>::new();
        let mut rng = XorShiftRng::new(4);
        block.register(&mut reg, &mut rng).unwrap();
        let tape = Tape::new();
        let x = tape.constant(&Tensor::full(&[1, 32, 20, 20], 0.1));
        let leaves = reg.leaves(&tape, false);
        let y = block.forward(&leaves, &reg, x, Some(&mut Vec::new())).unwrap();
        assert_eq!(y.shape(), vec![1, 32, 20, 20]);
    }

    #[test]
    fn small_inputs_survive_large_pool_padding() {
        // 8x8 input with kernel-13 pooling at padding 6 stays valid.
        let block = SppcspcBlock::new("spp", 8, 8).unwrap();
        let mut reg = ParamRegistry::<f64>::new();
        let mut rng = XorShiftRng::new(4);
        block.register(&mut reg, &mut rng).unwrap();
        let tape = Tape::new();
        let x = tape.constant(&Tensor::full(&[1, 8, 8, 8], -0.3));
        let leaves = reg.leaves(&tape, false);
        let y = block.forward(&leaves, &reg, x, Some(&mut Vec::new())).unwrap();
        assert_eq!(y.shape(), vec![1, 8, 8, 8]);
        assert!(y.value_vec().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn constant_input_gives_constant_interior() {
        // Max pools are the identity on constants, so away from the
        // zero-padding fringe (the widest pool reaches 6 cells in, plus one
        // each for the two 3x3 convs) every output channel is constant.
        let block = SppcspcBlock::new("spp", 4, 4).unwrap();
        let mut reg = ParamRegistry::<f64>::new();
        let mut rng = XorShiftRng::new(4);
        block.register(&mut reg, &mut rng).unwrap();
        let tape = Tape::new();
        let size = 24;
        let x = tape.constant(&Tensor::full(&[1, 4, size, size], 0.7));
        let leaves = reg.leaves(&tape, false);
        let y = block.forward(&leaves, &reg, x, None).unwrap();
        let v = y.value_vec();
        assert!(v.iter().all(|x| x.is_finite()));
        let margin = 8;
        for c in 0..4 {
            let first = v[(c * size + margin) * size + margin];
            for i in margin..size - margin {
                for j in margin..size - margin {
                    let got = v[(c * size + i) * size + j];
                    assert!((got - first).abs() < 1e-12, "channel {c} at ({i},{j})");
                }
            }
        }
    }
}
