//! Conv + batch-norm + SiLU unit, the basic building block of every stage.

use detectlab_tensor::{Scalar, Tensor, Var, XorShiftRng};

use crate::error::Result;
use crate::registry::{conv_weight, BnUpdate, LeafMap, ParamRegistry, BN_EPS};

#[derive(Debug, Clone)]
pub struct Cbs {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Cbs {
    /// "Same" padding for odd kernels at the given dilation.
    pub fn new(name: impl Into<String>, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        Cbs::dilated(name, in_ch, out_ch, kernel, stride, 1)
    }

    pub fn dilated(
        name: impl Into<String>,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
    ) -> Self {
        Cbs {
            name: name.into(),
            in_ch,
            out_ch,
            kernel,
            stride,
            padding: dilation * (kernel - 1) / 2,
            dilation,
        }
    }

    fn bn_name(&self) -> String {
        format!("{}.bn", self.name)
    }

    /// Conv weight (no bias; the norm's shift covers it), norm scale/shift,
    /// and running statistics defaulting to mean 0, variance 1.
    pub fn register<T: Scalar>(&self, reg: &mut ParamRegistry<T>, rng: &mut XorShiftRng) -> Result<()> {
        reg.add_param(
            format!("{}.conv.w", self.name),
            conv_weight(self.out_ch, self.in_ch, self.kernel, self.kernel, rng),
        )?;
        reg.add_param(format!("{}.g", self.bn_name()), Tensor::full(&[self.out_ch], T::ONE))?;
        reg.add_param(format!("{}.b", self.bn_name()), Tensor::zeros(&[self.out_ch]))?;
        reg.add_buffer(format!("{}.rm", self.bn_name()), Tensor::zeros(&[self.out_ch]))?;
        reg.add_buffer(format!("{}.rv", self.bn_name()), Tensor::full(&[self.out_ch], T::ONE))?;
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        vec![
            format!("{}.conv.w", self.name),
            format!("{}.g", self.bn_name()),
            format!("{}.b", self.bn_name()),
        ]
    }

    /// Forward pass. `bn_updates: Some(_)` selects training mode (batch
    /// statistics, recorded for the caller); `None` selects eval mode
    /// (running statistics).
    pub fn forward<'g, T: Scalar>(
        &self,
        leaves: &LeafMap<'g, T>,
        reg: &ParamRegistry<T>,
        x: Var<'g, T>,
        bn_updates: Option<&mut Vec<BnUpdate<T>>>,
    ) -> Result<Var<'g, T>> {
        let w = leaves.get(&format!("{}.conv.w", self.name))?;
        let gamma = leaves.get(&format!("{}.g", self.bn_name()))?;
        let beta = leaves.get(&format!("{}.b", self.bn_name()))?;
        let conv = x.conv2d(w, None, self.stride, self.padding, self.dilation)?;
        let eps = T::from_f64(BN_EPS);
        let normed = match bn_updates {
            Some(updates) => {
                let (y, stats) = conv.batch_norm_train(gamma, beta, eps)?;
                updates.push(BnUpdate {
                    name: self.bn_name(),
                    mean: stats.mean,
                    var: stats.var,
                });
                y
            }
            None => {
                let rm = reg.buffer(&format!("{}.rm", self.bn_name()))?;
                let rv = reg.buffer(&format!("{}.rv", self.bn_name()))?;
                conv.batch_norm_eval(gamma, beta, rm.data(), rv.data(), eps)?
            }
        };
        Ok(normed.silu())
    }
}
