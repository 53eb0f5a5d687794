//! Multi-branch block pairing a pre-convolution with a dilated convolution
//! per branch, so each branch sees a different effective receptive field.
//! Branch outputs concatenate to the output width, pass through a fusing
//! 1x1 convolution, and join a scaled 1x1 shortcut under a final ReLU.

use detectlab_tensor::{Scalar, Tensor, Var, XorShiftRng};

use crate::cbs::Cbs;
use crate::error::{NnError, Result};
use crate::registry::{conv_weight, BnUpdate, LeafMap, ParamRegistry};

#[derive(Debug, Clone)]
pub struct RfbConfig {
    pub in_ch: usize,
    pub out_ch: usize,
    /// One (pre-kernel size, dilation rate) pair per branch. Pre-kernels of
    /// 5 and up are realized as stacked 3x3 convolutions.
    pub branches: Vec<(usize, usize)>,
    pub shortcut_scale: f64,
}

impl RfbConfig {
    /// Three branches with growing receptive fields: 1x1, 3x3 and 5x5
    /// pre-convolutions paired with dilations 1, 3 and 5.
    pub fn default_for(in_ch: usize, out_ch: usize) -> Self {
        RfbConfig {
            in_ch,
            out_ch,
            branches: vec![(1, 1), (3, 3), (5, 5)],
            shortcut_scale: 1.0,
        }
    }

    /// Output width of each branch; they sum to `out_ch`.
    pub fn branch_widths(&self) -> Vec<usize> {
        let nb = self.branches.len();
        let base = self.out_ch / nb;
        let extra = self.out_ch % nb;
        (0..nb).map(|i| base + usize::from(i < extra)).collect()
    }

    /// Hidden width inside each branch.
    pub fn mid_channels(&self) -> usize {
        (self.out_ch / 6).max(4)
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches.len() < 2 {
            return Err(NnError::Config(format!(
                "need at least 2 branches, got {}",
                self.branches.len()
            )));
        }
        for &(k, d) in &self.branches {
            if k % 2 == 0 || k == 0 {
                return Err(NnError::Config(format!("pre-kernel size {k} must be odd")));
            }
            if d == 0 {
                return Err(NnError::Config("dilation rates must be positive".into()));
            }
        }
        let widths = self.branch_widths();
        if widths.iter().any(|&w| w == 0) {
            return Err(NnError::Config(format!(
                "out_ch {} too small for {} branches",
                self.out_ch,
                self.branches.len()
            )));
        }
        if widths.iter().sum::<usize>() != self.out_ch {
            return Err(NnError::Config(format!(
                "branch widths {:?} do not sum to the fuse input width {}",
                widths, self.out_ch
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct RfbBranch {
    reduce: Cbs,
    pre: Vec<Cbs>,
    dilated: Cbs,
}

#[derive(Debug, Clone)]
pub struct RfbBlock {
    pub name: String,
    pub config: RfbConfig,
    branches: Vec<RfbBranch>,
}

impl RfbBlock {
    pub fn new(name: impl Into<String>, config: RfbConfig) -> Result<Self> {
        config.validate()?;
        let name = name.into();
        let mid = config.mid_channels();
        let widths = config.branch_widths();
        let branches = config
            .branches
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (&(k, d), &width))| {
                let prefix = format!("{name}.b{i}");
                let reduce = Cbs::new(format!("{prefix}.reduce"), config.in_ch, mid, 1, 1);
                // stack (k-1)/2 3x3 units to emulate a kxk pre-convolution
                let pre = (0..(k - 1) / 2)
                    .map(|j| Cbs::new(format!("{prefix}.pre{j}"), mid, mid, 3, 1))
                    .collect();
                let dilated = Cbs::dilated(format!("{prefix}.dil"), mid, width, 3, 1, d);
                RfbBranch {
                    reduce,
                    pre,
                    dilated,
                }
            })
            .collect();
        Ok(RfbBlock {
            name,
            config,
            branches,
        })
    }

    pub fn register<T: Scalar>(&self, reg: &mut ParamRegistry<T>, rng: &mut XorShiftRng) -> Result<()> {
        for b in &self.branches {
            b.reduce.register(reg, rng)?;
            for p in &b.pre {
                p.register(reg, rng)?;
            }
            b.dilated.register(reg, rng)?;
        }
        reg.add_param(
            format!("{}.fuse.w", self.name),
            conv_weight(self.config.out_ch, self.config.out_ch, 1, 1, rng),
        )?;
        reg.add_param(format!("{}.fuse.b", self.name), Tensor::zeros(&[self.config.out_ch]))?;
        reg.add_param(
            format!("{}.short.w", self.name),
            conv_weight(self.config.out_ch, self.config.in_ch, 1, 1, rng),
        )?;
        reg.add_param(format!("{}.short.b", self.name), Tensor::zeros(&[self.config.out_ch]))?;
        Ok(())
    }

    /// Spatial size is preserved; channels go from `in_ch` to `out_ch`.
    pub fn forward<'g, T: Scalar>(
        &self,
        leaves: &LeafMap<'g, T>,
        reg: &ParamRegistry<T>,
        x: Var<'g, T>,
        mut bn_updates: Option<&mut Vec<BnUpdate<T>>>,
    ) -> Result<Var<'g, T>> {
        let mut outs = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let mut t = b.reduce.forward(leaves, reg, x, bn_updates.as_deref_mut())?;
            for p in &b.pre {
                t = p.forward(leaves, reg, t, bn_updates.as_deref_mut())?;
            }
            t = b.dilated.forward(leaves, reg, t, bn_updates.as_deref_mut())?;
            outs.push(t);
        }
        let cat = x.tape().concat(&outs, 1)?;
        let fused = cat.conv2d(
            leaves.get(&format!("{}.fuse.w", self.name))?,
            Some(leaves.get(&format!("{}.fuse.b", self.name))?),
            1,
            0,
            1,
        )?;
        let shortcut = x.conv2d(
            leaves.get(&format!("{}.short.w", self.name))?,
            Some(leaves.get(&format!("{}.short.b", self.name))?),
            1,
            0,
            1,
        )?;
        Ok(fused
            .add(shortcut.scale(T::from_f64(self.config.shortcut_scale)))?
            .relu())
    }
}
