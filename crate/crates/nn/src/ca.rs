//! Coordinate attention: channel attention factored into per-row and
//! per-column gates.
//!
//! Directional average pooling encodes each channel along height and width
//! separately; the two encodings share a 1x1 reduction, split back apart,
//! and two 1x1 transforms with sigmoids produce the gates `g_h` and `g_w`.
//! The output is `y(n,c,i,j) = x(n,c,i,j) * g_h(n,c,i) * g_w(n,c,j)`.

use std::path::{Path, PathBuf};

use detectlab_tensor::{io, Scalar, Tensor, Var, XorShiftRng};

use crate::error::{NnError, Result};
use crate::registry::{conv_weight, BnUpdate, LeafMap, ParamRegistry, BN_EPS};

#[derive(Debug, Clone, Copy)]
pub struct CaConfig {
    pub channels: usize,
    /// Reduction ratio controlling the block's size.
    pub reduction: usize,
}

pub const CA_MIN_MID: usize = 4;

impl CaConfig {
    pub fn new(channels: usize, reduction: usize) -> Result<Self> {
        if channels == 0 {
            return Err(NnError::Config("channels must be positive".into()));
        }
        if reduction == 0 {
            return Err(NnError::Config("reduction must be positive".into()));
        }
        Ok(CaConfig {
            channels,
            reduction,
        })
    }

    pub fn default_for(channels: usize) -> Self {
        CaConfig {
            channels,
            reduction: 8,
        }
    }

    /// Intermediate width `max(4, C / r)`.
    pub fn mid_channels(&self) -> usize {
        (self.channels / self.reduction).max(CA_MIN_MID)
    }
}

#[derive(Debug, Clone)]
pub struct CaBlock {
    pub name: String,
    pub config: CaConfig,
}

impl CaBlock {
    pub fn new(name: impl Into<String>, config: CaConfig) -> Self {
        if config.channels / config.reduction < 1 {
            log::warn!(
                "coordinate attention: {} channels / reduction {} rounds below 1; clamping the intermediate width to {}",
                config.channels,
                config.reduction,
                config.mid_channels()
            );
        }
        CaBlock {
            name: name.into(),
            config,
        }
    }

    pub fn register<T: Scalar>(&self, reg: &mut ParamRegistry<T>, rng: &mut XorShiftRng) -> Result<()> {
        let c = self.config.channels;
        let mid = self.config.mid_channels();
        reg.add_param(format!("{}.embed.w", self.name), conv_weight(mid, c, 1, 1, rng))?;
        reg.add_param(format!("{}.embed.bn.g", self.name), Tensor::full(&[mid], T::ONE))?;
        reg.add_param(format!("{}.embed.bn.b", self.name), Tensor::zeros(&[mid]))?;
        reg.add_buffer(format!("{}.embed.bn.rm", self.name), Tensor::zeros(&[mid]))?;
        reg.add_buffer(format!("{}.embed.bn.rv", self.name), Tensor::full(&[mid], T::ONE))?;
        reg.add_param(format!("{}.fh.w", self.name), conv_weight(c, mid, 1, 1, rng))?;
        reg.add_param(format!("{}.fh.b", self.name), Tensor::zeros(&[c]))?;
        reg.add_param(format!("{}.fw.w", self.name), conv_weight(c, mid, 1, 1, rng))?;
        reg.add_param(format!("{}.fw.b", self.name), Tensor::zeros(&[c]))?;
        Ok(())
    }

    /// Returns `(y, g_h, g_w)` with `g_h: [N,C,H,1]`, `g_w: [N,C,1,W]`,
    /// every gate in (0, 1), and `y` the gated input.
    pub fn forward<'g, T: Scalar>(
        &self,
        leaves: &LeafMap<'g, T>,
        reg: &ParamRegistry<T>,
        x: Var<'g, T>,
        bn_updates: Option<&mut Vec<BnUpdate<T>>>,
    ) -> Result<(Var<'g, T>, Var<'g, T>, Var<'g, T>)> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.config.channels {
            return Err(NnError::Config(format!(
                "expected [N,{},H,W] input, got {:?}",
                self.config.channels, shape
            )));
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);

        let pooled_h = x.pool_avg_h()?; // [N,C,H,1]
        let pooled_w = x.pool_avg_w()?.reshape(vec![n, c, w, 1])?; // stored order matches
        let f = x.tape().concat(&[pooled_h, pooled_w], 2)?; // [N,C,H+W,1]

        let embed = f.conv2d(leaves.get(&format!("{}.embed.w", self.name))?, None, 1, 0, 1)?;
        let gamma = leaves.get(&format!("{}.embed.bn.g", self.name))?;
        let beta = leaves.get(&format!("{}.embed.bn.b", self.name))?;
        let eps = T::from_f64(BN_EPS);
        let normed = match bn_updates {
            Some(updates) => {
                let (y, stats) = embed.batch_norm_train(gamma, beta, eps)?;
                updates.push(BnUpdate {
                    name: format!("{}.embed.bn", self.name),
                    mean: stats.mean,
                    var: stats.var,
                });
                y
            }
            None => {
                let rm = reg.buffer(&format!("{}.embed.bn.rm", self.name))?;
                let rv = reg.buffer(&format!("{}.embed.bn.rv", self.name))?;
                embed.batch_norm_eval(gamma, beta, rm.data(), rv.data(), eps)?
            }
        };
        let act = normed.silu(); // [N,mid,H+W,1]

        let parts = act.split(&[h, w], 2)?;
        let f_h = parts[0]; // [N,mid,H,1]
        let f_w = parts[1]; // [N,mid,W,1]

        let g_h = f_h
            .conv2d(
                leaves.get(&format!("{}.fh.w", self.name))?,
                Some(leaves.get(&format!("{}.fh.b", self.name))?),
                1,
                0,
                1,
            )?
            .sigmoid(); // [N,C,H,1]
        let g_w = f_w
            .conv2d(
                leaves.get(&format!("{}.fw.w", self.name))?,
                Some(leaves.get(&format!("{}.fw.b", self.name))?),
                1,
                0,
                1,
            )?
            .reshape(vec![n, c, 1, w])?
            .sigmoid(); // [N,C,1,W]

        let y = x.mul(g_h)?.mul(g_w)?;
        Ok((y, g_h, g_w))
    }
}

/// Writes the per-channel outer products `g_h(i) * g_w(j)` of batch item 0
/// as a `[C,H,W]` tensor file, plus their channel mean as `[H,W]`, under
/// `dir`. Returns the two paths (maps, mean).
pub fn attention_maps_export<T: Scalar>(
    g_h: &Tensor<T>,
    g_w: &Tensor<T>,
    dir: impl AsRef<Path>,
) -> Result<(PathBuf, PathBuf)> {
    let (n, c, h, one) = g_h.dims4()?;
    let (n2, c2, one2, w) = g_w.dims4()?;
    if one != 1 || one2 != 1 || n != n2 || c != c2 || n == 0 {
        return Err(NnError::Config(format!(
            "expected gate shapes [N,C,H,1] and [N,C,1,W], got {:?} and {:?}",
            g_h.shape(),
            g_w.shape()
        )));
    }
    let mut maps = vec![T::ZERO; c * h * w];
    let mut mean = vec![T::ZERO; h * w];
    for ci in 0..c {
        for i in 0..h {
            let gh = g_h.data()[(ci * h) + i];
            for j in 0..w {
                let gw = g_w.data()[(ci * w) + j];
                let v = gh * gw;
                maps[(ci * h + i) * w + j] = v;
                mean[i * w + j] += v;
            }
        }
    }
    let inv_c = T::ONE / T::from_f64(c as f64);
    for v in mean.iter_mut() {
        *v = *v * inv_c;
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(detectlab_tensor::TensorError::Io)?;
    let maps_path = dir.join("attention_maps.tnsr");
    let mean_path = dir.join("attention_mean.tnsr");
    io::write_tensor(&Tensor::new(vec![c, h, w], maps)?, &maps_path)?;
    io::write_tensor(&Tensor::new(vec![h, w], mean)?, &mean_path)?;
    Ok((maps_path, mean_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use detectlab_tensor::Tape;

    fn build(c: usize, r: usize) -> (CaBlock, ParamRegistry<f64>) {
        let block = CaBlock::new("ca", CaConfig::new(c, r).unwrap());
        let mut reg = ParamRegistry::new();
        let mut rng = XorShiftRng::new(8);
        block.register(&mut reg, &mut rng).unwrap();
        (block, reg)
    }

    #[test]
    fn zero_final_transforms_quarter_the_input() {
        let (block, mut reg) = build(4, 8);
        for name in ["ca.fh.w", "ca.fw.w", "ca.fh.b", "ca.fw.b"] {
            for v in reg.param_mut(name).unwrap().data_mut() {
                *v = 0.0;
            }
        }
        let tape = Tape::new();
        let data: Vec<f64> = (0..4 * 6 * 5).map(|i| i as f64 * 0.1 - 3.0).collect();
        let x = tape.constant(&Tensor::new(vec![1, 4, 6, 5], data.clone()).unwrap());
        let leaves = reg.leaves(&tape, false);
        let (y, g_h, g_w) = block.forward(&leaves, &reg, x, Some(&mut Vec::new())).unwrap();
        assert!(g_h.value_vec().iter().all(|&v| v == 0.5));
        assert!(g_w.value_vec().iter().all(|&v| v == 0.5));
        for (got, want) in y.value_vec().iter().zip(data.iter().map(|v| v * 0.25)) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn output_shapes_match_contract() {
        let (block, reg) = build(8, 8);
        let tape = Tape::new();
        let x = tape.constant(&Tensor::full(&[2, 8, 7, 3], 0.2));
        let leaves = reg.leaves(&tape, false);
        let (y, g_h, g_w) = block.forward(&leaves, &reg, x, Some(&mut Vec::new())).unwrap();
        assert_eq!(y.shape(), vec![2, 8, 7, 3]);
        assert_eq!(g_h.shape(), vec![2, 8, 7, 1]);
        assert_eq!(g_w.shape(), vec![2, 8, 1, 3]);
        for v in g_h.value_vec().iter().chain(g_w.value_vec().iter()) {
            assert!((0.0..1.0).contains(v));
        }
    }

    #[test]
    fn gate_factorization_holds_pointwise() {
        let (block, reg) = build(4, 2);
        let tape = Tape::new();
        let mut rng = XorShiftRng::new(21);
        let data: Vec<f64> = (0..2 * 4 * 5 * 6).map(|_| rng.uniform(0.1, 2.0)).collect();
        let x = tape.constant(&Tensor::new(vec![2, 4, 5, 6], data.clone()).unwrap());
        let leaves = reg.leaves(&tape, false);
        let (y, g_h, g_w) = block.forward(&leaves, &reg, x, Some(&mut Vec::new())).unwrap();
        let yv = y.value_vec();
        let ghv = g_h.value_vec();
        let gwv = g_w.value_vec();
        for n in 0..2 {
            for c in 0..4 {
                for i in 0..5 {
                    for j in 0..6 {
                        let xi = data[((n * 4 + c) * 5 + i) * 6 + j];
                        let yi = yv[((n * 4 + c) * 5 + i) * 6 + j];
                        let want = ghv[(n * 4 + c) * 5 + i] * gwv[(n * 4 + c) * 6 + j];
                        assert!((yi / xi - want).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn forced_unit_gates_pass_input_through() {
        // drive the gate logits far positive via the biases
        let (block, mut reg) = build(4, 8);
        for name in ["ca.fh.w", "ca.fw.w"] {
            for v in reg.param_mut(name).unwrap().data_mut() {
                *v = 0.0;
            }
        }
        for name in ["ca.fh.b", "ca.fw.b"] {
            for v in reg.param_mut(name).unwrap().data_mut() {
                *v = 40.0;
            }
        }
        let tape = Tape::new();
        let data: Vec<f64> = (0..4 * 4 * 4).map(|i| i as f64 - 20.0).collect();
        let x = tape.constant(&Tensor::new(vec![1, 4, 4, 4], data.clone()).unwrap());
        let leaves = reg.leaves(&tape, false);
        let (y, _, _) = block.forward(&leaves, &reg, x, Some(&mut Vec::new())).unwrap();
        for (got, want) in y.value_vec().iter().zip(&data) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn mid_channels_clamped() {
        assert_eq!(CaConfig::new(64, 8).unwrap().mid_channels(), 8);
        assert_eq!(CaConfig::new(4, 8).unwrap().mid_channels(), CA_MIN_MID);
        assert_eq!(CaConfig::new(2, 8).unwrap().mid_channels(), CA_MIN_MID);
    }

    #[test]
    fn export_outer_product_and_round_trip() {
        let g_h = Tensor::new(vec![1, 1, 2, 1], vec![0.73f64, 0.27]).unwrap();
        let g_w = Tensor::new(vec![1, 1, 1, 2], vec![0.5f64, 0.5]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (maps_path, mean_path) = attention_maps_export(&g_h, &g_w, dir.path()).unwrap();
        let maps: Tensor<f64> = io::read_tensor(&maps_path).unwrap();
        assert_eq!(maps.shape(), &[1, 2, 2]);
        let want = [0.365, 0.365, 0.135, 0.135];
        for (got, want) in maps.data().iter().zip(want) {
            assert!((got - want).abs() < 1e-12);
        }
        // single channel: mean equals the map, bit-exact
        let mean: Tensor<f64> = io::read_tensor(&mean_path).unwrap();
        for (m, g) in mean.data().iter().zip(maps.data()) {
            assert_eq!(m.to_bits(), g.to_bits());
        }
    }

    #[test]
    fn uniform_half_gates_export_quarter_map() {
        let g_h = Tensor::new(vec![1, 2, 3, 1], vec![0.5f64; 6]).unwrap();
        let g_w = Tensor::new(vec![1, 2, 1, 4], vec![0.5f64; 8]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (maps_path, _) = attention_maps_export(&g_h, &g_w, dir.path()).unwrap();
        let maps: Tensor<f64> = io::read_tensor(&maps_path).unwrap();
        assert!(maps.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
