//! Model assembly: four downsampling stages, a swappable neck, optional
//! coordinate attention, and a 1x1 prediction head.

use detectlab_loss::FocusState;
use detectlab_nn::{
    conv_weight, BnUpdate, CaBlock, CaConfig, Cbs, LeafMap, ParamRegistry, RfbBlock, RfbConfig,
    SppcspcBlock,
};
use detectlab_tensor::{Tape, Tensor, Var, XorShiftRng};

use crate::config::{AttentionKind, DetectorConfig, NeckKind};
use crate::error::{DetectorError, Result};

pub enum Neck {
    Sppcspc(SppcspcBlock),
    Rfb(RfbBlock),
}

pub struct DetectorModel {
    pub config: DetectorConfig,
    pub registry: ParamRegistry<f32>,
    stages: Vec<Cbs>,
    neck: Neck,
    ca: Option<CaBlock>,
    pub focus: FocusState,
    /// Completed optimizer steps.
    pub steps: u64,
    /// Completed epochs (for resume).
    pub epochs_done: usize,
}

/// Raw head output plus the attention gates when attention is enabled.
pub struct ModelOutput<'g> {
    /// `[N, 5+K, S, S]`
    pub raw: Var<'g, f32>,
    pub g_h: Option<Var<'g, f32>>,
    pub g_w: Option<Var<'g, f32>>,
}

/// Decoded-layout prediction values `[N, S, S, 5+K]`.
pub struct PredictionGrid {
    pub tensor: Tensor<f32>,
    pub grid_size: usize,
    pub classes: usize,
    pub cell: f64,
}

pub fn build_model(config: &DetectorConfig) -> Result<DetectorModel> {
    config.validate()?;
    let mut rng = XorShiftRng::derive(config.seed, 0xD37EC7);
    let mut registry = ParamRegistry::new();
    let b = config.base_channels;
    let widths = [b, 2 * b, 4 * b, 8 * b];
    let mut stages = Vec::with_capacity(4);
    let mut in_ch = 3;
    for (i, &out_ch) in widths.iter().enumerate() {
        let cbs = Cbs::new(format!("stage{i}"), in_ch, out_ch, 3, 2);
        cbs.register(&mut registry, &mut rng)?;
        stages.push(cbs);
        in_ch = out_ch;
    }
    let neck_ch = config.neck_channels();
    let neck = match config.neck {
        NeckKind::Sppcspc => {
            let block = SppcspcBlock::new("neck", neck_ch, neck_ch)
                .map_err(DetectorError::Nn)?;
            block.register(&mut registry, &mut rng)?;
            Neck::Sppcspc(block)
        }
        NeckKind::Rfb => {
            let block = RfbBlock::new("neck", RfbConfig::default_for(neck_ch, neck_ch))
                .map_err(DetectorError::Nn)?;
            block.register(&mut registry, &mut rng)?;
            Neck::Rfb(block)
        }
    };
    let ca = match config.attention {
        AttentionKind::None => None,
        AttentionKind::Ca => {
            let block = CaBlock::new(
                "ca",
                CaConfig::new(neck_ch, config.ca_reduction).map_err(DetectorError::Nn)?,
            );
            block.register(&mut registry, &mut rng)?;
            Some(block)
        }
    };
    registry.add_param(
        "head.w",
        conv_weight::<f32>(config.head_channels(), neck_ch, 1, 1, &mut rng),
    )?;
    registry.add_param("head.b", Tensor::zeros(&[config.head_channels()]))?;

    Ok(DetectorModel {
        config: config.clone(),
        registry,
        stages,
        neck,
        ca,
        focus: FocusState::new(config.focus_momentum)?,
        steps: 0,
        epochs_done: 0,
    })
}

impl DetectorModel {
    pub fn param_count(&self) -> usize {
        self.registry.param_count()
    }

    /// Forward to the raw `[N, 5+K, S, S]` head output. Training mode when
    /// `bn_updates` is provided.
    pub fn forward<'g>(
        &self,
        leaves: &LeafMap<'g, f32>,
        x: Var<'g, f32>,
        mut bn_updates: Option<&mut Vec<BnUpdate<f32>>>,
    ) -> Result<ModelOutput<'g>> {
        let mut t = x;
        for stage in &self.stages {
            t = stage.forward(leaves, &self.registry, t, bn_updates.as_deref_mut())?;
        }
        t = match &self.neck {
            Neck::Sppcspc(block) => {
                block.forward(leaves, &self.registry, t, bn_updates.as_deref_mut())?
            }
            Neck::Rfb(block) => {
                block.forward(leaves, &self.registry, t, bn_updates.as_deref_mut())?
            }
        };
        let (t, g_h, g_w) = match &self.ca {
            Some(block) => {
                let (y, g_h, g_w) =
                    block.forward(leaves, &self.registry, t, bn_updates.as_deref_mut())?;
                (y, Some(g_h), Some(g_w))
            }
            None => (t, None, None),
        };
        let raw = t.conv2d(leaves.get("head.w")?, Some(leaves.get("head.b")?), 1, 0, 1)?;
        Ok(ModelOutput { raw, g_h, g_w })
    }

    /// Eval-mode forward for a plain image batch `[N,3,H,W]`, returning the
    /// channels-last prediction grid. Pure w.r.t. `self`.
    pub fn predict(&self, images: &Tensor<f32>) -> Result<PredictionGrid> {
        let tape = Tape::new();
        let leaves = self.registry.leaves(&tape, false);
        let x = tape.constant(images);
        let out = self.forward(&leaves, x, None)?;
        Ok(self.grid_from_raw(&out.raw.value()))
    }

    /// Eval-mode forward that also returns the attention gates of batch
    /// item 0, when attention is enabled.
    pub fn predict_with_attention(
        &self,
        images: &Tensor<f32>,
    ) -> Result<(PredictionGrid, Option<(Tensor<f32>, Tensor<f32>)>)> {
        let tape = Tape::new();
        let leaves = self.registry.leaves(&tape, false);
        let x = tape.constant(images);
        let out = self.forward(&leaves, x, None)?;
        let gates = match (out.g_h, out.g_w) {
            (Some(h), Some(w)) => Some((h.value(), w.value())),
            _ => None,
        };
        Ok((self.grid_from_raw(&out.raw.value()), gates))
    }

    /// Reorders raw `[N, 5+K, S, S]` values into `[N, S, S, 5+K]`.
    pub fn grid_from_raw(&self, raw: &Tensor<f32>) -> PredictionGrid {
        let (n, c, s, _) = raw.dims4().expect("head output is 4-d");
        let mut data = vec![0.0f32; raw.numel()];
        let src = raw.data();
        for ni in 0..n {
            for ci in 0..c {
                for row in 0..s {
                    for col in 0..s {
                        data[((ni * s + row) * s + col) * c + ci] =
                            src[((ni * c + ci) * s + row) * s + col];
                    }
                }
            }
        }
        PredictionGrid {
            tensor: Tensor::new(vec![n, s, s, c], data).expect("permuted layout"),
            grid_size: s,
            classes: self.config.classes,
            cell: self.config.cell(),
        }
    }

    /// Analytic multiply-accumulate count of one single-image forward pass
    /// (convolutions only).
    pub fn mac_estimate(&self) -> u64 {
        let conv = |cout: usize, cin: usize, k: usize, oh: usize, ow: usize| -> u64 {
            (cout * cin * k * k * oh * ow) as u64
        };
        let mut macs = 0u64;
        let mut size = self.config.input_size;
        let mut in_ch = 3usize;
        for stage in &self.stages {
            size /= 2;
            macs += conv(stage.out_ch, in_ch, stage.kernel, size, size);
            in_ch = stage.out_ch;
        }
        let s = size;
        let c = in_ch;
        match &self.neck {
            Neck::Sppcspc(block) => {
                let h = block.hidden();
                macs += conv(h, c, 1, s, s); // path a
                macs += conv(h, c, 1, s, s); // b1
                macs += conv(h, h, 3, s, s); // b2
                macs += conv(h, h, 1, s, s); // b3
                macs += conv(h, 4 * h, 1, s, s); // merge1
                macs += conv(h, h, 3, s, s); // merge2
                macs += conv(block.out_ch, 2 * h, 1, s, s); // out
            }
            Neck::Rfb(block) => {
                let cfg = &block.config;
                let mid = cfg.mid_channels();
                for (&(k, _d), &width) in cfg.branches.iter().zip(&cfg.branch_widths()) {
                    macs += conv(mid, cfg.in_ch, 1, s, s);
                    for _ in 0..(k - 1) / 2 {
                        macs += conv(mid, mid, 3, s, s);
                    }
                    macs += conv(width, mid, 3, s, s);
                }
                macs += conv(cfg.out_ch, cfg.out_ch, 1, s, s); // fuse
                macs += conv(cfg.out_ch, cfg.in_ch, 1, s, s); // shortcut
            }
        }
        if let Some(block) = &self.ca {
            let mid = block.config.mid_channels();
            macs += conv(mid, c, 1, 2 * s, 1); // shared embedding over H+W
            macs += conv(c, mid, 1, s, 1) * 2; // the two gate transforms
        }
        macs += conv(self.config.head_channels(), c, 1, s, s);
        macs
    }
}
