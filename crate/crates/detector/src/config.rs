//! Detector configuration: the three ablation axes plus training knobs.

use serde::{Deserialize, Serialize};

use crate::error::{DetectorError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeckKind {
    Sppcspc,
    Rfb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    None,
    Ca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxLossKind {
    Ciou,
    Wiou1,
    Wiou3,
}

impl std::fmt::Display for NeckKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NeckKind::Sppcspc => "sppcspc",
            NeckKind::Rfb => "rfb",
        })
    }
}

impl std::fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttentionKind::None => "none",
            AttentionKind::Ca => "ca",
        })
    }
}

impl std::fmt::Display for BoxLossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BoxLossKind::Ciou => "ciou",
            BoxLossKind::Wiou1 => "wiou1",
            BoxLossKind::Wiou3 => "wiou3",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub input_size: usize,
    /// Grid cells per side; the four stride-2 stages fix it to input/16.
    pub grid_size: usize,
    pub classes: usize,
    pub base_channels: usize,
    pub neck: NeckKind,
    pub attention: AttentionKind,
    pub box_loss: BoxLossKind,
    pub w_box: f64,
    pub w_obj: f64,
    pub w_cls: f64,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub wiou_alpha: f64,
    pub wiou_delta: f64,
    pub focus_momentum: f64,
    pub ca_reduction: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            input_size: 128,
            grid_size: 8,
            classes: 3,
            base_channels: 8,
            neck: NeckKind::Sppcspc,
            attention: AttentionKind::None,
            box_loss: BoxLossKind::Ciou,
            w_box: 5.0,
            w_obj: 1.0,
            w_cls: 1.0,
            lr: 0.01,
            momentum: 0.9,
            epochs: 30,
            batch_size: 8,
            seed: 0,
            wiou_alpha: 1.9,
            wiou_delta: 3.0,
            focus_momentum: 0.99,
            ca_reduction: 8,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(DetectorError::Config("need at least one class".into()));
        }
        if self.grid_size == 0 || self.input_size % self.grid_size != 0 {
            return Err(DetectorError::Config(format!(
                "input size {} not divisible by grid size {}",
                self.input_size, self.grid_size
            )));
        }
        if self.input_size != self.grid_size * 16 {
            return Err(DetectorError::Config(format!(
                "four stride-2 stages require input = 16 * grid ({} != 16 * {})",
                self.input_size, self.grid_size
            )));
        }
        if self.base_channels == 0 {
            return Err(DetectorError::Config("base channels must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(DetectorError::Config(
                "batch size and epochs must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(DetectorError::Config("bad optimizer hyperparameters".into()));
        }
        if !(self.focus_momentum > 0.0 && self.focus_momentum < 1.0) {
            return Err(DetectorError::Config("focus momentum must lie in (0,1)".into()));
        }
        if self.ca_reduction == 0 {
            return Err(DetectorError::Config("attention reduction must be positive".into()));
        }
        Ok(())
    }

    /// Pixels per grid cell.
    pub fn cell(&self) -> f64 {
        (self.input_size / self.grid_size) as f64
    }

    /// Channels of the head input (after the four doubling stages).
    pub fn neck_channels(&self) -> usize {
        self.base_channels * 8
    }

    /// Head output channels: tx, ty, tw, th, objectness, then class logits.
    pub fn head_channels(&self) -> usize {
        5 + self.classes
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: DetectorConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn label(&self) -> String {
        format!("{}+{}+{}", self.neck, self.attention, self.box_loss)
    }
}
