//! Dynamic focusing state and gain.
//!
//! The outlier degree of an anchor is its current IoU loss over a running
//! mean of IoU losses; the gain `r = beta / (delta * alpha^(beta - delta))`
//! down-weights both very-high-quality and very-low-quality anchors. Both
//! quantities are treated as constants by the gradient.

use serde::{Deserialize, Serialize};

use crate::error::{LossError, Result};

/// Hyper-parameters of the focusing gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WIoUParams {
    pub alpha: f64,
    pub delta: f64,
}

impl Default for WIoUParams {
    fn default() -> Self {
        WIoUParams {
            alpha: 1.9,
            delta: 3.0,
        }
    }
}

impl WIoUParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(LossError::arg("alpha", "must be positive"));
        }
        if self.alpha == 1.0 {
            return Err(LossError::arg("alpha", "must not equal 1"));
        }
        if !(self.delta > 0.0) {
            return Err(LossError::arg("delta", "must be positive"));
        }
        Ok(())
    }

    /// The gain peaks at `beta = 1 / ln(alpha)`.
    pub fn peak_beta(&self) -> f64 {
        1.0 / self.alpha.ln()
    }
}

/// Gradient gain `r = beta / (delta * alpha^(beta - delta))`.
///
/// `r(delta) = 1` exactly and `r(0) = 0`; the unique maximum sits at
/// `beta = 1 / ln(alpha)`.
pub fn gradient_gain(beta: f64, params: &WIoUParams) -> Result<f64> {
    params.validate()?;
    if beta < 0.0 {
        return Err(LossError::arg("beta", "must be non-negative"));
    }
    Ok(beta / (params.delta * params.alpha.powf(beta - params.delta)))
}

/// Running mean of the IoU loss that anchors the quality division.
///
/// Update rule: the first call sets the mean directly; afterwards
/// `ema <- m * ema + (1 - m) * batch_mean`. A frozen state (evaluation)
/// never updates. The mean is floored at 1e-8 so the outlier-degree ratio
/// stays finite even on perfectly fitted batches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FocusState {
    ema: Option<f64>,
    momentum: f64,
    steps: u64,
    frozen: bool,
}

const EMA_FLOOR: f64 = 1e-8;

impl FocusState {
    /// `momentum` must lie in (0, 1).
    pub fn new(momentum: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(LossError::arg("momentum", "must lie in (0, 1)"));
        }
        Ok(FocusState {
            ema: None,
            momentum,
            steps: 0,
            frozen: false,
        })
    }

    pub fn ema(&self) -> Option<f64> {
        self.ema
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    /// Folds one batch-mean IoU loss into the running mean.
    pub fn update(&mut self, batch_mean_l_iou: f64) {
        if self.frozen {
            return;
        }
        let incoming = batch_mean_l_iou.max(EMA_FLOOR);
        self.ema = Some(match self.ema {
            None => incoming,
            Some(prev) => (self.momentum * prev + (1.0 - self.momentum) * incoming).max(EMA_FLOOR),
        });
        self.steps += 1;
    }

    /// Restores a snapshot, e.g. from a checkpoint.
    pub fn restore(ema: Option<f64>, momentum: f64, steps: u64, frozen: bool) -> Result<Self> {
        let mut s = FocusState::new(momentum)?;
        if let Some(e) = ema {
            if !(e > 0.0) {
                return Err(LossError::arg("ema", "must be positive"));
            }
            s.ema = Some(e);
        }
        s.steps = steps;
        s.frozen = frozen;
        Ok(s)
    }
}

/// Outlier degree `beta = l_iou / ema`, carrying no gradient.
pub fn outlier_degree(l_iou_value: f64, state: &FocusState) -> Result<f64> {
    let ema = state.ema.ok_or(LossError::UninitializedFocus)?;
    Ok(l_iou_value / ema)
}
