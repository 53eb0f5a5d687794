//! Scene specification: canvas, background, string geometry, defect rates.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SynthError};

/// Class labels: 0 normal, 1 self-explosion (missing disc), 2 partial damage
/// (notched disc).
pub const CLASS_NORMAL: usize = 0;
pub const CLASS_SELF_EXPLOSION: usize = 1;
pub const CLASS_DAMAGE: usize = 2;

pub const CLASS_NAMES: [&str; 3] = ["normal", "self_explosion", "damage"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundMode {
    Flat,
    Gradient,
    Noise,
    /// Picks one of the three per scene.
    Mixed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub canvas: usize,
    pub background: BackgroundMode,
    pub objects_min: usize,
    pub objects_max: usize,
    pub discs_min: usize,
    pub discs_max: usize,
    pub disc_radius_min: f64,
    pub disc_radius_max: f64,
    /// Center-to-center spacing as a multiple of the disc radius.
    pub spacing_factor: f64,
    /// Strings tilt up to this many degrees away from vertical.
    pub angle_jitter_deg: f64,
    /// Adjacent discs removed by a self-explosion defect.
    pub gap_discs: usize,
    pub p_self_explosion: f64,
    pub p_damage: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            canvas: 128,
            background: BackgroundMode::Mixed,
            objects_min: 1,
            objects_max: 1,
            discs_min: 4,
            discs_max: 10,
            disc_radius_min: 5.0,
            disc_radius_max: 8.0,
            spacing_factor: 2.3,
            angle_jitter_deg: 30.0,
            gap_discs: 2,
            p_self_explosion: 0.35,
            p_damage: 0.35,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.canvas < 32 {
            return Err(SynthError::Spec("canvas must be at least 32".into()));
        }
        if self.objects_min == 0 || self.objects_min > self.objects_max {
            return Err(SynthError::Spec(
                "object count range must satisfy 1 <= min <= max".into(),
            ));
        }
        if self.discs_min < 2 || self.discs_min > self.discs_max {
            return Err(SynthError::Spec(
                "disc count range must satisfy 2 <= min <= max".into(),
            ));
        }
        if !(self.disc_radius_min > 0.0 && self.disc_radius_min <= self.disc_radius_max) {
            return Err(SynthError::Spec("bad disc radius range".into()));
        }
        if self.spacing_factor < 2.0 {
            return Err(SynthError::Spec(
                "spacing factor below 2 makes discs overlap".into(),
            ));
        }
        if !(0.0..=90.0).contains(&self.angle_jitter_deg) {
            return Err(SynthError::Spec("angle jitter must be in [0, 90]".into()));
        }
        if self.gap_discs == 0 || self.gap_discs > self.discs_min - 2 {
            return Err(SynthError::Spec(format!(
                "gap of {} discs needs at least {} discs per string",
                self.gap_discs,
                self.gap_discs + 2
            )));
        }
        if !(0.0..=1.0).contains(&self.p_self_explosion)
            || !(0.0..=1.0).contains(&self.p_damage)
            || self.p_self_explosion + self.p_damage > 1.0
        {
            return Err(SynthError::Spec(
                "defect probabilities must be in [0,1] and sum to at most 1".into(),
            ));
        }
        // The renderer shrinks the radius of long strings, so feasibility
        // only requires that the longest string fits at the minimum radius.
        let min_len = ((self.discs_max - 1) as f64 * self.spacing_factor + 2.0)
            * self.disc_radius_min;
        if min_len + 4.0 > self.canvas as f64 {
            return Err(SynthError::Spec(format!(
                "longest string ({min_len:.1}px at minimum radius) does not fit the {} canvas",
                self.canvas
            )));
        }
        Ok(())
    }

    /// Largest radius at which a string of `discs` discs fits the canvas.
    pub fn max_radius_for(&self, discs: usize) -> f64 {
        let denom = (discs - 1) as f64 * self.spacing_factor + 2.0;
        ((self.canvas as f64 - 4.0) / denom).min(self.disc_radius_max)
    }
}
