//! Miniature single-scale, anchor-free grid detector. The neck (spatial
//! pyramid vs multi-branch dilated block), head attention, and box loss are
//! each swappable, which makes ablation grids over those axes runnable at
//! desk scale.

pub mod assign;
pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod sample;
pub mod train;

pub use assign::{assign_targets, PositiveCell, Targets};
pub use checkpoint::{load_checkpoint, model_from_checkpoint, save_checkpoint, Checkpoint};
pub use config::{AttentionKind, BoxLossKind, DetectorConfig, NeckKind};
pub use decode::{decode, encode_cell, nms, Detection, DEFAULT_NMS_IOU};
pub use error::{DetectorError, Result};
pub use eval::{
    detect_all, evaluate_model, ground_truths, measure_speed_ms, EVAL_CONF_THRESH,
};
pub use loss::{detector_loss, LossOutput};
pub use model::{build_model, DetectorModel, ModelOutput, PredictionGrid};
pub use sample::{batch_images, Sample};
pub use train::{train, EpochStats, Trainer, CSV_HEADER};
