//! Detection evaluation: precision, recall, per-class AP over an IoU
//! threshold sweep, and the 0.5:0.05:0.95 mean.

pub mod ap;
pub mod error;
pub mod eval;
pub mod matching;
pub mod records;

pub use ap::average_precision;
pub use error::{MetricsError, Result};
pub use eval::{evaluate, render_table, standard_thresholds, ClassEval, EvalResult, ThreshMetrics};
pub use matching::{match_detections, MatchResult};
pub use records::{
    read_detections, read_ground_truths, read_records, write_records, AnnRecord, Detection,
    GroundTruth,
};
