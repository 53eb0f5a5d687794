//! Dataset loading shared by the training/eval commands.

use std::path::Path;

use detectlab_detector::Sample;
use detectlab_synth::load_manifest;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn file_name(&self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Val => "val.jsonl",
            Split::Test => "test.jsonl",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(CliError::validation(format!(
                "unknown split `{other}` (expected train, val or test)"
            ))),
        }
    }
}

/// Loads one split of a synthesized dataset directory into samples.
pub fn load_split(data_dir: &Path, split: Split) -> Result<Vec<Sample>> {
    let manifest = data_dir.join(split.file_name());
    if !manifest.exists() {
        return Err(CliError::validation(format!(
            "manifest {} not found; run `detectlab synth` first",
            manifest.display()
        )));
    }
    let samples = load_manifest(data_dir, &manifest)?
        .into_iter()
        .map(|s| Sample {
            id: s.image_rel,
            image: s.image,
            boxes: s.annotations.iter().map(|a| (a.bbox, a.class)).collect(),
        })
        .collect();
    Ok(samples)
}

/// Worker cap for per-image evaluation parallelism: the smaller of the
/// machine's parallelism and `DETECTLAB_THREADS` (when set).
pub fn worker_threads() -> usize {
    let hw = std::thread::available_parallelism()
        .map(std::num::NonZeroUsize::get)
        .unwrap_or(1);
    match std::env::var("DETECTLAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        Some(cap) if cap >= 1 => hw.min(cap),
        _ => hw,
    }
}
