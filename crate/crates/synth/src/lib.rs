//! Deterministic synthetic scene generation: strings of shaded discs on
//! varied backgrounds, with missing-disc and notched-disc defects, split
//! 6:2:2 into JSONL manifests.

pub mod dataset;
pub mod error;
pub mod scene;
pub mod spec;

pub use dataset::{
    build_dataset, load_manifest, scene_seed, split_assignment, split_sizes, DatasetPaths,
    LoadedSample,
};
pub use error::{Result, SynthError};
pub use scene::{generate_scene, Annotation};
pub use spec::{
    BackgroundMode, SceneSpec, CLASS_DAMAGE, CLASS_NAMES, CLASS_NORMAL, CLASS_SELF_EXPLOSION,
};
