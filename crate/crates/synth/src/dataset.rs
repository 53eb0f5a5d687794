//! Dataset builder: renders scenes to tensor files and splits them 6:2:2
//! into JSONL manifests by a stable hash of the scene index.

use std::path::{Path, PathBuf};

use detectlab_metrics::{write_records, AnnRecord};
use detectlab_tensor::{io as tio, splitmix64, Tensor};

use crate::error::Result;
use crate::scene::{generate_scene, Annotation};
use crate::spec::SceneSpec;

#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub root: PathBuf,
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    pub counts: (usize, usize, usize),
}

/// Per-scene seed derived from the dataset seed and the scene index.
pub fn scene_seed(dataset_seed: u64, index: usize) -> u64 {
    splitmix64(splitmix64(dataset_seed) ^ (index as u64).wrapping_mul(0xa076_1d64_78bd_642f))
}

/// Split sizes rounded to 6:2:2; each within one sample of the exact split.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (0.6 * n as f64).round() as usize;
    let val = (0.2 * n as f64).round() as usize;
    let (train, val) = (train.min(n), val.min(n - train.min(n)));
    (train, val, n - train - val)
}

/// Assigns indices to train/val/test by ordering a stable per-index hash.
pub fn split_assignment(n: usize, seed: u64) -> Vec<u8> {
    let mut order: Vec<usize> = (0..n).collect();
    let key = splitmix64(seed);
    order.sort_by_key(|&i| (splitmix64(key ^ (i as u64)), i));
    let (n_train, n_val, _) = split_sizes(n);
    let mut assign = vec![2u8; n];
    for (rank, &i) in order.iter().enumerate() {
        assign[i] = if rank < n_train {
            0
        } else if rank < n_train + n_val {
            1
        } else {
            2
        };
    }
    assign
}

fn image_rel_path(index: usize) -> String {
    format!("images/scene_{index:05}.tnsr")
}

/// Renders `n` scenes under `out_dir` and writes `train.jsonl`, `val.jsonl`
/// and `test.jsonl` manifests. Deterministic: rerunning with the same
/// arguments reproduces every byte.
pub fn build_dataset(spec: &SceneSpec, n: usize, out_dir: &Path, seed: u64) -> Result<DatasetPaths> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir.join("images"))?;
    let assign = split_assignment(n, seed);
    let mut manifests: [Vec<AnnRecord>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for i in 0..n {
        let (image, annotations) = generate_scene(scene_seed(seed, i), spec)?;
        let rel = image_rel_path(i);
        tio::write_tensor(&image, out_dir.join(&rel))?;
        let bucket = &mut manifests[assign[i] as usize];
        for a in &annotations {
            bucket.push(AnnRecord {
                image: rel.clone(),
                class: a.class,
                cx: a.bbox.cx,
                cy: a.bbox.cy,
                w: a.bbox.w,
                h: a.bbox.h,
                conf: None,
            });
        }
    }
    let train = out_dir.join("train.jsonl");
    let val = out_dir.join("val.jsonl");
    let test = out_dir.join("test.jsonl");
    write_records(&manifests[0], &train)?;
    write_records(&manifests[1], &val)?;
    write_records(&manifests[2], &test)?;
    let counts = {
        let count_images = |records: &[AnnRecord]| {
            let mut names: Vec<&str> = records.iter().map(|r| r.image.as_str()).collect();
            names.dedup();
            names.len()
        };
        (
            count_images(&manifests[0]),
            count_images(&manifests[1]),
            count_images(&manifests[2]),
        )
    };
    Ok(DatasetPaths {
        root: out_dir.to_path_buf(),
        train,
        val,
        test,
        counts,
    })
}

/// One manifest image with its annotations and pixel data.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub image_rel: String,
    pub image: Tensor<f32>,
    pub annotations: Vec<Annotation>,
}

/// Loads a JSONL manifest, grouping annotations by image in first-seen order.
pub fn load_manifest(root: &Path, manifest: &Path) -> Result<Vec<LoadedSample>> {
    let records = detectlab_metrics::read_records(manifest)?;
    let mut samples: Vec<LoadedSample> = Vec::new();
    let mut by_name: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for rec in records {
        let gt = rec.into_ground_truth()?;
        let idx = match by_name.get(&gt.image) {
            Some(&i) => i,
            None => {
                let image = tio::read_tensor::<f32>(root.join(&gt.image))?;
                samples.push(LoadedSample {
                    image_rel: gt.image.clone(),
                    image,
                    annotations: Vec::new(),
                });
                by_name.insert(gt.image.clone(), samples.len() - 1);
                samples.len() - 1
            }
        };
        samples[idx].annotations.push(Annotation {
            bbox: gt.bbox,
            class: gt.class,
        });
    }
    Ok(samples)
}
