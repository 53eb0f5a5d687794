//! Checkpoint file: magic `DLCK`, version byte, a length-prefixed JSON
//! block (config echo, focus-state snapshot, step counters), then named
//! tensor records — parameters, norm buffers, and optimizer momentum.
//! Round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use detectlab_loss::FocusState;
use detectlab_tensor::io::{read_tensor_from, write_tensor_to};
use detectlab_tensor::Tensor;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::config::DetectorConfig;
use crate::error::{DetectorError, Result};
use crate::model::{build_model, DetectorModel};

const MAGIC: &[u8; 4] = b"DLCK";
const VERSION: u8 = 1;

const PARAM_PREFIX: &str = "param.";
const BUFFER_PREFIX: &str = "buf.";
const MOMENTUM_PREFIX: &str = "opt.m.";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    config: DetectorConfig,
    focus: FocusState,
    step: u64,
    epochs_done: u64,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub config: DetectorConfig,
    pub focus: FocusState,
    pub step: u64,
    pub epochs_done: usize,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

pub fn save_checkpoint(
    model: &DetectorModel,
    momentum: &IndexMap<String, Vec<f32>>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let meta = Meta {
        config: model.config.clone(),
        focus: model.focus.clone(),
        step: model.steps,
        epochs_done: model.epochs_done as u64,
    };
    let json = serde_json::to_vec(&meta)?;
    let f = File::create(path)?;
    let mut w = BufWriter::new(f);
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;

    let records: Vec<(String, &Tensor<f32>)> = model
        .registry
        .iter_params()
        .map(|(n, t)| (format!("{PARAM_PREFIX}{n}"), t))
        .chain(
            model
                .registry
                .iter_buffers()
                .map(|(n, t)| (format!("{BUFFER_PREFIX}{n}"), t)),
        )
        .collect();
    let momentum_tensors: Vec<(String, Tensor<f32>)> = momentum
        .iter()
        .map(|(n, v)| {
            (
                format!("{MOMENTUM_PREFIX}{n}"),
                Tensor::new(vec![v.len()], v.clone()).expect("flat buffer"),
            )
        })
        .collect();
    let total = records.len() + momentum_tensors.len();
    w.write_all(&(total as u32).to_le_bytes())?;
    let mut write_record = |name: &str, t: &Tensor<f32>| -> Result<()> {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_tensor_to(t, &mut w)?;
        Ok(())
    };
    for (name, t) in &records {
        write_record(name, t)?;
    }
    for (name, t) in &momentum_tensors {
        write_record(name, t)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let f = File::open(path)?;
    let mut r = BufReader::new(f);
    let mut head = [0u8; 5];
    r.read_exact(&mut head)
        .map_err(|_| DetectorError::Checkpoint("truncated header".into()))?;
    if &head[..4] != MAGIC {
        return Err(DetectorError::Checkpoint("bad magic".into()));
    }
    if head[4] != VERSION {
        return Err(DetectorError::Checkpoint(format!(
            "unsupported version {}",
            head[4]
        )));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|_| DetectorError::Checkpoint("truncated meta length".into()))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)
        .map_err(|_| DetectorError::Checkpoint("truncated meta".into()))?;
    let meta: Meta = serde_json::from_slice(&json)?;

    let mut count = [0u8; 4];
    r.read_exact(&mut count)
        .map_err(|_| DetectorError::Checkpoint("truncated record count".into()))?;
    let count = u32::from_le_bytes(count) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let mut name_len = [0u8; 4];
        r.read_exact(&mut name_len)
            .map_err(|_| DetectorError::Checkpoint("truncated record name".into()))?;
        let mut name = vec![0u8; u32::from_le_bytes(name_len) as usize];
        r.read_exact(&mut name)
            .map_err(|_| DetectorError::Checkpoint("truncated record name".into()))?;
        let name = String::from_utf8(name)
            .map_err(|_| DetectorError::Checkpoint("record name not utf-8".into()))?;
        let tensor: Tensor<f32> = read_tensor_from(&mut r)?;
        tensors.push((name, tensor));
    }
    Ok(Checkpoint {
        config: meta.config,
        focus: meta.focus,
        step: meta.step,
        epochs_done: meta.epochs_done as usize,
        tensors,
    })
}

/// Rebuilds a model (and optimizer momentum) from a checkpoint.
pub fn model_from_checkpoint(
    ckpt: &Checkpoint,
) -> Result<(DetectorModel, IndexMap<String, Vec<f32>>)> {
    let mut model = build_model(&ckpt.config)?;
    let mut momentum = IndexMap::new();
    for (name, tensor) in &ckpt.tensors {
        if let Some(param) = name.strip_prefix(PARAM_PREFIX) {
            let dst = model.registry.param_mut(param)?;
            if dst.shape() != tensor.shape() {
                return Err(DetectorError::Checkpoint(format!(
                    "shape mismatch for parameter {param}"
                )));
            }
            dst.data_mut().copy_from_slice(tensor.data());
        } else if let Some(buf) = name.strip_prefix(BUFFER_PREFIX) {
            let dst = model.registry.buffer_mut(buf)?;
            if dst.shape() != tensor.shape() {
                return Err(DetectorError::Checkpoint(format!(
                    "shape mismatch for buffer {buf}"
                )));
            }
            dst.data_mut().copy_from_slice(tensor.data());
        } else if let Some(m) = name.strip_prefix(MOMENTUM_PREFIX) {
            momentum.insert(m.to_string(), tensor.data().to_vec());
        } else {
            return Err(DetectorError::Checkpoint(format!(
                "unknown record kind `{name}`"
            )));
        }
    }
    model.focus = ckpt.focus.clone();
    model.steps = ckpt.step;
    model.epochs_done = ckpt.epochs_done;
    Ok((model, momentum))
}
