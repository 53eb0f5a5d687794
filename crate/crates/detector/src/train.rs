//! Training loop: SGD with momentum and cosine learning-rate decay, one
//! CSV row per epoch with losses and held-out metrics. Deterministic for a
//! given seed and config; resuming from a checkpoint at an epoch boundary
//! reproduces the uninterrupted run bit for bit.

use std::io::Write;
use std::path::Path;

use detectlab_tensor::{Tape, XorShiftRng};
use indexmap::IndexMap;

use crate::assign::assign_targets;
use crate::checkpoint::{model_from_checkpoint, save_checkpoint, Checkpoint};
use crate::config::DetectorConfig;
use crate::error::{DetectorError, Result};
use crate::eval::evaluate_model;
use crate::loss::detector_loss;
use crate::model::{build_model, DetectorModel};
use crate::sample::{batch_images, Sample};

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub box_loss: f64,
    pub obj_loss: f64,
    pub cls_loss: f64,
    pub total: f64,
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    pub map5095: f64,
}

pub const CSV_HEADER: &str = "epoch,box,obj,cls,total,precision,recall,map50,map5095";

impl EpochStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.box_loss,
            self.obj_loss,
            self.cls_loss,
            self.total,
            self.precision,
            self.recall,
            self.map50,
            self.map5095
        )
    }
}

pub struct Trainer {
    pub model: DetectorModel,
    momentum: IndexMap<String, Vec<f32>>,
}

fn cosine_lr(base: f64, epoch: usize, total_epochs: usize) -> f64 {
    let t = epoch as f64 / total_epochs.max(1) as f64;
    0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
}

impl Trainer {
    pub fn new(config: &DetectorConfig) -> Result<Self> {
        let model = build_model(config)?;
        let momentum = model
            .registry
            .iter_params()
            .map(|(n, t)| (n.clone(), vec![0.0f32; t.numel()]))
            .collect();
        Ok(Trainer { model, momentum })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let (model, mut momentum) = model_from_checkpoint(ckpt)?;
        for (name, t) in model.registry.iter_params() {
            momentum
                .entry(name.clone())
                .or_insert_with(|| vec![0.0f32; t.numel()]);
        }
        Ok(Trainer { model, momentum })
    }

    pub fn momentum(&self) -> &IndexMap<String, Vec<f32>> {
        &self.momentum
    }

    fn train_epoch(&mut self, epoch: usize, train_set: &[Sample]) -> Result<(f64, f64, f64, f64)> {
        let config = self.model.config.clone();
        let lr = cosine_lr(config.lr, epoch, config.epochs) as f32;
        let mom = config.momentum as f32;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = XorShiftRng::derive(config.seed, 0x3_0000_0000 + epoch as u64);
        rng.shuffle(&mut order);
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let images = batch_images(&batch)?;
            let gts: Vec<Vec<_>> = batch.iter().map(|s| s.boxes.clone()).collect();
            let targets = assign_targets(&gts, &config);

            let tape = Tape::new();
            let leaves = self.model.registry.leaves(&tape, true);
            let x = tape.constant(&images);
            let mut bn_updates = Vec::new();
            let out = self.model.forward(&leaves, x, Some(&mut bn_updates))?;
            let loss = detector_loss(&tape, out.raw, &targets, &config, &mut self.model.focus)?;
            let (b, o, c, t) = loss.values()?;
            let grads = tape.backward(loss.total)?;

            for (name, var) in leaves.iter() {
                if let Some(g) = grads.wrt(*var) {
                    let buf = self
                        .momentum
                        .get_mut(name)
                        .expect("momentum buffer exists for every parameter");
                    let param = self.model.registry.param_mut(name)?;
                    let data = param.data_mut();
                    for i in 0..data.len() {
                        buf[i] = mom * buf[i] + g[i];
                        data[i] -= lr * buf[i];
                    }
                }
            }
            self.model.registry.apply_bn_updates(&bn_updates)?;
            self.model.steps += 1;
            sums.0 += b;
            sums.1 += o;
            sums.2 += c;
            sums.3 += t;
            batches += 1;
        }
        let k = batches.max(1) as f64;
        Ok((sums.0 / k, sums.1 / k, sums.2 / k, sums.3 / k))
    }

    /// Runs the remaining epochs (`model.epochs_done .. config.epochs`),
    /// evaluating on `val_set` after each.
    pub fn train(&mut self, train_set: &[Sample], val_set: &[Sample]) -> Result<Vec<EpochStats>> {
        let epochs = self.model.config.epochs;
        self.train_until(train_set, val_set, epochs)
    }

    /// Like [`Trainer::train`] but stops after `stop_epoch`, keeping the full
    /// learning-rate schedule; an interrupted-and-resumed run reproduces the
    /// uninterrupted one exactly.
    pub fn train_until(
        &mut self,
        train_set: &[Sample],
        val_set: &[Sample],
        stop_epoch: usize,
    ) -> Result<Vec<EpochStats>> {
        if train_set.is_empty() {
            return Err(DetectorError::Config("empty training set".into()));
        }
        let epochs = self.model.config.epochs.min(stop_epoch);
        let mut stats = Vec::new();
        for epoch in self.model.epochs_done..epochs {
            let (box_loss, obj_loss, cls_loss, total) = self.train_epoch(epoch, train_set)?;
            let (precision, recall, map50, map5095) = if val_set.is_empty() {
                (0.0, 0.0, 0.0, 0.0)
            } else {
                self.model.focus.freeze();
                let result = evaluate_model(&self.model, val_set)?;
                self.model.focus.unfreeze();
                (result.precision, result.recall, result.map50, result.map5095)
            };
            self.model.epochs_done = epoch + 1;
            let row = EpochStats {
                epoch,
                box_loss,
                obj_loss,
                cls_loss,
                total,
                precision,
                recall,
                map50,
                map5095,
            };
            log::info!(
                "epoch {epoch}: total {total:.4} (box {box_loss:.4} obj {obj_loss:.4} cls {cls_loss:.4}) map50 {map50:.3}"
            );
            stats.push(row);
        }
        Ok(stats)
    }
}

/// Builds (or resumes) a trainer, runs it, and writes `train_log.csv` and
/// `checkpoint.dlck` under `out_dir` when given.
pub fn train(
    config: &DetectorConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    resume: Option<&Checkpoint>,
    out_dir: Option<&Path>,
) -> Result<(Trainer, Vec<EpochStats>)> {
    let mut trainer = match resume {
        Some(ckpt) => {
            if ckpt.config != *config {
                return Err(DetectorError::Config(
                    "resume checkpoint was trained with a different config".into(),
                ));
            }
            Trainer::from_checkpoint(ckpt)?
        }
        None => Trainer::new(config)?,
    };
    let stats = trainer.train(train_set, val_set)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let mut csv = std::io::BufWriter::new(std::fs::File::create(dir.join("train_log.csv"))?);
        writeln!(csv, "{CSV_HEADER}")?;
        for s in &stats {
            writeln!(csv, "{}", s.csv_row())?;
        }
        csv.flush()?;
        save_checkpoint(&trainer.model, trainer.momentum(), dir.join("checkpoint.dlck"))?;
    }
    Ok((trainer, stats))
}
