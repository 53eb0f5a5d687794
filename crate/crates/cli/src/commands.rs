//! Command implementations behind the argument parser.

use std::io::Write;
use std::path::Path;

use detectlab_detector::{
    decode, evaluate_model, ground_truths, load_checkpoint, measure_speed_ms,
    model_from_checkpoint, train, DetectorConfig, DetectorModel, Sample, DEFAULT_NMS_IOU,
    EVAL_CONF_THRESH,
};
use detectlab_loss::bench::{run_loss_bench, BenchConfig, BenchCurve, BenchLoss};
use detectlab_metrics::{
    evaluate, read_detections, read_ground_truths, render_table, standard_thresholds, AnnRecord,
    EvalResult,
};
use detectlab_nn::attention_maps_export;
use detectlab_synth::{build_dataset, SceneSpec, CLASS_NAMES};
use serde::Deserialize;

use crate::data::{load_split, worker_threads, Split};
use crate::error::{CliError, Result};
use crate::gradchecks::{run_check, CheckModule};

pub fn cmd_synth(out: &Path, n: usize, seed: u64, spec_file: Option<&Path>) -> Result<()> {
    if n == 0 {
        return Err(CliError::validation("--n must be positive"));
    }
    let spec = match spec_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let spec: SceneSpec = serde_json::from_str(&text)?;
            spec
        }
        None => SceneSpec::default(),
    };
    spec.validate()?;
    let paths = build_dataset(&spec, n, out, seed)?;
    println!(
        "wrote {} scenes under {} (train {} / val {} / test {})",
        n,
        out.display(),
        paths.counts.0,
        paths.counts.1,
        paths.counts.2
    );
    Ok(())
}

pub fn cmd_train(
    config_path: &Path,
    data_dir: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<()> {
    let config = DetectorConfig::read_json(config_path)?;
    let train_set = load_split(data_dir, Split::Train)?;
    let val_set = load_split(data_dir, Split::Val)?;
    let ckpt = match resume {
        Some(path) => Some(load_checkpoint(path)?),
        None => None,
    };
    let (trainer, stats) = train(&config, &train_set, &val_set, ckpt.as_ref(), Some(out_dir))?;
    if let Some(last) = stats.last() {
        println!(
            "trained {} epochs ({} params): total {:.4}, val map50 {:.3}, map50:95 {:.3}",
            trainer.model.epochs_done,
            trainer.model.param_count(),
            last.total,
            last.map50,
            last.map5095
        );
    }
    println!(
        "checkpoint: {}",
        out_dir.join("checkpoint.dlck").display()
    );
    println!("log: {}", out_dir.join("train_log.csv").display());
    Ok(())
}

/// Splits samples across up to `threads` workers for eval-mode inference;
/// results are reassembled in sample order, so the thread count never
/// changes the output.
fn detect_parallel(
    model: &DetectorModel,
    samples: &[Sample],
    threads: usize,
) -> Result<Vec<detectlab_metrics::Detection>> {
    let threads = threads.clamp(1, samples.len().max(1));
    if threads == 1 {
        return detectlab_detector::detect_all(model, samples, EVAL_CONF_THRESH, DEFAULT_NMS_IOU)
            .map_err(CliError::from);
    }
    let chunk = samples.len().div_ceil(threads);
    let results: Vec<Result<Vec<detectlab_metrics::Detection>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    detectlab_detector::detect_all(model, part, EVAL_CONF_THRESH, DEFAULT_NMS_IOU)
                        .map_err(CliError::from)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("detection worker panicked"))
            .collect()
    });
    let mut out = Vec::new();
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn print_eval_report(result: &EvalResult) {
    print!("{}", render_table(result, &CLASS_NAMES));
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    ckpt: Option<&Path>,
    data_dir: Option<&Path>,
    split: Split,
    pred: Option<&Path>,
    gt: Option<&Path>,
    json_out: Option<&Path>,
    pred_out: Option<&Path>,
) -> Result<()> {
    let result = match (ckpt, pred, gt) {
        (Some(ckpt_path), None, None) => {
            let data_dir = data_dir.ok_or_else(|| {
                CliError::validation("--data is required when evaluating a checkpoint")
            })?;
            let checkpoint = load_checkpoint(ckpt_path)?;
            let (model, _momentum) = model_from_checkpoint(&checkpoint)?;
            let samples = load_split(data_dir, split)?;
            if samples.is_empty() {
                return Err(CliError::validation("evaluation split is empty"));
            }
            let dets = detect_parallel(&model, &samples, worker_threads())?;
            let gts = ground_truths(&samples);
            if let Some(path) = pred_out {
                let records: Vec<AnnRecord> =
                    dets.iter().map(AnnRecord::from_detection).collect();
                detectlab_metrics::write_records(&records, path)?;
            }
            let result = evaluate(&dets, &gts, &standard_thresholds())?;
            print_eval_report(&result);
            let speed_ms = measure_speed_ms(&model, &samples[0], 5, 50)?;
            println!(
                "parameters: {}  macs/image: {}  speed: {:.2} ms/image (mean of 50 single-thread passes)",
                model.param_count(),
                model.mac_estimate(),
                speed_ms
            );
            result
        }
        (None, Some(pred_path), Some(gt_path)) => {
            let dets = read_detections(pred_path)?;
            let gts = read_ground_truths(gt_path)?;
            let result = evaluate(&dets, &gts, &standard_thresholds())?;
            print_eval_report(&result);
            result
        }
        _ => {
            return Err(CliError::validation(
                "pass either --ckpt with --data, or --pred with --gt",
            ))
        }
    };
    if let Some(path) = json_out {
        std::fs::write(path, serde_json::to_string_pretty(&result)?)?;
        println!("json: {}", path.display());
    }
    Ok(())
}

pub fn cmd_gradcheck(module_arg: &str, seed: u64, tol: f64) -> Result<()> {
    if !(tol > 0.0) {
        return Err(CliError::validation("--tol must be positive"));
    }
    let modules: Vec<CheckModule> = if module_arg == "all" {
        CheckModule::all().to_vec()
    } else {
        vec![CheckModule::parse(module_arg)?]
    };
    let mut failed = false;
    for module in modules {
        let report = run_check(module, seed, tol)?;
        println!("{:8} {report}", module.name());
        failed |= !report.pass;
    }
    if failed {
        return Err(CliError::numerical("gradient check failed"));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    #[serde(default)]
    base: Option<DetectorConfig>,
    rows: Vec<GridRow>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRow {
    label: String,
    #[serde(default)]
    neck: Option<detectlab_detector::NeckKind>,
    #[serde(default)]
    attention: Option<detectlab_detector::AttentionKind>,
    #[serde(default)]
    box_loss: Option<detectlab_detector::BoxLossKind>,
}

fn default_grid() -> GridFile {
    use detectlab_detector::{AttentionKind, BoxLossKind, NeckKind};
    let row = |label: &str, neck, attention, box_loss| GridRow {
        label: label.to_string(),
        neck: Some(neck),
        attention: Some(attention),
        box_loss: Some(box_loss),
    };
    GridFile {
        base: None,
        rows: vec![
            row("baseline", NeckKind::Sppcspc, AttentionKind::None, BoxLossKind::Ciou),
            row("+rfb", NeckKind::Rfb, AttentionKind::None, BoxLossKind::Ciou),
            row("+rfb+ca", NeckKind::Rfb, AttentionKind::Ca, BoxLossKind::Ciou),
            row("+rfb+ca+wiou3", NeckKind::Rfb, AttentionKind::Ca, BoxLossKind::Wiou3),
        ],
    }
}

pub const ABLATION_CSV_HEADER: &str =
    "label,neck,attention,box_loss,precision,recall,map50,map5095,parameters,macs,speed_ms";

pub fn cmd_ablate(data_dir: &Path, grid_file: Option<&Path>, out_csv: &Path) -> Result<()> {
    let grid = match grid_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<GridFile>(&text)?
        }
        None => default_grid(),
    };
    if grid.rows.is_empty() {
        return Err(CliError::validation("ablation grid has no rows"));
    }
    let base = grid.base.clone().unwrap_or_default();
    base.validate()?;
    let train_set = load_split(data_dir, Split::Train)?;
    let val_set = load_split(data_dir, Split::Val)?;
    let test_set = load_split(data_dir, Split::Test)?;

    let mut csv = String::from(ABLATION_CSV_HEADER);
    csv.push('\n');
    for row in &grid.rows {
        let mut config = base.clone();
        if let Some(neck) = row.neck {
            config.neck = neck;
        }
        if let Some(attention) = row.attention {
            config.attention = attention;
        }
        if let Some(box_loss) = row.box_loss {
            config.box_loss = box_loss;
        }
        config.validate()?;
        log::info!("ablation row `{}`: {}", row.label, config.label());
        let (trainer, _stats) = train(&config, &train_set, &val_set, None, None)?;
        let result = evaluate_model(&trainer.model, &test_set)?;
        let speed_ms = measure_speed_ms(&trainer.model, &test_set[0], 5, 50)?;
        let line = format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            row.label,
            config.neck,
            config.attention,
            config.box_loss,
            result.precision,
            result.recall,
            result.map50,
            result.map5095,
            trainer.model.param_count(),
            trainer.model.mac_estimate(),
            speed_ms
        );
        println!("{line}");
        csv.push_str(&line);
        csv.push('\n');
    }
    std::fs::write(out_csv, csv)?;
    println!("ablation table: {}", out_csv.display());
    Ok(())
}

pub fn write_bench_csv(curves: &[BenchCurve], mut w: impl Write) -> Result<()> {
    let header: Vec<&str> = std::iter::once("step")
        .chain(curves.iter().map(|c| c.loss.name()))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    let steps = curves.first().map_or(0, |c| c.mean_l_iou.len());
    for i in 0..steps {
        let mut row = i.to_string();
        for c in curves {
            row.push(',');
            row.push_str(&c.mean_l_iou[i].to_string());
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

pub fn cmd_loss_bench(
    losses_arg: &str,
    steps: usize,
    seed: u64,
    lr: f64,
    pairs: usize,
    out: &Path,
) -> Result<()> {
    if steps == 0 || pairs == 0 {
        return Err(CliError::validation("--steps and --pairs must be positive"));
    }
    let losses: Vec<BenchLoss> = losses_arg
        .split(',')
        .map(|s| {
            BenchLoss::parse(s.trim())
                .ok_or_else(|| CliError::validation(format!("unknown loss `{s}`")))
        })
        .collect::<Result<_>>()?;
    if losses.is_empty() {
        return Err(CliError::validation("--losses must name at least one loss"));
    }
    let cfg = BenchConfig {
        steps,
        seed,
        pairs,
        lr,
        ..BenchConfig::default()
    };
    let curves = run_loss_bench(&losses, &cfg)?;
    let file = std::fs::File::create(out)?;
    write_bench_csv(&curves, std::io::BufWriter::new(file))?;
    for c in &curves {
        println!(
            "{}: mean IoU loss {:.4} -> {:.4} over {} steps",
            c.loss.name(),
            c.mean_l_iou[0],
            c.mean_l_iou.last().unwrap(),
            steps
        );
    }
    println!("curves: {}", out.display());
    Ok(())
}

pub fn cmd_attnviz(ckpt: &Path, image: &Path, out_dir: &Path) -> Result<()> {
    let checkpoint = load_checkpoint(ckpt)?;
    let (model, _momentum) = model_from_checkpoint(&checkpoint)?;
    let image: detectlab_tensor::Tensor<f32> = detectlab_tensor::io::read_tensor(image)?;
    let (c, h, w) = match image.shape() {
        [3, h, w] => (3usize, *h, *w),
        other => {
            return Err(CliError::validation(format!(
                "expected a [3,H,W] image tensor, got {other:?}"
            )))
        }
    };
    if h != model.config.input_size || w != model.config.input_size {
        return Err(CliError::validation(format!(
            "image is {c}x{h}x{w} but the model expects {0}x{0}",
            model.config.input_size
        )));
    }
    let batch = detectlab_tensor::Tensor::new(vec![1, 3, h, w], image.data().to_vec())?;
    let (grid, gates) = model.predict_with_attention(&batch)?;
    let (g_h, g_w) = gates.ok_or_else(|| {
        CliError::validation("checkpoint has no attention block (attention = none)")
    })?;
    let (maps, mean) = attention_maps_export(&g_h, &g_w, out_dir)?;
    println!("gate maps: {}", maps.display());
    println!("channel mean: {}", mean.display());
    // also report what the detector sees on this image
    let dets = decode(&grid, 0, 0.25, DEFAULT_NMS_IOU)?;
    println!("{} detections at confidence 0.25", dets.len());
    Ok(())
}
