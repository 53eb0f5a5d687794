use detectlab_detector::{
    detect_all, ground_truths, AttentionKind, BoxLossKind, DetectorConfig, NeckKind, Sample,
    Trainer, DEFAULT_NMS_IOU, EVAL_CONF_THRESH,
};
use detectlab_metrics::{evaluate, standard_thresholds};
use detectlab_synth::{generate_scene, scene_seed, SceneSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(60);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let batch: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(4);
    let base: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(8);
    let spec = SceneSpec::default();
    let train_set: Vec<Sample> = (0..n)
        .map(|i| {
            let (image, anns) = generate_scene(scene_seed(7, i), &spec).unwrap();
            Sample {
                id: format!("s{i}"),
                image,
                boxes: anns.iter().map(|a| (a.bbox, a.class)).collect(),
            }
        })
        .collect();
    let config = DetectorConfig {
        neck: NeckKind::Rfb,
        attention: AttentionKind::Ca,
        box_loss: BoxLossKind::Wiou3,
        epochs,
        lr,
        batch_size: batch,
        base_channels: base,
        seed: 7,
        ..DetectorConfig::default()
    };
    let mut trainer = Trainer::new(&config).unwrap();
    let stats = trainer.train(&train_set, &[]).unwrap();
    let last = stats.last().unwrap();
    let dets = detect_all(&trainer.model, &train_set, EVAL_CONF_THRESH, DEFAULT_NMS_IOU).unwrap();
    let gts = ground_truths(&train_set);
    let r = evaluate(&dets, &gts, &standard_thresholds()).unwrap();
    println!(
        "overfit n={n} epochs={epochs} lr={lr} batch={batch} base={base}: total {:.3} box {:.3} cls {:.3} -> train map50 {:.3}",
        last.total, last.box_loss, last.cls_loss, r.map50
    );
}
