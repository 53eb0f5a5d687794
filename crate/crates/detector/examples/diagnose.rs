use detectlab_detector::{
    detect_all, ground_truths, AttentionKind, BoxLossKind, DetectorConfig, NeckKind, Sample,
    Trainer, DEFAULT_NMS_IOU, EVAL_CONF_THRESH,
};
use detectlab_metrics::{evaluate, standard_thresholds};
use detectlab_synth::{generate_scene, scene_seed, split_assignment, SceneSpec, CLASS_NAMES};

fn make_dataset(n: usize, seed: u64, spec: &SceneSpec) -> (Vec<Sample>, Vec<Sample>) {
    let assign = split_assignment(n, seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for i in 0..n {
        let (image, anns) = generate_scene(scene_seed(seed, i), spec).unwrap();
        let s = Sample {
            id: format!("scene_{i:05}"),
            image,
            boxes: anns.iter().map(|a| (a.bbox, a.class)).collect(),
        };
        match assign[i] {
            0 => train.push(s),
            1 => val.push(s),
            _ => {}
        }
    }
    (train, val)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(15);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let batch: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(8);
    let simple: bool = args.get(4).map(|s| s == "simple").unwrap_or(false);
    let base: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(8);
    let spec = if simple {
        SceneSpec {
            angle_jitter_deg: 15.0,
            disc_radius_min: 5.0,
            disc_radius_max: 7.5,
            ..SceneSpec::default()
        }
    } else {
        SceneSpec::default()
    };
    let (train_set, val_set) = make_dataset(300, 7, &spec);
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
    let start = std::time::Instant::now();
    let mut trainer = Trainer::new(&config).unwrap();
    let stats = trainer.train(&train_set, &[]).unwrap();
    let last = stats.last().unwrap();
    println!(
        "epochs {epochs} lr {lr} batch {batch} simple {simple} base {base}: {:.1?}  total {:.3} box {:.3} obj {:.3} cls {:.3}",
        start.elapsed(), last.total, last.box_loss, last.obj_loss, last.cls_loss
    );
    for (name, set) in [("train[..40]", &train_set[..40]), ("val", &val_set[..])] {
        let dets = detect_all(&trainer.model, set, EVAL_CONF_THRESH, DEFAULT_NMS_IOU).unwrap();
        let gts = ground_truths(set);
        let r = evaluate(&dets, &gts, &standard_thresholds()).unwrap();
        print!("  {name}: map50 {:.3} |", r.map50);
        for c in &r.classes {
            print!(
                " {} {:.2}",
                CLASS_NAMES.get(c.class).copied().unwrap_or("?"),
                c.ap50
            );
        }
        println!();
    }
}
