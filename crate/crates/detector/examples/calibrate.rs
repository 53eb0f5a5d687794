use detectlab_detector::{
    AttentionKind, BoxLossKind, DetectorConfig, NeckKind, Sample, Trainer,
};
use detectlab_synth::{generate_scene, scene_seed, split_assignment, SceneSpec};
use std::time::Instant;

fn make_dataset(n: usize, seed: u64) -> (Vec<Sample>, Vec<Sample>, Vec<Sample>) {
    let spec = SceneSpec::default();
    let assign = split_assignment(n, seed);
    let mut sets = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let (image, anns) = generate_scene(scene_seed(seed, i), &spec).unwrap();
        let s = Sample {
            id: format!("images/scene_{i:05}.tnsr"),
            image,
            boxes: anns.iter().map(|a| (a.bbox, a.class)).collect(),
        };
        match assign[i] {
            0 => sets.0.push(s),
            1 => sets.1.push(s),
            _ => sets.2.push(s),
        }
    }
    sets
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("full");
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let (train_set, val_set, test_set) = make_dataset(300, 7);
    println!(
        "dataset: {} train / {} val / {} test",
        train_set.len(),
        val_set.len(),
        test_set.len()
    );
    let config = match which {
        "baseline" => DetectorConfig {
            neck: NeckKind::Sppcspc,
            attention: AttentionKind::None,
            box_loss: BoxLossKind::Ciou,
            epochs,
            lr,
            seed: 7,
            ..DetectorConfig::default()
        },
        _ => DetectorConfig {
            neck: NeckKind::Rfb,
            attention: AttentionKind::Ca,
            box_loss: BoxLossKind::Wiou3,
            epochs,
            lr,
            seed: 7,
            ..DetectorConfig::default()
        },
    };
    println!("config: {} lr {} epochs {}", config.label(), config.lr, config.epochs);
    let start = Instant::now();
    let mut trainer = Trainer::new(&config).unwrap();
    let stats = trainer.train(&train_set, &val_set).unwrap();
    println!("trained in {:.1?}", start.elapsed());
    for s in &stats {
        println!(
            "epoch {:2}: box {:.4} obj {:.4} cls {:.4} total {:.4} | P {:.3} R {:.3} map50 {:.3} map5095 {:.3}",
            s.epoch, s.box_loss, s.obj_loss, s.cls_loss, s.total, s.precision, s.recall, s.map50, s.map5095
        );
    }
    let test_eval = detectlab_detector::evaluate_model(&trainer.model, &test_set).unwrap();
    println!(
        "TEST: P {:.3} R {:.3} map50 {:.3} map5095 {:.3}",
        test_eval.precision, test_eval.recall, test_eval.map50, test_eval.map5095
    );
}
