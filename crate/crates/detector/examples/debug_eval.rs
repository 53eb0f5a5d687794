use detectlab_detector::{
    assign_targets, batch_images, decode, evaluate_model, AttentionKind, BoxLossKind,
    DetectorConfig, NeckKind, Sample, Trainer, DEFAULT_NMS_IOU,
};
use detectlab_synth::{generate_scene, scene_seed, SceneSpec};
use detectlab_tensor::Tape;

fn make_samples(n: usize, seed: u64) -> Vec<Sample> {
    let spec = SceneSpec::default();
    (0..n)
        .map(|i| {
            let (image, anns) = generate_scene(scene_seed(seed, i), &spec).unwrap();
            Sample {
                id: format!("scene{i}"),
                image,
                boxes: anns.iter().map(|a| (a.bbox, a.class)).collect(),
            }
        })
        .collect()
}

fn main() {
    let config = DetectorConfig {
        neck: NeckKind::Rfb,
        attention: AttentionKind::Ca,
        box_loss: BoxLossKind::Wiou3,
        epochs: 12,
        seed: 7,
        ..DetectorConfig::default()
    };
    let train_set = make_samples(120, 7);
    let mut trainer = Trainer::new(&config).unwrap();
    let stats = trainer.train(&train_set, &train_set[..16]).unwrap();
    for s in stats.iter().rev().take(2) {
        println!(
            "epoch {}: total {:.4} box {:.4} map50(eval-mode) {:.3}",
            s.epoch, s.total, s.box_loss, s.map50
        );
    }

    // same images, train-mode forward (batch statistics)
    let sample = &train_set[0];
    println!("gt: {:?}", sample.boxes);
    let batch8: Vec<&Sample> = train_set[..8].iter().collect();
    let images8 = batch_images(&batch8).unwrap();
    {
        let tape = Tape::new();
        let leaves = trainer.model.registry.leaves(&tape, false);
        let x = tape.constant(&images8);
        let mut ups = Vec::new();
        let out = trainer.model.forward(&leaves, x, Some(&mut ups)).unwrap();
        let grid = trainer.model.grid_from_raw(&out.raw.value());
        let dets = decode(&grid, 0, 0.05, DEFAULT_NMS_IOU).unwrap();
        println!("train-mode forward, image 0: {} dets", dets.len());
        for d in dets.iter().take(5) {
            println!("  class {} conf {:.3} box {:?}", d.class, d.confidence, d.bbox);
        }
    }
    // eval-mode forward (running statistics)
    {
        let batch1 = batch_images(&[sample]).unwrap();
        let grid = trainer.model.predict(&batch1).unwrap();
        let dets = decode(&grid, 0, 0.05, DEFAULT_NMS_IOU).unwrap();
        println!("eval-mode forward, image 0: {} dets", dets.len());
        for d in dets.iter().take(5) {
            println!("  class {} conf {:.3} box {:?}", d.class, d.confidence, d.bbox);
        }
        // raw objectness stats
        let c = config.head_channels();
        let s = config.grid_size;
        let mut max_obj = f32::MIN;
        for row in 0..s {
            for col in 0..s {
                let v = grid.tensor.data()[((row * s) + col) * c + 4];
                if v > max_obj {
                    max_obj = v;
                }
            }
        }
        println!("eval-mode max objectness logit: {max_obj:.3}");
    }
    // training-set mAP in eval mode
    let r = evaluate_model(&trainer.model, &train_set[..32]).unwrap();
    println!("train-set map50 (eval mode): {:.3}", r.map50);
}
