use detectlab_detector::{AttentionKind, BoxLossKind, DetectorConfig, NeckKind, Sample, Trainer};
use detectlab_synth::{generate_scene, scene_seed, SceneSpec};
use std::time::Instant;

fn make_samples(n: usize, seed: u64) -> Vec<Sample> {
    let spec = SceneSpec::default();
    (0..n)
        .map(|i| {
            let (image, anns) = generate_scene(scene_seed(seed, i), &spec).unwrap();
            Sample {
                id: format!("s{i}"),
                image,
                boxes: anns.iter().map(|a| (a.bbox, a.class)).collect(),
            }
        })
        .collect()
}

fn main() {
    let gen_start = Instant::now();
    let train = make_samples(48, 7);
    let val = make_samples(16, 99);
    println!("scene gen: {:.2?} for 64 scenes", gen_start.elapsed());

    for (neck, attention, box_loss) in [
        (NeckKind::Sppcspc, AttentionKind::None, BoxLossKind::Ciou),
        (NeckKind::Rfb, AttentionKind::Ca, BoxLossKind::Wiou3),
    ] {
        let config = DetectorConfig {
            neck,
            attention,
            box_loss,
            epochs: 2,
            seed: 7,
            ..DetectorConfig::default()
        };
        let mut trainer = Trainer::new(&config).unwrap();
        println!(
            "{}: {} params, {:.1} MMAC/forward",
            config.label(),
            trainer.model.param_count(),
            trainer.model.mac_estimate() as f64 / 1e6
        );
        let start = Instant::now();
        let stats = trainer.train(&train, &val).unwrap();
        let dt = start.elapsed();
        println!(
            "  2 epochs x 48 imgs in {:.2?} ({:.0} ms/img-step), last total {:.4}, map50 {:.3}",
            dt,
            dt.as_secs_f64() * 1000.0 / (2.0 * 48.0),
            stats.last().unwrap().total,
            stats.last().unwrap().map50,
        );
    }
}
