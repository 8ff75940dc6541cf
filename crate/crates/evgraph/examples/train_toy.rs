//! Trains a small detector on synthetic moving rectangles and reports
//! held-out mAP@50.
//!
//! ```bash
//! cargo run --release --example train_toy
//! ```

use evgraph::detect::HeadConfig;
use evgraph::events::{generate_synthetic, MovingRect, SceneSpec, SensorGeometry};
use evgraph::nn::ModelConfig;
use evgraph::train::{evaluate_dataset, train, Dataset, OptimizerConfig, TrainConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random scene: one or two rectangles of two distinct size classes
/// drifting slowly over a 100 ms window, uniform background noise. A
/// fraction of scenes place a close pair to make coarse pooling lossy.
pub fn rectangle_scene(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce9e);
    let geometry = SensorGeometry::new(304, 240).unwrap();
    let mut spec = SceneSpec::new(geometry, 100);
    spec.noise_per_ms = 0.3;
    spec.label_hz = 30.0;
    let close_pair = rng.random_bool(0.15);
    let n_shapes = if close_pair { 2 } else { rng.random_range(1..=2) };
    let place = |rng: &mut ChaCha8Rng, near: Option<(f64, f64)>| {
        let class_id = rng.random_range(0..2u32);
        let (w, h) = if class_id == 0 {
            let s = rng.random_range(14.0..18.0);
            (s, s)
        } else {
            (rng.random_range(30.0..38.0), rng.random_range(14.0..18.0))
        };
        let (cx, cy) = match near {
            Some((ax, ay)) => {
                let gap = rng.random_range(10.0..16.0);
                ((ax + w / 2.0 + gap + w / 2.0).min(250.0), ay + rng.random_range(-5.0..5.0))
            }
            None => (
                rng.random_range(50.0..250.0),
                rng.random_range(50.0..190.0),
            ),
        };
        let speed = rng.random_range(0.018..0.035);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        MovingRect {
            class_id,
            cx,
            cy,
            w,
            h,
            vx: speed * angle.cos(),
            vy: speed * angle.sin(),
        }
    };
    let first = place(&mut rng, None);
    spec.shapes.push(first);
    for i in 1..n_shapes {
        let near = if close_pair && i == 1 {
            Some((first.cx, first.cy))
        } else {
            None
        };
        let shape = place(&mut rng, near);
        spec.shapes.push(shape);
    }
    spec
}

pub fn rectangle_dataset(n_sequences: usize, window_us: i64, seed: u64) -> Dataset {
    let sequences: Vec<_> = (0..n_sequences)
        .map(|i| generate_synthetic(&rectangle_scene(seed + i as u64), seed + i as u64).unwrap())
        .collect();
    Dataset::from_final_windows(&sequences, window_us, 0.2, seed)
}

fn main() {
    let steps: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(600);
    let n_seq: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(40);

    println!("building {n_seq} synthetic sequences ...");
    let dataset = rectangle_dataset(n_seq, 100_000, 17);
    println!(
        "dataset: {} train windows, {} held-out windows",
        dataset.train.len(),
        dataset.val.len()
    );

    let mut model = ModelConfig::desk(2);
    if let Ok(ch) = std::env::var("TOY_CHANNELS") {
        model.channels = ch.split(',').map(|s| s.parse().unwrap()).collect();
    }
    match std::env::var("TOY_BRANCHES").as_deref() {
        Ok("ssl") => model.use_mvl = false,
        Ok("mvl") => model.use_ssl = false,
        _ => {}
    }
    let lr: f64 = std::env::var("TOY_LR")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(2e-3);
    let mut cfg = TrainConfig::new(model);
    cfg.seed = 17;
    cfg.optim = OptimizerConfig {
        max_lr: lr,
        total_steps: steps,
        batch_size: 4,
        weight_decay: std::env::var("TOY_WD")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(1e-4),
        ..OptimizerConfig::default()
    };
    if let Ok(p) = std::env::var("TOY_TRANSLATE") {
        cfg.augment.translate_prob = p.parse().unwrap();
    }
    cfg.eval_interval = (steps / 4).max(1);
    cfg.max_events_per_ms = Some(40);
    cfg.verbose = true;

    let t0 = std::time::Instant::now();
    let outcome = train(&dataset, &cfg).expect("training");
    println!(
        "trained {} steps in {:.1}s; best mAP@50 = {:.4}",
        steps,
        t0.elapsed().as_secs_f64(),
        outcome.best_map50
    );
    if let Some(last) = outcome.log.last() {
        println!(
            "final losses: cls {:.4} loc {:.4} dim {:.4} conf {:.4} total {:.4}",
            last.l_cls, last.l_loc, last.l_dim, last.l_conf, last.l_total
        );
    }

    let desc = evgraph::nn::ModelDesc::new(&cfg.model).unwrap();
    let train_report = evaluate_dataset(
        &dataset.train,
        &desc,
        &outcome.params,
        &cfg.graph,
        &HeadConfig::default(),
        cfg.max_events_per_ms,
        &[0.5],
    )
    .unwrap();
    println!("train-split mAP@50 = {:.4}", train_report.map50);
    for voxel in [2u32, 16] {
        let head = HeadConfig {
            pool_voxel: voxel,
            ..HeadConfig::default()
        };
        let report = evaluate_dataset(
            &dataset.val,
            &desc,
            &outcome.params,
            &cfg.graph,
            &head,
            cfg.max_events_per_ms,
            &[0.5],
        )
        .unwrap();
        println!("voxel {voxel:>2}: held-out mAP@50 = {:.4}", report.map50);
    }
}
