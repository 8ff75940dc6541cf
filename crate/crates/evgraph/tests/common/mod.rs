//! Shared fixtures for the integration and acceptance suites.

#![allow(dead_code)]

use evgraph::events::{
    generate_synthetic, EventStream, GroundTruth, MovingRect, SceneSpec, SensorGeometry,
};
use evgraph::nn::ModelConfig;
use evgraph::train::Dataset;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random benchmark scene: one or two rectangles of two size classes
/// drifting slowly over 100 ms, uniform background noise, and a fraction
/// of close pairs that coarse pooling cannot separate.
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
            Some((ax, ay)) => (
                (ax + w / 2.0 + rng.random_range(10.0..16.0) + w / 2.0).min(250.0),
                ay + rng.random_range(-5.0..5.0),
            ),
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

pub fn rectangle_sequences(n: usize, seed: u64) -> Vec<(EventStream, GroundTruth)> {
    (0..n)
        .map(|i| generate_synthetic(&rectangle_scene(seed + i as u64), seed + i as u64).unwrap())
        .collect()
}

/// One full window per sequence, 20% of sequences held out.
pub fn rectangle_dataset(n_sequences: usize, seed: u64) -> Dataset {
    let sequences = rectangle_sequences(n_sequences, seed);
    Dataset::from_final_windows(&sequences, 100_000, 0.2, seed)
}

/// Small model for equivalence and gradient tests.
pub fn tiny_model_config() -> ModelConfig {
    let mut cfg = ModelConfig::desk(2);
    cfg.channels = vec![8, 8];
    cfg.embed_dim = 8;
    cfg.head_dim = 8;
    cfg.backbone_grid = (3, 3, 1);
    cfg.head_grid = (2, 2, 1);
    cfg.backbone_heads = 2;
    cfg
}

/// Desk-scale training model used by the learning criteria.
pub fn desk_model_config() -> ModelConfig {
    let mut cfg = ModelConfig::desk(2);
    cfg.channels = vec![16, 32, 64];
    cfg
}
