//! Projects per-node backbone features onto their top three principal
//! components and writes an RGB overlay of the sensor plane.
//!
//! ```bash
//! cargo run --release --example export_features
//! ```

use evgraph::events::{generate_synthetic, MovingRect, SceneSpec, SensorGeometry};
use evgraph::features::{features_csv, layer_features, principal_components, project_to_rgb, write_ppm, FeatureBranch};
use evgraph::graph::{build_graph, GraphConfig};
use evgraph::nn::{GraphView, ModelConfig, ModelDesc, ModelParams, ResolvedModel};

fn main() {
    let geometry = SensorGeometry::new(304, 240).unwrap();
    let mut scene = SceneSpec::new(geometry, 100);
    scene.noise_per_ms = 1.0;
    scene.shapes.push(MovingRect {
        class_id: 0,
        cx: 100.0,
        cy: 120.0,
        w: 28.0,
        h: 28.0,
        vx: 0.04,
        vy: 0.01,
    });
    let (stream, _) = generate_synthetic(&scene, 23).unwrap();
    let graph = build_graph(&stream, &GraphConfig::default()).unwrap();
    let view = GraphView::from_graph(&graph).unwrap();

    let cfg = ModelConfig::desk(2);
    let desc = ModelDesc::new(&cfg).unwrap();
    let params = ModelParams::init(&cfg, 9).unwrap();
    let model = ResolvedModel::new(&desc, &params).unwrap();

    let dir = std::path::Path::new("target/example_out/export_features");
    std::fs::create_dir_all(dir).unwrap();
    for branch in [FeatureBranch::Ssl, FeatureBranch::Mvl, FeatureBranch::Fused] {
        let name = match branch {
            FeatureBranch::Ssl => "ssl",
            FeatureBranch::Mvl => "mvl",
            FeatureBranch::Fused => "fused",
        };
        let last = desc.blocks.len() - 1;
        let feats = layer_features(&model, &view, branch, last).unwrap();
        let (comps, lambdas) = principal_components(&feats, 3, 50).unwrap();
        let colors = project_to_rgb(&feats, &comps);
        std::fs::write(dir.join(format!("{name}.csv")), features_csv(&view, &colors)).unwrap();
        std::fs::write(
            dir.join(format!("{name}.ppm")),
            write_ppm(&geometry, &view, &colors),
        )
        .unwrap();
        println!(
            "{name:<5} block {last}: {} nodes, explained variance {:.3?}",
            view.n, lambdas
        );
    }
    println!("wrote {}", dir.display());
}
