//! Builds a synthetic scene programmatically, renders it, and writes the
//! event and label files in both text and binary form.
//!
//! ```bash
//! cargo run --release --example generate_scene
//! ```

use evgraph::events::{
    generate_synthetic, parse_events_binary, write_events, write_events_binary,
    write_ground_truth, MovingRect, SceneSpec, SensorGeometry,
};

fn main() {
    let geometry = SensorGeometry::new(304, 240).unwrap();
    let mut scene = SceneSpec::new(geometry, 500);
    scene.noise_per_ms = 1.5;
    scene.label_hz = 30.0;
    scene.shapes.push(MovingRect {
        class_id: 0,
        cx: 70.0,
        cy: 90.0,
        w: 16.0,
        h: 16.0,
        vx: 0.03,
        vy: 0.02,
    });
    scene.shapes.push(MovingRect {
        class_id: 1,
        cx: 210.0,
        cy: 150.0,
        w: 36.0,
        h: 18.0,
        vx: -0.025,
        vy: 0.01,
    });

    let (stream, gt) = generate_synthetic(&scene, 42).unwrap();
    println!(
        "rendered {} events ({:.2} events/ms) and {} ground-truth boxes",
        stream.len(),
        stream.density_per_ms(),
        gt.boxes.len()
    );

    let dir = std::path::Path::new("target/example_out/generate_scene");
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("events.csv"), write_events(&stream)).unwrap();
    std::fs::write(dir.join("labels.csv"), write_ground_truth(&gt)).unwrap();
    let bin = write_events_binary(&stream);
    std::fs::write(dir.join("events.bin"), &bin).unwrap();

    // The binary format round-trips exactly.
    let back = parse_events_binary(&bin).unwrap();
    assert_eq!(back, stream);
    println!("wrote {}", dir.display());
}
