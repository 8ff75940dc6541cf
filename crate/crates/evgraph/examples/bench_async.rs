//! Per-event latency of dense recompute versus incremental update on
//! growing graphs, in the shape of the timing table.
//!
//! ```bash
//! cargo run --release --example bench_async [sizes...]
//! ```

use evgraph::engine::{bench_csv, bench_update, BenchMode};
use evgraph::graph::GraphConfig;
use evgraph::nn::{ModelConfig, ModelDesc, ModelParams};

fn main() {
    let sizes: Vec<usize> = {
        let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
        if args.is_empty() {
            vec![1000, 2000, 4000]
        } else {
            args
        }
    };
    let mut cfg = ModelConfig::desk(2);
    cfg.channels = vec![16, 16];
    let desc = ModelDesc::new(&cfg).unwrap();
    let params = ModelParams::init(&cfg, 0).unwrap();
    let rows = bench_update(
        &sizes,
        &desc,
        &params,
        &GraphConfig::default(),
        &[BenchMode::Dense, BenchMode::Serial, BenchMode::Parallel],
        5,
        50,
        0,
    )
    .unwrap();
    print!("{}", bench_csv(&rows));

    let dense: Vec<f64> = rows
        .iter()
        .filter(|r| r.mode == BenchMode::Dense)
        .map(|r| r.median_ms)
        .collect();
    let serial: Vec<f64> = rows
        .iter()
        .filter(|r| r.mode == BenchMode::Serial)
        .map(|r| r.median_ms)
        .collect();
    if dense.len() >= 2 {
        println!(
            "# dense grows {:.1}x over the sweep; incremental {:.1}x",
            dense.last().unwrap() / dense[0],
            serial.last().unwrap() / serial[0],
        );
    }
}
