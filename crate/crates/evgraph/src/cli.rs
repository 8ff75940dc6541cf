//! Command-line surface: generation, training, inference, evaluation,
//! benchmarking, and feature export. Every ablation switch is a flag, so
//! each experiment configuration is a one-line invocation.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::detect::{evaluate_map, head_forward, parse_detections, postprocess, write_detections, Detection, HeadConfig};
use crate::engine::{bench_csv, bench_update, AsyncEngine, BenchMode, EngineConfig};
use crate::error::{Error, Result};
use crate::events::{
    generate_synthetic, parse_events, parse_events_binary, parse_ground_truth, window_slice,
    write_events, write_events_binary, write_ground_truth, EventStream, SceneSpec, SensorGeometry,
};
use crate::features::{features_csv, layer_features, principal_components, project_to_rgb, write_ppm, FeatureBranch};
use crate::graph::{build_graph_at, GraphConfig};
use crate::nn::{
    backbone_dense, GraphView, ModelConfig, ModelDesc, ModelParams, ResolvedModel,
    SpatialKernelKind, TemporalAggKind,
};
use crate::train::{
    load_manifest, metrics_csv, train, Dataset, OptimizerConfig, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "evgraph",
    version,
    about = "Spatiotemporal multigraph learning over event-camera streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene file into events.csv and labels.csv.
    Generate {
        /// Scene description file (`key = value` plus `rect = ...` lines).
        scene: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the packed binary event file.
        #[arg(long)]
        binary: bool,
    },
    /// Train a model on a dataset manifest (`events.csv,labels.csv` lines).
    Train {
        manifest: PathBuf,
        /// Output directory for checkpoint, config, and logs.
        #[arg(long)]
        out: PathBuf,
        /// Model config file providing the architecture baseline.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Config overrides, `key=value`; flags below win over these.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Object class count (background is added automatically).
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 4e-4)]
        lr: f64,
        #[arg(long, default_value_t = 250)]
        eval_interval: usize,
        /// Laptop-scale channel widths instead of the full stack.
        #[arg(long)]
        desk: bool,
        /// Disable the spatial (spline) branch.
        #[arg(long)]
        no_ssl: bool,
        /// Disable the temporal (attention) branch.
        #[arg(long)]
        no_mvl: bool,
        #[arg(long, value_parser = ["spline2d", "spline3d", "gcn"])]
        ssl_kernel: Option<String>,
        #[arg(long, value_parser = ["attention", "uniform", "single-head"])]
        mvl_agg: Option<String>,
        /// Zero the velocity/polarity components of temporal edges.
        #[arg(long)]
        no_motion_features: bool,
        #[arg(long, default_value_t = 100)]
        window_ms: i64,
        /// Density cap per 1 ms bucket.
        #[arg(long)]
        max_events_per_ms: Option<usize>,
        /// Active-region voxel edge in pixels (1 = node-wise).
        #[arg(long, default_value_t = 2)]
        pool_voxel: u32,
        #[arg(long)]
        no_augment: bool,
        #[arg(long, default_value_t = 0.2)]
        val_fraction: f64,
        #[arg(long)]
        quiet: bool,
    },
    /// Run detection over an event file and write a detections CSV.
    Infer {
        checkpoint: PathBuf,
        events: PathBuf,
        #[arg(long, value_parser = ["dense", "async"], default_value = "dense")]
        mode: String,
        /// Model config; defaults to the checkpoint path with a .cfg extension.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth file supplying the evaluation timestamps.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Label frequency when no labels file is given.
        #[arg(long, default_value_t = 20.0)]
        label_hz: f64,
        #[arg(long, default_value_t = 100)]
        window_ms: i64,
        #[arg(long, default_value_t = 2)]
        pool_voxel: u32,
        #[arg(long)]
        max_events_per_ms: Option<usize>,
        #[arg(long, default_value_t = 304)]
        width: u32,
        #[arg(long, default_value_t = 240)]
        height: u32,
    },
    /// Score detections against ground truth (mAP and mAP@50).
    Eval {
        detections: PathBuf,
        labels: PathBuf,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        /// Write the machine-readable AP table here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Per-event latency benchmark over increasing graph sizes.
    Bench {
        /// Checkpoint to benchmark; a fresh desk-scale model otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "2000,4000,10000,25000")]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "dense,serial,parallel")]
        modes: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long, default_value_t = 100)]
        measure: usize,
    },
    /// Project per-node features to RGB via PCA and write CSV + PPM.
    ExportFeatures {
        checkpoint: PathBuf,
        events: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = ["ssl", "mvl", "fused"], default_value = "fused")]
        branch: String,
        /// Block index to export from.
        #[arg(long, default_value_t = 0)]
        layer: usize,
        /// Output directory for features.csv and features.ppm.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        window_ms: i64,
        #[arg(long, default_value_t = 304)]
        width: u32,
        #[arg(long, default_value_t = 240)]
        height: u32,
    },
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads events from CSV or the packed binary format, chosen by magic.
fn load_events(path: &Path, geometry: SensorGeometry) -> Result<EventStream> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(crate::events::BINARY_MAGIC) {
        parse_events_binary(&bytes)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Validation(format!("{} is neither CSV nor EVG1", path.display())))?;
        parse_events(&text, geometry)
    }
}

fn load_model(checkpoint: &Path, config: Option<&Path>) -> Result<(ModelConfig, ModelParams)> {
    let cfg_path = match config {
        Some(p) => p.to_path_buf(),
        None => checkpoint.with_extension("cfg"),
    };
    let cfg = ModelConfig::parse(&read_file(&cfg_path)?)?;
    let params = ModelParams::from_bytes(&read_bytes(checkpoint)?)?;
    // Shape check: every tensor the description expects must be present.
    ModelDesc::new(&cfg).and_then(|d| ResolvedModel::new(&d, &params).map(|_| ()))?;
    Ok((cfg, params))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate {
            scene,
            out,
            seed,
            binary,
        } => cmd_generate(&scene, &out, seed, binary),
        Command::Train {
            manifest,
            out,
            config,
            overrides,
            seed,
            classes,
            steps,
            batch,
            lr,
            eval_interval,
            desk,
            no_ssl,
            no_mvl,
            ssl_kernel,
            mvl_agg,
            no_motion_features,
            window_ms,
            max_events_per_ms,
            pool_voxel,
            no_augment,
            val_fraction,
            quiet,
        } => {
            if no_ssl && no_mvl {
                return Err(Error::Usage(
                    "--no-ssl and --no-mvl together leave no backbone".into(),
                ));
            }
            // Precedence: config file (or built-in default), then --set
            // overrides, then explicit flags.
            let mut model = match config {
                Some(p) => ModelConfig::parse(&read_file(&p)?)?,
                None if desk => ModelConfig::desk(classes.unwrap_or(2)),
                None => ModelConfig::new(classes.unwrap_or(2)),
            };
            if let Some(c) = classes {
                model.num_classes = c;
            }
            for kv in &overrides {
                let (k, v) = kv.split_once('=').ok_or_else(|| {
                    Error::Usage(format!("override `{kv}` is not of the form key=value"))
                })?;
                model
                    .set_key(k.trim(), v.trim())
                    .map_err(|e| Error::Usage(e.to_string()))?;
            }
            if no_ssl {
                model.use_ssl = false;
            }
            if no_mvl {
                model.use_mvl = false;
            }
            if let Some(kind) = &ssl_kernel {
                model.spatial_kernel = match kind.as_str() {
                    "spline2d" => SpatialKernelKind::Spline2d,
                    "spline3d" => SpatialKernelKind::Spline3d,
                    _ => SpatialKernelKind::Gcn,
                };
            }
            if let Some(agg) = &mvl_agg {
                model.temporal_agg = match agg.as_str() {
                    "attention" => TemporalAggKind::MultiHead,
                    "uniform" => TemporalAggKind::Uniform,
                    _ => TemporalAggKind::SingleHead,
                };
            }
            if no_motion_features {
                model.motion_features = false;
            }
            model.validate().map_err(|e| Error::Usage(e.to_string()))?;

            let mut cfg = TrainConfig::new(model);
            cfg.seed = seed;
            cfg.graph.window = window_ms * 1000;
            cfg.head.pool_voxel = pool_voxel;
            cfg.optim = OptimizerConfig {
                max_lr: lr,
                total_steps: steps,
                batch_size: batch,
                ..OptimizerConfig::default()
            };
            cfg.eval_interval = eval_interval;
            cfg.max_events_per_ms = max_events_per_ms;
            cfg.augment_enabled = !no_augment;
            cfg.verbose = !quiet;

            let sequences = load_manifest(&manifest)?;
            if sequences.is_empty() {
                return Err(Error::Validation("manifest lists no sequences".into()));
            }
            let dataset = Dataset::from_sequences(&sequences, cfg.graph.window, val_fraction, seed);
            let outcome = train(&dataset, &cfg)?;

            ensure_dir(&out)?;
            write_bytes(&out.join("model.ckpt"), &outcome.params.to_bytes())?;
            write_file(&out.join("model.cfg"), &cfg.model.to_text())?;
            write_file(&out.join("metrics.csv"), &metrics_csv(&outcome.log))?;
            let mut summary = format!(
                "steps = {}\nparams = {}\nbest_val_map50 = {:.4}\n",
                outcome.log.len(),
                outcome.params.param_count(),
                outcome.best_map50
            );
            for (step, map50) in &outcome.val_history {
                summary.push_str(&format!("val @ {step}: mAP@50 = {map50:.4}\n"));
            }
            write_file(&out.join("report.txt"), &summary)?;
            println!(
                "trained {} steps; best validation mAP@50 = {:.4}; wrote {}",
                outcome.log.len(),
                outcome.best_map50,
                out.display()
            );
            Ok(())
        }
        Command::Infer {
            checkpoint,
            events,
            mode,
            config,
            out,
            labels,
            label_hz,
            window_ms,
            pool_voxel,
            max_events_per_ms,
            width,
            height,
        } => cmd_infer(
            &checkpoint,
            &events,
            &mode,
            config.as_deref(),
            &out,
            labels.as_deref(),
            label_hz,
            window_ms * 1000,
            pool_voxel,
            max_events_per_ms,
            SensorGeometry::new(width, height)?,
        ),
        Command::Eval {
            detections,
            labels,
            classes,
            csv,
        } => cmd_eval(&detections, &labels, classes, csv.as_deref()),
        Command::Bench {
            checkpoint,
            config,
            sizes,
            modes,
            out,
            seed,
            warmup,
            measure,
        } => {
            let (model_cfg, params) = match (&checkpoint, &config) {
                (Some(ckpt), cfg) => load_model(ckpt, cfg.as_deref())?,
                (None, Some(cfg_path)) => {
                    let cfg = ModelConfig::parse(&read_file(cfg_path)?)?;
                    let params = ModelParams::init(&cfg, seed)?;
                    (cfg, params)
                }
                (None, None) => {
                    let mut cfg = ModelConfig::desk(2);
                    cfg.channels = vec![16, 16];
                    let params = ModelParams::init(&cfg, seed)?;
                    (cfg, params)
                }
            };
            let desc = ModelDesc::new(&model_cfg)?;
            let modes: Vec<BenchMode> = modes
                .iter()
                .map(|m| BenchMode::parse(m))
                .collect::<Result<_>>()?;
            let rows = bench_update(
                &sizes,
                &desc,
                &params,
                &GraphConfig::default(),
                &modes,
                warmup,
                measure,
                seed,
            )?;
            let csv = bench_csv(&rows);
            print!("{csv}");
            if let Some(path) = out {
                write_file(&path, &csv)?;
            }
            Ok(())
        }
        Command::ExportFeatures {
            checkpoint,
            events,
            config,
            branch,
            layer,
            out,
            window_ms,
            width,
            height,
        } => {
            let geometry = SensorGeometry::new(width, height)?;
            let (model_cfg, params) = load_model(&checkpoint, config.as_deref())?;
            let stream = load_events(&events, geometry)?;
            if stream.is_empty() {
                return Err(Error::Validation("event file is empty".into()));
            }
            let t_end = stream.events.last().unwrap().t;
            let window = window_ms * 1000;
            let win = window_slice(&stream, t_end, window)?;
            let graph_cfg = GraphConfig {
                window,
                ..GraphConfig::default()
            };
            let graph = build_graph_at(&win, &graph_cfg, (t_end - window).max(0))?;
            let view = GraphView::from_graph(&graph)?;
            let desc = ModelDesc::new(&model_cfg)?;
            let model = ResolvedModel::new(&desc, &params)?;
            let feats = layer_features(&model, &view, FeatureBranch::parse(&branch)?, layer)?;
            let (comps, _) = principal_components(&feats, 3, 50)?;
            let colors = project_to_rgb(&feats, &comps);
            ensure_dir(&out)?;
            write_file(&out.join("features.csv"), &features_csv(&view, &colors))?;
            write_bytes(
                &out.join("features.ppm"),
                &write_ppm(&win.geometry, &view, &colors),
            )?;
            println!(
                "exported {} nodes from {branch} layer {layer} to {}",
                view.n,
                out.display()
            );
            Ok(())
        }
    }
}

fn cmd_generate(scene_path: &Path, out: &Path, seed: u64, binary: bool) -> Result<()> {
    let spec = SceneSpec::parse(&read_file(scene_path)?)?;
    let (stream, gt) = generate_synthetic(&spec, seed)?;
    ensure_dir(out)?;
    write_file(&out.join("events.csv"), &write_events(&stream))?;
    write_file(&out.join("labels.csv"), &write_ground_truth(&gt))?;
    if binary {
        write_bytes(&out.join("events.bin"), &write_events_binary(&stream))?;
    }
    let density = stream.len() as f64 / spec.duration_ms.max(1) as f64;
    println!(
        "generated {} events over {} ms ({:.3} events/ms), {} boxes",
        stream.len(),
        spec.duration_ms,
        density,
        gt.boxes.len()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_infer(
    checkpoint: &Path,
    events_path: &Path,
    mode: &str,
    config: Option<&Path>,
    out: &Path,
    labels: Option<&Path>,
    label_hz: f64,
    window: i64,
    pool_voxel: u32,
    max_events_per_ms: Option<usize>,
    geometry: SensorGeometry,
) -> Result<()> {
    let (model_cfg, params) = load_model(checkpoint, config)?;
    let desc = ModelDesc::new(&model_cfg)?;
    let mut stream = load_events(events_path, geometry)?;
    if let Some(cap) = max_events_per_ms {
        stream = crate::events::downsample_density(&stream, cap, 0)?;
    }
    let head_cfg = HeadConfig {
        pool_voxel,
        ..HeadConfig::default()
    };
    let graph_cfg = GraphConfig {
        window,
        ..GraphConfig::default()
    };
    let times: Vec<i64> = match labels {
        Some(p) => parse_ground_truth(&read_file(p)?)?.label_times(),
        None => {
            let t_end = stream.events.last().map_or(0, |e| e.t);
            let mut ts = Vec::new();
            let mut k = 1u64;
            loop {
                let t = (k as f64 * 1e6 / label_hz).round() as i64;
                if t > t_end {
                    break;
                }
                ts.push(t);
                k += 1;
            }
            if ts.is_empty() && t_end > 0 {
                ts.push(t_end);
            }
            ts
        }
    };

    let mut dets: Vec<Detection> = Vec::new();
    for &t_end in &times {
        let win = window_slice(&stream, t_end, window)?;
        if win.is_empty() {
            continue;
        }
        let origin = (t_end - window).max(0).min(win.events[0].t);
        let preds = match mode {
            "dense" => {
                let graph = build_graph_at(&win, &graph_cfg, origin)?;
                let view = GraphView::from_graph(&graph)?;
                let model = ResolvedModel::new(&desc, &params)?;
                let feats = backbone_dense(&model, &view, None);
                head_forward(&model, &view, &feats)
            }
            "async" => {
                let mut engine = AsyncEngine::new(
                    graph_cfg,
                    geometry,
                    origin,
                    &desc,
                    &params,
                    EngineConfig::default(),
                )?;
                for e in &win.events {
                    engine.insert(e)?;
                }
                engine.all_predictions()
            }
            other => return Err(Error::Usage(format!("unknown mode `{other}`"))),
        };
        dets.extend(postprocess(&preds, &head_cfg, &geometry, t_end));
    }
    write_file(out, &write_detections(&dets))?;
    println!("wrote {} detections to {}", dets.len(), out.display());
    Ok(())
}

fn cmd_eval(detections: &Path, labels: &Path, classes: usize, csv: Option<&Path>) -> Result<()> {
    let dets = parse_detections(&read_file(detections)?)?;
    let gt = parse_ground_truth(&read_file(labels)?)?;
    let max_class = dets
        .iter()
        .map(|d| d.class_id)
        .chain(gt.boxes.iter().map(|b| b.class_id))
        .max()
        .unwrap_or(0);
    if max_class as usize >= classes {
        return Err(Error::Validation(format!(
            "class id {max_class} exceeds declared class count {classes}"
        )));
    }
    let report = evaluate_map(&dets, &gt.boxes, &crate::detect::coco_thresholds());
    print!("{}", report.to_table());
    println!("mAP = {:.4}", report.map);
    println!("mAP@50 = {:.4}", report.map50);
    if let Some(path) = csv {
        write_file(path, &report.to_csv())?;
    }
    Ok(())
}
