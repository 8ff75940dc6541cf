//! Dataset assembly, the training loop, and validation evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::detect::{assign_targets, evaluate_map, head_forward, postprocess, HeadConfig, MapReport};
use crate::error::{Error, Result};
use crate::events::{
    downsample_density, parse_events, parse_ground_truth, window_slice, EventStream, GroundTruth,
    LabeledBox,
};
use crate::graph::{build_graph_at, GraphConfig};
use crate::nn::{
    backbone_dense, backbone_tape, head_tape, BoundParams, GraphView, ModelConfig, ModelDesc,
    ModelParams, Phase, ResolvedModel,
};
use crate::tape::{Tape, Tensor};
use crate::train::{
    augment, build_targets, class_weights, loss_cls, loss_conf, loss_dim, loss_loc, lr_at,
    optimizer_step, total_loss, AdamState, AugmentConfig, LossWeights, OptimizerConfig,
};

/// One training window: events in `(t_end - window, t_end]`, the label
/// snapshots inside the window, and the boxes at `t_end` for evaluation.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub stream: EventStream,
    pub window_gts: Vec<LabeledBox>,
    pub eval_gts: Vec<LabeledBox>,
    pub t_end: i64,
}

/// Train/validation split of windowed samples.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<TrainSample>,
    pub val: Vec<TrainSample>,
}

impl Dataset {
    /// Builds one window per sequence, ending at the last label time.
    pub fn from_final_windows(
        sequences: &[(EventStream, GroundTruth)],
        window: i64,
        val_fraction: f64,
        seed: u64,
    ) -> Dataset {
        let trimmed: Vec<(EventStream, GroundTruth)> = sequences
            .iter()
            .map(|(s, gt)| {
                let keep = gt.label_times().last().copied();
                let boxes = match keep {
                    Some(t) => gt.boxes.iter().filter(|b| b.t == t).copied().collect(),
                    None => Vec::new(),
                };
                (s.clone(), GroundTruth { boxes })
            })
            .collect();
        Dataset::from_sequences(&trimmed, window, val_fraction, seed)
    }

    /// Builds windows ending at every label time that carries at least one
    /// box. The split is by sequence, deterministic per seed.
    pub fn from_sequences(
        sequences: &[(EventStream, GroundTruth)],
        window: i64,
        val_fraction: f64,
        seed: u64,
    ) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..sequences.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let val_count = ((sequences.len() as f64 * val_fraction).round() as usize)
            .min(sequences.len().saturating_sub(1));
        let mut out = Dataset::default();
        for (rank, &si) in order.iter().enumerate() {
            let (stream, gt) = &sequences[si];
            let dst = if rank < val_count {
                &mut out.val
            } else {
                &mut out.train
            };
            for t_end in gt.label_times() {
                let eval_gts = gt.boxes_at(t_end);
                if eval_gts.is_empty() {
                    continue;
                }
                let Ok(win) = window_slice(stream, t_end, window) else {
                    continue;
                };
                if win.is_empty() {
                    continue;
                }
                let window_gts: Vec<LabeledBox> = gt
                    .boxes
                    .iter()
                    .filter(|b| b.t > t_end - window && b.t <= t_end)
                    .copied()
                    .collect();
                dst.push(TrainSample {
                    stream: win,
                    window_gts,
                    eval_gts,
                    t_end,
                });
            }
        }
        out
    }
}

/// Reads a dataset manifest: one `events_path,labels_path` pair per line,
/// paths relative to the manifest location.
pub fn load_manifest(path: &Path) -> Result<Vec<(EventStream, GroundTruth)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (ev, lb) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(lineno + 1, "expected `events.csv,labels.csv`"))?;
        let ev_path: PathBuf = base.join(ev.trim());
        let lb_path: PathBuf = base.join(lb.trim());
        let ev_text = std::fs::read_to_string(&ev_path)
            .map_err(|e| Error::io(ev_path.display().to_string(), e))?;
        // Geometry is carried per scene next to the data when present; the
        // default sensor is used otherwise.
        let geometry = crate::events::SensorGeometry::new(304, 240)?;
        let stream = parse_events(&ev_text, geometry)?;
        let lb_text = std::fs::read_to_string(&lb_path)
            .map_err(|e| Error::io(lb_path.display().to_string(), e))?;
        let gt = parse_ground_truth(&lb_text)?;
        out.push((stream, gt));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub graph: GraphConfig,
    pub head: HeadConfig,
    pub optim: OptimizerConfig,
    pub augment: AugmentConfig,
    pub loss_weights: LossWeights,
    pub seed: u64,
    /// Validation cadence in steps; 0 evaluates only at the end.
    pub eval_interval: usize,
    /// Density cap applied to every window before graph construction.
    pub max_events_per_ms: Option<usize>,
    pub augment_enabled: bool,
    /// Print progress lines to stderr.
    pub verbose: bool,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        TrainConfig {
            model,
            graph: GraphConfig::default(),
            head: HeadConfig::default(),
            optim: OptimizerConfig::default(),
            augment: AugmentConfig::default(),
            loss_weights: LossWeights::default(),
            seed: 0,
            eval_interval: 0,
            max_events_per_ms: None,
            augment_enabled: true,
            verbose: false,
        }
    }
}

/// One metrics row: `step,lr,l_cls,l_loc,l_dim,l_conf,l_total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub l_cls: f64,
    pub l_loc: f64,
    pub l_dim: f64,
    pub l_conf: f64,
    pub l_total: f64,
}

pub fn metrics_csv(log: &[StepLog]) -> String {
    let mut out = String::from("step,lr,l_cls,l_loc,l_dim,l_conf,l_total\n");
    for r in log {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.step, r.lr, r.l_cls, r.l_loc, r.l_dim, r.l_conf, r.l_total
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-on-validation parameters.
    pub params: ModelParams,
    pub final_params: ModelParams,
    pub log: Vec<StepLog>,
    pub best_map50: f64,
    /// (step, mAP@50) at every validation point.
    pub val_history: Vec<(usize, f64)>,
}

fn prepare_window(
    sample: &TrainSample,
    cfg: &TrainConfig,
    aug_seed: u64,
    ds_seed: u64,
) -> Result<Option<(GraphView, Vec<crate::detect::NodeTarget>)>> {
    let (mut stream, mut gts) = if cfg.augment_enabled && !sample.window_gts.is_empty() {
        augment(&sample.stream, &sample.window_gts, &cfg.augment, aug_seed)?
    } else {
        (sample.stream.clone(), sample.window_gts.clone())
    };
    if let Some(cap) = cfg.max_events_per_ms {
        stream = downsample_density(&stream, cap, ds_seed)?;
    }
    if stream.is_empty() {
        return Ok(None);
    }
    gts.sort_by_key(|b| b.t);
    let t_origin = sample.t_end - cfg.graph.window;
    let origin = t_origin.max(0).min(stream.events.first().map_or(0, |e| e.t));
    let graph = build_graph_at(&stream, &cfg.graph, origin)?;
    let view = GraphView::from_graph(&graph)?;
    let targets = assign_targets(&view, &gts, cfg.model.num_classes as u32);
    Ok(Some((view, targets)))
}

/// Node-class frequencies over the training split, for loss weighting.
fn count_classes(dataset: &Dataset, cfg: &TrainConfig) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; cfg.model.num_classes + 1];
    for (i, sample) in dataset.train.iter().enumerate() {
        let mut plain = cfg.clone();
        plain.augment_enabled = false;
        if let Some((_, targets)) = prepare_window(sample, &plain, 0, i as u64)? {
            for t in targets {
                counts[t.class as usize] += 1;
            }
        }
    }
    Ok(counts)
}

/// Validation mAP of a parameter set over held-out samples. Sample
/// windows are namespaced by index so detections never cross windows.
pub fn evaluate_dataset(
    samples: &[TrainSample],
    desc: &ModelDesc,
    params: &ModelParams,
    graph_cfg: &GraphConfig,
    head_cfg: &HeadConfig,
    max_events_per_ms: Option<usize>,
    thresholds: &[f64],
) -> Result<MapReport> {
    let model = ResolvedModel::new(desc, params)?;
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for (i, sample) in samples.iter().enumerate() {
        let offset = (i as i64 + 1) * 10_000_000_000;
        let mut stream = sample.stream.clone();
        if let Some(cap) = max_events_per_ms {
            stream = downsample_density(&stream, cap, i as u64)?;
        }
        if stream.is_empty() {
            for g in &sample.eval_gts {
                gts.push(LabeledBox {
                    t: g.t + offset,
                    ..*g
                });
            }
            continue;
        }
        let origin = (sample.t_end - graph_cfg.window)
            .max(0)
            .min(stream.events.first().map_or(0, |e| e.t));
        let graph = build_graph_at(&stream, graph_cfg, origin)?;
        let view = GraphView::from_graph(&graph)?;
        let features = backbone_dense(&model, &view, None);
        let preds = head_forward(&model, &view, &features);
        for mut d in postprocess(&preds, head_cfg, &stream.geometry, sample.t_end) {
            d.t += offset;
            dets.push(d);
        }
        for g in &sample.eval_gts {
            gts.push(LabeledBox {
                t: g.t + offset,
                ..*g
            });
        }
    }
    Ok(evaluate_map(&dets, &gts, thresholds))
}

/// Runs the training loop: batched windows, tape backward, decoupled
/// Adam updates under the one-cycle schedule, periodic validation, and
/// best-checkpoint tracking. Deterministic per seed.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.model.validate()?;
    cfg.graph.validate()?;
    cfg.head.validate()?;
    cfg.optim.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::Validation("empty training split".into()));
    }
    let desc = ModelDesc::new(&cfg.model)?;
    let mut params = ModelParams::init(&cfg.model, cfg.seed)?;
    let weights = class_weights(&count_classes(dataset, cfg)?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x74726169);
    let mut adam = AdamState::default();
    let mut log = Vec::with_capacity(cfg.optim.total_steps);
    let mut best_map50 = f64::NEG_INFINITY;
    let mut best_params = params.clone();
    let mut val_history = Vec::new();

    for step in 0..cfg.optim.total_steps {
        // Assemble the batch of windowed graphs.
        let mut views = Vec::with_capacity(cfg.optim.batch_size);
        let mut assigns = Vec::new();
        for _ in 0..cfg.optim.batch_size {
            let idx = rng.random_range(0..dataset.train.len());
            let aug_seed: u64 = rng.random();
            let ds_seed: u64 = rng.random();
            if let Some((view, t)) = prepare_window(&dataset.train[idx], cfg, aug_seed, ds_seed)? {
                views.push(view);
                assigns.extend(t);
            }
        }
        if views.is_empty() {
            continue;
        }
        let merged = GraphView::merge(&views);
        let targets = build_targets(&merged, &assigns, &weights, &cfg.head)?;

        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &params);
        let mut stats = Vec::new();
        let feats = backbone_tape(
            &mut tape, &desc, &params, &bound, &merged, Phase::Train, &mut stats,
        )?;
        let (cls, reg) = head_tape(
            &mut tape, &desc, &params, &bound, &merged, feats, Phase::Train, &mut stats,
        )?;
        let l_cls = loss_cls(&mut tape, cls, &targets)?;
        let l_loc = loss_loc(&mut tape, reg, &targets, &cfg.head);
        let l_dim = loss_dim(&mut tape, reg, &targets);
        let l_conf = loss_conf(&mut tape, reg, &merged, &assigns, &targets, &cfg.head);
        let l_total = total_loss(
            &mut tape,
            [l_cls, l_loc, l_dim, l_conf],
            &cfg.loss_weights,
        );
        let total_v = tape.value(l_total).item();
        if !total_v.is_finite() {
            return Err(Error::Numeric(format!(
                "training diverged at step {step}: total loss = {total_v}"
            )));
        }
        let row = StepLog {
            step,
            lr: lr_at(step, &cfg.optim),
            l_cls: tape.value(l_cls).item(),
            l_loc: tape.value(l_loc).item(),
            l_dim: tape.value(l_dim).item(),
            l_conf: tape.value(l_conf).item(),
            l_total: total_v,
        };
        log.push(row);

        let grads_all = tape.backward(l_total);
        let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
        for (name, var) in &bound.vars {
            let t = params.get(name)?;
            let g = grads_all
                .get(*var)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.rows, t.cols));
            grads.insert(name.clone(), g);
        }
        optimizer_step(&mut params, &grads, &mut adam, &cfg.optim, step)?;

        // Fold batch statistics into the running estimates.
        for (prefix, s) in stats {
            let m = cfg.model.bn_momentum;
            let rm = params.get_mut(&format!("{prefix}.running_mean"))?;
            for (r, &b) in rm.data.iter_mut().zip(&s.mean) {
                *r = (1.0 - m) * *r + m * b;
            }
            let rv = params.get_mut(&format!("{prefix}.running_var"))?;
            for (r, &b) in rv.data.iter_mut().zip(&s.var) {
                *r = (1.0 - m) * *r + m * b;
            }
        }

        let at_end = step + 1 == cfg.optim.total_steps;
        let due = cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0;
        if (due || at_end) && !dataset.val.is_empty() {
            let report = evaluate_dataset(
                &dataset.val,
                &desc,
                &params,
                &cfg.graph,
                &cfg.head,
                cfg.max_events_per_ms,
                &[0.5],
            )?;
            val_history.push((step + 1, report.map50));
            if report.map50 > best_map50 {
                best_map50 = report.map50;
                best_params = params.clone();
            }
            if cfg.verbose {
                eprintln!(
                    "step {:>6}  loss {:.4}  val mAP@50 {:.4}",
                    step + 1,
                    total_v,
                    report.map50
                );
            }
        } else if cfg.verbose && (step + 1) % 50 == 0 {
            eprintln!("step {:>6}  loss {:.4}", step + 1, total_v);
        }
    }

    if best_map50 == f64::NEG_INFINITY {
        best_params = params.clone();
        best_map50 = 0.0;
    }
    Ok(TrainOutcome {
        params: best_params,
        final_params: params,
        log,
        best_map50,
        val_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{generate_synthetic, MovingRect, SceneSpec, SensorGeometry};

    fn tiny_dataset(n_seq: usize) -> Dataset {
        let mut sequences = Vec::new();
        for i in 0..n_seq {
            let mut s = SceneSpec::new(SensorGeometry::new(128, 96).unwrap(), 60);
            s.noise_per_ms = 0.5;
            s.label_hz = 30.0;
            s.shapes.push(MovingRect {
                class_id: (i % 2) as u32,
                cx: 40.0 + 10.0 * (i % 4) as f64,
                cy: 40.0,
                w: 16.0,
                h: 14.0,
                vx: 0.03,
                vy: 0.01,
            });
            sequences.push(generate_synthetic(&s, i as u64).unwrap());
        }
        Dataset::from_sequences(&sequences, 100_000, 0.25, 7)
    }

    fn tiny_train_cfg(steps: usize) -> TrainConfig {
        let mut model = ModelConfig::desk(2);
        model.channels = vec![8];
        model.embed_dim = 8;
        model.head_dim = 8;
        model.backbone_grid = (3, 3, 1);
        model.head_grid = (2, 2, 1);
        model.backbone_heads = 2;
        let mut cfg = TrainConfig::new(model);
        cfg.optim.total_steps = steps;
        cfg.optim.batch_size = 2;
        cfg.optim.max_lr = 1e-3;
        cfg.eval_interval = 0;
        cfg
    }

    #[test]
    fn dataset_split_is_by_sequence_and_nonempty() {
        let d = tiny_dataset(8);
        assert!(!d.train.is_empty());
        assert!(!d.val.is_empty());
    }

    #[test]
    fn two_runs_same_seed_produce_identical_loss_curves() {
        let d = tiny_dataset(4);
        let cfg = tiny_train_cfg(4);
        let a = train(&d, &cfg).unwrap();
        let b = train(&d, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.final_params, b.final_params);
    }

    #[test]
    fn loss_decreases_on_tiny_run() {
        let d = tiny_dataset(3);
        let mut cfg = tiny_train_cfg(30);
        cfg.augment_enabled = false;
        let out = train(&d, &cfg).unwrap();
        let first: f64 = out.log[..5].iter().map(|r| r.l_total).sum::<f64>() / 5.0;
        let last: f64 = out.log[out.log.len() - 5..]
            .iter()
            .map(|r| r.l_total)
            .sum::<f64>()
            / 5.0;
        assert!(
            last < first,
            "loss should trend down: first {first:.4} last {last:.4}"
        );
    }

    #[test]
    fn metrics_csv_has_expected_header() {
        let rows = vec![StepLog {
            step: 0,
            lr: 1e-4,
            l_cls: 1.0,
            l_loc: 0.5,
            l_dim: 0.25,
            l_conf: 0.125,
            l_total: 2.0,
        }];
        let text = metrics_csv(&rows);
        assert!(text.starts_with("step,lr,l_cls,l_loc,l_dim,l_conf,l_total\n"));
        assert!(text.lines().count() == 2);
    }
}
