//! Network assembly: embedding, fusion blocks, backbone, and head wiring.
//!
//! Two forward paths share the same per-node kernels:
//!
//! * the *tape* path records every layer for reverse-mode training;
//! * the *dense* path evaluates with frozen normalization statistics,
//!   node by node, and is reused verbatim by the incremental engine so
//!   streaming and batch inference agree bitwise.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::norm::{batchnorm_tape, BatchStats, EvalNorm};
use crate::nn::{
    attention_node_forward, is_buffer, mvl_forward_tape, spline_node_forward, ssl_forward_tape,
    AttentionDesc, GraphView, ModelConfig, ModelParams, SplineDesc,
};
use crate::tape::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// One fusion block resolved against a configuration.
#[derive(Debug, Clone)]
pub struct BlockDesc {
    pub prefix: String,
    pub c_in: usize,
    pub c_out: usize,
    pub spline: Option<SplineDesc>,
    pub attn: Option<AttentionDesc>,
}

impl BlockDesc {
    pub fn fused(&self) -> bool {
        self.spline.is_some() && self.attn.is_some()
    }
}

/// All block descriptors of a model, backbone plus head.
#[derive(Debug, Clone)]
pub struct ModelDesc {
    pub cfg: ModelConfig,
    pub blocks: Vec<BlockDesc>,
    pub head_block: BlockDesc,
}

impl ModelDesc {
    pub fn new(cfg: &ModelConfig) -> Result<ModelDesc> {
        cfg.validate()?;
        let make = |prefix: String,
                    c_in: usize,
                    c_out: usize,
                    grid: (usize, usize, usize),
                    heads: usize|
         -> Result<BlockDesc> {
            let spline = if cfg.use_ssl {
                Some(SplineDesc::new(grid, c_in, c_out)?)
            } else {
                None
            };
            let attn = if cfg.use_mvl {
                let mut a = AttentionDesc::new(c_in, c_out, heads)?;
                a.leaky_slope = cfg.leaky_slope;
                a.uniform = matches!(cfg.temporal_agg, super::TemporalAggKind::Uniform);
                a.motion_features = cfg.motion_features;
                Some(a)
            } else {
                None
            };
            Ok(BlockDesc {
                prefix,
                c_in,
                c_out,
                spline,
                attn,
            })
        };
        let grid = cfg.effective_backbone_grid();
        let heads = cfg.effective_heads();
        let mut blocks = Vec::with_capacity(cfg.channels.len());
        let mut c_in = cfg.embed_dim;
        for (i, &c_out) in cfg.channels.iter().enumerate() {
            blocks.push(make(format!("block{i}"), c_in, c_out, grid, heads)?);
            c_in = c_out;
        }
        let head_block = make(
            "head.block".to_string(),
            c_in,
            cfg.head_dim,
            cfg.head_grid,
            cfg.head_heads,
        )?;
        Ok(ModelDesc {
            cfg: cfg.clone(),
            blocks,
            head_block,
        })
    }

    /// Message-passing depth: backbone blocks plus the head block.
    pub fn message_layers(&self) -> usize {
        self.blocks.len() + 1
    }
}

// ---------------------------------------------------------------------------
// Dense (eval) path.
// ---------------------------------------------------------------------------

/// One block's tensors copied out of the parameter map, with the frozen
/// normalization folded to an affine transform.
#[derive(Debug, Clone)]
pub struct ResolvedBlock {
    pub desc: BlockDesc,
    pub spline: Option<(SplineDesc, Tensor, Tensor, Tensor)>,
    pub attn: Option<(AttentionDesc, Tensor, Tensor, Tensor, Tensor, Tensor)>,
    pub fuse: Option<(Tensor, Tensor, Tensor, Tensor)>,
    pub norm: EvalNorm,
}

impl ResolvedBlock {
    pub fn new(desc: &BlockDesc, params: &ModelParams, eps: f64) -> Result<ResolvedBlock> {
        let p = &desc.prefix;
        let spline = match &desc.spline {
            Some(sd) => Some((
                *sd,
                params.get(&format!("{p}.spline.w"))?.clone(),
                params.get(&format!("{p}.spline.root"))?.clone(),
                params.get(&format!("{p}.spline.b"))?.clone(),
            )),
            None => None,
        };
        let attn = match &desc.attn {
            Some(ad) => Some((
                *ad,
                params.get(&format!("{p}.attn.w_src"))?.clone(),
                params.get(&format!("{p}.attn.w_tgt"))?.clone(),
                params.get(&format!("{p}.attn.w_edge"))?.clone(),
                params.get(&format!("{p}.attn.a"))?.clone(),
                params.get(&format!("{p}.attn.b"))?.clone(),
            )),
            None => None,
        };
        let fuse = if desc.fused() {
            Some((
                params.get(&format!("{p}.fuse.w1"))?.clone(),
                params.get(&format!("{p}.fuse.b1"))?.clone(),
                params.get(&format!("{p}.fuse.w2"))?.clone(),
                params.get(&format!("{p}.fuse.b2"))?.clone(),
            ))
        } else {
            None
        };
        let norm = EvalNorm::new(
            params.get(&format!("{p}.norm.gamma"))?,
            params.get(&format!("{p}.norm.beta"))?,
            params.get(&format!("{p}.norm.running_mean"))?,
            params.get(&format!("{p}.norm.running_var"))?,
            eps,
        );
        Ok(ResolvedBlock {
            desc: desc.clone(),
            spline,
            attn,
            fuse,
            norm,
        })
    }
}

/// Whole model resolved for the dense path.
#[derive(Debug, Clone)]
pub struct ResolvedModel {
    pub cfg: ModelConfig,
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub blocks: Vec<ResolvedBlock>,
    pub head_block: ResolvedBlock,
    pub cls_w: Tensor,
    pub cls_b: Tensor,
    pub reg_w: Tensor,
    pub reg_b: Tensor,
}

impl ResolvedModel {
    pub fn new(desc: &ModelDesc, params: &ModelParams) -> Result<ResolvedModel> {
        let eps = desc.cfg.bn_eps;
        Ok(ResolvedModel {
            cfg: desc.cfg.clone(),
            embed_w: params.get("embed.w")?.clone(),
            embed_b: params.get("embed.b")?.clone(),
            blocks: desc
                .blocks
                .iter()
                .map(|b| ResolvedBlock::new(b, params, eps))
                .collect::<Result<_>>()?,
            head_block: ResolvedBlock::new(&desc.head_block, params, eps)?,
            cls_w: params.get("head.cls.w")?.clone(),
            cls_b: params.get("head.cls.b")?.clone(),
            reg_w: params.get("head.reg.w")?.clone(),
            reg_b: params.get("head.reg.b")?.clone(),
        })
    }

    /// Embedding of one node feature row: relu(x·W + b).
    pub fn embed_node(&self, x: &[f64], out: &mut [f64]) {
        affine_node(x, &self.embed_w, &self.embed_b, out);
        out.iter_mut().for_each(|v| *v = v.max(0.0));
    }
}

/// Per-node affine: out = x·W + b.
#[inline]
pub fn affine_node(x: &[f64], w: &Tensor, b: &Tensor, out: &mut [f64]) {
    out.copy_from_slice(&b.data);
    for (k, &h) in x.iter().enumerate() {
        if h == 0.0 {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(w.row(k)) {
            *o += h * wv;
        }
    }
}

/// Reusable buffers for per-node block evaluation.
#[derive(Debug, Default, Clone)]
pub struct BlockScratch {
    pub h_s: Vec<f64>,
    pub h_t: Vec<f64>,
    pub cat: Vec<f64>,
    pub hidden: Vec<f64>,
}

/// Forward of one block for one node. `spatial` iterates (source feature,
/// pseudo-coords); `temporal` lists (source feature, attr). The branches
/// may run concurrently in the engine; here they run in sequence.
pub fn block_node_forward<'a>(
    rb: &ResolvedBlock,
    h_self: &[f64],
    spatial: impl Iterator<Item = (&'a [f64], &'a [f64; 3])>,
    temporal: &[(&'a [f64], [f64; 6])],
    out: &mut [f64],
    scratch: &mut BlockScratch,
) {
    let c_out = rb.desc.c_out;
    if let Some((sd, w, root, bias)) = &rb.spline {
        scratch.h_s.resize(c_out, 0.0);
        spline_node_forward(sd, w, root, bias, h_self, spatial, &mut scratch.h_s);
    }
    if let Some((ad, w_src, w_tgt, w_edge, att, bias)) = &rb.attn {
        scratch.h_t.resize(c_out, 0.0);
        attention_node_forward(
            ad, w_src, w_tgt, w_edge, att, bias, h_self, temporal, &mut scratch.h_t,
        );
    }
    match (&rb.fuse, &rb.spline, &rb.attn) {
        (Some((w1, b1, w2, b2)), Some(_), Some(_)) => {
            scratch.cat.resize(2 * c_out, 0.0);
            scratch.cat[..c_out].copy_from_slice(&scratch.h_s);
            scratch.cat[c_out..].copy_from_slice(&scratch.h_t);
            scratch.hidden.resize(w1.cols, 0.0);
            affine_node(&scratch.cat, w1, b1, &mut scratch.hidden);
            scratch.hidden.iter_mut().for_each(|v| *v = v.max(0.0));
            affine_node(&scratch.hidden, w2, b2, out);
        }
        (None, Some(_), None) => out.copy_from_slice(&scratch.h_s),
        (None, None, Some(_)) => out.copy_from_slice(&scratch.h_t),
        _ => unreachable!("block without branches"),
    }
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    rb.norm.apply(out);
}

/// Dense block forward over a whole view.
pub fn block_dense(rb: &ResolvedBlock, view: &GraphView, x: &Tensor) -> Tensor {
    let n = view.n;
    let c_out = rb.desc.c_out;
    let mut out = Tensor::zeros(n, c_out);
    let mut scratch = BlockScratch::default();
    let mut temporal: Vec<(&[f64], [f64; 6])> = Vec::new();
    for row in 0..n {
        temporal.clear();
        for e in view.temporal.edges_of(row) {
            temporal.push((x.row(view.temporal.src[e] as usize), view.temporal.attr[e]));
        }
        let spatial = view
            .spatial
            .edges_of(row)
            .map(|e| (x.row(view.spatial.src[e] as usize), &view.spatial.attr[e]));
        let dst = unsafe {
            // Rows are disjoint; reborrow the row as mutable while x stays shared.
            std::slice::from_raw_parts_mut(out.data.as_mut_ptr().add(row * c_out), c_out)
        };
        block_node_forward(rb, x.row(row), spatial, &temporal, dst, &mut scratch);
    }
    out
}

/// Dense embedding: relu(x·W + b) row by row.
pub fn embed_dense(model: &ResolvedModel, x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.rows, model.embed_w.cols);
    for r in 0..x.rows {
        let dst = &mut out.data[r * model.embed_w.cols..(r + 1) * model.embed_w.cols];
        model.embed_node(x.row(r), dst);
    }
    out
}

/// Concatenation-MLP fusion on full matrices (dense oracle for tests).
pub fn fuse_dense(
    w1: &Tensor,
    b1: &Tensor,
    w2: &Tensor,
    b2: &Tensor,
    h_s: &Tensor,
    h_t: &Tensor,
) -> Tensor {
    assert_eq!(h_s.shape(), h_t.shape());
    let n = h_s.rows;
    let mut out = Tensor::zeros(n, w2.cols);
    let mut cat = vec![0.0; 2 * h_s.cols];
    let mut hidden = vec![0.0; w1.cols];
    for r in 0..n {
        cat[..h_s.cols].copy_from_slice(h_s.row(r));
        cat[h_s.cols..].copy_from_slice(h_t.row(r));
        affine_node(&cat, w1, b1, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));
        let dst = &mut out.data[r * w2.cols..(r + 1) * w2.cols];
        affine_node(&hidden, w2, b2, dst);
    }
    out
}

/// Per-layer branch outputs captured during a dense forward.
#[derive(Debug, Clone, Default)]
pub struct DenseTrace {
    /// (spatial branch, temporal branch, block output) per block,
    /// backbone first, head block last.
    pub blocks: Vec<(Option<Tensor>, Option<Tensor>, Tensor)>,
}

/// Dense backbone forward: embedding then every block, eval-mode
/// normalization. With `trace` the branch outputs are captured.
pub fn backbone_dense(
    model: &ResolvedModel,
    view: &GraphView,
    mut trace: Option<&mut DenseTrace>,
) -> Tensor {
    let mut h = embed_dense(model, &view.x);
    for rb in &model.blocks {
        h = block_dense_traced(rb, view, &h, trace.as_deref_mut());
    }
    h
}

fn block_dense_traced(
    rb: &ResolvedBlock,
    view: &GraphView,
    x: &Tensor,
    trace: Option<&mut DenseTrace>,
) -> Tensor {
    let out = block_dense(rb, view, x);
    if let Some(t) = trace {
        let (h_s, h_t) = branch_outputs(rb, view, x);
        t.blocks.push((h_s, h_t, out.clone()));
    }
    out
}

/// Raw branch outputs of a block (before fusion), for feature export.
pub fn branch_outputs(
    rb: &ResolvedBlock,
    view: &GraphView,
    x: &Tensor,
) -> (Option<Tensor>, Option<Tensor>) {
    let h_s = rb.spline.as_ref().map(|(sd, w, root, bias)| {
        crate::nn::ssl_forward_dense(&view.spatial, x, sd, w, root, bias)
    });
    let h_t = rb.attn.as_ref().map(|(ad, w_src, w_tgt, w_edge, att, bias)| {
        crate::nn::mvl_forward_dense(&view.temporal, x, ad, w_src, w_tgt, w_edge, att, bias)
    });
    (h_s, h_t)
}

/// Head forward on dense features: one block then the class/regression
/// affines. Returns (class logits [N][n+1], regression [N][5]).
pub fn head_dense(model: &ResolvedModel, view: &GraphView, features: &Tensor) -> (Tensor, Tensor) {
    let h = block_dense(&model.head_block, view, features);
    let mut cls = Tensor::zeros(h.rows, model.cls_w.cols);
    let mut reg = Tensor::zeros(h.rows, model.reg_w.cols);
    for r in 0..h.rows {
        let dst = &mut cls.data[r * model.cls_w.cols..(r + 1) * model.cls_w.cols];
        affine_node(h.row(r), &model.cls_w, &model.cls_b, dst);
        let dst = &mut reg.data[r * model.reg_w.cols..(r + 1) * model.reg_w.cols];
        affine_node(h.row(r), &model.reg_w, &model.reg_b, dst);
    }
    (cls, reg)
}

// ---------------------------------------------------------------------------
// Tape (training) path.
// ---------------------------------------------------------------------------

/// Trainable parameters registered as tape leaves, in sorted name order.
pub struct BoundParams {
    pub vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Pushes one leaf per trainable tensor. Call on a fresh tape so the
    /// leaves occupy the first tape slots in sorted order.
    pub fn bind(tape: &mut Tape, params: &ModelParams) -> BoundParams {
        let mut vars = BTreeMap::new();
        for (name, t) in params.iter() {
            if !is_buffer(name) {
                vars.insert(name.clone(), tape.leaf(t.clone()));
            }
        }
        BoundParams { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Validation(format!("unbound parameter `{name}`")))
    }
}

/// Records one block on the tape. Training-mode normalization statistics
/// are appended to `stats_out` keyed by the block's norm prefix.
#[allow(clippy::too_many_arguments)]
pub fn block_tape(
    tape: &mut Tape,
    desc: &BlockDesc,
    cfg: &ModelConfig,
    params: &ModelParams,
    bound: &BoundParams,
    view: &GraphView,
    x: Var,
    phase: Phase,
    stats_out: &mut Vec<(String, BatchStats)>,
) -> Result<Var> {
    let p = &desc.prefix;
    let h_s = match &desc.spline {
        Some(sd) => Some(ssl_forward_tape(
            tape,
            view.spatial.clone(),
            *sd,
            x,
            bound.get(&format!("{p}.spline.w"))?,
            bound.get(&format!("{p}.spline.root"))?,
            bound.get(&format!("{p}.spline.b"))?,
        )),
        None => None,
    };
    let h_t = match &desc.attn {
        Some(ad) => Some(mvl_forward_tape(
            tape,
            view.temporal.clone(),
            *ad,
            x,
            bound.get(&format!("{p}.attn.w_src"))?,
            bound.get(&format!("{p}.attn.w_tgt"))?,
            bound.get(&format!("{p}.attn.w_edge"))?,
            bound.get(&format!("{p}.attn.a"))?,
            bound.get(&format!("{p}.attn.b"))?,
        )),
        None => None,
    };
    let pre = match (h_s, h_t) {
        (Some(a), Some(b)) => {
            let cat = tape.concat_cols(a, b);
            let z1 = tape.affine(
                cat,
                bound.get(&format!("{p}.fuse.w1"))?,
                bound.get(&format!("{p}.fuse.b1"))?,
            );
            let r = tape.relu(z1);
            tape.affine(
                r,
                bound.get(&format!("{p}.fuse.w2"))?,
                bound.get(&format!("{p}.fuse.b2"))?,
            )
        }
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => unreachable!("block without branches"),
    };
    let act = tape.relu(pre);
    let gamma = bound.get(&format!("{p}.norm.gamma"))?;
    let beta = bound.get(&format!("{p}.norm.beta"))?;
    let running = match phase {
        Phase::Train => None,
        Phase::Eval => Some((
            params.get(&format!("{p}.norm.running_mean"))?,
            params.get(&format!("{p}.norm.running_var"))?,
        )),
    };
    let (y, stats) = batchnorm_tape(tape, act, gamma, beta, running, cfg.bn_eps);
    if let Some(s) = stats {
        stats_out.push((format!("{p}.norm"), s));
    }
    Ok(y)
}

/// Records the full backbone on the tape, returning the final features.
pub fn backbone_tape(
    tape: &mut Tape,
    desc: &ModelDesc,
    params: &ModelParams,
    bound: &BoundParams,
    view: &GraphView,
    phase: Phase,
    stats_out: &mut Vec<(String, BatchStats)>,
) -> Result<Var> {
    let x = tape.leaf(view.x.clone());
    let z = tape.affine(x, bound.get("embed.w")?, bound.get("embed.b")?);
    let mut h = tape.relu(z);
    for block in &desc.blocks {
        h = block_tape(
            tape, block, &desc.cfg, params, bound, view, h, phase, stats_out,
        )?;
    }
    Ok(h)
}

/// Records the head on the tape: the head block plus both output affines.
/// Returns (class logits, regression outputs).
#[allow(clippy::too_many_arguments)]
pub fn head_tape(
    tape: &mut Tape,
    desc: &ModelDesc,
    params: &ModelParams,
    bound: &BoundParams,
    view: &GraphView,
    features: Var,
    phase: Phase,
    stats_out: &mut Vec<(String, BatchStats)>,
) -> Result<(Var, Var)> {
    let h = block_tape(
        tape,
        &desc.head_block,
        &desc.cfg,
        params,
        bound,
        view,
        features,
        phase,
        stats_out,
    )?;
    let cls = tape.affine(h, bound.get("head.cls.w")?, bound.get("head.cls.b")?);
    let reg = tape.affine(h, bound.get("head.reg.w")?, bound.get("head.reg.b")?);
    Ok((cls, reg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Event, EventStream, SensorGeometry};
    use crate::graph::{build_graph, GraphConfig};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::desk(2);
        cfg.channels = vec![8, 8];
        cfg.embed_dim = 8;
        cfg.head_dim = 8;
        cfg.backbone_grid = (3, 3, 1);
        cfg.head_grid = (2, 2, 1);
        cfg.backbone_heads = 2;
        cfg
    }

    fn small_view(seed: u64, n: usize) -> GraphView {
        let geom = SensorGeometry::new(304, 240).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = 0i64;
        let events: Vec<Event> = (0..n)
            .map(|_| {
                t += rng.random_range(50..2_000);
                Event::new(
                    t,
                    rng.random_range(100..140),
                    rng.random_range(100..140),
                    if rng.random_bool(0.5) { 1 } else { -1 },
                )
            })
            .collect();
        let stream = EventStream::new(events, geom).unwrap();
        let g = build_graph(&stream, &GraphConfig::default()).unwrap();
        GraphView::from_graph(&g).unwrap()
    }

    #[test]
    fn embed_identity_padding_reproduces_activation() {
        let cfg = tiny_cfg();
        let desc = ModelDesc::new(&cfg).unwrap();
        let mut params = ModelParams::init(&cfg, 0).unwrap();
        // Identity-padded embedding weights.
        let mut w = Tensor::zeros(4, cfg.embed_dim);
        for i in 0..4 {
            w.row_mut(i)[i] = 1.0;
        }
        params.insert("embed.w", w);
        params.insert("embed.b", Tensor::zeros(1, cfg.embed_dim));
        let model = ResolvedModel::new(&desc, &params).unwrap();
        let x = Tensor::from_vec(1, 4, vec![0.5, -0.25, 1.0, -1.0]);
        let out = embed_dense(&model, &x);
        assert_eq!(&out.row(0)[..4], &[0.5, 0.0, 1.0, 0.0]);
        assert!(out.row(0)[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_embed_weights_give_zero_output() {
        let cfg = tiny_cfg();
        let desc = ModelDesc::new(&cfg).unwrap();
        let mut params = ModelParams::init(&cfg, 0).unwrap();
        params.insert("embed.w", Tensor::zeros(4, cfg.embed_dim));
        params.insert("embed.b", Tensor::zeros(1, cfg.embed_dim));
        let model = ResolvedModel::new(&desc, &params).unwrap();
        let x = Tensor::from_vec(2, 4, vec![0.5, -0.25, 1.0, -1.0, 0.1, 0.2, 0.3, 0.4]);
        let out = embed_dense(&model, &x);
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fuse_zero_inputs_follow_bias_propagation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = 4;
        let hidden = 6;
        let w1 = Tensor::from_vec(
            2 * c,
            hidden,
            (0..2 * c * hidden).map(|_| rng.random_range(-0.5..0.5)).collect(),
        );
        let b1 = Tensor::from_vec(1, hidden, (0..hidden).map(|_| rng.random_range(-0.5..0.5)).collect());
        let w2 = Tensor::from_vec(
            hidden,
            c,
            (0..hidden * c).map(|_| rng.random_range(-0.5..0.5)).collect(),
        );
        let b2 = Tensor::from_vec(1, c, (0..c).map(|_| rng.random_range(-0.5..0.5)).collect());
        let zeros = Tensor::zeros(3, c);
        let out = fuse_dense(&w1, &b1, &w2, &b2, &zeros, &zeros);
        // Closed form: relu(b1)·w2 + b2 per row.
        let mut hidden_v = b1.clone();
        hidden_v.data.iter_mut().for_each(|v| *v = v.max(0.0));
        let expect = {
            let mut e = hidden_v.matmul(&w2);
            for (v, &b) in e.row_mut(0).iter_mut().zip(&b2.data) {
                *v += b;
            }
            e
        };
        for r in 0..3 {
            for c in 0..expect.cols {
                assert!((out.at(r, c) - expect.at(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fuse_is_order_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = 3;
        let randt = |rng: &mut ChaCha8Rng, r: usize, co: usize| {
            Tensor::from_vec(r, co, (0..r * co).map(|_| rng.random_range(-1.0..1.0)).collect())
        };
        let w1 = randt(&mut rng, 2 * c, 4);
        let b1 = randt(&mut rng, 1, 4);
        let w2 = randt(&mut rng, 4, c);
        let b2 = randt(&mut rng, 1, c);
        let a = randt(&mut rng, 2, c);
        let b = randt(&mut rng, 2, c);
        let ab = fuse_dense(&w1, &b1, &w2, &b2, &a, &b);
        let ba = fuse_dense(&w1, &b1, &w2, &b2, &b, &a);
        assert_ne!(ab, ba);
    }

    #[test]
    fn fuse_matches_tape_affine_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = 3;
        let randt = |rng: &mut ChaCha8Rng, r: usize, co: usize| {
            Tensor::from_vec(r, co, (0..r * co).map(|_| rng.random_range(-1.0..1.0)).collect())
        };
        let w1 = randt(&mut rng, 2 * c, 5);
        let b1 = randt(&mut rng, 1, 5);
        let w2 = randt(&mut rng, 5, c);
        let b2 = randt(&mut rng, 1, c);
        let hs = randt(&mut rng, 4, c);
        let ht = randt(&mut rng, 4, c);
        let dense = fuse_dense(&w1, &b1, &w2, &b2, &hs, &ht);
        let mut tape = Tape::new();
        let a = tape.leaf(hs.clone());
        let b = tape.leaf(ht.clone());
        let cat = tape.concat_cols(a, b);
        let w1v = tape.leaf(w1.clone());
        let b1v = tape.leaf(b1.clone());
        let z1 = tape.affine(cat, w1v, b1v);
        let r = tape.relu(z1);
        let w2v = tape.leaf(w2.clone());
        let b2v = tape.leaf(b2.clone());
        let z2 = tape.affine(r, w2v, b2v);
        let got = tape.value(z2);
        for (x, y) in dense.data.iter().zip(&got.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn backbone_tape_eval_matches_dense_path() {
        let cfg = tiny_cfg();
        let desc = ModelDesc::new(&cfg).unwrap();
        let params = ModelParams::init(&cfg, 5).unwrap();
        let view = small_view(7, 40);
        let model = ResolvedModel::new(&desc, &params).unwrap();
        let dense = backbone_dense(&model, &view, None);

        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &params);
        let mut stats = Vec::new();
        let h = backbone_tape(&mut tape, &desc, &params, &bound, &view, Phase::Eval, &mut stats)
            .unwrap();
        assert!(stats.is_empty());
        let taped = tape.value(h);
        assert_eq!(taped.shape(), dense.shape());
        for (a, b) in taped.data.iter().zip(&dense.data) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn backbone_handles_empty_and_single_node_graphs() {
        let cfg = tiny_cfg();
        let desc = ModelDesc::new(&cfg).unwrap();
        let params = ModelParams::init(&cfg, 5).unwrap();
        let model = ResolvedModel::new(&desc, &params).unwrap();

        let geom = SensorGeometry::new(304, 240).unwrap();
        let empty = EventStream::new(vec![], geom).unwrap();
        let g = build_graph(&empty, &GraphConfig::default()).unwrap();
        let view = GraphView::from_graph(&g).unwrap();
        let out = backbone_dense(&model, &view, None);
        assert_eq!(out.shape(), (0, 8));

        let single = EventStream::new(vec![Event::new(0, 5, 5, 1)], geom).unwrap();
        let g = build_graph(&single, &GraphConfig::default()).unwrap();
        let view = GraphView::from_graph(&g).unwrap();
        let out = backbone_dense(&model, &view, None);
        assert_eq!(out.shape(), (1, 8));
        assert!(out.is_finite());
    }

    #[test]
    fn default_stack_produces_configured_widths() {
        let cfg = ModelConfig::new(2);
        let desc = ModelDesc::new(&cfg).unwrap();
        let params = ModelParams::init(&cfg, 1).unwrap();
        let model = ResolvedModel::new(&desc, &params).unwrap();
        let view = small_view(3, 12);
        let mut h = embed_dense(&model, &view.x);
        assert_eq!(h.cols, 16);
        for (rb, &width) in model.blocks.iter().zip(&cfg.channels) {
            h = block_dense(rb, &view, &h);
            assert_eq!(h.cols, width, "block output width");
            assert!(h.is_finite());
        }
        assert_eq!(h.cols, 128);
        let head = block_dense(&model.head_block, &view, &h);
        assert_eq!(head.cols, cfg.head_dim);
    }

    #[test]
    fn forward_is_deterministic_across_runs() {
        let cfg = tiny_cfg();
        let desc = ModelDesc::new(&cfg).unwrap();
        let params = ModelParams::init(&cfg, 9).unwrap();
        let view = small_view(11, 60);
        let model = ResolvedModel::new(&desc, &params).unwrap();
        let a = backbone_dense(&model, &view, None);
        let b = backbone_dense(&model, &view, None);
        assert_eq!(a, b, "forward must be bitwise deterministic");
    }

    #[test]
    fn save_load_forward_is_bitwise_identical() {
        let cfg = tiny_cfg();
        let desc = ModelDesc::new(&cfg).unwrap();
        let params = ModelParams::init(&cfg, 13).unwrap();
        let view = small_view(17, 50);
        let model = ResolvedModel::new(&desc, &params).unwrap();
        let before = backbone_dense(&model, &view, None);
        let reloaded = ModelParams::from_bytes(&params.to_bytes()).unwrap();
        let model2 = ResolvedModel::new(&desc, &reloaded).unwrap();
        let after = backbone_dense(&model2, &view, None);
        assert_eq!(before, after);
    }

    #[test]
    fn full_block_gradients_pass_fd_check() {
        // One fused block in eval-normalization mode, loss = mean of squares;
        // checks propagation through spline, attention, and fusion at once.
        let cfg = tiny_cfg();
        let desc = ModelDesc::new(&cfg).unwrap();
        let params = ModelParams::init(&cfg, 21).unwrap();
        let view = small_view(23, 25);
        let names = params.trainable_names();
        let inputs: Vec<Tensor> = names.iter().map(|n| params.get(n).unwrap().clone()).collect();
        let err = crate::tape::grad_check(
            &|ins| {
                let mut p2 = params.clone();
                for (name, t) in names.iter().zip(ins) {
                    p2.insert(name.clone(), t.clone());
                }
                let mut tape = Tape::new();
                let bound = BoundParams::bind(&mut tape, &p2);
                let mut stats = Vec::new();
                let h = backbone_tape(&mut tape, &desc, &p2, &bound, &view, Phase::Eval, &mut stats)
                    .unwrap();
                let sq = tape.square(h);
                let loss = tape.mean_all(sq);
                (tape, loss)
            },
            &inputs,
            1e-4,
            4,
        );
        assert!(err < 1e-4, "backbone grad error {err}");
    }

    #[test]
    fn every_parameter_receives_finite_gradient() {
        let cfg = tiny_cfg();
        let desc = ModelDesc::new(&cfg).unwrap();
        let params = ModelParams::init(&cfg, 31).unwrap();
        let view = small_view(37, 60);
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &params);
        let mut stats = Vec::new();
        let h = backbone_tape(&mut tape, &desc, &params, &bound, &view, Phase::Train, &mut stats)
            .unwrap();
        let (cls, reg) = head_tape(
            &mut tape, &desc, &params, &bound, &view, h, Phase::Train, &mut stats,
        )
        .unwrap();
        let a = tape.square(cls);
        let b = tape.square(reg);
        let sa = tape.mean_all(a);
        let sb = tape.mean_all(b);
        let loss = tape.add(sa, sb);
        let grads = tape.backward(loss);
        for (name, var) in &bound.vars {
            let g = grads
                .get(*var)
                .unwrap_or_else(|| panic!("no gradient for {name}"));
            assert!(g.is_finite(), "{name} has non-finite gradient");
        }
        assert!(!stats.is_empty());
    }
}
