//! Model configuration, parameters, checkpoints, and the network forward.

mod attention;
mod model;
mod norm;
mod spline;

pub use attention::{
    attention_edge_flops, attention_logit, attention_node_forward, mvl_forward_dense,
    mvl_forward_tape, strip_motion_features, AttentionDesc,
};
pub use model::{
    affine_node, backbone_dense, backbone_tape, block_dense, block_node_forward, block_tape,
    branch_outputs, embed_dense, fuse_dense, head_dense, head_tape, BlockDesc, BlockScratch,
    BoundParams, DenseTrace, ModelDesc, Phase, ResolvedBlock, ResolvedModel,
};
pub use norm::{batchnorm_eval_dense, batchnorm_tape, BatchStats, EvalNorm};
pub use spline::{
    basis, count_kernel_params, edge_basis, edge_message, spline_edge_flops, spline_node_forward,
    ssl_forward_dense, ssl_forward_tape, SplineDesc,
};

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{MultiGraph, NodeId};
use crate::tape::Tensor;

/// Which spatial aggregation backs the structural branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialKernelKind {
    /// Anisotropic spline kernel, depth 1 along time.
    Spline2d,
    /// Isotropic spline kernel with full temporal depth.
    Spline3d,
    /// Plain linear aggregation (no spline basis).
    Gcn,
}

/// How the temporal branch weighs its neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalAggKind {
    MultiHead,
    SingleHead,
    Uniform,
}

/// Network architecture switches. The default mirrors the full model:
/// a 4→16 embedding, eight blocks widening to 128 channels, an (8,8,1)
/// spline grid with 4 attention heads in the backbone, and a (5,5,1)
/// grid with 1 head reducing to 64 channels in the detection head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub embed_dim: usize,
    pub channels: Vec<usize>,
    pub backbone_grid: (usize, usize, usize),
    pub backbone_heads: usize,
    pub head_grid: (usize, usize, usize),
    pub head_heads: usize,
    pub head_dim: usize,
    /// Hidden width of the fusion MLP as a multiple of the block width.
    pub fusion_hidden_mult: usize,
    pub use_ssl: bool,
    pub use_mvl: bool,
    pub spatial_kernel: SpatialKernelKind,
    pub temporal_agg: TemporalAggKind,
    /// When false the velocity and polarity-change edge components are
    /// zeroed before entering the attention.
    pub motion_features: bool,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub leaky_slope: f64,
}

impl ModelConfig {
    pub fn new(num_classes: usize) -> Self {
        ModelConfig {
            num_classes,
            embed_dim: 16,
            channels: vec![16, 16, 32, 32, 64, 64, 128, 128],
            backbone_grid: (8, 8, 1),
            backbone_heads: 4,
            head_grid: (5, 5, 1),
            head_heads: 1,
            head_dim: 64,
            fusion_hidden_mult: 16,
            use_ssl: true,
            use_mvl: true,
            spatial_kernel: SpatialKernelKind::Spline2d,
            temporal_agg: TemporalAggKind::MultiHead,
            motion_features: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            leaky_slope: 0.2,
        }
    }

    /// Small configuration for laptop-scale training and benchmarks.
    pub fn desk(num_classes: usize) -> Self {
        ModelConfig {
            channels: vec![16, 32],
            head_dim: 32,
            fusion_hidden_mult: 2,
            ..ModelConfig::new(num_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Validation("channels must be non-empty".into()));
        }
        if self.embed_dim == 0 || self.head_dim == 0 || self.num_classes == 0 {
            return Err(Error::Validation("widths and class count must be positive".into()));
        }
        if !self.use_ssl && !self.use_mvl {
            return Err(Error::Validation(
                "at least one of the spatial and temporal branches must be enabled".into(),
            ));
        }
        for (i, &c) in self.channels.iter().enumerate() {
            if self.use_mvl && c % self.effective_heads() != 0 {
                return Err(Error::Validation(format!(
                    "channel width {c} of block {i} not divisible by {} heads",
                    self.effective_heads()
                )));
            }
        }
        if self.use_mvl && self.head_dim % self.head_heads != 0 {
            return Err(Error::Validation("head width not divisible by head count".into()));
        }
        Ok(())
    }

    pub fn effective_heads(&self) -> usize {
        match self.temporal_agg {
            TemporalAggKind::SingleHead => 1,
            _ => self.backbone_heads,
        }
    }

    /// Grid actually used by the backbone spatial branch.
    pub fn effective_backbone_grid(&self) -> (usize, usize, usize) {
        match self.spatial_kernel {
            SpatialKernelKind::Spline2d => self.backbone_grid,
            SpatialKernelKind::Spline3d => {
                let k = self.backbone_grid.0;
                (k, k, k)
            }
            SpatialKernelKind::Gcn => (1, 1, 1),
        }
    }

    /// Serializes as `key = value` lines.
    pub fn to_text(&self) -> String {
        let (bg0, bg1, bg2) = self.backbone_grid;
        let (hg0, hg1, hg2) = self.head_grid;
        let channels = self
            .channels
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "num_classes = {}\nembed_dim = {}\nchannels = {}\nbackbone_grid = {},{},{}\nbackbone_heads = {}\nhead_grid = {},{},{}\nhead_heads = {}\nhead_dim = {}\nfusion_hidden_mult = {}\nuse_ssl = {}\nuse_mvl = {}\nspatial_kernel = {}\ntemporal_agg = {}\nmotion_features = {}\nbn_eps = {}\nbn_momentum = {}\nleaky_slope = {}\n",
            self.num_classes,
            self.embed_dim,
            channels,
            bg0, bg1, bg2,
            self.backbone_heads,
            hg0, hg1, hg2,
            self.head_heads,
            self.head_dim,
            self.fusion_hidden_mult,
            self.use_ssl,
            self.use_mvl,
            match self.spatial_kernel {
                SpatialKernelKind::Spline2d => "spline2d",
                SpatialKernelKind::Spline3d => "spline3d",
                SpatialKernelKind::Gcn => "gcn",
            },
            match self.temporal_agg {
                TemporalAggKind::MultiHead => "attention",
                TemporalAggKind::SingleHead => "single-head",
                TemporalAggKind::Uniform => "uniform",
            },
            self.motion_features,
            self.bn_eps,
            self.bn_momentum,
            self.leaky_slope,
        )
    }

    /// Parses the `key = value` format written by [`ModelConfig::to_text`].
    /// Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::new(1);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(lineno + 1, "expected `key = value`"))?;
            cfg.set_key(key.trim(), value.trim())
                .map_err(|e| Error::parse(lineno + 1, e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` override.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Validation(format!("invalid {what} `{value}`"));
        let parse_grid = |v: &str| -> Result<(usize, usize, usize)> {
            let parts: Vec<usize> = v
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("grid"))?;
            if parts.len() != 3 {
                return Err(bad("grid"));
            }
            Ok((parts[0], parts[1], parts[2]))
        };
        match key {
            "num_classes" => self.num_classes = value.parse().map_err(|_| bad(key))?,
            "embed_dim" => self.embed_dim = value.parse().map_err(|_| bad(key))?,
            "channels" => {
                self.channels = value
                    .split(',')
                    .map(|s| s.trim().parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(key))?
            }
            "backbone_grid" => self.backbone_grid = parse_grid(value)?,
            "backbone_heads" => self.backbone_heads = value.parse().map_err(|_| bad(key))?,
            "head_grid" => self.head_grid = parse_grid(value)?,
            "head_heads" => self.head_heads = value.parse().map_err(|_| bad(key))?,
            "head_dim" => self.head_dim = value.parse().map_err(|_| bad(key))?,
            "fusion_hidden_mult" => {
                self.fusion_hidden_mult = value.parse().map_err(|_| bad(key))?
            }
            "use_ssl" => self.use_ssl = value.parse().map_err(|_| bad(key))?,
            "use_mvl" => self.use_mvl = value.parse().map_err(|_| bad(key))?,
            "spatial_kernel" => {
                self.spatial_kernel = match value {
                    "spline2d" => SpatialKernelKind::Spline2d,
                    "spline3d" => SpatialKernelKind::Spline3d,
                    "gcn" => SpatialKernelKind::Gcn,
                    _ => return Err(bad(key)),
                }
            }
            "temporal_agg" => {
                self.temporal_agg = match value {
                    "attention" => TemporalAggKind::MultiHead,
                    "single-head" => TemporalAggKind::SingleHead,
                    "uniform" => TemporalAggKind::Uniform,
                    _ => return Err(bad(key)),
                }
            }
            "motion_features" => self.motion_features = value.parse().map_err(|_| bad(key))?,
            "bn_eps" => self.bn_eps = value.parse().map_err(|_| bad(key))?,
            "bn_momentum" => self.bn_momentum = value.parse().map_err(|_| bad(key))?,
            "leaky_slope" => self.leaky_slope = value.parse().map_err(|_| bad(key))?,
            other => return Err(Error::Validation(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }
}

/// Named parameter tensors plus normalization buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

/// Buffers carry state, not trainable weights.
pub fn is_buffer(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EGSM";
pub const CHECKPOINT_VERSION: u32 = 1;

impl ModelParams {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Validation(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Validation(format!("missing parameter `{name}`")))
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    /// Trainable parameter names in sorted order.
    pub fn trainable_names(&self) -> Vec<String> {
        self.tensors
            .keys()
            .filter(|n| !is_buffer(n))
            .cloned()
            .collect()
    }

    /// Total element count over trainable tensors.
    pub fn param_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|(n, _)| !is_buffer(n))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Fresh parameters for a configuration, deterministic per seed.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::default();

        let glorot = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::from_vec(rows, cols, data)
        };
        let uniform = |rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64| {
            let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::from_vec(rows, cols, data)
        };

        p.insert("embed.w", glorot(&mut rng, 4, cfg.embed_dim));
        p.insert("embed.b", Tensor::zeros(1, cfg.embed_dim));

        let init_block = |rng: &mut ChaCha8Rng,
                              p: &mut ModelParams,
                              prefix: &str,
                              c_in: usize,
                              c_out: usize,
                              grid: (usize, usize, usize),
                              heads: usize| {
            if cfg.use_ssl {
                let k = grid.0 * grid.1 * grid.2;
                let bound = 1.0 / (c_in as f64).sqrt();
                p.insert(format!("{prefix}.spline.w"), uniform(rng, k * c_in, c_out, bound));
                p.insert(format!("{prefix}.spline.root"), uniform(rng, c_in, c_out, bound));
                p.insert(format!("{prefix}.spline.b"), Tensor::zeros(1, c_out));
            }
            if cfg.use_mvl {
                let c_h = c_out / heads;
                p.insert(format!("{prefix}.attn.w_src"), glorot(rng, c_in, c_out));
                p.insert(format!("{prefix}.attn.w_tgt"), glorot(rng, c_in, c_out));
                p.insert(format!("{prefix}.attn.w_edge"), glorot(rng, 6, c_out));
                p.insert(
                    format!("{prefix}.attn.a"),
                    uniform(rng, heads, c_h, 1.0 / (c_h as f64).sqrt()),
                );
                p.insert(format!("{prefix}.attn.b"), Tensor::zeros(1, c_out));
            }
            if cfg.use_ssl && cfg.use_mvl {
                let hidden = cfg.fusion_hidden_mult * c_out;
                p.insert(format!("{prefix}.fuse.w1"), glorot(rng, 2 * c_out, hidden));
                p.insert(format!("{prefix}.fuse.b1"), Tensor::zeros(1, hidden));
                p.insert(format!("{prefix}.fuse.w2"), glorot(rng, hidden, c_out));
                p.insert(format!("{prefix}.fuse.b2"), Tensor::zeros(1, c_out));
            }
            p.insert(format!("{prefix}.norm.gamma"), Tensor::filled(1, c_out, 1.0));
            p.insert(format!("{prefix}.norm.beta"), Tensor::zeros(1, c_out));
            p.insert(format!("{prefix}.norm.running_mean"), Tensor::zeros(1, c_out));
            p.insert(format!("{prefix}.norm.running_var"), Tensor::filled(1, c_out, 1.0));
        };

        let grid = cfg.effective_backbone_grid();
        let heads = cfg.effective_heads();
        let mut c_in = cfg.embed_dim;
        for (i, &c_out) in cfg.channels.iter().enumerate() {
            init_block(&mut rng, &mut p, &format!("block{i}"), c_in, c_out, grid, heads);
            c_in = c_out;
        }
        init_block(
            &mut rng,
            &mut p,
            "head.block",
            c_in,
            cfg.head_dim,
            cfg.head_grid,
            cfg.head_heads,
        );
        p.insert("head.cls.w", glorot(&mut rng, cfg.head_dim, cfg.num_classes + 1));
        p.insert("head.cls.b", Tensor::zeros(1, cfg.num_classes + 1));
        p.insert("head.reg.w", glorot(&mut rng, cfg.head_dim, 5));
        p.insert("head.reg.b", Tensor::zeros(1, 5));
        Ok(p)
    }

    /// Binary checkpoint: magic `EGSM`, u32 version, u32 tensor count,
    /// then per tensor a u16 name length, the UTF-8 name, u8 rank, u32
    /// dims, and little-endian f64 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(2u8);
            out.extend_from_slice(&(t.rows as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols as u32).to_le_bytes());
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::Validation("checkpoint truncated".into()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != CHECKPOINT_MAGIC {
            return Err(Error::Validation("bad checkpoint magic; expected EGSM".into()));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        let mut p = ModelParams::default();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| Error::Validation("checkpoint tensor name not UTF-8".into()))?;
            let rank = take(&mut pos, 1)?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
            }
            let numel: usize = dims.iter().product();
            let (rows, cols) = match rank {
                0 => (1, 1),
                1 => (1, dims[0]),
                2 => (dims[0], dims[1]),
                _ => {
                    let rows: usize = dims[..rank - 1].iter().product();
                    (rows, dims[rank - 1])
                }
            };
            let raw = take(&mut pos, numel * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            p.insert(name, Tensor::from_vec(rows, cols, data));
        }
        if pos != bytes.len() {
            return Err(Error::Validation("trailing bytes after checkpoint".into()));
        }
        Ok(p)
    }
}

// ---------------------------------------------------------------------------
// Graph view: CSR edge lists over dense row indices.
// ---------------------------------------------------------------------------

/// Spatial in-edges in CSR form over row indices.
#[derive(Debug, Clone, Default)]
pub struct SpatialCsr {
    pub offsets: Vec<u32>,
    pub src: Vec<u32>,
    pub attr: Vec<[f64; 3]>,
}

/// Temporal in-edges in CSR form over row indices.
#[derive(Debug, Clone, Default)]
pub struct TemporalCsr {
    pub offsets: Vec<u32>,
    pub src: Vec<u32>,
    pub attr: Vec<[f64; 6]>,
}

impl SpatialCsr {
    #[inline]
    pub fn edges_of(&self, row: usize) -> std::ops::Range<usize> {
        self.offsets[row] as usize..self.offsets[row + 1] as usize
    }

    pub fn n(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }
}

impl TemporalCsr {
    #[inline]
    pub fn edges_of(&self, row: usize) -> std::ops::Range<usize> {
        self.offsets[row] as usize..self.offsets[row + 1] as usize
    }

    pub fn n(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }
}

/// Dense snapshot of a graph for batched forwards: input features plus
/// both CSR edge sets, rows in insertion order.
#[derive(Debug, Clone)]
pub struct GraphView {
    pub n: usize,
    pub x: Tensor,
    pub spatial: Rc<SpatialCsr>,
    pub temporal: Rc<TemporalCsr>,
    /// Row index of each live node id.
    pub row_of: Vec<Option<u32>>,
    /// Node id of each row.
    pub ids: Vec<NodeId>,
    /// Raw (x, y, t) per row, for the detection head.
    pub pos: Vec<(u16, u16, i64)>,
}

impl GraphView {
    pub fn from_graph(g: &MultiGraph) -> Result<GraphView> {
        let ids: Vec<NodeId> = g.live_ids().collect();
        let mut row_of = vec![None; g.num_slots()];
        for (row, &id) in ids.iter().enumerate() {
            if g.is_boundary(id) {
                return Err(Error::Validation(
                    "graph has boundary nodes after eviction; dense view unavailable".into(),
                ));
            }
            row_of[id as usize] = Some(row as u32);
        }
        let n = ids.len();
        let mut x = Tensor::zeros(n, 4);
        let mut spatial = SpatialCsr {
            offsets: Vec::with_capacity(n + 1),
            ..Default::default()
        };
        let mut temporal = TemporalCsr {
            offsets: Vec::with_capacity(n + 1),
            ..Default::default()
        };
        spatial.offsets.push(0);
        temporal.offsets.push(0);
        let mut pos = Vec::with_capacity(n);
        for (row, &id) in ids.iter().enumerate() {
            let node = g.node(id);
            pos.push((node.x, node.y, node.t));
            x.row_mut(row).copy_from_slice(&g.node(id).feature.0);
            for e in g.spatial_in(id) {
                let src = row_of[e.src as usize]
                    .ok_or_else(|| Error::Validation("edge to evicted node".into()))?;
                spatial.src.push(src);
                spatial.attr.push(e.attr);
            }
            spatial.offsets.push(spatial.src.len() as u32);
            for e in g.temporal_in(id) {
                let src = row_of[e.src as usize]
                    .ok_or_else(|| Error::Validation("edge to evicted node".into()))?;
                temporal.src.push(src);
                temporal.attr.push(e.attr);
            }
            temporal.offsets.push(temporal.src.len() as u32);
        }
        Ok(GraphView {
            n,
            x,
            spatial: Rc::new(spatial),
            temporal: Rc::new(temporal),
            row_of,
            ids,
            pos,
        })
    }

    /// Disjoint union of several views (for batched training).
    pub fn merge(views: &[GraphView]) -> GraphView {
        let n: usize = views.iter().map(|v| v.n).sum();
        let mut x = Tensor::zeros(n, 4);
        let mut spatial = SpatialCsr::default();
        let mut temporal = TemporalCsr::default();
        spatial.offsets.push(0);
        temporal.offsets.push(0);
        let mut base = 0u32;
        let mut ids = Vec::with_capacity(n);
        let mut pos = Vec::with_capacity(n);
        for v in views {
            for row in 0..v.n {
                x.row_mut(base as usize + row).copy_from_slice(v.x.row(row));
                pos.push(v.pos[row]);
                for e in v.spatial.edges_of(row) {
                    spatial.src.push(base + v.spatial.src[e]);
                    spatial.attr.push(v.spatial.attr[e]);
                }
                spatial.offsets.push(spatial.src.len() as u32);
                for e in v.temporal.edges_of(row) {
                    temporal.src.push(base + v.temporal.src[e]);
                    temporal.attr.push(v.temporal.attr[e]);
                }
                temporal.offsets.push(temporal.src.len() as u32);
                ids.push(base + row as u32);
            }
            base += v.n as u32;
        }
        GraphView {
            n,
            x,
            spatial: Rc::new(spatial),
            temporal: Rc::new(temporal),
            row_of: ids.iter().map(|&i| Some(i)).collect(),
            ids,
            pos,
        }
    }
}
