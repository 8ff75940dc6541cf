//! Per-event incremental inference.
//!
//! Because a node's neighborhoods freeze at insertion and messages flow
//! from the past to the present, inserting an event can only change the
//! activations of a bounded influence cone — under the causal edge
//! convention, just the new node itself at every layer. The engine caches
//! per-layer activations for every live node, recomputes only the
//! affected sets when an event arrives, and reuses everything else. A
//! dense recompute over the same graph is the correctness oracle: layer
//! caches must match it exactly.
//!
//! The spatial and temporal branches of a block read disjoint state, so
//! the engine can evaluate them serially or in parallel per node; both
//! orders produce identical results.

use std::time::Instant;

use rayon::join;

use crate::detect::NodePrediction;
use crate::error::{Error, Result};
use crate::events::{Event, SensorGeometry};
use crate::graph::{GraphConfig, MultiGraph, NodeId};
use crate::nn::{
    affine_node, attention_edge_flops, attention_node_forward, spline_edge_flops,
    spline_node_forward, BlockScratch, ModelDesc, ModelParams, ResolvedBlock, ResolvedModel,
};

/// Which way influence propagates when computing affected sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfluenceDirection {
    /// Causal: a node influences the nodes that consume its messages
    /// (nodes inserted later). The default.
    PastToPresent,
    /// The printed-inequality alternative: influence follows in-edges
    /// back to message sources. Conservative but equivalent.
    PresentToPast,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub parallel_branches: bool,
    pub influence: InfluenceDirection,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            parallel_branches: false,
            influence: InfluenceDirection::PastToPresent,
        }
    }
}

/// Node sets whose activation changes per layer, `A_0..A_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffectedSets {
    pub per_layer: Vec<Vec<NodeId>>,
}

impl AffectedSets {
    pub fn total_pairs(&self) -> u64 {
        self.per_layer.iter().map(|s| s.len() as u64).sum()
    }
}

/// Generic influence cone: `A_0 = {seed}`,
/// `A_{l+1} = A_l ∪ expand(A_l)`, for `depth` message layers.
pub fn influence_cone(
    seed: NodeId,
    depth: usize,
    expand: impl Fn(NodeId) -> Vec<NodeId>,
) -> AffectedSets {
    let mut per_layer = Vec::with_capacity(depth + 1);
    let mut current = vec![seed];
    per_layer.push(current.clone());
    for _ in 0..depth {
        let mut next = current.clone();
        for &n in &current {
            next.extend(expand(n));
        }
        next.sort_unstable();
        next.dedup();
        per_layer.push(next.clone());
        current = next;
    }
    AffectedSets { per_layer }
}

/// Per-layer activation rows, indexed by node id. Row `0` holds the
/// embedding; rows `1..=B` the fusion blocks; the last row the head block.
#[derive(Debug, Clone, Default)]
pub struct LayerCache {
    layers: Vec<Vec<Option<Box<[f64]>>>>,
    revision: u64,
}

impl LayerCache {
    fn new(num_layers: usize) -> Self {
        LayerCache {
            layers: vec![Vec::new(); num_layers],
            revision: 0,
        }
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn get(&self, layer: usize, id: NodeId) -> Option<&[f64]> {
        self.layers[layer]
            .get(id as usize)
            .and_then(|r| r.as_deref())
    }

    fn put(&mut self, layer: usize, id: NodeId, row: Vec<f64>) {
        let slot = id as usize;
        let lane = &mut self.layers[layer];
        if lane.len() <= slot {
            lane.resize_with(slot + 1, || None);
        }
        lane[slot] = Some(row.into_boxed_slice());
    }

    fn drop_node(&mut self, id: NodeId) {
        for lane in &mut self.layers {
            if let Some(slot) = lane.get_mut(id as usize) {
                *slot = None;
            }
        }
    }

    /// Total retained activation rows.
    pub fn rows(&self) -> usize {
        self.layers
            .iter()
            .map(|lane| lane.iter().filter(|r| r.is_some()).count())
            .sum()
    }
}

/// Streaming inference engine over one growing graph.
pub struct AsyncEngine {
    graph: MultiGraph,
    model: ResolvedModel,
    layers: Vec<ResolvedBlock>,
    cache: LayerCache,
    cfg: EngineConfig,
    /// Reverse adjacency: per node, the nodes consuming its messages.
    consumers: Vec<Vec<NodeId>>,
    /// Instrumented count of recomputed (node, layer) pairs.
    pub recomputed_pairs: u64,
}

/// Result of inserting one event.
#[derive(Debug, Clone)]
pub struct InsertReport {
    pub node: NodeId,
    pub affected: AffectedSets,
    pub recomputed_pairs: u64,
    pub predictions: Vec<NodePrediction>,
}

impl AsyncEngine {
    /// Engine over an empty graph anchored at `t_origin`.
    pub fn new(
        graph_cfg: GraphConfig,
        geometry: SensorGeometry,
        t_origin: i64,
        desc: &ModelDesc,
        params: &ModelParams,
        cfg: EngineConfig,
    ) -> Result<AsyncEngine> {
        let graph = MultiGraph::new(graph_cfg, geometry, t_origin)?;
        Self::attach(graph, desc, params, cfg)
    }

    /// Engine over an existing graph; the cache is built by a full dense
    /// recompute in insertion order.
    pub fn attach(
        graph: MultiGraph,
        desc: &ModelDesc,
        params: &ModelParams,
        cfg: EngineConfig,
    ) -> Result<AsyncEngine> {
        let model = ResolvedModel::new(desc, params)?;
        let mut layers = model.blocks.clone();
        layers.push(model.head_block.clone());
        let num_layers = layers.len() + 1;
        let mut consumers = vec![Vec::new(); graph.num_slots()];
        for id in graph.live_ids() {
            for e in graph.spatial_in(id) {
                consumers[e.src as usize].push(id);
            }
            for e in graph.temporal_in(id) {
                consumers[e.src as usize].push(id);
            }
        }
        for c in &mut consumers {
            c.sort_unstable();
            c.dedup();
        }
        let mut engine = AsyncEngine {
            graph,
            model,
            layers,
            cache: LayerCache::new(num_layers),
            cfg,
            consumers,
            recomputed_pairs: 0,
        };
        let ids: Vec<NodeId> = engine.graph.live_ids().collect();
        for id in ids {
            if engine.graph.is_boundary(id) {
                return Err(Error::Validation(
                    "cannot attach to a graph with boundary nodes and no cache".into(),
                ));
            }
            engine.recompute_node_all_layers(id);
        }
        engine.cache.revision = engine.graph.revision();
        Ok(engine)
    }

    /// Resumes from a previously built cache; the revisions must match.
    pub fn resume(
        graph: MultiGraph,
        desc: &ModelDesc,
        params: &ModelParams,
        cfg: EngineConfig,
        cache: LayerCache,
    ) -> Result<AsyncEngine> {
        if cache.revision != graph.revision() {
            return Err(Error::CacheInvalid {
                cache: cache.revision,
                graph: graph.revision(),
            });
        }
        let model = ResolvedModel::new(desc, params)?;
        let mut layers = model.blocks.clone();
        layers.push(model.head_block.clone());
        if cache.num_layers() != layers.len() + 1 {
            return Err(Error::CacheInvalid {
                cache: cache.num_layers() as u64,
                graph: (layers.len() + 1) as u64,
            });
        }
        let mut consumers = vec![Vec::new(); graph.num_slots()];
        for id in graph.live_ids() {
            for e in graph.spatial_in(id) {
                consumers[e.src as usize].push(id);
            }
            for e in graph.temporal_in(id) {
                consumers[e.src as usize].push(id);
            }
        }
        for c in &mut consumers {
            c.sort_unstable();
            c.dedup();
        }
        Ok(AsyncEngine {
            graph,
            model,
            layers,
            cache,
            cfg,
            consumers,
            recomputed_pairs: 0,
        })
    }

    pub fn graph(&self) -> &MultiGraph {
        &self.graph
    }

    pub fn cache(&self) -> &LayerCache {
        &self.cache
    }

    pub fn into_cache(self) -> LayerCache {
        self.cache
    }

    /// Message-passing depth (blocks + head).
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Influence cone of a node over `depth` message layers.
    pub fn affected_subgraph(&self, node: NodeId, depth: usize) -> AffectedSets {
        match self.cfg.influence {
            InfluenceDirection::PastToPresent => influence_cone(node, depth, |n| {
                self.consumers
                    .get(n as usize)
                    .cloned()
                    .unwrap_or_default()
            }),
            InfluenceDirection::PresentToPast => influence_cone(node, depth, |n| {
                let mut src: Vec<NodeId> = self
                    .graph
                    .spatial_in(n)
                    .iter()
                    .map(|e| e.src)
                    .chain(self.graph.temporal_in(n).iter().map(|e| e.src))
                    .filter(|&s| !self.graph.is_boundary(s))
                    .collect();
                src.sort_unstable();
                src.dedup();
                src
            }),
        }
    }

    /// Inserts one event, recomputes its influence cone, and returns the
    /// new and changed predictions.
    pub fn insert(&mut self, e: &Event) -> Result<InsertReport> {
        if self.cache.revision != self.graph.revision() {
            return Err(Error::CacheInvalid {
                cache: self.cache.revision,
                graph: self.graph.revision(),
            });
        }
        let outcome = self.graph.insert_event(e)?;
        let id = outcome.node;
        if self.consumers.len() <= id as usize {
            self.consumers.resize_with(id as usize + 1, Vec::new);
        }
        let mut touched: Vec<NodeId> = Vec::new();
        for edge in self.graph.spatial_in(id) {
            touched.push(edge.src);
        }
        for edge in self.graph.temporal_in(id) {
            touched.push(edge.src);
        }
        touched.sort_unstable();
        touched.dedup();
        for src in touched {
            self.consumers[src as usize].push(id);
        }
        self.update_for(id)
    }

    /// Recomputes the influence cone of a node against the current cache.
    /// Idempotent: a second call recomputes the same values.
    pub fn update_for(&mut self, node: NodeId) -> Result<InsertReport> {
        if !self.graph.is_alive(node) {
            return Err(Error::Validation(format!("node {node} is not live")));
        }
        let affected = self.affected_subgraph(node, self.depth());
        let mut pairs = 0u64;
        for (layer, set) in affected.per_layer.iter().enumerate() {
            for &id in set {
                if self.graph.is_boundary(id) {
                    continue; // frozen sources keep their cached rows
                }
                self.recompute_layer(layer, id);
                pairs += 1;
            }
        }
        self.recomputed_pairs += pairs;
        self.cache.revision = self.graph.revision();
        let final_set = affected.per_layer.last().cloned().unwrap_or_default();
        let predictions = final_set
            .iter()
            .filter(|&&id| self.graph.is_alive(id) && !self.graph.is_boundary(id))
            .map(|&id| self.prediction_for(id))
            .collect();
        Ok(InsertReport {
            node,
            affected,
            recomputed_pairs: pairs,
            predictions,
        })
    }

    fn embed_into(&self, id: NodeId) -> Vec<f64> {
        let mut out = vec![0.0; self.model.embed_w.cols];
        self.model.embed_node(&self.graph.node(id).feature.0, &mut out);
        out
    }

    /// Recomputes one (layer, node) activation from the previous layer's
    /// cached rows.
    fn recompute_layer(&mut self, layer: usize, id: NodeId) {
        let row = if layer == 0 {
            self.embed_into(id)
        } else {
            let rb = &self.layers[layer - 1];
            let prev = layer - 1;
            let h_self = self
                .cache
                .get(prev, id)
                .expect("previous layer cached for live node");
            let mut out = vec![0.0; rb.desc.c_out];
            let spatial_edges = self.graph.spatial_in(id);
            let temporal_edges = self.graph.temporal_in(id);
            let temporal: Vec<(&[f64], [f64; 6])> = temporal_edges
                .iter()
                .map(|e| (self.cache.get(prev, e.src).expect("cached source"), e.attr))
                .collect();
            if self.cfg.parallel_branches && rb.desc.fused() {
                let (h_s, h_t) = join(
                    || {
                        let (sd, w, root, bias) = rb.spline.as_ref().unwrap();
                        let mut h_s = vec![0.0; rb.desc.c_out];
                        let spatial = spatial_edges.iter().map(|e| {
                            (self.cache.get(prev, e.src).expect("cached source"), &e.attr)
                        });
                        spline_node_forward(sd, w, root, bias, h_self, spatial, &mut h_s);
                        h_s
                    },
                    || {
                        let (ad, w_src, w_tgt, w_edge, att, bias) = rb.attn.as_ref().unwrap();
                        let mut h_t = vec![0.0; rb.desc.c_out];
                        attention_node_forward(
                            ad, w_src, w_tgt, w_edge, att, bias, h_self, &temporal, &mut h_t,
                        );
                        h_t
                    },
                );
                let (w1, b1, w2, b2) = rb.fuse.as_ref().unwrap();
                let mut cat = vec![0.0; 2 * rb.desc.c_out];
                cat[..rb.desc.c_out].copy_from_slice(&h_s);
                cat[rb.desc.c_out..].copy_from_slice(&h_t);
                let mut hidden = vec![0.0; w1.cols];
                affine_node(&cat, w1, b1, &mut hidden);
                hidden.iter_mut().for_each(|v| *v = v.max(0.0));
                affine_node(&hidden, w2, b2, &mut out);
                out.iter_mut().for_each(|v| *v = v.max(0.0));
                rb.norm.apply(&mut out);
            } else {
                let spatial = spatial_edges
                    .iter()
                    .map(|e| (self.cache.get(prev, e.src).expect("cached source"), &e.attr));
                let mut scratch = BlockScratch::default();
                crate::nn::block_node_forward(rb, h_self, spatial, &temporal, &mut out, &mut scratch);
            }
            out
        };
        self.cache.put(layer, id, row);
    }

    fn recompute_node_all_layers(&mut self, id: NodeId) {
        for layer in 0..self.cache.num_layers() {
            self.recompute_layer(layer, id);
        }
        self.recomputed_pairs += self.cache.num_layers() as u64;
    }

    /// Head prediction of one node from its cached head-block activation.
    pub fn prediction_for(&self, id: NodeId) -> NodePrediction {
        let last = self.cache.num_layers() - 1;
        let h = self.cache.get(last, id).expect("head activation cached");
        let mut cls = vec![0.0; self.model.cls_w.cols];
        affine_node(h, &self.model.cls_w, &self.model.cls_b, &mut cls);
        let m = cls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = cls.iter().map(|&v| (v - m).exp()).collect();
        let norm: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= norm);
        let mut reg = vec![0.0; self.model.reg_w.cols];
        affine_node(h, &self.model.reg_w, &self.model.reg_b, &mut reg);
        let node = self.graph.node(id);
        NodePrediction {
            row: id,
            x: node.x,
            y: node.y,
            t: node.t,
            class_probs: probs,
            encoded: [reg[0], reg[1], reg[2], reg[3]],
            iou_confidence: 1.0 / (1.0 + (-reg[4]).exp()),
        }
    }

    /// Predictions for every live (non-boundary) node.
    pub fn all_predictions(&self) -> Vec<NodePrediction> {
        self.graph
            .live_ids()
            .filter(|&id| !self.graph.is_boundary(id))
            .map(|id| self.prediction_for(id))
            .collect()
    }

    /// Evicts nodes older than the window, dropping their cache rows.
    /// Rows of still-referenced boundary nodes survive — they remain valid
    /// message sources for the retained graph. Returns the removed count.
    pub fn evict_expired(&mut self, t_now: i64, window: i64) -> usize {
        let report = self.graph.evict_expired(t_now, window);
        for &id in &report.removed {
            self.cache.drop_node(id);
            if let Some(c) = self.consumers.get_mut(id as usize) {
                c.clear();
            }
        }
        self.cache.revision = self.graph.revision();
        report.removed.len()
    }

    /// Dense recompute of every live node in insertion order, reading
    /// cached rows for frozen boundary sources, compared against the
    /// cache. Returns the maximum absolute difference.
    pub fn dense_check(&self) -> f64 {
        let ids: Vec<NodeId> = self.graph.live_ids().collect();
        let mut fresh: Vec<std::collections::HashMap<NodeId, Vec<f64>>> =
            vec![Default::default(); self.cache.num_layers()];
        let mut worst = 0.0f64;
        for layer in 0..self.cache.num_layers() {
            for &id in &ids {
                let row = if self.graph.is_boundary(id) {
                    match self.cache.get(layer, id) {
                        Some(r) => r.to_vec(),
                        None => continue,
                    }
                } else if layer == 0 {
                    self.embed_into(id)
                } else {
                    let rb = &self.layers[layer - 1];
                    let prev = &fresh[layer - 1];
                    let h_self = prev.get(&id).expect("previous fresh row");
                    let temporal: Vec<(&[f64], [f64; 6])> = self
                        .graph
                        .temporal_in(id)
                        .iter()
                        .map(|e| (prev.get(&e.src).expect("fresh source").as_slice(), e.attr))
                        .collect();
                    let spatial = self
                        .graph
                        .spatial_in(id)
                        .iter()
                        .map(|e| (prev.get(&e.src).expect("fresh source").as_slice(), &e.attr));
                    let mut out = vec![0.0; rb.desc.c_out];
                    let mut scratch = BlockScratch::default();
                    crate::nn::block_node_forward(
                        rb, h_self, spatial, &temporal, &mut out, &mut scratch,
                    );
                    out
                };
                if let Some(cached) = self.cache.get(layer, id) {
                    for (a, b) in row.iter().zip(cached) {
                        worst = worst.max((a - b).abs());
                    }
                } else {
                    worst = f64::INFINITY;
                }
                fresh[layer].insert(id, row);
            }
        }
        worst
    }
}

// ---------------------------------------------------------------------------
// FLOP accounting and the timing benchmark.
// ---------------------------------------------------------------------------

/// Analytic FLOPs to recompute one node at one layer, given its degrees.
pub fn node_layer_flops(rb: &ResolvedBlock, spatial_deg: usize, temporal_deg: usize) -> u64 {
    let c_in = rb.desc.c_in as u64;
    let c_out = rb.desc.c_out as u64;
    let mut flops = 0u64;
    if let Some((sd, ..)) = &rb.spline {
        flops += spatial_deg as u64 * spline_edge_flops(sd.grid, sd.c_in, sd.c_out);
        flops += 2 * c_in * c_out + c_out; // root + bias
    }
    if let Some((ad, ..)) = &rb.attn {
        flops += temporal_deg as u64 * attention_edge_flops(ad.c_in, ad.heads, ad.c_head());
        flops += 2 * c_in * c_out + c_out; // target projection + bias
    }
    if let Some((w1, ..)) = &rb.fuse {
        let hidden = w1.cols as u64;
        flops += 2 * (2 * c_out) * hidden + 2 * hidden * c_out;
    }
    flops += 2 * c_out; // normalization affine
    flops
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    Dense,
    Serial,
    Parallel,
}

impl BenchMode {
    pub fn name(&self) -> &'static str {
        match self {
            BenchMode::Dense => "dense",
            BenchMode::Serial => "serial",
            BenchMode::Parallel => "parallel",
        }
    }

    pub fn parse(s: &str) -> Result<BenchMode> {
        match s {
            "dense" => Ok(BenchMode::Dense),
            "serial" => Ok(BenchMode::Serial),
            "parallel" => Ok(BenchMode::Parallel),
            other => Err(Error::Usage(format!("unknown bench mode `{other}`"))),
        }
    }
}

/// One row of the benchmark table.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub graph_size: usize,
    pub mode: BenchMode,
    pub median_ms: f64,
    pub p90_ms: f64,
    pub recomputed_pairs: u64,
    pub mflops_per_event: f64,
}

/// CSV with header `graph_size,mode,median_ms,p90_ms,recomputed_pairs,mflops_per_event`.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out =
        String::from("graph_size,mode,median_ms,p90_ms,recomputed_pairs,mflops_per_event\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.4},{:.4},{},{:.3}\n",
            r.graph_size,
            r.mode.name(),
            r.median_ms,
            r.p90_ms,
            r.recomputed_pairs,
            r.mflops_per_event
        ));
    }
    out
}

/// Uniform random events over the sensor, `count` of them spread across
/// `span_us`.
pub fn uniform_stream(
    geometry: SensorGeometry,
    count: usize,
    span_us: i64,
    seed: u64,
) -> crate::events::EventStream {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut events: Vec<Event> = (0..count)
        .map(|i| {
            let base = (i as i64 * span_us) / count.max(1) as i64;
            let t = (base + rng.random_range(0..50)).min(span_us);
            Event::new(
                t,
                rng.random_range(0..geometry.width as u16),
                rng.random_range(0..geometry.height as u16),
                if rng.random_bool(0.5) { 1 } else { -1 },
            )
        })
        .collect();
    events.sort_by_key(|e| e.t);
    crate::events::EventStream { events, geometry }
}

/// Median per-event latency of inserting events into graphs of increasing
/// size: dense full recompute versus incremental with serial or parallel
/// branches. `measure` insertions are timed after `warmup` untimed ones.
#[allow(clippy::too_many_arguments)]
pub fn bench_update(
    sizes: &[usize],
    desc: &ModelDesc,
    params: &ModelParams,
    graph_cfg: &GraphConfig,
    modes: &[BenchMode],
    warmup: usize,
    measure: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let geometry = SensorGeometry::new(304, 240)?;
    let mut rows = Vec::new();
    for &size in sizes {
        let total = size + warmup + measure;
        let stream = uniform_stream(geometry, total, graph_cfg.window - 1_000, seed ^ size as u64);
        for &mode in modes {
            let engine_cfg = EngineConfig {
                parallel_branches: matches!(mode, BenchMode::Parallel),
                influence: InfluenceDirection::PastToPresent,
            };
            let mut engine = AsyncEngine::new(*graph_cfg, geometry, 0, desc, params, engine_cfg)?;
            for e in &stream.events[..size] {
                engine.insert(e)?;
            }
            let mut samples = Vec::with_capacity(measure);
            let mut pairs_total = 0u64;
            let mut flops_total = 0u64;
            for (i, e) in stream.events[size..].iter().enumerate() {
                match mode {
                    BenchMode::Dense => {
                        let start = Instant::now();
                        engine.insert(e)?;
                        // Dense baseline: recompute every live node at
                        // every layer after the insertion.
                        let ids: Vec<NodeId> = engine.graph.live_ids().collect();
                        for &id in &ids {
                            engine.recompute_node_all_layers(id);
                        }
                        let dt = start.elapsed();
                        if i >= warmup {
                            samples.push(dt.as_secs_f64() * 1e3);
                            pairs_total += ids.len() as u64 * engine.cache.num_layers() as u64;
                            flops_total += dense_flops(&engine);
                        }
                    }
                    BenchMode::Serial | BenchMode::Parallel => {
                        let start = Instant::now();
                        let report = engine.insert(e)?;
                        let dt = start.elapsed();
                        if i >= warmup {
                            samples.push(dt.as_secs_f64() * 1e3);
                            pairs_total += report.recomputed_pairs;
                            flops_total += incremental_flops(&engine, &report.affected);
                        }
                    }
                }
            }
            samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = samples[samples.len() / 2];
            let p90_idx = ((samples.len() as f64 * 0.9) as usize).min(samples.len() - 1);
            let p90 = samples[p90_idx];
            rows.push(BenchRow {
                graph_size: size,
                mode,
                median_ms: median,
                p90_ms: p90,
                recomputed_pairs: pairs_total / samples.len().max(1) as u64,
                mflops_per_event: flops_total as f64 / samples.len().max(1) as f64 / 1e6,
            });
        }
    }
    Ok(rows)
}

fn embed_flops(embed_dim: usize) -> u64 {
    2 * 4 * embed_dim as u64
}

fn dense_flops(engine: &AsyncEngine) -> u64 {
    let mut total = 0u64;
    for id in engine.graph.live_ids() {
        total += embed_flops(engine.model.embed_w.cols);
        let sdeg = engine.graph.spatial_in(id).len();
        let tdeg = engine.graph.temporal_in(id).len();
        for rb in &engine.layers {
            total += node_layer_flops(rb, sdeg, tdeg);
        }
    }
    total
}

fn incremental_flops(engine: &AsyncEngine, affected: &AffectedSets) -> u64 {
    let mut total = 0u64;
    for (layer, set) in affected.per_layer.iter().enumerate() {
        for &id in set {
            if layer == 0 {
                total += embed_flops(engine.model.embed_w.cols);
            } else {
                let sdeg = engine.graph.spatial_in(id).len();
                let tdeg = engine.graph.temporal_in(id).len();
                total += node_layer_flops(&engine.layers[layer - 1], sdeg, tdeg);
            }
        }
    }
    total
}
