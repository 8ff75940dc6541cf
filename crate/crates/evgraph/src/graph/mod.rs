//! Spatiotemporal multigraph construction.
//!
//! Every event becomes a node. Two directed edge sets connect a node to
//! strictly-earlier events: *spatial* edges use an ellipsoid whose major
//! axis lies in the XY plane (wide in space, shallow in time), *temporal*
//! edges use the inverted ellipsoid (narrow in space, deep in time).
//! Edges point from consumer to source — messages flow from the past to
//! the present — so construction is incremental by definition: batch
//! building a stream equals folding [`MultiGraph::insert_event`] over it
//! in time order, and a node's neighborhood is frozen at insertion.

mod build;
mod dump;
mod index;

pub use build::{
    build_graph, build_graph_at, ellipsoid_lhs, select_neighbors, spatial_edge_attr,
    spatial_predicate, temporal_edge_attr, temporal_predicate, EvictReport,
};
pub use dump::{dump_graph, parse_graph_dump, GraphDump};
pub use index::SpatialIndex;

use crate::error::{Error, Result};
use crate::events::{Event, SensorGeometry};

/// Node identifier, dense from 0 in insertion order.
pub type NodeId = u32;

/// Neighborhood radii, degree caps, and window for graph construction.
///
/// XY radii are fractions of the larger sensor dimension; time radii are
/// in microseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphConfig {
    pub r_xy_spatial: f64,
    pub r_t_spatial: i64,
    pub r_xy_temporal: f64,
    pub r_t_temporal: i64,
    pub cap_spatial: usize,
    pub cap_temporal: usize,
    /// Window length in microseconds.
    pub window: i64,
    /// Velocity clamp for temporal edge attributes, px per ms.
    pub v_max: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            r_xy_spatial: 0.04,
            r_t_spatial: 5_000,
            r_xy_temporal: 0.01,
            r_t_temporal: 40_000,
            cap_spatial: 16,
            cap_temporal: 12,
            window: 100_000,
            v_max: 5.0,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_xy_spatial <= 0.0
            || self.r_t_spatial <= 0
            || self.r_xy_temporal <= 0.0
            || self.r_t_temporal <= 0
        {
            return Err(Error::Validation("all radii must be positive".into()));
        }
        if self.cap_spatial == 0 || self.cap_temporal == 0 {
            return Err(Error::Validation("neighbor caps must be >= 1".into()));
        }
        if self.window <= 0 {
            return Err(Error::Validation("window must be positive".into()));
        }
        if self.window < self.r_t_spatial || self.window < self.r_t_temporal {
            return Err(Error::Validation(
                "window must cover the time radii or evicted nodes could be missed neighbors".into(),
            ));
        }
        Ok(())
    }

    /// Spatial XY radius in pixels for a given sensor.
    pub fn spatial_r_xy_px(&self, geometry: &SensorGeometry) -> f64 {
        self.r_xy_spatial * geometry.max_dim() as f64
    }

    /// Temporal XY radius in pixels for a given sensor.
    pub fn temporal_r_xy_px(&self, geometry: &SensorGeometry) -> f64 {
        self.r_xy_temporal * geometry.max_dim() as f64
    }
}

/// Normalized per-node input feature: (x̂, ŷ, t̂, p), each in [-1, +1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeFeature(pub [f64; 4]);

/// Maps an event into [-1, +1]^4 relative to a window starting at
/// `t_start`. Polarity passes through unchanged.
pub fn normalize_node(
    e: &Event,
    geometry: &SensorGeometry,
    t_start: i64,
    window: i64,
) -> Result<NodeFeature> {
    if e.t < t_start || e.t > t_start + window {
        return Err(Error::Validation(format!(
            "event at t={} outside window [{}, {}]",
            e.t,
            t_start,
            t_start + window
        )));
    }
    let axis = |v: u32, extent: u32| {
        if extent <= 1 {
            0.0
        } else {
            2.0 * v as f64 / (extent - 1) as f64 - 1.0
        }
    };
    Ok(NodeFeature([
        axis(e.x as u32, geometry.width),
        axis(e.y as u32, geometry.height),
        2.0 * (e.t - t_start) as f64 / window as f64 - 1.0,
        e.p as f64,
    ]))
}

/// Spatial edge attribute: (Δx, Δy, Δt) mapped to [0,1]³ pseudo-coordinates
/// for the spline kernel.
pub type SpatialEdgeAttr = [f64; 3];

/// Temporal edge attribute: (Δx, Δy, Δt, Δx/Δt, Δy/Δt, Δp), normalized.
pub type TemporalEdgeAttr = [f64; 6];

/// A stored node: raw position plus its normalized feature.
#[derive(Debug, Clone, Copy)]
pub struct Node {
    pub x: u16,
    pub y: u16,
    pub t: i64,
    pub p: i8,
    pub feature: NodeFeature,
}

/// One directed in-edge: `src` is the (earlier) message source.
#[derive(Debug, Clone, Copy)]
pub struct InEdge<A> {
    pub src: NodeId,
    pub attr: A,
}

/// The multigraph: nodes plus per-node spatial and temporal in-edge lists
/// and a spatial hash index over past nodes.
#[derive(Debug, Clone)]
pub struct MultiGraph {
    pub(crate) cfg: GraphConfig,
    pub(crate) geometry: SensorGeometry,
    /// Window origin used to normalize node time features.
    pub(crate) t_origin: i64,
    pub(crate) nodes: Vec<Node>,
    pub(crate) spatial_in: Vec<Vec<InEdge<SpatialEdgeAttr>>>,
    pub(crate) temporal_in: Vec<Vec<InEdge<TemporalEdgeAttr>>>,
    pub(crate) index: SpatialIndex,
    /// Monotone revision, bumped by every mutation.
    pub(crate) revision: u64,
    /// Nodes older than this have been evicted; inserts below it are stale.
    pub(crate) evict_cutoff: i64,
    /// Nodes retained only as frozen message sources after eviction.
    pub(crate) boundary: Vec<bool>,
    /// Dense liveness flags; evicted ids stay allocated but dead.
    pub(crate) alive: Vec<bool>,
}

/// Outcome of inserting one event.
#[derive(Debug, Clone)]
pub struct InsertOutcome {
    pub node: NodeId,
    pub spatial_edges: usize,
    pub temporal_edges: usize,
}

impl MultiGraph {
    pub fn new(cfg: GraphConfig, geometry: SensorGeometry, t_origin: i64) -> Result<Self> {
        cfg.validate()?;
        let cell = cfg.spatial_r_xy_px(&geometry).max(1.0);
        Ok(MultiGraph {
            cfg,
            geometry,
            t_origin,
            nodes: Vec::new(),
            spatial_in: Vec::new(),
            temporal_in: Vec::new(),
            index: SpatialIndex::new(cell),
            revision: 0,
            evict_cutoff: i64::MIN,
            boundary: Vec::new(),
            alive: Vec::new(),
        })
    }

    pub fn cfg(&self) -> &GraphConfig {
        &self.cfg
    }

    pub fn geometry(&self) -> &SensorGeometry {
        &self.geometry
    }

    pub fn t_origin(&self) -> i64 {
        self.t_origin
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Total node slots ever allocated, including evicted ones.
    pub fn num_slots(&self) -> usize {
        self.nodes.len()
    }

    /// Currently live nodes.
    pub fn num_nodes(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    pub fn is_alive(&self, id: NodeId) -> bool {
        self.alive.get(id as usize).copied().unwrap_or(false)
    }

    /// True for nodes kept only as frozen message sources.
    pub fn is_boundary(&self, id: NodeId) -> bool {
        self.boundary.get(id as usize).copied().unwrap_or(false)
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id as usize]
    }

    pub fn spatial_in(&self, id: NodeId) -> &[InEdge<SpatialEdgeAttr>] {
        &self.spatial_in[id as usize]
    }

    pub fn temporal_in(&self, id: NodeId) -> &[InEdge<TemporalEdgeAttr>] {
        &self.temporal_in[id as usize]
    }

    /// Ids of live nodes in insertion (time) order.
    pub fn live_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len() as NodeId).filter(|&id| self.alive[id as usize])
    }

    pub fn latest_t(&self) -> Option<i64> {
        self.live_ids().last().map(|id| self.nodes[id as usize].t)
    }

    /// Spatial and temporal edge counts over live nodes.
    pub fn edge_counts(&self) -> (usize, usize) {
        let s = self.live_ids().map(|id| self.spatial_in[id as usize].len()).sum();
        let t = self.live_ids().map(|id| self.temporal_in[id as usize].len()).sum();
        (s, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_hits_corners() {
        let g = SensorGeometry::new(304, 240).unwrap();
        let f = normalize_node(&Event::new(0, 0, 0, 1), &g, 0, 100_000).unwrap();
        assert_eq!(f.0, [-1.0, -1.0, -1.0, 1.0]);
        let f = normalize_node(&Event::new(100_000, 303, 239, -1), &g, 0, 100_000).unwrap();
        assert_eq!(f.0, [1.0, 1.0, 1.0, -1.0]);
    }

    #[test]
    fn normalize_mid_pixel() {
        let g = SensorGeometry::new(304, 240).unwrap();
        let f = normalize_node(&Event::new(50_000, 151, 0, 1), &g, 0, 100_000).unwrap();
        let expect = 2.0 * 151.0 / 303.0 - 1.0;
        assert!((f.0[0] - expect).abs() < 1e-12);
        assert!((expect + 0.00330).abs() < 1e-4);
        assert_eq!(f.0[2], 0.0);
    }

    #[test]
    fn normalize_rejects_out_of_window() {
        let g = SensorGeometry::new(304, 240).unwrap();
        assert!(normalize_node(&Event::new(200_000, 0, 0, 1), &g, 100_000, 100_000).is_ok());
        assert!(normalize_node(&Event::new(200_001, 0, 0, 1), &g, 100_000, 100_000).is_err());
        assert!(normalize_node(&Event::new(99_999, 0, 0, 1), &g, 100_000, 100_000).is_err());
    }
}
