//! Neighbor predicates, edge attributes, insertion, and eviction.

use crate::error::{Error, Result};
use crate::events::{Event, EventStream};
use crate::graph::{
    normalize_node, GraphConfig, InEdge, InsertOutcome, MultiGraph, Node, NodeId,
    SpatialEdgeAttr, TemporalEdgeAttr,
};

/// Left-hand side of the ellipsoid membership test: ‖Δxy‖/r_xy + |Δt|/r_t.
/// Doubles as the neighbor ranking distance (smaller is closer).
#[inline]
pub fn ellipsoid_lhs(dx: f64, dy: f64, dt_us: i64, r_xy_px: f64, r_t_us: i64) -> f64 {
    (dx * dx + dy * dy).sqrt() / r_xy_px + (dt_us.abs() as f64) / r_t_us as f64
}

/// Spatial edge test between a target node and a no-later candidate
/// source: inside the XY-major ellipsoid, boundary excluded.
pub fn spatial_predicate(target: &Node, source: &Node, cfg: &GraphConfig, r_xy_px: f64) -> bool {
    if source.t > target.t {
        return false;
    }
    let dx = source.x as f64 - target.x as f64;
    let dy = source.y as f64 - target.y as f64;
    ellipsoid_lhs(dx, dy, target.t - source.t, r_xy_px, cfg.r_t_spatial) < 1.0
}

/// Temporal edge test: inverted ellipsoid, source strictly earlier.
pub fn temporal_predicate(target: &Node, source: &Node, cfg: &GraphConfig, r_xy_px: f64) -> bool {
    if source.t >= target.t {
        return false;
    }
    let dx = source.x as f64 - target.x as f64;
    let dy = source.y as f64 - target.y as f64;
    ellipsoid_lhs(dx, dy, target.t - source.t, r_xy_px, cfg.r_t_temporal) < 1.0
}

/// Spatial pseudo-coordinates: each Δ component (source minus target)
/// mapped through `(Δ/R + 1) / 2` and clamped into [0, 1].
pub fn spatial_edge_attr(
    target: &Node,
    source: &Node,
    cfg: &GraphConfig,
    r_xy_px: f64,
) -> SpatialEdgeAttr {
    let u = |delta: f64, radius: f64| ((delta / radius + 1.0) / 2.0).clamp(0.0, 1.0);
    [
        u(source.x as f64 - target.x as f64, r_xy_px),
        u(source.y as f64 - target.y as f64, r_xy_px),
        u((source.t - target.t) as f64, cfg.r_t_spatial as f64),
    ]
}

/// Temporal attributes: displacement over the temporal radii, elapsed
/// time, velocity components clamped to ±v_max then unit-scaled, and the
/// polarity change (p_src - p_target) / 2.
pub fn temporal_edge_attr(
    target: &Node,
    source: &Node,
    cfg: &GraphConfig,
    r_xy_px: f64,
) -> TemporalEdgeAttr {
    let dx = source.x as f64 - target.x as f64;
    let dy = source.y as f64 - target.y as f64;
    let elapsed_us = target.t - source.t;
    debug_assert!(elapsed_us > 0);
    let elapsed_ms = elapsed_us as f64 / 1000.0;
    let vel = |d: f64| (-d / elapsed_ms).clamp(-cfg.v_max, cfg.v_max) / cfg.v_max;
    [
        dx / r_xy_px,
        dy / r_xy_px,
        elapsed_us as f64 / cfg.r_t_temporal as f64,
        vel(dx),
        vel(dy),
        (source.p as f64 - target.p as f64) / 2.0,
    ]
}

/// Filters candidates by a predicate, then keeps the `cap` nearest under
/// the ellipsoidal distance, ties broken by smaller node id.
pub fn select_neighbors(
    mut scored: Vec<(f64, NodeId)>,
    cap: usize,
) -> Vec<(f64, NodeId)> {
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    scored.truncate(cap);
    scored
}

/// Nodes fully removed and nodes demoted to frozen boundary sources by
/// one eviction pass.
#[derive(Debug, Default, Clone)]
pub struct EvictReport {
    pub removed: Vec<NodeId>,
    pub boundary: Vec<NodeId>,
}

impl MultiGraph {
    /// Index range query: a superset of everything inside the ellipsoid's
    /// axis-aligned bounding box, never missing a true neighbor.
    pub fn candidate_neighbors(&self, x: u16, y: u16, t: i64, r_xy_px: f64, r_t_us: i64) -> Vec<NodeId> {
        let mut out = Vec::new();
        self.index.box_query(x, y, r_xy_px, t - r_t_us, t, &mut out);
        out
    }

    /// Inserts one event: normalizes its feature, finds capped spatial and
    /// temporal in-edges among already-present nodes, and indexes it.
    /// Existing edges are never touched.
    pub fn insert_event(&mut self, e: &Event) -> Result<InsertOutcome> {
        if !self.geometry.contains(e.x, e.y) {
            return Err(Error::Validation(format!(
                "event at ({}, {}) outside {}x{} sensor",
                e.x, e.y, self.geometry.width, self.geometry.height
            )));
        }
        if e.t <= self.evict_cutoff {
            return Err(Error::Stale {
                t: e.t,
                cutoff: self.evict_cutoff,
            });
        }
        if let Some(latest) = self.latest_t() {
            if e.t < latest {
                return Err(Error::OutOfOrder { t: e.t, latest });
            }
        }
        let feature = normalize_node(e, &self.geometry, self.t_origin, self.cfg.window)?;
        let node = Node {
            x: e.x,
            y: e.y,
            t: e.t,
            p: e.p,
            feature,
        };
        let id = self.nodes.len() as NodeId;

        let r_s = self.cfg.spatial_r_xy_px(&self.geometry);
        let spatial = {
            let cands = self.candidate_neighbors(e.x, e.y, e.t, r_s, self.cfg.r_t_spatial);
            let scored = cands
                .into_iter()
                .filter(|&j| spatial_predicate(&node, &self.nodes[j as usize], &self.cfg, r_s))
                .map(|j| {
                    let s = &self.nodes[j as usize];
                    let d = ellipsoid_lhs(
                        s.x as f64 - node.x as f64,
                        s.y as f64 - node.y as f64,
                        node.t - s.t,
                        r_s,
                        self.cfg.r_t_spatial,
                    );
                    (d, j)
                })
                .collect();
            select_neighbors(scored, self.cfg.cap_spatial)
                .into_iter()
                .map(|(_, j)| InEdge {
                    src: j,
                    attr: spatial_edge_attr(&node, &self.nodes[j as usize], &self.cfg, r_s),
                })
                .collect::<Vec<_>>()
        };

        let r_t = self.cfg.temporal_r_xy_px(&self.geometry);
        let temporal = {
            let cands = self.candidate_neighbors(e.x, e.y, e.t, r_t, self.cfg.r_t_temporal);
            let scored = cands
                .into_iter()
                .filter(|&j| temporal_predicate(&node, &self.nodes[j as usize], &self.cfg, r_t))
                .map(|j| {
                    let s = &self.nodes[j as usize];
                    let d = ellipsoid_lhs(
                        s.x as f64 - node.x as f64,
                        s.y as f64 - node.y as f64,
                        node.t - s.t,
                        r_t,
                        self.cfg.r_t_temporal,
                    );
                    (d, j)
                })
                .collect();
            select_neighbors(scored, self.cfg.cap_temporal)
                .into_iter()
                .map(|(_, j)| InEdge {
                    src: j,
                    attr: temporal_edge_attr(&node, &self.nodes[j as usize], &self.cfg, r_t),
                })
                .collect::<Vec<_>>()
        };

        let outcome = InsertOutcome {
            node: id,
            spatial_edges: spatial.len(),
            temporal_edges: temporal.len(),
        };
        self.nodes.push(node);
        self.spatial_in.push(spatial);
        self.temporal_in.push(temporal);
        self.alive.push(true);
        self.boundary.push(false);
        self.index.insert(e.x, e.y, e.t, id);
        self.revision += 1;
        Ok(outcome)
    }

    /// Removes nodes with `t <= t_now - window`. A node still referenced
    /// by a retained node's edge list is demoted to a frozen boundary
    /// source (edges and index entry dropped, node kept) instead of being
    /// removed.
    pub fn evict_expired(&mut self, t_now: i64, window: i64) -> EvictReport {
        let cutoff = t_now - window;
        let mut report = EvictReport::default();
        if cutoff <= self.evict_cutoff {
            return report;
        }

        let expired: Vec<NodeId> = self
            .live_ids()
            .filter(|&id| self.nodes[id as usize].t <= cutoff)
            .collect();
        if expired.is_empty() {
            self.evict_cutoff = cutoff;
            self.t_origin = self.t_origin.max(cutoff);
            return report;
        }

        let mut referenced = vec![false; self.nodes.len()];
        for id in self.live_ids() {
            if self.nodes[id as usize].t > cutoff {
                for e in &self.spatial_in[id as usize] {
                    referenced[e.src as usize] = true;
                }
                for e in &self.temporal_in[id as usize] {
                    referenced[e.src as usize] = true;
                }
            }
        }

        for id in expired {
            let i = id as usize;
            self.spatial_in[i].clear();
            self.temporal_in[i].clear();
            if referenced[i] {
                if !self.boundary[i] {
                    self.boundary[i] = true;
                    report.boundary.push(id);
                }
            } else {
                self.alive[i] = false;
                self.boundary[i] = false;
                report.removed.push(id);
            }
        }
        self.index.evict_before(cutoff);
        self.evict_cutoff = cutoff;
        self.t_origin = self.t_origin.max(cutoff);
        self.revision += 1;
        report
    }

    /// Test-support constructor for hand-built topologies; bypasses the
    /// neighbor search entirely.
    #[doc(hidden)]
    pub fn push_raw_node(
        &mut self,
        node: Node,
        spatial: Vec<InEdge<SpatialEdgeAttr>>,
        temporal: Vec<InEdge<TemporalEdgeAttr>>,
    ) -> NodeId {
        let id = self.nodes.len() as NodeId;
        self.index.insert(node.x, node.y, node.t, id);
        self.nodes.push(node);
        self.spatial_in.push(spatial);
        self.temporal_in.push(temporal);
        self.alive.push(true);
        self.boundary.push(false);
        self.revision += 1;
        id
    }
}

/// Builds the graph for a whole stream by folding [`MultiGraph::insert_event`]
/// in time order, anchored at the first event (or 0 when empty).
pub fn build_graph(stream: &EventStream, cfg: &GraphConfig) -> Result<MultiGraph> {
    let origin = stream.events.first().map_or(0, |e| e.t);
    build_graph_at(stream, cfg, origin)
}

/// Same as [`build_graph`] with an explicit window origin, for windows
/// anchored at a label time.
pub fn build_graph_at(stream: &EventStream, cfg: &GraphConfig, t_origin: i64) -> Result<MultiGraph> {
    let mut g = MultiGraph::new(*cfg, stream.geometry, t_origin)?;
    for e in &stream.events {
        g.insert_event(e)?;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::SensorGeometry;

    fn cfg() -> GraphConfig {
        GraphConfig::default()
    }

    fn geom() -> SensorGeometry {
        SensorGeometry::new(304, 240).unwrap()
    }

    fn node_at(x: u16, y: u16, t: i64, p: i8) -> Node {
        Node {
            x,
            y,
            t,
            p,
            feature: super::super::NodeFeature([0.0; 4]),
        }
    }

    #[test]
    fn spatial_predicate_examples() {
        let c = cfg();
        let r = c.spatial_r_xy_px(&geom()); // 4% of 304 = 12.16 px
        let target = node_at(50, 50, 10_000, 1);
        // Same pixel, 2 ms earlier: LHS = 0.4 < 1.
        assert!(spatial_predicate(&target, &node_at(50, 50, 8_000, 1), &c, r));
        // Exactly on the XY radius with Δt = 0: boundary excluded. A
        // 100x100 sensor makes the radius exactly 4 px.
        let small = SensorGeometry::new(100, 100).unwrap();
        let r4 = c.spatial_r_xy_px(&small);
        assert_eq!(r4, 4.0);
        assert!(!spatial_predicate(&target, &node_at(54, 50, 10_000, 1), &c, r4));
        assert!(spatial_predicate(&target, &node_at(53, 50, 10_000, 1), &c, r4));
        // Δt exactly on the time radius: excluded.
        assert!(!spatial_predicate(&target, &node_at(50, 50, 10_000 - c.r_t_spatial, 1), &c, r));
        // Later source never qualifies.
        assert!(!spatial_predicate(&target, &node_at(50, 50, 10_001, 1), &c, r));
    }

    #[test]
    fn temporal_predicate_examples() {
        let c = cfg();
        let r = c.temporal_r_xy_px(&geom()); // 1% of 304 = 3.04 px
        let target = node_at(50, 50, 50_000, 1);
        // Same pixel, 20 ms of 40 ms: LHS = 0.5.
        assert!(temporal_predicate(&target, &node_at(50, 50, 30_000, 1), &c, r));
        // Simultaneous source: strictly-earlier rule rejects it.
        assert!(!temporal_predicate(&target, &node_at(50, 50, 50_000, 1), &c, r));
        // 1.5 px at 30 ms of 40 ms: 1.5/3.04 + 0.75 = 1.243 >= 1.
        let lhs = ellipsoid_lhs(0.0, 1.5, 30_000, r, c.r_t_temporal);
        assert!((lhs - (1.5 / 3.04 + 0.75)).abs() < 1e-9);
        assert!(lhs >= 1.0);
        // 2 px at the same Δt is even further outside the ellipsoid.
        assert!(!temporal_predicate(&target, &node_at(52, 50, 20_000, 1), &c, r));
    }

    #[test]
    fn spatial_attr_examples() {
        let c = cfg();
        let r = c.spatial_r_xy_px(&geom());
        let target = node_at(100, 100, 10_000, 1);
        // Zero displacement maps to the center of the unit cube.
        let a = spatial_edge_attr(&target, &node_at(100, 100, 10_000, 1), &c, r);
        assert_eq!(a, [0.5, 0.5, 0.5]);
        // Δx = +R maps to 1, Δx = -R/2 maps to 0.25.
        let right = node_at(100 + r.round() as u16, 100, 10_000, 1);
        let a = spatial_edge_attr(&target, &right, &c, r);
        assert!((a[0] - (r.round() / r + 1.0) / 2.0).abs() < 1e-12);
        let halfleft = node_at(100 - (r / 2.0).round() as u16, 100, 10_000, 1);
        let a = spatial_edge_attr(&target, &halfleft, &c, r);
        assert!((a[0] - 0.25).abs() < 0.01);
    }

    #[test]
    fn temporal_attr_examples() {
        let c = cfg();
        let r = c.temporal_r_xy_px(&geom());
        let target = node_at(100, 100, 10_000, 1);
        // Same polarity: Δp component 0. 2 px over 1 ms at v_max 5: 0.4.
        let src = node_at(98, 100, 9_000, 1);
        let a = temporal_edge_attr(&target, &src, &c, r);
        assert_eq!(a[5], 0.0);
        assert!((a[3] - 0.4).abs() < 1e-12, "velocity {}", a[3]);
        assert!((a[2] - 1_000.0 / 40_000.0).abs() < 1e-12);
        // 10 px over 0.5 ms clamps to 1.
        let fast = node_at(90, 100, 9_500, -1);
        let a = temporal_edge_attr(&target, &fast, &c, r);
        assert_eq!(a[3], 1.0);
        assert_eq!(a[5], -1.0);
    }

    #[test]
    fn velocity_sign_matches_displacement_over_time() {
        // Object moving +x: the source sits at smaller x in the past, so
        // Δx/Δt = (x_j - x_i)/(t_j - t_i) is positive.
        let c = cfg();
        let r = c.temporal_r_xy_px(&geom());
        let target = node_at(102, 100, 11_000, 1);
        let src = node_at(100, 100, 10_000, 1);
        let a = temporal_edge_attr(&target, &src, &c, r);
        assert!(a[0] < 0.0); // Δx component keeps the raw sign
        assert!(a[3] > 0.0); // velocity points in the motion direction
    }

    #[test]
    fn select_caps_and_breaks_ties_by_id() {
        let scored = vec![(0.5, 3), (0.2, 7), (0.2, 2), (0.9, 1), (0.1, 9)];
        let kept = select_neighbors(scored, 3);
        assert_eq!(kept.iter().map(|&(_, id)| id).collect::<Vec<_>>(), vec![9, 2, 7]);
        let kept = select_neighbors(vec![(0.1, 4), (0.3, 5)], 16);
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn insert_into_empty_graph_has_no_edges() {
        let mut g = MultiGraph::new(cfg(), geom(), 0).unwrap();
        let out = g.insert_event(&Event::new(0, 10, 10, 1)).unwrap();
        assert_eq!(out.spatial_edges, 0);
        assert_eq!(out.temporal_edges, 0);
    }

    #[test]
    fn coincident_pixel_events_2ms_apart_link_both_ways() {
        let mut g = MultiGraph::new(cfg(), geom(), 0).unwrap();
        g.insert_event(&Event::new(0, 10, 10, 1)).unwrap();
        let out = g.insert_event(&Event::new(2_000, 10, 10, 1)).unwrap();
        assert_eq!(out.spatial_edges, 1);
        assert_eq!(out.temporal_edges, 1);
    }

    #[test]
    fn duplicate_event_never_self_links() {
        let mut g = MultiGraph::new(cfg(), geom(), 0).unwrap();
        let a = g.insert_event(&Event::new(5, 10, 10, 1)).unwrap();
        let b = g.insert_event(&Event::new(5, 10, 10, 1)).unwrap();
        assert_ne!(a.node, b.node);
        assert_eq!(g.spatial_in(b.node).len(), 1);
        assert_eq!(g.spatial_in(b.node)[0].src, a.node);
        assert!(g.spatial_in(a.node).is_empty());
        assert!(g.temporal_in(b.node).is_empty()); // strictly-earlier rule
    }

    #[test]
    fn out_of_order_and_stale_are_distinct_errors() {
        let mut g = MultiGraph::new(cfg(), geom(), 0).unwrap();
        g.insert_event(&Event::new(10_000, 10, 10, 1)).unwrap();
        assert!(matches!(
            g.insert_event(&Event::new(5_000, 10, 10, 1)),
            Err(Error::OutOfOrder { .. })
        ));
        g.evict_expired(120_000, 100_000);
        assert!(matches!(
            g.insert_event(&Event::new(15_000, 10, 10, 1)),
            Err(Error::Stale { .. })
        ));
    }

    #[test]
    fn eviction_keeps_referenced_sources_as_boundary() {
        let mut c = cfg();
        c.window = 50_000;
        let mut g = MultiGraph::new(c, geom(), 0).unwrap();
        g.insert_event(&Event::new(0, 10, 10, 1)).unwrap();
        g.insert_event(&Event::new(30_000, 10, 10, 1)).unwrap(); // temporal edge to node 0
        let report = g.evict_expired(55_000, 50_000);
        assert_eq!(report.removed, vec![]);
        assert_eq!(report.boundary, vec![0]);
        assert!(g.is_alive(0) && g.is_boundary(0));
        // Once the referencing node expires too, the boundary node goes.
        let report = g.evict_expired(90_000, 50_000);
        assert_eq!(report.removed, vec![0, 1]);
        assert_eq!(g.num_nodes(), 0);
    }

    #[test]
    fn capped_insert_keeps_nearest() {
        let mut c = cfg();
        c.cap_spatial = 3;
        let mut g = MultiGraph::new(c, geom(), 0).unwrap();
        for i in 0..8u16 {
            g.insert_event(&Event::new(i as i64, 100 + i, 100, 1)).unwrap();
        }
        let out = g.insert_event(&Event::new(100, 100, 100, 1)).unwrap();
        assert_eq!(out.spatial_edges, 3);
        let srcs: Vec<NodeId> = g.spatial_in(out.node).iter().map(|e| e.src).collect();
        assert_eq!(srcs, vec![0, 1, 2]); // nearest three columns
    }
}
