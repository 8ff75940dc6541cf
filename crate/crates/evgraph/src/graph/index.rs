//! Spatial hash over (x, y) cells with time-ordered per-cell node lists.
//!
//! Cell size equals the spatial ellipsoid radius, so a range query never
//! touches more than the cells overlapping the query box. Nodes are
//! appended in arrival order, which keeps each cell list sorted by time
//! and makes the time filter a binary search plus a suffix scan.

use std::collections::HashMap;

use super::NodeId;

#[derive(Debug, Clone)]
pub struct SpatialIndex {
    cell_size: f64,
    cells: HashMap<(i32, i32), Vec<(i64, NodeId)>>,
}

impl SpatialIndex {
    pub fn new(cell_size: f64) -> Self {
        assert!(cell_size > 0.0);
        SpatialIndex {
            cell_size,
            cells: HashMap::new(),
        }
    }

    fn cell_of(&self, x: f64, y: f64) -> (i32, i32) {
        (
            (x / self.cell_size).floor() as i32,
            (y / self.cell_size).floor() as i32,
        )
    }

    /// Appends a node; `t` must be >= the last inserted time of its cell.
    pub fn insert(&mut self, x: u16, y: u16, t: i64, id: NodeId) {
        let key = self.cell_of(x as f64, y as f64);
        let list = self.cells.entry(key).or_default();
        debug_assert!(list.last().is_none_or(|&(lt, _)| lt <= t));
        list.push((t, id));
    }

    /// All nodes inside the inclusive box `[x-r, x+r] x [y-r, y+r]` with
    /// time in `[t_lo, t_hi]`, in deterministic (cell, time) order. This is
    /// a superset query: callers still apply the exact edge predicate.
    pub fn box_query(
        &self,
        x: u16,
        y: u16,
        r_xy: f64,
        t_lo: i64,
        t_hi: i64,
        out: &mut Vec<NodeId>,
    ) {
        out.clear();
        let (cx0, cy0) = self.cell_of(x as f64 - r_xy, y as f64 - r_xy);
        let (cx1, cy1) = self.cell_of(x as f64 + r_xy, y as f64 + r_xy);
        for cy in cy0..=cy1 {
            for cx in cx0..=cx1 {
                let Some(list) = self.cells.get(&(cx, cy)) else {
                    continue;
                };
                let start = list.partition_point(|&(t, _)| t < t_lo);
                for &(t, id) in &list[start..] {
                    if t > t_hi {
                        break;
                    }
                    out.push(id);
                }
            }
        }
    }

    /// Drops index entries with time <= cutoff.
    pub fn evict_before(&mut self, cutoff: i64) {
        self.cells.retain(|_, list| {
            let keep_from = list.partition_point(|&(t, _)| t <= cutoff);
            if keep_from > 0 {
                list.drain(..keep_from);
            }
            !list.is_empty()
        });
    }

    pub fn len(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}
