//! Text dump of a multigraph for golden tests.
//!
//! One line per node: `N id x y t p`. One line per edge:
//! `S i j u1 u2 u3` for spatial, `T i j a1 a2 a3 a4 a5 a6` for temporal,
//! where `i` is the consuming node and `j` the source. Attribute values
//! use fixed 6-decimal formatting so parse → dump is byte-stable.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::{MultiGraph, NodeId};

/// Parsed form of a dump; attribute-exact, index-free.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDump {
    pub nodes: Vec<(NodeId, u16, u16, i64, i8)>,
    pub spatial: Vec<(NodeId, NodeId, [f64; 3])>,
    pub temporal: Vec<(NodeId, NodeId, [f64; 6])>,
}

impl GraphDump {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for &(id, x, y, t, p) in &self.nodes {
            let _ = writeln!(out, "N {id} {x} {y} {t} {p}");
        }
        for &(i, j, a) in &self.spatial {
            let _ = writeln!(out, "S {i} {j} {:.6} {:.6} {:.6}", a[0], a[1], a[2]);
        }
        for &(i, j, a) in &self.temporal {
            let _ = writeln!(
                out,
                "T {i} {j} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
                a[0], a[1], a[2], a[3], a[4], a[5]
            );
        }
        out
    }
}

/// Dumps the live part of a graph.
pub fn dump_graph(g: &MultiGraph) -> String {
    let mut d = GraphDump {
        nodes: Vec::new(),
        spatial: Vec::new(),
        temporal: Vec::new(),
    };
    for id in g.live_ids() {
        let n = g.node(id);
        d.nodes.push((id, n.x, n.y, n.t, n.p));
        for e in g.spatial_in(id) {
            d.spatial.push((id, e.src, e.attr));
        }
        for e in g.temporal_in(id) {
            d.temporal.push((id, e.src, e.attr));
        }
    }
    d.to_text()
}

pub fn parse_graph_dump(text: &str) -> Result<GraphDump> {
    let mut dump = GraphDump {
        nodes: Vec::new(),
        spatial: Vec::new(),
        temporal: Vec::new(),
    };
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: &str| Error::parse(lineno + 1, msg.to_string());
        let int = |s: &str| -> Result<i64> {
            s.parse().map_err(|_| Error::parse(lineno + 1, format!("bad integer `{s}`")))
        };
        let real = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::parse(lineno + 1, format!("bad real `{s}`")))
        };
        match fields[0] {
            "N" => {
                if fields.len() != 6 {
                    return Err(err("node line needs `N id x y t p`"));
                }
                dump.nodes.push((
                    int(fields[1])? as NodeId,
                    int(fields[2])? as u16,
                    int(fields[3])? as u16,
                    int(fields[4])?,
                    int(fields[5])? as i8,
                ));
            }
            "S" => {
                if fields.len() != 6 {
                    return Err(err("spatial line needs `S i j u1 u2 u3`"));
                }
                dump.spatial.push((
                    int(fields[1])? as NodeId,
                    int(fields[2])? as NodeId,
                    [real(fields[3])?, real(fields[4])?, real(fields[5])?],
                ));
            }
            "T" => {
                if fields.len() != 9 {
                    return Err(err("temporal line needs `T i j a1..a6`"));
                }
                let mut a = [0.0; 6];
                for (k, slot) in a.iter_mut().enumerate() {
                    *slot = real(fields[3 + k])?;
                }
                dump.temporal.push((
                    int(fields[1])? as NodeId,
                    int(fields[2])? as NodeId,
                    a,
                ));
            }
            other => return Err(Error::parse(lineno + 1, format!("unknown record `{other}`"))),
        }
    }
    Ok(dump)
}
