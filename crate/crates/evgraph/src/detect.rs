//! Event-level detection: head outputs, box coding, active-region
//! pooling, non-maximum suppression, and mAP evaluation.
//!
//! Every node predicts a class distribution over the object classes plus
//! a background class (the last index), an encoded box relative to its
//! own pixel position, and an IoU confidence. Spatially proximate events
//! describe the same object, so predictions are pooled into pixel-voxel
//! active regions (best score per cell) before per-class NMS.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::events::{LabeledBox, SensorGeometry};
use crate::nn::{head_dense, GraphView, ResolvedModel};
use crate::tape::Tensor;

/// Axis-aligned box in pixel units, center + size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox { cx, cy, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Intersection over union of two axis-aligned boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (f64::min(a.cx + a.w / 2.0, b.cx + b.w / 2.0)
        - f64::max(a.cx - a.w / 2.0, b.cx - b.w / 2.0))
    .max(0.0);
    let iy = (f64::min(a.cy + a.h / 2.0, b.cy + b.h / 2.0)
        - f64::max(a.cy - a.h / 2.0, b.cy - b.h / 2.0))
    .max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Head configuration: box normalization scales, pooling voxel, NMS and
/// score thresholds. The detection score of a node is its best
/// non-background class probability times the IoU confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadConfig {
    pub w0: f64,
    pub h0: f64,
    /// Pixel voxel edge; 1 means per-pixel deduplication.
    pub pool_voxel: u32,
    pub nms_iou: f64,
    pub score_threshold: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            w0: 64.0,
            h0: 64.0,
            pool_voxel: 2,
            nms_iou: 0.5,
            score_threshold: 0.1,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w0 <= 0.0 || self.h0 <= 0.0 {
            return Err(Error::Validation("box scale factors must be positive".into()));
        }
        if self.pool_voxel == 0 {
            return Err(Error::Validation("pool voxel must be >= 1".into()));
        }
        Ok(())
    }
}

/// Raw per-node head output.
#[derive(Debug, Clone)]
pub struct NodePrediction {
    /// Row in the graph view this prediction belongs to.
    pub row: u32,
    pub x: u16,
    pub y: u16,
    pub t: i64,
    /// Probabilities over `num_classes + 1` entries; background last.
    pub class_probs: Vec<f64>,
    pub encoded: [f64; 4],
    pub iou_confidence: f64,
}

impl NodePrediction {
    /// Best non-background class and its probability.
    pub fn best_class(&self) -> (u32, f64) {
        let n = self.class_probs.len() - 1;
        let mut best = (0u32, f64::MIN);
        for (c, &p) in self.class_probs[..n].iter().enumerate() {
            if p > best.1 {
                best = (c as u32, p);
            }
        }
        best
    }

    pub fn score(&self) -> f64 {
        self.best_class().1 * self.iou_confidence
    }
}

/// One final detection, as written to the detections CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub t: i64,
    pub class_id: u32,
    pub score: f64,
    pub bbox: BBox,
    /// Row of the surviving node, used only as a deterministic tiebreak.
    pub node_key: u32,
}

/// Runs the detection head over backbone features: one fusion block, a
/// softmax classification branch, and a regression branch whose fifth
/// output squashes to the IoU confidence.
pub fn head_forward(
    model: &ResolvedModel,
    view: &GraphView,
    features: &Tensor,
) -> Vec<NodePrediction> {
    let (cls, reg) = head_dense(model, view, features);
    let n = view.n;
    let classes = cls.cols;
    let mut out = Vec::with_capacity(n);
    for row in 0..n {
        let logits = cls.row(row);
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
        let norm: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= norm);
        debug_assert_eq!(probs.len(), classes);
        let r = reg.row(row);
        let (x, y, t) = view.pos[row];
        out.push(NodePrediction {
            row: row as u32,
            x,
            y,
            t,
            class_probs: probs,
            encoded: [r[0], r[1], r[2], r[3]],
            iou_confidence: 1.0 / (1.0 + (-r[4]).exp()),
        });
    }
    out
}

/// Encodes a ground-truth box relative to a node position:
/// offsets normalized by (w0, h0), log-ratio sizes.
pub fn encode_box(gt: &BBox, node_pos: (f64, f64), cfg: &HeadConfig) -> Result<[f64; 4]> {
    if gt.w <= 0.0 || gt.h <= 0.0 {
        return Err(Error::Validation(format!(
            "box dimensions must be positive, got {}x{}",
            gt.w, gt.h
        )));
    }
    Ok([
        (gt.cx - node_pos.0) / cfg.w0,
        (gt.cy - node_pos.1) / cfg.h0,
        (gt.w / cfg.w0).ln(),
        (gt.h / cfg.h0).ln(),
    ])
}

/// Inverse of [`encode_box`], without sensor clamping.
pub fn decode_box_raw(enc: &[f64; 4], node_pos: (f64, f64), cfg: &HeadConfig) -> BBox {
    BBox {
        cx: enc[0] * cfg.w0 + node_pos.0,
        cy: enc[1] * cfg.h0 + node_pos.1,
        w: cfg.w0 * enc[2].exp(),
        h: cfg.h0 * enc[3].exp(),
    }
}

/// Decodes and clips to the sensor; None when nothing remains inside.
pub fn decode_box(
    enc: &[f64; 4],
    node_pos: (f64, f64),
    cfg: &HeadConfig,
    geometry: &SensorGeometry,
) -> Option<BBox> {
    let b = decode_box_raw(enc, node_pos, cfg);
    let x0 = (b.cx - b.w / 2.0).max(0.0);
    let x1 = (b.cx + b.w / 2.0).min(geometry.width as f64);
    let y0 = (b.cy - b.h / 2.0).max(0.0);
    let y1 = (b.cy + b.h / 2.0).min(geometry.height as f64);
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    Some(BBox {
        cx: (x0 + x1) / 2.0,
        cy: (y0 + y1) / 2.0,
        w: x1 - x0,
        h: y1 - y0,
    })
}

/// Keeps the best-scoring prediction per pooling cell. Ties go to the
/// earlier node. Output is ordered by node row.
pub fn active_region_pool(preds: &[NodePrediction], cfg: &HeadConfig) -> Vec<NodePrediction> {
    let v = cfg.pool_voxel.max(1);
    let mut best: HashMap<(u32, u32), (f64, u32, usize)> = HashMap::new();
    for (i, p) in preds.iter().enumerate() {
        let cell = (p.x as u32 / v, p.y as u32 / v);
        let score = p.score();
        match best.get_mut(&cell) {
            Some(slot) => {
                if score > slot.0 || (score == slot.0 && p.row < slot.1) {
                    *slot = (score, p.row, i);
                }
            }
            None => {
                best.insert(cell, (score, p.row, i));
            }
        }
    }
    let mut keep: Vec<usize> = best.into_values().map(|(_, _, i)| i).collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| preds[i].clone()).collect()
}

/// Greedy per-class non-maximum suppression: descending score, ties by
/// earlier node; a box is dropped when its IoU with a kept box of the
/// same class exceeds the threshold.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap()
            .then(dets[a].node_key.cmp(&dets[b].node_key))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = &dets[i];
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(*d);
        }
    }
    kept
}

/// Full post-processing of one window's predictions into detections at
/// label time `t`: pool, decode at the surviving node's own position,
/// threshold, then NMS.
pub fn postprocess(
    preds: &[NodePrediction],
    cfg: &HeadConfig,
    geometry: &SensorGeometry,
    t: i64,
) -> Vec<Detection> {
    let pooled = active_region_pool(preds, cfg);
    let mut dets = Vec::new();
    for p in &pooled {
        let score = p.score();
        if score < cfg.score_threshold {
            continue;
        }
        let (class_id, _) = p.best_class();
        if let Some(bbox) = decode_box(&p.encoded, (p.x as f64, p.y as f64), cfg, geometry) {
            dets.push(Detection {
                t,
                class_id,
                score,
                bbox,
                node_key: p.row,
            });
        }
    }
    nms(&dets, cfg.nms_iou)
}

// ---------------------------------------------------------------------------
// Target assignment (shared with training).
// ---------------------------------------------------------------------------

/// Ground-truth assignment of one node: an object class below
/// `num_classes`, or background (= `num_classes`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeTarget {
    pub class: u32,
    pub gt: Option<BBox>,
}

/// Assigns each node the smallest-area box containing its pixel at the
/// label time nearest its timestamp; nodes outside every box are
/// background.
pub fn assign_targets(view: &GraphView, gts: &[LabeledBox], num_classes: u32) -> Vec<NodeTarget> {
    let mut times: Vec<i64> = gts.iter().map(|b| b.t).collect();
    times.sort_unstable();
    times.dedup();
    view.pos
        .iter()
        .map(|&(x, y, t)| {
            if times.is_empty() {
                return NodeTarget {
                    class: num_classes,
                    gt: None,
                };
            }
            let nearest = *times
                .iter()
                .min_by_key(|&&lt| ((lt - t).abs(), lt))
                .unwrap();
            let (px, py) = (x as f64, y as f64);
            let mut best: Option<(f64, &LabeledBox)> = None;
            for b in gts.iter().filter(|b| b.t == nearest) {
                let inside = (px - b.cx).abs() <= b.w / 2.0 && (py - b.cy).abs() <= b.h / 2.0;
                if inside && b.class_id < num_classes {
                    let area = b.w * b.h;
                    if best.is_none_or(|(a, _)| area < a) {
                        best = Some((area, b));
                    }
                }
            }
            match best {
                Some((_, b)) => NodeTarget {
                    class: b.class_id,
                    gt: Some(BBox::new(b.cx, b.cy, b.w, b.h)),
                },
                None => NodeTarget {
                    class: num_classes,
                    gt: None,
                },
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

/// Average precision per (class, IoU threshold) plus the aggregates.
#[derive(Debug, Clone)]
pub struct MapReport {
    pub classes: Vec<u32>,
    pub thresholds: Vec<f64>,
    /// ap[class_index][threshold_index]
    pub ap: Vec<Vec<f64>>,
    pub map: f64,
    pub map50: f64,
}

/// The COCO-style threshold sweep 0.50:0.05:0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Interpolated average precision over grouped-by-timestamp detections.
/// Classes absent from the ground truth are skipped; with no ground truth
/// at all every score is 0.
pub fn evaluate_map(dets: &[Detection], gts: &[LabeledBox], thresholds: &[f64]) -> MapReport {
    let mut classes: Vec<u32> = gts.iter().map(|g| g.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut ap = vec![vec![0.0; thresholds.len()]; classes.len()];
    for (ci, &class) in classes.iter().enumerate() {
        let class_gts: Vec<&LabeledBox> = gts.iter().filter(|g| g.class_id == class).collect();
        let mut class_dets: Vec<&Detection> = dets.iter().filter(|d| d.class_id == class).collect();
        class_dets.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then(a.t.cmp(&b.t))
                .then(a.node_key.cmp(&b.node_key))
                .then(a.bbox.cx.partial_cmp(&b.bbox.cx).unwrap())
        });
        for (ti, &thr) in thresholds.iter().enumerate() {
            ap[ci][ti] = average_precision(&class_dets, &class_gts, thr);
        }
    }
    let map50 = {
        let t50 = thresholds.iter().position(|&t| (t - 0.5).abs() < 1e-9);
        match t50 {
            Some(ti) if !classes.is_empty() => {
                ap.iter().map(|row| row[ti]).sum::<f64>() / classes.len() as f64
            }
            _ => 0.0,
        }
    };
    let map = if classes.is_empty() || thresholds.is_empty() {
        0.0
    } else {
        ap.iter().flatten().sum::<f64>() / (classes.len() * thresholds.len()) as f64
    };
    MapReport {
        classes,
        thresholds: thresholds.to_vec(),
        ap,
        map,
        map50,
    }
}

fn average_precision(dets: &[&Detection], gts: &[&LabeledBox], thr: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut matched = vec![false; gts.len()];
    let mut tps: Vec<bool> = Vec::with_capacity(dets.len());
    for d in dets {
        let mut best: Option<(f64, usize)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if matched[gi] || g.t != d.t {
                continue;
            }
            let gb = BBox::new(g.cx, g.cy, g.w, g.h);
            let v = iou(&d.bbox, &gb);
            if v >= thr && best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, gi));
            }
        }
        match best {
            Some((_, gi)) => {
                matched[gi] = true;
                tps.push(true);
            }
            None => tps.push(false),
        }
    }
    // 101-point interpolation: mean over recall grid of the maximum
    // precision at recall >= r.
    let total = gts.len() as f64;
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(tps.len());
    let mut tp = 0usize;
    for (rank, &is_tp) in tps.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        let recall = tp as f64 / total;
        let precision = tp as f64 / (rank + 1) as f64;
        curve.push((recall, precision));
    }
    let mut sum = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        let p = curve
            .iter()
            .filter(|&&(rec, _)| rec >= r - 1e-12)
            .map(|&(_, p)| p)
            .fold(0.0, f64::max);
        sum += p;
    }
    sum / 101.0
}

impl MapReport {
    /// Human-readable AP table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:>8} {:>8}", "class", "AP@50", "AP");
        for (ci, &class) in self.classes.iter().enumerate() {
            let ap50 = self
                .thresholds
                .iter()
                .position(|&t| (t - 0.5).abs() < 1e-9)
                .map_or(0.0, |ti| self.ap[ci][ti]);
            let ap_mean = self.ap[ci].iter().sum::<f64>() / self.thresholds.len().max(1) as f64;
            let _ = writeln!(out, "{:<8} {:>8.4} {:>8.4}", class, ap50, ap_mean);
        }
        let _ = writeln!(out, "{:<8} {:>8.4} {:>8.4}", "mAP", self.map50, self.map);
        out
    }

    /// Machine-readable CSV: `class,iou_threshold,ap` plus aggregate rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# class,iou_threshold,ap\n");
        for (ci, &class) in self.classes.iter().enumerate() {
            for (ti, &thr) in self.thresholds.iter().enumerate() {
                let _ = writeln!(out, "{},{},{}", class, thr, self.ap[ci][ti]);
            }
        }
        let _ = writeln!(out, "mAP50,,{}", self.map50);
        let _ = writeln!(out, "mAP,,{}", self.map);
        out
    }
}

// ---------------------------------------------------------------------------
// Detections CSV.
// ---------------------------------------------------------------------------

/// `t_us,class_id,score,cx,cy,w,h`, one detection per line.
pub fn write_detections(dets: &[Detection]) -> String {
    let mut out = String::from("# t_us,class_id,score,cx,cy,w,h\n");
    for d in dets {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            d.t, d.class_id, d.score, d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h
        );
    }
    out
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(Error::parse(
                lineno + 1,
                format!("expected 7 fields, got {}", fields.len()),
            ));
        }
        let err = |name: &str, v: &str| Error::parse(lineno + 1, format!("invalid `{name}` `{v}`"));
        out.push(Detection {
            t: fields[0].parse().map_err(|_| err("t_us", fields[0]))?,
            class_id: fields[1].parse().map_err(|_| err("class_id", fields[1]))?,
            score: fields[2].parse().map_err(|_| err("score", fields[2]))?,
            bbox: BBox::new(
                fields[3].parse().map_err(|_| err("cx", fields[3]))?,
                fields[4].parse().map_err(|_| err("cy", fields[4]))?,
                fields[5].parse().map_err(|_| err("w", fields[5]))?,
                fields[6].parse().map_err(|_| err("h", fields[6]))?,
            ),
            node_key: out.len() as u32,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> HeadConfig {
        HeadConfig::default()
    }

    #[test]
    fn encode_identity_case_is_zero() {
        let b = BBox::new(100.0, 80.0, 64.0, 64.0);
        let enc = encode_box(&b, (100.0, 80.0), &cfg()).unwrap();
        assert_eq!(enc, [0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn encode_offset_and_log_sizes() {
        let b = BBox::new(110.0, 80.0, 32.0, 64.0);
        let enc = encode_box(&b, (100.0, 80.0), &cfg()).unwrap();
        assert!((enc[0] - 0.15625).abs() < 1e-12);
        assert!((enc[2] - 0.5f64.ln()).abs() < 1e-12);
        assert!((enc[2] + 0.693147).abs() < 1e-5);
        assert_eq!(enc[3], 0.0);
    }

    #[test]
    fn encode_rejects_degenerate_boxes() {
        let b = BBox::new(10.0, 10.0, 0.0, 5.0);
        assert!(encode_box(&b, (0.0, 0.0), &cfg()).is_err());
    }

    #[test]
    fn decode_zeros_centers_at_node() {
        let geom = SensorGeometry::new(304, 240).unwrap();
        let b = decode_box(&[0.0; 4], (100.0, 80.0), &cfg(), &geom).unwrap();
        assert_eq!(b, BBox::new(100.0, 80.0, 64.0, 64.0));
        let raw = decode_box_raw(&[0.0, 0.0, 2.0f64.ln(), 0.0], (100.0, 80.0), &cfg());
        assert!((raw.w - 128.0).abs() < 1e-9);
    }

    #[test]
    fn decode_encode_roundtrip() {
        let geom = SensorGeometry::new(304, 240).unwrap();
        let c = cfg();
        let boxes = [
            BBox::new(50.5, 60.25, 20.0, 14.0),
            BBox::new(150.0, 120.0, 64.0, 48.0),
            BBox::new(10.0, 10.0, 18.0, 18.0),
        ];
        for b in boxes {
            let enc = encode_box(&b, (48.0, 55.0), &c).unwrap();
            let back = decode_box(&enc, (48.0, 55.0), &c, &geom).unwrap();
            assert!((back.cx - b.cx).abs() < 1e-9);
            assert!((back.w - b.w).abs() < 1e-9);
        }
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        let far = BBox::new(10.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&a, &far), 0.0);
        let shifted = BBox::new(0.5, 0.0, 1.0, 1.0);
        assert!((iou(&a, &shifted) - 1.0 / 3.0).abs() < 1e-12);
        // Symmetry.
        assert_eq!(iou(&a, &shifted), iou(&shifted, &a));
    }

    fn pred(x: u16, y: u16, row: u32, obj_prob: f64) -> NodePrediction {
        NodePrediction {
            row,
            x,
            y,
            t: 0,
            class_probs: vec![obj_prob, 1.0 - obj_prob],
            encoded: [0.0; 4],
            iou_confidence: 1.0,
        }
    }

    #[test]
    fn pool_keeps_best_per_cell() {
        let preds = vec![pred(0, 0, 0, 0.7), pred(1, 1, 1, 0.9), pred(4, 0, 2, 0.5)];
        let kept = active_region_pool(&preds, &cfg());
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].row, 1); // the 0.9 one in cell (0,0)
        assert_eq!(kept[1].row, 2);
    }

    #[test]
    fn pool_voxel_one_dedupes_per_pixel() {
        let mut c = cfg();
        c.pool_voxel = 1;
        let preds = vec![pred(3, 3, 0, 0.6), pred(3, 3, 1, 0.8), pred(4, 3, 2, 0.4)];
        let kept = active_region_pool(&preds, &c);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].row, 1);
    }

    fn det(cx: f64, score: f64, class_id: u32, key: u32) -> Detection {
        Detection {
            t: 0,
            class_id,
            score,
            bbox: BBox::new(cx, 0.0, 2.0, 2.0),
            node_key: key,
        }
    }

    #[test]
    fn nms_keeps_highest_of_identical_boxes() {
        let dets = vec![det(0.0, 0.9, 0, 0), det(0.0, 0.8, 0, 1)];
        let kept = nms(&dets, 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn nms_keeps_disjoint_boxes() {
        let dets = vec![det(0.0, 0.9, 0, 0), det(10.0, 0.8, 0, 1)];
        assert_eq!(nms(&dets, 0.5).len(), 2);
    }

    #[test]
    fn nms_is_greedy_not_transitive() {
        // A overlaps B, B overlaps C, A and C disjoint: keep {A, C}.
        let dets = vec![det(0.0, 0.9, 0, 0), det(1.2, 0.8, 0, 1), det(2.4, 0.7, 0, 2)];
        let kept = nms(&dets, 0.2);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].bbox.cx, 0.0);
        assert_eq!(kept[1].bbox.cx, 2.4);
    }

    #[test]
    fn nms_ignores_other_classes() {
        let dets = vec![det(0.0, 0.9, 0, 0), det(0.0, 0.8, 1, 1)];
        assert_eq!(nms(&dets, 0.5).len(), 2);
    }

    fn gt(t: i64, class_id: u32, cx: f64) -> LabeledBox {
        LabeledBox {
            t,
            class_id,
            cx,
            cy: 0.0,
            w: 2.0,
            h: 2.0,
        }
    }

    #[test]
    fn map_perfect_detections_score_one() {
        let gts = vec![gt(0, 0, 5.0), gt(0, 1, 20.0)];
        let dets = vec![
            Detection { t: 0, class_id: 0, score: 1.0, bbox: BBox::new(5.0, 0.0, 2.0, 2.0), node_key: 0 },
            Detection { t: 0, class_id: 1, score: 1.0, bbox: BBox::new(20.0, 0.0, 2.0, 2.0), node_key: 1 },
        ];
        let r = evaluate_map(&dets, &gts, &coco_thresholds());
        assert_eq!(r.map, 1.0);
        assert_eq!(r.map50, 1.0);
    }

    #[test]
    fn map_no_detections_scores_zero() {
        let gts = vec![gt(0, 0, 5.0)];
        let r = evaluate_map(&[], &gts, &coco_thresholds());
        assert_eq!(r.map, 0.0);
        assert_eq!(r.map50, 0.0);
    }

    #[test]
    fn map_single_tp_with_trailing_fp_is_one_at_50() {
        // One GT; rank 1 is a TP at IoU 0.6, rank 2 a FP. Recall reaches 1
        // with precision 1, so interpolated AP@50 stays 1.
        let gts = vec![gt(0, 0, 0.0)];
        let dets = vec![
            Detection {
                t: 0,
                class_id: 0,
                score: 0.9,
                // IoU with the 2x2 gt box: offset 0.5 in x → 0.6.
                bbox: BBox::new(0.5, 0.0, 2.0, 2.0),
                node_key: 0,
            },
            Detection {
                t: 0,
                class_id: 0,
                score: 0.5,
                bbox: BBox::new(50.0, 0.0, 2.0, 2.0),
                node_key: 1,
            },
        ];
        let r = evaluate_map(&dets, &gts, &[0.5]);
        let got = r.ap[0][0];
        assert!((got - 1.0).abs() < 1e-12, "AP@50 = {got}");
        // At a 0.65 threshold the same TP no longer matches.
        let r = evaluate_map(&dets, &gts, &[0.65]);
        assert_eq!(r.ap[0][0], 0.0);
    }

    #[test]
    fn map_is_order_invariant_at_equal_scores() {
        let gts = vec![gt(0, 0, 0.0), gt(0, 0, 30.0)];
        let a = Detection { t: 0, class_id: 0, score: 0.7, bbox: BBox::new(0.0, 0.0, 2.0, 2.0), node_key: 0 };
        let b = Detection { t: 0, class_id: 0, score: 0.7, bbox: BBox::new(30.0, 0.0, 2.0, 2.0), node_key: 1 };
        let r1 = evaluate_map(&[a, b], &gts, &[0.5]);
        let r2 = evaluate_map(&[b, a], &gts, &[0.5]);
        assert_eq!(r1.ap, r2.ap);
    }

    #[test]
    fn removing_a_false_positive_never_lowers_ap() {
        let gts = vec![gt(0, 0, 0.0)];
        let tp = Detection { t: 0, class_id: 0, score: 0.6, bbox: BBox::new(0.0, 0.0, 2.0, 2.0), node_key: 0 };
        let fp = Detection { t: 0, class_id: 0, score: 0.9, bbox: BBox::new(50.0, 0.0, 2.0, 2.0), node_key: 1 };
        let with_fp = evaluate_map(&[tp, fp], &gts, &[0.5]).map50;
        let without = evaluate_map(&[tp], &gts, &[0.5]).map50;
        assert!(without >= with_fp);
        // Here the FP outranks the TP, so it strictly hurts.
        assert!(without > with_fp);
    }

    #[test]
    fn detections_csv_roundtrip_is_byte_identical() {
        let dets = vec![
            Detection { t: 33_333, class_id: 0, score: 0.925, bbox: BBox::new(40.5, 60.0, 24.0, 24.0), node_key: 0 },
            Detection { t: 66_667, class_id: 1, score: 0.5, bbox: BBox::new(90.0, 100.25, 32.0, 16.0), node_key: 1 },
        ];
        let text = write_detections(&dets);
        let parsed = parse_detections(&text).unwrap();
        assert_eq!(write_detections(&parsed), text);
    }

    #[test]
    fn zero_weights_give_uniform_classes_and_half_confidence() {
        use crate::events::{Event, EventStream};
        use crate::graph::{build_graph, GraphConfig};
        use crate::nn::{backbone_dense, ModelConfig, ModelDesc, ModelParams, ResolvedModel};
        use crate::tape::Tensor;
        let geom = SensorGeometry::new(304, 240).unwrap();
        let events = vec![Event::new(0, 10, 10, 1), Event::new(1_000, 11, 10, -1)];
        let stream = EventStream::new(events, geom).unwrap();
        let g = build_graph(&stream, &GraphConfig::default()).unwrap();
        let view = crate::nn::GraphView::from_graph(&g).unwrap();
        let model_cfg = ModelConfig::desk(2);
        let desc = ModelDesc::new(&model_cfg).unwrap();
        let mut params = ModelParams::init(&model_cfg, 0).unwrap();
        // Zero the head branches: logits and regression all vanish.
        for name in ["head.cls.w", "head.reg.w"] {
            let t = params.get(name).unwrap();
            let z = Tensor::zeros(t.rows, t.cols);
            params.insert(name, z);
        }
        let model = ResolvedModel::new(&desc, &params).unwrap();
        let feats = backbone_dense(&model, &view, None);
        let preds = head_forward(&model, &view, &feats);
        for p in &preds {
            for &prob in &p.class_probs {
                assert!((prob - 1.0 / 3.0).abs() < 1e-12, "uniform over n+1 classes");
            }
            assert!((p.iou_confidence - 0.5).abs() < 1e-12);
            let total: f64 = p.class_probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn class_probabilities_sum_to_one_for_random_weights() {
        use crate::events::{Event, EventStream};
        use crate::graph::{build_graph, GraphConfig};
        use crate::nn::{backbone_dense, ModelConfig, ModelDesc, ModelParams, ResolvedModel};
        let geom = SensorGeometry::new(304, 240).unwrap();
        let events: Vec<Event> = (0..20)
            .map(|i| Event::new(i * 500, 100 + (i % 5) as u16, 100, 1))
            .collect();
        let stream = EventStream::new(events, geom).unwrap();
        let g = build_graph(&stream, &GraphConfig::default()).unwrap();
        let view = crate::nn::GraphView::from_graph(&g).unwrap();
        let model_cfg = ModelConfig::desk(3);
        let desc = ModelDesc::new(&model_cfg).unwrap();
        let params = ModelParams::init(&model_cfg, 8).unwrap();
        let model = ResolvedModel::new(&desc, &params).unwrap();
        let feats = backbone_dense(&model, &view, None);
        for p in head_forward(&model, &view, &feats) {
            let total: f64 = p.class_probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert!(p.class_probs.iter().all(|&v| v >= 0.0));
            assert!((0.0..=1.0).contains(&p.iou_confidence));
        }
    }

    #[test]
    fn assign_targets_picks_smallest_covering_box_at_nearest_time() {
        use crate::events::{Event, EventStream};
        use crate::graph::{build_graph, GraphConfig};
        let geom = SensorGeometry::new(304, 240).unwrap();
        let events = vec![
            Event::new(10_000, 50, 50, 1),  // inside both boxes at t=0
            Event::new(90_000, 50, 50, 1),  // nearest label t=100k, box moved away
            Event::new(95_000, 200, 200, 1), // background everywhere
        ];
        let stream = EventStream::new(events, geom).unwrap();
        let g = build_graph(&stream, &GraphConfig::default()).unwrap();
        let view = GraphView::from_graph(&g).unwrap();
        let gts = vec![
            LabeledBox { t: 0, class_id: 0, cx: 50.0, cy: 50.0, w: 40.0, h: 40.0 },
            LabeledBox { t: 0, class_id: 1, cx: 50.0, cy: 50.0, w: 20.0, h: 20.0 },
            LabeledBox { t: 100_000, class_id: 0, cx: 150.0, cy: 50.0, w: 40.0, h: 40.0 },
        ];
        let targets = assign_targets(&view, &gts, 2);
        assert_eq!(targets[0].class, 1, "smallest covering box wins");
        assert_eq!(targets[1].class, 2, "box moved away; node is background");
        assert_eq!(targets[2].class, 2);
    }
}
