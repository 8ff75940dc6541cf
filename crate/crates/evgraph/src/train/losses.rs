//! Detection losses over tape-recorded head outputs.
//!
//! Classification is a class-weighted cross-entropy over every node
//! including background. Localization is a complete-IoU loss on decoded
//! boxes and dimension a Huber loss on the encoded sizes, both averaged
//! over non-background nodes only. Confidence is a binary cross-entropy
//! whose target is 1 exactly when the decoded box overlaps its assigned
//! ground truth with IoU at least 0.5.

use crate::detect::{decode_box_raw, encode_box, iou, BBox, HeadConfig, NodeTarget};
use crate::error::Result;
use crate::nn::GraphView;
use crate::tape::{Tape, Tensor, Var};

/// Weights of the four loss components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 2.0,
            gamma: 3.0,
            lambda: 1.5,
        }
    }
}

/// Inverse-frequency class weights normalized to mean 1. `counts` holds
/// node counts per class including background (last).
pub fn class_weights(counts: &[usize]) -> Vec<f64> {
    let raw: Vec<f64> = counts.iter().map(|&c| 1.0 / c.max(1) as f64).collect();
    let mean = raw.iter().sum::<f64>() / raw.len().max(1) as f64;
    raw.into_iter().map(|w| w / mean).collect()
}

/// Per-window training targets assembled from node assignments.
#[derive(Debug, Clone)]
pub struct WindowTargets {
    /// Target class per row; background = num_classes.
    pub classes: Vec<u32>,
    /// Class weight per row.
    pub row_weights: Vec<f64>,
    /// Rows assigned to an object.
    pub positives: Vec<u32>,
    /// Ground-truth box per positive row.
    pub gt_boxes: Vec<BBox>,
    /// Node position per positive row.
    pub node_pos: Vec<(f64, f64)>,
    /// Encoded box targets per positive row, [P][4].
    pub encoded: Tensor,
}

impl WindowTargets {
    pub fn num_positives(&self) -> usize {
        self.positives.len()
    }
}

/// Builds loss targets for one window from per-node assignments.
pub fn build_targets(
    view: &GraphView,
    assignments: &[NodeTarget],
    weights: &[f64],
    cfg: &HeadConfig,
) -> Result<WindowTargets> {
    let mut classes = Vec::with_capacity(view.n);
    let mut row_weights = Vec::with_capacity(view.n);
    let mut positives = Vec::new();
    let mut gt_boxes = Vec::new();
    let mut node_pos = Vec::new();
    let mut encoded_rows = Vec::new();
    for (row, a) in assignments.iter().enumerate() {
        classes.push(a.class);
        row_weights.push(weights.get(a.class as usize).copied().unwrap_or(1.0));
        if let Some(gt) = a.gt {
            let (x, y, _) = view.pos[row];
            let pos = (x as f64, y as f64);
            let enc = encode_box(&gt, pos, cfg)?;
            positives.push(row as u32);
            gt_boxes.push(gt);
            node_pos.push(pos);
            encoded_rows.extend_from_slice(&enc);
        }
    }
    let encoded = Tensor::from_vec(positives.len(), 4, encoded_rows);
    Ok(WindowTargets {
        classes,
        row_weights,
        positives,
        gt_boxes,
        node_pos,
        encoded,
    })
}

/// Weighted cross-entropy over all nodes: -(1/N) Σ w_y · log p[y].
pub fn loss_cls(tape: &mut Tape, cls_logits: Var, targets: &WindowTargets) -> Result<Var> {
    let logp = tape.log_softmax_rows(cls_logits);
    tape.weighted_nll(logp, &targets.classes, &targets.row_weights)
}

/// Complete-IoU loss over positives, on boxes decoded from the
/// regression outputs at each node's own position. Returns a constant 0
/// when the window has no positives.
pub fn loss_loc(tape: &mut Tape, reg: Var, targets: &WindowTargets, cfg: &HeadConfig) -> Var {
    let p = targets.num_positives();
    if p == 0 {
        return tape.leaf(Tensor::scalar(0.0));
    }
    let rows = tape.gather_rows(reg, &targets.positives);
    let xe = tape.slice_cols(rows, 0, 1);
    let ye = tape.slice_cols(rows, 1, 1);
    let we = tape.slice_cols(rows, 2, 1);
    let he = tape.slice_cols(rows, 3, 1);

    // Decode: c = enc·scale + node position, size = scale·exp(enc).
    let pos_x = Tensor::from_vec(p, 1, targets.node_pos.iter().map(|&(x, _)| x).collect());
    let pos_y = Tensor::from_vec(p, 1, targets.node_pos.iter().map(|&(_, y)| y).collect());
    let sx = tape.scale(xe, cfg.w0);
    let cx = tape.add_const(sx, &pos_x);
    let sy = tape.scale(ye, cfg.h0);
    let cy = tape.add_const(sy, &pos_y);
    let ew = tape.exp(we);
    let w = tape.scale(ew, cfg.w0);
    let eh = tape.exp(he);
    let h = tape.scale(eh, cfg.h0);

    // Ground-truth constants.
    let g = |f: &dyn Fn(&BBox) -> f64| {
        Tensor::from_vec(p, 1, targets.gt_boxes.iter().map(f).collect())
    };
    let gx = tape.leaf(g(&|b| b.cx));
    let gy = tape.leaf(g(&|b| b.cy));
    let gx1 = tape.leaf(g(&|b| b.cx - b.w / 2.0));
    let gx2 = tape.leaf(g(&|b| b.cx + b.w / 2.0));
    let gy1 = tape.leaf(g(&|b| b.cy - b.h / 2.0));
    let gy2 = tape.leaf(g(&|b| b.cy + b.h / 2.0));
    let garea = g(&|b| b.w * b.h);
    let gaspect = tape.leaf(g(&|b| (b.w / b.h).atan()));

    let half_w = tape.scale(w, 0.5);
    let half_h = tape.scale(h, 0.5);
    let x1 = tape.sub(cx, half_w);
    let x2 = tape.add(cx, half_w);
    let y1 = tape.sub(cy, half_h);
    let y2 = tape.add(cy, half_h);

    let ix2 = tape.minimum(x2, gx2);
    let ix1 = tape.maximum(x1, gx1);
    let ix_raw = tape.sub(ix2, ix1);
    let ix = tape.clamp_min(ix_raw, 0.0);
    let iy2 = tape.minimum(y2, gy2);
    let iy1 = tape.maximum(y1, gy1);
    let iy_raw = tape.sub(iy2, iy1);
    let iy = tape.clamp_min(iy_raw, 0.0);
    let inter = tape.mul(ix, iy);
    let area = tape.mul(w, h);
    let areas = tape.add_const(area, &garea);
    let union = tape.sub(areas, inter);
    let iou_v = tape.div(inter, union);

    // Center distance over enclosing-box diagonal.
    let dx = tape.sub(cx, gx);
    let dy = tape.sub(cy, gy);
    let dx2 = tape.square(dx);
    let dy2 = tape.square(dy);
    let rho2 = tape.add(dx2, dy2);
    let ex2 = tape.maximum(x2, gx2);
    let ex1 = tape.minimum(x1, gx1);
    let ew_enc = tape.sub(ex2, ex1);
    let ey2 = tape.maximum(y2, gy2);
    let ey1 = tape.minimum(y1, gy1);
    let eh_enc = tape.sub(ey2, ey1);
    let ew2 = tape.square(ew_enc);
    let eh2 = tape.square(eh_enc);
    let c2 = tape.add(ew2, eh2);
    let dist_term = tape.div(rho2, c2);

    // Aspect-ratio penalty with its consistency coefficient.
    let aspect = tape.div(w, h);
    let at = tape.atan(aspect);
    let adiff = tape.sub(at, gaspect);
    let adiff2 = tape.square(adiff);
    let v = tape.scale(adiff2, 4.0 / (std::f64::consts::PI * std::f64::consts::PI));
    let neg_iou = tape.neg(iou_v);
    let one_minus_iou = tape.add_scalar(neg_iou, 1.0);
    let denom_raw = tape.add(one_minus_iou, v);
    let denom = tape.add_scalar(denom_raw, 1e-9);
    let alpha_c = tape.div(v, denom);
    let av = tape.mul(alpha_c, v);

    let l1 = tape.add(one_minus_iou, dist_term);
    let l = tape.add(l1, av);
    tape.mean_all(l)
}

/// Masked mean Huber loss (δ = 1) on the encoded width/height pair.
pub fn loss_dim(tape: &mut Tape, reg: Var, targets: &WindowTargets) -> Var {
    let p = targets.num_positives();
    if p == 0 {
        return tape.leaf(Tensor::scalar(0.0));
    }
    let rows = tape.gather_rows(reg, &targets.positives);
    let wh = tape.slice_cols(rows, 2, 2);
    let mut target = Tensor::zeros(p, 2);
    for row in 0..p {
        target.row_mut(row)[0] = targets.encoded.at(row, 2);
        target.row_mut(row)[1] = targets.encoded.at(row, 3);
    }
    tape.huber_mean(wh, &target, 1.0)
}

/// Confidence target of one node: 1 when its decoded box overlaps the
/// assigned ground truth with IoU >= 0.5, else 0; background target 0.
pub fn conf_target(enc: &[f64; 4], node_pos: (f64, f64), gt: Option<&BBox>, cfg: &HeadConfig) -> f64 {
    match gt {
        Some(g) => {
            let decoded = decode_box_raw(enc, node_pos, cfg);
            if iou(&decoded, g) >= 0.5 {
                1.0
            } else {
                0.0
            }
        }
        None => 0.0,
    }
}

/// Binary cross-entropy of the IoU-confidence logits against targets
/// derived from the current decoded boxes, averaged over all nodes.
pub fn loss_conf(
    tape: &mut Tape,
    reg: Var,
    view: &GraphView,
    assignments: &[crate::detect::NodeTarget],
    targets: &WindowTargets,
    cfg: &HeadConfig,
) -> Var {
    let n = view.n;
    let s_logits = tape.slice_cols(reg, 4, 1);
    let reg_vals = tape.value(reg).clone();
    let mut t = Tensor::zeros(n, 1);
    let _ = targets;
    for (row, a) in assignments.iter().enumerate() {
        let enc = [
            reg_vals.at(row, 0),
            reg_vals.at(row, 1),
            reg_vals.at(row, 2),
            reg_vals.at(row, 3),
        ];
        let (x, y, _) = view.pos[row];
        t.data[row] = conf_target(&enc, (x as f64, y as f64), a.gt.as_ref(), cfg);
    }
    tape.bce_with_logits_mean(s_logits, &t)
}

/// Weighted sum of the four components.
pub fn total_loss(tape: &mut Tape, parts: [Var; 4], w: &LossWeights) -> Var {
    let a = tape.scale(parts[0], w.alpha);
    let b = tape.scale(parts[1], w.beta);
    let c = tape.scale(parts[2], w.gamma);
    let d = tape.scale(parts[3], w.lambda);
    let ab = tape.add(a, b);
    let cd = tape.add(c, d);
    tape.add(ab, cd)
}
