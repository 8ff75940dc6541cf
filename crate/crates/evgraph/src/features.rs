//! Feature export: principal-component projection of per-node features
//! to RGB colors, written as a CSV plus an uncompressed raster overlay.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::events::SensorGeometry;
use crate::nn::{backbone_dense, DenseTrace, GraphView, ResolvedModel};
use crate::tape::Tensor;

/// Which per-layer feature map to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureBranch {
    /// Spatial (spline) branch output.
    Ssl,
    /// Temporal (attention) branch output.
    Mvl,
    /// Fused block output.
    Fused,
}

impl FeatureBranch {
    pub fn parse(s: &str) -> Result<FeatureBranch> {
        match s {
            "ssl" => Ok(FeatureBranch::Ssl),
            "mvl" => Ok(FeatureBranch::Mvl),
            "fused" => Ok(FeatureBranch::Fused),
            other => Err(Error::Usage(format!(
                "unknown feature branch `{other}` (expected ssl, mvl, or fused)"
            ))),
        }
    }
}

/// Top-k principal directions of the rows of `x` by power iteration with
/// deflation, plus the explained variances. Deterministic: iteration
/// starts from the coordinate axis with the largest column variance.
pub fn principal_components(x: &Tensor, k: usize, iters: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = x.rows;
    let c = x.cols;
    if n < k {
        return Err(Error::Validation(format!(
            "need at least {k} rows for {k} components, got {n}"
        )));
    }
    // Column-centered covariance.
    let mut mean = vec![0.0; c];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; c * c];
    for r in 0..n {
        let row = x.row(r);
        for i in 0..c {
            let di = row[i] - mean[i];
            if di == 0.0 {
                continue;
            }
            for j in 0..c {
                cov[i * c + j] += di * (row[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().for_each(|v| *v /= n as f64);

    let mut comps = Vec::with_capacity(k);
    let mut lambdas = Vec::with_capacity(k);
    let mut work = cov.clone();
    for _ in 0..k {
        // Start axis: the largest remaining diagonal entry.
        let start = (0..c)
            .max_by(|&a, &b| work[a * c + a].partial_cmp(&work[b * c + b]).unwrap())
            .unwrap_or(0);
        let mut v = vec![0.0; c];
        v[start] = 1.0;
        let mut lambda = 0.0;
        for _ in 0..iters {
            let mut next = vec![0.0; c];
            for i in 0..c {
                let mut acc = 0.0;
                for j in 0..c {
                    acc += work[i * c + j] * v[j];
                }
                next[i] = acc;
            }
            let norm = next.iter().map(|&a| a * a).sum::<f64>().sqrt();
            if norm < 1e-300 {
                break;
            }
            next.iter_mut().for_each(|a| *a /= norm);
            lambda = norm;
            v = next;
        }
        // Deflate.
        for i in 0..c {
            for j in 0..c {
                work[i * c + j] -= lambda * v[i] * v[j];
            }
        }
        comps.push(v);
        lambdas.push(lambda);
    }
    Ok((comps, lambdas))
}

/// Projects rows onto the components and rescales each channel into
/// 0..=255. Identical rows map to identical colors.
pub fn project_to_rgb(x: &Tensor, comps: &[Vec<f64>]) -> Vec<[u8; 3]> {
    let n = x.rows;
    let k = comps.len().min(3);
    let mut proj = vec![[0.0f64; 3]; n];
    for (r, p) in proj.iter_mut().enumerate() {
        let row = x.row(r);
        for (ci, comp) in comps.iter().take(k).enumerate() {
            p[ci] = row.iter().zip(comp).map(|(&a, &b)| a * b).sum();
        }
    }
    let mut out = vec![[0u8; 3]; n];
    for ci in 0..k {
        let lo = proj.iter().map(|p| p[ci]).fold(f64::INFINITY, f64::min);
        let hi = proj.iter().map(|p| p[ci]).fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        for (o, p) in out.iter_mut().zip(&proj) {
            o[ci] = (((p[ci] - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Runs the backbone with tracing and returns the selected feature map.
pub fn layer_features(
    model: &ResolvedModel,
    view: &GraphView,
    branch: FeatureBranch,
    layer: usize,
) -> Result<Tensor> {
    let mut trace = DenseTrace::default();
    let _ = backbone_dense(model, view, Some(&mut trace));
    let block = trace
        .blocks
        .get(layer)
        .ok_or_else(|| Error::Usage(format!("layer {layer} out of range")))?;
    match branch {
        FeatureBranch::Ssl => block
            .0
            .clone()
            .ok_or_else(|| Error::Usage("spatial branch disabled in this model".into())),
        FeatureBranch::Mvl => block
            .1
            .clone()
            .ok_or_else(|| Error::Usage("temporal branch disabled in this model".into())),
        FeatureBranch::Fused => Ok(block.2.clone()),
    }
}

/// Per-node CSV: `x,y,t,r,g,b`.
pub fn features_csv(view: &GraphView, colors: &[[u8; 3]]) -> String {
    let mut out = String::from("# x,y,t,r,g,b\n");
    for (row, &(x, y, t)) in view.pos.iter().enumerate() {
        let c = colors[row];
        let _ = writeln!(out, "{},{},{},{},{},{}", x, y, t, c[0], c[1], c[2]);
    }
    out
}

/// Binary PPM (P6) raster: black background, one colored pixel per node;
/// later nodes overwrite earlier ones.
pub fn write_ppm(geometry: &SensorGeometry, view: &GraphView, colors: &[[u8; 3]]) -> Vec<u8> {
    let w = geometry.width as usize;
    let h = geometry.height as usize;
    let mut pixels = vec![0u8; w * h * 3];
    for (row, &(x, y, _)) in view.pos.iter().enumerate() {
        let idx = (y as usize * w + x as usize) * 3;
        pixels[idx..idx + 3].copy_from_slice(&colors[row]);
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    out
}
