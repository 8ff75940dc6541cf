//! Anisotropic B-spline convolution over spatial edges.
//!
//! Edge pseudo-coordinates in [0,1]³ select control points of a
//! (k_x, k_y, k_t) kernel grid through degree-1 B-spline basis functions;
//! the message of an edge is the basis-weighted sum of per-cell linear
//! maps applied to the source feature. With k_t = 1 the temporal factor
//! is the constant 1 and the kernel is effectively two-dimensional. A
//! node's output is its bias plus a root transform of itself plus the
//! mean of its in-edge messages.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nn::SpatialCsr;
use crate::tape::{Tape, TapeOp, Tensor, Var};

/// Shape of one spline convolution: control grid, degree, channel widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplineDesc {
    pub grid: (usize, usize, usize),
    pub degree: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl SplineDesc {
    pub fn new(grid: (usize, usize, usize), c_in: usize, c_out: usize) -> Result<Self> {
        if grid.0 == 0 || grid.1 == 0 || grid.2 == 0 {
            return Err(Error::Validation("kernel grid dims must be >= 1".into()));
        }
        Ok(SplineDesc {
            grid,
            degree: 1,
            c_in,
            c_out,
        })
    }

    pub fn kernel_cells(&self) -> usize {
        self.grid.0 * self.grid.1 * self.grid.2
    }

    /// Active basis cells per edge for the linear (degree-1) basis.
    pub fn active_cells(&self) -> usize {
        let per_dim = |k: usize| if k > 1 { 2 } else { 1 };
        per_dim(self.grid.0) * per_dim(self.grid.1) * per_dim(self.grid.2)
    }

    pub fn weight_shape(&self) -> (usize, usize) {
        (self.kernel_cells() * self.c_in, self.c_out)
    }
}

/// Degree-1 B-spline basis over an open uniform knot vector on [0,1]:
/// the pairs of (control index, weight) with nonzero weight at `u`.
/// Weights always sum to 1.
pub fn basis(u: f64, k: usize, degree: usize) -> Result<Vec<(usize, f64)>> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Validation(format!("basis input {u} outside [0,1]")));
    }
    if degree != 1 {
        return Err(Error::Validation(format!(
            "only degree-1 basis is supported, got {degree}"
        )));
    }
    if k == 0 {
        return Err(Error::Validation("control count must be >= 1".into()));
    }
    if k == 1 {
        return Ok(vec![(0, 1.0)]);
    }
    let s = u * (k - 1) as f64;
    let i = (s.floor() as usize).min(k - 2);
    let frac = s - i as f64;
    Ok(vec![(i, 1.0 - frac), (i + 1, frac)])
}

/// Tensor-product basis over the kernel grid for one edge attribute.
/// Cells are linearized as `(ix * k_y + iy) * k_t + it`.
pub fn edge_basis(attr: &[f64; 3], grid: (usize, usize, usize)) -> Vec<(u32, f64)> {
    let clamp01 = |v: f64| v.clamp(0.0, 1.0);
    let bx = basis(clamp01(attr[0]), grid.0, 1).expect("basis in range");
    let by = basis(clamp01(attr[1]), grid.1, 1).expect("basis in range");
    let bt = basis(clamp01(attr[2]), grid.2, 1).expect("basis in range");
    let mut out = Vec::with_capacity(bx.len() * by.len() * bt.len());
    for &(ix, wx) in &bx {
        for &(iy, wy) in &by {
            for &(it, wt) in &bt {
                let cell = (ix * grid.1 + iy) * grid.2 + it;
                out.push((cell as u32, wx * wy * wt));
            }
        }
    }
    out
}

/// Message of a single edge: Σ over active cells of basis weight times
/// the source feature through that cell's linear map.
pub fn edge_message(h_src: &[f64], attr: &[f64; 3], desc: &SplineDesc, w: &Tensor) -> Vec<f64> {
    let mut out = vec![0.0; desc.c_out];
    accumulate_message(h_src, attr, desc, w, 1.0, &mut out);
    out
}

#[inline]
fn accumulate_message(
    h_src: &[f64],
    attr: &[f64; 3],
    desc: &SplineDesc,
    w: &Tensor,
    scale: f64,
    acc: &mut [f64],
) {
    for (cell, beta) in edge_basis(attr, desc.grid) {
        let base = cell as usize * desc.c_in;
        for (k, &h) in h_src.iter().enumerate() {
            let coeff = scale * beta * h;
            if coeff == 0.0 {
                continue;
            }
            let w_row = w.row(base + k);
            for (a, &wv) in acc.iter_mut().zip(w_row) {
                *a += coeff * wv;
            }
        }
    }
}

/// Forward for one node: `out = bias + h_self·root + mean(messages)`.
/// Shared by the dense, tape, and incremental paths so they agree bitwise.
pub fn spline_node_forward<'a>(
    desc: &SplineDesc,
    w: &Tensor,
    root: &Tensor,
    bias: &Tensor,
    h_self: &[f64],
    edges: impl Iterator<Item = (&'a [f64], &'a [f64; 3])>,
    out: &mut [f64],
) {
    out.copy_from_slice(&bias.data);
    for (k, &h) in h_self.iter().enumerate() {
        if h == 0.0 {
            continue;
        }
        for (o, &rv) in out.iter_mut().zip(root.row(k)) {
            *o += h * rv;
        }
    }
    let mut acc = vec![0.0; desc.c_out];
    let mut deg = 0usize;
    for (h_src, attr) in edges {
        accumulate_message(h_src, attr, desc, w, 1.0, &mut acc);
        deg += 1;
    }
    if deg > 0 {
        let inv = 1.0 / deg as f64;
        for (o, a) in out.iter_mut().zip(acc) {
            *o += a * inv;
        }
    }
}

/// Dense forward over all rows of a CSR edge set.
pub fn ssl_forward_dense(
    csr: &SpatialCsr,
    x: &Tensor,
    desc: &SplineDesc,
    w: &Tensor,
    root: &Tensor,
    bias: &Tensor,
) -> Tensor {
    debug_assert_eq!(x.cols, desc.c_in);
    debug_assert_eq!(w.shape(), desc.weight_shape());
    let n = csr.n();
    let mut out = Tensor::zeros(n, desc.c_out);
    for row in 0..n {
        let edges = csr
            .edges_of(row)
            .map(|e| (x.row(csr.src[e] as usize), &csr.attr[e]));
        let dst = &mut out.data[row * desc.c_out..(row + 1) * desc.c_out];
        spline_node_forward(desc, w, root, bias, x.row(row), edges, dst);
    }
    out
}

struct SplineConvOp {
    csr: Rc<SpatialCsr>,
    desc: SplineDesc,
}

impl TapeOp for SplineConvOp {
    fn backward(&self, _value: &Tensor, grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
        let (x, w, root, _bias) = (parents[0], parents[1], parents[2], parents[3]);
        let desc = &self.desc;
        let mut gx = grad.matmul_t(root);
        let mut gw = Tensor::zeros(w.rows, w.cols);
        let groot = x.t_matmul(grad);
        let gbias = grad.col_sums();
        for row in 0..self.csr.n() {
            let range = self.csr.edges_of(row);
            let deg = range.len();
            if deg == 0 {
                continue;
            }
            let inv = 1.0 / deg as f64;
            let g_row = grad.row(row);
            for e in range {
                let src = self.csr.src[e] as usize;
                let h_src = x.row(src);
                for (cell, beta) in edge_basis(&self.csr.attr[e], desc.grid) {
                    let base = cell as usize * desc.c_in;
                    let scale = beta * inv;
                    for k in 0..desc.c_in {
                        let w_row = w.row(base + k);
                        let h = h_src[k];
                        let mut dot = 0.0;
                        let gw_row = gw.row_mut(base + k);
                        for c in 0..desc.c_out {
                            let g = g_row[c];
                            gw_row[c] += scale * h * g;
                            dot += w_row[c] * g;
                        }
                        gx.row_mut(src)[k] += scale * dot;
                    }
                }
            }
        }
        vec![gx, gw, groot, gbias]
    }
}

/// Records the spline convolution on the tape.
pub fn ssl_forward_tape(
    tape: &mut Tape,
    csr: Rc<SpatialCsr>,
    desc: SplineDesc,
    x: Var,
    w: Var,
    root: Var,
    bias: Var,
) -> Var {
    let value = ssl_forward_dense(
        &csr,
        tape.value(x),
        &desc,
        tape.value(w),
        tape.value(root),
        tape.value(bias),
    );
    tape.record(value, vec![x, w, root, bias], Box::new(SplineConvOp { csr, desc }))
}

/// Learnable element count of one kernel:
/// `k_x·k_y·k_t·C_in·C_out + C_in·C_out + C_out`.
pub fn count_kernel_params(grid: (usize, usize, usize), c_in: usize, c_out: usize) -> usize {
    grid.0 * grid.1 * grid.2 * c_in * c_out + c_in * c_out + c_out
}

/// Analytic FLOP model of one edge message: the formal sum ranges over
/// every kernel cell, each a C_in→C_out multiply-accumulate.
pub fn spline_edge_flops(grid: (usize, usize, usize), c_in: usize, c_out: usize) -> u64 {
    2 * (grid.0 * grid.1 * grid.2 * c_in * c_out) as u64
}
