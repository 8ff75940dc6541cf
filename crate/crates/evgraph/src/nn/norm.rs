//! Per-channel batch normalization.
//!
//! Training mode normalizes by the batch statistics of the current node
//! set and reports them so the caller can fold them into running
//! estimates. Eval mode is a frozen affine map built from the running
//! statistics — the only mode valid for per-event incremental inference,
//! where batch statistics would retroactively change past outputs.

use crate::tape::{Tape, TapeOp, Tensor, Var};

/// Frozen eval-mode normalization: `y = x * scale + shift` per channel.
#[derive(Debug, Clone)]
pub struct EvalNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl EvalNorm {
    pub fn new(gamma: &Tensor, beta: &Tensor, running_mean: &Tensor, running_var: &Tensor, eps: f64) -> Self {
        let c = gamma.cols;
        let mut scale = vec![0.0; c];
        let mut shift = vec![0.0; c];
        for i in 0..c {
            let inv = 1.0 / (running_var.data[i] + eps).sqrt();
            scale[i] = gamma.data[i] * inv;
            shift[i] = beta.data[i] - gamma.data[i] * running_mean.data[i] * inv;
        }
        EvalNorm { scale, shift }
    }

    #[inline]
    pub fn apply(&self, row: &mut [f64]) {
        for (v, (&s, &b)) in row.iter_mut().zip(self.scale.iter().zip(&self.shift)) {
            *v = *v * s + b;
        }
    }
}

/// Applies eval-mode normalization to a whole matrix.
pub fn batchnorm_eval_dense(x: &Tensor, norm: &EvalNorm) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows {
        norm.apply(out.row_mut(r));
    }
    out
}

struct BatchNormTrainOp {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl TapeOp for BatchNormTrainOp {
    fn backward(&self, _value: &Tensor, grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
        let (x, gamma, _beta) = (parents[0], parents[1], parents[2]);
        let n = x.rows as f64;
        let c = x.cols;
        let mut g_gamma = Tensor::zeros(1, c);
        let g_beta = grad.col_sums();
        // Column means of g and of g*x̂.
        let mut mean_g = vec![0.0; c];
        let mut mean_gx = vec![0.0; c];
        for r in 0..x.rows {
            let gr = grad.row(r);
            let xr = x.row(r);
            for j in 0..c {
                let xhat = (xr[j] - self.mean[j]) * self.inv_std[j];
                mean_g[j] += gr[j];
                mean_gx[j] += gr[j] * xhat;
            }
        }
        for j in 0..c {
            g_gamma.data[j] = mean_gx[j];
            mean_g[j] /= n;
            mean_gx[j] /= n;
        }
        let mut gx = Tensor::zeros(x.rows, c);
        for r in 0..x.rows {
            let gr = grad.row(r);
            let xr = x.row(r);
            let out = gx.row_mut(r);
            for j in 0..c {
                let xhat = (xr[j] - self.mean[j]) * self.inv_std[j];
                out[j] = gamma.data[j] * self.inv_std[j] * (gr[j] - mean_g[j] - xhat * mean_gx[j]);
            }
        }
        vec![gx, g_gamma, g_beta]
    }
}

struct BatchNormEvalOp {
    scale: Vec<f64>,
    xhat_shift: Vec<f64>, // -running_mean * inv_std, so x̂ = x*inv + shift
    inv_std: Vec<f64>,
}

impl TapeOp for BatchNormEvalOp {
    fn backward(&self, _value: &Tensor, grad: &Tensor, parents: &[&Tensor]) -> Vec<Tensor> {
        let (x, _gamma, _beta) = (parents[0], parents[1], parents[2]);
        let c = x.cols;
        let mut gx = Tensor::zeros(x.rows, c);
        let mut g_gamma = Tensor::zeros(1, c);
        let g_beta = grad.col_sums();
        for r in 0..x.rows {
            let gr = grad.row(r);
            let xr = x.row(r);
            let out = gx.row_mut(r);
            for j in 0..c {
                out[j] = gr[j] * self.scale[j];
                let xhat = xr[j] * self.inv_std[j] + self.xhat_shift[j];
                g_gamma.data[j] += gr[j] * xhat;
            }
        }
        vec![gx, g_gamma, g_beta]
    }
}

/// Batch statistics of a training-mode pass, for running-estimate updates.
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Records batch normalization on the tape. In training mode the batch
/// statistics are returned; in eval mode the provided running statistics
/// freeze the transform into an affine map.
pub fn batchnorm_tape(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    running: Option<(&Tensor, &Tensor)>,
    eps: f64,
) -> (Var, Option<BatchStats>) {
    let t = tape.value(x);
    let c = t.cols;
    let n = t.rows.max(1) as f64;
    match running {
        None => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for r in 0..t.rows {
                for (m, &v) in mean.iter_mut().zip(t.row(r)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            for r in 0..t.rows {
                for (j, &v) in t.row(r).iter().enumerate() {
                    let d = v - mean[j];
                    var[j] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
            let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
            let g = tape.value(gamma).clone();
            let b = tape.value(beta).clone();
            let mut value = Tensor::zeros(t.rows, c);
            for r in 0..t.rows {
                let xr = tape.value(x).row(r).to_vec();
                let out = value.row_mut(r);
                for j in 0..c {
                    let xhat = (xr[j] - mean[j]) * inv_std[j];
                    out[j] = g.data[j] * xhat + b.data[j];
                }
            }
            let stats = BatchStats {
                mean: mean.clone(),
                var: var.clone(),
            };
            let var_out = tape.record(
                value,
                vec![x, gamma, beta],
                Box::new(BatchNormTrainOp { mean, inv_std }),
            );
            (var_out, Some(stats))
        }
        Some((rm, rv)) => {
            let inv_std: Vec<f64> = rv.data.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
            let g = tape.value(gamma).clone();
            let b = tape.value(beta).clone();
            let scale: Vec<f64> = g.data.iter().zip(&inv_std).map(|(&gv, &i)| gv * i).collect();
            let xhat_shift: Vec<f64> = rm
                .data
                .iter()
                .zip(&inv_std)
                .map(|(&m, &i)| -m * i)
                .collect();
            // The value path mirrors EvalNorm exactly.
            let norm = EvalNorm::new(&g, &b, rm, rv, eps);
            let value = batchnorm_eval_dense(tape.value(x), &norm);
            let var_out = tape.record(
                value,
                vec![x, gamma, beta],
                Box::new(BatchNormEvalOp {
                    scale,
                    xhat_shift,
                    inv_std,
                }),
            );
            (var_out, None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::grad_check;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randt(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(rows, cols, data)
    }

    #[test]
    fn train_mode_normalizes_to_zero_mean_unit_var() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = randt(&mut rng, 50, 3);
        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let g = tape.leaf(Tensor::filled(1, 3, 1.0));
        let b = tape.leaf(Tensor::zeros(1, 3));
        let (y, stats) = batchnorm_tape(&mut tape, xv, g, b, None, 1e-5);
        let stats = stats.unwrap();
        assert_eq!(stats.mean.len(), 3);
        let t = tape.value(y);
        for j in 0..3 {
            let mean: f64 = (0..50).map(|r| t.at(r, j)).sum::<f64>() / 50.0;
            let var: f64 = (0..50).map(|r| (t.at(r, j) - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn train_mode_gradients_pass_fd_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs = vec![randt(&mut rng, 12, 3), randt(&mut rng, 1, 3), randt(&mut rng, 1, 3)];
        let err = grad_check(
            &|ins| {
                let mut tape = Tape::new();
                let x = tape.leaf(ins[0].clone());
                let g = tape.leaf(ins[1].clone());
                let b = tape.leaf(ins[2].clone());
                let (y, _) = batchnorm_tape(&mut tape, x, g, b, None, 1e-5);
                let sq = tape.square(y);
                let loss = tape.mean_all(sq);
                (tape, loss)
            },
            &inputs,
            1e-5,
            36,
        );
        assert!(err < 1e-5, "batchnorm train grad error {err}");
    }

    #[test]
    fn eval_mode_is_affine_and_gradients_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rm = randt(&mut rng, 1, 3);
        let rv = randt(&mut rng, 1, 3).map(f64::abs);
        let inputs = vec![randt(&mut rng, 6, 3), randt(&mut rng, 1, 3), randt(&mut rng, 1, 3)];
        let norm = EvalNorm::new(&inputs[1], &inputs[2], &rm, &rv, 1e-5);
        let x = &inputs[0];
        let fx = batchnorm_eval_dense(x, &norm);
        let ax = x.map(|v| 2.0 * v + 0.3);
        let fax = batchnorm_eval_dense(&ax, &norm);
        for r in 0..x.rows {
            for c in 0..x.cols {
                // Affine law: f(2x + 0.3) = 2·f(x) - shift + 0.3·scale.
                let direct = 2.0 * fx.at(r, c) - norm.shift[c] + 0.3 * norm.scale[c];
                assert!((fax.at(r, c) - direct).abs() < 1e-9);
            }
        }
        let err = grad_check(
            &|ins| {
                let mut tape = Tape::new();
                let x = tape.leaf(ins[0].clone());
                let g = tape.leaf(ins[1].clone());
                let b = tape.leaf(ins[2].clone());
                let (y, stats) = batchnorm_tape(&mut tape, x, g, b, Some((&rm, &rv)), 1e-5);
                assert!(stats.is_none());
                let sq = tape.square(y);
                let loss = tape.mean_all(sq);
                (tape, loss)
            },
            &inputs,
            1e-5,
            27,
        );
        assert!(err < 1e-6, "batchnorm eval grad error {err}");
    }
}
