//! Unrolled forward pass and its hand-written reverse pass.

use super::model::{sigmoid, ModelParams};
use super::TrainConfig;
use crate::diffusion::{
    apply_step, energy_delta, neighborhood_operator, op_norm_bound, project_simplex, step_size,
    DiffusionParams, WeightMode,
};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::{normalized_laplacian, Graph};
use crate::sparse::{spmm, spmm_transpose, SparseMatrix};

/// Raw and clipped weight delta used to build `W(t+1)` from `X(t)`.
#[derive(Clone, Debug)]
struct Evolution {
    raw: Vec<f64>,
    norm: f64,
}

/// Everything the reverse pass needs.
#[derive(Clone, Debug)]
pub struct Forward {
    pub predictions: FeatureMatrix,
    /// `X(0) ..= X(T)`.
    pub states: Vec<FeatureMatrix>,
    /// `W(0) .. W(T-1)`.
    pub weights: Vec<SparseMatrix>,
    /// `M(0) .. M(T-1)`.
    pub combined: Vec<SparseMatrix>,
    pub bounds: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: f64,
    features: FeatureMatrix,
    lg: SparseMatrix,
    evolutions: Vec<Evolution>,
    mode: WeightMode,
    max_delta_norm: f64,
    freeze_schedule: bool,
}

impl Forward {
    pub fn steps(&self) -> usize {
        self.weights.len()
    }

    pub fn max_bound(&self) -> f64 {
        self.bounds.iter().cloned().fold(0.0, f64::max)
    }
}

fn nonfinite(x: &FeatureMatrix, what: &str, step: usize) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} at step {step}")))
    }
}

/// `X(0) = tanh(H F + b)`, `T` diffusion steps with derived `lambda`, `mu`
/// and `W(t)`, then `X(T) R + c`. In dynamic mode
/// `W(t+1) = P[W(t) + eta(t) clip(energy_delta(X(t)))]`.
pub fn forward(
    g: &Graph,
    h: &FeatureMatrix,
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<Forward> {
    if h.rows() != g.n() {
        return Err(Error::ShapeMismatch {
            op: "forward",
            expected: (g.n(), params.f_weight.rows()),
            found: h.shape(),
        });
    }
    params.check(g, h.cols())?;
    let support = g.support();
    let lg = normalized_laplacian(g);
    let lambda = params.lambda();
    let mu = params.mu();
    let dp = DiffusionParams {
        alpha: params.alpha,
        lambda: lambda.clone(),
        mu,
        steps: cfg.steps,
    };
    let one_minus: Vec<f64> = lambda.iter().map(|l| 1.0 - l).collect();

    let mut x0 = h.matmul(&params.f_weight)?;
    for i in 0..x0.rows() {
        for (v, b) in x0.row_mut(i).iter_mut().zip(&params.f_bias) {
            *v = (*v + b).tanh();
        }
    }
    nonfinite(&x0, "initial transform", 0)?;

    let mut states = vec![x0];
    let mut weights = vec![params.weights(&support)];
    let mut combined = Vec::with_capacity(cfg.steps);
    let mut bounds = Vec::with_capacity(cfg.steps);
    let mut evolutions = Vec::new();
    for t in 0..cfg.steps {
        if t > 0 && cfg.weight_mode == WeightMode::Dynamic {
            let prev = &weights[t - 1];
            let raw = energy_delta(&states[t - 1], prev).values().to_vec();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = if norm > cfg.max_delta_norm {
                cfg.max_delta_norm / norm
            } else {
                1.0
            };
            let eta = step_size(t - 1);
            let mut values: Vec<f64> = prev
                .values()
                .iter()
                .zip(&raw)
                .map(|(w, u)| w + eta * (u * scale))
                .collect();
            for i in 0..prev.rows() {
                project_simplex(&mut values[prev.row_range(i)]);
            }
            weights.push(prev.with_values(values));
            evolutions.push(Evolution { raw, norm });
        } else if t > 0 {
            weights.push(weights[0].clone());
        }
        let op = neighborhood_operator(&weights[t], &lg, mu)?;
        let m = op.scale_rows(&one_minus);
        bounds.push(op_norm_bound(&m));
        combined.push(m);
        let next = apply_step(&states[t], &states[0], &op, &dp)?;
        nonfinite(&next, "diffusion state", t + 1)?;
        states.push(next);
    }

    let mut predictions = states[cfg.steps].matmul(&params.readout_weight)?;
    for i in 0..predictions.rows() {
        for (v, b) in predictions.row_mut(i).iter_mut().zip(&params.readout_bias) {
            *v += b;
        }
    }
    nonfinite(&predictions, "readout", cfg.steps)?;
    Ok(Forward {
        predictions,
        states,
        weights,
        combined,
        bounds,
        lambda,
        mu,
        features: h.clone(),
        lg,
        evolutions,
        mode: cfg.weight_mode,
        max_delta_norm: cfg.max_delta_norm,
        freeze_schedule: cfg.freeze_schedule,
    })
}

/// Subgradient of `sqrt(|M|_1 |M|_inf)` with respect to the stored values
/// of `M`, scaled by `scale`. Ties pick the first maximizing column or row.
fn bound_grad(m: &SparseMatrix, bound: f64, scale: f64) -> Vec<f64> {
    let mut grad = vec![0.0; m.nnz()];
    if bound == 0.0 {
        return grad;
    }
    let mut col_sums = vec![0.0; m.cols()];
    let mut row_sums = vec![0.0; m.rows()];
    for i in 0..m.rows() {
        let (cols, vals) = m.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            col_sums[j] += v.abs();
            row_sums[i] += v.abs();
        }
    }
    let argmax = |s: &[f64]| {
        let mut best = 0;
        for (k, &v) in s.iter().enumerate() {
            if v > s[best] {
                best = k;
            }
        }
        best
    };
    let (jc, ir) = (argmax(&col_sums), argmax(&row_sums));
    let (n1, ninf) = (col_sums[jc], row_sums[ir]);
    for i in 0..m.rows() {
        let r = m.row_range(i);
        for slot in r {
            let (j, v) = (m.indices()[slot], m.values()[slot]);
            let sign = if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            };
            let mut d = 0.0;
            if j == jc {
                d += ninf * sign;
            }
            if i == ir {
                d += n1 * sign;
            }
            grad[slot] = scale * d / (2.0 * bound);
        }
    }
    grad
}

/// Reverse pass for an upstream gradient on the predictions and a weight on
/// the stability hinge (1 for the full objective, 0 for the task alone).
pub fn backward(
    fwd: &Forward,
    params: &ModelParams,
    d_predictions: &FeatureMatrix,
    d_reg: f64,
    margin: f64,
) -> Result<ModelParams> {
    let big_t = fwd.steps();
    let n = fwd.lambda.len();
    let alpha = params.alpha;
    let lam = &fwd.lambda;
    let mu = fwd.mu;
    let lg = fwd.lg.values();
    let x0 = &fwd.states[0];
    if d_predictions.shape() != fwd.predictions.shape() {
        return Err(Error::ShapeMismatch {
            op: "backward",
            expected: fwd.predictions.shape(),
            found: d_predictions.shape(),
        });
    }
    let mut grads = params.zeros_like();

    grads.readout_weight = fwd.states[big_t].transpose_matmul(d_predictions);
    grads.readout_bias = d_predictions.column_sums();
    let mut g_x = d_predictions.matmul_transpose(&params.readout_weight);

    let mut d_lambda = vec![0.0; n];
    let mut d_mu = 0.0;
    let mut g_anchor = FeatureMatrix::zeros(n, x0.cols());
    let mut carry: Option<Vec<f64>> = None;
    let mut extra_prev: Option<FeatureMatrix> = None;

    for t in (0..big_t).rev() {
        let x = &fwd.states[t];
        let w = &fwd.weights[t];
        let pattern_len = w.nnz();
        let mut dw = carry.take().unwrap_or_else(|| vec![0.0; pattern_len]);
        let op = neighborhood_operator(w, &fwd.lg, mu)?;
        let ov = op.values();
        debug_assert!(op.same_pattern(w));

        if d_reg != 0.0 && fwd.bounds[t] > margin {
            let dm = bound_grad(&fwd.combined[t], fwd.bounds[t], d_reg);
            for i in 0..n {
                for slot in w.row_range(i) {
                    d_lambda[i] -= dm[slot] * ov[slot];
                    dw[slot] += (1.0 - lam[i]) * dm[slot];
                    d_mu -= dm[slot] * (1.0 - lam[i]) * lg[slot];
                }
            }
        }

        let y = spmm(&op, x)?;
        let mut a = g_x.clone();
        for i in 0..n {
            let s = (1.0 - alpha) * (1.0 - lam[i]);
            a.row_mut(i).iter_mut().for_each(|v| *v *= s);
            let (gi, x0i, yi) = (g_x.row(i), x0.row(i), y.row(i));
            let mut acc = 0.0;
            for k in 0..gi.len() {
                acc += gi[k] * (x0i[k] - yi[k]);
                g_anchor[(i, k)] += (1.0 - alpha) * lam[i] * gi[k];
            }
            d_lambda[i] += (1.0 - alpha) * acc;
        }
        let mut dx = spmm_transpose(&op, &a)?;
        for (v, gv) in dx.as_mut_slice().iter_mut().zip(g_x.as_slice()) {
            *v += alpha * gv;
        }
        for i in 0..n {
            let ai = a.row(i);
            for slot in w.row_range(i) {
                let j = w.indices()[slot];
                let dop: f64 = ai.iter().zip(x.row(j)).map(|(p, q)| p * q).sum();
                dw[slot] += dop;
                d_mu -= dop * lg[slot];
            }
        }
        if let Some(extra) = extra_prev.take() {
            for (v, e) in dx.as_mut_slice().iter_mut().zip(extra.as_slice()) {
                *v += e;
            }
        }

        if t > 0 && fwd.mode == WeightMode::Dynamic {
            let evo = &fwd.evolutions[t - 1];
            let dv = project_backward(w, &dw);
            if !fwd.freeze_schedule {
                let eta = step_size(t - 1);
                let dclipped: Vec<f64> = dv.iter().map(|v| eta * v).collect();
                let du = clip_backward(&evo.raw, evo.norm, fwd.max_delta_norm, &dclipped);
                extra_prev = Some(energy_backward(&fwd.states[t - 1], w, &du));
            }
            carry = Some(dv);
        } else if t > 0 {
            carry = Some(dw);
        } else {
            grads.edge_logits = softmax_backward(w, &dw);
        }
        g_x = dx;
    }

    // the state path and the anchor both feed X(0)
    let mut dz = g_x;
    for (v, a) in dz.as_mut_slice().iter_mut().zip(g_anchor.as_slice()) {
        *v += a;
    }
    for (v, x) in dz.as_mut_slice().iter_mut().zip(x0.as_slice()) {
        *v *= 1.0 - x * x;
    }
    grads.f_weight = fwd.features.transpose_matmul(&dz);
    grads.f_bias = dz.column_sums();
    grads.lambda_logits = d_lambda
        .iter()
        .zip(lam)
        .map(|(d, l)| d * l * (1.0 - l))
        .collect();
    grads.mu_logit = d_mu * sigmoid(params.mu_logit);
    Ok(grads)
}

/// Jacobian-vector product of the simplex projection: on each row's active
/// set the projection acts as `I - 11^T / |S|`.
fn project_backward(w: &SparseMatrix, g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for i in 0..w.rows() {
        let r = w.row_range(i);
        let active: Vec<usize> = r.filter(|&s| w.values()[s] > 0.0).collect();
        if active.is_empty() {
            continue;
        }
        let mean = active.iter().map(|&s| g[s]).sum::<f64>() / active.len() as f64;
        for &s in &active {
            out[s] = g[s] - mean;
        }
    }
    out
}

fn clip_backward(u: &[f64], norm: f64, k: f64, g: &[f64]) -> Vec<f64> {
    if norm <= k {
        return g.to_vec();
    }
    let dot: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
    let s = k / norm;
    u.iter()
        .zip(g)
        .map(|(a, b)| s * (b - a * dot / (norm * norm)))
        .collect()
}

/// Pulls a gradient on the centered energy delta back to the state.
fn energy_backward(x: &FeatureMatrix, pattern: &SparseMatrix, du: &[f64]) -> FeatureMatrix {
    let mut dx = FeatureMatrix::zeros(x.rows(), x.cols());
    for i in 0..pattern.rows() {
        let r = pattern.row_range(i);
        if r.is_empty() {
            continue;
        }
        let mean = du[r.clone()].iter().sum::<f64>() / r.len() as f64;
        for slot in r {
            let j = pattern.indices()[slot];
            if j == i {
                continue;
            }
            let dd = mean - du[slot];
            for k in 0..x.cols() {
                let diff = x[(i, k)] - x[(j, k)];
                dx[(i, k)] += dd * diff;
                dx[(j, k)] -= dd * diff;
            }
        }
    }
    dx
}

fn softmax_backward(w: &SparseMatrix, g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for i in 0..w.rows() {
        let r = w.row_range(i);
        let inner: f64 = r.clone().map(|s| w.values()[s] * g[s]).sum();
        for s in r {
            out[s] = w.values()[s] * (g[s] - inner);
        }
    }
    out
}
