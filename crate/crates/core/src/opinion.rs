//! Classical opinion-dynamics steppers: French-DeGroot, Friedkin-Johnsen and
//! Hegselmann-Krause. They serve as reference dynamics for the diffusion
//! update and as the targets of its parameter reductions.

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::Graph;
use crate::sparse::{spmm, SparseMatrix};

/// Row sums of influence weights may deviate from 1 by at most this much.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// `a * p + (1 - a) * q`, returning the surviving operand unchanged when
/// `a` is exactly 0 or 1. Every stepper in the crate mixes through this so
/// that parameter reductions are exact in floating point.
#[inline]
pub(crate) fn blend(a: f64, p: f64, q: f64) -> f64 {
    if a == 0.0 {
        q
    } else if a == 1.0 {
        p
    } else {
        a * p + (1.0 - a) * q
    }
}

#[derive(Clone, Debug)]
pub struct FjConfig {
    pub lambda: Vec<f64>,
    pub weights: SparseMatrix,
}

impl FjConfig {
    pub fn new(lambda: Vec<f64>, weights: SparseMatrix) -> Result<Self> {
        if lambda.len() != weights.rows() || weights.rows() != weights.cols() {
            return Err(Error::ShapeMismatch {
                op: "FjConfig::new",
                expected: (lambda.len(), lambda.len()),
                found: weights.shape(),
            });
        }
        if let Some(i) = lambda.iter().position(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::invalid(format!("lambda[{i}]"), "must lie in [0, 1]"));
        }
        weights.check_row_stochastic(1e-12)?;
        Ok(Self { lambda, weights })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HkConfig {
    pub epsilon: f64,
    pub include_self: bool,
}

impl HkConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::invalid("epsilon", "must be > 0"));
        }
        Ok(Self {
            epsilon,
            include_self: true,
        })
    }
}

/// One DeGroot averaging step `x' = W x`.
pub fn fd_step(x: &FeatureMatrix, w: &SparseMatrix) -> Result<FeatureMatrix> {
    w.check_row_stochastic(ROW_SUM_TOL)?;
    spmm(w, x)
}

/// One Friedkin-Johnsen step `x'_i = l_i x0_i + (1 - l_i) (W x)_i`.
pub fn fj_step(x: &FeatureMatrix, x0: &FeatureMatrix, cfg: &FjConfig) -> Result<FeatureMatrix> {
    x.check_same_shape(x0, "fj_step")?;
    if cfg.lambda.len() != x.rows() {
        return Err(Error::ShapeMismatch {
            op: "fj_step",
            expected: x.shape(),
            found: (cfg.lambda.len(), x.cols()),
        });
    }
    let mut out = spmm(&cfg.weights, x)?;
    for (i, &l) in cfg.lambda.iter().enumerate() {
        for (o, &a) in out.row_mut(i).iter_mut().zip(x0.row(i)) {
            *o = blend(l, a, *o);
        }
    }
    Ok(out)
}

/// Bounded-confidence step: each node averages the neighbors whose opinion
/// lies within `epsilon` (Euclidean) of its own, plus itself when
/// `include_self` is set. A node with nothing to average keeps its opinion.
pub fn hk_step(x: &FeatureMatrix, g: &Graph, cfg: &HkConfig) -> Result<FeatureMatrix> {
    if x.rows() != g.n() {
        return Err(Error::ShapeMismatch {
            op: "hk_step",
            expected: (g.n(), x.cols()),
            found: x.shape(),
        });
    }
    let eps2 = cfg.epsilon * cfg.epsilon;
    let mut out = FeatureMatrix::zeros(x.rows(), x.cols());
    for i in 0..g.n() {
        let xi = x.row(i);
        let mut acc = vec![0.0; x.cols()];
        let mut count = 0usize;
        let mut add = |row: &[f64]| {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        };
        if cfg.include_self {
            add(xi);
            count += 1;
        }
        for &j in g.neighbors(i) {
            let xj = x.row(j);
            let d2: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 <= eps2 {
                add(xj);
                count += 1;
            }
        }
        let o = out.row_mut(i);
        if count == 0 {
            o.copy_from_slice(xi);
        } else {
            for (ov, a) in o.iter_mut().zip(acc) {
                *ov = a / count as f64;
            }
        }
    }
    Ok(out)
}
