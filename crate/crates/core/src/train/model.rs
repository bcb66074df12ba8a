use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::Graph;
use crate::sparse::SparseMatrix;

const CHECKPOINT_FORMAT: &str = "godnf-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Trainable parameters. Stubbornness, smoothing strength and influence
/// weights are stored as unconstrained logits and mapped through sigmoid,
/// softplus and a per-row softmax, so every setting yields valid dynamics.
///
/// `edge_logits` follows the slot order of [`Graph::support`]. The same type
/// carries gradients, in which case `alpha` is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub f_weight: FeatureMatrix,
    pub f_bias: Vec<f64>,
    pub readout_weight: FeatureMatrix,
    pub readout_bias: Vec<f64>,
    pub lambda_logits: Vec<f64>,
    pub mu_logit: f64,
    pub edge_logits: Vec<f64>,
    pub alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamShapes {
    pub nodes: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub edge_slots: usize,
}

impl ParamShapes {
    pub fn count(&self) -> usize {
        let (f, d, c) = (self.input_dim, self.hidden, self.outputs);
        f * d + d + d * c + c + self.nodes + 1 + self.edge_slots
    }
}

/// Number of trainable scalars for `n` nodes, `m` edges, input width `f`,
/// hidden width `d` and `c` outputs. Independent of the number of steps.
pub fn param_count(n: usize, m: usize, f: usize, d: usize, c: usize) -> usize {
    ParamShapes {
        nodes: n,
        input_dim: f,
        hidden: d,
        outputs: c,
        edge_slots: 2 * m + n,
    }
    .count()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> FeatureMatrix {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-s..s)).collect();
    FeatureMatrix::from_vec(rows, cols, data).expect("sizes agree")
}

impl ModelParams {
    /// Glorot-uniform transforms, zero biases, uniform influence weights and
    /// the configured initial stubbornness and smoothing.
    pub fn init(g: &Graph, input_dim: usize, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (d, c) = (cfg.hidden, cfg.task.outputs());
        Ok(Self {
            f_weight: glorot(input_dim, d, &mut rng),
            f_bias: vec![0.0; d],
            readout_weight: glorot(d, c, &mut rng),
            readout_bias: vec![0.0; c],
            lambda_logits: vec![logit(cfg.init_lambda); g.n()],
            mu_logit: softplus_inverse(cfg.init_mu),
            edge_logits: vec![0.0; 2 * g.m() + g.n()],
            alpha: cfg.alpha,
        })
    }

    /// All-zero parameters with the shapes of `self`.
    pub fn zeros_like(&self) -> Self {
        let (f, d) = self.f_weight.shape();
        let c = self.readout_weight.cols();
        Self {
            f_weight: FeatureMatrix::zeros(f, d),
            f_bias: vec![0.0; d],
            readout_weight: FeatureMatrix::zeros(d, c),
            readout_bias: vec![0.0; c],
            lambda_logits: vec![0.0; self.lambda_logits.len()],
            mu_logit: 0.0,
            edge_logits: vec![0.0; self.edge_logits.len()],
            alpha: 0.0,
        }
    }

    pub fn shapes(&self) -> ParamShapes {
        ParamShapes {
            nodes: self.lambda_logits.len(),
            input_dim: self.f_weight.rows(),
            hidden: self.f_weight.cols(),
            outputs: self.readout_weight.cols(),
            edge_slots: self.edge_logits.len(),
        }
    }

    pub fn count(&self) -> usize {
        self.shapes().count()
    }

    /// Checks the parameter shapes against a graph and feature width.
    pub fn check(&self, g: &Graph, input_dim: usize) -> Result<()> {
        let s = self.shapes();
        let bad = |field: &str, expected: usize, found: usize| {
            Err(Error::invalid(
                field,
                format!("expected {expected} entries, found {found}"),
            ))
        };
        if s.input_dim != input_dim {
            return bad("f_weight", input_dim, s.input_dim);
        }
        if self.f_bias.len() != s.hidden || self.readout_weight.rows() != s.hidden {
            return bad("f_bias", s.hidden, self.f_bias.len());
        }
        if self.readout_bias.len() != s.outputs {
            return bad("readout_bias", s.outputs, self.readout_bias.len());
        }
        if s.nodes != g.n() {
            return bad("lambda_logits", g.n(), s.nodes);
        }
        if s.edge_slots != 2 * g.m() + g.n() {
            return bad("edge_logits", 2 * g.m() + g.n(), s.edge_slots);
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn lambda(&self) -> Vec<f64> {
        self.lambda_logits.iter().map(|&l| sigmoid(l)).collect()
    }

    pub fn mu(&self) -> f64 {
        softplus(self.mu_logit)
    }

    /// Row-softmax of `edge_logits` on the pattern of `support`.
    pub fn weights(&self, support: &SparseMatrix) -> SparseMatrix {
        let mut values = vec![0.0; support.nnz()];
        for i in 0..support.rows() {
            let r = support.row_range(i);
            let logits = &self.edge_logits[r.clone()];
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (v, e) in values[r].iter_mut().zip(exps) {
                *v = e / sum;
            }
        }
        support.with_values(values)
    }

    /// Concatenation in declared field order (`alpha` excluded).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count());
        out.extend_from_slice(self.f_weight.as_slice());
        out.extend_from_slice(&self.f_bias);
        out.extend_from_slice(self.readout_weight.as_slice());
        out.extend_from_slice(&self.readout_bias);
        out.extend_from_slice(&self.lambda_logits);
        out.push(self.mu_logit);
        out.extend_from_slice(&self.edge_logits);
        out
    }

    pub fn from_flat(shapes: ParamShapes, alpha: f64, flat: &[f64]) -> Result<Self> {
        if flat.len() != shapes.count() {
            return Err(Error::invalid(
                "parameters",
                format!("expected {} values, found {}", shapes.count(), flat.len()),
            ));
        }
        let ParamShapes {
            nodes,
            input_dim: f,
            hidden: d,
            outputs: c,
            edge_slots,
        } = shapes;
        let mut rest = flat;
        let mut take = |k: usize| {
            let (head, tail) = rest.split_at(k);
            rest = tail;
            head.to_vec()
        };
        Ok(Self {
            f_weight: FeatureMatrix::from_vec(f, d, take(f * d))?,
            f_bias: take(d),
            readout_weight: FeatureMatrix::from_vec(d, c, take(d * c))?,
            readout_bias: take(c),
            lambda_logits: take(nodes),
            mu_logit: take(1)[0],
            edge_logits: take(edge_slots),
            alpha,
        })
    }

    /// `self -= step * grad`.
    pub fn descend(&mut self, grad: &ModelParams, step: f64) {
        let sub = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, g)| *x -= step * g);
        sub(self.f_weight.as_mut_slice(), grad.f_weight.as_slice());
        sub(&mut self.f_bias, &grad.f_bias);
        sub(
            self.readout_weight.as_mut_slice(),
            grad.readout_weight.as_slice(),
        );
        sub(&mut self.readout_bias, &grad.readout_bias);
        sub(&mut self.lambda_logits, &grad.lambda_logits);
        self.mu_logit -= step * grad.mu_logit;
        sub(&mut self.edge_logits, &grad.edge_logits);
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    shapes: ParamShapes,
    alpha: f64,
    seed: u64,
    config: TrainConfig,
}

/// One JSON header line followed by the flat parameters as little-endian
/// `f64`s in declared field order.
pub fn save_checkpoint<W: Write>(
    mut out: W,
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        shapes: params.shapes(),
        alpha: params.alpha,
        seed: cfg.seed,
        config: cfg.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for v in params.to_flat() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_checkpoint<R: Read>(mut input: R) -> Result<(ModelParams, TrainConfig)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let parse_err = |message: &str| Error::Parse {
        path: "checkpoint".into(),
        line: 1,
        message: message.into(),
    };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| parse_err("missing header line"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(parse_err("unsupported checkpoint format"));
    }
    let body = &bytes[nl + 1..];
    if body.len() != 8 * header.shapes.count() {
        return Err(parse_err("parameter block has the wrong length"));
    }
    let flat: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let params = ModelParams::from_flat(header.shapes, header.alpha, &flat)?;
    Ok((params, header.config))
}
