//! Trainable diffusion model: an affine + tanh encoder, `T` unrolled
//! diffusion steps with learned stubbornness, smoothing and influence
//! weights, and a linear readout. Gradients are exact reverse-mode through
//! the unroll.

mod grad;
mod model;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use grad::{backward, forward, Forward};
pub use model::{load_checkpoint, param_count, save_checkpoint, ModelParams, ParamShapes};

use crate::diffusion::{hinge_sum, WeightMode};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::Graph;
use crate::sparse::SparseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Task {
    Classification {
        classes: usize,
    },
    /// Mean absolute error; `sigmoid` maps outputs to `[0, 1]` first.
    Regression {
        outputs: usize,
        sigmoid: bool,
    },
}

impl Task {
    pub fn outputs(&self) -> usize {
        match *self {
            Task::Classification { classes } => classes,
            Task::Regression { outputs, .. } => outputs,
        }
    }

    /// Whether a larger metric is better (accuracy) or worse (MAE).
    pub fn higher_is_better(&self) -> bool {
        matches!(self, Task::Classification { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(FeatureMatrix),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Number of unrolled diffusion steps `T`.
    pub steps: usize,
    pub alpha: f64,
    pub hidden: usize,
    pub weight_mode: WeightMode,
    /// Clip norm `k` for dynamic weight deltas.
    pub max_delta_norm: f64,
    /// Treat the dynamic weight deltas as constants in the reverse pass.
    pub freeze_schedule: bool,
    pub seed: u64,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    /// Hinge threshold on the per-step norm bound.
    pub margin: f64,
    pub init_lambda: f64,
    pub init_mu: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::Classification { classes: 2 },
            epochs: 300,
            learning_rate: 1e-2,
            steps: 8,
            alpha: 0.1,
            hidden: 16,
            weight_mode: WeightMode::Static,
            max_delta_norm: 1.0,
            freeze_schedule: false,
            seed: 0,
            split: [0.6, 0.2, 0.2],
            margin: 0.99,
            init_lambda: 0.2,
            init_mu: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.task.outputs() == 0 {
            return Err(Error::invalid("task", "needs at least one output"));
        }
        if let Task::Classification { classes } = self.task {
            if classes < 2 {
                return Err(Error::invalid("task.classes", "must be >= 2"));
            }
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(
                "learning_rate",
                "must be positive and finite",
            ));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha", "must lie in [0, 1)"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden", "must be >= 1"));
        }
        if !(self.max_delta_norm > 0.0 && self.max_delta_norm.is_finite()) {
            return Err(Error::invalid(
                "max_delta_norm",
                "must be positive and finite",
            ));
        }
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f))
            || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid(
                "split",
                "fractions must lie in [0, 1] and sum to 1",
            ));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::invalid("margin", "must be positive and finite"));
        }
        if !(self.init_lambda > 0.0 && self.init_lambda < 1.0) {
            return Err(Error::invalid("init_lambda", "must lie in (0, 1)"));
        }
        if !(self.init_mu >= 0.0 && self.init_mu.is_finite()) {
            return Err(Error::invalid("init_mu", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrainLoss {
    pub task_loss: f64,
    pub reg_loss: f64,
    pub total: f64,
}

impl TrainLoss {
    fn new(task_loss: f64, reg_loss: f64) -> Self {
        Self {
            task_loss,
            reg_loss,
            total: task_loss + reg_loss,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Shuffles `0..n` with `seed` and cuts it by `fractions`.
    pub fn random(n: usize, fractions: [f64; 3], seed: u64) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
        let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
        let sorted = |s: &[usize]| {
            let mut v = s.to_vec();
            v.sort_unstable();
            v
        };
        Self {
            train: sorted(&order[..n_train]),
            val: sorted(&order[n_train..n_train + n_val]),
            test: sorted(&order[n_train + n_val..]),
        }
    }
}

fn check_mask(
    targets: &Targets,
    predictions: &FeatureMatrix,
    mask: &[usize],
    task: &Task,
) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = predictions.rows();
    if targets.len() != n || predictions.cols() != task.outputs() {
        return Err(Error::ShapeMismatch {
            op: "loss",
            expected: (n, task.outputs()),
            found: (targets.len(), predictions.cols()),
        });
    }
    if let Some(&node) = mask.iter().find(|&&i| i >= n) {
        return Err(Error::NodeOutOfRange { node, n });
    }
    match (task, targets) {
        (Task::Classification { classes }, Targets::Classes(c)) => {
            if let Some(&bad) = c.iter().find(|&&y| y >= *classes) {
                return Err(Error::invalid(
                    "targets",
                    format!("class {bad} out of range"),
                ));
            }
            Ok(())
        }
        (Task::Regression { outputs, .. }, Targets::Values(v)) if v.cols() == *outputs => Ok(()),
        _ => Err(Error::invalid("targets", "do not match the task")),
    }
}

/// Task loss on `mask` and its gradient with respect to the predictions.
fn task_loss_grad(
    predictions: &FeatureMatrix,
    targets: &Targets,
    mask: &[usize],
    task: &Task,
) -> Result<(f64, FeatureMatrix)> {
    check_mask(targets, predictions, mask, task)?;
    let mut grad = FeatureMatrix::zeros(predictions.rows(), predictions.cols());
    let m = mask.len() as f64;
    let mut loss = 0.0;
    match (task, targets) {
        (Task::Classification { .. }, Targets::Classes(classes)) => {
            for &i in mask {
                let z = predictions.row(i);
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
                let lse = max + sum.ln();
                loss += lse - z[classes[i]];
                for (k, g) in grad.row_mut(i).iter_mut().enumerate() {
                    let p = (z[k] - lse).exp();
                    *g = (p - if k == classes[i] { 1.0 } else { 0.0 }) / m;
                }
            }
            loss /= m;
        }
        (Task::Regression { sigmoid, .. }, Targets::Values(values)) => {
            let count = m * predictions.cols() as f64;
            for &i in mask {
                for k in 0..predictions.cols() {
                    let z = predictions[(i, k)];
                    let (p, dp) = if *sigmoid {
                        let s = model::sigmoid(z);
                        (s, s * (1.0 - s))
                    } else {
                        (z, 1.0)
                    };
                    let r = p - values[(i, k)];
                    loss += r.abs();
                    let sign = if r > 0.0 {
                        1.0
                    } else if r < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    grad[(i, k)] = sign * dp / count;
                }
            }
            loss /= count;
        }
        _ => unreachable!("checked by check_mask"),
    }
    Ok((loss, grad))
}

/// Task loss on `mask` plus the stability hinge over `m_sequence`.
pub fn loss(
    predictions: &FeatureMatrix,
    targets: &Targets,
    mask: &[usize],
    m_sequence: &[SparseMatrix],
    task: &Task,
    margin: f64,
) -> Result<TrainLoss> {
    let (task_loss, _) = task_loss_grad(predictions, targets, mask, task)?;
    let reg = crate::diffusion::reg_loss_with_margin(m_sequence, margin);
    Ok(TrainLoss::new(task_loss, reg))
}

/// Accuracy (classification) or mean absolute error (regression) on `mask`.
pub fn metric(
    predictions: &FeatureMatrix,
    targets: &Targets,
    mask: &[usize],
    task: &Task,
) -> Result<f64> {
    check_mask(targets, predictions, mask, task)?;
    Ok(match (task, targets) {
        (Task::Classification { .. }, Targets::Classes(classes)) => {
            let hits = mask
                .iter()
                .filter(|&&i| {
                    let z = predictions.row(i);
                    let mut best = 0;
                    for k in 1..z.len() {
                        if z[k] > z[best] {
                            best = k;
                        }
                    }
                    best == classes[i]
                })
                .count();
            hits as f64 / mask.len() as f64
        }
        (Task::Regression { sigmoid, .. }, Targets::Values(values)) => {
            let mut total = 0.0;
            for &i in mask {
                for k in 0..predictions.cols() {
                    let z = predictions[(i, k)];
                    let p = if *sigmoid { model::sigmoid(z) } else { z };
                    total += (p - values[(i, k)]).abs();
                }
            }
            total / (mask.len() * predictions.cols()) as f64
        }
        _ => unreachable!("checked by check_mask"),
    })
}

pub fn evaluate(
    params: &ModelParams,
    g: &Graph,
    h: &FeatureMatrix,
    targets: &Targets,
    mask: &[usize],
    cfg: &TrainConfig,
) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let fwd = forward(g, h, params, cfg)?;
    metric(&fwd.predictions, targets, mask, &cfg.task)
}

/// MAE of predicting the mean training target for every node in `mask`.
pub fn mean_predictor_mae(values: &FeatureMatrix, train: &[usize], mask: &[usize]) -> Result<f64> {
    if train.is_empty() || mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let c = values.cols();
    let mut mean = vec![0.0; c];
    for &i in train {
        for (m, v) in mean.iter_mut().zip(values.row(i)) {
            *m += v / train.len() as f64;
        }
    }
    let total: f64 = mask
        .iter()
        .map(|&i| {
            values
                .row(i)
                .iter()
                .zip(&mean)
                .map(|(v, m)| (v - m).abs())
                .sum::<f64>()
        })
        .sum();
    Ok(total / (mask.len() * c) as f64)
}

/// Full objective on `mask` and its gradient.
pub fn value_and_grad(
    g: &Graph,
    h: &FeatureMatrix,
    params: &ModelParams,
    targets: &Targets,
    mask: &[usize],
    cfg: &TrainConfig,
) -> Result<(TrainLoss, ModelParams)> {
    let fwd = forward(g, h, params, cfg)?;
    let (task_loss, d_pred) = task_loss_grad(&fwd.predictions, targets, mask, &cfg.task)?;
    let reg = hinge_sum(fwd.bounds.iter().cloned(), cfg.margin);
    let grads = backward(&fwd, params, &d_pred, 1.0, cfg.margin)?;
    Ok((TrainLoss::new(task_loss, reg), grads))
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter coordinate. Relative error is
/// `|a - f| / max(|a|, |f|, 1e-4)`.
pub fn gradient_check(
    g: &Graph,
    h: &FeatureMatrix,
    params: &ModelParams,
    targets: &Targets,
    mask: &[usize],
    cfg: &TrainConfig,
    step: f64,
) -> Result<f64> {
    let (_, grads) = value_and_grad(g, h, params, targets, mask, cfg)?;
    let analytic = grads.to_flat();
    let base = params.to_flat();
    let shapes = params.shapes();
    let eval = |flat: &[f64]| -> Result<f64> {
        let p = ModelParams::from_flat(shapes, params.alpha, flat)?;
        let fwd = forward(g, h, &p, cfg)?;
        Ok(loss(
            &fwd.predictions,
            targets,
            mask,
            &fwd.combined,
            &cfg.task,
            cfg.margin,
        )?
        .total)
    };
    let mut worst = 0.0f64;
    let mut probe = base.clone();
    for k in 0..base.len() {
        probe[k] = base[k] + step;
        let up = eval(&probe)?;
        probe[k] = base[k] - step;
        let down = eval(&probe)?;
        probe[k] = base[k];
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[k];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    pub reg_loss: f64,
    /// Largest per-step norm bound at this epoch.
    pub max_bound: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub split: Split,
}

/// `epoch,train_loss,val_loss,val_metric,reg_loss` rows.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_metric,reg_loss\n");
    for r in history {
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{:?}\n",
            r.epoch, r.train_loss, r.val_loss, r.val_metric, r.reg_loss
        ));
    }
    out
}

/// Full-batch gradient descent with a fixed learning rate. Returns the
/// parameters with the best validation metric (ties broken by validation
/// loss, then by earliest epoch).
pub fn train(
    g: &Graph,
    h: &FeatureMatrix,
    targets: &Targets,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let split = Split::random(g.n(), cfg.split, cfg.seed);
    train_with_split(g, h, targets, cfg, split)
}

pub fn train_with_split(
    g: &Graph,
    h: &FeatureMatrix,
    targets: &Targets,
    cfg: &TrainConfig,
    split: Split,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if targets.len() != g.n() {
        return Err(Error::invalid(
            "targets",
            format!("expected {} nodes, found {}", g.n(), targets.len()),
        ));
    }
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut params = ModelParams::init(g, h.cols(), cfg)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, ModelParams)> = None;
    let higher = cfg.task.higher_is_better();
    for epoch in 1..=cfg.epochs {
        let diverged = |reason: String| Error::TrainingDiverged { epoch, reason };
        let fwd = forward(g, h, &params, cfg).map_err(|e| diverged(e.to_string()))?;
        let (task_loss, d_pred) =
            task_loss_grad(&fwd.predictions, targets, &split.train, &cfg.task)?;
        let reg = hinge_sum(fwd.bounds.iter().cloned(), cfg.margin);
        let (val_task, _) = task_loss_grad(&fwd.predictions, targets, &split.val, &cfg.task)?;
        let val_metric = metric(&fwd.predictions, targets, &split.val, &cfg.task)?;
        let record = EpochRecord {
            epoch,
            train_loss: task_loss + reg,
            val_loss: val_task + reg,
            val_metric,
            reg_loss: reg,
            max_bound: fwd.max_bound(),
        };
        if !record.train_loss.is_finite() {
            return Err(diverged("loss is not finite".into()));
        }
        history.push(record);
        let improves = match &best {
            None => true,
            Some((m, l, _, _)) => {
                let better = if higher {
                    val_metric > *m
                } else {
                    val_metric < *m
                };
                better || (val_metric == *m && record.val_loss < *l)
            }
        };
        if improves {
            best = Some((val_metric, record.val_loss, epoch, params.clone()));
        }
        let grads = backward(&fwd, &params, &d_pred, 1.0, cfg.margin)?;
        params.descend(&grads, cfg.learning_rate);
        if !params.is_finite() {
            return Err(diverged("parameters are not finite".into()));
        }
    }
    let (_, _, best_epoch, params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
        split,
    })
}
