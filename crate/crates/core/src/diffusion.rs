//! The opinion-dynamics diffusion update, its combined influence matrix,
//! bounded weight evolution, trajectory runner and closed-form fixed point.
//!
//! One step maps `X(t)` to
//!
//! ```text
//! X(t+1) = a X(t) + (1 - a) [ L X(0) + (I - L) (W(t) - mu Lg) X(t) ]
//! ```
//!
//! where `a` is the retention coefficient, `L = diag(lambda)` holds per-node
//! stubbornness, `W(t)` is row-stochastic on the edge support plus diagonal,
//! and `Lg` is the symmetric normalized Laplacian. The combined matrix
//! `M(t) = (I - L)(W(t) - mu Lg)` governs contraction: whenever
//! `sqrt(|M|_1 |M|_inf) < 1` the iteration has a unique fixed point
//! `X* = (I - M)^{-1} L X(0)`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::{normalized_laplacian, Graph};
use crate::opinion::{blend, ROW_SUM_TOL};
use crate::sparse::{norm_1_inf, spmm, SparseMatrix};

/// Any state entry larger than this in magnitude is treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;
/// Relative Frobenius step change below which a run counts as converged.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
/// Largest system solved densely in [`fixed_point_solve`].
pub const DENSE_SOLVE_MAX_N: usize = 5000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiffusionParams {
    pub alpha: f64,
    pub lambda: Vec<f64>,
    pub mu: f64,
    pub steps: usize,
}

impl DiffusionParams {
    pub fn uniform(n: usize, alpha: f64, lambda: f64, mu: f64, steps: usize) -> Self {
        Self {
            alpha,
            lambda: vec![lambda; n],
            mu,
            steps,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha", "must lie in [0, 1)"));
        }
        if self.lambda.len() != n {
            return Err(Error::invalid(
                "lambda",
                format!("expected {n} entries, found {}", self.lambda.len()),
            ));
        }
        if let Some(i) = self.lambda.iter().position(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::invalid(format!("lambda[{i}]"), "must lie in [0, 1]"));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid("mu", "must be finite and >= 0"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps", "must be >= 1"));
        }
        Ok(())
    }

    fn one_minus_lambda(&self) -> Vec<f64> {
        self.lambda.iter().map(|l| 1.0 - l).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Static,
    Dynamic,
}

/// Influence weights over time. `per_step[t - 1]` holds `W(t)`; a static
/// schedule never materializes anything beyond `base`.
#[derive(Clone, Debug)]
pub struct WeightSchedule {
    mode: WeightMode,
    base: SparseMatrix,
    per_step: Vec<SparseMatrix>,
    max_delta_norm: f64,
}

impl WeightSchedule {
    pub fn fixed(base: SparseMatrix) -> Result<Self> {
        Self::new(WeightMode::Static, base, f64::INFINITY)
    }

    pub fn dynamic(base: SparseMatrix, max_delta_norm: f64) -> Result<Self> {
        Self::new(WeightMode::Dynamic, base, max_delta_norm)
    }

    fn new(mode: WeightMode, base: SparseMatrix, max_delta_norm: f64) -> Result<Self> {
        if base.rows() != base.cols() {
            return Err(Error::ShapeMismatch {
                op: "WeightSchedule",
                expected: (base.rows(), base.rows()),
                found: base.shape(),
            });
        }
        base.check_row_stochastic(ROW_SUM_TOL)?;
        if !(max_delta_norm > 0.0) {
            return Err(Error::invalid("max_delta_norm", "must be > 0"));
        }
        Ok(Self {
            mode,
            base,
            per_step: Vec::new(),
            max_delta_norm,
        })
    }

    /// Dynamic schedule advanced once per supplied delta.
    pub fn from_deltas(
        base: SparseMatrix,
        max_delta_norm: f64,
        deltas: &[SparseMatrix],
    ) -> Result<Self> {
        let mut s = Self::dynamic(base, max_delta_norm)?;
        for d in deltas {
            s.advance(d)?;
        }
        Ok(s)
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    pub fn base(&self) -> &SparseMatrix {
        &self.base
    }

    pub fn per_step(&self) -> &[SparseMatrix] {
        &self.per_step
    }

    pub fn max_delta_norm(&self) -> f64 {
        self.max_delta_norm
    }

    pub fn n(&self) -> usize {
        self.base.rows()
    }

    /// Index of the last materialized matrix.
    pub fn horizon(&self) -> usize {
        self.per_step.len()
    }

    /// `W(t)`. Static schedules answer every `t`; dynamic ones only up to
    /// their horizon.
    pub fn weight_at(&self, t: usize) -> Result<&SparseMatrix> {
        match (self.mode, t) {
            (WeightMode::Static, _) | (_, 0) => Ok(&self.base),
            (WeightMode::Dynamic, t) => self.per_step.get(t - 1).ok_or_else(|| {
                Error::invalid(
                    "schedule",
                    format!(
                        "W({t}) requested but only {} steps materialized",
                        self.per_step.len()
                    ),
                )
            }),
        }
    }

    /// The most recent weights, i.e. the current estimate of the limit `W*`.
    pub fn stabilized(&self) -> &SparseMatrix {
        self.per_step.last().unwrap_or(&self.base)
    }

    /// Appends `W(h + 1) = evolve_weights(self, delta, h)` for the current
    /// horizon `h`.
    pub fn advance(&mut self, delta: &SparseMatrix) -> Result<()> {
        if self.mode == WeightMode::Static {
            return Err(Error::invalid("schedule", "static schedules do not evolve"));
        }
        let next = evolve_weights(self, delta, self.horizon())?;
        self.per_step.push(next);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<FeatureMatrix>,
    /// `|X(t+1) - X(t)|_F / |X(t)|_F`, or the absolute change when `X(t) = 0`.
    pub step_deltas: Vec<f64>,
}

impl Trajectory {
    pub fn last(&self) -> &FeatureMatrix {
        self.snapshots.last().expect("trajectory holds X(0)")
    }

    pub fn steps(&self) -> usize {
        self.step_deltas.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub bound_per_step: Vec<f64>,
    pub contraction_beta: f64,
    pub converged: bool,
    pub final_delta: f64,
    pub tolerance: f64,
    pub fixed_point_residual: Option<f64>,
}

/// CSV with columns `step,relative_delta,op_norm_bound`; row `t` describes
/// the transition from `X(t)` to `X(t+1)` under `M(t)`.
pub fn trajectory_csv(traj: &Trajectory, report: &ConvergenceReport) -> String {
    let mut s = String::from("step,relative_delta,op_norm_bound\n");
    for (t, (d, b)) in traj
        .step_deltas
        .iter()
        .zip(&report.bound_per_step)
        .enumerate()
    {
        s.push_str(&format!("{t},{d:e},{b:e}\n"));
    }
    s
}

/// Learning rate of the weight evolution, `1 / (1 + t)`.
pub fn step_size(t: usize) -> f64 {
    1.0 / (1.0 + t as f64)
}

/// `M = diag(1 - lambda) (W - mu Lg)` on the union support.
pub fn combined_matrix(
    w: &SparseMatrix,
    lg: &SparseMatrix,
    params: &DiffusionParams,
) -> Result<SparseMatrix> {
    let n = params.lambda.len();
    for m in [w, lg] {
        if m.shape() != (n, n) {
            return Err(Error::ShapeMismatch {
                op: "combined_matrix",
                expected: (n, n),
                found: m.shape(),
            });
        }
    }
    Ok(neighborhood_operator(w, lg, params.mu)?.scale_rows(&params.one_minus_lambda()))
}

/// `W - mu Lg`, or `W` itself when `mu` is exactly zero.
pub(crate) fn neighborhood_operator(
    w: &SparseMatrix,
    lg: &SparseMatrix,
    mu: f64,
) -> Result<SparseMatrix> {
    if mu == 0.0 {
        Ok(w.clone())
    } else {
        w.add_scaled(1.0, lg, -mu)
    }
}

/// `sqrt(|M|_1 |M|_inf)`, an upper bound on the spectral norm computable in
/// one pass.
pub fn op_norm_bound(m: &SparseMatrix) -> f64 {
    let (n1, ninf) = norm_1_inf(m);
    (n1 * ninf).sqrt()
}

/// `sum_t max(0, bound(M(t)) - 1)`.
pub fn reg_loss(m_sequence: &[SparseMatrix]) -> f64 {
    reg_loss_with_margin(m_sequence, 1.0)
}

/// Hinge penalty with threshold `margin` instead of 1.
pub fn reg_loss_with_margin(m_sequence: &[SparseMatrix], margin: f64) -> f64 {
    hinge_sum(m_sequence.iter().map(op_norm_bound), margin)
}

pub(crate) fn hinge_sum(bounds: impl Iterator<Item = f64>, margin: f64) -> f64 {
    bounds.map(|b| (b - margin).max(0.0)).sum()
}

fn check_state(x: &FeatureMatrix, step: usize) -> Result<()> {
    if x.as_slice()
        .iter()
        .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
    {
        return Err(Error::Divergence { step });
    }
    Ok(())
}

/// Applies one update given the precomputed `W - mu Lg`.
pub(crate) fn apply_step(
    x: &FeatureMatrix,
    x0: &FeatureMatrix,
    op: &SparseMatrix,
    params: &DiffusionParams,
) -> Result<FeatureMatrix> {
    let mut out = spmm(op, x)?;
    for (i, &l) in params.lambda.iter().enumerate() {
        let (xi, x0i) = (x.row(i), x0.row(i));
        for (k, o) in out.row_mut(i).iter_mut().enumerate() {
            let inner = blend(l, x0i[k], *o);
            *o = blend(params.alpha, xi[k], inner);
        }
    }
    Ok(out)
}

/// One diffusion step. With `alpha = lambda = mu = 0` this is exactly
/// [`crate::opinion::fd_step`]; with `alpha = mu = 0` exactly
/// [`crate::opinion::fj_step`].
pub fn godnf_step(
    x: &FeatureMatrix,
    x0: &FeatureMatrix,
    w: &SparseMatrix,
    lg: &SparseMatrix,
    params: &DiffusionParams,
) -> Result<FeatureMatrix> {
    x.check_same_shape(x0, "godnf_step")?;
    let n = x.rows();
    if params.lambda.len() != n || w.shape() != (n, n) || lg.shape() != (n, n) {
        return Err(Error::ShapeMismatch {
            op: "godnf_step",
            expected: (n, n),
            found: w.shape(),
        });
    }
    if !x.is_finite() || !x0.is_finite() {
        return Err(Error::NonFinite("godnf_step input".into()));
    }
    w.check_row_stochastic(ROW_SUM_TOL)?;
    apply_step(x, x0, &neighborhood_operator(w, lg, params.mu)?, params)
}

/// Scales `delta` down to Frobenius norm `k` if it is longer.
pub fn clip_delta(delta: &SparseMatrix, k: f64) -> SparseMatrix {
    let norm = delta.frobenius_norm();
    if norm > k {
        let s = k / norm;
        delta.with_values(delta.values().iter().map(|v| v * s).collect())
    } else {
        delta.clone()
    }
}

/// Euclidean projection of `v` onto the probability simplex, in place.
pub(crate) fn project_simplex(v: &mut [f64]) {
    let sum: f64 = v.iter().sum();
    if v.iter().all(|&x| x >= 0.0) && (sum - 1.0).abs() <= 1e-15 {
        return;
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        acc += uj;
        let t = (acc - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            tau = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - tau).max(0.0);
    }
}

/// Spreads `delta` onto the pattern of `w`, failing if it has mass elsewhere.
fn align_to_pattern(w: &SparseMatrix, delta: &SparseMatrix) -> Result<Vec<f64>> {
    if delta.shape() != w.shape() {
        return Err(Error::ShapeMismatch {
            op: "evolve_weights",
            expected: w.shape(),
            found: delta.shape(),
        });
    }
    if w.same_pattern(delta) {
        return Ok(delta.values().to_vec());
    }
    let mut out = vec![0.0; w.nnz()];
    for i in 0..delta.rows() {
        let (cols, vals) = delta.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            match w.position(i, j) {
                Some(slot) => out[slot] = v,
                None if v == 0.0 => {}
                None => {
                    return Err(Error::invalid(
                        "delta",
                        format!("entry ({i}, {j}) lies outside the weight support"),
                    ))
                }
            }
        }
    }
    Ok(out)
}

/// `W(t+1) = P[W(t) + eta(t) clip(delta)]` with `eta(t) = 1/(1+t)`; `P`
/// projects each row onto the probability simplex over its support, so the
/// result is row-stochastic and `|W(t+1) - W(t)|_F <= eta(t) k`.
pub fn evolve_weights(
    schedule: &WeightSchedule,
    delta: &SparseMatrix,
    t: usize,
) -> Result<SparseMatrix> {
    let w = schedule.weight_at(t)?;
    let d = align_to_pattern(w, &clip_delta(delta, schedule.max_delta_norm))?;
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("weight delta".into()));
    }
    let eta = step_size(t);
    let mut values: Vec<f64> = w
        .values()
        .iter()
        .zip(&d)
        .map(|(a, b)| a + eta * b)
        .collect();
    for i in 0..w.rows() {
        project_simplex(&mut values[w.row_range(i)]);
    }
    Ok(w.with_values(values))
}

/// Feature-driven weight delta: the negative gradient, with respect to `W`,
/// of the disagreement energy `sum_ij W_ij |x_i - x_j|^2 / 2`, centered per
/// row so that row sums are unchanged. Neighbors with closer opinions gain
/// influence.
pub fn energy_delta(x: &FeatureMatrix, pattern: &SparseMatrix) -> SparseMatrix {
    let mut values = vec![0.0; pattern.nnz()];
    for i in 0..pattern.rows() {
        let r = pattern.row_range(i);
        let xi = x.row(i);
        let cols = &pattern.indices()[r.clone()];
        let dist: Vec<f64> = cols
            .iter()
            .map(|&j| {
                0.5 * xi
                    .iter()
                    .zip(x.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .collect();
        if dist.is_empty() {
            continue;
        }
        let mean = dist.iter().sum::<f64>() / dist.len() as f64;
        for (slot, dv) in r.zip(dist) {
            values[slot] = mean - dv;
        }
    }
    pattern.with_values(values)
}

fn relative_change(prev: &FeatureMatrix, next: &FeatureMatrix) -> f64 {
    let diff = prev.distance(next);
    let base = prev.frobenius_norm();
    if base > 0.0 {
        diff / base
    } else {
        diff
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub tolerance: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

struct Runner<'a> {
    x0: &'a FeatureMatrix,
    lg: SparseMatrix,
    params: &'a DiffusionParams,
    one_minus_lambda: Vec<f64>,
    snapshots: Vec<FeatureMatrix>,
    deltas: Vec<f64>,
    bounds: Vec<f64>,
}

impl<'a> Runner<'a> {
    fn new(x0: &'a FeatureMatrix, g: &Graph, params: &'a DiffusionParams) -> Result<Self> {
        params.validate(g.n())?;
        if x0.rows() != g.n() {
            return Err(Error::ShapeMismatch {
                op: "run_diffusion",
                expected: (g.n(), x0.cols()),
                found: x0.shape(),
            });
        }
        x0.ensure_finite("initial features")?;
        Ok(Self {
            x0,
            lg: normalized_laplacian(g),
            params,
            one_minus_lambda: params.one_minus_lambda(),
            snapshots: vec![x0.clone()],
            deltas: Vec::with_capacity(params.steps),
            bounds: Vec::with_capacity(params.steps),
        })
    }

    fn operator(&self, w: &SparseMatrix) -> Result<SparseMatrix> {
        neighborhood_operator(w, &self.lg, self.params.mu)
    }

    fn step(&mut self, op: &SparseMatrix, bound: f64) -> Result<()> {
        let t = self.snapshots.len() - 1;
        let x = self.snapshots.last().unwrap();
        let next = apply_step(x, self.x0, op, self.params)?;
        check_state(&next, t + 1)?;
        self.deltas.push(relative_change(x, &next));
        self.bounds.push(bound);
        self.snapshots.push(next);
        Ok(())
    }

    fn bound(&self, op: &SparseMatrix) -> f64 {
        op_norm_bound(&op.scale_rows(&self.one_minus_lambda))
    }

    fn finish(self, tolerance: f64) -> (Trajectory, ConvergenceReport) {
        let max_bound = self.bounds.iter().cloned().fold(0.0, f64::max);
        let final_delta = *self.deltas.last().unwrap_or(&0.0);
        let alpha = self.params.alpha;
        let report = ConvergenceReport {
            bound_per_step: self.bounds,
            contraction_beta: alpha + (1.0 - alpha) * max_bound,
            converged: final_delta < tolerance,
            final_delta,
            tolerance,
            fixed_point_residual: None,
        };
        (
            Trajectory {
                snapshots: self.snapshots,
                step_deltas: self.deltas,
            },
            report,
        )
    }
}

pub fn run_diffusion(
    x0: &FeatureMatrix,
    g: &Graph,
    params: &DiffusionParams,
    schedule: &WeightSchedule,
) -> Result<(Trajectory, ConvergenceReport)> {
    run_diffusion_with(x0, g, params, schedule, RunOptions::default())
}

/// Runs `params.steps` updates, using `W(t)` from the schedule at step `t`.
pub fn run_diffusion_with(
    x0: &FeatureMatrix,
    g: &Graph,
    params: &DiffusionParams,
    schedule: &WeightSchedule,
    options: RunOptions,
) -> Result<(Trajectory, ConvergenceReport)> {
    if schedule.n() != g.n() {
        return Err(Error::ShapeMismatch {
            op: "run_diffusion",
            expected: (g.n(), g.n()),
            found: schedule.base().shape(),
        });
    }
    if schedule.mode() == WeightMode::Dynamic && schedule.horizon() + 1 < params.steps {
        return Err(Error::invalid(
            "schedule",
            format!(
                "dynamic schedule covers {} steps, {} requested",
                schedule.horizon() + 1,
                params.steps
            ),
        ));
    }
    let mut run = Runner::new(x0, g, params)?;
    let mut cached: Option<(SparseMatrix, f64)> = None;
    for t in 0..params.steps {
        let (op, bound) = match (schedule.mode(), &cached) {
            (WeightMode::Static, Some((op, b))) => (op.clone(), *b),
            _ => {
                let op = run.operator(schedule.weight_at(t)?)?;
                let b = run.bound(&op);
                if schedule.mode() == WeightMode::Static {
                    cached = Some((op.clone(), b));
                }
                (op, b)
            }
        };
        run.step(&op, bound)?;
    }
    Ok(run.finish(options.tolerance))
}

/// Dynamic run whose weights evolve from the state itself:
/// `W(t+1) = evolve(W(t), energy_delta(X(t)), t)`. Returns the materialized
/// schedule alongside the trajectory.
pub fn run_diffusion_adaptive(
    x0: &FeatureMatrix,
    g: &Graph,
    params: &DiffusionParams,
    base: SparseMatrix,
    max_delta_norm: f64,
    options: RunOptions,
) -> Result<(Trajectory, ConvergenceReport, WeightSchedule)> {
    let mut schedule = WeightSchedule::dynamic(base, max_delta_norm)?;
    if schedule.n() != g.n() {
        return Err(Error::ShapeMismatch {
            op: "run_diffusion_adaptive",
            expected: (g.n(), g.n()),
            found: schedule.base().shape(),
        });
    }
    let mut run = Runner::new(x0, g, params)?;
    for t in 0..params.steps {
        if t > 0 {
            let delta = energy_delta(&run.snapshots[t - 1], schedule.stabilized());
            schedule.advance(&delta)?;
        }
        let op = run.operator(schedule.weight_at(t)?)?;
        let bound = run.bound(&op);
        run.step(&op, bound)?;
    }
    let (traj, report) = run.finish(options.tolerance);
    Ok((traj, report, schedule))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMethod {
    /// Dense LU up to [`DENSE_SOLVE_MAX_N`] nodes, Neumann series beyond.
    Auto,
    DenseLu,
    Neumann,
}

/// `X* = (I - M*)^{-1} L X(0)`. Refuses when the norm bound of `M*` does not
/// certify invertibility.
pub fn fixed_point_solve(
    x0: &FeatureMatrix,
    m_star: &SparseMatrix,
    lambda: &[f64],
) -> Result<FeatureMatrix> {
    fixed_point_solve_with(x0, m_star, lambda, SolveMethod::Auto)
}

pub fn fixed_point_solve_with(
    x0: &FeatureMatrix,
    m_star: &SparseMatrix,
    lambda: &[f64],
    method: SolveMethod,
) -> Result<FeatureMatrix> {
    let n = x0.rows();
    if m_star.shape() != (n, n) || lambda.len() != n {
        return Err(Error::ShapeMismatch {
            op: "fixed_point_solve",
            expected: (n, n),
            found: m_star.shape(),
        });
    }
    let bound = op_norm_bound(m_star);
    if !(bound < 1.0) {
        return Err(Error::NotContractive { bound });
    }
    let rhs = x0.scale_rows(lambda);
    if rhs.frobenius_norm() == 0.0 {
        return Ok(rhs);
    }
    let dense = match method {
        SolveMethod::Auto => n <= DENSE_SOLVE_MAX_N,
        SolveMethod::DenseLu => true,
        SolveMethod::Neumann => false,
    };
    let x = if dense {
        dense_solve(m_star, &rhs)?
    } else {
        neumann_solve(m_star, &rhs)?
    };
    x.ensure_finite("fixed point")?;
    Ok(x)
}

fn dense_solve(m: &SparseMatrix, rhs: &FeatureMatrix) -> Result<FeatureMatrix> {
    let n = m.rows();
    let mut a = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        let (cols, vals) = m.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            a[(i, j)] -= v;
        }
    }
    let b = DMatrix::from_row_slice(n, rhs.cols(), rhs.as_slice());
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::NonFinite("singular system I - M".into()))?;
    let mut out = FeatureMatrix::zeros(n, rhs.cols());
    for i in 0..n {
        for k in 0..rhs.cols() {
            out[(i, k)] = sol[(i, k)];
        }
    }
    Ok(out)
}

fn neumann_solve(m: &SparseMatrix, rhs: &FeatureMatrix) -> Result<FeatureMatrix> {
    let mut sum = rhs.clone();
    let mut term = rhs.clone();
    // bound < 1 makes every term shrink geometrically in operator norm
    for _ in 0..1_000_000 {
        term = spmm(m, &term)?;
        for (s, t) in sum.as_mut_slice().iter_mut().zip(term.as_slice()) {
            *s += t;
        }
        if term.frobenius_norm() < 1e-12 {
            return Ok(sum);
        }
    }
    Err(Error::NonFinite("Neumann series did not converge".into()))
}

/// `|(I - M) X - L X(0)|_F / |L X(0)|_F` (absolute when the right-hand side
/// vanishes).
pub fn fixed_point_residual(
    x_star: &FeatureMatrix,
    x0: &FeatureMatrix,
    m: &SparseMatrix,
    lambda: &[f64],
) -> Result<f64> {
    let mx = spmm(m, x_star)?;
    let rhs = x0.scale_rows(lambda);
    let mut res = 0.0;
    for ((x, a), b) in x_star
        .as_slice()
        .iter()
        .zip(mx.as_slice())
        .zip(rhs.as_slice())
    {
        let r = x - a - b;
        res += r * r;
    }
    let scale = rhs.frobenius_norm();
    Ok(if scale > 0.0 {
        res.sqrt() / scale
    } else {
        res.sqrt()
    })
}
