//! End-to-end pipelines shared by the command-line runner and the
//! acceptance suite: the consensus demonstration on a community graph, SBM
//! node classification, influence estimation and the per-step timing ladder.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::{
    classify_run, verify_theorem_conditions, ConsensusKind, ConsensusReport, Theorem,
    TheoremThresholds,
};
use crate::diffusion::{godnf_step, DiffusionParams, WeightSchedule};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::{normalized_laplacian, uniform_row_stochastic, Graph};
use crate::influence::{random_seed_set, simulate, CascadeConfig, CascadeModel};
use crate::sbm::{generate_sbm, Sbm};
use crate::sparse::SparseMatrix;
use crate::train::{evaluate, mean_predictor_mae, train, Split, Targets, Task, TrainConfig};

/// Resampling budget when a scenario needs a particular connectivity.
const MAX_GRAPH_ATTEMPTS: u64 = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsensusDemoConfig {
    pub nodes: usize,
    pub communities: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub seed: u64,
    pub tolerance: f64,
    pub max_steps: usize,
}

impl Default for ConsensusDemoConfig {
    fn default() -> Self {
        Self {
            nodes: 50,
            communities: 5,
            p_in: 0.5,
            p_out: 0.02,
            seed: 0,
            tolerance: crate::consensus::DEFAULT_CLUSTER_TOL,
            max_steps: 200_000,
        }
    }
}

impl ConsensusDemoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.communities < 2 || self.communities > self.nodes {
            return Err(Error::invalid(
                "communities",
                "need 2 <= communities <= nodes",
            ));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance", "must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.p_in) || !(0.0..=self.p_in).contains(&self.p_out) {
            return Err(Error::invalid("p_out", "need 0 <= p_out <= p_in <= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioResult {
    pub name: &'static str,
    pub theorem: Theorem,
    pub hypotheses_hold: bool,
    pub expected: ConsensusKind,
    pub report: ConsensusReport,
    pub steps: usize,
    pub passed: bool,
}

impl ScenarioResult {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "scenario": self.name,
            "theorem": self.theorem,
            "hypotheses_hold": self.hypotheses_hold,
            "expected": self.expected.to_string(),
            "steps": self.steps,
            "passed": self.passed,
            "report": self.report.to_json(),
        })
    }
}

/// Iterates until the state stops moving (relative change below `1e-13`)
/// or `max_steps` is reached.
fn settle(
    x0: &FeatureMatrix,
    w: &SparseMatrix,
    lg: &SparseMatrix,
    params: &DiffusionParams,
    max_steps: usize,
) -> Result<(FeatureMatrix, bool, usize)> {
    let mut x = x0.clone();
    for t in 1..=max_steps {
        let next = godnf_step(&x, x0, w, lg, params)?;
        let moved = next.distance(&x);
        let scale = next.frobenius_norm().max(1.0);
        x = next;
        if moved <= 1e-13 * scale {
            return Ok((x, true, t));
        }
    }
    Ok((x, false, max_steps))
}

/// `n x d` states drawn uniformly from `[-1, 1)`.
pub fn random_features(n: usize, d: usize, seed: u64) -> FeatureMatrix {
    random_states(n, d, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn random_states(n: usize, d: usize, rng: &mut ChaCha8Rng) -> FeatureMatrix {
    FeatureMatrix::from_vec(
        n,
        d,
        (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .expect("sizes agree")
}

/// Samples SBMs with consecutive seeds until `accept` holds.
fn sbm_where(
    cfg: &ConsensusDemoConfig,
    p_out: f64,
    salt: u64,
    accept: impl Fn(&Sbm) -> bool,
) -> Result<Sbm> {
    for attempt in 0..MAX_GRAPH_ATTEMPTS {
        let seed = cfg
            .seed
            .wrapping_mul(1_000_003)
            .wrapping_add(salt * 7919 + attempt);
        let s = generate_sbm(cfg.nodes, cfg.communities, cfg.p_in, p_out, seed)?;
        if accept(&s) {
            return Ok(s);
        }
    }
    Err(Error::invalid(
        "p_in",
        "could not sample a graph with the required connectivity",
    ))
}

fn communities_connected(s: &Sbm) -> bool {
    (0..s.k).all(|c| {
        let members = s.community(c);
        s.graph
            .induced(&members)
            .map(|g| g.is_connected())
            .unwrap_or(false)
    })
}

/// Local-search max-cut 2-coloring inside each community, started from
/// index parity. Every community with an edge ends up with both colors.
pub fn heterophily_coloring(s: &Sbm) -> Vec<bool> {
    let n = s.graph.n();
    let mut color = vec![false; n];
    for c in 0..s.k {
        for (r, &i) in s.community(c).iter().enumerate() {
            color[i] = r % 2 == 1;
        }
    }
    let same_community = |i: usize, j: usize| s.labels[i] == s.labels[j];
    loop {
        let mut flipped = false;
        for i in 0..n {
            let (mut same, mut diff) = (0, 0);
            for &j in s.graph.neighbors(i) {
                if same_community(i, j) {
                    if color[i] == color[j] {
                        same += 1;
                    } else {
                        diff += 1;
                    }
                }
            }
            if same > diff {
                color[i] = !color[i];
                flipped = true;
            }
        }
        if !flipped {
            return color;
        }
    }
}

/// Lazy weights that only listen to same-community neighbors of the same
/// color; cross-color edges keep zero weight.
fn color_restricted_weights(s: &Sbm, color: &[bool], self_weight: f64) -> SparseMatrix {
    let mut w = s.graph.support();
    for i in 0..s.graph.n() {
        let peers = |j: usize| j != i && color[j] == color[i] && s.labels[j] == s.labels[i];
        let r = w.row_range(i);
        let cols: Vec<usize> = w.indices()[r.clone()].to_vec();
        let count = cols.iter().filter(|&&j| peers(j)).count();
        for (slot, j) in r.zip(cols) {
            w.values_mut()[slot] = if j == i {
                if count == 0 {
                    1.0
                } else {
                    self_weight
                }
            } else if count > 0 && peers(j) {
                (1.0 - self_weight) / count as f64
            } else {
                0.0
            };
        }
    }
    w
}

fn community_vectors(k: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    // spaced so that no two communities (or their negations) coincide
    (0..k)
        .map(|c| {
            (0..d)
                .map(|a| {
                    (c as f64 + 1.0)
                        * if a == 0 {
                            1.0
                        } else {
                            rng.random_range(0.5..1.0)
                        }
                })
                .collect()
        })
        .collect()
}

fn run_scenario(
    name: &'static str,
    theorem: Theorem,
    g: &Graph,
    w: SparseMatrix,
    params: DiffusionParams,
    x0: FeatureMatrix,
    cfg: &ConsensusDemoConfig,
) -> Result<ScenarioResult> {
    let lg = normalized_laplacian(g);
    let schedule = WeightSchedule::fixed(w.clone())?;
    let thresholds = TheoremThresholds {
        cluster_tol: cfg.tolerance,
        ..TheoremThresholds::default()
    };
    let check = verify_theorem_conditions(&params, &schedule, &lg, &x0, &thresholds)
        .into_iter()
        .find(|c| c.theorem == theorem)
        .expect("every theorem is checked");
    let (state, converged, steps) = settle(&x0, &w, &lg, &params, cfg.max_steps)?;
    let report = classify_run(&state, converged, cfg.tolerance);
    let passed = check.satisfied && report.kind.matches(&check.expected);
    Ok(ScenarioResult {
        name,
        theorem,
        hypotheses_hold: check.satisfied,
        expected: check.expected,
        report,
        steps,
        passed,
    })
}

/// Four runs on a community graph, each configured to satisfy one of the
/// consensus results: single consensus (pure lazy averaging on a connected
/// graph), homophilous multi consensus (disconnected communities with
/// per-community initial states), heterophilous multi consensus
/// (sign-flipped states on a 2-coloring of each community) and
/// individualized consensus (strong stubbornness).
pub fn consensus_demo(cfg: &ConsensusDemoConfig) -> Result<Vec<ScenarioResult>> {
    cfg.validate()?;
    let n = cfg.nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(4);

    let connected = sbm_where(cfg, cfg.p_out.max(f64::MIN_POSITIVE), 1, |s| {
        s.graph.is_connected()
    })?;
    out.push(run_scenario(
        "single",
        Theorem::SingleConsensus,
        &connected.graph,
        uniform_row_stochastic(&connected.graph, 0.5)?,
        DiffusionParams::uniform(n, 0.0, 0.0, 0.0, 1),
        random_states(n, 2, &mut rng),
        cfg,
    )?);

    let blocks = sbm_where(cfg, 0.0, 2, communities_connected)?;
    let v = community_vectors(blocks.k, 2, &mut rng);
    let x0 = FeatureMatrix::from_rows(
        &(0..n)
            .map(|i| v[blocks.labels[i]].clone())
            .collect::<Vec<_>>(),
    )?;
    out.push(run_scenario(
        "multi_homophily",
        Theorem::MultiConsensus,
        &blocks.graph,
        uniform_row_stochastic(&blocks.graph, 0.5)?,
        DiffusionParams::uniform(n, 0.3, 0.6, 0.0, 1),
        x0,
        cfg,
    )?);

    let color = heterophily_coloring(&blocks);
    let signed: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let s = if color[i] { -1.0 } else { 1.0 };
            v[blocks.labels[i]].iter().map(|a| s * a).collect()
        })
        .collect();
    out.push(run_scenario(
        "multi_heterophily",
        Theorem::MultiConsensus,
        &blocks.graph,
        color_restricted_weights(&blocks, &color, 0.5),
        DiffusionParams::uniform(n, 0.3, 0.6, 0.0, 1),
        FeatureMatrix::from_rows(&signed)?,
        cfg,
    )?);

    out.push(run_scenario(
        "individualized",
        Theorem::IndividualizedConsensus,
        &connected.graph,
        uniform_row_stochastic(&connected.graph, 0.5)?,
        DiffusionParams::uniform(n, 0.3, 0.99, 0.1, 1),
        random_states(n, 4, &mut rng),
        cfg,
    )?);
    Ok(out)
}

/// One-hot community indicator plus uniform noise in `[-noise, noise]`,
/// followed by `extra` pure-noise columns. With `noise < 0.5` the classes
/// are linearly separable on the indicator columns alone.
pub fn community_features(
    labels: &[usize],
    k: usize,
    extra: usize,
    noise: f64,
    seed: u64,
) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = k + extra;
    let mut h = FeatureMatrix::zeros(labels.len(), cols);
    for (i, &l) in labels.iter().enumerate() {
        for c in 0..cols {
            let base = if c == l { 1.0 } else { 0.0 };
            h[(i, c)] = base
                + if noise > 0.0 {
                    rng.random_range(-noise..noise)
                } else {
                    0.0
                };
        }
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassificationConfig {
    pub nodes: usize,
    pub communities: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_noise: f64,
    pub extra_features: usize,
    pub train: TrainConfig,
}

impl Default for ClassificationConfig {
    fn default() -> Self {
        Self {
            nodes: 50,
            communities: 2,
            p_in: 0.5,
            p_out: 0.02,
            feature_noise: 0.4,
            extra_features: 2,
            train: TrainConfig {
                task: Task::Classification { classes: 2 },
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassificationReport {
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub best_epoch: usize,
    #[serde(skip)]
    pub outcome: crate::train::TrainOutcome,
}

/// Trains on an SBM whose classes are its communities.
pub fn sbm_classification(cfg: &ClassificationConfig) -> Result<ClassificationReport> {
    let seed = cfg.train.seed;
    let sbm = generate_sbm(cfg.nodes, cfg.communities, cfg.p_in, cfg.p_out, seed)?;
    let h = community_features(
        &sbm.labels,
        cfg.communities,
        cfg.extra_features,
        cfg.feature_noise,
        seed ^ 0x5eed,
    );
    let mut tc = cfg.train.clone();
    tc.task = Task::Classification {
        classes: cfg.communities,
    };
    let targets = Targets::Classes(sbm.labels.clone());
    let outcome = train(&sbm.graph, &h, &targets, &tc)?;
    let val = evaluate(
        &outcome.params,
        &sbm.graph,
        &h,
        &targets,
        &outcome.split.val,
        &tc,
    )?;
    let test = evaluate(
        &outcome.params,
        &sbm.graph,
        &h,
        &targets,
        &outcome.split.test,
        &tc,
    )?;
    Ok(ClassificationReport {
        val_accuracy: val,
        test_accuracy: test,
        best_epoch: outcome.best_epoch,
        outcome,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InfluenceConfig {
    pub seed_fraction: f64,
    pub cascade: CascadeModel,
    pub runs: usize,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        Self {
            seed_fraction: 0.1,
            cascade: CascadeModel::ic(),
            runs: 10_000,
            seed: 0,
            train: TrainConfig {
                task: Task::Regression {
                    outputs: 1,
                    sigmoid: true,
                },
                epochs: 1000,
                learning_rate: 1.0,
                steps: 4,
                hidden: 8,
                init_lambda: 0.7,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InfluenceReport {
    pub seed_set: Vec<usize>,
    pub model_mae: f64,
    pub baseline_mae: f64,
    pub train_model_mae: f64,
    pub train_baseline_mae: f64,
    /// `1 - model_mae / baseline_mae` on the test split.
    pub relative_improvement: f64,
    pub best_epoch: usize,
    #[serde(skip)]
    pub probabilities: Vec<f64>,
}

/// Seed indicator and degree scaled by the maximum degree.
pub fn influence_features(g: &Graph, seed_set: &[usize]) -> FeatureMatrix {
    let max_deg = g.degrees().into_iter().max().unwrap_or(0).max(1) as f64;
    let mut h = FeatureMatrix::zeros(g.n(), 2);
    for i in 0..g.n() {
        h[(i, 1)] = g.degree(i) as f64 / max_deg;
    }
    for &s in seed_set {
        h[(s, 0)] = 1.0;
    }
    h
}

/// Simulates activation probabilities from a random seed set, trains a
/// regression model on them and compares its MAE with predicting the mean
/// training target.
pub fn influence_pipeline(g: &Graph, cfg: &InfluenceConfig) -> Result<InfluenceReport> {
    let tag = |stage: &str, e: Error| match e {
        Error::Divergence { .. } | Error::TrainingDiverged { .. } => e,
        other => Error::invalid(stage, other.to_string()),
    };
    let seed_set =
        random_seed_set(g.n(), cfg.seed_fraction, cfg.seed).map_err(|e| tag("simulate", e))?;
    let cascade = CascadeConfig {
        model: cfg.cascade,
        runs: cfg.runs,
        seed_set: seed_set.clone(),
        rng_seed: cfg.seed,
    };
    let probabilities = simulate(g, &cascade).map_err(|e| tag("simulate", e))?;
    let values = FeatureMatrix::column(&probabilities);
    let targets = Targets::Values(values.clone());
    let h = influence_features(g, &seed_set);
    let mut tc = cfg.train.clone();
    tc.task = Task::Regression {
        outputs: 1,
        sigmoid: true,
    };
    tc.seed = cfg.seed;
    let split = Split::random(g.n(), tc.split, cfg.seed);
    let outcome =
        crate::train::train_with_split(g, &h, &targets, &tc, split).map_err(|e| tag("train", e))?;
    let split = &outcome.split;
    let model_mae = evaluate(&outcome.params, g, &h, &targets, &split.test, &tc)?;
    let train_model_mae = evaluate(&outcome.params, g, &h, &targets, &split.train, &tc)?;
    let baseline_mae = mean_predictor_mae(&values, &split.train, &split.test)?;
    let train_baseline_mae = mean_predictor_mae(&values, &split.train, &split.train)?;
    Ok(InfluenceReport {
        seed_set,
        model_mae,
        baseline_mae,
        train_model_mae,
        train_baseline_mae,
        relative_improvement: if baseline_mae > 0.0 {
            1.0 - model_mae / baseline_mae
        } else {
            0.0
        },
        best_epoch: outcome.best_epoch,
        probabilities,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Edge count of the smallest graph.
    pub base_edges: usize,
    /// Number of doublings after the base size.
    pub doublings: usize,
    pub hidden: usize,
    pub avg_degree: usize,
    /// Endpoints of every edge lie within this many positions of each other,
    /// which keeps memory access local as the graph grows.
    pub window: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            base_edges: 50_000,
            doublings: 4,
            hidden: 8,
            avg_degree: 8,
            window: 64,
            repeats: 31,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_edges == 0 {
            return Err(Error::invalid("base_edges", "must be >= 1"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden", "must be >= 1"));
        }
        if self.avg_degree < 2 {
            return Err(Error::invalid("avg_degree", "must be >= 2"));
        }
        if self.window < self.avg_degree {
            return Err(Error::invalid("window", "must be >= avg_degree"));
        }
        if self.repeats == 0 {
            return Err(Error::invalid("repeats", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub edges: usize,
    pub nodes: usize,
    pub hidden: usize,
    pub ns_per_step: f64,
}

/// Random graph with about `m` edges on `2m / avg_degree` nodes, every edge
/// joining nodes at most `window` apart.
pub fn local_random_graph(m: usize, avg_degree: usize, window: usize, seed: u64) -> Result<Graph> {
    let n = (2 * m / avg_degree).max(window + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity(m + m / 8);
    let mut seen = std::collections::HashSet::with_capacity(m + m / 8);
    while edges.len() < m {
        let u = rng.random_range(0..n);
        let v = (u + rng.random_range(1..=window)) % n;
        let e = (u.min(v), u.max(v));
        if seen.insert(e) {
            edges.push(e);
        }
    }
    Graph::new(n, &edges)
}

/// Minimum wall time of one diffusion step on `g` with `d`-dimensional state.
/// Interference only ever adds time, so the minimum is the stable estimate.
pub fn time_step(g: &Graph, d: usize, repeats: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = random_states(g.n(), d, &mut rng);
    let w = uniform_row_stochastic(g, 0.5)?;
    let lg = normalized_laplacian(g);
    let params = DiffusionParams::uniform(g.n(), 0.2, 0.3, 0.1, 1);
    let mut x = godnf_step(&x0, &x0, &w, &lg, &params)?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        x = godnf_step(&x, &x0, &w, &lg, &params)?;
        times.push(start.elapsed().as_nanos() as f64);
    }
    std::hint::black_box(&x);
    Ok(times.into_iter().fold(f64::INFINITY, f64::min))
}

/// Per-step timings over graphs with `base_edges * 2^k` edges.
pub fn bench_ladder(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    (0..=cfg.doublings)
        .map(|k| {
            let m = cfg.base_edges << k;
            let g = local_random_graph(m, cfg.avg_degree, cfg.window, cfg.seed + k as u64)?;
            Ok(BenchRow {
                edges: g.m(),
                nodes: g.n(),
                hidden: cfg.hidden,
                ns_per_step: time_step(&g, cfg.hidden, cfg.repeats, cfg.seed)?,
            })
        })
        .collect()
}

/// `m,ns_per_step` rows.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("m,ns_per_step\n");
    for r in rows {
        out.push_str(&format!("{},{:.0}\n", r.edges, r.ns_per_step));
    }
    out
}

/// Consecutive time ratios of a ladder.
pub fn growth_factors(rows: &[BenchRow]) -> Vec<f64> {
    rows.windows(2)
        .map(|w| w[1].ns_per_step / w[0].ns_per_step)
        .collect()
}
