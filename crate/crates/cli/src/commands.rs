use godnf_core::diffusion::{
    fixed_point_residual, run_diffusion_adaptive, run_diffusion_with, trajectory_csv, RunOptions,
};
use godnf_core::experiments::{
    bench_csv, bench_ladder, community_features, growth_factors, influence_pipeline,
    random_features, BenchConfig, ConsensusDemoConfig,
};
use godnf_core::influence::{probabilities_csv, random_seed_set};
use godnf_core::train::{evaluate, history_csv, save_checkpoint};
use godnf_core::{
    combined_matrix, normalized_laplacian, op_norm_bound, simulate as simulate_cascade,
    uniform_row_stochastic, CascadeConfig, DiffusionParams, FeatureMatrix, Targets, Task,
    WeightMode, WeightSchedule,
};
use serde_json::json;

use crate::config::{DiffuseConfig, IeConfig, NcConfig, SimulateConfig};
use crate::{read_input, Artifacts, CliError, CliResult, Outcome};

fn read_features(path: &std::path::Path) -> CliResult<FeatureMatrix> {
    Ok(FeatureMatrix::parse_csv(
        &read_input(path)?,
        &path.display().to_string(),
    )?)
}

/// One non-negative class index per line; blank lines and `#` comments are
/// skipped.
pub fn parse_labels(text: &str, path: &str) -> CliResult<Vec<usize>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let label = line.parse().map_err(|_| {
            CliError::Config(format!(
                "{path}:{}: expected a class index, found `{line}`",
                k + 1
            ))
        })?;
        out.push(label);
    }
    Ok(out)
}

pub fn diffuse(cfg: &DiffuseConfig) -> CliResult<Outcome> {
    cfg.validate()?;
    let (g, _) = cfg.graph.load(cfg.seed)?;
    let x0 = match &cfg.features {
        Some(p) => read_features(p)?,
        None => random_features(g.n(), cfg.dims, cfg.seed),
    };
    let params = DiffusionParams::uniform(g.n(), cfg.alpha, cfg.lambda, cfg.mu, cfg.steps);
    params.validate(g.n())?;
    let w = uniform_row_stochastic(&g, cfg.self_weight)?;
    let options = RunOptions {
        tolerance: cfg.tolerance,
    };
    let (traj, mut report) = match cfg.weight_mode {
        WeightMode::Static => {
            let (traj, mut report) = run_diffusion_with(
                &x0,
                &g,
                &params,
                &WeightSchedule::fixed(w.clone())?,
                options,
            )?;
            let m = combined_matrix(&w, &normalized_laplacian(&g), &params)?;
            if op_norm_bound(&m) < 1.0 {
                report.fixed_point_residual =
                    Some(fixed_point_residual(traj.last(), &x0, &m, &params.lambda)?);
            }
            (traj, report)
        }
        WeightMode::Dynamic => {
            let (traj, report, _) =
                run_diffusion_adaptive(&x0, &g, &params, w, cfg.max_delta_norm, options)?;
            (traj, report)
        }
    };
    report.tolerance = cfg.tolerance;
    let mut out = Artifacts::default();
    out.add("trajectory.csv", trajectory_csv(&traj, &report));
    out.json(
        "report.json",
        &json!({ "nodes": g.n(), "edges": g.m(), "steps": traj.steps(), "report": report }),
    )?;
    out.add("final_state.csv", traj.last().to_csv());
    Ok(out.into())
}

pub fn train_nc(cfg: &NcConfig) -> CliResult<Outcome> {
    cfg.validate()?;
    let seed = cfg.train.seed;
    let (g, communities) = cfg.graph.load(seed)?;
    let (h, labels) = match communities {
        Some(labels) => {
            let k = cfg.graph.sbm.communities;
            (
                community_features(
                    &labels,
                    k,
                    cfg.extra_features,
                    cfg.feature_noise,
                    seed ^ 0x5eed,
                ),
                labels,
            )
        }
        None => {
            let (fp, lp) = (cfg.features.as_ref().unwrap(), cfg.labels.as_ref().unwrap());
            let labels = parse_labels(&read_input(lp)?, &lp.display().to_string())?;
            (read_features(fp)?, labels)
        }
    };
    if labels.len() != g.n() || h.rows() != g.n() {
        return Err(CliError::Config(format!(
            "graph has {} nodes but features have {} rows and labels {} entries",
            g.n(),
            h.rows(),
            labels.len()
        )));
    }
    let mut tc = cfg.train.clone();
    tc.task = Task::Classification {
        classes: labels.iter().max().map_or(1, |m| m + 1).max(2),
    };
    let targets = Targets::Classes(labels);
    let outcome = godnf_core::train(&g, &h, &targets, &tc)?;
    let val = evaluate(&outcome.params, &g, &h, &targets, &outcome.split.val, &tc)?;
    let test = evaluate(&outcome.params, &g, &h, &targets, &outcome.split.test, &tc)?;
    let mut checkpoint = Vec::new();
    save_checkpoint(&mut checkpoint, &outcome.params, &tc)?;
    let mut out = Artifacts::default();
    out.add("history.csv", history_csv(&outcome.history));
    out.json(
        "metrics.json",
        &json!({
            "nodes": g.n(),
            "edges": g.m(),
            "parameters": outcome.params.count(),
            "best_epoch": outcome.best_epoch,
            "val_accuracy": val,
            "test_accuracy": test,
        }),
    )?;
    out.add("model.ckpt", checkpoint);
    Ok(out.into())
}

pub fn train_ie(cfg: &IeConfig) -> CliResult<Outcome> {
    let (g, _) = cfg.graph.load(cfg.influence.seed)?;
    let report = influence_pipeline(&g, &cfg.influence)?;
    let mut out = Artifacts::default();
    out.add("ground_truth.csv", probabilities_csv(&report.probabilities));
    out.json("report.json", &report)?;
    Ok(out.into())
}

pub fn simulate(cfg: &SimulateConfig) -> CliResult<Outcome> {
    let (g, _) = cfg.graph.load(cfg.seed)?;
    let seed_set = match &cfg.seed_set {
        Some(s) => s.clone(),
        None => random_seed_set(g.n(), cfg.seed_fraction, cfg.seed)?,
    };
    let cascade = CascadeConfig {
        model: cfg.cascade,
        runs: cfg.runs,
        seed_set,
        rng_seed: cfg.seed,
    };
    cascade.validate(g.n())?;
    let probs = simulate_cascade(&g, &cascade)?;
    let mut out = Artifacts::default();
    out.add("probabilities.csv", probabilities_csv(&probs));
    out.json(
        "summary.json",
        &json!({ "nodes": g.n(), "edges": g.m(), "cascade": cascade, "expected_spread": probs.iter().sum::<f64>() }),
    )?;
    Ok(out.into())
}

pub fn consensus_demo(cfg: &ConsensusDemoConfig) -> CliResult<Outcome> {
    let results = godnf_core::experiments::consensus_demo(cfg)?;
    let mut out = Artifacts::default();
    out.json(
        "consensus.json",
        &json!({
            "seed": cfg.seed,
            "tolerance": cfg.tolerance,
            "scenarios": results.iter().map(|r| r.to_json()).collect::<Vec<_>>(),
        }),
    )?;
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| {
            format!(
                "{} (expected {}, got {})",
                r.name, r.expected, r.report.kind
            )
        })
        .collect();
    Ok(Outcome {
        artifacts: out,
        failure: (!failed.is_empty())
            .then(|| CliError::Check(format!("scenario mismatch: {}", failed.join(", ")))),
    })
}

pub fn bench(cfg: &BenchConfig) -> CliResult<Outcome> {
    let rows = bench_ladder(cfg)?;
    let mut out = Artifacts::default();
    out.add("bench.csv", bench_csv(&rows));
    out.json(
        "bench.json",
        &json!({ "rows": rows, "growth_factors": growth_factors(&rows) }),
    )?;
    Ok(out.into())
}
