//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs as a plain binary so timings are not shared with
//! other tests.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use godnf_core::diffusion::{fixed_point_solve, run_diffusion_with, RunOptions};
use godnf_core::experiments::{
    influence_pipeline, sbm_classification, ClassificationConfig, InfluenceConfig,
};
use godnf_core::graph::graphs_up_to_isomorphism;
use godnf_core::influence::{exact_ic, simulate_ic, simulate_lt, simulate_sis};
use godnf_core::opinion::{fd_step, fj_step, FjConfig};
use godnf_core::train::{gradient_check, ModelParams};
use godnf_core::{
    combined_matrix, generate_sbm, godnf_step, normalized_laplacian, op_norm_bound, spmm,
    CascadeConfig, CascadeModel, DiffusionParams, EdgeProbability, FeatureMatrix, Graph,
    SparseMatrix, Targets, Task, TrainConfig, WeightMode, WeightSchedule,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Graph {
    let edges: Vec<_> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|_| rng.random::<f64>() < p)
        .collect();
    Graph::new(n, &edges).unwrap()
}

fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> FeatureMatrix {
    FeatureMatrix::from_vec(
        r,
        c,
        (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Random positive row-stochastic weights on the graph support.
fn random_weights(g: &Graph, rng: &mut ChaCha8Rng) -> SparseMatrix {
    let s = g.support();
    let mut values: Vec<f64> = (0..s.nnz()).map(|_| rng.random_range(0.05..1.0)).collect();
    for i in 0..s.rows() {
        let r = s.row_range(i);
        let sum: f64 = values[r.clone()].iter().sum();
        values[r].iter_mut().for_each(|v| *v /= sum);
    }
    s.with_values(values)
}

struct Instance {
    g: Graph,
    w: SparseMatrix,
    x0: FeatureMatrix,
    lambda: Vec<f64>,
    mu: f64,
}

impl Instance {
    /// n <= 30, d <= 4, stubbornness rescaled so the norm bound is <= 0.9.
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=30);
        let d = rng.random_range(1..=4);
        let g = random_graph(n, rng.random_range(0.1..0.5), &mut rng);
        let w = random_weights(&g, &mut rng);
        let mut lambda: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.9)).collect();
        let mu = rng.random_range(0.0..0.5);
        let bound = op_norm_bound(
            &combined_matrix(
                &w,
                &normalized_laplacian(&g),
                &DiffusionParams {
                    alpha: 0.0,
                    lambda: lambda.clone(),
                    mu,
                    steps: 1,
                },
            )
            .unwrap(),
        );
        if bound > 0.9 {
            let s = 0.9 / bound;
            lambda.iter_mut().for_each(|l| *l = 1.0 - (1.0 - *l) * s);
        }
        let x0 = random_matrix(n, d, &mut rng);
        Instance {
            g,
            w,
            x0,
            lambda,
            mu,
        }
    }

    fn params(&self, alpha: f64, steps: usize) -> DiffusionParams {
        DiffusionParams {
            alpha,
            lambda: self.lambda.clone(),
            mu: self.mu,
            steps,
        }
    }

    fn combined(&self) -> SparseMatrix {
        combined_matrix(
            &self.w,
            &normalized_laplacian(&self.g),
            &self.params(0.0, 1),
        )
        .unwrap()
    }

    fn fixed_point(&self) -> FeatureMatrix {
        fixed_point_solve(&self.x0, &self.combined(), &self.lambda).unwrap()
    }
}

fn within(elapsed: Duration, limit: f64) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit {
        Ok(())
    } else {
        Err(format!(
            "took {:.2}s, limit {limit}s",
            elapsed.as_secs_f64()
        ))
    }
}

fn fixed_point_equivalence() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut max_bound = 0.0f64;
    for k in 0..30 {
        let inst = Instance::new(1000 + k);
        let bound = op_norm_bound(&inst.combined());
        max_bound = max_bound.max(bound);
        if bound > 0.9 + 1e-12 {
            return Err(format!("instance {k}: bound {bound} > 0.9"));
        }
        let alpha = ChaCha8Rng::seed_from_u64(k).random_range(0.0..0.5);
        let schedule = WeightSchedule::fixed(inst.w.clone()).unwrap();
        let (traj, _) = run_diffusion_with(
            &inst.x0,
            &inst.g,
            &inst.params(alpha, 500),
            &schedule,
            RunOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        let x_star = inst.fixed_point();
        let err = traj.last().distance(&x_star) / x_star.frobenius_norm().max(f64::MIN_POSITIVE);
        if !(err < 1e-8) {
            return Err(format!("instance {k}: relative error {err:e}"));
        }
        worst = worst.max(err);
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!(
        "30 instances, max bound {max_bound:.3}, max relative error {worst:.1e}, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn contraction() -> Check {
    let mut checked = 0;
    let mut tightest = f64::INFINITY;
    for k in 0..30 {
        let inst = Instance::new(1000 + k);
        let x_star = inst.fixed_point();
        let schedule = WeightSchedule::fixed(inst.w.clone()).unwrap();
        for alpha in [0.0, 0.3, 0.6, 0.9] {
            let (traj, report) = run_diffusion_with(
                &inst.x0,
                &inst.g,
                &inst.params(alpha, 200),
                &schedule,
                RunOptions::default(),
            )
            .map_err(|e| e.to_string())?;
            for t in 0..traj.steps() {
                let beta = alpha + (1.0 - alpha) * report.bound_per_step[t];
                let lhs = traj.snapshots[t + 1].distance(&x_star);
                let rhs = beta * traj.snapshots[t].distance(&x_star) + 1e-9;
                if lhs > rhs {
                    return Err(format!(
                        "instance {k}, alpha {alpha}, step {t}: {lhs:e} > {rhs:e}"
                    ));
                }
                tightest = tightest.min(rhs - lhs);
                checked += 1;
            }
        }
    }
    Ok(format!(
        "{checked} steps over 30 instances x 4 alphas, min slack {tightest:.1e}"
    ))
}

fn power_iteration_norm(m: &SparseMatrix, rng: &mut ChaCha8Rng) -> f64 {
    let mt = m.transpose();
    let mut v = random_matrix(m.cols(), 1, rng);
    let mut sigma = 0.0;
    for _ in 0..2000 {
        let norm = v.frobenius_norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = v.scale_rows(&vec![1.0 / norm; v.rows()]);
        let mv = spmm(m, &v).unwrap();
        sigma = mv.frobenius_norm();
        v = spmm(&mt, &mv).unwrap();
    }
    sigma
}

fn norm_bound_soundness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut min_gap = f64::INFINITY;
    for k in 0..200 {
        let n = rng.random_range(1..=50);
        let density = rng.random_range(0.02..0.5);
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if rng.random::<f64>() < density {
                    triplets.push((i, j, rng.random_range(-2.0..2.0)));
                }
            }
        }
        let m = SparseMatrix::from_triplets(n, n, &triplets).unwrap();
        let bound = op_norm_bound(&m);
        let sigma = power_iteration_norm(&m, &mut rng);
        // only rounding in the last bits is tolerated
        if bound < sigma * (1.0 - 1e-12) {
            return Err(format!(
                "matrix {k}: bound {bound} < spectral estimate {sigma}"
            ));
        }
        if sigma > 0.0 {
            min_gap = min_gap.min(bound / sigma);
        }
    }
    Ok(format!(
        "200 matrices, min bound/spectral ratio {min_gap:.4}"
    ))
}

fn godnf_binary() -> &'static str {
    env!("CARGO_BIN_EXE_godnf")
}

fn run_cli(args: &[&str], out: &Path) -> Result<(), String> {
    let status = Command::new(godnf_binary())
        .args(args)
        .arg("--out")
        .arg(out)
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("`godnf {}` exited with {status}", args.join(" ")))
    }
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn consensus_theorems(dir: &Path) -> Check {
    let start = Instant::now();
    for seed in 0..10 {
        let out = dir.join(format!("consensus-{seed}"));
        run_cli(&["consensus-demo", "--seed", &seed.to_string()], &out)?;
        let doc = read_json(&out.join("consensus.json"))?;
        let kinds: Vec<(String, String, u64)> = doc["scenarios"]
            .as_array()
            .ok_or("missing scenarios")?
            .iter()
            .map(|s| {
                (
                    s["scenario"].as_str().unwrap_or("").to_string(),
                    s["report"]["kind"].as_str().unwrap_or("").to_string(),
                    s["report"]["k"].as_u64().unwrap_or(0),
                )
            })
            .collect();
        let ok = kinds.len() == 4
            && kinds[0].1 == "single"
            && kinds[1].1 == "multi"
            && kinds[1].2 == 5
            && kinds[2].1 == "multi"
            && kinds[3].1 == "individualized";
        if !ok {
            return Err(format!("seed {seed}: {kinds:?}"));
        }
    }
    within(start.elapsed(), 30.0)?;
    Ok(format!(
        "10/10 seeds single / multi(5) / multi(k) / individualized, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn gradient_instance(
    seed: u64,
    mode: WeightMode,
) -> (
    Graph,
    FeatureMatrix,
    ModelParams,
    Targets,
    Vec<usize>,
    TrainConfig,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=9);
    let g = random_graph(n, 0.45, &mut rng);
    let f = rng.random_range(1..=3);
    let classification = rng.random_bool(0.5);
    let cfg = TrainConfig {
        task: if classification {
            Task::Classification { classes: 2 }
        } else {
            Task::Regression {
                outputs: 1,
                sigmoid: rng.random_bool(0.5),
            }
        },
        steps: rng.random_range(1..=5),
        hidden: rng.random_range(1..=4),
        alpha: rng.random_range(0.0..0.5),
        weight_mode: mode,
        max_delta_norm: rng.random_range(0.05..0.5),
        margin: rng.random_range(0.3..0.99),
        seed,
        ..TrainConfig::default()
    };
    let h = random_matrix(n, f, &mut rng);
    let mut params = ModelParams::init(&g, f, &cfg).unwrap();
    params
        .lambda_logits
        .iter_mut()
        .for_each(|l| *l = rng.random_range(-2.0..1.0));
    params.mu_logit = rng.random_range(-2.0..0.5);
    params
        .edge_logits
        .iter_mut()
        .for_each(|l| *l = rng.random_range(-1.5..1.5));
    params
        .f_bias
        .iter_mut()
        .for_each(|b| *b = rng.random_range(-0.3..0.3));
    let targets = if classification {
        Targets::Classes((0..n).map(|_| rng.random_range(0..2)).collect())
    } else {
        Targets::Values(
            FeatureMatrix::from_vec(n, 1, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap(),
        )
    };
    let mask: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.7)).collect();
    let mask = if mask.is_empty() { vec![0] } else { mask };
    (g, h, params, targets, mask, cfg)
}

fn gradient_correctness() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for k in 0..50 {
        let mode = if k % 2 == 0 {
            WeightMode::Static
        } else {
            WeightMode::Dynamic
        };
        let (g, h, params, targets, mask, cfg) = gradient_instance(5000 + k, mode);
        let err = gradient_check(&g, &h, &params, &targets, &mask, &cfg, 1e-5)
            .map_err(|e| e.to_string())?;
        if !(err < 1e-5) {
            return Err(format!("check {k} ({mode:?}): relative error {err:e}"));
        }
        worst = worst.max(err);
    }
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "50 checks (25 static, 25 dynamic), max relative error {worst:.1e}, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn bits(x: &FeatureMatrix) -> Vec<u64> {
    x.as_slice().iter().map(|v| v.to_bits()).collect()
}

fn reductions() -> Check {
    for k in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + k);
        let n = rng.random_range(2..=30);
        let g = random_graph(n, rng.random_range(0.1..0.5), &mut rng);
        let w = random_weights(&g, &mut rng);
        let lg = normalized_laplacian(&g);
        let x0 = random_matrix(n, rng.random_range(1..=4), &mut rng);

        let fd_params = DiffusionParams::uniform(n, 0.0, 0.0, 0.0, 1);
        let (mut a, mut b) = (x0.clone(), x0.clone());
        for t in 0..20 {
            a = godnf_step(&a, &x0, &w, &lg, &fd_params).map_err(|e| e.to_string())?;
            b = fd_step(&b, &w).map_err(|e| e.to_string())?;
            if bits(&a) != bits(&b) {
                return Err(format!("FD instance {k}, step {t} differs"));
            }
        }

        let lambda: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let fj = FjConfig::new(lambda.clone(), w.clone()).map_err(|e| e.to_string())?;
        let fj_params = DiffusionParams {
            alpha: 0.0,
            lambda,
            mu: 0.0,
            steps: 1,
        };
        let (mut a, mut b) = (x0.clone(), x0.clone());
        for t in 0..20 {
            a = godnf_step(&a, &x0, &w, &lg, &fj_params).map_err(|e| e.to_string())?;
            b = fj_step(&b, &x0, &fj).map_err(|e| e.to_string())?;
            if bits(&a) != bits(&b) {
                return Err(format!("FJ instance {k}, step {t} differs"));
            }
        }
    }
    Ok("20 FD + 20 FJ instances bit-identical over 20 steps each".into())
}

fn cascade(model: CascadeModel, runs: usize, seed_set: Vec<usize>) -> CascadeConfig {
    CascadeConfig {
        model,
        runs,
        seed_set,
        rng_seed: 0,
    }
}

fn influence_oracles() -> Check {
    let runs = 100_000;
    let (mut graphs, mut comparisons, mut worst) = (0, 0, 0.0f64);
    for n in 1..=6 {
        for g in graphs_up_to_isomorphism(n).map_err(|e| e.to_string())? {
            graphs += 1;
            let exact =
                exact_ic(&g, &[0], EdgeProbability::WeightedCascade).map_err(|e| e.to_string())?;
            let est = simulate_ic(&g, &cascade(CascadeModel::ic(), runs, vec![0]))
                .map_err(|e| e.to_string())?;
            for v in 0..n {
                let p = exact[v];
                let sd = (p * (1.0 - p) / runs as f64).sqrt();
                let ok = if sd < 1e-9 {
                    (est[v] - p).abs() < 1e-12
                } else {
                    comparisons += 1;
                    worst = worst.max((est[v] - p).abs() / sd);
                    (est[v] - p).abs() <= 3.0 * sd
                };
                if !ok {
                    return Err(format!(
                        "IC graph {:?} node {v}: {} vs exact {p}",
                        g.edges(),
                        est[v]
                    ));
                }
            }
        }
    }

    let sis = |beta: f64| CascadeModel::Sis {
        beta,
        gamma: 1.0,
        horizon: 1,
        final_step: false,
    };
    let path = Graph::new(3, &[(0, 1), (1, 2)]).unwrap();
    let wedge = Graph::new(3, &[(0, 2), (1, 2)]).unwrap();
    let closed_forms = [
        // LT: a node with one active neighbor out of deg(v) fires w.p. 1/deg(v)
        (
            "LT path middle",
            simulate_lt(&path, &cascade(CascadeModel::Lt, runs, vec![0])).map(|p| p[1]),
            0.5,
        ),
        (
            "LT path end",
            simulate_lt(&path, &cascade(CascadeModel::Lt, runs, vec![0])).map(|p| p[2]),
            0.5,
        ),
        (
            "LT wedge",
            simulate_lt(&wedge, &cascade(CascadeModel::Lt, runs, vec![0])).map(|p| p[2]),
            0.5,
        ),
        (
            "SIS one neighbor",
            simulate_sis(&path, &cascade(sis(0.7), runs, vec![0])).map(|p| p[1]),
            0.7,
        ),
        (
            "SIS two neighbors",
            simulate_sis(&wedge, &cascade(sis(0.3), runs, vec![0, 1])).map(|p| p[2]),
            1.0 - 0.7 * 0.7,
        ),
    ];
    for (name, got, want) in closed_forms {
        let got = got.map_err(|e| e.to_string())?;
        if (got - want).abs() > 0.01 {
            return Err(format!("{name}: {got} vs {want}"));
        }
    }
    Ok(format!(
        "IC on all {graphs} graphs with n <= 6: {comparisons} nodes within 3 sigma (max z {worst:.2}); 5 LT/SIS closed forms within 0.01"
    ))
}

fn desk_scale_learning() -> Check {
    let mut accs = Vec::new();
    for seed in 0..5 {
        let mut cfg = ClassificationConfig::default();
        cfg.train.seed = seed;
        let r = sbm_classification(&cfg).map_err(|e| e.to_string())?;
        if r.val_accuracy < 0.95 {
            return Err(format!(
                "classification seed {seed}: validation accuracy {}",
                r.val_accuracy
            ));
        }
        accs.push(r.val_accuracy);
    }
    let mut wins = 0;
    let mut improvements = Vec::new();
    for seed in 0..10 {
        let sbm = generate_sbm(50, 5, 0.5, 0.02, seed).map_err(|e| e.to_string())?;
        let cfg = InfluenceConfig {
            seed,
            ..InfluenceConfig::default()
        };
        let r = influence_pipeline(&sbm.graph, &cfg).map_err(|e| e.to_string())?;
        if r.relative_improvement >= 0.2 {
            wins += 1;
        }
        improvements.push(format!("{:.0}%", 100.0 * r.relative_improvement));
    }
    if wins < 8 {
        return Err(format!(
            "influence beats the mean predictor by >= 20% on {wins}/10 seeds: {improvements:?}"
        ));
    }
    let min_acc = accs.iter().cloned().fold(1.0, f64::min);
    Ok(format!(
        "classification val accuracy >= {min_acc:.2} on 5/5 seeds; influence >= 20% better than mean on {wins}/10 seeds ({})",
        improvements.join(" ")
    ))
}

fn complexity(dir: &Path) -> Check {
    let out = dir.join("bench");
    run_cli(&["bench"], &out)?;
    let doc = read_json(&out.join("bench.json"))?;
    let factors: Vec<f64> = doc["growth_factors"]
        .as_array()
        .ok_or("missing growth factors")?
        .iter()
        .filter_map(|v| v.as_f64())
        .collect();
    let shown: Vec<String> = factors.iter().map(|f| format!("{f:.2}")).collect();
    if factors.len() != 4 || factors.iter().any(|f| !(1.5..=3.0).contains(f)) {
        return Err(format!("growth factors {shown:?}"));
    }
    Ok(format!("growth per doubling of m: {}", shown.join(", ")))
}

fn depth_stability() -> Check {
    let mut details = Vec::new();
    for seed in 0..3 {
        let mut accs = Vec::new();
        for steps in [2, 8, 16, 32] {
            let mut cfg = ClassificationConfig::default();
            cfg.train.seed = seed;
            cfg.train.steps = steps;
            accs.push(
                sbm_classification(&cfg)
                    .map_err(|e| e.to_string())?
                    .test_accuracy,
            );
        }
        let spread = accs.iter().cloned().fold(f64::MIN, f64::max)
            - accs.iter().cloned().fold(f64::MAX, f64::min);
        if spread >= 0.05 {
            return Err(format!(
                "seed {seed}: test accuracies {accs:?} across T = 2, 8, 16, 32"
            ));
        }
        details.push(format!("{:.1}", 100.0 * spread));
    }
    Ok(format!(
        "test accuracy spread across T = 2, 8, 16, 32: {} points (3 seeds)",
        details.join(", ")
    ))
}

fn weight_stabilization() -> Check {
    let mut checked = 0;
    for k in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + k);
        let g = random_graph(20, 0.3, &mut rng);
        let base = random_weights(&g, &mut rng);
        let clip = [0.05, 0.5, 2.0][k as usize];
        let mut schedule =
            WeightSchedule::dynamic(base.clone(), clip).map_err(|e| e.to_string())?;
        for t in 0..1000 {
            // deltas are usually longer than the clip norm
            let scale = rng.random_range(0.0..3.0);
            let delta = base.with_values(
                (0..base.nnz())
                    .map(|_| rng.random_range(-scale..scale))
                    .collect(),
            );
            schedule.advance(&delta).map_err(|e| e.to_string())?;
            let step = schedule
                .weight_at(t + 1)
                .unwrap()
                .distance(schedule.weight_at(t).unwrap())
                .map_err(|e| e.to_string())?;
            let limit = clip / (1.0 + t as f64);
            if step > limit * (1.0 + 1e-12) {
                return Err(format!("clip {clip}, step {t}: {step:e} > {limit:e}"));
            }
            schedule
                .weight_at(t + 1)
                .unwrap()
                .check_row_stochastic(1e-9)
                .map_err(|e| e.to_string())?;
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} weight updates (3 clip norms x 1000 steps) within k/(1+t)"
    ))
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<(&str, Box<dyn Fn() -> Check + '_>)> = vec![
        (
            "fixed-point oracle equivalence",
            Box::new(fixed_point_equivalence),
        ),
        ("contraction", Box::new(contraction)),
        ("norm-bound soundness", Box::new(norm_bound_soundness)),
        (
            "consensus theorems end-to-end",
            Box::new(|| consensus_theorems(dir.path())),
        ),
        ("gradient correctness", Box::new(gradient_correctness)),
        ("FD / FJ reductions", Box::new(reductions)),
        ("influence-oracle exactness", Box::new(influence_oracles)),
        ("desk-scale learning", Box::new(desk_scale_learning)),
        ("per-step complexity", Box::new(|| complexity(dir.path()))),
        ("depth stability", Box::new(depth_stability)),
        ("weight stabilization", Box::new(weight_stabilization)),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", k + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
