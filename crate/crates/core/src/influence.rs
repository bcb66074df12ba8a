//! Monte Carlo spread oracles: independent cascade, linear threshold and
//! susceptible-infected-susceptible.
//!
//! Run `r` draws from its own ChaCha stream `(rng_seed, r)`, so results do
//! not depend on how runs are split across threads.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

const RUNS_PER_CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "p")]
pub enum EdgeProbability {
    /// p(u, v) = 1 / deg(v).
    WeightedCascade,
    Constant(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model")]
pub enum CascadeModel {
    Ic {
        edge_probability: EdgeProbability,
    },
    Lt,
    Sis {
        beta: f64,
        gamma: f64,
        horizon: usize,
        /// Report "infected after the last step" instead of "ever infected".
        #[serde(default)]
        final_step: bool,
    },
}

impl CascadeModel {
    pub fn ic() -> Self {
        CascadeModel::Ic {
            edge_probability: EdgeProbability::WeightedCascade,
        }
    }

    pub fn sis() -> Self {
        CascadeModel::Sis {
            beta: 0.1,
            gamma: 0.05,
            horizon: 30,
            final_step: false,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            CascadeModel::Ic { .. } => "ic",
            CascadeModel::Lt => "lt",
            CascadeModel::Sis { .. } => "sis",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub model: CascadeModel,
    pub runs: usize,
    pub seed_set: Vec<usize>,
    pub rng_seed: u64,
}

fn check_prob(field: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(
            field,
            format!("must lie in [0, 1], got {p}"),
        ))
    }
}

impl CascadeConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::invalid("runs", "must be at least 1"));
        }
        if self.seed_set.is_empty() {
            return Err(Error::invalid("seed_set", "must be nonempty"));
        }
        if let Some(&node) = self.seed_set.iter().find(|&&s| s >= n) {
            return Err(Error::NodeOutOfRange { node, n });
        }
        match self.model {
            CascadeModel::Ic {
                edge_probability: EdgeProbability::Constant(p),
            } => check_prob("p", p),
            CascadeModel::Ic { .. } | CascadeModel::Lt => Ok(()),
            CascadeModel::Sis {
                beta,
                gamma,
                horizon,
                ..
            } => {
                check_prob("beta", beta)?;
                check_prob("gamma", gamma)?;
                if horizon == 0 {
                    return Err(Error::invalid("horizon", "must be at least 1"));
                }
                Ok(())
            }
        }
    }

    fn seed_mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        self.seed_set.iter().for_each(|&s| mask[s] = true);
        mask
    }
}

/// Uniform random subset of `round(fraction * n)` nodes (at least one), sorted.
pub fn random_seed_set(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(
            "seed_fraction",
            format!("must lie in (0, 1], got {fraction}"),
        ));
    }
    let size = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, n, size).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

fn run_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

/// Sums per-node hit counts over all runs, chunked for parallelism; integer
/// counts make the total independent of the chunk schedule.
fn monte_carlo<F>(n: usize, cfg: &CascadeConfig, run: F) -> Vec<f64>
where
    F: Fn(&mut ChaCha8Rng, &mut Vec<bool>) + Sync,
{
    let chunks = cfg.runs.div_ceil(RUNS_PER_CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut counts = vec![0u64; n];
            let mut hit = vec![false; n];
            for r in c * RUNS_PER_CHUNK..((c + 1) * RUNS_PER_CHUNK).min(cfg.runs) {
                let mut rng = run_rng(cfg.rng_seed, r);
                hit.iter_mut().for_each(|h| *h = false);
                run(&mut rng, &mut hit);
                for (c, &h) in counts.iter_mut().zip(&hit) {
                    *c += h as u64;
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    counts
        .into_iter()
        .map(|c| c as f64 / cfg.runs as f64)
        .collect()
}

fn wrong_model(expected: &str, cfg: &CascadeConfig) -> Error {
    Error::invalid(
        "model",
        format!("expected {expected}, got {}", cfg.model.name()),
    )
}

pub fn simulate(g: &Graph, cfg: &CascadeConfig) -> Result<Vec<f64>> {
    match cfg.model {
        CascadeModel::Ic { .. } => simulate_ic(g, cfg),
        CascadeModel::Lt => simulate_lt(g, cfg),
        CascadeModel::Sis { .. } => simulate_sis(g, cfg),
    }
}

/// Probability that each node is ever activated. Every directed edge slot
/// gets one coin per run, drawn up front in slot order, so two seed sets
/// under the same `rng_seed` see the same live edges.
pub fn simulate_ic(g: &Graph, cfg: &CascadeConfig) -> Result<Vec<f64>> {
    let CascadeModel::Ic { edge_probability } = cfg.model else {
        return Err(wrong_model("ic", cfg));
    };
    cfg.validate(g.n())?;
    let n = g.n();
    let offsets = g.offsets();
    let slot_p: Vec<f64> = (0..n)
        .flat_map(|u| g.neighbors(u).iter().map(move |&v| (u, v)))
        .map(|(_, v)| match edge_probability {
            EdgeProbability::WeightedCascade => 1.0 / g.degree(v) as f64,
            EdgeProbability::Constant(p) => p,
        })
        .collect();
    let seeds = cfg.seed_mask(n);
    Ok(monte_carlo(n, cfg, |rng, active| {
        let live: Vec<bool> = slot_p.iter().map(|&p| rng.random::<f64>() < p).collect();
        let mut frontier: Vec<usize> = (0..n).filter(|&i| seeds[i]).collect();
        frontier.iter().for_each(|&s| active[s] = true);
        while let Some(u) = frontier.pop() {
            for slot in offsets[u]..offsets[u + 1] {
                let v = g.neighbors(u)[slot - offsets[u]];
                if live[slot] && !active[v] {
                    active[v] = true;
                    frontier.push(v);
                }
            }
        }
    }))
}

/// Probability that each node is ever activated when every node draws a
/// uniform threshold and each active neighbor contributes 1/deg(v).
pub fn simulate_lt(g: &Graph, cfg: &CascadeConfig) -> Result<Vec<f64>> {
    if cfg.model != CascadeModel::Lt {
        return Err(wrong_model("lt", cfg));
    }
    cfg.validate(g.n())?;
    let n = g.n();
    let seeds = cfg.seed_mask(n);
    Ok(monte_carlo(n, cfg, |rng, active| {
        let threshold: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let mut pressure = vec![0.0; n];
        let mut frontier: Vec<usize> = (0..n).filter(|&i| seeds[i]).collect();
        frontier.iter().for_each(|&s| active[s] = true);
        while let Some(u) = frontier.pop() {
            for &v in g.neighbors(u) {
                if active[v] {
                    continue;
                }
                pressure[v] += 1.0 / g.degree(v) as f64;
                if pressure[v] >= threshold[v] {
                    active[v] = true;
                    frontier.push(v);
                }
            }
        }
    }))
}

/// Synchronous SIS: in each step every node infected at the start of the step
/// tries each susceptible neighbor with probability `beta`, and recovers with
/// probability `gamma`.
pub fn simulate_sis(g: &Graph, cfg: &CascadeConfig) -> Result<Vec<f64>> {
    let CascadeModel::Sis {
        beta,
        gamma,
        horizon,
        final_step,
    } = cfg.model
    else {
        return Err(wrong_model("sis", cfg));
    };
    cfg.validate(g.n())?;
    let n = g.n();
    let seeds = cfg.seed_mask(n);
    Ok(monte_carlo(n, cfg, |rng, ever| {
        let mut infected = seeds.clone();
        let mut next = vec![false; n];
        ever.copy_from_slice(&seeds);
        for _ in 0..horizon {
            next.copy_from_slice(&infected);
            for u in 0..n {
                if !infected[u] {
                    continue;
                }
                for &v in g.neighbors(u) {
                    if !infected[v] && !next[v] && rng.random::<f64>() < beta {
                        next[v] = true;
                    }
                }
                if rng.random::<f64>() < gamma {
                    next[u] = false;
                }
            }
            std::mem::swap(&mut infected, &mut next);
            for (e, &i) in ever.iter_mut().zip(&infected) {
                *e |= i;
            }
        }
        if final_step {
            ever.copy_from_slice(&infected);
        }
    }))
}

/// `node,probability` rows.
pub fn probabilities_csv(probs: &[f64]) -> String {
    let mut out = String::from("node,probability\n");
    for (i, p) in probs.iter().enumerate() {
        out.push_str(&format!("{i},{p:?}\n"));
    }
    out
}

/// Exact IC activation probabilities by propagating the distribution over
/// (active set, newly active set) states. Exponential in `n`; meant for
/// small graphs.
pub fn exact_ic(g: &Graph, seed_set: &[usize], rule: EdgeProbability) -> Result<Vec<f64>> {
    use std::collections::BTreeMap;
    let n = g.n();
    if n > 16 {
        return Err(Error::invalid(
            "n",
            "exact enumeration supports at most 16 nodes",
        ));
    }
    let p = |v: usize| match rule {
        EdgeProbability::WeightedCascade => 1.0 / g.degree(v) as f64,
        EdgeProbability::Constant(p) => p,
    };
    if let Some(&node) = seed_set.iter().find(|&&s| s >= n) {
        return Err(Error::NodeOutOfRange { node, n });
    }
    let seeds: u32 = seed_set.iter().fold(0, |m, &s| m | (1 << s));
    let mut frontier: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    frontier.insert((seeds, seeds), 1.0);
    let mut result = vec![0.0; n];
    while !frontier.is_empty() {
        let mut next: BTreeMap<(u32, u32), f64> = BTreeMap::new();
        for ((active, fresh), mass) in frontier {
            // each inactive node is hit independently
            let mut cands = Vec::new();
            for v in 0..n {
                if active >> v & 1 == 1 {
                    continue;
                }
                let tries = g
                    .neighbors(v)
                    .iter()
                    .filter(|&&u| fresh >> u & 1 == 1)
                    .count();
                if tries > 0 {
                    cands.push((v, 1.0 - (1.0 - p(v)).powi(tries as i32)));
                }
            }
            for pick in 0u32..(1 << cands.len()) {
                let mut prob = mass;
                let mut newly = 0u32;
                for (b, &(v, q)) in cands.iter().enumerate() {
                    if pick >> b & 1 == 1 {
                        prob *= q;
                        newly |= 1 << v;
                    } else {
                        prob *= 1.0 - q;
                    }
                }
                if prob == 0.0 {
                    continue;
                }
                if newly == 0 {
                    for (v, r) in result.iter_mut().enumerate() {
                        if active >> v & 1 == 1 {
                            *r += prob;
                        }
                    }
                } else {
                    *next.entry((active | newly, newly)).or_insert(0.0) += prob;
                }
            }
        }
        frontier = next;
    }
    // the masses sum to one only up to rounding
    for r in result.iter_mut() {
        *r = r.clamp(0.0, 1.0);
    }
    for &s in seed_set {
        result[s] = 1.0;
    }
    Ok(result)
}
