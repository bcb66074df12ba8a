//! Stochastic block model generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Clone, Debug)]
pub struct Sbm {
    pub graph: Graph,
    pub labels: Vec<usize>,
    pub k: usize,
}

impl Sbm {
    pub fn community(&self, c: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == c)
            .collect()
    }
}

/// Contiguous balanced communities: node `i` belongs to `i * k / n`.
pub fn balanced_labels(n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|i| i * k / n).collect()
}

pub fn generate_sbm(n: usize, k: usize, p_in: f64, p_out: f64, seed: u64) -> Result<Sbm> {
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    if k == 0 || k > n {
        return Err(Error::invalid(
            "k",
            format!("need 1 <= k <= n = {n}, got {k}"),
        ));
    }
    if !(0.0..=1.0).contains(&p_in) {
        return Err(Error::invalid(
            "p_in",
            format!("must lie in [0, 1], got {p_in}"),
        ));
    }
    if !(0.0..=1.0).contains(&p_out) || p_out > p_in {
        return Err(Error::invalid(
            "p_out",
            format!("must lie in [0, p_in], got {p_out}"),
        ));
    }
    let labels = balanced_labels(n, k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Ok(Sbm {
        graph: Graph::new(n, &edges)?,
        labels,
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_extremes() {
        let s = generate_sbm(4, 2, 1.0, 0.0, 7).unwrap();
        assert_eq!(s.graph.edges(), &[(0, 1), (2, 3)]);
        assert_eq!(s.labels, vec![0, 0, 1, 1]);
        assert_eq!(generate_sbm(10, 3, 0.0, 0.0, 1).unwrap().graph.m(), 0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate_sbm(5, 6, 0.5, 0.1, 0).is_err());
        assert!(generate_sbm(5, 2, 0.1, 0.5, 0).is_err());
        assert!(generate_sbm(5, 2, 1.5, 0.5, 0).is_err());
        assert!(generate_sbm(5, 0, 0.5, 0.1, 0).is_err());
    }

    #[test]
    fn communities_are_balanced() {
        for n in 1..40 {
            for k in 1..=n.min(9) {
                let labels = balanced_labels(n, k);
                let mut sizes = vec![0usize; k];
                labels.iter().for_each(|&l| sizes[l] += 1);
                let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
                assert!(hi - lo <= 1, "n={n} k={k} sizes={sizes:?}");
            }
        }
    }

    #[test]
    fn same_seed_same_graph() {
        let a = generate_sbm(30, 3, 0.4, 0.05, 11).unwrap();
        let b = generate_sbm(30, 3, 0.4, 0.05, 11).unwrap();
        assert_eq!(a.graph.edges(), b.graph.edges());
    }

    #[test]
    fn intra_edge_counts_match_binomial() {
        // C(10,2) = 45 pairs per community at p = 0.5
        let (pairs, p) = (45.0, 0.5);
        let seeds = 100;
        let mut total = 0usize;
        let mut inter = 0usize;
        for seed in 0..seeds {
            let s = generate_sbm(50, 5, p, 0.02, seed).unwrap();
            for &(u, v) in s.graph.edges() {
                if s.labels[u] == s.labels[v] {
                    total += 1;
                } else {
                    inter += 1;
                }
            }
        }
        let trials = seeds as f64 * 5.0 * pairs;
        let mean = total as f64 / (seeds as f64 * 5.0);
        let sigma = (trials * p * (1.0 - p)).sqrt() / (seeds as f64 * 5.0);
        assert!(
            (mean - 22.5).abs() <= 3.0 * sigma,
            "mean {mean}, sigma {sigma}"
        );
        // 1000 inter pairs per graph at p_out = 0.02
        let inter_trials = seeds as f64 * 1000.0;
        let inter_sigma = (inter_trials * 0.02 * 0.98).sqrt();
        assert!((inter as f64 - inter_trials * 0.02).abs() <= 3.0 * inter_sigma);
    }
}
