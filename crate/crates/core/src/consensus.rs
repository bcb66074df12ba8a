//! Classification of converged states into single, multi and individualized
//! consensus, plus checks of the structural hypotheses that predict each.

use serde::Serialize;

use crate::diffusion::{
    combined_matrix, fixed_point_solve, op_norm_bound, DiffusionParams, WeightSchedule,
};
use crate::features::FeatureMatrix;
use crate::sparse::SparseMatrix;

pub const DEFAULT_CLUSTER_TOL: f64 = 1e-5;

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.rank[a] < self.rank[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        if self.rank[a] == self.rank[b] {
            self.rank[a] += 1;
        }
    }

    /// Dense labels numbered by each set's smallest member.
    fn labels(&mut self) -> Vec<usize> {
        let n = self.parent.len();
        let mut id = vec![usize::MAX; n];
        let mut out = vec![0; n];
        let mut next = 0;
        for i in 0..n {
            let r = self.find(i);
            if id[r] == usize::MAX {
                id[r] = next;
                next += 1;
            }
            out[i] = id[r];
        }
        out
    }
}

fn groups(labels: &[usize]) -> Vec<Vec<usize>> {
    let k = labels.iter().map(|&l| l + 1).max().unwrap_or(0);
    let mut out = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        out[l].push(i);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConsensusKind {
    Single,
    Multi(usize),
    Individualized,
    NotConverged,
}

impl ConsensusKind {
    pub fn name(&self) -> &'static str {
        match self {
            ConsensusKind::Single => "single",
            ConsensusKind::Multi(_) => "multi",
            ConsensusKind::Individualized => "individualized",
            ConsensusKind::NotConverged => "not_converged",
        }
    }

    /// Whether `self` agrees with an expectation where `Multi(0)` stands for
    /// "multi with any cluster count".
    pub fn matches(&self, expected: &ConsensusKind) -> bool {
        match (self, expected) {
            (ConsensusKind::Multi(_), ConsensusKind::Multi(0)) => true,
            (a, b) => a == b,
        }
    }
}

impl std::fmt::Display for ConsensusKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConsensusKind::Multi(k) => write!(f, "multi({k})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusReport {
    pub kind: ConsensusKind,
    pub cluster_assignments: Vec<usize>,
    /// Mean state of each cluster.
    pub cluster_values: Vec<Vec<f64>>,
    pub tolerance: f64,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    kind: &'static str,
    k: usize,
    clusters: Vec<Vec<usize>>,
    values: &'a [Vec<f64>],
    tolerance: f64,
}

impl ConsensusReport {
    pub fn k(&self) -> usize {
        self.cluster_values.len()
    }

    pub fn clusters(&self) -> Vec<Vec<usize>> {
        groups(&self.cluster_assignments)
    }

    /// `{kind, k, clusters, values, tolerance}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(ReportJson {
            kind: self.kind.name(),
            k: self.k(),
            clusters: self.clusters(),
            values: &self.cluster_values,
            tolerance: self.tolerance,
        })
        .expect("report serializes")
    }
}

/// Groups nodes whose states lie within `tol` (Euclidean), closed under
/// transitivity, and names the configuration: one cluster is single
/// consensus, one cluster per node is individualized, anything in between is
/// multi consensus.
pub fn classify_convergence(state: &FeatureMatrix, tol: f64) -> ConsensusReport {
    let n = state.rows();
    let mut uf = UnionFind::new(n);
    let tol2 = tol * tol;
    for i in 0..n {
        let xi = state.row(i);
        for j in (i + 1)..n {
            let d2: f64 = xi
                .iter()
                .zip(state.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2 <= tol2 {
                uf.union(i, j);
            }
        }
    }
    let labels = uf.labels();
    let clusters = groups(&labels);
    let values: Vec<Vec<f64>> = clusters
        .iter()
        .map(|members| {
            let mut v = vec![0.0; state.cols()];
            for &i in members {
                for (a, x) in v.iter_mut().zip(state.row(i)) {
                    *a += x;
                }
            }
            v.iter_mut().for_each(|a| *a /= members.len() as f64);
            v
        })
        .collect();
    let k = clusters.len();
    let kind = if k <= 1 {
        ConsensusKind::Single
    } else if k == n {
        ConsensusKind::Individualized
    } else {
        ConsensusKind::Multi(k)
    };
    ConsensusReport {
        kind,
        cluster_assignments: labels,
        cluster_values: values,
        tolerance: tol,
    }
}

/// Like [`classify_convergence`] but reports `NotConverged` when the run did
/// not settle.
pub fn classify_run(state: &FeatureMatrix, converged: bool, tol: f64) -> ConsensusReport {
    let mut r = classify_convergence(state, tol);
    if !converged {
        r.kind = ConsensusKind::NotConverged;
    }
    r
}

/// Connected components of the undirected support of `m` (nonzero entries
/// only), each sorted, ordered by smallest member.
pub fn detect_blocks(m: &SparseMatrix) -> Vec<Vec<usize>> {
    let n = m.rows().max(m.cols());
    let mut uf = UnionFind::new(n);
    for i in 0..m.rows() {
        let (cols, vals) = m.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if v != 0.0 {
                uf.union(i, j);
            }
        }
    }
    groups(&uf.labels())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Theorem {
    /// Fully diffusive dynamics reach one shared value.
    SingleConsensus,
    /// Block-diagonal combined matrix with differing blocks.
    MultiConsensus,
    /// Strong stubbornness with distinct initial states.
    IndividualizedConsensus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TheoremCheck {
    pub theorem: Theorem,
    pub satisfied: bool,
    pub expected: ConsensusKind,
    pub detail: String,
}

#[derive(Clone, Copy, Debug)]
pub struct TheoremThresholds {
    /// Minimum stubbornness counted as "close to 1".
    pub strong_lambda: f64,
    /// Entries closer than this are treated as equal when comparing blocks.
    pub differ_tol: f64,
    pub cluster_tol: f64,
}

impl Default for TheoremThresholds {
    fn default() -> Self {
        Self {
            strong_lambda: 0.95,
            differ_tol: 1e-9,
            cluster_tol: DEFAULT_CLUSTER_TOL,
        }
    }
}

fn blocks_differ(a: &[usize], b: &[usize], lambda: &[f64], x0: &FeatureMatrix, tol: f64) -> bool {
    if a.len() != b.len() {
        return true;
    }
    a.iter().zip(b).any(|(&i, &j)| {
        (lambda[i] - lambda[j]).abs() > tol
            || x0
                .row(i)
                .iter()
                .zip(x0.row(j))
                .any(|(p, q)| (p - q).abs() > tol)
    })
}

/// Tests the hypotheses of the three consensus results against the
/// stabilized weights of `schedule`. Unsatisfied hypotheses are reported,
/// never raised.
pub fn verify_theorem_conditions(
    params: &DiffusionParams,
    schedule: &WeightSchedule,
    lg: &SparseMatrix,
    x0: &FeatureMatrix,
    thresholds: &TheoremThresholds,
) -> Vec<TheoremCheck> {
    let n = x0.rows();
    let w_star = schedule.stabilized();
    let mut out = Vec::with_capacity(3);

    let single = {
        let zeros =
            params.alpha == 0.0 && params.mu == 0.0 && params.lambda.iter().all(|&l| l == 0.0);
        let stochastic = w_star.check_row_stochastic(1e-9).is_ok();
        let connected = detect_blocks(w_star).len() == 1;
        let lazy = (0..n).all(|i| w_star.get(i, i) > 0.0);
        TheoremCheck {
            theorem: Theorem::SingleConsensus,
            satisfied: zeros && stochastic && connected && lazy,
            expected: ConsensusKind::Single,
            detail: format!(
                "zero parameters: {zeros}, row-stochastic: {stochastic}, connected: {connected}, lazy: {lazy}"
            ),
        }
    };
    out.push(single);

    let m_star = combined_matrix(w_star, lg, params).ok();
    let bound = m_star.as_ref().map_or(f64::INFINITY, op_norm_bound);
    let contractive = bound < 1.0;

    let multi = {
        let blocks = m_star.as_ref().map(detect_blocks).unwrap_or_default();
        let differ = blocks.iter().enumerate().any(|(a, ba)| {
            blocks[a + 1..]
                .iter()
                .any(|bb| blocks_differ(ba, bb, &params.lambda, x0, thresholds.differ_tol))
        });
        let expected = m_star
            .as_ref()
            .filter(|_| contractive)
            .and_then(|m| fixed_point_solve(x0, m, &params.lambda).ok())
            .map(|xs| classify_convergence(&xs, thresholds.cluster_tol).kind)
            .filter(|k| matches!(k, ConsensusKind::Multi(_)))
            .unwrap_or(ConsensusKind::Multi(blocks.len()));
        TheoremCheck {
            theorem: Theorem::MultiConsensus,
            satisfied: contractive && blocks.len() >= 2 && differ,
            expected,
            detail: format!(
                "bound: {bound:.6}, blocks: {}, blocks differ: {differ}",
                blocks.len()
            ),
        }
    };
    out.push(multi);

    let individual = {
        let min_lambda = params.lambda.iter().cloned().fold(f64::INFINITY, f64::min);
        let strong = min_lambda >= thresholds.strong_lambda && min_lambda <= 1.0;
        let distinct = (0..n).all(|i| {
            ((i + 1)..n).all(|j| {
                x0.row(i)
                    .iter()
                    .zip(x0.row(j))
                    .any(|(p, q)| (p - q).abs() > thresholds.differ_tol)
            })
        });
        TheoremCheck {
            theorem: Theorem::IndividualizedConsensus,
            satisfied: contractive && strong && distinct,
            expected: ConsensusKind::Individualized,
            detail: format!(
                "bound: {bound:.6}, min lambda: {min_lambda}, distinct initial states: {distinct}"
            ),
        }
    };
    out.push(individual);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{run_diffusion, DiffusionParams};
    use crate::graph::{normalized_laplacian, uniform_row_stochastic, Graph};
    use proptest::prelude::*;

    fn rows(v: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(&v.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn classify_examples() {
        let same = rows(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        assert_eq!(
            classify_convergence(&same, 1e-5).kind,
            ConsensusKind::Single
        );

        let split = rows(&[&[0.0, 0.0], &[1.0, 1.0], &[0.0, 0.0], &[1.0, 1.0]]);
        let r = classify_convergence(&split, 1e-5);
        assert_eq!(r.kind, ConsensusKind::Multi(2));
        assert_eq!(r.clusters(), vec![vec![0, 2], vec![1, 3]]);
        assert_eq!(r.cluster_values, vec![vec![0.0, 0.0], vec![1.0, 1.0]]);

        let apart = rows(&[&[0.0], &[1.0], &[2.0]]);
        let r = classify_convergence(&apart, 1e-5);
        assert_eq!(r.kind, ConsensusKind::Individualized);
        assert_eq!(r.to_json()["k"], 3);
        assert_eq!(r.to_json()["kind"], "individualized");
    }

    #[test]
    fn chaining_merges_transitively() {
        let chain = rows(&[&[0.0], &[0.6e-5], &[1.2e-5], &[5.0]]);
        assert_eq!(
            classify_convergence(&chain, 1e-5).kind,
            ConsensusKind::Multi(2)
        );
    }

    #[test]
    fn unconverged_runs_are_flagged() {
        let same = rows(&[&[1.0], &[1.0]]);
        assert_eq!(
            classify_run(&same, false, 1e-5).kind,
            ConsensusKind::NotConverged
        );
    }

    #[test]
    fn block_examples() {
        assert_eq!(
            detect_blocks(&SparseMatrix::identity(3)),
            vec![vec![0], vec![1], vec![2]]
        );
        let mut d = vec![vec![0.0; 6]; 6];
        for b in [0usize, 3] {
            for i in b..b + 3 {
                for j in b..b + 3 {
                    d[i][j] = 1.0;
                }
            }
        }
        let blocks = detect_blocks(&SparseMatrix::from_dense(&d).unwrap());
        assert_eq!(blocks, vec![vec![0, 1, 2], vec![3, 4, 5]]);
        let full = SparseMatrix::from_dense(&vec![vec![0.3; 4]; 4]).unwrap();
        assert_eq!(detect_blocks(&full).len(), 1);
        // one-directional entries still connect
        let upper = SparseMatrix::from_dense(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(detect_blocks(&upper), vec![vec![0, 1]]);
    }

    fn triangles() -> Graph {
        Graph::new(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]).unwrap()
    }

    fn check(checks: &[TheoremCheck], t: Theorem) -> &TheoremCheck {
        checks.iter().find(|c| c.theorem == t).unwrap()
    }

    #[test]
    fn single_consensus_hypotheses() {
        let g = Graph::new(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let w = uniform_row_stochastic(&g, 0.5).unwrap();
        let sched = WeightSchedule::fixed(w).unwrap();
        let lg = normalized_laplacian(&g);
        let params = DiffusionParams::uniform(4, 0.0, 0.0, 0.0, 1);
        let x0 = rows(&[&[1.0], &[2.0], &[3.0], &[4.0]]);
        let checks =
            verify_theorem_conditions(&params, &sched, &lg, &x0, &TheoremThresholds::default());
        let c = check(&checks, Theorem::SingleConsensus);
        assert!(c.satisfied, "{}", c.detail);
        assert_eq!(c.expected, ConsensusKind::Single);
        assert!(!check(&checks, Theorem::MultiConsensus).satisfied);

        // a non-lazy walk does not qualify
        let w = uniform_row_stochastic(&g, 0.0).unwrap();
        let sched = WeightSchedule::fixed(w).unwrap();
        let checks =
            verify_theorem_conditions(&params, &sched, &lg, &x0, &TheoremThresholds::default());
        assert!(!check(&checks, Theorem::SingleConsensus).satisfied);
    }

    #[test]
    fn multi_consensus_on_disconnected_triangles() {
        let g = triangles();
        let w = uniform_row_stochastic(&g, 0.2).unwrap();
        let sched = WeightSchedule::fixed(w).unwrap();
        let lg = normalized_laplacian(&g);
        let params = DiffusionParams::uniform(6, 0.0, 0.5, 0.0, 400);
        let x0 = rows(&[&[1.0], &[1.0], &[1.0], &[-2.0], &[-2.0], &[-2.0]]);
        let checks =
            verify_theorem_conditions(&params, &sched, &lg, &x0, &TheoremThresholds::default());
        let c = check(&checks, Theorem::MultiConsensus);
        assert!(c.satisfied, "{}", c.detail);
        assert_eq!(c.expected, ConsensusKind::Multi(2));

        // the iteration route agrees
        let (traj, rep) = run_diffusion(&x0, &g, &params, &sched).unwrap();
        let r = classify_run(traj.last(), rep.converged, 1e-5);
        assert_eq!(r.kind, ConsensusKind::Multi(2));

        // identical blocks fail the "differ" clause
        let same = rows(&[&[1.0], &[1.0], &[1.0], &[1.0], &[1.0], &[1.0]]);
        let checks =
            verify_theorem_conditions(&params, &sched, &lg, &same, &TheoremThresholds::default());
        assert!(!check(&checks, Theorem::MultiConsensus).satisfied);
    }

    #[test]
    fn individualized_consensus_with_strong_stubbornness() {
        let g = Graph::new(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let w = uniform_row_stochastic(&g, 0.3).unwrap();
        let sched = WeightSchedule::fixed(w.clone()).unwrap();
        let lg = normalized_laplacian(&g);
        let params = DiffusionParams::uniform(5, 0.2, 0.99, 0.1, 1);
        let x0 = rows(&[
            &[0.0, 1.0],
            &[0.5, 0.2],
            &[1.0, -1.0],
            &[-0.3, 0.4],
            &[2.0, 2.0],
        ]);
        let checks =
            verify_theorem_conditions(&params, &sched, &lg, &x0, &TheoremThresholds::default());
        let c = check(&checks, Theorem::IndividualizedConsensus);
        assert!(c.satisfied, "{}", c.detail);

        let m = combined_matrix(&w, &lg, &params).unwrap();
        let b = op_norm_bound(&m);
        let xs = fixed_point_solve(&x0, &m, &params.lambda).unwrap();
        let lx0 = x0.scale_rows(&params.lambda);
        assert!(xs.distance(&lx0) / lx0.frobenius_norm() <= b / (1.0 - b));
        assert_eq!(
            classify_convergence(&xs, 1e-5).kind,
            ConsensusKind::Individualized
        );

        let dup = rows(&[
            &[0.0, 1.0],
            &[0.0, 1.0],
            &[1.0, -1.0],
            &[-0.3, 0.4],
            &[2.0, 2.0],
        ]);
        let checks =
            verify_theorem_conditions(&params, &sched, &lg, &dup, &TheoremThresholds::default());
        assert!(!check(&checks, Theorem::IndividualizedConsensus).satisfied);
    }

    proptest! {
        #[test]
        fn classification_is_permutation_equivariant(
            vals in prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), Just(2.5), -3.0f64..3.0], 1..20),
            seed in 0u64..1000,
        ) {
            let n = vals.len();
            let mut perm: Vec<usize> = (0..n).collect();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let x = FeatureMatrix::column(&vals);
            let px = x.select_rows(&perm);
            let a = classify_convergence(&x, 1e-5);
            let b = classify_convergence(&px, 1e-5);
            prop_assert_eq!(a.kind, b.kind);
            for i in 0..n {
                for j in 0..n {
                    let same_a = a.cluster_assignments[perm[i]] == a.cluster_assignments[perm[j]];
                    let same_b = b.cluster_assignments[i] == b.cluster_assignments[j];
                    prop_assert_eq!(same_a, same_b);
                }
            }
        }
    }
}
