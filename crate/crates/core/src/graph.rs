//! Undirected graphs in CSR form and the structural operators built on them.

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Immutable undirected simple graph. Every edge `{u, v}` appears once in
/// `edges` (with `u < v`) and twice in the adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Graph {
    /// Deduplicates, symmetrizes and drops self-loops.
    pub fn new(n: usize, edge_list: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut edges = Vec::with_capacity(edge_list.len());
        for &(u, v) in edge_list {
            for node in [u, v] {
                if node >= n {
                    return Err(Error::NodeOutOfRange { node, n });
                }
            }
            if u != v {
                edges.push((u.min(v), u.max(v)));
            }
        }
        edges.sort_unstable();
        edges.dedup();

        let mut degree = vec![0usize; n];
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let mut fill = offsets[..n].to_vec();
        let mut neighbors = vec![0usize; offsets[n]];
        for &(u, v) in &edges {
            neighbors[fill[u]] = v;
            fill[u] += 1;
            neighbors[fill[v]] = u;
            fill[v] += 1;
        }
        for i in 0..n {
            neighbors[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        Ok(Self {
            n,
            edges,
            offsets,
            neighbors,
        })
    }

    /// Parses whitespace-separated `u v` lines; `#` starts a comment line.
    /// With `n = None` the node count is one past the largest endpoint.
    pub fn parse_edge_list(text: &str, n: Option<usize>, path: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_string(),
                line: lineno + 1,
                message,
            };
            let mut it = line.split_whitespace();
            let mut next = || -> Result<usize> {
                let tok = it
                    .next()
                    .ok_or_else(|| parse_err("expected two node ids".into()))?;
                tok.parse()
                    .map_err(|_| parse_err(format!("`{tok}` is not a node id")))
            };
            let u = next()?;
            let v = next()?;
            if let Some(n) = n {
                if u >= n || v >= n {
                    return Err(parse_err(format!("endpoint out of range for {n} nodes")));
                }
            }
            pairs.push((u, v));
        }
        let n = match n {
            Some(n) => n,
            None => pairs.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0),
        };
        Graph::new(n, &pairs)
    }

    pub fn to_edge_list(&self) -> String {
        let mut s = format!("# n={} m={}\n", self.n, self.m());
        for &(u, v) in &self.edges {
            s.push_str(&format!("{u} {v}\n"));
        }
        s
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.degree(i)).collect()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Component id per node, numbered in order of smallest member.
    pub fn components(&self) -> Vec<usize> {
        let mut comp = vec![usize::MAX; self.n];
        let mut next = 0;
        let mut stack = Vec::new();
        for s in 0..self.n {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = next;
            stack.push(s);
            while let Some(u) = stack.pop() {
                for &v in self.neighbors(u) {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    pub fn is_connected(&self) -> bool {
        self.components().iter().all(|&c| c == 0)
    }

    /// Adjacency plus the full diagonal, values zero. This is the pattern
    /// shared by influence weights, the Laplacian and the combined matrix.
    pub fn support(&self) -> SparseMatrix {
        let mut offsets = Vec::with_capacity(self.n + 1);
        let mut indices = Vec::with_capacity(self.neighbors.len() + self.n);
        offsets.push(0);
        for i in 0..self.n {
            let nb = self.neighbors(i);
            let split = nb.partition_point(|&j| j < i);
            indices.extend_from_slice(&nb[..split]);
            indices.push(i);
            indices.extend_from_slice(&nb[split..]);
            offsets.push(indices.len());
        }
        let nnz = indices.len();
        SparseMatrix::new(self.n, self.n, offsets, indices, vec![0.0; nnz])
            .expect("graph support is valid CSR")
    }

    /// Subgraph induced by `nodes`, relabelled `0..nodes.len()` in order.
    pub fn induced(&self, nodes: &[usize]) -> Result<Graph> {
        let mut index = vec![usize::MAX; self.n];
        for (k, &v) in nodes.iter().enumerate() {
            index[v] = k;
        }
        let edges: Vec<_> = self
            .edges
            .iter()
            .filter(|&&(u, v)| index[u] != usize::MAX && index[v] != usize::MAX)
            .map(|&(u, v)| (index[u], index[v]))
            .collect();
        Graph::new(nodes.len(), &edges)
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// One representative of every isomorphism class of simple graphs on `n`
/// nodes (`n <= 6`), including disconnected ones. The representative is
/// the member with the smallest edge bitmask.
pub fn graphs_up_to_isomorphism(n: usize) -> Result<Vec<Graph>> {
    if n == 0 || n > 6 {
        return Err(Error::invalid("n", "must lie in 1..=6"));
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
        .collect();
    let mut bit = vec![vec![0usize; n]; n];
    for (b, &(u, v)) in pairs.iter().enumerate() {
        bit[u][v] = b;
        bit[v][u] = b;
    }
    let perms = permutations(n);
    let mut out = Vec::new();
    'masks: for mask in 0u32..(1 << pairs.len()) {
        for p in &perms {
            let mut image = 0u32;
            for (b, &(u, v)) in pairs.iter().enumerate() {
                if mask >> b & 1 == 1 {
                    image |= 1 << bit[p[u]][p[v]];
                }
            }
            if image < mask {
                continue 'masks;
            }
        }
        let edges: Vec<_> = pairs
            .iter()
            .enumerate()
            .filter(|(b, _)| mask >> b & 1 == 1)
            .map(|(_, &e)| e)
            .collect();
        out.push(Graph::new(n, &edges)?);
    }
    Ok(out)
}

/// `I - D^{-1/2} A D^{-1/2}` on [`Graph::support`]. Isolated nodes get a
/// zero diagonal.
pub fn normalized_laplacian(g: &Graph) -> SparseMatrix {
    let mut l = g.support();
    let inv_sqrt: Vec<f64> = g
        .degrees()
        .iter()
        .map(|&d| if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() })
        .collect();
    for i in 0..g.n() {
        let r = l.row_range(i);
        let cols: Vec<usize> = l.indices()[r.clone()].to_vec();
        for (slot, j) in r.zip(cols) {
            l.values_mut()[slot] = if i == j {
                if g.degree(i) > 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                -inv_sqrt[i] * inv_sqrt[j]
            };
        }
    }
    l
}

/// Row-stochastic influence weights: `self_weight` on the diagonal and the
/// rest split evenly over neighbors. Isolated nodes keep all mass on
/// themselves, which needs `self_weight > 0`.
pub fn uniform_row_stochastic(g: &Graph, self_weight: f64) -> Result<SparseMatrix> {
    if !(0.0..1.0).contains(&self_weight) {
        return Err(Error::invalid("self_weight", "must lie in [0, 1)"));
    }
    let mut w = g.support();
    for i in 0..g.n() {
        let deg = g.degree(i);
        if deg == 0 && self_weight == 0.0 {
            return Err(Error::IsolatedNode { node: i });
        }
        let r = w.row_range(i);
        let cols: Vec<usize> = w.indices()[r.clone()].to_vec();
        for (slot, j) in r.zip(cols) {
            w.values_mut()[slot] = if i == j {
                if deg == 0 {
                    1.0
                } else {
                    self_weight
                }
            } else {
                (1.0 - self_weight) / deg as f64
            };
        }
    }
    Ok(w)
}
