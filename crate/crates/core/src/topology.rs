//! Network topologies, mixing matrices, pruning, and spectral quantities.
//!
//! All values here are immutable once built; operations are pure functions,
//! safe to share across threads.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::spectral_norm;
use crate::rng::{stream, StreamKind};

/// Simple undirected graph on nodes `0..m`, edges stored as ordered pairs
/// `(u, v)` with `u < v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndirectedGraph {
    m: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl UndirectedGraph {
    pub fn new(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::Topology(format!("self-edge at node {a}")));
            }
            if a >= m || b >= m {
                return Err(Error::Topology(format!(
                    "edge ({a},{b}) out of range for m={m}"
                )));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self { m, edges: set })
    }

    pub fn node_count(&self) -> usize {
        self.m
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a != b && self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors(v).len()
    }

    /// Neighbors of `v` in ascending order, excluding `v` itself.
    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for &(a, b) in &self.edges {
            if a == v {
                out.push(b);
            } else if b == v {
                out.push(a);
            }
        }
        out.sort_unstable();
        out
    }

    pub fn is_connected(&self) -> bool {
        let all: Vec<usize> = (0..self.m).collect();
        self.subgraph_connected(&all)
    }

    /// Connectivity of the sub-graph induced by `nodes` (edges with both
    /// endpoints inside). Empty sets count as connected.
    pub fn subgraph_connected(&self, nodes: &[usize]) -> bool {
        if nodes.len() <= 1 {
            return true;
        }
        let inside: BTreeSet<usize> = nodes.iter().copied().collect();
        let mut seen = BTreeSet::new();
        let mut queue = vec![nodes[0]];
        seen.insert(nodes[0]);
        while let Some(v) = queue.pop() {
            for u in self.neighbors(v) {
                if inside.contains(&u) && seen.insert(u) {
                    queue.push(u);
                }
            }
        }
        seen.len() == inside.len()
    }

    /// Adjacency matrix as 0/1 CSV rows (row-major), loadable by
    /// [`UndirectedGraph::from_adjacency_csv`].
    pub fn to_adjacency_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.m {
            let row: Vec<&str> = (0..self.m)
                .map(|j| if self.has_edge(i, j) { "1" } else { "0" })
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_adjacency_csv(text: &str) -> Result<Self> {
        let rows: Vec<Vec<u8>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split(',')
                    .map(|c| match c.trim() {
                        "0" => Ok(0u8),
                        "1" => Ok(1u8),
                        other => Err(Error::Topology(format!("bad adjacency cell {other:?}"))),
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let m = rows.len();
        let mut edges = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Topology("adjacency CSV is not square".into()));
            }
            for (j, &cell) in row.iter().enumerate() {
                if cell == 1 && i < j {
                    edges.push((i, j));
                }
                if cell == 1 && i == j {
                    return Err(Error::Topology(format!("self-edge at node {i}")));
                }
            }
        }
        // symmetry check
        for (i, row) in rows.iter().enumerate() {
            for (j, &cell) in row.iter().enumerate() {
                if cell != rows[j][i] {
                    return Err(Error::Topology(format!(
                        "adjacency CSV not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Self::new(m, edges)
    }
}

/// Sample an Erdős–Rényi graph: each of the `m(m-1)/2` pairs is included
/// independently with probability `p`. Deterministic in `seed`.
pub fn gen_erdos_renyi(m: usize, p: f64, seed: u64) -> Result<UndirectedGraph> {
    if m < 2 {
        return Err(Error::Topology(format!("need m >= 2, got {m}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Topology(format!("edge probability {p} outside [0,1]")));
    }
    let mut rng = stream(seed, StreamKind::Graph, 0);
    let mut edges = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    UndirectedGraph::new(m, edges)
}

/// Directed graph on nodes `0..m`; arc `(u, v)` means `u` sends to `v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    m: usize,
    arcs: BTreeSet<(usize, usize)>,
}

impl DirectedGraph {
    pub fn new(m: usize, arcs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in arcs {
            if a >= m || b >= m {
                return Err(Error::Topology(format!(
                    "arc ({a},{b}) out of range for m={m}"
                )));
            }
            set.insert((a, b));
        }
        Ok(Self { m, arcs: set })
    }

    /// Every undirected edge becomes two opposite arcs.
    pub fn from_undirected(g: &UndirectedGraph) -> Self {
        let mut arcs = BTreeSet::new();
        for (a, b) in g.edges() {
            arcs.insert((a, b));
            arcs.insert((b, a));
        }
        Self { m: g.node_count(), arcs }
    }

    pub fn node_count(&self) -> usize {
        self.m
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn has_arc(&self, from: usize, to: usize) -> bool {
        self.arcs.contains(&(from, to))
    }

    pub fn in_neighbors(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .arcs
            .iter()
            .filter(|&&(_, t)| t == v)
            .map(|&(s, _)| s)
            .collect();
        out.sort_unstable();
        out
    }

    pub fn out_neighbors(&self, v: usize) -> Vec<usize> {
        self.arcs
            .range((v, 0)..=(v, self.m.saturating_sub(1)))
            .map(|&(_, t)| t)
            .collect()
    }
}

/// Remove, at each node `v`, the in-arcs listed in `removals[v]`.
pub fn prune_digraph(g: &UndirectedGraph, removals: &[BTreeSet<usize>]) -> Result<DirectedGraph> {
    let m = g.node_count();
    if removals.len() != m {
        return Err(Error::Topology(format!(
            "removal sets for {} nodes, graph has {m}",
            removals.len()
        )));
    }
    let mut arcs = BTreeSet::new();
    for (a, b) in g.edges() {
        if !removals[b].contains(&a) {
            arcs.insert((a, b));
        }
        if !removals[a].contains(&b) {
            arcs.insert((b, a));
        }
    }
    Ok(DirectedGraph { m, arcs })
}

/// Strongly connected components via Kosaraju's two DFS passes (iterative).
///
/// Components are each sorted ascending and the list is ordered by smallest
/// member, so output is deterministic.
pub fn strongly_connected_components(g: &DirectedGraph) -> Vec<Vec<usize>> {
    let n = g.node_count();
    let mut fwd: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(u, v) in &g.arcs {
        fwd[u].push(v);
        rev[v].push(u);
    }

    // First pass: finish order on the original graph.
    let mut visited = vec![false; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for start in 0..n {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
        while let Some(&mut (v, ref mut idx)) = stack.last_mut() {
            if *idx < fwd[v].len() {
                let u = fwd[v][*idx];
                *idx += 1;
                if !visited[u] {
                    visited[u] = true;
                    stack.push((u, 0));
                }
            } else {
                order.push(v);
                stack.pop();
            }
        }
    }

    // Second pass: collect components on the reversed graph.
    visited.fill(false);
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for &start in order.iter().rev() {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut comp = vec![start];
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &u in &rev[v] {
                if !visited[u] {
                    visited[u] = true;
                    comp.push(u);
                    stack.push(u);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps.sort_by_key(|c| c[0]);
    comps
}

/// The largest strongly connected component that has no in-arcs from outside
/// itself, or `None` when every maximum-size component has external in-arcs.
/// Size ties are broken by smallest contained node.
pub fn largest_closed_scc(g: &DirectedGraph) -> Option<Vec<usize>> {
    let comps = strongly_connected_components(g);
    let max_size = comps.iter().map(|c| c.len()).max()?;
    comps
        .into_iter()
        .filter(|c| c.len() == max_size)
        .find(|c| {
            let inside: BTreeSet<usize> = c.iter().copied().collect();
            !g.arcs
                .iter()
                .any(|&(u, v)| inside.contains(&v) && !inside.contains(&u))
        })
}

/// Dense nonnegative weight matrix conforming to a communication graph.
/// Row-stochastic by construction; the symmetric builders are additionally
/// doubly stochastic.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    w: Array2<f64>,
}

impl MixingMatrix {
    /// Wrap an explicit weight matrix, checking row sums.
    pub fn new(w: Array2<f64>) -> Result<Self> {
        if w.nrows() != w.ncols() {
            return Err(Error::Topology("mixing matrix must be square".into()));
        }
        for (i, row) in w.rows().into_iter().enumerate() {
            let s: f64 = row.sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::Topology(format!(
                    "row {i} sums to {s}, expected 1 within 1e-12"
                )));
            }
            if row.iter().any(|&x| x < 0.0) {
                return Err(Error::Topology(format!("row {i} has a negative weight")));
            }
        }
        Ok(Self { w })
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[[i, j]]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }

    /// Sub-block over `nodes` (in the given order).
    pub fn restrict(&self, nodes: &[usize]) -> Array2<f64> {
        Array2::from_shape_fn((nodes.len(), nodes.len()), |(a, b)| {
            self.w[[nodes[a], nodes[b]]]
        })
    }

    /// In-neighbors of `i`: columns with positive weight, excluding `i`.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.dim()).filter(|&j| j != i && self.w[[i, j]] > 0.0).collect()
    }

    /// Row-major CSV with 17 significant digits; exact f64 round-trip.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.w.rows() {
            let cells: Vec<String> = row.iter().map(|&x| format!("{x:.16e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split(',')
                    .map(|c| {
                        c.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::Topology(format!("bad matrix cell {c:?}: {e}")))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let n = rows.len();
        let mut w = Array2::zeros((n, n));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Topology("matrix CSV is not square".into()));
            }
            for (j, &x) in row.iter().enumerate() {
                w[[i, j]] = x;
            }
        }
        Self::new(w)
    }
}

/// Metropolis weights: `W(i,j) = 1/(1 + max(deg_i, deg_j))` on edges, with
/// the diagonal absorbing the remainder. Symmetric and doubly stochastic.
pub fn metropolis_weights(g: &UndirectedGraph) -> MixingMatrix {
    let m = g.node_count();
    let deg: Vec<usize> = (0..m).map(|v| g.degree(v)).collect();
    let mut w = Array2::zeros((m, m));
    for (a, b) in g.edges() {
        let weight = 1.0 / (1.0 + deg[a].max(deg[b]) as f64);
        w[[a, b]] = weight;
        w[[b, a]] = weight;
    }
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| w[[i, j]]).sum();
        w[[i, i]] = 1.0 - off;
    }
    MixingMatrix { w }
}

/// Zero out the in-arcs listed in `removals` and renormalize each row
/// (self-weight included) to sum one. Returns the pruned directed graph and
/// the row-stochastic matrix.
pub fn prune_and_reweight(
    w_old: &MixingMatrix,
    g: &UndirectedGraph,
    removals: &[BTreeSet<usize>],
) -> Result<(DirectedGraph, MixingMatrix)> {
    let m = w_old.dim();
    if g.node_count() != m || removals.len() != m {
        return Err(Error::Topology("pruning inputs disagree on node count".into()));
    }
    let mut w = Array2::zeros((m, m));
    for i in 0..m {
        if removals[i].contains(&i) {
            return Err(Error::Topology(format!(
                "node {i} cannot remove its own self-weight"
            )));
        }
        let mut kept = 0.0;
        for j in 0..m {
            if j == i || (!removals[i].contains(&j) && w_old.get(i, j) > 0.0) {
                kept += w_old.get(i, j);
            }
        }
        if kept <= 0.0 {
            return Err(Error::Topology(format!(
                "node {i} would lose its entire in-neighborhood"
            )));
        }
        for j in 0..m {
            if j == i || (!removals[i].contains(&j) && w_old.get(i, j) > 0.0) {
                w[[i, j]] = w_old.get(i, j) / kept;
            }
        }
    }
    let digraph = prune_digraph(g, removals)?;
    Ok((digraph, MixingMatrix { w }))
}

/// Spectral quantities of an irreducible row-stochastic sub-block.
#[derive(Debug, Clone)]
pub struct SpectralProfile {
    /// Left Perron row vector, entries positive, summing to one.
    pub v1: Array1<f64>,
    /// Observed per-step contraction of the power residual, in (0,1).
    pub rho: f64,
    /// Prefactor such that the observed residuals satisfy `E_k <= c rho^k`.
    pub c_const: f64,
    /// Estimated modulus of the second eigenvalue (reporting only).
    pub lambda2: f64,
}

/// Compute the Perron left eigenvector of `a` by power iteration on the
/// transpose, plus an empirical geometric-decay profile of
/// `‖A^k − 1 v1ᵀ‖₂`.
///
/// `a` must be row-stochastic with positive diagonal and irreducible (its
/// support graph one strongly connected component); anything else is an
/// error, since the caller is expected to restrict to a closed component
/// first.
pub fn spectral_profile(a: &ArrayView2<f64>) -> Result<SpectralProfile> {
    let n = a.nrows();
    if n == 0 || n != a.ncols() {
        return Err(Error::Topology("spectral profile needs a square nonempty block".into()));
    }
    for i in 0..n {
        let s: f64 = a.row(i).sum();
        if (s - 1.0).abs() > 1e-10 {
            return Err(Error::Topology(format!("block row {i} is not stochastic")));
        }
        if a[[i, i]] <= 0.0 {
            return Err(Error::Topology(format!("block diagonal entry {i} is not positive")));
        }
    }
    // Irreducibility = one SCC on the support graph (arc j -> i when i listens to j).
    let mut support_arcs = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && a[[i, j]] > 0.0 {
                support_arcs.push((j, i));
            }
        }
    }
    let support = DirectedGraph::new(n, support_arcs)?;
    let comps = strongly_connected_components(&support);
    if comps.len() != 1 && n > 1 {
        return Err(Error::Topology(format!(
            "sub-block is not irreducible ({} components); restrict to a closed component first",
            comps.len()
        )));
    }

    // Power iteration on Aᵀ; the iterate stays positive and converges to v1.
    let cap = 100 * n.max(2);
    let mut v = Array1::from_elem(n, 1.0 / n as f64);
    let mut residual = f64::INFINITY;
    let mut stagnant = 0;
    for _ in 0..cap {
        let mut next = a.t().dot(&v);
        let sum: f64 = next.sum();
        next.mapv_inplace(|x| x / sum);
        let res = {
            let va = next.dot(a);
            va.iter()
                .zip(next.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max)
        };
        v = next;
        // Keep iterating to the numeric floor; the 1e-10 bar is checked below.
        if res >= residual * 0.999 {
            stagnant += 1;
            if stagnant >= 8 {
                residual = res.min(residual);
                break;
            }
        } else {
            stagnant = 0;
        }
        residual = res;
        if residual == 0.0 {
            break;
        }
    }
    if residual > 1e-10 {
        return Err(Error::Topology(format!(
            "Perron iteration stalled at residual {residual:.3e} (> 1e-10)"
        )));
    }
    if v.iter().any(|&x| x <= 0.0) {
        return Err(Error::Topology("Perron vector has a non-positive entry".into()));
    }

    // Residual decay of A^k toward the rank-one limit.
    let ones_v1 = Array2::from_shape_fn((n, n), |(_, j)| v[j]);
    let mut pk = a.to_owned();
    let mut residuals = Vec::new();
    for _ in 0..120 {
        let e = spectral_norm(&(&pk - &ones_v1).view());
        residuals.push(e);
        if e < 1e-13 {
            break;
        }
        pk = pk.dot(a);
    }
    let (rho, c_const) = fit_geometric(&residuals);
    Ok(SpectralProfile { v1: v, rho, c_const, lambda2: rho })
}

/// Fit `E_k <= c rho^k` from an observed residual sequence: `rho` is the
/// geometric mean of late-stage ratios, `c` the smallest prefactor that
/// dominates every observed point.
fn fit_geometric(residuals: &[f64]) -> (f64, f64) {
    let usable: Vec<f64> = residuals.iter().copied().take_while(|&e| e > 1e-300).collect();
    if usable.len() < 2 {
        // Degenerate block (e.g. 1x1): treat as immediate convergence.
        return (1e-6, usable.first().copied().unwrap_or(0.0).max(1e-300));
    }
    let start = usable.len() / 2;
    let mut log_sum = 0.0;
    let mut count = 0usize;
    for k in start.max(1)..usable.len() {
        let ratio = usable[k] / usable[k - 1];
        if ratio > 0.0 && ratio < 1.0 {
            log_sum += ratio.ln();
            count += 1;
        }
    }
    let rho = if count > 0 {
        (log_sum / count as f64).exp().clamp(1e-6, 1.0 - 1e-9)
    } else {
        1.0 - 1e-9
    };
    let mut c = 0.0f64;
    for (k, &e) in usable.iter().enumerate() {
        // Residual index k corresponds to A^{k+1}.
        let denom = rho.powi((k + 1) as i32);
        if denom > 1e-280 {
            c = c.max(e / denom);
        }
    }
    (rho, c.max(1e-300))
}

/// Tracking residuals `‖A^k − 1 v1ᵀ‖₂` for `k = 1..=k_max`, by explicit
/// matrix powers. Used by tests and for decay diagnostics.
pub fn tracking_residuals(a: &ArrayView2<f64>, v1: &Array1<f64>, k_max: usize) -> Vec<f64> {
    let n = a.nrows();
    let ones_v1 = Array2::from_shape_fn((n, n), |(_, j)| v1[j]);
    let mut pk = a.to_owned();
    let mut out = Vec::with_capacity(k_max);
    for _ in 0..k_max {
        out.push(spectral_norm(&(&pk - &ones_v1).view()));
        pk = pk.dot(a);
    }
    out
}

/// `c(m, p, δ) = m·p·(1 − β₀ − δ) − ln m`. With `beta0 = delta = 0` this is
/// the plain isolated-node constant `c(m, p) = m·p − ln m`.
pub fn connectivity_constant(m: f64, p: f64, beta0: f64, delta: f64) -> Result<f64> {
    if beta0 + delta >= 1.0 {
        return Err(Error::Config(format!(
            "beta0 + delta must be < 1, got {beta0} + {delta}"
        )));
    }
    Ok(m * p * (1.0 - beta0 - delta) - m.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn complete_graph(m: usize) -> UndirectedGraph {
        let mut edges = Vec::new();
        for i in 0..m {
            for j in (i + 1)..m {
                edges.push((i, j));
            }
        }
        UndirectedGraph::new(m, edges).unwrap()
    }

    #[test]
    fn erdos_renyi_extremes() {
        let full = gen_erdos_renyi(5, 1.0, 3).unwrap();
        assert_eq!(full.edge_count(), 10);
        let empty = gen_erdos_renyi(5, 0.0, 3).unwrap();
        assert_eq!(empty.edge_count(), 0);
    }

    #[test]
    fn erdos_renyi_rejects_bad_probability() {
        assert!(gen_erdos_renyi(5, 1.5, 0).is_err());
        assert!(gen_erdos_renyi(5, -0.1, 0).is_err());
        assert!(gen_erdos_renyi(1, 0.5, 0).is_err());
    }

    #[test]
    fn erdos_renyi_mean_edge_count_matches_binomial() {
        // 150·149/2 pairs at p = 0.5; over 200 seeds the mean should sit
        // within 3 standard errors of n_pairs·p.
        let m = 150usize;
        let pairs = (m * (m - 1) / 2) as f64;
        let p = 0.5;
        let trials = 200;
        let mut total = 0.0;
        for s in 0..trials {
            total += gen_erdos_renyi(m, p, s as u64).unwrap().edge_count() as f64;
        }
        let mean = total / trials as f64;
        let se = (pairs * p * (1.0 - p) / trials as f64).sqrt();
        assert!(
            (mean - pairs * p).abs() <= 3.0 * se,
            "mean {mean} vs expected {} (se {se})",
            pairs * p
        );
    }

    #[test]
    fn erdos_renyi_deterministic() {
        let a = gen_erdos_renyi(20, 0.4, 11).unwrap();
        let b = gen_erdos_renyi(20, 0.4, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn metropolis_triangle_is_uniform() {
        let g = complete_graph(3);
        let w = metropolis_weights(&g);
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(w.get(i, j), 1.0 / 3.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn metropolis_path_weights() {
        let g = UndirectedGraph::new(3, [(0, 1), (1, 2)]).unwrap();
        let w = metropolis_weights(&g);
        assert_abs_diff_eq!(w.get(0, 1), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w.get(1, 2), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w.get(0, 0), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w.get(2, 2), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w.get(1, 1), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w.get(0, 2), 0.0, epsilon = 0.0);
    }

    #[test]
    fn metropolis_single_edge() {
        let g = UndirectedGraph::new(2, [(0, 1)]).unwrap();
        let w = metropolis_weights(&g);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(w.get(i, j), 0.5, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn metropolis_is_doubly_stochastic_and_zero_off_edges() {
        let g = gen_erdos_renyi(40, 0.3, 7).unwrap();
        let w = metropolis_weights(&g);
        for i in 0..40 {
            let row: f64 = (0..40).map(|j| w.get(i, j)).sum();
            let col: f64 = (0..40).map(|j| w.get(j, i)).sum();
            assert_abs_diff_eq!(row, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(col, 1.0, epsilon = 1e-12);
            for j in 0..40 {
                assert_abs_diff_eq!(w.get(i, j), w.get(j, i), epsilon = 1e-15);
                if i != j && !g.has_edge(i, j) {
                    assert_eq!(w.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn prune_renormalizes_surviving_weights() {
        // Node 0 keeps self 0.4 and node 1's 0.3, removes node 2's 0.3.
        let w = MixingMatrix::new(array![
            [0.4, 0.3, 0.3],
            [0.3, 0.4, 0.3],
            [0.3, 0.3, 0.4]
        ])
        .unwrap();
        let g = complete_graph(3);
        let mut removals = vec![BTreeSet::new(), BTreeSet::new(), BTreeSet::new()];
        removals[0].insert(2);
        let (dg, pruned) = prune_and_reweight(&w, &g, &removals).unwrap();
        assert_abs_diff_eq!(pruned.get(0, 0), 0.4 / 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(pruned.get(0, 1), 0.3 / 0.7, epsilon = 1e-12);
        assert_eq!(pruned.get(0, 2), 0.0);
        assert!(!dg.has_arc(2, 0));
        assert!(dg.has_arc(0, 2));
        // untouched rows are unchanged
        for j in 0..3 {
            assert_abs_diff_eq!(pruned.get(1, j), w.get(1, j), epsilon = 1e-15);
        }
    }

    #[test]
    fn prune_with_no_removals_is_identity() {
        let g = gen_erdos_renyi(12, 0.5, 5).unwrap();
        let w = metropolis_weights(&g);
        let removals = vec![BTreeSet::new(); 12];
        let (_, pruned) = prune_and_reweight(&w, &g, &removals).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                assert_eq!(pruned.get(i, j), w.get(i, j));
            }
        }
    }

    #[test]
    fn prune_all_neighbors_leaves_indicator_row() {
        let g = complete_graph(4);
        let w = metropolis_weights(&g);
        let mut removals = vec![BTreeSet::new(); 4];
        removals[2] = [0usize, 1, 3].into_iter().collect();
        let (_, pruned) = prune_and_reweight(&w, &g, &removals).unwrap();
        for j in 0..4 {
            let expected = if j == 2 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(pruned.get(2, j), expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn prune_rejects_self_removal() {
        let g = complete_graph(3);
        let w = metropolis_weights(&g);
        let mut removals = vec![BTreeSet::new(); 3];
        removals[1].insert(1);
        assert!(prune_and_reweight(&w, &g, &removals).is_err());
    }

    #[test]
    fn scc_complete_bidirected() {
        let dg = DirectedGraph::from_undirected(&complete_graph(4));
        let comps = strongly_connected_components(&dg);
        assert_eq!(comps, vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn scc_two_components() {
        let dg = DirectedGraph::new(3, [(0, 1), (1, 0), (1, 2)]).unwrap();
        let comps = strongly_connected_components(&dg);
        assert_eq!(comps, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn scc_empty_arcs_gives_singletons() {
        let dg = DirectedGraph::new(5, []).unwrap();
        let comps = strongly_connected_components(&dg);
        assert_eq!(comps.len(), 5);
        for (i, c) in comps.iter().enumerate() {
            assert_eq!(c, &vec![i]);
        }
    }

    #[test]
    fn closed_scc_prefers_component_without_external_in_arcs() {
        // {0,1} and {2,3} are both size-2; only {0,1} is closed.
        let dg = DirectedGraph::new(4, [(0, 1), (1, 0), (2, 3), (3, 2), (1, 2)]).unwrap();
        assert_eq!(largest_closed_scc(&dg), Some(vec![0, 1]));
    }

    #[test]
    fn closed_scc_single_node() {
        let dg = DirectedGraph::new(1, []).unwrap();
        assert_eq!(largest_closed_scc(&dg), Some(vec![0]));
    }

    #[test]
    fn closed_scc_none_when_largest_has_in_arcs() {
        // {1,2,3} strongly connected but fed by 0; singleton {0} is smaller.
        let dg =
            DirectedGraph::new(4, [(1, 2), (2, 3), (3, 1), (0, 1)]).unwrap();
        assert_eq!(largest_closed_scc(&dg), None);
    }

    #[test]
    fn spectral_profile_doubly_stochastic_is_uniform() {
        let a = array![[0.5, 0.5], [0.5, 0.5]];
        let p = spectral_profile(&a.view()).unwrap();
        assert_abs_diff_eq!(p.v1[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.v1[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn spectral_profile_two_node_chain() {
        let a = array![[0.9, 0.1], [0.2, 0.8]];
        let p = spectral_profile(&a.view()).unwrap();
        assert_abs_diff_eq!(p.v1[0], 2.0 / 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(p.v1[1], 1.0 / 3.0, epsilon = 1e-10);
        assert!(p.rho > 0.0 && p.rho < 1.0);
    }

    #[test]
    fn spectral_profile_uniform_for_metropolis() {
        let g = gen_erdos_renyi(15, 0.6, 2).unwrap();
        assert!(g.is_connected());
        let w = metropolis_weights(&g);
        let p = spectral_profile(&w.view()).unwrap();
        for i in 0..15 {
            assert_abs_diff_eq!(p.v1[i], 1.0 / 15.0, epsilon = 1e-9);
        }
        let s: f64 = p.v1.sum();
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spectral_profile_rejects_reducible_block() {
        let a = array![[1.0, 0.0], [0.5, 0.5]];
        assert!(spectral_profile(&a.view()).is_err());
    }

    #[test]
    fn residual_decay_is_geometric() {
        let g = gen_erdos_renyi(12, 0.5, 9).unwrap();
        assert!(g.is_connected());
        let w = metropolis_weights(&g);
        let p = spectral_profile(&w.view()).unwrap();
        let res = tracking_residuals(&w.view(), &p.v1, 40);
        // Non-increasing beyond a burn-in, ratio stabilizing below one,
        // and dominated by c·rho^k.
        for k in 6..res.len() {
            assert!(res[k] <= res[k - 1] * (1.0 + 1e-9), "rose at k={k}");
        }
        let late = res.len() - 1;
        assert!(res[late] / res[late - 1] < 1.0);
        for (k, &e) in res.iter().enumerate() {
            assert!(
                e <= p.c_const * p.rho.powi((k + 1) as i32) * (1.0 + 1e-6),
                "bound violated at k={k}"
            );
        }
    }

    #[test]
    fn connectivity_constant_values() {
        let c = connectivity_constant(150.0, 0.5, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(c, 75.0 - 150.0f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(c, 69.989_4, epsilon = 1e-3);
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(
            connectivity_constant(e, 1.0, 0.0, 0.0).unwrap(),
            e - 1.0,
            epsilon = 1e-12
        );
        let c2 = connectivity_constant(150.0, 0.5, 0.2, 0.1).unwrap();
        assert_abs_diff_eq!(c2, 150.0 * 0.5 * 0.7 - 150.0f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(c2, 47.489_4, epsilon = 1e-3);
        assert!(connectivity_constant(10.0, 0.5, 0.6, 0.5).is_err());
    }

    #[test]
    fn matrix_csv_roundtrip_is_exact() {
        let g = gen_erdos_renyi(9, 0.5, 4).unwrap();
        let w = metropolis_weights(&g);
        let text = w.to_csv();
        let back = MixingMatrix::from_csv(&text).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(w.get(i, j).to_bits(), back.get(i, j).to_bits());
            }
        }
    }

    #[test]
    fn graph_csv_roundtrip() {
        let g = gen_erdos_renyi(7, 0.4, 1).unwrap();
        let back = UndirectedGraph::from_adjacency_csv(&g.to_adjacency_csv()).unwrap();
        assert_eq!(g, back);
    }
}
