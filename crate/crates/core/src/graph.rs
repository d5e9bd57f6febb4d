//! Communication topologies, hop neighborhoods and weighted Laplacians.

use std::collections::{BTreeSet, HashSet};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{eig_sym, SymMatrix};

/// Undirected connected graph. Edges are stored as `(i, j)` with `i < j`;
/// their order fixes the row order of the incidence matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTopology {
    n: usize,
    edges: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
}

impl GraphTopology {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return invalid("graph needs at least one node");
        }
        let mut seen = HashSet::new();
        let mut norm = Vec::with_capacity(edges.len());
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return invalid(format!("edge ({a},{b}) references a node outside 0..{n}"));
            }
            if a == b {
                return invalid(format!("self-loop at node {a}"));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return invalid(format!("duplicate edge ({},{})", e.0, e.1));
            }
            norm.push(e);
            adj[e.0].push(e.1);
            adj[e.1].push(e.0);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        let g = GraphTopology { n, edges: norm, adj };
        if !g.is_connected() {
            return invalid("graph is not connected");
        }
        Ok(g)
    }

    pub fn complete(n: usize) -> Self {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .collect();
        Self::new(n, &edges).expect("complete graph is valid")
    }

    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::new(n, &edges).expect("path graph is valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    /// One-hop neighbors of `i`, ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i].binary_search(&j).is_ok()
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &self.adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.n
    }

    /// Signed incidence matrix: row `r` has `+1` at `edges[r].0` and `-1`
    /// at `edges[r].1`.
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.m(), self.n);
        for (r, &(i, j)) in self.edges.iter().enumerate() {
            e[(r, i)] = 1.0;
            e[(r, j)] = -1.0;
        }
        e
    }
}

/// The `p`-th neighbor set defined recursively as the union of the
/// neighbors of the previous set (so it holds the endpoints of walks of
/// length exactly `p`; node `i` itself belongs to it for even `p`).
pub fn hop_set(g: &GraphTopology, i: usize, p: usize) -> BTreeSet<usize> {
    let mut cur: BTreeSet<usize> = g.neighbors(i).iter().copied().collect();
    for _ in 1..p {
        cur = cur
            .iter()
            .flat_map(|&j| g.neighbors(j).iter().copied())
            .collect();
    }
    cur
}

/// Union of the hop sets `1..=k`: every node reachable by a walk of at most
/// `k` edges. Node `i` is included exactly when some such walk returns to it.
pub fn khop_neighbors(g: &GraphTopology, i: usize, k: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let mut cur: BTreeSet<usize> = BTreeSet::from([i]);
    for _ in 0..k {
        cur = cur
            .iter()
            .flat_map(|&j| g.neighbors(j).iter().copied())
            .collect();
        out.extend(cur.iter().copied());
    }
    out
}

/// Random connected graph: a uniform spanning tree drawn with the
/// Aldous-Broder walk on the complete graph, then uniformly chosen extra
/// edges until `m` edges exist. Edges are returned sorted.
pub fn random_connected(n: usize, m: usize, seed: u64) -> Result<GraphTopology> {
    if n == 0 {
        return invalid("graph needs at least one node");
    }
    let max_m = n * (n - 1) / 2;
    if m + 1 < n || m > max_m {
        return invalid(format!(
            "edge count {m} infeasible for a connected simple graph on {n} nodes"
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut visited = vec![false; n];
    let mut cur = rng.gen_range(0..n);
    visited[cur] = true;
    let mut remaining = n - 1;
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    while remaining > 0 {
        let mut next = rng.gen_range(0..n - 1);
        if next >= cur {
            next += 1;
        }
        if !visited[next] {
            visited[next] = true;
            remaining -= 1;
            edges.insert((cur.min(next), cur.max(next)));
        }
        cur = next;
    }
    let mut candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .filter(|e| !edges.contains(e))
        .collect();
    let extra = m - (n - 1);
    let (chosen, _) = candidates.partial_shuffle(&mut rng, extra);
    edges.extend(chosen.iter().copied());
    let list: Vec<_> = edges.into_iter().collect();
    GraphTopology::new(n, &list)
}

/// Design metadata attached to a Laplacian.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaplacianMeta {
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
    pub provenance: Option<String>,
}

/// `L = E^T diag(w) E` together with its graph and a sparse row view used by
/// the distributed solvers.
#[derive(Debug, Clone)]
pub struct WeightedLaplacian {
    graph: GraphTopology,
    weights: Vec<f64>,
    matrix: SymMatrix,
    /// Row `i` as `(column, value)` pairs over `{i} ∪ N_i`, ascending column.
    rows: Vec<Vec<(usize, f64)>>,
    pub meta: LaplacianMeta,
}

/// Builds the weighted Laplacian of `g`.
pub fn assemble_laplacian(g: &GraphTopology, weights: &[f64]) -> Result<WeightedLaplacian> {
    if weights.len() != g.m() {
        return invalid(format!(
            "{} weights supplied for {} edges",
            weights.len(),
            g.m()
        ));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return invalid(format!("edge weights must be positive and finite, got {w}"));
    }
    let n = g.n();
    let mut l = DMatrix::zeros(n, n);
    for (&(i, j), &w) in g.edges().iter().zip(weights) {
        l[(i, i)] += w;
        l[(j, j)] += w;
        l[(i, j)] -= w;
        l[(j, i)] -= w;
    }
    let rows = (0..n)
        .map(|i| {
            let mut r: Vec<(usize, f64)> = g.neighbors(i).iter().map(|&j| (j, l[(i, j)])).collect();
            r.push((i, l[(i, i)]));
            r.sort_by_key(|e| e.0);
            r
        })
        .collect();
    Ok(WeightedLaplacian {
        graph: g.clone(),
        weights: weights.to_vec(),
        matrix: SymMatrix::from_symmetric(l),
        rows,
        meta: LaplacianMeta::default(),
    })
}

/// Degree matrix minus adjacency matrix.
pub fn unweighted_laplacian(g: &GraphTopology) -> WeightedLaplacian {
    assemble_laplacian(g, &vec![1.0; g.m()]).expect("unit weights are valid")
}

impl WeightedLaplacian {
    pub fn graph(&self) -> &GraphTopology {
        &self.graph
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// Sparse row `i` over `{i} ∪ N_i`, ascending column.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `L v`, summing each row over its sparse pattern in ascending column
    /// order. Every solver uses this routine so that results agree bitwise.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.n(),
            self.rows.iter().map(|r| row_dot(r, v.as_slice())),
        )
    }

    /// Laplacian with every weight multiplied by `s > 0`.
    pub fn scaled(&self, s: f64) -> Result<WeightedLaplacian> {
        let w: Vec<f64> = self.weights.iter().map(|w| w * s).collect();
        let mut out = assemble_laplacian(&self.graph, &w)?;
        out.meta = self.meta.clone();
        Ok(out)
    }

    /// Checks the structural invariants: zero row sums, nonpositive
    /// off-diagonals supported on edges, PSD and connected.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let m = self.matrix.matrix();
        let scale = m.amax().max(1.0);
        for i in 0..n {
            let s: f64 = m.row(i).sum();
            if s.abs() > 1e-10 * scale {
                return invalid(format!("row {i} sums to {s}"));
            }
            for j in 0..n {
                if i == j {
                    continue;
                }
                let v = m[(i, j)];
                if v > 0.0 {
                    return invalid(format!("positive off-diagonal entry at ({i},{j})"));
                }
                if v != 0.0 && !self.graph.has_edge(i, j) {
                    return invalid(format!("entry ({i},{j}) is off the graph pattern"));
                }
            }
        }
        if n > 1 {
            let sd = eig_sym(&self.matrix)?;
            if sd.eigenvalues[0] < -1e-9 * scale {
                return invalid("Laplacian is not positive semidefinite");
            }
            if sd.eigenvalues[1] <= 0.0 {
                return invalid("Laplacian is disconnected");
            }
        }
        Ok(())
    }

    /// Recovers a Laplacian from a dense matrix on the given graph.
    pub fn from_dense(g: &GraphTopology, rows: &[Vec<f64>]) -> Result<WeightedLaplacian> {
        if rows.len() != g.n() || rows.iter().any(|r| r.len() != g.n()) {
            return invalid("Laplacian dimensions do not match the graph");
        }
        let weights: Vec<f64> = g.edges().iter().map(|&(i, j)| -rows[i][j]).collect();
        let l = assemble_laplacian(g, &weights)?;
        let dense = SymMatrix::from_rows(rows)?;
        let diff = (dense.matrix() - l.matrix.matrix()).amax();
        if diff > 1e-9 * dense.matrix().amax().max(1.0) {
            return invalid("matrix is not a Laplacian of the supplied graph");
        }
        l.validate()?;
        Ok(l)
    }
}

#[inline]
pub(crate) fn row_dot(row: &[(usize, f64)], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &(j, lij) in row {
        acc += lij * v[j];
    }
    acc
}

/// On-disk graph description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<LaplacianMeta>,
}

impl GraphFile {
    pub fn from_graph(g: &GraphTopology, weights: Option<&[f64]>) -> Self {
        GraphFile {
            n: g.n(),
            edges: g.edges().iter().map(|&(i, j)| [i, j]).collect(),
            weights: weights.map(|w| w.to_vec()),
            meta: None,
        }
    }

    /// Weights and metadata of `l`.
    pub fn from_laplacian(l: &WeightedLaplacian) -> Self {
        GraphFile {
            meta: Some(l.meta.clone()),
            ..GraphFile::from_graph(l.graph(), Some(l.weights()))
        }
    }

    pub fn graph(&self) -> Result<GraphTopology> {
        let edges: Vec<_> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        GraphTopology::new(self.n, &edges)
    }

    pub fn laplacian(&self) -> Result<WeightedLaplacian> {
        let g = self.graph()?;
        let mut l = match &self.weights {
            Some(w) => assemble_laplacian(&g, w)?,
            None => unweighted_laplacian(&g),
        };
        if let Some(m) = &self.meta {
            l.meta = m.clone();
        }
        Ok(l)
    }
}


#[cfg(test)]
mod properties {
    use nalgebra::DVector;
    use proptest::prelude::*;

    use super::*;
    use crate::linalg::eig_sym;
    use crate::testutil::graph_strategy;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn laplacian_invariants(g in graph_strategy(12), ws in prop::collection::vec(0.01f64..5.0, 66)) {
            let l = assemble_laplacian(&g, &ws[..g.m()]).unwrap();
            l.validate().unwrap();
            prop_assert!(l.apply(&DVector::from_element(g.n(), 1.0)).amax() < 1e-12);
            let eig = eig_sym(l.matrix()).unwrap();
            prop_assert!(eig.min() > -1e-10);
            // Connected, so exactly one zero eigenvalue.
            prop_assert_eq!(eig.eigenvalues.iter().filter(|v| v.abs() < 1e-9).count(), 1);
            let text = serde_json::to_string(&GraphFile::from_laplacian(&l)).unwrap();
            let back = serde_json::from_str::<GraphFile>(&text).unwrap().laplacian().unwrap();
            prop_assert_eq!(back.weights(), l.weights());
        }

        #[test]
        fn khop_sets_are_nested(g in graph_strategy(12), i in 0usize..12) {
            let i = i % g.n();
            let one = khop_neighbors(&g, i, 1);
            prop_assert!(one.is_subset(&khop_neighbors(&g, i, 2)));
            for j in &one {
                prop_assert!(g.has_edge(i, *j) || *j == i);
            }
        }
    }
}
