//! Weighted directed graphs and their Laplacians.
//!
//! Convention: `W[(i, j)] > 0` means agent `i` measures agent `j`, i.e. the
//! graph has an edge `j -> i`. Indices are zero-based.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::{ensure_finite, ensure_square, inf_norm, is_symmetric, row_sum_residual};
use crate::{Error, Result};

/// Absolute row-sum tolerance for a valid Laplacian.
pub const LAPLACIAN_ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DirectedWeightedGraph {
    weights: DMatrix<f64>,
}

/// A weighted edge `from -> to` (agent `to` measures agent `from`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

impl DirectedWeightedGraph {
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        let n = ensure_square(&weights)?;
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        ensure_finite(&weights)?;
        for i in 0..n {
            if weights[(i, i)] != 0.0 {
                return Err(Error::SelfLoop { node: i });
            }
            for j in 0..n {
                let w = weights[(i, j)];
                if w < 0.0 {
                    return Err(Error::NegativeWeight {
                        from: j,
                        to: i,
                        weight: w,
                    });
                }
            }
        }
        Ok(Self { weights })
    }

    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(n, n))
    }

    /// Builds a graph from `(from, to, weight)` triples. Repeated edges
    /// overwrite earlier ones.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut w = DMatrix::zeros(n, n);
        for &(from, to, weight) in edges {
            for index in [from, to] {
                if index >= n {
                    return Err(Error::EdgeOutOfRange { index, n });
                }
            }
            w[(to, from)] = weight;
        }
        Self::new(w)
    }

    pub fn n_nodes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.weights[(to, from)] > 0.0
    }

    /// Edges in row-major order of `W`.
    pub fn edges(&self) -> Vec<Edge> {
        let n = self.n_nodes();
        let mut out = Vec::new();
        for to in 0..n {
            for from in 0..n {
                let weight = self.weights[(to, from)];
                if weight > 0.0 {
                    out.push(Edge { from, to, weight });
                }
            }
        }
        out
    }

    pub fn is_undirected(&self) -> bool {
        self.weights == self.weights.transpose()
    }

    pub fn laplacian(&self) -> Laplacian {
        laplacian_of(self)
    }

    pub fn has_connected_spanning_tree(&self) -> bool {
        has_connected_spanning_tree(self)
    }

    /// Nodes reachable from `root` following edges in their direction.
    pub fn reachable_from(&self, root: usize) -> Vec<bool> {
        let n = self.n_nodes();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(j) = queue.pop_front() {
            for i in 0..n {
                if !seen[i] && self.weights[(i, j)] > 0.0 {
                    seen[i] = true;
                    queue.push_back(i);
                }
            }
        }
        seen
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            n: self.n_nodes(),
            edges: self
                .edges()
                .into_iter()
                .map(|e| (e.from, e.to, e.weight))
                .collect(),
        }
    }
}

/// On-disk graph format: `{"n": N, "edges": [[from, to, weight], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl TryFrom<GraphJson> for DirectedWeightedGraph {
    type Error = Error;

    fn try_from(value: GraphJson) -> Result<Self> {
        Self::from_edges(value.n, &value.edges)
    }
}

impl Serialize for DirectedWeightedGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for DirectedWeightedGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = GraphJson::deserialize(d)?;
        Self::try_from(raw).map_err(serde::de::Error::custom)
    }
}

/// A graph Laplacian: zero row sums, nonpositive off-diagonal entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    matrix: DMatrix<f64>,
}

impl Laplacian {
    /// Validates an explicit matrix as a Laplacian. The row-sum tolerance is
    /// absolute for unit-scale matrices and grows with `‖L‖_∞` beyond that.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let n = ensure_square(&matrix)?;
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        ensure_finite(&matrix)?;
        let scale = inf_norm(&matrix).max(1.0);
        let residual = row_sum_residual(&matrix);
        if residual > LAPLACIAN_ROW_SUM_TOL * scale {
            return Err(Error::NotLaplacian(format!(
                "row sum residual {residual:e}"
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let v = matrix[(i, j)];
                if i != j && v > 0.0 {
                    return Err(Error::NotLaplacian(format!(
                        "positive off-diagonal entry {v} at ({i}, {j})"
                    )));
                }
                if i == j && v < 0.0 {
                    return Err(Error::NotLaplacian(format!(
                        "negative diagonal entry {v} at row {i}"
                    )));
                }
            }
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `factor * L`; `factor` must be positive.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Laplacian scale factor must be positive, got {factor}"
            )));
        }
        Ok(Self {
            matrix: &self.matrix * factor,
        })
    }

    /// The graph that generates this Laplacian (`w_ij = -L_ij`, `i != j`).
    pub fn graph(&self) -> DirectedWeightedGraph {
        let n = self.dim();
        let w = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { -self.matrix[(i, j)] });
        DirectedWeightedGraph { weights: w }
    }

    pub fn is_symmetric(&self) -> bool {
        is_symmetric(&self.matrix, 1e-12)
    }
}

/// `[L]_ij = -w_ij` for `i != j`, `[L]_ii = Σ_{k≠i} w_ik`.
pub fn laplacian_of(graph: &DirectedWeightedGraph) -> Laplacian {
    let w = graph.weights();
    let n = w.nrows();
    let mut l = -w.clone();
    for i in 0..n {
        l[(i, i)] = w.row(i).sum();
    }
    Laplacian { matrix: l }
}

/// True iff some root reaches every node along edge direction. The root
/// candidate is the last vertex to finish in a depth-first traversal; it
/// lies in a source component of the condensation, so checking it alone
/// decides the question.
pub fn has_connected_spanning_tree(graph: &DirectedWeightedGraph) -> bool {
    let n = graph.n_nodes();
    let w = graph.weights();
    let mut visited = vec![false; n];
    let mut last_finished = 0;
    for start in 0..n {
        if visited[start] {
            continue;
        }
        // iterative DFS with explicit successor cursor
        let mut stack = vec![(start, 0usize)];
        visited[start] = true;
        while let Some((v, cursor)) = stack.last_mut() {
            let from = *v;
            let mut next = None;
            while *cursor < n {
                let to = *cursor;
                *cursor += 1;
                if !visited[to] && w[(to, from)] > 0.0 {
                    next = Some(to);
                    break;
                }
            }
            match next {
                Some(to) => {
                    visited[to] = true;
                    stack.push((to, 0));
                }
                None => {
                    last_finished = from;
                    stack.pop();
                }
            }
        }
    }
    graph.reachable_from(last_finished).iter().all(|&r| r)
}

/// Preset growing graph families with unit weights.
#[derive(Debug, Clone, Copy)]
pub enum GraphFamily {
    /// `w_ij = 1` iff `i - j ≡ 1 (mod N)`.
    DirectedCycle,
    /// Bidirectional string led by node 0: `w_ij = 1` iff `|i - j| = 1`, `i ≠ 0`.
    LeaderChain,
    /// Undirected path: `w_ij = 1` iff `|i - j| = 1`.
    Path,
    /// All `i ≠ j`.
    Complete,
    /// User-supplied deterministic generator.
    Custom {
        name: &'static str,
        generator: fn(usize) -> DirectedWeightedGraph,
    },
}

// custom families compare by name
impl PartialEq for GraphFamily {
    fn eq(&self, other: &Self) -> bool {
        self.name() == other.name()
    }
}

impl Eq for GraphFamily {}

impl GraphFamily {
    pub fn name(&self) -> &'static str {
        match self {
            Self::DirectedCycle => "directed_cycle",
            Self::LeaderChain => "leader_chain",
            Self::Path => "path",
            Self::Complete => "complete",
            Self::Custom { name, .. } => name,
        }
    }

    pub fn member(&self, n: usize) -> Result<DirectedWeightedGraph> {
        make_family(*self, n)
    }
}

impl fmt::Display for GraphFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GraphFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "directed_cycle" | "cycle" => Ok(Self::DirectedCycle),
            "leader_chain" => Ok(Self::LeaderChain),
            "path" => Ok(Self::Path),
            "complete" => Ok(Self::Complete),
            _ => Err(Error::UnknownFamily(s.to_string())),
        }
    }
}

pub fn make_family(kind: GraphFamily, n: usize) -> Result<DirectedWeightedGraph> {
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let rule: fn(usize, usize, usize) -> bool = match kind {
        GraphFamily::DirectedCycle => |i, j, n| (i + n - j) % n == 1,
        GraphFamily::LeaderChain => |i, j, _| i != 0 && i.abs_diff(j) == 1,
        GraphFamily::Path => |i, j, _| i.abs_diff(j) == 1,
        GraphFamily::Complete => |i, j, _| i != j,
        GraphFamily::Custom { generator, .. } => {
            let g = generator(n);
            if g.n_nodes() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: g.n_nodes(),
                    context: "custom family generator",
                });
            }
            return Ok(g);
        }
    };
    let w = DMatrix::from_fn(n, n, |i, j| if i != j && rule(i, j, n) { 1.0 } else { 0.0 });
    DirectedWeightedGraph::new(w)
}
