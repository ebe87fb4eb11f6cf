//! Communication topologies.
//!
//! A [`CommGraph`] stores the weighted adjacency matrix `A` with the
//! convention `a_ij > 0` iff agent `j` can send to agent `i`, so row `i`
//! lists the in-neighbors of `i`. The consensus trackers need the graph to
//! be strongly connected and weight-balanced; [`CommGraph::validate`]
//! checks both.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Retry budget for [`generate_er`].
pub const MAX_ER_ATTEMPTS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("edge probability must lie in (0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("could not generate connected graph after {attempts} attempts (n = {n}, p = {p})")]
    NotConnected { n: usize, p: f64, attempts: usize },
    #[error("invalid weight matrix: {0}")]
    InvalidWeights(String),
}

/// Result of [`CommGraph::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphReport {
    pub connected: bool,
    pub balanced: bool,
}

impl GraphReport {
    pub fn is_valid(&self) -> bool {
        self.connected && self.balanced
    }
}

/// Weighted directed communication graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    weights: DMatrix<f64>,
    in_neighbors: Vec<Vec<usize>>,
    out_neighbors: Vec<Vec<usize>>,
}

impl CommGraph {
    /// Builds a graph from an adjacency matrix (`a_ij` = weight of `j -> i`).
    ///
    /// The matrix must be square with a zero diagonal and finite,
    /// nonnegative entries. Connectivity and balance are not enforced here.
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self, GraphError> {
        if weights.nrows() != weights.ncols() {
            return Err(GraphError::InvalidWeights(format!(
                "matrix is {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        let n = weights.nrows();
        let mut in_neighbors = vec![Vec::new(); n];
        let mut out_neighbors = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                let a = weights[(i, j)];
                if !a.is_finite() || a < 0.0 {
                    return Err(GraphError::InvalidWeights(format!(
                        "a[{i}][{j}] = {a} is not a finite nonnegative weight"
                    )));
                }
                if i == j {
                    if a != 0.0 {
                        return Err(GraphError::InvalidWeights(format!(
                            "self-loop at node {i}"
                        )));
                    }
                    continue;
                }
                if a > 0.0 {
                    in_neighbors[i].push(j);
                    out_neighbors[j].push(i);
                }
            }
        }
        Ok(Self {
            weights,
            in_neighbors,
            out_neighbors,
        })
    }

    /// Builds a graph from directed edges `(from, to, weight)`.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        let mut weights = DMatrix::zeros(n, n);
        for &(from, to, w) in edges {
            if from >= n || to >= n {
                return Err(GraphError::InvalidWeights(format!(
                    "edge ({from}, {to}) out of range for n = {n}"
                )));
            }
            weights[(to, from)] = w;
        }
        Self::from_weights(weights)
    }

    /// Directed ring `0 -> 1 -> ... -> n-1 -> 0` with unit weights.
    pub fn ring(n: usize) -> Result<Self, GraphError> {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
        Self::from_edges(n, &edges)
    }

    /// Complete graph with the same weight on every ordered pair.
    pub fn complete(n: usize, weight: f64) -> Result<Self, GraphError> {
        let weights = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { weight });
        Self::from_weights(weights)
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    /// `a_ij`: weight with which `i` listens to `j`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Agents `j` with `a_ij > 0` (those that send to `i`).
    pub fn in_neighbors(&self, i: usize) -> &[usize] {
        &self.in_neighbors[i]
    }

    /// Agents that receive from `i`.
    pub fn out_neighbors(&self, i: usize) -> &[usize] {
        &self.out_neighbors[i]
    }

    pub fn in_degree(&self, i: usize) -> f64 {
        self.weights.row(i).sum()
    }

    pub fn out_degree(&self, i: usize) -> f64 {
        self.weights.column(i).sum()
    }

    pub fn edge_count(&self) -> usize {
        self.in_neighbors.iter().map(Vec::len).sum()
    }

    /// Same topology with every weight multiplied by `factor`.
    pub fn rescaled(&self, factor: f64) -> Result<Self, GraphError> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(GraphError::InvalidWeights(format!(
                "scale factor {factor} must be positive"
            )));
        }
        Self::from_weights(&self.weights * factor)
    }

    /// `L = D_in - A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut l = -self.weights.clone();
        for i in 0..n {
            l[(i, i)] = self.in_degree(i);
        }
        l
    }

    /// Strong connectivity (forward and reverse reachability from node 0)
    /// and exact per-node degree balance.
    pub fn validate(&self) -> GraphReport {
        let n = self.n();
        let connected = n > 0
            && reaches_all(n, |v| &self.out_neighbors[v])
            && reaches_all(n, |v| &self.in_neighbors[v]);
        let balanced = (0..n).all(|i| self.in_degree(i) == self.out_degree(i));
        GraphReport {
            connected,
            balanced,
        }
    }

    /// Edge list `[from, to, weight]` for serialization.
    pub fn edge_list(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (i, nbrs) in self.in_neighbors.iter().enumerate() {
            for &j in nbrs {
                out.push((j, i, self.weights[(i, j)]));
            }
        }
        out
    }
}

fn reaches_all<'a, F>(n: usize, next: F) -> bool
where
    F: Fn(usize) -> &'a [usize],
{
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &w in next(v) {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    count == n
}

/// Erdős–Rényi `G(n, p)` graph used bidirectionally with unit weights.
///
/// Redraws until connected, up to [`MAX_ER_ATTEMPTS`] times. The draw
/// sequence depends only on `seed`.
pub fn generate_er(n: usize, p: f64, seed: u64) -> Result<CommGraph, GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(GraphError::InvalidProbability(p));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ER_ATTEMPTS {
        let mut weights = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random_bool(p) {
                    weights[(i, j)] = 1.0;
                    weights[(j, i)] = 1.0;
                }
            }
        }
        let g = CommGraph::from_weights(weights)?;
        if g.validate().connected {
            return Ok(g);
        }
    }
    Err(GraphError::NotConnected {
        n,
        p,
        attempts: MAX_ER_ATTEMPTS,
    })
}
