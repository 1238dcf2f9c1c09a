//! Areal adjacency structure and intrinsic CAR quantities.
//!
//! Weights are the row-normalized contiguity weights w_ij = 1/n(i) for
//! neighbors, so the CAR conditional mean is the neighbor average. The joint
//! density is handled in its pairwise-difference form, which is all the
//! Metropolis ratios need.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Scalar;

#[derive(Error, Debug, PartialEq)]
pub enum GraphError {
    #[error("self-loop on area {0} (1-based)")]
    SelfLoop(usize),
    #[error("edge endpoint {0} out of range 1..={1}")]
    IndexOutOfRange(usize, usize),
    #[error("area {0} (0-based) is isolated; the CAR conditional is undefined")]
    IsolatedArea(usize),
    #[error("field length {0} does not match area count {1}")]
    FieldLengthMismatch(usize, usize),
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
}

/// Undirected contiguity graph over `n` areas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyGraph {
    n: usize,
    neighbors: Vec<Vec<usize>>,
    component: Vec<usize>,
    n_components_non_isolated: usize,
}

impl AdjacencyGraph {
    /// Build from 1-based undirected edges; duplicates are collapsed and the
    /// relation is symmetrized. Areas with no edges are flagged isolated.
    pub fn from_edges(edges: &[(usize, usize)], n: usize) -> Result<Self, GraphError> {
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            for &e in &[a, b] {
                if e < 1 || e > n {
                    return Err(GraphError::IndexOutOfRange(e, n));
                }
            }
            let (i, j) = (a - 1, b - 1);
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        let (component, n_components_non_isolated) = label_components(&neighbors);
        Ok(Self {
            n,
            neighbors,
            component,
            n_components_non_isolated,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Number of neighbors n(i).
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn is_isolated(&self, i: usize) -> bool {
        self.neighbors[i].is_empty()
    }

    pub fn n_isolated(&self) -> usize {
        (0..self.n).filter(|&i| self.is_isolated(i)).count()
    }

    /// Connected-component label of each area (isolated areas get their own).
    pub fn component_labels(&self) -> &[usize] {
        &self.component
    }

    /// Rank of the intrinsic CAR precision: non-isolated areas minus the
    /// number of connected components they form.
    pub fn car_rank(&self) -> usize {
        (self.n - self.n_isolated()) - self.n_components_non_isolated
    }
}

fn label_components(neighbors: &[Vec<usize>]) -> (Vec<usize>, usize) {
    let n = neighbors.len();
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut non_isolated = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        label[start] = next;
        if !neighbors[start].is_empty() {
            non_isolated += 1;
        }
        stack.push(start);
        while let Some(i) = stack.pop() {
            for &j in &neighbors[i] {
                if label[j] == usize::MAX {
                    label[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    (label, non_isolated)
}

/// Conditional mean and variance of the intrinsic CAR at area `i`:
/// Normal(Σ_j w_ij·field_j, σ²/n(i)) with row-normalized weights.
pub fn car_conditional<S: Scalar>(
    i: usize,
    field: &[S],
    graph: &AdjacencyGraph,
    sigma2: S,
) -> Result<(S, S), GraphError> {
    if field.len() != graph.n() {
        return Err(GraphError::FieldLengthMismatch(field.len(), graph.n()));
    }
    if sigma2 <= S::zero() {
        return Err(GraphError::NonPositiveVariance(
            sigma2.to_f64().unwrap_or(f64::NAN),
        ));
    }
    if graph.is_isolated(i) {
        return Err(GraphError::IsolatedArea(i));
    }
    let deg = S::c(graph.degree(i) as f64);
    let total: S = graph.neighbors(i).iter().map(|&j| field[j]).sum();
    Ok((total / deg, sigma2 / deg))
}

/// Sum of squared differences over unordered neighbor pairs.
pub fn pairwise_difference_sum<S: Scalar>(field: &[S], graph: &AdjacencyGraph) -> S {
    let mut acc = S::zero();
    for i in 0..graph.n() {
        for &j in graph.neighbors(i) {
            if j > i {
                let d = field[i] - field[j];
                acc = acc + d * d;
            }
        }
    }
    acc
}

/// Intrinsic CAR log density up to its field-independent constant:
/// −(1/2σ²)·Σ_{i<j, j∈nbr(i)} (field_i − field_j)².
pub fn car_log_density<S: Scalar>(
    field: &[S],
    graph: &AdjacencyGraph,
    sigma2: S,
) -> Result<S, GraphError> {
    if field.len() != graph.n() {
        return Err(GraphError::FieldLengthMismatch(field.len(), graph.n()));
    }
    if sigma2 <= S::zero() {
        return Err(GraphError::NonPositiveVariance(
            sigma2.to_f64().unwrap_or(f64::NAN),
        ));
    }
    let s = pairwise_difference_sum(field, graph);
    Ok(-s / (S::c(2.0) * sigma2))
}

/// Parse a plain-text edge list: one `i j` pair per line, 1-based,
/// whitespace-separated; blank lines and lines starting with `#` ignored.
pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>, String> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let a = parts
            .next()
            .ok_or_else(|| format!("line {}: missing first index", lineno + 1))?;
        let b = parts
            .next()
            .ok_or_else(|| format!("line {}: missing second index", lineno + 1))?;
        if parts.next().is_some() {
            return Err(format!("line {}: expected exactly two indices", lineno + 1));
        }
        let a: usize = a
            .parse()
            .map_err(|_| format!("line {}: bad index {a:?}", lineno + 1))?;
        let b: usize = b
            .parse()
            .map_err(|_| format!("line {}: bad index {b:?}", lineno + 1))?;
        edges.push((a, b));
    }
    Ok(edges)
}
