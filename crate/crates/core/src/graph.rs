//! Sparse graph storage and the normalized operators consumed by every
//! unfolded model.
//!
//! With `D̃` the degree matrix of the (optionally self-looped) adjacency `Ã`:
//!
//! ```text
//! A = D̃^{-1/2} Ã D̃^{-1/2}
//! L = I - A
//! Δ[e, u] = +1/√d_u,  Δ[e, v] = -1/√d_v   for every edge e = (u, v), u < v
//! ```
//!
//! With self-loops `ΔᵀΔ = L` holds for every graph. Without them it holds
//! whenever no node is isolated: an isolated node keeps `L[u,u] = 1` while
//! its column of `Δ` is empty.

use std::sync::Arc;

use crate::tensor::DenseMatrix;
use crate::{Error, Result};

/// Compressed sparse row matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicate
    /// coordinates are summed; explicit zeros are kept.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= n_rows || c >= n_cols {
                return Err(Error::InvalidGraph(format!(
                    "triplet ({r}, {c}) outside {n_rows}x{n_cols}"
                )));
            }
        }
        sorted.sort_by_key(|a| (a.0, a.1));

        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            col_indices.push(c);
            values.push(v);
            row_offsets[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..n_rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates `(col, value)` over the stored entries of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[span.clone()].binary_search(&j) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // Rows are visited in increasing order, so each transposed row
        // receives strictly increasing column indices.
        for i in 0..self.n_rows {
            for (c, v) in self.row(i) {
                let slot = next[c];
                col_indices[slot] = i;
                values[slot] = v;
                next[c] += 1;
            }
        }
        Self {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_offsets: counts,
            col_indices,
            values,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for (c, v) in self.row(i) {
                out.set(i, c, v);
            }
        }
        out
    }

    /// Sparse-dense product `S · H`. Every output row is produced by one
    /// sequential pass over its stored entries.
    pub fn spmm(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        if self.n_cols != h.rows() {
            return Err(Error::ShapeMismatch {
                op: "spmm",
                left: (self.n_rows, self.n_cols),
                right: h.shape(),
            });
        }
        let width = h.cols();
        let mut out = DenseMatrix::zeros(self.n_rows, width);
        for i in 0..self.n_rows {
            let out_row = out.row_mut(i);
            for (c, v) in self.row(i) {
                for (o, x) in out_row.iter_mut().zip(h.row(c)) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    pub fn is_valid(&self) -> bool {
        if self.row_offsets.len() != self.n_rows + 1
            || self.row_offsets[0] != 0
            || self.row_offsets[self.n_rows] != self.col_indices.len()
            || self.col_indices.len() != self.values.len()
        {
            return false;
        }
        for i in 0..self.n_rows {
            if self.row_offsets[i] > self.row_offsets[i + 1] {
                return false;
            }
            let cols = &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) || cols.iter().any(|&c| c >= self.n_cols) {
                return false;
            }
        }
        true
    }
}

/// A sparse operator paired with its transpose, shared by every tape node
/// that applies it.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    forward: Arc<CsrMatrix>,
    transpose: Arc<CsrMatrix>,
}

impl SparseOperator {
    pub fn new(matrix: CsrMatrix) -> Self {
        let transpose = Arc::new(matrix.transpose());
        Self {
            forward: Arc::new(matrix),
            transpose,
        }
    }

    /// For matrices known to be symmetric; the transpose shares storage.
    pub fn symmetric(matrix: CsrMatrix) -> Self {
        let forward = Arc::new(matrix);
        Self {
            transpose: Arc::clone(&forward),
            forward,
        }
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.forward
    }

    pub fn transposed(&self) -> &CsrMatrix {
        &self.transpose
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.forward.n_rows(), self.forward.n_cols())
    }

    /// The operator applying the transpose; shares storage with `self`.
    pub fn transposed_operator(&self) -> Self {
        Self {
            forward: Arc::clone(&self.transpose),
            transpose: Arc::clone(&self.forward),
        }
    }
}

/// Undirected, unweighted simple graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Validates and stores the edge list. Each pair is normalized to
    /// `(min, max)` and the list is sorted; self-loops, out-of-range
    /// endpoints and repeated undirected edges are rejected.
    pub fn new(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut normalized = Vec::new();
        for (u, v) in edges {
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop at node {u}")));
            }
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) has an endpoint >= {n_nodes}"
                )));
            }
            normalized.push((u.min(v), u.max(v)));
        }
        normalized.sort_unstable();
        if let Some(w) = normalized.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidGraph(format!(
                "duplicate edge ({}, {})",
                w[0].0, w[0].1
            )));
        }
        Ok(Self {
            n_nodes,
            edges: normalized,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Sorted `(u, v)` pairs with `u < v`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Raw degrees (no self-loops).
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }
}

/// Normalized operators of one graph.
#[derive(Debug, Clone)]
pub struct GraphOperators {
    pub adjacency: SparseOperator,
    pub laplacian: SparseOperator,
    pub incidence: SparseOperator,
    /// Degrees of the (optionally self-looped) adjacency.
    pub degrees: Vec<f64>,
    pub self_loops_added: bool,
    edges: Vec<(usize, usize)>,
}

impl GraphOperators {
    pub fn n_nodes(&self) -> usize {
        self.degrees.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// `D^{-1/2}` diagonal with zero for degree-0 nodes.
    pub fn inv_sqrt_degrees(&self) -> Vec<f64> {
        self.degrees.iter().map(|&d| inv_sqrt(d)).collect()
    }

    /// Nodes whose row of `A` is empty. They only exist without self-loops.
    pub fn isolated_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| self.degrees[i] == 0.0).collect()
    }
}

fn inv_sqrt(d: f64) -> f64 {
    if d > 0.0 {
        1.0 / d.sqrt()
    } else {
        0.0
    }
}

/// Builds `A`, `L = I - A`, the incidence matrix `Δ` and the degree vector.
pub fn build_operators(graph: &Graph, add_self_loops: bool) -> Result<GraphOperators> {
    let n = graph.n_nodes();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let loop_weight = if add_self_loops { 1.0 } else { 0.0 };
    let degrees: Vec<f64> = graph
        .degrees()
        .into_iter()
        .map(|d| d as f64 + loop_weight)
        .collect();
    let scale: Vec<f64> = degrees.iter().map(|&d| inv_sqrt(d)).collect();

    let mut adj = Vec::with_capacity(2 * graph.n_edges() + n);
    for &(u, v) in graph.edges() {
        let w = scale[u] * scale[v];
        adj.push((u, v, w));
        adj.push((v, u, w));
    }
    if add_self_loops {
        for (i, &s) in scale.iter().enumerate() {
            adj.push((i, i, s * s));
        }
    }
    let adjacency = CsrMatrix::from_triplets(n, n, &adj)?;

    let mut lap = Vec::with_capacity(adj.len() + n);
    for i in 0..n {
        lap.push((i, i, 1.0 - adjacency.get(i, i)));
    }
    for &(u, v, w) in &adj {
        if u != v {
            lap.push((u, v, -w));
        }
    }
    let laplacian = CsrMatrix::from_triplets(n, n, &lap)?;

    let mut inc = Vec::with_capacity(2 * graph.n_edges());
    for (e, &(u, v)) in graph.edges().iter().enumerate() {
        inc.push((e, u, scale[u]));
        inc.push((e, v, -scale[v]));
    }
    let incidence = CsrMatrix::from_triplets(graph.n_edges(), n, &inc)?;

    Ok(GraphOperators {
        adjacency: SparseOperator::symmetric(adjacency),
        laplacian: SparseOperator::symmetric(laplacian),
        incidence: SparseOperator::new(incidence),
        degrees,
        self_loops_added: add_self_loops,
        edges: graph.edges().to_vec(),
    })
}
