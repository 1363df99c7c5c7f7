//! Static undirected graphs, the first-order graph filter
//! `H = (1 - tau) I + tau D^-1 A`, and the spectral quantities that control
//! how much the filter shrinks ellipsoid volumes.
//!
//! Graphs are stored densely; the filter and spectrum are `N x N` matrices.
//! Nodes that have no incident edge receive a self-loop so that `D^-1 A` is
//! row-stochastic everywhere.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Filter coefficient used when none is configured.
pub const DEFAULT_TAU: f64 = 0.25;

/// Tolerance of the determinant bound check.
pub const SHRINKAGE_TOLERANCE: f64 = 1e-9;

/// An undirected graph with canonical `(i, j), i < j` edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphTopology {
    num_nodes: usize,
    edges: BTreeSet<(usize, usize)>,
    self_loops: BTreeSet<usize>,
}

impl GraphTopology {
    /// Builds a topology from an arbitrary list of node pairs.
    ///
    /// Duplicates and reversed pairs collapse onto one canonical edge.
    /// Self-pairs `(i, i)` are rejected; isolated nodes get a self-loop.
    pub fn new(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::invalid("graph must have at least one node"));
        }
        let mut canonical = BTreeSet::new();
        for &(i, j) in edges {
            if i >= num_nodes || j >= num_nodes {
                return Err(Error::invalid(format!(
                    "edge ({i}, {j}) references a node outside [0, {num_nodes})"
                )));
            }
            if i == j {
                return Err(Error::invalid(format!("self-pair ({i}, {i}) is not an edge")));
            }
            canonical.insert((i.min(j), i.max(j)));
        }
        let mut touched = vec![false; num_nodes];
        for &(i, j) in &canonical {
            touched[i] = true;
            touched[j] = true;
        }
        let self_loops: BTreeSet<usize> = (0..num_nodes).filter(|&i| !touched[i]).collect();
        if !self_loops.is_empty() {
            log::debug!("{} isolated node(s) given self-loops", self_loops.len());
        }
        Ok(Self {
            num_nodes,
            edges: canonical,
            self_loops,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Canonical edges, each listed once with `i < j`. Self-loops excluded.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Nodes that were isolated in the input and carry a self-loop.
    pub fn self_loops(&self) -> impl Iterator<Item = usize> + '_ {
        self.self_loops.iter().copied()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        if i == j {
            return self.self_loops.contains(&i);
        }
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    /// Degree of every node, counting a self-loop as one.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_nodes];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        for &i in &self.self_loops {
            deg[i] += 1;
        }
        deg
    }

    /// Dense 0/1 adjacency matrix, including self-loops on the diagonal.
    pub fn adjacency(&self) -> DMatrix<f64> {
        let n = self.num_nodes;
        let mut a = DMatrix::zeros(n, n);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        for &i in &self.self_loops {
            a[(i, i)] = 1.0;
        }
        a
    }

    /// The random-walk matrix `D^-1 A`; every row sums to one.
    pub fn normalized_adjacency(&self) -> DMatrix<f64> {
        let deg = self.degrees();
        let mut p = self.adjacency();
        for (i, &d) in deg.iter().enumerate() {
            let inv = 1.0 / d as f64;
            p.row_mut(i).scale_mut(inv);
        }
        p
    }

    /// `D^-1/2 A D^-1/2`, similar to `D^-1 A` and symmetric.
    pub fn symmetric_normalized_adjacency(&self) -> DMatrix<f64> {
        let inv_sqrt: Vec<f64> = self
            .degrees()
            .into_iter()
            .map(|d| 1.0 / (d as f64).sqrt())
            .collect();
        let mut s = self.adjacency();
        for i in 0..self.num_nodes {
            for j in 0..self.num_nodes {
                s[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
            }
        }
        s
    }

    /// Eigenvalues of `D^-1 A`, sorted descending.
    pub fn random_walk_spectrum(&self) -> Vec<f64> {
        let eig = SymmetricEigen::new(self.symmetric_normalized_adjacency());
        let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        values.sort_by(|a, b| b.total_cmp(a));
        values
    }
}

/// First-order graph convolutional filter `(1 - tau) I + tau D^-1 A`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFilter {
    tau: f64,
    operator: DMatrix<f64>,
}

impl GraphFilter {
    pub fn new(graph: &GraphTopology, tau: f64) -> Result<Self> {
        validate_tau(tau)?;
        let n = graph.num_nodes();
        let operator =
            DMatrix::<f64>::identity(n, n) * (1.0 - tau) + graph.normalized_adjacency() * tau;
        Ok(Self { tau, operator })
    }

    /// The identity filter (`tau = 0`) on `n` nodes.
    pub fn identity(n: usize) -> Self {
        Self {
            tau: 0.0,
            operator: DMatrix::identity(n, n),
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.operator.nrows()
    }

    pub fn operator(&self) -> &DMatrix<f64> {
        &self.operator
    }

    /// Diffuses a graph signal: returns `H * signal`.
    pub fn apply(&self, signal: &DVector<f64>) -> Result<DVector<f64>> {
        if signal.len() != self.dim() {
            return Err(Error::invalid(format!(
                "signal has length {}, filter expects {}",
                signal.len(),
                self.dim()
            )));
        }
        Ok(&self.operator * signal)
    }
}

fn validate_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) || tau.is_nan() {
        return Err(Error::invalid(format!("tau must lie in [0, 1], got {tau}")));
    }
    Ok(())
}

/// Spectrum of `D^-1 A` together with `eta = sum(1 - lambda_i)` and
/// `log det H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub tau: f64,
    pub eigenvalues: Vec<f64>,
    pub eta: f64,
    pub log_det_filter: f64,
}

/// Computes the spectral summary for a filter built on `graph`.
///
/// Fails with [`Error::FilterSingular`] when some filter eigenvalue
/// `1 - tau (1 - lambda_i)` is not positive, which can happen for
/// bipartite-like graphs (`lambda_min` near -1) and `tau >= 0.5`.
pub fn spectral_summary(graph: &GraphTopology, filter: &GraphFilter) -> Result<SpectralSummary> {
    if graph.num_nodes() != filter.dim() {
        return Err(Error::invalid(format!(
            "filter has dimension {}, graph has {} nodes",
            filter.dim(),
            graph.num_nodes()
        )));
    }
    summary_from_spectrum(graph.random_walk_spectrum(), filter.tau())
}

/// Same as [`spectral_summary`] but from a precomputed spectrum.
pub fn summary_from_spectrum(eigenvalues: Vec<f64>, tau: f64) -> Result<SpectralSummary> {
    validate_tau(tau)?;
    let mut log_det = 0.0;
    for &lambda in &eigenvalues {
        let factor = 1.0 - tau * (1.0 - lambda);
        if factor <= 0.0 {
            return Err(Error::FilterSingular {
                tau,
                eigenvalue: lambda,
                factor,
            });
        }
        log_det += factor.ln();
    }
    let eta = eigenvalues.iter().map(|l| 1.0 - l).sum();
    Ok(SpectralSummary {
        tau,
        eigenvalues,
        eta,
        log_det_filter: log_det,
    })
}

/// Outcome of checking `log det H <= -eta * tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageCheck {
    pub tau: f64,
    pub log_det_filter: f64,
    /// `-eta * tau`, the log of the volume bound.
    pub log_bound: f64,
    /// `-eta * tau - log det H`; nonnegative when the bound holds.
    pub slack: f64,
    pub passed: bool,
}

pub fn shrinkage_bound_check(summary: &SpectralSummary, tau: f64) -> ShrinkageCheck {
    let log_bound = -summary.eta * tau;
    let slack = log_bound - summary.log_det_filter;
    ShrinkageCheck {
        tau,
        log_det_filter: summary.log_det_filter,
        log_bound,
        slack,
        passed: slack >= -SHRINKAGE_TOLERANCE,
    }
}
