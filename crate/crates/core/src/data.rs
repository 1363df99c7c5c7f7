//! Dataset schema and file formats, the chronological split, and a seeded
//! generator of homophilic graph time series.
//!
//! The on-disk dataset is a single JSON document:
//!
//! ```json
//! { "name": "ring", "num_nodes": 3, "edges": [[0, 1], [1, 2]],
//!   "signals": [[0.1, 0.2, 0.3], [0.0, 0.1, 0.4]] }
//! ```
//!
//! with one row of `signals` per time step. `name`, `frequency` and
//! `metadata` are optional. A CSV alternative stores the signals as one row
//! per time step and the edges in a sidecar `source,target` file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphFilter, GraphTopology};
use crate::scoring::{homophily_gap, ResidualBuffer};

/// A static graph with one signal vector per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTimeSeriesDataset {
    pub name: String,
    pub topology: GraphTopology,
    /// `T x N`, row `t` is `x_t`.
    pub signals: DMatrix<f64>,
    pub frequency: Option<String>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl GraphTimeSeriesDataset {
    pub fn new(name: impl Into<String>, topology: GraphTopology, signals: DMatrix<f64>) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            topology,
            signals,
            frequency: None,
            metadata: BTreeMap::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn num_nodes(&self) -> usize {
        self.topology.num_nodes()
    }

    pub fn num_steps(&self) -> usize {
        self.signals.nrows()
    }

    pub fn signal(&self, t: usize) -> DVector<f64> {
        self.signals.row(t).transpose()
    }

    fn validate(&self) -> Result<()> {
        if self.signals.ncols() != self.num_nodes() {
            return Err(Error::invalid(format!(
                "signals have {} columns, graph has {} nodes",
                self.signals.ncols(),
                self.num_nodes()
            )));
        }
        if self.num_steps() < 2 {
            return Err(Error::InsufficientData {
                context: "dataset time steps",
                needed: 2,
                got: self.num_steps(),
            });
        }
        for t in 0..self.num_steps() {
            for i in 0..self.num_nodes() {
                if !self.signals[(t, i)].is_finite() {
                    return Err(Error::invalid(format!(
                        "non-finite signal value at timestep {t}, node {i}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frequency: Option<String>,
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
    /// `null` entries are accepted by the parser so that they can be
    /// reported with their position.
    signals: Vec<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, serde_json::Value>,
}

/// Graph-only view of a dataset file: `num_nodes` and `edges`.
#[derive(Debug, Deserialize)]
struct GraphFile {
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn topology_from(path: &Path, num_nodes: usize, edges: &[[usize; 2]]) -> Result<GraphTopology> {
    let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e[0], e[1])).collect();
    GraphTopology::new(num_nodes, &pairs).map_err(|e| Error::parse(path, e.to_string()))
}

/// Loads and validates a dataset JSON file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<GraphTimeSeriesDataset> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let file: DatasetFile = serde_json::from_str(&text).map_err(|e| {
        Error::parse(path, format!("line {}, column {}: {e}", e.line(), e.column()))
    })?;
    let topology = topology_from(path, file.num_nodes, &file.edges)?;
    let n = file.num_nodes;
    let t_len = file.signals.len();
    let mut signals = DMatrix::zeros(t_len, n);
    for (t, row) in file.signals.iter().enumerate() {
        if row.len() != n {
            return Err(Error::parse(
                path,
                format!("signals[{t}] has {} values, expected {n}", row.len()),
            ));
        }
        for (i, v) in row.iter().enumerate() {
            match v {
                Some(v) if v.is_finite() => signals[(t, i)] = *v,
                _ => {
                    return Err(Error::parse(
                        path,
                        format!("non-finite signal value at timestep {t}, node {i}"),
                    ))
                }
            }
        }
    }
    let ds = GraphTimeSeriesDataset {
        name: file.name.unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        }),
        topology,
        signals,
        frequency: file.frequency,
        metadata: file.metadata,
    };
    ds.validate().map_err(|e| Error::parse(path, e.to_string()))?;
    Ok(ds)
}

/// Reads only the graph of a dataset (or graph-only) JSON file.
pub fn load_graph(path: impl AsRef<Path>) -> Result<GraphTopology> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let file: GraphFile = serde_json::from_str(&text).map_err(|e| {
        Error::parse(path, format!("line {}, column {}: {e}", e.line(), e.column()))
    })?;
    topology_from(path, file.num_nodes, &file.edges)
}

pub fn dataset_to_json(ds: &GraphTimeSeriesDataset) -> Result<String> {
    let file = DatasetFile {
        name: Some(ds.name.clone()),
        frequency: ds.frequency.clone(),
        num_nodes: ds.num_nodes(),
        edges: ds.topology.edges().map(|(i, j)| [i, j]).collect(),
        signals: (0..ds.num_steps())
            .map(|t| ds.signals.row(t).iter().map(|&v| Some(v)).collect())
            .collect(),
        metadata: ds.metadata.clone(),
    };
    serde_json::to_string(&file).map_err(|e| Error::Numerical(e.to_string()))
}

pub fn save_dataset(ds: &GraphTimeSeriesDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset_to_json(ds)?).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::parse(path, e.to_string())
}

/// Loads signals from a CSV (one row per time step, optional header) and
/// edges from a `source,target` CSV (optional header).
pub fn load_csv_dataset(
    signals_path: impl AsRef<Path>,
    edges_path: impl AsRef<Path>,
    name: impl Into<String>,
) -> Result<GraphTimeSeriesDataset> {
    let signals_path = signals_path.as_ref();
    let edges_path = edges_path.as_ref();

    let rows = read_numeric_csv(signals_path, |s| s.trim().parse::<f64>().ok())?;
    let n = rows.first().map_or(0, Vec::len);
    for (t, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(Error::parse(
                signals_path,
                format!("row for timestep {t} has {} values, expected {n}", row.len()),
            ));
        }
        if let Some(i) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::parse(
                signals_path,
                format!("non-finite signal value at timestep {t}, node {i}"),
            ));
        }
    }
    let edge_rows = read_numeric_csv(edges_path, |s| s.trim().parse::<usize>().ok())?;
    let mut edges = Vec::with_capacity(edge_rows.len());
    for (k, row) in edge_rows.iter().enumerate() {
        if row.len() != 2 {
            return Err(Error::parse(edges_path, format!("edge {k} must have two columns")));
        }
        edges.push([row[0], row[1]]);
    }
    let topology = topology_from(edges_path, n, &edges)?;
    let signals = DMatrix::from_fn(rows.len(), n, |t, i| rows[t][i]);
    GraphTimeSeriesDataset::new(name, topology, signals).map_err(|e| Error::parse(signals_path, e.to_string()))
}

/// Parses every record with `parse`; a first record that fails to parse is
/// treated as a header.
fn read_numeric_csv<T>(path: &Path, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<Vec<T>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let parsed: Option<Vec<T>> = record.iter().map(&parse).collect();
        match parsed {
            Some(values) => rows.push(values),
            None if line == 0 => continue,
            None => {
                return Err(Error::parse(
                    path,
                    format!("line {}: unparsable value in {:?}", line + 1, record),
                ))
            }
        }
    }
    Ok(rows)
}

pub fn save_csv_dataset(
    ds: &GraphTimeSeriesDataset,
    signals_path: impl AsRef<Path>,
    edges_path: impl AsRef<Path>,
) -> Result<()> {
    let signals_path = signals_path.as_ref();
    let edges_path = edges_path.as_ref();
    let mut w = csv::Writer::from_path(signals_path).map_err(|e| csv_error(signals_path, e))?;
    let header: Vec<String> = (0..ds.num_nodes()).map(|i| format!("node_{i}")).collect();
    w.write_record(&header).map_err(|e| csv_error(signals_path, e))?;
    for t in 0..ds.num_steps() {
        let row: Vec<String> = ds.signals.row(t).iter().map(|v| v.to_string()).collect();
        w.write_record(&row).map_err(|e| csv_error(signals_path, e))?;
    }
    w.flush().map_err(|e| Error::io(signals_path, e))?;

    let mut w = csv::Writer::from_path(edges_path).map_err(|e| csv_error(edges_path, e))?;
    w.write_record(["source", "target"]).map_err(|e| csv_error(edges_path, e))?;
    for (i, j) in ds.topology.edges() {
        w.write_record([i.to_string(), j.to_string()])
            .map_err(|e| csv_error(edges_path, e))?;
    }
    w.flush().map_err(|e| Error::io(edges_path, e))
}

/// Chronological split at `floor(T * train_fraction)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train_fraction: 0.7 }
    }
}

/// Output of [`split`]. Targets follow `y_t = x_{t+1}`: training pairs are
/// `(x_t, x_{t+1})` with both ends inside the training rows, and the test
/// targets are exactly the test rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train_len: usize,
    pub test_len: usize,
}

impl DatasetSplit {
    pub fn train_rows(&self) -> std::ops::Range<usize> {
        0..self.train_len
    }

    pub fn test_rows(&self) -> std::ops::Range<usize> {
        self.train_len..self.train_len + self.test_len
    }

    /// Origins `t` whose one-step target `x_{t+1}` is a training row.
    pub fn train_origins(&self) -> std::ops::Range<usize> {
        0..self.train_len - 1
    }

    /// Origins whose one-step target is a test row.
    pub fn test_origins(&self) -> std::ops::Range<usize> {
        self.train_len - 1..self.train_len + self.test_len - 1
    }
}

/// Splits without shuffling. `min_train` is the fewest acceptable training
/// rows (the score window plus two in the experiment loop).
pub fn split(ds: &GraphTimeSeriesDataset, cfg: &SplitConfig, min_train: usize) -> Result<DatasetSplit> {
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {}",
            cfg.train_fraction
        )));
    }
    let t_len = ds.num_steps();
    let train_len = (t_len as f64 * cfg.train_fraction + 1e-9).floor() as usize;
    let needed = min_train.max(2);
    if train_len < needed {
        return Err(Error::InsufficientData {
            context: "training time steps after split",
            needed,
            got: train_len,
        });
    }
    if train_len >= t_len {
        return Err(Error::InsufficientData {
            context: "test time steps after split",
            needed: 1,
            got: 0,
        });
    }
    Ok(DatasetSplit {
        train_len,
        test_len: t_len - train_len,
    })
}

/// Per-node affine normalisation fitted on the training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeScaling {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn zscore_by_train(ds: &GraphTimeSeriesDataset, train_len: usize) -> Result<(GraphTimeSeriesDataset, NodeScaling)> {
    if train_len < 2 || train_len > ds.num_steps() {
        return Err(Error::invalid(format!("cannot z-score with {train_len} training rows")));
    }
    let n = ds.num_nodes();
    let mut mean = vec![0.0; n];
    let mut std = vec![0.0; n];
    for i in 0..n {
        let col = ds.signals.column(i);
        let train = col.rows(0, train_len);
        let mu = train.mean();
        let var = train.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (train_len as f64 - 1.0);
        mean[i] = mu;
        std[i] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let signals = DMatrix::from_fn(ds.num_steps(), n, |t, i| (ds.signals[(t, i)] - mean[i]) / std[i]);
    let mut out = ds.clone();
    out.signals = signals;
    Ok((out, NodeScaling { mean, std }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GraphKind {
    ErdosRenyi { p: f64 },
    Ring,
    Grid,
}

/// Parameters of the synthetic generator.
///
/// `x_t = z_t + n_t` with a latent `z_t = phi z_{t-1} + s H_s xi_t` and
/// node noise `n_t ~ N(0, sigma^2 (beta I + (1 - beta) H_s H_s^T))`, where
/// `H_s` is `smoothing_steps` applications of the first-order filter with
/// coefficient `smoothing_tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_nodes: usize,
    pub num_steps: usize,
    pub graph: GraphKind,
    pub ar_coef: f64,
    pub latent_scale: f64,
    pub noise_scale: f64,
    pub beta: f64,
    pub smoothing_tau: f64,
    pub smoothing_steps: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_nodes: 20,
            num_steps: 500,
            graph: GraphKind::Ring,
            ar_coef: 0.8,
            latent_scale: 0.5,
            noise_scale: 1.0,
            beta: 0.1,
            smoothing_tau: 0.5,
            smoothing_steps: 2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.num_nodes == 0 {
            return Err(Error::invalid("synthetic graph needs at least one node"));
        }
        if self.num_steps < 2 {
            return Err(Error::invalid("synthetic series needs at least two time steps"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.ar_coef.abs() < 1.0) {
            return Err(Error::invalid(format!(
                "AR coefficient must satisfy |phi| < 1, got {}",
                self.ar_coef
            )));
        }
        if !(self.noise_scale >= 0.0 && self.latent_scale >= 0.0) {
            return Err(Error::invalid("noise and latent scales must be nonnegative"));
        }
        if let GraphKind::ErdosRenyi { p } = self.graph {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("edge probability must lie in [0, 1], got {p}")));
            }
        }
        if !(0.0..=1.0).contains(&self.smoothing_tau) {
            return Err(Error::invalid("smoothing tau must lie in [0, 1]"));
        }
        Ok(())
    }
}

pub fn build_graph(kind: GraphKind, n: usize, rng: &mut impl Rng) -> Result<GraphTopology> {
    let mut edges = Vec::new();
    match kind {
        GraphKind::Ring => {
            if n >= 2 {
                for i in 0..n {
                    let j = (i + 1) % n;
                    if i != j {
                        edges.push((i, j));
                    }
                }
            }
        }
        GraphKind::Grid => {
            let width = (n as f64).sqrt().ceil() as usize;
            for i in 0..n {
                let (r, c) = (i / width, i % width);
                if c + 1 < width && i + 1 < n {
                    edges.push((i, i + 1));
                }
                let below = (r + 1) * width + c;
                if below < n {
                    edges.push((i, below));
                }
            }
        }
        GraphKind::ErdosRenyi { p } => {
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.random::<f64>() < p {
                        edges.push((i, j));
                    }
                }
            }
        }
    }
    GraphTopology::new(n, &edges)
}

fn standard_normal_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Generates a dataset and returns the node-noise field alongside it.
pub fn generate_synthetic_parts(spec: &SyntheticSpec) -> Result<(GraphTimeSeriesDataset, ResidualBuffer)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.num_nodes;
    let topology = build_graph(spec.graph, n, &mut rng)?;
    let mut warnings = Vec::new();
    let isolated = topology.self_loops().count();
    if isolated > 0 {
        warnings.push(format!("{isolated} isolated node(s) given self-loops"));
    }

    let step = GraphFilter::new(&topology, spec.smoothing_tau)?;
    let mut smoother = DMatrix::<f64>::identity(n, n);
    for _ in 0..spec.smoothing_steps {
        smoother = step.operator() * smoother;
    }

    let phi = spec.ar_coef;
    let mut latent = &smoother * standard_normal_vector(&mut rng, n) * (spec.latent_scale / (1.0 - phi * phi).sqrt());
    let mut signals = DMatrix::zeros(spec.num_steps, n);
    let mut noise_field = ResidualBuffer::new(n, None);
    let (iid_w, smooth_w) = (spec.beta.sqrt(), (1.0 - spec.beta).sqrt());
    for t in 0..spec.num_steps {
        if t > 0 {
            latent = latent * phi + &smoother * standard_normal_vector(&mut rng, n) * spec.latent_scale;
        }
        let g1 = standard_normal_vector(&mut rng, n);
        let g2 = standard_normal_vector(&mut rng, n);
        let noise = (g1 * iid_w + &smoother * g2 * smooth_w) * spec.noise_scale;
        signals.row_mut(t).copy_from(&(&latent + &noise).transpose());
        noise_field.push(t, noise)?;
    }

    let mut metadata = BTreeMap::new();
    metadata.insert(
        "generator".to_string(),
        serde_json::to_value(spec).map_err(|e| Error::Numerical(e.to_string()))?,
    );
    let check = match homophily_gap(&noise_field, &topology) {
        Ok(gap) => serde_json::json!({
            "connected_gap": gap.connected_gap,
            "disconnected_gap": gap.disconnected_gap,
            "homophilic": gap.is_homophilic(),
        }),
        Err(e) => serde_json::json!({ "unavailable": e.to_string() }),
    };
    metadata.insert("homophily_check".to_string(), check);
    if !warnings.is_empty() {
        for w in &warnings {
            log::warn!("{w}");
        }
        metadata.insert("warnings".to_string(), serde_json::json!(warnings));
    }

    let mut ds = GraphTimeSeriesDataset::new(format!("synthetic-{}", spec.seed), topology, signals)?;
    ds.metadata = metadata;
    Ok((ds, noise_field))
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<GraphTimeSeriesDataset> {
    generate_synthetic_parts(spec).map(|(ds, _)| ds)
}
