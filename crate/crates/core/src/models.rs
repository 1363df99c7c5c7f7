//! Point forecasters feeding the conformal wrapper: a persistence baseline,
//! a graph-filtered linear autoregression, a bootstrap ensemble of either,
//! and ingestion of predictions computed by an external model.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::GraphTimeSeriesDataset;
use crate::error::{Error, Result};
use crate::graph::GraphTopology;
use crate::scoring::ResidualBuffer;

/// Resample draws attempted before accepting timesteps without an
/// out-of-bag member.
pub const MAX_RESAMPLE_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    External,
    Persistence,
    #[default]
    GraphAr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorSpec {
    pub kind: PredictorKind,
    /// Lag order `p`.
    pub lags: usize,
    /// 0 disables the `P x` terms, 1 enables them.
    pub diffusion_steps: usize,
    /// Ridge penalty relative to the mean diagonal of the Gram matrix.
    pub ridge: f64,
    /// Forecast horizon `r`.
    pub horizon: usize,
}

impl Default for PredictorSpec {
    fn default() -> Self {
        Self {
            kind: PredictorKind::GraphAr,
            lags: 1,
            diffusion_steps: 1,
            ridge: 1e-8,
            horizon: 1,
        }
    }
}

impl PredictorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lags == 0 {
            return Err(Error::invalid("lag order must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if self.diffusion_steps > 1 {
            return Err(Error::invalid(format!(
                "diffusion steps must be 0 or 1, got {}",
                self.diffusion_steps
            )));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::invalid(format!("ridge must be nonnegative, got {}", self.ridge)));
        }
        Ok(())
    }
}

/// `y_{t+1} = sum_l (a_l I + b_l P) x_{t-l+1}` with `P = D^-1 A` and
/// coefficients shared by all nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphAr {
    self_coefs: Vec<f64>,
    graph_coefs: Vec<f64>,
    shift: Arc<DMatrix<f64>>,
}

impl GraphAr {
    pub fn from_coefficients(graph: &GraphTopology, self_coefs: Vec<f64>, graph_coefs: Vec<f64>) -> Result<Self> {
        Self::with_shift(Arc::new(graph.normalized_adjacency()), self_coefs, graph_coefs)
    }

    fn with_shift(shift: Arc<DMatrix<f64>>, self_coefs: Vec<f64>, graph_coefs: Vec<f64>) -> Result<Self> {
        if self_coefs.is_empty() || self_coefs.len() != graph_coefs.len() {
            return Err(Error::invalid("need the same positive number of self and graph coefficients"));
        }
        Ok(Self {
            self_coefs,
            graph_coefs,
            shift,
        })
    }

    /// `y_{t+1} = x_t`.
    pub fn persistence(graph: &GraphTopology) -> Self {
        Self::persistence_with(Arc::new(graph.normalized_adjacency()))
    }

    fn persistence_with(shift: Arc<DMatrix<f64>>) -> Self {
        Self {
            self_coefs: vec![1.0],
            graph_coefs: vec![0.0],
            shift,
        }
    }

    pub fn lags(&self) -> usize {
        self.self_coefs.len()
    }

    pub fn self_coefs(&self) -> &[f64] {
        &self.self_coefs
    }

    pub fn graph_coefs(&self) -> &[f64] {
        &self.graph_coefs
    }

    fn step(&self, recent: &[DVector<f64>]) -> DVector<f64> {
        let n = recent[0].len();
        let mut own = DVector::zeros(n);
        let mut diffused = DVector::zeros(n);
        for (l, x) in recent.iter().rev().take(self.lags()).enumerate() {
            own.axpy(self.self_coefs[l], x, 1.0);
            if self.graph_coefs[l] != 0.0 {
                diffused.axpy(self.graph_coefs[l], x, 1.0);
            }
        }
        own + &*self.shift * diffused
    }

    /// Iterated rollout: `recent` is oldest-first and holds at least `p`
    /// signals; returns forecasts for steps `1..=horizon`.
    pub fn predict(&self, recent: &[DVector<f64>], horizon: usize) -> Result<Vec<DVector<f64>>> {
        if recent.len() < self.lags() {
            return Err(Error::InsufficientData {
                context: "autoregressive history",
                needed: self.lags(),
                got: recent.len(),
            });
        }
        if let Some(bad) = recent.iter().find(|x| x.len() != self.shift.nrows()) {
            return Err(Error::invalid(format!(
                "signal has dimension {}, model expects {}",
                bad.len(),
                self.shift.nrows()
            )));
        }
        let mut window: Vec<DVector<f64>> = recent[recent.len() - self.lags()..].to_vec();
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let next = self.step(&window);
            window.remove(0);
            window.push(next.clone());
            out.push(next);
        }
        Ok(out)
    }

    /// Forecast from origin `t` using rows `..=t` of `signals`.
    pub fn predict_from(&self, signals: &DMatrix<f64>, origin: usize, horizon: usize) -> Result<Vec<DVector<f64>>> {
        let recent = history(signals, origin, self.lags())?;
        self.predict(&recent, horizon)
    }
}

fn history(signals: &DMatrix<f64>, origin: usize, lags: usize) -> Result<Vec<DVector<f64>>> {
    if origin >= signals.nrows() {
        return Err(Error::invalid(format!(
            "origin {origin} beyond {} available rows",
            signals.nrows()
        )));
    }
    if origin + 1 < lags {
        return Err(Error::InsufficientData {
            context: "autoregressive history",
            needed: lags,
            got: origin + 1,
        });
    }
    Ok((origin + 1 - lags..=origin)
        .map(|t| signals.row(t).transpose())
        .collect())
}

/// Per-origin normal-equation contributions, reused across bootstrap fits.
struct ArDesign {
    origins: Vec<usize>,
    grams: Vec<DMatrix<f64>>,
    rhs: Vec<DVector<f64>>,
    width: usize,
}

impl ArDesign {
    fn new(signals: &DMatrix<f64>, shift: &DMatrix<f64>, lags: usize, diffusion: bool) -> Result<Self> {
        let t_len = signals.nrows();
        if t_len <= lags {
            return Err(Error::InsufficientData {
                context: "graph AR training rows",
                needed: lags + 1,
                got: t_len,
            });
        }
        let diffused = signals * shift.transpose();
        let width = if diffusion { 2 * lags } else { lags };
        let n = signals.ncols();
        let origins: Vec<usize> = (lags - 1..t_len - 1).collect();
        let mut grams = Vec::with_capacity(origins.len());
        let mut rhs = Vec::with_capacity(origins.len());
        let mut f = DVector::zeros(width);
        for &t in &origins {
            let mut g = DMatrix::zeros(width, width);
            let mut r = DVector::zeros(width);
            for i in 0..n {
                for l in 0..lags {
                    f[l] = signals[(t - l, i)];
                    if diffusion {
                        f[lags + l] = diffused[(t - l, i)];
                    }
                }
                g.ger(1.0, &f, &f, 1.0);
                r.axpy(signals[(t + 1, i)], &f, 1.0);
            }
            grams.push(g);
            rhs.push(r);
        }
        Ok(Self {
            origins,
            grams,
            rhs,
            width,
        })
    }

    /// Weighted ridge least squares; `weights[k]` multiplies origin `k`.
    fn solve(&self, weights: &[f64], ridge: f64) -> Result<DVector<f64>> {
        let mut g = DMatrix::zeros(self.width, self.width);
        let mut r = DVector::zeros(self.width);
        for ((gk, rk), &w) in self.grams.iter().zip(&self.rhs).zip(weights) {
            if w != 0.0 {
                g += gk * w;
                r += rk * w;
            }
        }
        let scale = (g.trace() / self.width as f64).max(f64::MIN_POSITIVE);
        let attempt = |penalty: f64| {
            let mut reg = g.clone();
            for d in 0..self.width {
                reg[(d, d)] += penalty * scale;
            }
            reg.cholesky().map(|c| c.solve(&r))
        };
        attempt(ridge)
            .or_else(|| attempt((ridge * 1e3).max(1e-10)))
            .ok_or_else(|| Error::Numerical("graph AR normal equations are singular".into()))
    }
}

fn coefficients_from(solution: &DVector<f64>, lags: usize, diffusion: bool) -> (Vec<f64>, Vec<f64>) {
    let own = solution.rows(0, lags).iter().copied().collect();
    let graph = if diffusion {
        solution.rows(lags, lags).iter().copied().collect()
    } else {
        vec![0.0; lags]
    };
    (own, graph)
}

/// Least-squares fit of the graph AR on every available origin.
pub fn fit_graph_ar(train: &DMatrix<f64>, graph: &GraphTopology, spec: &PredictorSpec) -> Result<GraphAr> {
    spec.validate()?;
    let shift = Arc::new(graph.normalized_adjacency());
    check_width(train, &shift)?;
    let diffusion = spec.diffusion_steps == 1;
    let design = ArDesign::new(train, &shift, spec.lags, diffusion)?;
    let weights = vec![1.0; design.origins.len()];
    let sol = design.solve(&weights, spec.ridge)?;
    let (own, g) = coefficients_from(&sol, spec.lags, diffusion);
    GraphAr::with_shift(shift, own, g)
}

fn check_width(signals: &DMatrix<f64>, shift: &DMatrix<f64>) -> Result<()> {
    if signals.ncols() != shift.nrows() {
        return Err(Error::invalid(format!(
            "signals have {} columns, graph has {} nodes",
            signals.ncols(),
            shift.nrows()
        )));
    }
    Ok(())
}

/// Bootstrap ensemble over training origins with its out-of-bag map.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapEnsemble {
    members: Vec<GraphAr>,
    /// Training origins `t` (targets `x_{t+1}` inside the training rows).
    origins: Vec<usize>,
    /// `oob[k]` lists the members that never drew `origins[k]`.
    oob: Vec<Vec<usize>>,
}

impl BootstrapEnsemble {
    pub fn num_models(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[GraphAr] {
        &self.members
    }

    pub fn lags(&self) -> usize {
        self.members[0].lags()
    }

    pub fn origins(&self) -> &[usize] {
        &self.origins
    }

    /// Out-of-bag members for a training origin, if it is one.
    pub fn oob_members(&self, origin: usize) -> Option<&[usize]> {
        let k = self.origins.binary_search(&origin).ok()?;
        Some(&self.oob[k])
    }

    /// Mean of the member rollouts from origin `t`.
    pub fn predict_from(&self, signals: &DMatrix<f64>, origin: usize, horizon: usize) -> Result<Vec<DVector<f64>>> {
        let all: Vec<usize> = (0..self.members.len()).collect();
        self.predict_subset(signals, origin, horizon, &all)
    }

    fn predict_subset(
        &self,
        signals: &DMatrix<f64>,
        origin: usize,
        horizon: usize,
        subset: &[usize],
    ) -> Result<Vec<DVector<f64>>> {
        let recent = history(signals, origin, self.lags())?;
        let n = signals.ncols();
        let mut sum = vec![DVector::zeros(n); horizon];
        for &m in subset {
            for (acc, p) in sum.iter_mut().zip(self.members[m].predict(&recent, horizon)?) {
                *acc += p;
            }
        }
        let k = subset.len() as f64;
        Ok(sum.into_iter().map(|s| s / k).collect())
    }
}

/// Fits `num_models` members on bootstrap resamples of the training origins.
///
/// Resamples are redrawn (up to [`MAX_RESAMPLE_ATTEMPTS`] times) until every
/// origin is out of bag for at least one member.
pub fn fit_ensemble(
    train: &DMatrix<f64>,
    graph: &GraphTopology,
    spec: &PredictorSpec,
    num_models: usize,
    seed: u64,
) -> Result<BootstrapEnsemble> {
    spec.validate()?;
    if num_models == 0 {
        return Err(Error::invalid("ensemble needs at least one member"));
    }
    if spec.kind == PredictorKind::External {
        return Err(Error::invalid("external predictions cannot be refit as an ensemble"));
    }
    let shift = Arc::new(graph.normalized_adjacency());
    check_width(train, &shift)?;
    let diffusion = spec.diffusion_steps == 1;
    let design = ArDesign::new(train, &shift, spec.lags, diffusion)?;
    let count = design.origins.len();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<Vec<u32>> = Vec::new();
    for attempt in 0..MAX_RESAMPLE_ATTEMPTS {
        draws = (0..num_models)
            .map(|_| {
                let mut counts = vec![0u32; count];
                for _ in 0..count {
                    counts[rng.random_range(0..count)] += 1;
                }
                counts
            })
            .collect();
        let covered = (0..count).all(|k| draws.iter().any(|c| c[k] == 0));
        if covered {
            break;
        }
        if attempt + 1 == MAX_RESAMPLE_ATTEMPTS {
            log::debug!("some training origins have no out-of-bag member");
        }
    }

    let members = draws
        .iter()
        .enumerate()
        .map(|(m, counts)| {
            let fit = || -> Result<GraphAr> {
                match spec.kind {
                    PredictorKind::Persistence => Ok(GraphAr::persistence_with(shift.clone())),
                    _ => {
                        let weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
                        let sol = design.solve(&weights, spec.ridge)?;
                        let (own, g) = coefficients_from(&sol, spec.lags, diffusion);
                        GraphAr::with_shift(shift.clone(), own, g)
                    }
                }
            };
            fit().map_err(|e| Error::Ensemble {
                member: m,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let oob = (0..count)
        .map(|k| (0..num_models).filter(|&m| draws[m][k] == 0).collect())
        .collect();
    Ok(BootstrapEnsemble {
        members,
        origins: design.origins,
        oob,
    })
}

/// Training residuals `x_{t+h} - mean(OOB member forecasts)` for horizon
/// `h`; origins without out-of-bag members are skipped. Times in the
/// returned buffer are target times `t + h`.
pub fn ensemble_train_residuals(
    ens: &BootstrapEnsemble,
    train: &DMatrix<f64>,
    horizon: usize,
) -> Result<ResidualBuffer> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let mut buf = ResidualBuffer::new(train.ncols(), None);
    let mut skipped = 0usize;
    for (k, &t) in ens.origins.iter().enumerate() {
        let target = t + horizon;
        if target >= train.nrows() {
            break;
        }
        let oob = &ens.oob[k];
        if oob.is_empty() {
            skipped += 1;
            continue;
        }
        let pred = ens.predict_subset(train, t, horizon, oob)?;
        let residual = train.row(target).transpose() - &pred[horizon - 1];
        buf.push(target, residual)?;
    }
    if skipped > 0 {
        log::info!("{skipped} training origin(s) without out-of-bag members excluded");
    }
    Ok(buf)
}

/// Multi-step forecasts per origin, as read from or written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrace {
    pub horizon: usize,
    pub timestamps: Vec<usize>,
    /// `predictions[k][j]` forecasts `x_{timestamps[k] + j + 1}`.
    pub predictions: Vec<Vec<DVector<f64>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceFile {
    horizon: usize,
    timestamps: Vec<usize>,
    predictions: Vec<Vec<Vec<f64>>>,
}

impl PredictionTrace {
    /// Forecasts made at `origin`, if present.
    pub fn at(&self, origin: usize) -> Option<&[DVector<f64>]> {
        let first = *self.timestamps.first()?;
        let k = origin.checked_sub(first)?;
        self.predictions.get(k).map(Vec::as_slice)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TraceFile {
            horizon: self.horizon,
            timestamps: self.timestamps.clone(),
            predictions: self
                .predictions
                .iter()
                .map(|steps| steps.iter().map(|v| v.iter().copied().collect()).collect())
                .collect(),
        };
        serde_json::to_string(&file).map_err(|e| Error::Numerical(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Checks the trace against a dataset: node count, horizon entries,
    /// consecutive timestamps within range, finite values.
    pub fn validate_against(&self, ds: &GraphTimeSeriesDataset) -> Result<()> {
        let n = ds.num_nodes();
        if self.horizon == 0 {
            return Err(Error::Ingestion("horizon must be at least 1".into()));
        }
        if self.timestamps.len() != self.predictions.len() {
            return Err(Error::Ingestion(format!(
                "{} timestamps but {} prediction records",
                self.timestamps.len(),
                self.predictions.len()
            )));
        }
        let Some(&first) = self.timestamps.first() else {
            return Err(Error::Ingestion("trace has no records".into()));
        };
        for (k, (&t, steps)) in self.timestamps.iter().zip(&self.predictions).enumerate() {
            let expected = first + k;
            if t != expected {
                return Err(Error::Ingestion(format!(
                    "record {k}: missing timestamp {expected} (found {t})"
                )));
            }
            if t >= ds.num_steps() {
                return Err(Error::Ingestion(format!(
                    "record {k}: timestamp {t} beyond dataset length {}",
                    ds.num_steps()
                )));
            }
            if steps.len() != self.horizon {
                return Err(Error::Ingestion(format!(
                    "record {k} (timestamp {t}): {} horizon entries, expected {}",
                    steps.len(),
                    self.horizon
                )));
            }
            for (j, v) in steps.iter().enumerate() {
                if v.len() != n {
                    return Err(Error::Ingestion(format!(
                        "record {k} (timestamp {t}), step {}: {} values, dataset has {n} nodes",
                        j + 1,
                        v.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Ingestion(format!(
                        "record {k} (timestamp {t}), step {}: non-finite value",
                        j + 1
                    )));
                }
            }
        }
        let last = *self.timestamps.last().unwrap_or(&first);
        if last + 2 < ds.num_steps() {
            return Err(Error::Ingestion(format!(
                "missing timestamp {}: trace ends before the last forecast origin {}",
                last + 1,
                ds.num_steps() - 2
            )));
        }
        Ok(())
    }
}

/// Parses a predictions file without checking it against a dataset.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<PredictionTrace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: TraceFile = serde_json::from_str(&text).map_err(|e| {
        Error::parse(path, format!("line {}, column {}: {e}", e.line(), e.column()))
    })?;
    Ok(PredictionTrace {
        horizon: file.horizon,
        timestamps: file.timestamps,
        predictions: file
            .predictions
            .into_iter()
            .map(|steps| steps.into_iter().map(DVector::from_vec).collect())
            .collect(),
    })
}

/// Reads a predictions file and validates it against `ds`.
pub fn load_external_predictions(path: impl AsRef<Path>, ds: &GraphTimeSeriesDataset) -> Result<PredictionTrace> {
    let trace = read_predictions(path)?;
    trace.validate_against(ds)?;
    Ok(trace)
}

/// Runs an ensemble over every origin of `signals` that has enough history.
pub fn trace_from_ensemble(ens: &BootstrapEnsemble, signals: &DMatrix<f64>, horizon: usize) -> Result<PredictionTrace> {
    let first = ens.lags() - 1;
    let last = signals.nrows().saturating_sub(2);
    let timestamps: Vec<usize> = (first..=last).collect();
    let predictions = timestamps
        .iter()
        .map(|&t| ens.predict_from(signals, t, horizon))
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionTrace {
        horizon,
        timestamps,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, GraphKind, SyntheticSpec};
    use rand_distr::StandardNormal;

    fn ring(n: usize) -> GraphTopology {
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        GraphTopology::new(n, &edges).unwrap()
    }

    fn simulate(g: &GraphTopology, a: f64, b: f64, t_len: usize, noise: f64, seed: u64) -> DMatrix<f64> {
        let p = g.normalized_adjacency();
        let n = g.num_nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut out = DMatrix::zeros(t_len, n);
        for t in 0..t_len {
            out.row_mut(t).copy_from(&x.transpose());
            let eps = DVector::from_fn(n, |_, _| noise * rng.sample::<f64, _>(StandardNormal));
            x = &x * a + &p * &x * b + eps;
        }
        out
    }

    #[test]
    fn constant_series_is_a_fixed_point() {
        let g = ring(5);
        let train = DMatrix::from_element(30, 5, 3.0);
        let m = fit_graph_ar(&train, &g, &PredictorSpec::default()).unwrap();
        let pred = m.predict_from(&train, 29, 1).unwrap();
        assert!(pred[0].iter().all(|v| (v - 3.0).abs() < 1e-6));
    }

    #[test]
    fn recovers_noiseless_coefficients() {
        let g = ring(8);
        let data = simulate(&g, 0.6, 0.3, 40, 0.0, 1);
        let m = fit_graph_ar(&data, &g, &PredictorSpec::default()).unwrap();
        assert!((m.self_coefs()[0] - 0.6).abs() < 1e-6);
        assert!((m.graph_coefs()[0] - 0.3).abs() < 1e-6);

        let future = simulate(&g, 0.6, 0.3, 80, 0.0, 1);
        let pred = m.predict_from(&future, 39, 5).unwrap();
        for (j, p) in pred.iter().enumerate() {
            let truth = future.row(40 + j).transpose();
            assert!((p - truth).amax() < 1e-5);
        }
    }

    #[test]
    fn persistence_repeats_last_signal() {
        let g = ring(4);
        let m = GraphAr::from_coefficients(&g, vec![1.0], vec![0.0]).unwrap();
        let x = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
        let pred = m.predict(std::slice::from_ref(&x), 3).unwrap();
        assert!(pred.iter().all(|p| p == &x));
        assert_eq!(GraphAr::persistence(&g), m);
    }

    #[test]
    fn rollout_prefix_consistency() {
        let g = ring(6);
        let data = simulate(&g, 0.5, 0.4, 60, 0.1, 2);
        let spec = PredictorSpec {
            lags: 2,
            ..PredictorSpec::default()
        };
        let m = fit_graph_ar(&data, &g, &spec).unwrap();
        let one = m.predict_from(&data, 50, 1).unwrap();
        let three = m.predict_from(&data, 50, 3).unwrap();
        assert_eq!(one[0], three[0]);
        assert!(m.predict_from(&data, 0, 1).is_err());
    }

    #[test]
    fn too_short_training_set() {
        let g = ring(3);
        let data = DMatrix::zeros(2, 3);
        let spec = PredictorSpec {
            lags: 2,
            ..PredictorSpec::default()
        };
        assert!(matches!(
            fit_graph_ar(&data, &g, &spec),
            Err(Error::InsufficientData { .. })
        ));
    }

    /// Pooled scalar AR(p) fitted by solving the normal equations directly.
    fn pooled_scalar_ar(data: &DMatrix<f64>, p: usize) -> Vec<f64> {
        let mut g = DMatrix::<f64>::zeros(p, p);
        let mut r = DVector::<f64>::zeros(p);
        for t in p - 1..data.nrows() - 1 {
            for i in 0..data.ncols() {
                let f = DVector::from_fn(p, |l, _| data[(t - l, i)]);
                g += &f * f.transpose();
                r += &f * data[(t + 1, i)];
            }
        }
        g.lu().solve(&r).unwrap().iter().copied().collect()
    }

    #[test]
    fn disabled_graph_term_is_scalar_ar() {
        let g = ring(7);
        let data = simulate(&g, 0.5, 0.3, 120, 0.5, 3);
        let spec = PredictorSpec {
            lags: 3,
            diffusion_steps: 0,
            ridge: 0.0,
            ..PredictorSpec::default()
        };
        let m = fit_graph_ar(&data, &g, &spec).unwrap();
        assert!(m.graph_coefs().iter().all(|&b| b == 0.0));
        for (a, o) in m.self_coefs().iter().zip(pooled_scalar_ar(&data, 3)) {
            assert!((a - o).abs() < 1e-9, "{a} vs {o}");
        }
    }

    #[test]
    fn ensemble_has_oob_members_everywhere() {
        let g = ring(5);
        let data = simulate(&g, 0.5, 0.3, 301, 0.5, 4);
        let ens = fit_ensemble(&data, &g, &PredictorSpec::default(), 15, 9).unwrap();
        assert_eq!(ens.origins().len(), 300);
        for &t in ens.origins() {
            assert!(!ens.oob_members(t).unwrap().is_empty());
        }
    }

    #[test]
    fn single_member_ensemble() {
        let g = ring(5);
        let data = simulate(&g, 0.5, 0.3, 50, 0.5, 5);
        let ens = fit_ensemble(&data, &g, &PredictorSpec::default(), 1, 1).unwrap();
        let buf = ensemble_train_residuals(&ens, &data, 1).unwrap();
        let oob_count = ens
            .origins()
            .iter()
            .filter(|&&t| !ens.oob_members(t).unwrap().is_empty())
            .count();
        assert_eq!(buf.len(), oob_count);
        assert!(oob_count < ens.origins().len());
    }

    #[test]
    fn ensemble_is_deterministic() {
        let g = ring(5);
        let data = simulate(&g, 0.5, 0.3, 80, 0.5, 6);
        let a = fit_ensemble(&data, &g, &PredictorSpec::default(), 15, 21).unwrap();
        let b = fit_ensemble(&data, &g, &PredictorSpec::default(), 15, 21).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ensemble_mean_is_member_average() {
        let g = ring(5);
        let data = simulate(&g, 0.5, 0.3, 80, 0.5, 7);
        let ens = fit_ensemble(&data, &g, &PredictorSpec::default(), 4, 2).unwrap();
        let mean = ens.predict_from(&data, 70, 2).unwrap();
        for (j, got) in mean.iter().enumerate() {
            let mut manual = DVector::zeros(5);
            for m in ens.members() {
                manual += &m.predict_from(&data, 70, 2).unwrap()[j];
            }
            manual /= 4.0;
            assert!((got - manual).amax() <= 1e-12);
        }
    }

    #[test]
    fn perfect_members_have_zero_residuals() {
        let g = ring(5);
        let data = simulate(&g, 1.0, 0.0, 40, 0.0, 8);
        let spec = PredictorSpec {
            kind: PredictorKind::Persistence,
            ..PredictorSpec::default()
        };
        let ens = fit_ensemble(&data, &g, &spec, 3, 1).unwrap();
        let buf = ensemble_train_residuals(&ens, &data, 1).unwrap();
        assert!(buf.residuals().all(|r| r.amax() <= 1e-12));
    }

    #[test]
    fn oob_residuals_are_not_optimistic() {
        let ds = generate_synthetic(&SyntheticSpec {
            num_nodes: 10,
            num_steps: 120,
            graph: GraphKind::Ring,
            noise_scale: 2.0,
            seed: 12,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let spec = PredictorSpec {
            lags: 4,
            ..PredictorSpec::default()
        };
        let ens = fit_ensemble(&ds.signals, &ds.topology, &spec, 15, 3).unwrap();
        let oob = ensemble_train_residuals(&ens, &ds.signals, 1).unwrap();
        let full = fit_graph_ar(&ds.signals, &ds.topology, &spec).unwrap();
        let variance = |it: &mut dyn Iterator<Item = DVector<f64>>| {
            let v: Vec<f64> = it.flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        let oob_var = variance(&mut oob.residuals().cloned());
        let mut in_sample = oob.times().map(|target| {
            let p = full.predict_from(&ds.signals, target - 1, 1).unwrap();
            ds.signal(target) - &p[0]
        });
        let in_var = variance(&mut in_sample);
        assert!(oob_var >= in_var, "{oob_var} < {in_var}");
    }

    #[test]
    fn trace_round_trip_and_validation() {
        let ds = generate_synthetic(&SyntheticSpec {
            num_nodes: 4,
            num_steps: 30,
            seed: 2,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let ens = fit_ensemble(&ds.signals, &ds.topology, &PredictorSpec::default(), 3, 1).unwrap();
        let trace = trace_from_ensemble(&ens, &ds.signals, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.json");
        trace.save(&p).unwrap();
        let back = load_external_predictions(&p, &ds).unwrap();
        assert_eq!(back.timestamps, trace.timestamps);
        for (a, b) in back.predictions.iter().flatten().zip(trace.predictions.iter().flatten()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }

        let mut gap = trace.clone();
        gap.timestamps.remove(5);
        gap.predictions.remove(5);
        let msg = gap.validate_against(&ds).unwrap_err().to_string();
        assert!(msg.contains("missing timestamp 5"), "{msg}");

        let mut narrow = trace.clone();
        narrow.predictions[3][1] = DVector::zeros(3);
        let msg = narrow.validate_against(&ds).unwrap_err().to_string();
        assert!(msg.contains("dataset has 4 nodes"), "{msg}");
    }
}
