//! Residuals, their (optionally graph-filtered) mean and covariance, and
//! the squared-Mahalanobis nonconformity score.
//!
//! Scores are always evaluated through a Cholesky solve; the covariance is
//! never inverted explicitly.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphFilter, GraphTopology};

/// Maximum number of tenfold ridge escalations before giving up.
pub const MAX_RIDGE_ESCALATIONS: usize = 8;

/// Seed used to sample disconnected pairs in [`homophily_gap`].
pub const HOMOPHILY_SEED: u64 = 0x0005_eed0_f9a9;

/// Whether residuals are graph-filtered before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualMode {
    GraphAware,
    GraphAgnostic,
}

impl ResidualMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ResidualMode::GraphAware => "graph-aware",
            ResidualMode::GraphAgnostic => "graph-agnostic",
        }
    }
}

/// How the scores of residuals that were used to fit the model are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreConvention {
    /// Each fitted residual is scored against the model refit without it,
    /// making history scores exchangeable with out-of-sample test scores.
    #[default]
    LeaveOneOut,
    /// Score every residual against the model fitted on all of them.
    InSample,
}

/// Time-ordered residual vectors of common dimension, optionally capped to
/// the most recent `capacity` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBuffer {
    dim: usize,
    capacity: Option<usize>,
    times: VecDeque<usize>,
    residuals: VecDeque<DVector<f64>>,
}

impl ResidualBuffer {
    pub fn new(dim: usize, capacity: Option<usize>) -> Self {
        Self {
            dim,
            capacity,
            times: VecDeque::new(),
            residuals: VecDeque::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    /// Appends a residual observed at `time`; evicts the oldest entry when
    /// the buffer is at capacity.
    pub fn push(&mut self, time: usize, residual: DVector<f64>) -> Result<()> {
        if residual.len() != self.dim {
            return Err(Error::invalid(format!(
                "residual has dimension {}, buffer holds {}",
                residual.len(),
                self.dim
            )));
        }
        if let Some(&last) = self.times.back() {
            if time <= last {
                return Err(Error::invalid(format!(
                    "residual time {time} does not follow {last}"
                )));
            }
        }
        self.times.push_back(time);
        self.residuals.push_back(residual);
        if let Some(cap) = self.capacity {
            while self.residuals.len() > cap {
                self.times.pop_front();
                self.residuals.pop_front();
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &DVector<f64>)> {
        self.times.iter().copied().zip(self.residuals.iter())
    }

    pub fn residuals(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.residuals.iter()
    }

    pub fn times(&self) -> impl Iterator<Item = usize> + '_ {
        self.times.iter().copied()
    }

    pub fn get(&self, idx: usize) -> Option<&DVector<f64>> {
        self.residuals.get(idx)
    }

    /// Residuals as an `m x N` matrix, one row per time step.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.len(), self.dim);
        for (r, v) in self.residuals.iter().enumerate() {
            m.row_mut(r).copy_from(&v.transpose());
        }
        m
    }
}

/// `targets - predictions`, row by row. Row `t` of each matrix is time `t`.
pub fn compute_residuals(targets: &DMatrix<f64>, predictions: &DMatrix<f64>) -> Result<ResidualBuffer> {
    if targets.shape() != predictions.shape() {
        return Err(Error::invalid(format!(
            "targets {:?} and predictions {:?} differ in shape",
            targets.shape(),
            predictions.shape()
        )));
    }
    if targets.nrows() == 0 {
        return Err(Error::InsufficientData {
            context: "residuals",
            needed: 1,
            got: 0,
        });
    }
    let mut buf = ResidualBuffer::new(targets.ncols(), None);
    for t in 0..targets.nrows() {
        let diff = (targets.row(t) - predictions.row(t)).transpose();
        buf.push(t, diff)?;
    }
    Ok(buf)
}

/// Replaces every residual `eps_t` with `H eps_t`.
pub fn filter_residuals(buf: &ResidualBuffer, filter: &GraphFilter) -> Result<ResidualBuffer> {
    if buf.dim() != filter.dim() {
        return Err(Error::invalid(format!(
            "residual dimension {} does not match filter dimension {}",
            buf.dim(),
            filter.dim()
        )));
    }
    let mut out = ResidualBuffer::new(buf.dim(), buf.capacity());
    for (t, r) in buf.iter() {
        out.push(t, filter.apply(r)?)?;
    }
    Ok(out)
}

/// Mean and ridge-regularised covariance of a residual sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredResidualModel {
    mode: ResidualMode,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    cholesky: DMatrix<f64>,
    log_det_cov: f64,
    ridge: f64,
    sample_count: usize,
}

/// The squared Mahalanobis distance of a residual from the fitted model.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct NonconformityScore(f64);

impl NonconformityScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl FilteredResidualModel {
    /// Builds a model from explicit moments. The covariance must be
    /// symmetric positive definite; no ridge is added.
    pub fn from_moments(
        mode: ResidualMode,
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
    ) -> Result<Self> {
        let n = mean.len();
        if covariance.shape() != (n, n) {
            return Err(Error::invalid(format!(
                "covariance shape {:?} does not match mean length {n}",
                covariance.shape()
            )));
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
        let l = chol.unpack();
        let log_det_cov = log_det_from_cholesky(&l);
        Ok(Self {
            mode,
            mean,
            covariance,
            cholesky: l,
            log_det_cov,
            ridge: 0.0,
            sample_count: 0,
        })
    }

    pub fn mode(&self) -> ResidualMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower-triangular `L` with `L L^T = covariance`.
    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.cholesky
    }

    pub fn log_det_cov(&self) -> f64 {
        self.log_det_cov
    }

    /// Ridge actually added to the diagonal.
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// `(e - mean)^T Sigma^-1 (e - mean)`.
    pub fn score(&self, e: &DVector<f64>) -> Result<NonconformityScore> {
        if e.len() != self.dim() {
            return Err(Error::invalid(format!(
                "residual has dimension {}, model expects {}",
                e.len(),
                self.dim()
            )));
        }
        let centered = e - &self.mean;
        Ok(NonconformityScore(mahalanobis_sq(&self.cholesky, &centered)?))
    }

    /// Scores members of the fitting sample against the model refit without
    /// them, using a rank-one downdate instead of `m` refits.
    ///
    /// With `m` samples, `u = e - mean` and `d = u^T Sigma^-1 u`, the
    /// left-out score is `c^2 / a * d / (1 - b d)` where `c = m / (m - 1)`,
    /// `a = (m - 1) / (m - 2)` and `b = m / (m - 1)^2`. The left-out model
    /// carries ridge `a * gamma`, the same scaling its sample covariance gets.
    pub fn leave_one_out_score(&self, e: &DVector<f64>) -> Result<NonconformityScore> {
        let m = self.sample_count;
        if m < 3 {
            return Err(Error::InsufficientData {
                context: "leave-one-out scores",
                needed: 3,
                got: m,
            });
        }
        let d = self.score(e)?.value();
        let mf = m as f64;
        let c = mf / (mf - 1.0);
        let a = (mf - 1.0) / (mf - 2.0);
        let b = mf / ((mf - 1.0) * (mf - 1.0));
        let denom = 1.0 - b * d;
        if denom <= 0.0 {
            return Err(Error::Numerical(format!(
                "leave-one-out downdate is singular (b*d = {})",
                b * d
            )));
        }
        Ok(NonconformityScore(c * c / a * d / denom))
    }
}

fn log_det_from_cholesky(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// `x^T (L L^T)^-1 x` via a forward substitution.
pub(crate) fn mahalanobis_sq(l: &DMatrix<f64>, x: &DVector<f64>) -> Result<f64> {
    let z = l
        .solve_lower_triangular(x)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    Ok(z.norm_squared())
}

/// Fits sample mean and covariance (denominator `m - 1`) plus an adaptive
/// ridge `gamma I`, `gamma = max(1e-8, 1e-6 trace / N)`, escalated tenfold
/// until the Cholesky factorisation succeeds.
pub fn fit_model(buf: &ResidualBuffer, mode: ResidualMode) -> Result<FilteredResidualModel> {
    let m = buf.len();
    if m < 2 {
        return Err(Error::InsufficientData {
            context: "residual covariance",
            needed: 2,
            got: m,
        });
    }
    let n = buf.dim();
    let data = buf.to_matrix();
    let mean: DVector<f64> = data.row_sum().transpose() / m as f64;
    let mut centered = data;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut covariance = centered.tr_mul(&centered) / (m as f64 - 1.0);
    // symmetrise against round-off in the product
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (covariance[(i, j)] + covariance[(j, i)]);
            covariance[(i, j)] = avg;
            covariance[(j, i)] = avg;
        }
    }

    let trace = covariance.trace();
    let mut ridge = (1e-6 * trace / n as f64).max(1e-8);
    for _ in 0..=MAX_RIDGE_ESCALATIONS {
        let mut regularised = covariance.clone();
        for i in 0..n {
            regularised[(i, i)] += ridge;
        }
        if let Some(chol) = regularised.clone().cholesky() {
            let l = chol.unpack();
            let log_det_cov = log_det_from_cholesky(&l);
            if log_det_cov.is_finite() {
                return Ok(FilteredResidualModel {
                    mode,
                    mean,
                    covariance: regularised,
                    cholesky: l,
                    log_det_cov,
                    ridge,
                    sample_count: m,
                });
            }
        }
        ridge *= 10.0;
    }
    Err(Error::Numerical(format!(
        "covariance not factorisable after {MAX_RIDGE_ESCALATIONS} ridge escalations"
    )))
}

/// Fits a model on `buf` and scores every residual in it under `convention`.
pub fn fit_and_score(
    buf: &ResidualBuffer,
    mode: ResidualMode,
    convention: ScoreConvention,
) -> Result<(FilteredResidualModel, Vec<f64>)> {
    let model = fit_model(buf, mode)?;
    let scores = buf
        .residuals()
        .map(|e| {
            let s = match convention {
                ScoreConvention::LeaveOneOut => model.leave_one_out_score(e)?,
                ScoreConvention::InSample => model.score(e)?,
            };
            Ok(s.value())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((model, scores))
}

/// Mean absolute residual gap between connected and disconnected node pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomophilyGap {
    pub connected_gap: f64,
    /// `None` when the graph is complete and no disconnected pair exists.
    pub disconnected_gap: Option<f64>,
    pub connected_pairs: usize,
    pub disconnected_pairs: usize,
}

impl HomophilyGap {
    pub fn is_homophilic(&self) -> bool {
        self.disconnected_gap
            .is_some_and(|d| self.connected_gap < d)
    }
}

/// [`homophily_gap_seeded`] with the fixed [`HOMOPHILY_SEED`].
pub fn homophily_gap(buf: &ResidualBuffer, graph: &GraphTopology) -> Result<HomophilyGap> {
    homophily_gap_seeded(buf, graph, HOMOPHILY_SEED)
}

/// Averages `|eps_i - eps_j|` over time steps, over all edges and over a
/// uniform sample of as many disconnected pairs.
pub fn homophily_gap_seeded(
    buf: &ResidualBuffer,
    graph: &GraphTopology,
    seed: u64,
) -> Result<HomophilyGap> {
    if buf.is_empty() {
        return Err(Error::InsufficientData {
            context: "homophily gap",
            needed: 1,
            got: 0,
        });
    }
    if buf.dim() != graph.num_nodes() {
        return Err(Error::invalid(format!(
            "residual dimension {} does not match {} graph nodes",
            buf.dim(),
            graph.num_nodes()
        )));
    }
    let connected: Vec<(usize, usize)> = graph.edges().collect();
    if connected.is_empty() {
        return Err(Error::invalid("graph has no edges"));
    }
    let n = graph.num_nodes();
    let all_disconnected: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .filter(|&(i, j)| !graph.has_edge(i, j))
        .collect();
    let disconnected: Vec<(usize, usize)> = if all_disconnected.len() <= connected.len() {
        all_disconnected
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks = sample(&mut rng, all_disconnected.len(), connected.len()).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|k| all_disconnected[k]).collect()
    };

    let mean_gap = |pairs: &[(usize, usize)]| -> f64 {
        let total: f64 = buf
            .residuals()
            .map(|r| pairs.iter().map(|&(i, j)| (r[i] - r[j]).abs()).sum::<f64>())
            .sum();
        total / (pairs.len() * buf.len()) as f64
    };

    Ok(HomophilyGap {
        connected_gap: mean_gap(&connected),
        disconnected_gap: (!disconnected.is_empty()).then(|| mean_gap(&disconnected)),
        connected_pairs: connected.len(),
        disconnected_pairs: disconnected.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn buffer(rows: &[&[f64]]) -> ResidualBuffer {
        let mut buf = ResidualBuffer::new(rows[0].len(), None);
        for (t, r) in rows.iter().enumerate() {
            buf.push(t, DVector::from_row_slice(r)).unwrap();
        }
        buf
    }

    #[test]
    fn residuals_of_perfect_predictions_are_zero() {
        let y = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let buf = compute_residuals(&y, &y).unwrap();
        assert!(buf.residuals().all(|r| r.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn residuals_subtract_elementwise() {
        let y = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let p = DMatrix::zeros(1, 2);
        let buf = compute_residuals(&y, &p).unwrap();
        assert_eq!(buf.get(0).unwrap().as_slice(), &[1.0, 2.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = DMatrix::from_fn(3, 4, |_, _| rng.random::<f64>());
        let p = DMatrix::from_fn(3, 4, |_, _| rng.random::<f64>());
        let buf = compute_residuals(&y, &p).unwrap();
        for t in 0..3 {
            for i in 0..4 {
                assert_eq!(buf.get(t).unwrap()[i], y[(t, i)] - p[(t, i)]);
            }
        }
    }

    #[test]
    fn residual_shape_mismatch() {
        let y = DMatrix::zeros(2, 3);
        let p = DMatrix::zeros(2, 2);
        assert!(compute_residuals(&y, &p).is_err());
    }

    #[test]
    fn buffer_enforces_order_and_capacity() {
        let mut buf = ResidualBuffer::new(1, Some(2));
        buf.push(0, DVector::from_element(1, 1.0)).unwrap();
        assert!(buf.push(0, DVector::from_element(1, 1.0)).is_err());
        assert!(buf.push(5, DVector::from_element(2, 1.0)).is_err());
        buf.push(1, DVector::from_element(1, 2.0)).unwrap();
        buf.push(2, DVector::from_element(1, 3.0)).unwrap();
        assert_eq!(buf.len(), 2);
        assert_eq!(buf.times().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn filtering_examples() {
        let g = GraphTopology::new(2, &[(0, 1)]).unwrap();
        let buf = buffer(&[&[2.0, 0.0], &[3.0, 3.0]]);
        let f = GraphFilter::new(&g, 0.5).unwrap();
        let out = filter_residuals(&buf, &f).unwrap();
        assert_eq!(out.get(0).unwrap().as_slice(), &[1.0, 1.0]);
        assert_eq!(out.get(1).unwrap().as_slice(), &[3.0, 3.0]);
        let id = GraphFilter::new(&g, 0.0).unwrap();
        assert_eq!(filter_residuals(&buf, &id).unwrap(), buf);
        let big = GraphFilter::identity(3);
        assert!(filter_residuals(&buf, &big).is_err());
    }

    #[test]
    fn fit_rank_deficient_pair() {
        let buf = buffer(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        let model = fit_model(&buf, ResidualMode::GraphAgnostic).unwrap();
        assert_eq!(model.mean().as_slice(), &[0.0, 0.0]);
        let g = model.ridge();
        // trace 2, N 2 -> gamma = 1e-6
        assert!((g - 1e-6).abs() < 1e-18);
        assert!((model.covariance()[(0, 0)] - (2.0 + g)).abs() < 1e-15);
        assert_eq!(model.covariance()[(0, 1)], 0.0);
        assert!((model.covariance()[(1, 1)] - g).abs() < 1e-18);
        let expected = 2.0 * (2.0f64 + g).sqrt().ln() + 2.0 * g.sqrt().ln();
        assert!((model.log_det_cov() - expected).abs() < 1e-8);
    }

    #[test]
    fn fit_identical_vectors() {
        let buf = buffer(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        let model = fit_model(&buf, ResidualMode::GraphAgnostic).unwrap();
        assert_eq!(model.ridge(), 1e-8);
        assert_eq!(model.score(&DVector::from_vec(vec![1.0, 2.0])).unwrap().value(), 0.0);
    }

    #[test]
    fn fit_requires_two_samples() {
        let buf = buffer(&[&[1.0]]);
        assert!(matches!(
            fit_model(&buf, ResidualMode::GraphAware),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn monte_carlo_covariance_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut buf = ResidualBuffer::new(2, None);
        for t in 0..500 {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            buf.push(t, DVector::from_vec(vec![a, 2.0 * b])).unwrap();
        }
        let model = fit_model(&buf, ResidualMode::GraphAgnostic).unwrap();
        let c = model.covariance();
        assert!((c[(0, 0)] - 1.0).abs() < 0.2);
        assert!((c[(1, 1)] - 4.0).abs() < 0.8);
        assert!(c[(0, 1)].abs() < 0.2 * 2.0);
    }

    #[test]
    fn score_examples() {
        let id = FilteredResidualModel::from_moments(
            ResidualMode::GraphAgnostic,
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert_eq!(id.score(&DVector::zeros(2)).unwrap().value(), 0.0);
        let s = id.score(&DVector::from_vec(vec![3.0, 4.0])).unwrap().value();
        assert!((s - 25.0).abs() < 1e-12);

        let diag = FilteredResidualModel::from_moments(
            ResidualMode::GraphAgnostic,
            DVector::zeros(2),
            DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])),
        )
        .unwrap();
        let s = diag.score(&DVector::from_vec(vec![2.0, 3.0])).unwrap().value();
        assert!((s - 10.0).abs() < 1e-12);
        assert!(diag.score(&DVector::zeros(3)).is_err());
    }

    /// Refits without each sample and scores it with an explicit inverse.
    fn brute_force_loo(buf: &ResidualBuffer, ridge: f64) -> Vec<f64> {
        let m = buf.len();
        let n = buf.dim();
        let a = (m as f64 - 1.0) / (m as f64 - 2.0);
        (0..m)
            .map(|i| {
                let others: Vec<&DVector<f64>> =
                    (0..m).filter(|&k| k != i).map(|k| buf.get(k).unwrap()).collect();
                let mut mean = DVector::zeros(n);
                for v in &others {
                    mean += *v;
                }
                mean /= others.len() as f64;
                let mut cov = DMatrix::zeros(n, n);
                for v in &others {
                    let d = *v - &mean;
                    cov += &d * d.transpose();
                }
                cov /= others.len() as f64 - 1.0;
                cov += DMatrix::identity(n, n) * (a * ridge);
                let inv = cov.try_inverse().unwrap();
                let d = buf.get(i).unwrap() - &mean;
                (d.transpose() * inv * &d)[(0, 0)]
            })
            .collect()
    }

    #[test]
    fn leave_one_out_matches_refits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut buf = ResidualBuffer::new(4, None);
        for t in 0..12 {
            let v = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal));
            buf.push(t, v).unwrap();
        }
        let (model, scores) =
            fit_and_score(&buf, ResidualMode::GraphAgnostic, ScoreConvention::LeaveOneOut).unwrap();
        let oracle = brute_force_loo(&buf, model.ridge());
        for (s, o) in scores.iter().zip(oracle) {
            assert!((s - o).abs() <= 1e-9 * o.max(1.0), "{s} vs {o}");
        }
        let (_, in_sample) =
            fit_and_score(&buf, ResidualMode::GraphAgnostic, ScoreConvention::InSample).unwrap();
        assert!(scores.iter().zip(&in_sample).all(|(l, i)| l > i));
    }

    #[test]
    fn homophily_constant_residuals() {
        let g = GraphTopology::new(4, &[(0, 1), (2, 3)]).unwrap();
        let buf = buffer(&[&[1.0, 1.0, 1.0, 1.0], &[2.0, 2.0, 2.0, 2.0]]);
        let gap = homophily_gap(&buf, &g).unwrap();
        assert_eq!(gap.connected_gap, 0.0);
        assert_eq!(gap.disconnected_gap, Some(0.0));
    }

    #[test]
    fn homophily_two_cliques() {
        let g = GraphTopology::new(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]).unwrap();
        let buf = buffer(&[&[1.0, 1.0, 1.0, -1.0, -1.0, -1.0]]);
        let gap = homophily_gap(&buf, &g).unwrap();
        assert_eq!(gap.connected_gap, 0.0);
        assert_eq!(gap.disconnected_gap, Some(2.0));
        assert!(gap.is_homophilic());
    }

    #[test]
    fn homophily_complete_graph_has_no_disconnected_pairs() {
        let g = GraphTopology::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let buf = buffer(&[&[1.0, 0.0, 2.0]]);
        let gap = homophily_gap(&buf, &g).unwrap();
        assert_eq!(gap.disconnected_gap, None);
        assert!(!gap.is_homophilic());
    }
}
