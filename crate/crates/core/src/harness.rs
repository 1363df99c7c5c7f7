//! Sequential evaluation loop: fit a forecaster on the training split, then
//! walk the test period building one region per origin and horizon,
//! recording coverage of the realised target and region log-volume.
//!
//! Each horizon `j` runs its own pipeline (residual history, score series,
//! quantile predictor). A residual for target time `t + j` only enters the
//! history once the loop has reached origin `t + j`, so regions never see
//! the value they are meant to cover.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split, zscore_by_train, DatasetSplit, GraphTimeSeriesDataset, SplitConfig};
use crate::error::{Error, Result};
use crate::graph::{shrinkage_bound_check, spectral_summary, GraphFilter, DEFAULT_TAU};
use crate::models::{ensemble_train_residuals, fit_ensemble, PredictionTrace, PredictorKind, PredictorSpec};
use crate::quantile::{fit_empirical, fit_forest, make_windows, ForestConfig, QuantileKind, QuantilePredictor, ScoreSeries};
use crate::region::{build_region, unit_ball_log_volume, RegionRecord};
use crate::scoring::{fit_and_score, FilteredResidualModel, ResidualBuffer, ResidualMode, ScoreConvention};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeSelection {
    GraphAware,
    GraphAgnostic,
    #[default]
    Both,
}

impl ModeSelection {
    pub fn modes(self) -> Vec<ResidualMode> {
        match self {
            ModeSelection::GraphAware => vec![ResidualMode::GraphAware],
            ModeSelection::GraphAgnostic => vec![ResidualMode::GraphAgnostic],
            ModeSelection::Both => vec![ResidualMode::GraphAware, ResidualMode::GraphAgnostic],
        }
    }
}

/// Everything that parameterises one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub alpha: f64,
    pub window: usize,
    pub tau: f64,
    pub horizon: usize,
    pub mode: ModeSelection,
    pub num_runs: usize,
    pub refit_interval: usize,
    pub predictor: PredictorSpec,
    pub ensemble_size: usize,
    pub seed: u64,
    pub quantile: QuantileKind,
    /// Forest hyperparameters; the seed is derived per run and refit.
    pub forest: ForestConfig,
    pub split: SplitConfig,
    /// Keep only the most recent residuals for the covariance fit.
    pub residual_capacity: Option<usize>,
    pub score_convention: ScoreConvention,
    /// Z-score each node with training-split statistics.
    pub normalize: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            window: 10,
            tau: DEFAULT_TAU,
            horizon: 1,
            mode: ModeSelection::Both,
            num_runs: 5,
            refit_interval: 1,
            predictor: PredictorSpec::default(),
            ensemble_size: 15,
            seed: 0,
            quantile: QuantileKind::Forest,
            forest: ForestConfig::default(),
            split: SplitConfig::default(),
            residual_capacity: None,
            score_convention: ScoreConvention::LeaveOneOut,
            normalize: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.num_runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.refit_interval == 0 {
            return bad("refit interval must be at least 1".into());
        }
        if self.ensemble_size == 0 {
            return bad("ensemble size must be at least 1".into());
        }
        if let Some(c) = self.residual_capacity {
            if c < 3 {
                return bad(format!("residual capacity must be at least 3, got {c}"));
            }
        }
        if self.forest.num_trees == 0 {
            return bad("forest needs at least one tree".into());
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return bad(format!(
                "train fraction must lie in (0, 1), got {}",
                self.split.train_fraction
            ));
        }
        self.predictor.validate()
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Stat { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

/// Coverage and log-volume summary of one sequence of regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub coverage: f64,
    /// Over finite log-volumes only.
    pub log_volume: Stat,
    /// `exp((mean log-volume - log V_N) / N)`.
    pub per_dim_radius: f64,
    pub degenerate: usize,
}

pub fn coverage_and_volume(memberships: &[bool], log_volumes: &[f64], dim: usize) -> Result<CoverageSummary> {
    if memberships.is_empty() || memberships.len() != log_volumes.len() {
        return Err(Error::invalid(format!(
            "need equal, nonzero numbers of memberships ({}) and log-volumes ({})",
            memberships.len(),
            log_volumes.len()
        )));
    }
    let coverage = memberships.iter().filter(|&&m| m).count() as f64 / memberships.len() as f64;
    let finite: Vec<f64> = log_volumes.iter().copied().filter(|v| v.is_finite()).collect();
    let log_volume = Stat::of(&finite);
    let per_dim_radius = ((log_volume.mean - unit_ball_log_volume(dim)) / dim as f64).exp();
    Ok(CoverageSummary {
        coverage,
        log_volume,
        per_dim_radius,
        degenerate: log_volumes.len() - finite.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub horizon: usize,
    pub test_steps: usize,
    pub coverage: Stat,
    pub log_volume: Stat,
    pub per_dim_radius: Stat,
    pub per_run_coverage: Vec<f64>,
    pub per_run_log_volume: Vec<f64>,
    pub degenerate_regions: usize,
    /// Largest covariance ridge applied in any refit.
    pub max_ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: ResidualMode,
    pub horizons: Vec<HorizonReport>,
    /// Coverage over all horizons of a run, then averaged over runs.
    pub pooled_coverage: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub horizon: usize,
    /// `exp(mean log-volume aware - mean log-volume agnostic)` per run.
    pub per_run: Vec<Option<f64>>,
    pub ratio: Stat,
    pub runs_below_one: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub num_nodes: usize,
    pub num_steps: usize,
    pub train_len: usize,
    pub test_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralInfo {
    pub tau: f64,
    pub eta: f64,
    pub log_det_filter: Option<f64>,
    pub bound_slack: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: ExperimentConfig,
    pub dataset: DatasetInfo,
    pub spectral: SpectralInfo,
    pub modes: Vec<ModeReport>,
    pub volume_ratios: Vec<RatioReport>,
    /// Wall-clock measurements; excluded from reproducibility comparisons.
    pub timing: Timing,
}

impl EvaluationReport {
    pub fn mode(&self, mode: ResidualMode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn horizon(&self, mode: ResidualMode, horizon: usize) -> Option<&HorizonReport> {
        self.mode(mode)?.horizons.iter().find(|h| h.horizon == horizon)
    }
}

/// One line of the per-timestep region dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionLine {
    pub run: usize,
    pub mode: ResidualMode,
    pub horizon: usize,
    pub origin: usize,
    pub target_time: usize,
    pub covered: bool,
    pub score: f64,
    #[serde(flatten)]
    pub region: RegionRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: EvaluationReport,
    pub regions: Vec<RegionLine>,
}

struct TestCase {
    origin: usize,
    target_time: usize,
    prediction: DVector<f64>,
    truth: DVector<f64>,
}

/// Raw training residuals and test forecasts for every horizon.
struct RunForecasts {
    train_residuals: Vec<ResidualBuffer>,
    test_cases: Vec<Vec<TestCase>>,
}

fn forecasts_from_ensemble(
    ds: &GraphTimeSeriesDataset,
    sp: &DatasetSplit,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<RunForecasts> {
    let train = ds.signals.rows(0, sp.train_len).into_owned();
    let ens = fit_ensemble(&train, &ds.topology, &cfg.predictor, cfg.ensemble_size, seed)?;
    let r = cfg.horizon;
    let train_residuals = (1..=r)
        .map(|j| ensemble_train_residuals(&ens, &train, j))
        .collect::<Result<Vec<_>>>()?;
    let first_origin = sp.train_len.checked_sub(r).filter(|&o| o + 1 >= ens.lags()).ok_or(
        Error::InsufficientData {
            context: "training rows for the forecast horizon",
            needed: r + ens.lags(),
            got: sp.train_len,
        },
    )?;
    let last_origin = ds.num_steps() - 2;
    let mut test_cases: Vec<Vec<TestCase>> = (0..r).map(|_| Vec::new()).collect();
    for origin in first_origin..=last_origin {
        let preds = ens.predict_from(&ds.signals, origin, r)?;
        for (j, pred) in preds.into_iter().enumerate() {
            let target = origin + j + 1;
            if target >= sp.train_len && target < ds.num_steps() {
                test_cases[j].push(TestCase {
                    origin,
                    target_time: target,
                    prediction: pred,
                    truth: ds.signal(target),
                });
            }
        }
    }
    Ok(RunForecasts {
        train_residuals,
        test_cases,
    })
}

fn forecasts_from_trace(
    ds: &GraphTimeSeriesDataset,
    sp: &DatasetSplit,
    cfg: &ExperimentConfig,
    trace: &PredictionTrace,
) -> Result<RunForecasts> {
    trace.validate_against(ds)?;
    let r = cfg.horizon;
    if trace.horizon < r {
        return Err(Error::Ingestion(format!(
            "trace covers {} steps ahead, experiment needs {r}",
            trace.horizon
        )));
    }
    let mut train_residuals: Vec<ResidualBuffer> =
        (0..r).map(|_| ResidualBuffer::new(ds.num_nodes(), None)).collect();
    let mut test_cases: Vec<Vec<TestCase>> = (0..r).map(|_| Vec::new()).collect();
    for (&origin, steps) in trace.timestamps.iter().zip(&trace.predictions) {
        for (j, pred) in steps.iter().take(r).enumerate() {
            let target = origin + j + 1;
            if target < sp.train_len {
                train_residuals[j].push(target, ds.signal(target) - pred)?;
            } else if target < ds.num_steps() {
                test_cases[j].push(TestCase {
                    origin,
                    target_time: target,
                    prediction: pred.clone(),
                    truth: ds.signal(target),
                });
            }
        }
    }
    for (j, cases) in test_cases.iter().enumerate() {
        let expected = sp.test_len;
        if cases.len() != expected {
            return Err(Error::Ingestion(format!(
                "trace gives {} test forecasts for horizon {}, expected {expected}",
                cases.len(),
                j + 1
            )));
        }
    }
    Ok(RunForecasts {
        train_residuals,
        test_cases,
    })
}

struct PipelineOutcome {
    memberships: Vec<bool>,
    log_volumes: Vec<f64>,
    max_ridge: f64,
    lines: Vec<RegionLine>,
}

/// Rolling state of one (mode, horizon) pipeline.
struct RollingState<'a> {
    cfg: &'a ExperimentConfig,
    mode: ResidualMode,
    filter: Option<&'a GraphFilter>,
    horizon: usize,
    run_seed: u64,
    history: ResidualBuffer,
    model: FilteredResidualModel,
    scores: ScoreSeries,
    predictor: QuantilePredictor,
    max_ridge: f64,
    steps: usize,
}

impl<'a> RollingState<'a> {
    fn new(
        cfg: &'a ExperimentConfig,
        mode: ResidualMode,
        filter: Option<&'a GraphFilter>,
        horizon: usize,
        run_seed: u64,
        raw_train: &ResidualBuffer,
    ) -> Result<Self> {
        let mut history = ResidualBuffer::new(raw_train.dim(), cfg.residual_capacity);
        for (t, r) in raw_train.iter() {
            history.push(t, transform(filter, r)?)?;
        }
        let (model, scores, predictor) = refit(cfg, mode, &history, quantile_seed(run_seed, horizon, 0))?;
        Ok(Self {
            cfg,
            mode,
            filter,
            horizon,
            run_seed,
            max_ridge: model.ridge(),
            history,
            model,
            scores,
            predictor,
            steps: 0,
        })
    }

    fn reveal(&mut self, time: usize, residual: &DVector<f64>) -> Result<()> {
        let e = transform(self.filter, residual)?;
        let s = self.model.score(&e)?.value();
        self.history.push(time, e)?;
        self.scores.push(s)
    }

    fn refresh(&mut self) -> Result<()> {
        let seed = quantile_seed(self.run_seed, self.horizon, self.steps);
        let (model, scores, predictor) = refit(self.cfg, self.mode, &self.history, seed)?;
        self.max_ridge = self.max_ridge.max(model.ridge());
        self.model = model;
        self.scores = scores;
        self.predictor = predictor;
        Ok(())
    }

    fn quantile(&self) -> Result<f64> {
        match self.predictor.kind() {
            QuantileKind::Forest => {
                let window = self.scores.latest_window().ok_or(Error::InsufficientData {
                    context: "score window",
                    needed: self.scores.window(),
                    got: self.scores.len(),
                })?;
                self.predictor.predict(window)
            }
            QuantileKind::Empirical => self.predictor.predict(&[]),
        }
    }
}

fn transform(filter: Option<&GraphFilter>, residual: &DVector<f64>) -> Result<DVector<f64>> {
    match filter {
        Some(f) => f.apply(residual),
        None => Ok(residual.clone()),
    }
}

fn quantile_seed(run_seed: u64, horizon: usize, step: usize) -> u64 {
    run_seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((horizon as u64) << 32)
        .wrapping_add(step as u64)
}

fn refit(
    cfg: &ExperimentConfig,
    mode: ResidualMode,
    history: &ResidualBuffer,
    seed: u64,
) -> Result<(FilteredResidualModel, ScoreSeries, QuantilePredictor)> {
    let (model, raw_scores) = fit_and_score(history, mode, cfg.score_convention)?;
    let scores = ScoreSeries::from_scores(raw_scores, cfg.window)?;
    let predictor = if cfg.quantile == QuantileKind::Forest && scores.len() > cfg.window {
        let pairs = make_windows(&scores)?;
        let forest_cfg = ForestConfig {
            seed,
            ..cfg.forest.clone()
        };
        fit_forest(&pairs, cfg.alpha, &forest_cfg)?
    } else {
        fit_empirical(&scores, cfg.alpha, None)?
    };
    Ok((model, scores, predictor))
}

#[allow(clippy::too_many_arguments)]
fn run_pipeline(
    cfg: &ExperimentConfig,
    mode: ResidualMode,
    filter: Option<&GraphFilter>,
    horizon: usize,
    run: usize,
    run_seed: u64,
    raw_train: &ResidualBuffer,
    cases: &[TestCase],
    keep_lines: bool,
) -> Result<PipelineOutcome> {
    let step_err = |step: usize| {
        move |e: Error| Error::Step {
            run,
            mode: mode.as_str(),
            horizon,
            step,
            source: Box::new(e),
        }
    };
    let mut state = RollingState::new(cfg, mode, filter, horizon, run_seed, raw_train).map_err(step_err(0))?;
    let mut pending: VecDeque<(usize, DVector<f64>)> = VecDeque::new();
    let mut out = PipelineOutcome {
        memberships: Vec::with_capacity(cases.len()),
        log_volumes: Vec::with_capacity(cases.len()),
        max_ridge: state.max_ridge,
        lines: Vec::new(),
    };

    for (step, case) in cases.iter().enumerate() {
        let mut inner = || -> Result<()> {
            let mut revealed = false;
            while pending.front().is_some_and(|(t, _)| *t <= case.origin) {
                let (t, r) = pending.pop_front().expect("front checked");
                state.reveal(t, &r)?;
                revealed = true;
            }
            state.steps = step;
            if revealed && step % cfg.refit_interval == 0 {
                state.refresh()?;
            }
            let radius_sq = state.quantile()?;
            let region = build_region(&case.prediction, &state.model, radius_sq)?;
            let score = region.score_of(&case.truth, filter)?;
            let covered = score <= region.radius_sq();
            let log_volume = region.log_volume().log_volume;
            out.memberships.push(covered);
            out.log_volumes.push(log_volume);
            if keep_lines {
                out.lines.push(RegionLine {
                    run,
                    mode,
                    horizon,
                    origin: case.origin,
                    target_time: case.target_time,
                    covered,
                    score,
                    region: region.export_record(),
                });
            }
            pending.push_back((case.target_time, &case.truth - &case.prediction));
            Ok(())
        };
        inner().map_err(step_err(step))?;
    }
    out.max_ridge = state.max_ridge;
    Ok(out)
}

/// Runs every configured run, mode and horizon.
pub fn run_experiment(ds: &GraphTimeSeriesDataset, cfg: &ExperimentConfig) -> Result<EvaluationReport> {
    run_experiment_detailed(ds, cfg, None, false).map(|o| o.report)
}

/// Full entry point: optional external trace (required when the predictor
/// kind is `external`) and optional per-timestep region records.
pub fn run_experiment_detailed(
    ds: &GraphTimeSeriesDataset,
    cfg: &ExperimentConfig,
    trace: Option<&PredictionTrace>,
    emit_regions: bool,
) -> Result<ExperimentOutput> {
    let started = Instant::now();
    cfg.validate()?;
    let sp = split(ds, &cfg.split, cfg.window + 2)?;
    let normalized;
    let ds = if cfg.normalize {
        normalized = zscore_by_train(ds, sp.train_len)?.0;
        &normalized
    } else {
        ds
    };
    if cfg.predictor.kind == PredictorKind::External && trace.is_none() {
        return Err(Error::invalid("external predictor selected but no predictions supplied"));
    }

    let filter = GraphFilter::new(&ds.topology, cfg.tau)?;
    let spectral = spectral_info(ds, &filter);
    let modes = cfg.mode.modes();
    let r = cfg.horizon;

    struct RunResult {
        outcomes: Vec<Vec<PipelineOutcome>>,
    }
    let mut runs: Vec<RunResult> = Vec::with_capacity(cfg.num_runs);
    for run in 0..cfg.num_runs {
        let run_seed = cfg.seed.wrapping_add(run as u64);
        let forecasts = match (cfg.predictor.kind, trace) {
            (PredictorKind::External, Some(t)) => forecasts_from_trace(ds, &sp, cfg, t)?,
            _ => forecasts_from_ensemble(ds, &sp, cfg, run_seed)?,
        };
        let jobs: Vec<(usize, usize)> = (0..modes.len())
            .flat_map(|m| (0..r).map(move |j| (m, j)))
            .collect();
        let results = jobs
            .par_iter()
            .map(|&(m, j)| {
                let mode = modes[m];
                let f = (mode == ResidualMode::GraphAware).then_some(&filter);
                run_pipeline(
                    cfg,
                    mode,
                    f,
                    j + 1,
                    run,
                    run_seed,
                    &forecasts.train_residuals[j],
                    &forecasts.test_cases[j],
                    emit_regions,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut outcomes: Vec<Vec<PipelineOutcome>> = (0..modes.len()).map(|_| Vec::new()).collect();
        for ((m, _), res) in jobs.into_iter().zip(results) {
            outcomes[m].push(res);
        }
        runs.push(RunResult { outcomes });
    }

    let n = ds.num_nodes();
    let mut mode_reports = Vec::new();
    let mut mean_log_vols: Vec<Vec<Vec<f64>>> = Vec::new(); // [mode][horizon][run]
    for (m, &mode) in modes.iter().enumerate() {
        let mut horizons = Vec::new();
        let mut mode_vols = Vec::new();
        for j in 0..r {
            let mut cov = Vec::new();
            let mut vol = Vec::new();
            let mut radius = Vec::new();
            let mut degenerate = 0;
            let mut max_ridge: f64 = 0.0;
            let mut steps = 0;
            for run in &runs {
                let o = &run.outcomes[m][j];
                let s = coverage_and_volume(&o.memberships, &o.log_volumes, n)?;
                cov.push(s.coverage);
                vol.push(s.log_volume.mean);
                radius.push(s.per_dim_radius);
                degenerate += s.degenerate;
                max_ridge = max_ridge.max(o.max_ridge);
                steps = o.memberships.len();
            }
            horizons.push(HorizonReport {
                horizon: j + 1,
                test_steps: steps,
                coverage: Stat::of(&cov),
                log_volume: Stat::of(&vol),
                per_dim_radius: Stat::of(&radius),
                per_run_coverage: cov,
                per_run_log_volume: vol.clone(),
                degenerate_regions: degenerate,
                max_ridge,
            });
            mode_vols.push(vol);
        }
        let pooled: Vec<f64> = runs
            .iter()
            .map(|run| {
                let all: Vec<bool> = run.outcomes[m].iter().flat_map(|o| o.memberships.iter().copied()).collect();
                all.iter().filter(|&&b| b).count() as f64 / all.len() as f64
            })
            .collect();
        mode_reports.push(ModeReport {
            mode,
            horizons,
            pooled_coverage: Stat::of(&pooled),
        });
        mean_log_vols.push(mode_vols);
    }

    let mut volume_ratios = Vec::new();
    if modes.len() == 2 {
        for (j, (aware, agnostic)) in mean_log_vols[0].iter().zip(&mean_log_vols[1]).enumerate() {
            let per_run: Vec<Option<f64>> = aware
                .iter()
                .zip(agnostic)
                .map(|(a, b)| (a.is_finite() && b.is_finite()).then(|| (a - b).exp()))
                .collect();
            let finite: Vec<f64> = per_run.iter().flatten().copied().collect();
            volume_ratios.push(RatioReport {
                horizon: j + 1,
                runs_below_one: finite.iter().filter(|&&v| v < 1.0).count(),
                ratio: Stat::of(&finite),
                per_run,
            });
        }
    }

    let regions = runs
        .into_iter()
        .flat_map(|run| run.outcomes.into_iter().flatten().flat_map(|o| o.lines))
        .collect();
    Ok(ExperimentOutput {
        report: EvaluationReport {
            config: cfg.clone(),
            dataset: DatasetInfo {
                name: ds.name.clone(),
                num_nodes: n,
                num_steps: ds.num_steps(),
                train_len: sp.train_len,
                test_len: sp.test_len,
            },
            spectral,
            modes: mode_reports,
            volume_ratios,
            timing: Timing {
                runtime_seconds: started.elapsed().as_secs_f64(),
            },
        },
        regions,
    })
}

fn spectral_info(ds: &GraphTimeSeriesDataset, filter: &GraphFilter) -> SpectralInfo {
    let eigen = ds.topology.random_walk_spectrum();
    let eta = eigen.iter().map(|l| 1.0 - l).sum();
    match spectral_summary(&ds.topology, filter) {
        Ok(s) => {
            let check = shrinkage_bound_check(&s, filter.tau());
            SpectralInfo {
                tau: filter.tau(),
                eta,
                log_det_filter: Some(s.log_det_filter),
                bound_slack: Some(check.slack),
            }
        }
        Err(_) => SpectralInfo {
            tau: filter.tau(),
            eta,
            log_det_filter: None,
            bound_slack: None,
        },
    }
}

/// Runs each configuration independently; a failing configuration does not
/// stop the others. Output order matches `grid`.
pub fn run_grid(ds: &GraphTimeSeriesDataset, grid: &[ExperimentConfig]) -> Result<Vec<Result<EvaluationReport>>> {
    if grid.is_empty() {
        return Err(Error::invalid("experiment grid is empty"));
    }
    Ok(grid.par_iter().map(|cfg| run_experiment(ds, cfg)).collect())
}

/// Flat CSV, one row per report, mode and horizon.
pub fn reports_to_csv(reports: &[EvaluationReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_num = |e: csv::Error| Error::Numerical(e.to_string());
    w.write_record([
        "config",
        "dataset",
        "alpha",
        "window",
        "tau",
        "mode",
        "horizon",
        "test_steps",
        "coverage_mean",
        "coverage_std",
        "log_volume_mean",
        "log_volume_std",
        "per_dim_radius_mean",
        "volume_ratio_mean",
        "max_ridge",
    ])
    .map_err(to_num)?;
    for (k, rep) in reports.iter().enumerate() {
        for mode in &rep.modes {
            for h in &mode.horizons {
                let ratio = rep
                    .volume_ratios
                    .iter()
                    .find(|r| r.horizon == h.horizon)
                    .map_or(String::new(), |r| r.ratio.mean.to_string());
                w.write_record([
                    k.to_string(),
                    rep.dataset.name.clone(),
                    rep.config.alpha.to_string(),
                    rep.config.window.to_string(),
                    rep.config.tau.to_string(),
                    mode.mode.as_str().to_string(),
                    h.horizon.to_string(),
                    h.test_steps.to_string(),
                    h.coverage.mean.to_string(),
                    h.coverage.std.to_string(),
                    h.log_volume.mean.to_string(),
                    h.log_volume.std.to_string(),
                    h.per_dim_radius.mean.to_string(),
                    ratio,
                    h.max_ridge.to_string(),
                ])
                .map_err(to_num)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Numerical(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Numerical(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, GraphKind, SyntheticSpec};

    fn small_dataset(seed: u64) -> GraphTimeSeriesDataset {
        generate_synthetic(&SyntheticSpec {
            num_nodes: 8,
            num_steps: 160,
            graph: GraphKind::Ring,
            seed,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    fn quick_config() -> ExperimentConfig {
        ExperimentConfig {
            num_runs: 2,
            ensemble_size: 5,
            forest: ForestConfig {
                num_trees: 5,
                ..ForestConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn coverage_summary_examples() {
        let s = coverage_and_volume(&[true; 4], &[1.0; 4], 2).unwrap();
        assert_eq!(s.coverage, 1.0);
        let s = coverage_and_volume(&[true, false, true, true], &[2.0, 2.0, 2.0, 2.0], 2).unwrap();
        assert_eq!(s.coverage, 0.75);
        assert_eq!(s.log_volume.mean, 2.0);
        assert_eq!(s.log_volume.std, 0.0);
        assert!(coverage_and_volume(&[], &[], 2).is_err());
        assert!(coverage_and_volume(&[true], &[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn degenerate_volumes_are_counted() {
        let s = coverage_and_volume(&[true, true], &[f64::NEG_INFINITY, 3.0], 2).unwrap();
        assert_eq!(s.degenerate, 1);
        assert_eq!(s.log_volume.mean, 3.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.alpha = 1.5;
        assert!(cfg.validate().unwrap_err().to_string().contains("alpha"));
        let cfg = ExperimentConfig {
            refit_interval: 0,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn report_structure() {
        let ds = small_dataset(1);
        let cfg = ExperimentConfig {
            horizon: 2,
            ..quick_config()
        };
        let rep = run_experiment(&ds, &cfg).unwrap();
        assert_eq!(rep.modes.len(), 2);
        assert_eq!(rep.volume_ratios.len(), 2);
        for m in &rep.modes {
            assert_eq!(m.horizons.len(), 2);
            for h in &m.horizons {
                assert_eq!(h.test_steps, rep.dataset.test_len);
                assert_eq!(h.per_run_coverage.len(), 2);
                assert!((0.0..=1.0).contains(&h.coverage.mean));
                assert!(h.coverage.std >= 0.0);
            }
        }
        let csv = reports_to_csv(&[rep]).unwrap();
        assert_eq!(csv.lines().count(), 1 + 4);
    }

    #[test]
    fn experiment_is_deterministic() {
        let ds = small_dataset(2);
        let cfg = quick_config();
        let mut a = run_experiment(&ds, &cfg).unwrap();
        let mut b = run_experiment(&ds, &cfg).unwrap();
        a.timing.runtime_seconds = 0.0;
        b.timing.runtime_seconds = 0.0;
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn no_look_ahead() {
        let ds = small_dataset(3);
        let cfg = ExperimentConfig {
            num_runs: 1,
            mode: ModeSelection::GraphAware,
            ..quick_config()
        };
        let base = run_experiment_detailed(&ds, &cfg, None, true).unwrap().regions;
        let sp = split(&ds, &cfg.split, cfg.window + 2).unwrap();
        // perturb everything from the 5th test target onwards
        let cut = sp.train_len + 4;
        let mut perturbed = ds.clone();
        for t in cut..ds.num_steps() {
            for i in 0..ds.num_nodes() {
                perturbed.signals[(t, i)] += 10.0 * ((t * 7 + i) % 3) as f64 - 10.0;
            }
        }
        let other = run_experiment_detailed(&perturbed, &cfg, None, true).unwrap().regions;
        for (a, b) in base.iter().zip(&other) {
            if a.target_time <= cut {
                assert_eq!(a.region, b.region, "region for target {} changed", a.target_time);
            }
        }
        let changed = base
            .iter()
            .zip(&other)
            .any(|(a, b)| a.target_time > cut + 1 && a.region != b.region);
        assert!(changed);
    }

    #[test]
    fn external_trace_drives_pipeline() {
        let ds = small_dataset(4);
        let cfg = quick_config();
        let sp = split(&ds, &cfg.split, cfg.window + 2).unwrap();
        let train = ds.signals.rows(0, sp.train_len).into_owned();
        let ens = fit_ensemble(&train, &ds.topology, &cfg.predictor, 3, 0).unwrap();
        let trace = crate::models::trace_from_ensemble(&ens, &ds.signals, 1).unwrap();
        let ext = ExperimentConfig {
            predictor: PredictorSpec {
                kind: PredictorKind::External,
                ..PredictorSpec::default()
            },
            ..cfg.clone()
        };
        let out = run_experiment_detailed(&ds, &ext, Some(&trace), false).unwrap();
        assert_eq!(out.report.modes[0].horizons[0].test_steps, sp.test_len);
        assert!(run_experiment(&ds, &ext).is_err());
    }

    #[test]
    fn grid_isolates_failures() {
        let ds = small_dataset(5);
        let good = quick_config();
        let bad = ExperimentConfig {
            window: 500,
            ..quick_config()
        };
        let out = run_grid(&ds, &[good.clone(), bad]).unwrap();
        assert!(out[0].is_ok());
        assert!(out[1].is_err());
        let single = run_experiment(&ds, &good).unwrap();
        let mut from_grid = out.into_iter().next().unwrap().unwrap();
        from_grid.timing = single.timing.clone();
        assert_eq!(from_grid, single);
        assert!(run_grid(&ds, &[]).is_err());
    }

    #[test]
    fn empirical_fallback_calibrates_over_long_stream() {
        let ds = generate_synthetic(&SyntheticSpec {
            num_nodes: 5,
            num_steps: 6667,
            graph: GraphKind::Ring,
            seed: 9,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let cfg = ExperimentConfig {
            mode: ModeSelection::GraphAgnostic,
            quantile: QuantileKind::Empirical,
            num_runs: 1,
            ensemble_size: 5,
            ..ExperimentConfig::default()
        };
        let rep = run_experiment(&ds, &cfg).unwrap();
        let h = &rep.modes[0].horizons[0];
        assert_eq!(h.test_steps, 2001);
        assert!((h.coverage.mean - 0.9).abs() <= 0.03, "coverage {}", h.coverage.mean);
    }

    #[test]
    fn empirical_quantile_mode_runs() {
        let ds = small_dataset(6);
        let cfg = ExperimentConfig {
            quantile: QuantileKind::Empirical,
            refit_interval: 3,
            residual_capacity: Some(50),
            ..quick_config()
        };
        let rep = run_experiment(&ds, &cfg).unwrap();
        assert!(rep.modes[0].horizons[0].coverage.mean > 0.5);
    }
}
