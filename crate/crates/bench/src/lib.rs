//! Shared fixtures for the benchmarks.

use graphcp::data::{generate_synthetic, GraphKind};
use graphcp::quantile::{make_windows, WindowedPairs};
use graphcp::scoring::compute_residuals;
use graphcp::{GraphTimeSeriesDataset, ResidualBuffer, ScoreSeries, SyntheticSpec};

pub fn ring_dataset(num_nodes: usize, num_steps: usize) -> GraphTimeSeriesDataset {
    generate_synthetic(&SyntheticSpec {
        num_nodes,
        num_steps,
        graph: GraphKind::Ring,
        seed: 1,
        ..SyntheticSpec::default()
    })
    .expect("synthetic dataset")
}

pub fn er_dataset(num_nodes: usize, p: f64) -> GraphTimeSeriesDataset {
    generate_synthetic(&SyntheticSpec {
        num_nodes,
        num_steps: 2,
        graph: GraphKind::ErdosRenyi { p },
        seed: 2,
        ..SyntheticSpec::default()
    })
    .expect("synthetic dataset")
}

/// Persistence residuals `x_{t+1} - x_t` of a dataset.
pub fn persistence_residuals(ds: &GraphTimeSeriesDataset) -> ResidualBuffer {
    let t = ds.num_steps();
    let targets = ds.signals.rows(1, t - 1).into_owned();
    let preds = ds.signals.rows(0, t - 1).into_owned();
    compute_residuals(&targets, &preds).expect("residuals")
}

pub fn score_pairs(len: usize, window: usize) -> WindowedPairs {
    let scores: Vec<f64> = (0..len).map(|k| ((k * 7919) % 101) as f64 / 10.0).collect();
    make_windows(&ScoreSeries::from_scores(scores, window).expect("series")).expect("pairs")
}
