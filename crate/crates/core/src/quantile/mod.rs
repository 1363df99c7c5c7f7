//! Predicting the `(1 - alpha)` quantile of the next nonconformity score
//! from a sliding window of past scores.
//!
//! The primary regressor is a quantile regression forest over lagged-score
//! windows; a rolling empirical quantile serves as fallback and cold start.

mod forest;

pub use forest::{ForestConfig, LeafSamples, QuantileForest};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time-ordered nonconformity scores with the lag window used as features.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSeries {
    scores: Vec<f64>,
    window: usize,
}

impl ScoreSeries {
    pub fn new(window: usize) -> Result<Self> {
        Self::from_scores(Vec::new(), window)
    }

    pub fn from_scores(scores: Vec<f64>, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::invalid("score window must be at least 1"));
        }
        if let Some(bad) = scores.iter().find(|s| !(**s >= 0.0)) {
            return Err(Error::invalid(format!("score {bad} is not a nonnegative number")));
        }
        Ok(Self { scores, window })
    }

    pub fn push(&mut self, score: f64) -> Result<()> {
        if !(score >= 0.0) {
            return Err(Error::invalid(format!("score {score} is not a nonnegative number")));
        }
        self.scores.push(score);
        Ok(())
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// The most recent `window` scores, oldest first, if that many exist.
    pub fn latest_window(&self) -> Option<&[f64]> {
        let n = self.scores.len();
        (n >= self.window).then(|| &self.scores[n - self.window..])
    }
}

/// Lagged windows and the score that followed each one.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedPairs {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl WindowedPairs {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

/// `features[k] = scores[k..k + w]`, `targets[k] = scores[k + w]`.
pub fn make_windows(series: &ScoreSeries) -> Result<WindowedPairs> {
    let w = series.window();
    let s = series.scores();
    if s.len() < w + 1 {
        return Err(Error::InsufficientData {
            context: "windowed score pairs",
            needed: w + 1,
            got: s.len(),
        });
    }
    let count = s.len() - w;
    Ok(WindowedPairs {
        features: (0..count).map(|k| s[k..k + w].to_vec()).collect(),
        targets: s[w..].to_vec(),
    })
}

/// Order statistic at rank `ceil((1 - alpha)(m + 1))`, clamped to `[1, m]`,
/// of an ascending sample.
pub fn conformal_order_statistic(sorted: &[f64], alpha: f64) -> f64 {
    let m = sorted.len();
    debug_assert!(m > 0);
    // the offset keeps exact products like 0.95 * 20 from rounding up a rank
    let rank = ((1.0 - alpha) * (m as f64 + 1.0) - 1e-9).ceil();
    let rank = (rank.max(1.0) as usize).min(m);
    sorted[rank - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantileKind {
    #[default]
    Forest,
    Empirical,
}

#[derive(Debug, Clone, PartialEq)]
enum Fitted {
    Forest(QuantileForest),
    Empirical { sorted: Vec<f64> },
}

/// A fitted score-quantile predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantilePredictor {
    alpha: f64,
    fitted: Fitted,
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Feature-free predictor over the last `capacity` scores (all if `None`).
pub fn fit_empirical(series: &ScoreSeries, alpha: f64, capacity: Option<usize>) -> Result<QuantilePredictor> {
    validate_alpha(alpha)?;
    if series.is_empty() {
        return Err(Error::InsufficientData {
            context: "empirical quantile",
            needed: 1,
            got: 0,
        });
    }
    let s = series.scores();
    let m = capacity.map_or(s.len(), |c| c.clamp(1, s.len()));
    let mut sorted = s[s.len() - m..].to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(QuantilePredictor {
        alpha,
        fitted: Fitted::Empirical { sorted },
    })
}

/// Fits a quantile regression forest on windowed score pairs.
pub fn fit_forest(pairs: &WindowedPairs, alpha: f64, cfg: &ForestConfig) -> Result<QuantilePredictor> {
    validate_alpha(alpha)?;
    if pairs.is_empty() {
        return Err(Error::InsufficientData {
            context: "quantile forest",
            needed: 1,
            got: 0,
        });
    }
    Ok(QuantilePredictor {
        alpha,
        fitted: Fitted::Forest(QuantileForest::fit(pairs, cfg)),
    })
}

impl QuantilePredictor {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kind(&self) -> QuantileKind {
        match self.fitted {
            Fitted::Forest(_) => QuantileKind::Forest,
            Fitted::Empirical { .. } => QuantileKind::Empirical,
        }
    }

    pub fn forest(&self) -> Option<&QuantileForest> {
        match &self.fitted {
            Fitted::Forest(f) => Some(f),
            Fitted::Empirical { .. } => None,
        }
    }

    /// Predicted `(1 - alpha)` quantile of the next score, clamped at zero.
    pub fn predict(&self, window: &[f64]) -> Result<f64> {
        self.predict_at(window, self.alpha)
    }

    /// Same fitted state, different miscoverage level.
    pub fn predict_at(&self, window: &[f64], alpha: f64) -> Result<f64> {
        validate_alpha(alpha)?;
        let q = match &self.fitted {
            Fitted::Empirical { sorted } => conformal_order_statistic(sorted, alpha),
            Fitted::Forest(forest) => {
                if window.len() != forest.width() {
                    return Err(Error::invalid(format!(
                        "window has length {}, forest expects {}",
                        window.len(),
                        forest.width()
                    )));
                }
                conformal_order_statistic(&forest.pooled_leaf_samples(window), alpha)
            }
        };
        Ok(q.max(0.0))
    }
}

/// Pinball (quantile) loss of predicting `q` for level `level = 1 - alpha`.
pub fn pinball_loss(target: f64, q: f64, level: f64) -> f64 {
    let diff = target - q;
    if diff >= 0.0 {
        level * diff
    } else {
        (level - 1.0) * diff
    }
}
