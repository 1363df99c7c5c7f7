//! Ellipsoidal prediction regions built from a point prediction, a fitted
//! residual model and a predicted score quantile.
//!
//! Volumes are reported in log space with the exact unit-ball constant, so
//! they stay finite for graphs with thousands of nodes.

use nalgebra::{DVector, SymmetricEigen};
use serde::{Deserialize, Serialize, Serializer};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::graph::GraphFilter;
use crate::scoring::{mahalanobis_sq, FilteredResidualModel, ResidualMode};

/// `{ y : s(y) <= radius_sq }` where `s` scores the (filtered) residual of
/// `y` against `prediction`.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidRegion {
    model: FilteredResidualModel,
    prediction: DVector<f64>,
    center: DVector<f64>,
    radius_sq: f64,
}

pub fn build_region(
    prediction: &DVector<f64>,
    model: &FilteredResidualModel,
    radius_sq: f64,
) -> Result<EllipsoidRegion> {
    if !(radius_sq >= 0.0) {
        return Err(Error::invalid(format!(
            "squared radius must be nonnegative, got {radius_sq}"
        )));
    }
    if prediction.len() != model.dim() {
        return Err(Error::invalid(format!(
            "prediction has dimension {}, model expects {}",
            prediction.len(),
            model.dim()
        )));
    }
    Ok(EllipsoidRegion {
        model: model.clone(),
        prediction: prediction.clone(),
        center: prediction + model.mean(),
        radius_sq,
    })
}

impl EllipsoidRegion {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn mode(&self) -> ResidualMode {
        self.model.mode()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn prediction(&self) -> &DVector<f64> {
        &self.prediction
    }

    pub fn mean(&self) -> &DVector<f64> {
        self.model.mean()
    }

    pub fn radius_sq(&self) -> f64 {
        self.radius_sq
    }

    pub fn shape(&self) -> &nalgebra::DMatrix<f64> {
        self.model.covariance()
    }

    pub fn shape_log_det(&self) -> f64 {
        self.model.log_det_cov()
    }

    /// Nonconformity score of `y`: the raw residual `y - prediction` is
    /// filtered by `H` first in graph-aware mode.
    pub fn score_of(&self, y: &DVector<f64>, filter: Option<&GraphFilter>) -> Result<f64> {
        if y.len() != self.dim() {
            return Err(Error::invalid(format!(
                "point has dimension {}, region has {}",
                y.len(),
                self.dim()
            )));
        }
        let residual = y - &self.prediction;
        let e = match self.mode() {
            ResidualMode::GraphAgnostic => residual,
            ResidualMode::GraphAware => {
                let filter = filter.ok_or_else(|| {
                    Error::invalid("graph-aware region needs the filter it was fitted with")
                })?;
                filter.apply(&residual)?
            }
        };
        mahalanobis_sq(self.model.cholesky(), &(e - self.model.mean()))
    }

    /// Closed-set membership, `score <= radius_sq`.
    pub fn contains(&self, y: &DVector<f64>, filter: Option<&GraphFilter>) -> Result<bool> {
        Ok(self.score_of(y, filter)? <= self.radius_sq)
    }

    pub fn log_volume(&self) -> VolumeStats {
        log_volume(self)
    }

    pub fn export_record(&self) -> RegionRecord {
        let eig = SymmetricEigen::new(self.model.covariance().clone());
        let (min, max) = eig
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        RegionRecord {
            center: self.center.iter().copied().collect(),
            radius_sq: self.radius_sq,
            shape_eigen_min: min,
            shape_eigen_max: max,
            shape_log_det: self.shape_log_det(),
            log_volume: self.log_volume().log_volume,
        }
    }
}

/// Convenience wrapper over [`EllipsoidRegion::contains`].
pub fn contains(region: &EllipsoidRegion, y: &DVector<f64>, filter: Option<&GraphFilter>) -> Result<bool> {
    region.contains(y, filter)
}

/// `log` of the volume of the unit ball in `n` dimensions.
pub fn unit_ball_log_volume(n: usize) -> f64 {
    let half = n as f64 / 2.0;
    half * std::f64::consts::PI.ln() - ln_gamma(half + 1.0)
}

fn serialize_log_volume<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn deserialize_log_volume<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
}

/// Log-volume of a region and its geometric-mean semi-axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeStats {
    pub dim: usize,
    /// Natural log of the volume; negative infinity (`null` in JSON) for a
    /// zero radius.
    #[serde(
        serialize_with = "serialize_log_volume",
        deserialize_with = "deserialize_log_volume"
    )]
    pub log_volume: f64,
    pub per_dim_radius: f64,
}

impl VolumeStats {
    pub fn is_degenerate(&self) -> bool {
        self.log_volume == f64::NEG_INFINITY
    }
}

/// `log V_N + (N / 2) log radius_sq + (1 / 2) log det shape`.
pub fn log_volume(region: &EllipsoidRegion) -> VolumeStats {
    let n = region.dim();
    if region.radius_sq == 0.0 {
        return VolumeStats {
            dim: n,
            log_volume: f64::NEG_INFINITY,
            per_dim_radius: 0.0,
        };
    }
    let nf = n as f64;
    let shape_part = 0.5 * nf * region.radius_sq.ln() + 0.5 * region.shape_log_det();
    VolumeStats {
        dim: n,
        log_volume: unit_ball_log_volume(n) + shape_part,
        per_dim_radius: (shape_part / nf).exp(),
    }
}

/// `Vol(aware) / Vol(agnostic)`; `None` when either volume is degenerate.
pub fn volume_ratio(graph_aware: &VolumeStats, agnostic: &VolumeStats) -> Result<Option<f64>> {
    if graph_aware.dim != agnostic.dim {
        return Err(Error::invalid(format!(
            "volume dimensions differ: {} vs {}",
            graph_aware.dim, agnostic.dim
        )));
    }
    if graph_aware.is_degenerate() || agnostic.is_degenerate() {
        return Ok(None);
    }
    Ok(Some((graph_aware.log_volume - agnostic.log_volume).exp()))
}

/// One line of the per-timestep region dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub center: Vec<f64>,
    pub radius_sq: f64,
    pub shape_eigen_min: f64,
    pub shape_eigen_max: f64,
    pub shape_log_det: f64,
    #[serde(
        serialize_with = "serialize_log_volume",
        deserialize_with = "deserialize_log_volume"
    )]
    pub log_volume: f64,
}
