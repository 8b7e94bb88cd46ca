//! Point-referenced observations in continuous space and discrete time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::Family;
use crate::graph::Location;

/// One observed response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub location: Location,
    /// Internal time index, starting at 0.
    pub time: usize,
    pub response: f64,
    pub covariates: Vec<f64>,
}

/// Observations plus the mapping from internal time indices to user time labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatioTemporalDataset {
    pub observations: Vec<Observation>,
    pub covariate_names: Vec<String>,
    /// User label of each internal time; consecutive integers.
    pub time_labels: Vec<i64>,
}

impl SpatioTemporalDataset {
    /// A dataset with times labelled `1..=n_times`.
    pub fn new(observations: Vec<Observation>, covariate_names: Vec<String>, n_times: usize) -> Self {
        SpatioTemporalDataset {
            observations,
            covariate_names,
            time_labels: (1..=n_times as i64).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn n_times(&self) -> usize {
        self.time_labels.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn dim(&self) -> Option<usize> {
        self.observations.first().map(|o| o.location.dim())
    }

    pub fn responses(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.response).collect()
    }

    /// Internal index of a user time label.
    pub fn time_index(&self, label: i64) -> Option<usize> {
        let first = *self.time_labels.first()?;
        let idx = usize::try_from(label - first).ok()?;
        (idx < self.n_times()).then_some(idx)
    }

    /// User label of an internal time, extrapolating past the last fitted time.
    pub fn time_label(&self, t: usize) -> i64 {
        self.time_labels.first().copied().unwrap_or(1) + t as i64
    }

    /// Checks dimensions, support, and covariate columns.
    pub fn validate(&self, family: Family) -> Result<()> {
        if self.time_labels.is_empty() {
            return Err(Error::invalid("dataset has no times"));
        }
        if self.time_labels.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::invalid("time labels must be consecutive integers"));
        }
        let dim = self.dim().unwrap_or(0);
        let k = self.n_covariates();
        for (row, o) in self.observations.iter().enumerate() {
            let err = |column: &str, message: String| Error::Data {
                row,
                column: column.to_string(),
                message,
            };
            if o.location.dim() != dim || dim == 0 {
                return Err(err("coordinates", format!("expected {dim} coordinates, got {}", o.location.dim())));
            }
            if o.location.coords.iter().any(|c| !c.is_finite()) {
                return Err(err("coordinates", "coordinates must be finite".to_string()));
            }
            if o.time >= self.n_times() {
                return Err(err("time", format!("time index {} outside 0..{}", o.time, self.n_times())));
            }
            family.check_support(o.response).map_err(|m| err("response", m))?;
            if o.covariates.len() != k {
                return Err(err("covariates", format!("expected {k} covariates, got {}", o.covariates.len())));
            }
            if let Some((j, _)) = o.covariates.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(err(&self.covariate_names[j], "covariate must be finite".to_string()));
            }
        }
        for (j, name) in self.covariate_names.iter().enumerate() {
            let mut vals = self.observations.iter().map(|o| o.covariates[j]);
            if let Some(v0) = vals.next() {
                if vals.all(|v| v == v0) {
                    return Err(Error::invalid(format!(
                        "covariate '{name}' is constant; the model has no intercept column"
                    )));
                }
            }
        }
        Ok(())
    }
}
