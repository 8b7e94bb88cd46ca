//! Versioned JSON container for a fitted model.
//!
//! Version 1 holds the run configuration, the dataset with its time labels,
//! the ordered reference set, the persistent graph, and the fit (estimates,
//! standard errors, parameter covariance and random-effect modes). NaN is
//! written as `null`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SpatioTemporalDataset;
use crate::error::{Error, Result};
use crate::graph::{order_locations, NeighbourDag, ReferenceSet};
use crate::io::config::RunConfig;
use crate::io::{create, open};
use crate::laplace::FitResult;
use crate::model::{Model, ModelSpec};

pub const FORMAT: &str = "stnngp-fit";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub spec: ModelSpec,
    pub dataset: SpatioTemporalDataset,
    pub references: ReferenceSet,
    pub dag: NeighbourDag,
    pub fit: FitResult,
}

impl FitArtifact {
    pub fn new(config: &RunConfig, model: &Model, dataset: &SpatioTemporalDataset, fit: &FitResult) -> Self {
        FitArtifact {
            format: FORMAT.to_string(),
            version: VERSION,
            config: config.clone(),
            spec: model.spec,
            dataset: dataset.clone(),
            references: model.refs.clone(),
            dag: model.dag.clone(),
            fit: fit.clone(),
        }
    }

    /// Rebuilds the fitted model; fails if the stored graph does not match.
    pub fn model(&self) -> Result<Model> {
        let refs = order_locations(self.references.locations().to_vec())?;
        if refs != self.references {
            return Err(Error::invalid("stored reference set is not in canonical order"));
        }
        let model = Model::build(self.spec, refs, &self.dataset, self.dataset.n_times(), &[])?;
        if model.dag != self.dag {
            return Err(Error::invalid("stored graph does not match the reference set"));
        }
        if model.n_effects() != self.fit.modes.len() {
            return Err(Error::invalid("stored modes do not match the model"));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<FitArtifact> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("format").and_then(|v| v.as_str()) != Some(FORMAT) {
            return Err(Error::invalid("not a fit artifact"));
        }
        let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
        if found != u64::from(VERSION) {
            return Err(Error::Version {
                found: u32::try_from(found).unwrap_or(u32::MAX),
                expected: VERSION,
            });
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(create(path)?);
        f.write_all(self.to_json()?.as_bytes())
            .and_then(|_| f.write_all(b"\n"))
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<FitArtifact> {
        let mut text = String::new();
        std::io::Read::read_to_string(&mut open(path)?, &mut text).map_err(|e| Error::io(path, e))?;
        FitArtifact::from_json(&text)
    }
}
