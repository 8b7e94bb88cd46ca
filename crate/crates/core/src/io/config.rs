//! Run configuration: one `key = value` pair per line, `#` starts a comment.
//!
//! ```text
//! family = poisson
//! link = log
//! coords = x,y
//! time = year
//! response = cnt
//! covariates = elevation
//! n_parents = 10
//! fixed.phi = 0.5
//! init.tau = 0.2
//! ```

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceFamily, CovarianceSpec};
use crate::error::{Error, Result};
use crate::family::{Family, Link};
use crate::graph::DistanceMetric;
use crate::laplace::{FitOptions, InnerOptions};
use crate::model::ModelSpec;
use crate::optim::BfgsOptions;
use crate::params::ParameterSet;

/// Input column names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Columns {
    pub coords: Vec<String>,
    pub time: String,
    pub response: String,
    pub covariates: Vec<String>,
}

impl Default for Columns {
    fn default() -> Self {
        Columns {
            coords: vec!["x".into(), "y".into()],
            time: "time".into(),
            response: "response".into(),
            covariates: Vec::new(),
        }
    }
}

/// Where reference locations come from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    /// Distinct observed locations.
    #[default]
    Observed,
    /// A CSV file with the configured coordinate columns.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub family: Family,
    pub link: Link,
    pub n_parents: usize,
    pub metric: DistanceMetric,
    pub covariance: CovarianceSpec,
    pub columns: Columns,
    pub reference: ReferenceSource,
    /// Extra times past the last observed one used by default in prediction.
    pub forecast: usize,
    pub seed: u64,
    pub n_sim: usize,
    pub inner: InnerOptions,
    pub outer: BfgsOptions,
    pub init: BTreeMap<String, f64>,
    pub fixed: BTreeMap<String, f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = ModelSpec::new(Family::Gaussian, Link::Identity);
        RunConfig {
            family: spec.family,
            link: spec.link,
            n_parents: spec.n_parents,
            metric: spec.metric,
            covariance: spec.covariance,
            columns: Columns::default(),
            reference: ReferenceSource::Observed,
            forecast: 0,
            seed: 1,
            n_sim: crate::residuals::DEFAULT_N_SIM,
            inner: InnerOptions::default(),
            outer: BfgsOptions::default(),
            init: BTreeMap::new(),
            fixed: BTreeMap::new(),
        }
    }
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut link = None;
        let mut nu = None;
        let mut cov_name = None;
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::Config(format!("line {}: {msg}", lineno + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| at(format!("expected 'key = value', got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(at(format!("duplicate key '{key}'")));
            }
            let num = |v: &str| v.parse::<f64>().map_err(|_| at(format!("'{key}' expects a number, got '{v}'")));
            let int = |v: &str| v.parse::<u64>().map_err(|_| at(format!("'{key}' expects a non-negative integer, got '{v}'")));
            match key {
                "family" => cfg.family = Family::parse(value).map_err(|e| at(e.to_string()))?,
                "link" => link = Some(Link::parse(value).map_err(|e| at(e.to_string()))?),
                "n_parents" => cfg.n_parents = int(value)? as usize,
                "metric" => cfg.metric = DistanceMetric::parse(value).map_err(|e| at(e.to_string()))?,
                "covariance" => cov_name = Some(value.to_string()),
                "nu" => nu = Some(num(value)?),
                "coords" => cfg.columns.coords = list(value),
                "time" => cfg.columns.time = value.to_string(),
                "response" => cfg.columns.response = value.to_string(),
                "covariates" => cfg.columns.covariates = list(value),
                "reference" => {
                    cfg.reference = if value == "observed" {
                        ReferenceSource::Observed
                    } else {
                        ReferenceSource::File(PathBuf::from(value))
                    }
                }
                "forecast" => cfg.forecast = int(value)? as usize,
                "seed" => cfg.seed = int(value)?,
                "n_sim" => cfg.n_sim = int(value)? as usize,
                "inner.grad_tol" => cfg.inner.grad_tol = num(value)?,
                "inner.max_iter" => cfg.inner.max_iter = int(value)? as usize,
                "outer.max_iter" => cfg.outer.max_iter = int(value)? as usize,
                "outer.rel_tol" => cfg.outer.rel_tol = num(value)?,
                "outer.grad_tol" => cfg.outer.grad_tol = num(value)?,
                _ => {
                    if let Some(name) = key.strip_prefix("init.") {
                        cfg.init.insert(name.to_string(), num(value)?);
                    } else if let Some(name) = key.strip_prefix("fixed.") {
                        cfg.fixed.insert(name.to_string(), num(value)?);
                    } else {
                        return Err(at(format!("unknown key '{key}'")));
                    }
                }
            }
        }
        cfg.link = link.unwrap_or_else(|| cfg.family.default_link());
        cfg.covariance = match (cov_name.as_deref(), nu) {
            (None | Some("exponential"), None) => CovarianceSpec::exponential(),
            (None | Some("exponential"), Some(_)) => return Err(Error::Config("'nu' applies only to the matern covariance".into())),
            (Some("matern"), Some(nu)) => CovarianceSpec::matern(nu).map_err(|e| Error::Config(e.to_string()))?,
            (Some("matern"), None) => return Err(Error::Config("the matern covariance needs 'nu'".into())),
            (Some(other), _) => return Err(Error::Config(format!("unknown covariance '{other}'"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.n_parents == 0 {
            return Err(Error::Config("n_parents must be at least 1".into()));
        }
        if self.columns.coords.is_empty() {
            return Err(Error::Config("at least one coordinate column is required".into()));
        }
        for name in self.init.keys().chain(self.fixed.keys()) {
            if self.init.contains_key(name) && self.fixed.contains_key(name) {
                return Err(Error::Config(format!("parameter '{name}' is both initialised and fixed")));
            }
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back an equal configuration.
    pub fn to_text(&self) -> String {
        let mut out = vec![
            format!("family = {}", self.family.name()),
            format!("link = {}", self.link.name()),
            format!("n_parents = {}", self.n_parents),
            format!("metric = {}", self.metric.name()),
            format!("covariance = {}", self.covariance.name()),
        ];
        if self.covariance.family == CovarianceFamily::Matern {
            out.push(format!("nu = {}", self.covariance.nu));
        }
        out.push(format!("coords = {}", self.columns.coords.join(",")));
        out.push(format!("time = {}", self.columns.time));
        out.push(format!("response = {}", self.columns.response));
        if !self.columns.covariates.is_empty() {
            out.push(format!("covariates = {}", self.columns.covariates.join(",")));
        }
        if let ReferenceSource::File(p) = &self.reference {
            out.push(format!("reference = {}", p.display()));
        }
        out.push(format!("forecast = {}", self.forecast));
        out.push(format!("seed = {}", self.seed));
        out.push(format!("n_sim = {}", self.n_sim));
        out.push(format!("inner.grad_tol = {}", self.inner.grad_tol));
        out.push(format!("inner.max_iter = {}", self.inner.max_iter));
        out.push(format!("outer.max_iter = {}", self.outer.max_iter));
        out.push(format!("outer.rel_tol = {}", self.outer.rel_tol));
        out.push(format!("outer.grad_tol = {}", self.outer.grad_tol));
        out.extend(self.init.iter().map(|(k, v)| format!("init.{k} = {v}")));
        out.extend(self.fixed.iter().map(|(k, v)| format!("fixed.{k} = {v}")));
        out.join("\n") + "\n"
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec::new(self.family, self.link)
            .with_n_parents(self.n_parents)
            .with_metric(self.metric)
            .with_covariance(self.covariance)
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            inner: self.inner,
            outer: self.outer,
            standard_errors: true,
        }
    }

    /// Applies `init.*` and `fixed.*` entries to default starting values.
    pub fn apply_overrides(&self, params: &mut ParameterSet) -> Result<()> {
        for (name, &v) in &self.init {
            if params.index_of(name).is_none() {
                return Err(Error::Config(format!("unknown parameter 'init.{name}'; expected one of {:?}", params.names())));
            }
            params.set(name, v)?;
        }
        for (name, &v) in &self.fixed {
            if params.index_of(name).is_none() {
                return Err(Error::Config(format!("unknown parameter 'fixed.{name}'; expected one of {:?}", params.names())));
            }
            params.fix(name, v)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let text = "# bird counts\nfamily = compois\ncoords = lon, lat\ntime = year\nresponse = cnt\n\
                    covariates = elev\nn_parents = 8\ncovariance = matern\nnu = 1.5\nfixed.phi = 0.5\ninit.tau = 0.2\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.family, Family::Compois);
        assert_eq!(cfg.link, Link::Log);
        assert_eq!(cfg.columns.coords, vec!["lon", "lat"]);
        assert_eq!(cfg.covariance.nu, 1.5);
        assert_eq!(cfg.fixed["phi"], 0.5);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(RunConfig::parse(&RunConfig::default().to_text()).unwrap(), RunConfig::default());
    }

    #[test]
    fn rejects_unknown_and_malformed_keys() {
        for bad in ["famliy = poisson", "n_parents = -3", "n_parents", "family = tweedie", "seed = 1\nseed = 2", "nu = 1.5", "covariance = matern"] {
            assert!(matches!(RunConfig::parse(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn overrides_check_parameter_names() {
        let cfg = RunConfig::parse("family = poisson\nfixed.sd = 1").unwrap();
        let mut p = ParameterSet::new(Family::Poisson, &[]);
        assert!(cfg.apply_overrides(&mut p).is_err());
        let cfg = RunConfig::parse("family = poisson\nfixed.phi = 0.3\ninit.tau = 2").unwrap();
        cfg.apply_overrides(&mut p).unwrap();
        assert!(p.get("phi").unwrap().fixed);
        assert_eq!(p.get("tau").unwrap().value, 2.0);
    }
}
