//! Model parameters, fixed flags, and the unconstrained transforms used by the optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::Family;
use crate::process::{ProcessParams, TemporalParams};

/// Map from the natural scale to the optimizer's unconstrained scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// Positive parameters: `x = ln(value)`.
    Log,
    /// Parameters in `(-1, 1)`: `x = atanh(value)`.
    Tanh,
}

impl Transform {
    pub fn to_unconstrained(&self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Log => v.ln(),
            Transform::Tanh => v.atanh(),
        }
    }

    pub fn to_natural(&self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.exp(),
            Transform::Tanh => x.tanh(),
        }
    }

    /// `d value / d x` at natural value `v`.
    pub fn derivative(&self, v: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Log => v,
            Transform::Tanh => 1.0 - v * v,
        }
    }

    fn in_domain(&self, v: f64) -> bool {
        match self {
            Transform::Identity => v.is_finite(),
            Transform::Log => v > 0.0 && v.is_finite(),
            Transform::Tanh => v.abs() < 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: f64,
    pub fixed: bool,
    pub transform: Transform,
}

/// All parameters in the order `[response..., beta..., mu, phi, sigma, tau]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub params: Vec<Parameter>,
    pub n_response: usize,
    pub n_beta: usize,
}

impl ParameterSet {
    /// Parameters with unit placeholder values.
    pub fn new(family: Family, covariate_names: &[String]) -> Self {
        let mut params = Vec::new();
        let p = |name: &str, value: f64, transform| Parameter {
            name: name.to_string(),
            value,
            fixed: false,
            transform,
        };
        for n in family.parameter_names() {
            params.push(p(n, 1.0, Transform::Log));
        }
        for n in covariate_names {
            params.push(p(n, 0.0, Transform::Identity));
        }
        params.push(p("mu", 0.0, Transform::Identity));
        params.push(p("phi", 0.5, Transform::Tanh));
        params.push(p("sigma", 1.0, Transform::Log));
        params.push(p("tau", 1.0, Transform::Log));
        ParameterSet {
            params,
            n_response: family.parameter_names().len(),
            n_beta: covariate_names.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn theta(&self) -> Vec<f64> {
        self.params[..self.n_response].iter().map(|p| p.value).collect()
    }

    pub fn beta(&self) -> Vec<f64> {
        self.params[self.n_response..self.n_response + self.n_beta].iter().map(|p| p.value).collect()
    }

    fn tail(&self, k: usize) -> f64 {
        self.params[self.n_response + self.n_beta + k].value
    }

    pub fn process(&self) -> ProcessParams {
        ProcessParams {
            temporal: TemporalParams {
                mu: self.tail(0),
                phi: self.tail(1),
                sigma: self.tail(2),
            },
            tau: self.tail(3),
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let i = self.index_of(name).ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))?;
        if !self.params[i].transform.in_domain(value) {
            return Err(Error::Config(format!("value {value} is outside the domain of '{name}'")));
        }
        self.params[i].value = value;
        Ok(())
    }

    pub fn fix(&mut self, name: &str, value: f64) -> Result<()> {
        self.set(name, value)?;
        let i = self.index_of(name).expect("checked by set");
        self.params[i].fixed = true;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.params {
            if !p.transform.in_domain(p.value) {
                return Err(Error::invalid(format!("parameter {} = {} is outside its domain", p.name, p.value)));
            }
        }
        Ok(())
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.params[i].fixed).collect()
    }

    /// Free parameters on the unconstrained scale.
    pub fn free_unconstrained(&self) -> Vec<f64> {
        self.free_indices()
            .into_iter()
            .map(|i| self.params[i].transform.to_unconstrained(self.params[i].value))
            .collect()
    }

    /// Copy with free parameters taken from the unconstrained vector `x`.
    pub fn with_free_unconstrained(&self, x: &[f64]) -> ParameterSet {
        let mut out = self.clone();
        for (&i, &xi) in self.free_indices().iter().zip(x) {
            out.params[i].value = out.params[i].transform.to_natural(xi);
        }
        out
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }
}
