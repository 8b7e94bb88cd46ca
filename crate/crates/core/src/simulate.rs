//! Unconditional and conditional simulation from a model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::{Observation, SpatioTemporalDataset};
use crate::error::{Error, Result};
use crate::family::simulate_response;
use crate::laplace::FitResult;
use crate::model::{Model, SpaceTimePoint};
use crate::params::ParameterSet;

/// Draws every random effect through the temporal chain and the DAG conditionals.
pub fn simulate_effects<R: Rng + ?Sized>(model: &Model, params: &ParameterSet, rng: &mut R) -> Result<Vec<f64>> {
    params.validate()?;
    let inn = model.process.innovations(&params.process())?;
    let mut u = vec![0.0; model.n_effects()];
    inn.solve_forward(&mut u, |_, var| var.sqrt() * rng.sample::<f64, _>(StandardNormal));
    Ok(u)
}

/// Draws one response per observation given the random effects `u`.
pub fn simulate_responses<R: Rng + ?Sized>(
    model: &Model,
    params: &ParameterSet,
    u: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if u.len() != model.n_effects() {
        return Err(Error::invalid("random effects do not match the model"));
    }
    let theta = params.theta();
    let eta = model.eta(&params.beta(), u);
    eta.into_iter()
        .map(|e| simulate_response(model.spec.link.inv_link(e), model.spec.family, &theta, rng))
        .collect()
}

/// One simulated replicate.
#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    pub effects: Vec<f64>,
    pub responses: Vec<f64>,
}

/// Simulates from a fit. Conditional simulation keeps the fitted modes and redraws responses only.
pub fn simulate<R: Rng + ?Sized>(model: &Model, fit: &FitResult, conditional: bool, rng: &mut R) -> Result<Simulation> {
    let effects = if conditional {
        fit.modes.clone()
    } else {
        simulate_effects(model, &fit.params, rng)?
    };
    let responses = simulate_responses(model, &fit.params, &effects, rng)?;
    Ok(Simulation { effects, responses })
}

/// Generator for replicate `index` of a run seeded with `seed`.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `n` replicates in parallel; the output does not depend on the number of threads.
pub fn simulate_replicates(model: &Model, fit: &FitResult, n: usize, conditional: bool, seed: u64) -> Result<Vec<Simulation>> {
    (0..n)
        .into_par_iter()
        .map(|i| simulate(model, fit, conditional, &mut replicate_rng(seed, i as u64)))
        .collect()
}

/// A dataset with one zero response per point, for building simulation models.
pub fn design_dataset(points: &[SpaceTimePoint], n_times: usize) -> SpatioTemporalDataset {
    let obs = points
        .iter()
        .map(|p| Observation {
            location: p.location.clone(),
            time: p.time,
            response: 0.0,
            covariates: Vec::new(),
        })
        .collect();
    SpatioTemporalDataset::new(obs, Vec::new(), n_times)
}

/// Copy of `data` with new responses.
pub fn with_responses(data: &SpatioTemporalDataset, y: &[f64]) -> SpatioTemporalDataset {
    let mut out = data.clone();
    for (o, &v) in out.observations.iter_mut().zip(y) {
        o.response = v;
    }
    out
}
