//! Simulation-based probability integral transform residuals.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::FitResult;
use crate::model::Model;
use crate::simulate::{replicate_rng, simulate_replicates};

pub const DEFAULT_N_SIM: usize = 100;
pub const MIN_N_SIM: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSet {
    pub pit: Vec<f64>,
    pub n_sim: usize,
}

/// PIT values of `observed` within `sims` (one row per replicate).
///
/// Integer data use `(#{sim < y} + U (#{sim = y} + 1)) / (n_sim + 1)` with
/// `U ~ uniform(0, 1)`; continuous data use `(#{sim <= y} + 1/2) / (n_sim + 1)`.
pub fn pit_residuals<R: Rng + ?Sized>(
    observed: &[f64],
    sims: &[Vec<f64>],
    integer_valued: bool,
    rng: &mut R,
) -> Result<ResidualSet> {
    let n_sim = sims.len();
    if n_sim < MIN_N_SIM {
        return Err(Error::invalid(format!("at least {MIN_N_SIM} simulations are required, got {n_sim}")));
    }
    if let Some(bad) = sims.iter().position(|s| s.len() != observed.len()) {
        return Err(Error::invalid(format!("simulation {bad} has the wrong length")));
    }
    let denom = (n_sim + 1) as f64;
    let pit = observed
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let below = sims.iter().filter(|s| s[i] < y).count() as f64;
            if integer_valued {
                let equal = sims.iter().filter(|s| s[i] == y).count() as f64;
                let u: f64 = rng.random();
                (below + u * (equal + 1.0)) / denom
            } else {
                let at_most = sims.iter().filter(|s| s[i] <= y).count() as f64;
                (at_most + 0.5) / denom
            }
        })
        .collect();
    Ok(ResidualSet { pit, n_sim })
}

/// Conditional simulations from the fit, scored against the model's responses.
pub fn simulate_residuals(model: &Model, fit: &FitResult, n_sim: usize, seed: u64) -> Result<ResidualSet> {
    let sims: Vec<Vec<f64>> = simulate_replicates(model, fit, n_sim, true, seed)?
        .into_iter()
        .map(|s| s.responses)
        .collect();
    let mut rng = replicate_rng(seed, n_sim as u64);
    pit_residuals(&model.y, &sims, model.spec.family.is_integer_valued(), &mut rng)
}

/// One-sample Kolmogorov-Smirnov test against uniform(0, 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn ks_uniform(values: &[f64]) -> Result<KsTest> {
    if values.is_empty() {
        return Err(Error::invalid("KS test needs at least one value"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i as f64 + 1.0) / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    Ok(KsTest {
        statistic: d,
        p_value: kolmogorov_survival(lambda),
    })
}

/// `P(K > lambda)` for the Kolmogorov distribution.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = f64::from(k);
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as i64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Direction of a dispersion mismatch read from the PIT distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dispersion {
    /// PIT values pile up in the middle: the data vary less than the model.
    Under,
    /// PIT values pile up at both ends: the data vary more than the model.
    Over,
}

/// Sign of the Q-Q curvature, measured by the PIT variance against `1/12`.
pub fn dispersion_direction(pit: &[f64]) -> Dispersion {
    let n = pit.len() as f64;
    let m = pit.iter().sum::<f64>() / n;
    let var = pit.iter().map(|p| (p - m).powi(2)).sum::<f64>() / n;
    if var < 1.0 / 12.0 {
        Dispersion::Under
    } else {
        Dispersion::Over
    }
}
