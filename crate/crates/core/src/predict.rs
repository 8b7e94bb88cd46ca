//! Prediction of random effects, linear predictors and response means at
//! arbitrary space-time points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::Link;
use crate::laplace::{FitResult, InnerOptions, LaplaceEngine};
use crate::model::{Model, SpaceTimePoint};
use crate::optim::fd_step;

/// Predictions at one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub point: SpaceTimePoint,
    pub w: f64,
    pub w_se: f64,
    pub linear: f64,
    pub linear_se: f64,
    pub response: f64,
    pub response_se: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PredictOptions {
    /// Keep the fitted effects fixed and take uncertainty from the new effects alone.
    pub hold_fitted: bool,
    pub inner: InnerOptions,
}

/// Mode and standard error of the random effect at each point.
pub fn predict_w(model: &Model, fit: &FitResult, points: &[SpaceTimePoint], opts: &PredictOptions) -> Result<Vec<(f64, f64)>> {
    if fit.modes.len() != model.n_effects() {
        return Err(Error::invalid("fit does not belong to this model"));
    }
    let n_times = points.iter().map(|p| p.time + 1).max().unwrap_or(0).max(model.n_times());
    let aug = model.augmented(n_times, points)?;
    let engine = LaplaceEngine::new(&aug)?;
    let n = aug.n_effects();
    let mut old_of_new: Vec<Option<usize>> = vec![None; n];
    for idx in 0..model.n_effects() {
        old_of_new[aug.layout().index(model.layout().effect(idx))] = Some(idx);
    }
    let is_new: Vec<bool> = old_of_new.iter().map(Option::is_none).collect();
    let inn = aug.process.innovations(&fit.params.process())?;
    let mut u = vec![0.0; n];
    for (j, o) in old_of_new.iter().enumerate() {
        if let Some(i) = o {
            u[j] = fit.modes[*i];
        }
    }
    inn.fill_conditional_means(&mut u, &is_new);

    let new_idx: Vec<usize> = (0..n).filter(|&j| is_new[j]).collect();
    let mut var = vec![0.0; n];
    if !new_idx.is_empty() {
        if opts.hold_fitted {
            let h = engine.hessian(&fit.params, &u)?;
            let sub = h.submatrix(&new_idx);
            let ch = sub.cholesky().map_err(Error::SaddleAtMode)?;
            for (a, v) in ch.inverse_diagonal().into_iter().enumerate() {
                var[new_idx[a]] = v;
            }
        } else {
            let sol = engine.inner_optimize(&fit.params, &u, &opts.inner)?;
            for &j in &new_idx {
                u[j] = sol.u[j];
            }
            let diag = sol.cholesky.inverse_diagonal();
            let k = fit.free.len();
            let cov_ok = fit.covariance.iter().flatten().all(|v| v.is_finite());
            let mut jac: Vec<Vec<f64>> = Vec::new();
            if k > 0 && cov_ok {
                let x = fit.params.free_unconstrained();
                for a in 0..k {
                    let h = fd_step(x[a]);
                    let mut xp = x.clone();
                    xp[a] = x[a] + h;
                    let gp = engine.joint_gradient(&fit.params.with_free_unconstrained(&xp), &sol.u)?;
                    xp[a] = x[a] - h;
                    let gm = engine.joint_gradient(&fit.params.with_free_unconstrained(&xp), &sol.u)?;
                    let mut d: Vec<f64> = gp.iter().zip(&gm).map(|(p, m)| -(p - m) / (2.0 * h)).collect();
                    sol.cholesky.solve_in_place(&mut d);
                    jac.push(d);
                }
            }
            for &j in &new_idx {
                let mut v = diag[j];
                for a in 0..jac.len() {
                    for b in 0..jac.len() {
                        v += jac[a][j] * fit.covariance[a][b] * jac[b][j];
                    }
                }
                var[j] = v;
            }
        }
    }
    points
        .iter()
        .map(|p| {
            let e = aug.effect_at(&p.location, p.time).expect("every point has an effect in the augmented model");
            let j = aug.layout().index(e);
            Ok(match old_of_new[j] {
                Some(i) => (fit.modes[i], fit.mode_se[i]),
                None => (u[j], var[j].max(0.0).sqrt()),
            })
        })
        .collect()
}

/// `x' beta + w` and its standard error, treating `beta` and `w` as uncorrelated.
pub fn predict_linear(x: &[f64], beta: &[f64], beta_cov: &[Vec<f64>], w: f64, w_se: f64) -> Result<(f64, f64)> {
    if x.len() != beta.len() {
        return Err(Error::invalid(format!("{} covariates for {} coefficients", x.len(), beta.len())));
    }
    let lin = w + x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
    let mut var = w_se * w_se;
    for (i, xi) in x.iter().enumerate() {
        for (j, xj) in x.iter().enumerate() {
            var += xi * beta_cov[i][j] * xj;
        }
    }
    Ok((lin, var.max(0.0).sqrt()))
}

/// Second-order delta-method mean and standard error on the response scale.
pub fn predict_response(linear: f64, linear_se: f64, link: Link) -> (f64, f64) {
    if link == Link::Identity {
        return (linear, linear_se);
    }
    let v = linear_se * linear_se;
    let g = link.inv_link(linear);
    let g1 = link.d1_inv_link(linear);
    let h = link.d2_inv_link(linear);
    let mean = g + 0.5 * h * v;
    let var = g1 * g1 * v + 0.5 * h * h * v * v;
    (mean, var.sqrt())
}

/// Full prediction records. `covariates` supplies one row per point when the model has covariates.
pub fn predict(
    model: &Model,
    fit: &FitResult,
    points: &[SpaceTimePoint],
    covariates: Option<&[Vec<f64>]>,
    opts: &PredictOptions,
) -> Result<Vec<PredictionRecord>> {
    if model.n_covariates > 0 && covariates.is_none() {
        return Err(Error::invalid("the model has covariates; supply them for every prediction point"));
    }
    if let Some(c) = covariates {
        if c.len() != points.len() {
            return Err(Error::invalid("one covariate row per prediction point is required"));
        }
    }
    let w = predict_w(model, fit, points, opts)?;
    let beta = fit.params.beta();
    let bcov = fit.beta_covariance();
    points
        .iter()
        .zip(w)
        .enumerate()
        .map(|(k, (p, (w, w_se)))| {
            let x = covariates.map_or(&[][..], |c| &c[k][..]);
            let (linear, linear_se) = predict_linear(x, &beta, &bcov, w, w_se)?;
            let (response, response_se) = predict_response(linear, linear_se, model.spec.link);
            Ok(PredictionRecord {
                point: p.clone(),
                w,
                w_se,
                linear,
                linear_se,
                response,
                response_se,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn identity_link_passes_through() {
        assert_eq!(predict_response(1.2494, 0.3, Link::Identity), (1.2494, 0.3));
    }

    #[test]
    fn log_link_at_zero() {
        let (m, s) = predict_response(0.0, 0.2, Link::Log);
        assert!((m - 1.02).abs() < 1e-15);
        assert!((s * s - 0.0408).abs() < 1e-15);
    }

    #[test]
    fn linear_without_covariates_equals_w() {
        assert_eq!(predict_linear(&[], &[], &[], 2.2735, 0.219).unwrap(), (2.2735, 0.219));
        let cov = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert_eq!(predict_linear(&[1.0, 2.0], &[0.5, -1.0], &cov, 3.0, 0.4).unwrap(), (1.5, 0.4));
        assert!(predict_linear(&[1.0], &[], &[], 0.0, 0.0).is_err());
    }

    #[test]
    fn delta_mean_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &(l, v) in &[(0.3f64, 0.25f64), (2.0, 0.1), (-1.0, 0.04)] {
            let d = Normal::new(l, v.sqrt()).unwrap();
            let n = 400_000;
            let mc = (0..n).map(|_| d.sample(&mut rng).exp()).sum::<f64>() / n as f64;
            let (m, _) = predict_response(l, v.sqrt(), Link::Log);
            assert!((m - mc).abs() / mc < 0.01, "{l} {v}: {m} vs {mc}");
        }
    }
}
