mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use stnngp::data::{Observation, SpatioTemporalDataset};
use stnngp::family::{Family, Link};
use stnngp::graph::{order_locations, Location};
use stnngp::laplace::{fit, FitOptions, InnerOptions, LaplaceEngine};
use stnngp::model::{Model, ModelSpec};
use stnngp::optim::{minimize, BfgsOptions, Objective};
use stnngp::params::ParameterSet;
use stnngp::Result;

fn noisy(seed: u64) -> impl Fn(usize, usize) -> f64 {
    move |t, i| {
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ ((t as u64) << 32) ^ i as u64);
        r.random_range(-3.0..3.0)
    }
}

#[test]
fn gaussian_laplace_equals_dense_marginal() {
    for (seed, n, nt) in [(1u64, 6usize, 3usize), (2, 8, 4), (3, 5, 5)] {
        let (model, locs) = full_conditioning_model(n, nt, seed, noisy(seed));
        let engine = LaplaceEngine::new(&model).unwrap();
        for &(sd, mu, phi, sigma, tau) in &[(0.7, 0.3, 0.5, 1.2, 0.8), (2.0, -1.0, -0.3, 0.4, 2.5), (0.3, 0.0, 0.9, 1.0, 1.0)] {
            let params = gaussian_params(sd, mu, phi, sigma, tau);
            let u0 = vec![0.0; model.n_effects()];
            let v = engine.laplace_nll(&params, &u0, &InnerOptions::default()).unwrap();
            let cov = dense_effect_cov(&locs, &model.process.calibration, &model.spec.covariance, nt, &params.process());
            let rows: Vec<usize> = (0..nt).flat_map(|t| (0..n).map(move |i| t * n + i)).collect();
            let layout = model.layout();
            assert_eq!(model.obs_slot, (0..nt).flat_map(|t| (0..n).map(move |i| layout.node(t, i))).collect::<Vec<_>>());
            let exact = dense_marginal_nll(&model.y, &rows, &cov, mu, sd);
            assert!((v.nll - exact).abs() < 1e-8, "seed {seed}: {} vs {exact}", v.nll);
        }
    }
}

/// Model with observations at references and at unobserved sites, so every row kind appears.
fn mixed_model(family: Family, link: Link, seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let refs = order_locations(random_locations(10, &mut rng)).unwrap();
    let sites = random_locations(6, &mut rng);
    let nt = 3;
    let mut obs = Vec::new();
    for t in 0..nt {
        for l in refs.locations().iter().step_by(2).chain(&sites[2 * t..2 * t + 2]) {
            let y = match family {
                Family::Gaussian => rng.random_range(-2.0..2.0),
                Family::Bernoulli => f64::from(rng.random_range(0..2u8)),
                _ => f64::from(rng.random_range(0..12u8)),
            };
            obs.push(Observation { location: l.clone(), time: t, response: y, covariates: vec![rng.random_range(-1.0..1.0)] });
        }
    }
    let data = SpatioTemporalDataset::new(obs, vec!["x".into()], nt);
    Model::build(ModelSpec::new(family, link).with_n_parents(4), refs, &data, nt, &[]).unwrap()
}

fn mixed_params(family: Family, mu: f64) -> ParameterSet {
    let mut p = ParameterSet::new(family, &["x".to_string()]);
    for (name, v) in [("mu", mu), ("phi", 0.6), ("sigma", 0.5), ("tau", 0.7), ("x", 0.3)] {
        p.set(name, v).unwrap();
    }
    for name in family.parameter_names() {
        p.set(name, 0.8).unwrap();
    }
    p
}

#[test]
fn gradient_and_hessian_match_finite_differences() {
    for (family, link, mu) in [
        (Family::Poisson, Link::Log, 1.0),
        (Family::NegativeBinomial, Link::Log, 1.0),
        (Family::Gaussian, Link::Identity, 0.0),
        (Family::Bernoulli, Link::Logit, 0.0),
        (Family::Compois, Link::Log, 1.0),
    ] {
        let model = mixed_model(family, link, 11);
        let engine = LaplaceEngine::new(&model).unwrap();
        let params = mixed_params(family, mu);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u: Vec<f64> = (0..model.n_effects()).map(|_| mu + rng.random_range(-0.5..0.5)).collect();
        let g = engine.joint_gradient(&params, &u).unwrap();
        let h = engine.hessian(&params, &u).unwrap().to_dense();
        let eps = 1e-5;
        for j in 0..u.len() {
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += eps;
            um[j] -= eps;
            let fd = (engine.joint_nll(&params, &up).unwrap() - engine.joint_nll(&params, &um).unwrap()) / (2.0 * eps);
            assert!((fd - g[j]).abs() < 1e-5 * (1.0 + g[j].abs()), "{family:?} grad {j}: {fd} vs {}", g[j]);
            let gp = engine.joint_gradient(&params, &up).unwrap();
            let gm = engine.joint_gradient(&params, &um).unwrap();
            for i in 0..u.len() {
                let fd = (gp[i] - gm[i]) / (2.0 * eps);
                assert!((fd - h[i][j]).abs() < 1e-4 * (1.0 + fd.abs()), "{family:?} hess ({i},{j}): {fd} vs {}", h[i][j]);
            }
        }
    }
}

struct JointObjective<'a, 'm> {
    engine: &'a LaplaceEngine<'m>,
    params: &'a ParameterSet,
}

impl Objective for JointObjective<'_, '_> {
    fn value(&mut self, x: &[f64]) -> Result<f64> {
        self.engine.joint_nll(self.params, x)
    }

    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        self.engine.joint_gradient(self.params, x)
    }
}

#[test]
fn poisson_mode_matches_quasi_newton_oracle() {
    let model = mixed_model(Family::Poisson, Link::Log, 21);
    let engine = LaplaceEngine::new(&model).unwrap();
    let params = mixed_params(Family::Poisson, 1.0);
    let u0 = vec![1.0; model.n_effects()];
    let sol = engine.inner_optimize(&params, &u0, &InnerOptions::default()).unwrap();
    let opts = BfgsOptions { max_iter: 5000, rel_tol: 1e-15, grad_tol: 1e-9, max_step: 2.0 };
    let oracle = minimize(&mut JointObjective { engine: &engine, params: &params }, &u0, &opts).unwrap();
    for (a, b) in sol.u.iter().zip(&oracle.x) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
    assert!((sol.joint_nll - oracle.f).abs() < 1e-9 * (1.0 + oracle.f.abs()));
}

#[test]
fn marginal_value_does_not_depend_on_the_inner_start() {
    let model = mixed_model(Family::Poisson, Link::Log, 31);
    let engine = LaplaceEngine::new(&model).unwrap();
    let params = mixed_params(Family::Poisson, 1.0);
    let opts = InnerOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = engine.laplace_nll(&params, &vec![0.0; model.n_effects()], &opts).unwrap();
    for _ in 0..4 {
        let u0: Vec<f64> = (0..model.n_effects()).map(|_| rng.random_range(-1.0..3.0)).collect();
        let v = engine.laplace_nll(&params, &u0, &opts).unwrap();
        assert!((v.nll - base.nll).abs() < 1e-8, "{} vs {}", v.nll, base.nll);
    }
    // Starting at the mode needs no Newton step.
    let again = engine.inner_optimize(&params, &base.inner.u, &opts).unwrap();
    assert_eq!(again.iterations, 0);
}

#[test]
fn gaussian_inner_problem_takes_one_newton_step() {
    let model = mixed_model(Family::Gaussian, Link::Identity, 41);
    let engine = LaplaceEngine::new(&model).unwrap();
    let params = mixed_params(Family::Gaussian, 0.0);
    let sol = engine.inner_optimize(&params, &vec![5.0; model.n_effects()], &InnerOptions { grad_tol: 1e-6, max_iter: 100 }).unwrap();
    assert_eq!(sol.iterations, 1);
}

#[test]
fn without_observations_the_joint_is_the_process_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let refs = order_locations(random_locations(7, &mut rng)).unwrap();
    let data = SpatioTemporalDataset::new(vec![], vec![], 3);
    let model = Model::build(ModelSpec::new(Family::Poisson, Link::Log).with_n_parents(3), refs, &data, 3, &[]).unwrap();
    let engine = LaplaceEngine::new(&model).unwrap();
    let params = mixed_params(Family::Poisson, 0.5);
    let mut params = ParameterSet { n_beta: 0, ..params };
    params.params.retain(|p| p.name != "x");
    let u: Vec<f64> = (0..model.n_effects()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let state = stnngp::process::RandomEffectState::from_flat(model.layout(), &u);
    let lw = stnngp::process::process_loglik(&state, &model.process, &params.process()).unwrap();
    assert!((engine.joint_nll(&params, &u).unwrap() + lw).abs() < 1e-10);
    // The Laplace value of an empty dataset is exactly zero: the prior integrates to one.
    let v = engine.laplace_nll(&params, &u, &InnerOptions::default()).unwrap();
    assert!(v.nll.abs() < 1e-8, "{}", v.nll);
}

#[test]
fn all_fixed_parameters_only_evaluate() {
    let (model, _) = full_conditioning_model(5, 3, 4, noisy(4));
    let mut params = gaussian_params(1.0, 0.2, 0.4, 0.8, 0.9);
    for name in ["sd", "mu", "phi", "sigma", "tau"] {
        let v = params.get(name).unwrap().value;
        params.fix(name, v).unwrap();
    }
    let f = fit(&model, &params, &FitOptions::default()).unwrap();
    assert_eq!(f.params, params);
    assert!(f.free.is_empty());
    assert!(f.mode_se.iter().all(|s| s.is_finite() && *s > 0.0));
    let engine = LaplaceEngine::new(&model).unwrap();
    let v = engine.laplace_nll(&params, &vec![0.0; model.n_effects()], &InnerOptions::default()).unwrap();
    assert!((f.nll - v.nll).abs() < 1e-10);
}

/// Dataset at fixed reference locations with one covariate, responses drawn independently.
fn regression_data(locs: &[Location], nt: usize, copies: usize, seed: u64) -> SpatioTemporalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xrng = ChaCha8Rng::seed_from_u64(seed + 1);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut obs = Vec::new();
    for t in 0..nt {
        for l in locs {
            let x = xrng.random_range(-1.0..1.0);
            for _ in 0..copies {
                obs.push(Observation { location: l.clone(), time: t, response: 0.5 + 2.0 * x + noise.sample(&mut rng), covariates: vec![x] });
            }
        }
    }
    SpatioTemporalDataset::new(obs, vec!["x".into()], nt)
}

fn regression_params(sd: f64, sigma: f64, tau: f64) -> ParameterSet {
    let mut p = ParameterSet::new(Family::Gaussian, &["x".to_string()]);
    p.fix("sd", sd).unwrap();
    p.fix("phi", 0.5).unwrap();
    p.fix("sigma", sigma).unwrap();
    p.fix("tau", tau).unwrap();
    p.set("mu", 0.0).unwrap();
    p.set("x", 0.0).unwrap();
    p
}

#[test]
fn fixed_covariance_standard_errors_are_gls() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let refs = order_locations(random_locations(7, &mut rng)).unwrap();
    let locs = refs.locations().to_vec();
    let nt = 3;
    let data = regression_data(&locs, nt, 1, 2);
    let model = Model::build(ModelSpec::new(Family::Gaussian, Link::Identity).with_n_parents(6), refs, &data, nt, &[]).unwrap();
    let init = regression_params(0.8, 0.6, 0.9);
    let f = fit(&model, &init, &FitOptions::default()).unwrap();
    assert!(f.converged, "{}", f.message);

    // Generalized least squares with design [1, x]: the process mean mu acts as the intercept.
    let cov = dense_effect_cov(&locs, &model.process.calibration, &model.spec.covariance, nt, &init.process());
    let n = model.n_obs();
    let nl = locs.len();
    let rows: Vec<usize> = (0..nt).flat_map(|t| (0..nl).map(move |i| t * nl + i)).collect();
    let sigma_y = DMatrix::from_fn(n, n, |a, b| cov[(rows[a], rows[b])] + if a == b { 0.64 } else { 0.0 });
    let xm = DMatrix::from_fn(n, 2, |k, c| if c == 0 { 1.0 } else { model.x[k][0] });
    let y = DVector::from_column_slice(&model.y);
    let si = sigma_y.try_inverse().unwrap();
    let info = xm.transpose() * &si * &xm;
    let vcov = info.clone().try_inverse().unwrap();
    let bhat = &vcov * xm.transpose() * &si * y;
    let mu = f.params.get("mu").unwrap().value;
    let b = f.params.get("x").unwrap().value;
    assert!((mu - bhat[0]).abs() < 1e-5 && (b - bhat[1]).abs() < 1e-5, "{mu} {b} vs {bhat}");
    let se_mu = f.se[f.params.index_of("mu").unwrap()];
    let se_b = f.se[f.params.index_of("x").unwrap()];
    assert!((se_mu / vcov[(0, 0)].sqrt() - 1.0).abs() < 1e-4, "{se_mu} vs {}", vcov[(0, 0)].sqrt());
    assert!((se_b / vcov[(1, 1)].sqrt() - 1.0).abs() < 1e-4, "{se_b} vs {}", vcov[(1, 1)].sqrt());
}

#[test]
fn replicated_data_shrink_coefficient_se_by_root_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let refs = order_locations(random_locations(12, &mut rng)).unwrap();
    let locs = refs.locations().to_vec();
    let init = regression_params(1.0, 0.01, 0.01);
    let se = |copies: usize| {
        let data = regression_data(&locs, 4, copies, 6);
        let model = Model::build(ModelSpec::new(Family::Gaussian, Link::Identity).with_n_parents(5), refs.clone(), &data, 4, &[]).unwrap();
        let f = fit(&model, &init, &FitOptions::default()).unwrap();
        f.se[f.params.index_of("x").unwrap()]
    };
    let ratio = se(1) / se(2);
    assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.05, "{ratio}");
}

#[test]
fn starting_at_the_truth_stays_close() {
    let (model, _) = full_conditioning_model(10, 4, 9, noisy(9));
    let init = gaussian_params(1.5, 0.0, 0.3, 0.5, 1.0);
    let f = fit(&model, &init, &FitOptions::default()).unwrap();
    let again = fit(&model, &f.params, &FitOptions::default()).unwrap();
    assert!(again.converged);
    for (a, b) in f.params.params.iter().zip(&again.params.params) {
        assert!((a.value - b.value).abs() < 1e-3 * (1.0 + a.value.abs()), "{}: {} vs {}", a.name, a.value, b.value);
    }
    assert!(again.iterations <= 3, "{}", again.iterations);
    assert!(f.trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}
