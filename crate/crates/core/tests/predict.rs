mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stnngp::data::{Observation, SpatioTemporalDataset};
use stnngp::family::{Family, Link};
use stnngp::graph::{order_locations, DistanceMetric, Location};
use stnngp::laplace::{fit, FitOptions, FitResult};
use stnngp::model::{Model, ModelSpec, SpaceTimePoint};
use stnngp::params::ParameterSet;
use stnngp::predict::{predict, predict_w, PredictOptions};
use stnngp::simulate::{design_dataset, simulate, simulate_effects};

fn fixed(mut p: ParameterSet) -> ParameterSet {
    for i in 0..p.len() {
        p.params[i].fixed = true;
    }
    p
}

fn fixed_fit(model: &Model, params: &ParameterSet) -> FitResult {
    fit(model, &fixed(params.clone()), &FitOptions::default()).unwrap()
}

fn held() -> PredictOptions {
    PredictOptions { hold_fitted: true, ..Default::default() }
}

fn noisy(t: usize, i: usize) -> f64 {
    ((t * 7 + i * 3) % 5) as f64 - 2.0
}

#[test]
fn fitted_points_are_copied_exactly() {
    let (model, locs) = full_conditioning_model(8, 3, 1, noisy);
    let init = gaussian_params(1.0, 0.0, 0.5, 1.0, 1.0);
    let f = fit(&model, &init, &FitOptions::default()).unwrap();
    let points: Vec<SpaceTimePoint> = vec![
        SpaceTimePoint { location: locs[3].clone(), time: 1 },
        SpaceTimePoint { location: Location::xy(0.123, 0.456), time: 2 },
        SpaceTimePoint { location: locs[0].clone(), time: 2 },
    ];
    for opts in [held(), PredictOptions::default()] {
        let w = predict_w(&model, &f, &points, &opts).unwrap();
        for (k, p) in points.iter().enumerate() {
            if let Some(e) = model.effect_at(&p.location, p.time) {
                let j = model.layout().index(e);
                assert_eq!(w[k].0.to_bits(), f.modes[j].to_bits());
                assert_eq!(w[k].1.to_bits(), f.mode_se[j].to_bits());
            }
        }
        assert!(w[1].1 > 0.0);
    }
}

#[test]
fn first_time_site_matches_dense_kriging() {
    let (model, locs) = full_conditioning_model(9, 2, 2, noisy);
    let params = gaussian_params(0.5, 0.4, 0.6, 0.8, 1.3);
    let f = fixed_fit(&model, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sites: Vec<Location> = (0..5).map(|_| Location::xy(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))).collect();
    let points: Vec<SpaceTimePoint> = sites.iter().map(|l| SpaceTimePoint { location: l.clone(), time: 0 }).collect();
    let w = predict_w(&model, &f, &points, &held()).unwrap();

    let cal = &model.process.calibration;
    let spec = &model.spec.covariance;
    let s2 = cal.marginal_variance(1.3);
    let sigma = spatial_cov(&locs, cal, spec, 1.3);
    let si = sigma.clone().try_inverse().unwrap();
    let eps0 = f.modes[model.layout().eps(0)];
    let w0 = DVector::from_fn(locs.len(), |i, _| f.modes[model.layout().node(0, i)] - eps0);
    for (k, l) in sites.iter().enumerate() {
        let c = DVector::from_fn(locs.len(), |i, _| {
            s2 * spec.correlation(DistanceMetric::Euclidean.distance(&l.coords, &locs[i].coords), cal.range())
        });
        let mean = eps0 + (c.transpose() * &si * &w0)[0];
        let var = s2 - (c.transpose() * &si * &c)[0];
        assert!((w[k].0 - mean).abs() < 1e-6, "{} vs {mean}", w[k].0);
        assert!((w[k].1 - var.sqrt()).abs() < 1e-6, "{} vs {}", w[k].1, var.sqrt());
    }
}

#[test]
fn forecasts_follow_the_mean_function() {
    let (model, locs) = full_conditioning_model(6, 4, 4, noisy);
    let (mu, phi) = (0.7, 0.45);
    let params = gaussian_params(0.5, mu, phi, 0.8, 1.0);
    let f = fixed_fit(&model, &params);
    let layout = model.layout();
    let eps_t = f.modes[layout.eps(3)];
    let aug = model.augmented(6, &[]).unwrap();
    let inn = aug.process.innovations(&params.process()).unwrap();
    let mut u = vec![0.0; aug.n_effects()];
    let mut update = vec![true; aug.n_effects()];
    for idx in 0..model.n_effects() {
        let j = aug.layout().index(layout.effect(idx));
        u[j] = f.modes[idx];
        update[j] = false;
    }
    inn.fill_conditional_means(&mut u, &update);
    let e4 = u[aug.layout().eps(4)];
    assert!((e4 - (mu + phi * (eps_t - mu))).abs() < 1e-8);
    assert!((u[aug.layout().eps(5)] - (mu + phi * (e4 - mu))).abs() < 1e-8);

    // The root reference carries its own deviation forward with the same coefficient.
    let w_prev = f.modes[layout.node(3, 0)];
    let pts = [SpaceTimePoint { location: locs[0].clone(), time: 4 }];
    let w = predict_w(&model, &f, &pts, &held()).unwrap();
    assert!((w[0].0 - (e4 + phi * (w_prev - eps_t))).abs() < 1e-8);
}

#[test]
fn prediction_standard_errors_scale_with_tau() {
    let (model, _) = full_conditioning_model(10, 2, 5, noisy);
    let far = [
        SpaceTimePoint { location: Location::xy(0.51, 0.49), time: 0 },
        SpaceTimePoint { location: Location::xy(2.0, 2.0), time: 0 },
    ];
    let se = |tau: f64| {
        let f = fixed_fit(&model, &gaussian_params(0.5, 0.0, 0.5, 1.0, tau));
        predict_w(&model, &f, &far, &held()).unwrap()
    };
    let (a, b) = (se(1.0), se(2.5));
    for k in 0..2 {
        assert!((b[k].1 / a[k].1 - 2.5).abs() < 1e-9);
    }
}

#[test]
fn parameter_uncertainty_widens_intervals() {
    let (model, _) = full_conditioning_model(10, 4, 6, noisy);
    let f = fit(&model, &gaussian_params(1.0, 0.0, 0.5, 1.0, 1.0), &FitOptions::default()).unwrap();
    let pts = [SpaceTimePoint { location: Location::xy(0.3, 0.3), time: 4 }, SpaceTimePoint { location: Location::xy(0.9, 0.1), time: 2 }];
    let h = predict_w(&model, &f, &pts, &held()).unwrap();
    let p = predict_w(&model, &f, &pts, &PredictOptions::default()).unwrap();
    for k in 0..2 {
        assert!(p[k].1 > h[k].1, "{} vs {}", p[k].1, h[k].1);
        assert!((p[k].0 - h[k].0).abs() < 1e-6);
    }
}

#[test]
fn poisson_records_use_the_delta_method() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let refs = order_locations(random_locations(12, &mut rng)).unwrap();
    let mut obs = Vec::new();
    for t in 0..3 {
        for l in refs.locations() {
            obs.push(Observation { location: l.clone(), time: t, response: f64::from(rng.random_range(0..9u8)), covariates: vec![] });
        }
    }
    let data = SpatioTemporalDataset::new(obs, vec![], 3);
    let model = Model::build(ModelSpec::new(Family::Poisson, Link::Log).with_n_parents(5), refs, &data, 3, &[]).unwrap();
    let mut init = ParameterSet::new(Family::Poisson, &[]);
    init.set("mu", 1.2).unwrap();
    init.set("sigma", 0.3).unwrap();
    init.set("tau", 0.4).unwrap();
    let f = fit(&model, &init, &FitOptions::default()).unwrap();
    let pts = [SpaceTimePoint { location: Location::xy(0.5, 0.5), time: 3 }];
    let r = &predict(&model, &f, &pts, None, &PredictOptions::default()).unwrap()[0];
    assert_eq!(r.linear, r.w);
    let v = r.linear_se * r.linear_se;
    assert!((r.response - r.linear.exp() * (1.0 + 0.5 * v)).abs() < 1e-12);
    assert!(r.response_se > 0.0);
}

#[test]
fn conditional_simulation_keeps_the_modes() {
    let (model, _) = full_conditioning_model(6, 3, 8, noisy);
    let f = fixed_fit(&model, &gaussian_params(0.5, 0.0, 0.5, 1.0, 1.0));
    let mut a = ChaCha8Rng::seed_from_u64(1);
    let mut b = ChaCha8Rng::seed_from_u64(1);
    let s1 = simulate(&model, &f, true, &mut a).unwrap();
    let s2 = simulate(&model, &f, true, &mut b).unwrap();
    assert_eq!(s1, s2);
    assert_eq!(s1.effects, f.modes);
    let u = simulate(&model, &f, false, &mut a).unwrap();
    assert_ne!(u.effects, f.modes);
}

#[test]
fn degenerate_temporal_chain_sits_at_its_mean() {
    let (model, _) = full_conditioning_model(5, 6, 9, noisy);
    let params = gaussian_params(0.5, 2.5, 0.0, 1e-9, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let u = simulate_effects(&model, &params, &mut rng).unwrap();
    for t in 0..6 {
        assert!((u[model.layout().eps(t)] - 2.5).abs() < 1e-6);
    }
}

#[test]
fn unconditional_field_covariance_converges() {
    let n = 6;
    let nt = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let refs = order_locations(random_locations(n, &mut rng)).unwrap();
    let locs = refs.locations().to_vec();
    let data = design_dataset(&grid_points(&locs, nt), nt);
    let model = Model::build(ModelSpec::new(Family::Gaussian, Link::Identity).with_n_parents(n), refs, &data, nt, &[]).unwrap();
    let params = gaussian_params(1.0, 0.0, 0.6, 0.7, 1.1);
    let exact = dense_effect_cov(&locs, &model.process.calibration, &model.spec.covariance, nt, &params.process());
    let dim = model.n_effects();
    let err = |draws: usize, rng: &mut ChaCha8Rng| {
        let mut acc = DMatrix::<f64>::zeros(dim, dim);
        for _ in 0..draws {
            let u = DVector::from_vec(simulate_effects(&model, &params, rng).unwrap());
            acc += &u * u.transpose();
        }
        ((acc / draws as f64) - &exact).norm() / exact.norm()
    };
    let small = err(500, &mut rng);
    let large = err(20_000, &mut rng);
    assert!(large < 0.05, "{large}");
    assert!(large < small, "{large} vs {small}");
}
