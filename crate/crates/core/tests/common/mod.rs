//! Dense reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stnngp::covariance::{CovarianceCalibration, CovarianceSpec};
use stnngp::data::{Observation, SpatioTemporalDataset};
use stnngp::family::{Family, Link};
use stnngp::graph::{order_locations, DistanceMetric, Location};
use stnngp::model::{Model, ModelSpec, SpaceTimePoint};
use stnngp::params::ParameterSet;
use stnngp::process::ProcessParams;

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub fn dense_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = x.len() as f64;
    let ch = cov.clone().cholesky().expect("oracle covariance is positive definite");
    let r = x - mean;
    let z = ch.l().solve_lower_triangular(&r).unwrap();
    let logdet: f64 = ch.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    -0.5 * (n * LN_2PI + logdet + z.norm_squared())
}

pub fn spatial_cov(locs: &[Location], cal: &CovarianceCalibration, spec: &CovarianceSpec, tau: f64) -> DMatrix<f64> {
    let s2 = cal.marginal_variance(tau);
    let m = DistanceMetric::Euclidean;
    DMatrix::from_fn(locs.len(), locs.len(), |i, j| {
        s2 * spec.correlation(m.distance(&locs[i].coords, &locs[j].coords), cal.range())
    })
}

/// Covariance of `[w_1 .. w_T (node-minor), eps_1 .. eps_T]` under full conditioning.
///
/// `w_t = eps_t + z_t` with `z_1 = v_1`, `z_t = phi z_{t-1} + v_t`, `v_t` iid
/// with the spatial covariance, and `eps` a stationary AR(1) independent of `z`.
pub fn dense_effect_cov(locs: &[Location], cal: &CovarianceCalibration, spec: &CovarianceSpec, nt: usize, p: &ProcessParams) -> DMatrix<f64> {
    let n = locs.len();
    let phi = p.temporal.phi;
    let ss = spatial_cov(locs, cal, spec, p.tau);
    let v = p.temporal.sigma.powi(2) / (1.0 - phi * phi);
    let se = |t: usize, s: usize| v * phi.powi((t as i32 - s as i32).abs());
    let dim = nt * n + nt;
    let mut cov = DMatrix::zeros(dim, dim);
    for t in 0..nt {
        for s in 0..nt {
            let k: f64 = (0..=t.min(s)).map(|k| phi.powi((t - k) as i32) * phi.powi((s - k) as i32)).sum();
            for i in 0..n {
                for j in 0..n {
                    cov[(t * n + i, s * n + j)] = k * ss[(i, j)] + se(t, s);
                }
                cov[(t * n + i, nt * n + s)] = se(t, s);
                cov[(nt * n + s, t * n + i)] = se(t, s);
            }
            cov[(nt * n + t, nt * n + s)] = se(t, s);
        }
    }
    cov
}

pub fn random_locations(n: usize, rng: &mut ChaCha8Rng) -> Vec<Location> {
    (0..n)
        .map(|_| Location::xy(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
        .collect()
}

/// Gaussian/identity model with one observation per reference node and time,
/// under full conditioning. Returns the model and reference locations in model order.
pub fn full_conditioning_model(n: usize, nt: usize, seed: u64, y: impl Fn(usize, usize) -> f64) -> (Model, Vec<Location>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let refs = order_locations(random_locations(n, &mut rng)).unwrap();
    let locs = refs.locations().to_vec();
    let mut obs = Vec::new();
    for t in 0..nt {
        for (i, l) in locs.iter().enumerate() {
            obs.push(Observation { location: l.clone(), time: t, response: y(t, i), covariates: vec![] });
        }
    }
    let data = SpatioTemporalDataset::new(obs, vec![], nt);
    let spec = ModelSpec::new(Family::Gaussian, Link::Identity).with_n_parents(n);
    (Model::build(spec, refs, &data, nt, &[]).unwrap(), locs)
}

pub fn gaussian_params(sd: f64, mu: f64, phi: f64, sigma: f64, tau: f64) -> ParameterSet {
    let mut p = ParameterSet::new(Family::Gaussian, &[]);
    p.set("sd", sd).unwrap();
    p.set("mu", mu).unwrap();
    p.set("phi", phi).unwrap();
    p.set("sigma", sigma).unwrap();
    p.set("tau", tau).unwrap();
    p
}

/// Exact marginal negative log-likelihood of `y` when observation `k` sees
/// effect row `slot[k]` of the dense effect covariance plus noise.
pub fn dense_marginal_nll(y: &[f64], rows: &[usize], effect_cov: &DMatrix<f64>, mean: f64, sd: f64) -> f64 {
    let n = y.len();
    let cov = DMatrix::from_fn(n, n, |a, b| effect_cov[(rows[a], rows[b])] + if a == b { sd * sd } else { 0.0 });
    -dense_logpdf(&DVector::from_column_slice(y), &DVector::from_element(n, mean), &cov)
}

pub fn grid_points(locs: &[Location], nt: usize) -> Vec<SpaceTimePoint> {
    (0..nt)
        .flat_map(|t| locs.iter().map(move |l| SpaceTimePoint { location: l.clone(), time: t }))
        .collect()
}
