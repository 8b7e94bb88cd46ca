//! Graph-calibrated exponential and Matérn covariance.
//!
//! The covariance between two locations at distance `d` is
//! `(k_cal * tau)^2 * rho_tau * M_nu(d / (dbar * rho_tau))`, where `M_nu` is the
//! unit Matérn correlation (`exp(-x)` when `nu = 0.5`). The constants `k_cal`,
//! `rho_tau` and `dbar` come from the persistent graph. None of them depend on
//! `tau`, so kriging weights and correlation deficits are computed once per
//! graph and every variance is rescaled by `tau^2` afterwards.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::graph::{mean_edge_distance, DistanceMetric, Location, NeighbourDag, ReferenceSet};

/// Diagonal jitter, relative to the marginal variance, added once before an
/// SPD solve is declared singular.
pub const JITTER: f64 = 1e-10;

/// Largest negative conditional variance (relative) that is clamped to zero.
pub const CLAMP_TOLERANCE: f64 = 1e-10;

/// Deficits at or below this are treated as coincident geometry.
const ZERO_DEFICIT: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceFamily {
    Exponential,
    Matern,
}

/// Covariance family with its (always fixed) smoothness.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub family: CovarianceFamily,
    pub nu: f64,
}

impl Default for CovarianceSpec {
    fn default() -> Self {
        CovarianceSpec::exponential()
    }
}

impl CovarianceSpec {
    pub fn exponential() -> Self {
        CovarianceSpec {
            family: CovarianceFamily::Exponential,
            nu: 0.5,
        }
    }

    pub fn matern(nu: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::invalid(format!("Matérn smoothness must be positive, got {nu}")));
        }
        Ok(CovarianceSpec {
            family: CovarianceFamily::Matern,
            nu,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            CovarianceFamily::Exponential if self.nu != 0.5 => Err(Error::invalid(
                "the exponential covariance has smoothness 0.5",
            )),
            _ if !(self.nu > 0.0 && self.nu.is_finite()) => {
                Err(Error::invalid("smoothness must be positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.family {
            CovarianceFamily::Exponential => "exponential",
            CovarianceFamily::Matern => "matern",
        }
    }

    /// Unit-variance correlation at distance `d` for the given range.
    pub fn correlation(&self, d: f64, range: f64) -> f64 {
        let x = d / range;
        match self.family {
            CovarianceFamily::Exponential => (-x).exp(),
            CovarianceFamily::Matern => matern_correlation(x, self.nu),
        }
    }
}

/// Unit Matérn correlation `2^(1-nu) / Gamma(nu) * x^nu * K_nu(x)`.
pub fn matern_correlation(x: f64, nu: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if nu == 0.5 {
        return (-x).exp();
    }
    if nu == 1.5 {
        return (1.0 + x) * (-x).exp();
    }
    if nu == 2.5 {
        return (1.0 + x + x * x / 3.0) * (-x).exp();
    }
    if x > 700.0 {
        return 0.0;
    }
    // x^nu K_nu(x) e^x, integrated with the exponent shifted to avoid underflow
    let scaled = bessel_k_scaled(nu, x);
    let log_pref = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * x.ln() - x;
    (log_pref.exp() * scaled).min(1.0)
}

/// `exp(x) * K_nu(x)` via the integral `int_0^inf exp(-x (cosh t - 1)) cosh(nu t) dt`.
///
/// The trapezoid rule converges geometrically for this analytic integrand.
fn bessel_k_scaled(nu: f64, x: f64) -> f64 {
    let h: f64 = 0.01;
    let mut sum: f64 = 0.5;
    let mut t: f64 = h;
    loop {
        let v = (-x * (t.cosh() - 1.0) + nu * t).exp() * 0.5 * (1.0 + (-2.0 * nu * t).exp());
        sum += v;
        if v < 1e-17 * sum || t > 60.0 {
            break;
        }
        t += h;
    }
    sum * h
}

/// Graph-derived constants of the covariance function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceCalibration {
    /// Scaling factor making `tau^2` the average kriging variance.
    pub k_cal: f64,
    /// Internal range multiplier.
    pub rho_tau: f64,
    /// Mean persistent edge length.
    pub mean_edge_distance: f64,
}

impl CovarianceCalibration {
    /// Marginal spatial variance `(k_cal * tau)^2 * rho_tau`.
    pub fn marginal_variance(&self, tau: f64) -> f64 {
        (self.k_cal * tau).powi(2) * self.rho_tau
    }

    /// Distance scale of the correlation function, `dbar * rho_tau`.
    pub fn range(&self) -> f64 {
        self.mean_edge_distance * self.rho_tau
    }
}

/// Covariance between two points at distance `d`.
pub fn covariance(
    d: f64,
    spec: &CovarianceSpec,
    cal: &CovarianceCalibration,
    tau: f64,
) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::invalid(format!("distance must be non-negative, got {d}")));
    }
    Ok(cal.marginal_variance(tau) * spec.correlation(d, cal.range()))
}

/// Unit-variance kriging of one node on its parents.
///
/// `weights` are `c' Sigma^{-1}` and `deficit` is `1 - r' R^{-1} r`; both are
/// invariant to the variance scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitKriging {
    pub parents: Vec<usize>,
    pub weights: Vec<f64>,
    pub deficit: f64,
}

impl UnitKriging {
    pub fn root() -> Self {
        UnitKriging {
            parents: Vec::new(),
            weights: Vec::new(),
            deficit: 1.0,
        }
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// The scaled kriging system of a single child on its parents.
#[derive(Clone, Debug, PartialEq)]
pub struct KrigingSystem {
    pub weights: Vec<f64>,
    pub cond_var: f64,
    pub cross_cov: Vec<f64>,
    pub parent_cov: DMatrix<f64>,
}

fn spd_solve(mut m: DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.solve(rhs));
    }
    let scale = (0..m.nrows()).map(|i| m[(i, i)]).fold(0.0, f64::max);
    for i in 0..m.nrows() {
        m[(i, i)] += JITTER * scale;
    }
    m.cholesky()
        .map(|ch| ch.solve(rhs))
        .ok_or_else(|| Error::Singular(what.to_string()))
}

/// Kriging weights and deficit at unit variance from explicit coordinates.
pub fn unit_kriging(
    child: &[f64],
    parents: &[&[f64]],
    metric: DistanceMetric,
    spec: &CovarianceSpec,
    range: f64,
) -> Result<(Vec<f64>, f64)> {
    let k = parents.len();
    if k == 0 {
        return Ok((Vec::new(), 1.0));
    }
    let r = DVector::from_fn(k, |i, _| spec.correlation(metric.distance(child, parents[i]), range));
    let big_r = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else {
            spec.correlation(metric.distance(parents[i], parents[j]), range)
        }
    });
    let w = spd_solve(big_r, &r, "parent correlation matrix")?;
    let mut deficit = 1.0 - r.dot(&w);
    if deficit < 0.0 {
        if deficit < -CLAMP_TOLERANCE {
            return Err(Error::Singular(format!(
                "negative conditional variance {deficit:e}"
            )));
        }
        deficit = 0.0;
    }
    Ok((w.iter().copied().collect(), deficit))
}

/// Kriging system for a child location given parent locations.
pub fn kriging_system(
    child: &Location,
    parents: &[Location],
    metric: DistanceMetric,
    spec: &CovarianceSpec,
    cal: &CovarianceCalibration,
    tau: f64,
) -> Result<KrigingSystem> {
    if parents.is_empty() {
        return Err(Error::invalid("kriging needs at least one parent"));
    }
    let pcoords: Vec<&[f64]> = parents.iter().map(|p| p.coords.as_slice()).collect();
    let (weights, deficit) = unit_kriging(&child.coords, &pcoords, metric, spec, cal.range())?;
    let s2 = cal.marginal_variance(tau);
    let range = cal.range();
    let cross_cov = pcoords
        .iter()
        .map(|p| s2 * spec.correlation(metric.distance(&child.coords, p), range))
        .collect();
    let k = parents.len();
    let parent_cov = DMatrix::from_fn(k, k, |i, j| {
        s2 * spec.correlation(metric.distance(pcoords[i], pcoords[j]), range)
    });
    Ok(KrigingSystem {
        weights,
        cond_var: s2 * deficit,
        cross_cov,
        parent_cov,
    })
}

/// Unit kriging of every persistent node on its parents at the given range.
pub fn persistent_kriging(
    dag: &NeighbourDag,
    refs: &ReferenceSet,
    metric: DistanceMetric,
    spec: &CovarianceSpec,
    range: f64,
) -> Result<Vec<UnitKriging>> {
    (0..refs.len())
        .map(|i| {
            let parents = dag.parents(i);
            let pcoords: Vec<&[f64]> = parents.iter().map(|&p| refs.get(p).coords.as_slice()).collect();
            let (weights, deficit) = unit_kriging(&refs.get(i).coords, &pcoords, metric, spec, range)?;
            Ok(UnitKriging {
                parents: parents.to_vec(),
                weights,
                deficit,
            })
        })
        .collect()
}

/// `k_cal = 1 / sqrt(mean deficit)`, ignoring root and coincident nodes.
pub fn k_cal_from_deficits(deficits: &[f64]) -> Result<f64> {
    let used: Vec<f64> = deficits.iter().copied().filter(|&a| a > ZERO_DEFICIT).collect();
    if used.is_empty() {
        return Err(Error::DegenerateGraph(
            "no persistent node carries kriging variance".to_string(),
        ));
    }
    let mean = used.iter().sum::<f64>() / used.len() as f64;
    Ok(mean.recip().sqrt())
}

/// Calibrates `k_cal`, `rho_tau` and `dbar` from the persistent graph.
///
/// 1. With `rho_tau = 1`, `k_cal` makes the mean kriging variance over the
///    persistent nodes equal to `tau^2`.
/// 2. `rho_tau` then sets the marginal variance equal to the `rho_tau = 1`
///    kriging variance of the first node given the next `n_parents` nodes.
pub fn calibrate(
    dag: &NeighbourDag,
    refs: &ReferenceSet,
    metric: DistanceMetric,
    spec: &CovarianceSpec,
) -> Result<CovarianceCalibration> {
    spec.validate()?;
    let dbar = mean_edge_distance(dag, refs, metric)?.mean_edge_distance;
    let unit = persistent_kriging(dag, refs, metric, spec, dbar)?;
    let deficits: Vec<f64> = unit.iter().skip(1).map(|u| u.deficit).collect();
    let k_cal = k_cal_from_deficits(&deficits)?;

    let head_end = (dag.n_parents() + 1).min(refs.len());
    let head: Vec<&[f64]> = (1..head_end).map(|j| refs.get(j).coords.as_slice()).collect();
    let (_, head_deficit) = unit_kriging(&refs.get(0).coords, &head, metric, spec, dbar)?;
    if head_deficit <= ZERO_DEFICIT {
        return Err(Error::DegenerateGraph(
            "first reference node is perfectly predicted by its successors".to_string(),
        ));
    }
    Ok(CovarianceCalibration {
        k_cal,
        rho_tau: head_deficit,
        mean_edge_distance: dbar,
    })
}
