//! Response distributions and link functions.
//!
//! Every family is parameterized by its mean. The Conway-Maxwell-Poisson
//! family (`compois`) uses a `dispersion` parameter `delta = 1 / nu_cmp`, where
//! `nu_cmp` is the exponent on `y!` in the classic form
//! `P(y) ∝ lambda^y / (y!)^nu_cmp`. `delta = 1` is Poisson, `delta < 1` is
//! under-dispersed (variance ≈ `delta * mean`), and `lambda` is solved so that
//! the distribution has the requested mean.
//!
//! The negative binomial family has variance `mean + overdispersion * mean^2`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Linear predictors are clipped to this magnitude before exponentiation.
pub const ETA_CLIP: f64 = 700.0;

/// Relative size of the next term at which the CMP series stops.
pub const CMP_SERIES_TOL: f64 = 1e-12;

/// Maximum number of CMP series terms.
pub const CMP_MAX_TERMS: usize = 10_000;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Poisson,
    NegativeBinomial,
    Compois,
    Bernoulli,
}

impl Family {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "gaussian" => Family::Gaussian,
            "poisson" => Family::Poisson,
            "negative_binomial" => Family::NegativeBinomial,
            "compois" => Family::Compois,
            "bernoulli" => Family::Bernoulli,
            other => return Err(Error::Config(format!("unknown response family '{other}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Poisson => "poisson",
            Family::NegativeBinomial => "negative_binomial",
            Family::Compois => "compois",
            Family::Bernoulli => "bernoulli",
        }
    }

    /// Names of the response parameters, all strictly positive.
    pub fn parameter_names(&self) -> &'static [&'static str] {
        match self {
            Family::Gaussian => &["sd"],
            Family::NegativeBinomial => &["overdispersion"],
            Family::Compois => &["dispersion"],
            Family::Poisson | Family::Bernoulli => &[],
        }
    }

    pub fn is_integer_valued(&self) -> bool {
        !matches!(self, Family::Gaussian)
    }

    pub fn default_link(&self) -> Link {
        match self {
            Family::Gaussian => Link::Identity,
            Family::Bernoulli => Link::Logit,
            _ => Link::Log,
        }
    }

    fn check_params(&self, theta: &[f64]) -> Result<()> {
        let names = self.parameter_names();
        if theta.len() != names.len() {
            return Err(Error::invalid(format!(
                "{} expects {} response parameter(s), got {}",
                self.name(),
                names.len(),
                theta.len()
            )));
        }
        if let Some((n, v)) = names.iter().zip(theta).find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("response parameter {n} must be positive, got {v}")));
        }
        Ok(())
    }

    /// Checks that `y` lies in the support.
    pub fn check_support(&self, y: f64) -> Result<(), String> {
        if !y.is_finite() {
            return Err(format!("response {y} is not finite"));
        }
        match self {
            Family::Gaussian => Ok(()),
            Family::Bernoulli if y == 0.0 || y == 1.0 => Ok(()),
            Family::Bernoulli => Err(format!("bernoulli response must be 0 or 1, got {y}")),
            _ if y >= 0.0 && y.fract() == 0.0 => Ok(()),
            _ => Err(format!("{} response must be a non-negative integer, got {y}", self.name())),
        }
    }

    /// Whether the second derivative in the linear predictor is free of `eta`
    /// (so one Newton step solves the inner problem).
    pub fn is_quadratic(&self, link: Link) -> bool {
        matches!((self, link), (Family::Gaussian, Link::Identity))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Log,
    Logit,
}

impl Link {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "identity" => Link::Identity,
            "log" => Link::Log,
            "logit" => Link::Logit,
            other => return Err(Error::Config(format!("unknown link function '{other}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Link::Identity => "identity",
            Link::Log => "log",
            Link::Logit => "logit",
        }
    }

    pub fn link(&self, mu: f64) -> f64 {
        match self {
            Link::Identity => mu,
            Link::Log => mu.ln(),
            Link::Logit => (mu / (1.0 - mu)).ln(),
        }
    }

    pub fn inv_link(&self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Log => eta.clamp(-ETA_CLIP, ETA_CLIP).exp(),
            Link::Logit => logistic(eta.clamp(-ETA_CLIP, ETA_CLIP)),
        }
    }

    /// First derivative of the inverse link.
    pub fn d1_inv_link(&self, eta: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Log => self.inv_link(eta),
            Link::Logit => {
                let p = self.inv_link(eta);
                p * (1.0 - p)
            }
        }
    }

    /// Second derivative of the inverse link.
    pub fn d2_inv_link(&self, eta: f64) -> f64 {
        match self {
            Link::Identity => 0.0,
            Link::Log => self.inv_link(eta),
            Link::Logit => {
                let p = self.inv_link(eta);
                p * (1.0 - p) * (1.0 - 2.0 * p)
            }
        }
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn ln_factorial(y: f64) -> f64 {
    ln_gamma(y + 1.0)
}

/// Normalized CMP distribution at a given rate.
#[derive(Clone, Debug)]
pub struct CmpDistribution {
    pub log_lambda: f64,
    pub nu: f64,
    pub log_z: f64,
    pub mean: f64,
    pub variance: f64,
    /// Third central moment.
    pub skew_moment: f64,
    /// Probabilities `P(Y = y)` for `y = 0..probs.len()`.
    pub probs: Vec<f64>,
}

impl CmpDistribution {
    /// Evaluates the series until the next term falls below
    /// `CMP_SERIES_TOL` times the running sum past the mode.
    pub fn new(log_lambda: f64, nu: f64) -> Result<Self> {
        let mode = (log_lambda / nu).exp().floor();
        if !mode.is_finite() || mode > CMP_MAX_TERMS as f64 {
            return Err(Error::invalid(format!(
                "CMP series does not converge within {CMP_MAX_TERMS} terms"
            )));
        }
        let log_term = |y: f64, lf: f64| y * log_lambda - nu * lf;
        let shift = log_term(mode, ln_factorial(mode));
        let mut probs = Vec::new();
        let mut sum = 0.0;
        let mut lf = 0.0;
        let mut converged = false;
        for y in 0..CMP_MAX_TERMS {
            if y > 0 {
                lf += (y as f64).ln();
            }
            let t = (log_term(y as f64, lf) - shift).exp();
            probs.push(t);
            sum += t;
            if y as f64 > mode && t < CMP_SERIES_TOL * sum {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::invalid(format!(
                "CMP series does not converge within {CMP_MAX_TERMS} terms"
            )));
        }
        for p in probs.iter_mut() {
            *p /= sum;
        }
        let mean: f64 = probs.iter().enumerate().map(|(y, p)| y as f64 * p).sum();
        let (mut m2, mut m3) = (0.0, 0.0);
        for (y, p) in probs.iter().enumerate() {
            let d = y as f64 - mean;
            m2 += d * d * p;
            m3 += d * d * d * p;
        }
        Ok(CmpDistribution {
            log_lambda,
            nu,
            log_z: shift + sum.ln(),
            mean,
            variance: m2,
            skew_moment: m3,
            probs,
        })
    }

    /// Solves for the rate giving mean `mu` by Newton iteration on `log lambda`.
    pub fn with_mean(mu: f64, dispersion: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::invalid(format!("CMP mean must be positive, got {mu}")));
        }
        let nu = 1.0 / dispersion;
        let shifted = mu + (nu - 1.0) / (2.0 * nu);
        let mut x = if shifted > 0.0 { nu * shifted.ln() } else { nu * mu.ln() };
        let mut dist = CmpDistribution::new(x, nu)?;
        for _ in 0..200 {
            let err = dist.mean - mu;
            if err.abs() <= 1e-12 * mu.max(1.0) {
                return Ok(dist);
            }
            let step = (err / dist.variance.max(1e-300)).clamp(-2.0, 2.0);
            x -= step;
            dist = CmpDistribution::new(x, nu)?;
        }
        if (dist.mean - mu).abs() <= 1e-8 * mu.max(1.0) {
            Ok(dist)
        } else {
            Err(Error::invalid(format!("could not match CMP mean {mu}")))
        }
    }

    pub fn log_pmf(&self, y: f64) -> f64 {
        y * self.log_lambda - self.nu * ln_factorial(y) - self.log_z
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        for (y, p) in self.probs.iter().enumerate() {
            cum += p;
            if u < cum {
                return y as f64;
            }
        }
        (self.probs.len() - 1) as f64
    }
}

/// Log density (or mass) of `y` at mean `mu`.
pub fn log_density(y: f64, mu: f64, family: Family, theta: &[f64]) -> Result<f64> {
    family.check_params(theta)?;
    family.check_support(y).map_err(Error::InvalidInput)?;
    let lf = match family {
        Family::Gaussian => {
            let s = theta[0];
            -0.5 * (LN_2PI + 2.0 * s.ln()) - (y - mu).powi(2) / (2.0 * s * s)
        }
        Family::Poisson => {
            if !(mu >= 0.0) {
                return Err(Error::invalid(format!("poisson mean must be non-negative, got {mu}")));
            }
            if mu == 0.0 {
                return Ok(if y == 0.0 { 0.0 } else { f64::NEG_INFINITY });
            }
            y * mu.ln() - mu - ln_factorial(y)
        }
        Family::NegativeBinomial => {
            if !(mu > 0.0) {
                return Err(Error::invalid(format!("negative binomial mean must be positive, got {mu}")));
            }
            let r = 1.0 / theta[0];
            ln_gamma(y + r) - ln_gamma(r) - ln_factorial(y)
                + r * (r / (r + mu)).ln()
                + y * (mu / (r + mu)).ln()
        }
        Family::Compois => CmpDistribution::with_mean(mu, theta[0])?.log_pmf(y),
        Family::Bernoulli => {
            if !(mu > 0.0 && mu < 1.0) {
                return Err(Error::invalid(format!("bernoulli mean must be in (0, 1), got {mu}")));
            }
            if y == 1.0 {
                mu.ln()
            } else {
                (-mu).ln_1p()
            }
        }
    };
    Ok(lf)
}

/// Log density and its first two derivatives with respect to the linear predictor.
///
/// Returns `(-inf, 0, 0)` when the implied mean leaves the family's domain,
/// which the inner optimizer treats as a rejected step.
pub fn eta_terms(y: f64, eta: f64, family: Family, link: Link, theta: &[f64]) -> (f64, f64, f64) {
    match (family, link) {
        (Family::Gaussian, Link::Identity) => {
            let s2 = theta[0] * theta[0];
            let r = y - eta;
            (-0.5 * (LN_2PI + s2.ln()) - r * r / (2.0 * s2), r / s2, -1.0 / s2)
        }
        (Family::Poisson, Link::Log) => {
            let e = eta.clamp(-ETA_CLIP, ETA_CLIP);
            let mu = e.exp();
            (y * e - mu - ln_factorial(y), y - mu, -mu)
        }
        (Family::Bernoulli, Link::Logit) => {
            let e = eta.clamp(-ETA_CLIP, ETA_CLIP);
            let p = logistic(e);
            (y * e - softplus(e), y - p, -p * (1.0 - p))
        }
        _ => {
            let mu = link.inv_link(eta);
            let g1 = link.d1_inv_link(eta);
            let g2 = link.d2_inv_link(eta);
            match mean_terms(y, mu, family, theta) {
                Some((lf, f1, f2)) => (lf, f1 * g1, f2 * g1 * g1 + f1 * g2),
                None => (f64::NEG_INFINITY, 0.0, 0.0),
            }
        }
    }
}

/// Log density with first and second derivatives in the mean.
fn mean_terms(y: f64, mu: f64, family: Family, theta: &[f64]) -> Option<(f64, f64, f64)> {
    match family {
        Family::Gaussian => {
            let s2 = theta[0] * theta[0];
            let r = y - mu;
            Some((-0.5 * (LN_2PI + s2.ln()) - r * r / (2.0 * s2), r / s2, -1.0 / s2))
        }
        Family::Poisson => {
            if !(mu > 0.0) {
                return None;
            }
            Some((y * mu.ln() - mu - ln_factorial(y), y / mu - 1.0, -y / (mu * mu)))
        }
        Family::NegativeBinomial => {
            if !(mu > 0.0) {
                return None;
            }
            let r = 1.0 / theta[0];
            let lf = ln_gamma(y + r) - ln_gamma(r) - ln_factorial(y)
                + r * (r / (r + mu)).ln()
                + y * (mu / (r + mu)).ln();
            let f1 = y / mu - (y + r) / (r + mu);
            let f2 = -y / (mu * mu) + (y + r) / ((r + mu) * (r + mu));
            Some((lf, f1, f2))
        }
        Family::Compois => {
            let d = CmpDistribution::with_mean(mu, theta[0]).ok()?;
            let v = d.variance;
            let r = y - d.mean;
            let f1 = r / v;
            let f2 = -1.0 / v - r * d.skew_moment / (v * v * v);
            Some((d.log_pmf(y), f1, f2))
        }
        Family::Bernoulli => {
            if !(mu > 0.0 && mu < 1.0) {
                return None;
            }
            let lf = if y == 1.0 { mu.ln() } else { (-mu).ln_1p() };
            let f1 = y / mu - (1.0 - y) / (1.0 - mu);
            let f2 = -y / (mu * mu) - (1.0 - y) / ((1.0 - mu) * (1.0 - mu));
            Some((lf, f1, f2))
        }
    }
}

/// Theoretical mean and variance of the response at mean `mu`.
pub fn moments(mu: f64, family: Family, theta: &[f64]) -> Result<(f64, f64)> {
    Ok(match family {
        Family::Gaussian => (mu, theta[0] * theta[0]),
        Family::Poisson => (mu, mu),
        Family::NegativeBinomial => (mu, mu + theta[0] * mu * mu),
        Family::Compois => {
            let d = CmpDistribution::with_mean(mu, theta[0])?;
            (d.mean, d.variance)
        }
        Family::Bernoulli => (mu, mu * (1.0 - mu)),
    })
}

/// One draw of the response at mean `mu`.
pub fn simulate_response<R: Rng + ?Sized>(
    mu: f64,
    family: Family,
    theta: &[f64],
    rng: &mut R,
) -> Result<f64> {
    family.check_params(theta)?;
    let poisson = |lambda: f64, rng: &mut R| -> Result<f64> {
        if lambda <= 0.0 {
            return Ok(0.0);
        }
        let d = Poisson::new(lambda).map_err(|e| Error::invalid(format!("poisson rate {lambda}: {e}")))?;
        Ok(d.sample(rng))
    };
    match family {
        Family::Gaussian => {
            let d = Normal::new(mu, theta[0]).map_err(|e| Error::invalid(e.to_string()))?;
            Ok(d.sample(rng))
        }
        Family::Poisson => poisson(mu, rng),
        Family::NegativeBinomial => {
            let r = 1.0 / theta[0];
            if mu <= 0.0 {
                return Ok(0.0);
            }
            let g = Gamma::new(r, mu / r).map_err(|e| Error::invalid(e.to_string()))?;
            let lambda = g.sample(rng);
            poisson(lambda, rng)
        }
        Family::Compois => Ok(CmpDistribution::with_mean(mu, theta[0])?.sample(rng)),
        Family::Bernoulli => {
            let u: f64 = rng.random();
            Ok(if u < mu { 1.0 } else { 0.0 })
        }
    }
}
