//! Joint likelihood, inner mode finding, the Laplace-approximate marginal
//! likelihood, outer optimization and standard errors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::eta_terms;
use crate::linalg::{EnvelopeCholesky, EnvelopeMatrix};
use crate::model::Model;
use crate::optim::{fd_step, minimize, BfgsOptions, Objective, Status};
use crate::params::ParameterSet;
use crate::process::{Innovations, ProcessParams, RandomEffectState, TemporalParams};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerOptions {
    /// Gradient max-norm at which Newton iteration stops.
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for InnerOptions {
    fn default() -> Self {
        InnerOptions {
            grad_tol: 1e-8,
            max_iter: 100,
        }
    }
}

/// Mode of the joint likelihood in the random effects.
#[derive(Clone, Debug)]
pub struct InnerSolution {
    pub u: Vec<f64>,
    pub joint_nll: f64,
    pub hessian: EnvelopeMatrix,
    pub cholesky: EnvelopeCholesky,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct LaplaceValue {
    /// Laplace-approximate marginal negative log-likelihood.
    pub nll: f64,
    pub log_det: f64,
    pub inner: InnerSolution,
}

struct Prepared {
    inn: Innovations,
    theta: Vec<f64>,
    beta: Vec<f64>,
}

/// Evaluates likelihood quantities for one model.
#[derive(Clone, Debug)]
pub struct LaplaceEngine<'m> {
    model: &'m Model,
    pattern: EnvelopeMatrix,
}

impl<'m> LaplaceEngine<'m> {
    pub fn new(model: &'m Model) -> Result<Self> {
        let probe = ProcessParams {
            temporal: TemporalParams {
                mu: 0.0,
                phi: 0.5,
                sigma: 1.0,
            },
            tau: 1.0,
        };
        let inn = model.process.innovations(&probe)?;
        let mut pairs = Vec::with_capacity(inn.cols.len());
        for k in 0..inn.n_rows() {
            let (c, _) = inn.row(k);
            let lo = c.iter().copied().min().expect("rows are never empty");
            pairs.extend(c.iter().map(|&j| (j, lo)));
        }
        let pattern = EnvelopeMatrix::from_pattern(model.n_effects(), pairs);
        Ok(LaplaceEngine { model, pattern })
    }

    pub fn model(&self) -> &'m Model {
        self.model
    }

    pub fn n_effects(&self) -> usize {
        self.model.n_effects()
    }

    fn prepare(&self, params: &ParameterSet) -> Result<Prepared> {
        params.validate()?;
        if params.n_beta != self.model.n_covariates {
            return Err(Error::invalid(format!(
                "{} coefficients for {} covariates",
                params.n_beta, self.model.n_covariates
            )));
        }
        Ok(Prepared {
            inn: self.model.process.innovations(&params.process())?,
            theta: params.theta(),
            beta: params.beta(),
        })
    }

    /// Negative log-likelihood of the observations, accumulating derivatives.
    fn obs_terms(&self, p: &Prepared, u: &[f64], mut grad: Option<&mut [f64]>, mut hess: Option<&mut EnvelopeMatrix>) -> f64 {
        let m = self.model;
        let mut total = 0.0;
        for (k, &slot) in m.obs_slot.iter().enumerate() {
            let eta = u[slot] + m.x[k].iter().zip(&p.beta).map(|(a, b)| a * b).sum::<f64>();
            let (lf, d1, d2) = eta_terms(m.y[k], eta, m.spec.family, m.spec.link, &p.theta);
            total -= lf;
            if let Some(g) = grad.as_deref_mut() {
                g[slot] -= d1;
            }
            if let Some(h) = hess.as_deref_mut() {
                h.add(slot, slot, -d2);
            }
        }
        total
    }

    fn value(&self, p: &Prepared, u: &[f64]) -> f64 {
        let v = -p.inn.loglik(u, None) + self.obs_terms(p, u, None, None);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    fn gradient_prepared(&self, p: &Prepared, u: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; u.len()];
        p.inn.add_neg_gradient(u, &mut g);
        self.obs_terms(p, u, Some(&mut g), None);
        g
    }

    fn hessian_prepared(&self, p: &Prepared, u: &[f64]) -> EnvelopeMatrix {
        let mut h = self.pattern.clone();
        p.inn.for_each_hessian_term(|i, j, v| h.add(i, j, v));
        self.obs_terms(p, u, None, Some(&mut h));
        h
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.n_effects() {
            return Err(Error::invalid(format!("expected {} random effects, got {}", self.n_effects(), u.len())));
        }
        Ok(())
    }

    /// `-(l_y + l_w)` at random effects `u`.
    pub fn joint_nll(&self, params: &ParameterSet, u: &[f64]) -> Result<f64> {
        self.check_len(u)?;
        let p = self.prepare(params)?;
        Ok(self.value(&p, u))
    }

    /// Gradient of the joint negative log-likelihood in `u`.
    pub fn joint_gradient(&self, params: &ParameterSet, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u)?;
        let p = self.prepare(params)?;
        Ok(self.gradient_prepared(&p, u))
    }

    /// Hessian of the joint negative log-likelihood in `u`.
    pub fn hessian(&self, params: &ParameterSet, u: &[f64]) -> Result<EnvelopeMatrix> {
        self.check_len(u)?;
        let p = self.prepare(params)?;
        Ok(self.hessian_prepared(&p, u))
    }

    /// Every effect at its conditional mean given the effects it depends on.
    pub fn conditional_means(&self, params: &ParameterSet) -> Result<Vec<f64>> {
        let p = self.prepare(params)?;
        let mut u = vec![0.0; self.n_effects()];
        p.inn.solve_forward(&mut u, |_, _| 0.0);
        Ok(u)
    }

    /// Newton iteration with step halving from `u0`.
    pub fn inner_optimize(&self, params: &ParameterSet, u0: &[f64], opts: &InnerOptions) -> Result<InnerSolution> {
        self.check_len(u0)?;
        let p = self.prepare(params)?;
        let quadratic = self.model.spec.family.is_quadratic(self.model.spec.link);
        let mut u = u0.to_vec();
        let mut f = self.value(&p, &u);
        if !f.is_finite() {
            return Err(Error::InnerDivergence("joint likelihood is not finite at the starting point".into()));
        }
        let mut g = self.gradient_prepared(&p, &u);
        let mut factored: Option<(EnvelopeMatrix, EnvelopeCholesky)> = None;
        for iter in 0..=opts.max_iter {
            if factored.is_none() || !quadratic {
                let h = self.hessian_prepared(&p, &u);
                let ch = h.cholesky().map_err(Error::SaddleAtMode)?;
                factored = Some((h, ch));
            }
            let (h, ch) = factored.as_ref().expect("just factored");
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if gmax < opts.grad_tol {
                return Ok(InnerSolution {
                    u,
                    joint_nll: f,
                    hessian: h.clone(),
                    cholesky: ch.clone(),
                    iterations: iter,
                });
            }
            if iter == opts.max_iter {
                break;
            }
            let step = ch.solve(&g);
            // Rounding floor: the gradient is noise once the Newton step is this small.
            let umax = u.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let smax = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if smax < 1e-12 * umax {
                return Ok(InnerSolution {
                    u,
                    joint_nll: f,
                    hessian: h.clone(),
                    cholesky: ch.clone(),
                    iterations: iter,
                });
            }
            let mut alpha = 1.0;
            let mut accepted = None;
            while alpha > 1e-10 {
                let un: Vec<f64> = u.iter().zip(&step).map(|(a, s)| a - alpha * s).collect();
                let fnew = self.value(&p, &un);
                if fnew.is_finite() && fnew <= f + 1e-12 * (1.0 + f.abs()) {
                    accepted = Some((un, fnew));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((un, fnew)) = accepted else {
                return Err(Error::InnerDivergence(format!(
                    "no decrease along the Newton direction (gradient max-norm {gmax:e})"
                )));
            };
            if un.iter().any(|v| !v.is_finite()) {
                return Err(Error::InnerDivergence("non-finite random effects".into()));
            }
            u = un;
            f = fnew;
            g = self.gradient_prepared(&p, &u);
        }
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Err(Error::InnerDivergence(format!(
            "{} Newton iterations without convergence (gradient max-norm {gmax:e})",
            opts.max_iter
        )))
    }

    /// `joint_nll(u_hat) + log det H / 2 - n_u ln(2 pi) / 2`.
    pub fn laplace_nll(&self, params: &ParameterSet, u0: &[f64], opts: &InnerOptions) -> Result<LaplaceValue> {
        let inner = self.inner_optimize(params, u0, opts)?;
        let log_det = inner.cholesky.log_det();
        let n = self.n_effects() as f64;
        Ok(LaplaceValue {
            nll: inner.joint_nll + 0.5 * log_det - 0.5 * n * LN_2PI,
            log_det,
            inner,
        })
    }
}

/// Settings for [`fit`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub inner: InnerOptions,
    pub outer: BfgsOptions,
    pub standard_errors: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            inner: InnerOptions::default(),
            outer: BfgsOptions::default(),
            standard_errors: true,
        }
    }
}

/// Estimates, standard errors and random-effect modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ParameterSet,
    /// Natural-scale standard error per parameter; zero for fixed ones.
    #[serde(with = "crate::serde_nan::vec")]
    pub se: Vec<f64>,
    /// Indices of the free parameters.
    pub free: Vec<usize>,
    /// Covariance of the free parameters on the unconstrained scale.
    #[serde(with = "crate::serde_nan::matrix")]
    pub covariance: Vec<Vec<f64>>,
    pub modes: Vec<f64>,
    #[serde(with = "crate::serde_nan::vec")]
    pub mode_se: Vec<f64>,
    #[serde(with = "crate::serde_nan::scalar")]
    pub nll: f64,
    pub message: String,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub inner_iterations: usize,
    /// Marginal likelihood at each accepted outer iterate.
    #[serde(with = "crate::serde_nan::vec")]
    pub trace: Vec<f64>,
}

impl FitResult {
    pub fn state(&self, model: &Model) -> RandomEffectState {
        RandomEffectState::from_flat(model.layout(), &self.modes)
    }

    pub fn se_state(&self, model: &Model) -> RandomEffectState {
        RandomEffectState::from_flat(model.layout(), &self.mode_se)
    }

    /// Covariance of the natural-scale coefficients.
    pub fn beta_covariance(&self) -> Vec<Vec<f64>> {
        let p = &self.params;
        let idx: Vec<usize> = (p.n_response..p.n_response + p.n_beta).collect();
        idx.iter()
            .map(|&i| {
                idx.iter()
                    .map(|&j| {
                        match (self.free.iter().position(|&f| f == i), self.free.iter().position(|&f| f == j)) {
                            (Some(a), Some(b)) => self.covariance[a][b],
                            _ => 0.0,
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Wald interval `estimate ± z se` on the unconstrained scale, mapped back.
    pub fn wald_interval(&self, i: usize, z: f64) -> (f64, f64) {
        let par = &self.params.params[i];
        let Some(a) = self.free.iter().position(|&f| f == i) else {
            return (par.value, par.value);
        };
        let x = par.transform.to_unconstrained(par.value);
        let s = self.covariance[a][a].sqrt();
        let lo = par.transform.to_natural(x - z * s);
        let hi = par.transform.to_natural(x + z * s);
        (lo.min(hi), lo.max(hi))
    }
}

struct LaplaceObjective<'e, 'm> {
    engine: &'e LaplaceEngine<'m>,
    base: ParameterSet,
    opts: InnerOptions,
    u_accepted: Vec<f64>,
    x_accepted: Vec<f64>,
    last: Option<(Vec<f64>, Vec<f64>)>,
    evaluations: usize,
    inner_iterations: usize,
}

impl Objective for LaplaceObjective<'_, '_> {
    fn value(&mut self, x: &[f64]) -> Result<f64> {
        let params = self.base.with_free_unconstrained(x);
        self.evaluations += 1;
        let v = self.engine.laplace_nll(&params, &self.u_accepted, &self.opts)?;
        self.inner_iterations += v.inner.iterations;
        self.last = Some((x.to_vec(), v.inner.u));
        Ok(v.nll)
    }

    fn accept(&mut self, x: &[f64]) {
        if let Some((lx, lu)) = &self.last {
            if lx.as_slice() == x {
                self.u_accepted = lu.clone();
            }
        }
        self.x_accepted = x.to_vec();
    }
}

/// Default starting values from the responses.
pub fn initial_parameters(model: &Model, covariate_names: &[String]) -> ParameterSet {
    let spec = &model.spec;
    let mut p = ParameterSet::new(spec.family, covariate_names);
    let y = &model.y;
    let n = y.len().max(1) as f64;
    let mean = y.iter().sum::<f64>() / n;
    let integer = spec.family.is_integer_valued();
    let proxy: Vec<f64> = y
        .iter()
        .map(|&v| match spec.link {
            crate::family::Link::Identity => v,
            crate::family::Link::Log if integer => (v + 0.5).ln(),
            crate::family::Link::Log => v.max(1e-8).ln(),
            crate::family::Link::Logit => {
                let q = (v + 0.5) / 2.0;
                (q / (1.0 - q)).ln()
            }
        })
        .collect();
    let pm = proxy.iter().sum::<f64>() / n;
    let sd = (proxy.iter().map(|v| (v - pm).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let sd = if sd.is_finite() && sd > 1e-8 { sd } else { 1.0 };
    let mu = match spec.link {
        crate::family::Link::Identity => mean,
        crate::family::Link::Log => mean.max(0.5).ln(),
        crate::family::Link::Logit => {
            let q = mean.clamp(0.01, 0.99);
            (q / (1.0 - q)).ln()
        }
    };
    let mu = if mu.is_finite() { mu } else { 0.0 };
    let set = |p: &mut ParameterSet, name: &str, v: f64| {
        p.set(name, v).expect("default values lie in their domains");
    };
    set(&mut p, "mu", mu);
    set(&mut p, "phi", 0.5);
    set(&mut p, "sigma", sd);
    set(&mut p, "tau", sd);
    for name in spec.family.parameter_names() {
        let v = if *name == "sd" { sd } else { 1.0 };
        set(&mut p, name, v);
    }
    p
}

/// Maximizes the Laplace-approximate likelihood over the free parameters.
pub fn fit(model: &Model, init: &ParameterSet, opts: &FitOptions) -> Result<FitResult> {
    let engine = LaplaceEngine::new(model)?;
    init.validate()?;
    let u0 = engine.conditional_means(init)?;
    let x0 = init.free_unconstrained();
    let mut obj = LaplaceObjective {
        engine: &engine,
        base: init.clone(),
        opts: opts.inner,
        u_accepted: u0,
        x_accepted: x0.clone(),
        last: None,
        evaluations: 0,
        inner_iterations: 0,
    };
    let outcome = minimize(&mut obj, &x0, &opts.outer);
    let (x, message, converged, iterations, trace) = match outcome {
        Ok(r) => (r.x, r.status.message().to_string(), r.status == Status::Converged, r.iterations, r.trace),
        Err(e @ (Error::InnerDivergence(_) | Error::SaddleAtMode(_))) if obj.evaluations > 1 => {
            log::warn!("outer optimization stopped: {e}");
            (obj.x_accepted.clone(), "inner divergence".to_string(), false, 0, Vec::new())
        }
        Err(e) => return Err(e),
    };
    let params = init.with_free_unconstrained(&x);
    let value = engine.laplace_nll(&params, &obj.u_accepted, &opts.inner)?;
    let free = params.free_indices();
    let mut result = FitResult {
        se: vec![0.0; params.len()],
        covariance: vec![vec![0.0; free.len()]; free.len()],
        free,
        modes: value.inner.u.clone(),
        mode_se: vec![f64::NAN; model.n_effects()],
        nll: value.nll,
        message,
        converged,
        iterations,
        evaluations: obj.evaluations,
        inner_iterations: obj.inner_iterations,
        trace,
        params,
    };
    if opts.standard_errors {
        standard_errors(&engine, &mut result, &value.inner, &opts.inner)?;
    }
    Ok(result)
}

/// Finite-difference Hessian of the marginal likelihood on the unconstrained scale.
pub fn parameter_hessian(
    engine: &LaplaceEngine,
    params: &ParameterSet,
    u_hat: &[f64],
    opts: &InnerOptions,
) -> Result<DMatrix<f64>> {
    let x = params.free_unconstrained();
    let n = x.len();
    let eval = |dx: &[(usize, f64)]| -> Result<f64> {
        let mut xp = x.clone();
        for &(i, d) in dx {
            xp[i] += d;
        }
        Ok(engine.laplace_nll(&params.with_free_unconstrained(&xp), u_hat, opts)?.nll)
    };
    let h: Vec<f64> = x.iter().map(|v| 1e-3 * v.abs().max(1.0)).collect();
    let f0 = eval(&[])?;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let fp = eval(&[(i, h[i])])?;
        let fm = eval(&[(i, -h[i])])?;
        m[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let fpp = eval(&[(i, h[i]), (j, h[j])])?;
            let fpm = eval(&[(i, h[i]), (j, -h[j])])?;
            let fmp = eval(&[(i, -h[i]), (j, h[j])])?;
            let fmm = eval(&[(i, -h[i]), (j, -h[j])])?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Fills parameter and random-effect standard errors.
///
/// Random-effect variances add the parameter uncertainty `J V J'` with
/// `J = d u_hat / d x = -H^{-1} d grad / d x`.
pub fn standard_errors(
    engine: &LaplaceEngine,
    fit: &mut FitResult,
    inner: &InnerSolution,
    opts: &InnerOptions,
) -> Result<()> {
    let n = fit.free.len();
    let mut cov_ok = n == 0;
    if n > 0 {
        let hess = parameter_hessian(engine, &fit.params, &inner.u, opts)?;
        match hess.clone().cholesky() {
            Some(ch) => {
                let inv = ch.inverse();
                fit.covariance = (0..n).map(|i| (0..n).map(|j| inv[(i, j)]).collect()).collect();
                for (a, &i) in fit.free.iter().enumerate() {
                    let p = &fit.params.params[i];
                    fit.se[i] = p.transform.derivative(p.value).abs() * inv[(a, a)].sqrt();
                }
                cov_ok = true;
            }
            None => {
                log::warn!("parameter Hessian is not positive definite; standard errors are NaN");
                fit.covariance = vec![vec![f64::NAN; n]; n];
                for &i in &fit.free {
                    fit.se[i] = f64::NAN;
                }
            }
        }
    }
    let mut var = inner.cholesky.inverse_diagonal();
    if cov_ok && n > 0 {
        let x = fit.params.free_unconstrained();
        let mut jac: Vec<Vec<f64>> = Vec::with_capacity(n);
        for a in 0..n {
            let h = fd_step(x[a]);
            let mut xp = x.clone();
            xp[a] = x[a] + h;
            let gp = engine.joint_gradient(&fit.params.with_free_unconstrained(&xp), &inner.u)?;
            xp[a] = x[a] - h;
            let gm = engine.joint_gradient(&fit.params.with_free_unconstrained(&xp), &inner.u)?;
            let mut d: Vec<f64> = gp.iter().zip(&gm).map(|(p, m)| -(p - m) / (2.0 * h)).collect();
            inner.cholesky.solve_in_place(&mut d);
            jac.push(d);
        }
        for (i, v) in var.iter_mut().enumerate() {
            let mut extra = 0.0;
            for a in 0..n {
                for b in 0..n {
                    extra += jac[a][i] * fit.covariance[a][b] * jac[b][i];
                }
            }
            *v += extra;
        }
    }
    fit.mode_se = var.into_iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok(())
}
