//! The random-effects density: AR(1) temporal level, persistent-graph
//! conditionals and transient-node conditionals.
//!
//! Every conditional in the model is Gaussian with a mean linear in the other
//! effects, so the density is stored as a list of innovation rows
//! `e_k = sum_j a_kj u_j - c_k ~ N(0, D_k)`, one per effect, in dependency
//! order. Each row has coefficient 1 on its own effect.

use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceCalibration, UnitKriging};
use crate::error::{Error, Result};
use crate::graph::Location;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Temporal-level parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalParams {
    /// Stationary mean of the temporal level.
    pub mu: f64,
    /// Lag-one autocorrelation.
    pub phi: f64,
    /// One-step-ahead standard deviation.
    pub sigma: f64,
}

impl TemporalParams {
    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::invalid(format!("mu must be finite, got {}", self.mu)));
        }
        if !(self.phi.abs() < 1.0) {
            return Err(Error::invalid(format!("phi must lie in (-1, 1), got {}", self.phi)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Temporal parameters plus the spatial standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessParams {
    pub temporal: TemporalParams,
    pub tau: f64,
}

impl ProcessParams {
    pub fn validate(&self) -> Result<()> {
        self.temporal.validate()?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

fn normal_logpdf(e: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln()) - e * e / (2.0 * var)
}

/// Log density of the temporal level: a stationary AR(1) centred at `mu`.
pub fn ar1_logdensity(eps: &[f64], p: &TemporalParams) -> Result<f64> {
    p.validate()?;
    if let Some(bad) = eps.iter().find(|e| !e.is_finite()) {
        return Err(Error::invalid(format!("temporal effect {bad} is not finite")));
    }
    let TemporalParams { mu, phi, sigma } = *p;
    let s2 = sigma * sigma;
    let mut total = 0.0;
    for (t, &e) in eps.iter().enumerate() {
        total += if t == 0 {
            normal_logpdf(e - mu, s2 / (1.0 - phi * phi))
        } else {
            normal_logpdf(e - phi * eps[t - 1] - (1.0 - phi) * mu, s2)
        };
    }
    Ok(total)
}

/// Mean of a spatial effect given its previous value: `phi (w_prev - eps_prev) + eps_now`.
pub fn mean_function(w_prev: f64, eps_prev: f64, eps_now: f64, phi: f64) -> f64 {
    phi * (w_prev - eps_prev) + eps_now
}

/// Kriging weights normalized to sum to one.
pub fn blup_weights(weights: &[f64]) -> Result<Vec<f64>> {
    let s: f64 = weights.iter().sum();
    if s.abs() < 1e-12 || !s.is_finite() {
        return Err(Error::DegenerateBlup(s));
    }
    Ok(weights.iter().map(|w| w / s).collect())
}

/// Best linear unbiased prediction of a previous-time value from its parents.
pub fn blup_previous(w_prev_parents: &[f64], weights: &[f64]) -> Result<f64> {
    if w_prev_parents.len() != weights.len() {
        return Err(Error::invalid("parent values and weights differ in length"));
    }
    let b = blup_weights(weights)?;
    Ok(b.iter().zip(w_prev_parents).map(|(b, w)| b * w).sum())
}

/// A location carrying its own effect at one time, conditioned on reference nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransientNode {
    pub location: Location,
    pub kriging: UnitKriging,
    /// Normalized weights for the previous-time prediction; empty at the first time.
    pub blup: Vec<f64>,
}

impl TransientNode {
    pub fn new(location: Location, kriging: UnitKriging, first_time: bool) -> Result<Self> {
        let blup = if first_time {
            Vec::new()
        } else {
            blup_weights(&kriging.weights)?
        };
        Ok(TransientNode {
            location,
            kriging,
            blup,
        })
    }
}

/// Identifies one random effect.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Effect {
    /// Temporal level at a time.
    Eps(usize),
    /// Reference node `i` at time `t`.
    Node { t: usize, i: usize },
    /// Transient node `k` at time `t`.
    Site { t: usize, k: usize },
}

/// Storage positions of the random effects.
///
/// Each time occupies a contiguous block `[reference nodes, transient nodes]`;
/// the temporal effects follow all spatial blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectLayout {
    n_refs: usize,
    transient_counts: Vec<usize>,
    block_start: Vec<usize>,
    eps_start: usize,
}

impl EffectLayout {
    pub fn new(n_refs: usize, transient_counts: Vec<usize>) -> Self {
        let mut block_start = Vec::with_capacity(transient_counts.len());
        let mut pos = 0;
        for &c in &transient_counts {
            block_start.push(pos);
            pos += n_refs + c;
        }
        EffectLayout {
            n_refs,
            transient_counts,
            block_start,
            eps_start: pos,
        }
    }

    pub fn n_times(&self) -> usize {
        self.transient_counts.len()
    }

    pub fn n_refs(&self) -> usize {
        self.n_refs
    }

    pub fn n_transient(&self, t: usize) -> usize {
        self.transient_counts[t]
    }

    pub fn n_effects(&self) -> usize {
        self.eps_start + self.n_times()
    }

    pub fn index(&self, e: Effect) -> usize {
        match e {
            Effect::Eps(t) => self.eps_start + t,
            Effect::Node { t, i } => self.block_start[t] + i,
            Effect::Site { t, k } => self.block_start[t] + self.n_refs + k,
        }
    }

    pub fn eps(&self, t: usize) -> usize {
        self.eps_start + t
    }

    pub fn node(&self, t: usize, i: usize) -> usize {
        self.block_start[t] + i
    }

    pub fn site(&self, t: usize, k: usize) -> usize {
        self.block_start[t] + self.n_refs + k
    }

    pub fn effect(&self, idx: usize) -> Effect {
        if idx >= self.eps_start {
            return Effect::Eps(idx - self.eps_start);
        }
        let t = self.block_start.partition_point(|&s| s <= idx) - 1;
        let off = idx - self.block_start[t];
        if off < self.n_refs {
            Effect::Node { t, i: off }
        } else {
            Effect::Site { t, k: off - self.n_refs }
        }
    }

    /// Effect indices in an order where every row only refers to earlier effects.
    pub fn dependency_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n_times()).map(|t| self.eps(t)).collect();
        for t in 0..self.n_times() {
            order.extend(self.block_start[t]..self.block_start[t] + self.n_refs + self.transient_counts[t]);
        }
        order
    }
}

/// Which part of the density a row belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Temporal,
    Persistent,
    Transient,
}

/// Innovation rows evaluated at one parameter value.
#[derive(Clone, Debug)]
pub struct Innovations {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub offset: Vec<f64>,
    pub var: Vec<f64>,
    pub own: Vec<usize>,
    pub kind: Vec<RowKind>,
}

impl Innovations {
    pub fn n_rows(&self) -> usize {
        self.own.len()
    }

    pub fn row(&self, k: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[k]..self.row_ptr[k + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn residual(&self, k: usize, u: &[f64]) -> f64 {
        let (c, v) = self.row(k);
        c.iter().zip(v).map(|(&j, &a)| a * u[j]).sum::<f64>() - self.offset[k]
    }

    /// Sum of row log densities, optionally restricted to one kind.
    pub fn loglik(&self, u: &[f64], kind: Option<RowKind>) -> f64 {
        (0..self.n_rows())
            .filter(|&k| kind.is_none_or(|want| self.kind[k] == want))
            .map(|k| normal_logpdf(self.residual(k, u), self.var[k]))
            .sum()
    }

    /// Adds the gradient of the negative log density to `grad`.
    pub fn add_neg_gradient(&self, u: &[f64], grad: &mut [f64]) {
        for k in 0..self.n_rows() {
            let s = self.residual(k, u) / self.var[k];
            let (c, v) = self.row(k);
            for (&j, &a) in c.iter().zip(v) {
                grad[j] += a * s;
            }
        }
    }

    /// Calls `f(i, j, value)` for each lower-triangle contribution `a a' / D`.
    pub fn for_each_hessian_term<F: FnMut(usize, usize, f64)>(&self, mut f: F) {
        for k in 0..self.n_rows() {
            let (c, v) = self.row(k);
            let inv = 1.0 / self.var[k];
            for (p, (&i, &ai)) in c.iter().zip(v).enumerate() {
                for (&j, &aj) in c[..=p].iter().zip(&v[..=p]) {
                    let (r, s) = if i >= j { (i, j) } else { (j, i) };
                    f(r, s, ai * aj * inv);
                }
            }
        }
    }

    /// Sets each effect flagged in `update` to its conditional mean, in dependency order.
    pub fn fill_conditional_means(&self, u: &mut [f64], update: &[bool]) {
        for k in 0..self.n_rows() {
            let own = self.own[k];
            if !update[own] {
                continue;
            }
            let (c, v) = self.row(k);
            let rest: f64 = c.iter().zip(v).skip(1).map(|(&j, &a)| a * u[j]).sum();
            u[own] = self.offset[k] - rest;
        }
    }

    /// Fills effects in dependency order from innovations `e` (zero gives the conditional mean).
    pub fn solve_forward(&self, u: &mut [f64], mut innovation: impl FnMut(usize, f64) -> f64) {
        for k in 0..self.n_rows() {
            let own = self.own[k];
            let (c, v) = self.row(k);
            let rest: f64 = c
                .iter()
                .zip(v)
                .filter(|(&j, _)| j != own)
                .map(|(&j, &a)| a * u[j])
                .sum();
            u[own] = self.offset[k] - rest + innovation(k, self.var[k]);
        }
    }
}

/// Everything about the random-effects density that does not depend on parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessStructure {
    pub layout: EffectLayout,
    pub calibration: CovarianceCalibration,
    pub persistent: Vec<UnitKriging>,
    pub transient: Vec<Vec<TransientNode>>,
}

impl ProcessStructure {
    pub fn new(
        calibration: CovarianceCalibration,
        persistent: Vec<UnitKriging>,
        transient: Vec<Vec<TransientNode>>,
    ) -> Result<Self> {
        if transient.is_empty() {
            return Err(Error::invalid("at least one time is required"));
        }
        for (t, sites) in transient.iter().enumerate() {
            for s in sites {
                if t > 0 && s.blup.len() != s.kriging.weights.len() {
                    return Err(Error::invalid("transient node is missing previous-time weights"));
                }
                if !(s.kriging.deficit > 0.0) {
                    return Err(Error::Singular(format!(
                        "transient location {:?} coincides with its parents",
                        s.location.coords
                    )));
                }
            }
        }
        let layout = EffectLayout::new(persistent.len(), transient.iter().map(Vec::len).collect());
        Ok(ProcessStructure {
            layout,
            calibration,
            persistent,
            transient,
        })
    }

    pub fn n_times(&self) -> usize {
        self.layout.n_times()
    }

    pub fn n_refs(&self) -> usize {
        self.layout.n_refs()
    }

    /// Builds the innovation rows at the given parameters.
    pub fn innovations(&self, p: &ProcessParams) -> Result<Innovations> {
        p.validate()?;
        let TemporalParams { mu, phi, sigma } = p.temporal;
        let s2 = self.calibration.marginal_variance(p.tau);
        let l = &self.layout;
        let n = l.n_effects();
        let mut inn = Innovations {
            row_ptr: vec![0],
            cols: Vec::with_capacity(n * 8),
            vals: Vec::with_capacity(n * 8),
            offset: Vec::with_capacity(n),
            var: Vec::with_capacity(n),
            own: Vec::with_capacity(n),
            kind: Vec::with_capacity(n),
        };
        let push = |inn: &mut Innovations, own: usize, entries: &mut dyn Iterator<Item = (usize, f64)>, c: f64, d: f64, kind: RowKind| {
            inn.cols.push(own);
            inn.vals.push(1.0);
            for (j, a) in entries {
                inn.cols.push(j);
                inn.vals.push(a);
            }
            inn.row_ptr.push(inn.cols.len());
            inn.offset.push(c);
            inn.var.push(d);
            inn.own.push(own);
            inn.kind.push(kind);
        };

        for t in 0..l.n_times() {
            if t == 0 {
                push(&mut inn, l.eps(0), &mut std::iter::empty(), mu, sigma * sigma / (1.0 - phi * phi), RowKind::Temporal);
            } else {
                push(&mut inn, l.eps(t), &mut std::iter::once((l.eps(t - 1), -phi)), mu * (1.0 - phi), sigma * sigma, RowKind::Temporal);
            }
        }

        let mut entries: Vec<(usize, f64)> = Vec::new();
        for t in 0..l.n_times() {
            for (i, uk) in self.persistent.iter().enumerate() {
                let d = s2 * uk.deficit;
                if !(d > 0.0) {
                    return Err(Error::Singular(format!("reference node {i} has zero conditional variance")));
                }
                let rest = 1.0 - uk.weight_sum();
                entries.clear();
                for (&j, &b) in uk.parents.iter().zip(&uk.weights) {
                    entries.push((l.node(t, j), -b));
                }
                if t == 0 {
                    entries.push((l.eps(0), -rest));
                } else {
                    entries.push((l.node(t - 1, i), -phi));
                    for (&j, &b) in uk.parents.iter().zip(&uk.weights) {
                        entries.push((l.node(t - 1, j), phi * b));
                    }
                    entries.push((l.eps(t - 1), phi * rest));
                    entries.push((l.eps(t), -rest));
                }
                push(&mut inn, l.node(t, i), &mut entries.iter().copied(), 0.0, d, RowKind::Persistent);
            }
            for (k, site) in self.transient[t].iter().enumerate() {
                let uk = &site.kriging;
                let rest = 1.0 - uk.weight_sum();
                entries.clear();
                for (&j, &b) in uk.parents.iter().zip(&uk.weights) {
                    entries.push((l.node(t, j), -b));
                }
                if t == 0 {
                    entries.push((l.eps(0), -rest));
                } else {
                    for ((&j, &b), &beta) in uk.parents.iter().zip(&uk.weights).zip(&site.blup) {
                        entries.push((l.node(t - 1, j), phi * (b - beta)));
                    }
                    entries.push((l.eps(t - 1), phi * rest));
                    entries.push((l.eps(t), -rest));
                }
                push(&mut inn, l.site(t, k), &mut entries.iter().copied(), 0.0, s2 * uk.deficit, RowKind::Transient);
            }
        }
        Ok(inn)
    }
}

/// Random effects arranged by level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomEffectState {
    /// Temporal level per time.
    pub eps: Vec<f64>,
    /// Reference-node effects, one row per time.
    pub w: Vec<Vec<f64>>,
    /// Transient-node effects per time.
    pub transient: Vec<Vec<f64>>,
}

impl RandomEffectState {
    pub fn from_flat(layout: &EffectLayout, u: &[f64]) -> Self {
        let nt = layout.n_times();
        RandomEffectState {
            eps: (0..nt).map(|t| u[layout.eps(t)]).collect(),
            w: (0..nt)
                .map(|t| (0..layout.n_refs()).map(|i| u[layout.node(t, i)]).collect())
                .collect(),
            transient: (0..nt)
                .map(|t| (0..layout.n_transient(t)).map(|k| u[layout.site(t, k)]).collect())
                .collect(),
        }
    }

    pub fn to_flat(&self, layout: &EffectLayout) -> Result<Vec<f64>> {
        let nt = layout.n_times();
        if self.eps.len() != nt
            || self.w.len() != nt
            || self.transient.len() != nt
            || self.w.iter().any(|r| r.len() != layout.n_refs())
            || (0..nt).any(|t| self.transient[t].len() != layout.n_transient(t))
        {
            return Err(Error::invalid("random-effect state does not match the layout"));
        }
        let mut u = vec![0.0; layout.n_effects()];
        for t in 0..nt {
            u[layout.eps(t)] = self.eps[t];
            for (i, &v) in self.w[t].iter().enumerate() {
                u[layout.node(t, i)] = v;
            }
            for (k, &v) in self.transient[t].iter().enumerate() {
                u[layout.site(t, k)] = v;
            }
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("random effects must be finite"));
        }
        Ok(u)
    }
}

fn part_loglik(
    state: &RandomEffectState,
    structure: &ProcessStructure,
    p: &ProcessParams,
    kind: Option<RowKind>,
) -> Result<f64> {
    let u = state.to_flat(&structure.layout)?;
    Ok(structure.innovations(p)?.loglik(&u, kind))
}

/// Log density of the reference-node effects given the temporal level.
pub fn persistent_loglik(state: &RandomEffectState, structure: &ProcessStructure, p: &ProcessParams) -> Result<f64> {
    part_loglik(state, structure, p, Some(RowKind::Persistent))
}

/// Log density of the transient effects given the reference nodes.
pub fn transient_loglik(state: &RandomEffectState, structure: &ProcessStructure, p: &ProcessParams) -> Result<f64> {
    part_loglik(state, structure, p, Some(RowKind::Transient))
}

/// Total random-effects log density.
pub fn process_loglik(state: &RandomEffectState, structure: &ProcessStructure, p: &ProcessParams) -> Result<f64> {
    part_loglik(state, structure, p, None)
}
