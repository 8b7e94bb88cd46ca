//! Quasi-Newton minimization with finite-difference gradients.

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// An objective on an unconstrained vector.
pub trait Objective {
    fn value(&mut self, x: &[f64]) -> Result<f64>;

    /// Defaults to central finite differences.
    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let h = fd_step(x[i]);
            xp[i] = x[i] + h;
            let fp = self.value(&xp)?;
            xp[i] = x[i] - h;
            let fm = self.value(&xp)?;
            xp[i] = x[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        Ok(g)
    }

    /// Called when the optimizer moves to `x`, after `value(x)`.
    fn accept(&mut self, _x: &[f64]) {}
}

/// Central-difference step: relative `1e-5`, floored at `1e-7`.
pub fn fd_step(x: f64) -> f64 {
    (1e-5 * x.abs()).max(1e-7)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Relative change in the objective.
    pub rel_tol: f64,
    /// Gradient max-norm.
    pub grad_tol: f64,
    /// Largest max-norm step tried by the line search.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 500,
            rel_tol: 1e-8,
            grad_tol: 1e-4,
            max_step: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Converged,
    IterationLimit,
    /// The line search could not decrease the objective before the tolerances were met.
    LineSearchFailed,
}

impl Status {
    pub fn message(&self) -> &'static str {
        match self {
            Status::Converged => "relative convergence",
            Status::IterationLimit => "iteration limit",
            Status::LineSearchFailed => "false convergence",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub status: Status,
    /// Objective at every accepted point, starting with `x0`.
    pub trace: Vec<f64>,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Consecutive iterations below `rel_tol` that count as convergence even when
/// the gradient test fails, as on a flat ridge towards a parameter boundary.
const STALL_ITERATIONS: usize = 3;

/// BFGS with an Armijo backtracking line search.
pub fn minimize<O: Objective + ?Sized>(obj: &mut O, x0: &[f64], opts: &BfgsOptions) -> Result<BfgsResult> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut f = obj.value(&x)?;
    obj.accept(&x);
    let mut trace = vec![f];
    if n == 0 {
        return Ok(BfgsResult { x, f, grad: Vec::new(), iterations: 0, status: Status::Converged, trace });
    }
    let mut g = obj.gradient(&x)?;
    if max_abs(&g) < opts.grad_tol {
        return Ok(BfgsResult { x, f, grad: g, iterations: 0, status: Status::Converged, trace });
    }
    let identity = || -> Vec<Vec<f64>> { (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect() };
    let mut hinv = identity();
    let mut fresh = true;
    let mut stalled = 0;
    for it in 1..=opts.max_iter {
        let mut attempt = 0;
        let (xn, fnew) = loop {
            let mut p: Vec<f64> = (0..n).map(|i| -dot(&hinv[i], &g)).collect();
            let mut slope = dot(&p, &g);
            if !(slope < 0.0) {
                hinv = identity();
                fresh = true;
                p = g.iter().map(|v| -v).collect();
                slope = dot(&p, &g);
            }
            let mut cap = opts.max_step;
            if fresh {
                cap = cap.min(1.0);
            }
            let norm = max_abs(&p);
            if norm > cap {
                p.iter_mut().for_each(|v| *v *= cap / norm);
                slope *= cap / norm;
            }
            let mut alpha = 1.0;
            let mut found = None;
            for _ in 0..40 {
                let xt: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + alpha * b).collect();
                let ft = obj.value(&xt).unwrap_or(f64::INFINITY);
                if ft.is_finite() && ft <= f + 1e-4 * alpha * slope {
                    found = Some((xt, ft));
                    break;
                }
                let next = if ft.is_finite() {
                    // minimizer of the quadratic through f, slope and ft
                    let q = -slope * alpha * alpha / (2.0 * (ft - f - slope * alpha));
                    q.clamp(0.1 * alpha, 0.5 * alpha)
                } else {
                    0.25 * alpha
                };
                alpha = next;
            }
            match found {
                Some(r) => break r,
                None if attempt == 0 && !fresh => {
                    hinv = identity();
                    fresh = true;
                    attempt += 1;
                }
                None => {
                    return Ok(BfgsResult { x, f, grad: g, iterations: it - 1, status: Status::LineSearchFailed, trace });
                }
            }
        };
        obj.accept(&xn);
        let gn = obj.gradient(&xn)?;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                let scale = sy / dot(&y, &y);
                hinv = (0..n).map(|i| (0..n).map(|j| if i == j { scale } else { 0.0 }).collect()).collect();
                fresh = false;
            }
            let hy: Vec<f64> = (0..n).map(|i| dot(&hinv[i], &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    hinv[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        let rel = (f - fnew).abs() / fnew.abs().max(1e-10);
        x = xn;
        f = fnew;
        g = gn;
        trace.push(f);
        log::debug!("outer iteration {it}: f = {f}, |g| = {:e}", max_abs(&g));
        stalled = if rel < opts.rel_tol { stalled + 1 } else { 0 };
        if stalled > 0 && max_abs(&g) < opts.grad_tol || stalled >= STALL_ITERATIONS {
            return Ok(BfgsResult { x, f, grad: g, iterations: it, status: Status::Converged, trace });
        }
    }
    Ok(BfgsResult { x, f, grad: g, iterations: opts.max_iter, status: Status::IterationLimit, trace })
}
