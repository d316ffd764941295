//! Limited-memory BFGS in a Hilbert space given by an inner product on the
//! coordinate vectors. The objective returns the Riesz representer of its
//! derivative in that inner product.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
}

/// Armijo sufficient-decrease constant.
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
/// Approximate-Wolfe window `σ φ'(0) ≤ φ'(t) ≤ (2δ − 1) φ'(0)`.
const WOLFE_SIGMA: f64 = 0.9;
const WOLFE_DELTA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective value at every accepted iterate, starting with `x0`.
    pub history: Vec<f64>,
}

impl LbfgsOutcome {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Minimizes `objective` from `x0`. Divergence errors raised by trial points
/// of the line search shrink the step; any other error is returned.
pub fn minimize<F, D>(x0: Vec<f64>, opts: LbfgsOptions, mut objective: F, dot: D) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<Evaluation>,
    D: Fn(&[f64], &[f64]) -> f64,
{
    let mut x = x0;
    let Evaluation { value: mut f, gradient: mut g } = objective(&x)?;
    let mut history = vec![f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;

    let termination = loop {
        let grad_norm = dot(&g, &g).max(0.0).sqrt();
        if grad_norm <= opts.grad_tol {
            break Termination::Converged;
        }
        if iterations >= opts.max_iters {
            break Termination::MaxIterations;
        }

        let mut d = two_loop(&g, &pairs, &dot);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -grad_norm * grad_norm;
        }

        let noise = 64.0 * f64::EPSILON * f.abs().max(1.0);
        // without curvature information the first trial has unit length
        let mut step = if pairs.is_empty() { 1.0_f64.min(1.0 / dot(&d, &d).sqrt()) } else { 1.0 };
        let mut accepted = None;
        let mut last_divergence = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial = x.clone();
            axpy(step, &d, &mut trial);
            match objective(&trial) {
                Ok(eval) => {
                    last_divergence = None;
                    let armijo = eval.value <= f + ARMIJO_C1 * step * slope;
                    let approx_wolfe = eval.value <= f + noise && {
                        let new_slope = dot(&eval.gradient, &d);
                        WOLFE_SIGMA * slope <= new_slope && new_slope <= (2.0 * WOLFE_DELTA - 1.0) * slope
                    };
                    if eval.value.is_finite() && (armijo || approx_wolfe) {
                        accepted = Some((trial, eval));
                        break;
                    }
                }
                Err(err @ Error::Divergence { .. }) => last_divergence = Some(err),
                Err(err) => return Err(err),
            }
            step *= 0.5;
        }

        let Some((x_new, eval)) = accepted else {
            if let Some(err) = last_divergence {
                return Err(err);
            }
            break Termination::LineSearchFailed;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = eval.gradient.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * (dot(&s, &s) * dot(&y, &y)).sqrt() {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, sy));
        }

        x = x_new;
        f = eval.value;
        g = eval.gradient;
        history.push(f);
        iterations += 1;
    };

    let grad_norm = dot(&g, &g).max(0.0).sqrt();
    Ok(LbfgsOutcome { x, value: f, gradient: g, grad_norm, iterations, termination, history })
}

/// `−H g` from the stored curvature pairs.
fn two_loop<D>(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, dot: &D) -> Vec<f64>
where
    D: Fn(&[f64], &[f64]) -> f64,
{
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, sy) in pairs.iter().rev() {
        let a = dot(s, &q) / sy;
        axpy(-a, y, &mut q);
        alphas.push(a);
    }
    if let Some((_, y, sy)) = pairs.back() {
        let gamma = sy / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, sy), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = dot(y, &q) / sy;
        axpy(a - b, s, &mut q);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
