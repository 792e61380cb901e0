//! Logistic link helpers and the single-coefficient offset logistic solver.
//!
//! Every fluctuation in the targeting loop reduces to
//! `mean = expit(offset + ε · covariate)` with a fixed offset; this module
//! finds the weighted maximum-likelihood `ε`. Outcomes may be fractional in
//! `[0, 1]` (quasi-binomial likelihood).

use serde::Serialize;

use crate::data::Bounds;
use crate::error::{Error, Result};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `1 / (1 + e^{-x})` clamped into `bounds`.
#[inline]
pub fn expit(x: f64, bounds: Bounds) -> f64 {
    bounds.clamp(sigmoid(x))
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Bernoulli log-loss of outcome `y` at probability `q` (both in `[0, 1]`).
#[inline]
pub fn log_loss(y: f64, q: f64) -> f64 {
    let mut l = 0.0;
    if y > 0.0 {
        l -= y * q.ln();
    }
    if y < 1.0 {
        l -= (1.0 - y) * (1.0 - q).ln();
    }
    l
}

#[derive(Debug, Clone)]
pub struct OffsetLogisticProblem {
    outcome: Vec<f64>,
    offset: Vec<f64>,
    covariate: Vec<f64>,
    weights: Vec<f64>,
}

impl OffsetLogisticProblem {
    /// Unit-weight problem.
    pub fn new(outcome: Vec<f64>, offset: Vec<f64>, covariate: Vec<f64>) -> Result<Self> {
        let m = outcome.len();
        Self::weighted(outcome, offset, covariate, vec![1.0; m])
    }

    pub fn weighted(outcome: Vec<f64>, offset: Vec<f64>, covariate: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let m = outcome.len();
        if m == 0 {
            return Err(Error::Invalid("offset logistic problem needs at least one row".into()));
        }
        if offset.len() != m || covariate.len() != m || weights.len() != m {
            return Err(Error::Invalid("offset logistic problem sequences differ in length".into()));
        }
        if outcome.iter().any(|y| !(0.0..=1.0).contains(y)) {
            return Err(Error::Invalid("offset logistic outcomes must lie in [0, 1]".into()));
        }
        if offset.iter().chain(&covariate).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("offsets and covariates must be finite".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().all(|w| *w == 0.0) {
            return Err(Error::Invalid("weights must be finite, nonnegative and not all zero".into()));
        }
        Ok(Self { outcome, offset, covariate, weights })
    }

    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    pub fn covariate(&self) -> &[f64] {
        &self.covariate
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Weighted negative log-likelihood at `eps`.
    pub fn loss(&self, eps: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.len() {
            let eta = self.offset[i] + eps * self.covariate[i];
            acc += self.weights[i] * (softplus(eta) - self.outcome[i] * eta);
        }
        acc
    }

    /// Weighted score `Σ w c (y − expit(offset + ε c))`, i.e. `−dloss/dε`.
    pub fn score(&self, eps: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.len() {
            let c = self.covariate[i];
            let p = sigmoid(self.offset[i] + eps * c);
            acc += self.weights[i] * c * (self.outcome[i] - p);
        }
        acc
    }

    /// Observed information `Σ w c² p (1 − p)`.
    pub fn information(&self, eps: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.len() {
            let c = self.covariate[i];
            let p = sigmoid(self.offset[i] + eps * c);
            acc += self.weights[i] * c * c * p * (1.0 - p);
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonFit {
    pub epsilon: f64,
    pub score_at_solution: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Tolerance on the weight-normalized score `|score| / Σw`.
    pub score_tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub max_abs_epsilon: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { score_tol: 1e-10, max_iter: 50, max_halvings: 30, max_abs_epsilon: 50.0 }
    }
}

/// Newton-Raphson with step halving for the single fluctuation coefficient.
pub fn fit_epsilon(problem: &OffsetLogisticProblem, config: &SolverConfig) -> Result<EpsilonFit> {
    if problem.covariate.iter().zip(&problem.weights).all(|(c, w)| *c == 0.0 || *w == 0.0) {
        return Err(Error::NoInformation);
    }
    let tol = config.score_tol * problem.total_weight();

    let mut eps = 0.0;
    let mut loss = problem.loss(eps);
    let mut score = problem.score(eps);
    let mut iterations = 0;

    let fit = |eps, score, iterations, converged| EpsilonFit { epsilon: eps, score_at_solution: score, converged, iterations };

    while iterations < config.max_iter {
        if score.abs() <= tol {
            return Ok(fit(eps, score, iterations, true));
        }
        iterations += 1;
        let info = problem.information(eps);
        if !(info > 0.0 && info.is_finite()) {
            return Err(Error::NonConvergence {
                msg: format!("information vanished at epsilon={eps}"),
                best: fit(eps, score, iterations, false),
            });
        }
        let step = score / info;

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let trial = eps + t * step;
            let trial_loss = problem.loss(trial);
            // near the optimum loss differences drop below rounding; fall back to the score
            let slack = 64.0 * f64::EPSILON * loss.abs().max(1.0);
            if trial_loss < loss || (trial_loss <= loss + slack && problem.score(trial).abs() < score.abs()) {
                accepted = Some((trial, trial_loss));
                break;
            }
            t *= 0.5;
        }
        let Some((next, next_loss)) = accepted else {
            return Err(Error::NonConvergence {
                msg: format!("step halving exhausted at epsilon={eps}"),
                best: fit(eps, score, iterations, false),
            });
        };
        eps = next;
        loss = next_loss;
        score = problem.score(eps);
        if eps.abs() > config.max_abs_epsilon {
            return Err(Error::NonConvergence {
                msg: format!("|epsilon| exceeded {} (separation or positivity failure)", config.max_abs_epsilon),
                best: fit(eps, score, iterations, false),
            });
        }
    }
    if score.abs() <= tol {
        return Ok(fit(eps, score, iterations, true));
    }
    Err(Error::NonConvergence {
        msg: format!("no convergence after {} Newton iterations", config.max_iter),
        best: fit(eps, score, iterations, false),
    })
}
