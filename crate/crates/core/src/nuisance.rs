//! Built-in initial estimators for `Q̄` and `g`: main-terms logistic
//! regressions fitted by Newton-Raphson (IRLS), or intercept-only models.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::{Bounds, Dataset, NuisanceFits};
use crate::error::{Error, Result};
use crate::glm::{log_loss, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelForm {
    /// Logistic regression on all covariates. For `Q̄` this is fitted
    /// separately within each treatment arm (design `1, A, W, A·W`).
    MainTerms,
    InterceptOnly,
}

const MAX_IRLS: usize = 100;
const RIDGE: f64 = 1e-8;

/// Logistic regression coefficients for `design` (rows = observations).
pub fn fit_logistic(design: &DMatrix<f64>, y: &[f64]) -> Result<DVector<f64>> {
    let (m, k) = design.shape();
    if y.len() != m {
        return Err(Error::Invalid("design and outcome lengths differ".into()));
    }
    let yv = DVector::from_column_slice(y);
    let nll = |beta: &DVector<f64>| -> f64 {
        let eta = design * beta;
        eta.iter().zip(y).map(|(&e, &yi)| log_loss(yi, sigmoid(e).clamp(1e-300, 1.0 - 1e-16))).sum()
    };
    let mut beta = DVector::zeros(k);
    let mut loss = nll(&beta);
    for _ in 0..MAX_IRLS {
        let eta = design * &beta;
        let p = eta.map(sigmoid);
        let grad = design.transpose() * (&yv - &p);
        let mut weighted = design.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= p[i] * (1.0 - p[i]);
        }
        let mut hess = design.transpose() * weighted;
        for j in 0..k {
            hess[(j, j)] += RIDGE;
        }
        let Some(chol) = hess.cholesky() else {
            return Err(Error::Degenerate("logistic information matrix is singular".into()));
        };
        let delta = chol.solve(&grad);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let trial = &beta + &delta * t;
            let l = nll(&trial);
            if l <= loss {
                beta = trial;
                loss = l;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved || delta.amax() * t < 1e-10 {
            break;
        }
    }
    Ok(beta)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Initial `Q̄` and `g` fits, clamped into the given bounds.
pub fn fit_nuisance(data: &Dataset, q_form: ModelForm, g_form: ModelForm, q_bounds: Bounds, g_bounds: Bounds) -> Result<NuisanceFits> {
    let n = data.n();
    let p = data.p();

    let g1 = match g_form {
        ModelForm::InterceptOnly => {
            let a: Vec<f64> = data.treatment().iter().map(|&a| a as f64).collect();
            vec![mean(&a); n]
        }
        ModelForm::MainTerms => {
            let x = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { data.w(i)[j - 1] });
            let a: Vec<f64> = data.treatment().iter().map(|&a| a as f64).collect();
            let beta = fit_logistic(&x, &a)?;
            (&x * beta).iter().map(|&e| sigmoid(e)).collect()
        }
    };

    let (q0, q1) = match q_form {
        ModelForm::InterceptOnly => {
            let m = mean(data.outcome());
            (vec![m; n], vec![m; n])
        }
        ModelForm::MainTerms => {
            let row = |i: usize, a: f64| -> Vec<f64> {
                let w = data.w(i);
                let mut r = Vec::with_capacity(2 * p + 2);
                r.push(1.0);
                r.push(a);
                r.extend_from_slice(w);
                r.extend(w.iter().map(|v| a * v));
                r
            };
            let x = DMatrix::from_fn(n, 2 * p + 2, |i, j| row(i, data.a(i) as f64)[j]);
            let beta = fit_logistic(&x, data.outcome())?;
            let predict = |a: f64| -> Vec<f64> {
                (0..n).map(|i| sigmoid(row(i, a).iter().zip(beta.iter()).map(|(x, b)| x * b).sum())).collect()
            };
            (predict(0.0), predict(1.0))
        }
    };

    NuisanceFits::new(q0, q1, g1, q_bounds, g_bounds)
}
