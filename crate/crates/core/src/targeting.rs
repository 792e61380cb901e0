//! The targeting step.
//!
//! Each round projects the clever covariates onto the unit vector
//! `P_n D* / ‖P_n D*‖₂` and fits one scalar fluctuation on the offset logistic
//! submodel
//!
//! ```text
//! logit Q̄_ε = logit Q̄ + ε ⟨H1, dir⟩
//! logit g_ε = logit g + ε ⟨H2, dir⟩
//! ```
//!
//! whose empirical loss has slope `−‖P_n D*‖₂` at `ε = 0`. [`iterate`] repeats
//! this until every component's mean influence curve is below
//! `σ̂_j / n`; [`one_step_ulfm`] walks the same submodels in fixed tiny steps
//! without any regression fit.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::{Dataset, NuisanceFits};
use crate::error::{Error, Result};
use crate::glm::{self, EpsilonFit, OffsetLogisticProblem, SolverConfig};
use crate::params::{self, ParameterSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Standard,
    /// Moves the propensity denominator of `H1` into observation weights.
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Solved,
    MaxIter,
    EpsilonNegligible,
    /// Micro-step solver only: a further fixed step would increase the loss.
    MicroStepFloor,
    /// The fluctuation regression failed to converge; fits are the last good ones.
    SolverFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Iterative,
    OneStep,
}

#[derive(Debug, Clone)]
pub struct TargetingConfig {
    pub variant: Variant,
    pub max_iter: usize,
    pub micro_step: f64,
    pub max_micro_steps: usize,
    /// Multiplies the `σ̂_j / n` stopping threshold.
    pub tol_scale: f64,
    pub solver: SolverConfig,
}

impl Default for TargetingConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Standard,
            max_iter: 100,
            micro_step: 1e-4,
            max_micro_steps: 1_000_000,
            tol_scale: 1.0,
            solver: SolverConfig::default(),
        }
    }
}

impl TargetingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Invalid("max_iter must be at least 1".into()));
        }
        if self.micro_step.is_nan() || self.micro_step <= 0.0 {
            return Err(Error::Invalid("micro_step must be positive".into()));
        }
        if self.tol_scale.is_nan() || self.tol_scale <= 0.0 {
            return Err(Error::Invalid("tol_scale must be positive".into()));
        }
        Ok(())
    }
}

const NEGLIGIBLE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct TargetingState {
    pub fits: NuisanceFits,
    pub solver: SolverKind,
    /// Regression fits (iterative) or accepted micro-steps (one-step).
    pub iteration: usize,
    pub loss_trace: Vec<f64>,
    pub eic_mean_trace: Vec<Vec<f64>>,
    pub epsilon_trace: Vec<f64>,
    /// Sup-norm of the outcome-row regression covariate at each step.
    pub covariate_sup_trace: Vec<f64>,
    pub converged: bool,
    pub stop_reason: StopReason,
}

impl TargetingState {
    pub fn eic_means_final(&self) -> &[f64] {
        self.eic_mean_trace.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// True when the loss trace never rises by more than `slack`.
    pub fn loss_non_increasing(&self, slack: f64) -> bool {
        self.loss_trace.windows(2).all(|w| w[1] <= w[0] + slack)
    }
}

/// Mean and spread of the influence curve at the current fits.
#[derive(Debug, Clone)]
pub struct EicSummary {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub norm: f64,
}

impl EicSummary {
    pub fn compute(spec: &ParameterSpec, fits: &NuisanceFits, data: &Dataset) -> Self {
        Self::from_matrix(&params::eic_matrix(spec, fits, data))
    }

    pub fn from_matrix(eic: &DMatrix<f64>) -> Self {
        let means = params::column_means(eic);
        let sds = params::column_sds(eic);
        let norm = means.iter().map(|m| m * m).sum::<f64>().sqrt();
        Self { means, sds, norm }
    }

    /// `|P_n D*_j| < tol_scale · σ̂_j / n` for every component.
    pub fn stopping_rule_holds(&self, n: usize, tol_scale: f64) -> bool {
        self.means.iter().zip(&self.sds).all(|(m, s)| m.abs() < tol_scale * s / n as f64)
    }
}

/// Unit vector along the mean influence curve; `None` when already targeted.
pub fn direction(eic_means: &[f64]) -> Option<Vec<f64>> {
    let norm = eic_means.iter().map(|m| m * m).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(eic_means.iter().map(|m| m / norm).collect())
}

/// Row-wise inner products `⟨H_i, dir⟩`.
pub fn composite_covariate(h: &DMatrix<f64>, dir: &[f64]) -> Vec<f64> {
    (0..h.nrows())
        .map(|i| {
            let mut acc = 0.0;
            for (j, dj) in dir.iter().enumerate() {
                acc += h[(i, j)] * dj;
            }
            acc
        })
        .collect()
}

/// Pooled empirical loss: outcome log-loss (with `1/g` weights under the
/// weighted variant) plus propensity log-loss, each averaged over `n`.
pub fn pooled_loss(spec: &ParameterSpec, fits: &NuisanceFits, data: &Dataset, variant: Variant) -> Result<f64> {
    let n = data.n();
    let den = match variant {
        Variant::Standard => None,
        Variant::Weighted => Some(spec.h1_denominator().ok_or(Error::WeightedUnsupported)?),
    };
    let mut y_part = 0.0;
    let mut a_part = 0.0;
    for i in 0..n {
        let row = fits.row(i);
        let a = data.a(i);
        let w = den.map_or(1.0, |f| 1.0 / f(&row, a, data.w(i)));
        y_part += w * glm::log_loss(data.y(i), row.qbar(a));
        a_part += glm::log_loss(a as f64, row.g1);
    }
    Ok((y_part + a_part) / n as f64)
}

/// The one-dimensional fluctuation submodel through a given fit.
#[derive(Debug, Clone)]
pub struct Submodel {
    dir: Vec<f64>,
    n: usize,
    problem: OffsetLogisticProblem,
    /// Update covariates for `Q̄(0, W)` and `Q̄(1, W)`.
    q_update: [Vec<f64>; 2],
    /// Update covariate for `g(1|W)`; `None` when `H2 ≡ 0`.
    g_update: Option<Vec<f64>>,
    y_covariate_sup: f64,
}

impl Submodel {
    pub fn new(
        spec: &ParameterSpec,
        fits: &NuisanceFits,
        data: &Dataset,
        variant: Variant,
        eic_means: &[f64],
    ) -> Result<Self> {
        let dir = direction(eic_means).ok_or_else(|| Error::Invalid("influence-curve mean is zero; already targeted".into()))?;
        let n = data.n();
        let d = spec.d();
        let den = match variant {
            Variant::Standard => None,
            Variant::Weighted => Some(spec.h1_denominator().ok_or(Error::WeightedUnsupported)?),
        };

        let project = |i: usize, a: u8, h: &dyn Fn(usize, usize, u8) -> f64| -> f64 {
            let mut acc = 0.0;
            for (j, dj) in dir.iter().enumerate().take(d) {
                acc += h(j, i, a) * dj;
            }
            acc
        };
        let h1 = |j: usize, i: usize, a: u8| spec.h1_at(j, fits, data, i, a);
        let h2 = |j: usize, i: usize, a: u8| spec.h2_at(j, fits, data, i, a);
        // H1 with its propensity denominator removed under the weighted variant
        let q_cov = |i: usize, a: u8| -> f64 {
            let c = project(i, a, &h1);
            match den {
                Some(f) => f(&fits.row(i), a, data.w(i)) * c,
                None => c,
            }
        };

        let q_update = [(0..n).map(|i| q_cov(i, 0)).collect::<Vec<_>>(), (0..n).map(|i| q_cov(i, 1)).collect()];

        let mut outcome = Vec::with_capacity(2 * n);
        let mut offset = Vec::with_capacity(2 * n);
        let mut covariate = Vec::with_capacity(2 * n);
        let mut weights = Vec::with_capacity(2 * n);
        let mut y_covariate_sup: f64 = 0.0;
        #[allow(clippy::needless_range_loop)]
        for i in 0..n {
            let row = fits.row(i);
            let a = data.a(i);
            let c = q_update[a as usize][i];
            y_covariate_sup = y_covariate_sup.max(c.abs());
            outcome.push(data.y(i));
            offset.push(glm::logit(row.qbar(a)));
            covariate.push(c);
            weights.push(den.map_or(1.0, |f| 1.0 / f(&row, a, data.w(i))));
        }

        let g_update = if spec.has_h2() {
            let c: Vec<f64> = (0..n).map(|i| project(i, data.a(i), &h2)).collect();
            c.iter().any(|&v| v != 0.0).then_some(c)
        } else {
            None
        };
        if let Some(gc) = &g_update {
            for (i, &c) in gc.iter().enumerate() {
                outcome.push(data.a(i) as f64);
                offset.push(glm::logit(fits.row(i).g1));
                covariate.push(c);
                weights.push(1.0);
            }
        }

        let problem = OffsetLogisticProblem::weighted(outcome, offset, covariate, weights)?;
        Ok(Self { dir, n, problem, q_update, g_update, y_covariate_sup })
    }

    pub fn direction(&self) -> &[f64] {
        &self.dir
    }

    pub fn problem(&self) -> &OffsetLogisticProblem {
        &self.problem
    }

    pub fn y_covariate_sup(&self) -> f64 {
        self.y_covariate_sup
    }

    /// Pooled empirical loss along the submodel, up to the constant
    /// propensity term when `H2 ≡ 0`.
    pub fn loss(&self, eps: f64) -> f64 {
        self.problem.loss(eps) / self.n as f64
    }

    /// Fluctuated fits at `eps`, clamped into the original bounds.
    pub fn apply(&self, fits: &NuisanceFits, eps: f64) -> NuisanceFits {
        let qb = fits.q_bounds();
        let gb = fits.g_bounds();
        let shift = |p: f64, c: f64, b| glm::expit(glm::logit(p) + eps * c, b);
        let q0 = fits.qbar0().iter().zip(&self.q_update[0]).map(|(&p, &c)| shift(p, c, qb)).collect();
        let q1 = fits.qbar1().iter().zip(&self.q_update[1]).map(|(&p, &c)| shift(p, c, qb)).collect();
        let g1 = match &self.g_update {
            Some(gc) => fits.g1().iter().zip(gc).map(|(&p, &c)| shift(p, c, gb)).collect(),
            None => fits.g1().to_vec(),
        };
        NuisanceFits::new(q0, q1, g1, qb, gb).expect("fluctuated fits keep their shape")
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub fits: NuisanceFits,
    pub fit: EpsilonFit,
    pub y_covariate_sup: f64,
}

/// One pooled offset-logistic fluctuation from the current fits.
pub fn targeting_step(
    fits: &NuisanceFits,
    spec: &ParameterSpec,
    data: &Dataset,
    config: &TargetingConfig,
) -> Result<StepOutcome> {
    let summary = EicSummary::compute(spec, fits, data);
    targeting_step_with(fits, spec, data, config, &summary)
}

fn targeting_step_with(
    fits: &NuisanceFits,
    spec: &ParameterSpec,
    data: &Dataset,
    config: &TargetingConfig,
    summary: &EicSummary,
) -> Result<StepOutcome> {
    let sub = Submodel::new(spec, fits, data, config.variant, &summary.means)?;
    let fit = match glm::fit_epsilon(sub.problem(), &config.solver) {
        Err(Error::NoInformation) => return Err(Error::Inconsistent { eic_norm: summary.norm }),
        other => other?,
    };
    Ok(StepOutcome { fits: sub.apply(fits, fit.epsilon), fit, y_covariate_sup: sub.y_covariate_sup() })
}

fn new_state(initial: &NuisanceFits, solver: SolverKind, loss: f64) -> TargetingState {
    TargetingState {
        fits: initial.clone(),
        solver,
        iteration: 0,
        loss_trace: vec![loss],
        eic_mean_trace: Vec::new(),
        epsilon_trace: Vec::new(),
        covariate_sup_trace: Vec::new(),
        converged: false,
        stop_reason: StopReason::MaxIter,
    }
}

fn finish(state: &mut TargetingState, reason: StopReason) {
    state.stop_reason = reason;
    state.converged = reason == StopReason::Solved;
}

/// Iterated targeting until the mean influence curve is second order.
pub fn iterate(
    initial: &NuisanceFits,
    spec: &ParameterSpec,
    data: &Dataset,
    config: &TargetingConfig,
) -> Result<TargetingState> {
    config.validate()?;
    let n = data.n();
    let mut state = new_state(initial, SolverKind::Iterative, pooled_loss(spec, initial, data, config.variant)?);
    let mut negligible = false;
    loop {
        let summary = EicSummary::compute(spec, &state.fits, data);
        state.eic_mean_trace.push(summary.means.clone());
        if summary.norm == 0.0 || summary.stopping_rule_holds(n, config.tol_scale) {
            finish(&mut state, StopReason::Solved);
            break;
        }
        if negligible {
            finish(&mut state, StopReason::EpsilonNegligible);
            break;
        }
        if state.iteration >= config.max_iter {
            finish(&mut state, StopReason::MaxIter);
            break;
        }
        let step = match targeting_step_with(&state.fits, spec, data, config, &summary) {
            Err(Error::NonConvergence { .. }) => {
                finish(&mut state, StopReason::SolverFailure);
                break;
            }
            other => other?,
        };
        state.epsilon_trace.push(step.fit.epsilon);
        state.covariate_sup_trace.push(step.y_covariate_sup);
        negligible = step.fit.epsilon.abs() < NEGLIGIBLE_EPSILON;
        state.fits = step.fits;
        state.iteration += 1;
        state.loss_trace.push(pooled_loss(spec, &state.fits, data, config.variant)?);
    }
    Ok(state)
}

/// Universal-submodel baseline: fixed steps of size `micro_step` along the
/// current direction, recomputed after every step, with no regression fit.
pub fn one_step_ulfm(
    initial: &NuisanceFits,
    spec: &ParameterSpec,
    data: &Dataset,
    config: &TargetingConfig,
) -> Result<TargetingState> {
    config.validate()?;
    let n = data.n();
    let mut loss = pooled_loss(spec, initial, data, config.variant)?;
    let mut state = new_state(initial, SolverKind::OneStep, loss);
    loop {
        let summary = EicSummary::compute(spec, &state.fits, data);
        state.eic_mean_trace.push(summary.means.clone());
        if summary.norm == 0.0 || summary.stopping_rule_holds(n, config.tol_scale) {
            finish(&mut state, StopReason::Solved);
            break;
        }
        if state.iteration >= config.max_micro_steps {
            finish(&mut state, StopReason::MaxIter);
            break;
        }
        let sub = Submodel::new(spec, &state.fits, data, config.variant, &summary.means)?;
        // the loss slope at 0 is -‖P_n D*‖, so a positive step descends
        let next = sub.apply(&state.fits, config.micro_step);
        let next_loss = pooled_loss(spec, &next, data, config.variant)?;
        if next_loss > loss {
            finish(&mut state, StopReason::MicroStepFloor);
            break;
        }
        state.epsilon_trace.push(config.micro_step);
        state.covariate_sup_trace.push(sub.y_covariate_sup());
        state.loss_trace.push(next_loss);
        state.fits = next;
        state.iteration += 1;
        loss = next_loss;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Bounds, EstimandKind, FitRow};
    use crate::params::{ArmFn, ComponentSpec, RowFn};
    use std::sync::Arc;

    #[test]
    fn direction_examples() {
        assert_eq!(direction(&[-0.3]).unwrap(), vec![-1.0]);
        let d = direction(&[0.3, 0.4]).unwrap();
        assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
        assert!(direction(&[0.0, 0.0]).is_none());
    }

    #[test]
    fn composite_covariate_examples() {
        let h = DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 0.0, -1.0, 1.0]);
        let c = composite_covariate(&h, &[0.6, 0.8]);
        assert!((c[0] - 1.2).abs() < 1e-15);
        assert_eq!(c[1], 0.0);
        let h1 = DMatrix::from_row_slice(2, 1, &[3.0, -2.0]);
        assert_eq!(composite_covariate(&h1, &[-1.0]), vec![-3.0, 2.0]);
    }

    fn toy6() -> (Dataset, NuisanceFits) {
        let data = Dataset::new(
            vec![0.1, -0.4, 0.9, 0.3, -1.2, 0.5],
            1,
            &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
            &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0],
            None,
        )
        .unwrap();
        let fits = NuisanceFits::new(
            vec![0.30, 0.45, 0.25, 0.50, 0.35, 0.40],
            vec![0.55, 0.60, 0.70, 0.65, 0.50, 0.58],
            vec![0.40, 0.55, 0.70, 0.35, 0.45, 0.60],
            Bounds::default_q(),
            Bounds::default_g(),
        )
        .unwrap();
        (data, fits)
    }

    #[test]
    fn zero_score_step_leaves_fits() {
        // outcome equals the current prediction at every row, so the score is 0
        let data = Dataset::new(vec![0.0, 1.0, 2.0], 1, &[1.0, 0.0, 1.0], &[0.6, 0.3, 0.6], None).unwrap();
        let fits =
            NuisanceFits::new(vec![0.3; 3], vec![0.6; 3], vec![0.5; 3], Bounds::default_q(), Bounds::default_g())
                .unwrap();
        let spec = ParameterSpec::tsm_vector();
        let sub = Submodel::new(&spec, &fits, &data, Variant::Standard, &[1e-3, 0.0]).unwrap();
        let fit = glm::fit_epsilon(sub.problem(), &SolverConfig::default()).unwrap();
        assert_eq!(fit.epsilon, 0.0);
        assert_eq!(sub.apply(&fits, fit.epsilon).qbar1(), fits.qbar1());
    }

    #[test]
    fn toy_ate_step_matches_grid_search() {
        let (data, fits) = toy6();
        let spec = ParameterSpec::ate();
        let step = targeting_step(&fits, &spec, &data, &TargetingConfig::default()).unwrap();

        // Oracle: minimize the pooled outcome loss over a fine grid, using
        // the unnormalized ATE clever covariate evaluated by hand.
        let h = |i: usize, a: u8| {
            let g = fits.g1()[i];
            if a == 1 {
                1.0 / g
            } else {
                -1.0 / (1.0 - g)
            }
        };
        let loss = |e: f64| -> f64 {
            (0..6)
                .map(|i| {
                    let a = data.a(i);
                    let q = if a == 1 { fits.qbar1()[i] } else { fits.qbar0()[i] };
                    let p = glm::sigmoid(glm::logit(q) + e * h(i, a));
                    glm::log_loss(data.y(i), p)
                })
                .sum()
        };
        let mut best = (f64::INFINITY, 0.0);
        for k in -20_000..=20_000 {
            let e = k as f64 * 5e-5;
            let l = loss(e);
            if l < best.0 {
                best = (l, e);
            }
        }
        let mut fine = best;
        for k in -1_000..=1_000 {
            let e = best.1 + k as f64 * 1e-7;
            let l = loss(e);
            if l < fine.0 {
                fine = (l, e);
            }
        }
        // d = 1: the normalized covariate is sign(P_n D*) · H
        let s = EicSummary::compute(&spec, &fits, &data).means[0].signum();
        assert!((step.fit.epsilon * s - fine.1).abs() < 1e-6, "{} vs {}", step.fit.epsilon * s, fine.1);
        let psi: f64 = (0..6)
            .map(|i| {
                let q1 = glm::sigmoid(glm::logit(fits.qbar1()[i]) + fine.1 * h(i, 1));
                let q0 = glm::sigmoid(glm::logit(fits.qbar0()[i]) + fine.1 * h(i, 0));
                q1 - q0
            })
            .sum::<f64>()
            / 6.0;
        let got = params::plug_in(&spec, &step.fits, &data)[0];
        assert!((got - psi).abs() < 1e-5, "{got} vs {psi}");
    }

    #[test]
    fn weighted_covariates_are_indicators() {
        let data = Dataset::new(vec![0.0, 1.0, 2.0, 3.0], 1, &[1.0, 1.0, 0.0, 0.0], &[1.0, 0.0, 1.0, 0.0], None).unwrap();
        let fits = NuisanceFits::new(
            vec![0.5; 4],
            vec![0.3, 0.4, 0.5, 0.6],
            vec![0.01, 0.02, 0.5, 0.01],
            Bounds::default_q(),
            Bounds::default_g(),
        )
        .unwrap();
        let spec = ParameterSpec::tsm(1);
        let means = EicSummary::compute(&spec, &fits, &data).means;
        let w = Submodel::new(&spec, &fits, &data, Variant::Weighted, &means).unwrap();
        assert!(w.y_covariate_sup() <= 1.0 + 1e-12);
        assert!(w.problem().covariate().iter().all(|c| *c == 0.0 || (c.abs() - 1.0).abs() < 1e-12));
        let s = Submodel::new(&spec, &fits, &data, Variant::Standard, &means).unwrap();
        assert!((s.y_covariate_sup() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn already_targeted_input_takes_no_steps() {
        let data = Dataset::new(vec![0.0, 1.0], 1, &[1.0, 0.0], &[0.6, 0.3], None).unwrap();
        let fits =
            NuisanceFits::new(vec![0.3; 2], vec![0.6; 2], vec![0.5; 2], Bounds::default_q(), Bounds::default_g())
                .unwrap();
        for run in [iterate, one_step_ulfm] {
            let st = run(&fits, &ParameterSpec::ate(), &data, &TargetingConfig::default()).unwrap();
            assert_eq!(st.iteration, 0);
            assert!(st.converged);
            assert_eq!(st.stop_reason, StopReason::Solved);
            assert_eq!(st.fits, fits);
        }
    }

    #[test]
    fn weighted_requires_denominator() {
        let (data, fits) = toy6();
        let base = ParameterSpec::tsm(1);
        let spec = ParameterSpec::new("nodenom", base.components().to_vec(), None).unwrap();
        let cfg = TargetingConfig { variant: Variant::Weighted, ..TargetingConfig::default() };
        assert!(matches!(iterate(&fits, &spec, &data, &cfg), Err(Error::WeightedUnsupported)));
    }

    /// Synthetic parameter with a nonzero propensity-residual term:
    /// `D* = A/g (Y − Q̄(1,W)) + W (A − g) + Q̄(1,W) − Ψ`.
    fn spec_with_h2() -> ParameterSpec {
        let h1: ArmFn = Arc::new(|r: &FitRow, a: u8, _: &[f64]| if a == 1 { 1.0 / r.g1 } else { 0.0 });
        let h2: ArmFn = Arc::new(|_: &FitRow, _: u8, w: &[f64]| w[0]);
        let f: RowFn = Arc::new(|r: &FitRow, _: &[f64]| r.qbar1);
        let c = ComponentSpec { name: "synthetic".into(), kind: EstimandKind::Mean, h1, h2: Some(h2), f };
        ParameterSpec::new("synthetic", vec![c, crate::params::ParameterSpec::tsm(0).components()[0].clone()], None)
            .unwrap()
    }

    #[test]
    fn nonzero_h2_stacks_propensity_rows_and_updates_g() {
        let (data, fits) = toy6();
        let spec = spec_with_h2();
        let summary = EicSummary::compute(&spec, &fits, &data);
        let sub = Submodel::new(&spec, &fits, &data, Variant::Standard, &summary.means).unwrap();
        assert_eq!(sub.problem().len(), 12);

        // derivative of the pooled loss at 0 equals -‖P_n D*‖
        let h = 1e-6;
        let fd = (sub.loss(h) - sub.loss(-h)) / (2.0 * h);
        assert!((fd + summary.norm).abs() < 1e-6 * summary.norm.max(1.0), "{fd} vs {}", summary.norm);

        let step = targeting_step(&fits, &spec, &data, &TargetingConfig::default()).unwrap();
        assert_ne!(step.fits.g1(), fits.g1());
        // logit g moves by eps * <H2, dir>
        let dir = sub.direction();
        for i in 0..data.n() {
            let expected = glm::sigmoid(glm::logit(fits.g1()[i]) + step.fit.epsilon * data.w(i)[0] * dir[0]);
            assert!((step.fits.g1()[i] - expected).abs() < 1e-14);
        }

        let st = iterate(&fits, &spec, &data, &TargetingConfig::default()).unwrap();
        assert_eq!(st.stop_reason, StopReason::Solved);
        assert!(st.loss_non_increasing(1e-10));
    }

    #[test]
    fn uncentered_component_with_zero_covariate_is_inconsistent() {
        let (data, fits) = toy6();
        let h1: ArmFn = Arc::new(|_: &FitRow, _: u8, _: &[f64]| 0.0);
        let f: RowFn = Arc::new(|r: &FitRow, _: &[f64]| r.qbar1);
        let c = ComponentSpec { name: "bad".into(), kind: EstimandKind::Mean, h1, h2: None, f };
        // H1 ≡ 0 cannot move an injected nonzero mean
        let spec = ParameterSpec::new("bad", vec![c], None).unwrap();
        let err = targeting_step_with(
            &fits,
            &spec,
            &data,
            &TargetingConfig::default(),
            &EicSummary { means: vec![0.1], sds: vec![1.0], norm: 0.1 },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Inconsistent { .. }));
    }

    #[test]
    fn config_validation() {
        let bad = TargetingConfig { max_iter: 0, ..TargetingConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TargetingConfig { micro_step: 0.0, ..TargetingConfig::default() };
        assert!(bad.validate().is_err());
    }
}
