//! Known-truth data generating processes and Monte Carlo experiments.
//!
//! Randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`): a master seed
//! selects the key and each replication reads its own stream, so replication
//! `r` sees the same draws whatever the thread count or execution order.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Bounds, Dataset, FitRow, NuisanceFits};
use crate::error::{Error, Result};
use crate::glm::sigmoid;
use crate::inference::{build_report, TmleReport};
use crate::nuisance::{fit_nuisance, ModelForm};
use crate::params::ParameterSpec;
use crate::targeting::{iterate, StopReason, TargetingConfig, TargetingState, Variant};

/// Marginal law of one covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum WLaw {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
}

impl WLaw {
    fn sample(&self, rng: &mut ChaCha20Rng) -> f64 {
        match *self {
            WLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            WLaw::Normal { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
        }
    }
}

/// Logistic propensity and outcome truths over independent covariates.
///
/// `q0_coefficients` are ordered `[intercept, A, W_1..W_p, A·W_1..A·W_p]`;
/// `g0_coefficients` are `[intercept, W_1..W_p]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DgpSpec {
    pub name: String,
    pub p: usize,
    pub w_law: Vec<WLaw>,
    pub g0_coefficients: Vec<f64>,
    pub q0_coefficients: Vec<f64>,
    pub positivity_bound: f64,
}

impl DgpSpec {
    pub fn new(
        name: impl Into<String>,
        w_law: Vec<WLaw>,
        g0_coefficients: Vec<f64>,
        q0_coefficients: Vec<f64>,
        positivity_bound: f64,
    ) -> Result<Self> {
        let p = w_law.len();
        if p == 0 {
            return Err(Error::Invalid("a DGP needs at least one covariate".into()));
        }
        if g0_coefficients.len() != p + 1 || q0_coefficients.len() != 2 * p + 2 {
            return Err(Error::Invalid(format!(
                "coefficient lengths must be p+1={} and 2p+2={}",
                p + 1,
                2 * p + 2
            )));
        }
        if !(positivity_bound > 0.0 && positivity_bound < 0.5) {
            return Err(Error::Invalid("positivity_bound must lie in (0, 0.5)".into()));
        }
        Ok(Self { name: name.into(), p, w_law, g0_coefficients, q0_coefficients, positivity_bound })
    }

    /// Well-behaved design: propensity truncated into `[0.2, 0.8]`.
    pub fn dgp_a() -> Self {
        Self::new(
            "dgp-a",
            vec![WLaw::Uniform { lo: -1.0, hi: 1.0 }, WLaw::Normal { mean: 0.0, sd: 1.0 }],
            vec![0.1, 0.6, -0.5],
            vec![-0.4, 0.7, 0.8, -0.5, 0.3, 0.4],
            0.2,
        )
        .expect("valid built-in DGP")
    }

    /// Near-positivity violation: propensity truncated at 0.01.
    pub fn dgp_b() -> Self {
        Self::new(
            "dgp-b",
            vec![WLaw::Uniform { lo: -1.0, hi: 1.0 }, WLaw::Normal { mean: 0.0, sd: 1.0 }],
            vec![-1.5, 1.5, 2.5],
            vec![-0.3, 0.8, 0.6, 0.5, -0.2, 0.3],
            0.01,
        )
        .expect("valid built-in DGP")
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "a" | "dgp-a" => Ok(Self::dgp_a()),
            "b" | "dgp-b" => Ok(Self::dgp_b()),
            other => Err(Error::Invalid(format!("unknown DGP `{other}` (valid: dgp-a, dgp-b)"))),
        }
    }

    /// True `g0(1 | w)` after truncation.
    pub fn g0(&self, w: &[f64]) -> f64 {
        let eta = self.g0_coefficients[0] + w.iter().zip(&self.g0_coefficients[1..]).map(|(x, b)| x * b).sum::<f64>();
        sigmoid(eta).clamp(self.positivity_bound, 1.0 - self.positivity_bound)
    }

    /// True `Q̄0(a, w)`.
    pub fn q0(&self, a: u8, w: &[f64]) -> f64 {
        let c = &self.q0_coefficients;
        let af = a as f64;
        let p = self.p;
        let mut eta = c[0] + c[1] * af;
        for k in 0..p {
            eta += c[2 + k] * w[k] + c[2 + p + k] * af * w[k];
        }
        sigmoid(eta)
    }

    fn truth_row(&self, w: &[f64]) -> FitRow {
        FitRow { qbar0: self.q0(0, w), qbar1: self.q0(1, w), g1: self.g0(w) }
    }

    fn draw_w(&self, rng: &mut ChaCha20Rng, out: &mut Vec<f64>) {
        out.extend(self.w_law.iter().map(|law| law.sample(rng)));
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const TRUTH_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub dataset: Dataset,
    /// DGP truth at the drawn covariates.
    pub truth: NuisanceFits,
}

/// Draws `n` observations on stream 0 of `seed`.
pub fn draw(dgp: &DgpSpec, n: usize, seed: u64) -> Result<SimulatedData> {
    draw_stream(dgp, n, seed, 0)
}

pub fn draw_stream(dgp: &DgpSpec, n: usize, seed: u64, stream: u64) -> Result<SimulatedData> {
    let mut rng = rng_for(seed, stream);
    let mut w = Vec::with_capacity(n * dgp.p);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let (mut q0, mut q1, mut g1) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        dgp.draw_w(&mut rng, &mut w);
        let row = dgp.truth_row(&w[i * dgp.p..]);
        let ai = u8::from(rng.random::<f64>() < row.g1);
        let yi = f64::from(u8::from(rng.random::<f64>() < row.qbar(ai)));
        a.push(ai as f64);
        y.push(yi);
        q0.push(row.qbar0);
        q1.push(row.qbar1);
        g1.push(row.g1);
    }
    let dataset = Dataset::new(w, dgp.p, &a, &y, None)?;
    let truth = NuisanceFits::new(q0, q1, g1, Bounds::default_q(), Bounds::default_g())?;
    Ok(SimulatedData { dataset, truth })
}

/// Monte Carlo truth of a parameter and of its efficient influence-curve
/// covariance under the DGP.
#[derive(Debug, Clone, Serialize)]
pub struct Truth {
    pub value: Vec<f64>,
    pub mc_se: Vec<f64>,
    /// `Var(D*(P0))`, `d × d`, row-major.
    pub eic_covariance: Vec<Vec<f64>>,
    pub mc_n: usize,
}

impl Truth {
    pub fn eic_variance(&self, j: usize) -> f64 {
        self.eic_covariance[j][j]
    }
}

/// Averages `Q̄0`-based plug-in values over `mc_n` fresh covariate draws.
///
/// The influence-curve covariance uses the exact conditional variance of the
/// outcome residual given `W`:
/// `E[Σ_a g0(a|W) H1_i(a) H1_j(a) Q̄0(a)(1 − Q̄0(a))] + Cov(f_i, f_j)`.
pub fn truth(dgp: &DgpSpec, spec: &ParameterSpec, mc_n: usize, seed: u64) -> Result<Truth> {
    if mc_n < 2 {
        return Err(Error::Invalid("truth needs mc_n >= 2".into()));
    }
    if spec.has_h2() {
        return Err(Error::Invalid("Monte Carlo truth supports parameters without a propensity term".into()));
    }
    let d = spec.d();
    let comps = spec.components();
    let mut rng = rng_for(seed, TRUTH_STREAM);
    let mut w = Vec::with_capacity(dgp.p);
    let mut sum = vec![0.0; d];
    let mut cross = DMatrix::<f64>::zeros(d, d);
    let mut resid = DMatrix::<f64>::zeros(d, d);
    let mut f = vec![0.0; d];
    let mut h = [vec![0.0; d], vec![0.0; d]];
    // cross products are accumulated around the first draw to avoid cancellation
    let mut shift: Option<Vec<f64>> = None;
    let mut shifted_sum = vec![0.0; d];
    for _ in 0..mc_n {
        w.clear();
        dgp.draw_w(&mut rng, &mut w);
        let row = dgp.truth_row(&w);
        for (j, c) in comps.iter().enumerate() {
            f[j] = (c.f)(&row, &w);
            h[0][j] = (c.h1)(&row, 0, &w);
            h[1][j] = (c.h1)(&row, 1, &w);
            sum[j] += f[j];
        }
        let s0 = shift.get_or_insert_with(|| f.clone());
        for j in 0..d {
            shifted_sum[j] += f[j] - s0[j];
        }
        for a in 0..d {
            for b in 0..d {
                cross[(a, b)] += (f[a] - s0[a]) * (f[b] - s0[b]);
                let mut r = 0.0;
                for arm in [0u8, 1u8] {
                    let q = row.qbar(arm);
                    r += row.g(arm) * h[arm as usize][a] * h[arm as usize][b] * q * (1.0 - q);
                }
                resid[(a, b)] += r;
            }
        }
    }
    let m = mc_n as f64;
    let value: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let centered: Vec<f64> = shifted_sum.iter().map(|s| s / m).collect();
    let cov_f = DMatrix::from_fn(d, d, |a, b| (cross[(a, b)] - m * centered[a] * centered[b]) / (m - 1.0));
    let eic = DMatrix::from_fn(d, d, |a, b| resid[(a, b)] / m + cov_f[(a, b)]);
    Ok(Truth {
        mc_se: (0..d).map(|j| (cov_f[(j, j)].max(0.0) / m).sqrt()).collect(),
        value,
        eic_covariance: (0..d).map(|a| eic.row(a).iter().copied().collect()).collect(),
        mc_n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NuisanceMode {
    /// DGP truth.
    Oracle,
    /// Main-terms logistic fits for both factors.
    Fitted,
    /// Intercept-only propensity, fitted outcome regression.
    MisspecifiedG,
    /// Intercept-only outcome regression, fitted propensity.
    MisspecifiedQ,
}

impl NuisanceMode {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "oracle" => Ok(Self::Oracle),
            "fitted" => Ok(Self::Fitted),
            "misspecified-g" => Ok(Self::MisspecifiedG),
            "misspecified-q" => Ok(Self::MisspecifiedQ),
            other => Err(Error::Invalid(format!(
                "unknown nuisance mode `{other}` (valid: oracle, fitted, misspecified-g, misspecified-q)"
            ))),
        }
    }
}

pub fn initial_fits(sim: &SimulatedData, mode: NuisanceMode) -> Result<NuisanceFits> {
    let (q, g) = match mode {
        NuisanceMode::Oracle => return Ok(sim.truth.clone()),
        NuisanceMode::Fitted => (ModelForm::MainTerms, ModelForm::MainTerms),
        NuisanceMode::MisspecifiedG => (ModelForm::MainTerms, ModelForm::InterceptOnly),
        NuisanceMode::MisspecifiedQ => (ModelForm::InterceptOnly, ModelForm::MainTerms),
    };
    fit_nuisance(&sim.dataset, q, g, Bounds::default_q(), Bounds::default_g())
}

#[derive(Debug, Clone)]
pub struct ExperimentSettings {
    pub dgp: DgpSpec,
    pub spec: ParameterSpec,
    pub n: usize,
    pub reps: usize,
    pub mode: NuisanceMode,
    pub targeting: TargetingConfig,
    pub alpha: f64,
    pub seed: u64,
    pub truth_mc_n: usize,
}

impl ExperimentSettings {
    pub fn new(dgp: DgpSpec, spec: ParameterSpec, n: usize, reps: usize, mode: NuisanceMode, variant: Variant, seed: u64) -> Self {
        Self {
            dgp,
            spec,
            n,
            reps,
            mode,
            targeting: TargetingConfig { variant, ..TargetingConfig::default() },
            alpha: 0.05,
            seed,
            truth_mc_n: 1_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Replication {
    pub data: SimulatedData,
    pub state: TargetingState,
    pub report: TmleReport,
}

/// One replication: draw on stream `rep`, fit, target, report.
pub fn run_replication(settings: &ExperimentSettings, rep: u64) -> Result<Replication> {
    let data = draw_stream(&settings.dgp, settings.n, settings.seed, rep)?;
    let init = initial_fits(&data, settings.mode)?;
    let state = iterate(&init, &settings.spec, &data.dataset, &settings.targeting)?;
    let report = build_report(&settings.spec, &data.dataset, &state, settings.targeting.variant, settings.alpha)?;
    Ok(Replication { data, state, report })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub components: Vec<String>,
    pub truth: Vec<f64>,
    pub truth_mc_se: Vec<f64>,
    pub mean_estimate: Vec<f64>,
    pub bias: Vec<f64>,
    pub empirical_variance: Vec<f64>,
    /// `Var(D*(P0)) / n`.
    pub cr_bound_variance: Vec<f64>,
    pub coverage: Vec<f64>,
    pub mean_iterations: f64,
    pub solved_rate: f64,
    /// Replications that returned an error; excluded from every aggregate.
    pub failures: usize,
    pub reps: usize,
}

#[derive(Debug, Clone, Copy)]
struct RepSummary {
    iterations: usize,
    solved: bool,
}

pub fn run_experiment(settings: &ExperimentSettings) -> Result<ExperimentResult> {
    if settings.reps == 0 {
        return Err(Error::Invalid("reps must be at least 1".into()));
    }
    let truth = truth(&settings.dgp, &settings.spec, settings.truth_mc_n, settings.seed)?;
    let outcomes: Vec<Option<(TmleReport, RepSummary)>> = (0..settings.reps as u64)
        .into_par_iter()
        .map(|rep| {
            run_replication(settings, rep).ok().map(|r| {
                let s = RepSummary { iterations: r.state.iteration, solved: r.state.stop_reason == StopReason::Solved };
                (r.report, s)
            })
        })
        .collect();
    Ok(aggregate(&settings.spec, settings.n, &truth, &outcomes))
}

fn aggregate(spec: &ParameterSpec, n: usize, truth: &Truth, outcomes: &[Option<(TmleReport, RepSummary)>]) -> ExperimentResult {
    let d = spec.d();
    let ok: Vec<&(TmleReport, RepSummary)> = outcomes.iter().flatten().collect();
    let k = ok.len() as f64;
    let mut mean = vec![0.0; d];
    let mut covered = vec![0.0; d];
    for (r, _) in &ok {
        for j in 0..d {
            mean[j] += r.estimates[j];
            if r.ci_lower[j] <= truth.value[j] && truth.value[j] <= r.ci_upper[j] {
                covered[j] += 1.0;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut var = vec![0.0; d];
    for (r, _) in &ok {
        for j in 0..d {
            var[j] += (r.estimates[j] - mean[j]).powi(2);
        }
    }
    var.iter_mut().for_each(|v| *v /= (k - 1.0).max(1.0));

    ExperimentResult {
        components: spec.component_names(),
        truth: truth.value.clone(),
        truth_mc_se: truth.mc_se.clone(),
        bias: mean.iter().zip(&truth.value).map(|(m, t)| m - t).collect(),
        mean_estimate: mean,
        empirical_variance: var,
        cr_bound_variance: (0..d).map(|j| truth.eic_variance(j) / n as f64).collect(),
        coverage: covered.iter().map(|c| c / k).collect(),
        mean_iterations: ok.iter().map(|(_, s)| s.iterations as f64).sum::<f64>() / k,
        solved_rate: ok.iter().filter(|(_, s)| s.solved).count() as f64 / k,
        failures: outcomes.len() - ok.len(),
        reps: outcomes.len(),
    }
}
