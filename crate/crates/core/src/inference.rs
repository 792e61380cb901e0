//! Influence-curve inference: sample covariance of the efficient influence
//! curve at the targeted fit, Wald intervals and the final report.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::{unscale_estimate, Dataset, OutcomeScale};
use crate::error::{Error, Result};
use crate::params::{self, ParameterSpec};
use crate::targeting::{SolverKind, StopReason, TargetingState, Variant};

/// Standard normal quantile (Wichura's AS 241, ~1e-16 relative accuracy).
#[allow(clippy::excessive_precision)]
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_6,
        133.141_667_891_784_38,
        1_971.590_950_306_551_4,
        13_731.693_765_509_461,
        45_921.953_931_549_871,
        67_265.770_927_008_7,
        33_430.575_583_588_128,
        2_509.080_928_730_122_7,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313_330_701_600_911,
        687.187_007_492_057_9,
        5_394.196_021_424_751,
        21_213.794_301_586_596,
        39_307.895_800_092_71,
        28_729.085_735_721_943,
        5_226.495_278_852_854_6,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_6,
        4.630_337_846_156_545_3,
        5.769_497_221_460_691_4,
        3.647_848_324_763_204_6,
        1.270_458_252_452_368_4,
        0.241_780_725_177_450_61,
        0.022_723_844_989_269_185,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_8,
        1.676_384_830_183_803_8,
        0.689_767_334_985_100_0,
        0.148_103_976_427_480_07,
        0.015_198_666_563_616_457,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_8e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_8,
        5.463_784_911_164_114_4,
        1.784_826_539_917_291_3,
        0.296_560_571_828_504_9,
        0.026_532_189_526_576_123,
        0.001_242_660_947_388_078_4,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.599_832_206_555_887_9,
        0.136_929_880_922_735_8,
        0.014_875_361_290_850_615,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_7e-5,
        1.421_511_758_316_445_9e-7,
        2.044_263_103_389_939_8e-15,
    ];
    fn poly(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = (-(p.min(1.0 - p)).ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// Sample covariance (`n − 1` denominator) of the columns of an `n × d`
/// influence-curve matrix.
pub fn eic_covariance(eic: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = eic.nrows();
    if n < 2 {
        return Err(Error::Invalid(format!("covariance needs at least 2 rows, got {n}")));
    }
    let d = eic.ncols();
    let means = params::column_means(eic);
    let mut cov = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in a..d {
            let mut acc = 0.0;
            for i in 0..n {
                acc += (eic[(i, a)] - means[a]) * (eic[(i, b)] - means[b]);
            }
            let v = acc / (n as f64 - 1.0);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok(cov)
}

/// Per-component `estimate ± z_{1−α/2} · √cov_jj / √n`.
pub fn wald_ci(estimates: &[f64], covariance: &DMatrix<f64>, n: usize, alpha: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let z = normal_quantile(1.0 - alpha / 2.0);
    let sqrt_n = (n as f64).sqrt();
    let half: Vec<f64> = (0..estimates.len()).map(|j| z * covariance[(j, j)].max(0.0).sqrt() / sqrt_n).collect();
    let lower = estimates.iter().zip(&half).map(|(e, h)| e - h).collect();
    let upper = estimates.iter().zip(&half).map(|(e, h)| e + h).collect();
    Ok((lower, upper))
}

#[derive(Debug, Clone, Serialize)]
pub struct ContrastEstimate {
    pub estimate: f64,
    pub variance: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// Delta-method inference for `Σ_j c_j Ψ_j` from the joint covariance.
pub fn linear_contrast(
    estimates: &[f64],
    covariance: &DMatrix<f64>,
    n: usize,
    weights: &[f64],
    alpha: f64,
) -> Result<ContrastEstimate> {
    if weights.len() != estimates.len() {
        return Err(Error::Invalid("contrast weights must match the parameter dimension".into()));
    }
    let estimate = estimates.iter().zip(weights).map(|(e, c)| e * c).sum();
    let mut variance = 0.0;
    for (a, ca) in weights.iter().enumerate() {
        for (b, cb) in weights.iter().enumerate() {
            variance += ca * covariance[(a, b)] * cb;
        }
    }
    let variance = variance.max(0.0);
    let cov = DMatrix::from_element(1, 1, variance);
    let (lo, hi) = wald_ci(&[estimate], &cov, n, alpha)?;
    Ok(ContrastEstimate { estimate, variance, std_error: (variance / n as f64).sqrt(), ci_lower: lo[0], ci_upper: hi[0] })
}

#[derive(Debug, Clone, Serialize)]
pub struct TmleReport {
    pub parameter: String,
    pub components: Vec<String>,
    pub n: usize,
    /// Original outcome scale.
    pub estimates: Vec<f64>,
    /// `[0, 1]` outcome scale.
    pub estimates_scaled: Vec<f64>,
    /// On the `[0, 1]` outcome scale.
    pub eic_covariance: Vec<Vec<f64>>,
    pub std_errors: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub alpha: f64,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub converged: bool,
    pub eic_means_final: Vec<f64>,
    pub variant: Variant,
    pub solver: SolverKind,
    pub outcome_scale: OutcomeScale,
}

impl TmleReport {
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let d = self.eic_covariance.len();
        DMatrix::from_fn(d, d, |a, b| self.eic_covariance[a][b])
    }
}

pub fn build_report(
    spec: &ParameterSpec,
    data: &Dataset,
    state: &TargetingState,
    variant: Variant,
    alpha: f64,
) -> Result<TmleReport> {
    let n = data.n();
    let eic = params::eic_matrix(spec, &state.fits, data);
    let cov = eic_covariance(&eic)?;
    let scaled = params::plug_in(spec, &state.fits, data);
    let (lo, hi) = wald_ci(&scaled, &cov, n, alpha)?;

    let scale = *data.scale();
    let range = if scale.was_scaled { scale.max - scale.min } else { 1.0 };
    let kinds: Vec<_> = spec.components().iter().map(|c| c.kind).collect();
    let unscale = |v: &[f64]| -> Vec<f64> { v.iter().zip(&kinds).map(|(&x, &k)| unscale_estimate(x, &scale, k)).collect() };

    Ok(TmleReport {
        parameter: spec.name().to_string(),
        components: spec.component_names(),
        n,
        estimates: unscale(&scaled),
        estimates_scaled: scaled,
        eic_covariance: (0..cov.nrows()).map(|a| cov.row(a).iter().copied().collect()).collect(),
        std_errors: (0..cov.nrows()).map(|j| range * (cov[(j, j)] / n as f64).sqrt()).collect(),
        ci_lower: unscale(&lo),
        ci_upper: unscale(&hi),
        alpha,
        iterations: state.iteration,
        stop_reason: state.stop_reason,
        converged: state.converged,
        eic_means_final: state.eic_means_final().to_vec(),
        variant,
        solver: state.solver,
        outcome_scale: scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_known_values() {
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-13);
        assert!((normal_quantile(0.5)).abs() < 1e-16);
        assert!((normal_quantile(0.025) + 1.959_963_984_540_054).abs() < 1e-13);
        // tail branch
        assert!((normal_quantile(1e-10) + 6.361_340_902_404_056).abs() < 1e-11);
        assert!((normal_quantile(0.84) - 0.994_457_883_209_753).abs() < 1e-13);
    }

    #[test]
    fn zero_eic_gives_zero_covariance() {
        let cov = eic_covariance(&DMatrix::zeros(5, 2)).unwrap();
        assert!(cov.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_point_variance() {
        let cov = eic_covariance(&DMatrix::from_column_slice(2, 1, &[1.0, -1.0])).unwrap();
        assert_eq!(cov[(0, 0)], 2.0);
        assert!(eic_covariance(&DMatrix::zeros(1, 1)).is_err());
    }

    // n=4 toy influence curves (see params tests): TSM1 = (0.8, -1.2, 0, 0),
    // TSM0 = (0, 0, 1.2, -0.8). Means -0.1 and 0.1.
    //   var1 = (0.81 + 1.21 + 0.01 + 0.01) / 3 = 0.68
    //   var0 = (0.01 + 0.01 + 1.21 + 0.81) / 3 = 0.68
    //   cov  = (0.9*-0.1 + -1.1*-0.1 + 0.1*1.1 + 0.1*-0.9) / 3 = 0.04 / 3
    #[test]
    fn toy_covariance_matches_hand_arithmetic() {
        let eic = DMatrix::from_row_slice(4, 2, &[0.8, 0.0, -1.2, 0.0, 0.0, 1.2, 0.0, -0.8]);
        let cov = eic_covariance(&eic).unwrap();
        assert!((cov[(0, 0)] - 0.68).abs() < 1e-14);
        assert!((cov[(1, 1)] - 0.68).abs() < 1e-14);
        assert!((cov[(0, 1)] - 0.04 / 3.0).abs() < 1e-14);
        assert_eq!(cov[(0, 1)], cov[(1, 0)]);
    }

    #[test]
    fn wald_examples() {
        let cov = DMatrix::from_element(1, 1, 4.0);
        let (lo, hi) = wald_ci(&[0.0], &cov, 400, 0.05).unwrap();
        assert!((hi[0] - 0.196).abs() < 5e-4 && (lo[0] + 0.196).abs() < 5e-4);

        let (lo, hi) = wald_ci(&[0.3], &DMatrix::zeros(1, 1), 400, 0.05).unwrap();
        assert_eq!((lo[0], hi[0]), (0.3, 0.3));

        let (lo32, hi32) = wald_ci(&[0.0], &cov, 400, 0.32).unwrap();
        let (lo05, hi05) = wald_ci(&[0.0], &cov, 400, 0.05).unwrap();
        assert!(hi32[0] - lo32[0] < hi05[0] - lo05[0]);

        assert!(wald_ci(&[0.0], &cov, 400, 1.0).is_err());
    }

    #[test]
    fn width_scales_with_root_n() {
        let cov = DMatrix::from_element(1, 1, 2.5);
        let width = |n| {
            let (lo, hi) = wald_ci(&[0.0], &cov, n, 0.05).unwrap();
            hi[0] - lo[0]
        };
        assert!((width(100) / width(400) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn ate_contrast_from_joint_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[0.68, 0.04 / 3.0, 0.04 / 3.0, 0.68]);
        let c = linear_contrast(&[0.6, 0.4], &cov, 4, &[1.0, -1.0], 0.05).unwrap();
        assert!(c.variance >= 0.0);
        assert!((c.variance - (1.36 - 0.08 / 3.0)).abs() < 1e-14);
        assert!(c.ci_lower <= 0.2 && 0.2 <= c.ci_upper);
    }
}
