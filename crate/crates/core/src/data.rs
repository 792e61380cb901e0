//! Observational datasets `O = (W, A, Y)` and per-observation nuisance
//! predictions.
//!
//! Outcomes are stored on the unit interval. Anything outside `[0, 1]` is
//! min-max scaled on construction and the scale is kept so that estimates can
//! be mapped back with [`unscale_estimate`].

use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Closed probability interval `[lo, hi]` with `0 < lo < hi < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && lo < hi && hi < 1.0) {
            return Err(Error::Invalid(format!(
                "bounds must satisfy 0 < lo < hi < 1, got ({lo}, {hi})"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// Default outcome-regression bounds, `[1e-5, 1 - 1e-5]`.
    pub fn default_q() -> Self {
        Self { lo: 1e-5, hi: 1.0 - 1e-5 }
    }

    /// Default propensity bounds, `[0.01, 0.99]`.
    pub fn default_g() -> Self {
        Self { lo: 0.01, hi: 0.99 }
    }

    #[inline]
    pub fn clamp(&self, p: f64) -> f64 {
        p.clamp(self.lo, self.hi)
    }

    #[inline]
    pub fn contains(&self, p: f64) -> bool {
        p >= self.lo && p <= self.hi
    }
}

/// How stored outcomes relate to the original measurement scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutcomeScale {
    pub min: f64,
    pub max: f64,
    pub was_scaled: bool,
}

impl OutcomeScale {
    pub fn identity() -> Self {
        Self { min: 0.0, max: 1.0, was_scaled: false }
    }

    #[inline]
    pub fn scale(&self, y: f64) -> f64 {
        if self.was_scaled {
            (y - self.min) / (self.max - self.min)
        } else {
            y
        }
    }

    #[inline]
    pub fn unscale(&self, y: f64) -> f64 {
        if self.was_scaled {
            y * (self.max - self.min) + self.min
        } else {
            y
        }
    }
}

/// Whether a parameter component is a mean of outcomes or a difference of
/// means. Differences drop the scale offset when mapped back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimandKind {
    Mean,
    Difference,
}

pub fn unscale_estimate(value: f64, scale: &OutcomeScale, kind: EstimandKind) -> f64 {
    if !scale.was_scaled {
        return value;
    }
    let range = scale.max - scale.min;
    match kind {
        EstimandKind::Mean => value * range + scale.min,
        EstimandKind::Difference => value * range,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: Vec<f64>,
    treatment: Vec<u8>,
    outcome: Vec<f64>,
    scale: OutcomeScale,
    n: usize,
    p: usize,
}

impl Dataset {
    /// Builds a validated dataset.
    ///
    /// `covariates` is row-major `n × p`. Treatment values must be exactly 0
    /// or 1. If `y_range` is given outcomes are scaled with it, otherwise they
    /// are min-max scaled only when some value falls outside `[0, 1]`.
    pub fn new(
        covariates: Vec<f64>,
        p: usize,
        treatment: &[f64],
        outcome: &[f64],
        y_range: Option<(f64, f64)>,
    ) -> Result<Self> {
        let n = treatment.len();
        if n < 2 {
            return Err(Error::Degenerate(format!("need at least 2 observations, got {n}")));
        }
        if p == 0 {
            return Err(Error::Schema("at least one covariate column is required".into()));
        }
        if outcome.len() != n || covariates.len() != n * p {
            return Err(Error::Invalid(format!(
                "length mismatch: {n} treatments, {} outcomes, {} covariate values for p={p}",
                outcome.len(),
                covariates.len()
            )));
        }
        for (i, row) in covariates.chunks_exact(p).enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation {
                    row: i + 1,
                    msg: format!("covariate {j} is missing or not finite"),
                });
            }
        }

        let mut a = Vec::with_capacity(n);
        for (i, &v) in treatment.iter().enumerate() {
            match v {
                0.0 => a.push(0u8),
                1.0 => a.push(1u8),
                x => {
                    return Err(Error::Validation {
                        row: i + 1,
                        msg: format!("treatment must be 0 or 1, got {x}"),
                    })
                }
            }
        }
        let treated = a.iter().filter(|&&x| x == 1).count();
        if treated == 0 || treated == n {
            return Err(Error::Degenerate(
                "treatment has zero variance; need both treated and control observations".into(),
            ));
        }

        if let Some(i) = outcome.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation { row: i + 1, msg: "outcome is missing or not finite".into() });
        }
        let scale = match y_range {
            Some((min, max)) => {
                if min.is_nan() || max.is_nan() || min >= max {
                    return Err(Error::Invalid(format!("outcome range must satisfy min < max, got ({min}, {max})")));
                }
                if let Some(i) = outcome.iter().position(|&y| y < min || y > max) {
                    return Err(Error::Validation {
                        row: i + 1,
                        msg: format!("outcome {} outside declared range [{min}, {max}]", outcome[i]),
                    });
                }
                OutcomeScale { min, max, was_scaled: true }
            }
            None => {
                let (min, max) = outcome
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| (lo.min(y), hi.max(y)));
                if min >= 0.0 && max <= 1.0 {
                    OutcomeScale::identity()
                } else if min == max {
                    return Err(Error::Degenerate(format!("outcome is constant at {min} outside [0, 1]")));
                } else {
                    OutcomeScale { min, max, was_scaled: true }
                }
            }
        };
        let y = outcome.iter().map(|&v| scale.scale(v).clamp(0.0, 1.0)).collect();

        Ok(Self { covariates, treatment: a, outcome: y, scale, n, p })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn w(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn a(&self, i: usize) -> u8 {
        self.treatment[i]
    }

    /// Outcome on the `[0, 1]` scale.
    #[inline]
    pub fn y(&self, i: usize) -> f64 {
        self.outcome[i]
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn scale(&self) -> &OutcomeScale {
        &self.scale
    }

    /// Reorders observations; `order[k]` is the source index of row `k`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut covariates = Vec::with_capacity(self.covariates.len());
        for &i in order {
            covariates.extend_from_slice(self.w(i));
        }
        Self {
            covariates,
            treatment: order.iter().map(|&i| self.treatment[i]).collect(),
            outcome: order.iter().map(|&i| self.outcome[i]).collect(),
            scale: self.scale,
            n: self.n,
            p: self.p,
        }
    }
}

/// Nuisance predictions at a single observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitRow {
    pub qbar0: f64,
    pub qbar1: f64,
    pub g1: f64,
}

impl FitRow {
    /// `Q̄(a, W)`.
    #[inline]
    pub fn qbar(&self, a: u8) -> f64 {
        if a == 1 {
            self.qbar1
        } else {
            self.qbar0
        }
    }

    /// `g(a | W)`.
    #[inline]
    pub fn g(&self, a: u8) -> f64 {
        if a == 1 {
            self.g1
        } else {
            1.0 - self.g1
        }
    }
}

/// Bounded per-observation predictions `Q̄(0,W)`, `Q̄(1,W)` and `g(1|W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFits {
    qbar0: Vec<f64>,
    qbar1: Vec<f64>,
    g1: Vec<f64>,
    q_bounds: Bounds,
    g_bounds: Bounds,
}

impl NuisanceFits {
    /// Clamps the predictions into their bounds and returns how many values
    /// had to be moved.
    pub fn clamped(
        mut qbar0: Vec<f64>,
        mut qbar1: Vec<f64>,
        mut g1: Vec<f64>,
        q_bounds: Bounds,
        g_bounds: Bounds,
    ) -> Result<(Self, usize)> {
        let n = qbar0.len();
        if qbar1.len() != n || g1.len() != n {
            return Err(Error::Invalid(format!(
                "nuisance length mismatch: {} / {} / {}",
                n,
                qbar1.len(),
                g1.len()
            )));
        }
        let mut moved = 0;
        for (col, b) in [(&mut qbar0, q_bounds), (&mut qbar1, q_bounds), (&mut g1, g_bounds)] {
            for (i, v) in col.iter_mut().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Validation { row: i + 1, msg: "nuisance prediction is not finite".into() });
                }
                let c = b.clamp(*v);
                if c != *v {
                    moved += 1;
                    *v = c;
                }
            }
        }
        Ok((Self { qbar0, qbar1, g1, q_bounds, g_bounds }, moved))
    }

    /// Like [`NuisanceFits::clamped`] but discards the clamp count.
    pub fn new(qbar0: Vec<f64>, qbar1: Vec<f64>, g1: Vec<f64>, q_bounds: Bounds, g_bounds: Bounds) -> Result<Self> {
        Self::clamped(qbar0, qbar1, g1, q_bounds, g_bounds).map(|(f, _)| f)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.g1.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.g1.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> FitRow {
        FitRow { qbar0: self.qbar0[i], qbar1: self.qbar1[i], g1: self.g1[i] }
    }

    pub fn qbar0(&self) -> &[f64] {
        &self.qbar0
    }

    pub fn qbar1(&self) -> &[f64] {
        &self.qbar1
    }

    pub fn g1(&self) -> &[f64] {
        &self.g1
    }

    pub fn q_bounds(&self) -> Bounds {
        self.q_bounds
    }

    pub fn g_bounds(&self) -> Bounds {
        self.g_bounds
    }

    /// True when every stored value lies inside its bounds.
    pub fn within_bounds(&self) -> bool {
        self.qbar0.iter().chain(&self.qbar1).all(|&v| self.q_bounds.contains(v))
            && self.g1.iter().all(|&v| self.g_bounds.contains(v))
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        let pick = |v: &[f64]| order.iter().map(|&i| v[i]).collect();
        Self {
            qbar0: pick(&self.qbar0),
            qbar1: pick(&self.qbar1),
            g1: pick(&self.g1),
            q_bounds: self.q_bounds,
            g_bounds: self.g_bounds,
        }
    }
}

/// Column names used when reading a CSV file.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub treatment: String,
    pub outcome: String,
    /// Explicit covariate columns; `None` selects every other numeric column.
    pub covariates: Option<Vec<String>>,
    pub qbar0: String,
    pub qbar1: String,
    pub g1: String,
    /// Declared outcome range used for scaling instead of the sample min/max.
    pub y_range: Option<(f64, f64)>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            treatment: "A".into(),
            outcome: "Y".into(),
            covariates: None,
            qbar0: "qbar0".into(),
            qbar1: "qbar1".into(),
            g1: "g1".into(),
            y_range: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub fits: Option<NuisanceFits>,
    /// Number of provided nuisance values moved into bounds.
    pub clamped: usize,
}

/// Reads a dataset (and optionally provided nuisance predictions) from CSV.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema, q_bounds: Bounds, g_bounds: Bounds) -> Result<LoadedData> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let records: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;
    load_records(&headers, &records, schema, q_bounds, g_bounds)
}

fn load_records(
    headers: &[String],
    records: &[csv::StringRecord],
    schema: &CsvSchema,
    q_bounds: Bounds,
    g_bounds: Bounds,
) -> Result<LoadedData> {
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let col = |name: &str| -> Result<usize> {
        index.get(name).copied().ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let a_col = col(&schema.treatment)?;
    let y_col = col(&schema.outcome)?;

    let nuisance_names = [&schema.qbar0, &schema.qbar1, &schema.g1];
    let present: Vec<bool> = nuisance_names.iter().map(|c| index.contains_key(c.as_str())).collect();
    let has_nuisance = match present.iter().filter(|&&b| b).count() {
        0 => false,
        3 => true,
        _ => {
            return Err(Error::Schema(format!(
                "nuisance columns `{}`, `{}`, `{}` must be all present or all absent",
                schema.qbar0, schema.qbar1, schema.g1
            )))
        }
    };

    let parse = |raw: &str| -> Option<f64> {
        let t = raw.trim();
        if t.is_empty() {
            None
        } else {
            t.parse::<f64>().ok()
        }
    };
    let column = |c: usize, name: &str| -> Result<Vec<f64>> {
        records
            .iter()
            .enumerate()
            .map(|(r, rec)| {
                let raw = rec.get(c).unwrap_or("");
                parse(raw).ok_or_else(|| Error::Validation {
                    row: r + 1,
                    msg: format!("column `{name}` has missing or non-numeric value `{raw}`"),
                })
            })
            .collect()
    };

    let covariate_cols: Vec<usize> = match &schema.covariates {
        Some(names) => names.iter().map(|n| col(n)).collect::<Result<_>>()?,
        None => {
            let reserved: Vec<&str> = [schema.treatment.as_str(), schema.outcome.as_str()]
                .into_iter()
                .chain(nuisance_names.iter().map(|s| s.as_str()))
                .collect();
            (0..headers.len())
                .filter(|&c| !reserved.contains(&headers[c].as_str()))
                .filter(|&c| {
                    // numeric = every non-empty cell parses; empty cells are reported later
                    records.iter().all(|rec| {
                        let t = rec.get(c).unwrap_or("").trim();
                        t.is_empty() || t.parse::<f64>().is_ok()
                    })
                })
                .collect()
        }
    };
    if covariate_cols.is_empty() {
        return Err(Error::Schema("no numeric covariate columns found".into()));
    }

    let a = column(a_col, &schema.treatment)?;
    let y = column(y_col, &schema.outcome)?;
    let p = covariate_cols.len();
    let mut w = Vec::with_capacity(records.len() * p);
    let cov_values: Vec<Vec<f64>> =
        covariate_cols.iter().map(|&c| column(c, &headers[c])).collect::<Result<_>>()?;
    for r in 0..records.len() {
        w.extend(cov_values.iter().map(|v| v[r]));
    }

    let dataset = Dataset::new(w, p, &a, &y, schema.y_range)?;

    let (fits, clamped) = if has_nuisance {
        let q0 = column(col(&schema.qbar0)?, &schema.qbar0)?;
        let q1 = column(col(&schema.qbar1)?, &schema.qbar1)?;
        let g = column(col(&schema.g1)?, &schema.g1)?;
        let (fits, moved) = NuisanceFits::clamped(q0, q1, g, q_bounds, g_bounds)?;
        (Some(fits), moved)
    } else {
        (None, 0)
    };

    Ok(LoadedData { dataset, fits, clamped })
}
