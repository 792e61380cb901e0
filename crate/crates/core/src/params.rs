//! Parameter mappings and their efficient influence curves.
//!
//! Each component `j` carries an influence curve of the form
//!
//! ```text
//! D*_j(O) = H1_j(A,W) (Y − Q̄(A,W)) + H2_j(A,W) (A − g(1|W)) + (f_j(W) − Ψ_j)
//! ```
//!
//! where `Ψ_j` is the empirical mean of `f_j`. The built-in parameters are the
//! treatment-specific means, the ATE and the joint `(TSM(1), TSM(0))` vector.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::data::{Dataset, EstimandKind, FitRow, NuisanceFits};
use crate::error::{Error, Result};

/// Clever-covariate function evaluated at `(fits row, treatment value, W)`.
pub type ArmFn = Arc<dyn Fn(&FitRow, u8, &[f64]) -> f64 + Send + Sync>;
/// Function of the fits and covariates only.
pub type RowFn = Arc<dyn Fn(&FitRow, &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct ComponentSpec {
    pub name: String,
    pub kind: EstimandKind,
    pub h1: ArmFn,
    /// `None` means `H2 ≡ 0`.
    pub h2: Option<ArmFn>,
    pub f: RowFn,
}

impl fmt::Debug for ComponentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComponentSpec")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("h2", &self.h2.is_some())
            .finish_non_exhaustive()
    }
}

#[derive(Clone)]
pub struct ParameterSpec {
    name: String,
    components: Vec<ComponentSpec>,
    /// Common propensity denominator of every `H1_j`, evaluated at the
    /// observed treatment. Required for weighted targeting.
    h1_denominator: Option<ArmFn>,
}

impl fmt::Debug for ParameterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParameterSpec")
            .field("name", &self.name)
            .field("components", &self.components)
            .field("h1_denominator", &self.h1_denominator.is_some())
            .finish()
    }
}

pub const PARAMETER_NAMES: [&str; 4] = ["tsm1", "tsm0", "ate", "tsm-vector"];

impl ParameterSpec {
    pub fn new(name: impl Into<String>, components: Vec<ComponentSpec>, h1_denominator: Option<ArmFn>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Invalid("a parameter needs at least one component".into()));
        }
        for (i, c) in components.iter().enumerate() {
            if components[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Invalid(format!("duplicate component name `{}`", c.name)));
            }
        }
        Ok(Self { name: name.into(), components, h1_denominator })
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "tsm1" => Ok(Self::tsm(1)),
            "tsm0" => Ok(Self::tsm(0)),
            "ate" => Ok(Self::ate()),
            "tsm-vector" => Ok(Self::tsm_vector()),
            other => Err(Error::UnknownParameter(other.to_string())),
        }
    }

    /// Treatment-specific mean `E[Q̄(arm, W)]`.
    pub fn tsm(arm: u8) -> Self {
        Self {
            name: format!("tsm{arm}"),
            components: vec![tsm_component(arm)],
            h1_denominator: Some(observed_propensity()),
        }
    }

    /// Average treatment effect `E[Q̄(1,W) − Q̄(0,W)]`.
    pub fn ate() -> Self {
        let h1: ArmFn = Arc::new(|r: &FitRow, a: u8, _: &[f64]| if a == 1 { 1.0 / r.g1 } else { -1.0 / (1.0 - r.g1) });
        let f: RowFn = Arc::new(|r: &FitRow, _: &[f64]| r.qbar1 - r.qbar0);
        Self {
            name: "ate".into(),
            components: vec![ComponentSpec { name: "ate".into(), kind: EstimandKind::Difference, h1, h2: None, f }],
            h1_denominator: Some(observed_propensity()),
        }
    }

    /// Joint `(TSM(1), TSM(0))`.
    pub fn tsm_vector() -> Self {
        Self {
            name: "tsm-vector".into(),
            components: vec![tsm_component(1), tsm_component(0)],
            h1_denominator: Some(observed_propensity()),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn d(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[ComponentSpec] {
        &self.components
    }

    pub fn component_names(&self) -> Vec<String> {
        self.components.iter().map(|c| c.name.clone()).collect()
    }

    pub fn h1_denominator(&self) -> Option<&ArmFn> {
        self.h1_denominator.as_ref()
    }

    pub fn has_h2(&self) -> bool {
        self.components.iter().any(|c| c.h2.is_some())
    }

    /// `H1_j` at arm `a` for observation `i`.
    #[inline]
    pub fn h1_at(&self, j: usize, fits: &NuisanceFits, data: &Dataset, i: usize, a: u8) -> f64 {
        (self.components[j].h1)(&fits.row(i), a, data.w(i))
    }

    #[inline]
    pub fn h2_at(&self, j: usize, fits: &NuisanceFits, data: &Dataset, i: usize, a: u8) -> f64 {
        match &self.components[j].h2 {
            Some(h2) => h2(&fits.row(i), a, data.w(i)),
            None => 0.0,
        }
    }
}

fn tsm_component(arm: u8) -> ComponentSpec {
    let h1: ArmFn = Arc::new(move |r: &FitRow, a: u8, _: &[f64]| if a == arm { 1.0 / r.g(arm) } else { 0.0 });
    let f: RowFn = Arc::new(move |r: &FitRow, _: &[f64]| r.qbar(arm));
    ComponentSpec { name: format!("tsm{arm}"), kind: EstimandKind::Mean, h1, h2: None, f }
}

fn observed_propensity() -> ArmFn {
    Arc::new(|r: &FitRow, a: u8, _: &[f64]| r.g(a))
}

/// Clever covariates at the observed treatment: `(H1, H2)`, each `n × d`.
pub fn clever_covariates(spec: &ParameterSpec, fits: &NuisanceFits, data: &Dataset) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, d) = (data.n(), spec.d());
    let h1 = DMatrix::from_fn(n, d, |i, j| spec.h1_at(j, fits, data, i, data.a(i)));
    let h2 = DMatrix::from_fn(n, d, |i, j| spec.h2_at(j, fits, data, i, data.a(i)));
    (h1, h2)
}

/// Plug-in `Ψ_j = (1/n) Σ_i f_j(W_i)`, summed in observation order.
pub fn plug_in(spec: &ParameterSpec, fits: &NuisanceFits, data: &Dataset) -> Vec<f64> {
    let n = data.n();
    spec.components
        .iter()
        .map(|c| {
            let mut acc = 0.0;
            for i in 0..n {
                acc += (c.f)(&fits.row(i), data.w(i));
            }
            acc / n as f64
        })
        .collect()
}

/// Influence-curve matrix `n × d` at the current fits.
pub fn eic_matrix(spec: &ParameterSpec, fits: &NuisanceFits, data: &Dataset) -> DMatrix<f64> {
    let psi = plug_in(spec, fits, data);
    DMatrix::from_fn(data.n(), spec.d(), |i, j| {
        let row = fits.row(i);
        let a = data.a(i);
        let c = &spec.components[j];
        let w = data.w(i);
        let mut v = (c.h1)(&row, a, w) * (data.y(i) - row.qbar(a));
        if let Some(h2) = &c.h2 {
            v += h2(&row, a, w) * (a as f64 - row.g1);
        }
        v + (c.f)(&row, w) - psi[j]
    })
}

/// Column means of an `n × d` matrix with fixed-order summation.
pub fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows() as f64;
    (0..m.ncols())
        .map(|j| {
            let mut acc = 0.0;
            for v in m.column(j).iter() {
                acc += v;
            }
            acc / n
        })
        .collect()
}

/// Sample standard deviations (`n − 1` denominator) of each column.
pub fn column_sds(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let means = column_means(m);
    (0..m.ncols())
        .map(|j| {
            let mut acc = 0.0;
            for v in m.column(j).iter() {
                let r = v - means[j];
                acc += r * r;
            }
            (acc / (n as f64 - 1.0)).sqrt()
        })
        .collect()
}
