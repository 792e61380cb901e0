//! `tmle estimate` and `tmle simulate`.
//!
//! Exit codes: 0 success, 1 input error, 2 targeting did not converge (the
//! report is still written), 3 some simulation cells failed.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data::{load_csv, Bounds, CsvSchema};
use crate::error::{Error, Result};
use crate::inference::{build_report, TmleReport};
use crate::nuisance::{fit_nuisance, ModelForm};
use crate::params::{ParameterSpec, PARAMETER_NAMES};
use crate::sim::{run_experiment, DgpSpec, ExperimentResult, ExperimentSettings, NuisanceMode};
use crate::targeting::{iterate, one_step_ulfm, SolverKind, TargetingConfig, TargetingState, Variant};

pub const SCHEMA_VERSION: u32 = 1;
pub const SEED_ENV: &str = "TMLE_SEED";

#[derive(Debug, Parser)]
#[command(name = "tmle", version, about = "Targeted maximum likelihood estimation for point-treatment parameters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a parameter from a CSV file.
    Estimate(EstimateArgs),
    /// Run Monte Carlo experiments over a grid of settings.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Standard,
    Weighted,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Standard => Variant::Standard,
            VariantArg::Weighted => Variant::Weighted,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SolverArg {
    Iterative,
    OneStep,
}

#[derive(Debug, clap::Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "A")]
    pub a_col: String,
    #[arg(long, default_value = "Y")]
    pub y_col: String,
    /// Comma-separated covariate columns (default: every other numeric column).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Declared outcome range `min,max` used for scaling.
    #[arg(long, value_parser = parse_pair)]
    pub y_range: Option<(f64, f64)>,
    /// tsm1 | tsm0 | ate | tsm-vector
    #[arg(long, default_value = "ate")]
    pub param: String,
    #[arg(long, value_enum, default_value = "standard")]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_parser = parse_pair, default_value = "1e-5,0.99999")]
    pub q_bounds: (f64, f64),
    #[arg(long, value_parser = parse_pair, default_value = "0.01,0.99")]
    pub g_bounds: (f64, f64),
    #[arg(long, default_value_t = 1.0)]
    pub tol_scale: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value = "iterative")]
    pub solver: SolverArg,
    #[arg(long, default_value_t = 1e-4)]
    pub micro_step: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub max_micro_steps: usize,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Omit the generation timestamp so output is byte-reproducible.
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    #[arg(long, value_delimiter = ',', default_value = "dgp-a")]
    pub dgp: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "tsm-vector")]
    pub param: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// oracle | fitted | misspecified-g | misspecified-q
    #[arg(long, value_delimiter = ',', default_value = "oracle")]
    pub nuisance: Vec<String>,
    #[arg(long, value_delimiter = ',', value_enum, default_value = "standard")]
    pub variant: Vec<VariantArg>,
    #[arg(long, env = SEED_ENV, default_value_t = 20_160_601)]
    pub seed: u64,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Covariate draws for the Monte Carlo truth (at least 1e5).
    #[arg(long, default_value_t = 1_000_000)]
    pub truth_mc_n: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub no_timestamp: bool,
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `lo,hi`, got `{s}`"))?;
    let lo = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

fn timestamp(suppress: bool) -> Option<u64> {
    if suppress {
        None
    } else {
        SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs())
    }
}

#[derive(Debug, Serialize)]
pub struct InputSummary {
    pub path: String,
    pub n: usize,
    pub p: usize,
    pub nuisance_source: &'static str,
    pub clamped_nuisance_values: usize,
}

#[derive(Debug, Serialize)]
pub struct TraceRecord {
    pub solver: SolverKind,
    pub regression_fits: usize,
    pub micro_steps: usize,
    pub loss: Vec<f64>,
    pub eic_means: Vec<Vec<f64>>,
    pub epsilons: Vec<f64>,
    pub covariate_sup: Vec<f64>,
}

impl From<&TargetingState> for TraceRecord {
    fn from(s: &TargetingState) -> Self {
        let (fits, steps) = match s.solver {
            SolverKind::Iterative => (s.iteration, 0),
            SolverKind::OneStep => (0, s.iteration),
        };
        Self {
            solver: s.solver,
            regression_fits: fits,
            micro_steps: steps,
            loss: s.loss_trace.clone(),
            eic_means: s.eic_mean_trace.clone(),
            epsilons: s.epsilon_trace.clone(),
            covariate_sup: s.covariate_sup_trace.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct EstimateOutput {
    pub schema_version: u32,
    pub generated_at_unix: Option<u64>,
    pub input: InputSummary,
    pub report: TmleReport,
    pub trace: TraceRecord,
}

pub fn estimate(args: &EstimateArgs) -> Result<EstimateOutput> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha must lie in (0, 1), got {}", args.alpha)));
    }
    let spec = ParameterSpec::by_name(&args.param)?;
    let q_bounds = Bounds::new(args.q_bounds.0, args.q_bounds.1)?;
    let g_bounds = Bounds::new(args.g_bounds.0, args.g_bounds.1)?;
    let schema = CsvSchema {
        treatment: args.a_col.clone(),
        outcome: args.y_col.clone(),
        covariates: args.covariates.clone(),
        y_range: args.y_range,
        ..CsvSchema::default()
    };
    let loaded = load_csv(&args.input, &schema, q_bounds, g_bounds)?;
    let data = loaded.dataset;
    let (init, source) = match loaded.fits {
        Some(f) => (f, "provided"),
        None => (fit_nuisance(&data, ModelForm::MainTerms, ModelForm::MainTerms, q_bounds, g_bounds)?, "fitted"),
    };

    let variant = Variant::from(args.variant);
    let config = TargetingConfig {
        variant,
        max_iter: args.max_iter,
        micro_step: args.micro_step,
        max_micro_steps: args.max_micro_steps,
        tol_scale: args.tol_scale,
        ..TargetingConfig::default()
    };
    let state = match args.solver {
        SolverArg::Iterative => iterate(&init, &spec, &data, &config)?,
        SolverArg::OneStep => one_step_ulfm(&init, &spec, &data, &config)?,
    };
    let report = build_report(&spec, &data, &state, variant, args.alpha)?;
    Ok(EstimateOutput {
        schema_version: SCHEMA_VERSION,
        generated_at_unix: timestamp(args.no_timestamp),
        input: InputSummary {
            path: args.input.display().to_string(),
            n: data.n(),
            p: data.p(),
            nuisance_source: source,
            clamped_nuisance_values: loaded.clamped,
        },
        trace: TraceRecord::from(&state),
        report,
    })
}

#[derive(Debug, Serialize)]
pub struct CellRecord {
    pub schema_version: u32,
    pub generated_at_unix: Option<u64>,
    pub cell: usize,
    pub dgp: String,
    pub param: String,
    pub n: usize,
    pub reps: usize,
    pub nuisance: NuisanceMode,
    pub variant: Variant,
    pub seed: u64,
    pub status: &'static str,
    pub error: Option<String>,
    pub result: Option<ExperimentResult>,
}

struct Cell {
    dgp: DgpSpec,
    spec: ParameterSpec,
    n: usize,
    mode: NuisanceMode,
    variant: Variant,
}

fn grid(args: &SimulateArgs) -> Result<Vec<Cell>> {
    if args.reps == 0 {
        return Err(Error::Invalid("reps must be at least 1".into()));
    }
    if args.truth_mc_n < 100_000 {
        return Err(Error::Invalid("truth-mc-n must be at least 100000".into()));
    }
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha must lie in (0, 1), got {}", args.alpha)));
    }
    let dgps = args.dgp.iter().map(|d| DgpSpec::by_name(d)).collect::<Result<Vec<_>>>()?;
    let specs = args.param.iter().map(|p| ParameterSpec::by_name(p)).collect::<Result<Vec<_>>>()?;
    let modes = args.nuisance.iter().map(|m| NuisanceMode::by_name(m)).collect::<Result<Vec<_>>>()?;
    if let Some(&n) = args.n.iter().find(|&&n| n < 2) {
        return Err(Error::Invalid(format!("n must be at least 2, got {n}")));
    }
    let mut cells = Vec::new();
    for dgp in &dgps {
        for spec in &specs {
            for &n in &args.n {
                for &mode in &modes {
                    for &v in &args.variant {
                        cells.push(Cell { dgp: dgp.clone(), spec: spec.clone(), n, mode, variant: v.into() });
                    }
                }
            }
        }
    }
    Ok(cells)
}

/// Runs every grid cell and returns the records plus whether all completed.
pub fn simulate(args: &SimulateArgs) -> Result<(Vec<CellRecord>, bool)> {
    let cells = grid(args)?;
    let run = || -> Vec<CellRecord> {
        cells
            .iter()
            .enumerate()
            .map(|(idx, c)| {
                let settings = ExperimentSettings {
                    alpha: args.alpha,
                    truth_mc_n: args.truth_mc_n,
                    ..ExperimentSettings::new(c.dgp.clone(), c.spec.clone(), c.n, args.reps, c.mode, c.variant, args.seed)
                };
                let (status, error, result) = match run_experiment(&settings) {
                    Ok(r) if r.failures == 0 => ("ok", None, Some(r)),
                    Ok(r) if r.failures < r.reps => ("partial", Some(format!("{} replications failed", r.failures)), Some(r)),
                    Ok(r) => ("failed", Some(format!("all {} replications failed", r.reps)), None),
                    Err(e) => ("failed", Some(e.to_string()), None),
                };
                CellRecord {
                    schema_version: SCHEMA_VERSION,
                    generated_at_unix: timestamp(args.no_timestamp),
                    cell: idx,
                    dgp: c.dgp.name.clone(),
                    param: c.spec.name().to_string(),
                    n: c.n,
                    reps: args.reps,
                    nuisance: c.mode,
                    variant: c.variant,
                    seed: args.seed,
                    status,
                    error,
                    result,
                }
            })
            .collect()
    };
    let records = match args.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let all_ok = records.iter().all(|r| r.status == "ok");
    Ok((records, all_ok))
}

fn open_output<'a>(path: &Option<PathBuf>, stdout: &'a mut dyn Write) -> std::io::Result<Box<dyn Write + 'a>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(stdout),
    })
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match cli.command {
        Command::Estimate(a) => run_estimate(&a, stdout, stderr),
        Command::Simulate(a) => run_simulate(&a, stdout, stderr),
    }
}

fn run_estimate(args: &EstimateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let out = match estimate(args) {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if matches!(e, Error::UnknownParameter(_)) {
                let _ = writeln!(stderr, "valid parameters: {}", PARAMETER_NAMES.join(", "));
            }
            return 1;
        }
    };
    let written = open_output(&args.output, stdout).and_then(|mut w| {
        serde_json::to_writer_pretty(&mut w, &out)?;
        writeln!(w)?;
        w.flush()
    });
    if let Err(e) = written {
        let _ = writeln!(stderr, "error: {e}");
        return 1;
    }
    if out.report.converged {
        0
    } else {
        let _ = writeln!(stderr, "targeting stopped without convergence: {:?}", out.report.stop_reason);
        2
    }
}

fn run_simulate(args: &SimulateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let (records, all_ok) = match simulate(args) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if matches!(e, Error::UnknownParameter(_)) {
                let _ = writeln!(stderr, "valid parameters: {}", PARAMETER_NAMES.join(", "));
            }
            return 1;
        }
    };
    let written = open_output(&args.output, stdout).and_then(|mut w| {
        for r in &records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        w.flush()
    });
    if let Err(e) = written {
        let _ = writeln!(stderr, "error: {e}");
        return 1;
    }
    if all_ok {
        0
    } else {
        for r in records.iter().filter(|r| r.status != "ok") {
            let _ = writeln!(stderr, "cell {}: {} ({})", r.cell, r.status, r.error.as_deref().unwrap_or(""));
        }
        3
    }
}
