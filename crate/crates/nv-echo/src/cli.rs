//! Batch command-line front end.
//!
//! Subcommands: `curve` (closed-form decay table), `simulate` (Monte-Carlo
//! estimate with standard errors), `fit` (decay-trace fitting, results
//! appended as line-delimited JSON), `regress` (fitted parameters vs spin
//! concentration).
//!
//! Conventions: standard output carries data (tab-separated tables or fit
//! summaries), standard error carries run logs; no timestamps anywhere, so
//! identical invocations produce byte-identical output. Exit codes: 0
//! success, 2 usage error, 3 parse/data error, 4 fit non-convergence.

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::fitting::{
    detect_revival_window, extract_envelope, fit_noise_model, fit_stretched_exp, regress_linear,
    FitOptions, FitResult, ModelKind,
};
use crate::ingest::{self, SampleTable};
use crate::models::{self, InstantaneousDiffusionInput, NoiseModelParams};
use crate::noisesim::{echo_coherence_mc, SimConfig};

/// Default Monte-Carlo seed; fixed so unseeded runs are reproducible.
pub const DEFAULT_SEED: u64 = 314_159;

/// Default number of Monte-Carlo paths.
pub const DEFAULT_N_PATHS: usize = 100_000;

/// g-factor used for the instantaneous-diffusion correction (NV/P1
/// electron spins).
pub const G_FACTOR: f64 = 2.0028;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NO_CONVERGENCE: u8 = 4;

/// Inclusive `start:stop:step` τ grid (µs); a bare number means a single
/// point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl std::str::FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let parse = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("not a number: '{v}'"));
        let (start, stop, step) = match parts.as_slice() {
            [single] => {
                let v = parse(single)?;
                (v, v, 1.0)
            }
            [start, stop, step] => (parse(start)?, parse(stop)?, parse(step)?),
            _ => return Err(format!("grid must be 'start:stop:step' or a single value, got '{s}'")),
        };
        if !(start.is_finite() && stop.is_finite() && step.is_finite()) {
            return Err(format!("grid values must be finite, got '{s}'"));
        }
        if step <= 0.0 {
            return Err(format!("grid step must be > 0, got {step}"));
        }
        if stop < start {
            return Err(format!("grid stop {stop} is before start {start}"));
        }
        Ok(Self { start, stop, step })
    }
}

impl GridSpec {
    /// Grid points, inclusive of both endpoints (up to floating-point
    /// tolerance on the last step).
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step * (1.0 + 1e-12) + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "nv-echo",
    version,
    about = "Hahn-echo decoherence of NV ensembles under OU noise: curves, Monte-Carlo checks, trace fitting, concentration regression"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print the closed-form echo decay exp(-4 lambda^2 F(tau, tau_c)) on a tau grid.
    Curve(CurveArgs),
    /// Monte-Carlo coherence estimate with standard errors on a tau grid.
    Simulate(SimulateArgs),
    /// Fit a decay trace; append the result record and print a summary.
    Fit(FitArgs),
    /// Regress fitted parameters against spin concentration.
    Regress(RegressArgs),
}

#[derive(Args, Debug)]
pub struct CurveArgs {
    /// Noise amplitude lambda, rad/us.
    #[arg(long)]
    pub lambda: f64,
    /// Noise correlation time tau_c, us.
    #[arg(long)]
    pub tauc: f64,
    /// Tau grid 'start:stop:step' in us, endpoints inclusive.
    #[arg(long)]
    pub tau: GridSpec,
    /// Add short-time and long-time limit columns.
    #[arg(long)]
    pub limits: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Noise amplitude lambda, rad/us.
    #[arg(long)]
    pub lambda: f64,
    /// Noise correlation time tau_c, us.
    #[arg(long)]
    pub tauc: f64,
    /// Tau grid 'start:stop:step' in us, endpoints inclusive.
    #[arg(long)]
    pub tau: GridSpec,
    /// Time step in us [default: tau_c/50; must be <= tau_c/20].
    #[arg(long)]
    pub dt: Option<f64>,
    /// Monte-Carlo paths per tau.
    #[arg(long, default_value_t = DEFAULT_N_PATHS)]
    pub n_paths: usize,
    /// RNG seed.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelArg {
    /// exp(-(tau/T2)^p)
    StretchedExp,
    /// exp(-4 lambda^2 F(tau, tau_c))
    NoiseModel,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Trace file to fit.
    pub trace: PathBuf,
    /// Decay model.
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Results file to append the fit record to (line-delimited JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Extract the revival envelope before fitting.
    #[arg(long)]
    pub envelope: bool,
    /// Envelope window in us [default: auto-detected revival period].
    #[arg(long, requires = "envelope")]
    pub window: Option<f64>,
    /// Fit free amplitude and offset (for traces with imperfect contrast).
    #[arg(long)]
    pub free_amplitude: bool,
    /// Do not normalize the trace to 1 at its first point.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    /// lambda from noise-model fits, rad/us.
    Lambda,
    /// 1/tau_c from noise-model fits, 1/us.
    InvTauc,
    /// 1/T2 from stretched-exponential fits, 1/us.
    InvT2,
    /// 1/T2 minus the instantaneous-diffusion rate, 1/us.
    InvTNonreso,
}

#[derive(Args, Debug)]
pub struct RegressArgs {
    /// Results file (line-delimited JSON from `fit`).
    #[arg(long)]
    pub results: PathBuf,
    /// Sample table CSV (id,p1_conc,nv_conc,dose).
    #[arg(long)]
    pub samples: PathBuf,
    /// Which fitted parameter to regress against spin concentration.
    #[arg(long, value_enum)]
    pub param: Selector,
    /// Refocusing-pulse flip angle in radians, for the
    /// instantaneous-diffusion correction.
    #[arg(long, default_value_t = std::f64::consts::PI)]
    pub beta: f64,
}

/// Parse arguments from the process environment and run. Clap handles
/// `--help`/`--version` (exit 0) and usage errors (exit 2) itself.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Curve(args) => cmd_curve(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Fit(args) => cmd_fit(&args),
        Command::Regress(args) => cmd_regress(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Domain(_) => EXIT_USAGE,
                Error::Parse { .. } | Error::Data(_) | Error::Io(_) => EXIT_DATA,
            })
        }
    }
}

fn cmd_curve(args: &CurveArgs) -> Result<ExitCode> {
    let params = NoiseModelParams::new(args.lambda, args.tauc)?;
    let mut out = String::new();
    for tau in args.tau.points() {
        let c = models::hahn_echo_coherence(tau, &params)?;
        if args.limits {
            let short = models::short_time_coherence(tau, &params)?;
            let long = models::long_time_coherence(tau, &params)?;
            out.push_str(&format!("{tau}\t{c}\t{short}\t{long}\n"));
        } else {
            out.push_str(&format!("{tau}\t{c}\n"));
        }
    }
    print!("{out}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<ExitCode> {
    let params = NoiseModelParams::new(args.lambda, args.tauc)?;
    let dt = args.dt.unwrap_or(args.tauc / 50.0);
    let taus = args.tau.points();
    eprintln!(
        "simulate: {} tau points, dt = {dt} us, n_paths = {}, seed = {}",
        taus.len(),
        args.n_paths,
        args.seed
    );
    let mut out = String::new();
    for tau in taus {
        let config = SimConfig::new(params, tau, dt, args.n_paths, args.seed)?;
        let est = echo_coherence_mc(&config);
        out.push_str(&format!("{tau}\t{}\t{}\n", est.mean, est.std_error));
    }
    print!("{out}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_fit(args: &FitArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&args.trace)?;
    let file = ingest::parse_trace(&text)?;
    let mut trace = file.trace;
    let raw_points = trace.points.len();

    if args.envelope {
        let window = match args.window {
            Some(w) => w,
            None => detect_revival_window(&trace).ok_or_else(|| {
                Error::data(
                    "no dominant revival modulation detected; pass --window explicitly".to_string(),
                )
            })?,
        };
        let outcome = extract_envelope(&trace, window)?;
        if outcome.window_exceeds_span {
            return Err(Error::domain(format!(
                "envelope window {window} us exceeds the trace span {}",
                trace.span()
            )));
        }
        eprintln!(
            "fit: envelope window {window} us kept {} of {raw_points} points",
            outcome.trace.points.len()
        );
        trace = outcome.trace;
    }

    let opts = FitOptions { normalize: !args.no_normalize, free_amplitude: args.free_amplitude };
    let result = match args.model {
        ModelArg::StretchedExp => fit_stretched_exp(&trace, &opts)?,
        ModelArg::NoiseModel => fit_noise_model(&trace, &opts)?,
    };

    if let Some(path) = &args.out {
        let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
        f.write_all(ingest::write_results(std::slice::from_ref(&result)).as_bytes())?;
    }

    print!("{}", fit_summary(&result, trace.points.len()));
    if result.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "error: fit did not converge: {}",
            result.message.as_deref().unwrap_or("unknown reason")
        );
        Ok(ExitCode::from(EXIT_NO_CONVERGENCE))
    }
}

fn fit_summary(result: &FitResult, n_points: usize) -> String {
    let mut out = String::new();
    out.push_str(&format!("model: {}\n", result.model));
    if let Some(id) = &result.sample_id {
        out.push_str(&format!("sample: {id}\n"));
    }
    out.push_str(&format!("points: {n_points}\n"));
    out.push_str(&format!("converged: {} ({} iterations)\n", result.converged, result.n_iterations));
    out.push_str(&format!("residual_norm: {:e}\n", result.residual_norm));
    for p in &result.params {
        if p.unit.is_empty() {
            out.push_str(&format!("{} = {} +- {}\n", p.name, p.value, p.std_error));
        } else {
            out.push_str(&format!("{} = {} +- {} {}\n", p.name, p.value, p.std_error, p.unit));
        }
    }
    if let Some(msg) = &result.message {
        out.push_str(&format!("note: {msg}\n"));
    }
    out
}

fn cmd_regress(args: &RegressArgs) -> Result<ExitCode> {
    let results = ingest::read_results(&fs::read_to_string(&args.results)?)?;
    if results.is_empty() {
        return Err(Error::data("no results in the results file".to_string()));
    }
    let samples = ingest::parse_samples(&fs::read_to_string(&args.samples)?)?;

    let wanted_model = match args.param {
        Selector::Lambda | Selector::InvTauc => ModelKind::NoiseModel,
        Selector::InvT2 | Selector::InvTNonreso => ModelKind::StretchedExp,
    };
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for result in results.iter().filter(|r| r.model == wanted_model) {
        let id = result
            .sample_id
            .as_deref()
            .ok_or_else(|| Error::data("result record has no sample_id".to_string()))?;
        let sample = samples
            .find(id)
            .ok_or_else(|| Error::data(format!("unknown sample id '{id}' in results file")))?;
        let (x, y) = regression_point(result, sample, &samples, args)?;
        rows.push((x, y));
    }
    if rows.is_empty() {
        return Err(Error::data(format!(
            "no {wanted_model} results in the results file (selector needs that model)"
        )));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));

    let xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let reg = regress_linear(&xs, &ys, None)?;

    let mut out = String::new();
    out.push_str(&format!("# param = {}\n", selector_name(args.param)));
    out.push_str(&format!("# n = {}\n", rows.len()));
    out.push_str(&format!("# slope = {} +- {}\n", reg.slope, reg.slope_std_error));
    out.push_str(&format!("# intercept = {} +- {}\n", reg.intercept, reg.intercept_std_error));
    out.push_str(&format!("# r_squared = {}\n", reg.r_squared));
    for (x, y) in &rows {
        out.push_str(&format!("{x}\t{y}\n"));
    }
    print!("{out}");
    Ok(ExitCode::SUCCESS)
}

fn selector_name(s: Selector) -> &'static str {
    match s {
        Selector::Lambda => "lambda",
        Selector::InvTauc => "inv-tauc",
        Selector::InvT2 => "inv-t2",
        Selector::InvTNonreso => "inv-t-nonreso",
    }
}

/// One (concentration, value) point for the selected parameter.
///
/// Concentrations are in 10^17 cm^-3 as tabulated. For `inv-t-nonreso`
/// the x axis excludes the resonant NV fraction (those spins are removed
/// from the bath by the instantaneous-diffusion correction) and the y
/// value is 1/T2 - 1/T_ID with T_ID from the resonant NV density.
fn regression_point(
    result: &FitResult,
    sample: &crate::models::SampleRecord,
    _samples: &SampleTable,
    args: &RegressArgs,
) -> Result<(f64, f64)> {
    let value = |name: &str| -> Result<f64> {
        result
            .param(name)
            .map(|p| p.value)
            .ok_or_else(|| Error::data(format!("result for '{}' lacks parameter '{name}'", sample.id)))
    };
    match args.param {
        Selector::Lambda => Ok((sample.spin_concentration(), value("lambda")?)),
        Selector::InvTauc => Ok((sample.spin_concentration(), 1.0 / value("tau_c")?)),
        Selector::InvT2 => Ok((sample.spin_concentration(), 1.0 / value("t2")?)),
        Selector::InvTNonreso => {
            let t2 = value("t2")?;
            // Table densities are in 10^17 cm^-3; the rate formula wants cm^-3.
            let n_res = models::resonant_density(sample.nv_conc)? * 1e17;
            let input = InstantaneousDiffusionInput::new(n_res, G_FACTOR, G_FACTOR, args.beta)?;
            let id_rate = models::instantaneous_diffusion_rate(&input)?;
            let t_id = if id_rate > 0.0 { Some(1.0 / id_rate) } else { None };
            let rate = models::non_resonant_rate(t2, t_id)?;
            if rate.t_id_dominates {
                eprintln!(
                    "warning: instantaneous diffusion alone exceeds 1/T2 for sample '{}'",
                    sample.id
                );
            }
            let x = sample.spin_concentration() - models::resonant_density(sample.nv_conc)?;
            Ok((x, rate.per_us))
        }
    }
}
