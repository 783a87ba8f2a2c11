//! The `rs-cavity` command line.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use rs_cavity_core::harness::{compare_rows, CompareTolerances, ExperimentConfig};
use rs_cavity_core::kernels::Family;
use rs_cavity_core::quadrature::Rules;
use rs_cavity_core::rs::{asymptotic_moments, rs_solve, zero_bias, Controls, InitState, Penalty, PenaltyConfig, Target, ZeroBiasMode};

use crate::experiment::{rejoin_predictions, run_experiment, with_pool};
use crate::report::{self, CurveRow, SolveInputs, SolveOutputs, SolveRecord, ZeroBiasRow};
use crate::{Error, ReplicationSummary};

#[derive(Debug, Parser)]
#[command(
    name = "rs-cavity",
    version,
    about = "Replica-symmetric theory and simulations for penalized GLM estimators"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the RS equations at one zeta and print the solution as JSON.
    Solve(SolveArgs),
    /// Zero-bias penalty strengths eta* and tau* over a zeta grid.
    ZeroBias(ZeroBiasArgs),
    /// Run a replicated simulation from a JSON config file.
    Simulate(SimulateArgs),
    /// Join a simulation output with RS predictions and flag deviations.
    Compare(CompareArgs),
    /// RS theory curves over a zeta grid.
    Curves(CurvesArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ZeroBiasArg {
    Oracle,
    Empirical,
}

impl From<ZeroBiasArg> for ZeroBiasMode {
    fn from(a: ZeroBiasArg) -> Self {
        match a {
            ZeroBiasArg::Oracle => ZeroBiasMode::Oracle,
            ZeroBiasArg::Empirical => ZeroBiasMode::Empirical,
        }
    }
}

#[derive(Debug, Args)]
pub struct Numerics {
    /// Quadrature order.
    #[arg(long, default_value_t = 40)]
    pub order: usize,
    /// Fixed-point tolerance.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct Output {
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct PenaltyArgs {
    /// Oracle penalty strength.
    #[arg(long = "eta-prime", default_value_t = 0.0)]
    pub eta_prime: f64,
    /// Empirical penalty strength.
    #[arg(long = "tau-prime", default_value_t = 0.0)]
    pub tau_prime: f64,
    /// Choose the penalty strength that makes w/S = 1.
    #[arg(long = "zero-bias", value_enum, conflicts_with_all = ["eta_prime", "tau_prime"])]
    pub zero_bias: Option<ZeroBiasArg>,
}

impl PenaltyArgs {
    fn penalty(&self) -> Result<Penalty, Error> {
        if !(self.eta_prime >= 0.0 && self.tau_prime >= 0.0) {
            return Err(Error::Config("penalty strengths must be non-negative".into()));
        }
        Ok(match self.zero_bias {
            Some(m) => Penalty::ZeroBias(m.into()),
            None => Penalty::Fixed(PenaltyConfig {
                eta_prime: self.eta_prime,
                tau_prime: self.tau_prime,
            }),
        })
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, value_enum)]
    pub model: FamilyArg,
    #[arg(long)]
    pub zeta: f64,
    /// Signal strength S.
    #[arg(long = "S", default_value_t = 1.0)]
    pub s: f64,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    /// Norm of the true coefficients, for the bias term.
    #[arg(long = "S0", default_value_t = 1.0)]
    pub s0: f64,
    /// Limit of Tr(A0^-1)/p, for the variance term.
    #[arg(long, default_value_t = 1.0)]
    pub alpha2: f64,
    #[command(flatten)]
    pub numerics: Numerics,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Logit,
    Weibull,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Logit => Family::Logit,
            FamilyArg::Weibull => Family::Weibull,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Oracle,
    Empirical,
    Both,
}

#[derive(Debug, Args)]
pub struct ZeroBiasArgs {
    #[arg(long, value_enum)]
    pub model: FamilyArg,
    /// Zeta value, comma list or inclusive range start:stop:step.
    #[arg(long, default_value = "0.1:0.6:0.1")]
    pub zeta: String,
    #[arg(long = "S", default_value_t = 1.0)]
    pub s: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    pub mode: ModeArg,
    #[command(flatten)]
    pub numerics: Numerics,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// ExperimentConfig JSON file.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub model: Option<FamilyArg>,
    #[arg(long)]
    pub zeta: Option<String>,
    #[arg(long = "S")]
    pub s: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Simulation output in JSON form.
    #[arg(long)]
    pub input: PathBuf,
    /// Absolute tolerance on |mean - prediction|.
    #[arg(long, default_value_t = 0.03)]
    pub tolerance: f64,
    /// Per-statistic tolerance as STAT=VALUE; repeatable.
    #[arg(long = "stat-tolerance", value_parser = parse_stat_tolerance)]
    pub stat_tolerance: Vec<(String, f64)>,
    /// Re-solve the predictions at this quadrature order.
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[command(flatten)]
    pub output: Output,
}

fn parse_stat_tolerance(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected STAT=VALUE")?;
    let v: f64 = v.parse().map_err(|_| format!("invalid tolerance {v:?}"))?;
    Ok((k.to_string(), v))
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    #[arg(long, value_enum)]
    pub model: FamilyArg,
    #[arg(long, default_value = "0.05:0.6:0.05")]
    pub zeta: String,
    #[arg(long = "S", default_value_t = 1.0)]
    pub s: f64,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    #[arg(long = "S0", default_value_t = 1.0)]
    pub s0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha2: f64,
    #[command(flatten)]
    pub numerics: Numerics,
    #[command(flatten)]
    pub output: Output,
}

/// Parses `args` (including the program name) and runs the command; returns the exit code.
pub fn main<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Solve(a) => solve(a),
        Command::ZeroBias(a) => zero_bias_table(a),
        Command::Simulate(a) => simulate(a),
        Command::Compare(a) => compare(a),
        Command::Curves(a) => curves(a),
    }
}

fn controls(n: &Numerics, s: f64) -> Result<(Controls, Rules), Error> {
    if !(n.tol > 0.0) {
        return Err(Error::Config("--tol must be positive".into()));
    }
    if !(s > 0.0) {
        return Err(Error::Config("--S must be positive".into()));
    }
    let c = Controls {
        tolerance: n.tol,
        init: Some(InitState::default_for(s)),
        ..Controls::default()
    };
    Ok((c, Rules::new(n.order)?))
}

fn exit_for(all_converged: bool) -> u8 {
    if all_converged {
        0
    } else {
        1
    }
}

fn solve(a: SolveArgs) -> Result<u8, Error> {
    let (c, rules) = controls(&a.numerics, a.s)?;
    let penalty = a.penalty.penalty()?;
    let sol = rs_solve(a.model.into(), Target::Zeta(a.zeta), a.s, penalty, &c, &rules)?;
    let record = SolveRecord {
        inputs: SolveInputs {
            model: a.model.into(),
            s: a.s,
            zeta: a.zeta,
            eta_prime: a.penalty.eta_prime,
            tau_prime: a.penalty.tau_prime,
            zero_bias: a.penalty.zero_bias.map(Into::into),
            order: a.numerics.order,
            tolerance: a.numerics.tol,
            init: c.init.unwrap_or(InitState::default_for(a.s)),
            s0: a.s0,
            alpha2: a.alpha2,
        },
        outputs: SolveOutputs::new(&sol, a.s0, a.alpha2),
    };
    report::emit(a.out.as_deref(), &report::to_json(&record)?)?;
    Ok(exit_for(sol.converged))
}

fn zero_bias_table(a: ZeroBiasArgs) -> Result<u8, Error> {
    let (c, rules) = controls(&a.numerics, a.s)?;
    let grid = report::parse_zeta(&a.zeta)?;
    let family: Family = a.model.into();
    let one = |zeta: f64, mode: ZeroBiasMode| match zero_bias(family, a.s, zeta, mode, &c, &rules) {
        Ok((v, sol)) if sol.converged => (Some(v), None),
        Ok((_, sol)) => (None, Some(format!("not converged, residual {:e}", sol.residual))),
        Err(e) => (None, Some(e.to_string())),
    };
    let (want_eta, want_tau) = match a.mode {
        ModeArg::Oracle => (true, false),
        ModeArg::Empirical => (false, true),
        ModeArg::Both => (true, true),
    };
    let rows: Vec<ZeroBiasRow> = with_pool(|| {
        Ok(grid
            .par_iter()
            .map(|&zeta| {
                let (eta_star, eta_error) = if want_eta { one(zeta, ZeroBiasMode::Oracle) } else { (None, None) };
                let (tau_star, tau_error) = if want_tau {
                    one(zeta, ZeroBiasMode::Empirical)
                } else {
                    (None, None)
                };
                ZeroBiasRow {
                    zeta,
                    eta_star,
                    tau_star,
                    eta_error,
                    tau_error,
                }
            })
            .collect())
    })?;
    let bytes = match a.output.format {
        Format::Json => report::to_json(&rows)?,
        Format::Csv => report::zero_bias_csv(&rows)?,
    };
    report::emit(a.output.out.as_deref(), &bytes)?;
    Ok(exit_for(rows.iter().all(|r| r.eta_error.is_none() && r.tau_error.is_none())))
}

fn emit_summary(summary: &ReplicationSummary, output: &Output) -> Result<(), Error> {
    let bytes = match output.format {
        Format::Json => report::to_json(summary)?,
        Format::Csv => report::summary_csv(summary)?,
    };
    report::emit(output.out.as_deref(), &bytes)
}

pub fn read_config(path: &std::path::Path) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn simulate(a: SimulateArgs) -> Result<u8, Error> {
    let mut cfg = read_config(&a.config)?;
    if let Some(m) = a.model {
        cfg.family = m.into();
    }
    if let Some(z) = &a.zeta {
        cfg.zeta_grid = report::parse_zeta(z)?;
    }
    if let Some(s) = a.s {
        cfg.s_target = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if let Some(o) = a.order {
        cfg.quadrature_order = o;
    }
    if let Some(t) = a.tol {
        cfg.tolerance = t;
    }
    let summary = run_experiment(&cfg)?;
    emit_summary(&summary, &a.output)?;
    Ok(0)
}

fn compare(a: CompareArgs) -> Result<u8, Error> {
    let text = std::fs::read_to_string(&a.input)?;
    let stored: ReplicationSummary = serde_json::from_str(&text)?;
    let summary = with_pool(|| rejoin_predictions(&stored, a.order, a.tol))?;
    let tol = CompareTolerances {
        default: a.tolerance,
        per_stat: a.stat_tolerance.clone(),
    };
    let rep = compare_rows(&summary.rows, &tol);
    let bytes = match a.output.format {
        Format::Json => report::to_json(&rep)?,
        Format::Csv => report::compare_csv(&rep)?,
    };
    report::emit(a.output.out.as_deref(), &bytes)?;
    Ok(0)
}

fn curves(a: CurvesArgs) -> Result<u8, Error> {
    let (c, rules) = controls(&a.numerics, a.s)?;
    let grid = report::parse_zeta(&a.zeta)?;
    let penalty = a.penalty.penalty()?;
    let family: Family = a.model.into();
    let rows: Vec<CurveRow> = with_pool(|| {
        Ok(grid
            .par_iter()
            .map(|&zeta| match rs_solve(family, Target::Zeta(zeta), a.s, penalty, &c, &rules) {
                Ok(sol) => {
                    let m = asymptotic_moments(&sol, a.s0, a.alpha2);
                    let hg = sol.nuisance_factors();
                    CurveRow {
                        zeta,
                        eta_prime: Some(sol.penalty.eta_prime),
                        tau_prime: Some(sol.penalty.tau_prime),
                        u2: Some(sol.state.u2),
                        v: Some(sol.state.v),
                        w_over_s: Some(sol.state.w / sol.s),
                        mu2: Some(sol.state.mu2),
                        h: hg.map(|x| x.0),
                        g: hg.map(|x| x.1),
                        mse: Some(m.mse),
                        converged: sol.converged,
                        error: None,
                    }
                }
                Err(e) => CurveRow {
                    zeta,
                    eta_prime: None,
                    tau_prime: None,
                    u2: None,
                    v: None,
                    w_over_s: None,
                    mu2: None,
                    h: None,
                    g: None,
                    mse: None,
                    converged: false,
                    error: Some(e.to_string()),
                },
            })
            .collect())
    })?;
    let bytes = match a.output.format {
        Format::Json => report::to_json(&rows)?,
        Format::Csv => report::curves_csv(&rows)?,
    };
    report::emit(a.output.out.as_deref(), &bytes)?;
    Ok(exit_for(rows.iter().all(|r| r.converged)))
}
