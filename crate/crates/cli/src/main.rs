//! `beaflow` command-line tool.
//!
//! Exit codes: 0 all checks passed, 1 a check failed (e.g. slope outside the
//! band), 2 usage or configuration error, 3 runtime failure such as divergence.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use beaflow::flows::FieldKind;
use beaflow::harness::{AnchorPolicy, Band};
use clap::{Args, Parser, Subcommand};

use crate::config::{Command, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "beaflow", version, about = "Modified flows, implicit regularizers and order checks for gradient descent")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Fit the local-error slope of a flow against the optimizer over a step-size ladder.
    OrderCheck,
    /// Report modified losses over batch orders and the shuffled expectation.
    Regularizers,
    /// Tabulate GAN interaction coefficients for both generator losses.
    GanCoeffs,
    /// Compare analytic derivatives with finite differences on every built-in problem.
    CheckGradients,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration (or a previously written report).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Step sizes, e.g. `2^-4..2^-9` or `0.1,0.05,0.025,0.0125`.
    #[arg(long, global = true)]
    ladder: Option<String>,
    /// Number of batches (SGD steps).
    #[arg(long, global = true)]
    n: Option<usize>,
    /// RK4 substeps per unit of h.
    #[arg(long, global = true)]
    substeps: Option<usize>,
    /// Slope acceptance band `LO:HI`.
    #[arg(long, global = true, value_parser = parse_band)]
    band: Option<Band>,
    /// quadratic, logistic, quadratic_game, bilinear_game, dirac_gan.
    #[arg(long, global = true)]
    problem: Option<String>,
    #[arg(long, global = true)]
    variant: Option<String>,
    /// gradient_flow, igr, multi_step_sgd, multi_step_fullbatch,
    /// simultaneous_gradient, game_bea, game_anchored.
    #[arg(long, global = true, value_parser = parse_flow)]
    flow: Option<FieldKind>,
    /// Learning rate for the regularizer report.
    #[arg(long, global = true)]
    h: Option<f64>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    examples: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// Use the full dataset in every batch slot.
    #[arg(long, global = true)]
    identical: bool,
    /// Comma-separated starting point.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    start: Option<Vec<f64>>,
    /// `start` or a comma-separated point.
    #[arg(long, global = true, allow_hyphen_values = true, value_parser = parse_anchor)]
    anchor: Option<AnchorPolicy>,
    /// Probability grid size for gan-coeffs.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Dirac-GAN trajectory length for gan-coeffs.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Increase log verbosity.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn parse_band(s: &str) -> Result<Band, String> {
    s.parse().map_err(|e: beaflow::Error| e.to_string())
}

fn parse_flow(s: &str) -> Result<FieldKind, String> {
    s.parse().map_err(|e: beaflow::Error| e.to_string())
}

fn parse_anchor(s: &str) -> Result<AnchorPolicy, String> {
    if s == "start" {
        return Ok(AnchorPolicy::StartPoint);
    }
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("anchor: expected `start` or numbers, got {t:?}")))
        .collect::<Result<Vec<_>, _>>()
        .map(AnchorPolicy::Explicit)
}

impl Common {
    fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        set!(cfg.out_dir, self.out);
        set!(cfg.seed, self.seed);
        set!(cfg.ladder, self.ladder);
        set!(cfg.schedule.n, self.n);
        set!(cfg.integrator.substeps_per_h, self.substeps);
        set!(cfg.problem.name, self.problem);
        set!(cfg.flow, self.flow);
        set!(cfg.h, self.h);
        set!(cfg.problem.dim, self.dim);
        set!(cfg.problem.num_examples, self.examples);
        set!(cfg.anchor, self.anchor);
        set!(cfg.gan.grid, self.grid);
        set!(cfg.gan.steps, self.steps);
        if self.band.is_some() {
            cfg.band = self.band;
        }
        if self.variant.is_some() {
            cfg.problem.variant = self.variant.clone();
        }
        if self.batch_size.is_some() {
            cfg.schedule.batch_size = self.batch_size;
        }
        if self.start.is_some() {
            cfg.start = self.start.clone();
        }
        if self.identical {
            cfg.schedule.identical = true;
        }
    }
}

fn command_of(cmd: Cmd) -> Command {
    match cmd {
        Cmd::OrderCheck => Command::OrderCheck,
        Cmd::Regularizers => Command::Regularizers,
        Cmd::GanCoeffs => Command::GanCoeffs,
        Cmd::CheckGradients => Command::CheckGradients,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.common.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    let mut cfg = match &cli.common.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e:#}");
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    cli.common.apply(&mut cfg);
    cfg.command = command_of(cli.command);

    match commands::run(&cfg) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
