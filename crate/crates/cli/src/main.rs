//! `pcsft` experiment runner.

mod config;
mod experiments;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use toml::Value;

use crate::config::{ExperimentConfig, RawConfig};

#[derive(Parser)]
#[command(
    name = "pcsft",
    version,
    about = "Classical random-field experiments: Born averages, dynamics, clicks and Bell tests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact and Monte Carlo quadratic-form averages against <A psi, psi>.
    Born(RunArgs),
    /// Symplectic integration against the exact propagator; covariance evolution.
    Dynamics(RunArgs),
    /// Hessian extraction of a nonquadratic functional.
    Hessian(RunArgs),
    /// Singlet click correlations versus -cos 2(theta_1 - theta_2); double-click scan.
    Epr(RunArgs),
    /// CHSH value from a local model, the analytic singlet, or detector clicks.
    Chsh(RunArgs),
    /// Joint-distribution feasibility of a Bell table.
    Kolmogorov(RunArgs),
    /// Angle-sum classification of a triangle.
    Triangle(RunArgs),
    /// Checks a configuration and lists every problem; runs nothing.
    Validate {
        /// Experiment kind, if not given in the config file.
        #[arg(long)]
        kind: Option<String>,
        #[command(flatten)]
        args: RunArgs,
    },
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Flat TOML file; command-line flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<i64>,
    /// Output directory (default: $PCSFT_OUT_DIR or ./pcsft-output).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    trials: Option<i64>,
    #[arg(long, allow_negative_numbers = true)]
    epsilon: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    threshold: Option<f64>,
    /// Comma-separated angles in radians; expressions like `pi/4` or `-3pi/8` are accepted.
    #[arg(long, allow_hyphen_values = true)]
    angles: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    dim: Option<i64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    time: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    flat_sum: Option<String>,
    /// lhv | singlet | clicks | random
    #[arg(long)]
    source: Option<String>,
    /// keep-singles | keep-any-click | keep-all
    #[arg(long)]
    policy: Option<String>,
    /// Correlation table (JSON) for kolmogorov.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Trial CSV for kolmogorov.
    #[arg(long)]
    trials_csv: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn raw_config(&self, kind: Option<&str>) -> RawConfig {
        let mut raw = self.config.as_deref().map(RawConfig::from_file).unwrap_or_default();
        let path = |p: &PathBuf| Value::String(p.to_string_lossy().into_owned());
        let overrides = [
            ("kind", kind.map(|k| Value::String(k.to_string()))),
            ("seed", self.seed.map(Value::Integer)),
            ("out", self.out.as_ref().map(path)),
            ("trials", self.trials.map(Value::Integer)),
            ("epsilon", self.epsilon.map(Value::Float)),
            ("threshold", self.threshold.map(Value::Float)),
            ("angles", self.angles.clone().map(Value::String)),
            ("dim", self.dim.map(Value::Integer)),
            ("dt", self.dt.map(Value::Float)),
            ("time", self.time.map(Value::Float)),
            ("flat_sum", self.flat_sum.clone().map(Value::String)),
            ("source", self.source.clone().map(Value::String)),
            ("policy", self.policy.clone().map(Value::String)),
            ("table", self.table.as_ref().map(path)),
            ("trials_csv", self.trials_csv.as_ref().map(path)),
        ];
        for (key, value) in overrides {
            if let Some(value) = value {
                raw.set(key, value);
            }
        }
        raw
    }
}

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn report_diagnostics(errors: &[String]) {
    eprintln!("invalid configuration:");
    for e in errors {
        eprintln!("  - {e}");
    }
}

fn execute(cfg: &ExperimentConfig) -> ExitCode {
    let (results, artifacts) = match experiments::run(cfg) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    if let Err(e) = report::write_all(&cfg.out, cfg, &results, &artifacts) {
        eprintln!("error: writing artifacts to {}: {e}", cfg.out.display());
        return ExitCode::from(EXIT_RUNTIME);
    }
    for check in &results.checks {
        let status = match (check.kind, check.passed) {
            (report::CheckKind::Check, true) => "PASS",
            (report::CheckKind::Check, false) => "FAIL",
            (report::CheckKind::Target, true) => "REACHED",
            (report::CheckKind::Target, false) => "NOT REACHED",
        };
        println!("{status:<11} {:<26} {}", check.name, check.criterion);
    }
    for (name, value) in &results.labels {
        println!("{name}: {value}");
    }
    println!("results written to {}", cfg.out.join("results.json").display());
    if results.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECK_FAILED)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args, validate_only) = match &cli.command {
        Command::Born(a) => (Some("born"), a, false),
        Command::Dynamics(a) => (Some("dynamics"), a, false),
        Command::Hessian(a) => (Some("hessian"), a, false),
        Command::Epr(a) => (Some("epr"), a, false),
        Command::Chsh(a) => (Some("chsh"), a, false),
        Command::Kolmogorov(a) => (Some("kolmogorov"), a, false),
        Command::Triangle(a) => (Some("triangle"), a, false),
        Command::Validate { kind, args } => (kind.as_deref(), args, true),
    };
    if let Some(threads) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot configure {threads} worker threads: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let config = args.raw_config(kind).validate();
    match (config, validate_only) {
        (Err(errors), _) => {
            report_diagnostics(&errors);
            ExitCode::from(EXIT_USAGE)
        }
        (Ok(cfg), true) => {
            println!("configuration is valid ({} experiment, seed {})", cfg.kind, cfg.seed);
            ExitCode::SUCCESS
        }
        (Ok(cfg), false) => execute(&cfg),
    }
}
