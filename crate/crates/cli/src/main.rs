//! `escape-lab <kind> [--config PATH] [flags]`: run one experiment, write its
//! CSV/SVG artifacts and print a summary.
//!
//! Exit codes: 0 success, 1 invalid config, 2 runtime failure, 3 a check
//! failed under `--check`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use escape_core::experiments::config::{ClockChoice, ExperimentConfig, ExperimentKind, StepRuleChoice};
use escape_core::experiments::runner::run_experiment;
use escape_core::Error;
use log::error;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_CHECK: u8 = 3;

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_clock(s: &str) -> Result<ClockChoice, String> {
    match s {
        "t" => Ok(ClockChoice::T),
        "s" => Ok(ClockChoice::S),
        _ => Err(format!("clock must be t or s, got {s:?}")),
    }
}

fn parse_rule(s: &str) -> Result<StepRuleChoice, String> {
    match s {
        "fixed" => Ok(StepRuleChoice::Fixed),
        "backtrack" => Ok(StepRuleChoice::Backtrack),
        _ => Err(format!("step rule must be fixed or backtrack, got {s:?}")),
    }
}

#[derive(Debug, Parser)]
#[command(name = "escape-lab", version, about)]
struct Cli {
    /// escape-search, trajectory, rank-profile, extend-depth, counterexample or mnist-train.
    #[arg(value_parser = parse_kind)]
    kind: ExperimentKind,
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    depth: Option<usize>,
    /// Hidden width; repeat or list several for a sweep.
    #[arg(long = "width", num_args = 1..)]
    widths: Vec<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long, value_parser = parse_rule)]
    step_rule: Option<StepRuleChoice>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Integrator step in the chosen clock.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, value_parser = parse_clock)]
    clock: Option<ClockChoice>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr_numerator: Option<f64>,
    #[arg(long)]
    subset_size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write SVG line plots.
    #[arg(long)]
    svg: bool,
    /// Exit with status 3 if any check fails.
    #[arg(long)]
    check: bool,
}

impl Cli {
    fn config(&self) -> escape_core::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path, Some(self.kind))?,
            None => ExperimentConfig::defaults(self.kind),
        };
        macro_rules! apply {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$field = v; })*
            };
        }
        apply!(
            seed => seed,
            depth => depth,
            steps => steps,
            step_size => step_size,
            step_rule => step_rule,
            restarts => restarts,
            dt => dt,
            clock => clock,
            epochs => epochs,
            lr_numerator => lr_numerator,
            subset_size => subset_size,
            out => out_dir,
        );
        if !self.widths.is_empty() {
            cfg.widths = self.widths.clone();
        }
        cfg.svg |= self.svg;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let cfg = match cli.config() {
        Ok(cfg) => cfg,
        Err(e) => {
            error!("invalid configuration: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match run_experiment(&cfg) {
        Ok(summary) => {
            print!("{summary}");
            if cli.check && !summary.all_passed() {
                error!("at least one check failed");
                return ExitCode::from(EXIT_CHECK);
            }
            ExitCode::SUCCESS
        }
        Err(e @ Error::Config(_)) => {
            error!("invalid configuration: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
