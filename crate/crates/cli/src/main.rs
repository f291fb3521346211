use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use detcal::io::ReportFormat;
use detcal::metrics::ErrorRule;
use detcal::uncertainty::AspectNorm;

mod commands;
mod output;
mod svg;

/// Calibration toolkit for object detectors.
#[derive(Debug, Parser)]
#[command(name = "detcal", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Match detections to ground truth and report D-ECE with reliability data.
    Eval(commands::eval::EvalArgs),
    /// Fit a temperature on a validation split and apply it to a test split.
    Calibrate(commands::calibrate::CalibrateArgs),
    /// Evaluate the train-time calibration loss on a stored mini-batch.
    #[command(name = "tcd-eval")]
    TcdEval(commands::tcd_eval::TcdEvalArgs),
    /// Build uncertainty-guided soft pseudo-targets from MC-dropout passes.
    Ict(commands::ict::IctArgs),
    /// Generate a synthetic detector with a known calibration curve.
    Synth(commands::synth::SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AspectArg {
    Raw,
    Minmax,
}

impl From<AspectArg> for AspectNorm {
    fn from(a: AspectArg) -> Self {
        match a {
            AspectArg::Raw => AspectNorm::Raw,
            AspectArg::Minmax => AspectNorm::MinMax,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ErrorRuleArg {
    /// error = best IoU with any ground truth below 0.5
    Iou,
    /// error = not matched (1 - U)
    Unmatched,
}

impl From<ErrorRuleArg> for ErrorRule {
    fn from(r: ErrorRuleArg) -> Self {
        match r {
            ErrorRuleArg::Iou => ErrorRule::IouBelowHalf,
            ErrorRuleArg::Unmatched => ErrorRule::Unmatched,
        }
    }
}

/// Report destination and layout, shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Report path; stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: FormatArg,
    /// Shorthand for `--format csv`.
    #[arg(long, conflicts_with = "format")]
    pub csv: bool,
}

impl OutputArgs {
    pub fn format(&self) -> ReportFormat {
        if self.csv {
            ReportFormat::Csv
        } else {
            self.format.into()
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("DETCAL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("DETCAL_THREADS={raw:?} is not a thread count"))?;
    if n == 0 {
        anyhow::bail!("DETCAL_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring thread pool")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Eval(a) => commands::eval::run(&a),
        Command::Calibrate(a) => commands::calibrate::run(&a),
        Command::TcdEval(a) => commands::tcd_eval::run(&a),
        Command::Ict(a) => commands::ict::run(&a),
        Command::Synth(a) => commands::synth::run(&a),
    }
}

/// Joins the error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if parts.last().is_some_and(|p| p.contains(&text)) {
            continue;
        }
        parts.push(text);
    }
    one_line(&parts.join(": "))
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            let msg = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("error: usage: {}", one_line(msg));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}
