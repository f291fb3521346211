use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde::Serialize;

use detcal::io::DatasetBundle;
use detcal::matching::{match_detections, score_outcomes};
use detcal::metrics::{self, ReliabilityRecord};

use super::MatchArgs;
use crate::output;
use crate::OutputArgs;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// COCO detection results (JSON array).
    #[arg(long)]
    pub dets: PathBuf,
    /// COCO annotation file.
    #[arg(long)]
    pub gts: PathBuf,
    #[command(flatten)]
    pub matching: MatchArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Also write a reliability diagram.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub metric: &'static str,
    pub d_ece: f64,
    pub bins: usize,
    pub gamma: f64,
    pub min_score: f64,
    pub detections: usize,
    pub correct: usize,
    pub ground_truth: usize,
    pub reliability: Vec<ReliabilityRecord>,
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let bundle = DatasetBundle::load(&args.dets, &args.gts)?;
    if bundle.detections.is_empty() {
        bail!("no detections in {}", args.dets.display());
    }
    let results = match_detections(
        &bundle.detections,
        &bundle.annotations.ground_truth,
        &args.matching.config(),
    )?;
    if results.is_empty() {
        bail!("no detections left after --min-score {}", args.matching.min_score);
    }
    let pairs = score_outcomes(&results);
    let (value, table) = metrics::d_ece(&pairs, args.matching.bins)?;
    let reliability = metrics::reliability_data(&table);
    let report = EvalReport {
        metric: "d_ece",
        d_ece: value,
        bins: args.matching.bins,
        gamma: args.matching.gamma,
        min_score: args.matching.min_score,
        detections: results.len(),
        correct: pairs.iter().filter(|p| p.1).count(),
        ground_truth: bundle.annotations.ground_truth.len(),
        reliability,
    };
    super::write_svg(
        args.svg.as_deref(),
        &report.reliability,
        &format!("D-ECE = {:.4}", value),
        "confidence",
        "precision",
    )?;
    output::emit(&args.output, &report, &report.reliability)
}
