use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use detcal::io::{self, DatasetBundle};
use detcal::matching::{match_detections, score_outcomes, Detection};
use detcal::metrics::{self, ReliabilityRecord};
use detcal::posthoc::{self, TemperatureModel};

use super::MatchArgs;
use crate::output;
use crate::OutputArgs;

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Validation detections the temperature is fitted on.
    #[arg(long)]
    pub val_dets: PathBuf,
    #[arg(long)]
    pub val_gts: PathBuf,
    /// Test detections the fitted temperature is applied to.
    #[arg(long)]
    pub test_dets: PathBuf,
    /// Test annotations; enables before/after D-ECE on the test split.
    #[arg(long)]
    pub test_gts: Option<PathBuf>,
    /// Fitting objective (nll or dece).
    #[arg(long, default_value = "nll")]
    pub objective: String,
    #[command(flatten)]
    pub matching: MatchArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Write the fitted model as {"temperature": T}.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Write the rescaled test detections (COCO).
    #[arg(long)]
    pub scaled_out: Option<PathBuf>,
    /// Reliability diagram of the rescaled split.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct SplitReport {
    pub detections: usize,
    pub d_ece_before: f64,
    pub d_ece_after: f64,
    /// Every strict score inequality survives rescaling.
    pub rank_order_preserved: bool,
    /// Matching on rescaled scores reproduces every correctness flag.
    pub correctness_unchanged: bool,
    pub reliability_after: Vec<ReliabilityRecord>,
}

#[derive(Debug, Serialize)]
pub struct CalibrateReport {
    pub temperature: f64,
    pub objective: &'static str,
    pub bins: usize,
    pub gamma: f64,
    pub validation: SplitReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<SplitReport>,
}

fn rescale(dets: &[Detection], model: &TemperatureModel) -> Vec<Detection> {
    dets.iter()
        .map(|d| Detection {
            score: model.apply(d.score),
            ..d.clone()
        })
        .collect()
}

fn rank_preserved(before: &[Detection], after: &[Detection]) -> bool {
    let mut order: Vec<usize> = (0..before.len()).collect();
    order.sort_by(|&a, &b| before[a].score.total_cmp(&before[b].score));
    order.windows(2).all(|w| {
        let (a, b) = (w[0], w[1]);
        if before[a].score < before[b].score {
            after[a].score < after[b].score
        } else {
            after[a].score == after[b].score
        }
    })
}

fn split_report(bundle: &DatasetBundle, model: &TemperatureModel, args: &CalibrateArgs) -> Result<SplitReport> {
    let config = args.matching.config();
    let bins = args.matching.bins;
    let before = match_detections(&bundle.detections, &bundle.annotations.ground_truth, &config)?;
    if before.is_empty() {
        bail!("no detections left after --min-score {}", args.matching.min_score);
    }
    let scaled = rescale(&bundle.detections, model);
    let mut after = match_detections(&scaled, &bundle.annotations.ground_truth, &config)?;
    // rescaling can move scores across --min-score; compare on the original selection
    after.retain(|r| before.binary_search_by_key(&r.detection, |b| b.detection).is_ok());
    let correctness_unchanged = before.len() == after.len()
        && before
            .iter()
            .zip(&after)
            .all(|(b, a)| b.detection == a.detection && b.correct == a.correct);
    let (d_before, _) = metrics::d_ece(&score_outcomes(&before), bins)?;
    let (d_after, table) = metrics::d_ece(&score_outcomes(&after), bins)?;
    Ok(SplitReport {
        detections: before.len(),
        d_ece_before: d_before,
        d_ece_after: d_after,
        rank_order_preserved: rank_preserved(&bundle.detections, &scaled),
        correctness_unchanged,
        reliability_after: metrics::reliability_data(&table),
    })
}

pub fn run(args: &CalibrateArgs) -> Result<()> {
    let registry = posthoc::objectives(args.matching.bins);
    let objective = registry.get(&args.objective)?;

    let val = DatasetBundle::load(&args.val_dets, &args.val_gts)?;
    if val.detections.is_empty() {
        bail!("no detections in {}", args.val_dets.display());
    }
    let val_results = match_detections(&val.detections, &val.annotations.ground_truth, &args.matching.config())?;
    let pairs = score_outcomes(&val_results);
    let model = posthoc::fit_temperature(&pairs, objective).context("fitting temperature")?;

    let validation = split_report(&val, &model, args)?;
    let test_dets = io::load_coco_detections(&args.test_dets)?;
    if test_dets.is_empty() {
        bail!("no detections in {}", args.test_dets.display());
    }
    let test = match &args.test_gts {
        Some(gts) => {
            let ann = io::load_coco_annotations(gts)?;
            let bundle = DatasetBundle::new(test_dets.clone(), ann, &args.test_dets.display().to_string())?;
            Some(split_report(&bundle, &model, args)?)
        }
        None => None,
    };

    if let Some(p) = &args.model_out {
        io::write_json(p, &model).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &args.scaled_out {
        io::write_coco_detections(p, &rescale(&test_dets, &model))?;
    }

    let report = CalibrateReport {
        temperature: model.temperature,
        objective: objective.name(),
        bins: args.matching.bins,
        gamma: args.matching.gamma,
        validation,
        test,
    };
    let shown = report.test.as_ref().unwrap_or(&report.validation);
    super::write_svg(
        args.svg.as_deref(),
        &shown.reliability_after,
        &format!(
            "T = {:.4}, D-ECE {:.4} -> {:.4}",
            report.temperature, shown.d_ece_before, shown.d_ece_after
        ),
        "confidence",
        "precision",
    )?;
    output::emit(&args.output, &report, &shown.reliability_after)
}
