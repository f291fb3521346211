use std::collections::HashMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

use detcal::io;
use detcal::matching::{match_detections, GroundTruthBox, ImageId, MatchConfig};
use detcal::metrics::{self, ErrorRule, ReliabilityRecord};
use detcal::uncertainty::{self, AnchorReport, GroupingConfig, McImage, TargetStatus, Thresholds};

use crate::output;
use crate::{AspectArg, ErrorRuleArg, OutputArgs};

#[derive(Debug, Args)]
pub struct IctArgs {
    /// MC-pass file.
    #[arg(long)]
    pub passes: PathBuf,
    /// IoU threshold for grouping detections across passes.
    #[arg(long, default_value_t = detcal::DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long, default_value_t = detcal::DEFAULT_KAPPA1)]
    pub kappa1: f64,
    #[arg(long, default_value_t = detcal::DEFAULT_KAPPA2)]
    pub kappa2: f64,
    /// Uncertainty measure (combined or within).
    #[arg(long, default_value = "combined")]
    pub mode: String,
    /// Group only detections from other passes, leaving the anchor out.
    #[arg(long)]
    pub strict: bool,
    /// Aspect-ratio feature scaling.
    #[arg(long, value_enum, default_value = "raw")]
    pub aspect: AspectArg,
    /// Annotation file; enables D-UCE over the anchors.
    #[arg(long)]
    pub gts: Option<PathBuf>,
    /// Per-detection error used by D-UCE.
    #[arg(long, value_enum, default_value = "iou")]
    pub error_rule: ErrorRuleArg,
    /// Bins for D-UCE.
    #[arg(long, default_value_t = detcal::DEFAULT_BINS)]
    pub bins: usize,
    #[command(flatten)]
    pub output: OutputArgs,
    /// D-UCE reliability diagram (requires --gts).
    #[arg(long, requires = "gts")]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct AnchorId {
    image_id: ImageId,
    pass: usize,
    index: usize,
}

#[derive(Debug, Serialize)]
struct TargetRecord {
    anchor: AnchorId,
    class: u32,
    sbar: Option<f64>,
    u: Option<f64>,
    value: f64,
    status: TargetStatus,
}

#[derive(Debug, Serialize)]
struct CsvRow {
    image_id: String,
    pass: usize,
    index: usize,
    class: u32,
    sbar: Option<f64>,
    u: Option<f64>,
    value: f64,
    status: TargetStatus,
}

#[derive(Debug, Serialize)]
struct Duce {
    d_uce: f64,
    error_rule: ErrorRule,
    bins: usize,
    reliability: Vec<ReliabilityRecord>,
}

#[derive(Debug, Serialize)]
struct Report {
    mode: &'static str,
    gamma: f64,
    kappa1: f64,
    kappa2: f64,
    targets: Vec<TargetRecord>,
    anchors: Vec<TargetRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    d_uce: Option<Duce>,
}

fn record(a: &AnchorReport) -> TargetRecord {
    TargetRecord {
        anchor: AnchorId {
            image_id: a.image_id.clone(),
            pass: a.pass,
            index: a.detection,
        },
        class: a.class,
        sbar: a.sbar,
        u: a.u,
        value: a.value,
        status: a.status,
    }
}

/// (image, pass index, detection) -> (best IoU with any ground truth, matched).
type Outcomes = HashMap<(ImageId, usize, usize), (f64, bool)>;

fn anchor_outcomes(images: &[McImage], gts: &[GroundTruthBox], gamma: f64) -> Result<Outcomes> {
    let mut out = HashMap::new();
    let config = MatchConfig::with_gamma(gamma);
    for image in images {
        let image_gts: Vec<GroundTruthBox> = gts.iter().filter(|g| g.image_id == image.image_id).cloned().collect();
        // every pass is a complete detector output, so each is matched on its own
        for pass in &image.passes {
            for r in match_detections(&pass.detections, &image_gts, &config)? {
                out.insert(
                    (image.image_id.clone(), pass.index, r.detection),
                    (r.max_iou, r.correct),
                );
            }
        }
    }
    Ok(out)
}

pub fn run(args: &IctArgs) -> Result<()> {
    let measures = uncertainty::measures();
    let measure = measures.get(&args.mode)?;
    let images = io::load_mc_passes(&args.passes)?;
    let grouping = GroupingConfig {
        gamma: args.gamma,
        exclude_anchor: args.strict,
        aspect: args.aspect.into(),
    };
    let thresholds = Thresholds {
        kappa1: args.kappa1,
        kappa2: args.kappa2,
    };
    let out = uncertainty::ict_pipeline(&images, &grouping, &thresholds, measure)?;

    let d_uce = match &args.gts {
        Some(path) => {
            let ann = io::load_coco_annotations(path)?;
            let outcomes = anchor_outcomes(&images, &ann.ground_truth, args.gamma)?;
            let rule: ErrorRule = args.error_rule.into();
            let entries = out.uncertainty_errors(|a| {
                let (max_iou, correct) = outcomes
                    .get(&(a.image_id.clone(), a.pass, a.detection))
                    .copied()
                    .unwrap_or((0.0, false));
                rule.error(max_iou, correct)
            });
            let (value, table) = metrics::d_uce(&entries, args.bins).context("computing D-UCE")?;
            Some(Duce {
                d_uce: value,
                error_rule: rule,
                bins: args.bins,
                reliability: metrics::reliability_data(&table),
            })
        }
        None => None,
    };
    if let Some(d) = &d_uce {
        super::write_svg(
            args.svg.as_deref(),
            &d.reliability,
            &format!("D-UCE = {:.4}", d.d_uce),
            "uncertainty",
            "error",
        )?;
    }

    let rows: Vec<CsvRow> = out
        .anchors
        .iter()
        .map(|a| CsvRow {
            image_id: a.image_id.to_string(),
            pass: a.pass,
            index: a.detection,
            class: a.class,
            sbar: a.sbar,
            u: a.u,
            value: a.value,
            status: a.status,
        })
        .collect();
    let report = Report {
        mode: measure.name(),
        gamma: args.gamma,
        kappa1: args.kappa1,
        kappa2: args.kappa2,
        targets: out.targets().map(record).collect(),
        anchors: out.anchors.iter().map(record).collect(),
        d_uce,
    };
    output::emit(&args.output, &report, &rows)
}
