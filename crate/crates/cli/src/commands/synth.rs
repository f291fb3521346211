use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::Serialize;

use detcal::io::{self, Annotations};
use detcal::synth::{self, SynthMetadata, SynthSpec};

use crate::output;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of detections.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub classes: u32,
    /// Calibration curve (identity, gap or temperature).
    #[arg(long, default_value = "identity")]
    pub curve: String,
    /// Gap of the `gap` curve.
    #[arg(long, default_value_t = 0.2)]
    pub delta: f64,
    /// Temperature of the `temperature` curve.
    #[arg(long, default_value_t = 2.0)]
    pub curve_temperature: f64,
    /// Beta distribution of scores.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.0)]
    pub score_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub score_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output COCO detection results.
    #[arg(long)]
    pub dets_out: PathBuf,
    /// Output COCO annotations.
    #[arg(long)]
    pub gts_out: PathBuf,
    /// Summary path; stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    detections: usize,
    correct: usize,
    ground_truth: usize,
    images: usize,
    metadata: &'a SynthMetadata,
}

pub fn run(args: &SynthArgs) -> Result<()> {
    let registry = synth::curves(args.delta, args.curve_temperature);
    // validate the name before building the owned curve below
    registry.get(&args.curve)?;
    let curve: Box<dyn synth::CalibrationCurve> = match args.curve.as_str() {
        "gap" => Box::new(synth::ConstantGap { delta: args.delta }),
        "temperature" => Box::new(synth::Tempered {
            temperature: args.curve_temperature,
        }),
        _ => Box::new(synth::Identity),
    };
    let spec = SynthSpec {
        n_detections: args.n,
        classes: args.classes,
        curve,
        alpha: args.alpha,
        beta: args.beta,
        score_range: (args.score_min, args.score_max),
        seed: args.seed,
    };
    let out = synth::generate(&spec)?;

    let mut ann = Annotations {
        ground_truth: out.ground_truth.clone(),
        ..Default::default()
    };
    for (id, w, h) in &out.images {
        ann.images.insert(id.clone(), (*w, *h));
    }
    for c in 0..args.classes {
        ann.categories.insert(c, format!("class_{c}"));
    }
    let info = serde_json::to_value(&out.metadata)?;
    io::write_coco_detections(&args.dets_out, &out.detections)?;
    io::write_coco_annotations(&args.gts_out, &ann, Some(info))?;

    let summary = Summary {
        detections: out.detections.len(),
        correct: out.correct.iter().filter(|&&c| c).count(),
        ground_truth: out.ground_truth.len(),
        images: out.images.len(),
        metadata: &out.metadata,
    };
    output::write_to(args.out.as_deref(), &io::to_json_bytes(&summary)?)
}
