use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::Serialize;

use detcal::io;
use detcal::tcd;

use crate::output;
use crate::OutputArgs;

#[derive(Debug, Args)]
pub struct TcdEvalArgs {
    /// Batch file, JSON or binary (TCB1).
    #[arg(long)]
    pub batch: PathBuf,
    /// Include gradients in the report.
    #[arg(long)]
    pub grads: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Serialize)]
struct Row {
    d_cls: f64,
    d_det: f64,
    loss: f64,
}

#[derive(Debug, Serialize)]
struct Report {
    #[serde(rename = "L")]
    images: usize,
    #[serde(rename = "R")]
    locations: usize,
    #[serde(rename = "K")]
    classes: usize,
    d_cls: f64,
    d_det: f64,
    loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    grad_s: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grad_shat: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grad_iou: Option<Vec<Vec<f64>>>,
}

pub fn run(args: &TcdEvalArgs) -> Result<()> {
    let batch = io::load_tcd_batch(&args.batch)?;
    let v = tcd::tcd_loss(&batch)?;
    let row = Row {
        d_cls: v.d_cls,
        d_det: v.d_det,
        loss: v.loss,
    };
    let (grad_s, grad_shat, grad_iou) = if args.grads {
        (Some(v.grad_s), Some(v.grad_shat), Some(v.grad_iou))
    } else {
        (None, None, None)
    };
    let report = Report {
        images: batch.images,
        locations: batch.locations,
        classes: batch.classes,
        d_cls: row.d_cls,
        d_det: row.d_det,
        loss: row.loss,
        grad_s,
        grad_shat,
        grad_iou,
    };
    output::emit(&args.output, &report, &[row])
}
