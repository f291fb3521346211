use std::path::Path;

use anyhow::{Context, Result};
use clap::Args;

use detcal::matching::MatchConfig;
use detcal::metrics::ReliabilityRecord;

pub mod calibrate;
pub mod eval;
pub mod ict;
pub mod synth;
pub mod tcd_eval;

/// Matching and binning options shared by `eval` and `calibrate`.
#[derive(Debug, Clone, Args)]
pub struct MatchArgs {
    /// IoU threshold for a correct detection.
    #[arg(long, default_value_t = detcal::DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Number of equal-width confidence bins.
    #[arg(long, default_value_t = detcal::DEFAULT_BINS)]
    pub bins: usize,
    /// Drop detections scoring below this before matching.
    #[arg(long, default_value_t = 0.0)]
    pub min_score: f64,
    /// Drop duplicate detections instead of counting them as incorrect.
    #[arg(long)]
    pub drop_duplicates: bool,
}

impl MatchArgs {
    pub fn config(&self) -> MatchConfig {
        MatchConfig {
            gamma: self.gamma,
            min_score: self.min_score,
            drop_duplicates: self.drop_duplicates,
        }
    }
}

pub fn write_svg(path: Option<&Path>, records: &[ReliabilityRecord], title: &str, x: &str, y: &str) -> Result<()> {
    if let Some(p) = path {
        let doc = crate::svg::reliability_svg(records, title, x, y);
        detcal::io::atomic_write(p, doc.as_bytes()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}
