//! Binned calibration metrics and reliability-diagram data.
//!
//! ECE, D-ECE and D-UCE share one estimator: values in `[0, 1]` are assigned to `M`
//! equal-width bins, and the metric is the count-weighted mean of
//! `|mean_outcome - mean_value|` over bins. They differ only in what is binned
//! (confidence or uncertainty) and what the outcome is (accuracy, precision `U`, or
//! error).
//!
//! Bin `m` (1-based) covers `((m - 1) / M, m / M]`; the value 0 belongs to bin 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A classification prediction: confidence of the predicted label plus the true label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClsSample {
    pub confidence: f64,
    pub predicted: u32,
    pub truth: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub count: usize,
    /// Mean binned value (confidence or uncertainty); 0 for an empty bin.
    pub mean_conf: f64,
    /// Mean outcome (accuracy, precision or error); 0 for an empty bin.
    pub mean_outcome: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinTable {
    pub bins: Vec<Bin>,
    pub total: usize,
}

impl BinTable {
    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }

    /// `sum_m |I(m)| / |D| * gap(m)`.
    pub fn weighted_gap(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let n = self.total as f64;
        self.bins.iter().map(|b| b.count as f64 / n * b.gap).sum()
    }
}

/// One row of a reliability diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRecord {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
    pub mean_conf: f64,
    pub mean_outcome: f64,
    pub gap: f64,
}

/// Lower edge of 0-based bin `m`.
fn edge(m: usize, bins: usize) -> f64 {
    m as f64 / bins as f64
}

/// 0-based bin of `v` under the `((m-1)/M, m/M]` convention, consistent with the
/// edges reported by [`reliability_data`].
pub fn bin_index(v: f64, bins: usize) -> usize {
    if v <= 0.0 {
        return 0;
    }
    let mut m = ((v * bins as f64).ceil() as usize).clamp(1, bins) - 1;
    // correct for rounding in v * M against the exactly-computed edges
    while m > 0 && v <= edge(m, bins) {
        m -= 1;
    }
    while m + 1 < bins && v > edge(m + 1, bins) {
        m += 1;
    }
    m
}

fn check_bins(bins: usize) -> Result<()> {
    if bins == 0 {
        return Err(Error::param("bins", "must be at least 1"));
    }
    Ok(())
}

fn check_unit(v: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidInput(format!("{what} {v} outside [0, 1]")));
    }
    Ok(())
}

/// Bins `(value, outcome)` pairs and returns the weighted gap and the table.
///
/// Per-bin sums are accumulated in input order, so the result is reproducible.
pub fn binned_gap(pairs: &[(f64, f64)], bins: usize) -> Result<(f64, BinTable)> {
    check_bins(bins)?;
    if pairs.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let mut count = vec![0usize; bins];
    let mut sum_v = vec![0.0f64; bins];
    let mut sum_o = vec![0.0f64; bins];
    for &(v, o) in pairs {
        check_unit(v, "value")?;
        check_unit(o, "outcome")?;
        let m = bin_index(v, bins);
        count[m] += 1;
        sum_v[m] += v;
        sum_o[m] += o;
    }
    let table = BinTable {
        bins: (0..bins)
            .map(|m| {
                if count[m] == 0 {
                    return Bin {
                        count: 0,
                        mean_conf: 0.0,
                        mean_outcome: 0.0,
                        gap: 0.0,
                    };
                }
                let n = count[m] as f64;
                let (c, o) = (sum_v[m] / n, sum_o[m] / n);
                Bin {
                    count: count[m],
                    mean_conf: c,
                    mean_outcome: o,
                    gap: (o - c).abs(),
                }
            })
            .collect(),
        total: pairs.len(),
    };
    Ok((table.weighted_gap(), table))
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Classification expected calibration error.
pub fn ece(samples: &[ClsSample], bins: usize) -> Result<(f64, BinTable)> {
    let pairs: Vec<_> = samples
        .iter()
        .map(|s| (s.confidence, indicator(s.predicted == s.truth)))
        .collect();
    binned_gap(&pairs, bins)
}

/// Detection expected calibration error over `(score, U)` pairs.
pub fn d_ece(matches: &[(f64, bool)], bins: usize) -> Result<(f64, BinTable)> {
    let pairs: Vec<_> = matches.iter().map(|&(s, u)| (s, indicator(u))).collect();
    binned_gap(&pairs, bins)
}

/// Detection expected uncertainty calibration error over `(uncertainty, error)` pairs,
/// binned by uncertainty.
pub fn d_uce(entries: &[(f64, bool)], bins: usize) -> Result<(f64, BinTable)> {
    let pairs: Vec<_> = entries.iter().map(|&(u, e)| (u, indicator(e))).collect();
    binned_gap(&pairs, bins)
}

/// How the per-detection error of D-UCE is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorRule {
    /// `e = 1` iff the best IoU with any ground truth is below 0.5, whatever the class.
    #[default]
    IouBelowHalf,
    /// `e = 1 - U` from the matching outcome.
    Unmatched,
}

impl ErrorRule {
    pub fn error(self, max_iou: f64, correct: bool) -> bool {
        match self {
            ErrorRule::IouBelowHalf => max_iou < 0.5,
            ErrorRule::Unmatched => !correct,
        }
    }
}

pub fn reliability_data(table: &BinTable) -> Vec<ReliabilityRecord> {
    let m = table.num_bins();
    table
        .bins
        .iter()
        .enumerate()
        .map(|(i, b)| ReliabilityRecord {
            bin_lo: edge(i, m),
            bin_hi: edge(i + 1, m),
            count: b.count,
            mean_conf: b.mean_conf,
            mean_outcome: b.mean_outcome,
            gap: b.gap,
        })
        .collect()
}
