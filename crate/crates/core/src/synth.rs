//! Synthetic detector with a known calibration curve.
//!
//! Each detection draws a score from a scaled Beta distribution and a correctness flag
//! from `Bernoulli(curve(score))`. Geometry is constructed so that greedy matching at
//! any `gamma <= 0.9` reproduces the drawn flags exactly: images are 4x4 grids of
//! 250 px cells, one detection per cell; a correct detection sits within a 2 px shift
//! of a 100 px ground-truth box of its class in the same cell (IoU >= 0.96), an
//! incorrect one sits in a cell without ground truth.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::matching::{Detection, GroundTruthBox, ImageId};
use crate::posthoc::{logit, sigmoid};
use crate::registry::{Registry, Strategy};

/// Identifies the random stream; recorded in every output.
pub const RNG_ALGORITHM: &str = "chacha8 (rand_chacha 0.9, seed_from_u64)";

pub const IMAGE_SIZE: f64 = 1000.0;
const GRID: usize = 4;
const CELL: f64 = IMAGE_SIZE / GRID as f64;
const BOX: f64 = 100.0;
const MAX_SHIFT: f64 = 2.0;

/// Maps a score to the probability that the detection is correct.
pub trait CalibrationCurve: Strategy {
    fn probability(&self, score: f64) -> f64;
}

/// `p(s) = s`: perfectly calibrated.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Strategy for Identity {
    fn name(&self) -> &'static str {
        "identity"
    }
}

impl CalibrationCurve for Identity {
    fn probability(&self, score: f64) -> f64 {
        score
    }
}

/// `p(s) = clamp(s - delta, 0, 1)`: overconfident by a constant.
#[derive(Debug, Clone, Copy)]
pub struct ConstantGap {
    pub delta: f64,
}

impl Strategy for ConstantGap {
    fn name(&self) -> &'static str {
        "gap"
    }

    fn describe(&self) -> String {
        format!("gap(delta={})", self.delta)
    }
}

impl CalibrationCurve for ConstantGap {
    fn probability(&self, score: f64) -> f64 {
        (score - self.delta).clamp(0.0, 1.0)
    }
}

/// `p(s) = sigmoid(logit(s) / T)`: miscalibrated by a temperature.
#[derive(Debug, Clone, Copy)]
pub struct Tempered {
    pub temperature: f64,
}

impl Strategy for Tempered {
    fn name(&self) -> &'static str {
        "temperature"
    }

    fn describe(&self) -> String {
        format!("temperature(T={})", self.temperature)
    }
}

impl CalibrationCurve for Tempered {
    fn probability(&self, score: f64) -> f64 {
        sigmoid(logit(score) / self.temperature)
    }
}

/// Built-in curves, parameterized by the gap `delta` and the temperature.
pub fn curves(delta: f64, temperature: f64) -> Registry<dyn CalibrationCurve> {
    Registry::<dyn CalibrationCurve>::new("calibration curve")
        .with(Box::new(Identity))
        .with(Box::new(ConstantGap { delta }))
        .with(Box::new(Tempered { temperature }))
}

pub struct SynthSpec {
    pub n_detections: usize,
    pub classes: u32,
    pub curve: Box<dyn CalibrationCurve>,
    pub alpha: f64,
    pub beta: f64,
    /// Scores are `lo + (hi - lo) * Beta(alpha, beta)`.
    pub score_range: (f64, f64),
    pub seed: u64,
}

impl fmt::Debug for SynthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SynthSpec")
            .field("n_detections", &self.n_detections)
            .field("classes", &self.classes)
            .field("curve", &self.curve.describe())
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .field("score_range", &self.score_range)
            .field("seed", &self.seed)
            .finish()
    }
}

impl SynthSpec {
    pub fn new(n_detections: usize, curve: Box<dyn CalibrationCurve>, seed: u64) -> Self {
        Self {
            n_detections,
            classes: 1,
            curve,
            alpha: 1.0,
            beta: 1.0,
            score_range: (0.0, 1.0),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_detections == 0 {
            return Err(Error::param("n_detections", "must be positive"));
        }
        if self.classes == 0 {
            return Err(Error::param("classes", "must be positive"));
        }
        let (lo, hi) = self.score_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::param("score_range", format!("[{lo}, {hi}] not within [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMetadata {
    pub rng: String,
    pub seed: u64,
    pub curve: String,
    pub n_detections: usize,
    pub classes: u32,
    pub alpha: f64,
    pub beta: f64,
    pub score_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<GroundTruthBox>,
    /// `(id, width, height)` of every image.
    pub images: Vec<(ImageId, f64, f64)>,
    /// The drawn correctness flag of each detection.
    pub correct: Vec<bool>,
    pub metadata: SynthMetadata,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let dist = Beta::new(spec.alpha, spec.beta)
        .map_err(|e| Error::param("beta", format!("Beta({}, {}): {e}", spec.alpha, spec.beta)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.score_range;
    let per_image = GRID * GRID;

    let mut detections = Vec::with_capacity(spec.n_detections);
    let mut ground_truth = Vec::new();
    let mut correct = Vec::with_capacity(spec.n_detections);
    for i in 0..spec.n_detections {
        let image_id = ImageId::Num((i / per_image) as u64 + 1);
        let cell = i % per_image;
        let ox = (cell % GRID) as f64 * CELL + 0.5 * (CELL - BOX);
        let oy = (cell / GRID) as f64 * CELL + 0.5 * (CELL - BOX);

        let score = (lo + (hi - lo) * dist.sample(&mut rng)).clamp(0.0, 1.0);
        let hit = rng.random::<f64>() < spec.curve.probability(score);
        let class_id = rng.random_range(0..spec.classes);
        let dx = rng.random_range(-MAX_SHIFT..=MAX_SHIFT);
        let dy = rng.random_range(-MAX_SHIFT..=MAX_SHIFT);

        let gt_box = BBox::from_xywh(ox, oy, BOX, BOX)?;
        let det_box = gt_box.translate(dx, dy)?;
        if hit {
            ground_truth.push(GroundTruthBox::new(image_id.clone(), gt_box, class_id));
        }
        detections.push(Detection::new(image_id, det_box, class_id, score)?);
        correct.push(hit);
    }

    let n_images = spec.n_detections.div_ceil(per_image);
    let images = (1..=n_images as u64)
        .map(|id| (ImageId::Num(id), IMAGE_SIZE, IMAGE_SIZE))
        .collect();
    Ok(SynthOutput {
        detections,
        ground_truth,
        images,
        correct,
        metadata: SynthMetadata {
            rng: RNG_ALGORITHM.to_string(),
            seed: spec.seed,
            curve: spec.curve.describe(),
            n_detections: spec.n_detections,
            classes: spec.classes,
            alpha: spec.alpha,
            beta: spec.beta,
            score_range: spec.score_range,
        },
    })
}

/// `(score, probability)` pairs from the curve, for drawing labelled validation data
/// without geometry.
pub fn sample_scores(spec: &SynthSpec) -> Result<Vec<(f64, bool)>> {
    let out = generate(spec)?;
    Ok(out
        .detections
        .iter()
        .zip(&out.correct)
        .map(|(d, &u)| (d.score, u))
        .collect())
}
