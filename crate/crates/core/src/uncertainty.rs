//! Uncertainty from Monte-Carlo passes and uncertainty-guided soft pseudo-targets.
//!
//! For every detection (the anchor) of every stochastic pass, a group is formed from
//! the detections of the other passes that share its class and overlap it with IoU
//! strictly above `gamma`, keeping at most the best-overlapping detection per pass.
//! The spread of four normalized features over the group (confidence, center x,
//! center y, aspect ratio) gives a joint uncertainty `u`, which then scales the
//! one-hot pseudo-target of the anchor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::matching::{Detection, ImageId};
use crate::registry::{Registry, Strategy};

/// Number of per-member features.
pub const FEATURES: usize = 4;

/// Detections of one stochastic forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct McPass {
    pub index: usize,
    pub detections: Vec<Detection>,
}

/// All passes over one image, plus the image size used to normalize box centers.
#[derive(Debug, Clone, PartialEq)]
pub struct McImage {
    pub image_id: ImageId,
    pub width: f64,
    pub height: f64,
    pub passes: Vec<McPass>,
}

/// Position of a detection: pass slot (position in [`McImage::passes`]) and index
/// within that pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DetRef {
    pub pass: usize,
    pub detection: usize,
}

/// `[confidence, cx / W, cy / H, aspect ratio]` of one group member.
pub type Features = [f64; FEATURES];

#[derive(Debug, Clone, PartialEq)]
pub struct McGroup {
    pub anchor: DetRef,
    pub class_id: u32,
    pub members: Vec<DetRef>,
    pub features: Vec<Features>,
}

impl McGroup {
    /// Mean member confidence, `None` for an empty group.
    pub fn sbar(&self) -> Option<f64> {
        if self.features.is_empty() {
            return None;
        }
        Some(self.features.iter().map(|f| f[0]).sum::<f64>() / self.features.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AspectNorm {
    /// `w / h` as is.
    #[default]
    Raw,
    /// `w / h` min-max scaled over all detections of the image.
    MinMax,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupingConfig {
    pub gamma: f64,
    /// Exclude the anchor from its own group, so only other passes contribute.
    pub exclude_anchor: bool,
    pub aspect: AspectNorm,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self {
            gamma: crate::DEFAULT_GAMMA,
            exclude_anchor: false,
            aspect: AspectNorm::Raw,
        }
    }
}

impl McImage {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.width.is_finite() && self.height > 0.0 && self.height.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "image {}: size {}x{} must be positive",
                self.image_id, self.width, self.height
            )));
        }
        let mut seen: Vec<usize> = self.passes.iter().map(|p| p.index).collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(format!(
                "image {}: duplicate pass index",
                self.image_id
            )));
        }
        for (p, pass) in self.passes.iter().enumerate() {
            for (m, d) in pass.detections.iter().enumerate() {
                if d.bbox.width() <= 0.0 || d.bbox.height() <= 0.0 {
                    return Err(Error::Degenerate(format!(
                        "image {}: pass {p} detection {m} has zero width or height",
                        self.image_id
                    )));
                }
            }
        }
        Ok(())
    }

    fn detection(&self, r: DetRef) -> &Detection {
        &self.passes[r.pass].detections[r.detection]
    }
}

fn aspect_range(image: &McImage) -> (f64, f64) {
    image
        .passes
        .iter()
        .flat_map(|p| p.detections.iter())
        .map(|d| d.bbox.width() / d.bbox.height())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| (lo.min(a), hi.max(a)))
}

fn features(det: &Detection, image: &McImage, aspect: AspectNorm, range: (f64, f64)) -> Features {
    let (cx, cy) = det.bbox.center();
    let mut ar = det.bbox.width() / det.bbox.height();
    if aspect == AspectNorm::MinMax {
        let span = range.1 - range.0;
        ar = if span > 0.0 { (ar - range.0) / span } else { 0.0 };
    }
    [det.score, cx / image.width, cy / image.height, ar]
}

/// Forms one group per detection of every pass, ordered by (pass slot, detection).
pub fn group_detections(image: &McImage, config: &GroupingConfig) -> Result<Vec<McGroup>> {
    if image.passes.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "image {}: grouping needs at least 2 passes, got {}",
            image.image_id,
            image.passes.len()
        )));
    }
    if !(config.gamma > 0.0 && config.gamma < 1.0) {
        return Err(Error::param("gamma", format!("{} not in (0, 1)", config.gamma)));
    }
    image.validate()?;
    let range = aspect_range(image);

    let mut groups = Vec::new();
    for (n, pass) in image.passes.iter().enumerate() {
        for (m, anchor) in pass.detections.iter().enumerate() {
            let anchor_ref = DetRef { pass: n, detection: m };
            let mut members = Vec::new();
            if !config.exclude_anchor {
                members.push(anchor_ref);
            }
            for (k, other) in image.passes.iter().enumerate() {
                if k == n {
                    continue;
                }
                let mut best: Option<(usize, f64)> = None;
                for (l, cand) in other.detections.iter().enumerate() {
                    if cand.class_id != anchor.class_id {
                        continue;
                    }
                    let overlap = iou(&anchor.bbox, &cand.bbox);
                    if overlap > config.gamma && best.is_none_or(|(_, b)| overlap > b) {
                        best = Some((l, overlap));
                    }
                }
                if let Some((l, _)) = best {
                    members.push(DetRef { pass: k, detection: l });
                }
            }
            let feats = members
                .iter()
                .map(|&r| features(image.detection(r), image, config.aspect, range))
                .collect();
            groups.push(McGroup {
                anchor: anchor_ref,
                class_id: anchor.class_id,
                members,
                features: feats,
            });
        }
    }
    Ok(groups)
}

/// Per-feature population variance and mean over the members.
pub fn feature_moments(features: &[Features]) -> Result<([f64; FEATURES], [f64; FEATURES])> {
    if features.is_empty() {
        return Err(Error::Empty("group members"));
    }
    let n = features.len() as f64;
    // shifted by the first member so identical members give exactly zero variance
    let origin = features[0];
    let mut shift = [0.0; FEATURES];
    for f in features {
        for j in 0..FEATURES {
            shift[j] += f[j] - origin[j];
        }
    }
    shift.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; FEATURES];
    for f in features {
        for j in 0..FEATURES {
            let d = (f[j] - origin[j]) - shift[j];
            var[j] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    let mut mean = origin;
    for j in 0..FEATURES {
        mean[j] += shift[j];
    }
    Ok((var, mean))
}

/// Reduces a group's features to a scalar uncertainty.
pub trait UncertaintyMeasure: Strategy {
    fn measure(&self, features: &[Features]) -> Result<f64>;
}

/// Mean per-feature variance plus the spread of the per-feature means around their
/// average: `(1/J) sum_j [var_j + (mean_j - mean_agg)^2]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Combined;

impl Strategy for Combined {
    fn name(&self) -> &'static str {
        "combined"
    }

    fn describe(&self) -> String {
        "within-feature variance plus between-feature spread of means".into()
    }
}

impl UncertaintyMeasure for Combined {
    fn measure(&self, features: &[Features]) -> Result<f64> {
        let (var, mean) = feature_moments(features)?;
        let agg = mean.iter().sum::<f64>() / FEATURES as f64;
        let total: f64 = (0..FEATURES).map(|j| var[j] + (mean[j] - agg) * (mean[j] - agg)).sum();
        Ok(total / FEATURES as f64)
    }
}

/// Mean per-feature variance only; zero for identical members.
#[derive(Debug, Clone, Copy, Default)]
pub struct WithinOnly;

impl Strategy for WithinOnly {
    fn name(&self) -> &'static str {
        "within"
    }

    fn describe(&self) -> String {
        "mean within-feature variance".into()
    }
}

impl UncertaintyMeasure for WithinOnly {
    fn measure(&self, features: &[Features]) -> Result<f64> {
        let (var, _) = feature_moments(features)?;
        Ok(var.iter().sum::<f64>() / FEATURES as f64)
    }
}

pub fn measures() -> Registry<dyn UncertaintyMeasure> {
    Registry::<dyn UncertaintyMeasure>::new("uncertainty mode")
        .with(Box::new(Combined))
        .with(Box::new(WithinOnly))
}

pub fn joint_uncertainty(group: &McGroup, measure: &dyn UncertaintyMeasure) -> Result<f64> {
    measure.measure(&group.features)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetStatus {
    Confident,
    Tempered,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftTarget {
    pub value: f64,
    pub status: TargetStatus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub kappa1: f64,
    pub kappa2: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            kappa1: crate::DEFAULT_KAPPA1,
            kappa2: crate::DEFAULT_KAPPA2,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa1.is_finite() && self.kappa2.is_finite()) {
            return Err(Error::param("kappa", "thresholds must be finite"));
        }
        if self.kappa2 >= self.kappa1 {
            return Err(Error::param(
                "kappa2",
                format!("{} must be below kappa1 = {}", self.kappa2, self.kappa1),
            ));
        }
        Ok(())
    }
}

/// Soft target for one-hot value `h` given the group's mean confidence and
/// uncertainty. `u` is clamped to `[0, 1]`.
pub fn soft_pseudo_target(h: f64, sbar: f64, u: f64, thresholds: &Thresholds) -> Result<SoftTarget> {
    thresholds.validate()?;
    let keep = 1.0 - u.clamp(0.0, 1.0);
    let target = if sbar >= thresholds.kappa1 {
        SoftTarget {
            value: h * keep,
            status: TargetStatus::Confident,
        }
    } else if sbar >= thresholds.kappa2 {
        SoftTarget {
            value: h * sbar * keep,
            status: TargetStatus::Tempered,
        }
    } else {
        SoftTarget {
            value: 0.0,
            status: TargetStatus::Rejected,
        }
    };
    Ok(target)
}

/// Per-anchor outcome of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorReport {
    pub image_id: ImageId,
    /// Pass index as given in the input.
    pub pass: usize,
    pub detection: usize,
    pub class: u32,
    /// `None` when the group is empty (possible only with the anchor excluded).
    pub sbar: Option<f64>,
    pub u: Option<f64>,
    pub value: f64,
    pub status: TargetStatus,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IctOutput {
    /// Every anchor, in (image, pass slot, detection) order.
    pub anchors: Vec<AnchorReport>,
}

impl IctOutput {
    /// Anchors that produced a target (not rejected).
    pub fn targets(&self) -> impl Iterator<Item = &AnchorReport> {
        self.anchors.iter().filter(|a| a.status != TargetStatus::Rejected)
    }

    /// `(u, error)` pairs for D-UCE, with `error_of` supplying the per-anchor error
    /// flag. Anchors without an uncertainty are skipped.
    pub fn uncertainty_errors<F>(&self, mut error_of: F) -> Vec<(f64, bool)>
    where
        F: FnMut(&AnchorReport) -> bool,
    {
        self.anchors
            .iter()
            .filter_map(|a| a.u.map(|u| (u.clamp(0.0, 1.0), error_of(a))))
            .collect()
    }
}

/// Groups, measures and converts every anchor detection of every image into a soft
/// target with one-hot value 1 on the anchor's class.
pub fn ict_pipeline(
    images: &[McImage],
    grouping: &GroupingConfig,
    thresholds: &Thresholds,
    measure: &dyn UncertaintyMeasure,
) -> Result<IctOutput> {
    thresholds.validate()?;
    let mut anchors = Vec::new();
    for image in images {
        for group in group_detections(image, grouping)? {
            let pass = image.passes[group.anchor.pass].index;
            let report = match group.sbar() {
                Some(sbar) => {
                    let u = joint_uncertainty(&group, measure)?;
                    let t = soft_pseudo_target(1.0, sbar, u, thresholds)?;
                    AnchorReport {
                        image_id: image.image_id.clone(),
                        pass,
                        detection: group.anchor.detection,
                        class: group.class_id,
                        sbar: Some(sbar),
                        u: Some(u),
                        value: t.value,
                        status: t.status,
                    }
                }
                None => AnchorReport {
                    image_id: image.image_id.clone(),
                    pass,
                    detection: group.anchor.detection,
                    class: group.class_id,
                    sbar: None,
                    u: None,
                    value: 0.0,
                    status: TargetStatus::Rejected,
                },
            };
            anchors.push(report);
        }
    }
    Ok(IctOutput { anchors })
}
