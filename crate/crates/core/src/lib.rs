//! Calibration toolkit for object detectors.
//!
//! The crate covers four workflows:
//!
//! * measuring calibration of detection outputs ([`metrics`]: ECE, D-ECE, D-UCE and
//!   reliability-diagram data), built on greedy per-class matching ([`matching`]);
//! * post-hoc temperature scaling fitted on a hold-out split ([`posthoc`]);
//! * the train-time calibration loss for detectors with analytic gradients ([`tcd`]);
//! * Monte-Carlo grouping, joint uncertainty and soft pseudo-targets for
//!   self-training ([`uncertainty`]).
//!
//! Interchangeable algorithm variants (temperature objectives, uncertainty measures,
//! synthetic calibration curves) implement a common trait per family and are looked
//! up by name through a [`registry::Registry`].

pub mod error;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod metrics;
pub mod posthoc;
pub mod registry;
pub mod synth;
pub mod tcd;
pub mod uncertainty;

pub use error::{Error, Result};
pub use geometry::BBox;
pub use matching::{Detection, GroundTruthBox, ImageId, MatchConfig, MatchResult};
pub use registry::{Registry, Strategy};

/// Matching IoU threshold used unless overridden.
pub const DEFAULT_GAMMA: f64 = 0.5;
/// Number of equal-width confidence bins used unless overridden.
pub const DEFAULT_BINS: usize = 10;
/// Upper confidence threshold for soft pseudo-targets.
pub const DEFAULT_KAPPA1: f64 = 0.75;
/// Lower confidence threshold for soft pseudo-targets.
pub const DEFAULT_KAPPA2: f64 = 0.5;
