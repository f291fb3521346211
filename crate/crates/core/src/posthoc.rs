//! Post-hoc temperature scaling of detection confidences.
//!
//! Scores are mapped to logits, divided by a temperature `T` and squashed back:
//! `sigmoid(logit(s) / T)`. The temperature is fitted on a hold-out split by
//! minimizing a registered [`Objective`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::registry::{Registry, Strategy};

/// Scores are clamped to `[EPS, 1 - EPS]` before taking the logit.
pub const EPS: f64 = 1e-7;

/// Temperature search interval.
pub const T_MIN: f64 = 0.05;
pub const T_MAX: f64 = 20.0;
const GRID_POINTS: usize = 200;
/// Golden-section refinement stops once the bracket is narrower than this.
pub const T_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureModel {
    pub temperature: f64,
}

impl TemperatureModel {
    pub fn new(temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        Ok(Self { temperature })
    }

    pub fn identity() -> Self {
        Self { temperature: 1.0 }
    }

    pub fn apply(&self, score: f64) -> f64 {
        scale(score, self.temperature)
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::param("temperature", format!("{t} is not finite and positive")));
    }
    Ok(())
}

pub fn logit(score: f64) -> f64 {
    let s = score.clamp(EPS, 1.0 - EPS);
    (s / (1.0 - s)).ln()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn scale(score: f64, t: f64) -> f64 {
    if t == 1.0 {
        return score.clamp(EPS, 1.0 - EPS);
    }
    sigmoid(logit(score) / t)
}

/// `sigmoid(logit(score) / t)`.
pub fn apply_temperature(score: f64, t: f64) -> Result<f64> {
    check_temperature(t)?;
    Ok(scale(score, t))
}

/// Criterion minimized over the temperature.
pub trait Objective: Strategy {
    /// Rejects validation sets on which the objective is degenerate.
    fn check(&self, _pairs: &[(f64, bool)]) -> Result<()> {
        Ok(())
    }

    fn evaluate(&self, pairs: &[(f64, bool)], temperature: f64) -> Result<f64>;
}

/// Mean binary cross-entropy between scaled score and `U`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NegLogLikelihood;

impl Strategy for NegLogLikelihood {
    fn name(&self) -> &'static str {
        "nll"
    }

    fn describe(&self) -> String {
        "mean binary cross-entropy between scaled score and correctness".into()
    }
}

impl Objective for NegLogLikelihood {
    fn check(&self, pairs: &[(f64, bool)]) -> Result<()> {
        let hits = pairs.iter().filter(|p| p.1).count();
        if hits == 0 || hits == pairs.len() {
            return Err(Error::Degenerate(
                "validation set: NLL needs both correct and incorrect detections".into(),
            ));
        }
        Ok(())
    }

    fn evaluate(&self, pairs: &[(f64, bool)], t: f64) -> Result<f64> {
        check_temperature(t)?;
        if pairs.is_empty() {
            return Err(Error::Empty("validation pairs"));
        }
        // -ln p = softplus(-z), -ln(1 - p) = softplus(z) with p = sigmoid(z)
        let total: f64 = pairs
            .iter()
            .map(|&(s, u)| {
                let z = logit(s) / t;
                if u {
                    softplus(-z)
                } else {
                    softplus(z)
                }
            })
            .sum();
        Ok(total / pairs.len() as f64)
    }
}

/// D-ECE of the scaled scores.
#[derive(Debug, Clone, Copy)]
pub struct DetectionEce {
    pub bins: usize,
}

impl Strategy for DetectionEce {
    fn name(&self) -> &'static str {
        "dece"
    }

    fn describe(&self) -> String {
        format!("D-ECE of scaled scores over {} bins", self.bins)
    }
}

impl Objective for DetectionEce {
    fn evaluate(&self, pairs: &[(f64, bool)], t: f64) -> Result<f64> {
        check_temperature(t)?;
        let scaled: Vec<_> = pairs.iter().map(|&(s, u)| (scale(s, t), u)).collect();
        Ok(metrics::d_ece(&scaled, self.bins)?.0)
    }
}

/// All built-in objectives; `bins` configures the D-ECE objective.
pub fn objectives(bins: usize) -> Registry<dyn Objective> {
    Registry::<dyn Objective>::new("objective")
        .with(Box::new(NegLogLikelihood))
        .with(Box::new(DetectionEce { bins }))
}

/// Fits the temperature minimizing `objective` on validation `(score, U)` pairs.
///
/// A log-spaced grid over `[T_MIN, T_MAX]` locates the best cell, then golden-section
/// search refines within the neighbouring grid cells until the bracket is narrower
/// than [`T_TOLERANCE`].
pub fn fit_temperature(pairs: &[(f64, bool)], objective: &dyn Objective) -> Result<TemperatureModel> {
    if pairs.is_empty() {
        return Err(Error::Empty("validation pairs"));
    }
    objective.check(pairs)?;

    let (lo, hi) = (T_MIN.ln(), T_MAX.ln());
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| (lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64).exp())
        .collect();
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for (i, &t) in grid.iter().enumerate() {
        let v = objective.evaluate(pairs, t)?;
        if v < best_val {
            best_val = v;
            best = i;
        }
    }

    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(GRID_POINTS - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = objective.evaluate(pairs, c)?;
    let mut fd = objective.evaluate(pairs, d)?;
    while b - a >= T_TOLERANCE {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective.evaluate(pairs, c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective.evaluate(pairs, d)?;
        }
    }

    // keep the grid optimum if the refinement landed on a worse plateau
    let refined = 0.5 * (a + b);
    let temperature = if objective.evaluate(pairs, refined)? <= best_val {
        refined
    } else {
        grid[best]
    };
    TemperatureModel::new(temperature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn half_is_fixed_point() {
        for t in [0.1, 0.5, 1.0, 2.0, 10.0] {
            assert!((apply_temperature(0.5, t).unwrap() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn unit_temperature_is_identity() {
        for s in [0.01, 0.3, 0.77, 0.999] {
            assert_eq!(apply_temperature(s, 1.0).unwrap(), s);
        }
        assert_eq!(apply_temperature(1.0, 1.0).unwrap(), 1.0 - EPS);
        assert_eq!(apply_temperature(0.0, 1.0).unwrap(), EPS);
    }

    #[test]
    fn closed_form_point() {
        // logit(0.9) = ln 9; sigmoid(ln 9 / 2) = 3 / (1 + 3)
        let v = apply_temperature(0.9, 2.0).unwrap();
        assert!((v - 0.75).abs() < 1e-12, "{v}");
    }

    #[test]
    fn bad_temperature() {
        for t in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(apply_temperature(0.4, t).is_err());
            assert!(TemperatureModel::new(t).is_err());
        }
    }

    #[test]
    fn contraction_and_expansion() {
        for s in [0.05, 0.3, 0.6, 0.95] {
            let hot = apply_temperature(s, 3.0).unwrap();
            let cold = apply_temperature(s, 0.4).unwrap();
            assert!((hot - 0.5).abs() < (s - 0.5).abs());
            assert!((cold - 0.5).abs() > (s - 0.5).abs());
        }
    }

    #[test]
    fn nll_matches_direct_cross_entropy() {
        let pairs = [(0.9, true), (0.2, false), (0.6, false), (0.35, true)];
        let t = 1.7;
        let direct: f64 = pairs
            .iter()
            .map(|&(s, u)| {
                let p = apply_temperature(s, t).unwrap();
                if u {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum::<f64>()
            / pairs.len() as f64;
        let v = NegLogLikelihood.evaluate(&pairs, t).unwrap();
        assert!((v - direct).abs() < 1e-12);
    }

    #[test]
    fn degenerate_nll_rejected() {
        let all = [(0.9, true), (0.4, true)];
        assert!(matches!(
            fit_temperature(&all, &NegLogLikelihood),
            Err(Error::Degenerate(_))
        ));
        let none = [(0.9, false), (0.4, false)];
        assert!(fit_temperature(&none, &NegLogLikelihood).is_err());
        assert!(fit_temperature(&[], &NegLogLikelihood).is_err());
        // the D-ECE objective has no such requirement
        assert!(fit_temperature(&all, &DetectionEce { bins: 10 }).is_ok());
    }

    fn synthetic(t_star: f64, n: usize, seed: u64) -> Vec<(f64, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let s: f64 = rng.random_range(0.02..0.98);
                let p = sigmoid(logit(s) / t_star);
                (s, rng.random::<f64>() < p)
            })
            .collect()
    }

    #[test]
    fn recovers_temperature() {
        for t_star in [2.0, 1.0, 0.5] {
            let pairs = synthetic(t_star, 50_000, 7);
            let fit = fit_temperature(&pairs, &NegLogLikelihood).unwrap();
            assert!(
                (fit.temperature - t_star).abs() <= 0.05 * t_star,
                "T* {t_star} fitted {}",
                fit.temperature
            );
        }
    }

    #[test]
    fn dece_objective_pushes_overconfident_scores_down() {
        let pairs: Vec<_> = (0..10).map(|i| (0.8, i % 2 == 0)).collect();
        let fit = fit_temperature(&pairs, &DetectionEce { bins: 10 }).unwrap();
        assert!(fit.temperature > 1.0, "{}", fit.temperature);
    }

    #[test]
    fn deterministic_fit() {
        let pairs = synthetic(1.5, 5_000, 3);
        let a = fit_temperature(&pairs, &NegLogLikelihood).unwrap();
        let b = fit_temperature(&pairs, &NegLogLikelihood).unwrap();
        assert_eq!(a.temperature.to_bits(), b.temperature.to_bits());
    }

    #[test]
    fn registry_names() {
        let reg = objectives(10);
        assert_eq!(reg.names(), vec!["dece", "nll"]);
        assert!(reg.get("brier").is_err());
    }

    #[test]
    fn ordering_preserved() {
        let scores = [0.01, 0.2, 0.2000001, 0.5, 0.73, 0.99];
        for t in [0.3, 1.0, 4.0] {
            let scaled: Vec<_> = scores.iter().map(|&s| apply_temperature(s, t).unwrap()).collect();
            assert!(scaled.windows(2).all(|w| w[0] < w[1]), "T={t}: {scaled:?}");
        }
    }
}
