//! Train-time calibration loss for detectors.
//!
//! Two terms are computed over a mini-batch:
//!
//! * `d_cls`: per class, the absolute difference between the mean predicted
//!   confidence and the mean one-hot label over all `L x R` output locations, averaged
//!   over the `K` classes;
//! * `d_det`: per image, the mean of `|IoU - s_hat|` over positive regions, averaged
//!   over images that have positives.
//!
//! The loss is `(d_cls + d_det) / 2`. Gradients use the subgradient 0 at `|x| = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_grad, BBox};

/// A positive region: overlap of its box with the target and its predicted-class
/// confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Positive {
    pub iou: f64,
    pub shat: f64,
}

/// Mini-batch input of the loss.
///
/// `s` and `q` are row-major `L x R x K`; `q` holds a one-hot row per foreground
/// location and an all-zero row for background.
#[derive(Debug, Clone, PartialEq)]
pub struct TcdBatch {
    pub images: usize,
    pub locations: usize,
    pub classes: usize,
    pub s: Vec<f64>,
    pub q: Vec<u8>,
    pub positives: Vec<Vec<Positive>>,
}

impl TcdBatch {
    pub fn new(
        images: usize,
        locations: usize,
        classes: usize,
        s: Vec<f64>,
        q: Vec<u8>,
        positives: Vec<Vec<Positive>>,
    ) -> Result<Self> {
        let batch = Self {
            images,
            locations,
            classes,
            s,
            q,
            positives,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self
            .images
            .checked_mul(self.locations)
            .and_then(|v| v.checked_mul(self.classes))
            .ok_or_else(|| Error::InvalidInput("batch dimensions overflow".into()))?;
        if self.s.len() != n {
            return Err(Error::InvalidInput(format!(
                "s has {} values, expected L*R*K = {n}",
                self.s.len()
            )));
        }
        if self.q.len() != n {
            return Err(Error::InvalidInput(format!(
                "q has {} values, expected L*R*K = {n}",
                self.q.len()
            )));
        }
        if self.positives.len() != self.images {
            return Err(Error::InvalidInput(format!(
                "positives lists {} images, expected L = {}",
                self.positives.len(),
                self.images
            )));
        }
        if let Some(i) = self.s.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput(format!("s[{i}] = {} outside [0, 1]", self.s[i])));
        }
        if let Some(i) = self.q.iter().position(|&v| v > 1) {
            return Err(Error::InvalidInput(format!("q[{i}] = {} is not 0 or 1", self.q[i])));
        }
        if self.classes > 0 {
            for (row, chunk) in self.q.chunks(self.classes).enumerate() {
                if chunk.iter().map(|&v| v as usize).sum::<usize>() > 1 {
                    return Err(Error::InvalidInput(format!(
                        "q location {row} has more than one positive class"
                    )));
                }
            }
        }
        for (l, list) in self.positives.iter().enumerate() {
            for (n, p) in list.iter().enumerate() {
                if !(0.0..=1.0).contains(&p.iou) || !(0.0..=1.0).contains(&p.shat) {
                    return Err(Error::InvalidInput(format!(
                        "positives[{l}][{n}] = ({}, {}) outside [0, 1]",
                        p.iou, p.shat
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn index(&self, image: usize, location: usize, class: usize) -> usize {
        (image * self.locations + location) * self.classes + class
    }

    fn cells(&self) -> usize {
        self.images * self.locations
    }

    /// Per-class `(mean s, mean q)` over all locations.
    fn class_means(&self) -> Vec<(f64, f64)> {
        let k = self.classes;
        let mut sums = vec![(0.0f64, 0.0f64); k];
        for (srow, qrow) in self.s.chunks(k).zip(self.q.chunks(k)) {
            for c in 0..k {
                sums[c].0 += srow[c];
                sums[c].1 += qrow[c] as f64;
            }
        }
        let n = self.cells() as f64;
        sums.into_iter().map(|(s, q)| (s / n, q / n)).collect()
    }

    fn check_map(&self) -> Result<()> {
        if self.cells() == 0 || self.classes == 0 {
            return Err(Error::Empty("confidence map entries (L*R and K must be positive)"));
        }
        Ok(())
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn d_cls(batch: &TcdBatch) -> Result<f64> {
    batch.check_map()?;
    let means = batch.class_means();
    Ok(means.iter().map(|(s, q)| (s - q).abs()).sum::<f64>() / batch.classes as f64)
}

/// Images without positives are skipped; 0 if no image has positives.
pub fn d_det(batch: &TcdBatch) -> f64 {
    let mut total = 0.0;
    let mut used = 0usize;
    for list in batch.positives.iter().filter(|l| !l.is_empty()) {
        let inner: f64 = list.iter().map(|p| (p.iou - p.shat).abs()).sum();
        total += inner / list.len() as f64;
        used += 1;
    }
    if used == 0 {
        0.0
    } else {
        total / used as f64
    }
}

/// Loss value, its two terms and gradients with respect to every input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcdValueGrad {
    pub d_cls: f64,
    pub d_det: f64,
    pub loss: f64,
    /// Same layout as [`TcdBatch::s`].
    pub grad_s: Vec<f64>,
    /// Per image, per positive.
    pub grad_shat: Vec<Vec<f64>>,
    pub grad_iou: Vec<Vec<f64>>,
}

pub fn tcd_loss(batch: &TcdBatch) -> Result<TcdValueGrad> {
    let cls = d_cls(batch)?;
    let det = d_det(batch);

    let means = batch.class_means();
    let cls_scale = 1.0 / (2.0 * batch.classes as f64 * batch.cells() as f64);
    let per_class: Vec<f64> = means.iter().map(|(s, q)| sign(s - q) * cls_scale).collect();
    let grad_s: Vec<f64> = (0..batch.s.len()).map(|i| per_class[i % batch.classes]).collect();

    let used = batch.positives.iter().filter(|l| !l.is_empty()).count();
    let mut grad_shat = Vec::with_capacity(batch.images);
    let mut grad_iou = Vec::with_capacity(batch.images);
    for list in &batch.positives {
        let scale = if list.is_empty() {
            0.0
        } else {
            1.0 / (2.0 * used as f64 * list.len() as f64)
        };
        let signs: Vec<f64> = list.iter().map(|p| sign(p.iou - p.shat) * scale).collect();
        grad_shat.push(signs.iter().map(|g| -g).collect());
        grad_iou.push(signs);
    }

    Ok(TcdValueGrad {
        d_cls: cls,
        d_det: det,
        loss: 0.5 * (cls + det),
        grad_s,
        grad_shat,
        grad_iou,
    })
}

/// Chains a loss gradient with respect to a positive's IoU into the coordinates of its
/// predicted box.
pub fn box_grad(grad_iou: f64, predicted: &BBox, target: &BBox) -> Result<[f64; 4]> {
    let g = iou_grad(predicted, target)?;
    Ok(g.map(|v| grad_iou * v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pos(iou: f64, shat: f64) -> Positive {
        Positive { iou, shat }
    }

    fn single(s: Vec<f64>, q: Vec<u8>, k: usize, positives: Vec<Positive>) -> TcdBatch {
        TcdBatch::new(1, 1, k, s, q, vec![positives]).unwrap()
    }

    #[test]
    fn d_cls_examples() {
        assert_eq!(d_cls(&single(vec![1.0, 0.0], vec![1, 0], 2, vec![])).unwrap(), 0.0);
        let v = d_cls(&single(vec![0.5, 0.5], vec![1, 0], 2, vec![])).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        let b = TcdBatch::new(2, 1, 1, vec![0.6, 0.2], vec![1, 0], vec![vec![], vec![]]).unwrap();
        assert!((d_cls(&b).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn d_det_examples() {
        assert_eq!(d_det(&single(vec![0.0], vec![0], 1, vec![pos(0.7, 0.7)])), 0.0);
        assert!((d_det(&single(vec![0.0], vec![0], 1, vec![pos(0.7, 0.9)])) - 0.2).abs() < 1e-12);
        let b = TcdBatch::new(
            2,
            1,
            1,
            vec![0.0, 0.0],
            vec![0, 0],
            vec![vec![pos(0.5, 0.9)], vec![pos(0.8, 0.8), pos(0.6, 0.4)]],
        )
        .unwrap();
        assert!((d_det(&b) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn images_without_positives_are_skipped() {
        let b = TcdBatch::new(2, 1, 1, vec![0.0, 0.0], vec![0, 0], vec![vec![], vec![pos(0.7, 0.9)]]).unwrap();
        assert!((d_det(&b) - 0.2).abs() < 1e-12);
        let g = tcd_loss(&b).unwrap();
        assert!(g.grad_shat[0].is_empty());
        assert!((g.grad_shat[1][0] - 0.5).abs() < 1e-12);

        let none = TcdBatch::new(1, 1, 1, vec![0.0], vec![0], vec![vec![]]).unwrap();
        let g = tcd_loss(&none).unwrap();
        assert_eq!(g.d_det, 0.0);
    }

    #[test]
    fn combined_example() {
        let b = single(vec![0.5, 0.5], vec![1, 0], 2, vec![pos(0.7, 0.9)]);
        let g = tcd_loss(&b).unwrap();
        assert!((g.loss - 0.35).abs() < 1e-12);
        assert_eq!(g.loss, 0.5 * (g.d_cls + g.d_det));
        // mean s below mean q for class 0, above for class 1
        assert_eq!(g.grad_s, vec![-0.25, 0.25]);
        assert_eq!(g.grad_shat, vec![vec![0.5]]);
        assert_eq!(g.grad_iou, vec![vec![-0.5]]);
    }

    #[test]
    fn calibrated_batch_has_zero_loss_and_gradient() {
        let b = TcdBatch::new(
            2,
            2,
            2,
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            vec![1, 0, 0, 0, 0, 1, 0, 0],
            vec![vec![pos(0.6, 0.6)], vec![pos(0.9, 0.9)]],
        )
        .unwrap();
        let g = tcd_loss(&b).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.grad_s.iter().all(|&v| v == 0.0));
        assert!(g.grad_shat.iter().flatten().all(|&v| v == 0.0));
        assert!(g.grad_iou.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_map_rejected() {
        let b = TcdBatch::new(0, 4, 2, vec![], vec![], vec![]).unwrap();
        assert!(matches!(d_cls(&b), Err(Error::Empty(_))));
        let b = TcdBatch::new(1, 1, 0, vec![], vec![], vec![vec![]]).unwrap();
        assert!(tcd_loss(&b).is_err());
    }

    #[test]
    fn validation() {
        assert!(TcdBatch::new(1, 1, 2, vec![0.5], vec![1, 0], vec![vec![]]).is_err());
        assert!(TcdBatch::new(1, 1, 2, vec![0.5, 0.5], vec![1, 1], vec![vec![]]).is_err());
        assert!(TcdBatch::new(1, 1, 2, vec![0.5, 1.5], vec![1, 0], vec![vec![]]).is_err());
        assert!(TcdBatch::new(1, 1, 2, vec![0.5, 0.5], vec![2, 0], vec![vec![]]).is_err());
        assert!(TcdBatch::new(1, 1, 2, vec![0.5, 0.5], vec![1, 0], vec![]).is_err());
        assert!(TcdBatch::new(1, 1, 1, vec![0.5], vec![1], vec![vec![pos(1.2, 0.5)]]).is_err());
    }

    #[test]
    fn box_chain_rule() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let b = BBox::new(1.0, 0.5, 3.0, 2.5).unwrap();
        let g = box_grad(-0.5, &a, &b).unwrap();
        let raw = iou_grad(&a, &b).unwrap();
        for i in 0..4 {
            assert_eq!(g[i], -0.5 * raw[i]);
        }
    }
}
