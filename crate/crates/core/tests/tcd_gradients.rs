use detcal::tcd::{self, Positive, TcdBatch};
use proptest::prelude::*;

const H: f64 = 1e-5;
const KINK: f64 = 1e-3;

fn loss(b: &TcdBatch) -> f64 {
    tcd::tcd_loss(b).unwrap().loss
}

fn central<F: FnMut(&mut TcdBatch, f64)>(b: &TcdBatch, mut nudge: F) -> f64 {
    let mut plus = b.clone();
    nudge(&mut plus, H);
    let mut minus = b.clone();
    nudge(&mut minus, -H);
    (loss(&plus) - loss(&minus)) / (2.0 * H)
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn arb_batch() -> impl Strategy<Value = TcdBatch> {
    (1usize..4, 1usize..5, 1usize..4).prop_flat_map(|(l, r, k)| {
        let n = l * r * k;
        (
            prop::collection::vec(0.01..0.99f64, n),
            prop::collection::vec(prop::option::of(0..k), l * r),
            prop::collection::vec(prop::collection::vec((0.01..0.99f64, 0.01..0.99f64), 0..4), l),
        )
            .prop_map(move |(s, labels, pos)| {
                let mut q = vec![0u8; n];
                for (cell, lab) in labels.iter().enumerate() {
                    if let Some(c) = lab {
                        q[cell * k + c] = 1;
                    }
                }
                let positives = pos
                    .into_iter()
                    .map(|v| v.into_iter().map(|(iou, shat)| Positive { iou, shat }).collect())
                    .collect();
                TcdBatch::new(l, r, k, s, q, positives).unwrap()
            })
    })
}

fn class_gap(b: &TcdBatch, class: usize) -> f64 {
    let cells = b.images * b.locations;
    let (mut s, mut q) = (0.0, 0.0);
    for cell in 0..cells {
        s += b.s[cell * b.classes + class];
        q += b.q[cell * b.classes + class] as f64;
    }
    (s - q) / cells as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn grad_s_matches_finite_differences(b in arb_batch()) {
        let g = tcd::tcd_loss(&b).unwrap();
        for i in 0..b.s.len() {
            if class_gap(&b, i % b.classes).abs() <= KINK {
                continue;
            }
            let fd = central(&b, |x, h| x.s[i] += h);
            prop_assert!(rel_err(g.grad_s[i], fd) < 1e-4, "s[{}]: {} vs {}", i, g.grad_s[i], fd);
        }
    }

    #[test]
    fn grad_positives_match_finite_differences(b in arb_batch()) {
        let g = tcd::tcd_loss(&b).unwrap();
        for l in 0..b.images {
            for n in 0..b.positives[l].len() {
                let p = b.positives[l][n];
                if (p.iou - p.shat).abs() <= KINK {
                    continue;
                }
                let fd_shat = central(&b, |x, h| x.positives[l][n].shat += h);
                let fd_iou = central(&b, |x, h| x.positives[l][n].iou += h);
                prop_assert!(rel_err(g.grad_shat[l][n], fd_shat) < 1e-4);
                prop_assert!(rel_err(g.grad_iou[l][n], fd_iou) < 1e-4);
            }
        }
    }

    #[test]
    fn loss_is_bounded_and_consistent(b in arb_batch()) {
        let g = tcd::tcd_loss(&b).unwrap();
        prop_assert!(g.d_cls >= 0.0 && g.d_cls <= 1.0);
        prop_assert!(g.d_det >= 0.0 && g.d_det <= 1.0);
        prop_assert_eq!(g.loss, 0.5 * (g.d_cls + g.d_det));
        prop_assert_eq!(g.loss == 0.0, g.d_cls == 0.0 && g.d_det == 0.0);
    }

    #[test]
    fn duplicated_batch_keeps_loss(b in arb_batch()) {
        let mut s = b.s.clone();
        s.extend_from_slice(&b.s);
        let mut q = b.q.clone();
        q.extend_from_slice(&b.q);
        let mut positives = b.positives.clone();
        positives.extend(b.positives.iter().cloned());
        let twice = TcdBatch::new(2 * b.images, b.locations, b.classes, s, q, positives).unwrap();
        let (a, d) = (tcd::tcd_loss(&b).unwrap(), tcd::tcd_loss(&twice).unwrap());
        prop_assert!((a.d_cls - d.d_cls).abs() < 1e-12);
        prop_assert!((a.d_det - d.d_det).abs() < 1e-12);
        prop_assert!((a.loss - d.loss).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariance(b in arb_batch(), rot in 0usize..16) {
        // rotate locations (whole rows) and positives within each image
        let k = b.classes;
        let cells = b.images * b.locations;
        let shift = rot % cells;
        let mut s = Vec::with_capacity(b.s.len());
        let mut q = Vec::with_capacity(b.q.len());
        for cell in 0..cells {
            let src = (cell + shift) % cells;
            s.extend_from_slice(&b.s[src * k..(src + 1) * k]);
            q.extend_from_slice(&b.q[src * k..(src + 1) * k]);
        }
        let positives = b.positives.iter().map(|v| {
            let mut v = v.clone();
            if !v.is_empty() {
                let len = v.len();
                v.rotate_left(rot % len);
            }
            v
        }).collect();
        let p = TcdBatch::new(b.images, b.locations, k, s, q, positives).unwrap();
        prop_assert!((tcd::d_cls(&b).unwrap() - tcd::d_cls(&p).unwrap()).abs() < 1e-12);
        prop_assert!((tcd::d_det(&b) - tcd::d_det(&p)).abs() < 1e-12);
    }
}
