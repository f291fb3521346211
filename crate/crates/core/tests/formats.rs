use detcal::io;
use detcal::tcd::{self, Positive, TcdBatch};
use proptest::prelude::*;
use tempfile::TempDir;

/// Values representable as `f32`, so the binary encoding is lossless.
fn unit_f32() -> impl Strategy<Value = f64> {
    (0u32..=1 << 20).prop_map(|k| (k as f32 / (1 << 20) as f32) as f64)
}

fn arb_batch() -> impl Strategy<Value = TcdBatch> {
    (1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(l, r, k)| {
        let n = l * r * k;
        (
            prop::collection::vec(unit_f32(), n),
            prop::collection::vec(prop::option::of(0..k), l * r),
            prop::collection::vec(prop::collection::vec((unit_f32(), unit_f32()), 0..3), l),
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

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tcd_batch_round_trips(b in arb_batch()) {
        let dir = TempDir::new().unwrap();
        let json = dir.path().join("b.json");
        let bin = dir.path().join("b.tcb");
        io::write_tcd_batch(&json, &b, false).unwrap();
        io::write_tcd_batch(&bin, &b, true).unwrap();
        let from_json = io::load_tcd_batch(&json).unwrap();
        let from_bin = io::load_tcd_batch(&bin).unwrap();
        prop_assert_eq!(&from_json, &b);
        prop_assert_eq!(&from_bin, &b);
        let (a, c) = (tcd::tcd_loss(&from_json).unwrap(), tcd::tcd_loss(&from_bin).unwrap());
        prop_assert!((a.loss - c.loss).abs() <= 1e-7);
    }
}

#[test]
fn binary_and_json_agree_on_arbitrary_values() {
    // values that do not fit f32 exactly still agree to 1e-7 after narrowing
    let b = TcdBatch::new(
        2,
        2,
        2,
        vec![0.123456789, 0.987654321, 0.333333333, 0.1, 0.7, 0.05, 0.9, 0.4],
        vec![1, 0, 0, 0, 0, 1, 0, 0],
        vec![
            vec![Positive {
                iou: 0.61803398875,
                shat: 0.314159265,
            }],
            vec![
                Positive {
                    iou: 0.271828,
                    shat: 0.9,
                },
                Positive {
                    iou: 0.5,
                    shat: 0.5000001,
                },
            ],
        ],
    )
    .unwrap();
    let from_bin = io::decode_tcd_binary(&io::encode_tcd_binary(&b).unwrap(), "mem").unwrap();
    let (a, c) = (tcd::tcd_loss(&b).unwrap(), tcd::tcd_loss(&from_bin).unwrap());
    assert!((a.loss - c.loss).abs() <= 1e-7, "{} vs {}", a.loss, c.loss);
}

#[test]
fn binary_layout_is_little_endian() {
    let b = TcdBatch::new(
        1,
        1,
        2,
        vec![0.5, 0.25],
        vec![0, 1],
        vec![vec![Positive { iou: 1.0, shat: 0.5 }]],
    )
    .unwrap();
    let bytes = io::encode_tcd_binary(&b).unwrap();
    let mut expect = b"TCB1".to_vec();
    for d in [1u32, 1, 2] {
        expect.extend_from_slice(&d.to_le_bytes());
    }
    expect.extend_from_slice(&0.5f32.to_le_bytes());
    expect.extend_from_slice(&0.25f32.to_le_bytes());
    expect.extend_from_slice(&[0, 1]);
    expect.extend_from_slice(&1u32.to_le_bytes());
    expect.extend_from_slice(&1.0f32.to_le_bytes());
    expect.extend_from_slice(&0.5f32.to_le_bytes());
    assert_eq!(bytes, expect);
}
