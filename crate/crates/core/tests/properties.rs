use ndarray::Array2;
use proptest::prelude::*;

use signssl::data::{load_dataset, pad_or_truncate, save_dataset, Dataset, Sample, SkeletonSequence, Split};
use signssl::eval::{intra_class_inertia, pca_2d, top_k_accuracy};
use signssl::loss::sl_fpn_loss;
use signssl::tape::Mat;
use signssl::trainer::embedding_std;

fn arb_sequence(max_frames: usize) -> impl Strategy<Value = SkeletonSequence> {
    (1..=max_frames, 1usize..=5, 2usize..=3).prop_flat_map(|(n, l, d)| {
        prop::collection::vec(-100.0f32..100.0, n * l * d)
            .prop_map(move |data| SkeletonSequence::new(l, d, data).expect("valid sequence"))
    })
}

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    (1usize..=4, 2usize..=3, 1usize..=6, 1usize..=12).prop_flat_map(|(l, d, count, max_len)| {
        let sample = (1..=max_len, prop::option::of(0usize..5)).prop_flat_map(move |(n, label)| {
            prop::collection::vec(-10.0f32..10.0, n * l * d)
                .prop_map(move |data| (label, SkeletonSequence::new(l, d, data).expect("valid")))
        });
        prop::collection::vec(sample, count).prop_map(move |items| {
            let labeled = items.iter().all(|(lab, _)| lab.is_some());
            let samples = items
                .into_iter()
                .enumerate()
                .map(|(i, (label, sequence))| Sample {
                    id: format!("s{i:03}"),
                    label: if labeled { label } else { None },
                    sequence,
                })
                .collect();
            Dataset {
                samples,
                class_count: 5,
                split: if labeled { Split::Train } else { Split::Unlabeled },
                landmark_count: l,
                coord_dim: d,
                max_len,
            }
        })
    })
}

fn arb_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dataset_save_load_is_identity(ds in arb_dataset()) {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn pad_or_truncate_is_idempotent(seq in arb_sequence(20), target in 1usize..30) {
        let once = pad_or_truncate(&seq, target).unwrap();
        prop_assert_eq!(once.n_frames(), target);
        let kept = target.min(seq.n_frames());
        prop_assert_eq!(once.frame_bytes(0, kept), seq.frame_bytes(0, kept));
        prop_assert_eq!(pad_or_truncate(&once, target).unwrap(), once);
    }

    #[test]
    fn inertia_translation_and_scale(
        (x, labels) in (2usize..20, 1usize..5).prop_flat_map(|(m, d)| (arb_matrix(m, d), prop::collection::vec(0usize..3, m))),
        shift in -3.0f64..3.0,
        scale in 0.1f64..4.0,
    ) {
        let base = intra_class_inertia(&x, &labels).unwrap();
        let moved = intra_class_inertia(&(&x + shift), &labels).unwrap();
        let scaled = intra_class_inertia(&(&x * scale), &labels).unwrap();
        prop_assert!((moved - base).abs() <= 1e-9 * (1.0 + base));
        prop_assert!((scaled - scale * scale * base).abs() <= 1e-9 * (1.0 + scaled));
    }

    #[test]
    fn top_k_is_monotone_in_k(
        (scores, labels) in (1usize..15, 2usize..8).prop_flat_map(|(m, c)| (arb_matrix(m, c), prop::collection::vec(0..c, m))),
    ) {
        let c = scores.ncols();
        let accs: Vec<f64> = (1..=c).map(|k| top_k_accuracy(&scores, &labels, k).unwrap()).collect();
        prop_assert!(accs.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(accs[c - 1], 1.0);
    }

    #[test]
    fn embedding_std_vanishes_only_for_equal_rows(row in prop::collection::vec(-3.0f64..3.0, 1..8), b in 2usize..6) {
        let n = row.len();
        let same = Array2::from_shape_fn((b, n), |(_, j)| row[j]);
        prop_assert!(embedding_std(&same).unwrap() < 1e-12);
        let mut diff = same.clone();
        diff[[0, 0]] += 1.0;
        prop_assert!(embedding_std(&diff).unwrap() > 1e-3);
    }

    #[test]
    fn loss_is_symmetric_in_views_for_l1(
        (z, z1, z2, p) in (1usize..6, 1usize..6).prop_flat_map(|(b, n)| (arb_matrix(b, n), arb_matrix(b, n), arb_matrix(b, n), arb_matrix(b, n))),
    ) {
        let a = sl_fpn_loss(&z, &z1, &z2, &p).unwrap();
        let b = sl_fpn_loss(&z, &z2, &z1, &p).unwrap();
        prop_assert!((a.l1 - b.l1).abs() < 1e-12);
        prop_assert!(a.total >= 0.0);
    }

    #[test]
    fn pca_preserves_planar_distances(
        coords in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..12),
        angle in 0.0f64..6.28,
        d in 3usize..7,
    ) {
        // Planar points isometrically embedded in d dimensions.
        let m = coords.len();
        let (s, c) = angle.sin_cos();
        let x = Array2::from_shape_fn((m, d), |(i, j)| {
            let (u, v) = coords[i];
            match j {
                0 => c * u - s * v,
                1 => 0.5 * (s * u + c * v),
                2 => (3f64.sqrt() / 2.0) * (s * u + c * v),
                _ => 1.5,
            }
        });
        let y = pca_2d(&x).unwrap();
        for i in 0..m {
            for k in 0..m {
                let dx: f64 = (0..d).map(|j| (x[[i, j]] - x[[k, j]]).powi(2)).sum::<f64>().sqrt();
                let dy: f64 = (0..2).map(|j| (y[[i, j]] - y[[k, j]]).powi(2)).sum::<f64>().sqrt();
                prop_assert!((dx - dy).abs() < 1e-6, "{dx} vs {dy}");
            }
        }
    }
}
