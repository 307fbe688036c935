//! Property tests over randomly generated sequences and poses.

use proptest::prelude::*;

use keypose::cluster::{assign_label, categorize_duration, prune_track, ClusterModel};
use keypose::extract::{extract_keyposes, oracle_extract, reconstruct};
use keypose::io::{load_sequence, save_sequence, SeqFormat};
use keypose::metrics::power_spectrum;
use keypose::token::{
    duration_onehot, label_distribution_from_label, label_distribution_from_value,
};
use keypose::{MotionSequence, Pose};

fn arb_pose(joints: usize) -> impl Strategy<Value = Pose> {
    prop::collection::vec(
        (-1000.0..1000.0f64, -1000.0..1000.0f64, -1000.0..1000.0f64),
        joints,
    )
    .prop_map(|js| Pose::new(js.into_iter().map(|(x, y, z)| [x, y, z]).collect()))
}

fn arb_sequence(max_frames: usize, max_joints: usize) -> impl Strategy<Value = MotionSequence> {
    (1..=max_joints, 2..=max_frames).prop_flat_map(|(j, t)| {
        prop::collection::vec(arb_pose(j), t)
            .prop_map(|frames| MotionSequence::new(frames, 25.0, None))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn save_load_is_identity(seq in arb_sequence(12, 3)) {
        let dir = tempfile::tempdir().unwrap();
        for (fmt, ext) in [(SeqFormat::Csv, "csv"), (SeqFormat::Jsonl, "jsonl")] {
            let path = dir.path().join(format!("seq.{ext}"));
            save_sequence(&seq, &path, fmt).unwrap();
            let back = load_sequence(&path, fmt).unwrap();
            prop_assert_eq!(&back, &seq);
        }
    }

    #[test]
    fn extraction_matches_oracle(seq in arb_sequence(18, 3), threshold in 0.5..200.0f64) {
        let fast = extract_keyposes(&seq, threshold).unwrap();
        let slow = oracle_extract(&seq, threshold).unwrap();
        prop_assert_eq!(fast.frame_indices(), slow.frame_indices());
    }

    #[test]
    fn extraction_respects_threshold(seq in arb_sequence(40, 2), threshold in 1.0..300.0f64) {
        let track = extract_keyposes(&seq, threshold).unwrap();
        let recon = reconstruct(&track);
        prop_assert_eq!(recon.len(), seq.len());
        for pair in track.keyposes.windows(2) {
            let (lo, hi) = (pair[0].frame_index, pair[1].frame_index);
            let mean: f64 = (lo..=hi)
                .map(|t| seq.frame(t).distance_mm(recon.frame(t)))
                .sum::<f64>() / (hi - lo + 1) as f64;
            prop_assert!(mean <= threshold);
        }
        // keypose frames reproduce exactly
        for kp in &track.keyposes {
            prop_assert_eq!(recon.frame(kp.frame_index), &kp.value);
        }
    }

    #[test]
    fn label_distributions_are_distributions(
        pose in arb_pose(2),
        centers in prop::collection::vec(arb_pose(2), 1..6),
        temperature in 0.01..2.0f64,
    ) {
        let model = ClusterModel { centers };
        let dist = label_distribution_from_value(&pose, &model, temperature).unwrap();
        let sum: f64 = dist.probs.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(dist.probs.iter().all(|&p| p >= 0.0 && p.is_finite()));

        // label argmax equals the assignment rule's pick when unique
        let label = assign_label(&model, &pose);
        if model.k() > 1 {
            let from_label = label_distribution_from_label(label, &model, temperature).unwrap();
            let sum: f64 = from_label.probs.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn duration_categorization_total_and_onehot(d in 1usize..2000) {
        let c = categorize_duration(d).unwrap();
        let onehot = duration_onehot(d).unwrap();
        let sum: f64 = onehot.probs.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert_eq!(onehot.probs[c.index()], 1.0);
    }

    #[test]
    fn pruning_contracts_and_keeps_endpoints(
        labels in prop::collection::vec(0usize..3, 2..20),
        gaps in prop::collection::vec(1usize..20, 19),
    ) {
        let model = ClusterModel {
            centers: (0..3).map(|i| Pose::new(vec![[i as f64 * 100.0, 0.0, 0.0]])).collect(),
        };
        let mut frame = 1;
        let keyposes: Vec<_> = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| {
                let kp = keypose::cluster::LabeledKeypose {
                    keypose: keypose::extract::Keypose {
                        frame_index: frame,
                        value: model.centers[label].clone(),
                    },
                    label,
                    duration_frames: 0,
                };
                frame += gaps[i % gaps.len()];
                kp
            })
            .collect();
        let track = keypose::cluster::LabeledTrack { keyposes, action: None };
        let pruned = prune_track(&track);

        prop_assert!(pruned.len() <= track.len());
        prop_assert!(pruned.len() >= 2.min(track.len()));
        prop_assert_eq!(
            pruned.keyposes.first().unwrap().keypose.frame_index,
            track.keyposes.first().unwrap().keypose.frame_index
        );
        prop_assert_eq!(
            pruned.keyposes.last().unwrap().keypose.frame_index,
            track.keyposes.last().unwrap().keypose.frame_index
        );
        for w in pruned.keyposes.windows(3) {
            prop_assert!(!(w[0].label == w[1].label && w[1].label == w[2].label));
        }
        let span = pruned.keyposes.last().unwrap().keypose.frame_index
            - pruned.keyposes.first().unwrap().keypose.frame_index;
        let total: usize = pruned.keyposes.iter().map(|k| k.duration_frames).sum();
        prop_assert_eq!(total, span);
    }

    #[test]
    fn spectra_are_distributions(seq in arb_sequence(24, 2)) {
        for dim in power_spectrum(&seq).unwrap() {
            let sum: f64 = dim.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(dim.iter().all(|&p| p >= -1e-15));
        }
    }
}
