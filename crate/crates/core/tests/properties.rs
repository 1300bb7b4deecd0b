use std::collections::BTreeSet;

use proptest::prelude::*;

use vtnet_core::evalharness::{roc_auc, stratified_group_kfold};
use vtnet_core::gazedata::{parse_recording, write_recording};
use vtnet_core::preprocess::{cyclic_split, interleave, truncate_head};
use vtnet_core::{Label, RawSample, Recording, Sequence, Task};

fn pairwise_auc(scores: &[f64], positives: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &p) in positives.iter().enumerate() {
        for (j, &n) in positives.iter().enumerate() {
            if p && !n {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn scored_instances() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..=200).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..20).prop_map(|v| v as f64 / 19.0), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(s, mut p)| {
                p[0] = true;
                p[1] = false;
                (s, p)
            })
    })
}

proptest! {
    #[test]
    fn auc_matches_pairwise_count((scores, positives) in scored_instances()) {
        let auc = roc_auc(&scores, &positives).unwrap();
        prop_assert!((auc - pairwise_auc(&scores, &positives)).abs() <= 1e-12);
    }

    #[test]
    fn auc_invariant_under_monotone_transform((scores, positives) in scored_instances()) {
        let base = roc_auc(&scores, &positives).unwrap();
        let cubed: Vec<f64> = scores.iter().map(|s| (3.0 * s - 1.0).powi(3) + 7.0).collect();
        let logistic: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-4.0 * s).exp())).collect();
        prop_assert_eq!(roc_auc(&cubed, &positives).unwrap(), base);
        prop_assert_eq!(roc_auc(&logistic, &positives).unwrap(), base);
    }

    #[test]
    fn split_then_interleave_restores_rows(t in 1usize..2000, k in 1usize..9) {
        prop_assume!(k <= t);
        let rows: Vec<usize> = (0..t).collect();
        let parts = cyclic_split(&rows, k).unwrap();
        prop_assert_eq!(parts.len(), k);
        let longest = parts.iter().map(Vec::len).max().unwrap();
        let shortest = parts.iter().map(Vec::len).min().unwrap();
        prop_assert!(longest - shortest <= 1);
        for (i, part) in parts.iter().enumerate() {
            prop_assert!(part.iter().all(|r| r % k == i));
        }
        prop_assert_eq!(interleave(&parts).unwrap(), rows);
    }

    #[test]
    fn truncation_keeps_a_prefix(t in 1usize..300, cutoff in 1usize..400) {
        let seq = Sequence::new((0..t).map(|i| [i as f64; 6]).collect());
        let cut = truncate_head(&seq, cutoff);
        prop_assert_eq!(cut.len(), t.min(cutoff));
        prop_assert_eq!(cut.rows(), &seq.rows()[..t.min(cutoff)]);
    }

    #[test]
    fn fold_plans_partition_users(patients in 1usize..40, controls in 1usize..40, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(k <= patients + controls);
        let users: Vec<(String, Label)> = (0..patients)
            .map(|i| (format!("P{i}"), Label::Patient))
            .chain((0..controls).map(|i| (format!("C{i}"), Label::Control)))
            .collect();
        let plan = stratified_group_kfold(&users, k, seed).unwrap();
        let mut seen = BTreeSet::new();
        for fold in &plan.folds {
            for u in fold {
                prop_assert!(seen.insert(u.clone()));
            }
        }
        prop_assert_eq!(seen.len(), users.len());
        for c in &plan.counts {
            prop_assert!((c.patients as f64 - patients as f64 / k as f64).abs() <= 1.0);
            prop_assert!((c.controls as f64 - controls as f64 / k as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn csv_round_trip(values in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 1.0f64..900.0, 0.5f64..8.0), 1..60)) {
        let samples: Vec<RawSample> = values
            .iter()
            .enumerate()
            .map(|(i, &(gx, gy, hd, p))| RawSample { t: i as f64 * 8.25, gx, gy, hd_l: hd, hd_r: hd + 1.0, p_l: p, p_r: p * 1.01 })
            .collect();
        let rec = Recording::new("U7", Task::PictureDescription, Label::Control, samples).unwrap();
        let mut buf = Vec::new();
        write_recording(&rec, &mut buf).unwrap();
        let parsed = parse_recording(buf.as_slice(), "U7", Task::PictureDescription, Label::Control).unwrap();
        prop_assert_eq!(parsed.dropped, 0);
        prop_assert_eq!(parsed.recording, rec);
    }
}
