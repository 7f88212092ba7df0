use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scvae_core::metrics::{
    accuracy, flagged_count, match_general, prauc, threshold_by_ratio, vote_matrix,
};

/// Step-integral average precision swept over every distinct score threshold.
fn ap_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let positives = labels.iter().filter(|&&l| l == 1).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    for t in thresholds {
        let flagged: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = flagged.iter().filter(|&&i| labels[i] == 1).count() as f64;
        let recall = tp / positives;
        ap += (recall - prev_recall) * tp / flagged.len() as f64;
        prev_recall = recall;
    }
    ap
}

/// Mean precision at the rank of each positive; valid for distinct scores.
fn ap_distinct(scores: &[f64], labels: &[u8]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut tp = 0.0;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1.0;
            sum += tp / (rank + 1) as f64;
        }
    }
    sum / tp
}

#[test]
fn prauc_equals_exhaustive_oracle_for_every_label_pattern() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut cases = 0;
    for n in 2..=12usize {
        let score_sets: Vec<Vec<f64>> = vec![
            (0..n).map(|_| rng.random::<f64>()).collect(),
            (0..n).map(|_| rng.random_range(0..3) as f64).collect(),
            (0..n)
                .map(|_| rng.random_range(0..n) as f64 * 0.5)
                .collect(),
            vec![1.0; n],
        ];
        for pattern in 1..(1u32 << n) - 1 {
            let labels: Vec<u8> = (0..n).map(|i| ((pattern >> i) & 1) as u8).collect();
            for scores in &score_sets {
                let got = prauc(scores, &labels).unwrap();
                let want = ap_oracle(scores, &labels);
                assert!(
                    (got - want).abs() < 1e-12,
                    "n={n} labels={labels:?} scores={scores:?}: {got} vs {want}"
                );
                cases += 1;
            }
            let got = prauc(&score_sets[0], &labels).unwrap();
            assert!((got - ap_distinct(&score_sets[0], &labels)).abs() < 1e-12);
        }
    }
    assert!(cases > 30_000);
}

#[test]
fn prauc_perfect_and_inverted_rankings() {
    let labels = [0, 0, 1, 0, 1, 1, 0, 0];
    let perfect: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    assert_eq!(prauc(&perfect, &labels).unwrap(), 1.0);
    let constant = vec![0.3; labels.len()];
    assert!((prauc(&constant, &labels).unwrap() - 3.0 / 8.0).abs() < 1e-15);
}

fn threshold_oracle(scores: &[f64], ratio: f64) -> Vec<u8> {
    let n = scores.len();
    let mut k = 0;
    while (k as f64) < ratio * n as f64 - 1e-9 {
        k += 1;
    }
    (0..n)
        .map(|i| {
            let ahead = (0..n)
                .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
                .count();
            u8::from(ahead < k)
        })
        .collect()
}

#[test]
fn threshold_by_ratio_equals_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let n = rng.random_range(1..=60);
        let ties = rng.random_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if ties {
                    rng.random_range(0..4) as f64
                } else {
                    rng.random_range(-5.0..5.0)
                }
            })
            .collect();
        let ratio = match rng.random_range(0..3) {
            0 => 0.05,
            1 => rng.random_range(1..n.max(2)) as f64 / n.max(2) as f64,
            _ => rng.random_range(0.001..0.999),
        };
        let flags = threshold_by_ratio(&scores, ratio).unwrap();
        assert_eq!(
            flags,
            threshold_oracle(&scores, ratio),
            "scores={scores:?} ratio={ratio}"
        );
        assert_eq!(
            flags.iter().filter(|&&f| f == 1).count(),
            flagged_count(n, ratio)
        );
    }
}

#[test]
fn match_general_equals_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let (n, m) = (rng.random_range(1..=40), rng.random_range(1..=8));
        let majority = rng.random_range(1..=m);
        let per_model: Vec<Vec<u8>> = (0..m)
            .map(|_| (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect())
            .collect();
        let votes = vote_matrix(&per_model).unwrap();
        let result = match_general(&votes, majority).unwrap();
        let consensus: Vec<u8> = (0..n)
            .map(|i| u8::from((0..m).filter(|&j| per_model[j][i] == 1).count() >= majority))
            .collect();
        assert_eq!(result.consensus, consensus);
        for j in 0..m {
            let agree = (0..n).filter(|&i| per_model[j][i] == consensus[i]).count();
            assert_eq!(result.per_model_match[j], agree as f64 / n as f64);
            assert_eq!(
                result.per_model_match[j],
                accuracy(&per_model[j], &consensus).unwrap()
            );
        }
    }
}

#[test]
fn five_percent_of_one_hundred_is_five() {
    assert_eq!(flagged_count(100, 0.05), 5);
    assert_eq!(flagged_count(101, 0.05), 6);
    assert_eq!(flagged_count(20, 0.05), 1);
}

proptest! {
    #[test]
    fn prauc_invariant_under_monotone_transforms(
        raw in prop::collection::vec((-1000i32..1000, any::<bool>()), 2..80)
    ) {
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 8.0).collect();
        let labels: Vec<u8> = raw.iter().map(|(_, l)| *l as u8).collect();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let base = prauc(&scores, &labels).unwrap();
        let affine: Vec<f64> = scores.iter().map(|s| 4.0 * s - 3.0).collect();
        let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
        let ranks: Vec<f64> = scores.iter().map(|s| scores.iter().filter(|t| *t < s).count() as f64).collect();
        prop_assert_eq!(prauc(&affine, &labels).unwrap(), base);
        prop_assert_eq!(prauc(&cubed, &labels).unwrap(), base);
        prop_assert_eq!(prauc(&ranks, &labels).unwrap(), base);
        prop_assert!(base > 0.0 && base <= 1.0);
    }

    #[test]
    fn prauc_matches_oracle_with_heavy_ties(
        raw in prop::collection::vec((0u8..5, any::<bool>()), 2..60)
    ) {
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64).collect();
        let labels: Vec<u8> = raw.iter().map(|(_, l)| *l as u8).collect();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let ap = prauc(&scores, &labels).unwrap();
        prop_assert!((ap - ap_oracle(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn consensus_with_majority_one_is_union(
        flags in prop::collection::vec(prop::collection::vec(0u8..2, 12), 1..7)
    ) {
        let votes = vote_matrix(&flags).unwrap();
        let r = match_general(&votes, 1).unwrap();
        for i in 0..12 {
            prop_assert_eq!(r.consensus[i], flags.iter().map(|f| f[i]).max().unwrap());
        }
    }
}
