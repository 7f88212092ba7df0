use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use scvae_baselines::*;

/// Standard-normal inliers plus `outliers` rows pushed `radius` away along a random direction.
fn planted(
    seed: u64,
    inliers: usize,
    outliers: usize,
    dim: usize,
    radius: f64,
) -> (FlatDataset, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for i in 0..inliers + outliers {
        let mut x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if i >= inliers {
            let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            x.iter_mut()
                .zip(&dir)
                .for_each(|(v, d)| *v = 0.3 * *v + radius * d / norm);
        }
        values.extend(x);
        labels.push(u8::from(i >= inliers));
    }
    (FlatDataset::new(dim, values).unwrap(), labels)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Textbook LOF over a full distance matrix.
fn lof_oracle(data: &FlatDataset, k: usize) -> Vec<f64> {
    let n = data.rows();
    let dist = |i: usize, j: usize| -> f64 {
        data.row(i)
            .iter()
            .zip(data.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let d: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| dist(i, j)).collect())
        .collect();
    let kdist: Vec<f64> = (0..n)
        .map(|p| {
            let mut others: Vec<f64> = (0..n).filter(|&q| q != p).map(|q| d[p][q]).collect();
            others.sort_by(f64::total_cmp);
            others[k - 1]
        })
        .collect();
    let hood: Vec<Vec<usize>> = (0..n)
        .map(|p| (0..n).filter(|&q| q != p && d[p][q] <= kdist[p]).collect())
        .collect();
    let lrd: Vec<f64> = (0..n)
        .map(|p| {
            let reach: f64 = hood[p].iter().map(|&o| d[p][o].max(kdist[o])).sum();
            1.0 / (reach / hood[p].len() as f64 + 1e-10)
        })
        .collect();
    (0..n)
        .map(|p| hood[p].iter().map(|&o| lrd[o]).sum::<f64>() / hood[p].len() as f64 / lrd[p])
        .collect()
}

#[test]
fn lof_matches_quadratic_oracle_exactly() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(25..=100);
        let dim = rng.random_range(1..=4);
        // Coarse grid values force distance ties and duplicates.
        let values: Vec<f64> = (0..n * dim)
            .map(|_| rng.random_range(0..6) as f64 * 0.5)
            .collect();
        let data = FlatDataset::new(dim, values).unwrap();
        let k = rng.random_range(1..=20.min(n - 1));
        let lof = LocalOutlierFactor::fit(&data, &LofConfig { k }).unwrap();
        assert_eq!(
            lof.training_scores(),
            lof_oracle(&data, k),
            "seed {seed}, n {n}, k {k}"
        );
    }
}

#[test]
fn planted_outlier_outscores_median_inlier_for_every_detector() {
    let config = BaselineConfig {
        elliptic: EllipticEnvelopeConfig {
            n_restarts: 3,
            ..Default::default()
        },
        iforest: IsolationForestConfig {
            n_trees: 50,
            ..Default::default()
        },
        ..Default::default()
    };
    for seed in 0..100 {
        let (data, labels) = planted(seed, 95, 5, 4, 6.0);
        for kind in DetectorKind::ALL {
            let mut cfg = config.clone();
            cfg.iforest.seed = seed;
            cfg.elliptic.seed = seed;
            let scores = fit_score(kind, &data, &cfg).unwrap();
            let inlier_median = median(
                scores
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &l)| l == 0)
                    .map(|(s, _)| *s)
                    .collect(),
            );
            for (s, &l) in scores.iter().zip(&labels) {
                if l == 1 {
                    assert!(
                        *s > inlier_median,
                        "{kind} seed {seed}: {s} <= {inlier_median}"
                    );
                }
            }
        }
    }
}

#[test]
fn ocsvm_nu_property() {
    let (data, _) = planted(7, 500, 0, 3, 0.0);
    let nu = 0.05;
    let cfg = OneClassSvmConfig {
        nu,
        ..Default::default()
    };
    let m = OneClassSvm::fit(&data, &cfg).unwrap();
    assert!(m.kkt_violation() <= cfg.tolerance);
    assert!((m.alpha().iter().sum::<f64>() - 1.0).abs() < 1e-10);
    let positive = m
        .score_all(&data)
        .unwrap()
        .iter()
        .filter(|&&s| s > 0.0)
        .count();
    assert!(
        positive as f64 / 500.0 <= nu + 0.02,
        "{positive} of 500 outside"
    );
}

#[test]
fn robust_mean_on_clean_gaussian_near_sample_mean() {
    let (data, _) = planted(3, 500, 0, 3, 0.0);
    let ee = EllipticEnvelope::fit(&data, &EllipticEnvelopeConfig::default()).unwrap();
    for c in 0..3 {
        let mean = data.iter_rows().map(|r| r[c]).sum::<f64>() / 500.0;
        let se = 1.0 / 500f64.sqrt();
        assert!((ee.location()[c] - mean).abs() < 3.0 * se, "coordinate {c}");
    }
}

#[test]
fn robust_mean_resists_contamination() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, outliers, dim) = (400, 20, 3);
    let mut values = Vec::new();
    for i in 0..n {
        for _ in 0..dim {
            let v: f64 = rng.sample(StandardNormal);
            values.push(if i >= n - outliers { 10.0 + 0.1 * v } else { v });
        }
    }
    let data = FlatDataset::new(dim, values).unwrap();
    let mean = |rows: &mut dyn Iterator<Item = &[f64]>, count: f64| -> Vec<f64> {
        let mut m = vec![0.0; dim];
        for r in rows {
            m.iter_mut().zip(r).for_each(|(a, b)| *a += b / count);
        }
        m
    };
    let clean = mean(
        &mut data.iter_rows().take(n - outliers),
        (n - outliers) as f64,
    );
    let plain = mean(&mut data.iter_rows(), n as f64);
    let ee = EllipticEnvelope::fit(&data, &EllipticEnvelopeConfig::default()).unwrap();
    let shift = |m: &[f64]| {
        m.iter()
            .zip(&clean)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    assert!(
        shift(ee.location()) < 0.1 * shift(&plain),
        "{} vs {}",
        shift(ee.location()),
        shift(&plain)
    );
}

#[test]
fn isolation_forest_deterministic_and_bounded() {
    let (data, _) = planted(5, 190, 10, 6, 5.0);
    let cfg = IsolationForestConfig {
        seed: 9,
        ..Default::default()
    };
    let a = fit_score(
        DetectorKind::IsolationForest,
        &data,
        &BaselineConfig {
            iforest: cfg.clone(),
            ..Default::default()
        },
    )
    .unwrap();
    let b = fit_score(
        DetectorKind::IsolationForest,
        &data,
        &BaselineConfig {
            iforest: cfg,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|&s| s > 0.0 && s < 1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mcd_log_det_monotone(seed in 0u64..1000, n in 30usize..80, dim in 1usize..4) {
        let (data, _) = planted(seed, n, n / 10, dim, 4.0);
        let ee = EllipticEnvelope::fit(&data, &EllipticEnvelopeConfig { seed, ..Default::default() }).unwrap();
        for t in ee.trajectories() {
            for w in t.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
            }
        }
    }

    #[test]
    fn ocsvm_dual_feasible(seed in 0u64..1000, n in 10usize..120, nu in 0.05f64..0.9) {
        let (data, _) = planted(seed, n, 0, 2, 0.0);
        let m = OneClassSvm::fit(&data, &OneClassSvmConfig { nu, ..Default::default() }).unwrap();
        prop_assert!((m.alpha().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(m.alpha().iter().all(|&a| a >= 0.0 && a <= m.upper_bound() * (1.0 + 1e-9)));
        prop_assert!(m.kkt_violation() <= 1e-3);
    }

    #[test]
    fn iforest_scores_in_unit_interval(seed in 0u64..1000, n in 2usize..60) {
        let (data, _) = planted(seed, n, 0, 3, 0.0);
        let scores = fit_score(DetectorKind::IsolationForest, &data, &BaselineConfig::default()).unwrap();
        prop_assert!(scores.iter().all(|&s| s > 0.0 && s <= 1.0));
    }
}
