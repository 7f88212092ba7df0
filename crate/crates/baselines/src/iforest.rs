//! Isolation Forest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{check_dim, DetectorError, FlatDataset};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IsolationForestConfig {
    pub n_trees: usize,
    /// Upper bound on the per-tree subsample; the effective size is `min(subsample, N)`.
    pub subsample: usize,
    pub seed: u64,
}

impl Default for IsolationForestConfig {
    fn default() -> Self {
        IsolationForestConfig {
            n_trees: 100,
            subsample: 256,
            seed: 0,
        }
    }
}

/// Average path length of an unsuccessful search in a binary search tree of `n` nodes.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = (n - 1) as f64;
            2.0 * (m.ln() + EULER_GAMMA) - 2.0 * m / n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf {
        size: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn grow(
        data: &FlatDataset,
        rows: &mut [usize],
        depth: usize,
        limit: usize,
        rng: &mut impl Rng,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let id = nodes.len();
        nodes.push(Node::Leaf { size: rows.len() });
        if depth >= limit || rows.len() <= 1 {
            return id;
        }
        let candidates: Vec<(usize, f64, f64)> = (0..data.cols())
            .filter_map(|f| {
                let (lo, hi) =
                    rows.iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                            let v = data.row(r)[f];
                            (lo.min(v), hi.max(v))
                        });
                (hi > lo).then_some((f, lo, hi))
            })
            .collect();
        if candidates.is_empty() {
            return id;
        }
        let (feature, lo, hi) = candidates[rng.random_range(0..candidates.len())];
        let threshold = rng.random_range(lo..hi);
        let mut split = 0;
        for i in 0..rows.len() {
            if data.row(rows[i])[feature] < threshold {
                rows.swap(i, split);
                split += 1;
            }
        }
        let (l, r) = rows.split_at_mut(split);
        let left = Tree::grow(data, l, depth + 1, limit, rng, nodes);
        let right = Tree::grow(data, r, depth + 1, limit, rng, nodes);
        nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    fn path_length(&self, x: &[f64]) -> f64 {
        let mut id = 0;
        let mut depth = 0.0;
        loop {
            match self.nodes[id] {
                Node::Leaf { size } => return depth + average_path_length(size),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if x[feature] < threshold { left } else { right };
                    depth += 1.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationForest {
    trees: Vec<Tree>,
    subsample: usize,
    cols: usize,
}

impl IsolationForest {
    /// Tree `t` draws its subsample and splits from stream `t` of the seed.
    pub fn fit(data: &FlatDataset, config: &IsolationForestConfig) -> Result<Self, DetectorError> {
        if config.n_trees == 0 {
            return Err(DetectorError::InvalidParameter {
                name: "n_trees",
                message: "must be positive".into(),
            });
        }
        if config.subsample < 2 {
            return Err(DetectorError::InvalidParameter {
                name: "subsample",
                message: format!("{} is below 2", config.subsample),
            });
        }
        let psi = config.subsample.min(data.rows());
        let limit = (psi as f64).log2().ceil() as usize;
        let trees = (0..config.n_trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(t as u64);
                let mut rows = rand::seq::index::sample(&mut rng, data.rows(), psi).into_vec();
                let mut nodes = Vec::new();
                Tree::grow(data, &mut rows, 0, limit, &mut rng, &mut nodes);
                Tree { nodes }
            })
            .collect();
        Ok(IsolationForest {
            trees,
            subsample: psi,
            cols: data.cols(),
        })
    }

    pub fn mean_path_length(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }

    /// `2^(−E[h(x)] / c(ψ))`, in `(0, 1]`.
    pub fn score(&self, x: &[f64]) -> Result<f64, DetectorError> {
        check_dim(self.cols, x)?;
        Ok(self.score_unchecked(x))
    }

    pub(crate) fn score_unchecked(&self, x: &[f64]) -> f64 {
        let c = average_path_length(self.subsample);
        2f64.powf(-self.mean_path_length(x) / c)
    }

    pub fn subsample(&self) -> usize {
        self.subsample
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster_with_outlier() -> FlatDataset {
        let mut rows: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let a = ((i * 37) % 101) as f64 / 101.0 - 0.5;
                let b = ((i * 61) % 103) as f64 / 103.0 - 0.5;
                vec![0.6 * a, 0.6 * b]
            })
            .collect();
        rows.push(vec![8.0, -8.0]);
        FlatDataset::from_rows(&rows).unwrap()
    }

    #[test]
    fn c_of_n() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        // 2(H(255)) − 2·255/256 with H(i) ≈ ln i + γ
        let c256 = 2.0 * (255f64.ln() + EULER_GAMMA) - 2.0 * 255.0 / 256.0;
        assert!((average_path_length(256) - c256).abs() < 1e-12);
    }

    #[test]
    fn outlier_above_half_interior_below() {
        let data = cluster_with_outlier();
        let f = IsolationForest::fit(&data, &IsolationForestConfig::default()).unwrap();
        assert!(f.score(&[8.0, -8.0]).unwrap() > 0.5);
        assert!(f.score(&[0.0, 0.0]).unwrap() < 0.5);
    }

    #[test]
    fn two_identical_points_score_equally() {
        let data = FlatDataset::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let f = IsolationForest::fit(&data, &IsolationForestConfig::default()).unwrap();
        assert_eq!(f.subsample(), 2);
        assert_eq!(f.score(data.row(0)).unwrap(), f.score(data.row(1)).unwrap());
    }

    #[test]
    fn seeded_forest_is_deterministic() {
        let data = cluster_with_outlier();
        let cfg = IsolationForestConfig {
            seed: 4,
            ..Default::default()
        };
        assert_eq!(
            IsolationForest::fit(&data, &cfg).unwrap(),
            IsolationForest::fit(&data, &cfg).unwrap()
        );
    }

    #[test]
    fn rejects_wrong_width() {
        let f = IsolationForest::fit(&cluster_with_outlier(), &IsolationForestConfig::default())
            .unwrap();
        assert!(matches!(
            f.score(&[1.0]),
            Err(DetectorError::Dimension { .. })
        ));
    }
}
