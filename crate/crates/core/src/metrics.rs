//! Average precision, top-ratio thresholding and majority-vote consensus.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("degenerate labels: {positives} positives and {negatives} negatives (both classes are required)")]
    DegenerateLabels { positives: usize, negatives: usize },
    #[error("length mismatch: {scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score at index {0} is not finite")]
    NonFinite(usize),
    #[error("label at index {index} is {value}, expected 0 or 1")]
    BadLabel { index: usize, value: u8 },
    #[error("ratio {0} must lie in (0, 1)")]
    InvalidRatio(f64),
    #[error("vote matrix is ragged: row {row} has {found} votes, expected {expected}")]
    RaggedVotes {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("majority {majority} must lie in 1..={models}")]
    InvalidMajority { majority: usize, models: usize },
    #[error("empty input")]
    Empty,
}

fn check_scores(scores: &[f64]) -> Result<(), MetricError> {
    match scores.iter().position(|s| !s.is_finite()) {
        Some(i) => Err(MetricError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Indices ordered by score descending, ties by index ascending.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Average precision `Σₙ (Rₙ − Rₙ₋₁)·Pₙ` over distinct score thresholds; tied
/// scores form one step.
pub fn prauc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    check_scores(scores)?;
    if let Some(index) = labels.iter().position(|&l| l > 1) {
        return Err(MetricError::BadLabel {
            index,
            value: labels[index],
        });
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::DegenerateLabels {
            positives,
            negatives,
        });
    }
    let order = rank_descending(scores);
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut block_tp = 0;
        while i < order.len() && scores[order[i]] == s {
            block_tp += labels[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        tp += block_tp;
        if block_tp > 0 {
            ap += block_tp as f64 * (tp as f64 / seen as f64);
        }
    }
    Ok(ap / positives as f64)
}

/// Number of windows `threshold_by_ratio` flags: `⌈ratio·n⌉`, with a small
/// guard so products like `0.05·100` that land a hair above an integer do not
/// round up.
pub fn flagged_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Flags the top `⌈ratio·N⌉` scores; ties at the cut go to lower indices first.
pub fn threshold_by_ratio(scores: &[f64], ratio: f64) -> Result<Vec<u8>, MetricError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(MetricError::InvalidRatio(ratio));
    }
    check_scores(scores)?;
    let k = flagged_count(scores.len(), ratio);
    let mut flags = vec![0u8; scores.len()];
    for &i in rank_descending(scores).iter().take(k) {
        flags[i] = 1;
    }
    Ok(flags)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusResult {
    pub consensus: Vec<u8>,
    /// Accuracy of each model's votes against the consensus.
    pub per_model_match: Vec<f64>,
    /// `N × M`, one row per window.
    pub votes: Vec<Vec<u8>>,
    pub majority: usize,
}

pub fn match_general(votes: &[Vec<u8>], majority: usize) -> Result<ConsensusResult, MetricError> {
    let first = votes.first().ok_or(MetricError::Empty)?;
    let m = first.len();
    if majority == 0 || majority > m {
        return Err(MetricError::InvalidMajority {
            majority,
            models: m,
        });
    }
    for (row, v) in votes.iter().enumerate() {
        if v.len() != m {
            return Err(MetricError::RaggedVotes {
                row,
                expected: m,
                found: v.len(),
            });
        }
        if let Some(&value) = v.iter().find(|&&x| x > 1) {
            return Err(MetricError::BadLabel { index: row, value });
        }
    }
    let consensus: Vec<u8> = votes
        .iter()
        .map(|v| u8::from(v.iter().map(|&x| x as usize).sum::<usize>() >= majority))
        .collect();
    let n = votes.len() as f64;
    let per_model_match = (0..m)
        .map(|j| {
            votes
                .iter()
                .zip(&consensus)
                .filter(|(v, &c)| v[j] == c)
                .count() as f64
                / n
        })
        .collect();
    Ok(ConsensusResult {
        consensus,
        per_model_match,
        votes: votes.to_vec(),
        majority,
    })
}

/// Column-per-model flags to the row-per-window vote matrix.
pub fn vote_matrix(flags: &[Vec<u8>]) -> Result<Vec<Vec<u8>>, MetricError> {
    let n = flags.first().ok_or(MetricError::Empty)?.len();
    for (j, f) in flags.iter().enumerate() {
        if f.len() != n {
            return Err(MetricError::RaggedVotes {
                row: j,
                expected: n,
                found: f.len(),
            });
        }
    }
    Ok((0..n)
        .map(|i| flags.iter().map(|f| f[i]).collect())
        .collect())
}

pub fn accuracy(a: &[u8], b: &[u8]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch {
            scores: a.len(),
            labels: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub dataset: String,
    pub tw: usize,
    pub model: String,
    pub value: f64,
    pub config_hash: String,
}

impl MetricRecord {
    /// `key=value` pairs on one line.
    pub fn to_kv(&self) -> String {
        format!(
            "metric={} dataset={} tw={} model={} value={:.6} config_hash={}",
            self.metric, self.dataset, self.tw, self.model, self.value, self.config_hash
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prauc_examples() {
        assert_eq!(prauc(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap(), 1.0);
        let ap = prauc(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert!(matches!(
            prauc(&[1.0, 2.0], &[1, 1]),
            Err(MetricError::DegenerateLabels { .. })
        ));
        assert!(matches!(
            prauc(&[1.0], &[1, 0]),
            Err(MetricError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn tied_block_counts_once() {
        // one block of all four: precision 2/4 at full recall
        assert_eq!(prauc(&[1.0; 4], &[1, 0, 1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn threshold_examples() {
        let scores: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
        let flags = threshold_by_ratio(&scores, 0.05).unwrap();
        assert_eq!(flags.iter().filter(|&&f| f == 1).count(), 5);
        for (i, &f) in flags.iter().enumerate() {
            assert_eq!(f == 1, scores[i] >= 95.0);
        }
        assert_eq!(
            threshold_by_ratio(&[0.0; 10], 0.25).unwrap(),
            [1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
        );
        assert_eq!(threshold_by_ratio(&[0.0; 3], 0.99).unwrap(), [1, 1, 1]);
        assert!(threshold_by_ratio(&[0.0], 1.0).is_err());
    }

    #[test]
    fn consensus_examples() {
        let r = match_general(&[vec![1, 1, 1, 0, 0, 0], vec![1, 1, 0, 0, 0, 0]], 3).unwrap();
        assert_eq!(r.consensus, [1, 0]);
        assert_eq!(r.per_model_match[0], 0.5);
        assert_eq!(r.per_model_match[2], 1.0);
        assert!(matches!(
            match_general(&[vec![1, 0], vec![1]], 1),
            Err(MetricError::RaggedVotes { row: 1, .. })
        ));
        assert!(match_general(&[vec![1, 0]], 3).is_err());
    }

    #[test]
    fn kv_line() {
        let r = MetricRecord {
            metric: "prauc".into(),
            dataset: "d".into(),
            tw: 8,
            model: "SCVAE".into(),
            value: 0.5,
            config_hash: "abc".into(),
        };
        assert_eq!(
            r.to_kv(),
            "metric=prauc dataset=d tw=8 model=SCVAE value=0.500000 config_hash=abc"
        );
    }
}
