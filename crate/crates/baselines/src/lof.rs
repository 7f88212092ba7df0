//! Exact Local Outlier Factor with tie-inclusive k-neighborhoods.

use serde::{Deserialize, Serialize};

use crate::{check_dim, squared_distance, DetectorError, FlatDataset};

/// Added to the mean reachability distance so duplicate clusters keep a finite density.
pub const LRD_EPSILON: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LofConfig {
    pub k: usize,
}

impl Default for LofConfig {
    fn default() -> Self {
        LofConfig { k: 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutlierFactor {
    data: FlatDataset,
    k: usize,
    k_distance: Vec<f64>,
    neighbors: Vec<Vec<(usize, f64)>>,
    lrd: Vec<f64>,
}

/// Every point within the k-th smallest distance, ties included.
fn neighborhood(distances: &mut Vec<(usize, f64)>, k: usize) -> (f64, Vec<(usize, f64)>) {
    let (_, kth, _) = distances.select_nth_unstable_by(k - 1, |a, b| a.1.total_cmp(&b.1));
    let kd = kth.1;
    let mut hood: Vec<(usize, f64)> = distances
        .iter()
        .copied()
        .filter(|&(_, d)| d <= kd)
        .collect();
    hood.sort_by_key(|&(i, _)| i);
    (kd, hood)
}

impl LocalOutlierFactor {
    pub fn fit(data: &FlatDataset, config: &LofConfig) -> Result<Self, DetectorError> {
        let (n, k) = (data.rows(), config.k);
        if k == 0 || k >= n {
            return Err(DetectorError::InvalidParameter {
                name: "k",
                message: format!("k = {k} must satisfy 1 ≤ k < N = {n}"),
            });
        }
        let mut k_distance = Vec::with_capacity(n);
        let mut neighbors = Vec::with_capacity(n);
        let mut buf = Vec::with_capacity(n);
        for i in 0..n {
            buf.clear();
            let xi = data.row(i);
            buf.extend(
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (j, squared_distance(xi, data.row(j)).sqrt())),
            );
            let (kd, hood) = neighborhood(&mut buf, k);
            k_distance.push(kd);
            neighbors.push(hood);
        }
        let lrd = neighbors
            .iter()
            .map(|hood| {
                let reach: f64 = hood.iter().map(|&(o, d)| d.max(k_distance[o])).sum();
                1.0 / (reach / hood.len() as f64 + LRD_EPSILON)
            })
            .collect();
        Ok(LocalOutlierFactor {
            data: data.clone(),
            k,
            k_distance,
            neighbors,
            lrd,
        })
    }

    fn factor(&self, hood: &[(usize, f64)]) -> f64 {
        let reach: f64 = hood.iter().map(|&(o, d)| d.max(self.k_distance[o])).sum();
        let lrd = 1.0 / (reach / hood.len() as f64 + LRD_EPSILON);
        let mean_neighbor_lrd =
            hood.iter().map(|&(o, _)| self.lrd[o]).sum::<f64>() / hood.len() as f64;
        mean_neighbor_lrd / lrd
    }

    /// LOF of every fitted row, each excluded from its own neighborhood.
    pub fn training_scores(&self) -> Vec<f64> {
        (0..self.data.rows())
            .map(|i| {
                let lrd_i = self.lrd[i];
                let hood = &self.neighbors[i];
                hood.iter().map(|&(o, _)| self.lrd[o]).sum::<f64>() / hood.len() as f64 / lrd_i
            })
            .collect()
    }

    /// LOF of a new point against all fitted rows.
    pub fn score(&self, x: &[f64]) -> Result<f64, DetectorError> {
        check_dim(self.data.cols(), x)?;
        let mut d: Vec<(usize, f64)> = self
            .data
            .iter_rows()
            .enumerate()
            .map(|(j, r)| (j, squared_distance(x, r).sqrt()))
            .collect();
        let (_, hood) = neighborhood(&mut d, self.k);
        Ok(self.factor(&hood))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn local_reachability_density(&self) -> &[f64] {
        &self.lrd
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_interior_near_one() {
        let rows: Vec<Vec<f64>> = (0..7)
            .flat_map(|i| (0..7).map(move |j| vec![i as f64, j as f64]))
            .collect();
        let data = FlatDataset::from_rows(&rows).unwrap();
        let lof = LocalOutlierFactor::fit(&data, &LofConfig { k: 4 }).unwrap();
        let s = lof.training_scores();
        let centre = 3 * 7 + 3;
        assert!((0.9..=1.1).contains(&s[centre]), "{}", s[centre]);
    }

    #[test]
    fn far_point_is_outlying() {
        let mut rows: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i % 6) as f64 * 0.1, (i / 6) as f64 * 0.1])
            .collect();
        rows.push(vec![5.0, 5.0]);
        let data = FlatDataset::from_rows(&rows).unwrap();
        let lof = LocalOutlierFactor::fit(&data, &LofConfig { k: 5 }).unwrap();
        let s = lof.training_scores();
        assert!(s[30] > 3.0);
        assert!(lof.score(&[5.0, 5.0]).unwrap() > 3.0);
    }

    #[test]
    fn duplicates_stay_finite() {
        let data = FlatDataset::from_rows(&[vec![0.0], vec![0.0], vec![0.0], vec![1.0]]).unwrap();
        let s = LocalOutlierFactor::fit(&data, &LofConfig { k: 2 })
            .unwrap()
            .training_scores();
        assert!(s.iter().all(|v| v.is_finite()));
        assert!(s[3] > s[0]);
    }

    #[test]
    fn k_bounds() {
        let data = FlatDataset::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(LocalOutlierFactor::fit(&data, &LofConfig { k: 2 }).is_err());
        assert!(LocalOutlierFactor::fit(&data, &LofConfig { k: 0 }).is_err());
    }
}
