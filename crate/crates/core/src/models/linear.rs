use serde::{Deserialize, Serialize};

use super::{Dataset, LsvmConfig};
use crate::features::Row;

/// `score(x) = w·x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearModel {
    pub fn score(&self, x: Row<'_>) -> f64 {
        x.dot(&self.w) + self.b
    }
}

/// Full-batch subgradient descent on `λ/2 |w|² + Σ hinge` with step
/// `1/(λ t)`, so `λ = 1` matches the usual `C = 1` linear SVM. Rows are
/// visited in dataset order each epoch. The bias is not regularized.
pub(super) fn train(cfg: &LsvmConfig, ds: &Dataset) -> LinearModel {
    let d = ds.dim();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut gw = vec![0.0; d];
    for t in 1..=cfg.epochs {
        let eta = 1.0 / (cfg.lambda * t as f64);
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for i in 0..ds.len() {
            let row = ds.row(i);
            let y = if ds.y[i] == 1 { 1.0 } else { -1.0 };
            if y * (row.dot(&w) + b) < 1.0 {
                match row {
                    Row::Sparse(ones) => ones.iter().for_each(|&j| gw[j as usize] += y),
                    Row::Dense(v) => gw.iter_mut().zip(v).for_each(|(g, x)| *g += y * x),
                }
                gb += y;
            }
        }
        let shrink = 1.0 - eta * cfg.lambda;
        for (wj, gj) in w.iter_mut().zip(&gw) {
            *wj = shrink * *wj + eta * gj;
        }
        b += eta * gb;
    }
    LinearModel { w, b }
}

#[cfg(test)]
mod tests {
    use super::super::tests::separable;
    use super::*;

    #[test]
    fn separable_clusters_reach_full_accuracy() {
        let ds = separable(20);
        let m = train(&LsvmConfig::default(), &ds);
        let correct = (0..20).filter(|&i| (m.score(ds.row(i)) > 0.0) == (ds.y[i] == 1)).count();
        assert_eq!(correct, 20);
    }

    #[test]
    fn duplicating_rows_keeps_sign_pattern() {
        let ds = separable(20);
        let idx: Vec<usize> = (0..20).chain(0..20).collect();
        let a = train(&LsvmConfig::default(), &ds);
        let b = train(&LsvmConfig::default(), &ds.select(&idx));
        for i in 0..20 {
            assert_eq!(a.score(ds.row(i)) > 0.0, b.score(ds.row(i)) > 0.0);
        }
    }
}
