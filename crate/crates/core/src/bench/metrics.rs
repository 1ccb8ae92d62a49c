use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Rows scoring at or above this value are flagged. `+inf` for the
    /// origin.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Threshold sweep over the unique scores, highest first.
pub fn roc_curve(benign: &[f64], malicious: &[f64]) -> Result<Roc> {
    if benign.is_empty() || malicious.is_empty() {
        return Err(Error::Metric("ROC needs scores for both classes".into()));
    }
    if benign.iter().chain(malicious).any(|s| !s.is_finite()) {
        return Err(Error::Metric("non-finite score".into()));
    }
    let mut all: Vec<(f64, bool)> = benign.iter().map(|&s| (s, false)).chain(malicious.iter().map(|&s| (s, true))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (nb, nm) = (benign.len() as f64, malicious.len() as f64);
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut k = 0;
    while k < all.len() {
        let t = all[k].0;
        while k < all.len() && all[k].0 == t {
            if all[k].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint { fpr: fp as f64 / nb, tpr: tp as f64 / nm, threshold: t });
    }
    let auc = points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum();
    Ok(Roc { points, auc })
}

/// Last sweep point whose FPR stays within `alpha`: the lowest threshold
/// meeting the budget, which also carries the highest TPR.
pub fn operating_point(roc: &Roc, alpha: f64) -> RocPoint {
    *roc.points.iter().rev().find(|p| p.fpr <= alpha).unwrap_or(&roc.points[0])
}

pub fn tpr_at_fpr(roc: &Roc, alpha: f64) -> f64 {
    roc.points.iter().filter(|p| p.fpr <= alpha).map(|p| p.tpr).fold(0.0, f64::max)
}

/// First sweep point reaching `beta`: the highest threshold that does.
pub fn frozen_point(roc: &Roc, beta: f64) -> RocPoint {
    *roc.points.iter().find(|p| p.tpr >= beta).unwrap_or(roc.points.last().unwrap())
}

pub fn fpr_at_tpr(roc: &Roc, beta: f64) -> f64 {
    roc.points.iter().filter(|p| p.tpr >= beta).map(|p| p.fpr).fold(1.0, f64::min)
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Shape { expected: x.len(), got: y.len() });
    }
    if x.len() < 3 {
        return Err(Error::DegenerateInput(format!("correlation needs at least 3 points, got {}", x.len())));
    }
    Ok(())
}

/// Product-moment correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("correlation of a constant series".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// `r` with a two-sided permutation p-value `(hits + 1) / (permutations + 1)`.
pub fn pearson(x: &[f64], y: &[f64], permutations: usize, seed: u64) -> Result<(f64, f64)> {
    let r = pearson_r(x, y)?;
    let mut r_gen = rng::stream(seed, "pearson-permutation");
    let mut shuffled = y.to_vec();
    let mut hits = 0usize;
    for _ in 0..permutations {
        shuffled.shuffle(&mut r_gen);
        if pearson_r(x, &shuffled)?.abs() >= r.abs() - 1e-12 {
            hits += 1;
        }
    }
    Ok((r, (hits + 1) as f64 / (permutations + 1) as f64))
}

/// Average ranks, 1-based, ties sharing their mean rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson_r(&ranks(x), &ranks(y))
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_and_constant() {
        let r = roc_curve(&[0.1, 0.2], &[0.8, 0.9]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(tpr_at_fpr(&r, 0.0), 1.0);
        let c = roc_curve(&[0.5; 4], &[0.5; 3]).unwrap();
        assert_eq!(c.auc, 0.5);
        assert_eq!(c.points.len(), 2);
        assert_eq!(c.points.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
    }

    #[test]
    fn step_rule_below_resolution() {
        // Highest benign outranks every malicious score.
        let r = roc_curve(&[0.99, 0.1, 0.2], &[0.5, 0.6]).unwrap();
        assert_eq!(tpr_at_fpr(&r, 0.1), 0.0);
        assert_eq!(operating_point(&r, 0.1).threshold, f64::INFINITY);
    }

    #[test]
    fn nan_is_rejected() {
        assert!(matches!(roc_curve(&[f64::NAN], &[1.0]), Err(Error::Metric(_))));
    }

    #[test]
    fn pearson_basics() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(pearson_r(&x, &x.map(|v| 2.0 * v)).unwrap(), 1.0);
        assert_eq!(pearson_r(&x, &x.map(|v| 7.0 - v)).unwrap(), -1.0);
        assert!(matches!(pearson_r(&x, &[1.0; 4]), Err(Error::DegenerateInput(_))));
        let (r, p) = pearson(&x, &x.map(|v| 2.0 * v), 2000, 1).unwrap();
        assert_eq!(r, 1.0);
        // 2 of 24 orderings reach |r| = 1.
        assert!((p - 2.0 / 24.0).abs() < 0.03, "{p}");
    }

    #[test]
    fn spearman_with_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 8.0, 3.0, 1.0]).unwrap(), -1.0);
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
    }
}
