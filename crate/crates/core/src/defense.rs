//! Deep-KNN training-set sanitizer: drop rows whose label disagrees with
//! the plurality of their nearest neighbours.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::models::{knn_all, nn_penultimate, train, Dataset, ModelConfig, ModelKind, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DefenseSpace {
    /// Input features for lsvm, gbt and rf; penultimate activations for nn.
    #[default]
    Auto,
    InputFeatures,
    NnPenultimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseConfig {
    pub k: usize,
    pub space: DefenseSpace,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self { k: 11, space: DefenseSpace::Auto }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    pub kept: Vec<usize>,
    pub removed: Vec<usize>,
    /// Per row, neighbour counts `[benign, malicious]`.
    pub tallies: Vec<[usize; 2]>,
}

impl FilterResult {
    /// `row  id  label  benign_votes  malicious_votes  kept`, one line per row.
    pub fn to_text(&self, ids: &[String], y: &[u8]) -> String {
        let mut out = String::from("row\tid\tlabel\tbenign_votes\tmalicious_votes\tkept\n");
        let mut kept = vec![false; self.tallies.len()];
        self.kept.iter().for_each(|&i| kept[i] = true);
        for (i, t) in self.tallies.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{}\t{}\t{}\t{}\t{}", ids[i], y[i], t[0], t[1], kept[i] as u8);
        }
        out
    }
}

pub fn deep_knn_filter(x: &FeatureMatrix, y: &[u8], k: usize) -> Result<FilterResult> {
    if x.n_rows() != y.len() {
        return Err(Error::Shape { expected: x.n_rows(), got: y.len() });
    }
    if !y.contains(&0) || !y.contains(&1) {
        return Err(Error::Defense("filter needs both classes present".into()));
    }
    let neighbours = knn_all(x, k)?;
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    let mut tallies = Vec::with_capacity(y.len());
    for (i, nb) in neighbours.iter().enumerate() {
        let mal = nb.iter().filter(|&&j| y[j] == 1).count();
        let tally = [nb.len() - mal, mal];
        let disagree = match y[i] {
            1 => tally[0] > tally[1],
            _ => tally[1] > tally[0],
        };
        if disagree {
            removed.push(i);
        } else {
            kept.push(i);
        }
        tallies.push(tally);
    }
    Ok(FilterResult { kept, removed, tallies })
}

fn resolve(space: DefenseSpace, kind: ModelKind) -> DefenseSpace {
    match (space, kind) {
        (DefenseSpace::Auto, ModelKind::Nn) => DefenseSpace::NnPenultimate,
        (DefenseSpace::Auto, _) => DefenseSpace::InputFeatures,
        (s, _) => s,
    }
}

/// Filters `ds` and trains `model` on the rows that survive.
pub fn defend_and_retrain(ds: &Dataset, defense: &DefenseConfig, model: &ModelConfig) -> Result<(TrainedModel, FilterResult)> {
    let filter = match resolve(defense.space, model.kind) {
        DefenseSpace::NnPenultimate => {
            let nn_cfg = ModelConfig { kind: ModelKind::Nn, ..model.clone() };
            let probe = train(&nn_cfg, ds)?;
            deep_knn_filter(&nn_penultimate(&probe, &ds.x)?, &ds.y, defense.k)?
        }
        _ => deep_knn_filter(&ds.x, &ds.y, defense.k)?,
    };
    let kept = ds.select(&filter.kept);
    let (b, m) = kept.class_counts();
    if b == 0 || m == 0 {
        return Err(Error::Defense(format!("filter left {b} benign and {m} malicious rows")));
    }
    log::info!("deep-knn k={} removed {} of {} rows", defense.k, filter.removed.len(), ds.len());
    Ok((train(model, &kept)?, filter))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::predict;
    use proptest::prelude::*;

    fn clusters() -> (FeatureMatrix, Vec<u8>) {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            let t = i as f64 * 0.1;
            rows.push(vec![t, 0.0]);
            y.push(0);
            rows.push(vec![100.0 + t, 0.0]);
            y.push(1);
        }
        (FeatureMatrix::Dense { dim: 2, rows }, y)
    }

    #[test]
    fn pure_clusters_are_kept() {
        let (x, y) = clusters();
        let r = deep_knn_filter(&x, &y, 3).unwrap();
        assert!(r.removed.is_empty());
        assert_eq!(r.kept.len(), 40);
    }

    #[test]
    fn planted_flip_is_removed() {
        let (x, mut y) = clusters();
        let FeatureMatrix::Dense { mut rows, dim } = x else { unreachable!() };
        rows.push(vec![100.55, 0.0]);
        y.push(0);
        let r = deep_knn_filter(&FeatureMatrix::Dense { dim, rows }, &y, 3).unwrap();
        assert_eq!(r.removed, vec![40]);
    }

    #[test]
    fn adjacent_poisons_survive() {
        let (x, mut y) = clusters();
        let FeatureMatrix::Dense { mut rows, dim } = x else { unreachable!() };
        for _ in 0..20 {
            rows.push(vec![0.55, 0.0]);
            y.push(1);
        }
        let r = deep_knn_filter(&FeatureMatrix::Dense { dim, rows }, &y, 11).unwrap();
        assert!(r.removed.iter().all(|&i| i < 40));
        assert_eq!(r.kept.iter().filter(|&&i| i >= 40).count(), 20);
    }

    #[test]
    fn errors() {
        let (x, y) = clusters();
        assert!(matches!(deep_knn_filter(&x, &y, 40), Err(Error::Config(_))));
        assert!(matches!(deep_knn_filter(&x, &[0; 40], 3), Err(Error::Defense(_))));
    }

    #[test]
    fn clean_data_defends_like_undefended() {
        let (x, y) = clusters();
        let ds = Dataset::new(x, y, (0..40).map(|i| i.to_string()).collect()).unwrap();
        let cfg = ModelConfig::new(ModelKind::Lsvm, 1);
        let plain = predict(&train(&cfg, &ds).unwrap(), &ds.x).unwrap();
        let (m, _) = defend_and_retrain(&ds, &DefenseConfig { k: 3, ..Default::default() }, &cfg).unwrap();
        let defended = predict(&m, &ds.x).unwrap();
        for (a, b) in plain.iter().zip(&defended) {
            assert_eq!(*a > 0.0, *b > 0.0);
        }
    }

    proptest! {
        #[test]
        fn label_swap_equivariance(
            pts in proptest::collection::vec((0u8..6, 0u8..6, any::<bool>()), 8..40),
            k in prop_oneof![Just(1usize), Just(3), Just(5)],
        ) {
            let rows: Vec<Vec<f64>> = pts.iter().map(|(a, b, _)| vec![*a as f64, *b as f64]).collect();
            let y: Vec<u8> = pts.iter().map(|p| p.2 as u8).collect();
            prop_assume!(y.contains(&0) && y.contains(&1));
            let x = FeatureMatrix::Dense { dim: 2, rows };
            let a = deep_knn_filter(&x, &y, k).unwrap();
            let swapped: Vec<u8> = y.iter().map(|v| 1 - v).collect();
            let b = deep_knn_filter(&x, &swapped, k).unwrap();
            prop_assert_eq!(&a.removed, &b.removed);
            for (i, t) in a.tallies.iter().enumerate() {
                if (y[i] == 1 && t[0] == 0) || (y[i] == 0 && t[1] == 0) {
                    prop_assert!(a.kept.contains(&i));
                }
            }
        }
    }
}
