use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::DrebinFeatureSet;
use crate::error::{Error, Result};

/// Binary vector stored as its sorted set of one-columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseBinaryVector {
    pub dim: usize,
    pub ones: Vec<u32>,
}

impl SparseBinaryVector {
    pub fn new(dim: usize, mut ones: Vec<u32>) -> Result<Self> {
        ones.sort_unstable();
        ones.dedup();
        if let Some(&last) = ones.last() {
            if last as usize >= dim {
                return Err(Error::Shape { expected: dim, got: last as usize + 1 });
            }
        }
        Ok(Self { dim, ones })
    }
}

/// Feature string to column id, frozen after construction. Columns follow
/// lexicographic feature order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDictionary {
    index: BTreeMap<String, u32>,
}

impl FeatureDictionary {
    pub fn build<'a>(training: impl IntoIterator<Item = &'a DrebinFeatureSet>) -> Result<Self> {
        let mut names: Vec<&str> = Vec::new();
        let mut any = false;
        for fs in training {
            any = true;
            names.extend(fs.features.iter().map(String::as_str));
        }
        if !any {
            return Err(Error::Config("cannot build a feature dictionary from an empty training corpus".into()));
        }
        names.sort_unstable();
        names.dedup();
        let index = names.into_iter().enumerate().map(|(i, n)| (n.to_owned(), i as u32)).collect();
        Ok(Self { index })
    }

    pub fn from_names(names: impl IntoIterator<Item = String>) -> Self {
        let mut names: Vec<String> = names.into_iter().collect();
        names.sort();
        names.dedup();
        Self { index: names.into_iter().enumerate().map(|(i, n)| (n, i as u32)).collect() }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn column(&self, feature: &str) -> Option<u32> {
        self.index.get(feature).copied()
    }

    /// Feature names in column order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    /// Unseen features are dropped.
    pub fn vectorize(&self, fs: &DrebinFeatureSet) -> SparseBinaryVector {
        // BTreeSet iteration is sorted and so are the column ids.
        let ones = fs.features.iter().filter_map(|f| self.column(f)).collect();
        SparseBinaryVector { dim: self.len(), ones }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> DrebinFeatureSet {
        DrebinFeatureSet { features: items.iter().map(|s| s.to_string()).collect() }
    }

    #[test]
    fn vectorize_known_and_unknown() {
        let dict = FeatureDictionary::build([&set(&["c", "a"]), &set(&["b"])]).unwrap();
        assert_eq!(dict.column("a"), Some(0));
        assert_eq!(dict.column("c"), Some(2));
        let v = dict.vectorize(&set(&["a", "b"]));
        assert_eq!(v, SparseBinaryVector { dim: 3, ones: vec![0, 1] });
        let v2 = dict.vectorize(&set(&["a", "b", "zzz"]));
        assert_eq!(v, v2);
    }

    #[test]
    fn empty_training_is_an_error() {
        assert!(matches!(FeatureDictionary::build(std::iter::empty()), Err(Error::Config(_))));
    }

    #[test]
    fn sparse_vector_bounds() {
        assert!(SparseBinaryVector::new(3, vec![3]).is_err());
        assert_eq!(SparseBinaryVector::new(3, vec![2, 0, 2]).unwrap().ones, vec![0, 2]);
    }
}
