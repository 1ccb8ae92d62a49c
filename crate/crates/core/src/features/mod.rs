//! Static feature extraction. Both extractors read only
//! `AndroidManifest.xml` and `classes.dexl`; every other entry, including
//! everything under `res/`, is invisible to them.

mod dictionary;
mod drebin;
mod mamadroid;
mod matrix;
mod projection;

pub use dictionary::{FeatureDictionary, SparseBinaryVector};
pub use drebin::{extract_drebin, extract_drebin_from, DrebinFeatureSet};
pub use mamadroid::{abstract_callee, extract_mamadroid, extract_mamadroid_from, MarkovFeatures, OBFUSCATED, SELF_DEFINED};
pub use matrix::{FeatureMatrix, FeatureSetKind, MatrixFile, Row};
pub use projection::{ProjectionSparsity, RandomProjection};
