use std::collections::HashMap;

use crate::corpus::{dexl, AppArchive, DexLiteProgram, Statement};
use crate::error::Result;

pub const SELF_DEFINED: &str = "self-defined";
pub const OBFUSCATED: &str = "obfuscated";

/// Row-stochastic transition matrix over abstracted call states, flattened
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovFeatures {
    pub states: Vec<String>,
    pub matrix: Vec<f64>,
}

impl MarkovFeatures {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.matrix[from * self.states.len() + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        let n = self.states.len();
        &self.matrix[from * n..(from + 1) * n]
    }
}

/// Longest package prefix on a segment boundary; internal calls map to
/// [`SELF_DEFINED`], misses to [`OBFUSCATED`].
pub fn abstract_callee<'a>(callee: &str, packages: &'a [String]) -> &'a str {
    if dexl::internal_target(callee).is_some() {
        return SELF_DEFINED;
    }
    packages
        .iter()
        .filter(|p| callee.len() > p.len() && callee.starts_with(p.as_str()) && callee.as_bytes()[p.len()] == b'.')
        .max_by_key(|p| p.len())
        .map(String::as_str)
        .unwrap_or(OBFUSCATED)
}

pub fn extract_mamadroid(app: &AppArchive, packages: &[String]) -> Result<MarkovFeatures> {
    Ok(extract_mamadroid_from(&app.program()?, packages))
}

pub fn extract_mamadroid_from(program: &DexLiteProgram, packages: &[String]) -> MarkovFeatures {
    let mut states: Vec<String> = packages.to_vec();
    states.push(SELF_DEFINED.to_owned());
    states.push(OBFUSCATED.to_owned());
    let n = states.len();
    let position: HashMap<&str, usize> = states.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut counts = vec![0u64; n * n];
    for method in program.methods() {
        let seq: Vec<usize> = method
            .body
            .iter()
            .filter_map(|s| match s {
                Statement::Call { callee, .. } => Some(position[abstract_callee(callee, packages)]),
                Statement::StringConst(_) => None,
            })
            .collect();
        for pair in seq.windows(2) {
            counts[pair[0] * n + pair[1]] += 1;
        }
    }
    let mut matrix = vec![0.0; n * n];
    for from in 0..n {
        let row = &counts[from * n..(from + 1) * n];
        let total: u64 = row.iter().sum();
        if total > 0 {
            for (to, &c) in row.iter().enumerate() {
                matrix[from * n + to] = c as f64 / total as f64;
            }
        }
    }
    MarkovFeatures { states, matrix }
}
