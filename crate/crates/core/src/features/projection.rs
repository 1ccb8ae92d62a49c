use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SparseBinaryVector;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionSparsity {
    /// s = 3.
    #[default]
    Achlioptas,
    /// s = sqrt(in_dim).
    VerySparse,
}

/// Sparse sign projection. Row `i` of the matrix is drawn from its own
/// `(seed, i)` stream, so the matrix never depends on which rows are used
/// first.
#[derive(Debug, Clone)]
pub struct RandomProjection {
    in_dim: usize,
    out_dim: usize,
    seed: u64,
    s: f64,
    c: f64,
    // Entries as signs in {-1, 0, 1}; materialized once, row-major.
    signs: Vec<i8>,
}

impl RandomProjection {
    pub fn new(in_dim: usize, out_dim: usize, seed: u64, sparsity: ProjectionSparsity) -> Result<Self> {
        if out_dim == 0 || out_dim >= in_dim {
            return Err(Error::Config(format!("projection needs 0 < out_dim < in_dim, got {out_dim} and {in_dim}")));
        }
        let s = match sparsity {
            ProjectionSparsity::Achlioptas => 3.0,
            ProjectionSparsity::VerySparse => (in_dim as f64).sqrt().max(1.0),
        };
        let half = 1.0 / (2.0 * s);
        let rows: Vec<Vec<i8>> = crate::par::map_range(in_dim, |i| {
            let mut r = rng::substream(seed, "projection-row", i as u64);
            (0..out_dim)
                .map(|_| {
                    let u: f64 = r.gen();
                    if u < half {
                        1
                    } else if u < 2.0 * half {
                        -1
                    } else {
                        0
                    }
                })
                .collect()
        });
        Ok(Self { in_dim, out_dim, seed, s, c: (s / out_dim as f64).sqrt(), signs: rows.concat() })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sparsity(&self) -> f64 {
        self.s
    }

    /// Matrix entry `M[i, j]`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.signs[i * self.out_dim + j] as f64 * self.c
    }

    pub fn project(&self, v: &SparseBinaryVector) -> Result<Vec<f64>> {
        if v.dim != self.in_dim {
            return Err(Error::Shape { expected: self.in_dim, got: v.dim });
        }
        let mut acc = vec![0i32; self.out_dim];
        for &i in &v.ones {
            let row = &self.signs[i as usize * self.out_dim..(i as usize + 1) * self.out_dim];
            for (a, &s) in acc.iter_mut().zip(row) {
                *a += s as i32;
            }
        }
        Ok(acc.into_iter().map(|a| a as f64 * self.c).collect())
    }
}
