use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SparseBinaryVector;
use crate::error::{Error, Result};

const FORMAT_TAG: &str = "spoofbench-features/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSetKind {
    Drebin,
    Mamadroid,
}

impl FeatureSetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSetKind::Drebin => "drebin",
            FeatureSetKind::Mamadroid => "mamadroid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "drebin" => Some(FeatureSetKind::Drebin),
            "mamadroid" => Some(FeatureSetKind::Mamadroid),
            _ => None,
        }
    }
}

/// Borrowed view of one matrix row.
#[derive(Debug, Clone, Copy)]
pub enum Row<'a> {
    Sparse(&'a [u32]),
    Dense(&'a [f64]),
}

impl Row<'_> {
    pub fn get(&self, j: usize) -> f64 {
        match self {
            Row::Sparse(ones) => {
                if ones.binary_search(&(j as u32)).is_ok() {
                    1.0
                } else {
                    0.0
                }
            }
            Row::Dense(v) => v[j],
        }
    }

    pub fn dot(&self, w: &[f64]) -> f64 {
        match self {
            Row::Sparse(ones) => ones.iter().map(|&j| w[j as usize]).sum(),
            Row::Dense(v) => v.iter().zip(w).map(|(a, b)| a * b).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMatrix {
    Sparse { dim: usize, rows: Vec<SparseBinaryVector> },
    Dense { dim: usize, rows: Vec<Vec<f64>> },
}

impl FeatureMatrix {
    pub fn dim(&self) -> usize {
        match self {
            FeatureMatrix::Sparse { dim, .. } | FeatureMatrix::Dense { dim, .. } => *dim,
        }
    }

    pub fn n_rows(&self) -> usize {
        match self {
            FeatureMatrix::Sparse { rows, .. } => rows.len(),
            FeatureMatrix::Dense { rows, .. } => rows.len(),
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, FeatureMatrix::Sparse { .. })
    }

    /// Rows picked by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        match self {
            FeatureMatrix::Sparse { dim, rows } => {
                FeatureMatrix::Sparse { dim: *dim, rows: idx.iter().map(|&i| rows[i].clone()).collect() }
            }
            FeatureMatrix::Dense { dim, rows } => {
                FeatureMatrix::Dense { dim: *dim, rows: idx.iter().map(|&i| rows[i].clone()).collect() }
            }
        }
    }

    pub fn row(&self, i: usize) -> Row<'_> {
        match self {
            FeatureMatrix::Sparse { rows, .. } => Row::Sparse(&rows[i].ones),
            FeatureMatrix::Dense { rows, .. } => Row::Dense(&rows[i]),
        }
    }

    /// Row `i` as a dense vector.
    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        match self {
            FeatureMatrix::Sparse { dim, rows } => {
                let mut out = vec![0.0; *dim];
                for &c in &rows[i].ones {
                    out[c as usize] = 1.0;
                }
                out
            }
            FeatureMatrix::Dense { rows, .. } => rows[i].clone(),
        }
    }

    /// Squared Euclidean distance between rows `a` and `b`.
    pub fn sq_dist(&self, a: usize, b: usize) -> f64 {
        match self {
            FeatureMatrix::Sparse { rows, .. } => sym_diff(&rows[a].ones, &rows[b].ones) as f64,
            FeatureMatrix::Dense { rows, .. } => rows[a].iter().zip(&rows[b]).map(|(x, y)| (x - y) * (x - y)).sum(),
        }
    }

    /// Column count check for every row.
    pub fn validate(&self) -> Result<()> {
        match self {
            FeatureMatrix::Sparse { dim, rows } => {
                for r in rows {
                    if r.dim != *dim {
                        return Err(Error::Shape { expected: *dim, got: r.dim });
                    }
                    if let Some(&m) = r.ones.last() {
                        if m as usize >= *dim {
                            return Err(Error::Shape { expected: *dim, got: m as usize + 1 });
                        }
                    }
                }
            }
            FeatureMatrix::Dense { dim, rows } => {
                for r in rows {
                    if r.len() != *dim {
                        return Err(Error::Shape { expected: *dim, got: r.len() });
                    }
                }
            }
        }
        Ok(())
    }
}

fn sym_diff(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut common) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    a.len() + b.len() - 2 * common
}

/// On-disk feature matrix: one header line, then `id<TAB>label<TAB>values`
/// per row. Sparse rows list column ids, dense rows list floats; both are
/// space separated.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub kind: FeatureSetKind,
    pub ids: Vec<String>,
    pub labels: Vec<u8>,
    pub matrix: FeatureMatrix,
}

impl MatrixFile {
    pub fn to_text(&self) -> String {
        let enc = if self.matrix.is_sparse() { "sparse" } else { "dense" };
        let mut out = format!(
            "{FORMAT_TAG}\t{}\t{enc}\t{}\t{}\n",
            self.kind.as_str(),
            self.matrix.dim(),
            self.matrix.n_rows()
        );
        for (i, id) in self.ids.iter().enumerate() {
            let _ = write!(out, "{id}\t{}\t", self.labels[i]);
            match &self.matrix {
                FeatureMatrix::Sparse { rows, .. } => {
                    let cols: Vec<String> = rows[i].ones.iter().map(u32::to_string).collect();
                    out.push_str(&cols.join(" "));
                }
                FeatureMatrix::Dense { rows, .. } => {
                    let vals: Vec<String> = rows[i].iter().map(f64::to_string).collect();
                    out.push_str(&vals.join(" "));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, reason: String| Error::Format { path: path.to_owned(), reason: format!("line {line}: {reason}") };
        let mut lines = text.split('\n');
        let header: Vec<&str> = lines.next().unwrap_or("").split('\t').collect();
        if header.len() != 5 || header[0] != FORMAT_TAG {
            return Err(bad(1, "missing or unknown header".into()));
        }
        let kind = FeatureSetKind::parse(header[1]).ok_or_else(|| bad(1, format!("unknown feature set `{}`", header[1])))?;
        let sparse = match header[2] {
            "sparse" => true,
            "dense" => false,
            other => return Err(bad(1, format!("unknown encoding `{other}`"))),
        };
        let dim: usize = header[3].parse().map_err(|_| bad(1, "bad dim".into()))?;
        let n: usize = header[4].parse().map_err(|_| bad(1, "bad row count".into()))?;

        let (mut ids, mut labels) = (Vec::with_capacity(n), Vec::with_capacity(n));
        let (mut srows, mut drows) = (Vec::new(), Vec::new());
        for (k, line) in lines.enumerate() {
            let lineno = k + 2;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (Some(id), Some(label), Some(vals)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad(lineno, "expected three tab-separated fields".into()));
            };
            let label: u8 = match label {
                "0" => 0,
                "1" => 1,
                other => return Err(bad(lineno, format!("label `{other}` is not 0 or 1"))),
            };
            ids.push(id.to_owned());
            labels.push(label);
            let toks = vals.split(' ').filter(|t| !t.is_empty());
            if sparse {
                let ones: Vec<u32> = toks.map(str::parse).collect::<std::result::Result<_, _>>().map_err(|e| bad(lineno, format!("{e}")))?;
                if ones.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(bad(lineno, "column ids must be strictly increasing".into()));
                }
                srows.push(SparseBinaryVector { dim, ones });
            } else {
                let vals: Vec<f64> = toks.map(str::parse).collect::<std::result::Result<_, _>>().map_err(|e| bad(lineno, format!("{e}")))?;
                drows.push(vals);
            }
        }
        if ids.len() != n {
            return Err(bad(1, format!("header declares {n} rows, found {}", ids.len())));
        }
        let matrix = if sparse { FeatureMatrix::Sparse { dim, rows: srows } } else { FeatureMatrix::Dense { dim, rows: drows } };
        matrix.validate()?;
        Ok(Self { kind, ids, labels, matrix })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }
}
