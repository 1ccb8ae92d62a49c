use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, GbtConfig, RfConfig};
use crate::features::{FeatureMatrix, Row};
use crate::{par, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: f64 },
    /// Rows with `x[feature] > threshold` go right.
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn eval(&self, x: Row<'_>) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if x.get(feature as usize) > threshold { right } else { left } as usize;
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left as usize).max(go(nodes, right as usize)),
            }
        }
        go(&self.nodes, 0)
    }
}

struct Builder {
    nodes: Vec<Node>,
}

impl Builder {
    fn leaf(&mut self, value: f64) -> u32 {
        self.nodes.push(Node::Leaf { value });
        (self.nodes.len() - 1) as u32
    }

    fn split(&mut self, feature: u32, threshold: f64) -> u32 {
        self.nodes.push(Node::Split { feature, threshold, left: 0, right: 0 });
        (self.nodes.len() - 1) as u32
    }

    fn link(&mut self, at: u32, l: u32, r: u32) {
        if let Node::Split { left, right, .. } = &mut self.nodes[at as usize] {
            *left = l;
            *right = r;
        }
    }
}

fn partition(x: &FeatureMatrix, idx: &[usize], feature: u32, threshold: f64) -> (Vec<usize>, Vec<usize>) {
    idx.iter().partition(|&&i| x.row(i).get(feature as usize) <= threshold)
}

/// Quantile cut points per dense column, with rows pre-binned so that
/// `bin > k` exactly when `value > cuts[k]`.
struct Bins {
    cuts: Vec<Vec<f64>>,
    codes: Vec<Vec<u8>>,
}

impl Bins {
    fn new(rows: &[Vec<f64>], dim: usize, max_bins: usize) -> Self {
        let cuts: Vec<Vec<f64>> = par::map_range(dim, |j| {
            let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            col.sort_by(f64::total_cmp);
            col.dedup();
            if col.len() <= max_bins {
                col.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                let mut c: Vec<f64> = (1..max_bins)
                    .map(|q| {
                        let k = q * col.len() / max_bins;
                        0.5 * (col[k - 1] + col[k])
                    })
                    .collect();
                c.dedup();
                c
            }
        });
        let codes = rows
            .iter()
            .map(|r| r.iter().zip(&cuts).map(|(v, c)| c.partition_point(|t| v > t) as u8).collect())
            .collect();
        Self { cuts, codes }
    }
}

/// Logistic gradient boosting. `score = sigmoid(base + lr * Σ tree)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedTrees {
    pub in_dim: usize,
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl BoostedTrees {
    pub fn margin(&self, x: Row<'_>) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.eval(x)).sum::<f64>()
    }

    pub fn score(&self, x: Row<'_>) -> f64 {
        sigmoid(self.margin(x))
    }
}

pub(super) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss for margins `f`.
pub(super) fn logistic_loss(f: &[f64], y: &[u8]) -> f64 {
    let total: f64 = f.iter().zip(y).map(|(&z, &y)| softplus(z) - if y == 1 { z } else { 0.0 }).sum();
    total / f.len() as f64
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(super) fn train_gbt(cfg: &GbtConfig, ds: &Dataset) -> BoostedTrees {
    train_gbt_traced(cfg, ds, |_| {})
}

/// As [`train_gbt`], calling `trace` with the training margins after every
/// round.
pub(crate) fn train_gbt_traced(cfg: &GbtConfig, ds: &Dataset, mut trace: impl FnMut(&[f64])) -> BoostedTrees {
    let n = ds.len();
    let (b, m) = ds.class_counts();
    let base = (m as f64 / b as f64).ln();
    let bins = match &ds.x {
        FeatureMatrix::Dense { rows, dim } => Some(Bins::new(rows, *dim, cfg.max_bins)),
        FeatureMatrix::Sparse { .. } => None,
    };
    let mut f = vec![base; n];
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut trees = Vec::with_capacity(cfg.trees);
    let all: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.trees {
        for i in 0..n {
            let p = sigmoid(f[i]);
            g[i] = p - ds.y[i] as f64;
            h[i] = (p * (1.0 - p)).max(1e-12);
        }
        let mut builder = Builder { nodes: Vec::new() };
        let ctx = GbtCtx { ds, bins: bins.as_ref(), g: &g, h: &h, cfg };
        ctx.grow(&mut builder, &all, 0);
        let tree = Tree { nodes: builder.nodes };
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += cfg.learning_rate * tree.eval(ds.row(i));
        }
        trees.push(tree);
        trace(&f);
    }
    BoostedTrees { in_dim: ds.dim(), base, learning_rate: cfg.learning_rate, trees }
}

struct GbtCtx<'a> {
    ds: &'a Dataset,
    bins: Option<&'a Bins>,
    g: &'a [f64],
    h: &'a [f64],
    cfg: &'a GbtConfig,
}

impl GbtCtx<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.cfg.l2)
    }

    fn grow(&self, b: &mut Builder, idx: &[usize], depth: usize) -> u32 {
        let gs: f64 = idx.iter().map(|&i| self.g[i]).sum();
        let hs: f64 = idx.iter().map(|&i| self.h[i]).sum();
        let leaf_value = -gs / (hs + self.cfg.l2);
        if depth >= self.cfg.depth || idx.len() < 2 {
            return b.leaf(leaf_value);
        }
        let parent = self.score(gs, hs);
        let best = match self.bins {
            None => self.best_sparse(idx, gs, hs, parent),
            Some(bins) => self.best_dense(bins, idx, gs, hs, parent),
        };
        let Some((feature, threshold)) = best else {
            return b.leaf(leaf_value);
        };
        let (l, r) = partition(&self.ds.x, idx, feature, threshold);
        let at = b.split(feature, threshold);
        let li = self.grow(b, &l, depth + 1);
        let ri = self.grow(b, &r, depth + 1);
        b.link(at, li, ri);
        at
    }

    // Presence splits: right = rows holding the feature.
    fn best_sparse(&self, idx: &[usize], gs: f64, hs: f64, parent: f64) -> Option<(u32, f64)> {
        let FeatureMatrix::Sparse { rows, dim } = &self.ds.x else { unreachable!() };
        let mut gsum = vec![0.0; *dim];
        let mut hsum = vec![0.0; *dim];
        let mut count = vec![0u32; *dim];
        for &i in idx {
            for &j in &rows[i].ones {
                gsum[j as usize] += self.g[i];
                hsum[j as usize] += self.h[i];
                count[j as usize] += 1;
            }
        }
        let mut best: Option<(f64, u32)> = None;
        for j in 0..*dim {
            if count[j] == 0 || count[j] as usize == idx.len() {
                continue;
            }
            let gain = self.score(gsum[j], hsum[j]) + self.score(gs - gsum[j], hs - hsum[j]) - parent;
            if gain > 1e-12 && best.is_none_or(|(bg, _)| gain > bg) {
                best = Some((gain, j as u32));
            }
        }
        best.map(|(_, j)| (j, 0.5))
    }

    fn best_dense(&self, bins: &Bins, idx: &[usize], gs: f64, hs: f64, parent: f64) -> Option<(u32, f64)> {
        let mut best: Option<(f64, u32, f64)> = None;
        for (j, cuts) in bins.cuts.iter().enumerate() {
            if cuts.is_empty() {
                continue;
            }
            let nb = cuts.len() + 1;
            let mut hg = vec![0.0; nb];
            let mut hh = vec![0.0; nb];
            let mut hc = vec![0u32; nb];
            for &i in idx {
                let c = bins.codes[i][j] as usize;
                hg[c] += self.g[i];
                hh[c] += self.h[i];
                hc[c] += 1;
            }
            let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0u32);
            for k in 0..cuts.len() {
                gl += hg[k];
                hl += hh[k];
                cl += hc[k];
                if cl == 0 || cl as usize == idx.len() {
                    continue;
                }
                let gain = self.score(gl, hl) + self.score(gs - gl, hs - hl) - parent;
                if gain > 1e-12 && best.is_none_or(|(bg, _, _)| gain > bg) {
                    best = Some((gain, j as u32, cuts[k]));
                }
            }
        }
        best.map(|(_, j, t)| (j, t))
    }
}

/// Bagged gini trees. `score` is the fraction of trees voting malicious.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub in_dim: usize,
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn score(&self, x: Row<'_>) -> f64 {
        self.trees.iter().map(|t| t.eval(x)).sum::<f64>() / self.trees.len() as f64
    }
}

pub(super) fn train_rf(cfg: &RfConfig, seed: u64, ds: &Dataset) -> Forest {
    let n = ds.len();
    let d = ds.dim();
    let mtry = cfg.max_features.unwrap_or(((d as f64).sqrt() as usize).max(1)).min(d).max(1);
    let trees = par::map_range(cfg.trees, |t| {
        let mut r = rng::substream(seed, "rf-tree", t as u64);
        let boot: Vec<usize> = (0..n).map(|_| r.gen_range(0..n)).collect();
        let mut b = Builder { nodes: Vec::new() };
        let ctx = RfCtx { ds, cfg, mtry };
        ctx.grow(&mut b, &mut r, &boot, 0);
        Tree { nodes: b.nodes }
    });
    Forest { in_dim: d, trees }
}

struct RfCtx<'a> {
    ds: &'a Dataset,
    cfg: &'a RfConfig,
    mtry: usize,
}

fn gini_impurity_sum(n: f64, mal: f64) -> f64 {
    if n == 0.0 {
        0.0
    } else {
        // n * gini, so children can be added directly.
        let p = mal / n;
        n * 2.0 * p * (1.0 - p)
    }
}

impl RfCtx<'_> {
    fn grow(&self, b: &mut Builder, r: &mut impl Rng, idx: &[usize], depth: usize) -> u32 {
        let n = idx.len();
        let mal = idx.iter().filter(|&&i| self.ds.y[i] == 1).count();
        let vote = match (2 * mal).cmp(&n) {
            std::cmp::Ordering::Greater => 1.0,
            std::cmp::Ordering::Less => 0.0,
            std::cmp::Ordering::Equal => 0.5,
        };
        let depth_capped = self.cfg.max_depth.is_some_and(|m| depth >= m);
        if mal == 0 || mal == n || depth_capped || n < 2 * self.cfg.min_samples_leaf {
            return b.leaf(vote);
        }
        let parent = gini_impurity_sum(n as f64, mal as f64);
        let best = match &self.ds.x {
            FeatureMatrix::Sparse { .. } => self.best_sparse(r, idx, mal, parent),
            FeatureMatrix::Dense { .. } => self.best_dense(r, idx, mal, parent),
        };
        let Some((feature, threshold)) = best else {
            return b.leaf(vote);
        };
        let (l, rr) = partition(&self.ds.x, idx, feature, threshold);
        let at = b.split(feature, threshold);
        let li = self.grow(b, r, &l, depth + 1);
        let ri = self.grow(b, r, &rr, depth + 1);
        b.link(at, li, ri);
        at
    }

    // Draws `mtry` features among those that vary inside the node.
    fn best_sparse(&self, r: &mut impl Rng, idx: &[usize], mal: usize, parent: f64) -> Option<(u32, f64)> {
        let FeatureMatrix::Sparse { rows, .. } = &self.ds.x else { unreachable!() };
        let mut counts: std::collections::BTreeMap<u32, (usize, usize)> = Default::default();
        for &i in idx {
            for &j in &rows[i].ones {
                let e = counts.entry(j).or_default();
                e.0 += 1;
                e.1 += self.ds.y[i] as usize;
            }
        }
        let varying: Vec<(u32, usize, usize)> =
            counts.into_iter().filter(|(_, (c, _))| *c < idx.len()).map(|(j, (c, m))| (j, c, m)).collect();
        if varying.is_empty() {
            return None;
        }
        let n = idx.len();
        let mut best: Option<(f64, u32)> = None;
        for k in sample(r, varying.len(), self.mtry.min(varying.len())) {
            let (j, c, m) = varying[k];
            let child = gini_impurity_sum(c as f64, m as f64) + gini_impurity_sum((n - c) as f64, (mal - m) as f64);
            let gain = parent - child;
            if best.is_none_or(|(bg, bj)| gain > bg || (gain == bg && j < bj)) {
                best = Some((gain, j));
            }
        }
        best.filter(|(g, _)| *g > 1e-12).map(|(_, j)| (j, 0.5))
    }

    fn best_dense(&self, r: &mut impl Rng, idx: &[usize], mal: usize, parent: f64) -> Option<(u32, f64)> {
        let d = self.ds.dim();
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(r);
        let n = idx.len();
        let mut best: Option<(f64, u32, f64)> = None;
        let mut visited = 0;
        let mut vals: Vec<(f64, u8)> = Vec::with_capacity(n);
        for j in order {
            if visited >= self.mtry {
                break;
            }
            vals.clear();
            vals.extend(idx.iter().map(|&i| (self.ds.row(i).get(j), self.ds.y[i])));
            vals.sort_by(|a, b| a.0.total_cmp(&b.0));
            if vals[0].0 == vals[n - 1].0 {
                continue;
            }
            visited += 1;
            let mut left_mal = 0;
            for k in 0..n - 1 {
                left_mal += vals[k].1 as usize;
                if vals[k].0 == vals[k + 1].0 {
                    continue;
                }
                let nl = k + 1;
                let child = gini_impurity_sum(nl as f64, left_mal as f64)
                    + gini_impurity_sum((n - nl) as f64, (mal - left_mal) as f64);
                let gain = parent - child;
                if best.is_none_or(|(bg, _, _)| gain > bg) {
                    best = Some((gain, j as u32, 0.5 * (vals[k].0 + vals[k + 1].0)));
                }
            }
        }
        best.filter(|(g, _, _)| *g > 1e-12).map(|(_, j, t)| (j, t))
    }
}
