use std::sync::OnceLock;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::sigmoid;
use super::{Dataset, NnConfig};
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, ProjectionSparsity, RandomProjection, SparseBinaryVector};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `(out, in)`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Feed-forward network with a sigmoid after every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

pub type Gradients = Vec<(Array2<f64>, Array1<f64>)>;

impl Mlp {
    /// Widths include input and output, e.g. `[d, 64, 32, 16, 1]`.
    pub fn xavier(widths: &[usize], r: &mut impl Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer { w: Array2::from_shape_fn((fan_out, fan_in), |_| r.gen_range(-a..a)), b: Array1::zeros(fan_out) }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        let layers =
            widths.windows(2).map(|w| Layer { w: Array2::zeros((w[1], w[0])), b: Array1::zeros(w[1]) }).collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    /// Activations of every layer, input first.
    fn forward(&self, x: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut acts = vec![x.clone()];
        for layer in &self.layers {
            let z = acts.last().unwrap().dot(&layer.w.t()) + &layer.b;
            acts.push(z.mapv(sigmoid));
        }
        acts
    }

    fn logits(&self, x: &Array2<f64>) -> (Vec<Array2<f64>>, Array1<f64>) {
        let mut acts = vec![x.clone()];
        let last = self.layers.len() - 1;
        let mut logit = Array1::zeros(x.nrows());
        for (k, layer) in self.layers.iter().enumerate() {
            let z = acts.last().unwrap().dot(&layer.w.t()) + &layer.b;
            if k == last {
                logit = z.column(0).to_owned();
            }
            acts.push(z.mapv(sigmoid));
        }
        (acts, logit)
    }

    pub fn output(&self, x: &Array2<f64>) -> Array1<f64> {
        self.forward(x).pop().unwrap().column(0).to_owned()
    }

    pub fn penultimate(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut acts = self.forward(x);
        acts.pop();
        acts.pop().unwrap()
    }

    /// Mean binary cross-entropy and its gradients for every layer.
    pub fn loss_and_gradients(&self, x: &Array2<f64>, y: &[f64]) -> (f64, Gradients) {
        let n = x.nrows() as f64;
        let (acts, logit) = self.logits(x);
        let loss = logit.iter().zip(y).map(|(&z, &t)| z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z).sum::<f64>() / n;
        let out = acts.last().unwrap();
        let mut delta = Array2::from_shape_fn((x.nrows(), 1), |(i, _)| (out[[i, 0]] - y[i]) / n);
        let mut grads = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let a_in = &acts[k];
            grads.push((delta.t().dot(a_in), delta.sum_axis(Axis(0))));
            if k > 0 {
                let back = delta.dot(&self.layers[k].w);
                delta = back * a_in.mapv(|a| a * (1.0 - a));
            }
        }
        grads.reverse();
        (loss, grads)
    }
}

struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    fn new(net: &Mlp) -> Self {
        let z: Gradients = net.layers.iter().map(|l| (Array2::zeros(l.w.raw_dim()), Array1::zeros(l.b.len()))).collect();
        Self { m: z.clone(), v: z, t: 0 }
    }

    fn step(&mut self, net: &mut Mlp, grads: &Gradients, cfg: &NnConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let lr = cfg.learning_rate;
        for (k, (gw, gb)) in grads.iter().enumerate() {
            let (mw, mb) = &mut self.m[k];
            let (vw, vb) = &mut self.v[k];
            mw.zip_mut_with(gw, |m, g| *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g);
            vw.zip_mut_with(gw, |v, g| *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g);
            mb.zip_mut_with(gb, |m, g| *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g);
            vb.zip_mut_with(gb, |v, g| *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g);
            let layer = &mut net.layers[k];
            ndarray::Zip::from(&mut layer.w).and(&*mw).and(&*vw).for_each(|w, m, v| {
                *w -= lr * (m / c1) / ((v / c2).sqrt() + cfg.epsilon);
            });
            ndarray::Zip::from(&mut layer.b).and(&*mb).and(&*vb).for_each(|b, m, v| {
                *b -= lr * (m / c1) / ((v / c2).sqrt() + cfg.epsilon);
            });
        }
    }
}

/// How sparse inputs are mapped into the network's dense input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub seed: u64,
    pub sparsity: ProjectionSparsity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NnModel {
    pub projection: Option<ProjectionSpec>,
    pub net: Mlp,
    #[serde(skip)]
    cache: OnceLock<RandomProjection>,
}

impl NnModel {
    pub fn in_dim(&self) -> usize {
        self.projection.as_ref().map_or(self.net.in_dim(), |p| p.in_dim)
    }

    fn projector(&self) -> Result<Option<&RandomProjection>> {
        let Some(spec) = &self.projection else { return Ok(None) };
        if let Some(rp) = self.cache.get() {
            return Ok(Some(rp));
        }
        let rp = RandomProjection::new(spec.in_dim, spec.out_dim, spec.seed, spec.sparsity)?;
        Ok(Some(self.cache.get_or_init(|| rp)))
    }

    pub(crate) fn inputs(&self, x: &FeatureMatrix) -> Result<Array2<f64>> {
        to_input(x, self.projector()?)
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self.net.output(&self.inputs(x)?).to_vec())
    }

    pub fn penultimate(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        let h = self.net.penultimate(&self.inputs(x)?);
        Ok(FeatureMatrix::Dense { dim: h.ncols(), rows: h.outer_iter().map(|r| r.to_vec()).collect() })
    }
}

fn to_input(x: &FeatureMatrix, rp: Option<&RandomProjection>) -> Result<Array2<f64>> {
    match (x, rp) {
        (FeatureMatrix::Sparse { rows, .. }, Some(rp)) => {
            let projected: Vec<Vec<f64>> =
                crate::par::map(rows, |r: &SparseBinaryVector| rp.project(r)).into_iter().collect::<Result<_>>()?;
            let flat: Vec<f64> = projected.concat();
            Ok(Array2::from_shape_vec((rows.len(), rp.out_dim()), flat).expect("row widths checked"))
        }
        (_, Some(rp)) => Err(Error::Shape { expected: rp.in_dim(), got: x.dim() }),
        (x, None) => {
            let n = x.n_rows();
            Ok(Array2::from_shape_fn((n, x.dim()), |(i, j)| x.row(i).get(j)))
        }
    }
}

pub(super) fn train(cfg: &NnConfig, seed: u64, ds: &Dataset) -> Result<NnModel> {
    let projection = match (&ds.x, cfg.projection_dim) {
        (FeatureMatrix::Sparse { dim, .. }, Some(out)) if out < *dim => Some(ProjectionSpec {
            in_dim: *dim,
            out_dim: out,
            seed: rng::derive_seed(seed, "nn-projection", 0),
            sparsity: cfg.projection_sparsity,
        }),
        _ => None,
    };
    let mut model = NnModel { projection, net: Mlp::zeros(&[1, 1]), cache: OnceLock::new() };
    let x = model.inputs(&ds.x)?;
    let y: Vec<f64> = ds.y.iter().map(|&v| v as f64).collect();

    let mut widths = vec![x.ncols()];
    widths.extend(&cfg.hidden);
    widths.push(1);
    let mut net = Mlp::xavier(&widths, &mut rng::stream(seed, "nn-init"));
    let mut adam = Adam::new(&net);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::substream(seed, "nn-shuffle", epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), batch);
            let yb: Vec<f64> = batch.iter().map(|&i| y[i]).collect();
            let (loss, grads) = net.loss_and_gradients(&xb, &yb);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            adam.step(&mut net, &grads, cfg);
        }
        log::trace!("nn epoch {epoch}: loss {:.5}", epoch_loss / ds.len() as f64);
    }
    model.net = net;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor() -> (Array2<f64>, Vec<f64>) {
        (Array2::from_shape_vec((4, 2), vec![0., 0., 0., 1., 1., 0., 1., 1.]).unwrap(), vec![0., 1., 1., 0.])
    }

    #[test]
    fn xor_is_learned() {
        let (x, y) = xor();
        let ds = Dataset::new(
            FeatureMatrix::Dense { dim: 2, rows: x.outer_iter().map(|r| r.to_vec()).collect() },
            y.iter().map(|&v| v as u8).collect(),
            (0..4).map(|i| i.to_string()).collect(),
        )
        .unwrap();
        let cfg = NnConfig { hidden: vec![4], epochs: 5000, batch_size: 4, learning_rate: 0.05, ..Default::default() };
        let m = train(&cfg, 11, &ds).unwrap();
        let (loss, _) = m.net.loss_and_gradients(&x, &y);
        assert!(loss < 0.1, "loss {loss}");
    }

    #[test]
    fn zero_network_outputs_half() {
        let net = Mlp::zeros(&[3, 8, 1]);
        let x = Array2::zeros((5, 3));
        assert!(net.penultimate(&x).iter().all(|&a| a == 0.5));
        assert_eq!(net.penultimate(&x).ncols(), 8);
        assert!(net.output(&x).iter().all(|&a| a == 0.5));
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut r = rng::stream(5, "fd");
        let net = Mlp::xavier(&[4, 5, 3, 1], &mut r);
        let x = Array2::from_shape_fn((10, 4), |_| r.gen_range(-1.0..1.0));
        let y: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let (_, grads) = net.loss_and_gradients(&x, &y);
        let h = 1e-4;
        for k in 0..net.layers.len() {
            let (rows, cols) = net.layers[k].w.dim();
            for i in 0..rows {
                for j in 0..cols {
                    let mut p = net.clone();
                    p.layers[k].w[[i, j]] += h;
                    let mut m = net.clone();
                    m.layers[k].w[[i, j]] -= h;
                    let num = (p.loss_and_gradients(&x, &y).0 - m.loss_and_gradients(&x, &y).0) / (2.0 * h);
                    let ana = grads[k].0[[i, j]];
                    let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-8);
                    assert!(rel < 1e-4 || (num - ana).abs() < 1e-9, "layer {k} w[{i},{j}]: {ana} vs {num}");
                }
            }
            for i in 0..net.layers[k].b.len() {
                let mut p = net.clone();
                p.layers[k].b[i] += h;
                let mut m = net.clone();
                m.layers[k].b[i] -= h;
                let num = (p.loss_and_gradients(&x, &y).0 - m.loss_and_gradients(&x, &y).0) / (2.0 * h);
                let ana = grads[k].1[i];
                assert!((num - ana).abs() <= 1e-4 * num.abs().max(ana.abs()).max(1e-5), "layer {k} b[{i}]");
            }
        }
    }

    #[test]
    fn nan_inputs_diverge() {
        let ds = Dataset::new(
            FeatureMatrix::Dense { dim: 1, rows: vec![vec![f64::NAN], vec![1.0]] },
            vec![0, 1],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let cfg = NnConfig { hidden: vec![2], epochs: 3, ..Default::default() };
        assert!(matches!(train(&cfg, 0, &ds), Err(Error::Divergence { epoch: 0 })));
    }
}
