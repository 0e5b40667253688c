//! Named parameters, initializers and the AdamW optimizer.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Learning-rate group of a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Encoder,
    /// QA and strategy classifiers.
    Classifier,
    Parent,
    Child,
    /// Every LSTM.
    Recurrent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub value: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: Group, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        self.params.push(Param { name, group, value });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Gradient accumulator aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub tensors: Vec<Tensor>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads { tensors: store.params.iter().map(|p| Tensor::zeros(p.value.rows, p.value.cols)).collect() }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        self.tensors[id.0].add_assign(g);
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.scale(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

pub mod init {
    use super::*;

    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Tensor {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect())
    }

    /// Glorot/Xavier uniform for a `fan_in x fan_out` weight.
    pub fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
        uniform(rows, cols, (6.0 / (rows + cols) as f64).sqrt(), rng)
    }

    /// Scaled uniform for embedding tables.
    pub fn embedding(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
        uniform(rows, cols, (3.0 / cols as f64).sqrt() * 0.5, rng)
    }

    /// Random `n x n` orthogonal matrix (Gram–Schmidt on a Gaussian draw).
    pub fn orthogonal(n: usize, rng: &mut impl Rng) -> Tensor {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        while rows.len() < n {
            let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
            for r in &rows {
                let d: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(r) {
                    *x -= d * y;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                rows.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        Tensor::from_vec(n, n, rows.concat())
    }

    pub fn constant(rows: usize, cols: usize, v: f64) -> Tensor {
        Tensor::from_vec(rows, cols, vec![v; rows * cols])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Adam with decoupled weight decay; decay skips row-vector parameters
/// (biases, norm gains, learned sentinels).
#[derive(Clone, Debug)]
pub struct AdamW {
    config: AdamWConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore, config: AdamWConfig) -> Self {
        let g = Grads::zeros_like(store);
        AdamW { config, m: g.tensors.clone(), v: g.tensors, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update; `lr` maps each group to its current learning rate.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: &BTreeMap<Group, f64>) {
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, p) in store.params.iter_mut().enumerate() {
            let rate = lr[&p.group];
            let decay = if p.value.rows > 1 { c.weight_decay } else { 0.0 };
            let (m, v, g) = (&mut self.m[i].data, &mut self.v[i].data, &grads.tensors[i].data);
            for (j, w) in p.value.data.iter_mut().enumerate() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + c.eps);
                *w -= rate * (update + decay * *w);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn orthogonal_is_orthogonal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let q = init::orthogonal(6, &mut rng);
        let qtq = crate::tensor::matmul(&q, true, &q, false);
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((qtq.get(i, j) - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn adamw_descends_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", Group::Encoder, Tensor::row_vector(vec![3.0, -2.0]));
        let mut opt = AdamW::new(&store, AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() });
        let lr: BTreeMap<Group, f64> = [(Group::Encoder, 0.1)].into_iter().collect();
        for _ in 0..300 {
            let mut g = Grads::zeros_like(&store);
            let w = store.get(id).clone();
            g.accumulate(id, &Tensor::row_vector(w.data.iter().map(|x| 2.0 * x).collect()));
            opt.step(&mut store, &g, &lr);
        }
        assert!(store.get(id).data.iter().all(|x| x.abs() < 0.05), "{:?}", store.get(id));
    }
}
