//! Parameterized building blocks over the autodiff graph.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{init, Group, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, group: Group, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Linear {
            w: store.add(format!("{name}.w"), group, init::xavier(input, output, rng)),
            b: store.add(format!("{name}.b"), group, Tensor::zeros(1, output)),
        }
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Var {
        g.linear(x, self.w, self.b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, group: Group, dim: usize) -> Self {
        Norm {
            gain: store.add(format!("{name}.gain"), group, init::constant(1, dim, 1.0)),
            bias: store.add(format!("{name}.bias"), group, Tensor::zeros(1, dim)),
        }
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Var {
        g.layer_norm(x, self.gain, self.bias)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
}

impl Lstm {
    /// Xavier input weights, orthogonal recurrent blocks, forget-gate bias 1.
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w_ih = init::xavier(input, 4 * hidden, rng);
        let mut w_hh = Tensor::zeros(hidden, 4 * hidden);
        for gate in 0..4 {
            let q = init::orthogonal(hidden, rng);
            for r in 0..hidden {
                w_hh.row_mut(r)[gate * hidden..(gate + 1) * hidden].copy_from_slice(q.row(r));
            }
        }
        let mut b = Tensor::zeros(1, 4 * hidden);
        b.data[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
        Lstm {
            w_ih: store.add(format!("{name}.w_ih"), Group::Recurrent, w_ih),
            w_hh: store.add(format!("{name}.w_hh"), Group::Recurrent, w_hh),
            b: store.add(format!("{name}.b"), Group::Recurrent, b),
        }
    }

    /// Final hidden state per row sequence of `x`.
    pub fn run(&self, g: &mut Graph, x: Var, seqs: Vec<Vec<usize>>) -> Var {
        g.lstm(x, self.w_ih, self.w_hh, self.b, seqs)
    }
}

/// Transformer feed-forward sublayer.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, group: Group, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), group, dim, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), group, hidden, dim, rng),
        }
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.up.apply(g, x);
        let h = g.gelu(h);
        self.down.apply(g, h)
    }
}

/// Query/key/value/output projections.
#[derive(Clone, Copy, Debug)]
pub struct AttentionProj {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl AttentionProj {
    pub fn new(store: &mut ParamStore, name: &str, group: Group, dim: usize, rng: &mut impl Rng) -> Self {
        AttentionProj {
            q: Linear::new(store, &format!("{name}.q"), group, dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), group, dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), group, dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), group, dim, dim, rng),
        }
    }

    pub fn apply(&self, g: &mut Graph, query: Var, kv: Var, heads: usize, segments: Vec<crate::graph::Segment>) -> Var {
        let q = self.q.apply(g, query);
        let k = self.k.apply(g, kv);
        let v = self.v.apply(g, kv);
        let a = g.attention_segments(q, k, v, heads, segments);
        self.o.apply(g, a)
    }
}
