//! Reverse-mode autodiff over a tape of fused matrix operations.
//!
//! A [`Graph`] records one forward computation. Parameters enter by
//! reference to a [`ParamStore`]; [`Graph::backward`] pushes gradients of a
//! scalar output into a [`Grads`] accumulator.

use std::ops::Range;

use rand::Rng;

use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::{gemm, gemm_view, matmul, softmax, Tensor, View};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Query rows `q` attending to key/value rows `kv`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub q: Range<usize>,
    pub kv: Range<usize>,
}

struct LstmStep {
    /// Sequence slots active at this step (a prefix of the length-sorted order).
    active: usize,
    /// Input row per active slot.
    rows: Vec<usize>,
    /// Post-activation gates `[i, f, g, o]`, `active x 4h`.
    gates: Tensor,
    c_prev: Tensor,
    h_prev: Tensor,
    tanh_c: Tensor,
}

struct LstmCache {
    /// Slot order: sequence indices sorted by decreasing length.
    order: Vec<usize>,
    steps: Vec<LstmStep>,
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor, inv_std: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
    Rows { x: Var, idx: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Lstm { x: Var, w_ih: Var, w_hh: Var, b: Var, seqs: Vec<Vec<usize>>, cache: LstmCache },
    SegmentMean { x: Var, seqs: Vec<Vec<usize>> },
    Attention { q: Var, k: Var, v: Var, heads: usize, segments: Vec<Segment>, probs: Vec<Tensor> },
    Scores { q: Var, k: Var, lists: Vec<Vec<Option<usize>>>, scale: f64 },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Tensor },
    Sum(Vec<Var>),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    train: bool,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(t) => t.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore, train: bool) -> Self {
        Graph { store, nodes: Vec::new(), param_vars: vec![None; store.len()], train }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].op {
            Op::Param(id) => self.store.get(*id),
            _ => self.nodes[v.0].value.as_ref().expect("node value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let y = matmul(self.value(a), ta, self.value(b), tb);
        self.push(y, Op::MatMul { a, b, ta, tb })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        self.push(y, Op::Add(a, b))
    }

    /// Broadcast-add a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!((r.rows, r.cols), (1, self.value(a).cols), "add_row shape");
        let mut y = self.value(a).clone();
        let r = self.value(row).data.clone();
        for chunk in y.data.chunks_mut(r.len()) {
            for (x, b) in chunk.iter_mut().zip(&r) {
                *x += b;
            }
        }
        self.push(y, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut y = self.value(a).clone();
        y.scale(s);
        self.push(y, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let mut y = self.value(a).clone();
        y.data.iter_mut().for_each(|x| *x = x.tanh());
        self.push(y, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut y = self.value(a).clone();
        y.data.iter_mut().for_each(|x| *x = 0.5 * *x * (1.0 + (GELU_C * (*x + 0.044715 * *x * *x * *x)).tanh()));
        self.push(y, Op::Gelu(a))
    }

    /// Affine map `x W + b` with `W: in x out`, `b: 1 x out`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId) -> Var {
        let (gv, bv) = (self.param(gamma), self.param(beta));
        let xt = self.value(x);
        let (rows, cols) = xt.shape();
        let mut xhat = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xt.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
        }
        let g = &self.value(gv).data;
        let b = &self.value(bv).data;
        let mut y = xhat.clone();
        for chunk in y.data.chunks_mut(cols) {
            for ((o, g), b) in chunk.iter_mut().zip(g).zip(b) {
                *o = *o * g + b;
            }
        }
        self.push(y, Op::LayerNorm { x, gamma: gv, beta: bv, xhat, inv_std })
    }

    /// Inverted dropout; identity outside training or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut impl Rng) -> Var {
        if !self.train || p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len()).map(|_| if rng.gen_bool(p) { 0.0 } else { keep }).collect();
        let mut y = self.value(x).clone();
        for (v, m) in y.data.iter_mut().zip(&mask) {
            *v *= m;
        }
        self.push(y, Op::Dropout { x, mask })
    }

    /// Rows of `x` by index (repeats allowed).
    pub fn rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let y = self.value(x).select_rows(&idx);
        self.push(y, Op::Rows { x, idx })
    }

    pub fn embed(&mut self, table: ParamId, ids: Vec<usize>) -> Var {
        let t = self.param(table);
        self.rows(t, ids)
    }

    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        for &p in &parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&t.data);
        }
        let rows = data.len() / cols.max(1);
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts))
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut y = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in &parts {
            let t = self.value(p);
            assert_eq!(t.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                y.row_mut(r)[off..off + t.cols].copy_from_slice(t.row(r));
            }
            off += t.cols;
        }
        self.push(y, Op::ConcatCols(parts))
    }

    /// Final hidden state of an LSTM run over each row sequence of `x`.
    /// Gates are laid out `[i, f, g, o]`; empty sequences yield zeros.
    pub fn lstm(&mut self, x: Var, w_ih: ParamId, w_hh: ParamId, b: ParamId, seqs: Vec<Vec<usize>>) -> Var {
        let (w_ih, w_hh, b) = (self.param(w_ih), self.param(w_hh), self.param(b));
        let h = self.value(w_hh).rows;
        let xp = matmul(self.value(x), false, self.value(w_ih), false);
        let whh = self.value(w_hh);
        let bias = &self.value(b).data;
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.sort_by_key(|&s| std::cmp::Reverse(seqs[s].len()));
        let max_len = order.first().map_or(0, |&s| seqs[s].len());
        let mut h_state = Tensor::zeros(seqs.len(), h);
        let mut c_state = Tensor::zeros(seqs.len(), h);
        let mut steps = Vec::with_capacity(max_len);
        for t in 0..max_len {
            let active = order.iter().take_while(|&&s| seqs[s].len() > t).count();
            let rows: Vec<usize> = order[..active].iter().map(|&s| seqs[s][t]).collect();
            let h_prev = Tensor::from_vec(active, h, h_state.data[..active * h].to_vec());
            let c_prev = Tensor::from_vec(active, h, c_state.data[..active * h].to_vec());
            let mut gates = xp.select_rows(&rows);
            gemm(1.0, &h_prev, false, whh, false, 1.0, &mut gates);
            let mut tanh_c = Tensor::zeros(active, h);
            for a in 0..active {
                let g = gates.row_mut(a);
                for (j, bj) in bias.iter().enumerate() {
                    g[j] += bj;
                }
                for j in 0..h {
                    g[j] = sigmoid(g[j]);
                    g[h + j] = sigmoid(g[h + j]);
                    g[2 * h + j] = g[2 * h + j].tanh();
                    g[3 * h + j] = sigmoid(g[3 * h + j]);
                }
                for j in 0..h {
                    let c = g[h + j] * c_prev.get(a, j) + g[j] * g[2 * h + j];
                    c_state.data[a * h + j] = c;
                    let tc = c.tanh();
                    tanh_c.data[a * h + j] = tc;
                    h_state.data[a * h + j] = g[3 * h + j] * tc;
                }
            }
            steps.push(LstmStep { active, rows, gates, c_prev, h_prev, tanh_c });
        }
        let mut out = Tensor::zeros(seqs.len(), h);
        for (slot, &s) in order.iter().enumerate() {
            out.row_mut(s).copy_from_slice(h_state.row(slot));
        }
        self.push(out, Op::Lstm { x, w_ih, w_hh, b, seqs, cache: LstmCache { order, steps } })
    }

    /// Mean of each row sequence of `x`; empty sequences yield zeros.
    pub fn segment_mean(&mut self, x: Var, seqs: Vec<Vec<usize>>) -> Var {
        let xt = self.value(x);
        let mut y = Tensor::zeros(seqs.len(), xt.cols);
        for (s, seq) in seqs.iter().enumerate() {
            for &r in seq {
                for (o, v) in y.row_mut(s).iter_mut().zip(xt.row(r)) {
                    *o += v / seq.len() as f64;
                }
            }
        }
        self.push(y, Op::SegmentMean { x, seqs })
    }

    /// Scaled dot-product attention over projected `q`, `k`, `v`, split into
    /// `heads` column blocks.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let seg = Segment { q: 0..self.value(q).rows, kv: 0..self.value(k).rows };
        self.attention_segments(q, k, v, heads, vec![seg])
    }

    /// Block-diagonal attention: rows `seg.q` of `q` attend only to rows
    /// `seg.kv` of `k`/`v`. Rows of `q` outside every segment output zeros.
    pub fn attention_segments(&mut self, q: Var, k: Var, v: Var, heads: usize, segments: Vec<Segment>) -> Var {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let (tq, d) = qt.shape();
        assert_eq!(kt.cols, d);
        assert_eq!(vt.shape(), kt.shape());
        assert_eq!(d % heads, 0, "model width must divide into heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Tensor::zeros(tq, d);
        let mut probs = Vec::with_capacity(heads * segments.len());
        for seg in &segments {
            let (nq, nk) = (seg.q.len(), seg.kv.len());
            assert!(nk > 0 || nq == 0, "empty key segment");
            let qo = seg.q.start * d;
            let ko = seg.kv.start * d;
            for hd in 0..heads {
                let off = hd * dh;
                let mut s = Tensor::zeros(nq, nk);
                let sv = View { offset: 0, rs: nk, cs: 1 };
                let q_view = View { offset: qo + off, rs: d, cs: 1 };
                let kt_view = View { offset: ko + off, rs: 1, cs: d };
                gemm_view(nq, dh, nk, scale, &qt.data, q_view, &kt.data, kt_view, 0.0, &mut s.data, sv);
                for r in 0..nq {
                    let p = softmax(s.row(r), None);
                    s.row_mut(r).copy_from_slice(&p);
                }
                let v_view = View { offset: ko + off, rs: d, cs: 1 };
                gemm_view(nq, nk, dh, 1.0, &s.data, sv, &vt.data, v_view, 0.0, &mut out.data, q_view);
                probs.push(s);
            }
        }
        self.push(out, Op::Attention { q, k, v, heads, segments, probs })
    }

    /// Pointer scores: row `s` holds `scale * q[s] . k[j]` for every `Some(j)`
    /// in `lists[s]`; `None` entries and padding are `-inf`.
    pub fn scores(&mut self, q: Var, k: Var, lists: Vec<Vec<Option<usize>>>, scale: f64) -> Var {
        let (qt, kt) = (self.value(q), self.value(k));
        assert_eq!(qt.rows, lists.len(), "one candidate list per query");
        assert_eq!(qt.cols, kt.cols);
        let width = lists.iter().map(Vec::len).max().unwrap_or(0);
        let mut y = Tensor::from_vec(lists.len(), width, vec![f64::NEG_INFINITY; lists.len() * width]);
        for (s, list) in lists.iter().enumerate() {
            let qr = qt.row(s);
            for (j, c) in list.iter().enumerate() {
                if let Some(c) = c {
                    y.data[s * width + j] = scale * qr.iter().zip(kt.row(*c)).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        self.push(y, Op::Scores { q, k, lists, scale })
    }

    /// Summed cross-entropy of softmax rows against targets. Entries equal to
    /// `-inf` are excluded from the softmax (masking); targets must be finite.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        let lt = self.value(logits);
        assert_eq!(lt.rows, targets.len(), "one target per row");
        let mut probs = Tensor::zeros(lt.rows, lt.cols);
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lt.row(r);
            assert!(row[t].is_finite(), "target {t} is masked");
            let allowed: Vec<bool> = row.iter().map(|x| x.is_finite()).collect();
            let p = softmax(row, Some(&allowed));
            loss -= p[t].max(f64::MIN_POSITIVE).ln();
            probs.row_mut(r).copy_from_slice(&p);
        }
        self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets, probs })
    }

    /// Sum of scalars.
    pub fn sum(&mut self, parts: Vec<Var>) -> Var {
        let total = parts.iter().map(|p| self.value(*p).item()).sum();
        self.push(Tensor::scalar(total), Op::Sum(parts))
    }

    /// Accumulate d(output)/d(param) into `grads`. `output` must be a scalar.
    pub fn backward(&self, output: Var, grads: &mut Grads) {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        let mut g: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        g[output.0] = Some(Tensor::scalar(1.0));
        for i in (0..=output.0).rev() {
            let Some(dy) = g[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Param(id) => grads.accumulate(*id, &dy),
                Op::MatMul { a, b, ta, tb } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = if *ta { matmul(bv, *tb, &dy, true) } else { matmul(&dy, false, bv, !*tb) };
                    let db = if *tb { matmul(&dy, true, av, *ta) } else { matmul(av, !*ta, &dy, false) };
                    acc(&mut g, *a, da);
                    acc(&mut g, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut g, *a, dy.clone());
                    acc(&mut g, *b, dy);
                }
                Op::AddRow(a, row) => {
                    let mut dr = Tensor::zeros(1, dy.cols);
                    for r in 0..dy.rows {
                        for (o, v) in dr.data.iter_mut().zip(dy.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut g, *a, dy);
                    acc(&mut g, *row, dr);
                }
                Op::Scale(a, s) => {
                    let mut d = dy;
                    d.scale(*s);
                    acc(&mut g, *a, d);
                }
                Op::Tanh(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    let mut d = dy;
                    for (dv, yv) in d.data.iter_mut().zip(&y.data) {
                        *dv *= 1.0 - yv * yv;
                    }
                    acc(&mut g, *a, d);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut d = dy;
                    for (dv, &xv) in d.data.iter_mut().zip(&x.data) {
                        let t = (GELU_C * (xv + 0.044715 * xv * xv * xv)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * xv * xv);
                        *dv *= 0.5 * (1.0 + t) + 0.5 * xv * dt;
                    }
                    acc(&mut g, *a, d);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gv = &self.value(*gamma).data;
                    let n = xhat.cols;
                    let mut dgamma = Tensor::zeros(1, n);
                    let mut dbeta = Tensor::zeros(1, n);
                    let mut dx = Tensor::zeros(xhat.rows, n);
                    for r in 0..xhat.rows {
                        let (dyr, xh) = (dy.row(r), xhat.row(r));
                        let dxhat: Vec<f64> = dyr.iter().zip(gv).map(|(d, g)| d * g).collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dgamma.data[j] += dyr[j] * xh[j];
                            dbeta.data[j] += dyr[j];
                            dx.data[r * n + j] = inv_std[r] / n as f64 * (n as f64 * dxhat[j] - s1 - xh[j] * s2);
                        }
                    }
                    acc(&mut g, *x, dx);
                    acc(&mut g, *gamma, dgamma);
                    acc(&mut g, *beta, dbeta);
                }
                Op::Dropout { x, mask } => {
                    let mut d = dy;
                    for (dv, m) in d.data.iter_mut().zip(mask) {
                        *dv *= m;
                    }
                    acc(&mut g, *x, d);
                }
                Op::Rows { x, idx } => {
                    let (rows, cols) = self.shape(*x);
                    let mut dx = Tensor::zeros(rows, cols);
                    for (k, &r) in idx.iter().enumerate() {
                        for (o, v) in dx.row_mut(r).iter_mut().zip(dy.row(k)) {
                            *o += v;
                        }
                    }
                    acc(&mut g, *x, dx);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        acc(&mut g, p, Tensor::from_vec(r, c, dy.data[off..off + r * c].to_vec()));
                        off += r * c;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        let mut d = Tensor::zeros(r, c);
                        for row in 0..r {
                            d.row_mut(row).copy_from_slice(&dy.row(row)[off..off + c]);
                        }
                        acc(&mut g, p, d);
                        off += c;
                    }
                }
                Op::Lstm { x, w_ih, w_hh, b, seqs, cache } => {
                    let (dx, dwih, dwhh, db) = self.lstm_backward(&dy, *x, *w_ih, *w_hh, seqs, cache);
                    acc(&mut g, *x, dx);
                    acc(&mut g, *w_ih, dwih);
                    acc(&mut g, *w_hh, dwhh);
                    acc(&mut g, *b, db);
                }
                Op::SegmentMean { x, seqs } => {
                    let (rows, cols) = self.shape(*x);
                    let mut dx = Tensor::zeros(rows, cols);
                    for (s, seq) in seqs.iter().enumerate() {
                        for &r in seq {
                            for (o, v) in dx.row_mut(r).iter_mut().zip(dy.row(s)) {
                                *o += v / seq.len() as f64;
                            }
                        }
                    }
                    acc(&mut g, *x, dx);
                }
                Op::Attention { q, k, v, heads, segments, probs } => {
                    let (dq, dk, dv) = self.attention_backward(&dy, *q, *k, *v, *heads, segments, probs);
                    acc(&mut g, *q, dq);
                    acc(&mut g, *k, dk);
                    acc(&mut g, *v, dv);
                }
                Op::Scores { q, k, lists, scale } => {
                    let (qt, kt) = (self.value(*q), self.value(*k));
                    let mut dq = Tensor::zeros(qt.rows, qt.cols);
                    let mut dk = Tensor::zeros(kt.rows, kt.cols);
                    for (s, list) in lists.iter().enumerate() {
                        for (j, c) in list.iter().enumerate() {
                            let Some(c) = *c else { continue };
                            let w = scale * dy.data[s * dy.cols + j];
                            if w == 0.0 {
                                continue;
                            }
                            for (o, x) in dq.row_mut(s).iter_mut().zip(kt.row(c)) {
                                *o += w * x;
                            }
                            for (o, x) in dk.row_mut(c).iter_mut().zip(qt.row(s)) {
                                *o += w * x;
                            }
                        }
                    }
                    acc(&mut g, *q, dq);
                    acc(&mut g, *k, dk);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let s = dy.item();
                    let mut d = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        d.data[r * d.cols + t] -= 1.0;
                    }
                    d.scale(s);
                    acc(&mut g, *logits, d);
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        acc(&mut g, p, dy.clone());
                    }
                }
            }
        }
    }

    fn lstm_backward(
        &self,
        dy: &Tensor,
        x: Var,
        w_ih: Var,
        w_hh: Var,
        seqs: &[Vec<usize>],
        cache: &LstmCache,
    ) -> (Tensor, Tensor, Tensor, Tensor) {
        let xt = self.value(x);
        let whh = self.value(w_hh);
        let h = whh.rows;
        let n = seqs.len();
        let mut dh = Tensor::zeros(n, h);
        for (slot, &s) in cache.order.iter().enumerate() {
            dh.row_mut(slot).copy_from_slice(dy.row(s));
        }
        let mut dc = Tensor::zeros(n, h);
        let mut dxp = Tensor::zeros(xt.rows, 4 * h);
        let mut dwhh = Tensor::zeros(h, 4 * h);
        let mut db = Tensor::zeros(1, 4 * h);
        for step in cache.steps.iter().rev() {
            let a = step.active;
            let mut dgates = Tensor::zeros(a, 4 * h);
            for s in 0..a {
                let gt = step.gates.row(s);
                let dgr = &mut dgates.data[s * 4 * h..(s + 1) * 4 * h];
                for j in 0..h {
                    let (ig, fg, gg, og) = (gt[j], gt[h + j], gt[2 * h + j], gt[3 * h + j]);
                    let tc = step.tanh_c.get(s, j);
                    let dhv = dh.data[s * h + j];
                    let dcv = dc.data[s * h + j] + dhv * og * (1.0 - tc * tc);
                    dgr[j] = dcv * gg * ig * (1.0 - ig);
                    dgr[h + j] = dcv * step.c_prev.get(s, j) * fg * (1.0 - fg);
                    dgr[2 * h + j] = dcv * ig * (1.0 - gg * gg);
                    dgr[3 * h + j] = dhv * tc * og * (1.0 - og);
                    dc.data[s * h + j] = dcv * fg;
                }
            }
            gemm(1.0, &step.h_prev, true, &dgates, false, 1.0, &mut dwhh);
            for s in 0..a {
                for (o, v) in db.data.iter_mut().zip(dgates.row(s)) {
                    *o += v;
                }
                let r = step.rows[s];
                for (o, v) in dxp.row_mut(r).iter_mut().zip(dgates.row(s)) {
                    *o += v;
                }
            }
            let dh_prev = matmul(&dgates, false, whh, true);
            dh.data[..a * h].copy_from_slice(&dh_prev.data);
        }
        let dx = matmul(&dxp, false, self.value(w_ih), true);
        let dwih = matmul(xt, true, &dxp, false);
        (dx, dwih, dwhh, db)
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        dy: &Tensor,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: &[Segment],
        probs: &[Tensor],
    ) -> (Tensor, Tensor, Tensor) {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let d = qt.cols;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Tensor::zeros(qt.rows, d);
        let mut dk = Tensor::zeros(kt.rows, d);
        let mut dv = Tensor::zeros(kt.rows, d);
        let mut p_iter = probs.iter();
        for seg in segments {
            let (nq, nk) = (seg.q.len(), seg.kv.len());
            let (qo, ko) = (seg.q.start * d, seg.kv.start * d);
            let pv = View { offset: 0, rs: nk, cs: 1 };
            let pv_t = View { offset: 0, rs: 1, cs: nk };
            for hd in 0..heads {
                let p = p_iter.next().expect("one probability block per segment and head");
                let off = hd * dh;
                let qc = View { offset: qo + off, rs: d, cs: 1 };
                let kc = View { offset: ko + off, rs: d, cs: 1 };
                let kc_t = View { offset: ko + off, rs: 1, cs: d };
                // dV = P^T dO
                gemm_view(nk, nq, dh, 1.0, &p.data, pv_t, &dy.data, qc, 1.0, &mut dv.data, kc);
                // dP = dO V^T, then through the softmax
                let mut ds = Tensor::zeros(nq, nk);
                gemm_view(nq, dh, nk, 1.0, &dy.data, qc, &vt.data, kc_t, 0.0, &mut ds.data, pv);
                for r in 0..nq {
                    let pr = p.row(r);
                    let dot: f64 = ds.row(r).iter().zip(pr).map(|(a, b)| a * b).sum();
                    for (x, pj) in ds.row_mut(r).iter_mut().zip(pr) {
                        *x = pj * (*x - dot);
                    }
                }
                gemm_view(nq, nk, dh, scale, &ds.data, pv, &kt.data, kc, 1.0, &mut dq.data, qc);
                gemm_view(nk, nq, dh, scale, &ds.data, pv_t, &qt.data, qc, 1.0, &mut dk.data, kc);
            }
        }
        (dq, dk, dv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{init, Group};
    use rand::SeedableRng;

    /// Finite-difference check of every parameter for a closure building a scalar loss.
    fn check(store: &mut ParamStore, f: impl Fn(&mut Graph) -> Var) {
        let mut grads = Grads::zeros_like(store);
        {
            let mut g = Graph::new(store, false);
            let out = f(&mut g);
            g.backward(out, &mut grads);
        }
        let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            for j in 0..store.get(id).len() {
                let orig = store.get(id).data[j];
                let eval = |store: &mut ParamStore, v: f64| {
                    store.get_mut(id).data[j] = v;
                    let mut g = Graph::new(store, false);
                    let out = f(&mut g);
                    g.value(out).item()
                };
                let h = 1e-5;
                let num = (eval(store, orig + h) - eval(store, orig - h)) / (2.0 * h);
                store.get_mut(id).data[j] = orig;
                let ana = grads.get(id).data[j];
                let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-6);
                assert!(rel < 1e-5, "{} [{j}]: analytic {ana} numeric {num}", store.param(id).name);
            }
        }
    }

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn dense_ops_gradients() {
        let mut r = rng();
        let mut s = ParamStore::new();
        let x = s.add("x", Group::Encoder, init::uniform(3, 4, 1.0, &mut r));
        let w = s.add("w", Group::Encoder, init::uniform(4, 5, 1.0, &mut r));
        let b = s.add("b", Group::Encoder, init::uniform(1, 5, 1.0, &mut r));
        let gm = s.add("g", Group::Encoder, init::uniform(1, 5, 1.0, &mut r));
        let bt = s.add("beta", Group::Encoder, init::uniform(1, 5, 1.0, &mut r));
        let u = s.add("u", Group::Encoder, init::uniform(2, 5, 1.0, &mut r));
        check(&mut s, |g| {
            let xv = g.param(x);
            let h = g.linear(xv, w, b);
            let h = g.gelu(h);
            let h = g.layer_norm(h, gm, bt);
            let h = g.tanh(h);
            let uv = g.param(u);
            let c = g.concat_rows(vec![h, uv]);
            let c = g.rows(c, vec![4, 0, 0, 2]);
            let c2 = g.scale(c, 0.7);
            let c = g.add(c, c2);
            let z = g.matmul_t(c, false, uv, true);
            let zz = g.concat_cols(vec![z, c]);
            g.cross_entropy(zz, vec![1, 3, 0, 6])
        });
    }

    #[test]
    fn lstm_gradients() {
        let mut r = rng();
        let mut s = ParamStore::new();
        let x = s.add("x", Group::Recurrent, init::uniform(6, 3, 1.0, &mut r));
        let wih = s.add("wih", Group::Recurrent, init::uniform(3, 8, 0.8, &mut r));
        let whh = s.add("whh", Group::Recurrent, init::uniform(2, 8, 0.8, &mut r));
        let b = s.add("b", Group::Recurrent, init::uniform(1, 8, 0.5, &mut r));
        let t = s.add("t", Group::Recurrent, init::uniform(2, 4, 1.0, &mut r));
        check(&mut s, |g| {
            let xv = g.param(x);
            let h = g.lstm(xv, wih, whh, b, vec![vec![0, 1, 2], vec![], vec![5, 3], vec![4, 4, 1, 0]]);
            let tv = g.param(t);
            let z = g.matmul(h, tv);
            let m = g.segment_mean(xv, vec![vec![0, 2], vec![1, 3, 5]]);
            let mz = g.matmul_t(m, false, xv, true);
            let a = g.cross_entropy(z, vec![0, 1, 2, 3]);
            let c = g.cross_entropy(mz, vec![3, 4]);
            g.sum(vec![a, c])
        });
    }

    #[test]
    fn attention_gradients() {
        let mut r = rng();
        let mut s = ParamStore::new();
        let q = s.add("q", Group::Encoder, init::uniform(2, 4, 1.0, &mut r));
        let k = s.add("k", Group::Encoder, init::uniform(3, 4, 1.0, &mut r));
        let v = s.add("v", Group::Encoder, init::uniform(3, 4, 1.0, &mut r));
        let t = s.add("t", Group::Encoder, init::uniform(4, 3, 1.0, &mut r));
        check(&mut s, |g| {
            let (qv, kv, vv, tv) = (g.param(q), g.param(k), g.param(v), g.param(t));
            let o = g.attention(qv, kv, vv, 2);
            let o1 = g.attention(qv, kv, vv, 1);
            let o = g.add(o, o1);
            let segs = vec![Segment { q: 0..1, kv: 0..2 }, Segment { q: 1..2, kv: 1..3 }];
            let o2 = g.attention_segments(qv, kv, vv, 2, segs);
            let o = g.add(o, o2);
            let z = g.matmul(o, tv);
            let sc = g.scores(qv, kv, vec![vec![Some(2), None, Some(0)], vec![Some(1)]], 0.5);
            let a = g.cross_entropy(z, vec![2, 0]);
            let b = g.cross_entropy(sc, vec![2, 0]);
            g.sum(vec![a, b])
        });
    }

    #[test]
    fn masked_cross_entropy() {
        let s = ParamStore::new();
        let mut g = Graph::new(&s, false);
        let l = g.constant(Tensor::row_vector(vec![f64::NEG_INFINITY, 0.0, 0.0]));
        let ce = g.cross_entropy(l, vec![1]);
        assert!((g.value(ce).item() - 2f64.ln()).abs() < 1e-12);
        let mut grads = Grads::zeros_like(&s);
        g.backward(ce, &mut grads);
    }

    #[test]
    fn dropout_only_in_training() {
        let s = ParamStore::new();
        let mut r = rng();
        let mut g = Graph::new(&s, false);
        let x = g.constant(Tensor::row_vector(vec![1.0; 100]));
        assert_eq!(g.dropout(x, 0.5, &mut r), x);
        let mut g = Graph::new(&s, true);
        let x = g.constant(Tensor::row_vector(vec![1.0; 100]));
        let y = g.dropout(x, 0.5, &mut r);
        assert!(g.value(y).data.iter().all(|v| *v == 0.0 || *v == 2.0));
    }
}
