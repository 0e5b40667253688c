//! Answer/strategy classifiers, parent attention over the path, path focus
//! and child attention over facts, rules, NAF and END.

use ibr_core::{NodeRef, PartialProof, Strategy, Theory};
use rand::Rng;

use crate::config::ModelConfig;
use crate::encoder::EncodedBatch;
use crate::error::{Error, Result};
use crate::graph::{Graph, Segment, Var};
use crate::layers::{AttentionProj, FeedForward, Linear, Lstm, Norm};
use crate::params::{init, Group, ParamId, ParamStore};
use crate::tensor::softmax;

#[derive(Clone, Debug)]
struct FocusBlock {
    attn: AttentionProj,
    ln1: Norm,
    ff: FeedForward,
    ln2: Norm,
}

#[derive(Clone, Debug)]
pub struct HeadParams {
    pub qa: Linear,
    pub strategy: Linear,
    pub f_q: Linear,
    pub f_k: Linear,
    pub path: Lstm,
    focus: Vec<FocusBlock>,
    pub focus_pos: ParamId,
    pub focus_lstm: Lstm,
    pub f_u: Linear,
    pub f_naf: Linear,
    pub end: ParamId,
    pub child_q: Linear,
    pub child_k: Linear,
    d: usize,
    focus_pos_emb: bool,
}

/// Per-batch state shared by every decoding step.
///
/// Node rows (`nodes`): per sample `[h_Q, h_g1..h_gk]`, then one `h_NAF` row per sample.
/// Candidate rows (`cands`): per sample `[h_n1..h_nk]`, then one `h_NAF` row per sample, then `h_END`.
#[derive(Clone, Debug)]
pub struct BatchState {
    pub enc: EncodedBatch,
    pub qa_logits: Var,
    pub strategy_logits: Var,
    pub naf: Var,
    pub nodes: Var,
    pub cands: Var,
    parent_rows: usize,
    child_rows: usize,
    node_keys: Option<Var>,
    cand_keys: Option<Var>,
}

impl BatchState {
    pub fn batch(&self) -> usize {
        self.enc.sizes.len()
    }

    /// Row of `node` (Q, a sentence or NAF) for sample `b` in `nodes`.
    pub fn node_row(&self, b: usize, theory: &Theory, node: NodeRef) -> usize {
        match node {
            NodeRef::Question => self.enc.parent_offsets[b],
            NodeRef::Naf => self.parent_rows + b,
            _ => self.enc.parent_offsets[b] + 1 + theory.context_index(node).expect("node belongs to the theory"),
        }
    }

    /// Row of child candidate `i` (an index into H_c) for sample `b` in `cands`.
    pub fn cand_row(&self, b: usize, i: usize) -> usize {
        let k = self.enc.sizes[b];
        if i < k {
            self.enc.child_offsets[b] + i
        } else if i == k {
            self.child_rows + b
        } else {
            self.child_rows + self.batch()
        }
    }
}

/// Index of `node` in H_c = `[sentences.., NAF, END]`.
pub fn cand_index(theory: &Theory, node: NodeRef) -> Option<usize> {
    match node {
        NodeRef::Naf => Some(theory.len()),
        NodeRef::End => Some(theory.len() + 1),
        _ => theory.context_index(node),
    }
}

pub fn cand_node(theory: &Theory, i: usize) -> NodeRef {
    let k = theory.len();
    if i < k {
        theory.node_at(i).expect("index within context")
    } else if i == k {
        NodeRef::Naf
    } else {
        NodeRef::End
    }
}

/// Child candidates open under `parent`, indexed like H_c.
///
/// FAIL_PROOF masks facts (and NAF when `mask_naf`). Decoding additionally
/// excludes duplicate edges, edges closing a cycle, a second child of Q and
/// any child of NAF. END is always open.
pub fn child_mask(theory: &Theory, partial: &PartialProof, parent: NodeRef, strategy: Strategy, mask_naf: bool) -> Vec<bool> {
    let fail = strategy == Strategy::FailProof;
    let closed = parent == NodeRef::Naf || (parent == NodeRef::Question && !partial.children(parent).is_empty());
    (0..theory.len() + 2)
        .map(|i| {
            let node = cand_node(theory, i);
            match node {
                NodeRef::End => true,
                _ if closed => false,
                NodeRef::Naf if fail && mask_naf => false,
                NodeRef::Fact(_) if fail => false,
                _ => !partial.has_edge(parent, node) && !partial.would_cycle(parent, node),
            }
        })
        .collect()
}

/// One parent-prediction query: the current path in level-traversal order.
#[derive(Clone, Copy, Debug)]
pub struct PathQuery<'a> {
    pub sample: usize,
    pub theory: &'a Theory,
    pub path: &'a [NodeRef],
}

/// One child-prediction query: path, chosen parent position, strategy and open candidates.
#[derive(Clone, Copy, Debug)]
pub struct ChildQuery<'a> {
    pub sample: usize,
    pub theory: &'a Theory,
    pub path: &'a [NodeRef],
    pub parent: usize,
    pub strategy: Strategy,
    pub allowed: &'a [bool],
}

impl HeadParams {
    /// Toggles the position embedding in path focus selection (an inference-time ablation).
    pub fn set_focus_pos_emb(&mut self, on: bool) {
        self.focus_pos_emb = on;
    }

    pub fn new(store: &mut ParamStore, config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = config.d;
        let focus = (0..config.focus_blocks)
            .map(|l| FocusBlock {
                attn: AttentionProj::new(store, &format!("focus.{l}.attn"), Group::Child, d, rng),
                ln1: Norm::new(store, &format!("focus.{l}.ln1"), Group::Child, d),
                ff: FeedForward::new(store, &format!("focus.{l}.ff"), Group::Child, d, config.focus_d_ff, rng),
                ln2: Norm::new(store, &format!("focus.{l}.ln2"), Group::Child, d),
            })
            .collect();
        HeadParams {
            qa: Linear::new(store, "f_qa", Group::Classifier, d, 2, rng),
            strategy: Linear::new(store, "f_strategy", Group::Classifier, d, 2, rng),
            f_q: Linear::new(store, "f_q", Group::Parent, d, d, rng),
            f_k: Linear::new(store, "f_k", Group::Parent, d, d, rng),
            path: Lstm::new(store, "path_lstm", d, d, rng),
            focus,
            focus_pos: store.add("focus.positions", Group::Child, init::embedding(config.max_path, d, rng)),
            focus_lstm: Lstm::new(store, "focus_lstm", d, config.d_f, rng),
            f_u: Linear::new(store, "f_u", Group::Child, d + config.d_f, d, rng),
            f_naf: Linear::new(store, "f_naf", Group::Child, d, d, rng),
            end: store.add("h_end", Group::Child, init::uniform(1, d, (3.0 / d as f64).sqrt(), rng)),
            child_q: Linear::new(store, "child_q", Group::Child, d, d, rng),
            child_k: Linear::new(store, "child_k", Group::Child, d, d, rng),
            d,
            focus_pos_emb: config.focus_pos_emb,
        }
    }

    /// Classifier logits, h_NAF and the node/candidate matrices.
    pub fn prepare(&self, g: &mut Graph, enc: EncodedBatch) -> BatchState {
        let qa_logits = self.qa.apply(g, enc.cls);
        let strategy_logits = self.strategy.apply(g, enc.cls);
        let naf = self.f_naf.apply(g, enc.cls);
        let end = g.param(self.end);
        let nodes = g.concat_rows(vec![enc.parent, naf]);
        let cands = g.concat_rows(vec![enc.child, naf, end]);
        let parent_rows = g.shape(enc.parent).0;
        let child_rows = g.shape(enc.child).0;
        BatchState {
            enc,
            qa_logits,
            strategy_logits,
            naf,
            nodes,
            cands,
            parent_rows,
            child_rows,
            node_keys: None,
            cand_keys: None,
        }
    }

    fn scale(&self) -> f64 {
        1.0 / (self.d as f64).sqrt()
    }

    fn path_rows(st: &BatchState, sample: usize, theory: &Theory, path: &[NodeRef]) -> Vec<usize> {
        path.iter().map(|n| st.node_row(sample, theory, *n)).collect()
    }

    /// Scaled parent-attention logits, one row per query over its path positions.
    pub fn parent_scores(&self, g: &mut Graph, st: &mut BatchState, queries: &[PathQuery]) -> Var {
        let seqs: Vec<Vec<usize>> = queries.iter().map(|q| Self::path_rows(st, q.sample, q.theory, q.path)).collect();
        let lists = seqs.iter().map(|s| s.iter().map(|r| Some(*r)).collect()).collect();
        let h = self.path.run(g, st.nodes, seqs);
        let q = self.f_q.apply(g, h);
        let keys = match st.node_keys {
            Some(k) => k,
            None => *st.node_keys.insert(self.f_k.apply(g, st.nodes)),
        };
        g.scores(q, keys, lists, self.scale())
    }

    /// Focus vector h_F per query.
    pub fn path_focus(&self, g: &mut Graph, st: &BatchState, queries: &[ChildQuery]) -> Var {
        let branch = self.focus_attention(g, st, queries);
        let seqs: Vec<Vec<usize>> = queries.iter().map(|q| Self::path_rows(st, q.sample, q.theory, q.path)).collect();
        let focus = self.focus_lstm.run(g, st.nodes, seqs);
        let cat = g.concat_cols(vec![branch, focus]);
        self.f_u.apply(g, cat)
    }

    /// Cross-attention branch of the focus: the parent attends over the path
    /// under PROOF, and passes through unchanged under FAIL_PROOF.
    pub fn focus_attention(&self, g: &mut Graph, st: &BatchState, queries: &[ChildQuery]) -> Var {
        let seqs: Vec<Vec<usize>> = queries.iter().map(|q| Self::path_rows(st, q.sample, q.theory, q.path)).collect();
        let parent_rows: Vec<usize> = queries.iter().zip(&seqs).map(|(q, s)| s[q.parent]).collect();
        let (proof, fail): (Vec<usize>, Vec<usize>) =
            (0..queries.len()).partition(|&i| queries[i].strategy == Strategy::Proof);

        let mut parts = Vec::new();
        if !proof.is_empty() {
            let mut kv_rows = Vec::new();
            let mut kv_pos = Vec::new();
            let mut segments = Vec::with_capacity(proof.len());
            for (j, &i) in proof.iter().enumerate() {
                let start = kv_rows.len();
                kv_rows.extend_from_slice(&seqs[i]);
                kv_pos.extend(0..seqs[i].len());
                segments.push(Segment { q: j..j + 1, kv: start..kv_rows.len() });
            }
            let mut x = g.rows(st.nodes, proof.iter().map(|&i| parent_rows[i]).collect());
            let mut kv = g.rows(st.nodes, kv_rows);
            if self.focus_pos_emb {
                let qp = g.embed(self.focus_pos, proof.iter().map(|&i| queries[i].parent).collect());
                x = g.add(x, qp);
                let kp = g.embed(self.focus_pos, kv_pos);
                kv = g.add(kv, kp);
            }
            for block in &self.focus {
                let a = block.attn.apply(g, x, kv, 1, segments.clone());
                let y = g.add(x, a);
                x = block.ln1.apply(g, y);
                let f = block.ff.apply(g, x);
                let y = g.add(x, f);
                x = block.ln2.apply(g, y);
            }
            parts.push(x);
        }
        if !fail.is_empty() {
            parts.push(g.rows(st.nodes, fail.iter().map(|&i| parent_rows[i]).collect()));
        }
        let mut branch = if parts.len() == 1 { parts[0] } else { g.concat_rows(parts) };
        let order: Vec<usize> = proof.iter().chain(&fail).copied().collect();
        if order.iter().enumerate().any(|(j, &i)| i != j) {
            let mut inverse = vec![0; order.len()];
            for (j, &i) in order.iter().enumerate() {
                inverse[i] = j;
            }
            branch = g.rows(branch, inverse);
        }
        branch
    }

    /// Scaled child-attention logits over H_c; masked candidates are `-inf`.
    pub fn child_scores(&self, g: &mut Graph, st: &mut BatchState, queries: &[ChildQuery]) -> Result<Var> {
        let mut lists = Vec::with_capacity(queries.len());
        for q in queries {
            if !q.allowed.iter().any(|a| *a) {
                return Err(Error::DegenerateMask(format!("batch item {}", q.sample)));
            }
            let list = q.allowed.iter().enumerate().map(|(i, ok)| ok.then(|| st.cand_row(q.sample, i))).collect();
            lists.push(list);
        }
        let hf = self.path_focus(g, st, queries);
        let q = self.child_q.apply(g, hf);
        let keys = match st.cand_keys {
            Some(k) => k,
            None => *st.cand_keys.insert(self.child_k.apply(g, st.cands)),
        };
        Ok(g.scores(q, keys, lists, self.scale()))
    }
}

/// Softmax of a two-way classifier row.
pub fn predict_pair(logits: &[f64]) -> [f64; 2] {
    let p = softmax(logits, None);
    [p[0], p[1]]
}

/// Attention weights over the finite entries of a score row.
pub fn attention_weights(scores: &[f64]) -> Vec<f64> {
    let allowed: Vec<bool> = scores.iter().map(|s| s.is_finite()).collect();
    softmax(scores, Some(&allowed))
}

/// Lowest index among the maxima of the allowed entries.
pub fn argmax(weights: &[f64], allowed: Option<&[bool]>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, w) in weights.iter().enumerate() {
        if allowed.is_some_and(|a| !a[i]) {
            continue;
        }
        if best.map_or(true, |b| *w > weights[b]) {
            best = Some(i);
        }
    }
    best
}

/// PROOF: highest weight (lowest index on ties). FAIL_PROOF: the last path node.
pub fn select_parent(weights: &[f64], strategy: Strategy) -> usize {
    match strategy {
        Strategy::Proof => argmax(weights, None).expect("non-empty path"),
        Strategy::FailProof => weights.len() - 1,
    }
}

pub fn select_child(weights: &[f64], allowed: &[bool]) -> Option<usize> {
    argmax(weights, Some(allowed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ibr_core::fixtures::t1;

    #[test]
    fn selection_examples() {
        assert_eq!(select_parent(&[0.1, 0.7, 0.2], Strategy::Proof), 1);
        assert_eq!(select_parent(&[0.4, 0.4, 0.2], Strategy::Proof), 0);
        assert_eq!(select_parent(&[0.9, 0.05, 0.05], Strategy::FailProof), 2);
        assert_eq!(select_child(&[0.1, 0.2, 0.7], &[true, true, true]), Some(2));
        assert_eq!(select_child(&[0.1, 0.3, 0.6], &[true, true, false]), Some(1));
        assert_eq!(select_child(&[0.5, 0.5], &[true, true]), Some(0));
        assert_eq!(predict_pair(&[0.0, 0.0]), [0.5, 0.5]);
        let p = predict_pair(&[3f64.ln(), 0.0]);
        assert!((p[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn masks() {
        let t = t1();
        let mut p = PartialProof::new();
        let fail = child_mask(&t, &p, NodeRef::Question, Strategy::FailProof, true);
        assert_eq!(fail, vec![false, false, true, true, true, false, true]);
        let facts_only = child_mask(&t, &p, NodeRef::Question, Strategy::FailProof, false);
        assert!(facts_only[5]);
        p.add_edge(NodeRef::Question, NodeRef::Rule(2)).unwrap();
        p.add_edge(NodeRef::Rule(2), NodeRef::Rule(1)).unwrap();
        let q = child_mask(&t, &p, NodeRef::Question, Strategy::Proof, true);
        assert_eq!(q, vec![false, false, false, false, false, false, true]);
        let r1 = child_mask(&t, &p, NodeRef::Rule(1), Strategy::Proof, true);
        // R2 would close a cycle; R1 cannot be its own child.
        assert_eq!(r1, vec![true, true, false, false, true, true, true]);
        let r2 = child_mask(&t, &p, NodeRef::Rule(2), Strategy::Proof, true);
        assert!(!r2[2], "duplicate edge R2->R1");
        let naf = child_mask(&t, &p, NodeRef::Naf, Strategy::Proof, true);
        assert_eq!(naf.iter().filter(|m| **m).count(), 1);
        assert_eq!(cand_node(&t, 5), NodeRef::Naf);
        assert_eq!(cand_index(&t, NodeRef::End), Some(6));
    }
}
