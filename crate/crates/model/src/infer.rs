//! Iterative backward decoding: answer and strategy first, then alternating
//! parent and child selection until END, greedily or with beam search.

use std::collections::BTreeMap;

use ibr_core::metrics::{Prediction, StepRecord};
use ibr_core::{NodeRef, PartialProof, ProofGraph, Sample, Strategy};
use rand::SeedableRng;

use crate::config::InferConfig;
use crate::encoder::EncoderInput;
use crate::error::Result;
use crate::graph::Graph;
use crate::heads::{
    argmax, attention_weights, cand_index, cand_node, child_mask, predict_pair, select_parent,
    BatchState, ChildQuery, PathQuery,
};
use crate::model::Model;
use crate::trace::gold_children;

/// Parents and children expanded per hypothesis at each beam step.
pub const BEAM_PARENTS: usize = 4;
pub const BEAM_CHILDREN: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub partial: PartialProof,
    /// Sum of log parent weight and log child weight over all steps.
    pub score: f64,
    pub finished: bool,
    pub steps: Vec<StepRecord>,
}

impl Hypothesis {
    fn new() -> Self {
        Hypothesis { partial: PartialProof::new(), score: 0.0, finished: false, steps: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub answer: bool,
    pub strategy: Strategy,
    pub p_answer: [f64; 2],
    pub p_strategy: [f64; 2],
    pub proof: ProofGraph,
    pub score: f64,
    pub truncated: bool,
    pub steps: Vec<StepRecord>,
    /// Finished hypotheses in decreasing score order (beam search only).
    pub beam: Vec<Hypothesis>,
}

impl Decoded {
    pub fn to_prediction(&self, id: &str) -> Prediction {
        Prediction {
            id: id.to_owned(),
            answer: self.answer,
            strategy: self.strategy,
            proof: self.proof.clone(),
            truncated: self.truncated,
            steps: self.steps.clone(),
        }
    }
}

/// Gold-forcing oracle built from the canonical proof.
struct Oracle {
    children: BTreeMap<NodeRef, Vec<NodeRef>>,
}

impl Oracle {
    fn new(sample: &Sample) -> Result<Self> {
        Ok(Oracle { children: gold_children(sample.canonical_proof())? })
    }

    fn pending(&self, partial: &PartialProof, node: NodeRef) -> Option<NodeRef> {
        self.children.get(&node)?.iter().copied().find(|c| !partial.has_edge(node, *c))
    }

    /// First path node with a gold child still missing, else the last appended node.
    fn parent(&self, partial: &PartialProof, path: &[NodeRef]) -> usize {
        path.iter()
            .position(|n| self.pending(partial, *n).is_some())
            .unwrap_or_else(|| path.iter().position(|n| *n == partial.last_appended()).expect("on path"))
    }

    fn child(&self, partial: &PartialProof, parent: NodeRef) -> NodeRef {
        self.pending(partial, parent).unwrap_or(NodeRef::End)
    }
}

struct Decoder<'a, 'p> {
    model: &'p Model,
    sample: &'a Sample,
    config: &'a InferConfig,
    strategy: Strategy,
    oracle: Option<Oracle>,
    g: Graph<'p>,
    st: BatchState,
}

/// One scored continuation of a hypothesis.
struct Expansion {
    hyp: usize,
    parent: NodeRef,
    child: NodeRef,
    p_parent: f64,
    p_child: f64,
    score: f64,
}

impl<'a, 'p> Decoder<'a, 'p> {
    fn mask_naf(&self) -> bool {
        self.model.config.fail_mask_naf
    }

    /// Candidate continuations of `hyps`: greedy first per hypothesis, then
    /// the top parents crossed with their top children.
    fn expand(&mut self, hyps: &[&Hypothesis], width: (usize, usize)) -> Result<Vec<Vec<Expansion>>> {
        let theory = &self.sample.theory;
        let paths: Vec<Vec<NodeRef>> = hyps.iter().map(|h| h.partial.level_order()).collect();
        // Parent candidates with their weights.
        let parent_weights: Vec<Option<Vec<f64>>> = if self.strategy == Strategy::Proof {
            let queries: Vec<PathQuery> =
                paths.iter().map(|p| PathQuery { sample: 0, theory, path: p }).collect();
            let scores = self.model.heads.parent_scores(&mut self.g, &mut self.st, &queries);
            let t = self.g.value(scores);
            (0..paths.len()).map(|i| Some(attention_weights(&t.row(i)[..paths[i].len()]))).collect()
        } else {
            vec![None; paths.len()]
        };
        let mut parent_sets = Vec::with_capacity(hyps.len());
        for (i, hyp) in hyps.iter().enumerate() {
            let path = &paths[i];
            let w = parent_weights[i].as_deref();
            let forced = self.config.force_gold_parent.then(|| self.oracle.as_ref().unwrap().parent(&hyp.partial, path));
            let set: Vec<(usize, f64)> = match (forced, w) {
                (Some(p), w) => vec![(p, w.map_or(1.0, |w| w[p]))],
                (None, None) => vec![(select_parent(&vec![0.0; path.len()], Strategy::FailProof), 1.0)],
                (None, Some(w)) => top_k(w, None, width.0).into_iter().map(|j| (j, w[j])).collect(),
            };
            parent_sets.push(set);
        }
        // Child weights for every (hypothesis, parent) pair.
        let mut masks = Vec::new();
        let mut owners = Vec::new();
        for (i, set) in parent_sets.iter().enumerate() {
            for &(p, pw) in set {
                let parent = paths[i][p];
                masks.push(child_mask(theory, &hyps[i].partial, parent, self.strategy, self.mask_naf()));
                owners.push((i, p, pw));
            }
        }
        let queries: Vec<ChildQuery> = owners
            .iter()
            .zip(&masks)
            .map(|(&(i, p, _), m)| ChildQuery {
                sample: 0,
                theory,
                path: &paths[i],
                parent: p,
                strategy: self.strategy,
                allowed: m,
            })
            .collect();
        let scores = self.model.heads.child_scores(&mut self.g, &mut self.st, &queries)?;
        let width_c = theory.len() + 2;
        let mut out: Vec<Vec<Expansion>> = (0..hyps.len()).map(|_| Vec::new()).collect();
        for (q, &(i, p, pw)) in owners.iter().enumerate() {
            let row = &self.g.value(scores).row(q)[..width_c];
            let cw = attention_weights(row);
            let parent = paths[i][p];
            let children: Vec<usize> = if self.config.force_gold_child {
                let c = self.oracle.as_ref().unwrap().child(&hyps[i].partial, parent);
                vec![cand_index(theory, c).expect("gold child in context")]
            } else {
                top_k(&cw, Some(&masks[q]), width.1)
            };
            for c in children {
                out[i].push(Expansion {
                    hyp: i,
                    parent,
                    child: cand_node(theory, c),
                    p_parent: pw,
                    p_child: cw[c],
                    score: hyps[i].score + pw.ln() + cw[c].ln(),
                });
            }
        }
        Ok(out)
    }
}

/// Indices of the `k` largest allowed weights, ties by lower index.
fn top_k(weights: &[f64], allowed: Option<&[bool]>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).filter(|&i| allowed.map_or(true, |a| a[i])).collect();
    idx.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    idx.truncate(k);
    debug_assert_eq!(idx.first().copied(), argmax(weights, allowed));
    idx
}

fn apply(hyp: &Hypothesis, e: &Expansion) -> Hypothesis {
    let mut next = hyp.clone();
    next.score = e.score;
    next.steps.push(StepRecord { parent: e.parent, child: e.child, p_parent: e.p_parent, p_child: e.p_child });
    if e.child == NodeRef::End {
        next.finished = true;
    } else {
        next.partial.add_edge(e.parent, e.child).expect("masked decoding keeps the proof well formed");
    }
    next
}

/// Decode one sample. `beam_size == 1` is greedy decoding.
pub fn generate_proof(model: &Model, sample: &Sample, config: &InferConfig) -> Result<Decoded> {
    let input = model.input(sample)?;
    generate_with_input(model, sample, &input, config)
}

pub fn generate_with_input(model: &Model, sample: &Sample, input: &EncoderInput, config: &InferConfig) -> Result<Decoded> {
    config.validate()?;
    let mut g = Graph::new(&model.store, false);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let st = model.forward(&mut g, &[input], 0.0, &mut rng)?;
    let p_answer = predict_pair(g.value(st.qa_logits).row(0));
    let p_strategy = predict_pair(g.value(st.strategy_logits).row(0));
    let strategy = config.strategy_override.unwrap_or_else(|| Strategy::from_index(argmax(&p_strategy, None).unwrap()));
    let mut answer = argmax(&p_answer, None) == Some(0);
    if config.rule_based_fail_answer && strategy == Strategy::FailProof {
        answer = !sample.question.atom.polarity;
    }
    let oracle = if config.force_gold_parent || config.force_gold_child { Some(Oracle::new(sample)?) } else { None };
    let mut dec = Decoder { model, sample, config, strategy, oracle, g, st };

    let k = config.beam_size;
    let mut anchor = Hypothesis::new();
    let mut others: Vec<Hypothesis> = Vec::new();
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..config.max_steps {
        if anchor.finished && others.is_empty() {
            break;
        }
        let best_done = finished.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        let best_live =
            others.iter().chain((!anchor.finished).then_some(&anchor)).map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        if !finished.is_empty() && best_done >= best_live {
            break;
        }
        let mut pool: Vec<Hypothesis> = Vec::new();
        // The greedy step is computed on its own so its arithmetic matches greedy decoding exactly.
        if !anchor.finished {
            let greedy = dec.expand(&[&anchor], (1, 1))?.remove(0).remove(0);
            if k > 1 {
                for e in dec.expand(&[&anchor], (BEAM_PARENTS, BEAM_CHILDREN))?.remove(0) {
                    if (e.parent, e.child) != (greedy.parent, greedy.child) {
                        pool.push(apply(&anchor, &e));
                    }
                }
            }
            anchor = apply(&anchor, &greedy);
            if anchor.finished {
                finished.push(anchor.clone());
            }
        }
        if !others.is_empty() {
            let refs: Vec<&Hypothesis> = others.iter().collect();
            for exps in dec.expand(&refs, (BEAM_PARENTS, BEAM_CHILDREN))? {
                pool.extend(exps.iter().map(|e| apply(&others[e.hyp], e)));
            }
        }
        // Stable sort keeps insertion order among equal scores.
        pool.sort_by(|a, b| b.score.total_cmp(&a.score));
        pool.truncate(k - 1);
        others.clear();
        for h in pool {
            if h.finished {
                finished.push(h);
            } else {
                others.push(h);
            }
        }
    }
    let mut candidates = finished;
    let anchor_truncated = !anchor.finished;
    if anchor_truncated {
        candidates.push(anchor.clone());
    }
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
    let best = candidates[0].clone();
    Ok(Decoded {
        answer,
        strategy,
        p_answer,
        p_strategy,
        proof: best.partial.finalize(),
        score: best.score,
        truncated: !best.finished,
        steps: best.steps.clone(),
        beam: if k > 1 { candidates } else { Vec::new() },
    })
}

/// Decode every sample, optionally on several threads.
pub fn predict(model: &Model, samples: &[Sample], config: &InferConfig, workers: usize) -> Result<Vec<Prediction>> {
    let workers = workers.max(1).min(samples.len().max(1));
    let chunk = samples.len().div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|s| generate_proof(model, s, config).map(|d| d.to_prediction(&s.id)))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(samples.len());
        for h in handles {
            out.extend(h.join().expect("decoding worker panicked")?);
        }
        Ok(out)
    })
}
