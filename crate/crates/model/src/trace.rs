//! Teacher-forcing traces: the gold construction order of a proof.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use ibr_core::{NodeRef, PartialProof, ProofGraph, Sample, Strategy, Theory};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::heads::{cand_index, child_mask};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceStep {
    /// H_p in level-traversal order before this step.
    pub path: Vec<NodeRef>,
    /// Parent target, an index into `path`.
    pub parent: usize,
    /// Child target, an index into H_c.
    pub child: usize,
    pub child_node: NodeRef,
    /// Open child candidates (see [`child_mask`]).
    pub allowed: Vec<bool>,
    pub include_parent_loss: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldTrace {
    pub strategy: Strategy,
    pub steps: Vec<TraceStep>,
}

/// Construction-graph children of every node of `proof`, grouped NAF, facts, rules.
/// Q's only child is the sink.
pub fn gold_children(proof: &ProofGraph) -> Result<BTreeMap<NodeRef, Vec<NodeRef>>> {
    proof.check_invariants()?;
    let mut out = BTreeMap::new();
    if proof.is_empty() {
        out.insert(NodeRef::Question, Vec::new());
        return Ok(out);
    }
    let sinks = proof.sinks();
    if sinks.len() != 1 {
        return Err(Error::Core(ibr_core::Error::Structure(format!("gold proof has {} sinks", sinks.len()))));
    }
    out.insert(NodeRef::Question, sinks);
    for &n in &proof.nodes {
        // NodeRef order is Fact < Naf < Rule; NAF goes first.
        let mut kids = proof.incoming(n);
        kids.sort_by_key(|k| (*k != NodeRef::Naf, *k));
        out.insert(n, kids);
    }
    Ok(out)
}

/// Gold construction edges: breadth-first from Q, each parent's children
/// NAF, then facts, then rules. With `rng`, order within each type is shuffled.
pub fn gold_edges(proof: &ProofGraph, rng: Option<&mut dyn rand::RngCore>) -> Result<Vec<(NodeRef, NodeRef)>> {
    let mut children = gold_children(proof)?;
    if let Some(rng) = rng {
        for kids in children.values_mut() {
            let split = kids.iter().position(|k| k.is_rule()).unwrap_or(kids.len());
            let start = usize::from(kids.first() == Some(&NodeRef::Naf));
            kids[start..split].shuffle(rng);
            kids[split..].shuffle(rng);
        }
    }
    let mut edges = Vec::new();
    let mut seen = BTreeSet::from([NodeRef::Question]);
    let mut queue = VecDeque::from([NodeRef::Question]);
    while let Some(n) = queue.pop_front() {
        for &c in &children[&n] {
            edges.push((n, c));
            if seen.insert(c) {
                queue.push_back(c);
            }
        }
    }
    Ok(edges)
}

/// Steps replaying `edges` and then selecting END under the last appended node.
pub fn trace_from_edges(
    theory: &Theory,
    strategy: Strategy,
    edges: &[(NodeRef, NodeRef)],
    mask_naf: bool,
) -> Result<GoldTrace> {
    let mut partial = PartialProof::new();
    let mut steps = Vec::with_capacity(edges.len() + 1);
    let pairs = edges.iter().copied().map(Some).chain([None]);
    for pair in pairs {
        let (parent, child) = pair.unwrap_or((partial.last_appended(), NodeRef::End));
        let path = partial.level_order();
        let parent_pos = path.iter().position(|n| *n == parent).ok_or_else(|| {
            Error::Core(ibr_core::Error::Structure(format!("parent {parent} is not on the path")))
        })?;
        let allowed = child_mask(theory, &partial, parent, strategy, mask_naf);
        let child_idx = cand_index(theory, child)
            .ok_or_else(|| Error::Core(ibr_core::Error::Structure(format!("{child} is not in the context"))))?;
        if !allowed[child_idx] {
            return Err(Error::Core(ibr_core::Error::Structure(format!("gold edge {parent}->{child} is masked"))));
        }
        steps.push(TraceStep {
            path,
            parent: parent_pos,
            child: child_idx,
            child_node: child,
            allowed,
            include_parent_loss: strategy == Strategy::Proof,
        });
        if child != NodeRef::End {
            partial.add_edge(parent, child)?;
        }
    }
    Ok(GoldTrace { strategy, steps })
}

/// Trace of the sample's canonical proof; `rng` shuffles within node types.
pub fn build_gold_trace(sample: &Sample, mask_naf: bool, rng: &mut impl Rng) -> Result<GoldTrace> {
    let edges = gold_edges(sample.canonical_proof(), Some(rng))?;
    trace_from_edges(&sample.theory, sample.strategy, &edges, mask_naf)
}

impl GoldTrace {
    /// Proof obtained by applying every non-END step.
    pub fn replay(&self) -> Result<ProofGraph> {
        let mut partial = PartialProof::new();
        for s in &self.steps {
            if s.child_node != NodeRef::End {
                partial.add_edge(s.path[s.parent], s.child_node)?;
            }
        }
        Ok(partial.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ibr_core::fixtures::{question, t1, t1_with};
    use ibr_core::{extract_gold_proof, fail_chain, Atom};
    use rand::SeedableRng;
    use NodeRef::*;

    fn sample(theory: Theory, q: ibr_core::Question, strategy: Strategy, proof: ProofGraph) -> Sample {
        let depth = proof.depth();
        Sample { id: "t".into(), theory, question: q, answer: true, strategy, depth, gold_proofs: vec![proof] }
    }

    #[test]
    fn chain_trace() {
        let t = t1();
        let q = question("Anne", "happy", true);
        let (gold, _) = extract_gold_proof(&t, &q).unwrap();
        let s = sample(t, q, Strategy::Proof, gold.clone());
        let tr = build_gold_trace(&s, true, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).unwrap();
        let pairs: Vec<(NodeRef, NodeRef)> = tr.steps.iter().map(|s| (s.path[s.parent], s.child_node)).collect();
        assert_eq!(pairs, vec![(Question, Rule(2)), (Rule(2), Rule(1)), (Rule(1), Fact(1)), (Fact(1), End)]);
        assert!(tr.steps.iter().all(|s| s.include_parent_loss));
        assert_eq!(tr.replay().unwrap(), gold);
    }

    #[test]
    fn naf_then_facts_then_rules() {
        let g = ProofGraph::new(
            [Rule(1), Naf, Fact(2), Fact(1), Rule(3), Rule(2)],
            [(Naf, Rule(1)), (Fact(2), Rule(1)), (Fact(1), Rule(1)), (Rule(3), Rule(1)), (Rule(2), Rule(1))],
        );
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut orders = BTreeSet::new();
        for _ in 0..20 {
            let e = gold_edges(&g, Some(&mut rng)).unwrap();
            let kids: Vec<NodeRef> = e.iter().filter(|(p, _)| *p == Rule(1)).map(|(_, c)| *c).collect();
            assert_eq!(kids[0], Naf);
            assert!(kids[1].is_fact() && kids[2].is_fact());
            assert!(kids[3].is_rule() && kids[4].is_rule());
            orders.insert(kids);
        }
        assert!(orders.len() > 1, "within-type order is shuffled");
        assert_eq!(gold_edges(&g, None).unwrap()[1..3], [(Rule(1), Naf), (Rule(1), Fact(1))]);
    }

    #[test]
    fn empty_fail_trace() {
        let t = t1();
        let q = question("Anne", "kind", true);
        let s = sample(t, q, Strategy::FailProof, ProofGraph::default());
        let tr = build_gold_trace(&s, true, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(tr.steps.len(), 1);
        assert_eq!((tr.steps[0].path[tr.steps[0].parent], tr.steps[0].child_node), (Question, End));
        assert!(!tr.steps[0].include_parent_loss);
    }

    #[test]
    fn fail_chain_trace_uses_last_node() {
        let t = t1_with(&[], &[(vec![Atom::var("happy", true)], Atom::var("rich", true))]);
        let q = question("Bob", "rich", true);
        let chain = fail_chain(&t, &q).unwrap();
        let s = sample(t, q, Strategy::FailProof, chain.clone());
        let tr = build_gold_trace(&s, true, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).unwrap();
        for st in &tr.steps {
            assert_eq!(st.parent, st.path.len() - 1);
            assert!(!st.include_parent_loss);
        }
        assert_eq!(tr.replay().unwrap(), chain);
    }
}
