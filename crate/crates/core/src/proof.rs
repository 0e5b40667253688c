//! Proof graphs and the question-rooted construction graph that the
//! backward decoder grows one edge at a time.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::theory::NodeRef;

/// Final proof: edges point from the supporting node to the supported node.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProofGraph {
    pub nodes: BTreeSet<NodeRef>,
    pub edges: BTreeSet<(NodeRef, NodeRef)>,
}

impl ProofGraph {
    pub fn new(nodes: impl IntoIterator<Item = NodeRef>, edges: impl IntoIterator<Item = (NodeRef, NodeRef)>) -> Self {
        ProofGraph { nodes: nodes.into_iter().collect(), edges: edges.into_iter().collect() }
    }

    pub fn single(node: NodeRef) -> Self {
        ProofGraph::new([node], [])
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn sinks(&self) -> Vec<NodeRef> {
        self.nodes.iter().copied().filter(|n| !self.edges.iter().any(|(from, _)| from == n)).collect()
    }

    pub fn incoming(&self, node: NodeRef) -> Vec<NodeRef> {
        self.edges.iter().filter(|(_, to)| *to == node).map(|(from, _)| *from).collect()
    }

    pub fn outgoing(&self, node: NodeRef) -> Vec<NodeRef> {
        self.edges.iter().filter(|(from, _)| *from == node).map(|(_, to)| *to).collect()
    }

    /// Nodes ordered so that every edge goes forward, or `None` on a cycle.
    pub fn topological_order(&self) -> Option<Vec<NodeRef>> {
        let mut indeg: BTreeMap<NodeRef, usize> = self.nodes.iter().map(|n| (*n, 0)).collect();
        for (_, to) in &self.edges {
            *indeg.get_mut(to)? += 1;
        }
        let mut ready: VecDeque<NodeRef> = indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop_front() {
            order.push(n);
            for (from, to) in &self.edges {
                if *from == n {
                    let d = indeg.get_mut(to)?;
                    *d -= 1;
                    if *d == 0 {
                        ready.push_back(*to);
                    }
                }
            }
        }
        (order.len() == self.nodes.len()).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    /// Structural invariants: endpoints present, acyclic, a single sink when
    /// non-empty, no edges into NAF, no reserved Q/END nodes.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Structure(m.to_owned()));
        if self.nodes.iter().any(|n| matches!(n, NodeRef::Question | NodeRef::End)) {
            return fail("proof contains a reserved Q/END node");
        }
        if self.edges.iter().any(|(a, b)| !self.nodes.contains(a) || !self.nodes.contains(b)) {
            return fail("edge endpoint missing from node set");
        }
        if self.edges.iter().any(|(_, b)| *b == NodeRef::Naf) {
            return fail("NAF has an incoming edge");
        }
        if !self.is_acyclic() {
            return fail("proof has a cycle");
        }
        if !self.nodes.is_empty() && self.sinks().len() != 1 {
            return fail("proof does not end in exactly one node");
        }
        Ok(())
    }

    /// Number of rule nodes on the longest path; 0 for fact-only proofs.
    pub fn depth(&self) -> usize {
        let Some(order) = self.topological_order() else { return 0 };
        let mut best: BTreeMap<NodeRef, usize> = BTreeMap::new();
        for n in &order {
            let own = usize::from(n.is_rule());
            let from = self.incoming(*n).iter().map(|m| best[m]).max().unwrap_or(0);
            best.insert(*n, from + own);
        }
        best.values().copied().max().unwrap_or(0)
    }

    /// Whether the graph is a simple path (or empty / a single node).
    pub fn is_chain(&self) -> bool {
        if self.nodes.is_empty() {
            return self.edges.is_empty();
        }
        self.edges.len() + 1 == self.nodes.len()
            && self.nodes.iter().all(|n| self.incoming(*n).len() <= 1 && self.outgoing(*n).len() <= 1)
            && self.is_acyclic()
    }
}

#[derive(Serialize, Deserialize)]
struct ProofRecord {
    nodes: Vec<NodeRef>,
    edges: Vec<(NodeRef, NodeRef)>,
}

impl Serialize for ProofGraph {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ProofRecord { nodes: self.nodes.iter().copied().collect(), edges: self.edges.iter().copied().collect() }
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ProofGraph {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rec = ProofRecord::deserialize(deserializer)?;
        Ok(ProofGraph::new(rec.nodes, rec.edges))
    }
}

/// Construction graph rooted at the question. Edges run parent → child
/// (supported → support); children keep their insertion order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialProof {
    nodes: Vec<NodeRef>,
    children: Vec<Vec<usize>>,
}

impl Default for PartialProof {
    fn default() -> Self {
        PartialProof::new()
    }
}

impl PartialProof {
    pub fn new() -> Self {
        PartialProof { nodes: vec![NodeRef::Question], children: vec![Vec::new()] }
    }

    /// Rebuild from an edge history (in insertion order).
    pub fn from_edges(edges: &[(NodeRef, NodeRef)]) -> Result<Self> {
        let mut p = PartialProof::new();
        for &(parent, child) in edges {
            if !p.contains(parent) {
                return Err(Error::Structure(format!("parent {parent} is not reachable from Q")));
            }
            p.add_edge(parent, child)?;
        }
        Ok(p)
    }

    fn index(&self, node: NodeRef) -> Option<usize> {
        self.nodes.iter().position(|n| *n == node)
    }

    pub fn contains(&self, node: NodeRef) -> bool {
        self.index(node).is_some()
    }

    /// Nodes in insertion order (Q first).
    pub fn nodes(&self) -> &[NodeRef] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn last_appended(&self) -> NodeRef {
        *self.nodes.last().expect("Q is always present")
    }

    pub fn children(&self, node: NodeRef) -> Vec<NodeRef> {
        self.index(node).map(|i| self.children[i].iter().map(|&c| self.nodes[c]).collect()).unwrap_or_default()
    }

    pub fn has_edge(&self, parent: NodeRef, child: NodeRef) -> bool {
        self.children(parent).contains(&child)
    }

    /// Edges in (parent, child) form, grouped by parent insertion order.
    pub fn edges(&self) -> Vec<(NodeRef, NodeRef)> {
        let mut out = Vec::new();
        for (i, kids) in self.children.iter().enumerate() {
            out.extend(kids.iter().map(|&c| (self.nodes[i], self.nodes[c])));
        }
        out
    }

    /// Whether `target` is reachable from `from` along parent → child edges.
    pub fn reaches(&self, from: NodeRef, target: NodeRef) -> bool {
        let (Some(s), Some(t)) = (self.index(from), self.index(target)) else { return false };
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![s];
        while let Some(i) = stack.pop() {
            if i == t {
                return true;
            }
            if !std::mem::replace(&mut seen[i], true) {
                stack.extend(self.children[i].iter().copied());
            }
        }
        false
    }

    /// Adding `parent → child` would close a cycle.
    pub fn would_cycle(&self, parent: NodeRef, child: NodeRef) -> bool {
        parent == child || self.reaches(child, parent)
    }

    /// Attach `child` under `parent`, creating the child node on first use.
    pub fn add_edge(&mut self, parent: NodeRef, child: NodeRef) -> Result<()> {
        let p = self.index(parent).ok_or_else(|| Error::Structure(format!("unknown parent {parent}")))?;
        if matches!(child, NodeRef::Question | NodeRef::End) {
            return Err(Error::Structure(format!("{child} cannot be a child")));
        }
        if self.would_cycle(parent, child) {
            return Err(Error::Structure(format!("edge {parent}->{child} closes a cycle")));
        }
        let c = match self.index(child) {
            Some(c) => c,
            None => {
                self.nodes.push(child);
                self.children.push(Vec::new());
                self.nodes.len() - 1
            }
        };
        if self.children[p].contains(&c) {
            return Err(Error::Structure(format!("duplicate edge {parent}->{child}")));
        }
        self.children[p].push(c);
        Ok(())
    }

    /// Breadth-first order from Q, following children in insertion order.
    pub fn level_order(&self) -> Vec<NodeRef> {
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut out = Vec::with_capacity(self.nodes.len());
        while let Some(i) = queue.pop_front() {
            out.push(self.nodes[i]);
            for &c in &self.children[i] {
                if !std::mem::replace(&mut seen[c], true) {
                    queue.push_back(c);
                }
            }
        }
        out
    }

    /// Drop Q and reverse every remaining edge.
    pub fn finalize(&self) -> ProofGraph {
        let nodes = self.nodes.iter().copied().filter(|n| *n != NodeRef::Question);
        let edges = self
            .edges()
            .into_iter()
            .filter(|(p, _)| *p != NodeRef::Question)
            .map(|(parent, child)| (child, parent));
        ProofGraph::new(nodes, edges)
    }
}

/// Level traversal of a construction graph given as an edge history.
pub fn level_traversal_order(edges: &[(NodeRef, NodeRef)]) -> Result<Vec<NodeRef>> {
    Ok(PartialProof::from_edges(edges)?.level_order())
}

/// Finalize a construction graph given as an edge history.
pub fn finalize_proof(edges: &[(NodeRef, NodeRef)]) -> Result<ProofGraph> {
    Ok(PartialProof::from_edges(edges)?.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use NodeRef::*;

    #[test]
    fn level_traversal_examples() {
        let g = PartialProof::from_edges(&[(Question, Fact(1)), (Question, Fact(3)), (Fact(1), Fact(2))]).unwrap();
        assert_eq!(g.level_order(), vec![Question, Fact(1), Fact(3), Fact(2)]);
        assert_eq!(PartialProof::new().level_order(), vec![Question]);
        let chain = [(Question, Rule(2)), (Rule(2), Rule(1)), (Rule(1), Fact(1))];
        assert_eq!(level_traversal_order(&chain).unwrap(), vec![Question, Rule(2), Rule(1), Fact(1)]);
    }

    #[test]
    fn missing_root_is_structural_error() {
        assert!(level_traversal_order(&[(Rule(1), Fact(1))]).is_err());
    }

    #[test]
    fn finalize_examples() {
        let p = finalize_proof(&[(Question, Rule(1)), (Rule(1), Fact(1))]).unwrap();
        assert_eq!(p, ProofGraph::new([Fact(1), Rule(1)], [(Fact(1), Rule(1))]));
        assert_eq!(finalize_proof(&[(Question, Fact(1))]).unwrap(), ProofGraph::single(Fact(1)));
        assert!(finalize_proof(&[]).unwrap().is_empty());
    }

    #[test]
    fn cycles_and_duplicates_rejected() {
        let mut g = PartialProof::from_edges(&[(Question, Rule(1)), (Rule(1), Rule(2))]).unwrap();
        assert!(g.would_cycle(Rule(2), Rule(1)));
        assert!(g.add_edge(Rule(2), Rule(1)).is_err());
        assert!(g.add_edge(Rule(1), Rule(2)).is_err());
        assert!(g.add_edge(Rule(2), Naf).is_ok());
        assert!(g.add_edge(Rule(1), Naf).is_ok());
        assert_eq!(g.len(), 4);
    }

    #[test]
    fn depth_and_chain() {
        let p = ProofGraph::new([Fact(1), Rule(1), Rule(2)], [(Fact(1), Rule(1)), (Rule(1), Rule(2))]);
        assert_eq!(p.depth(), 2);
        assert!(p.is_chain());
        assert_eq!(p.sinks(), vec![Rule(2)]);
        p.check_invariants().unwrap();
        let fork = ProofGraph::new([Fact(1), Fact(2), Rule(1)], [(Fact(1), Rule(1)), (Fact(2), Rule(1))]);
        assert!(!fork.is_chain());
        assert_eq!(fork.depth(), 1);
    }

    #[test]
    fn serde_shape() {
        let p = ProofGraph::new([Naf, Rule(3)], [(Naf, Rule(3))]);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"nodes":["NAF","R3"],"edges":[["NAF","R3"]]}"#);
        assert_eq!(serde_json::from_str::<ProofGraph>(&s).unwrap(), p);
    }
}
