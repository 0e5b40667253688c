//! Exact closed-world reasoner.
//!
//! Semantics: rules fire over ground instances; a positive antecedent needs
//! a derived atom; a negative antecedent `X is not A` holds when the explicit
//! negative atom is derived or, by negation as failure, when `X is A` is
//! absent from the positive fixpoint. Theories must be stratified so that
//! NAF is only ever consulted for predicates of a lower stratum.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::proof::ProofGraph;
use crate::theory::{Atom, NodeRef, Question, Strategy, Term, Theory};

/// Ways a rule instance derives an atom: supporting nodes per antecedent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleSupport {
    pub rule: NodeRef,
    pub antecedents: Vec<Vec<NodeRef>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Derivation {
    pub min_depth: usize,
    /// Facts asserting the atom directly.
    pub facts: Vec<NodeRef>,
    pub supports: Vec<RuleSupport>,
}

/// Derived atoms (explicit positives and negatives, never NAF-only negations).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DerivationTable {
    pub entries: BTreeMap<Atom, Derivation>,
}

impl DerivationTable {
    pub fn contains(&self, atom: &Atom) -> bool {
        self.entries.contains_key(atom)
    }

    pub fn depth(&self, atom: &Atom) -> Option<usize> {
        self.entries.get(atom).map(|d| d.min_depth)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn atoms(&self) -> impl Iterator<Item = &Atom> {
        self.entries.keys()
    }
}

type Pred = (String, bool);

fn pred(a: &Atom) -> Pred {
    (a.attribute.clone(), a.polarity)
}

/// Stratum per predicate; errors on a cycle through a negative dependency.
fn stratify(theory: &Theory) -> Result<BTreeMap<Pred, usize>> {
    // (head, body, crosses_negation)
    let mut deps: Vec<(Pred, Pred, bool)> = Vec::new();
    let mut preds: BTreeSet<Pred> = theory.facts.iter().map(|f| pred(&f.atom)).collect();
    for r in &theory.rules {
        let head = pred(&r.consequent);
        preds.insert(head.clone());
        for a in &r.antecedents {
            preds.insert(pred(a));
            deps.push((head.clone(), pred(a), false));
            if !a.polarity {
                let pos = (a.attribute.clone(), true);
                preds.insert(pos.clone());
                deps.push((head.clone(), pos, true));
            }
        }
    }
    let mut stratum: BTreeMap<Pred, usize> = preds.iter().map(|p| (p.clone(), 0)).collect();
    let limit = preds.len();
    loop {
        let mut changed = false;
        for (head, body, neg) in &deps {
            let need = stratum[body] + usize::from(*neg);
            if stratum[head] < need {
                if need > limit {
                    return Err(Error::Stratification(head.0.clone()));
                }
                stratum.insert(head.clone(), need);
                changed = true;
            }
        }
        if !changed {
            return Ok(stratum);
        }
    }
}

/// Closed-world model of one theory over a fixed entity universe.
#[derive(Clone, Debug)]
pub struct Reasoner<'t> {
    theory: &'t Theory,
    universe: Vec<String>,
    full: DerivationTable,
}

impl<'t> Reasoner<'t> {
    /// Fixpoint over the theory's own entities plus `extra_entities`.
    pub fn new(theory: &'t Theory, extra_entities: &[&str]) -> Result<Self> {
        let mut universe = theory.entities();
        universe.extend(extra_entities.iter().map(|e| e.to_string()));
        universe.sort();
        universe.dedup();
        let mut r = Reasoner { theory, universe, full: DerivationTable::default() };
        r.saturate()?;
        Ok(r)
    }

    pub fn for_question(theory: &'t Theory, question: &Question) -> Result<Self> {
        let extra: Vec<&str> = question.atom.entity.as_named().into_iter().collect();
        Reasoner::new(theory, &extra)
    }

    pub fn theory(&self) -> &Theory {
        self.theory
    }

    pub fn universe(&self) -> &[String] {
        &self.universe
    }

    /// The complete fixpoint (no depth limit).
    pub fn table(&self) -> &DerivationTable {
        &self.full
    }

    /// Ground instances `(antecedents, consequent)` of rule `index` (0-based).
    fn instances(&self, index: usize) -> Vec<(Vec<Atom>, Atom)> {
        let rule = &self.theory.rules[index];
        let uses_var =
            rule.consequent.entity.is_var() || rule.antecedents.iter().any(|a| matches!(a.entity, Term::Someone));
        if uses_var {
            self.universe.iter().map(|e| rule.instantiate(e)).collect()
        } else {
            vec![(rule.antecedents.clone(), rule.consequent.clone())]
        }
    }

    /// `X is not A` holds by failure to derive `X is A`.
    pub fn naf_holds(&self, atom: &Atom) -> bool {
        !atom.polarity && !self.full.contains(&atom.positive())
    }

    /// Depth at which a ground antecedent holds, if it does.
    fn holds_at(&self, atom: &Atom) -> Option<usize> {
        let explicit = self.full.depth(atom);
        let naf = self.naf_holds(atom).then_some(0);
        match (explicit, naf) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    pub fn holds(&self, atom: &Atom) -> bool {
        self.holds_at(atom).is_some()
    }

    fn saturate(&mut self) -> Result<()> {
        let strata = stratify(self.theory)?;
        for f in &self.theory.facts {
            let entry = self
                .full
                .entries
                .entry(f.atom.clone())
                .or_insert(Derivation { min_depth: 0, facts: Vec::new(), supports: Vec::new() });
            entry.facts.push(f.id);
        }
        let mut order: Vec<usize> = (0..self.theory.rules.len()).collect();
        order.sort_by_key(|&i| strata[&pred(&self.theory.rules[i].consequent)]);
        let mut levels: Vec<Vec<usize>> = Vec::new();
        for i in order {
            let s = strata[&pred(&self.theory.rules[i].consequent)];
            match levels.last_mut() {
                Some(level) if strata[&pred(&self.theory.rules[level[0]].consequent)] == s => level.push(i),
                _ => levels.push(vec![i]),
            }
        }
        for level in &levels {
            loop {
                let mut changed = false;
                for &i in level {
                    for (ants, head) in self.instances(i) {
                        let Some(depth) = ants.iter().map(|a| self.holds_at(a)).collect::<Option<Vec<_>>>()
                        else {
                            continue;
                        };
                        let d = 1 + depth.into_iter().max().unwrap_or(0);
                        match self.full.entries.get_mut(&head) {
                            Some(e) if e.min_depth <= d => {}
                            Some(e) => {
                                e.min_depth = d;
                                changed = true;
                            }
                            None => {
                                self.full
                                    .entries
                                    .insert(head, Derivation { min_depth: d, facts: Vec::new(), supports: Vec::new() });
                                changed = true;
                            }
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
        }
        for atom in self.full.entries.keys() {
            if atom.polarity && self.full.contains(&atom.negated()) {
                return Err(Error::Consistency(atom.to_string()));
            }
        }
        self.collect_supports();
        Ok(())
    }

    fn collect_supports(&mut self) {
        let mut derivers: BTreeMap<Atom, Vec<NodeRef>> = BTreeMap::new();
        let mut fired: Vec<(NodeRef, Vec<Atom>, Atom)> = Vec::new();
        for (i, rule) in self.theory.rules.iter().enumerate() {
            for (ants, head) in self.instances(i) {
                if ants.iter().all(|a| self.holds(a)) {
                    derivers.entry(head.clone()).or_default().push(rule.id);
                    fired.push((rule.id, ants, head));
                }
            }
        }
        for (rule, ants, head) in fired {
            let antecedents = ants
                .iter()
                .map(|a| {
                    let mut opts: Vec<NodeRef> = self.full.entries.get(a).map(|d| d.facts.clone()).unwrap_or_default();
                    opts.extend(derivers.get(a).into_iter().flatten().copied());
                    if self.naf_holds(a) {
                        opts.push(NodeRef::Naf);
                    }
                    opts
                })
                .collect();
            if let Some(e) = self.full.entries.get_mut(&head) {
                e.supports.push(RuleSupport { rule, antecedents });
            }
        }
    }

    /// The fixpoint restricted to atoms derivable within `max_depth` rule applications.
    pub fn table_upto(&self, max_depth: usize) -> DerivationTable {
        DerivationTable {
            entries: self.full.entries.iter().filter(|(_, d)| d.min_depth <= max_depth).map(|(a, d)| (a.clone(), d.clone())).collect(),
        }
    }

    pub fn answer_and_strategy(&self, question: &Atom) -> (bool, Strategy) {
        if self.full.contains(question) {
            (true, Strategy::Proof)
        } else if self.full.contains(&question.negated()) {
            (false, Strategy::Proof)
        } else {
            (!question.polarity, Strategy::FailProof)
        }
    }

    fn require(&self, question: &Atom, expected: Strategy) -> Result<()> {
        let (_, actual) = self.answer_and_strategy(question);
        if actual == expected {
            Ok(())
        } else {
            Err(Error::WrongStrategy { expected, actual })
        }
    }

    /// The derived atom (question or its negation) a proof must end in.
    fn target(&self, question: &Atom) -> Option<Atom> {
        if self.full.contains(question) {
            Some(question.clone())
        } else if self.full.contains(&question.negated()) {
            Some(question.negated())
        } else {
            None
        }
    }

    /// Minimal proof: least depth, then fewest nodes, then lowest sorted ids.
    pub fn extract_gold_proof(&self, question: &Atom) -> Result<(ProofGraph, usize)> {
        self.require(question, Strategy::Proof)?;
        let target = self.target(question).expect("PROOF strategy has a target");
        let depth = self.full.depth(&target).unwrap_or(0);
        let found = self.search(&target, SearchLimits { node_bound: None, depth_budget: Some(depth), state_budget: None });
        found
            .proofs
            .into_iter()
            .min_by(|a, b| {
                (a.depth(), a.nodes.len(), a.nodes.iter().collect::<Vec<_>>())
                    .cmp(&(b.depth(), b.nodes.len(), b.nodes.iter().collect::<Vec<_>>()))
            })
            .map(|p| {
                let d = p.depth();
                (p, d)
            })
            .ok_or_else(|| Error::NoProof(question.to_string()))
    }

    /// All valid proofs with at most `node_bound` nodes.
    pub fn enumerate_proofs(&self, question: &Atom, node_bound: usize) -> Vec<ProofGraph> {
        self.enumerate_with(question, SearchLimits { node_bound: Some(node_bound), depth_budget: None, state_budget: None })
            .proofs
    }

    /// Proofs of minimal depth with at most `node_bound` nodes. `complete`
    /// is false when `state_budget` search states were exhausted.
    pub fn minimal_proofs(&self, question: &Atom, node_bound: usize, state_budget: usize) -> Enumeration {
        let Some(target) = self.target(question) else { return Enumeration::default() };
        let depth = self.full.depth(&target).unwrap_or(0);
        let mut e = self.enumerate_with(
            question,
            SearchLimits { node_bound: Some(node_bound), depth_budget: Some(depth), state_budget: Some(state_budget) },
        );
        e.proofs.retain(|p| p.depth() == depth);
        e
    }

    pub fn enumerate_with(&self, question: &Atom, limits: SearchLimits) -> Enumeration {
        match self.target(question) {
            Some(t) => self.search(&t, limits),
            None => Enumeration { proofs: Vec::new(), complete: true },
        }
    }

    fn search(&self, target: &Atom, limits: SearchLimits) -> Enumeration {
        let mut s = Search { r: self, limits, found: BTreeSet::new(), states: 0, complete: true };
        for f in &self.theory.facts {
            if &f.atom == target {
                let mut p = Partial::default();
                p.atoms.insert(f.id, Some(target.clone()));
                s.expand(p);
            }
        }
        for (i, rule) in self.theory.rules.iter().enumerate() {
            if self.instances(i).iter().any(|(ants, head)| head == target && ants.iter().all(|a| self.holds(a))) {
                let mut p = Partial::default();
                p.atoms.insert(rule.id, Some(target.clone()));
                p.pending.push((rule.id, limits.depth_budget.unwrap_or(usize::MAX)));
                s.expand(p);
            }
        }
        let mut proofs: Vec<ProofGraph> = s.found.into_iter().collect();
        if let Some(budget) = limits.depth_budget {
            proofs.retain(|p| p.depth() <= budget);
        }
        Enumeration { proofs, complete: s.complete }
    }

    /// Backward chain of rules explaining a failed derivation.
    ///
    /// From the question atom, repeatedly take the lowest-index rule (not yet
    /// on the chain) whose consequent matches the goal, then descend into its
    /// first antecedent that does not hold. Edges run deeper → shallower.
    pub fn fail_chain(&self, question: &Atom) -> Result<ProofGraph> {
        self.require(question, Strategy::FailProof)?;
        let mut chain: Vec<NodeRef> = Vec::new();
        let mut goal = question.clone();
        loop {
            let next = self.theory.rules.iter().find_map(|r| {
                if chain.contains(&r.id) {
                    return None;
                }
                r.instances_concluding(&goal).map(|ants| (r.id, ants))
            });
            let Some((id, ants)) = next else { break };
            chain.push(id);
            match ants.into_iter().find(|a| !self.holds(a)) {
                Some(a) => goal = a,
                None => break,
            }
        }
        let edges = chain.windows(2).map(|w| (w[1], w[0]));
        Ok(ProofGraph::new(chain.iter().copied(), edges))
    }

    /// Independent checker for proofs of either strategy.
    pub fn verify_proof(&self, question: &Atom, proof: &ProofGraph, strategy: Strategy) -> bool {
        let (_, actual) = self.answer_and_strategy(question);
        if actual != strategy {
            return false;
        }
        match strategy {
            Strategy::Proof => self.verify_positive(question, proof),
            Strategy::FailProof => self.verify_fail(question, proof),
        }
    }

    fn verify_positive(&self, question: &Atom, proof: &ProofGraph) -> bool {
        if proof.is_empty() || proof.check_invariants().is_err() {
            return false;
        }
        let Some(order) = proof.topological_order() else { return false };
        let sink = proof.sinks()[0];
        if sink == NodeRef::Naf {
            return false;
        }
        for n in &order {
            let ok = match n {
                NodeRef::Fact(_) => self.theory.fact(*n).is_some() && proof.incoming(*n).is_empty(),
                NodeRef::Rule(_) => self.theory.rule(*n).is_some() && !proof.incoming(*n).is_empty(),
                NodeRef::Naf => true,
                _ => false,
            };
            if !ok {
                return false;
            }
        }
        let mut assigned: BTreeMap<NodeRef, Atom> = BTreeMap::new();
        self.assign(proof, &order, 0, &mut assigned, question)
    }

    /// Backtracking assignment of one ground atom per non-NAF node.
    fn assign(
        &self,
        proof: &ProofGraph,
        order: &[NodeRef],
        i: usize,
        assigned: &mut BTreeMap<NodeRef, Atom>,
        question: &Atom,
    ) -> bool {
        let Some(&node) = order.get(i) else {
            let sink = proof.sinks()[0];
            return assigned.get(&sink).is_some_and(|a| a == question || *a == question.negated());
        };
        match node {
            NodeRef::Naf => self.assign(proof, order, i + 1, assigned, question),
            NodeRef::Fact(_) => {
                let atom = self.theory.fact(node).expect("checked").atom.clone();
                assigned.insert(node, atom);
                let ok = self.assign(proof, order, i + 1, assigned, question);
                assigned.remove(&node);
                ok
            }
            _ => {
                let index = match node {
                    NodeRef::Rule(k) => k - 1,
                    _ => return false,
                };
                let incoming = proof.incoming(node);
                for (ants, head) in self.instances(index) {
                    if !self.covers(&incoming, &ants, assigned) {
                        continue;
                    }
                    assigned.insert(node, head);
                    if self.assign(proof, order, i + 1, assigned, question) {
                        return true;
                    }
                    assigned.remove(&node);
                }
                false
            }
        }
    }

    /// Every antecedent gets exactly one supporter and every supporter is used.
    fn covers(&self, incoming: &[NodeRef], ants: &[Atom], assigned: &BTreeMap<NodeRef, Atom>) -> bool {
        fn go(
            r: &Reasoner<'_>,
            incoming: &[NodeRef],
            ants: &[Atom],
            assigned: &BTreeMap<NodeRef, Atom>,
            k: usize,
            used: &mut Vec<bool>,
        ) -> bool {
            if k == ants.len() {
                return used.iter().all(|u| *u);
            }
            for (j, n) in incoming.iter().enumerate() {
                let proves = match n {
                    NodeRef::Naf => r.naf_holds(&ants[k]),
                    _ => assigned.get(n) == Some(&ants[k]),
                };
                if proves {
                    let was = std::mem::replace(&mut used[j], true);
                    if go(r, incoming, ants, assigned, k + 1, used) {
                        return true;
                    }
                    used[j] = was;
                }
            }
            false
        }
        go(self, incoming, ants, assigned, 0, &mut vec![false; incoming.len()])
    }

    fn verify_fail(&self, question: &Atom, proof: &ProofGraph) -> bool {
        if proof.is_empty() {
            return proof.edges.is_empty();
        }
        if !proof.is_chain() || !proof.nodes.iter().all(|n| self.theory.rule(*n).is_some()) {
            return false;
        }
        let mut node = proof.sinks()[0];
        let mut goal = question.clone();
        loop {
            let rule = self.theory.rule(node).expect("checked");
            let Some(ants) = rule.instances_concluding(&goal) else { return false };
            let Some(&deeper) = proof.incoming(node).first() else { return true };
            let deeper_rule = self.theory.rule(deeper).expect("checked");
            let Some(next) =
                ants.iter().find(|a| !self.holds(a) && deeper_rule.consequent.unifies_with(a)).cloned()
            else {
                return false;
            };
            goal = next;
            node = deeper;
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SearchLimits {
    pub node_bound: Option<usize>,
    /// Prune new rule nodes whose atom cannot be derived within the remaining depth.
    pub depth_budget: Option<usize>,
    pub state_budget: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Enumeration {
    pub proofs: Vec<ProofGraph>,
    pub complete: bool,
}

#[derive(Clone, Debug, Default)]
struct Partial {
    /// Atom proven by each node; `None` for NAF.
    atoms: BTreeMap<NodeRef, Option<Atom>>,
    edges: BTreeSet<(NodeRef, NodeRef)>,
    /// Rule nodes whose antecedents still need supporters, with their depth budget.
    pending: Vec<(NodeRef, usize)>,
}

impl Partial {
    /// `to` is reachable from `from` along support edges.
    fn reaches(&self, from: NodeRef, to: NodeRef) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if seen.insert(n) {
                stack.extend(self.edges.iter().filter(|(a, _)| *a == n).map(|(_, b)| *b));
            }
        }
        false
    }

    fn graph(&self) -> ProofGraph {
        ProofGraph::new(self.atoms.keys().copied(), self.edges.iter().copied())
    }
}

struct Search<'a, 't> {
    r: &'a Reasoner<'t>,
    limits: SearchLimits,
    found: BTreeSet<ProofGraph>,
    states: usize,
    complete: bool,
}

impl Search<'_, '_> {
    fn tick(&mut self) -> bool {
        self.states += 1;
        if self.limits.state_budget.is_some_and(|b| self.states > b) {
            self.complete = false;
        }
        self.complete
    }

    fn expand(&mut self, mut p: Partial) {
        if !self.tick() {
            return;
        }
        if self.limits.node_bound.is_some_and(|b| p.atoms.len() > b) {
            return;
        }
        let Some((node, budget)) = p.pending.pop() else {
            self.found.insert(p.graph());
            return;
        };
        let atom = p.atoms[&node].clone().expect("rule nodes carry atoms");
        let rule = self.r.theory.rule(node).expect("pending node is a rule");
        let Some(ants) = rule.instances_concluding(&atom) else { return };
        self.support(p, node, budget, &ants, 0);
    }

    fn support(&mut self, p: Partial, node: NodeRef, budget: usize, ants: &[Atom], k: usize) {
        if k == ants.len() {
            self.expand(p);
            return;
        }
        if !self.tick() {
            return;
        }
        let a = &ants[k];
        let link = |mut q: Partial, from: NodeRef| -> Partial {
            q.edges.insert((from, node));
            q
        };
        // Nodes already in the proof.
        let existing: Vec<NodeRef> = p
            .atoms
            .iter()
            .filter(|(n, atom)| **n != node && atom.as_ref() == Some(a))
            .map(|(n, _)| *n)
            .collect();
        for n in existing {
            if !p.reaches(node, n) {
                self.support(link(p.clone(), n), node, budget, ants, k + 1);
            }
        }
        if self.r.naf_holds(a) {
            let mut q = p.clone();
            q.atoms.entry(NodeRef::Naf).or_insert(None);
            self.support(link(q, NodeRef::Naf), node, budget, ants, k + 1);
        }
        for f in &self.r.theory.facts {
            if &f.atom == a && !p.atoms.contains_key(&f.id) {
                let mut q = p.clone();
                q.atoms.insert(f.id, Some(a.clone()));
                self.support(link(q, f.id), node, budget, ants, k + 1);
            }
        }
        let child_budget = budget.saturating_sub(1);
        if self.r.full.depth(a).is_some_and(|d| d <= child_budget) {
            for rule in &self.r.theory.rules {
                if p.atoms.contains_key(&rule.id) {
                    continue;
                }
                let Some(sub) = rule.instances_concluding(a) else { continue };
                if !sub.iter().all(|s| self.r.holds(s)) {
                    continue;
                }
                let mut q = p.clone();
                q.atoms.insert(rule.id, Some(a.clone()));
                q.pending.push((rule.id, child_budget));
                self.support(link(q, rule.id), node, budget, ants, k + 1);
            }
        }
    }
}

pub fn forward_chain(theory: &Theory, max_depth: usize) -> Result<DerivationTable> {
    Ok(Reasoner::new(theory, &[])?.table_upto(max_depth))
}

pub fn answer_and_strategy(theory: &Theory, question: &Question) -> Result<(bool, Strategy)> {
    Ok(Reasoner::for_question(theory, question)?.answer_and_strategy(&question.atom))
}

pub fn extract_gold_proof(theory: &Theory, question: &Question) -> Result<(ProofGraph, usize)> {
    Reasoner::for_question(theory, question)?.extract_gold_proof(&question.atom)
}

pub fn fail_chain(theory: &Theory, question: &Question) -> Result<ProofGraph> {
    Reasoner::for_question(theory, question)?.fail_chain(&question.atom)
}

/// Returns false on malformed input or when the theory itself is invalid.
pub fn verify_proof(theory: &Theory, question: &Question, proof: &ProofGraph, strategy: Strategy) -> bool {
    Reasoner::for_question(theory, question).is_ok_and(|r| r.verify_proof(&question.atom, proof, strategy))
}

pub fn enumerate_proofs(theory: &Theory, question: &Question, node_bound: usize) -> Vec<ProofGraph> {
    Reasoner::for_question(theory, question).map(|r| r.enumerate_proofs(&question.atom, node_bound)).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{build, question, t1, t1_with};
    use NodeRef::*;

    #[test]
    fn t1_fixpoint() {
        let table = forward_chain(&t1(), usize::MAX).unwrap();
        assert_eq!(table.depth(&Atom::ground("Anne", "strong", true)), Some(1));
        assert_eq!(table.depth(&Atom::ground("Anne", "happy", true)), Some(2));
        assert_eq!(table.depth(&Atom::ground("Bob", "small", true)), Some(1));
        assert!(!table.contains(&Atom::ground("Anne", "small", true)));
        assert!(!table.contains(&Atom::ground("Bob", "strong", true)));
        let bob_small = &table.entries[&Atom::ground("Bob", "small", true)];
        assert_eq!(bob_small.supports, vec![RuleSupport { rule: Rule(3), antecedents: vec![vec![Naf]] }]);
        assert_eq!(table.len(), 5);
    }

    #[test]
    fn depth_limit_truncates() {
        let t = t1();
        assert!(!forward_chain(&t, 1).unwrap().contains(&Atom::ground("Anne", "happy", true)));
        assert!(forward_chain(&t, 0).unwrap().contains(&Atom::ground("Anne", "big", true)));
        assert!(forward_chain(&Theory::default(), 5).unwrap().is_empty());
    }

    #[test]
    fn answers() {
        let t = t1();
        assert_eq!(answer_and_strategy(&t, &question("Anne", "happy", true)).unwrap(), (true, Strategy::Proof));
        assert_eq!(answer_and_strategy(&t, &question("Bob", "strong", true)).unwrap(), (false, Strategy::FailProof));
        assert_eq!(answer_and_strategy(&t, &question("Bob", "strong", false)).unwrap(), (true, Strategy::FailProof));
        assert_eq!(answer_and_strategy(&t, &question("Anne", "big", false)).unwrap(), (false, Strategy::Proof));
    }

    #[test]
    fn gold_proofs() {
        let t = t1();
        let (p, d) = extract_gold_proof(&t, &question("Anne", "happy", true)).unwrap();
        assert_eq!(p, ProofGraph::new([Fact(1), Rule(1), Rule(2)], [(Fact(1), Rule(1)), (Rule(1), Rule(2))]));
        assert_eq!(d, 2);
        let (p, d) = extract_gold_proof(&t, &question("Bob", "small", true)).unwrap();
        assert_eq!(p, ProofGraph::new([Naf, Rule(3)], [(Naf, Rule(3))]));
        assert_eq!(d, 1);
        let (p, d) = extract_gold_proof(&t, &question("Anne", "big", true)).unwrap();
        assert_eq!((p, d), (ProofGraph::single(Fact(1)), 0));
        assert!(matches!(
            extract_gold_proof(&t, &question("Bob", "strong", true)),
            Err(Error::WrongStrategy { .. })
        ));
    }

    #[test]
    fn fail_chains() {
        let t = t1();
        assert_eq!(fail_chain(&t, &question("Bob", "strong", true)).unwrap(), ProofGraph::single(Rule(1)));
        let no_f2 = build(
            vec![Atom::ground("Anne", "big", true)],
            t.rules.iter().map(|r| (r.antecedents.clone(), r.consequent.clone())).collect(),
        );
        assert!(fail_chain(&no_f2, &question("Bob", "kind", true)).unwrap().is_empty());
        let t4 = t1_with(&[], &[(vec![Atom::var("happy", true)], Atom::var("rich", true))]);
        assert_eq!(
            fail_chain(&t4, &question("Bob", "rich", true)).unwrap(),
            ProofGraph::new([Rule(4), Rule(2), Rule(1)], [(Rule(1), Rule(2)), (Rule(2), Rule(4))])
        );
        assert!(fail_chain(&t, &question("Anne", "big", true)).is_err());
    }

    #[test]
    fn verification() {
        let t = t1();
        let q = question("Anne", "happy", true);
        let gold = ProofGraph::new([Fact(1), Rule(1), Rule(2)], [(Fact(1), Rule(1)), (Rule(1), Rule(2))]);
        assert!(verify_proof(&t, &q, &gold, Strategy::Proof));
        let skip = ProofGraph::new([Fact(1), Rule(2)], [(Fact(1), Rule(2))]);
        assert!(!verify_proof(&t, &q, &skip, Strategy::Proof));
        assert!(!verify_proof(&t, &question("Anne", "big", true), &ProofGraph::single(Fact(2)), Strategy::Proof));
        assert!(!verify_proof(&t, &q, &gold, Strategy::FailProof));
        let bob = question("Bob", "strong", true);
        assert!(verify_proof(&t, &bob, &ProofGraph::single(Rule(1)), Strategy::FailProof));
        assert!(!verify_proof(&t, &bob, &ProofGraph::single(Rule(2)), Strategy::FailProof));
        assert!(verify_proof(&t, &bob, &ProofGraph::default(), Strategy::FailProof));
    }

    #[test]
    fn redundant_support_rejected() {
        let t = t1_with(&[Atom::ground("Anne", "big", true)], &[]);
        let q = question("Anne", "strong", true);
        let both = ProofGraph::new([Fact(1), Fact(3), Rule(1)], [(Fact(1), Rule(1)), (Fact(3), Rule(1))]);
        assert!(!verify_proof(&t, &q, &both, Strategy::Proof));
    }

    #[test]
    fn enumeration() {
        let t = t1();
        assert_eq!(enumerate_proofs(&t, &question("Anne", "happy", true), 6).len(), 1);
        assert_eq!(enumerate_proofs(&t, &question("Anne", "big", true), 1), vec![ProofGraph::single(Fact(1))]);
        let dup = t1_with(&[Atom::ground("Anne", "big", true)], &[]);
        let proofs = enumerate_proofs(&dup, &question("Anne", "strong", true), 6);
        assert_eq!(
            proofs,
            vec![
                ProofGraph::new([Fact(1), Rule(1)], [(Fact(1), Rule(1))]),
                ProofGraph::new([Fact(3), Rule(1)], [(Fact(3), Rule(1))]),
            ]
        );
        assert!(enumerate_proofs(&t, &question("Anne", "happy", true), 2).is_empty());
    }

    #[test]
    fn stratification_and_consistency() {
        let cyclic = build(vec![], vec![(vec![Atom::var("big", false)], Atom::var("big", true))]);
        assert!(matches!(forward_chain(&cyclic, 3), Err(Error::Stratification(_))));
        let clash = build(
            vec![Atom::ground("Anne", "big", true), Atom::ground("Anne", "kind", false)],
            vec![(vec![Atom::var("big", true)], Atom::var("kind", true))],
        );
        assert!(matches!(forward_chain(&clash, 3), Err(Error::Consistency(_))));
    }

    #[test]
    fn naf_shared_by_two_antecedents() {
        let t = build(
            vec![Atom::ground("Anne", "kind", true)],
            vec![(vec![Atom::var("big", false), Atom::var("red", false)], Atom::var("small", true))],
        );
        let q = question("Anne", "small", true);
        let (p, d) = extract_gold_proof(&t, &q).unwrap();
        assert_eq!(p, ProofGraph::new([Naf, Rule(1)], [(Naf, Rule(1))]));
        assert_eq!(d, 1);
        assert!(verify_proof(&t, &q, &p, Strategy::Proof));
    }
}
