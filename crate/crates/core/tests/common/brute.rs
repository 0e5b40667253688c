//! Reference implementations used only by tests. They share no code with
//! the production oracle beyond the data types and `verify_proof`.

#![allow(dead_code)]

use std::collections::BTreeSet;

use ibr_core::{Atom, NodeRef, ProofGraph, Strategy, Term, Theory};

fn universe(theory: &Theory, extra: Option<&str>) -> Vec<String> {
    let mut out = BTreeSet::new();
    for f in &theory.facts {
        out.insert(f.atom.entity.as_named().unwrap().to_owned());
    }
    for r in &theory.rules {
        for a in r.antecedents.iter().chain([&r.consequent]) {
            if let Term::Named(n) = &a.entity {
                out.insert(n.clone());
            }
        }
    }
    out.extend(extra.map(str::to_owned));
    out.into_iter().collect()
}

fn ground_rules(theory: &Theory, ents: &[String]) -> Vec<(Vec<Atom>, Atom)> {
    let mut out = Vec::new();
    for r in &theory.rules {
        let has_var = r.consequent.entity.is_var();
        let names: Vec<&str> = if has_var { ents.iter().map(String::as_str).collect() } else { vec![""] };
        for e in names {
            let sub = |a: &Atom| match a.entity {
                Term::Someone => Atom::ground(e, &a.attribute, a.polarity),
                Term::Named(_) => a.clone(),
            };
            out.push((r.antecedents.iter().map(sub).collect(), sub(&r.consequent)));
        }
    }
    out
}

/// Least model of the program reduct with respect to `assumed`: a negative
/// antecedent holds when it is derived explicitly or its positive form is
/// outside `assumed`.
fn gamma(theory: &Theory, ground: &[(Vec<Atom>, Atom)], assumed: &BTreeSet<Atom>) -> BTreeSet<Atom> {
    let mut m: BTreeSet<Atom> = theory.facts.iter().map(|f| f.atom.clone()).collect();
    loop {
        let mut grew = false;
        for (ants, head) in ground {
            if m.contains(head) {
                continue;
            }
            let ok = ants.iter().all(|a| m.contains(a) || (!a.polarity && !assumed.contains(&a.positive())));
            if ok {
                m.insert(head.clone());
                grew = true;
            }
        }
        if !grew {
            return m;
        }
    }
}

/// Well-founded model by the alternating fixpoint. Returns `None` when the
/// model is partial (some atom undefined) or not stable.
pub fn model(theory: &Theory, extra: Option<&str>) -> Option<BTreeSet<Atom>> {
    let ents = universe(theory, extra);
    let ground = ground_rules(theory, &ents);
    let mut lower = BTreeSet::new();
    loop {
        let upper = gamma(theory, &ground, &lower);
        let next = gamma(theory, &ground, &upper);
        if next == lower {
            if upper != lower {
                return None;
            }
            // Gelfond–Lifschitz: a stable model reproduces itself.
            return (gamma(theory, &ground, &lower) == lower).then_some(lower);
        }
        lower = next;
    }
}

pub fn answer(model: &BTreeSet<Atom>, q: &Atom) -> (bool, Strategy) {
    if model.contains(q) {
        (true, Strategy::Proof)
    } else if model.contains(&q.negated()) {
        (false, Strategy::Proof)
    } else {
        (!q.polarity, Strategy::FailProof)
    }
}

/// Minimal rule-application depth of every model atom, by layered rounds.
pub fn depths(theory: &Theory, model: &BTreeSet<Atom>, extra: Option<&str>) -> std::collections::BTreeMap<Atom, usize> {
    let ents = universe(theory, extra);
    let ground = ground_rules(theory, &ents);
    let mut d: std::collections::BTreeMap<Atom, usize> = theory.facts.iter().map(|f| (f.atom.clone(), 0)).collect();
    for round in 1.. {
        let mut new = Vec::new();
        for (ants, head) in &ground {
            if d.contains_key(head) || !model.contains(head) {
                continue;
            }
            let ok = ants.iter().all(|a| {
                d.get(a).is_some_and(|&x| x < round) || (!a.polarity && !model.contains(&a.positive()))
            });
            if ok {
                new.push(head.clone());
            }
        }
        if new.is_empty() {
            break;
        }
        for a in new {
            d.insert(a, round);
        }
    }
    d
}

/// Every graph over at most `node_bound` context/NAF nodes that passes
/// `verify_proof`, found by enumerating node subsets and edge subsets.
/// Only feasible for theories of a handful of sentences.
pub fn proofs(theory: &Theory, q: &ibr_core::Question, node_bound: usize) -> BTreeSet<ProofGraph> {
    let mut all: Vec<NodeRef> = theory.context_nodes();
    all.push(NodeRef::Naf);
    let n = all.len();
    assert!(n <= 8, "brute force is limited to tiny theories");
    let reasoner = ibr_core::Reasoner::for_question(theory, q).expect("valid theory");
    let mut out = BTreeSet::new();
    for mask in 1u32..(1 << n) {
        if mask.count_ones() as usize > node_bound {
            continue;
        }
        let nodes: Vec<NodeRef> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| all[i]).collect();
        let candidates: Vec<(NodeRef, NodeRef)> = nodes
            .iter()
            .flat_map(|&u| nodes.iter().filter(move |&&v| v != u && v.is_rule()).map(move |&v| (u, v)))
            .collect();
        assert!(candidates.len() <= 20);
        for emask in 0u32..(1 << candidates.len()) {
            let edges = (0..candidates.len()).filter(|i| emask & (1 << i) != 0).map(|i| candidates[i]);
            let g = ProofGraph::new(nodes.iter().copied(), edges);
            if reasoner.verify_proof(&q.atom, &g, Strategy::Proof) {
                out.insert(g);
            }
        }
    }
    out
}
