//! Logical data model: atoms, facts, rules, theories, questions and the
//! node vocabulary used by proof graphs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subject of an atom: a named entity or the universal variable of a rule.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    Named(String),
    Someone,
}

impl Term {
    pub fn named(name: impl Into<String>) -> Self {
        Term::Named(name.into())
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Term::Someone)
    }

    pub fn as_named(&self) -> Option<&str> {
        match self {
            Term::Named(n) => Some(n),
            Term::Someone => None,
        }
    }
}

/// `entity is [not] attribute`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Atom {
    pub entity: Term,
    pub attribute: String,
    /// `true` for a positive statement.
    pub polarity: bool,
}

impl Atom {
    pub fn new(entity: Term, attribute: impl Into<String>, polarity: bool) -> Self {
        Atom { entity, attribute: attribute.into(), polarity }
    }

    /// Ground atom about a named entity.
    pub fn ground(entity: &str, attribute: &str, polarity: bool) -> Self {
        Atom::new(Term::named(entity), attribute, polarity)
    }

    /// Atom over the universal variable.
    pub fn var(attribute: &str, polarity: bool) -> Self {
        Atom::new(Term::Someone, attribute, polarity)
    }

    pub fn is_ground(&self) -> bool {
        !self.entity.is_var()
    }

    pub fn negated(&self) -> Atom {
        Atom { entity: self.entity.clone(), attribute: self.attribute.clone(), polarity: !self.polarity }
    }

    /// The same statement with positive polarity.
    pub fn positive(&self) -> Atom {
        Atom { polarity: true, ..self.clone() }
    }

    /// Replace the universal variable with `entity`.
    pub fn substitute(&self, entity: &str) -> Atom {
        match &self.entity {
            Term::Someone => Atom::ground(entity, &self.attribute, self.polarity),
            Term::Named(_) => self.clone(),
        }
    }

    /// Whether `self` (possibly non-ground) can be instantiated to the ground atom `goal`.
    pub fn unifies_with(&self, goal: &Atom) -> bool {
        self.attribute == goal.attribute
            && self.polarity == goal.polarity
            && match (&self.entity, &goal.entity) {
                (Term::Someone, _) | (_, Term::Someone) => true,
                (Term::Named(a), Term::Named(b)) => a == b,
            }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let subject = match &self.entity {
            Term::Named(n) => n.as_str(),
            Term::Someone => "?x",
        };
        let sign = if self.polarity { "" } else { "¬" };
        write!(f, "{sign}{}({subject})", self.attribute)
    }
}

/// Reference to a node of a proof graph.
///
/// Facts and rules are numbered from 1 in theory order (`F1`, `R1`, ...).
/// The derived ordering (facts, then NAF, then rules, indices numerically)
/// is the canonical id order used for tie-breaking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeRef {
    Fact(usize),
    Naf,
    Rule(usize),
    Question,
    End,
}

impl NodeRef {
    pub fn is_fact(self) -> bool {
        matches!(self, NodeRef::Fact(_))
    }

    pub fn is_rule(self) -> bool {
        matches!(self, NodeRef::Rule(_))
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeRef::Fact(k) => write!(f, "F{k}"),
            NodeRef::Rule(k) => write!(f, "R{k}"),
            NodeRef::Naf => f.write_str("NAF"),
            NodeRef::Question => f.write_str("Q"),
            NodeRef::End => f.write_str("END"),
        }
    }
}

impl FromStr for NodeRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse { position: 0, message: format!("invalid node id `{s}`") };
        match s {
            "NAF" => Ok(NodeRef::Naf),
            "Q" => Ok(NodeRef::Question),
            "END" => Ok(NodeRef::End),
            _ => {
                let (kind, num) = s.split_at(1.min(s.len()));
                let k: usize = num.parse().map_err(|_| bad())?;
                if k == 0 {
                    return Err(bad());
                }
                match kind {
                    "F" => Ok(NodeRef::Fact(k)),
                    "R" => Ok(NodeRef::Rule(k)),
                    _ => Err(bad()),
                }
            }
        }
    }
}

impl Serialize for NodeRef {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeRef {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fact {
    pub id: NodeRef,
    pub atom: Atom,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rule {
    pub id: NodeRef,
    pub antecedents: Vec<Atom>,
    pub consequent: Atom,
    pub text: String,
}

impl Rule {
    pub fn is_universal(&self) -> bool {
        self.consequent.entity.is_var()
    }

    /// Ground instance of the rule for `entity` (identity for ground rules).
    pub fn instantiate(&self, entity: &str) -> (Vec<Atom>, Atom) {
        (
            self.antecedents.iter().map(|a| a.substitute(entity)).collect(),
            self.consequent.substitute(entity),
        )
    }

    /// Ground instances whose consequent equals `goal`.
    pub fn instances_concluding(&self, goal: &Atom) -> Option<Vec<Atom>> {
        if !self.consequent.unifies_with(goal) {
            return None;
        }
        let entity = goal.entity.as_named()?;
        Some(self.antecedents.iter().map(|a| a.substitute(entity)).collect())
    }
}

/// The context: facts followed by rules, in sentence order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Theory {
    pub facts: Vec<Fact>,
    pub rules: Vec<Rule>,
}

impl Theory {
    /// Validates node ids and the rule shape invariants.
    pub fn new(facts: Vec<Fact>, rules: Vec<Rule>) -> Result<Self> {
        for (i, f) in facts.iter().enumerate() {
            if f.id != NodeRef::Fact(i + 1) {
                return Err(Error::Structure(format!("fact {} carries id {}", i + 1, f.id)));
            }
            if !f.atom.is_ground() {
                return Err(Error::Structure(format!("fact {} is not ground", f.id)));
            }
        }
        for (i, r) in rules.iter().enumerate() {
            if r.id != NodeRef::Rule(i + 1) {
                return Err(Error::Structure(format!("rule {} carries id {}", i + 1, r.id)));
            }
            if r.antecedents.is_empty() {
                return Err(Error::Structure(format!("rule {} has no antecedents", r.id)));
            }
            let uses_var = r.antecedents.iter().any(|a| a.entity.is_var());
            if uses_var && !r.consequent.entity.is_var() {
                return Err(Error::Structure(format!(
                    "rule {} binds the variable without using it in the consequent",
                    r.id
                )));
            }
        }
        Ok(Theory { facts, rules })
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty() && self.rules.is_empty()
    }

    pub fn len(&self) -> usize {
        self.facts.len() + self.rules.len()
    }

    /// Node ids in context order (facts, then rules).
    pub fn context_nodes(&self) -> Vec<NodeRef> {
        self.facts.iter().map(|f| f.id).chain(self.rules.iter().map(|r| r.id)).collect()
    }

    /// Position of a fact or rule in context order.
    pub fn context_index(&self, node: NodeRef) -> Option<usize> {
        match node {
            NodeRef::Fact(k) if k >= 1 && k <= self.facts.len() => Some(k - 1),
            NodeRef::Rule(k) if k >= 1 && k <= self.rules.len() => Some(self.facts.len() + k - 1),
            _ => None,
        }
    }

    pub fn node_at(&self, index: usize) -> Option<NodeRef> {
        if index < self.facts.len() {
            Some(NodeRef::Fact(index + 1))
        } else if index < self.len() {
            Some(NodeRef::Rule(index - self.facts.len() + 1))
        } else {
            None
        }
    }

    pub fn fact(&self, node: NodeRef) -> Option<&Fact> {
        match node {
            NodeRef::Fact(k) => self.facts.get(k.wrapping_sub(1)),
            _ => None,
        }
    }

    pub fn rule(&self, node: NodeRef) -> Option<&Rule> {
        match node {
            NodeRef::Rule(k) => self.rules.get(k.wrapping_sub(1)),
            _ => None,
        }
    }

    /// Surface text of every sentence in context order.
    pub fn sentences(&self) -> Vec<&str> {
        self.facts.iter().map(|f| f.text.as_str()).chain(self.rules.iter().map(|r| r.text.as_str())).collect()
    }

    /// Named entities mentioned anywhere in the theory, sorted.
    pub fn entities(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .facts
            .iter()
            .map(|f| &f.atom)
            .chain(self.rules.iter().flat_map(|r| r.antecedents.iter().chain(std::iter::once(&r.consequent))))
            .filter_map(|a| a.entity.as_named().map(str::to_owned))
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Question {
    pub atom: Atom,
    pub text: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "proof")]
    Proof,
    #[serde(rename = "fail")]
    FailProof,
}

impl Strategy {
    pub fn index(self) -> usize {
        match self {
            Strategy::Proof => 0,
            Strategy::FailProof => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Strategy::Proof
        } else {
            Strategy::FailProof
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Proof => "proof",
            Strategy::FailProof => "fail",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_ids_round_trip() {
        for s in ["F1", "F12", "R3", "NAF", "Q", "END"] {
            assert_eq!(s.parse::<NodeRef>().unwrap().to_string(), s);
        }
        assert!("F0".parse::<NodeRef>().is_err());
        assert!("X1".parse::<NodeRef>().is_err());
        assert!("".parse::<NodeRef>().is_err());
    }

    #[test]
    fn canonical_id_order() {
        let mut ids = vec![NodeRef::Rule(1), NodeRef::Naf, NodeRef::Fact(10), NodeRef::Fact(2)];
        ids.sort();
        assert_eq!(ids, vec![NodeRef::Fact(2), NodeRef::Fact(10), NodeRef::Naf, NodeRef::Rule(1)]);
    }

    #[test]
    fn variable_must_reach_consequent() {
        let bad = Rule {
            id: NodeRef::Rule(1),
            antecedents: vec![Atom::var("big", true)],
            consequent: Atom::ground("Anne", "strong", true),
            text: String::new(),
        };
        assert!(Theory::new(vec![], vec![bad]).is_err());
    }

    #[test]
    fn unification() {
        let pat = Atom::var("strong", true);
        assert!(pat.unifies_with(&Atom::ground("Bob", "strong", true)));
        assert!(!pat.unifies_with(&Atom::ground("Bob", "strong", false)));
        assert!(!Atom::ground("Anne", "strong", true).unifies_with(&Atom::ground("Bob", "strong", true)));
    }
}
