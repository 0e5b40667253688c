//! The canonical mini-theory T1 and helpers shared by tests and docs.
//!
//! ```text
//! F1 Anne is big.
//! F2 Bob is kind.
//! R1 If someone is big then they are strong.
//! R2 If someone is strong then they are happy.
//! R3 If someone is not big then they are small.
//! ```

use crate::grammar::Grammar;
use crate::theory::{Atom, Question, Theory};

pub fn t1() -> Theory {
    t1_with(&[], &[])
}

/// T1 with extra facts and rules appended (numbered after the originals).
pub fn t1_with(extra_facts: &[Atom], extra_rules: &[(Vec<Atom>, Atom)]) -> Theory {
    let mut facts = vec![Atom::ground("Anne", "big", true), Atom::ground("Bob", "kind", true)];
    facts.extend(extra_facts.iter().cloned());
    let mut rules = vec![
        (vec![Atom::var("big", true)], Atom::var("strong", true)),
        (vec![Atom::var("strong", true)], Atom::var("happy", true)),
        (vec![Atom::var("big", false)], Atom::var("small", true)),
    ];
    rules.extend(extra_rules.iter().cloned());
    build(facts, rules)
}

pub fn build(facts: Vec<Atom>, rules: Vec<(Vec<Atom>, Atom)>) -> Theory {
    let g = Grammar::default();
    let facts = facts.into_iter().enumerate().map(|(i, a)| g.fact(i + 1, a).expect("fixture fact")).collect();
    let rules =
        rules.into_iter().enumerate().map(|(i, (ants, c))| g.rule(i + 1, ants, c).expect("fixture rule")).collect();
    Theory::new(facts, rules).expect("fixture theory")
}

pub fn question(entity: &str, attribute: &str, polarity: bool) -> Question {
    Grammar::default().question(Atom::ground(entity, attribute, polarity)).expect("fixture question")
}
