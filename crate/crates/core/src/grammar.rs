//! Controlled English grammar for facts, rules and questions.
//!
//! ```text
//! fact/question := NAME is [not] ATTR .
//! rule          := If COND (and COND)* then COND .
//! COND          := (someone is | they are | NAME is) [not] ATTR
//! ```
//!
//! The first variable mention in a rule is rendered `someone`, every later
//! one `they`.

use crate::error::{Error, Result};
use crate::theory::{Atom, Fact, NodeRef, Question, Rule, Term};

pub const ENTITY_POOL: &[&str] = &[
    "Anne", "Bob", "Charlie", "Dave", "Erin", "Fiona", "Gary", "Harry",
];

pub const ATTRIBUTE_POOL: &[&str] = &[
    "big", "blue", "cold", "furry", "green", "happy", "kind", "nice", "quiet", "red", "rich", "rough",
    "round", "small", "smart", "strong", "white", "young",
];

/// Function words of the grammar (everything that is not a symbol).
pub const FUNCTION_WORDS: &[&str] = &["If", "and", "then", "someone", "they", "is", "are", "not", "."];

/// Parsed sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Statement {
    Atom(Atom),
    Rule { antecedents: Vec<Atom>, consequent: Atom },
}

/// Symbol vocabulary plus the render/parse pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grammar {
    entities: Vec<String>,
    attributes: Vec<String>,
}

impl Default for Grammar {
    fn default() -> Self {
        Grammar::new(ENTITY_POOL.iter().copied(), ATTRIBUTE_POOL.iter().copied())
    }
}

impl Grammar {
    pub fn new<'a>(entities: impl IntoIterator<Item = &'a str>, attributes: impl IntoIterator<Item = &'a str>) -> Self {
        Grammar {
            entities: entities.into_iter().map(str::to_owned).collect(),
            attributes: attributes.into_iter().map(str::to_owned).collect(),
        }
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    /// Every word the grammar can produce.
    pub fn words(&self) -> Vec<String> {
        FUNCTION_WORDS
            .iter()
            .map(|w| w.to_string())
            .chain(self.entities.iter().cloned())
            .chain(self.attributes.iter().cloned())
            .collect()
    }

    fn check(&self, atom: &Atom) -> Result<()> {
        if let Term::Named(name) = &atom.entity {
            if !self.entities.iter().any(|e| e == name) {
                return Err(Error::Vocabulary { kind: "entity", symbol: name.clone() });
            }
        }
        if !self.attributes.iter().any(|a| a == &atom.attribute) {
            return Err(Error::Vocabulary { kind: "attribute", symbol: atom.attribute.clone() });
        }
        Ok(())
    }

    fn clause(&self, atom: &Atom, var_seen: &mut bool) -> String {
        let subject = match &atom.entity {
            Term::Named(n) => format!("{n} is"),
            Term::Someone if !*var_seen => {
                *var_seen = true;
                "someone is".to_owned()
            }
            Term::Someone => "they are".to_owned(),
        };
        let not = if atom.polarity { "" } else { " not" };
        format!("{subject}{not} {}", atom.attribute)
    }

    /// `Anne is big.` / `Bob is not big.`
    pub fn render_atom(&self, atom: &Atom) -> Result<String> {
        self.check(atom)?;
        if !atom.is_ground() {
            return Err(Error::Structure("a standalone statement needs a named entity".into()));
        }
        Ok(format!("{}.", self.clause(atom, &mut false)))
    }

    pub fn render_rule(&self, antecedents: &[Atom], consequent: &Atom) -> Result<String> {
        for a in antecedents.iter().chain(std::iter::once(consequent)) {
            self.check(a)?;
        }
        if antecedents.is_empty() {
            return Err(Error::Structure("rule without antecedents".into()));
        }
        let mut var_seen = false;
        let conds: Vec<String> = antecedents.iter().map(|a| self.clause(a, &mut var_seen)).collect();
        let head = self.clause(consequent, &mut var_seen);
        Ok(format!("If {} then {head}.", conds.join(" and ")))
    }

    pub fn fact(&self, index: usize, atom: Atom) -> Result<Fact> {
        let text = self.render_atom(&atom)?;
        Ok(Fact { id: NodeRef::Fact(index), atom, text })
    }

    pub fn rule(&self, index: usize, antecedents: Vec<Atom>, consequent: Atom) -> Result<Rule> {
        let text = self.render_rule(&antecedents, &consequent)?;
        Ok(Rule { id: NodeRef::Rule(index), antecedents, consequent, text })
    }

    pub fn question(&self, atom: Atom) -> Result<Question> {
        let text = self.render_atom(&atom)?;
        Ok(Question { atom, text })
    }

    pub fn parse_statement(&self, text: &str) -> Result<Statement> {
        let toks = tokenize_with_offsets(text);
        let mut p = Parser { toks: &toks, pos: 0, end: text.len(), grammar: self };
        let stmt = if p.peek() == Some("If") {
            p.bump();
            let mut antecedents = vec![p.condition(true)?];
            while p.peek() == Some("and") {
                p.bump();
                antecedents.push(p.condition(true)?);
            }
            p.expect("then")?;
            let consequent = p.condition(true)?;
            Statement::Rule { antecedents, consequent }
        } else {
            Statement::Atom(p.condition(false)?)
        };
        p.expect(".")?;
        if let Some((off, tok)) = p.toks.get(p.pos) {
            return Err(Error::Parse { position: *off, message: format!("trailing input `{tok}`") });
        }
        if let Statement::Rule { antecedents, consequent } = &stmt {
            if antecedents.iter().any(|a| a.entity.is_var()) && !consequent.entity.is_var() {
                return Err(Error::Parse { position: 0, message: "variable does not reach the consequent".into() });
            }
        }
        Ok(stmt)
    }
}

struct Parser<'a> {
    toks: &'a [(usize, String)],
    pos: usize,
    end: usize,
    grammar: &'a Grammar,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&str> {
        self.toks.get(self.pos).map(|(_, t)| t.as_str())
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn bump(&mut self) -> Option<&str> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.as_str());
        self.pos += 1;
        t
    }

    fn fail<T>(&self, message: String) -> Result<T> {
        Err(Error::Parse { position: self.offset(), message })
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        match self.peek() {
            Some(t) if t == word => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => self.fail(format!("expected `{word}`, found `{t}`")),
            None => self.fail(format!("expected `{word}`, found end of input")),
        }
    }

    fn condition(&mut self, in_rule: bool) -> Result<Atom> {
        let entity = match self.peek() {
            Some("someone") if in_rule => {
                self.pos += 1;
                self.expect("is")?;
                Term::Someone
            }
            Some("they") if in_rule => {
                self.pos += 1;
                self.expect("are")?;
                Term::Someone
            }
            Some(name) if self.grammar.entities.iter().any(|e| e == name) => {
                let name = name.to_owned();
                self.pos += 1;
                self.expect("is")?;
                Term::Named(name)
            }
            Some(t) => return self.fail(format!("expected a subject, found `{t}`")),
            None => return self.fail("expected a subject, found end of input".into()),
        };
        let polarity = if self.peek() == Some("not") {
            self.pos += 1;
            false
        } else {
            true
        };
        match self.peek() {
            Some(attr) if self.grammar.attributes.iter().any(|a| a == attr) => {
                let attr = attr.to_owned();
                self.pos += 1;
                Ok(Atom::new(entity, attr, polarity))
            }
            Some(t) => self.fail(format!("expected an attribute, found `{t}`")),
            None => self.fail("expected an attribute, found end of input".into()),
        }
    }
}

fn tokenize_with_offsets(text: &str) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() || c == '.' {
            if let Some(s) = start.take() {
                out.push((s, text[s..i].to_owned()));
            }
            if c == '.' {
                out.push((i, ".".to_owned()));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s, text[s..].to_owned()));
    }
    out
}

/// Word-level tokenization; the period is its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_offsets(text).into_iter().map(|(_, t)| t).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_renderings() {
        let g = Grammar::default();
        assert_eq!(g.render_atom(&Atom::ground("Anne", "big", true)).unwrap(), "Anne is big.");
        assert_eq!(g.render_atom(&Atom::ground("Bob", "big", false)).unwrap(), "Bob is not big.");
        assert_eq!(
            g.render_rule(&[Atom::var("big", true)], &Atom::var("strong", true)).unwrap(),
            "If someone is big then they are strong."
        );
        assert_eq!(
            g.render_rule(&[Atom::var("big", true), Atom::var("red", false)], &Atom::var("kind", false))
                .unwrap(),
            "If someone is big and they are not red then they are not kind."
        );
        assert_eq!(
            g.render_rule(&[Atom::ground("Anne", "big", true)], &Atom::ground("Anne", "kind", true)).unwrap(),
            "If Anne is big then Anne is kind."
        );
    }

    #[test]
    fn parse_inverts_render() {
        let g = Grammar::default();
        assert_eq!(g.parse_statement("Anne is big.").unwrap(), Statement::Atom(Atom::ground("Anne", "big", true)));
        assert_eq!(
            g.parse_statement("If someone is big then they are strong.").unwrap(),
            Statement::Rule { antecedents: vec![Atom::var("big", true)], consequent: Atom::var("strong", true) }
        );
    }

    #[test]
    fn out_of_grammar_reports_position() {
        let g = Grammar::default();
        match g.parse_statement("Anne enjoys maybe") {
            Err(Error::Parse { position, .. }) => assert_eq!(position, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(g.parse_statement("Anne is big").is_err());
        assert!(g.parse_statement("Anne is big. Bob").is_err());
        assert!(g.parse_statement("If someone is big then Anne is kind.").is_err());
    }

    #[test]
    fn unknown_symbol_is_vocabulary_error() {
        let g = Grammar::default();
        assert!(matches!(
            g.render_atom(&Atom::ground("Zed", "big", true)),
            Err(Error::Vocabulary { kind: "entity", .. })
        ));
        assert!(matches!(
            g.render_atom(&Atom::ground("Anne", "purple", true)),
            Err(Error::Vocabulary { kind: "attribute", .. })
        ));
    }

    #[test]
    fn tokenization() {
        assert_eq!(tokenize("Anne is big."), vec!["Anne", "is", "big", "."]);
    }
}
