//! Labeled samples and their JSONL record format.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::proof::ProofGraph;
use crate::theory::{Atom, Fact, NodeRef, Question, Rule, Strategy, Term, Theory};

/// Variable name used in the logical form of rules.
pub const VAR: &str = "?x";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub theory: Theory,
    pub question: Question,
    pub answer: bool,
    pub strategy: Strategy,
    pub depth: usize,
    /// First entry is the canonical proof used for training.
    pub gold_proofs: Vec<ProofGraph>,
}

impl Sample {
    pub fn canonical_proof(&self) -> &ProofGraph {
        &self.gold_proofs[0]
    }

    pub fn to_record(&self) -> SampleRecord {
        let context = self
            .theory
            .facts
            .iter()
            .map(|f| ContextRecord {
                id: f.id,
                kind: "fact".into(),
                text: f.text.clone(),
                logic: Logic::Fact(AtomRecord::from(&f.atom)),
            })
            .chain(self.theory.rules.iter().map(|r| ContextRecord {
                id: r.id,
                kind: "rule".into(),
                text: r.text.clone(),
                logic: Logic::Rule {
                    antecedents: r.antecedents.iter().map(AtomRecord::from).collect(),
                    consequent: AtomRecord::from(&r.consequent),
                },
            }))
            .collect();
        let q = AtomRecord::from(&self.question.atom);
        SampleRecord {
            id: self.id.clone(),
            context,
            question: QuestionRecord {
                text: self.question.text.clone(),
                entity: q.entity,
                attribute: q.attribute,
                polarity: q.polarity,
            },
            answer: self.answer,
            strategy: self.strategy,
            depth: self.depth,
            proofs: self.gold_proofs.clone(),
        }
    }

    pub fn from_record(rec: SampleRecord) -> Result<Sample> {
        let mut facts = Vec::new();
        let mut rules = Vec::new();
        for c in rec.context {
            match (c.kind.as_str(), c.logic) {
                ("fact", Logic::Fact(a)) => facts.push(Fact { id: c.id, atom: a.to_atom(), text: c.text }),
                ("rule", Logic::Rule { antecedents, consequent }) => rules.push(Rule {
                    id: c.id,
                    antecedents: antecedents.iter().map(AtomRecord::to_atom).collect(),
                    consequent: consequent.to_atom(),
                    text: c.text,
                }),
                (kind, _) => return Err(Error::Structure(format!("{}: context type `{kind}` does not match its logic", c.id))),
            }
        }
        let theory = Theory::new(facts, rules)?;
        if rec.proofs.is_empty() {
            return Err(Error::Structure(format!("sample {} has no gold proof", rec.id)));
        }
        for p in &rec.proofs {
            if p.nodes.iter().any(|n| !matches!(n, NodeRef::Naf) && theory.context_index(*n).is_none()) {
                return Err(Error::Structure(format!("sample {}: proof references an unknown node", rec.id)));
            }
            p.check_invariants()?;
        }
        let question = Question {
            atom: Atom::ground(&rec.question.entity, &rec.question.attribute, rec.question.polarity),
            text: rec.question.text,
        };
        Ok(Sample {
            id: rec.id,
            theory,
            question,
            answer: rec.answer,
            strategy: rec.strategy,
            depth: rec.depth,
            gold_proofs: rec.proofs,
        })
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("sample records always serialize")
    }
}

// Field order here is the on-disk order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub context: Vec<ContextRecord>,
    pub question: QuestionRecord,
    pub answer: bool,
    pub strategy: Strategy,
    pub depth: usize,
    pub proofs: Vec<ProofGraph>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub id: NodeRef,
    #[serde(rename = "type")]
    pub kind: String,
    pub text: String,
    pub logic: Logic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Logic {
    Rule { antecedents: Vec<AtomRecord>, consequent: AtomRecord },
    Fact(AtomRecord),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomRecord {
    pub entity: String,
    pub attribute: String,
    pub polarity: bool,
}

impl From<&Atom> for AtomRecord {
    fn from(a: &Atom) -> Self {
        AtomRecord {
            entity: a.entity.as_named().unwrap_or(VAR).to_owned(),
            attribute: a.attribute.clone(),
            polarity: a.polarity,
        }
    }
}

impl AtomRecord {
    pub fn to_atom(&self) -> Atom {
        let entity = if self.entity == VAR { Term::Someone } else { Term::named(&self.entity) };
        Atom::new(entity, &self.attribute, self.polarity)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub text: String,
    pub entity: String,
    pub attribute: String,
    pub polarity: bool,
}

/// Parse JSONL; errors carry the 1-based line number.
pub fn read_samples(reader: impl BufRead) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let data_err = |message: String| Error::Data { line: i + 1, message };
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| data_err(e.to_string()))?;
        out.push(Sample::from_record(rec).map_err(|e| data_err(e.to_string()))?);
    }
    Ok(out)
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    read_samples(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn write_samples<'a>(mut writer: impl Write, samples: impl IntoIterator<Item = &'a Sample>) -> Result<()> {
    for s in samples {
        writeln!(writer, "{}", s.to_json_line())?;
    }
    Ok(())
}

pub fn save_samples<'a>(path: impl AsRef<Path>, samples: impl IntoIterator<Item = &'a Sample>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_samples(&mut w, samples)?;
    w.flush()?;
    Ok(())
}
