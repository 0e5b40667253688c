//! Word vocabulary derived from the controlled grammar.

use std::collections::HashMap;

use ibr_core::layout::{CLS, SEP};
use ibr_core::Grammar;
use serde::{Deserialize, Serialize};

pub const UNK: &str = "[UNK]";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    /// Special tokens first, then every grammar word.
    pub fn from_grammar(grammar: &Grammar) -> Self {
        let mut words: Vec<String> = [UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
        for w in grammar.words() {
            if !words.contains(&w) {
                words.push(w);
            }
        }
        Vocab::from(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_words_round_trip() {
        let v = Vocab::from_grammar(&Grammar::default());
        assert!(v.len() < 200);
        assert_eq!(v.id("zzz"), 0);
        for w in Grammar::default().words() {
            assert_eq!(v.word(v.id(&w)), w);
        }
        let back: Vocab = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
    }
}
