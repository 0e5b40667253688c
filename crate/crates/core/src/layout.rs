//! Encoder input layout: `[CLS] Q [SEP] [SEP] S1 [SEP] S2 [SEP] ... Sk [SEP]`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::tokenize;
use crate::theory::{NodeRef, Question, Theory};

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Stop list applied when function-word stripping is on.
pub const DEFAULT_STOP_WORDS: &[&str] = &["a", "an", "the", "is", "are"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutOptions {
    pub strip_function_words: bool,
    pub stop_words: Vec<String>,
    pub max_len: usize,
}

impl Default for LayoutOptions {
    fn default() -> Self {
        LayoutOptions {
            strip_function_words: false,
            stop_words: DEFAULT_STOP_WORDS.iter().map(|s| s.to_string()).collect(),
            max_len: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputLayout {
    pub tokens: Vec<String>,
    /// Token range of the question statement.
    pub question_span: Range<usize>,
    /// Token range of every context sentence, in context order.
    pub spans: Vec<Range<usize>>,
    /// Position of the aggregate summary token.
    pub summary_index: usize,
}

impl InputLayout {
    pub fn span(&self, theory: &Theory, node: NodeRef) -> Option<Range<usize>> {
        theory.context_index(node).and_then(|i| self.spans.get(i).cloned())
    }
}

fn words(text: &str, opts: &LayoutOptions) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|w| !(opts.strip_function_words && opts.stop_words.iter().any(|s| s.eq_ignore_ascii_case(w))))
        .collect()
}

pub fn build_input_layout(question: &Question, theory: &Theory, opts: &LayoutOptions) -> Result<InputLayout> {
    if theory.is_empty() {
        return Err(Error::EmptyTheory);
    }
    let mut tokens = vec![CLS.to_owned()];
    let q_start = tokens.len();
    tokens.extend(words(&question.text, opts));
    let question_span = q_start..tokens.len();
    tokens.push(SEP.to_owned());
    tokens.push(SEP.to_owned());
    let mut spans = Vec::with_capacity(theory.len());
    for sentence in theory.sentences() {
        let start = tokens.len();
        tokens.extend(words(sentence, opts));
        spans.push(start..tokens.len());
        tokens.push(SEP.to_owned());
    }
    if tokens.len() > opts.max_len {
        return Err(Error::InputTooLong { length: tokens.len(), max: opts.max_len });
    }
    Ok(InputLayout { tokens, question_span, spans, summary_index: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{question, t1};

    #[test]
    fn spans_are_disjoint_and_ordered() {
        let t = t1();
        let layout = build_input_layout(&question("Anne", "happy", true), &t, &LayoutOptions::default()).unwrap();
        assert_eq!(layout.spans.len(), 5);
        assert_eq!(&layout.tokens[..2], &[CLS, "Anne"]);
        assert_eq!(layout.summary_index, 0);
        for w in layout.spans.windows(2) {
            assert!(w[0].end < w[1].start);
        }
        assert_eq!(layout.tokens[layout.spans[0].clone()], ["Anne", "is", "big", "."]);
        assert_eq!(layout.tokens.last().unwrap(), SEP);
        assert_eq!(layout.tokens[layout.question_span.end], SEP);
        assert_eq!(layout.tokens[layout.question_span.end + 1], SEP);
        assert_eq!(layout.span(&t, NodeRef::Rule(1)), Some(layout.spans[2].clone()));
    }

    #[test]
    fn stripping_drops_stop_words() {
        let t = t1();
        let opts = LayoutOptions { strip_function_words: true, ..LayoutOptions::default() };
        let layout = build_input_layout(&question("Anne", "happy", true), &t, &opts).unwrap();
        assert_eq!(layout.tokens[layout.spans[0].clone()], ["Anne", "big", "."]);
        assert_eq!(layout.tokens[layout.spans[2].clone()], ["If", "someone", "big", "then", "they", "strong", "."]);
    }

    #[test]
    fn empty_theory_rejected() {
        let err = build_input_layout(&question("Anne", "big", true), &Theory::default(), &LayoutOptions::default());
        assert!(matches!(err, Err(Error::EmptyTheory)));
    }

    #[test]
    fn too_long_rejected() {
        let opts = LayoutOptions { max_len: 10, ..LayoutOptions::default() };
        let err = build_input_layout(&question("Anne", "big", true), &t1(), &opts);
        assert!(matches!(err, Err(Error::InputTooLong { max: 10, .. })));
    }
}
