//! Token embedding, pre-norm self-attention mixing, summary vector and span pooling.

use std::ops::Range;

use ibr_core::{build_input_layout, LayoutOptions, Question, Theory};
use rand::Rng;

use crate::config::{ModelConfig, Pooling};
use crate::error::{Error, Result};
use crate::graph::{Graph, Segment, Var};
use crate::layers::{AttentionProj, FeedForward, Linear, Lstm, Norm};
use crate::params::{init, Group, ParamId, ParamStore};
use crate::vocab::Vocab;

/// Token ids and spans of one laid-out sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderInput {
    pub ids: Vec<usize>,
    pub question_span: Range<usize>,
    pub spans: Vec<Range<usize>>,
    pub summary_index: usize,
    /// 1 + offset inside the question or sentence span; 0 outside every span.
    pub offsets: Vec<usize>,
}

/// Rows of the within-sentence position table; longer offsets share the last row.
pub const SPAN_POSITIONS: usize = 32;

impl EncoderInput {
    pub fn new(question: &Question, theory: &Theory, vocab: &Vocab, config: &ModelConfig) -> Result<Self> {
        let opts = LayoutOptions {
            strip_function_words: config.strip_function_words,
            max_len: config.max_len,
            ..LayoutOptions::default()
        };
        let layout = build_input_layout(question, theory, &opts)?;
        let mut offsets = vec![0; layout.tokens.len()];
        for span in std::iter::once(&layout.question_span).chain(&layout.spans) {
            for i in span.clone() {
                offsets[i] = (1 + i - span.start).min(SPAN_POSITIONS - 1);
            }
        }
        Ok(EncoderInput {
            offsets,
            ids: vocab.encode(&layout.tokens),
            question_span: layout.question_span,
            spans: layout.spans,
            summary_index: layout.summary_index,
        })
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln1: Norm,
    attn: AttentionProj,
    ln2: Norm,
    ff: FeedForward,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    tokens: ParamId,
    positions: ParamId,
    span_positions: Option<ParamId>,
    blocks: Vec<Block>,
    ln_f: Norm,
    cls: Linear,
    span_parent: Lstm,
    span_child: Lstm,
}

/// Encoder outputs for a batch. Row layouts:
/// `parent` holds `[h_Q, h_g1..h_gk]` per sample, `child` holds `[h_n1..h_nk]`.
#[derive(Clone, Debug)]
pub struct EncodedBatch {
    pub cls: Var,
    pub parent: Var,
    pub child: Var,
    pub tokens: Var,
    pub sizes: Vec<usize>,
    pub parent_offsets: Vec<usize>,
    pub child_offsets: Vec<usize>,
}

fn check(g: &Graph, v: Var, layer: &str) -> Result<()> {
    if g.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(layer.to_owned()))
    }
}

impl EncoderParams {
    pub fn new(store: &mut ParamStore, config: &ModelConfig, vocab_len: usize, rng: &mut impl Rng) -> Self {
        let dm = config.d_model;
        let g = Group::Encoder;
        let tokens = store.add("enc.tokens", g, init::embedding(vocab_len, dm, rng));
        let positions = store.add("enc.positions", g, init::embedding(config.max_len, dm, rng));
        let span_positions = config
            .span_positions
            .then(|| store.add("enc.span_positions", g, init::embedding(SPAN_POSITIONS, dm, rng)));
        let blocks = (0..config.layers)
            .map(|l| Block {
                ln1: Norm::new(store, &format!("enc.{l}.ln1"), g, dm),
                attn: AttentionProj::new(store, &format!("enc.{l}.attn"), g, dm, rng),
                ln2: Norm::new(store, &format!("enc.{l}.ln2"), g, dm),
                ff: FeedForward::new(store, &format!("enc.{l}.ff"), g, dm, config.d_ff, rng),
            })
            .collect();
        EncoderParams {
            tokens,
            positions,
            span_positions,
            blocks,
            ln_f: Norm::new(store, "enc.ln_f", g, dm),
            cls: Linear::new(store, "enc.cls", g, dm, config.d, rng),
            span_parent: Lstm::new(store, "span_parent", dm, config.d, rng),
            span_child: Lstm::new(store, "span_child", dm, config.d, rng),
        }
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        config: &ModelConfig,
        inputs: &[&EncoderInput],
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<EncodedBatch> {
        let mut ids = Vec::new();
        let mut pos = Vec::new();
        let mut offsets = Vec::new();
        let mut segments = Vec::with_capacity(inputs.len());
        let mut starts = Vec::with_capacity(inputs.len());
        for input in inputs {
            if input.ids.len() > config.max_len {
                return Err(Error::Core(ibr_core::Error::InputTooLong { length: input.ids.len(), max: config.max_len }));
            }
            let start = ids.len();
            starts.push(start);
            ids.extend_from_slice(&input.ids);
            pos.extend(0..input.ids.len());
            offsets.extend_from_slice(&input.offsets);
            segments.push(Segment { q: start..ids.len(), kv: start..ids.len() });
        }
        let tok = g.embed(self.tokens, ids);
        let p = g.embed(self.positions, pos);
        let mut x = g.add(tok, p);
        if let Some(table) = self.span_positions {
            let o = g.embed(table, offsets);
            x = g.add(x, o);
        }
        let mut x = g.dropout(x, dropout, rng);
        for (l, block) in self.blocks.iter().enumerate() {
            let h = block.ln1.apply(g, x);
            let a = block.attn.apply(g, h, h, config.heads, segments.clone());
            let a = g.dropout(a, dropout, rng);
            x = g.add(x, a);
            let h = block.ln2.apply(g, x);
            let f = block.ff.apply(g, h);
            let f = g.dropout(f, dropout, rng);
            x = g.add(x, f);
            check(g, x, &format!("encoder layer {l}"))?;
        }
        let x = self.ln_f.apply(g, x);
        let cls_rows = inputs.iter().zip(&starts).map(|(i, s)| s + i.summary_index).collect();
        let cls = g.rows(x, cls_rows);
        let cls = self.cls.apply(g, cls);
        let cls = g.tanh(cls);

        let shift = |r: &Range<usize>, s: usize| (r.start + s..r.end + s).collect::<Vec<usize>>();
        let mut parent_seqs = Vec::new();
        let mut child_seqs = Vec::new();
        let mut sizes = Vec::with_capacity(inputs.len());
        let mut parent_offsets = Vec::with_capacity(inputs.len());
        let mut child_offsets = Vec::with_capacity(inputs.len());
        for (input, &s) in inputs.iter().zip(&starts) {
            sizes.push(input.spans.len());
            parent_offsets.push(parent_seqs.len());
            child_offsets.push(child_seqs.len());
            parent_seqs.push(shift(&input.question_span, s));
            for span in &input.spans {
                parent_seqs.push(shift(span, s));
                child_seqs.push(shift(span, s));
            }
        }
        let (parent, child) = match config.pooling {
            Pooling::Lstm => (self.span_parent.run(g, x, parent_seqs), self.span_child.run(g, x, child_seqs)),
            Pooling::Mean => (g.segment_mean(x, parent_seqs), g.segment_mean(x, child_seqs)),
        };
        check(g, parent, "parent span encoder")?;
        check(g, child, "child span encoder")?;
        Ok(EncodedBatch { cls, parent, child, tokens: x, sizes, parent_offsets, child_offsets })
    }
}
