//! Model, training and inference configuration (TOML on disk).

use std::collections::BTreeMap;
use std::path::Path;

use ibr_core::Strategy;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Group;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Final state of a recurrent encoder over the span.
    Lstm,
    /// Mean of the span's token vectors.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    /// Width of node representations (`h_cls`, `h_g`, `h_n`, ...).
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Hidden size of the focus recurrent encoder.
    pub d_f: usize,
    pub focus_blocks: usize,
    pub focus_d_ff: usize,
    pub focus_pos_emb: bool,
    /// Add a learned embedding of each token's offset inside its sentence.
    pub span_positions: bool,
    /// Longest path (in nodes) the focus position table covers.
    pub max_path: usize,
    pub max_len: usize,
    pub pooling: Pooling,
    /// Mask NAF as well as facts under FAIL_PROOF.
    pub fail_mask_naf: bool,
    pub strip_function_words: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            d: 64,
            layers: 2,
            heads: 4,
            d_ff: 128,
            d_f: 16,
            focus_blocks: 2,
            focus_d_ff: 64,
            focus_pos_emb: true,
            span_positions: true,
            max_path: 64,
            max_len: 256,
            pooling: Pooling::Lstm,
            fail_mask_naf: true,
            strip_function_words: false,
        }
    }
}

impl ModelConfig {
    /// The full-size widths: 1024-dim encoder and node vectors, 256-dim focus LSTM.
    pub fn full_size() -> Self {
        ModelConfig { d_model: 1024, d: 1024, heads: 16, d_ff: 4096, d_f: 256, focus_d_ff: 1024, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("d_model", self.d_model),
            ("d", self.d),
            ("heads", self.heads),
            ("d_ff", self.d_ff),
            ("d_f", self.d_f),
            ("focus_d_ff", self.focus_d_ff),
            ("max_path", self.max_path),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.d_model % self.heads != 0 {
            return bad(format!("d_model {} is not divisible by heads {}", self.d_model, self.heads));
        }
        if self.pooling == Pooling::Mean && self.d != self.d_model {
            return bad("mean pooling needs d == d_model".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRates {
    pub encoder: f64,
    pub classifier: f64,
    pub parent: f64,
    pub child: f64,
    pub recurrent: f64,
}

impl LearningRates {
    /// Rates tuned for heads on top of a large pretrained encoder.
    pub fn pretrained() -> Self {
        LearningRates { encoder: 1e-5, classifier: 1e-5, parent: 2e-4, child: 5e-4, recurrent: 1e-3 }
    }

    /// Rates for training every module from scratch.
    pub fn desk() -> Self {
        LearningRates { encoder: 1e-3, classifier: 1e-3, parent: 1e-3, child: 1e-3, recurrent: 1e-3 }
    }

    pub fn get(&self, group: Group) -> f64 {
        match group {
            Group::Encoder => self.encoder,
            Group::Classifier => self.classifier,
            Group::Parent => self.parent,
            Group::Child => self.child,
            Group::Recurrent => self.recurrent,
        }
    }

    /// Every group scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> BTreeMap<Group, f64> {
        [Group::Encoder, Group::Classifier, Group::Parent, Group::Child, Group::Recurrent]
            .into_iter()
            .map(|g| (g, self.get(g) * factor))
            .collect()
    }
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates::desk()
    }
}

/// A term of the joint loss, for the loss-removal ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    Qa,
    Strategy,
    Parent,
    Child,
}

/// Multipliers of the four loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub qa: f64,
    pub strategy: f64,
    pub parent: f64,
    pub child: f64,
}

impl LossWeights {
    /// The joint loss with strategy weight `alpha`.
    pub fn joint(alpha: f64) -> Self {
        LossWeights { qa: 1.0, strategy: alpha, parent: 1.0, child: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the strategy loss.
    pub alpha: f64,
    pub lr: LearningRates,
    pub dropout: f64,
    pub seed: u64,
    pub grad_clip: f64,
    pub weight_decay: f64,
    /// Fraction of all steps spent in linear warm-up; the rest decays linearly to zero.
    pub warmup: f64,
    /// Save a checkpoint every this many epochs (0 = only the best and final).
    pub checkpoint_every: usize,
    /// Dev samples decoded per epoch for model selection (0 = all).
    pub dev_limit: usize,
    /// Loss terms left out of training.
    pub drop_loss: Vec<LossTerm>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            batch_size: 16,
            alpha: 1.0,
            lr: LearningRates::desk(),
            dropout: 0.1,
            seed: 42,
            grad_clip: 1.0,
            weight_decay: 0.01,
            warmup: 0.05,
            checkpoint_every: 0,
            dev_limit: 0,
            drop_loss: Vec::new(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let lr = &self.lr;
        if [lr.encoder, lr.classifier, lr.parent, lr.child, lr.recurrent].iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("alpha must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup) {
            return Err(Error::Config("warmup must lie in [0, 1]".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        let mut w = LossWeights::joint(self.alpha);
        for t in &self.drop_loss {
            match t {
                LossTerm::Qa => w.qa = 0.0,
                LossTerm::Strategy => w.strategy = 0.0,
                LossTerm::Parent => w.parent = 0.0,
                LossTerm::Child => w.child = 0.0,
            }
        }
        w
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let config: TrainConfig = toml::from_str(&std::fs::read_to_string(path)?)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub beam_size: usize,
    pub max_steps: usize,
    pub force_gold_parent: bool,
    pub force_gold_child: bool,
    pub strategy_override: Option<Strategy>,
    /// Under FAIL_PROOF take the answer from the question polarity instead of the QA head.
    pub rule_based_fail_answer: bool,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            beam_size: 8,
            max_steps: 30,
            force_gold_parent: false,
            force_gold_child: false,
            strategy_override: None,
            rule_based_fail_answer: false,
        }
    }
}

impl InferConfig {
    pub fn greedy() -> Self {
        InferConfig { beam_size: 1, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_steps == 0 {
            return Err(Error::Config("beam_size and max_steps must be at least 1".into()));
        }
        Ok(())
    }
}
