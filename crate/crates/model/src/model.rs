//! The full model: vocabulary, parameters, forward pass and checkpoints.

use std::path::Path;

use ibr_core::rng::substream;
use ibr_core::{Grammar, Sample};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::encoder::{EncoderInput, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::heads::{BatchState, HeadParams};
use crate::params::{Group, ParamStore};
use crate::tensor::Tensor;
use crate::vocab::Vocab;

pub const CHECKPOINT_FORMAT: &str = "ibr-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub heads: HeadParams,
}

#[derive(Serialize, Deserialize)]
struct StoredParam {
    name: String,
    group: Group,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    vocab: Vocab,
    params: Vec<StoredParam>,
}

impl Model {
    /// Fresh parameters drawn from the `init` sub-stream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let vocab = Vocab::from_grammar(&Grammar::default());
        Ok(Self::build(config, vocab, &mut substream(seed, "init", 0)))
    }

    fn build(config: ModelConfig, vocab: Vocab, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let encoder = EncoderParams::new(&mut store, &config, vocab.len(), rng);
        let heads = HeadParams::new(&mut store, &config, rng);
        Model { config, vocab, store, encoder, heads }
    }

    pub fn set_focus_pos_emb(&mut self, on: bool) {
        self.config.focus_pos_emb = on;
        self.heads.set_focus_pos_emb(on);
    }

    pub fn input(&self, sample: &Sample) -> Result<EncoderInput> {
        EncoderInput::new(&sample.question, &sample.theory, &self.vocab, &self.config)
    }

    /// Encode a batch and prepare the head state.
    pub fn forward(
        &self,
        g: &mut Graph,
        inputs: &[&EncoderInput],
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<BatchState> {
        let enc = self.encoder.encode(g, &self.config, inputs, dropout, rng)?;
        Ok(self.heads.prepare(g, enc))
    }

    pub fn to_json(&self) -> Result<String> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self
                .store
                .iter()
                .map(|(_, p)| StoredParam {
                    name: p.name.clone(),
                    group: p.group,
                    rows: p.value.rows,
                    cols: p.value.cols,
                    data: p.value.data.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&ckpt)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format {} v{}", ckpt.format, ckpt.version)));
        }
        ckpt.config.validate()?;
        let mut model = Self::build(ckpt.config, ckpt.vocab, &mut substream(0, "init", 0));
        if ckpt.params.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                model.store.len(),
                ckpt.params.len()
            )));
        }
        for p in ckpt.params {
            let id = model.store.find(&p.name).ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", p.name)))?;
            let slot = model.store.get_mut(id);
            if (slot.rows, slot.cols) != (p.rows, p.cols) || p.data.len() != p.rows * p.cols {
                return Err(Error::Checkpoint(format!("shape mismatch for {}", p.name)));
            }
            let t = Tensor::from_vec(p.rows, p.cols, p.data);
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!("non-finite values in {}", p.name)));
            }
            *slot = t;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let config = ModelConfig { d_model: 8, d: 8, heads: 2, d_ff: 8, d_f: 4, focus_d_ff: 8, ..ModelConfig::default() };
        let m = Model::new(config, 5).unwrap();
        let back = Model::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.store, m.store);
        assert_eq!(back.vocab, m.vocab);
        assert_eq!(back.config, m.config);
        let other = Model::new(m.config.clone(), 6).unwrap();
        assert_ne!(other.store, m.store);
        assert!(Model::from_json("{\"format\":\"x\"}").is_err());
    }
}
