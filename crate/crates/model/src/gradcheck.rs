//! Central finite-difference check of the analytic gradients of the joint loss.

use std::collections::BTreeMap;

use ibr_core::rng::substream;
use ibr_core::Sample;
use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::config::{LossWeights, ModelConfig};
use crate::encoder::EncoderInput;
use crate::error::Result;
use crate::graph::Graph;
use crate::model::Model;
use crate::params::{Grads, ParamId};
use crate::trace::{build_gold_trace, GoldTrace};
use crate::train::{compute_loss, Example};

pub const FD_STEP: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub family: String,
    pub entries: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub rows: Vec<GradCheckRow>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }
}

/// Reporting family of a parameter name: `enc.*` is the encoder, focus
/// blocks share one family, everything else is its own head.
pub fn family(name: &str) -> String {
    let head = name.split('.').next().unwrap_or(name);
    match head {
        "enc" => "encoder".into(),
        "focus" => "focus_attention".into(),
        other => other.into(),
    }
}

/// A tiny model configuration (every width ≤ 8).
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d: 8,
        layers: 1,
        heads: 2,
        d_ff: 8,
        d_f: 4,
        focus_blocks: 2,
        focus_d_ff: 8,
        max_path: 16,
        max_len: 128,
        ..ModelConfig::default()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare analytic and numeric gradients of the loss on `samples` with
/// dropout off. At most `per_param` entries of each tensor are probed.
pub fn grad_check(config: ModelConfig, samples: &[Sample], seed: u64, per_param: usize) -> Result<GradCheckReport> {
    let mut model = Model::new(config, seed)?;
    let inputs: Vec<EncoderInput> = samples.iter().map(|s| model.input(s)).collect::<Result<_>>()?;
    let mut rng = substream(seed, "gradcheck/trace", 0);
    let traces: Vec<GoldTrace> =
        samples.iter().map(|s| build_gold_trace(s, model.config.fail_mask_naf, &mut rng)).collect::<Result<_>>()?;
    let loss = |model: &Model, grads: Option<&mut Grads>| -> Result<f64> {
        let batch: Vec<Example> = samples
            .iter()
            .zip(&inputs)
            .zip(&traces)
            .map(|((sample, input), trace)| Example { sample, input, trace })
            .collect();
        let mut g = Graph::new(&model.store, false);
        let mut rng = substream(seed, "gradcheck/dropout", 0);
        let (l, _) = compute_loss(&mut g, model, &batch, &LossWeights::joint(1.0), 0.0, &mut rng)?;
        if let Some(grads) = grads {
            g.backward(l, grads);
        }
        Ok(g.value(l).item())
    };
    let mut grads = Grads::zeros_like(&model.store);
    loss(&model, Some(&mut grads))?;
    let mut pick = substream(seed, "gradcheck/entries", 0);
    let mut rows: BTreeMap<String, GradCheckRow> = BTreeMap::new();
    let ids: Vec<(ParamId, String, usize)> =
        model.store.iter().map(|(id, p)| (id, p.name.clone(), p.value.len())).collect();
    for (id, name, len) in ids {
        let entries: Vec<usize> =
            if len <= per_param { (0..len).collect() } else { sample_indices(&mut pick, len, per_param).into_vec() };
        let fam = family(&name);
        let row = rows.entry(fam.clone()).or_insert(GradCheckRow { family: fam, entries: 0, max_rel_err: 0.0 });
        for j in entries {
            let orig = model.store.get(id).data[j];
            model.store.get_mut(id).data[j] = orig + FD_STEP;
            let up = loss(&model, None)?;
            model.store.get_mut(id).data[j] = orig - FD_STEP;
            let down = loss(&model, None)?;
            model.store.get_mut(id).data[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            row.entries += 1;
            row.max_rel_err = row.max_rel_err.max(relative_error(grads.get(id).data[j], numeric));
        }
    }
    Ok(GradCheckReport { rows: rows.into_values().collect() })
}
