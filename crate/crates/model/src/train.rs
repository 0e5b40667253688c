//! Joint loss under teacher forcing and the optimization loop.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use ibr_core::metrics::evaluate;
use ibr_core::rng::substream;
use ibr_core::Sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{InferConfig, LossWeights, TrainConfig};
use crate::encoder::EncoderInput;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::heads::{ChildQuery, PathQuery};
use crate::infer::generate_with_input;
use crate::model::Model;
use crate::params::{AdamW, AdamWConfig, Grads};
use crate::trace::{build_gold_trace, GoldTrace};

/// Batch-averaged loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub qa: f64,
    pub strategy: f64,
    pub parent: f64,
    pub child: f64,
    pub total: f64,
}

impl LossTerms {
    fn add(&mut self, o: &LossTerms, w: f64) {
        self.qa += w * o.qa;
        self.strategy += w * o.strategy;
        self.parent += w * o.parent;
        self.child += w * o.child;
        self.total += w * o.total;
    }
}

/// One training example: sample, encoder input and this epoch's gold trace.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub sample: &'a Sample,
    pub input: &'a EncoderInput,
    pub trace: &'a GoldTrace,
}

/// `L = L_QA + L_Parent + L_Child + alpha * L_Strategy` (each term scaled by
/// `weights`), summed over trace steps and averaged over the batch.
/// FAIL_PROOF steps carry no parent term. The reported terms are unweighted.
pub fn compute_loss(
    g: &mut Graph,
    model: &Model,
    batch: &[Example],
    weights: &LossWeights,
    dropout: f64,
    rng: &mut impl Rng,
) -> Result<(Var, LossTerms)> {
    let inputs: Vec<&EncoderInput> = batch.iter().map(|e| e.input).collect();
    let mut st = model.forward(g, &inputs, dropout, rng)?;
    let qa_targets = batch.iter().map(|e| usize::from(!e.sample.answer)).collect();
    let s_targets = batch.iter().map(|e| e.sample.strategy.index()).collect();
    let l_qa = g.cross_entropy(st.qa_logits, qa_targets);
    let l_s = g.cross_entropy(st.strategy_logits, s_targets);
    let mut parts = vec![g.scale(l_qa, weights.qa), g.scale(l_s, weights.strategy)];

    let mut parent_q = Vec::new();
    let mut parent_t = Vec::new();
    let mut child_q = Vec::new();
    let mut child_t = Vec::new();
    for (b, e) in batch.iter().enumerate() {
        for step in &e.trace.steps {
            if step.include_parent_loss {
                parent_q.push(PathQuery { sample: b, theory: &e.sample.theory, path: &step.path });
                parent_t.push(step.parent);
            }
            child_q.push(ChildQuery {
                sample: b,
                theory: &e.sample.theory,
                path: &step.path,
                parent: step.parent,
                strategy: e.trace.strategy,
                allowed: &step.allowed,
            });
            child_t.push(step.child);
        }
    }
    let mut l_parent = None;
    if !parent_q.is_empty() {
        let scores = model.heads.parent_scores(g, &mut st, &parent_q);
        let l = g.cross_entropy(scores, parent_t);
        parts.push(g.scale(l, weights.parent));
        l_parent = Some(l);
    }
    let scores = model.heads.child_scores(g, &mut st, &child_q)?;
    let l_child = g.cross_entropy(scores, child_t);
    parts.push(g.scale(l_child, weights.child));
    let sum = g.sum(parts);
    let n = batch.len() as f64;
    let total = g.scale(sum, 1.0 / n);
    let terms = LossTerms {
        qa: g.value(l_qa).item() / n,
        strategy: g.value(l_s).item() / n,
        parent: l_parent.map_or(0.0, |l| g.value(l).item() / n),
        child: g.value(l_child).item() / n,
        total: g.value(total).item(),
    };
    if !terms.total.is_finite() {
        let ids: Vec<&str> = batch.iter().map(|e| e.sample.id.as_str()).collect();
        return Err(Error::Numeric(format!("loss for batch [{}]", ids.join(", "))));
    }
    Ok((total, terms))
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub qa: Option<f64>,
    pub pa: Option<f64>,
    pub fa: Option<f64>,
    pub loss: Option<LossTerms>,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best dev FA (the initialization if no epoch ran).
    pub best: Model,
    pub best_epoch: usize,
    pub last: Model,
    pub records: Vec<EpochRecord>,
}

/// Where `train` writes its artifacts.
#[derive(Clone, Debug)]
pub struct OutputDir {
    pub dir: PathBuf,
}

impl OutputDir {
    pub fn model(&self) -> PathBuf {
        self.dir.join("model.json")
    }

    pub fn last_good(&self) -> PathBuf {
        self.dir.join("last_good.json")
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }

    pub fn epoch(&self, e: usize) -> PathBuf {
        self.dir.join(format!("epoch_{e}.json"))
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }
}

/// Learning-rate multiplier: linear warm-up then linear decay.
pub fn schedule(step: usize, total: usize, warmup: f64) -> f64 {
    let warm = ((warmup * total as f64).ceil() as usize).max(1);
    if step <= warm {
        step as f64 / warm as f64
    } else {
        (total + 1 - step) as f64 / (total + 1 - warm) as f64
    }
}

/// Greedy dev metrics for model selection.
pub fn dev_metrics(model: &Model, dev: &[Sample], inputs: &[EncoderInput]) -> Result<ibr_core::EvalReport> {
    let cfg = InferConfig::greedy();
    let preds = dev
        .iter()
        .zip(inputs)
        .map(|(s, i)| generate_with_input(model, s, i, &cfg).map(|d| d.to_prediction(&s.id)))
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate(&preds, dev)?)
}

fn log(out: Option<&OutputDir>, record: &EpochRecord) -> Result<()> {
    if let Some(out) = out {
        let mut f = OpenOptions::new().create(true).append(true).open(out.metrics())?;
        writeln!(f, "{}", serde_json::to_string(record)?)?;
    }
    Ok(())
}

fn save(model: &Model, path: PathBuf) -> Result<()> {
    model.save(path)
}

/// Train from scratch. Every epoch reshuffles the data and the within-type
/// trace order from named sub-streams of `config.seed`; dev FA picks the best
/// checkpoint. `on_epoch` sees each record as it is logged.
pub fn train(
    train: &[Sample],
    dev: &[Sample],
    config: &TrainConfig,
    out: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let out = out.map(|d| OutputDir { dir: d.to_path_buf() });
    if let Some(o) = &out {
        std::fs::create_dir_all(&o.dir)?;
        std::fs::write(o.config(), config.to_toml()?)?;
        if o.metrics().exists() {
            std::fs::remove_file(o.metrics())?;
        }
    }
    let mut model = Model::new(config.model.clone(), config.seed)?;
    let inputs = train.iter().map(|s| model.input(s)).collect::<Result<Vec<_>>>()?;
    let dev = if config.dev_limit > 0 && dev.len() > config.dev_limit { &dev[..config.dev_limit] } else { dev };
    let dev_inputs = dev.iter().map(|s| model.input(s)).collect::<Result<Vec<_>>>()?;
    let weights = config.loss_weights();
    let mut opt = AdamW::new(&model.store, AdamWConfig { weight_decay: config.weight_decay, ..AdamWConfig::default() });
    let batches_per_epoch = train.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * batches_per_epoch;
    let mut records = Vec::new();
    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);
    if let Some(o) = &out {
        save(&model, o.model())?;
    }
    let mut step = 0;
    for epoch in 1..=config.epochs {
        let started = std::time::Instant::now();
        let mut trace_rng = substream(config.seed, "train/trace", epoch as u64);
        let traces = train
            .iter()
            .map(|s| build_gold_trace(s, config.model.fail_mask_naf, &mut trace_rng))
            .collect::<Result<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut substream(config.seed, "train/order", epoch as u64));
        let mut dropout_rng = substream(config.seed, "train/dropout", epoch as u64);
        let mut epoch_loss = LossTerms::default();
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let batch: Vec<Example> =
                chunk.iter().map(|&i| Example { sample: &train[i], input: &inputs[i], trace: &traces[i] }).collect();
            let mut grads = Grads::zeros_like(&model.store);
            let result = {
                let mut g = Graph::new(&model.store, true);
                compute_loss(&mut g, &model, &batch, &weights, config.dropout, &mut dropout_rng).map(|(loss, terms)| {
                    g.backward(loss, &mut grads);
                    terms
                })
            };
            let terms = match result {
                Ok(t) if grads.is_finite() => t,
                failure => {
                    if let Some(o) = &out {
                        save(&model, o.last_good())?;
                    }
                    let message = match failure {
                        Err(e) => e.to_string(),
                        Ok(_) => "non-finite gradient".into(),
                    };
                    return Err(Error::Diverged { epoch, step, message });
                }
            };
            epoch_loss.add(&terms, chunk.len() as f64 / train.len() as f64);
            let norm = grads.global_norm();
            if norm > config.grad_clip {
                grads.scale(config.grad_clip / norm);
            }
            let lr = config.lr.scaled(schedule(step, total_steps, config.warmup));
            opt.step(&mut model.store, &grads, &lr);
        }
        let train_rec = EpochRecord {
            epoch,
            split: "train".into(),
            qa: None,
            pa: None,
            fa: None,
            loss: Some(epoch_loss),
            seconds: started.elapsed().as_secs_f64(),
        };
        log(out.as_ref(), &train_rec)?;
        on_epoch(&train_rec);
        records.push(train_rec);

        let started = std::time::Instant::now();
        let report = dev_metrics(&model, dev, &dev_inputs)?;
        let all = report.all().clone();
        let dev_rec = EpochRecord {
            epoch,
            split: "dev".into(),
            qa: Some(all.qa),
            pa: Some(all.pa),
            fa: Some(all.fa),
            loss: None,
            seconds: started.elapsed().as_secs_f64(),
        };
        log(out.as_ref(), &dev_rec)?;
        on_epoch(&dev_rec);
        records.push(dev_rec);
        if all.fa > best.2 {
            best = (model.clone(), epoch, all.fa);
            if let Some(o) = &out {
                save(&model, o.model())?;
            }
        }
        if let Some(o) = &out {
            if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
                save(&model, o.epoch(epoch))?;
            }
        }
    }
    Ok(TrainOutcome { best: best.0, best_epoch: best.1, last: model, records })
}
