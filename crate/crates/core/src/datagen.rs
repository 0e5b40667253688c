//! Depth-stratified synthetic theories labeled by the oracle.
//!
//! Every sample is assigned a `(depth, strategy, answer)` bucket up front so
//! split statistics hit their targets exactly; a sample is then produced by
//! drawing random theories until one of its questions falls in the bucket.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{Grammar, ATTRIBUTE_POOL, ENTITY_POOL};
use crate::layout::{build_input_layout, LayoutOptions};
use crate::oracle::Reasoner;
use crate::proof::ProofGraph;
use crate::rng::substream;
use crate::sample::{save_samples, Sample};
use crate::theory::{Atom, Strategy, Term, Theory};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, usize)> {
        [("train", self.train), ("dev", self.dev), ("test", self.test)].into_iter()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Entities drawn per theory.
    pub entity_count: usize,
    /// Attributes drawn per theory.
    pub attribute_count: usize,
    pub fact_count: [usize; 2],
    pub rule_count: [usize; 2],
    pub max_antecedents: usize,
    pub negation_enabled: bool,
    pub max_sentences: usize,
    /// Fraction of samples per proof depth.
    pub target_depth_distribution: BTreeMap<usize, f64>,
    /// FAIL_PROOF share per depth; the last entry covers deeper buckets.
    pub fail_share: Vec<f64>,
    pub samples_per_split: SplitSizes,
    pub seed: u64,
    /// Theory draws per sample before giving up.
    pub retry_budget: usize,
    /// Largest proof enumerated when collecting alternative gold proofs.
    pub proof_node_bound: usize,
    pub max_len: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            entity_count: 3,
            attribute_count: 8,
            fact_count: [2, 6],
            rule_count: [2, 6],
            max_antecedents: 2,
            negation_enabled: true,
            max_sentences: 12,
            target_depth_distribution: [(0, 0.3), (1, 0.4), (2, 0.3)].into_iter().collect(),
            fail_share: vec![0.4, 0.25, 0.15, 0.1, 0.05],
            samples_per_split: SplitSizes { train: 8000, dev: 1000, test: 2000 },
            seed: 42,
            retry_budget: 10_000,
            proof_node_bound: 12,
            max_len: 512,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        let total: f64 = self.target_depth_distribution.values().sum();
        if self.target_depth_distribution.is_empty() || (total - 1.0).abs() > 1e-6 {
            return bad("depth fractions must sum to 1");
        }
        if self.target_depth_distribution.values().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("depth fractions must lie in [0, 1]");
        }
        if self.fail_share.is_empty() || self.fail_share.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("fail shares must lie in [0, 1]");
        }
        if self.entity_count == 0 || self.entity_count > ENTITY_POOL.len() {
            return bad("entity_count out of range");
        }
        if self.attribute_count < 2 || self.attribute_count > ATTRIBUTE_POOL.len() {
            return bad("attribute_count out of range");
        }
        if self.fact_count[0] > self.fact_count[1] || self.rule_count[0] > self.rule_count[1] {
            return bad("count ranges must be ordered");
        }
        if self.fact_count[0] + self.rule_count[0] > self.max_sentences || self.max_sentences == 0 {
            return bad("minimum theory size exceeds max_sentences");
        }
        if self.max_antecedents == 0 || self.max_antecedents >= self.attribute_count {
            return bad("max_antecedents must be in 1..attribute_count");
        }
        if self.retry_budget == 0 {
            return bad("retry_budget must be positive");
        }
        Ok(())
    }

    /// Parse `0:0.3,1:0.4,2:0.3`.
    pub fn parse_depths(text: &str) -> Result<BTreeMap<usize, f64>> {
        text.split(',')
            .map(|part| {
                let (d, f) = part
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("expected depth:fraction, got `{part}`")))?;
                let d = d.trim().parse().map_err(|_| Error::Config(format!("bad depth `{d}`")))?;
                let f = f.trim().parse().map_err(|_| Error::Config(format!("bad fraction `{f}`")))?;
                Ok((d, f))
            })
            .collect()
    }

    fn fail_share_at(&self, depth: usize) -> f64 {
        self.fail_share[depth.min(self.fail_share.len() - 1)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bucket {
    pub depth: usize,
    pub strategy: Strategy,
    pub answer: bool,
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(depth {}, {}, {})", self.depth, self.strategy, self.answer)
    }
}

/// Split `n` by `weights` with largest-remainder rounding.
fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = n - counts.iter().sum::<usize>();
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Bucket of every sample in a split of size `n`, in sample order.
pub fn plan_buckets(config: &GenConfig, split: &str, n: usize) -> Vec<Bucket> {
    let depths: Vec<usize> = config.target_depth_distribution.keys().copied().collect();
    let fracs: Vec<f64> = config.target_depth_distribution.values().copied().collect();
    let mut out = Vec::with_capacity(n);
    for (&depth, count) in depths.iter().zip(apportion(n, &fracs)) {
        let share = config.fail_share_at(depth);
        let per_strategy = apportion(count, &[1.0 - share, share]);
        for (strategy, m) in [(Strategy::Proof, per_strategy[0]), (Strategy::FailProof, per_strategy[1])] {
            for i in 0..m {
                out.push(Bucket { depth, strategy, answer: i % 2 == 0 });
            }
        }
    }
    out.shuffle(&mut substream(config.seed, &format!("{split}/buckets"), 0));
    out
}

/// One unlabeled random theory (may be unstratified or inconsistent).
pub fn random_theory(config: &GenConfig, grammar: &Grammar, rng: &mut impl Rng) -> Result<Theory> {
    let entities: Vec<&str> = ENTITY_POOL.choose_multiple(rng, config.entity_count).copied().collect();
    let attributes: Vec<&str> = ATTRIBUTE_POOL.choose_multiple(rng, config.attribute_count).copied().collect();
    let mut n_facts = rng.gen_range(config.fact_count[0]..=config.fact_count[1]);
    let mut n_rules = rng.gen_range(config.rule_count[0]..=config.rule_count[1]);
    while n_facts + n_rules > config.max_sentences {
        if n_rules > config.rule_count[0] {
            n_rules -= 1;
        } else {
            n_facts -= 1;
        }
    }
    let neg = |rng: &mut dyn rand::RngCore, p: f64| config.negation_enabled && rng.gen_bool(p);

    let mut facts: Vec<Atom> = Vec::new();
    let mut reachable: BTreeSet<&str> = BTreeSet::new();
    for _ in 0..n_facts * 4 {
        if facts.len() == n_facts {
            break;
        }
        let a = Atom::ground(entities.choose(rng).unwrap(), attributes.choose(rng).unwrap(), !neg(rng, 0.25));
        if !facts.iter().any(|f| f.entity == a.entity && f.attribute == a.attribute) {
            reachable.insert(attributes.iter().find(|x| **x == a.attribute).unwrap());
            facts.push(a);
        }
    }

    // Antecedents favour attributes that facts or earlier rules can supply,
    // so chains of the requested depth are common.
    let mut rules: Vec<(Vec<Atom>, Atom)> = Vec::new();
    for _ in 0..n_rules {
        let k = rng.gen_range(1..=config.max_antecedents);
        let mut used: Vec<&str> = Vec::new();
        while used.len() < k {
            let pool: Vec<&str> = if rng.gen_bool(0.75) {
                reachable.iter().copied().filter(|a| !used.contains(a)).collect()
            } else {
                Vec::new()
            };
            let pick = match pool.choose(rng) {
                Some(a) => *a,
                None => *attributes.choose(rng).unwrap(),
            };
            if !used.contains(&pick) {
                used.push(pick);
            }
        }
        let head = loop {
            let a = *attributes.choose(rng).unwrap();
            if !used.contains(&a) {
                break a;
            }
        };
        let subject = if rng.gen_bool(0.2) { Term::named(*entities.choose(rng).unwrap()) } else { Term::Someone };
        let ants = used.iter().map(|a| Atom::new(subject.clone(), *a, !neg(rng, 0.25))).collect();
        rules.push((ants, Atom::new(subject, head, !neg(rng, 0.15))));
        reachable.insert(head);
    }
    facts.shuffle(rng);
    rules.shuffle(rng);

    let facts = facts.into_iter().enumerate().map(|(i, a)| grammar.fact(i + 1, a)).collect::<Result<_>>()?;
    let rules = rules.into_iter().enumerate().map(|(i, (a, c))| grammar.rule(i + 1, a, c)).collect::<Result<_>>()?;
    Theory::new(facts, rules)
}

/// Bucket of `question` under `reasoner`, with its gold proofs.
fn label(config: &GenConfig, reasoner: &Reasoner<'_>, question: &Atom) -> Result<(Bucket, Vec<ProofGraph>)> {
    let (answer, strategy) = reasoner.answer_and_strategy(question);
    match strategy {
        Strategy::Proof => {
            let (canonical, depth) = reasoner.extract_gold_proof(question)?;
            let mut golds = vec![canonical.clone()];
            let found = reasoner.minimal_proofs(question, config.proof_node_bound, 50_000);
            if found.complete {
                golds.extend(found.proofs.into_iter().filter(|p| *p != canonical));
            }
            Ok((Bucket { depth, strategy, answer }, golds))
        }
        Strategy::FailProof => {
            let chain = reasoner.fail_chain(question)?;
            Ok((Bucket { depth: chain.nodes.len(), strategy, answer }, vec![chain]))
        }
    }
}

/// Draw theories until one yields a question in `bucket`.
pub fn generate_sample(config: &GenConfig, bucket: Bucket, id: &str, rng: &mut impl Rng) -> Result<Sample> {
    let grammar = Grammar::default();
    let layout = LayoutOptions { max_len: config.max_len, ..LayoutOptions::default() };
    for _ in 0..config.retry_budget {
        let theory = random_theory(config, &grammar, rng)?;
        let Ok(reasoner) = Reasoner::new(&theory, &[]) else { continue };
        let mut attrs: Vec<&str> = theory
            .facts
            .iter()
            .map(|f| &f.atom)
            .chain(theory.rules.iter().flat_map(|r| r.antecedents.iter().chain([&r.consequent])))
            .map(|a| a.attribute.as_str())
            .collect();
        attrs.sort();
        attrs.dedup();
        let mut candidates = Vec::new();
        for e in reasoner.universe() {
            for a in &attrs {
                for polarity in [true, false] {
                    let q = Atom::ground(e, a, polarity);
                    let (answer, strategy) = reasoner.answer_and_strategy(&q);
                    if answer != bucket.answer || strategy != bucket.strategy {
                        continue;
                    }
                    let depth = match strategy {
                        Strategy::Proof => {
                            let target = if answer { q.clone() } else { q.negated() };
                            reasoner.table().depth(&target)
                        }
                        Strategy::FailProof => reasoner.fail_chain(&q).ok().map(|c| c.nodes.len()),
                    };
                    if depth == Some(bucket.depth) {
                        candidates.push(q);
                    }
                }
            }
        }
        candidates.shuffle(rng);
        for q in candidates {
            let (got, gold_proofs) = label(config, &reasoner, &q)?;
            if got != bucket {
                continue;
            }
            let question = grammar.question(q)?;
            if build_input_layout(&question, &theory, &layout).is_err() {
                break;
            }
            debug_assert!(gold_proofs.iter().all(|p| reasoner.verify_proof(&question.atom, p, bucket.strategy)));
            return Ok(Sample {
                id: id.to_owned(),
                theory,
                question,
                answer: bucket.answer,
                strategy: bucket.strategy,
                depth: bucket.depth,
                gold_proofs,
            });
        }
    }
    Err(Error::Generation { bucket: bucket.to_string(), attempts: config.retry_budget })
}

/// All samples of one split; `workers` threads share the work, output is in index order.
pub fn generate_split(config: &GenConfig, split: &str, n: usize, workers: usize) -> Result<Vec<Sample>> {
    config.validate()?;
    let buckets = plan_buckets(config, split, n);
    let one = |i: usize| {
        let mut rng = substream(config.seed, split, i as u64);
        generate_sample(config, buckets[i], &format!("{split}-{i:05}"), &mut rng)
    };
    let workers = workers.max(1).min(n.max(1));
    if workers == 1 {
        return (0..n).map(one).collect();
    }
    let mut slots: Vec<Option<Result<Sample>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (w, chunk) in slots.chunks_mut(n.div_ceil(workers)).enumerate() {
            let start = w * n.div_ceil(workers);
            let one = &one;
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(one(start + k));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenConfig,
    pub counts: BTreeMap<String, usize>,
    pub files: BTreeMap<String, PathBuf>,
}

/// Writes `train.jsonl`, `dev.jsonl`, `test.jsonl` and `manifest.json` into `dir`.
pub fn generate_dataset(config: &GenConfig, dir: &Path, workers: usize) -> Result<Manifest> {
    config.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut counts = BTreeMap::new();
    let mut files = BTreeMap::new();
    for (split, n) in config.samples_per_split.iter() {
        let samples = generate_split(config, split, n, workers)?;
        let name = PathBuf::from(format!("{split}.jsonl"));
        save_samples(dir.join(&name), &samples)?;
        counts.insert(split.to_owned(), samples.len());
        files.insert(split.to_owned(), name);
    }
    let manifest = Manifest { config: config.clone(), counts, files };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthStats {
    pub depth: usize,
    pub count: usize,
    pub proof: usize,
    pub fail: usize,
    /// Mean node count of the first gold proof.
    pub avg_nodes: f64,
}

pub fn dataset_stats(samples: &[Sample]) -> Vec<DepthStats> {
    let mut by_depth: BTreeMap<usize, (usize, usize, usize, usize)> = BTreeMap::new();
    for s in samples {
        let e = by_depth.entry(s.depth).or_default();
        e.0 += 1;
        match s.strategy {
            Strategy::Proof => e.1 += 1,
            Strategy::FailProof => e.2 += 1,
        }
        e.3 += s.canonical_proof().nodes.len();
    }
    by_depth
        .into_iter()
        .map(|(depth, (count, proof, fail, nodes))| DepthStats {
            depth,
            count,
            proof,
            fail,
            avg_nodes: nodes as f64 / count as f64,
        })
        .collect()
}

pub fn format_stats(stats: &[DepthStats]) -> String {
    let mut out = format!("{:>5} {:>7} {:>7} {:>7} {:>9}\n", "depth", "count", "proof", "fail", "avg_node");
    for s in stats {
        out += &format!("{:>5} {:>7} {:>7} {:>7} {:>9.2}\n", s.depth, s.count, s.proof, s.fail, s.avg_nodes);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(10, &[0.3, 0.4, 0.3]), vec![3, 4, 3]);
        assert_eq!(apportion(7, &[0.3, 0.4, 0.3]).iter().sum::<usize>(), 7);
        assert_eq!(apportion(0, &[1.0]), vec![0]);
    }

    #[test]
    fn buckets_follow_targets() {
        let config = GenConfig::default();
        let buckets = plan_buckets(&config, "train", 1000);
        let depth = |d| buckets.iter().filter(|b| b.depth == d).count();
        assert_eq!((depth(0), depth(1), depth(2)), (300, 400, 300));
        let fails = buckets.iter().filter(|b| b.depth == 0 && b.strategy == Strategy::FailProof).count();
        assert_eq!(fails, 120);
    }

    #[test]
    fn depth_flag_parses() {
        let d = GenConfig::parse_depths("0:0.3,1:0.4,2:0.3").unwrap();
        assert_eq!(d.len(), 3);
        assert!(GenConfig::parse_depths("0-0.3").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(GenConfig::default().validate().is_ok());
        let bad = GenConfig { target_depth_distribution: [(0, 0.5)].into_iter().collect(), ..GenConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn stats_arithmetic() {
        let s = |nodes: usize| {
            let proof = ProofGraph::new((1..=nodes).map(crate::theory::NodeRef::Fact), []);
            Sample {
                id: "x".into(),
                theory: crate::fixtures::t1(),
                question: crate::fixtures::question("Anne", "big", true),
                answer: true,
                strategy: Strategy::Proof,
                depth: 0,
                gold_proofs: vec![proof],
            }
        };
        assert_eq!(dataset_stats(&[s(1)])[0].avg_nodes, 1.0);
        assert_eq!(dataset_stats(&[s(1), s(3)])[0].avg_nodes, 2.0);
    }
}
