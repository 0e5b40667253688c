use std::collections::BTreeSet;

use ibr_core::datagen::{dataset_stats, generate_dataset, generate_split, random_theory};
use ibr_core::metrics::{evaluate, proof_match, Prediction};
use ibr_core::sample::{load_samples, read_samples};
use ibr_core::{
    build_input_layout, Grammar, LayoutOptions, NodeRef, PartialProof, ProofGraph, Reasoner, Statement,
};
use ibr_core::{GenConfig, Sample};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

fn node_strategy() -> impl Strategy<Value = NodeRef> {
    prop_oneof![(1usize..4).prop_map(NodeRef::Fact), (1usize..5).prop_map(NodeRef::Rule), Just(NodeRef::Naf)]
}

/// Random construction history with a single child under Q.
fn construction() -> impl Strategy<Value = PartialProof> {
    (node_strategy(), proptest::collection::vec((any::<prop::sample::Index>(), node_strategy()), 0..10)).prop_map(
        |(first, rest)| {
            let mut p = PartialProof::new();
            p.add_edge(NodeRef::Question, first).unwrap();
            for (idx, child) in rest {
                let nodes: Vec<NodeRef> = p.nodes()[1..].to_vec();
                let parent = nodes[idx.index(nodes.len())];
                // NAF is a leaf of every proof.
                if parent == NodeRef::Naf {
                    continue;
                }
                let _ = p.add_edge(parent, child);
            }
            p
        },
    )
}

fn small_split(seed: u64, n: usize) -> Vec<Sample> {
    let config = GenConfig { seed, ..GenConfig::default() };
    generate_split(&config, "test", n, 1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn render_parse_round_trip(seed in any::<u64>()) {
        let g = Grammar::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let t = random_theory(&GenConfig::default(), &g, &mut rng).unwrap();
        for f in &t.facts {
            prop_assert_eq!(g.parse_statement(&f.text).unwrap(), Statement::Atom(f.atom.clone()));
        }
        for r in &t.rules {
            let back = Statement::Rule { antecedents: r.antecedents.clone(), consequent: r.consequent.clone() };
            prop_assert_eq!(g.parse_statement(&r.text).unwrap(), back);
        }
    }

    #[test]
    fn level_order_covers_every_node(p in construction()) {
        let order = p.level_order();
        prop_assert_eq!(order.len(), p.len());
        prop_assert_eq!(order[0], NodeRef::Question);
        prop_assert_eq!(order.iter().collect::<BTreeSet<_>>().len(), order.len());
        let replay = PartialProof::from_edges(&p.edges()).unwrap();
        prop_assert_eq!(replay.level_order(), order);
    }

    #[test]
    fn finalize_has_one_sink_and_inverts(p in construction()) {
        let proof = p.finalize();
        prop_assert!(proof.check_invariants().is_ok());
        prop_assert_eq!(proof.sinks().len(), 1);
        let sink = proof.sinks()[0];
        let mut rebuilt: BTreeSet<(NodeRef, NodeRef)> = proof.edges.iter().map(|&(a, b)| (b, a)).collect();
        rebuilt.insert((NodeRef::Question, sink));
        prop_assert_eq!(rebuilt, p.edges().into_iter().collect::<BTreeSet<_>>());
    }

    #[test]
    fn proof_graph_json_round_trip(p in construction()) {
        let g = p.finalize();
        let back: ProofGraph = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn proof_match_ignores_listing_order(p in construction(), seed in any::<u64>()) {
        let g = p.finalize();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut nodes: Vec<NodeRef> = g.nodes.iter().copied().collect();
        let mut edges: Vec<(NodeRef, NodeRef)> = g.edges.iter().copied().collect();
        nodes.shuffle(&mut rng);
        edges.shuffle(&mut rng);
        let shuffled = serde_json::json!({"nodes": nodes, "edges": edges});
        let parsed: ProofGraph = serde_json::from_value(shuffled).unwrap();
        prop_assert!(proof_match(&parsed, &[g.clone()]));
        prop_assert!(proof_match(&g, &[parsed]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generated_samples_are_sound(seed in any::<u64>()) {
        let opts = LayoutOptions::default();
        for s in small_split(seed, 40) {
            let r = Reasoner::new(&s.theory, &[]).unwrap();
            let (answer, strategy) = r.answer_and_strategy(&s.question.atom);
            prop_assert_eq!((answer, strategy), (s.answer, s.strategy));
            prop_assert!(!s.gold_proofs.is_empty());
            for p in &s.gold_proofs {
                prop_assert!(r.verify_proof(&s.question.atom, p, s.strategy), "{}", s.id);
                prop_assert_eq!(p.depth(), s.depth);
                if s.strategy == ibr_core::Strategy::FailProof {
                    prop_assert!(p.nodes.iter().all(|n| n.is_rule()) && (p.is_empty() || p.is_chain()));
                }
            }
            prop_assert!(build_input_layout(&s.question, &s.theory, &opts).is_ok());
            let line = s.to_json_line();
            prop_assert_eq!(read_samples(format!("{line}\n").as_bytes()).unwrap(), vec![s]);
        }
    }

    #[test]
    fn scores_are_bounded_and_order_free(seed in any::<u64>()) {
        let samples = small_split(seed, 30);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut preds: Vec<Prediction> = samples
            .iter()
            .map(|s| Prediction {
                id: s.id.clone(),
                answer: if rng.gen_bool(0.8) { s.answer } else { !s.answer },
                strategy: s.strategy,
                proof: if rng.gen_bool(0.7) { s.gold_proofs[0].clone() } else { ProofGraph::default() },
                truncated: rng.gen_bool(0.05),
                steps: vec![],
            })
            .collect();
        let report = evaluate(&preds, &samples).unwrap();
        for row in &report.rows {
            prop_assert!(row.fa <= row.qa.min(row.pa));
        }
        prop_assert_eq!(report.rows.iter().filter(|r| r.depth.is_some()).map(|r| r.count).sum::<usize>(), samples.len());
        preds.shuffle(&mut rng);
        let mut rev = samples.clone();
        rev.reverse();
        prop_assert_eq!(evaluate(&preds, &rev).unwrap(), report);
    }
}

#[test]
fn naf_question_has_source_naf_node() {
    let samples = small_split(42, 300);
    let with_naf: Vec<&Sample> =
        samples.iter().filter(|s| s.gold_proofs[0].nodes.contains(&NodeRef::Naf)).collect();
    assert!(!with_naf.is_empty());
    for s in with_naf {
        assert!(s.gold_proofs[0].incoming(NodeRef::Naf).is_empty());
    }
}

#[test]
fn depth_zero_proof_is_single_fact() {
    for s in small_split(7, 100) {
        if s.depth == 0 && s.strategy == ibr_core::Strategy::Proof {
            let p = s.canonical_proof();
            assert_eq!(p.nodes.len(), 1);
            assert!(p.nodes.iter().next().unwrap().is_fact());
        }
    }
}

#[test]
fn dataset_files_are_deterministic() {
    let config = GenConfig {
        samples_per_split: ibr_core::datagen::SplitSizes { train: 50, dev: 10, test: 20 },
        target_depth_distribution: [(0, 0.3), (1, 0.4), (2, 0.3)].into_iter().collect(),
        ..GenConfig::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let manifest = generate_dataset(&config, a.path(), 1).unwrap();
    generate_dataset(&config, b.path(), 3).unwrap();
    for f in ["train.jsonl", "dev.jsonl", "test.jsonl", "manifest.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_eq!(manifest.counts["train"], 50);
    let train = load_samples(a.path().join("train.jsonl")).unwrap();
    let lines = std::fs::read_to_string(a.path().join("train.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 50);
    assert!(lines.lines().all(|l| !l.ends_with(char::is_whitespace)));
    let stats = dataset_stats(&train);
    for (d, frac) in &config.target_depth_distribution {
        let got = stats.iter().find(|r| r.depth == *d).map_or(0, |r| r.count) as f64;
        assert!((got - 50.0 * frac).abs() <= 1.0, "depth {d}: {got}");
    }
}

#[test]
fn fail_share_shrinks_with_depth() {
    let config = GenConfig {
        target_depth_distribution: [(0, 0.25), (1, 0.25), (2, 0.25), (3, 0.25)].into_iter().collect(),
        ..GenConfig::default()
    };
    let samples = generate_split(&config, "train", 400, 1).unwrap();
    let stats = dataset_stats(&samples);
    let fails: Vec<usize> = stats.iter().map(|r| r.fail).collect();
    assert!(fails.windows(2).all(|w| w[0] > w[1]), "{fails:?}");
}
