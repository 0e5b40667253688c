//! Rule-based reasoning substrate: theories in controlled English, proof
//! graphs, an exact closed-world oracle, synthetic data and scoring.

pub mod datagen;
pub mod error;
pub mod fixtures;
pub mod grammar;
pub mod layout;
pub mod metrics;
pub mod oracle;
pub mod proof;
pub mod rng;
pub mod sample;
pub mod theory;

pub use datagen::{dataset_stats, generate_dataset, generate_sample, generate_split, GenConfig};
pub use error::{Error, Result};
pub use grammar::{Grammar, Statement};
pub use layout::{build_input_layout, InputLayout, LayoutOptions};
pub use metrics::{evaluate, proof_match, EvalReport, Prediction, StepRecord};
pub use oracle::{
    answer_and_strategy, enumerate_proofs, extract_gold_proof, fail_chain, forward_chain, verify_proof,
    DerivationTable, Reasoner,
};
pub use proof::{finalize_proof, level_traversal_order, PartialProof, ProofGraph};
pub use sample::Sample;
pub use theory::{Atom, Fact, NodeRef, Question, Rule, Strategy, Term, Theory};
