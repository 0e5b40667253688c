use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ibr_core::datagen::{dataset_stats, format_stats, generate_dataset, SplitSizes};
use ibr_core::metrics::{evaluate, load_predictions};
use ibr_core::sample::load_samples;
use ibr_core::{GenConfig, NodeRef, Reasoner, Strategy};
use ibr_model::bench::latency_bench;
use ibr_model::infer::predict;
use ibr_model::train::train;
use ibr_model::{InferConfig, LearningRates, LossTerm, Model, Pooling, TrainConfig};

#[derive(Parser)]
#[command(name = "ibr", version, about = "Iterative backward reasoning over rule-based theories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/dev/test JSONL files and a manifest.
    GenData(GenDataArgs),
    /// Train a model; writes model.json, metrics.jsonl and config.toml.
    Train(TrainArgs),
    /// Decode a dataset into a predictions JSONL file.
    Predict(PredictArgs),
    /// Score predictions against a dataset (QA/PA/FA per depth).
    Eval(EvalArgs),
    /// Per-sample latency by proof depth (beam size 1).
    Bench(BenchArgs),
    /// Pretty-print one sample and check its gold proofs with the oracle.
    Inspect(InspectArgs),
}

#[derive(clap::Args)]
struct GenDataArgs {
    /// Output directory.
    #[arg(long, default_value = "data")]
    out: PathBuf,
    /// Generator config (TOML); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed [default: 42].
    #[arg(long)]
    seed: Option<u64>,
    /// Depth distribution, e.g. `0:0.3,1:0.4,2:0.3` [default: that one].
    #[arg(long)]
    depths: Option<String>,
    /// Train split size [default: 8000].
    #[arg(long)]
    train: Option<usize>,
    /// Dev split size [default: 1000].
    #[arg(long)]
    dev: Option<usize>,
    /// Test split size [default: 2000].
    #[arg(long)]
    test: Option<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Training config (TOML); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// [default: 8]
    #[arg(long)]
    epochs: Option<usize>,
    /// [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Strategy loss weight [default: 1.0].
    #[arg(long)]
    alpha: Option<f64>,
    /// Dev samples decoded per epoch, 0 = all [default: 0].
    #[arg(long)]
    dev_limit: Option<usize>,
    /// Use the learning rates meant for a pretrained encoder.
    #[arg(long)]
    pretrained_rates: bool,
    #[arg(long)]
    strip_function_words: bool,
    #[arg(long)]
    no_focus_pos_emb: bool,
    /// Pool spans by their mean instead of recurrent encoders.
    #[arg(long)]
    mean_pooling: bool,
    /// Leave a loss term out of training (repeatable).
    #[arg(long, value_enum)]
    drop_loss: Vec<LossArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Qa,
    Strategy,
    Parent,
    Child,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Proof,
    Fail,
}

#[derive(clap::Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    beam: usize,
    #[arg(long, default_value_t = 30)]
    max_steps: usize,
    #[arg(long)]
    force_gold_parent: bool,
    #[arg(long)]
    force_gold_child: bool,
    /// Decode with this strategy instead of the predicted one.
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Under FAIL_PROOF answer by question polarity instead of the QA head.
    #[arg(long)]
    rule_based_fail_answer: bool,
    /// Drop the position embedding in path focus selection.
    #[arg(long)]
    no_focus_pos_emb: bool,
    #[arg(long)]
    strip_function_words: bool,
    /// Decode only the first N samples.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Also write a per-depth bar chart.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(clap::Args)]
struct InspectArgs {
    #[arg(long)]
    data: PathBuf,
    /// Sample id, e.g. `test-00017`.
    id: String,
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => toml::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("reading {}", p.display()))?,
        None => GenConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(d) = &a.depths {
        config.target_depth_distribution = GenConfig::parse_depths(d)?;
    }
    let sizes = &mut config.samples_per_split;
    *sizes = SplitSizes {
        train: a.train.unwrap_or(sizes.train),
        dev: a.dev.unwrap_or(sizes.dev),
        test: a.test.unwrap_or(sizes.test),
    };
    let manifest = generate_dataset(&config, &a.out, a.workers)?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);
    let train = load_samples(a.out.join("train.jsonl"))?;
    eprintln!("{}", format_stats(&dataset_stats(&train)));
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.epochs {
        config.epochs = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = a.alpha {
        config.alpha = v;
    }
    if let Some(v) = a.dev_limit {
        config.dev_limit = v;
    }
    if a.pretrained_rates {
        config.lr = LearningRates::pretrained();
    }
    config.model.strip_function_words |= a.strip_function_words;
    config.model.focus_pos_emb &= !a.no_focus_pos_emb;
    if a.mean_pooling {
        config.model.pooling = Pooling::Mean;
    }
    config.drop_loss.extend(a.drop_loss.iter().map(|t| match t {
        LossArg::Qa => LossTerm::Qa,
        LossArg::Strategy => LossTerm::Strategy,
        LossArg::Parent => LossTerm::Parent,
        LossArg::Child => LossTerm::Child,
    }));
    let train_set = load_samples(&a.train)?;
    let dev_set = load_samples(&a.dev)?;
    let out = train(&train_set, &dev_set, &config, Some(&a.out), |r| {
        println!("{}", serde_json::to_string(r).expect("record serializes"));
    })?;
    eprintln!("best dev FA at epoch {}; checkpoint {}", out.best_epoch, a.out.join("model.json").display());
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let mut model = Model::load(&a.model)?;
    if a.no_focus_pos_emb {
        model.set_focus_pos_emb(false);
    }
    model.config.strip_function_words |= a.strip_function_words;
    let mut samples = load_samples(&a.data)?;
    if let Some(n) = a.limit {
        samples.truncate(n);
    }
    let config = InferConfig {
        beam_size: a.beam,
        max_steps: a.max_steps,
        force_gold_parent: a.force_gold_parent,
        force_gold_child: a.force_gold_child,
        strategy_override: a.strategy.map(|s| match s {
            StrategyArg::Proof => Strategy::Proof,
            StrategyArg::Fail => Strategy::FailProof,
        }),
        rule_based_fail_answer: a.rule_based_fail_answer,
    };
    config.validate()?;
    let preds = predict(&model, &samples, &config, a.workers)?;
    let mut w = BufWriter::new(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    for p in &preds {
        writeln!(w, "{}", serde_json::to_string(p)?)?;
    }
    w.flush()?;
    let truncated = preds.iter().filter(|p| p.truncated).count();
    eprintln!("wrote {} predictions ({truncated} truncated) to {}", preds.len(), a.out.display());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let preds = load_predictions(&a.predictions)?;
    let samples = load_samples(&a.data)?;
    let report = evaluate(&preds, &samples)?;
    print!("{}", report.to_table());
    if let Some(p) = &a.json {
        std::fs::write(p, serde_json::to_string_pretty(&report)?)?;
    }
    if let Some(p) = &a.svg {
        std::fs::write(p, report.to_svg())?;
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let mut samples = load_samples(&a.data)?;
    if let Some(n) = a.limit {
        samples.truncate(n);
    }
    let report = latency_bench(&model, &samples, &InferConfig::greedy(), a.repetitions)?;
    println!("{}", report.to_table());
    if let Some(p) = &a.json {
        std::fs::write(p, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn inspect_cmd(a: InspectArgs) -> Result<()> {
    let samples = load_samples(&a.data)?;
    let Some(s) = samples.iter().find(|s| s.id == a.id) else { bail!("no sample with id {}", a.id) };
    println!("{}", s.id);
    for (node, text) in s.theory.context_nodes().into_iter().zip(s.theory.sentences()) {
        println!("  {node:>4}  {text}");
    }
    println!("question: {}", s.question.text);
    println!("answer: {}  strategy: {}  depth: {}", s.answer, s.strategy, s.depth);
    let reasoner = Reasoner::new(&s.theory, &[])?;
    let (answer, strategy) = reasoner.answer_and_strategy(&s.question.atom);
    let labels_ok = (answer, strategy) == (s.answer, s.strategy);
    println!("oracle labels: {}", if labels_ok { "agree" } else { "DISAGREE" });
    let mut all_ok = labels_ok;
    for (i, p) in s.gold_proofs.iter().enumerate() {
        let ok = reasoner.verify_proof(&s.question.atom, p, s.strategy);
        all_ok &= ok;
        let edges: Vec<String> = p.edges.iter().map(|(a, b)| format!("{a}->{b}")).collect();
        let nodes: Vec<String> = p.nodes.iter().map(NodeRef::to_string).collect();
        println!("proof {i}: nodes [{}] edges [{}] verify_proof: {ok}", nodes.join(" "), edges.join(" "));
    }
    if !all_ok {
        bail!("sample {} fails oracle verification", s.id);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Inspect(a) => inspect_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}
