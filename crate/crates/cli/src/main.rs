use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use kgdial::corpus::{load_dialogs, load_labels, validate_split, Dialog, Split};
use kgdial::detector::tune_threshold;
use kgdial::entity_filter::filter_stats;
use kgdial::generator::{build_gen_input_from, generate_all};
use kgdial::metrics::pipeline_score;
use kgdial::pipeline::{
    build_filter_stage, load_component, load_predictions, predictions_to_json, run_pipeline, save_component,
    train_detector_stage, train_embedding_stage, train_generator_stage, train_ranker_stage, ChatReply, ChatSession,
    Component, ModelBundle, Pipeline, PipelineConfig, SelectionMode, CHAT_HELP,
};
use kgdial::selector::Stage;
use kgdial::verify::run_suite;
use kgdial::{DetectorEnsemble, Error};

#[derive(Parser)]
#[command(name = "kgdial", version, about = "Knowledge-grounded dialog pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON pipeline config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory that relative data paths are resolved against.
    #[arg(long, global = true, env = "KGD_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    model_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Detection threshold.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    mode: Option<SelectionMode>,
    /// Focal-loss focusing parameter.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    ensemble_size: Option<usize>,
    /// Maximum generated length.
    #[arg(long, global = true)]
    max_len: Option<usize>,
    /// Train the generator without the copy path.
    #[arg(long, global = true)]
    no_pointer: bool,
    /// Rank every entity instead of the filtered candidates.
    #[arg(long, global = true)]
    no_entity_filter: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Entity,
    Knowledge,
    Embedding,
}

#[derive(Subcommand)]
enum Command {
    /// Validate dialogs, labels and knowledge.
    Ingest {
        #[arg(long)]
        logs: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        knowledge: Option<PathBuf>,
    },
    /// Build entity patterns from the training split and report candidate statistics.
    BuildFilter {
        #[arg(long)]
        exact_only: bool,
        /// Split to build from and report on; defaults to the training split.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Train the detector ensemble.
    TrainDetector,
    /// Detection probabilities and decisions for a dialog file.
    Detect {
        #[arg(long)]
        logs: Option<PathBuf>,
    },
    /// Train one selection stage.
    TrainSelector {
        #[arg(long, value_enum)]
        stage: StageArg,
    },
    /// Ranked snippets for every dialog of a file.
    Select {
        #[arg(long)]
        logs: Option<PathBuf>,
    },
    /// Train the pointer-generator.
    TrainGenerator,
    /// Responses grounded in the labelled snippets of a split.
    Generate {
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Detection, selection and generation over a dialog file.
    RunPipeline {
        #[arg(long)]
        logs: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against labels.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Also check that every labelled snippet exists in this knowledge base.
        #[arg(long)]
        knowledge: Option<PathBuf>,
    },
    /// Interactive session on standard input.
    Chat,
    /// Finite-difference check of every gradient.
    Gradcheck {
        /// Number of random points per check.
        #[arg(long, default_value_t = 100)]
        points: u64,
    },
}

fn config(g: &Global) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(d) = &g.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(m) = &g.model_dir {
        cfg.model_dir = m.clone();
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(t) = g.threshold {
        cfg.threshold = t;
    }
    if let Some(m) = g.mode {
        cfg.mode = m;
    }
    if let Some(gamma) = g.gamma {
        cfg.focal.gamma = gamma;
    }
    if let Some(n) = g.ensemble_size {
        cfg.ensemble_size = n;
    }
    if let Some(n) = g.max_len {
        cfg.generator.max_len = n;
    }
    if g.no_pointer {
        cfg.generator.use_pointer = false;
    }
    if g.no_entity_filter {
        cfg.entity_filter = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json prints"));
}

fn model_dir(cfg: &PipelineConfig) -> PathBuf {
    cfg.resolve(&cfg.model_dir)
}

fn dialogs_arg(cfg: &PipelineConfig, logs: &Option<PathBuf>) -> kgdial::Result<Vec<Dialog>> {
    load_dialogs(&cfg.resolve(logs.as_deref().unwrap_or(&cfg.logs)))
}

fn splits(cfg: &PipelineConfig) -> kgdial::Result<(Split, Split)> {
    Ok((cfg.load_split(&cfg.train_dir)?, cfg.load_split(&cfg.valid_dir)?))
}

fn ingest(
    cfg: &PipelineConfig,
    logs: &Option<PathBuf>,
    labels: &Option<PathBuf>,
    knowledge: &Option<PathBuf>,
) -> anyhow::Result<()> {
    let train = cfg.resolve(&cfg.train_dir);
    let logs = logs
        .as_ref()
        .map(|p| cfg.resolve(p))
        .unwrap_or_else(|| train.join("logs.json"));
    let labels = labels
        .as_ref()
        .map(|p| cfg.resolve(p))
        .unwrap_or_else(|| train.join("labels.json"));
    let kb_path = cfg.resolve(knowledge.as_deref().unwrap_or(&cfg.knowledge));
    let dialogs = load_dialogs(&logs)?;
    let labels = load_labels(&labels)?;
    let kb = kgdial::corpus::load_knowledge(&kb_path)?;
    let report = validate_split(&dialogs, &labels, &kb);
    for f in &report.findings {
        eprintln!("{f}");
    }
    print_json(&json!({
        "dialogs": dialogs.len(),
        "knowledge_seeking": labels.iter().filter(|l| l.target).count(),
        "entities": kb.num_entities(),
        "snippets": kb.len(),
        "findings": report.findings.len(),
    }));
    if !report.is_empty() {
        bail!(Error::InvalidData(format!(
            "{} validation finding(s)",
            report.findings.len()
        )));
    }
    Ok(())
}

fn build_filter_cmd(cfg: &mut PipelineConfig, exact_only: bool, split: &Option<PathBuf>) -> anyhow::Result<()> {
    if exact_only {
        cfg.filter.fuzzy = false;
    }
    let kb = cfg.load_knowledge()?;
    let split = cfg.load_split(split.as_deref().unwrap_or(&cfg.train_dir))?;
    let patterns = build_filter_stage(cfg, &split, &kb)?;
    save_component(&model_dir(cfg), Component::EntityFilter, &patterns)?;
    print_json(&serde_json::to_value(filter_stats(&split, &patterns, &kb))?);
    Ok(())
}

fn train_detector_cmd(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let (train, valid) = splits(cfg)?;
    let ens = train_detector_stage(cfg, &train, &valid)?;
    save_component(&model_dir(cfg), Component::Detector, &ens)?;
    let probs: Vec<f64> = valid.dialogs.iter().map(|d| ens.probability(d)).collect();
    let gold: Vec<bool> = valid.labels.iter().map(|l| l.target).collect();
    let pred = ens.decide_all(&valid.dialogs);
    print_json(&json!({
        "members": ens.members().len(),
        "threshold": ens.threshold(),
        "valid_detection": kgdial::metrics::prf1(&pred, &gold),
        "tuned_threshold": tune_threshold(&probs, &gold),
    }));
    Ok(())
}

fn detect_cmd(cfg: &PipelineConfig, logs: &Option<PathBuf>) -> anyhow::Result<()> {
    let ens: DetectorEnsemble = load_component(&model_dir(cfg), Component::Detector)?;
    let dialogs = dialogs_arg(cfg, logs)?;
    let out: Vec<_> = dialogs
        .iter()
        .map(|d| {
            json!({
                "probability": ens.probability(d),
                "target": kgdial::detector::ensemble_detect(&ens, d, cfg.threshold),
            })
        })
        .collect();
    print_json(&json!(out));
    Ok(())
}

fn train_selector_cmd(cfg: &PipelineConfig, stage: StageArg) -> anyhow::Result<()> {
    let (train, valid) = splits(cfg)?;
    let kb = cfg.load_knowledge()?;
    let dir = model_dir(cfg);
    match stage {
        StageArg::Entity => {
            let filter = if cfg.entity_filter {
                Some(load_component(&dir, Component::EntityFilter)?)
            } else {
                None
            };
            let ens = train_ranker_stage(cfg, Stage::Entity, &train, &valid, &kb, filter.as_ref())?;
            save_component(&dir, Component::EntityRanker, &ens)?;
        }
        StageArg::Knowledge => {
            let ens = train_ranker_stage(cfg, Stage::Knowledge, &train, &valid, &kb, None)?;
            save_component(&dir, Component::KnowledgeRanker, &ens)?;
        }
        StageArg::Embedding => {
            let (enc, log) = train_embedding_stage(cfg, &train, &valid, &kb)?;
            save_component(&dir, Component::Embedding, &enc)?;
            print_json(&json!({ "mined": log.gaps.len(), "skipped": log.skipped }));
        }
    }
    Ok(())
}

fn select_cmd(cfg: &PipelineConfig, logs: &Option<PathBuf>) -> anyhow::Result<()> {
    let kb = cfg.load_knowledge()?;
    let bundle = ModelBundle::load_components(&model_dir(cfg), cfg, &Component::selection(cfg))?;
    let dialogs = dialogs_arg(cfg, logs)?;
    let pipeline = Pipeline::for_selection(&bundle, &kb, cfg)?;
    let mut out = Vec::with_capacity(dialogs.len());
    for d in &dialogs {
        let sel = pipeline.select(d, cfg.top_k)?;
        out.push(json!({
            "knowledge": sel.snippets.keys(),
            "scores": sel.snippets.items().iter().map(|(_, s)| *s).collect::<Vec<_>>(),
        }));
    }
    print_json(&json!(out));
    Ok(())
}

fn train_generator_cmd(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let (train, valid) = splits(cfg)?;
    let kb = cfg.load_knowledge()?;
    let params = train_generator_stage(cfg, &train, &valid, &kb)?;
    save_component(&model_dir(cfg), Component::Generator, &params)?;
    print_json(&json!({ "vocab": params.vocab.len(), "use_pointer": params.config.use_pointer }));
    Ok(())
}

fn generate_cmd(cfg: &PipelineConfig, split: &Option<PathBuf>) -> anyhow::Result<()> {
    let kb = cfg.load_knowledge()?;
    let split = cfg.load_split(split.as_deref().unwrap_or(&cfg.valid_dir))?;
    let params: kgdial::Seq2SeqParams = load_component(&model_dir(cfg), Component::Generator)?;
    let mut inputs = Vec::new();
    for (d, _, gold) in split.knowledge_turns() {
        inputs.push(build_gen_input_from(
            d,
            gold,
            &kb,
            &params.vocab,
            params.config.max_source_len,
        )?);
    }
    let responses = generate_all(&params, &inputs, cfg.generator.max_len);
    let mut it = responses.into_iter();
    let out: Vec<_> = split
        .labels
        .iter()
        .map(|l| if l.target { json!(it.next()) } else { json!(null) })
        .collect();
    print_json(&json!(out));
    Ok(())
}

fn run_pipeline_cmd(cfg: &PipelineConfig, logs: &Option<PathBuf>, out: &Option<PathBuf>) -> anyhow::Result<()> {
    let kb = cfg.load_knowledge()?;
    let bundle = ModelBundle::load(&model_dir(cfg), cfg)?;
    let dialogs = dialogs_arg(cfg, logs)?;
    let preds = run_pipeline(&dialogs, &kb, &bundle, cfg)?;
    let text = predictions_to_json(&preds);
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn evaluate_cmd(predictions: &Path, labels: &Path, knowledge: &Option<PathBuf>) -> anyhow::Result<()> {
    let preds = load_predictions(predictions)?;
    let labels = load_labels(labels)?;
    if let Some(k) = knowledge {
        let kb = kgdial::corpus::load_knowledge(k)?;
        for (i, l) in labels.iter().enumerate() {
            if let Some(r) = l.snippets.iter().find(|r| kb.snippet(r).is_none()) {
                bail!(Error::InvalidData(format!("label {i} refers to unknown snippet {r}")));
            }
        }
    }
    let report = pipeline_score(&preds, &labels)?;
    print_json(&serde_json::to_value(report)?);
    Ok(())
}

fn chat_cmd(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let kb = cfg.load_knowledge()?;
    let bundle = ModelBundle::load(&model_dir(cfg), cfg)?;
    let mut session = ChatSession::new(Pipeline::new(&bundle, &kb, cfg)?);
    let stdin = io::stdin();
    let mut stdout = io::stdout();
    println!("{CHAT_HELP}");
    loop {
        print!("> ");
        stdout.flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            break;
        }
        match session.handle(&line)? {
            ChatReply::Quit => break,
            ChatReply::Reset => println!("(history cleared)"),
            ChatReply::Help => println!("{CHAT_HELP}"),
            ChatReply::Turn(report) => println!("{report}"),
        }
    }
    Ok(())
}

fn gradcheck_cmd(seed: u64, points: u64) -> anyhow::Result<()> {
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    let mut failures = 0usize;
    for i in 0..points {
        for r in run_suite(seed.wrapping_add(i)) {
            match worst.iter_mut().find(|(n, _)| *n == r.name) {
                Some(w) => w.1 = w.1.max(r.max_relative_error),
                None => worst.push((r.name, r.max_relative_error)),
            }
            if !r.passed {
                failures += 1;
                eprintln!(
                    "FAIL {} at seed {}: {:.3e}",
                    r.name,
                    seed.wrapping_add(i),
                    r.max_relative_error
                );
            }
        }
    }
    for (name, err) in &worst {
        println!("{name:<42} max relative error {err:.3e}");
    }
    if failures > 0 {
        bail!(Error::Invariant(format!("{failures} gradient check(s) failed")));
    }
    println!("all gradient checks passed at {points} points");
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = config(&cli.global)?;
    match &cli.command {
        Command::Ingest {
            logs,
            labels,
            knowledge,
        } => ingest(&cfg, logs, labels, knowledge),
        Command::BuildFilter { exact_only, split } => build_filter_cmd(&mut cfg, *exact_only, split),
        Command::TrainDetector => train_detector_cmd(&cfg),
        Command::Detect { logs } => detect_cmd(&cfg, logs),
        Command::TrainSelector { stage } => train_selector_cmd(&cfg, *stage),
        Command::Select { logs } => select_cmd(&cfg, logs),
        Command::TrainGenerator => train_generator_cmd(&cfg),
        Command::Generate { split } => generate_cmd(&cfg, split),
        Command::RunPipeline { logs, out } => run_pipeline_cmd(&cfg, logs, out),
        Command::Evaluate {
            predictions,
            labels,
            knowledge,
        } => evaluate_cmd(predictions, labels, knowledge),
        Command::Chat => chat_cmd(&cfg),
        Command::Gradcheck { points } => gradcheck_cmd(cfg.seed, *points),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidArgument { .. }) => 2,
        Some(Error::Invariant(_) | Error::Shape { .. } | Error::NonFinite(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
