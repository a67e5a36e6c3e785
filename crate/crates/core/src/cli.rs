//! Command-line surface. Five subcommands — `synth`, `train`, `generate`,
//! `eval`, `annotate` — each a pure function of (config, data, seed): the
//! same inputs always produce byte-identical outputs.
//!
//! Exit codes: 0 success, 2 argument or schema error, 3 training divergence,
//! 4 artifact mismatch (checkpoint or vocabulary), 1 anything else.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::corpus::{self, Dialogue, EmotionLabel, IntentLabel, Speaker, SynthSpec, Tag, VocabMode};
use crate::error::Result;
use crate::metrics::{self, EvalReport};
use crate::model::Model;
use crate::tensor::ParamStore;
use crate::trainer::{
    self,
    checkpoint::{config_hash, Checkpoint},
};

/// Prints a status line. A closed pipe downstream (`empath … | head`) ends
/// the output early; that is the reader's choice, not an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser, Debug)]
#[command(
    name = "empath",
    version,
    about = "Empathetic dialogue model: synthesize corpora, train, generate, evaluate, annotate"
)]
pub struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write a synthetic labeled dialogue corpus (JSONL).
    Synth(SynthArgs),
    /// Train on a corpus; write a checkpoint and a CSV step log.
    Train(TrainArgs),
    /// Generate a response with predicted emotion and both intent passes.
    Generate(GenerateArgs),
    /// Score responses against gold references; write an evaluation report.
    Eval(EvalArgs),
    /// Fill per-token reason tags on every turn of a corpus.
    Annotate(AnnotateArgs),
}

/// Config selection shared by every model-touching subcommand.
#[derive(Args, Debug)]
struct ConfigArgs {
    /// Run-config JSON file; overrides --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration: `desk` or `paper`.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Print the effective config as JSON and exit.
    #[arg(long)]
    show_config: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(path) => RunConfig::from_path(path),
            None => RunConfig::preset(&self.preset),
        }
    }

    /// Loads the config; prints it and returns `None` under --show-config.
    fn load_or_show(&self) -> Result<Option<RunConfig>> {
        let cfg = self.load()?;
        if self.show_config {
            say!("{}", cfg.pretty());
            return Ok(None);
        }
        Ok(Some(cfg))
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of dialogues.
    #[arg(long)]
    n: usize,
    /// Distinct emotion labels to draw from.
    #[arg(long, default_value_t = 4)]
    emotions: usize,
    /// Distinct intent labels to draw from.
    #[arg(long, default_value_t = 4)]
    intents: usize,
    /// Output corpus path (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Training corpus (JSONL).
    #[arg(long, required_unless_present = "show_config")]
    data: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long, required_unless_present = "show_config")]
    out: Option<PathBuf>,
    /// CSV step log (default: the checkpoint path with extension `csv`).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Trained checkpoint.
    #[arg(long, required_unless_present = "show_config")]
    ckpt: Option<PathBuf>,
    /// Input dialogues (JSONL); the turn after each context is predicted.
    #[arg(long, required_unless_present = "show_config")]
    input: Option<PathBuf>,
    /// Output responses (JSONL).
    #[arg(long, required_unless_present = "show_config")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Trained checkpoint. Without one, gold responses are scored against
    /// themselves and the model-dependent fields are null.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Labeled dialogues with gold responses (JSONL).
    #[arg(long, required_unless_present = "show_config")]
    data: Option<PathBuf>,
    /// Report output path (JSON).
    #[arg(long, required_unless_present = "show_config")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnnotateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Trained checkpoint.
    #[arg(long, required_unless_present = "show_config")]
    ckpt: Option<PathBuf>,
    /// Corpus to tag (JSONL).
    #[arg(long, required_unless_present = "show_config")]
    data: Option<PathBuf>,
    /// Output corpus with reason_tags filled (JSONL).
    #[arg(long, required_unless_present = "show_config")]
    out: Option<PathBuf>,
}

/// Parses arguments and runs the command, returning the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors exit 2; --help and --version exit 0.
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Annotate(a) => cmd_annotate(a),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        seed: a.seed,
        n_dialogues: a.n,
        n_emotions: a.emotions,
        n_intents: a.intents,
    };
    let (dialogues, _vocab) = corpus::generate_synthetic(&spec)?;
    corpus::save_corpus(&a.out, &dialogues)?;

    let mut emo: BTreeMap<&str, usize> = BTreeMap::new();
    let mut int: BTreeMap<&str, usize> = BTreeMap::new();
    for d in &dialogues {
        if let Some(e) = d.emotion() {
            *emo.entry(e.name()).or_default() += 1;
        }
        if let Some(i) = d.target_turn().intent {
            *int.entry(i.name()).or_default() += 1;
        }
    }
    say!("wrote {} dialogues to {}", dialogues.len(), a.out.display());
    for (name, count) in &emo {
        say!("emotion {name}: {count}");
    }
    for (name, count) in &int {
        say!("intent {name}: {count}");
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let Some(cfg) = a.config.load_or_show()? else { return Ok(()) };
    let data = a.data.expect("clap enforces --data");
    let out = a.out.expect("clap enforces --out");
    let log_path = a.log.unwrap_or_else(|| out.with_extension("csv"));

    let (dialogues, vocab) = corpus::load_corpus(&data, VocabMode::Build)?;
    let mut store = ParamStore::new(cfg.train.seed, cfg.model.precision);
    let mut model = Model::new(&mut store, vocab, &cfg.model_config())?;
    let outcome = trainer::fit(&mut model, &mut store, &dialogues, &cfg.train_config())?;

    let hash = config_hash(&cfg.canonical_json());
    Checkpoint::capture(&store, &model.vocab, outcome.steps as u64, hash).save(&out)?;
    let mut log = BufWriter::new(File::create(&log_path)?);
    trainer::write_log_csv(&mut log, &outcome.log)?;
    log.flush()?;

    say!("trained {} steps", outcome.steps);
    match outcome.best_val {
        Some(v) => say!("best validation loss: {v:.6}"),
        None => say!("best validation loss: n/a (no validation split)"),
    }
    say!("checkpoint: {}", out.display());
    say!("log: {}", log_path.display());
    Ok(())
}

/// Rebuilds a trained model from a checkpoint under the given config. The
/// stored hash must match the config byte-for-byte.
fn load_model(cfg: &RunConfig, ckpt_path: &Path) -> Result<(Model, ParamStore)> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    ckpt.check_hash(config_hash(&cfg.canonical_json()))?;
    let vocab = ckpt.vocab()?;
    let mut store = ParamStore::new(cfg.train.seed, cfg.model.precision);
    let mut model = Model::new(&mut store, vocab, &cfg.model_config())?;
    ckpt.apply(&mut store)?;
    model.trained = true;
    Ok((model, store))
}

#[derive(Serialize)]
struct GenerateRow<'a> {
    id: &'a str,
    response: &'a str,
    emotion: EmotionLabel,
    intent_first: IntentLabel,
    intent_twice: IntentLabel,
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let Some(cfg) = a.config.load_or_show()? else { return Ok(()) };
    let ckpt = a.ckpt.expect("clap enforces --ckpt");
    let input = a.input.expect("clap enforces --input");
    let out_path = a.out.expect("clap enforces --out");

    let (model, store) = load_model(&cfg, &ckpt)?;
    let (dialogues, _) = corpus::load_corpus(&input, VocabMode::Reuse(&model.vocab))?;

    let mut out = BufWriter::new(File::create(&out_path)?);
    for (i, d) in dialogues.iter().enumerate() {
        let pred = model.respond(&store, d, cfg.decode_mode(), cfg.eval.seed, i as u64)?;
        let row = GenerateRow {
            id: &d.id,
            response: &pred.text,
            emotion: pred.emotion,
            intent_first: pred.intent_first,
            intent_twice: pred.intent_twice,
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    say!("wrote {} responses to {}", dialogues.len(), out_path.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let Some(cfg) = a.config.load_or_show()? else { return Ok(()) };
    let data = a.data.expect("clap enforces --data");
    let out_path = a.out.expect("clap enforces --out");

    let report = match &a.ckpt {
        Some(ckpt) => {
            let (model, store) = load_model(&cfg, ckpt)?;
            let (dialogues, _) = corpus::load_corpus(&data, VocabMode::Reuse(&model.vocab))?;
            model_report(&model, &store, &dialogues, &cfg)?
        }
        None => {
            // No model: score the gold responses against themselves. This
            // pins the metric pipeline (BLEU must come out at 100) and leaves
            // every model-dependent field null.
            let (dialogues, _) = corpus::load_corpus(&data, VocabMode::Build)?;
            let golds: Vec<Vec<usize>> =
                dialogues.iter().map(|d| d.target_turn().tokens.clone()).collect();
            identity_report(&golds)?
        }
    };
    report.validate()?;

    let text = serde_json::to_string_pretty(&report)?;
    let mut out = BufWriter::new(File::create(&out_path)?);
    out.write_all(text.as_bytes())?;
    out.write_all(b"\n")?;
    out.flush()?;
    say!("{text}");
    Ok(())
}

fn model_report(
    model: &Model,
    store: &ParamStore,
    dialogues: &[Dialogue],
    cfg: &RunConfig,
) -> Result<EvalReport> {
    let mut hyps = Vec::with_capacity(dialogues.len());
    let mut golds = Vec::with_capacity(dialogues.len());
    let mut gold_probs = Vec::new();
    let mut emo_pred = Vec::new();
    let mut emo_gold = Vec::new();
    let mut int_pred = Vec::new();
    let mut int_gold = Vec::new();
    for (i, d) in dialogues.iter().enumerate() {
        let ev = model.evaluate(store, d, cfg.eval.seed, i as u64)?;
        hyps.push(ev.pred.tokens);
        golds.push(d.target_turn().tokens.clone());
        gold_probs.extend_from_slice(&ev.gold_probs);
        if let Some(gold) = d.emotion() {
            emo_pred.push(ev.pred.emotion);
            emo_gold.push(gold);
        }
        if let Some(gold) = d.target_turn().intent {
            int_pred.push(ev.pred.intent_twice);
            int_gold.push(gold);
        }
    }
    let (ppl, _floored) = metrics::perplexity(&gold_probs)?;
    let acc_emo = if emo_gold.is_empty() {
        None
    } else {
        Some(metrics::accuracy(&emo_pred, &emo_gold)?)
    };
    let acc_intent = if int_gold.is_empty() {
        None
    } else {
        Some(metrics::accuracy(&int_pred, &int_gold)?)
    };
    Ok(EvalReport {
        b1: metrics::bleu_n(&hyps, &golds, 1)?,
        b2: metrics::bleu_n(&hyps, &golds, 2)?,
        b3: metrics::bleu_n(&hyps, &golds, 3)?,
        b4: metrics::bleu_n(&hyps, &golds, 4)?,
        d1: metrics::distinct_n(&hyps, 1)?,
        d2: metrics::distinct_n(&hyps, 2)?,
        ppl: Some(ppl),
        acc_emo,
        acc_intent,
        n_samples: dialogues.len(),
    })
}

fn identity_report(golds: &[Vec<usize>]) -> Result<EvalReport> {
    Ok(EvalReport {
        b1: metrics::bleu_n(golds, golds, 1)?,
        b2: metrics::bleu_n(golds, golds, 2)?,
        b3: metrics::bleu_n(golds, golds, 3)?,
        b4: metrics::bleu_n(golds, golds, 4)?,
        d1: metrics::distinct_n(golds, 1)?,
        d2: metrics::distinct_n(golds, 2)?,
        ppl: None,
        acc_emo: None,
        acc_intent: None,
        n_samples: golds.len(),
    })
}

fn cmd_annotate(a: AnnotateArgs) -> Result<()> {
    let Some(cfg) = a.config.load_or_show()? else { return Ok(()) };
    let ckpt = a.ckpt.expect("clap enforces --ckpt");
    let data = a.data.expect("clap enforces --data");
    let out = a.out.expect("clap enforces --out");

    let (model, store) = load_model(&cfg, &ckpt)?;
    let (mut dialogues, _) = corpus::load_corpus(&data, VocabMode::Reuse(&model.vocab))?;
    let mut turns = 0usize;
    for d in &mut dialogues {
        for t in &mut d.turns {
            t.reason_tags = match t.speaker {
                Speaker::User => model.annotate_turn(&store, &t.tokens)?,
                // Bot phrasing never counts as the user's emotion evidence.
                Speaker::Bot => vec![Tag::Noem; t.tokens.len()],
            };
            turns += 1;
        }
    }
    corpus::save_corpus(&out, &dialogues)?;
    say!("tagged {turns} turns across {} dialogues: {}", dialogues.len(), out.display());
    Ok(())
}
