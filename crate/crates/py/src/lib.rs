//! Python bindings. One class, `Empath`, carries the trained model through
//! the whole workflow: train (or load a checkpoint), respond to a context,
//! evaluate against a labeled corpus, and tag emotion-bearing tokens.
//! `synth_corpus` writes the same synthetic data the CLI produces.

use std::path::Path;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use empath_core::config::RunConfig;
use empath_core::corpus::{
    self, tokenize, Dialogue, Speaker, SynthSpec, Tag, Turn, Vocab, VocabMode,
};
use empath_core::model::Model;
use empath_core::tensor::ParamStore;
use empath_core::trainer::{
    self,
    checkpoint::{config_hash, Checkpoint},
};
use empath_core::Error;

fn py_err(e: Error) -> PyErr {
    match &e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Invalid(_) | Error::Config { .. } | Error::Corpus { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn resolve_config(config_json: Option<&str>, preset: &str) -> PyResult<RunConfig> {
    match config_json {
        Some(text) => RunConfig::from_json(text, "config_json").map_err(py_err),
        None => RunConfig::preset(preset).map_err(py_err),
    }
}

fn tag_name(tag: Tag) -> &'static str {
    match tag {
        Tag::Em => "em",
        Tag::Noem => "noem",
    }
}

/// Builds an inference dialogue from raw message texts. The last message is
/// the user's; earlier ones alternate bot/user going backwards. A placeholder
/// bot turn stands where the model's reply will go.
fn context_dialogue(texts: &[String], vocab: &Vocab) -> PyResult<Dialogue> {
    if texts.is_empty() {
        return Err(PyValueError::new_err("context must contain at least one message"));
    }
    let n = texts.len();
    let mut turns: Vec<Turn> = texts
        .iter()
        .enumerate()
        .map(|(i, text)| {
            let speaker = if (n - 1 - i) % 2 == 0 { Speaker::User } else { Speaker::Bot };
            let tokens = tokenize(text).iter().map(|w| vocab.lookup(w)).collect::<Vec<_>>();
            let len = tokens.len();
            Turn {
                speaker,
                text: text.clone(),
                tokens,
                reason_tags: vec![Tag::Noem; len],
                emotion: None,
                intent: None,
            }
        })
        .collect();
    turns.push(Turn {
        speaker: Speaker::Bot,
        text: String::new(),
        tokens: Vec::new(),
        reason_tags: Vec::new(),
        emotion: None,
        intent: None,
    });
    Ok(Dialogue { id: "py".into(), turns, target: n })
}

/// A trained empathetic-response model bound to its parameters and config.
#[pyclass]
struct Empath {
    cfg: RunConfig,
    model: Model,
    store: ParamStore,
    steps: Option<usize>,
    best_val: Option<f64>,
}

impl Empath {
    fn build(cfg: RunConfig, vocab: Vocab) -> PyResult<(Model, ParamStore)> {
        let mut store = ParamStore::new(cfg.train.seed, cfg.model.precision);
        let model = Model::new(&mut store, vocab, &cfg.model_config()).map_err(py_err)?;
        Ok((model, store))
    }
}

#[pymethods]
impl Empath {
    /// Trains a fresh model on a JSONL corpus and returns it.
    #[staticmethod]
    #[pyo3(signature = (corpus_path, config_json=None, preset="desk"))]
    fn train(corpus_path: &str, config_json: Option<&str>, preset: &str) -> PyResult<Empath> {
        let cfg = resolve_config(config_json, preset)?;
        let (dialogues, vocab) =
            corpus::load_corpus(Path::new(corpus_path), VocabMode::Build).map_err(py_err)?;
        let (mut model, mut store) = Empath::build(cfg.clone(), vocab)?;
        let outcome = trainer::fit(&mut model, &mut store, &dialogues, &cfg.train_config())
            .map_err(py_err)?;
        Ok(Empath {
            cfg,
            model,
            store,
            steps: Some(outcome.steps),
            best_val: outcome.best_val,
        })
    }

    /// Loads a checkpoint written by `save` or the CLI. The config must be
    /// the one the checkpoint was trained under.
    #[staticmethod]
    #[pyo3(signature = (path, config_json=None, preset="desk"))]
    fn load(path: &str, config_json: Option<&str>, preset: &str) -> PyResult<Empath> {
        let cfg = resolve_config(config_json, preset)?;
        let ckpt = Checkpoint::load(Path::new(path)).map_err(py_err)?;
        ckpt.check_hash(config_hash(&cfg.canonical_json())).map_err(py_err)?;
        let vocab = ckpt.vocab().map_err(py_err)?;
        let (mut model, mut store) = Empath::build(cfg.clone(), vocab)?;
        ckpt.apply(&mut store).map_err(py_err)?;
        model.trained = true;
        Ok(Empath { cfg, model, store, steps: None, best_val: None })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let hash = config_hash(&self.cfg.canonical_json());
        let steps = self.steps.unwrap_or(0) as u64;
        Checkpoint::capture(&self.store, &self.model.vocab, steps, hash)
            .save(Path::new(path))
            .map_err(py_err)
    }

    /// Responds to a conversation. `context` lists the messages oldest first,
    /// ending with the user's latest; returns the reply text plus the
    /// predicted emotion, both intent passes, and per-token reason tags.
    #[pyo3(signature = (context, seed=None))]
    fn respond<'py>(
        &self,
        py: Python<'py>,
        context: Vec<String>,
        seed: Option<u64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let d = context_dialogue(&context, &self.model.vocab)?;
        let pred = self
            .model
            .respond(
                &self.store,
                &d,
                self.cfg.decode_mode(),
                seed.unwrap_or(self.cfg.eval.seed),
                0,
            )
            .map_err(py_err)?;
        let out = PyDict::new(py);
        out.set_item("response", &pred.text)?;
        out.set_item("emotion", pred.emotion.name())?;
        out.set_item("intent_first", pred.intent_first.name())?;
        out.set_item("intent_twice", pred.intent_twice.name())?;
        out.set_item("reason_tags", pred.tags.iter().map(|&t| tag_name(t)).collect::<Vec<_>>())?;
        Ok(out)
    }

    /// Scores the model against a labeled JSONL corpus; returns the metric
    /// table (BLEU-n, distinct-n, perplexity, label accuracies).
    fn evaluate<'py>(&self, py: Python<'py>, corpus_path: &str) -> PyResult<Bound<'py, PyDict>> {
        let (dialogues, _) =
            corpus::load_corpus(Path::new(corpus_path), VocabMode::Reuse(&self.model.vocab))
                .map_err(py_err)?;
        let mut hyps = Vec::new();
        let mut golds = Vec::new();
        let mut gold_probs = Vec::new();
        let mut emo = (Vec::new(), Vec::new());
        let mut int = (Vec::new(), Vec::new());
        for (i, d) in dialogues.iter().enumerate() {
            let ev =
                self.model.evaluate(&self.store, d, self.cfg.eval.seed, i as u64).map_err(py_err)?;
            hyps.push(ev.pred.tokens);
            golds.push(d.target_turn().tokens.clone());
            gold_probs.extend_from_slice(&ev.gold_probs);
            if let Some(g) = d.emotion() {
                emo.0.push(ev.pred.emotion);
                emo.1.push(g);
            }
            if let Some(g) = d.target_turn().intent {
                int.0.push(ev.pred.intent_twice);
                int.1.push(g);
            }
        }
        use empath_core::metrics;
        let out = PyDict::new(py);
        for (name, n) in [("B-1", 1), ("B-2", 2), ("B-3", 3), ("B-4", 4)] {
            out.set_item(name, metrics::bleu_n(&hyps, &golds, n).map_err(py_err)?)?;
        }
        out.set_item("D-1", metrics::distinct_n(&hyps, 1).map_err(py_err)?)?;
        out.set_item("D-2", metrics::distinct_n(&hyps, 2).map_err(py_err)?)?;
        out.set_item("PPL", metrics::perplexity(&gold_probs).map_err(py_err)?.0)?;
        if !emo.1.is_empty() {
            out.set_item("Acc_emo", metrics::accuracy(&emo.0, &emo.1).map_err(py_err)?)?;
        }
        if !int.1.is_empty() {
            out.set_item("Acc_Intent", metrics::accuracy(&int.0, &int.1).map_err(py_err)?)?;
        }
        out.set_item("n_samples", dialogues.len())?;
        Ok(out)
    }

    /// Tags one message: `[(token, "em" | "noem"), …]`.
    fn annotate(&self, text: &str) -> PyResult<Vec<(String, String)>> {
        let words = tokenize(text);
        let tokens: Vec<usize> = words.iter().map(|w| self.model.vocab.lookup(w)).collect();
        let tags = self.model.annotate_turn(&self.store, &tokens).map_err(py_err)?;
        Ok(words
            .into_iter()
            .zip(tags)
            .map(|(w, t)| (w, tag_name(t).to_string()))
            .collect())
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.model.vocab.len()
    }

    #[getter]
    fn steps(&self) -> Option<usize> {
        self.steps
    }

    #[getter]
    fn best_val(&self) -> Option<f64> {
        self.best_val
    }

    #[getter]
    fn config_json(&self) -> String {
        self.cfg.pretty()
    }
}

/// Writes a synthetic labeled corpus (JSONL) and returns the dialogue count.
#[pyfunction]
#[pyo3(signature = (path, seed=1, n=32, emotions=4, intents=4))]
fn synth_corpus(path: &str, seed: u64, n: usize, emotions: usize, intents: usize) -> PyResult<usize> {
    let spec =
        SynthSpec { seed, n_dialogues: n, n_emotions: emotions, n_intents: intents };
    let (dialogues, _) = corpus::generate_synthetic(&spec).map_err(py_err)?;
    corpus::save_corpus(Path::new(path), &dialogues).map_err(py_err)?;
    Ok(dialogues.len())
}

#[pymodule]
fn empath_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Empath>()?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    Ok(())
}
