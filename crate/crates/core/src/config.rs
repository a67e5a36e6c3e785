//! Run configuration: one JSON document drives a whole run — data budgets,
//! model size, training schedule, diffusion horizon, intent reranking, and
//! decoding. Unknown keys are rejected so a typo cannot silently fall back to
//! a default, and the canonical serialization is what checkpoint hashes bind
//! to.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::DecodeMode;
use crate::error::{Error, Result};
use crate::intent::VarianceForm;
use crate::model::ModelConfig;
use crate::tensor::Precision;
use crate::trainer::TrainConfig;

/// Token budgets for the flattened context and the generated response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Flattened-context budget; oldest turns drop first.
    pub max_ctx: usize,
    /// Response budget including the end token.
    pub max_resp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    /// Parameter storage width; compute is always 64-bit.
    pub precision: Precision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSection {
    /// Forward-process horizon T.
    pub t_steps: usize,
    /// Which reading of the reverse-step variance to use.
    pub variance_form: VarianceForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentSection {
    /// Weight of the classifier scores in the first-pass intent reranking.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Seed for inference-time noise and sampling lanes.
    pub seed: u64,
    /// Decode by sampling among the `k` most probable tokens; `null` decodes
    /// greedily.
    #[serde(default)]
    pub top_k: Option<usize>,
}

/// The full run configuration. Construct from a preset or a JSON file, then
/// [`validate`](RunConfig::validate) before use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub diffusion: DiffusionSection,
    pub intent: IntentSection,
    pub eval: EvalSection,
}

const DESK_JSON: &str = include_str!("../config/desk.json");
const PAPER_JSON: &str = include_str!("../config/paper.json");

impl RunConfig {
    /// Small-and-fast defaults: everything trains and evaluates on one CPU
    /// core in minutes.
    pub fn desk() -> RunConfig {
        serde_json::from_str(DESK_JSON).expect("built-in desk preset parses")
    }

    /// Publication-scale settings (300-d embeddings, T = 1000, long warmup).
    /// Shipped for documentation; the test suite exercises the desk preset.
    pub fn paper() -> RunConfig {
        serde_json::from_str(PAPER_JSON).expect("built-in paper preset parses")
    }

    pub fn preset(name: &str) -> Result<RunConfig> {
        match name {
            "desk" => Ok(RunConfig::desk()),
            "paper" => Ok(RunConfig::paper()),
            other => Err(Error::Config {
                path: "--preset".into(),
                msg: format!("unknown preset `{other}` (expected `desk` or `paper`)"),
            }),
        }
    }

    /// Reads and validates a config file. Schema violations (unknown or
    /// missing fields, wrong types) report the offending field and position.
    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        RunConfig::from_json(&text, &path.display().to_string())
    }

    /// Parses and validates config text; `origin` names the source in errors.
    pub fn from_json(text: &str, origin: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config {
            path: origin.to_string(),
            msg: e.to_string(),
        })?;
        cfg.validate().map_err(|e| Error::Config {
            path: origin.to_string(),
            msg: e.to_string(),
        })?;
        Ok(cfg)
    }

    /// Cross-field invariants beyond what the schema can express.
    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train.validate()?;
        if self.eval.top_k == Some(0) {
            return Err(Error::invalid("eval.top_k must be at least 1 when set"));
        }
        Ok(())
    }

    /// The architecture slice of the config.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.model.d_model,
            heads: self.model.heads,
            layers: self.model.layers,
            max_ctx: self.data.max_ctx,
            max_resp: self.data.max_resp,
            t_steps: self.diffusion.t_steps,
            alpha: self.intent.alpha,
            variance_form: self.diffusion.variance_form,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.clone()
    }

    pub fn decode_mode(&self) -> DecodeMode {
        match self.eval.top_k {
            Some(k) => DecodeMode::TopK(k),
            None => DecodeMode::Greedy,
        }
    }

    /// Compact serialization with a stable field order; checkpoint hashes are
    /// computed over exactly this string.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Human-readable form for `--show-config`.
    pub fn pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
