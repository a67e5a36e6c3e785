//! The full response model: one struct owning every trainable stage and the
//! vocabulary, with separate entry points for training (gold labels, teacher
//! forcing) and inference (predicted tags, deterministic decoding).
//!
//! Training builds one graph per batch. Each dialogue contributes nodes via
//! [`Model::sample_graph`]; the stochastic reinforcement-learning scalars
//! (action, importance ratio, reward) are decided outside the graph by
//! [`Model::decide_rl`] and then baked in by [`Model::finish_sample`], so the
//! differentiable part of a step is a pure function of the parameters. The
//! batch-level objectives (contrastive emotion loss, polarity-routed
//! denoiser losses, policy gradient) assemble in [`Model::batch_losses`].

use rand::Rng;

use crate::contagion::Contagion;
use crate::corpus::{
    Dialogue, EmotionLabel, FlatContext, IntentLabel, Polarity, Tag, Vocab, CTX, EOS, SOS,
};
use crate::decoder::{build_memory, DecodeMode, Memory, ResponseDecoder};
use crate::emotion::{polarity_vote, EmotionClassifier, SentimentLexicon};
use crate::era::Era;
use crate::error::{Error, Result};
use crate::intent::{
    emu_fuse, eps_mse, mean_or_zero, nll, policy_loss, sample_action, twice_loss, IntentFirst,
    IntentTwice, PolicySnapshot, VarianceForm,
};
use crate::rng::{self, Stream};
use crate::tensor::{Graph, ParamStore, TensorId};

/// Shape and schedule hyperparameters. Everything else (optimization, data)
/// lives with the trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    /// Token budget for the flattened context (oldest turns drop first).
    pub max_ctx: usize,
    /// Response budget including the end token.
    pub max_resp: usize,
    /// Diffusion steps T.
    pub t_steps: usize,
    /// Weight of the classifier scores in the first-pass intent reranking.
    pub alpha: f64,
    pub variance_form: VarianceForm,
}

impl ModelConfig {
    /// Small-but-representative defaults used by tests and the desk preset.
    pub fn desk() -> ModelConfig {
        ModelConfig {
            d_model: 64,
            heads: 4,
            layers: 2,
            max_ctx: 48,
            max_resp: 24,
            t_steps: 50,
            alpha: 1.0,
            variance_form: VarianceForm::Product,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.layers == 0 {
            return Err(Error::invalid("layers must be positive"));
        }
        if self.max_ctx < 2 || self.max_resp < 2 {
            return Err(Error::invalid("max_ctx and max_resp must be at least 2"));
        }
        if self.max_resp > self.max_ctx {
            return Err(Error::invalid(format!(
                "max_resp {} exceeds max_ctx {}: the decoder shares the \
                 context position table",
                self.max_resp, self.max_ctx
            )));
        }
        if self.t_steps < 2 {
            return Err(Error::invalid("t_steps must be at least 2"));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::invalid(format!("alpha {} must be finite and >= 0", self.alpha)));
        }
        Ok(())
    }
}

/// Per-sample graph nodes built before any action is drawn, plus the labels
/// that route them. Deterministic given `(seed, idx)`.
pub struct SampleGraph {
    pub l_era: TensorId,
    /// Pooled contagion state `[d_model]`.
    pub q: TensorId,
    /// Noise-prediction error of the denoiser matching the gold polarity.
    pub kl: TensorId,
    pub first: IntentFirst,
    pub emo_pos: TensorId,
    pub emo_neg: TensorId,
    pub fused: TensorId,
    /// Live policy distribution over the three reference intents.
    pub pi: TensorId,
    pub l_res: TensorId,
    pub polarity: Polarity,
    pub emotion: EmotionLabel,
    pub gold_intent: IntentLabel,
}

/// The environment's contribution to one sample: which reference intent was
/// drawn, at what importance ratio, for what reward. Constants under
/// differentiation.
#[derive(Debug, Clone, Copy)]
pub struct RlDecision {
    pub action: usize,
    pub ratio: f64,
    pub reward: f64,
}

/// Everything the batch objectives need from one finished sample.
pub struct SampleOutput {
    pub l_era: TensorId,
    pub q: TensorId,
    pub kl: TensorId,
    pub log_pi: TensorId,
    pub l_intent: TensorId,
    pub l_res: TensorId,
    pub polarity: Polarity,
    pub emotion: EmotionLabel,
    pub ratio: f64,
    pub reward: f64,
}

/// The five loss heads of one batch. The trainer weights and sums them.
pub struct BatchLosses {
    pub l_era: TensorId,
    pub l_em: TensorId,
    pub l_twice: TensorId,
    pub l_pg: TensorId,
    pub l_res: TensorId,
}

/// Label-only inference output (no decoding).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelPrediction {
    pub emotion: EmotionLabel,
    pub intent_first: IntentLabel,
    pub intent_twice: IntentLabel,
}

/// Full inference output for one dialogue.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Predicted reason tags over the flattened context.
    pub tags: Vec<Tag>,
    pub emotion: EmotionLabel,
    pub intent_first: IntentLabel,
    pub intent_twice: IntentLabel,
    pub tokens: Vec<usize>,
    pub text: String,
}

/// A prediction paired with the teacher-forced probabilities of the gold
/// response, for perplexity.
pub struct Evaluation {
    pub pred: Prediction,
    /// `P_w[gold_t]` at every gold position (end token included).
    pub gold_probs: Vec<f64>,
}

/// Intermediate inference state shared by the public entry points.
struct Staged {
    tags: Vec<Tag>,
    emotion: EmotionLabel,
    intent_first: IntentLabel,
    intent_twice: IntentLabel,
    memory: Memory,
}

pub struct Model {
    pub era: Era,
    pub contagion: Contagion,
    pub emotion: EmotionClassifier,
    pub intent: IntentTwice,
    pub decoder: ResponseDecoder,
    pub lexicon: SentimentLexicon,
    pub vocab: Vocab,
    pub d_model: usize,
    pub max_ctx: usize,
    pub max_resp: usize,
    /// Inference entry points refuse to run until this is set (by the
    /// trainer or a checkpoint load).
    pub trained: bool,
}

impl Model {
    /// Registers every parameter in a fixed order (the checkpoint record
    /// order). The decoder shares the contagion embedding tables.
    pub fn new(store: &mut ParamStore, vocab: Vocab, cfg: &ModelConfig) -> Result<Model> {
        cfg.validate()?;
        if vocab.len() <= CTX + 1 {
            return Err(Error::invalid(format!(
                "vocabulary of {} entries has no regular words",
                vocab.len()
            )));
        }
        let era = Era::new(store, vocab.len(), cfg.d_model, cfg.heads, cfg.layers, cfg.max_ctx);
        let contagion = Contagion::new(
            store,
            vocab.len(),
            cfg.d_model,
            cfg.heads,
            cfg.layers,
            cfg.max_ctx + 1,
        );
        let emotion = EmotionClassifier::new(store, cfg.d_model);
        let mut intent = IntentTwice::new(store, cfg.d_model, cfg.t_steps);
        intent.alpha = cfg.alpha;
        intent.form = cfg.variance_form;
        let decoder = ResponseDecoder::new(
            store,
            vocab.len(),
            cfg.d_model,
            cfg.heads,
            cfg.layers,
            cfg.max_resp + 1,
            contagion.e_w,
            contagion.e_p,
            contagion.e_r,
        );
        Ok(Model {
            era,
            contagion,
            emotion,
            intent,
            decoder,
            lexicon: SentimentLexicon::bundled(),
            vocab,
            d_model: cfg.d_model,
            max_ctx: cfg.max_ctx,
            max_resp: cfg.max_resp,
            trained: false,
        })
    }

    /// Builds every differentiable node for one training dialogue: tagger
    /// loss on gold tags, contagion state, first-pass intent, diffusion
    /// round-trip at a per-sample step, fusion, live policy distribution,
    /// and the teacher-forced response loss.
    pub fn sample_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        d: &Dialogue,
        seed: u64,
        idx: u64,
    ) -> Result<SampleGraph> {
        let fc = d.flat_context(self.max_ctx);
        if fc.tokens.is_empty() {
            return Err(Error::invalid(format!("dialogue {} has an empty context", d.id)));
        }
        let emotion = d
            .emotion()
            .ok_or_else(|| Error::invalid(format!("dialogue {} has no emotion label", d.id)))?;
        let gold_intent = d
            .target_turn()
            .intent
            .ok_or_else(|| Error::invalid(format!("dialogue {} has no intent label", d.id)))?;

        // One tagger encoding serves both the CRF loss and the downstream
        // composed representation.
        let h_raw = self.era.encode_tokens(g, store, &fc.tokens, None)?;
        let (h_tilde, _) = self.era.compose_attention(g, store, h_raw)?;
        let em = self.era.emissions(g, store, h_tilde);
        let l_era = self.era.crf_nll(g, store, em, &fc.tags)?;
        let ctx = self.contagion.forward(g, store, &fc.tokens, &fc.tags, h_tilde)?;

        let first = self.intent.intent_first(g, store, ctx.q)?;

        let mut drng = rng::sample_rng(seed, Stream::DiffusionNoise, idx);
        let t = drng.random_range(1..=self.intent.schedule.t_max());
        let eps = rng::normal_vec(&mut drng, self.d_model);
        let emu = self.intent.emu_states(g, store, ctx.q, t, &eps, first.scores)?;
        let eps_leaf = g.leaf(eps, &[1, self.d_model]);
        let polarity = emotion.polarity();
        let kl = match polarity {
            Polarity::Pos => eps_mse(g, eps_leaf, emu.eps_hat_pos),
            _ => eps_mse(g, eps_leaf, emu.eps_hat_neg),
        };

        let fused = emu_fuse(g, emu.emo_pos, emu.emo_neg, ctx.h)?;
        let pi = self.intent.policy.probs(g, store, fused)?;

        let memory = build_memory(g, fused, ctx.h, &fc.tokens)?;
        let (prefix, gold) = self.response_target(&d.target_turn().tokens);
        let outs = self.decoder.forward(g, store, &prefix, &memory)?;
        let l_res = self.decoder.response_loss(g, &outs, &gold)?;

        Ok(SampleGraph {
            l_era,
            q: ctx.q,
            kl,
            first,
            emo_pos: emu.emo_pos,
            emo_neg: emu.emo_neg,
            fused,
            pi,
            l_res,
            polarity,
            emotion,
            gold_intent,
        })
    }

    /// Draws the reference-intent action from the behavior snapshot and
    /// scores it. All three outputs are plain numbers: the graph never
    /// differentiates through them.
    pub fn decide_rl(
        &self,
        g: &Graph,
        store: &ParamStore,
        sg: &SampleGraph,
        snapshot: &PolicySnapshot,
        seed: u64,
        idx: u64,
    ) -> Result<RlDecision> {
        let mu = snapshot.probs(g.data(sg.fused))?;
        let mut prng = rng::sample_rng(seed, Stream::PolicySample, idx);
        let (action, ratio) = sample_action(g.data(sg.pi), &mu, &mut prng)?;
        let label = self.intent.table.refer(sg.emotion)[action];
        let reward =
            self.intent.reward_for(store, sg.polarity, g.data(sg.emo_pos), g.data(sg.emo_neg), label);
        Ok(RlDecision { action, ratio, reward })
    }

    /// Bakes a decided action into the graph: the sampled log-probability
    /// for the policy objective and the corrected-intent loss.
    pub fn finish_sample(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        sg: SampleGraph,
        rl: RlDecision,
    ) -> Result<SampleOutput> {
        let label = self.intent.table.refer(sg.emotion)[rl.action];
        let p_a = g.gather(sg.pi, rl.action);
        let log_pi = g.ln_clamped(p_a);
        let corr = self.intent.correct_intent(g, store, label, &sg.first)?;
        let l_intent = nll(g, corr.probs, sg.gold_intent.index());
        Ok(SampleOutput {
            l_era: sg.l_era,
            q: sg.q,
            kl: sg.kl,
            log_pi,
            l_intent,
            l_res: sg.l_res,
            polarity: sg.polarity,
            emotion: sg.emotion,
            ratio: rl.ratio,
            reward: rl.reward,
        })
    }

    /// The full per-sample training pass.
    pub fn train_sample(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        d: &Dialogue,
        snapshot: &PolicySnapshot,
        seed: u64,
        idx: u64,
    ) -> Result<SampleOutput> {
        let sg = self.sample_graph(g, store, d, seed, idx)?;
        let rl = self.decide_rl(g, store, &sg, snapshot, seed, idx)?;
        self.finish_sample(g, store, sg, rl)
    }

    /// Assembles the batch heads: mean tagger loss, the contrastive +
    /// routed-expert emotion loss under the batch polarity vote, the
    /// polarity-split denoiser means plus mean corrected-intent loss, the
    /// importance-weighted policy objective, and the mean response loss.
    pub fn batch_losses(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        samples: &[SampleOutput],
    ) -> Result<BatchLosses> {
        if samples.is_empty() {
            return Err(Error::invalid("batch_losses: empty batch"));
        }
        let qs: Vec<TensorId> = samples.iter().map(|s| s.q).collect();
        let labels: Vec<EmotionLabel> = samples.iter().map(|s| s.emotion).collect();
        let polarities: Vec<Polarity> = samples.iter().map(|s| s.polarity).collect();
        let v = polarity_vote(&polarities)?.v;
        let l_em = self.emotion.loss(g, store, &qs, &labels, v)?;

        let kl_pos: Vec<TensorId> = samples
            .iter()
            .filter(|s| s.polarity == Polarity::Pos)
            .map(|s| s.kl)
            .collect();
        let kl_neg: Vec<TensorId> = samples
            .iter()
            .filter(|s| s.polarity != Polarity::Pos)
            .map(|s| s.kl)
            .collect();
        let l_kl_pos = mean_or_zero(g, &kl_pos);
        let l_kl_neg = mean_or_zero(g, &kl_neg);
        let ints: Vec<TensorId> = samples.iter().map(|s| s.l_intent).collect();
        let l_int = mean_or_zero(g, &ints);
        let l_twice = twice_loss(g, l_kl_pos, l_kl_neg, l_int);

        let log_pis: Vec<TensorId> = samples.iter().map(|s| s.log_pi).collect();
        let ratios: Vec<f64> = samples.iter().map(|s| s.ratio).collect();
        let rewards: Vec<f64> = samples.iter().map(|s| s.reward).collect();
        let l_pg = policy_loss(g, &log_pis, &ratios, &rewards)?;

        let eras: Vec<TensorId> = samples.iter().map(|s| s.l_era).collect();
        let era_cat = g.concat(&eras);
        let l_era = g.mean(era_cat);
        let ress: Vec<TensorId> = samples.iter().map(|s| s.l_res).collect();
        let res_cat = g.concat(&ress);
        let l_res = g.mean(res_cat);

        Ok(BatchLosses { l_era, l_em, l_twice, l_pg, l_res })
    }

    /// Emotion and both intent predictions for one dialogue. When
    /// `refer_override` is given it replaces the predicted emotion in the
    /// reference-intent lookup only (the knob the label-noise robustness
    /// check turns).
    pub fn predict_labels(
        &self,
        store: &ParamStore,
        d: &Dialogue,
        refer_override: Option<EmotionLabel>,
        seed: u64,
        idx: u64,
    ) -> Result<LabelPrediction> {
        let mut g = Graph::new();
        let staged = self.stage(&mut g, store, d, refer_override, seed, idx)?;
        Ok(LabelPrediction {
            emotion: staged.emotion,
            intent_first: staged.intent_first,
            intent_twice: staged.intent_twice,
        })
    }

    /// Generates a response for one dialogue.
    pub fn respond(
        &self,
        store: &ParamStore,
        d: &Dialogue,
        mode: DecodeMode,
        seed: u64,
        idx: u64,
    ) -> Result<Prediction> {
        let mut g = Graph::new();
        let staged = self.stage(&mut g, store, d, None, seed, idx)?;
        let mut rng = rng::sample_rng(seed, Stream::PolicySample, idx);
        let tokens =
            self.decoder.generate(&mut g, store, &staged.memory, self.max_resp, mode, &mut rng)?;
        Ok(self.prediction(staged, tokens))
    }

    /// Greedy response plus teacher-forced gold probabilities (the
    /// perplexity inputs) in one pass.
    pub fn evaluate(
        &self,
        store: &ParamStore,
        d: &Dialogue,
        seed: u64,
        idx: u64,
    ) -> Result<Evaluation> {
        let mut g = Graph::new();
        let staged = self.stage(&mut g, store, d, None, seed, idx)?;
        let mut rng = rng::sample_rng(seed, Stream::PolicySample, idx);
        let tokens = self.decoder.generate(
            &mut g,
            store,
            &staged.memory,
            self.max_resp,
            DecodeMode::Greedy,
            &mut rng,
        )?;
        let (prefix, gold) = self.response_target(&d.target_turn().tokens);
        let outs = self.decoder.forward(&mut g, store, &prefix, &staged.memory)?;
        let vocab = self.vocab.len();
        let p_w = g.data(outs.p_w);
        let gold_probs: Vec<f64> =
            gold.iter().enumerate().map(|(t, &y)| p_w[t * vocab + y]).collect();
        Ok(Evaluation { pred: self.prediction(staged, tokens), gold_probs })
    }

    /// Predicted reason tags for one stand-alone turn. Tokens beyond the
    /// tagger window keep the plain-word tag.
    pub fn annotate_turn(&self, store: &ParamStore, tokens: &[usize]) -> Result<Vec<Tag>> {
        self.require_trained()?;
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let head = tokens.len().min(self.max_ctx);
        let fc = FlatContext {
            tokens: tokens[..head].to_vec(),
            tags: vec![Tag::Noem; head],
            is_user: vec![true; head],
        };
        let mut g = Graph::new();
        let (mut tags, _) = self.era.annotate(&mut g, store, &fc)?;
        tags.resize(tokens.len(), Tag::Noem);
        Ok(tags)
    }

    /// Shared inference pipeline: predicted tags feed the encoder, the
    /// lexicon polarity routes the emotion experts, the policy picks its
    /// argmax action, and the diffusion round-trip runs at T/2 with noise
    /// seeded by `(seed, idx)`.
    fn stage(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        d: &Dialogue,
        refer_override: Option<EmotionLabel>,
        seed: u64,
        idx: u64,
    ) -> Result<Staged> {
        self.require_trained()?;
        let fc = d.flat_context(self.max_ctx);
        if fc.tokens.is_empty() {
            return Err(Error::invalid(format!("dialogue {} has an empty context", d.id)));
        }
        let (tags, h_tilde) = self.era.annotate(g, store, &fc)?;
        let ctx = self.contagion.forward(g, store, &fc.tokens, &tags, h_tilde)?;
        let sentiment = self.user_sentiment(&fc);
        let (emotion, _) = self.emotion.predict(g, store, ctx.q, sentiment)?;

        let first = self.intent.intent_first(g, store, ctx.q)?;
        let intent_first =
            IntentLabel::from_index(argmax(g.data(first.scores))).expect("9 intent scores");

        let t = (self.intent.schedule.t_max() / 2).max(1);
        let mut drng = rng::sample_rng(seed, Stream::DiffusionNoise, idx);
        let eps = rng::normal_vec(&mut drng, self.d_model);
        let emu = self.intent.emu_states(g, store, ctx.q, t, &eps, first.scores)?;
        let fused = emu_fuse(g, emu.emo_pos, emu.emo_neg, ctx.h)?;

        let pi = self.intent.policy.probs(g, store, fused)?;
        let action = argmax(g.data(pi));
        let refer_emotion = refer_override.unwrap_or(emotion);
        let label = self.intent.table.refer(refer_emotion)[action];
        let corr = self.intent.correct_intent(g, store, label, &first)?;

        let memory = build_memory(g, fused, ctx.h, &fc.tokens)?;
        Ok(Staged { tags, emotion, intent_first, intent_twice: corr.predicted, memory })
    }

    fn prediction(&self, staged: Staged, tokens: Vec<usize>) -> Prediction {
        let words: Vec<&str> = tokens.iter().map(|&t| self.vocab.token(t)).collect();
        Prediction {
            tags: staged.tags,
            emotion: staged.emotion,
            intent_first: staged.intent_first,
            intent_twice: staged.intent_twice,
            tokens,
            text: words.join(" "),
        }
    }

    /// Teacher-forcing pair: `prefix` starts at the start token, `gold` ends
    /// at the end token, both at most `max_resp` long.
    fn response_target(&self, tokens: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let body: Vec<usize> = tokens.iter().copied().take(self.max_resp - 1).collect();
        let mut gold = body;
        gold.push(EOS);
        let mut prefix = Vec::with_capacity(gold.len());
        prefix.push(SOS);
        prefix.extend_from_slice(&gold[..gold.len() - 1]);
        (prefix, gold)
    }

    /// Lexicon polarity of the user-spoken context words.
    fn user_sentiment(&self, fc: &FlatContext) -> Polarity {
        let words: Vec<&str> = fc
            .tokens
            .iter()
            .zip(&fc.is_user)
            .filter(|&(_, &user)| user)
            .map(|(&t, _)| self.vocab.token(t))
            .collect();
        self.lexicon.sentiment(&words)
    }

    fn require_trained(&self) -> Result<()> {
        if self.trained {
            Ok(())
        } else {
            Err(Error::invalid(
                "model is untrained: fit it or load a checkpoint before inference",
            ))
        }
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..xs.len() {
        if xs[i] > xs[best] {
            best = i;
        }
    }
    best
}
