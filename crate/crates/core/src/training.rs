//! Summarizer training.
//!
//! Three update flavors compose every trainer here:
//! - token-pooled cross-entropy over single-document, masked-cluster, or
//!   merged-encoding inputs (`step_ce`),
//! - REINFORCE on free-running rollouts with the signed cluster-agreement
//!   reward and an optional running-mean baseline (`step_entailment_pg`),
//! - an adversarial language discriminator over decoder hidden states,
//!   updated on teacher-forced (real) versus sampled (fake) sequences
//!   (`step_discriminator`), whose frozen judgment feeds a non-saturating
//!   generator term into the policy-gradient step.
//!
//! `train_baseline` covers the four supervised recipes (b1–b4);
//! `train_asm` alternates supervised, policy-gradient, and discriminator
//! updates on top of a warm-started summarizer.
//!
//! Determinism: every random choice comes from an rng derived from the run
//! seed and a purpose string, so recipes that share a schedule are bitwise
//! identical where they ought to be (b3 with a full warmup phase equals b1;
//! b4 equals b2 on single-article clusters).

use ndarray::s;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::corpus::ClusterExample;
use crate::entailment::{
    cluster_article_labels_batch, EntailmentScore, EntailmentScorer, CONV_FILTERS, CONV_WINDOWS,
};
use crate::error::{CoreError, Result};
use crate::evaluation::rouge;
use crate::nn::optim::{init_uniform, zeros, Optimizer, OptimizerKind, ParamSet};
use crate::nn::tape::{stable_sigmoid, Mat, Tape, Var};
use crate::seeding::derive_rng;
use crate::summarizer::{
    prepare_cluster_input, sample_from_logits, SummarizerConfig, SummarizerState,
};
use crate::tokenizer::{Tokenizer, BOS_ID, EOS_ID, UNK_ID};

/// Tape parameter-set tag for summarizer parameters.
pub const SUMMARIZER_SET: u8 = 0;
/// Tape parameter-set tag for discriminator parameters.
pub const DISC_SET: u8 = 1;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Everything a training run needs besides the data and the scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: SummarizerConfig,
    pub vocab_size: usize,
    pub learning_rate: f64,
    /// Weight of the adversarial language term inside policy-gradient steps.
    pub lambda: f64,
    pub batch_size: usize,
    /// Total optimizer updates (for b3: warmup and cluster phases combined).
    pub max_steps: u64,
    /// Single-document warmup updates (b3 phase one; `train_asm` warm start).
    pub b1_steps: u64,
    /// Supervised updates per alternation cycle.
    pub ce_steps: usize,
    /// Policy-gradient updates per alternation cycle.
    pub unsup_steps: usize,
    /// Discriminator updates per alternation cycle.
    pub disc_steps: usize,
    /// Rollouts sampled per cluster in each policy-gradient update.
    pub pg_samples: usize,
    /// Subtract a running mean of past rewards from each rollout's reward.
    pub reward_baseline: bool,
    /// Evaluate on dev every this many updates (0 = only at the end).
    pub eval_every: u64,
    /// Stop when the mean reward of the last `converge_patience`
    /// policy-gradient updates improves on the previous window by less than
    /// `converge_eps` (0 disables the check).
    pub converge_patience: usize,
    pub converge_eps: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: SummarizerConfig::default(),
            vocab_size: 8000,
            learning_rate: 1e-4,
            lambda: 0.1,
            batch_size: 4,
            max_steps: 200,
            b1_steps: 0,
            ce_steps: 1,
            unsup_steps: 1,
            disc_steps: 1,
            pg_samples: 1,
            reward_baseline: false,
            eval_every: 0,
            converge_patience: 0,
            converge_eps: 1e-3,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
        }
    }
}

/// Every key a training config file may set. `scorer_endpoint` is accepted
/// here but consumed by the command-line layer, which resolves scorers.
pub const TRAIN_CONFIG_KEYS: &[&str] = &[
    "learning_rate",
    "lambda",
    "batch_size",
    "max_steps",
    "b1_steps",
    "ce_steps",
    "unsup_steps",
    "disc_steps",
    "pg_samples",
    "reward_baseline",
    "eval_every",
    "converge_patience",
    "converge_eps",
    "optimizer",
    "seed",
    "scorer_endpoint",
    "model_dim",
    "layers",
    "vocab_size",
    "max_input_len",
    "max_output_len",
];

impl TrainConfig {
    /// Build from a flat config file, starting at the defaults.
    pub fn from_kv(kv: &KvConfig) -> Result<TrainConfig> {
        kv.expect_keys(TRAIN_CONFIG_KEYS)?;
        let mut cfg = TrainConfig::default();
        if let Some(v) = kv.get_usize("model_dim")? {
            cfg.model.model_dim = v;
        }
        if let Some(v) = kv.get_usize("layers")? {
            cfg.model.layers = v;
        }
        if let Some(v) = kv.get_usize("max_input_len")? {
            cfg.model.max_input_len = v;
        }
        if let Some(v) = kv.get_usize("max_output_len")? {
            cfg.model.max_output_len = v;
        }
        if let Some(v) = kv.get_usize("vocab_size")? {
            cfg.vocab_size = v;
        }
        if let Some(v) = kv.get_f64("learning_rate")? {
            cfg.learning_rate = v;
        }
        if let Some(v) = kv.get_f64("lambda")? {
            cfg.lambda = v;
        }
        if let Some(v) = kv.get_usize("batch_size")? {
            cfg.batch_size = v;
        }
        if let Some(v) = kv.get_u64("max_steps")? {
            cfg.max_steps = v;
        }
        if let Some(v) = kv.get_u64("b1_steps")? {
            cfg.b1_steps = v;
        }
        if let Some(v) = kv.get_usize("ce_steps")? {
            cfg.ce_steps = v;
        }
        if let Some(v) = kv.get_usize("unsup_steps")? {
            cfg.unsup_steps = v;
        }
        if let Some(v) = kv.get_usize("disc_steps")? {
            cfg.disc_steps = v;
        }
        if let Some(v) = kv.get_usize("pg_samples")? {
            cfg.pg_samples = v;
        }
        if let Some(v) = kv.get_bool("reward_baseline")? {
            cfg.reward_baseline = v;
        }
        if let Some(v) = kv.get_u64("eval_every")? {
            cfg.eval_every = v;
        }
        if let Some(v) = kv.get_usize("converge_patience")? {
            cfg.converge_patience = v;
        }
        if let Some(v) = kv.get_f64("converge_eps")? {
            cfg.converge_eps = v;
        }
        if let Some(v) = kv.get_str("optimizer") {
            cfg.optimizer = v.parse()?;
        }
        if let Some(v) = kv.get_u64("seed")? {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults tuned for the alternating agreement trainer (smaller steps).
    pub fn asm_defaults() -> TrainConfig {
        TrainConfig { learning_rate: 5e-5, ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.vocab_size <= UNK_ID as usize + 1 {
            return Err(CoreError::Validation(format!(
                "vocab_size {} leaves no room beyond the reserved ids",
                self.vocab_size
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(CoreError::Validation("learning_rate must be finite and > 0".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(CoreError::Validation("lambda must be finite and >= 0".into()));
        }
        if self.batch_size < 1 {
            return Err(CoreError::Validation("batch_size must be >= 1".into()));
        }
        if self.pg_samples < 1 {
            return Err(CoreError::Validation("pg_samples must be >= 1".into()));
        }
        if !(self.converge_eps.is_finite() && self.converge_eps >= 0.0) {
            return Err(CoreError::Validation("converge_eps must be finite and >= 0".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Run records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Supervised cross-entropy.
    Ce,
    /// Policy gradient on sampled rollouts.
    Unsup,
    /// Discriminator update.
    Disc,
}

/// One optimizer update, as written to training logs (JSONL).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: u64,
    pub phase: Phase,
    pub loss: f64,
    /// Mean signed agreement reward of the update's rollouts; null outside
    /// policy-gradient steps.
    pub mean_reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub log: Vec<TrainLogRecord>,
    /// Best dev mean ROUGE-2 seen at any evaluation point.
    pub best_dev_rouge2: Option<f64>,
    /// Mean signed reward probed before the first update (after warmup).
    pub initial_mean_reward: Option<f64>,
    /// Mean signed reward probed after the last update.
    pub final_mean_reward: Option<f64>,
    pub steps_run: u64,
    pub converged: bool,
}

/// Streaming mean, read as a reward baseline before each update and fed
/// after it, so an update never sees its own batch in the baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningMean {
    sum: f64,
    count: u64,
}

impl RunningMean {
    pub fn new() -> Self {
        RunningMean::default()
    }

    /// 0 until the first update.
    pub fn value(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    pub fn update(&mut self, x: f64) {
        self.sum += x;
        self.count += 1;
    }
}

// ---------------------------------------------------------------------------
// Cross-entropy
// ---------------------------------------------------------------------------

/// One supervised example: either a single token sequence fed to the
/// encoder, or several sequences encoded separately and averaged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CeExample {
    Single { input: Vec<u32>, target: Vec<u32> },
    Merged { inputs: Vec<Vec<u32>>, target: Vec<u32> },
}

impl CeExample {
    fn target(&self) -> &[u32] {
        match self {
            CeExample::Single { target, .. } | CeExample::Merged { target, .. } => target,
        }
    }
}

/// Encode a summary as a decoder target: drop unknown-token ids (the model
/// can never emit them), truncate to leave room for eos, and append eos.
pub fn encode_target(
    tokenizer: &Tokenizer,
    max_output_len: usize,
    summary: &str,
) -> Result<Vec<u32>> {
    let mut ids: Vec<u32> = tokenizer
        .encode(summary)
        .into_iter()
        .filter(|&id| id != UNK_ID)
        .collect();
    if ids.is_empty() {
        return Err(CoreError::Training(
            "summary has no in-vocabulary tokens to train on".into(),
        ));
    }
    ids.truncate(max_output_len - 1);
    ids.push(EOS_ID);
    Ok(ids)
}

/// One cross-entropy update over a batch, pooled per token: the loss is the
/// mean negative log-likelihood over every target token in the batch, so
/// long and short examples weigh by length. Returns the pre-update loss.
pub fn step_ce(
    state: &mut SummarizerState,
    opt: &mut Optimizer,
    batch: &[&CeExample],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(CoreError::Argument("cross-entropy batch is empty".into()));
    }
    let total_tokens: usize = batch.iter().map(|ex| ex.target().len()).sum();
    let mut tape = Tape::new();
    let model = state.inject(&mut tape, SUMMARIZER_SET);
    let mut chain: Option<Var> = None;
    for ex in batch {
        let target = ex.target();
        state.check_targets(target)?;
        let enc_out = match ex {
            CeExample::Single { input, .. } => state.encode_on_tape(&mut tape, &model, input)?,
            CeExample::Merged { inputs, .. } => {
                state.merge_encodings_on_tape(&mut tape, &model, inputs)?
            }
        };
        let mut states = state.initial_states_on_tape(&mut tape);
        let mut prev = BOS_ID;
        for &t in target {
            let (logits, _) =
                state.decoder_step_on_tape(&mut tape, &model, enc_out, prev, &mut states);
            let nll = tape.row_nll(logits, t as usize);
            chain = Some(match chain {
                None => nll,
                Some(c) => tape.add(c, nll),
            });
            prev = t;
        }
    }
    let total = chain.expect("nonempty batch with nonempty targets");
    let loss_node = tape.scale(total, 1.0 / total_tokens as f32);
    let loss = f64::from(tape.scalar(loss_node));
    let grads = tape.backward(loss_node);
    opt.step(&mut state.params, &grads, SUMMARIZER_SET);
    state.step += 1;
    Ok(loss)
}

// ---------------------------------------------------------------------------
// Language discriminator
// ---------------------------------------------------------------------------

/// Convolutional real-versus-sampled discriminator over decoder hidden-state
/// sequences: per-window 1d convolutions, relu, max-pooling over time, and a
/// linear head to a single logit. The head starts at zero, so an untrained
/// discriminator outputs probability exactly 0.5 for every input.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub input_dim: usize,
    /// Fixed sequence length: shorter inputs are padded with zero rows,
    /// longer ones truncated.
    pub max_len: usize,
    pub params: ParamSet,
    pub step: u64,
    ix: DiscIx,
}

#[derive(Debug, Clone)]
struct DiscIx {
    conv_k: Vec<usize>,
    conv_b: Vec<usize>,
    out_w: usize,
    out_b: usize,
}

struct DiscTapeModel {
    conv_k: Vec<Var>,
    conv_b: Vec<Var>,
    out_w: Var,
    out_b: Var,
}

impl Discriminator {
    pub fn new(input_dim: usize, max_len: usize, seed: u64) -> Result<Self> {
        if input_dim < 1 {
            return Err(CoreError::Argument("discriminator input_dim must be >= 1".into()));
        }
        let widest = CONV_WINDOWS[CONV_WINDOWS.len() - 1];
        if max_len < widest {
            return Err(CoreError::Argument(format!(
                "discriminator max_len {max_len} cannot cover the widest convolution window {widest}"
            )));
        }
        let mut rng = derive_rng(seed, &["discriminator-init"]);
        let mut params = ParamSet::new();
        let mut conv_k = Vec::new();
        let mut conv_b = Vec::new();
        for &w in &CONV_WINDOWS {
            let fan_in = w * input_dim;
            let scale = 1.0 / (fan_in as f32).sqrt();
            conv_k.push(params.add(
                &format!("conv{w}_k"),
                init_uniform(&mut rng, fan_in, CONV_FILTERS, scale),
            ));
            conv_b.push(params.add(&format!("conv{w}_b"), zeros(1, CONV_FILTERS)));
        }
        let out_w = params.add("out_w", zeros(CONV_WINDOWS.len() * CONV_FILTERS, 1));
        let out_b = params.add("out_b", zeros(1, 1));
        Ok(Discriminator {
            input_dim,
            max_len,
            params,
            step: 0,
            ix: DiscIx { conv_k, conv_b, out_w, out_b },
        })
    }

    fn inject(&self, tape: &mut Tape, set: u8) -> DiscTapeModel {
        let p = |tape: &mut Tape, idx: usize| tape.param(set, idx, self.params.get(idx));
        DiscTapeModel {
            conv_k: self.ix.conv_k.iter().map(|&i| p(tape, i)).collect(),
            conv_b: self.ix.conv_b.iter().map(|&i| p(tape, i)).collect(),
            out_w: p(tape, self.ix.out_w),
            out_b: p(tape, self.ix.out_b),
        }
    }

    /// Parameters as tape constants: gradients flow to the input sequence
    /// but never into the discriminator.
    fn inject_frozen(&self, tape: &mut Tape) -> DiscTapeModel {
        let c = |tape: &mut Tape, idx: usize| tape.constant(self.params.get(idx).clone());
        DiscTapeModel {
            conv_k: self.ix.conv_k.iter().map(|&i| c(tape, i)).collect(),
            conv_b: self.ix.conv_b.iter().map(|&i| c(tape, i)).collect(),
            out_w: c(tape, self.ix.out_w),
            out_b: c(tape, self.ix.out_b),
        }
    }

    /// `(1, 1)` logit node for a hidden sequence already on the tape, which
    /// must have at most `max_len` rows (shorter is zero-padded).
    fn logit_on_tape(&self, tape: &mut Tape, model: &DiscTapeModel, h: Var) -> Var {
        let x = tape.pad_rows(h, self.max_len);
        let mut feat: Option<Var> = None;
        for (wi, &w) in CONV_WINDOWS.iter().enumerate() {
            let patches = tape.im2col(x, w);
            let conv = tape.matmul(patches, model.conv_k[wi]);
            let conv = tape.add_row(conv, model.conv_b[wi]);
            let act = tape.relu(conv);
            let pooled = tape.max_pool_rows(act);
            feat = Some(match feat {
                None => pooled,
                Some(f) => tape.concat_cols(f, pooled),
            });
        }
        let o = tape.matmul(feat.expect("at least one window"), model.out_w);
        tape.add_row(o, model.out_b)
    }

    fn clamp_rows(&self, hidden: &Mat) -> Result<Mat> {
        if hidden.ncols() != self.input_dim {
            return Err(CoreError::Argument(format!(
                "hidden sequence has width {}, discriminator expects {}",
                hidden.ncols(),
                self.input_dim
            )));
        }
        if hidden.nrows() == 0 {
            return Err(CoreError::Argument("hidden sequence has no rows".into()));
        }
        Ok(if hidden.nrows() > self.max_len {
            hidden.slice(s![..self.max_len, ..]).to_owned()
        } else {
            hidden.clone()
        })
    }

    /// Probability that a hidden sequence came from teacher forcing.
    pub fn prob(&self, hidden: &Mat) -> Result<f64> {
        let clamped = self.clamp_rows(hidden)?;
        let mut tape = Tape::new();
        let model = self.inject_frozen(&mut tape);
        let h = tape.constant(clamped);
        let z = self.logit_on_tape(&mut tape, &model, h);
        Ok(f64::from(stable_sigmoid(tape.scalar(z))))
    }
}

/// One discriminator update on matched (real, fake) hidden-sequence pairs:
/// descends −(1/k)·Σ[log F(real) + log(1 − F(fake))]. Returns the pre-update
/// loss, which is exactly 2·ln 2 for a freshly initialized discriminator.
pub fn step_discriminator(
    disc: &mut Discriminator,
    opt: &mut Optimizer,
    real: &[Mat],
    fake: &[Mat],
) -> Result<f64> {
    if real.is_empty() || real.len() != fake.len() {
        return Err(CoreError::Argument(format!(
            "discriminator batch needs matching nonempty real/fake sets (got {} real, {} fake)",
            real.len(),
            fake.len()
        )));
    }
    let mut tape = Tape::new();
    let model = disc.inject(&mut tape, DISC_SET);
    let mut chain: Option<Var> = None;
    let labeled = real
        .iter()
        .map(|h| (h, 1usize))
        .chain(fake.iter().map(|h| (h, 0usize)));
    for (hidden, target) in labeled {
        let h = tape.constant(disc.clamp_rows(hidden)?);
        let z = disc.logit_on_tape(&mut tape, &model, h);
        // row_nll over [0, z] is −log σ(z) at target 1 and −log(1 − σ(z))
        // at target 0 — the two cross-entropy terms without ever forming a
        // probability that could saturate.
        let zero = tape.constant(zeros(1, 1));
        let pair = tape.concat_cols(zero, z);
        let nll = tape.row_nll(pair, target);
        chain = Some(match chain {
            None => nll,
            Some(c) => tape.add(c, nll),
        });
    }
    let loss_node = tape.scale(chain.expect("nonempty batch"), 1.0 / real.len() as f32);
    let loss = f64::from(tape.scalar(loss_node));
    let grads = tape.backward(loss_node);
    opt.step(&mut disc.params, &grads, DISC_SET);
    disc.step += 1;
    Ok(loss)
}

/// The language loss −(1/k)·Σ[ln F(real) + ln(1 − F(fake))] from
/// already-computed probabilities, in f64 with probabilities clamped to
/// [1e-7, 1 − 1e-7]. A discriminator stuck at 0.5 yields exactly 2·ln 2.
pub fn language_loss_value(real_probs: &[f64], fake_probs: &[f64]) -> Result<f64> {
    if real_probs.is_empty() || real_probs.len() != fake_probs.len() {
        return Err(CoreError::Argument(format!(
            "language loss needs matching nonempty probability sets (got {} real, {} fake)",
            real_probs.len(),
            fake_probs.len()
        )));
    }
    const EPS: f64 = 1e-7;
    let clamp = |p: f64| p.clamp(EPS, 1.0 - EPS);
    let sum: f64 = real_probs
        .iter()
        .zip(fake_probs)
        .map(|(&r, &f)| -clamp(r).ln() - (1.0 - clamp(f)).ln())
        .sum();
    Ok(sum / real_probs.len() as f64)
}

// ---------------------------------------------------------------------------
// Policy gradient
// ---------------------------------------------------------------------------

/// One REINFORCE update: sample `samples` rollouts per cluster, score every
/// rollout against its whole cluster in a single scorer round trip, and
/// descend the surrogate Σ (Q̂ − b)·nll(rollout) / (clusters·samples), where
/// Q̂ is the signed agreement reward and b the optional running-mean
/// baseline. With `adversary` set, each rollout also contributes the
/// non-saturating language term λ·(−log F(hidden)) against the frozen
/// discriminator. Returns (pre-update surrogate loss, mean Q̂). A scorer
/// failure aborts before any parameter changes.
#[allow(clippy::too_many_arguments)]
pub fn step_entailment_pg(
    state: &mut SummarizerState,
    opt: &mut Optimizer,
    scorer: &dyn EntailmentScorer,
    batch: &[&ClusterExample],
    samples: usize,
    baseline: Option<&mut RunningMean>,
    adversary: Option<(&Discriminator, f64)>,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return Err(CoreError::Argument("policy-gradient batch is empty".into()));
    }
    if samples < 1 {
        return Err(CoreError::Argument("pg_samples must be >= 1".into()));
    }
    let b = match &baseline {
        Some(rm) => rm.value(),
        None => 0.0,
    };

    let mut tape = Tape::new();
    let model = state.inject(&mut tape, SUMMARIZER_SET);
    let disc_model = adversary.map(|(d, _)| d.inject_frozen(&mut tape));

    // (cluster index, summed nll node, hidden rows, decoded text) per rollout.
    let mut rollouts: Vec<(usize, Var, Vec<Var>, String)> = Vec::new();
    for (ci, cluster) in batch.iter().enumerate() {
        let input =
            prepare_cluster_input(&state.tokenizer, state.config.max_input_len, cluster, None)?;
        let enc_out = state.encode_on_tape(&mut tape, &model, &input)?;
        for _ in 0..samples {
            let mut states = state.initial_states_on_tape(&mut tape);
            let mut prev = BOS_ID;
            let mut chain: Option<Var> = None;
            let mut hidden_rows = Vec::new();
            let mut tokens = Vec::new();
            for _ in 0..state.config.max_output_len {
                let (logits, hhat) =
                    state.decoder_step_on_tape(&mut tape, &model, enc_out, prev, &mut states);
                let row: Vec<f32> = tape.value(logits).row(0).to_vec();
                let chosen = sample_from_logits(&row, rng);
                let nll = tape.row_nll(logits, chosen as usize);
                chain = Some(match chain {
                    None => nll,
                    Some(c) => tape.add(c, nll),
                });
                tokens.push(chosen);
                hidden_rows.push(hhat);
                prev = chosen;
                if chosen == EOS_ID {
                    break;
                }
            }
            let text = state.tokenizer.decode(&tokens);
            rollouts.push((ci, chain.expect("max_output_len >= 1"), hidden_rows, text));
        }
    }

    let items: Vec<(&ClusterExample, &str)> = rollouts
        .iter()
        .map(|(ci, _, _, text)| (batch[*ci], text.as_str()))
        .collect();
    let labels = cluster_article_labels_batch(scorer, &items)?;

    let denom = (batch.len() * samples) as f64;
    let mut mean_q = 0.0;
    let mut root: Option<Var> = None;
    for ((_, chain, hidden_rows, _), rollout_labels) in rollouts.iter().zip(&labels) {
        let q = f64::from(EntailmentScore::from_labels(rollout_labels).signed());
        mean_q += q / denom;
        let term = tape.scale(*chain, ((q - b) / denom) as f32);
        root = Some(match root {
            None => term,
            Some(r) => tape.add(r, term),
        });
        if let Some((disc, lambda)) = adversary {
            let dm = disc_model.as_ref().expect("frozen adversary injected");
            let h = tape.stack_rows(hidden_rows);
            let z = disc.logit_on_tape(&mut tape, dm, h);
            let zero = tape.constant(zeros(1, 1));
            let pair = tape.concat_cols(zero, z);
            let gnll = tape.row_nll(pair, 1);
            let gterm = tape.scale(gnll, (lambda / denom) as f32);
            root = Some(tape.add(root.expect("reward term added"), gterm));
        }
    }
    let root = root.expect("nonempty batch");
    let loss = f64::from(tape.scalar(root));
    let grads = tape.backward(root);
    opt.step(&mut state.params, &grads, SUMMARIZER_SET);
    state.step += 1;
    if let Some(rm) = baseline {
        rm.update(mean_q);
    }
    Ok((loss, mean_q))
}

// ---------------------------------------------------------------------------
// Dataset views and example builders
// ---------------------------------------------------------------------------

/// Borrowed training-time views of a built dataset.
#[derive(Debug, Clone, Copy)]
pub struct DatasetViews<'a> {
    /// (document, summary) single-document supervision pairs.
    pub linked_pairs: &'a [(String, String)],
    pub train: &'a [ClusterExample],
    pub dev: &'a [ClusterExample],
}

/// Fit one tokenizer over every training-side text. All trainer flavors
/// share this, so models trained from the same views are comparable (and
/// recipe identities hold bitwise).
pub fn fit_tokenizer(views: &DatasetViews<'_>, vocab_size: usize) -> Result<Tokenizer> {
    let mut texts: Vec<&str> = Vec::new();
    for (doc, summary) in views.linked_pairs {
        texts.push(doc);
        texts.push(summary);
    }
    for cluster in views.train {
        for article in &cluster.articles {
            texts.push(&article.body);
        }
        texts.push(&cluster.summary);
    }
    Tokenizer::train(&texts, vocab_size)
}

fn single_doc_examples(
    views: &DatasetViews<'_>,
    tokenizer: &Tokenizer,
    model: &SummarizerConfig,
) -> Result<Vec<CeExample>> {
    let mut out = Vec::new();
    for (i, (doc, summary)) in views.linked_pairs.iter().enumerate() {
        let mut input = tokenizer.encode(doc);
        input.truncate(model.max_input_len);
        if input.is_empty() {
            return Err(CoreError::Training(format!("linked pair {i} has an empty document")));
        }
        let target = encode_target(tokenizer, model.max_output_len, summary)?;
        out.push(CeExample::Single { input, target });
    }
    Ok(out)
}

/// Supervised cluster examples: annotated clusters with at least one
/// entailed article, non-entailed slots masked out of the input.
fn cluster_ce_examples(
    train: &[ClusterExample],
    tokenizer: &Tokenizer,
    model: &SummarizerConfig,
) -> Result<Vec<CeExample>> {
    let mut out = Vec::new();
    for cluster in train {
        let Some(labels) = &cluster.labels else { continue };
        if !labels.iter().any(|&keep| keep) {
            continue;
        }
        let input = prepare_cluster_input(tokenizer, model.max_input_len, cluster, Some(labels))?;
        let target = encode_target(tokenizer, model.max_output_len, &cluster.summary)?;
        out.push(CeExample::Single { input, target });
    }
    Ok(out)
}

/// Like `cluster_ce_examples`, but each entailed article is encoded on its
/// own and the encodings averaged.
fn merged_ce_examples(
    train: &[ClusterExample],
    tokenizer: &Tokenizer,
    model: &SummarizerConfig,
) -> Result<Vec<CeExample>> {
    let mut out = Vec::new();
    for cluster in train {
        let Some(labels) = &cluster.labels else { continue };
        let mut inputs = Vec::new();
        for (article, &keep) in cluster.articles.iter().zip(labels) {
            if !keep {
                continue;
            }
            let mut ids = tokenizer.encode(&article.body);
            ids.truncate(model.max_input_len);
            if ids.is_empty() {
                return Err(CoreError::Training(format!(
                    "cluster_id={} has an entailed article with an empty body",
                    cluster.cluster_id
                )));
            }
            inputs.push(ids);
        }
        if inputs.is_empty() {
            continue;
        }
        let target = encode_target(tokenizer, model.max_output_len, &cluster.summary)?;
        out.push(CeExample::Merged { inputs, target });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Scheduling
// ---------------------------------------------------------------------------

fn epoch_order(seed: u64, scope: &str, epoch: u64, len: usize) -> Vec<usize> {
    let mut rng = derive_rng(seed, &[scope, "order", &epoch.to_string()]);
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Endless deterministic batch stream: per-epoch shuffled indices consumed
/// in `batch_size` chunks, the final partial chunk included.
struct BatchCycler<'a> {
    seed: u64,
    scope: &'a str,
    len: usize,
    batch_size: usize,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl<'a> BatchCycler<'a> {
    fn new(seed: u64, scope: &'a str, len: usize, batch_size: usize) -> Self {
        assert!(len > 0, "batch cycler over an empty pool");
        BatchCycler {
            seed,
            scope,
            len,
            batch_size,
            epoch: 0,
            order: epoch_order(seed, scope, 0, len),
            pos: 0,
        }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.epoch += 1;
            self.order = epoch_order(self.seed, self.scope, self.epoch, self.len);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

/// Greedy-decodes dev clusters at checkpoints and remembers the parameters
/// with the best mean ROUGE-2.
struct DevTracker<'a> {
    dev: &'a [ClusterExample],
    eval_every: u64,
    best: Option<(f64, ParamSet)>,
    last_eval_step: Option<u64>,
}

impl<'a> DevTracker<'a> {
    fn new(dev: &'a [ClusterExample], eval_every: u64) -> Self {
        DevTracker { dev, eval_every, best: None, last_eval_step: None }
    }

    fn eval_at(&mut self, step: u64, state: &SummarizerState) -> Result<()> {
        if self.dev.is_empty() {
            return Ok(());
        }
        let mut total = 0.0;
        for cluster in self.dev {
            let input = prepare_cluster_input(
                &state.tokenizer,
                state.config.max_input_len,
                cluster,
                None,
            )?;
            let beam = state.beam_search(&input, 1, 1.0)?;
            let text = beam
                .first()
                .map(|c| state.tokenizer.decode(&c.tokens))
                .unwrap_or_default();
            total += rouge(&text, &cluster.summary).1;
        }
        let mean = total / self.dev.len() as f64;
        if self.best.as_ref().is_none_or(|(best, _)| mean > *best) {
            self.best = Some((mean, state.params.clone()));
        }
        self.last_eval_step = Some(step);
        Ok(())
    }

    fn after_step(&mut self, step: u64, state: &SummarizerState) -> Result<()> {
        if self.eval_every > 0 && step.is_multiple_of(self.eval_every) {
            self.eval_at(step, state)?;
        }
        Ok(())
    }

    /// Final evaluation; optionally restores the best parameters into the
    /// state. Returns the best dev ROUGE-2 (None when there is no dev set).
    fn finish(
        mut self,
        final_step: u64,
        state: &mut SummarizerState,
        restore: bool,
    ) -> Result<Option<f64>> {
        if self.last_eval_step != Some(final_step) {
            self.eval_at(final_step, state)?;
        }
        Ok(match self.best {
            Some((score, params)) => {
                if restore {
                    state.params = params;
                }
                Some(score)
            }
            None => None,
        })
    }
}

// ---------------------------------------------------------------------------
// Trainers
// ---------------------------------------------------------------------------

/// The four supervised recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    /// Single-document pairs only.
    B1,
    /// Annotated clusters, non-entailed articles masked from the input.
    B2,
    /// B1 warmup for `b1_steps`, then the B2 recipe.
    B3,
    /// Annotated clusters with entailed articles encoded separately and
    /// their encodings averaged.
    B4,
}

impl std::str::FromStr for BaselineKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "b1" => Ok(BaselineKind::B1),
            "b2" => Ok(BaselineKind::B2),
            "b3" => Ok(BaselineKind::B3),
            "b4" => Ok(BaselineKind::B4),
            other => Err(CoreError::Argument(format!(
                "unknown baseline {other:?} (want b1, b2, b3, or b4)"
            ))),
        }
    }
}

const NO_LINKED_PAIRS: &str = "no linked (document, summary) pairs to train on";
const NO_SUPERVISED_CLUSTERS: &str = "no annotated clusters with entailed articles to train on";

/// Train one supervised baseline from scratch: fits the shared tokenizer,
/// initializes the model from the run seed, and runs `max_steps` pooled
/// cross-entropy updates over the recipe's examples. Dev is greedy-decoded
/// at every `eval_every` updates (and at the end), and the parameters with
/// the best dev ROUGE-2 are kept.
pub fn train_baseline(
    views: &DatasetViews<'_>,
    kind: BaselineKind,
    config: &TrainConfig,
) -> Result<(SummarizerState, TrainReport)> {
    config.validate()?;
    let tokenizer = fit_tokenizer(views, config.vocab_size)?;
    let mut state = SummarizerState::new(config.model, tokenizer, config.seed)?;
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate as f32);

    // (order scope, examples, update budget) per phase.
    let mut phases: Vec<(&str, Vec<CeExample>, u64)> = Vec::new();
    match kind {
        BaselineKind::B1 => {
            let examples = single_doc_examples(views, &state.tokenizer, &state.config)?;
            if examples.is_empty() {
                return Err(CoreError::Training(NO_LINKED_PAIRS.into()));
            }
            phases.push(("b1", examples, config.max_steps));
        }
        BaselineKind::B2 => {
            let examples = cluster_ce_examples(views.train, &state.tokenizer, &state.config)?;
            if examples.is_empty() {
                return Err(CoreError::Training(NO_SUPERVISED_CLUSTERS.into()));
            }
            phases.push(("cluster-ce", examples, config.max_steps));
        }
        BaselineKind::B3 => {
            if config.b1_steps > config.max_steps {
                return Err(CoreError::Argument(format!(
                    "b1_steps {} exceeds max_steps {}",
                    config.b1_steps, config.max_steps
                )));
            }
            if config.b1_steps > 0 {
                let examples = single_doc_examples(views, &state.tokenizer, &state.config)?;
                if examples.is_empty() {
                    return Err(CoreError::Training(NO_LINKED_PAIRS.into()));
                }
                phases.push(("b1", examples, config.b1_steps));
            }
            let rest = config.max_steps - config.b1_steps;
            if rest > 0 {
                let examples = cluster_ce_examples(views.train, &state.tokenizer, &state.config)?;
                if examples.is_empty() {
                    return Err(CoreError::Training(NO_SUPERVISED_CLUSTERS.into()));
                }
                phases.push(("cluster-ce", examples, rest));
            }
        }
        BaselineKind::B4 => {
            let examples = merged_ce_examples(views.train, &state.tokenizer, &state.config)?;
            if examples.is_empty() {
                return Err(CoreError::Training(NO_SUPERVISED_CLUSTERS.into()));
            }
            phases.push(("cluster-ce", examples, config.max_steps));
        }
    }

    let mut log = Vec::new();
    let mut tracker = DevTracker::new(views.dev, config.eval_every);
    for (scope, examples, budget) in &phases {
        let mut cycler = BatchCycler::new(config.seed, scope, examples.len(), config.batch_size);
        let mut done = 0u64;
        while done < *budget {
            let idx = cycler.next_batch();
            let batch: Vec<&CeExample> = idx.iter().map(|&i| &examples[i]).collect();
            let loss = step_ce(&mut state, &mut opt, &batch)?;
            done += 1;
            log.push(TrainLogRecord {
                step: state.step,
                phase: Phase::Ce,
                loss,
                mean_reward: None,
            });
            tracker.after_step(state.step, &state)?;
        }
    }

    let steps_run = state.step;
    let best_dev_rouge2 = tracker.finish(steps_run, &mut state, true)?;
    Ok((
        state,
        TrainReport {
            log,
            best_dev_rouge2,
            initial_mean_reward: None,
            final_mean_reward: None,
            steps_run,
            converged: false,
        },
    ))
}

/// Sample one summary for up to 64 training clusters and return the mean
/// signed agreement reward, or None when there is nothing to probe.
fn probe_mean_reward(
    state: &SummarizerState,
    scorer: &dyn EntailmentScorer,
    train: &[ClusterExample],
    seed: u64,
    tag: &str,
) -> Result<Option<f64>> {
    let clusters = &train[..train.len().min(64)];
    if clusters.is_empty() {
        return Ok(None);
    }
    let mut rng = derive_rng(seed, &["probe", tag]);
    let mut texts = Vec::with_capacity(clusters.len());
    for cluster in clusters {
        let input =
            prepare_cluster_input(&state.tokenizer, state.config.max_input_len, cluster, None)?;
        let sampled = state.sample_summary(&input, &mut rng)?;
        texts.push(state.tokenizer.decode(&sampled.tokens));
    }
    let items: Vec<(&ClusterExample, &str)> = clusters
        .iter()
        .zip(&texts)
        .map(|(c, t)| (c, t.as_str()))
        .collect();
    let labels = cluster_article_labels_batch(scorer, &items)?;
    let mean = labels
        .iter()
        .map(|ls| f64::from(EntailmentScore::from_labels(ls).signed()))
        .sum::<f64>()
        / labels.len() as f64;
    Ok(Some(mean))
}

/// Has the reward trend flattened? Compares the means of the two most
/// recent `patience`-sized windows of per-update mean rewards.
fn reward_converged(rewards: &[f64], patience: usize, eps: f64) -> bool {
    if patience == 0 || rewards.len() < 2 * patience {
        return false;
    }
    let n = rewards.len();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    mean(&rewards[n - patience..]) - mean(&rewards[n - 2 * patience..n - patience]) < eps
}

/// Train the agreement summarizer: warm-start from `init` (or run an
/// internal single-document warmup of `b1_steps` updates), then alternate
/// `ce_steps` supervised updates, `unsup_steps` policy-gradient updates
/// (with the adversarial language term when `lambda > 0`), and `disc_steps`
/// discriminator updates per cycle, for `max_steps` updates total or until
/// the reward trend converges. The mean sampled reward is probed before and
/// after training; dev ROUGE-2 is tracked for reporting, but the final
/// parameters are kept — the objective here is agreement, not ROUGE.
pub fn train_asm(
    views: &DatasetViews<'_>,
    config: &TrainConfig,
    scorer: &dyn EntailmentScorer,
    init: Option<SummarizerState>,
) -> Result<(SummarizerState, TrainReport)> {
    config.validate()?;
    if config.ce_steps + config.unsup_steps + config.disc_steps == 0 {
        return Err(CoreError::Argument(
            "alternation schedule is empty: ce_steps + unsup_steps + disc_steps must be > 0".into(),
        ));
    }

    let mut state = match init {
        Some(s) => s,
        None => {
            if config.b1_steps == 0 {
                return Err(CoreError::Training(
                    "agreement training needs a warm start: pass an initial checkpoint or set b1_steps > 0"
                        .into(),
                ));
            }
            let warm_config = TrainConfig {
                max_steps: config.b1_steps,
                b1_steps: 0,
                ..config.clone()
            };
            let warm_views = DatasetViews { dev: &[], ..*views };
            train_baseline(&warm_views, BaselineKind::B1, &warm_config)?.0
        }
    };

    let needs_disc =
        config.disc_steps > 0 || (config.unsup_steps > 0 && config.lambda > 0.0);
    let widest = CONV_WINDOWS[CONV_WINDOWS.len() - 1];
    if needs_disc && state.config.max_output_len < widest {
        return Err(CoreError::Argument(format!(
            "max_output_len {} cannot feed the discriminator (needs >= {widest})",
            state.config.max_output_len
        )));
    }

    let supervised = cluster_ce_examples(views.train, &state.tokenizer, &state.config)?;
    if config.ce_steps > 0 && supervised.is_empty() {
        return Err(CoreError::Training(
            "agreement training has no annotated clusters with entailed articles for its supervised phase"
                .into(),
        ));
    }
    let rollout_pool: Vec<&ClusterExample> = views.train.iter().collect();
    if (config.unsup_steps > 0 || config.disc_steps > 0) && rollout_pool.is_empty() {
        return Err(CoreError::Training(
            "agreement training has no clusters for policy rollouts".into(),
        ));
    }

    let mut disc = if needs_disc {
        Some(Discriminator::new(
            state.config.model_dim,
            state.config.max_output_len,
            config.seed,
        )?)
    } else {
        None
    };

    let mut opt_s = Optimizer::new(config.optimizer, config.learning_rate as f32);
    let mut opt_d = Optimizer::new(config.optimizer, config.learning_rate as f32);
    let mut baseline = config.reward_baseline.then(RunningMean::new);
    let mut pg_rng = derive_rng(config.seed, &["asm-pg"]);
    let mut disc_rng = derive_rng(config.seed, &["asm-disc-sample"]);

    let initial_mean_reward =
        probe_mean_reward(&state, scorer, views.train, config.seed, "initial")?;

    let mut ce_cycler = (!supervised.is_empty())
        .then(|| BatchCycler::new(config.seed, "asm-ce-order", supervised.len(), config.batch_size));
    let mut unsup_cycler = (!rollout_pool.is_empty()).then(|| {
        BatchCycler::new(config.seed, "asm-unsup-order", rollout_pool.len(), config.batch_size)
    });
    let mut disc_cycler = (!rollout_pool.is_empty()).then(|| {
        BatchCycler::new(config.seed, "asm-disc-order", rollout_pool.len(), config.batch_size)
    });

    let mut log: Vec<TrainLogRecord> = Vec::new();
    let mut tracker = DevTracker::new(views.dev, config.eval_every);
    let mut rewards: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut global: u64 = 0;

    while global < config.max_steps && !converged {
        for _ in 0..config.ce_steps {
            if global >= config.max_steps {
                break;
            }
            let cycler = ce_cycler.as_mut().expect("supervised pool checked");
            let idx = cycler.next_batch();
            let batch: Vec<&CeExample> = idx.iter().map(|&i| &supervised[i]).collect();
            let loss = step_ce(&mut state, &mut opt_s, &batch)?;
            global += 1;
            log.push(TrainLogRecord { step: global, phase: Phase::Ce, loss, mean_reward: None });
            tracker.after_step(global, &state)?;
        }
        for _ in 0..config.unsup_steps {
            if global >= config.max_steps || converged {
                break;
            }
            let cycler = unsup_cycler.as_mut().expect("rollout pool checked");
            let idx = cycler.next_batch();
            let batch: Vec<&ClusterExample> = idx.iter().map(|&i| rollout_pool[i]).collect();
            let adversary = match (&disc, config.lambda > 0.0) {
                (Some(d), true) => Some((d, config.lambda)),
                _ => None,
            };
            let (loss, mean_q) = step_entailment_pg(
                &mut state,
                &mut opt_s,
                scorer,
                &batch,
                config.pg_samples,
                baseline.as_mut(),
                adversary,
                &mut pg_rng,
            )?;
            global += 1;
            log.push(TrainLogRecord {
                step: global,
                phase: Phase::Unsup,
                loss,
                mean_reward: Some(mean_q),
            });
            rewards.push(mean_q);
            tracker.after_step(global, &state)?;
            if reward_converged(&rewards, config.converge_patience, config.converge_eps) {
                converged = true;
            }
        }
        for _ in 0..config.disc_steps {
            if global >= config.max_steps || converged {
                break;
            }
            let d = disc.as_mut().expect("discriminator built for disc phase");
            let cycler = disc_cycler.as_mut().expect("rollout pool checked");
            let idx = cycler.next_batch();
            let mut real = Vec::with_capacity(idx.len());
            let mut fake = Vec::with_capacity(idx.len());
            for &i in &idx {
                let cluster = rollout_pool[i];
                let input = prepare_cluster_input(
                    &state.tokenizer,
                    state.config.max_input_len,
                    cluster,
                    None,
                )?;
                let target =
                    encode_target(&state.tokenizer, state.config.max_output_len, &cluster.summary)?;
                real.push(state.forward_teacher_forced(&input, &target)?.hidden);
                fake.push(state.sample_summary(&input, &mut disc_rng)?.hidden);
            }
            let loss = step_discriminator(d, &mut opt_d, &real, &fake)?;
            global += 1;
            log.push(TrainLogRecord { step: global, phase: Phase::Disc, loss, mean_reward: None });
            // The summarizer did not change, so a dev checkpoint here would
            // repeat the previous one.
        }
    }

    let final_mean_reward = probe_mean_reward(&state, scorer, views.train, config.seed, "final")?;
    let best_dev_rouge2 = tracker.finish(global, &mut state, false)?;
    Ok((
        state,
        TrainReport {
            log,
            best_dev_rouge2,
            initial_mean_reward,
            final_mean_reward,
            steps_run: global,
            converged,
        },
    ))
}
