//! Encoder-decoder summarization model.
//!
//! A 2-layer GRU encoder reads the concatenated cluster input; a 2-layer GRU
//! decoder with dot attention over encoder outputs emits the summary. The
//! attentional hidden state (the tanh combination of decoder state and
//! context) is the "decoder hidden state" exposed to the adversarial
//! language discriminator.
//!
//! Two numeric paths exist on purpose and are pinned together by tests:
//! gradient work (teacher forcing, sampling rollouts) runs on an autodiff
//! tape, while search-time decoding uses plain matrix math with cheap
//! cloneable per-candidate states. Both paths execute the same elementary
//! operations in the same order, so their outputs are bitwise identical.
//!
//! Reserved ids (pad, bos, separator, unk) are masked to -1e30 in every
//! output distribution: the model can only ever emit content tokens or eos.

use std::io::Write as _;
use std::path::Path;

use ndarray::{s, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ClusterExample;
use crate::error::{CoreError, Result};
use crate::nn::checkpoint;
use crate::nn::gru::{self, GruIx, GruVars};
use crate::nn::optim::{init_uniform, zeros, ParamSet};
use crate::nn::tape::{log_sum_exp, Mat, Tape, Var};
use crate::seeding::derive_rng;
use crate::tokenizer::{Tokenizer, BOS_ID, EOS_ID, PAD_ID, SEP_ID, UNK_ID};

/// Logit offset that removes a token from every output distribution while
/// staying finite (no NaN risk in softmax arithmetic).
const MASKED_LOGIT: f32 = -1e30;

/// Whether a logit belongs to an emittable token. Reserved ids sit at
/// -1e30 (any trained-weight contribution is absorbed by f32 rounding);
/// comparing against half the mask keeps this robust.
pub fn is_emittable(logit: f32) -> bool {
    logit > MASKED_LOGIT * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummarizerConfig {
    pub model_dim: usize,
    pub layers: usize,
    pub max_input_len: usize,
    pub max_output_len: usize,
}

impl Default for SummarizerConfig {
    fn default() -> Self {
        SummarizerConfig {
            model_dim: 128,
            layers: 2,
            max_input_len: 1024,
            max_output_len: 128,
        }
    }
}

impl SummarizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim < 2 {
            return Err(CoreError::Validation("model_dim must be >= 2".into()));
        }
        if self.layers < 1 {
            return Err(CoreError::Validation("layers must be >= 1".into()));
        }
        if self.max_input_len < 8 {
            return Err(CoreError::Validation("max_input_len must be >= 8".into()));
        }
        if self.max_output_len < 1 {
            return Err(CoreError::Validation("max_output_len must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ParamIx {
    emb: usize,
    enc: Vec<GruIx>,
    dec: Vec<GruIx>,
    comb_w: usize,
    comb_b: usize,
    out_w: usize,
    out_b: usize,
}

/// Trainable summarizer: tokenizer, parameters, and shape config.
#[derive(Debug, Clone)]
pub struct SummarizerState {
    pub config: SummarizerConfig,
    pub tokenizer: Tokenizer,
    pub params: ParamSet,
    pub step: u64,
    ix: ParamIx,
    /// `(1, vocab)` additive mask: 0 for emittable ids, -1e30 for reserved.
    mask_row: Mat,
}

fn build_mask_row(vocab: usize) -> Mat {
    let mut mask = zeros(1, vocab);
    for id in [PAD_ID, BOS_ID, SEP_ID, UNK_ID] {
        mask[[0, id as usize]] = MASKED_LOGIT;
    }
    mask
}

impl SummarizerState {
    /// Fresh model with uniform ±0.08 recurrent/embedding weights and a
    /// zero output projection (so the untrained model is exactly uniform
    /// over emittable tokens).
    pub fn new(config: SummarizerConfig, tokenizer: Tokenizer, seed: u64) -> Result<Self> {
        config.validate()?;
        let vocab = tokenizer.vocab_size();
        if vocab <= UNK_ID as usize + 1 {
            return Err(CoreError::Validation(format!(
                "vocabulary of {vocab} pieces has no content tokens"
            )));
        }
        let d = config.model_dim;
        let mut rng = derive_rng(seed, &["summarizer-init"]);
        let mut params = ParamSet::new();
        let emb = params.add("embedding", init_uniform(&mut rng, vocab, d, 0.08));
        let enc: Vec<GruIx> = (0..config.layers)
            .map(|l| gru::add_params(&mut params, &mut rng, "enc", l, d, 0.08))
            .collect();
        let dec: Vec<GruIx> = (0..config.layers)
            .map(|l| gru::add_params(&mut params, &mut rng, "dec", l, d, 0.08))
            .collect();
        let comb_w = params.add("comb_w", init_uniform(&mut rng, 2 * d, d, 0.08));
        let comb_b = params.add("comb_b", zeros(1, d));
        let out_w = params.add("out_w", zeros(d, vocab));
        let out_b = params.add("out_b", zeros(1, vocab));
        Ok(SummarizerState {
            config,
            tokenizer,
            params,
            step: 0,
            ix: ParamIx { emb, enc, dec, comb_w, comb_b, out_w, out_b },
            mask_row: build_mask_row(vocab),
        })
    }

    /// Rebuild a state around existing parameters (checkpoint load).
    fn from_parts(
        config: SummarizerConfig,
        tokenizer: Tokenizer,
        params: ParamSet,
        step: u64,
    ) -> Result<Self> {
        config.validate()?;
        let vocab = tokenizer.vocab_size();
        let d = config.model_dim;
        let need = |name: &str, rows: usize, cols: usize| -> Result<usize> {
            let idx = params.index_of(name).ok_or_else(|| {
                CoreError::Validation(format!("checkpoint is missing tensor {name}"))
            })?;
            let dim = params.get(idx).dim();
            if dim != (rows, cols) {
                return Err(CoreError::Validation(format!(
                    "tensor {name} has shape {dim:?}, expected ({rows}, {cols})"
                )));
            }
            Ok(idx)
        };
        let emb = need("embedding", vocab, d)?;
        let enc: Vec<GruIx> = (0..config.layers)
            .map(|l| gru::resolve(&params, "enc", l, d))
            .collect::<Result<_>>()?;
        let dec: Vec<GruIx> = (0..config.layers)
            .map(|l| gru::resolve(&params, "dec", l, d))
            .collect::<Result<_>>()?;
        let comb_w = need("comb_w", 2 * d, d)?;
        let comb_b = need("comb_b", 1, d)?;
        let out_w = need("out_w", d, vocab)?;
        let out_b = need("out_b", 1, vocab)?;
        Ok(SummarizerState {
            config,
            tokenizer,
            params,
            step,
            ix: ParamIx { emb, enc, dec, comb_w, comb_b, out_w, out_b },
            mask_row: build_mask_row(vocab),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokenizer.vocab_size()
    }

    fn check_ids(&self, ids: &[u32], what: &str) -> Result<()> {
        if ids.is_empty() {
            return Err(CoreError::Argument(format!("{what} is empty")));
        }
        let vocab = self.vocab_size() as u32;
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(CoreError::Argument(format!(
                "{what} contains id {bad} outside vocabulary of {vocab}"
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Cluster input preparation
// ---------------------------------------------------------------------------

/// Concatenate a cluster's article bodies into one model input: articles are
/// truncated to an equal per-article token budget, joined by the separator
/// token; articles dropped by `keep_mask` leave a single pad token in their
/// slot so positional structure survives masking.
pub fn prepare_cluster_input(
    tokenizer: &Tokenizer,
    max_input_len: usize,
    cluster: &ClusterExample,
    keep_mask: Option<&[bool]>,
) -> Result<Vec<u32>> {
    let n = cluster.articles.len();
    if n == 0 {
        return Err(CoreError::Argument("cluster has no articles".into()));
    }
    if let Some(mask) = keep_mask {
        if mask.len() != n {
            return Err(CoreError::Argument(format!(
                "keep_mask length {} does not match {} articles",
                mask.len(),
                n
            )));
        }
    }
    let kept: Vec<usize> = (0..n)
        .filter(|&i| keep_mask.is_none_or(|m| m[i]))
        .collect();
    if kept.is_empty() {
        return Err(CoreError::Argument("empty effective input".into()));
    }
    let n_masked = n - kept.len();
    let separators = n - 1;
    let budget = max_input_len
        .checked_sub(separators + n_masked)
        .filter(|&b| b >= kept.len())
        .ok_or_else(|| {
            CoreError::Argument(format!(
                "max_input_len {max_input_len} cannot fit {n} article slots"
            ))
        })?;
    let per = budget / kept.len();
    let leftover = budget % kept.len();

    let mut out: Vec<u32> = Vec::with_capacity(max_input_len);
    let mut kept_seen = 0usize;
    for (slot, article) in cluster.articles.iter().enumerate() {
        if slot > 0 {
            out.push(SEP_ID);
        }
        if kept.contains(&slot) {
            let limit = per + usize::from(kept_seen < leftover);
            kept_seen += 1;
            let mut ids = tokenizer.encode(&article.body);
            ids.truncate(limit);
            out.extend(ids);
        } else {
            out.push(PAD_ID);
        }
    }
    debug_assert!(out.len() <= max_input_len);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Tape path (training)
// ---------------------------------------------------------------------------

/// All model parameters injected into one tape under a set tag.
#[derive(Debug, Clone)]
pub struct TapeModel {
    pub set: u8,
    emb: Var,
    enc: Vec<GruVars>,
    dec: Vec<GruVars>,
    comb_w: Var,
    comb_b: Var,
    out_w: Var,
    out_b: Var,
    mask: Var,
}

impl SummarizerState {
    /// Put every parameter on the tape once, tagged `set`.
    pub fn inject(&self, tape: &mut Tape, set: u8) -> TapeModel {
        let p = |tape: &mut Tape, idx: usize| tape.param(set, idx, self.params.get(idx));
        TapeModel {
            set,
            emb: p(tape, self.ix.emb),
            enc: self
                .ix
                .enc
                .iter()
                .map(|g| gru::inject(tape, &self.params, set, g))
                .collect(),
            dec: self
                .ix
                .dec
                .iter()
                .map(|g| gru::inject(tape, &self.params, set, g))
                .collect(),
            comb_w: p(tape, self.ix.comb_w),
            comb_b: p(tape, self.ix.comb_b),
            out_w: p(tape, self.ix.out_w),
            out_b: p(tape, self.ix.out_b),
            mask: tape.constant(self.mask_row.clone()),
        }
    }

    /// Encoder forward on a tape: `(L, d)` top-layer output sequence.
    pub fn encode_on_tape(&self, tape: &mut Tape, model: &TapeModel, input_ids: &[u32]) -> Result<Var> {
        self.check_ids(input_ids, "encoder input")?;
        let ids: Vec<usize> = input_ids.iter().map(|&i| i as usize).collect();
        let mut x = tape.gather(model.emb, &ids);
        let d = self.config.model_dim;
        for g in &model.enc {
            x = gru::layer_on_tape(tape, g, x, ids.len(), d);
        }
        Ok(x)
    }

    /// Encode several token sequences (padded to a common length) and average
    /// the encoder outputs elementwise — tape flavor for gradient work.
    pub fn merge_encodings_on_tape(
        &self,
        tape: &mut Tape,
        model: &TapeModel,
        sequences: &[Vec<u32>],
    ) -> Result<Var> {
        if sequences.is_empty() {
            return Err(CoreError::Argument("merge_encodings of zero articles".into()));
        }
        let common = sequences.iter().map(Vec::len).max().unwrap_or(0);
        if common == 0 {
            return Err(CoreError::Argument("merge_encodings of empty sequences".into()));
        }
        let mut acc: Option<Var> = None;
        for seq in sequences {
            let mut padded = seq.clone();
            padded.resize(common, PAD_ID);
            let enc = self.encode_on_tape(tape, model, &padded)?;
            acc = Some(match acc {
                None => enc,
                Some(a) => tape.add(a, enc),
            });
        }
        let total = acc.expect("non-empty");
        Ok(tape.scale(total, 1.0 / sequences.len() as f32))
    }

    /// Zero initial decoder states, one `(1, d)` per layer.
    pub fn initial_states_on_tape(&self, tape: &mut Tape) -> Vec<Var> {
        (0..self.config.layers)
            .map(|_| tape.constant(zeros(1, self.config.model_dim)))
            .collect()
    }

    /// One decoder step on a tape: embed `prev`, run the GRU stack, attend
    /// over `enc_out`, and return (masked logits row, attentional hidden).
    pub fn decoder_step_on_tape(
        &self,
        tape: &mut Tape,
        model: &TapeModel,
        enc_out: Var,
        prev: u32,
        states: &mut [Var],
    ) -> (Var, Var) {
        assert_eq!(states.len(), self.config.layers, "state count mismatch");
        let mut x = tape.gather(model.emb, &[prev as usize]);
        for (l, g) in model.dec.iter().enumerate() {
            let xr = tape.matmul(x, g.wr);
            let xz = tape.matmul(x, g.wz);
            let xn = tape.matmul(x, g.wn);
            let h = gru::step_on_tape(tape, g, xr, xz, xn, states[l]);
            states[l] = h;
            x = h;
        }
        let h_top = x;
        let ht = tape.transpose(h_top);
        let scores = tape.matmul(enc_out, ht);
        let alpha = tape.softmax_col(scores);
        let at = tape.transpose(alpha);
        let ctx = tape.matmul(at, enc_out);
        let cat = tape.concat_cols(h_top, ctx);
        let comb = tape.matmul(cat, model.comb_w);
        let comb = tape.add_row(comb, model.comb_b);
        let hhat = tape.tanh(comb);
        let raw = tape.matmul(hhat, model.out_w);
        let raw = tape.add_row(raw, model.out_b);
        let logits = tape.add(raw, model.mask);
        (logits, hhat)
    }

    pub(crate) fn check_targets(&self, target_ids: &[u32]) -> Result<()> {
        self.check_ids(target_ids, "target sequence")?;
        if target_ids.len() > self.config.max_output_len {
            return Err(CoreError::Argument(format!(
                "target length {} exceeds max_output_len {}",
                target_ids.len(),
                self.config.max_output_len
            )));
        }
        if let Some(&bad) = target_ids
            .iter()
            .find(|&&id| matches!(id, PAD_ID | BOS_ID | SEP_ID | UNK_ID))
        {
            return Err(CoreError::Argument(format!(
                "target contains reserved id {bad}"
            )));
        }
        Ok(())
    }

    /// Teacher-forced decode on a tape; returns per-step nll nodes, logits
    /// nodes, and attentional hidden nodes (all length = target length).
    pub fn teacher_forced_on_tape(
        &self,
        tape: &mut Tape,
        model: &TapeModel,
        input_ids: &[u32],
        target_ids: &[u32],
    ) -> Result<TeacherForcedNodes> {
        self.check_targets(target_ids)?;
        let enc_out = self.encode_on_tape(tape, model, input_ids)?;
        let mut states = self.initial_states_on_tape(tape);
        let mut prev = BOS_ID;
        let mut nll = Vec::with_capacity(target_ids.len());
        let mut logits_nodes = Vec::with_capacity(target_ids.len());
        let mut hidden = Vec::with_capacity(target_ids.len());
        for &target in target_ids {
            let (logits, hhat) =
                self.decoder_step_on_tape(tape, model, enc_out, prev, &mut states);
            nll.push(tape.row_nll(logits, target as usize));
            logits_nodes.push(logits);
            hidden.push(hhat);
            prev = target;
        }
        Ok(TeacherForcedNodes { nll, logits: logits_nodes, hidden })
    }

    /// Public teacher-forced forward: per-step logits rows, hidden states
    /// stacked `(T, d)`, and per-step cross-entropy (nats).
    pub fn forward_teacher_forced(
        &self,
        input_ids: &[u32],
        target_ids: &[u32],
    ) -> Result<TeacherForcedOutput> {
        let mut tape = Tape::new();
        let model = self.inject(&mut tape, 0);
        let nodes = self.teacher_forced_on_tape(&mut tape, &model, input_ids, target_ids)?;
        let logits: Vec<Vec<f32>> = nodes
            .logits
            .iter()
            .map(|&v| tape.value(v).row(0).to_vec())
            .collect();
        let mut hidden = zeros(target_ids.len(), self.config.model_dim);
        for (t, &h) in nodes.hidden.iter().enumerate() {
            hidden.row_mut(t).assign(&tape.value(h).row(0));
        }
        let nll_per_step: Vec<f32> = nodes.nll.iter().map(|&v| tape.scalar(v)).collect();
        Ok(TeacherForcedOutput { logits, hidden, nll_per_step })
    }

    /// Free-running sample: stepwise draws from the masked softmax, stopping
    /// at eos or `max_output_len`. Log-probability is accumulated from the
    /// same per-step quantities teacher-forced re-scoring computes, so the
    /// two agree exactly on the sampled sequence.
    pub fn sample_summary(
        &self,
        input_ids: &[u32],
        rng: &mut impl Rng,
    ) -> Result<SampledSummary> {
        let mut tape = Tape::new();
        let model = self.inject(&mut tape, 0);
        let enc_out = self.encode_on_tape(&mut tape, &model, input_ids)?;
        let mut states = self.initial_states_on_tape(&mut tape);
        let mut prev = BOS_ID;
        let mut tokens = Vec::new();
        let mut log_prob = 0.0f64;
        let mut hidden_rows: Vec<Var> = Vec::new();
        for _ in 0..self.config.max_output_len {
            let (logits, hhat) =
                self.decoder_step_on_tape(&mut tape, &model, enc_out, prev, &mut states);
            let row: Vec<f32> = tape.value(logits).row(0).to_vec();
            let chosen = sample_from_logits(&row, rng);
            let nll = tape.row_nll(logits, chosen as usize);
            log_prob -= f64::from(tape.scalar(nll));
            tokens.push(chosen);
            hidden_rows.push(hhat);
            prev = chosen;
            if chosen == EOS_ID {
                break;
            }
        }
        let mut hidden = zeros(tokens.len(), self.config.model_dim);
        for (t, &h) in hidden_rows.iter().enumerate() {
            hidden.row_mut(t).assign(&tape.value(h).row(0));
        }
        Ok(SampledSummary { tokens, log_prob, hidden })
    }
}

pub struct TeacherForcedNodes {
    /// Per-step negative log-likelihood nodes, `(1, 1)` each.
    pub nll: Vec<Var>,
    pub logits: Vec<Var>,
    /// Attentional hidden state nodes, `(1, d)` each.
    pub hidden: Vec<Var>,
}

pub struct TeacherForcedOutput {
    pub logits: Vec<Vec<f32>>,
    /// `(T, d)` attentional hidden states.
    pub hidden: Mat,
    pub nll_per_step: Vec<f32>,
}

impl TeacherForcedOutput {
    pub fn mean_nll(&self) -> f64 {
        if self.nll_per_step.is_empty() {
            return 0.0;
        }
        self.nll_per_step.iter().map(|&x| f64::from(x)).sum::<f64>()
            / self.nll_per_step.len() as f64
    }
}

pub struct SampledSummary {
    /// Sampled ids (no bos), ending in eos unless length hit the cap.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    /// `(T, d)` free-running attentional hidden states.
    pub hidden: Mat,
}

/// Draw one id from the softmax of a masked logits row (f64 arithmetic).
pub fn sample_from_logits(row: &[f32], rng: &mut impl Rng) -> u32 {
    let lse = f64::from(log_sum_exp(row));
    let u: f64 = rng.gen();
    let mut acc = 0.0f64;
    let mut last_valid = EOS_ID;
    for (id, &logit) in row.iter().enumerate() {
        if !is_emittable(logit) {
            continue;
        }
        let p = (f64::from(logit) - lse).exp();
        acc += p;
        last_valid = id as u32;
        if u < acc {
            return id as u32;
        }
    }
    last_valid
}

// ---------------------------------------------------------------------------
// Plain path (search-time decoding)
// ---------------------------------------------------------------------------

/// Immutable decoding context: encoder outputs plus model reference. Each
/// candidate carries its own small `DecState`.
pub struct DecodeSession<'a> {
    state: &'a SummarizerState,
    pub enc_out: Mat,
}

/// Per-candidate decoder state: one `(1, d)` hidden per layer.
#[derive(Debug, Clone)]
pub struct DecState {
    layers: Vec<Mat>,
}

impl SummarizerState {
    /// Plain-math encoder forward (identical arithmetic to the tape path).
    pub fn encode_plain(&self, input_ids: &[u32]) -> Result<Mat> {
        self.check_ids(input_ids, "encoder input")?;
        let d = self.config.model_dim;
        let emb = self.params.get(self.ix.emb);
        let mut x = zeros(input_ids.len(), d);
        for (t, &id) in input_ids.iter().enumerate() {
            x.row_mut(t).assign(&emb.row(id as usize));
        }
        for g in &self.ix.enc {
            x = gru::layer_plain(g, &self.params, &x);
        }
        Ok(x)
    }

    /// Average of per-article encodings, each padded to the longest length.
    pub fn merge_encodings(&self, sequences: &[Vec<u32>]) -> Result<Mat> {
        if sequences.is_empty() {
            return Err(CoreError::Argument("merge_encodings of zero articles".into()));
        }
        let common = sequences.iter().map(Vec::len).max().unwrap_or(0);
        if common == 0 {
            return Err(CoreError::Argument("merge_encodings of empty sequences".into()));
        }
        let mut acc: Option<Mat> = None;
        for seq in sequences {
            let mut padded = seq.clone();
            padded.resize(common, PAD_ID);
            let enc = self.encode_plain(&padded)?;
            acc = Some(match acc {
                None => enc,
                Some(a) => a + enc,
            });
        }
        Ok(acc.expect("non-empty") * (1.0 / sequences.len() as f32))
    }

    /// Start a decoding session from raw input ids.
    pub fn start_session(&self, input_ids: &[u32]) -> Result<DecodeSession<'_>> {
        Ok(DecodeSession { state: self, enc_out: self.encode_plain(input_ids)? })
    }

    /// Start a session from a precomputed encoder output (merged encodings).
    pub fn session_from_encoding(&self, enc_out: Mat) -> DecodeSession<'_> {
        DecodeSession { state: self, enc_out }
    }
}

impl DecodeSession<'_> {
    pub fn initial(&self) -> DecState {
        let d = self.state.config.model_dim;
        DecState { layers: (0..self.state.config.layers).map(|_| zeros(1, d)).collect() }
    }

    /// Advance one step: returns the masked logits row and the next state.
    pub fn step(&self, st: &DecState, prev: u32) -> (Vec<f32>, DecState) {
        let state = self.state;
        let params = &state.params;
        let emb = params.get(state.ix.emb);
        let mut x = emb
            .row(prev as usize)
            .to_owned()
            .insert_axis(Axis(0));
        let mut next = DecState { layers: Vec::with_capacity(st.layers.len()) };
        for (l, g) in state.ix.dec.iter().enumerate() {
            let xr = x.dot(params.get(g.wr));
            let xz = x.dot(params.get(g.wz));
            let xn = x.dot(params.get(g.wn));
            let h = gru::step_plain(g, params, &xr, &xz, &xn, &st.layers[l]);
            next.layers.push(h.clone());
            x = h;
        }
        let h_top = x;
        let scores = self.enc_out.dot(&h_top.t());
        let col: Vec<f32> = scores.column(0).to_vec();
        let lse = log_sum_exp(&col);
        let mut alpha = zeros(scores.dim().0, 1);
        for (i, &v) in col.iter().enumerate() {
            alpha[[i, 0]] = (v - lse).exp();
        }
        let ctx = alpha.t().dot(&self.enc_out);
        let mut cat = zeros(1, 2 * state.config.model_dim);
        cat.slice_mut(s![.., ..state.config.model_dim]).assign(&h_top);
        cat.slice_mut(s![.., state.config.model_dim..]).assign(&ctx);
        let comb = cat.dot(params.get(state.ix.comb_w)) + params.get(state.ix.comb_b).row(0);
        let hhat = comb.mapv(f32::tanh);
        let raw = hhat.dot(params.get(state.ix.out_w)) + params.get(state.ix.out_b).row(0);
        let logits = raw + &state.mask_row;
        (logits.row(0).to_vec(), next)
    }
}

// ---------------------------------------------------------------------------
// Beam search
// ---------------------------------------------------------------------------

/// Length-normalized score: `log_prob / len^alpha` (token count includes the
/// eos when present); `alpha = 0` reduces to raw log-probability.
pub fn length_normalized(log_prob: f64, len: usize, alpha: f64) -> f64 {
    assert!(len > 0, "scoring an empty candidate");
    log_prob / (len as f64).powf(alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamCandidate {
    /// Token ids ending in eos, or truncated at max length.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub norm_score: f64,
    pub ended_with_eos: bool,
}

/// Canonical candidate order: norm score desc, then log-prob desc, then
/// token sequence ascending.
pub fn candidate_order(a: &BeamCandidate, b: &BeamCandidate) -> std::cmp::Ordering {
    b.norm_score
        .total_cmp(&a.norm_score)
        .then_with(|| b.log_prob.total_cmp(&a.log_prob))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

impl SummarizerState {
    /// Length-normalized beam search over the masked output distribution.
    /// Returns up to `beam_size` candidates, best first.
    pub fn beam_search(
        &self,
        input_ids: &[u32],
        beam_size: usize,
        alpha: f64,
    ) -> Result<Vec<BeamCandidate>> {
        let session = self.start_session(input_ids)?;
        beam_search_session(&session, beam_size, alpha, self.config.max_output_len)
    }
}

/// Beam search over an existing session (lets callers decode from merged
/// encodings too).
pub fn beam_search_session(
    session: &DecodeSession<'_>,
    beam_size: usize,
    alpha: f64,
    max_output_len: usize,
) -> Result<Vec<BeamCandidate>> {
    if beam_size < 1 {
        return Err(CoreError::Argument("beam_size must be >= 1".into()));
    }
    struct Partial {
        tokens: Vec<u32>,
        log_prob: f64,
        st: DecState,
    }
    let mut active = vec![Partial { tokens: Vec::new(), log_prob: 0.0, st: session.initial() }];
    let mut finished: Vec<BeamCandidate> = Vec::new();

    for _ in 0..max_output_len {
        if active.is_empty() {
            break;
        }
        // (cumulative logp, parent index, token) for every expansion.
        let mut expansions: Vec<(f64, usize, u32)> = Vec::new();
        let mut stepped: Vec<DecState> = Vec::with_capacity(active.len());
        for (pi, p) in active.iter().enumerate() {
            let prev = p.tokens.last().copied().unwrap_or(BOS_ID);
            let (logits, next_st) = session.step(&p.st, prev);
            stepped.push(next_st);
            let lse = f64::from(log_sum_exp(&logits));
            for (id, &logit) in logits.iter().enumerate() {
                if !is_emittable(logit) {
                    continue;
                }
                let lp = p.log_prob + (f64::from(logit) - lse);
                expansions.push((lp, pi, id as u32));
            }
        }
        expansions.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| a.2.cmp(&b.2))
                .then_with(|| a.1.cmp(&b.1))
        });
        expansions.truncate(beam_size);

        let mut next_active = Vec::with_capacity(beam_size);
        for (lp, pi, id) in expansions {
            let mut tokens = active[pi].tokens.clone();
            tokens.push(id);
            if id == EOS_ID {
                let norm = length_normalized(lp, tokens.len(), alpha);
                finished.push(BeamCandidate {
                    tokens,
                    log_prob: lp,
                    norm_score: norm,
                    ended_with_eos: true,
                });
            } else {
                next_active.push(Partial { tokens, log_prob: lp, st: stepped[pi].clone() });
            }
        }
        active = next_active;
    }
    // Length cap reached: remaining actives become unfinished candidates.
    for p in active {
        let norm = length_normalized(p.log_prob, p.tokens.len(), alpha);
        finished.push(BeamCandidate {
            tokens: p.tokens,
            log_prob: p.log_prob,
            norm_score: norm,
            ended_with_eos: false,
        });
    }
    finished.sort_by(candidate_order);
    finished.truncate(beam_size);
    Ok(finished)
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct SummarizerSidecar {
    kind: String,
    config: SummarizerConfig,
    vocab_size: usize,
    vocab_hash: String,
    step: u64,
    special_tokens: std::collections::BTreeMap<String, u32>,
    tokenizer: Tokenizer,
}

fn sidecar_path(params_path: &Path) -> std::path::PathBuf {
    let mut os = params_path.as_os_str().to_owned();
    os.push(".meta.json");
    std::path::PathBuf::from(os)
}

/// Write `<path>` (binary parameters) and `<path>.meta.json` (config echo,
/// vocabulary hash, step count, embedded tokenizer).
pub fn save_summarizer(state: &SummarizerState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    checkpoint::save_params(&state.params, path)?;
    let sidecar = SummarizerSidecar {
        kind: "summarizer".to_string(),
        config: state.config,
        vocab_size: state.tokenizer.vocab_size(),
        vocab_hash: state.tokenizer.vocab_hash(),
        step: state.step,
        special_tokens: crate::tokenizer::SPECIAL_PIECES
            .iter()
            .map(|&(name, id)| (name.trim_matches(['<', '>']).to_string(), id))
            .collect(),
        tokenizer: state.tokenizer.clone(),
    };
    let meta = sidecar_path(path);
    let mut file = std::fs::File::create(&meta).map_err(|e| CoreError::io(&meta, e))?;
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| CoreError::Protocol(format!("sidecar serialization: {e}")))?;
    file.write_all(json.as_bytes()).map_err(|e| CoreError::io(&meta, e))?;
    file.write_all(b"\n").map_err(|e| CoreError::io(&meta, e))?;
    Ok(())
}

pub fn load_summarizer(path: impl AsRef<Path>) -> Result<SummarizerState> {
    let path = path.as_ref();
    let params = checkpoint::load_params(path)?;
    let meta = sidecar_path(path);
    let text = std::fs::read_to_string(&meta).map_err(|e| CoreError::io(&meta, e))?;
    let sidecar: SummarizerSidecar = serde_json::from_str(&text).map_err(|e| CoreError::Parse {
        path: meta.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    if sidecar.kind != "summarizer" {
        return Err(CoreError::Validation(format!(
            "checkpoint kind {:?} is not a summarizer",
            sidecar.kind
        )));
    }
    let mut tokenizer = sidecar.tokenizer;
    tokenizer.rebuild_indexes();
    if tokenizer.vocab_hash() != sidecar.vocab_hash {
        return Err(CoreError::Validation(
            "sidecar vocab_hash does not match embedded tokenizer".into(),
        ));
    }
    if tokenizer.vocab_size() != sidecar.vocab_size {
        return Err(CoreError::Validation(
            "sidecar vocab_size does not match embedded tokenizer".into(),
        ));
    }
    SummarizerState::from_parts(sidecar.config, tokenizer, params, sidecar.step)
}
