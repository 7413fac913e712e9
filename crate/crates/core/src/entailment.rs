//! Article→summary entailment: a trainable pair classifier, a containment
//! oracle, signed rewards, and cluster-level agreement scores.
//!
//! The classifier encodes "premise ⟂ hypothesis" with a GRU and classifies
//! the encoder output sequence through a convolutional head (window sizes 2,
//! 3, 4, 5 with 256 filters each, global max-pooling) into a two-way output:
//! index 0 = not entailed, index 1 = entailed. The exact-0.5 tie resolves to
//! not entailed, so agreement percentages are never inflated by coin flips.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClusterExample, EntailmentRecord, Label};
use crate::error::{CoreError, Result};
use crate::nn::checkpoint;
use crate::nn::gru::{self, GruIx, GruVars};
use crate::nn::optim::{init_uniform, zeros, Optimizer, OptimizerKind, ParamSet};
use crate::nn::tape::{Tape, Var};
use crate::seeding::derive_rng;
use crate::text::normalize_tokens;
use crate::tokenizer::{Tokenizer, PAD_ID, SEP_ID};

/// Convolutional head geometry: n-gram window sizes over encoder outputs.
pub const CONV_WINDOWS: [usize; 4] = [2, 3, 4, 5];
/// Filters per window size.
pub const CONV_FILTERS: usize = 256;
/// Shortest sequence the widest window can see; inputs are padded up to it.
const MIN_SEQ_LEN: usize = CONV_WINDOWS[3];

// ---------------------------------------------------------------------------
// Scorer abstraction
// ---------------------------------------------------------------------------

/// One premise/hypothesis pair, shaped exactly like the scoring wire format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorePair {
    pub premise: String,
    pub hypothesis: String,
}

impl ScorePair {
    pub fn new(premise: impl Into<String>, hypothesis: impl Into<String>) -> Self {
        ScorePair { premise: premise.into(), hypothesis: hypothesis.into() }
    }
}

/// Anything that can label premise/hypothesis pairs: the local classifier,
/// the remote client, the containment oracle, or test fixtures.
pub trait EntailmentScorer: Send + Sync {
    /// Labels positionally aligned with `pairs`; an empty slice yields an
    /// empty vec without side effects.
    fn score_pairs(&self, pairs: &[ScorePair]) -> Result<Vec<Label>>;
}

/// Ground truth for desk-scale experiments: entailed iff the hypothesis'
/// normalized token set is non-empty and contained in the premise's.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContainmentOracle;

impl ContainmentOracle {
    pub fn label(premise: &str, hypothesis: &str) -> Label {
        let hyp: BTreeSet<String> = normalize_tokens(hypothesis).into_iter().collect();
        if hyp.is_empty() {
            // An empty hypothesis is vacuous, not informative agreement.
            return Label::NotEntailed;
        }
        let prem: BTreeSet<String> = normalize_tokens(premise).into_iter().collect();
        Label::from_bool(hyp.is_subset(&prem))
    }
}

impl EntailmentScorer for ContainmentOracle {
    fn score_pairs(&self, pairs: &[ScorePair]) -> Result<Vec<Label>> {
        Ok(pairs
            .iter()
            .map(|p| Self::label(&p.premise, &p.hypothesis))
            .collect())
    }
}

/// Wraps a function as a scorer — the test suite's scripted fixture.
pub struct FnScorer<F>(pub F);

impl<F> EntailmentScorer for FnScorer<F>
where
    F: Fn(&str, &str) -> Label + Send + Sync,
{
    fn score_pairs(&self, pairs: &[ScorePair]) -> Result<Vec<Label>> {
        Ok(pairs
            .iter()
            .map(|p| (self.0)(&p.premise, &p.hypothesis))
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Cluster-level scoring
// ---------------------------------------------------------------------------

/// Fraction of a cluster's articles that entail a candidate summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntailmentScore {
    pub entailed: usize,
    pub total: usize,
}

impl EntailmentScore {
    pub fn from_labels(labels: &[Label]) -> Self {
        EntailmentScore {
            entailed: labels.iter().filter(|l| l.is_entailed()).count(),
            total: labels.len(),
        }
    }

    pub fn value(&self) -> f64 {
        self.entailed as f64 / self.total as f64
    }

    /// Σ over articles of (+1 if entailed else −1) = 2·entailed − total.
    pub fn signed(&self) -> i32 {
        2 * self.entailed as i32 - self.total as i32
    }
}

/// Per-article entailment labels for (article body ⊢ candidate). Articles
/// whose bodies normalize to nothing — and the whole cluster when the
/// candidate normalizes to nothing — are labeled not entailed without
/// consulting the scorer.
pub fn cluster_article_labels(
    scorer: &dyn EntailmentScorer,
    cluster: &ClusterExample,
    candidate: &str,
) -> Result<Vec<Label>> {
    let mut out = cluster_article_labels_batch(scorer, &[(cluster, candidate)])?;
    Ok(out.pop().expect("one item in, one out"))
}

/// Label many (cluster, candidate) pairs through a single scorer round trip.
///
/// Per-item semantics match [`cluster_article_labels`]: a candidate that
/// normalizes to nothing gets all-not-entailed without being scored, and
/// empty-bodied article slots are not-entailed without being scored. Items
/// keep their input order.
pub fn cluster_article_labels_batch(
    scorer: &dyn EntailmentScorer,
    items: &[(&ClusterExample, &str)],
) -> Result<Vec<Vec<Label>>> {
    let mut labels: Vec<Vec<Label>> = Vec::with_capacity(items.len());
    let mut pairs = Vec::new();
    // (item index, article slot) for each pair sent to the scorer.
    let mut slots = Vec::new();
    for (item, &(cluster, candidate)) in items.iter().enumerate() {
        let n = cluster.articles.len();
        if n == 0 {
            return Err(CoreError::Argument(format!(
                "cluster_id={} has no articles to score",
                cluster.cluster_id
            )));
        }
        labels.push(vec![Label::NotEntailed; n]);
        if normalize_tokens(candidate).is_empty() {
            continue;
        }
        for (i, article) in cluster.articles.iter().enumerate() {
            if normalize_tokens(&article.body).is_empty() {
                continue;
            }
            pairs.push(ScorePair::new(article.body.clone(), candidate.to_string()));
            slots.push((item, i));
        }
    }
    if pairs.is_empty() {
        return Ok(labels);
    }
    let scored = scorer.score_pairs(&pairs)?;
    if scored.len() != pairs.len() {
        return Err(CoreError::Protocol(format!(
            "scorer returned {} labels for {} pairs",
            scored.len(),
            pairs.len()
        )));
    }
    for ((item, slot), label) in slots.into_iter().zip(scored) {
        labels[item][slot] = label;
    }
    Ok(labels)
}

pub fn cluster_entailment_score(
    scorer: &dyn EntailmentScorer,
    cluster: &ClusterExample,
    candidate: &str,
) -> Result<EntailmentScore> {
    let labels = cluster_article_labels(scorer, cluster, candidate)?;
    Ok(EntailmentScore::from_labels(&labels))
}

/// Sequence-level return for policy-gradient training: +1 per entailing
/// article, −1 per non-entailing one.
pub fn signed_reward(
    scorer: &dyn EntailmentScorer,
    cluster: &ClusterExample,
    candidate: &str,
) -> Result<i32> {
    Ok(cluster_entailment_score(scorer, cluster, candidate)?.signed())
}

// ---------------------------------------------------------------------------
// Classifier
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub model_dim: usize,
    pub enc_layers: usize,
    /// Premises are head-truncated to this many tokens before encoding.
    pub max_premise_len: usize,
    pub max_hypothesis_len: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            model_dim: 64,
            enc_layers: 1,
            max_premise_len: 1024,
            max_hypothesis_len: 128,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim < 2 {
            return Err(CoreError::Validation("model_dim must be >= 2".into()));
        }
        if self.enc_layers < 1 {
            return Err(CoreError::Validation("enc_layers must be >= 1".into()));
        }
        if self.max_premise_len < MIN_SEQ_LEN {
            return Err(CoreError::Validation(format!(
                "max_premise_len must be >= {MIN_SEQ_LEN}"
            )));
        }
        if self.max_hypothesis_len < 1 {
            return Err(CoreError::Validation("max_hypothesis_len must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ClassifierIx {
    emb: usize,
    enc: Vec<GruIx>,
    conv_k: Vec<usize>,
    conv_b: Vec<usize>,
    out_w: usize,
    out_b: usize,
}

/// Trainable entailment classifier (tokenizer + parameters + shapes).
#[derive(Debug, Clone)]
pub struct ClassifierState {
    pub config: ClassifierConfig,
    pub tokenizer: Tokenizer,
    pub params: ParamSet,
    pub step: u64,
    ix: ClassifierIx,
}

struct ClassifierTapeModel {
    emb: Var,
    enc: Vec<GruVars>,
    conv_k: Vec<Var>,
    conv_b: Vec<Var>,
    out_w: Var,
    out_b: Var,
}

impl ClassifierState {
    pub fn new(config: ClassifierConfig, tokenizer: Tokenizer, seed: u64) -> Result<Self> {
        config.validate()?;
        let vocab = tokenizer.vocab_size();
        let d = config.model_dim;
        let mut rng = derive_rng(seed, &["classifier-init"]);
        let mut params = ParamSet::new();
        let emb = params.add("embedding", init_uniform(&mut rng, vocab, d, 0.08));
        let enc: Vec<GruIx> = (0..config.enc_layers)
            .map(|l| gru::add_params(&mut params, &mut rng, "enc", l, d, 0.08))
            .collect();
        let mut conv_k = Vec::new();
        let mut conv_b = Vec::new();
        for &w in &CONV_WINDOWS {
            let scale = 1.0 / ((w * d) as f32).sqrt();
            conv_k.push(params.add(&format!("conv{w}_k"), init_uniform(&mut rng, w * d, CONV_FILTERS, scale)));
            conv_b.push(params.add(&format!("conv{w}_b"), zeros(1, CONV_FILTERS)));
        }
        // Zero output head: the untrained classifier sits exactly on the
        // 0.5 tie, which the tie rule resolves to not_entailed.
        let out_w = params.add("out_w", zeros(CONV_WINDOWS.len() * CONV_FILTERS, 2));
        let out_b = params.add("out_b", zeros(1, 2));
        Ok(ClassifierState {
            config,
            tokenizer,
            params,
            step: 0,
            ix: ClassifierIx { emb, enc, conv_k, conv_b, out_w, out_b },
        })
    }

    fn from_parts(
        config: ClassifierConfig,
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
        let enc: Vec<GruIx> = (0..config.enc_layers)
            .map(|l| gru::resolve(&params, "enc", l, d))
            .collect::<Result<_>>()?;
        let mut conv_k = Vec::new();
        let mut conv_b = Vec::new();
        for &w in &CONV_WINDOWS {
            conv_k.push(need(&format!("conv{w}_k"), w * d, CONV_FILTERS)?);
            conv_b.push(need(&format!("conv{w}_b"), 1, CONV_FILTERS)?);
        }
        let out_w = need("out_w", CONV_WINDOWS.len() * CONV_FILTERS, 2)?;
        let out_b = need("out_b", 1, 2)?;
        Ok(ClassifierState {
            config,
            tokenizer,
            params,
            step,
            ix: ClassifierIx { emb, enc, conv_k, conv_b, out_w, out_b },
        })
    }

    /// Tokenize "premise ⟂ hypothesis" with truncation and pad the result to
    /// the widest convolution window.
    fn pair_ids(&self, premise: &str, hypothesis: &str) -> Result<Vec<u32>> {
        let mut hyp = self.tokenizer.encode(hypothesis);
        if hyp.is_empty() {
            return Err(CoreError::Argument("empty hypothesis".into()));
        }
        hyp.truncate(self.config.max_hypothesis_len);
        let mut prem = self.tokenizer.encode(premise);
        if prem.is_empty() {
            return Err(CoreError::Argument("empty premise".into()));
        }
        prem.truncate(self.config.max_premise_len);
        let mut ids = prem;
        ids.push(SEP_ID);
        ids.extend(hyp);
        if ids.len() < MIN_SEQ_LEN {
            ids.resize(MIN_SEQ_LEN, PAD_ID);
        }
        Ok(ids)
    }

    fn inject(&self, tape: &mut Tape, set: u8) -> ClassifierTapeModel {
        let p = |tape: &mut Tape, idx: usize| tape.param(set, idx, self.params.get(idx));
        ClassifierTapeModel {
            emb: p(tape, self.ix.emb),
            enc: self
                .ix
                .enc
                .iter()
                .map(|g| gru::inject(tape, &self.params, set, g))
                .collect(),
            conv_k: self.ix.conv_k.iter().map(|&i| p(tape, i)).collect(),
            conv_b: self.ix.conv_b.iter().map(|&i| p(tape, i)).collect(),
            out_w: p(tape, self.ix.out_w),
            out_b: p(tape, self.ix.out_b),
        }
    }

    /// Forward to the `(1, 2)` logits node.
    fn logits_on_tape(&self, tape: &mut Tape, model: &ClassifierTapeModel, ids: &[u32]) -> Var {
        debug_assert!(ids.len() >= MIN_SEQ_LEN);
        let idv: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let mut x = tape.gather(model.emb, &idv);
        for g in &model.enc {
            x = gru::layer_on_tape(tape, g, x, idv.len(), self.config.model_dim);
        }
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
        let feat = feat.expect("at least one window");
        let o = tape.matmul(feat, model.out_w);
        tape.add_row(o, model.out_b)
    }

    /// Probability pair `(p_not_entailed, p_entailed)`; sums to 1 within
    /// f64 rounding.
    pub fn classify_proba(&self, premise: &str, hypothesis: &str) -> Result<(f64, f64)> {
        let ids = self.pair_ids(premise, hypothesis)?;
        let mut tape = Tape::new();
        let model = self.inject(&mut tape, 0);
        let logits = self.logits_on_tape(&mut tape, &model, &ids);
        let row = tape.value(logits);
        let (l0, l1) = (f64::from(row[[0, 0]]), f64::from(row[[0, 1]]));
        let m = l0.max(l1);
        let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
        let z = e0 + e1;
        Ok((e0 / z, e1 / z))
    }

    /// Deterministic argmax label; the exact-0.5 tie goes to not_entailed.
    pub fn classify(&self, premise: &str, hypothesis: &str) -> Result<Label> {
        let (_, p_entailed) = self.classify_proba(premise, hypothesis)?;
        Ok(Label::from_bool(p_entailed > 0.5))
    }
}

impl EntailmentScorer for ClassifierState {
    /// Batch scoring with a conservative guard: pairs whose premise or
    /// hypothesis normalizes to nothing are labeled not entailed instead of
    /// erroring, so decoded candidates can always be scored.
    fn score_pairs(&self, pairs: &[ScorePair]) -> Result<Vec<Label>> {
        pairs
            .iter()
            .map(|p| {
                if normalize_tokens(&p.hypothesis).is_empty()
                    || normalize_tokens(&p.premise).is_empty()
                {
                    Ok(Label::NotEntailed)
                } else {
                    self.classify(&p.premise, &p.hypothesis)
                }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrainConfig {
    pub model: ClassifierConfig,
    pub vocab_size: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            model: ClassifierConfig::default(),
            vocab_size: 2000,
            learning_rate: 1e-3,
            batch_size: 16,
            steps: 250,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl ClassifierTrainConfig {
    pub const KEYS: [&'static str; 10] = [
        "model_dim",
        "enc_layers",
        "max_premise_len",
        "max_hypothesis_len",
        "vocab_size",
        "learning_rate",
        "batch_size",
        "steps",
        "seed",
        "optimizer",
    ];

    pub fn from_kv(kv: &crate::config::KvConfig) -> Result<Self> {
        kv.expect_keys(&Self::KEYS)?;
        let mut cfg = ClassifierTrainConfig::default();
        if let Some(v) = kv.get_usize("model_dim")? {
            cfg.model.model_dim = v;
        }
        if let Some(v) = kv.get_usize("enc_layers")? {
            cfg.model.enc_layers = v;
        }
        if let Some(v) = kv.get_usize("max_premise_len")? {
            cfg.model.max_premise_len = v;
        }
        if let Some(v) = kv.get_usize("max_hypothesis_len")? {
            cfg.model.max_hypothesis_len = v;
        }
        if let Some(v) = kv.get_usize("vocab_size")? {
            cfg.vocab_size = v;
        }
        if let Some(v) = kv.get_f64("learning_rate")? {
            cfg.learning_rate = v;
        }
        if let Some(v) = kv.get_usize("batch_size")? {
            cfg.batch_size = v;
        }
        if let Some(v) = kv.get_usize("steps")? {
            cfg.steps = v;
        }
        if let Some(v) = kv.get_u64("seed")? {
            cfg.seed = v;
        }
        if let Some(v) = kv.get_str("optimizer") {
            cfg.optimizer = v.parse()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.vocab_size < 8 {
            return Err(CoreError::Validation("vocab_size must be >= 8".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(CoreError::Validation("learning_rate must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(CoreError::Validation("batch_size must be >= 1".into()));
        }
        if self.steps < 1 {
            return Err(CoreError::Validation("steps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierTrainReport {
    /// Mean batch cross-entropy per optimizer step (nats).
    pub losses: Vec<f64>,
}

/// Mean of `xs` over trailing windows of `w` — the smoothing used to check
/// that training loss trends downward.
pub fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    assert!(w >= 1);
    if xs.len() < w {
        return Vec::new();
    }
    xs.windows(w).map(|win| win.iter().sum::<f64>() / w as f64).collect()
}

/// Train on explicit (premise, hypothesis, label) triples.
pub fn train_classifier_pairs(
    pairs: &[(String, String, Label)],
    config: &ClassifierTrainConfig,
) -> Result<(ClassifierState, ClassifierTrainReport)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(CoreError::Training("no training pairs".into()));
    }
    let has_pos = pairs.iter().any(|(_, _, l)| l.is_entailed());
    let has_neg = pairs.iter().any(|(_, _, l)| !l.is_entailed());
    if !(has_pos && has_neg) {
        return Err(CoreError::Training("degenerate label distribution".into()));
    }
    let texts: Vec<&str> = pairs
        .iter()
        .flat_map(|(p, h, _)| [p.as_str(), h.as_str()])
        .collect();
    let tokenizer = Tokenizer::train(&texts, config.vocab_size)?;
    let mut state = ClassifierState::new(config.model, tokenizer, config.seed)?;

    let encoded: Vec<(Vec<u32>, usize)> = pairs
        .iter()
        .map(|(p, h, l)| Ok((state.pair_ids(p, h)?, usize::from(l.is_entailed()))))
        .collect::<Result<_>>()?;

    let mut opt = Optimizer::new(config.optimizer, config.learning_rate as f32);
    let mut losses = Vec::with_capacity(config.steps);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut epoch = 0u64;
    let mut cursor = order.len(); // force an initial shuffle
    for _ in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(encoded.len()) {
            if cursor >= order.len() {
                let mut rng = derive_rng(config.seed, &["clf-order", &epoch.to_string()]);
                order.shuffle(&mut rng);
                epoch += 1;
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let mut tape = Tape::new();
        let model = state.inject(&mut tape, 0);
        let mut total: Option<Var> = None;
        for &i in &batch {
            let (ids, class) = &encoded[i];
            let logits = state.logits_on_tape(&mut tape, &model, ids);
            let nll = tape.row_nll(logits, *class);
            total = Some(match total {
                None => nll,
                Some(t) => tape.add(t, nll),
            });
        }
        let total = total.expect("non-empty batch");
        let loss = tape.scale(total, 1.0 / batch.len() as f32);
        losses.push(f64::from(tape.scalar(loss)));
        let grads = tape.backward(loss);
        opt.step(&mut state.params, &grads, 0);
        state.step += 1;
    }
    Ok((state, ClassifierTrainReport { losses }))
}

/// Train from annotated records, resolving each record's premise (the
/// article body) through the cluster set.
pub fn train_classifier(
    records: &[EntailmentRecord],
    clusters: &[ClusterExample],
    config: &ClassifierTrainConfig,
) -> Result<(ClassifierState, ClassifierTrainReport)> {
    // Article content is unique per article_id across the dataset, so the
    // premise lookup can ignore which cluster a record came from.
    let mut bodies: std::collections::BTreeMap<&str, &str> = std::collections::BTreeMap::new();
    for cluster in clusters {
        for article in &cluster.articles {
            bodies.insert(&article.article_id, &article.body);
        }
    }
    let pairs: Vec<(String, String, Label)> = records
        .iter()
        .map(|r| {
            let body = bodies.get(r.article_id.as_str()).ok_or_else(|| {
                CoreError::Validation(format!(
                    "record references unknown article_id={}",
                    r.article_id
                ))
            })?;
            Ok((body.to_string(), r.hypothesis.clone(), r.label))
        })
        .collect::<Result<_>>()?;
    train_classifier_pairs(&pairs, config)
}

// ---------------------------------------------------------------------------
// Labeled pair files
// ---------------------------------------------------------------------------

/// On-disk form of one labeled premise/hypothesis pair (JSONL row).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub premise: String,
    pub hypothesis: String,
    pub label: Label,
}

/// Reads a JSONL file of [`PairRecord`]s into training triples.
pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<(String, String, Label)>> {
    let records: Vec<PairRecord> = crate::jsonl::read_jsonl(path)?;
    Ok(records
        .into_iter()
        .map(|r| (r.premise, r.hypothesis, r.label))
        .collect())
}

/// Writes training triples as a JSONL file of [`PairRecord`]s.
pub fn save_pairs(pairs: &[(String, String, Label)], path: impl AsRef<Path>) -> Result<()> {
    let records: Vec<PairRecord> = pairs
        .iter()
        .map(|(p, h, l)| PairRecord {
            premise: p.clone(),
            hypothesis: h.clone(),
            label: *l,
        })
        .collect();
    crate::jsonl::write_jsonl(&records, path)
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ClassifierSidecar {
    kind: String,
    config: ClassifierConfig,
    vocab_size: usize,
    vocab_hash: String,
    step: u64,
    tokenizer: Tokenizer,
}

fn sidecar_path(params_path: &Path) -> std::path::PathBuf {
    let mut os = params_path.as_os_str().to_owned();
    os.push(".meta.json");
    std::path::PathBuf::from(os)
}

pub fn save_classifier(state: &ClassifierState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    checkpoint::save_params(&state.params, path)?;
    let sidecar = ClassifierSidecar {
        kind: "entailment".to_string(),
        config: state.config,
        vocab_size: state.tokenizer.vocab_size(),
        vocab_hash: state.tokenizer.vocab_hash(),
        step: state.step,
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

pub fn load_classifier(path: impl AsRef<Path>) -> Result<ClassifierState> {
    let path = path.as_ref();
    let params = checkpoint::load_params(path)?;
    let meta = sidecar_path(path);
    let text = std::fs::read_to_string(&meta).map_err(|e| CoreError::io(&meta, e))?;
    let sidecar: ClassifierSidecar = serde_json::from_str(&text).map_err(|e| CoreError::Parse {
        path: meta.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    if sidecar.kind != "entailment" {
        return Err(CoreError::Validation(format!(
            "checkpoint kind {:?} is not an entailment classifier",
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
    ClassifierState::from_parts(sidecar.config, tokenizer, params, sidecar.step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Article, Split};
    use proptest::prelude::*;

    fn cluster_with_bodies(bodies: &[&str]) -> ClusterExample {
        ClusterExample {
            cluster_id: "c1".into(),
            split: Split::Train,
            summary: "s".into(),
            articles: bodies
                .iter()
                .enumerate()
                .map(|(i, b)| Article {
                    article_id: format!("a{i}"),
                    title: String::new(),
                    body: b.to_string(),
                    url: String::new(),
                    published_date: "2019-01-01".into(),
                })
                .collect(),
            labels: None,
        }
    }

    /// Tiny balanced containment corpus for fast training tests.
    fn tiny_containment_pairs(n: usize, seed: u64) -> Vec<(String, String, Label)> {
        let vocab: Vec<String> = (0..40).map(|i| format!("word{i:02}")).collect();
        let mut rng = derive_rng(seed, &["tiny-pairs"]);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            use rand::seq::SliceRandom;
            let mut prem: Vec<String> = vocab
                .choose_multiple(&mut rng, 12)
                .cloned()
                .collect();
            prem.shuffle(&mut rng);
            let positive = i % 2 == 0;
            let hyp: Vec<String> = if positive {
                prem.choose_multiple(&mut rng, 3).cloned().collect()
            } else {
                let mut h: Vec<String> = prem.choose_multiple(&mut rng, 2).cloned().collect();
                let outside = vocab
                    .iter()
                    .find(|w| !prem.contains(w))
                    .expect("12 < 40")
                    .clone();
                h.push(outside);
                h
            };
            out.push((
                prem.join(" "),
                hyp.join(" "),
                Label::from_bool(positive),
            ));
        }
        out
    }

    #[test]
    fn containment_oracle_examples() {
        let premise = "The river flooded the town square. Rescue teams arrived by noon.";
        assert_eq!(
            ContainmentOracle::label(premise, "The river flooded the town square"),
            Label::Entailed
        );
        assert_eq!(
            ContainmentOracle::label(premise, "The river flooded the harbor"),
            Label::NotEntailed
        );
        // Vacuous hypotheses are not agreement.
        assert_eq!(ContainmentOracle::label(premise, "?!"), Label::NotEntailed);
    }

    #[test]
    fn cluster_scores_and_signed_rewards() {
        let scorer = ContainmentOracle;
        let cluster = cluster_with_bodies(&[
            "storm hits coast hard",
            "storm hits the coast",
            "inland towns stay dry",
            "rain misses the coast",
        ]);
        // "storm hits coast" ⊆ articles 0 and 1 only.
        let score = cluster_entailment_score(&scorer, &cluster, "storm hits coast").unwrap();
        assert_eq!((score.entailed, score.total), (2, 4));
        assert!((score.value() - 0.5).abs() < 1e-12);
        assert_eq!(signed_reward(&scorer, &cluster, "storm hits coast").unwrap(), 0);

        let all = cluster_entailment_score(&scorer, &cluster, "coast").unwrap();
        assert_eq!((all.entailed, all.total), (3, 4));
        assert_eq!(all.signed(), 2);

        // 3-article cluster, labels (E, E, N) → +1.
        let three = cluster_with_bodies(&["a b c", "a c d", "x y z"]);
        assert_eq!(signed_reward(&scorer, &three, "a c").unwrap(), 1);

        // Empty candidate: everything not entailed, scorer untouched.
        let zero = cluster_entailment_score(&scorer, &cluster, "   ").unwrap();
        assert_eq!((zero.entailed, zero.total), (0, 4));

        let empty = ClusterExample { articles: Vec::new(), ..cluster };
        assert!(matches!(
            cluster_entailment_score(&scorer, &empty, "x"),
            Err(CoreError::Argument(_))
        ));
    }

    #[test]
    fn batch_labels_match_per_item_calls_in_one_round_trip() {
        use std::sync::atomic::{AtomicUsize, Ordering};

        struct Counting(AtomicUsize);
        impl EntailmentScorer for Counting {
            fn score_pairs(&self, pairs: &[ScorePair]) -> Result<Vec<Label>> {
                self.0.fetch_add(1, Ordering::SeqCst);
                pairs
                    .iter()
                    .map(|p| Ok(ContainmentOracle::label(&p.premise, &p.hypothesis)))
                    .collect()
            }
        }

        let a = cluster_with_bodies(&["storm hits coast", "inland stays dry"]);
        let b = cluster_with_bodies(&["a b c", "a c d", "x y z"]);
        let scorer = Counting(AtomicUsize::new(0));
        let items: Vec<(&ClusterExample, &str)> =
            vec![(&a, "storm"), (&b, "a c"), (&a, "   "), (&b, "q")];
        let batch = cluster_article_labels_batch(&scorer, &items).unwrap();
        assert_eq!(scorer.0.load(Ordering::SeqCst), 1);

        let oracle = ContainmentOracle;
        for ((cluster, cand), got) in items.iter().zip(&batch) {
            assert_eq!(got, &cluster_article_labels(&oracle, cluster, cand).unwrap());
        }
        // The blank candidate was resolved without scoring.
        assert_eq!(batch[2], vec![Label::NotEntailed; 2]);
    }

    proptest! {
        #[test]
        fn signed_reward_identity_over_all_label_patterns(pattern in 0u8..16) {
            // All 2^4 entailment patterns on a 4-article cluster: the
            // identity signed == n(2·score − 1) must hold exactly.
            let scripted = FnScorer(move |premise: &str, _h: &str| {
                let idx: usize = premise.trim_start_matches("body").parse().unwrap();
                Label::from_bool(pattern & (1 << idx) != 0)
            });
            let cluster = cluster_with_bodies(&["body0", "body1", "body2", "body3"]);
            let score = cluster_entailment_score(&scripted, &cluster, "candidate").unwrap();
            let signed = score.signed();
            let n = score.total as f64;
            prop_assert!((f64::from(signed) - n * (2.0 * score.value() - 1.0)).abs() < 1e-12);
            prop_assert_eq!(signed, signed_reward(&scripted, &cluster, "candidate").unwrap());
            prop_assert!(signed.abs() <= 4);
            // Parity matches cluster size.
            prop_assert_eq!(signed.rem_euclid(2), 0);
        }
    }

    #[test]
    fn untrained_classifier_ties_to_not_entailed() {
        let pairs = tiny_containment_pairs(8, 1);
        let texts: Vec<&str> = pairs
            .iter()
            .flat_map(|(p, h, _)| [p.as_str(), h.as_str()])
            .collect();
        let tok = Tokenizer::train(&texts, 500).unwrap();
        let state = ClassifierState::new(ClassifierConfig::default(), tok, 0).unwrap();
        let (p0, p1) = state.classify_proba(&pairs[0].0, &pairs[0].1).unwrap();
        assert_eq!(p0, 0.5);
        assert_eq!(p1, 0.5);
        assert_eq!(state.classify(&pairs[0].0, &pairs[0].1).unwrap(), Label::NotEntailed);
    }

    #[test]
    fn classify_is_deterministic_and_probabilities_sum_to_one() {
        let pairs = tiny_containment_pairs(60, 2);
        let config = ClassifierTrainConfig {
            model: ClassifierConfig {
                model_dim: 24,
                enc_layers: 1,
                max_premise_len: 64,
                max_hypothesis_len: 16,
            },
            vocab_size: 500,
            steps: 12,
            batch_size: 8,
            ..Default::default()
        };
        let (state, _) = train_classifier_pairs(&pairs, &config).unwrap();
        for (p, h, _) in pairs.iter().take(6) {
            let (a0, a1) = state.classify_proba(p, h).unwrap();
            let (b0, b1) = state.classify_proba(p, h).unwrap();
            assert_eq!(a0.to_bits(), b0.to_bits());
            assert_eq!(a1.to_bits(), b1.to_bits());
            assert!((a0 + a1 - 1.0).abs() < 1e-6, "probabilities sum to {}", a0 + a1);
            assert_eq!(
                state.classify(p, h).unwrap(),
                state.classify(p, h).unwrap()
            );
        }
    }

    #[test]
    fn classifier_rejects_empty_sides() {
        let pairs = tiny_containment_pairs(8, 3);
        let texts: Vec<&str> = pairs
            .iter()
            .flat_map(|(p, h, _)| [p.as_str(), h.as_str()])
            .collect();
        let tok = Tokenizer::train(&texts, 500).unwrap();
        let state = ClassifierState::new(ClassifierConfig::default(), tok, 0).unwrap();
        assert!(matches!(
            state.classify("premise text", ""),
            Err(CoreError::Argument(_))
        ));
        assert!(matches!(
            state.classify("", "hypothesis"),
            Err(CoreError::Argument(_))
        ));
        // Batch scoring is lenient: degenerate pairs come back not_entailed.
        let labels = state
            .score_pairs(&[ScorePair::new("premise text", "  ")])
            .unwrap();
        assert_eq!(labels, vec![Label::NotEntailed]);
    }

    #[test]
    fn training_smoke_two_records_one_per_class() {
        let pairs = vec![
            ("alpha beta gamma".to_string(), "alpha beta".to_string(), Label::Entailed),
            ("alpha beta gamma".to_string(), "delta".to_string(), Label::NotEntailed),
        ];
        let config = ClassifierTrainConfig {
            model: ClassifierConfig {
                model_dim: 8,
                enc_layers: 1,
                max_premise_len: 32,
                max_hypothesis_len: 8,
            },
            vocab_size: 64,
            steps: 1,
            batch_size: 2,
            ..Default::default()
        };
        let (state, report) = train_classifier_pairs(&pairs, &config).unwrap();
        assert_eq!(report.losses.len(), 1);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn training_rejects_single_class_input() {
        let pairs = vec![
            ("a b".to_string(), "a".to_string(), Label::Entailed),
            ("c d".to_string(), "c".to_string(), Label::Entailed),
        ];
        let err = train_classifier_pairs(&pairs, &ClassifierTrainConfig::default()).unwrap_err();
        assert!(matches!(err, CoreError::Training(_)));
        assert!(err.to_string().contains("degenerate label distribution"), "{err}");
    }

    #[test]
    fn training_loss_trends_downward_and_beats_prior() {
        let pairs = tiny_containment_pairs(80, 4);
        let config = ClassifierTrainConfig {
            model: ClassifierConfig {
                model_dim: 24,
                enc_layers: 1,
                max_premise_len: 64,
                max_hypothesis_len: 16,
            },
            vocab_size: 500,
            steps: 60,
            batch_size: 16,
            seed: 5,
            ..Default::default()
        };
        let (state, report) = train_classifier_pairs(&pairs, &config).unwrap();
        let ma = moving_average(&report.losses, 10);
        assert!(
            ma.last().unwrap() < ma.first().unwrap(),
            "smoothed loss should fall: {:?} -> {:?}",
            ma.first(),
            ma.last()
        );
        // Train-set accuracy must clear the majority-class prior (0.5) by a
        // margin on this balanced set.
        let correct = pairs
            .iter()
            .filter(|(p, h, l)| state.classify(p, h).unwrap() == *l)
            .count();
        let acc = correct as f64 / pairs.len() as f64;
        assert!(acc > 0.6, "train accuracy {acc} should beat 0.6");
    }

    #[test]
    fn train_classifier_resolves_article_bodies() {
        let cluster = cluster_with_bodies(&["alpha beta gamma delta", "epsilon zeta eta theta"]);
        let records = vec![
            EntailmentRecord::new("c1".into(), "a0".into(), "alpha beta".into(), vec![true, true, true])
                .unwrap(),
            EntailmentRecord::new(
                "c1".into(),
                "a1".into(),
                "missing words".into(),
                vec![false, false, false],
            )
            .unwrap(),
        ];
        let config = ClassifierTrainConfig {
            model: ClassifierConfig {
                model_dim: 8,
                enc_layers: 1,
                max_premise_len: 32,
                max_hypothesis_len: 8,
            },
            vocab_size: 64,
            steps: 1,
            batch_size: 2,
            ..Default::default()
        };
        let clusters = vec![cluster];
        assert!(train_classifier(&records, &clusters, &config).is_ok());

        let orphan = vec![EntailmentRecord::new(
            "c1".into(),
            "ghost".into(),
            "x".into(),
            vec![true, true, false],
        )
        .unwrap()];
        assert!(matches!(
            train_classifier(&orphan, &clusters, &config),
            Err(CoreError::Validation(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_preserves_labels() {
        let pairs = tiny_containment_pairs(40, 6);
        let config = ClassifierTrainConfig {
            model: ClassifierConfig {
                model_dim: 16,
                enc_layers: 1,
                max_premise_len: 64,
                max_hypothesis_len: 16,
            },
            vocab_size: 300,
            steps: 8,
            batch_size: 8,
            ..Default::default()
        };
        let (state, _) = train_classifier_pairs(&pairs, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.ckpt");
        save_classifier(&state, &path).unwrap();
        let loaded = load_classifier(&path).unwrap();
        assert_eq!(loaded.step, state.step);
        for (p, h, _) in pairs.iter().take(10) {
            let (a0, a1) = state.classify_proba(p, h).unwrap();
            let (b0, b1) = loaded.classify_proba(p, h).unwrap();
            assert_eq!(a0.to_bits(), b0.to_bits());
            assert_eq!(a1.to_bits(), b1.to_bits());
        }
    }

    #[test]
    fn pair_file_round_trip() {
        let pairs = vec![
            ("a b c".to_string(), "b".to_string(), Label::Entailed),
            ("a b".to_string(), "z".to_string(), Label::NotEntailed),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        save_pairs(&pairs, &path).unwrap();
        assert_eq!(load_pairs(&path).unwrap(), pairs);

        // Rows with stray fields are rejected rather than silently dropped.
        std::fs::write(
            &path,
            "{\"premise\":\"a\",\"hypothesis\":\"a\",\"label\":\"entailed\",\"x\":1}\n",
        )
        .unwrap();
        assert!(matches!(load_pairs(&path), Err(CoreError::Parse { .. })));
    }
}
