//! Subcommand implementations. Each command resolves its effective config
//! (file first, flags win), does the work through the core library, writes
//! its artifacts, and lands a run manifest last.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use agreesum_core::config::KvConfig;
use agreesum_core::corpus::{
    load_annotations, load_clusters, save_annotations, save_clusters, Annotation, ClusterExample,
};
use agreesum_core::dataset::{
    aggregate_neighbor_annotations, build_dataset, load_raw_clusters, save_raw_clusters,
    BuilderConfig, BuiltDataset, RawCluster,
};
use agreesum_core::decoding::{
    decode_b5, decode_entdec, decode_standard, DecodeConfig, DecodedRecord,
};
use agreesum_core::entailment::{
    load_classifier, load_pairs, save_classifier, train_classifier_pairs, ClassifierTrainConfig,
    ContainmentOracle, EntailmentScorer,
};
use agreesum_core::error::{CoreError, Result};
use agreesum_core::evaluation::{
    evaluate_run, render_table, HumanAnnotation, MetricsReport, ReferenceMode,
};
use agreesum_core::jsonl;
use agreesum_core::nn::optim::OptimizerKind;
use agreesum_core::remote::ScoreServer;
use agreesum_core::seeding::derive_rng;
use agreesum_core::summarizer::{load_summarizer, save_summarizer};
use agreesum_core::synth::{self, SynthConfig};
use agreesum_core::training::{train_asm, train_baseline, BaselineKind, DatasetViews, TrainConfig};
use chrono::NaiveDate;
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::manifest::{sibling, write_json_atomic, ManifestBuilder};
use crate::scorer::ScorerArgs;
use crate::{CliError, CliResult};

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CoreError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CoreError::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// synth-data
// ---------------------------------------------------------------------------

/// Single-document verbatim-summary pair emitted by `--copy-pairs`.
#[derive(Debug, Serialize, Deserialize)]
pub struct CopyPair {
    pub document: String,
    pub summary: String,
}

#[derive(Debug, Args)]
pub struct SynthDataArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Raw clusters dated in the train/dev pool.
    #[arg(long, default_value_t = 60)]
    pub train_clusters: usize,

    /// Raw clusters dated in the test window.
    #[arg(long, default_value_t = 40)]
    pub test_clusters: usize,

    /// Neighbor articles per cluster (1-8).
    #[arg(long, default_value_t = 6)]
    pub neighbors: usize,

    /// Probability that a neighbor entails the summary.
    #[arg(long, default_value_t = 0.55)]
    pub p_entail: f64,

    /// Fraction of train-pool clusters shipped with neighbor annotations.
    #[arg(long, default_value_t = 1.0)]
    pub annotated_fraction: f64,

    /// Labeled containment pairs for classifier training (0 = skip the file).
    #[arg(long, default_value_t = 0, value_name = "N")]
    pub pairs: usize,

    /// Verbatim (document, summary) pairs (0 = skip the file).
    #[arg(long, default_value_t = 0, value_name = "N")]
    pub copy_pairs: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn synth_data(args: SynthDataArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("synth-data");
    let config = SynthConfig {
        train_clusters: args.train_clusters,
        test_clusters: args.test_clusters,
        neighbors: args.neighbors,
        p_entail: args.p_entail,
        annotated_fraction: args.annotated_fraction,
        seed: args.seed,
    };
    manifest.seed(args.seed);
    manifest.config(json!({
        "synth": config,
        "pairs": args.pairs,
        "copy_pairs": args.copy_pairs,
    }));

    let corpus = synth::generate_corpus(&config)?;
    ensure_dir(&args.out)?;

    let raw_path = args.out.join("raw_clusters.jsonl");
    save_raw_clusters(&corpus.raw, &raw_path)?;
    manifest.output(&raw_path);

    // Vote-level annotations: three unanimous raters per labeled neighbor,
    // so build-dataset exercises the same aggregation path real votes would.
    let by_id: BTreeMap<&str, &RawCluster> = corpus
        .raw
        .iter()
        .map(|c| (c.cluster_id.as_str(), c))
        .collect();
    let mut annotations = Vec::new();
    for (cluster_id, labels) in &corpus.annotations {
        let cluster = by_id[cluster_id.as_str()];
        for (i, &entailed) in labels.iter().enumerate() {
            annotations.push(Annotation {
                cluster_id: cluster_id.clone(),
                article_id: cluster.neighbors[i].article_id.clone(),
                votes: vec![entailed; 3],
            });
        }
    }
    let ann_path = args.out.join("annotations.jsonl");
    save_annotations(&annotations, &ann_path)?;
    manifest.output(&ann_path);

    if args.pairs > 0 {
        let pairs = synth::containment_pairs(args.pairs, args.seed);
        let path = args.out.join("entailment_pairs.jsonl");
        agreesum_core::entailment::save_pairs(&pairs, &path)?;
        manifest.output(&path);
    }
    if args.copy_pairs > 0 {
        let pairs: Vec<CopyPair> = synth::copy_pairs(args.copy_pairs, args.seed)
            .into_iter()
            .map(|(document, summary)| CopyPair { document, summary })
            .collect();
        let path = args.out.join("copy_pairs.jsonl");
        jsonl::write_jsonl(&pairs, &path)?;
        manifest.output(&path);
    }

    manifest.write(&args.out.join("manifest.json"))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// build-dataset
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    /// Raw clusters (JSONL).
    #[arg(long, value_name = "FILE")]
    pub raw: PathBuf,

    /// Vote-level neighbor annotations (JSONL); omit for a fully
    /// unannotated build.
    #[arg(long, value_name = "FILE")]
    pub annotations: Option<PathBuf>,

    /// Builder config file (`key = value`).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Labeled subsamples drawn per annotated cluster.
    #[arg(long)]
    pub duplication_factor: Option<usize>,

    /// Articles per emitted cluster.
    #[arg(long)]
    pub final_cluster_size: Option<usize>,

    /// Clusters sampled into the test split.
    #[arg(long)]
    pub test_cluster_count: Option<usize>,

    /// Clusters dated strictly before this feed train/dev.
    #[arg(long, value_name = "YYYY-MM-DD")]
    pub train_dev_cutoff: Option<NaiveDate>,

    /// Start of the half-open test window.
    #[arg(long, value_name = "YYYY-MM-DD")]
    pub test_window_start: Option<NaiveDate>,

    /// End of the half-open test window.
    #[arg(long, value_name = "YYYY-MM-DD")]
    pub test_window_end: Option<NaiveDate>,
}

pub fn build_dataset_cmd(args: BuildDatasetArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("build-dataset");
    let mut config = match &args.config {
        Some(path) => {
            manifest.input(path);
            BuilderConfig::from_kv(&KvConfig::load(path)?)?
        }
        None => BuilderConfig::default(),
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.duplication_factor {
        config.duplication_factor = v;
    }
    if let Some(v) = args.final_cluster_size {
        config.final_cluster_size = v;
    }
    if let Some(v) = args.test_cluster_count {
        config.test_cluster_count = v;
    }
    if let Some(v) = args.train_dev_cutoff {
        config.train_dev_cutoff = v;
    }
    if let Some(v) = args.test_window_start {
        config.test_window_start = v;
    }
    if let Some(v) = args.test_window_end {
        config.test_window_end = v;
    }
    config.validate()?;
    manifest.seed(config.seed);

    manifest.input(&args.raw);
    let raw = load_raw_clusters(&args.raw)?;
    let annotated = match &args.annotations {
        Some(path) => {
            manifest.input(path);
            let votes = load_annotations(path)?;
            aggregate_neighbor_annotations(&raw, &votes)?
        }
        None => BTreeMap::new(),
    };
    manifest.config(json!({
        "builder": config,
        "raw_clusters": raw.len(),
        "annotated_clusters": annotated.len(),
    }));

    let built = build_dataset(&raw, &annotated, &config)?;
    ensure_dir(&args.out)?;

    let dataset_path = args.out.join("dataset.json");
    write_json_atomic(&built, &dataset_path)?;
    manifest.output(&dataset_path);
    for (name, split) in [
        ("train.jsonl", &built.train),
        ("dev.jsonl", &built.dev),
        ("test.jsonl", &built.test),
    ] {
        let path = args.out.join(name);
        save_clusters(split, &path)?;
        manifest.output(&path);
    }
    let stats_path = args.out.join("stats.json");
    write_json_atomic(&built.stats, &stats_path)?;
    manifest.output(&stats_path);

    manifest.write(&args.out.join("manifest.json"))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// train-entailment
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct TrainEntailmentArgs {
    /// Labeled premise/hypothesis pairs (JSONL).
    #[arg(long, value_name = "FILE")]
    pub pairs: PathBuf,

    /// Held-out pairs; accuracy lands in the report.
    #[arg(long, value_name = "FILE")]
    pub eval_pairs: Option<PathBuf>,

    /// Trainer config file (`key = value`).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Checkpoint output path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub steps: Option<usize>,

    #[arg(long)]
    pub learning_rate: Option<f64>,

    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Serialize)]
struct EntailmentReport {
    steps: usize,
    final_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eval_accuracy: Option<f64>,
}

pub fn train_entailment(args: TrainEntailmentArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("train-entailment");
    let mut config = match &args.config {
        Some(path) => {
            manifest.input(path);
            ClassifierTrainConfig::from_kv(&KvConfig::load(path)?)?
        }
        None => ClassifierTrainConfig::default(),
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.steps {
        config.steps = v;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    config.validate()?;
    manifest.seed(config.seed);
    manifest.config(json!({ "classifier": config }));

    manifest.input(&args.pairs);
    let pairs = load_pairs(&args.pairs)?;
    let (state, report) = train_classifier_pairs(&pairs, &config)?;

    let eval_accuracy = match &args.eval_pairs {
        Some(path) => {
            manifest.input(path);
            let held_out = load_pairs(path)?;
            if held_out.is_empty() {
                return Err(CoreError::Validation("eval pair file is empty".into()).into());
            }
            let mut hits = 0usize;
            for (p, h, label) in &held_out {
                hits += usize::from(state.classify(p, h)? == *label);
            }
            Some(hits as f64 / held_out.len() as f64)
        }
        None => None,
    };

    ensure_parent(&args.out)?;
    save_classifier(&state, &args.out)?;
    manifest.output(&args.out);
    manifest.output(&sibling(&args.out, ".meta.json")?);

    let report_path = sibling(&args.out, ".report.json")?;
    write_json_atomic(
        &EntailmentReport {
            steps: report.losses.len(),
            final_loss: report.losses.last().copied(),
            eval_accuracy,
        },
        &report_path,
    )?;
    manifest.output(&report_path);
    if let Some(acc) = eval_accuracy {
        println!("held-out accuracy: {acc:.4}");
    }

    manifest.write(&sibling(&args.out, ".manifest.json")?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// serve-entailment
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct ServeEntailmentArgs {
    /// Classifier checkpoint to serve.
    #[arg(long, value_name = "CKPT")]
    pub entailment_ckpt: Option<PathBuf>,

    /// Serve the containment oracle instead of a trained classifier.
    #[arg(long)]
    pub scorer_oracle: bool,

    /// host:port to bind; port 0 lets the OS pick.
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub bind: String,
}

pub fn serve_entailment(args: ServeEntailmentArgs) -> CliResult<()> {
    let scorer: Arc<dyn EntailmentScorer> = if args.scorer_oracle {
        Arc::new(ContainmentOracle)
    } else if let Some(ckpt) = &args.entailment_ckpt {
        Arc::new(load_classifier(ckpt)?)
    } else {
        return Err(CliError::NoScorer);
    };
    let server = ScoreServer::start(scorer, &args.bind)?;
    // The endpoint line is the machine-readable part of the startup output;
    // flush so a parent process piping stdout sees it immediately.
    println!("{}", server.endpoint());
    std::io::Write::flush(&mut std::io::stdout()).map_err(|e| CoreError::io("stdout", e))?;
    server.join_forever();
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Trainable recipes: the four supervised baselines or the
/// agreement-rewarded summarizer.
#[derive(Debug, Clone, Copy)]
pub enum ModelChoice {
    Baseline(BaselineKind),
    Asm,
}

impl std::str::FromStr for ModelChoice {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("asm") {
            return Ok(ModelChoice::Asm);
        }
        s.parse::<BaselineKind>()
            .map(ModelChoice::Baseline)
            .map_err(|_| {
                CoreError::Argument(format!("unknown model {s:?} (want b1, b2, b3, b4, or asm)"))
            })
    }
}

fn model_label(choice: ModelChoice) -> &'static str {
    match choice {
        ModelChoice::Baseline(BaselineKind::B1) => "b1",
        ModelChoice::Baseline(BaselineKind::B2) => "b2",
        ModelChoice::Baseline(BaselineKind::B3) => "b3",
        ModelChoice::Baseline(BaselineKind::B4) => "b4",
        ModelChoice::Asm => "asm",
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Recipe: b1, b2, b3, b4, or asm.
    #[arg(long)]
    pub model: ModelChoice,

    /// Built dataset (the dataset.json emitted by build-dataset).
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,

    /// Trainer config file (`key = value`).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Checkpoint output path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    /// Warm-start checkpoint (asm only; replaces the built-in b1 warmup).
    #[arg(long, value_name = "CKPT")]
    pub init: Option<PathBuf>,

    #[command(flatten)]
    pub scorer: ScorerArgs,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub max_steps: Option<u64>,

    /// Single-document warmup updates (b3 phase one / asm warm start).
    #[arg(long)]
    pub b1_steps: Option<u64>,

    #[arg(long)]
    pub learning_rate: Option<f64>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    /// Weight of the adversarial language term in policy-gradient steps.
    #[arg(long)]
    pub lambda: Option<f64>,

    /// sgd or adam.
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,

    /// Evaluate on dev every N updates (0 = only at the end).
    #[arg(long, value_name = "N")]
    pub eval_every: Option<u64>,
}

pub fn train(args: TrainArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("train");
    let mut config = match &args.config {
        Some(path) => {
            manifest.input(path);
            TrainConfig::from_kv(&KvConfig::load(path)?)?
        }
        None => match args.model {
            ModelChoice::Asm => TrainConfig::asm_defaults(),
            ModelChoice::Baseline(_) => TrainConfig::default(),
        },
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.max_steps {
        config.max_steps = v;
    }
    if let Some(v) = args.b1_steps {
        config.b1_steps = v;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.lambda {
        config.lambda = v;
    }
    if let Some(v) = args.optimizer {
        config.optimizer = v;
    }
    if let Some(v) = args.eval_every {
        config.eval_every = v;
    }
    config.validate()?;
    manifest.seed(config.seed);

    // Resolve the scorer before touching the dataset so a missing scorer is
    // reported as such, not as a downstream file error.
    let resolved = match args.model {
        ModelChoice::Asm => Some(args.scorer.resolve()?.ok_or(CliError::NoScorer)?),
        ModelChoice::Baseline(_) => {
            if args.init.is_some() {
                return Err(
                    CoreError::Argument("--init only applies to --model asm".into()).into(),
                );
            }
            None
        }
    };
    let label = model_label(args.model);
    manifest.config(json!({
        "model": label,
        "train": config,
        "scorer": resolved.as_ref().map(|r| r.id.as_str()),
    }));

    manifest.input(&args.dataset);
    let built: BuiltDataset = read_json(&args.dataset)?;
    let views = DatasetViews {
        linked_pairs: &built.linked_pairs,
        train: &built.train,
        dev: &built.dev,
    };

    let (state, report) = match args.model {
        ModelChoice::Baseline(kind) => train_baseline(&views, kind, &config)?,
        ModelChoice::Asm => {
            let resolved = resolved.as_ref().expect("resolved above");
            if let Some(path) = args.scorer.input_path() {
                manifest.input(path);
            }
            let init = match &args.init {
                Some(path) => {
                    manifest.input(path);
                    Some(load_summarizer(path)?)
                }
                None => None,
            };
            train_asm(&views, &config, resolved.scorer.as_ref(), init)?
        }
    };

    ensure_parent(&args.out)?;
    save_summarizer(&state, &args.out)?;
    manifest.output(&args.out);
    manifest.output(&sibling(&args.out, ".meta.json")?);
    let report_path = sibling(&args.out, ".report.json")?;
    write_json_atomic(&report, &report_path)?;
    manifest.output(&report_path);

    manifest.write(&sibling(&args.out, ".manifest.json")?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// decode
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Summarizer checkpoint to decode with.
    #[arg(long, value_name = "CKPT", required_unless_present = "b5", conflicts_with = "b5")]
    pub model_ckpt: Option<PathBuf>,

    /// Run the extractive lead-sentence baseline instead of a model.
    #[arg(long)]
    pub b5: bool,

    /// Clusters to decode (JSONL).
    #[arg(long, value_name = "FILE")]
    pub clusters: PathBuf,

    /// Output JSONL: one record per input cluster, input order.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    /// Decoder config file (`key = value`).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub beam_size: Option<usize>,

    /// Length-normalization exponent.
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Rerank a size-K beam by cluster entailment score.
    #[arg(long, value_name = "K", conflicts_with = "b5")]
    pub entdec_k: Option<usize>,

    /// Tie-break seed for the extractive baseline.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Decode clusters in parallel.
    #[arg(long, default_value_t = 1, value_name = "N")]
    pub workers: usize,

    /// Model name stamped on records (default: checkpoint stem, plus
    /// "+entdec" when reranking; "b5" for the baseline).
    #[arg(long)]
    pub model_name: Option<String>,

    #[command(flatten)]
    pub scorer: ScorerArgs,
}

fn default_model_name(ckpt: Option<&Path>, config: &DecodeConfig) -> String {
    match ckpt {
        None => "b5".to_string(),
        Some(path) => {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "model".to_string());
            if config.entdec_k.is_some() {
                format!("{stem}+entdec")
            } else {
                stem
            }
        }
    }
}

pub fn decode(args: DecodeArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("decode");
    let mut config = match &args.config {
        Some(path) => {
            manifest.input(path);
            DecodeConfig::from_kv(&KvConfig::load(path)?)?
        }
        None => DecodeConfig::default(),
    };
    if let Some(v) = args.beam_size {
        config.beam_size = v;
    }
    if let Some(v) = args.alpha {
        config.alpha = v;
    }
    if let Some(v) = args.entdec_k {
        config.entdec_k = Some(v);
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    config.validate()?;
    if args.workers < 1 {
        return Err(CoreError::Argument("--workers must be >= 1".into()).into());
    }
    manifest.seed(config.seed);

    let resolved = args.scorer.resolve()?.ok_or(CliError::NoScorer)?;
    if let Some(path) = args.scorer.input_path() {
        manifest.input(path);
    }

    manifest.input(&args.clusters);
    let clusters = load_clusters(&args.clusters)?;
    let state = match &args.model_ckpt {
        Some(path) => {
            manifest.input(path);
            Some(load_summarizer(path)?)
        }
        None => None,
    };
    let model_name = args
        .model_name
        .clone()
        .unwrap_or_else(|| default_model_name(args.model_ckpt.as_deref(), &config));
    manifest.config(json!({
        "decode": config,
        "model": model_name,
        "scorer": resolved.id,
        "workers": args.workers,
    }));

    let scorer = resolved.scorer.as_ref();
    let decode_one = |cluster: &ClusterExample| -> Result<DecodedRecord> {
        match &state {
            None => {
                // Per-cluster rng keyed by id: tie-breaks are reproducible
                // regardless of worker count or cluster order.
                let mut rng = derive_rng(config.seed, &["b5", &cluster.cluster_id]);
                Ok(decode_b5(scorer, cluster, &mut rng)?
                    .into_record(&cluster.cluster_id, &model_name))
            }
            Some(state) => {
                let outcome = match config.entdec_k {
                    Some(k) => decode_entdec(state, scorer, cluster, k, config.alpha)?,
                    None => decode_standard(state, scorer, cluster, config.beam_size, config.alpha)?,
                };
                Ok(outcome.into_record(&cluster.cluster_id, &model_name))
            }
        }
    };
    let records: Vec<DecodedRecord> = if args.workers == 1 {
        clusters.iter().map(decode_one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.workers)
            .build()
            .map_err(|e| CoreError::Argument(format!("worker pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            clusters.par_iter().map(decode_one).collect::<Result<Vec<_>>>()
        })?
    };

    ensure_parent(&args.out)?;
    jsonl::write_jsonl(&records, &args.out)?;
    manifest.output(&args.out);
    manifest.write(&sibling(&args.out, ".manifest.json")?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Decoded run (repeatable for side-by-side tables).
    #[arg(long = "decoded", value_name = "FILE", required = true)]
    pub decoded: Vec<PathBuf>,

    /// Clusters the runs decoded (JSONL).
    #[arg(long, value_name = "FILE")]
    pub clusters: PathBuf,

    /// ROUGE reference type: dev_gold or test_approx.
    #[arg(long, default_value = "test_approx")]
    pub reference_mode: ReferenceMode,

    /// Human annotations (JSONL; single-run evaluations only).
    #[arg(long, value_name = "FILE")]
    pub human: Option<PathBuf>,

    /// Metrics report output (JSON array, one element per run).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    /// Accepted for interface uniformity; evaluation has no random choices.
    #[arg(long)]
    pub seed: Option<u64>,

    #[command(flatten)]
    pub scorer: ScorerArgs,
}

pub fn evaluate(args: EvaluateArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::new("evaluate");
    if let Some(seed) = args.seed {
        manifest.seed(seed);
    }
    let resolved = args.scorer.resolve()?.ok_or(CliError::NoScorer)?;
    if let Some(path) = args.scorer.input_path() {
        manifest.input(path);
    }

    manifest.input(&args.clusters);
    let clusters = load_clusters(&args.clusters)?;

    let human: Option<Vec<HumanAnnotation>> = match &args.human {
        Some(path) => {
            if args.decoded.len() != 1 {
                return Err(CoreError::Argument(
                    "--human applies to exactly one --decoded run".into(),
                )
                .into());
            }
            manifest.input(path);
            Some(jsonl::read_jsonl(path)?)
        }
        None => None,
    };

    manifest.config(json!({
        "reference_mode": args.reference_mode,
        "scorer": resolved.id,
        "runs": args.decoded.len(),
    }));

    let mut reports: Vec<MetricsReport> = Vec::with_capacity(args.decoded.len());
    for path in &args.decoded {
        manifest.input(path);
        let records: Vec<DecodedRecord> = jsonl::read_jsonl(path)?;
        reports.push(evaluate_run(
            &records,
            &clusters,
            resolved.scorer.as_ref(),
            args.reference_mode,
            human.as_deref(),
        )?);
    }

    print!("{}", render_table(&reports));
    ensure_parent(&args.out)?;
    write_json_atomic(&reports, &args.out)?;
    manifest.output(&args.out);
    manifest.write(&sibling(&args.out, ".manifest.json")?)?;
    Ok(())
}
