//! Core library for the AgreeSum laboratory: dataset construction for
//! agreement-oriented multi-document summarization, an entailment classifier
//! and scoring service, seq2seq summarizers (supervised baselines and an
//! entailment-rewarded model), entailment-guided decoding, and evaluation
//! metrics.

pub mod config;
pub mod corpus;
pub mod dataset;
pub mod decoding;
pub mod entailment;
pub mod error;
pub mod evaluation;
pub mod jsonl;
pub mod nn;
pub mod remote;
pub mod seeding;
pub mod summarizer;
pub mod synth;
pub mod text;
pub mod tokenizer;
pub mod training;

pub use config::KvConfig;
pub use corpus::{
    aggregate_votes, load_annotations, load_clusters, save_annotations, save_clusters,
    validate_dataset, Annotation, Article, ClusterExample, DatasetManifest, EntailmentRecord,
    Label, Split, SplitCounts,
};
pub use dataset::{
    assemble_raw_clusters, build_dataset, build_dev_split, build_test_split, build_train_split,
    BuilderConfig, BuiltDataset, RawCluster,
};
pub use error::{CoreError, Result};
