//! Entailment scorer resolution shared by every subcommand that judges
//! summaries: an explicit oracle flag, a classifier checkpoint, a remote
//! endpoint flag, or the `AGREESUM_SCORER_ENDPOINT` environment variable —
//! first match wins. When `AGREESUM_CACHE_DIR` is set, the resolved scorer
//! is wrapped in a per-pair file cache keyed by scorer identity.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use agreesum_core::corpus::Label;
use agreesum_core::entailment::{load_classifier, ContainmentOracle, EntailmentScorer, ScorePair};
use agreesum_core::error::{CoreError, Result};
use agreesum_core::remote::{RemoteScorer, RemoteScorerConfig};
use clap::Args;

use crate::manifest::{sha256_file, sha256_str};

pub const ENDPOINT_ENV: &str = "AGREESUM_SCORER_ENDPOINT";
pub const CACHE_ENV: &str = "AGREESUM_CACHE_DIR";

/// Scorer selection flags, flattened into each scoring subcommand.
#[derive(Debug, Clone, Args)]
pub struct ScorerArgs {
    /// Judge entailment with the token-containment oracle (exact on the
    /// synthetic task).
    #[arg(long)]
    pub scorer_oracle: bool,

    /// Judge entailment with a trained classifier checkpoint.
    #[arg(long, value_name = "CKPT")]
    pub entailment_ckpt: Option<PathBuf>,

    /// Judge entailment through a remote scoring service
    /// (default: $AGREESUM_SCORER_ENDPOINT).
    #[arg(long, value_name = "URL")]
    pub scorer_endpoint: Option<String>,
}

/// A ready-to-use scorer plus a stable identity string (echoed into
/// manifests and used to namespace the score cache).
pub struct ResolvedScorer {
    pub scorer: Arc<dyn EntailmentScorer>,
    pub id: String,
}

impl ScorerArgs {
    /// The scorer's file input, when it has one (for manifest bookkeeping).
    pub fn input_path(&self) -> Option<&Path> {
        if self.scorer_oracle {
            None
        } else {
            self.entailment_ckpt.as_deref()
        }
    }

    /// Resolves the configured scorer, or `None` when nothing selects one.
    pub fn resolve(&self) -> Result<Option<ResolvedScorer>> {
        let endpoint_env = std::env::var(ENDPOINT_ENV).ok().filter(|v| !v.is_empty());
        let (scorer, id): (Arc<dyn EntailmentScorer>, String) = if self.scorer_oracle {
            (Arc::new(ContainmentOracle), "oracle".to_string())
        } else if let Some(ckpt) = &self.entailment_ckpt {
            let state = load_classifier(ckpt)?;
            let id = format!("clf-{}", &sha256_file(ckpt)?[..8]);
            (Arc::new(state), id)
        } else if let Some(url) = self.scorer_endpoint.clone().or(endpoint_env) {
            let remote = RemoteScorer::new(RemoteScorerConfig::new(url.clone()))?;
            let id = format!("remote-{}", &sha256_str(&url)[..8]);
            (Arc::new(remote), id)
        } else {
            return Ok(None);
        };
        match std::env::var(CACHE_ENV).ok().filter(|v| !v.is_empty()) {
            Some(dir) => {
                let cache = CachingScorer::new(scorer, Path::new(&dir).join(&id))?;
                Ok(Some(ResolvedScorer { scorer: Arc::new(cache), id }))
            }
            None => Ok(Some(ResolvedScorer { scorer, id })),
        }
    }
}

/// File-per-pair score cache: `<dir>/<sha256(premise \0 hypothesis)>`
/// holding `"0"` or `"1"`. Unreadable or torn entries are treated as misses
/// and rescored, so concurrent writers at worst duplicate work.
pub struct CachingScorer {
    inner: Arc<dyn EntailmentScorer>,
    dir: PathBuf,
}

impl CachingScorer {
    pub fn new(inner: Arc<dyn EntailmentScorer>, dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| CoreError::io(&dir, e))?;
        Ok(CachingScorer { inner, dir })
    }

    fn entry_path(&self, pair: &ScorePair) -> PathBuf {
        let key = sha256_str(&format!("{}\0{}", pair.premise, pair.hypothesis));
        self.dir.join(key)
    }

    fn read_entry(&self, path: &Path) -> Option<Label> {
        match std::fs::read_to_string(path).ok()?.trim() {
            "0" => Some(Label::NotEntailed),
            "1" => Some(Label::Entailed),
            _ => None,
        }
    }
}

impl EntailmentScorer for CachingScorer {
    fn score_pairs(&self, pairs: &[ScorePair]) -> Result<Vec<Label>> {
        let paths: Vec<PathBuf> = pairs.iter().map(|p| self.entry_path(p)).collect();
        let mut labels: Vec<Option<Label>> =
            paths.iter().map(|p| self.read_entry(p)).collect();
        let misses: Vec<usize> =
            (0..pairs.len()).filter(|&i| labels[i].is_none()).collect();
        if !misses.is_empty() {
            let batch: Vec<ScorePair> = misses.iter().map(|&i| pairs[i].clone()).collect();
            let fresh = self.inner.score_pairs(&batch)?;
            for (&i, label) in misses.iter().zip(fresh) {
                let byte: &str = if label.is_entailed() { "1" } else { "0" };
                std::fs::write(&paths[i], byte).map_err(|e| CoreError::io(&paths[i], e))?;
                labels[i] = Some(label);
            }
        }
        Ok(labels.into_iter().map(|l| l.expect("all filled")).collect())
    }
}
