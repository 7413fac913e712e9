//! Dataset construction: from raw summary-plus-neighbor clusters to the final
//! train/dev/test splits.
//!
//! Raw material is one summary per cluster, the article it was originally
//! linked to, and up to 8 similar neighbor articles. The linked article is
//! used only for assembly and never appears in any output split. Train
//! clusters are duplicated with independent 4-article subsamples; dev keeps
//! only entailed articles; test is a seeded sample of unlabeled clusters from
//! a held-out date window, article-disjoint from train and dev.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::index::sample as index_sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::KvConfig;
use crate::corpus::{aggregate_votes, validate_dataset, Annotation, Article, ClusterExample, Split};
use crate::error::{CoreError, Result};
use crate::jsonl;
use crate::seeding::derive_rng;

/// Maximum neighbors retained per raw cluster.
pub const MAX_NEIGHBORS: usize = 8;

/// A summary with its linked article and similarity-ranked neighbors, before
/// any split assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCluster {
    pub cluster_id: String,
    pub summary: String,
    pub summary_date: String,
    /// The article the summary was originally written against; excluded from
    /// every output split.
    pub linked_article: Article,
    pub neighbors: Vec<Article>,
}

impl RawCluster {
    pub fn date(&self) -> Result<NaiveDate> {
        NaiveDate::parse_from_str(&self.summary_date, "%Y-%m-%d").map_err(|_| {
            CoreError::Validation(format!(
                "raw cluster_id={} has unparseable summary_date {:?}",
                self.cluster_id, self.summary_date
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.cluster_id.is_empty() {
            return Err(CoreError::Validation("raw cluster with empty cluster_id".into()));
        }
        self.date()?;
        if self.neighbors.len() > MAX_NEIGHBORS {
            return Err(CoreError::Validation(format!(
                "raw cluster_id={} has {} neighbors (max {MAX_NEIGHBORS})",
                self.cluster_id,
                self.neighbors.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &self.neighbors {
            n.validate()?;
            if n.article_id == self.linked_article.article_id {
                return Err(CoreError::Validation(format!(
                    "raw cluster_id={} lists its linked article {} as a neighbor",
                    self.cluster_id, n.article_id
                )));
            }
            if !seen.insert(n.article_id.as_str()) {
                return Err(CoreError::Validation(format!(
                    "raw cluster_id={} repeats neighbor article_id={}",
                    self.cluster_id, n.article_id
                )));
            }
        }
        Ok(())
    }
}

pub fn load_raw_clusters(path: impl AsRef<Path>) -> Result<Vec<RawCluster>> {
    let raw: Vec<RawCluster> = jsonl::read_jsonl(path)?;
    let mut ids = HashSet::new();
    for cluster in &raw {
        cluster.validate()?;
        if !ids.insert(cluster.cluster_id.as_str()) {
            return Err(CoreError::Validation(format!(
                "duplicate raw cluster_id={}",
                cluster.cluster_id
            )));
        }
    }
    Ok(raw)
}

pub fn save_raw_clusters(raw: &[RawCluster], path: impl AsRef<Path>) -> Result<()> {
    jsonl::write_jsonl(raw, path)
}

/// Majority-aggregates vote-level annotations into per-cluster label vectors
/// aligned with neighbor order — the `annotated` input of
/// [`build_train_split`]. Every annotated cluster must have a vote record for
/// each of its neighbors; partially annotated clusters are rejected rather
/// than guessed at.
pub fn aggregate_neighbor_annotations(
    raw: &[RawCluster],
    annotations: &[Annotation],
) -> Result<BTreeMap<String, Vec<bool>>> {
    let positions: BTreeMap<&str, BTreeMap<&str, usize>> = raw
        .iter()
        .map(|c| {
            let by_article = c
                .neighbors
                .iter()
                .enumerate()
                .map(|(i, a)| (a.article_id.as_str(), i))
                .collect();
            (c.cluster_id.as_str(), by_article)
        })
        .collect();

    let mut partial: BTreeMap<&str, Vec<Option<bool>>> = BTreeMap::new();
    for ann in annotations {
        let by_article = positions.get(ann.cluster_id.as_str()).ok_or_else(|| {
            CoreError::Validation(format!(
                "annotation references unknown cluster_id={}",
                ann.cluster_id
            ))
        })?;
        let &pos = by_article.get(ann.article_id.as_str()).ok_or_else(|| {
            CoreError::Validation(format!(
                "annotation for cluster_id={} references article_id={} which is not a neighbor",
                ann.cluster_id, ann.article_id
            ))
        })?;
        let label = aggregate_votes(&ann.votes).map_err(|e| {
            CoreError::Validation(format!(
                "annotation cluster_id={} article_id={}: {e}",
                ann.cluster_id, ann.article_id
            ))
        })?;
        let slots = partial
            .entry(ann.cluster_id.as_str())
            .or_insert_with(|| vec![None; by_article.len()]);
        if slots[pos].is_some() {
            return Err(CoreError::Validation(format!(
                "duplicate annotation for cluster_id={} article_id={}",
                ann.cluster_id, ann.article_id
            )));
        }
        slots[pos] = Some(label.is_entailed());
    }

    let mut out = BTreeMap::new();
    for (cluster_id, slots) in partial {
        let labels: Vec<bool> = slots
            .into_iter()
            .enumerate()
            .map(|(i, slot)| {
                slot.ok_or_else(|| {
                    CoreError::Validation(format!(
                        "cluster_id={cluster_id} is annotated but neighbor {i} has no votes"
                    ))
                })
            })
            .collect::<Result<_>>()?;
        out.insert(cluster_id.to_string(), labels);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuilderConfig {
    pub seed: u64,
    pub duplication_factor: usize,
    pub final_cluster_size: usize,
    /// Clusters dated strictly before this go to the train/dev pool.
    pub train_dev_cutoff: NaiveDate,
    /// Half-open [start, end) window for test-eligible clusters.
    pub test_window_start: NaiveDate,
    pub test_window_end: NaiveDate,
    pub test_cluster_count: usize,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        BuilderConfig {
            seed: 0,
            duplication_factor: 10,
            final_cluster_size: 4,
            train_dev_cutoff: NaiveDate::from_ymd_opt(2019, 8, 1).unwrap(),
            test_window_start: NaiveDate::from_ymd_opt(2019, 8, 1).unwrap(),
            test_window_end: NaiveDate::from_ymd_opt(2020, 8, 1).unwrap(),
            test_cluster_count: 150,
        }
    }
}

impl BuilderConfig {
    pub const KEYS: [&'static str; 7] = [
        "seed",
        "duplication_factor",
        "final_cluster_size",
        "train_dev_cutoff",
        "test_window_start",
        "test_window_end",
        "test_cluster_count",
    ];

    /// Read from a flat key-value file; absent keys keep defaults.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        kv.expect_keys(&Self::KEYS)?;
        let d = BuilderConfig::default();
        let config = BuilderConfig {
            seed: kv.get_u64("seed")?.unwrap_or(d.seed),
            duplication_factor: kv.get_usize("duplication_factor")?.unwrap_or(d.duplication_factor),
            final_cluster_size: kv.get_usize("final_cluster_size")?.unwrap_or(d.final_cluster_size),
            train_dev_cutoff: kv.get_date("train_dev_cutoff")?.unwrap_or(d.train_dev_cutoff),
            test_window_start: kv.get_date("test_window_start")?.unwrap_or(d.test_window_start),
            test_window_end: kv.get_date("test_window_end")?.unwrap_or(d.test_window_end),
            test_cluster_count: kv.get_usize("test_cluster_count")?.unwrap_or(d.test_cluster_count),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.duplication_factor < 1 {
            return Err(CoreError::Validation("duplication_factor must be >= 1".into()));
        }
        if self.final_cluster_size < 2 {
            return Err(CoreError::Validation("final_cluster_size must be >= 2".into()));
        }
        if self.test_window_start >= self.test_window_end {
            return Err(CoreError::Validation(
                "test_window_start must precede test_window_end".into(),
            ));
        }
        if self.train_dev_cutoff > self.test_window_start {
            return Err(CoreError::Validation(
                "train/dev window (before cutoff) must be disjoint from the test window".into(),
            ));
        }
        Ok(())
    }

    fn in_test_window(&self, date: NaiveDate) -> bool {
        date >= self.test_window_start && date < self.test_window_end
    }
}

/// Group candidate articles around each (summary, linked article) pair by a
/// pluggable similarity function: top-k neighbors by score, ties broken by
/// article_id, the linked article itself always excluded.
pub fn assemble_raw_clusters(
    summaries: &[(String, Article, NaiveDate)],
    candidate_articles: &[Article],
    similarity: impl Fn(&Article, &Article) -> f64,
    k: usize,
) -> Result<Vec<RawCluster>> {
    if k > MAX_NEIGHBORS {
        return Err(CoreError::Argument(format!(
            "neighbor count k={k} exceeds maximum {MAX_NEIGHBORS}"
        )));
    }
    let mut clusters = Vec::with_capacity(summaries.len());
    for (summary, linked, date) in summaries {
        let mut scored: Vec<(f64, &Article)> = Vec::new();
        for candidate in candidate_articles {
            if candidate.article_id == linked.article_id {
                continue;
            }
            let score = similarity(linked, candidate);
            if !score.is_finite() || !(0.0..=1.0).contains(&score) {
                return Err(CoreError::Validation(format!(
                    "similarity({}, {}) = {score} is outside [0, 1]",
                    linked.article_id, candidate.article_id
                )));
            }
            scored.push((score, candidate));
        }
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("scores validated finite")
                .then_with(|| a.1.article_id.cmp(&b.1.article_id))
        });
        let neighbors: Vec<Article> = scored.into_iter().take(k).map(|(_, a)| a.clone()).collect();
        let cluster = RawCluster {
            cluster_id: format!("cluster-{}", linked.article_id),
            summary: summary.clone(),
            summary_date: date.format("%Y-%m-%d").to_string(),
            linked_article: linked.clone(),
            neighbors,
        };
        cluster.validate()?;
        clusters.push(cluster);
    }
    Ok(clusters)
}

/// Sorted sample of `size` distinct indices from `0..n` (all of them when
/// `n <= size`), preserving original article order downstream.
fn sample_indices(rng: &mut impl rand::Rng, n: usize, size: usize) -> Vec<usize> {
    if n <= size {
        return (0..n).collect();
    }
    let mut indices = index_sample(rng, n, size).into_vec();
    indices.sort_unstable();
    indices
}

/// Duplicate annotated raw clusters `duplication_factor` times, each duplicate
/// an independent subsample of `final_cluster_size` neighbors (labels kept in
/// alignment); unannotated raw clusters yield one subsampled, label-free
/// cluster each. The linked article never appears.
pub fn build_train_split(
    raw: &[RawCluster],
    annotations: &BTreeMap<String, Vec<bool>>,
    config: &BuilderConfig,
) -> Result<Vec<ClusterExample>> {
    config.validate()?;
    let mut out = Vec::new();
    for cluster in raw {
        cluster.validate()?;
        if cluster.neighbors.is_empty() {
            continue;
        }
        let mut rng = derive_rng(config.seed, &["train", &cluster.cluster_id]);
        match annotations.get(&cluster.cluster_id) {
            Some(labels) => {
                if labels.len() != cluster.neighbors.len() {
                    return Err(CoreError::Validation(format!(
                        "cluster_id={} has {} labels for {} neighbors",
                        cluster.cluster_id,
                        labels.len(),
                        cluster.neighbors.len()
                    )));
                }
                for dup in 0..config.duplication_factor {
                    let idx = sample_indices(&mut rng, cluster.neighbors.len(), config.final_cluster_size);
                    out.push(ClusterExample {
                        cluster_id: format!("{}-d{dup:02}", cluster.cluster_id),
                        split: Split::Train,
                        summary: cluster.summary.clone(),
                        articles: idx.iter().map(|&i| cluster.neighbors[i].clone()).collect(),
                        labels: Some(idx.iter().map(|&i| labels[i]).collect()),
                    });
                }
            }
            None => {
                let idx = sample_indices(&mut rng, cluster.neighbors.len(), config.final_cluster_size);
                out.push(ClusterExample {
                    cluster_id: format!("{}-u", cluster.cluster_id),
                    split: Split::Train,
                    summary: cluster.summary.clone(),
                    articles: idx.iter().map(|&i| cluster.neighbors[i].clone()).collect(),
                    labels: None,
                });
            }
        }
    }
    validate_dataset(&out)?;
    Ok(out)
}

/// Keep only entailed articles; drop clusters left with fewer than 2; pass
/// 2–4 through unchanged; split 5–8 into two balanced clusters in original
/// article order.
pub fn build_dev_split(raw_annotated: &[(RawCluster, Vec<bool>)]) -> Result<Vec<ClusterExample>> {
    let mut out = Vec::new();
    for (cluster, labels) in raw_annotated {
        cluster.validate()?;
        if labels.len() != cluster.neighbors.len() {
            return Err(CoreError::Validation(format!(
                "cluster_id={} has {} labels for {} neighbors",
                cluster.cluster_id,
                labels.len(),
                cluster.neighbors.len()
            )));
        }
        let entailed: Vec<&Article> = cluster
            .neighbors
            .iter()
            .zip(labels)
            .filter_map(|(a, &l)| l.then_some(a))
            .collect();
        let n = entailed.len();
        if n < 2 {
            continue;
        }
        let make = |id: String, articles: &[&Article]| ClusterExample {
            cluster_id: id,
            split: Split::Dev,
            summary: cluster.summary.clone(),
            articles: articles.iter().map(|&a| a.clone()).collect(),
            labels: Some(vec![true; articles.len()]),
        };
        if n <= 4 {
            out.push(make(format!("{}-dev", cluster.cluster_id), &entailed));
        } else {
            let first = n.div_ceil(2);
            out.push(make(format!("{}-dev-a", cluster.cluster_id), &entailed[..first]));
            out.push(make(format!("{}-dev-b", cluster.cluster_id), &entailed[first..]));
        }
    }
    validate_dataset(&out)?;
    Ok(out)
}

/// Seeded sample of `test_cluster_count` unlabeled clusters from the test
/// window, skipping any article already used by train or dev.
pub fn build_test_split(
    raw: &[RawCluster],
    config: &BuilderConfig,
    exclude_article_ids: &HashSet<String>,
) -> Result<Vec<ClusterExample>> {
    config.validate()?;
    let mut eligible: Vec<&RawCluster> = Vec::new();
    for cluster in raw {
        cluster.validate()?;
        if config.in_test_window(cluster.date()?) {
            eligible.push(cluster);
        }
    }
    // Usable = enough neighbors survive the train/dev exclusion to fill a
    // cluster. Counted before sampling so the shortfall error is stable.
    let usable: Vec<(&RawCluster, Vec<usize>)> = eligible
        .iter()
        .map(|c| {
            let clean: Vec<usize> = c
                .neighbors
                .iter()
                .enumerate()
                .filter_map(|(i, a)| (!exclude_article_ids.contains(&a.article_id)).then_some(i))
                .collect();
            (*c, clean)
        })
        .filter(|(_, clean)| clean.len() >= config.final_cluster_size)
        .collect();
    let need = config.test_cluster_count;
    if usable.len() < need {
        return Err(CoreError::Validation(format!(
            "insufficient test clusters in window: need {need}, found {}",
            usable.len()
        )));
    }
    let mut order: Vec<usize> = (0..usable.len()).collect();
    {
        use rand::seq::SliceRandom;
        let mut rng = derive_rng(config.seed, &["test", "shuffle"]);
        order.shuffle(&mut rng);
    }
    let mut out = Vec::with_capacity(need);
    for &pick in order.iter().take(need) {
        let (cluster, clean) = &usable[pick];
        let mut rng = derive_rng(config.seed, &["test", &cluster.cluster_id]);
        let chosen = sample_indices(&mut rng, clean.len(), config.final_cluster_size);
        out.push(ClusterExample {
            cluster_id: format!("{}-test", cluster.cluster_id),
            split: Split::Test,
            summary: cluster.summary.clone(),
            articles: chosen.iter().map(|&i| cluster.neighbors[clean[i]].clone()).collect(),
            labels: None,
        });
    }
    out.sort_by(|a, b| a.cluster_id.cmp(&b.cluster_id));
    validate_dataset(&out)?;
    Ok(out)
}

/// Everything `build_dataset` produces, plus counts for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltDataset {
    pub train: Vec<ClusterExample>,
    pub dev: Vec<ClusterExample>,
    pub test: Vec<ClusterExample>,
    /// (linked article body, summary) pairs from the train pool —
    /// single-document supervision for warm-starting summarizers.
    #[serde(default)]
    pub linked_pairs: Vec<(String, String)>,
    pub stats: BuildStats,
}

impl BuiltDataset {
    pub fn all_clusters(&self) -> Vec<ClusterExample> {
        let mut all = self.train.clone();
        all.extend(self.dev.iter().cloned());
        all.extend(self.test.iter().cloned());
        all
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    pub raw_total: usize,
    pub raw_annotated: usize,
    /// Raw clusters dated before the cutoff (the train/dev pool).
    pub raw_train_dev_pool: usize,
    /// Annotated raw clusters that fed the train split.
    pub annotated_train_raw: usize,
    /// Annotated raw clusters diverted to the dev split.
    pub dev_selected_raw: usize,
    /// Dev-selected clusters dropped for having <2 entailed articles.
    pub dev_dropped: usize,
    pub test_eligible_raw: usize,
}

/// Deterministically divert ~20% of annotated train/dev-pool clusters to dev.
fn selects_for_dev(seed: u64, cluster_id: &str) -> bool {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(b"devsel");
    hasher.update(cluster_id.as_bytes());
    let digest = hasher.finalize();
    digest[0] % 5 == 0
}

/// Full pipeline: partition raw clusters by date, divert a deterministic
/// ~20% of annotated pool clusters to dev, build all three splits, and
/// enforce test/train+dev article disjointness.
pub fn build_dataset(
    raw: &[RawCluster],
    annotations: &BTreeMap<String, Vec<bool>>,
    config: &BuilderConfig,
) -> Result<BuiltDataset> {
    config.validate()?;
    let mut stats = BuildStats {
        raw_total: raw.len(),
        raw_annotated: annotations.len(),
        ..BuildStats::default()
    };

    let mut train_raw: Vec<RawCluster> = Vec::new();
    let mut dev_raw: Vec<(RawCluster, Vec<bool>)> = Vec::new();
    for cluster in raw {
        cluster.validate()?;
        let date = cluster.date()?;
        if date >= config.train_dev_cutoff {
            continue;
        }
        stats.raw_train_dev_pool += 1;
        match annotations.get(&cluster.cluster_id) {
            Some(labels) if selects_for_dev(config.seed, &cluster.cluster_id) => {
                stats.dev_selected_raw += 1;
                dev_raw.push((cluster.clone(), labels.clone()));
            }
            Some(_) => {
                stats.annotated_train_raw += 1;
                train_raw.push(cluster.clone());
            }
            None => train_raw.push(cluster.clone()),
        }
    }

    let linked_pairs: Vec<(String, String)> = train_raw
        .iter()
        .map(|c| (c.linked_article.body.clone(), c.summary.clone()))
        .collect();
    let train = build_train_split(&train_raw, annotations, config)?;
    let dev = build_dev_split(&dev_raw)?;
    stats.dev_dropped = dev_raw
        .iter()
        .filter(|(_, labels)| labels.iter().filter(|&&l| l).count() < 2)
        .count();
    stats.test_eligible_raw = raw
        .iter()
        .filter(|c| c.date().map(|d| config.in_test_window(d)).unwrap_or(false))
        .count();

    let exclude: HashSet<String> = train
        .iter()
        .chain(dev.iter())
        .flat_map(|c| c.articles.iter().map(|a| a.article_id.clone()))
        .collect();
    let test = build_test_split(raw, config, &exclude)?;

    let built = BuiltDataset { train, dev, test, linked_pairs, stats };
    validate_dataset(&built.all_clusters())?;
    Ok(built)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn article(id: &str, date: &str) -> Article {
        Article {
            article_id: id.to_string(),
            title: format!("title {id}"),
            body: format!("body text for {id}"),
            url: format!("https://example.test/{id}"),
            published_date: date.to_string(),
        }
    }

    fn raw(id: &str, date: &str, n_neighbors: usize) -> RawCluster {
        RawCluster {
            cluster_id: id.to_string(),
            summary: format!("summary of {id}"),
            summary_date: date.to_string(),
            linked_article: article(&format!("{id}-linked"), date),
            neighbors: (0..n_neighbors).map(|i| article(&format!("{id}-n{i}"), date)).collect(),
        }
    }

    fn config() -> BuilderConfig {
        BuilderConfig { seed: 7, ..BuilderConfig::default() }
    }

    #[test]
    fn assemble_takes_top_k_excluding_linked() {
        let linked = article("linked", "2019-01-01");
        let mut candidates: Vec<Article> =
            (0..10).map(|i| article(&format!("cand-{i}"), "2019-01-01")).collect();
        candidates.push(linked.clone());
        // Similarity keyed off the candidate id suffix: cand-9 most similar.
        let sim = |_: &Article, c: &Article| {
            let n: f64 = c.article_id.rsplit('-').next().unwrap().parse().unwrap_or(0.0);
            n / 20.0
        };
        let date = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        let clusters = assemble_raw_clusters(
            &[("s".into(), linked.clone(), date)],
            &candidates,
            sim,
            8,
        )
        .unwrap();
        assert_eq!(clusters.len(), 1);
        let c = &clusters[0];
        assert_eq!(c.neighbors.len(), 8);
        assert!(c.neighbors.iter().all(|a| a.article_id != linked.article_id));
        assert_eq!(c.neighbors[0].article_id, "cand-9");
        // cand-0 and cand-1 (scores 0.0, 0.05) fall off the end.
        assert!(c.neighbors.iter().all(|a| a.article_id != "cand-0"));
    }

    #[test]
    fn assemble_keeps_all_when_fewer_candidates() {
        let linked = article("linked", "2019-01-01");
        let candidates: Vec<Article> =
            (0..3).map(|i| article(&format!("cand-{i}"), "2019-01-01")).collect();
        let date = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        let clusters =
            assemble_raw_clusters(&[("s".into(), linked, date)], &candidates, |_, _| 0.5, 8)
                .unwrap();
        assert_eq!(clusters[0].neighbors.len(), 3);
    }

    #[test]
    fn assemble_breaks_score_ties_by_article_id() {
        let linked = article("linked", "2019-01-01");
        let candidates = vec![article("zeta", "2019-01-01"), article("alpha", "2019-01-01")];
        let date = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        let clusters =
            assemble_raw_clusters(&[("s".into(), linked, date)], &candidates, |_, _| 0.9, 1)
                .unwrap();
        assert_eq!(clusters[0].neighbors[0].article_id, "alpha");
    }

    #[test]
    fn assemble_rejects_k_over_8_and_bad_scores() {
        let linked = article("linked", "2019-01-01");
        let date = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        let summaries = [("s".to_string(), linked, date)];
        let candidates = vec![article("c", "2019-01-01")];
        assert!(matches!(
            assemble_raw_clusters(&summaries, &candidates, |_, _| 0.5, 9),
            Err(CoreError::Argument(_))
        ));
        assert!(assemble_raw_clusters(&summaries, &candidates, |_, _| f64::NAN, 8).is_err());
        assert!(assemble_raw_clusters(&summaries, &candidates, |_, _| 1.5, 8).is_err());
    }

    #[test]
    fn vote_aggregation_builds_aligned_label_vectors() {
        let clusters = [raw("c1", "2019-01-01", 3), raw("c2", "2019-01-01", 2)];
        let ann = |cid: &str, aid: &str, votes: &[bool]| Annotation {
            cluster_id: cid.to_string(),
            article_id: aid.to_string(),
            votes: votes.to_vec(),
        };
        // c1 fully covered (in scrambled order), c2 untouched.
        let annotations = vec![
            ann("c1", "c1-n2", &[true, true, false]),
            ann("c1", "c1-n0", &[false, true, true]),
            ann("c1", "c1-n1", &[false, false, true]),
        ];
        let out = aggregate_neighbor_annotations(&clusters, &annotations).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out["c1"], vec![true, false, true]);

        let unknown_cluster = vec![ann("c9", "c9-n0", &[true])];
        assert!(matches!(
            aggregate_neighbor_annotations(&clusters, &unknown_cluster),
            Err(CoreError::Validation(_))
        ));
        let not_a_neighbor = vec![ann("c1", "c2-n0", &[true])];
        assert!(matches!(
            aggregate_neighbor_annotations(&clusters, &not_a_neighbor),
            Err(CoreError::Validation(_))
        ));
        let mut duplicated = annotations.clone();
        duplicated.push(ann("c1", "c1-n0", &[true]));
        assert!(matches!(
            aggregate_neighbor_annotations(&clusters, &duplicated),
            Err(CoreError::Validation(_))
        ));
        let partial = &annotations[..2]; // c1-n1 missing
        assert!(matches!(
            aggregate_neighbor_annotations(&clusters, partial),
            Err(CoreError::Validation(_))
        ));
        let even_votes = vec![ann("c2", "c2-n0", &[true, false]), ann("c2", "c2-n1", &[true])];
        assert!(matches!(
            aggregate_neighbor_annotations(&clusters, &even_votes),
            Err(CoreError::Validation(_))
        ));
    }

    #[test]
    fn train_split_duplicates_annotated_and_samples_four() {
        let r = raw("c1", "2019-01-01", 8);
        let mut annotations = BTreeMap::new();
        annotations.insert("c1".to_string(), vec![true, false, true, true, false, true, true, false]);
        let out = build_train_split(&[r.clone()], &annotations, &config()).unwrap();
        assert_eq!(out.len(), 10);
        for c in &out {
            assert_eq!(c.articles.len(), 4);
            assert_eq!(c.labels.as_ref().unwrap().len(), 4);
            assert!(c.articles.iter().all(|a| a.article_id != r.linked_article.article_id));
            // Labels stay aligned: neighbor k was labeled entailed iff k ∈ {0,2,3,5,6}.
            for (a, &l) in c.articles.iter().zip(c.labels.as_ref().unwrap()) {
                let k: usize = a.article_id.rsplit('n').next().unwrap().parse().unwrap();
                assert_eq!(l, [true, false, true, true, false, true, true, false][k]);
            }
            // Original article order preserved (indices ascending).
            let ks: Vec<usize> = c
                .articles
                .iter()
                .map(|a| a.article_id.rsplit('n').next().unwrap().parse().unwrap())
                .collect();
            assert!(ks.windows(2).all(|w| w[0] < w[1]));
        }
        // Duplicates differ from each other somewhere (8 choose 4 = 70 options).
        let distinct: HashSet<Vec<String>> = out
            .iter()
            .map(|c| c.articles.iter().map(|a| a.article_id.clone()).collect())
            .collect();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn train_split_unannotated_yields_one_cluster_without_labels() {
        let out = build_train_split(&[raw("c1", "2019-01-01", 8)], &BTreeMap::new(), &config()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].cluster_id, "c1-u");
        assert!(out[0].labels.is_none());
        assert_eq!(out[0].articles.len(), 4);
    }

    #[test]
    fn train_split_sampling_is_noop_at_exact_size() {
        let r = raw("c1", "2019-01-01", 4);
        let mut annotations = BTreeMap::new();
        annotations.insert("c1".to_string(), vec![true, true, false, true]);
        let out = build_train_split(&[r], &annotations, &config()).unwrap();
        assert_eq!(out.len(), 10);
        for c in &out {
            let ids: Vec<&str> = c.articles.iter().map(|a| a.article_id.as_str()).collect();
            assert_eq!(ids, ["c1-n0", "c1-n1", "c1-n2", "c1-n3"]);
            assert_eq!(c.labels.as_ref().unwrap(), &vec![true, true, false, true]);
        }
    }

    #[test]
    fn train_split_mismatched_annotation_length_rejected() {
        let mut annotations = BTreeMap::new();
        annotations.insert("c1".to_string(), vec![true, false]);
        assert!(matches!(
            build_train_split(&[raw("c1", "2019-01-01", 8)], &annotations, &config()),
            Err(CoreError::Validation(_))
        ));
    }

    #[test]
    fn train_split_is_deterministic() {
        let r: Vec<RawCluster> = (0..5).map(|i| raw(&format!("c{i}"), "2019-01-01", 8)).collect();
        let mut annotations = BTreeMap::new();
        annotations.insert("c2".to_string(), vec![true; 8]);
        let a = build_train_split(&r, &annotations, &config()).unwrap();
        let b = build_train_split(&r, &annotations, &config()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn dev_split_rules() {
        // 6 entailed → 3+3; 1 entailed → dropped; 4 entailed → single cluster.
        let six = (raw("c6", "2019-01-01", 8), vec![true, true, false, true, true, false, true, true]);
        let one = (raw("c1", "2019-01-01", 8), {
            let mut l = vec![false; 8];
            l[3] = true;
            l
        });
        let four = (raw("c4", "2019-01-01", 6), vec![true, false, true, true, false, true]);
        let out = build_dev_split(&[six, one, four]).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].cluster_id, "c6-dev-a");
        assert_eq!(out[0].articles.len(), 3);
        assert_eq!(out[1].cluster_id, "c6-dev-b");
        assert_eq!(out[1].articles.len(), 3);
        // Original order: entailed neighbors of c6 are n0,n1,n3,n4,n6,n7.
        let ids: Vec<&str> = out[0]
            .articles
            .iter()
            .chain(out[1].articles.iter())
            .map(|a| a.article_id.as_str())
            .collect();
        assert_eq!(ids, ["c6-n0", "c6-n1", "c6-n3", "c6-n4", "c6-n6", "c6-n7"]);
        assert_eq!(out[2].cluster_id, "c4-dev");
        assert_eq!(out[2].articles.len(), 4);
        for c in &out {
            assert!(c.labels.as_ref().unwrap().iter().all(|&l| l));
        }
    }

    #[test]
    fn dev_split_five_entailed_splits_three_two() {
        let five = (raw("c5", "2019-01-01", 8), vec![true, true, true, true, true, false, false, false]);
        let out = build_dev_split(&[five]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].articles.len(), 3);
        assert_eq!(out[1].articles.len(), 2);
    }

    #[test]
    fn test_split_samples_count_within_window() {
        let mut all: Vec<RawCluster> = (0..200).map(|i| raw(&format!("t{i:03}"), "2019-10-15", 8)).collect();
        all.push(raw("outside", "2021-01-01", 8));
        let cfg = config();
        let out = build_test_split(&all, &cfg, &HashSet::new()).unwrap();
        assert_eq!(out.len(), 150);
        for c in &out {
            assert!(c.labels.is_none());
            assert_eq!(c.articles.len(), 4);
            assert_ne!(c.cluster_id, "outside-test");
        }
    }

    #[test]
    fn test_split_shortfall_error_names_counts() {
        let all: Vec<RawCluster> = (0..100).map(|i| raw(&format!("t{i:03}"), "2019-10-15", 8)).collect();
        let err = build_test_split(&all, &config(), &HashSet::new()).unwrap_err();
        assert!(err.to_string().contains("need 150, found 100"), "{err}");
    }

    #[test]
    fn test_split_skips_excluded_articles() {
        let mut clusters: Vec<RawCluster> =
            (0..150).map(|i| raw(&format!("t{i:03}"), "2019-10-15", 8)).collect();
        // Poison half of t000's neighbors: the 4 clean ones must all be chosen.
        let exclude: HashSet<String> =
            (0..4).map(|i| format!("t000-n{i}")).collect();
        clusters.truncate(150);
        let out = build_test_split(&clusters, &config(), &exclude).unwrap();
        assert_eq!(out.len(), 150);
        let t0 = out.iter().find(|c| c.cluster_id == "t000-test").unwrap();
        let ids: Vec<&str> = t0.articles.iter().map(|a| a.article_id.as_str()).collect();
        assert_eq!(ids, ["t000-n4", "t000-n5", "t000-n6", "t000-n7"]);
    }

    #[test]
    fn test_split_window_is_half_open() {
        // Clusters on the end date are not eligible: 150 in-window needed but
        // 100 sit exactly on test_window_end.
        let mut clusters: Vec<RawCluster> =
            (0..100).map(|i| raw(&format!("in{i:03}"), "2019-08-01", 8)).collect();
        clusters.extend((0..100).map(|i| raw(&format!("edge{i:03}"), "2020-08-01", 8)));
        let err = build_test_split(&clusters, &config(), &HashSet::new()).unwrap_err();
        assert!(err.to_string().contains("need 150, found 100"), "{err}");
    }

    #[test]
    fn build_dataset_end_to_end_disjoint_and_deterministic() {
        let mut raw_clusters: Vec<RawCluster> = Vec::new();
        let mut annotations = BTreeMap::new();
        for i in 0..40 {
            let id = format!("p{i:03}");
            raw_clusters.push(raw(&id, "2019-03-05", 8));
            if i % 2 == 0 {
                annotations.insert(id, vec![true, true, false, true, true, true, false, true]);
            }
        }
        for i in 0..20 {
            raw_clusters.push(raw(&format!("w{i:03}"), "2019-12-01", 8));
        }
        let cfg = BuilderConfig { seed: 11, test_cluster_count: 15, ..BuilderConfig::default() };
        let built = build_dataset(&raw_clusters, &annotations, &cfg).unwrap();

        assert_eq!(built.test.len(), 15);
        assert_eq!(
            built.stats.annotated_train_raw + built.stats.dev_selected_raw,
            20
        );
        let annotated_descended = built
            .train
            .iter()
            .filter(|c| c.labels.is_some())
            .count();
        assert_eq!(annotated_descended, built.stats.annotated_train_raw * cfg.duplication_factor);

        let train_dev_ids: HashSet<&str> = built
            .train
            .iter()
            .chain(built.dev.iter())
            .flat_map(|c| c.articles.iter().map(|a| a.article_id.as_str()))
            .collect();
        let test_ids: HashSet<&str> = built
            .test
            .iter()
            .flat_map(|c| c.articles.iter().map(|a| a.article_id.as_str()))
            .collect();
        assert!(train_dev_ids.is_disjoint(&test_ids));

        let again = build_dataset(&raw_clusters, &annotations, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&built.all_clusters()).unwrap(),
            serde_json::to_string(&again.all_clusters()).unwrap()
        );

        for c in &built.dev {
            assert!(c.labels.as_ref().is_some_and(|l| l.iter().all(|&x| x)));
            assert!((2..=4).contains(&c.articles.len()));
        }
    }

    proptest::proptest! {
        /// No output cluster in any split ever contains the linked article,
        /// and annotated-descended train clusters number factor × annotated.
        #[test]
        fn linked_article_never_leaks_and_duplication_holds(
            n_train in 1usize..8,
            n_test in 15usize..20,
            neighbor_counts in proptest::collection::vec(4usize..=8, 30),
            seed in 0u64..500,
        ) {
            let mut raw_clusters = Vec::new();
            let mut annotations = BTreeMap::new();
            for i in 0..n_train {
                let id = format!("p{i}");
                let n = neighbor_counts[i];
                raw_clusters.push(raw(&id, "2019-02-02", n));
                if i % 2 == 0 {
                    annotations.insert(id, vec![true; n]);
                }
            }
            for i in 0..n_test {
                raw_clusters.push(raw(&format!("w{i}"), "2020-01-01", neighbor_counts[n_train + i]));
            }
            let cfg = BuilderConfig { seed, test_cluster_count: 10, ..BuilderConfig::default() };
            let built = build_dataset(&raw_clusters, &annotations, &cfg).unwrap();
            let linked_ids: HashSet<String> = raw_clusters
                .iter()
                .map(|c| c.linked_article.article_id.clone())
                .collect();
            for c in built.all_clusters() {
                for a in &c.articles {
                    proptest::prop_assert!(!linked_ids.contains(&a.article_id));
                }
            }
            let annotated_descended =
                built.train.iter().filter(|c| c.labels.is_some()).count();
            proptest::prop_assert_eq!(
                annotated_descended,
                built.stats.annotated_train_raw * cfg.duplication_factor
            );
        }
    }
}
