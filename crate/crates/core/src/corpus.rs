//! Domain types, JSONL serialization, and annotation-vote aggregation.
//!
//! Everything downstream (builder, trainers, decoder, metrics) speaks these
//! types. File formats are line-delimited JSON with a fixed schema; unknown
//! fields are rejected so fixture drift surfaces immediately.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::jsonl;

/// Binary entailment judgment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Entailed,
    NotEntailed,
}

impl Label {
    pub fn from_bool(entailed: bool) -> Self {
        if entailed {
            Label::Entailed
        } else {
            Label::NotEntailed
        }
    }

    pub fn is_entailed(self) -> bool {
        self == Label::Entailed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Article {
    pub article_id: String,
    pub title: String,
    pub body: String,
    pub url: String,
    /// `YYYY-MM-DD`; kept as a string in the schema, parsed for comparisons.
    pub published_date: String,
}

impl Article {
    pub fn published(&self) -> Result<NaiveDate> {
        NaiveDate::parse_from_str(&self.published_date, "%Y-%m-%d").map_err(|_| {
            CoreError::Validation(format!(
                "article_id={} has unparseable published_date {:?} (want YYYY-MM-DD)",
                self.article_id, self.published_date
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.article_id.is_empty() {
            return Err(CoreError::Validation("article with empty article_id".into()));
        }
        if self.body.trim().is_empty() {
            return Err(CoreError::Validation(format!(
                "article_id={} has an empty body",
                self.article_id
            )));
        }
        self.published()?;
        Ok(())
    }
}

/// A cluster of articles with one summary. Final-form clusters (what the
/// builder emits and every consumer reads) carry at most 4 articles; labels
/// mark per-article entailment of the summary where annotated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterExample {
    pub cluster_id: String,
    pub split: Split,
    pub summary: String,
    pub articles: Vec<Article>,
    pub labels: Option<Vec<bool>>,
}

/// Maximum cluster size in final form.
pub const FINAL_CLUSTER_MAX: usize = 4;

impl ClusterExample {
    /// Per-record invariants (final form).
    pub fn validate(&self) -> Result<()> {
        if self.cluster_id.is_empty() {
            return Err(CoreError::Validation("cluster with empty cluster_id".into()));
        }
        if self.articles.is_empty() {
            return Err(CoreError::Validation(format!(
                "cluster_id={} has no articles",
                self.cluster_id
            )));
        }
        if self.articles.len() > FINAL_CLUSTER_MAX {
            return Err(CoreError::Validation(format!(
                "cluster_id={} exceeds {FINAL_CLUSTER_MAX} articles",
                self.cluster_id
            )));
        }
        if self.summary.trim().is_empty() {
            return Err(CoreError::Validation(format!(
                "cluster_id={} has an empty summary",
                self.cluster_id
            )));
        }
        for article in &self.articles {
            article.validate().map_err(|e| {
                CoreError::Validation(format!("cluster_id={}: {e}", self.cluster_id))
            })?;
        }
        let mut seen = std::collections::HashSet::new();
        for article in &self.articles {
            if !seen.insert(article.article_id.as_str()) {
                return Err(CoreError::Validation(format!(
                    "cluster_id={} repeats article_id={}",
                    self.cluster_id, article.article_id
                )));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.articles.len() {
                return Err(CoreError::Validation(format!(
                    "cluster_id={} has {} labels for {} articles",
                    self.cluster_id,
                    labels.len(),
                    self.articles.len()
                )));
            }
        }
        match self.split {
            Split::Dev => {
                let labels = self.labels.as_ref().ok_or_else(|| {
                    CoreError::Validation(format!(
                        "dev cluster_id={} is missing labels",
                        self.cluster_id
                    ))
                })?;
                if !labels.iter().all(|&l| l) {
                    return Err(CoreError::Validation(format!(
                        "dev cluster_id={} has a not-entailed article",
                        self.cluster_id
                    )));
                }
                if self.articles.len() < 2 {
                    return Err(CoreError::Validation(format!(
                        "dev cluster_id={} has fewer than 2 articles",
                        self.cluster_id
                    )));
                }
            }
            Split::Test => {
                if self.labels.is_some() {
                    return Err(CoreError::Validation(format!(
                        "test cluster_id={} must not carry labels",
                        self.cluster_id
                    )));
                }
            }
            Split::Train => {}
        }
        Ok(())
    }

    /// Entailed-article index set (annotated clusters only).
    pub fn entailed_indices(&self) -> Option<Vec<usize>> {
        self.labels.as_ref().map(|labels| {
            labels
                .iter()
                .enumerate()
                .filter_map(|(i, &l)| l.then_some(i))
                .collect()
        })
    }
}

/// Cross-record checks: a given article_id must always denote the same
/// article content. The same id legitimately recurs across clusters (train
/// duplication re-samples the same neighbor pool) but may never disagree.
pub fn validate_dataset(clusters: &[ClusterExample]) -> Result<()> {
    let mut by_id: HashMap<&str, &Article> = HashMap::new();
    let mut cluster_ids = std::collections::HashSet::new();
    for cluster in clusters {
        cluster.validate()?;
        if !cluster_ids.insert(cluster.cluster_id.as_str()) {
            return Err(CoreError::Validation(format!(
                "duplicate cluster_id={}",
                cluster.cluster_id
            )));
        }
        for article in &cluster.articles {
            match by_id.get(article.article_id.as_str()) {
                None => {
                    by_id.insert(&article.article_id, article);
                }
                Some(prev) if *prev != article => {
                    return Err(CoreError::Validation(format!(
                        "article_id={} appears with conflicting content (cluster_id={})",
                        article.article_id, cluster.cluster_id
                    )));
                }
                Some(_) => {}
            }
        }
    }
    Ok(())
}

pub fn load_clusters(path: impl AsRef<Path>) -> Result<Vec<ClusterExample>> {
    let clusters: Vec<ClusterExample> = jsonl::read_jsonl(path)?;
    validate_dataset(&clusters)?;
    Ok(clusters)
}

pub fn save_clusters(clusters: &[ClusterExample], path: impl AsRef<Path>) -> Result<()> {
    jsonl::write_jsonl(clusters, path)
}

/// One rater-vote record: did raters judge `article_id` to entail the
/// cluster's summary?
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub cluster_id: String,
    pub article_id: String,
    pub votes: Vec<bool>,
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    let annotations: Vec<Annotation> = jsonl::read_jsonl(path)?;
    for ann in &annotations {
        aggregate_votes(&ann.votes).map_err(|e| {
            CoreError::Validation(format!(
                "annotation cluster_id={} article_id={}: {e}",
                ann.cluster_id, ann.article_id
            ))
        })?;
    }
    Ok(annotations)
}

pub fn save_annotations(annotations: &[Annotation], path: impl AsRef<Path>) -> Result<()> {
    jsonl::write_jsonl(annotations, path)
}

/// Strict majority of an odd, non-empty vote list.
pub fn aggregate_votes(votes: &[bool]) -> Result<Label> {
    if votes.is_empty() || votes.len().is_multiple_of(2) {
        return Err(CoreError::Argument(format!(
            "vote list must be odd and non-empty, got {} votes",
            votes.len()
        )));
    }
    let yes = votes.iter().filter(|&&v| v).count();
    Ok(Label::from_bool(yes > votes.len() - yes))
}

/// A single (article, summary) pair with rater votes and the aggregated label,
/// as consumed by classifier training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntailmentRecord {
    pub article_id: String,
    pub cluster_id: String,
    /// The summary text under judgment.
    pub hypothesis: String,
    pub votes: Vec<bool>,
    pub label: Label,
}

impl EntailmentRecord {
    pub fn new(cluster_id: String, article_id: String, hypothesis: String, votes: Vec<bool>) -> Result<Self> {
        let label = aggregate_votes(&votes)?;
        let record = EntailmentRecord {
            article_id,
            cluster_id,
            hypothesis,
            votes,
            label,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.votes.len(), 3 | 5) {
            return Err(CoreError::Validation(format!(
                "entailment record ({}, {}) must carry 3 or 5 votes, got {}",
                self.cluster_id,
                self.article_id,
                self.votes.len()
            )));
        }
        if aggregate_votes(&self.votes)? != self.label {
            return Err(CoreError::Validation(format!(
                "entailment record ({}, {}) label disagrees with vote majority",
                self.cluster_id, self.article_id
            )));
        }
        Ok(())
    }
}

/// Per-split dataset counts in both cluster-summary and article-summary units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub clusters: usize,
    pub article_pairs: usize,
    pub annotated_clusters: usize,
    pub annotated_article_pairs: usize,
    /// Clusters with ≥1 entailed label / article pairs labeled entailed.
    pub entailed_clusters: usize,
    pub entailed_article_pairs: usize,
    pub unannotated_clusters: usize,
    pub unannotated_article_pairs: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub train: SplitCounts,
    pub dev: SplitCounts,
    pub test: SplitCounts,
}

impl DatasetManifest {
    pub fn from_clusters(clusters: &[ClusterExample]) -> Self {
        let mut manifest = DatasetManifest::default();
        for cluster in clusters {
            let counts = match cluster.split {
                Split::Train => &mut manifest.train,
                Split::Dev => &mut manifest.dev,
                Split::Test => &mut manifest.test,
            };
            let n = cluster.articles.len();
            counts.clusters += 1;
            counts.article_pairs += n;
            match &cluster.labels {
                Some(labels) => {
                    counts.annotated_clusters += 1;
                    counts.annotated_article_pairs += n;
                    let entailed = labels.iter().filter(|&&l| l).count();
                    if entailed > 0 {
                        counts.entailed_clusters += 1;
                    }
                    counts.entailed_article_pairs += entailed;
                }
                None => {
                    counts.unannotated_clusters += 1;
                    counts.unannotated_article_pairs += n;
                }
            }
        }
        manifest
    }

    /// `annotated + unannotated == all`, per split and per unit.
    pub fn validate(&self) -> Result<()> {
        for (name, c) in [("train", &self.train), ("dev", &self.dev), ("test", &self.test)] {
            if c.annotated_clusters + c.unannotated_clusters != c.clusters
                || c.annotated_article_pairs + c.unannotated_article_pairs != c.article_pairs
            {
                return Err(CoreError::Validation(format!(
                    "manifest split {name}: annotated + unannotated != all"
                )));
            }
        }
        Ok(())
    }

    /// Aligned text table: rows all / annotated / ≥1-entailed / unannotated,
    /// columns (clusters, article pairs) per split.
    pub fn render_table(&self) -> String {
        let splits: [(&str, &SplitCounts); 3] =
            [("train", &self.train), ("dev", &self.dev), ("test", &self.test)];
        let mut rows: Vec<(String, Vec<String>)> = Vec::new();
        let fmt =
            |c: usize, a: usize| -> String { format!("{c} / {a}") };
        rows.push((
            "all".into(),
            splits.iter().map(|(_, c)| fmt(c.clusters, c.article_pairs)).collect(),
        ));
        rows.push((
            "annotated".into(),
            splits
                .iter()
                .map(|(_, c)| fmt(c.annotated_clusters, c.annotated_article_pairs))
                .collect(),
        ));
        rows.push((
            "entailed (>=1)".into(),
            splits
                .iter()
                .map(|(_, c)| fmt(c.entailed_clusters, c.entailed_article_pairs))
                .collect(),
        ));
        rows.push((
            "unannotated".into(),
            splits
                .iter()
                .map(|(_, c)| fmt(c.unannotated_clusters, c.unannotated_article_pairs))
                .collect(),
        ));

        let headers = ["", "train", "dev", "test"];
        let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
        for (name, cells) in &rows {
            widths[0] = widths[0].max(name.len());
            for (i, cell) in cells.iter().enumerate() {
                widths[i + 1] = widths[i + 1].max(cell.len());
            }
        }
        let mut out = String::new();
        out.push_str(&format!(
            "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}\n",
            headers[0], headers[1], headers[2], headers[3],
            w0 = widths[0], w1 = widths[1], w2 = widths[2], w3 = widths[3]
        ));
        out.push_str("(clusters / article-summary pairs)\n");
        for (name, cells) in &rows {
            out.push_str(&format!(
                "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}\n",
                name, cells[0], cells[1], cells[2],
                w0 = widths[0], w1 = widths[1], w2 = widths[2], w3 = widths[3]
            ));
        }
        out
    }
}

/// Lookup helper: (cluster_id, article_id) -> article, for joining annotation
/// records back to premise text.
pub fn article_index(clusters: &[ClusterExample]) -> BTreeMap<(String, String), &Article> {
    let mut index = BTreeMap::new();
    for cluster in clusters {
        for article in &cluster.articles {
            index.insert(
                (cluster.cluster_id.clone(), article.article_id.clone()),
                article,
            );
        }
    }
    index
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn article(id: &str, body: &str) -> Article {
        Article {
            article_id: id.to_string(),
            title: format!("title {id}"),
            body: body.to_string(),
            url: format!("https://example.test/{id}"),
            published_date: "2019-01-15".to_string(),
        }
    }

    fn cluster(id: &str, split: Split, n: usize, labels: Option<Vec<bool>>) -> ClusterExample {
        ClusterExample {
            cluster_id: id.to_string(),
            split,
            summary: format!("summary of {id}"),
            articles: (0..n).map(|i| article(&format!("{id}-a{i}"), "some body text")).collect(),
            labels,
        }
    }

    #[test]
    fn empty_file_loads_to_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_clusters(&path).unwrap().is_empty());
    }

    #[test]
    fn save_load_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clusters.jsonl");
        let clusters = vec![
            cluster("c1", Split::Train, 4, Some(vec![true, false, true, true])),
            cluster("c2", Split::Train, 3, None),
            cluster("c3", Split::Dev, 2, Some(vec![true, true])),
            cluster("c4", Split::Test, 4, None),
        ];
        save_clusters(&clusters, &path).unwrap();
        assert_eq!(load_clusters(&path).unwrap(), clusters);
    }

    #[test]
    fn save_is_byte_deterministic_and_one_line_per_record() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        let clusters = vec![cluster("c1", Split::Train, 2, None), cluster("c2", Split::Train, 1, None)];
        save_clusters(&clusters, &a).unwrap();
        save_clusters(&clusters, &b).unwrap();
        let bytes_a = std::fs::read(&a).unwrap();
        assert_eq!(bytes_a, std::fs::read(&b).unwrap());
        assert_eq!(bytes_a.iter().filter(|&&c| c == b'\n').count(), 2);

        let empty = dir.path().join("empty.jsonl");
        save_clusters(&[], &empty).unwrap();
        assert_eq!(std::fs::read(&empty).unwrap().len(), 0);
    }

    #[test]
    fn oversize_final_cluster_is_rejected_naming_the_cluster() {
        let big = cluster("cX", Split::Train, 5, None);
        let err = big.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cluster_id=cX"), "{msg}");
        assert!(msg.contains("exceeds 4 articles"), "{msg}");
    }

    #[test]
    fn malformed_line_names_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = serde_json::to_string(&cluster("c1", Split::Train, 1, None)).unwrap();
        std::fs::write(&path, format!("{good}\n{{\"cluster_id\": oops}}\n")).unwrap();
        match load_clusters(&path).unwrap_err() {
            CoreError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extra.jsonl");
        let mut value = serde_json::to_value(cluster("c1", Split::Train, 1, None)).unwrap();
        value["surprise"] = serde_json::json!(1);
        std::fs::write(&path, format!("{value}\n")).unwrap();
        assert!(matches!(load_clusters(&path), Err(CoreError::Parse { .. })));
    }

    #[test]
    fn dev_invariants_enforced() {
        assert!(cluster("d1", Split::Dev, 2, Some(vec![true, true])).validate().is_ok());
        assert!(cluster("d2", Split::Dev, 2, Some(vec![true, false])).validate().is_err());
        assert!(cluster("d3", Split::Dev, 1, Some(vec![true])).validate().is_err());
        assert!(cluster("d4", Split::Dev, 2, None).validate().is_err());
    }

    #[test]
    fn test_split_must_be_unlabeled() {
        assert!(cluster("t1", Split::Test, 4, None).validate().is_ok());
        assert!(cluster("t2", Split::Test, 4, Some(vec![true; 4])).validate().is_err());
    }

    #[test]
    fn label_length_mismatch_rejected() {
        assert!(cluster("c1", Split::Train, 3, Some(vec![true, false])).validate().is_err());
    }

    #[test]
    fn conflicting_article_content_rejected_consistent_reuse_allowed() {
        let shared = article("shared", "same body");
        let mut c1 = cluster("c1", Split::Train, 1, None);
        c1.articles.push(shared.clone());
        let mut c2 = cluster("c2", Split::Train, 1, None);
        c2.articles.push(shared.clone());
        assert!(validate_dataset(&[c1.clone(), c2.clone()]).is_ok());

        c2.articles[1].body = "different body".into();
        assert!(validate_dataset(&[c1, c2]).is_err());
    }

    #[test]
    fn bad_published_date_rejected() {
        let mut c = cluster("c1", Split::Train, 1, None);
        c.articles[0].published_date = "2019-13-45".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn aggregate_votes_majorities() {
        assert_eq!(
            aggregate_votes(&[true, true, false, false, true]).unwrap(),
            Label::Entailed
        );
        assert_eq!(aggregate_votes(&[false, false, false]).unwrap(), Label::NotEntailed);
        assert!(matches!(
            aggregate_votes(&[true, false]),
            Err(CoreError::Argument(_))
        ));
        assert!(matches!(aggregate_votes(&[]), Err(CoreError::Argument(_))));
    }

    #[test]
    fn entailment_record_checks_vote_count_and_majority() {
        let rec = EntailmentRecord::new("c".into(), "a".into(), "h".into(), vec![true, false, true]).unwrap();
        assert_eq!(rec.label, Label::Entailed);
        assert!(EntailmentRecord::new("c".into(), "a".into(), "h".into(), vec![true]).is_err());

        let mut tampered = rec;
        tampered.label = Label::NotEntailed;
        assert!(tampered.validate().is_err());
    }

    proptest::proptest! {
        /// Majority vote ignores vote order.
        #[test]
        fn aggregate_votes_is_permutation_invariant(
            mut votes in proptest::collection::vec(proptest::bool::ANY, 3..=5),
            shuffle_seed in 0u64..1000,
        ) {
            if votes.len() % 2 == 0 {
                votes.pop();
            }
            let original = aggregate_votes(&votes).unwrap();
            let mut shuffled = votes.clone();
            // Cheap deterministic shuffle: rotate + swap driven by the seed.
            let n = shuffled.len();
            shuffled.rotate_left((shuffle_seed as usize) % n);
            shuffled.swap(0, (shuffle_seed as usize * 7 + 1) % n);
            shuffled.swap(1 % n, (shuffle_seed as usize * 13 + 2) % n);
            let mut a = votes.clone();
            let mut b = shuffled.clone();
            a.sort_unstable();
            b.sort_unstable();
            proptest::prop_assert_eq!(a, b, "shuffle must preserve multiset");
            proptest::prop_assert_eq!(aggregate_votes(&shuffled).unwrap(), original);
        }
    }

    #[test]
    fn manifest_counts_and_validation() {
        let clusters = vec![
            cluster("c1", Split::Train, 4, Some(vec![true, false, true, false])),
            cluster("c2", Split::Train, 4, None),
            cluster("c3", Split::Dev, 2, Some(vec![true, true])),
            cluster("c4", Split::Test, 4, None),
        ];
        let manifest = DatasetManifest::from_clusters(&clusters);
        manifest.validate().unwrap();
        assert_eq!(manifest.train.clusters, 2);
        assert_eq!(manifest.train.article_pairs, 8);
        assert_eq!(manifest.train.annotated_clusters, 1);
        assert_eq!(manifest.train.entailed_clusters, 1);
        assert_eq!(manifest.train.entailed_article_pairs, 2);
        assert_eq!(manifest.train.unannotated_clusters, 1);
        assert_eq!(manifest.dev.entailed_article_pairs, 2);
        assert_eq!(manifest.test.unannotated_clusters, 1);
        let table = manifest.render_table();
        assert!(table.contains("train"));
        assert!(table.contains("entailed (>=1)"));
    }
}
