//! Run metrics: ROUGE-1/2/L, article- and cluster-level agreement
//! percentages, hallucination rate, source n-gram overlap, and optional
//! human-annotation ingestion, assembled into a per-model report.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{aggregate_votes, ClusterExample};
use crate::decoding::DecodedRecord;
use crate::entailment::{cluster_article_labels_batch, EntailmentScorer};
use crate::error::{CoreError, Result};
use crate::text::{ngrams, normalize_tokens};

// ---------------------------------------------------------------------------
// ROUGE
// ---------------------------------------------------------------------------

/// With β = 1, F = 2PR/(P+R) collapses to 2m/(c+r) for match count m over
/// candidate total c and reference total r; 0/0 is defined as 0.
fn f1(matches: usize, cand_total: usize, ref_total: usize) -> f64 {
    if matches == 0 || cand_total + ref_total == 0 {
        return 0.0;
    }
    2.0 * matches as f64 / (cand_total + ref_total) as f64
}

fn clipped_ngram_matches(cand: &[String], reference: &[String], n: usize) -> (usize, usize, usize) {
    let mut ref_counts: BTreeMap<&[String], usize> = BTreeMap::new();
    for gram in ngrams(reference, n) {
        *ref_counts.entry(gram).or_insert(0) += 1;
    }
    let mut cand_counts: BTreeMap<&[String], usize> = BTreeMap::new();
    for gram in ngrams(cand, n) {
        *cand_counts.entry(gram).or_insert(0) += 1;
    }
    let matches = cand_counts
        .iter()
        .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    let cand_total = cand.len().saturating_sub(n - 1);
    let ref_total = reference.len().saturating_sub(n - 1);
    (matches, cand_total, ref_total)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut row = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            row[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                row[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

/// ROUGE-1, ROUGE-2, and ROUGE-L F-measures over lowercased,
/// punctuation-stripped tokens with clipped counts and no stemming. Either
/// side empty → all zeros.
pub fn rouge(candidate: &str, reference: &str) -> (f64, f64, f64) {
    let cand = normalize_tokens(candidate);
    let refr = normalize_tokens(reference);
    if cand.is_empty() || refr.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let (m1, c1, r1) = clipped_ngram_matches(&cand, &refr, 1);
    let (m2, c2, r2) = clipped_ngram_matches(&cand, &refr, 2);
    let lcs = lcs_len(&cand, &refr);
    (
        f1(m1, c1, r1),
        f1(m2, c2, r2),
        f1(lcs, cand.len(), refr.len()),
    )
}

// ---------------------------------------------------------------------------
// Source n-gram overlap
// ---------------------------------------------------------------------------

/// Overlap of a generation's n-gram instances with the source articles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapResult {
    /// 100 × (generation n-gram instances found anywhere in the source) /
    /// (total generation n-gram instances).
    pub pct: f64,
    /// Generation shorter than n tokens; pct is defined as 0.
    pub short: bool,
}

/// Share of the generation's n-gram instances that appear in the
/// concatenation of all cluster article bodies.
pub fn ngram_overlap(generation: &str, cluster: &ClusterExample, n: usize) -> Result<OverlapResult> {
    if n < 1 {
        return Err(CoreError::Argument("n-gram order must be >= 1".into()));
    }
    let gen_tokens = normalize_tokens(generation);
    if gen_tokens.len() < n {
        return Ok(OverlapResult { pct: 0.0, short: true });
    }
    let source_text = cluster
        .articles
        .iter()
        .map(|a| a.body.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    let source_tokens = normalize_tokens(&source_text);
    let source_grams: HashSet<&[String]> = ngrams(&source_tokens, n).collect();
    let total = gen_tokens.len() - n + 1;
    let hits = ngrams(&gen_tokens, n)
        .filter(|g| source_grams.contains(g))
        .count();
    Ok(OverlapResult { pct: 100.0 * hits as f64 / total as f64, short: false })
}

// ---------------------------------------------------------------------------
// Agreement percentages
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementMetrics {
    /// 100 × entailed (article, summary) pairs / all pairs.
    pub article_entail_pct: f64,
    /// 100 × clusters whose every article entails the summary / clusters.
    pub cluster_entail_pct: f64,
    /// 100 × clusters where no article entails the summary / clusters.
    pub hallucination_pct: f64,
}

/// Score every (cluster, summary) item in one scorer round trip and reduce
/// to the three agreement percentages.
pub fn agreement_metrics(
    scorer: &dyn EntailmentScorer,
    items: &[(&ClusterExample, &str)],
) -> Result<AgreementMetrics> {
    if items.is_empty() {
        return Err(CoreError::Argument("no (cluster, summary) items to score".into()));
    }
    let labels = cluster_article_labels_batch(scorer, items)?;
    let mut pairs = 0usize;
    let mut entailed_pairs = 0usize;
    let mut all_entailed = 0usize;
    let mut none_entailed = 0usize;
    for cluster_labels in &labels {
        let yes = cluster_labels.iter().filter(|l| l.is_entailed()).count();
        pairs += cluster_labels.len();
        entailed_pairs += yes;
        if yes == cluster_labels.len() {
            all_entailed += 1;
        }
        if yes == 0 {
            none_entailed += 1;
        }
    }
    let clusters = labels.len() as f64;
    Ok(AgreementMetrics {
        article_entail_pct: 100.0 * entailed_pairs as f64 / pairs as f64,
        cluster_entail_pct: 100.0 * all_entailed as f64 / clusters,
        hallucination_pct: 100.0 * none_entailed as f64 / clusters,
    })
}

// ---------------------------------------------------------------------------
// Human annotations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HumanQuestion {
    /// "Does the article contain all the information presented in the
    /// summary?" — judged per (article, summary) pair.
    Entail,
    /// Coherence/fluency judgment of the summary alone.
    Language,
}

/// One rater-vote record: entailment rows name an article, language rows
/// apply to the whole generated summary (article_id null).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanAnnotation {
    pub cluster_id: String,
    pub article_id: Option<String>,
    pub question: HumanQuestion,
    pub votes: Vec<bool>,
}

/// Majority-aggregate human annotations into (entail %, language %); either
/// is None when no row asks that question.
fn human_percentages(
    annotations: &[HumanAnnotation],
    clusters: &BTreeMap<&str, &ClusterExample>,
) -> Result<(Option<f64>, Option<f64>)> {
    let mut entail = (0usize, 0usize);
    let mut language = (0usize, 0usize);
    for ann in annotations {
        let cluster = clusters.get(ann.cluster_id.as_str()).ok_or_else(|| {
            CoreError::Validation(format!(
                "annotation names unknown cluster_id={}",
                ann.cluster_id
            ))
        })?;
        let verdict = aggregate_votes(&ann.votes)?;
        match ann.question {
            HumanQuestion::Entail => {
                let article_id = ann.article_id.as_deref().ok_or_else(|| {
                    CoreError::Validation(format!(
                        "entail annotation for cluster_id={} is missing article_id",
                        ann.cluster_id
                    ))
                })?;
                if !cluster.articles.iter().any(|a| a.article_id == article_id) {
                    return Err(CoreError::Validation(format!(
                        "annotation names unknown article_id={article_id} in cluster_id={}",
                        ann.cluster_id
                    )));
                }
                entail.1 += 1;
                entail.0 += usize::from(verdict.is_entailed());
            }
            HumanQuestion::Language => {
                if ann.article_id.is_some() {
                    return Err(CoreError::Validation(format!(
                        "language annotation for cluster_id={} must not name an article",
                        ann.cluster_id
                    )));
                }
                language.1 += 1;
                language.0 += usize::from(verdict.is_entailed());
            }
        }
    }
    let pct = |(yes, total): (usize, usize)| {
        (total > 0).then(|| 100.0 * yes as f64 / total as f64)
    };
    Ok((pct(entail), pct(language)))
}

// ---------------------------------------------------------------------------
// Run evaluation
// ---------------------------------------------------------------------------

/// Whether ROUGE references are gold summaries or the approximate test-split
/// references.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    DevGold,
    TestApprox,
}

impl std::str::FromStr for ReferenceMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dev_gold" => Ok(ReferenceMode::DevGold),
            "test_approx" => Ok(ReferenceMode::TestApprox),
            other => Err(CoreError::Argument(format!(
                "unknown reference mode {other:?} (want dev_gold or test_approx)"
            ))),
        }
    }
}

/// All metrics for one decoded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub reference_mode: ReferenceMode,
    pub examples: usize,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rougel: f64,
    pub article_entail_pct: f64,
    pub cluster_entail_pct: f64,
    pub hallucination_pct: f64,
    /// Mean source-overlap percentage per n-gram order, keys "3".."6".
    pub ngram_overlap: BTreeMap<String, f64>,
    /// Generations shorter than n tokens, per order (omitted when none).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ngram_short: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_entail_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language_pct: Option<f64>,
}

pub const OVERLAP_ORDERS: std::ops::RangeInclusive<usize> = 3..=6;

/// Evaluate one decoded run against its dataset: mean ROUGE versus the
/// cluster summaries, scorer-judged agreement percentages, source n-gram
/// overlap, and (when provided) human-annotation percentages. Decoded
/// records and dataset clusters must align one-to-one by cluster_id and
/// carry a single model name.
pub fn evaluate_run(
    decoded: &[DecodedRecord],
    clusters: &[ClusterExample],
    scorer: &dyn EntailmentScorer,
    mode: ReferenceMode,
    human: Option<&[HumanAnnotation]>,
) -> Result<MetricsReport> {
    if decoded.is_empty() {
        return Err(CoreError::Validation("decoded run has no records".into()));
    }
    let model = decoded[0].model.clone();
    if let Some(other) = decoded.iter().find(|r| r.model != model) {
        return Err(CoreError::Validation(format!(
            "decoded run mixes models {:?} and {:?}",
            model, other.model
        )));
    }
    let mut seen = BTreeSet::new();
    for record in decoded {
        if !seen.insert(record.cluster_id.as_str()) {
            return Err(CoreError::Validation(format!(
                "decoded run repeats cluster_id={}",
                record.cluster_id
            )));
        }
    }
    let by_id: BTreeMap<&str, &ClusterExample> = clusters
        .iter()
        .map(|c| (c.cluster_id.as_str(), c))
        .collect();
    let unknown: Vec<&str> = seen
        .iter()
        .copied()
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !unknown.is_empty() {
        return Err(CoreError::Validation(format!(
            "decoded cluster_ids missing from the dataset: {}",
            unknown.join(", ")
        )));
    }
    let undecoded: Vec<&str> = by_id
        .keys()
        .copied()
        .filter(|id| !seen.contains(id))
        .collect();
    if !undecoded.is_empty() {
        return Err(CoreError::Validation(format!(
            "dataset cluster_ids missing from the decoded run: {}",
            undecoded.join(", ")
        )));
    }

    let paired: Vec<(&ClusterExample, &DecodedRecord)> = decoded
        .iter()
        .map(|r| (by_id[r.cluster_id.as_str()], r))
        .collect();

    let n = paired.len() as f64;
    let mut sums = (0.0f64, 0.0f64, 0.0f64);
    for (cluster, record) in &paired {
        let (r1, r2, rl) = rouge(&record.summary, &cluster.summary);
        sums.0 += r1;
        sums.1 += r2;
        sums.2 += rl;
    }

    let items: Vec<(&ClusterExample, &str)> = paired
        .iter()
        .map(|(c, r)| (*c, r.summary.as_str()))
        .collect();
    let agreement = agreement_metrics(scorer, &items)?;

    let mut overlap = BTreeMap::new();
    let mut shorts = BTreeMap::new();
    for order in OVERLAP_ORDERS {
        let mut total = 0.0f64;
        let mut short = 0usize;
        for (cluster, record) in &paired {
            let result = ngram_overlap(&record.summary, cluster, order)?;
            total += result.pct;
            short += usize::from(result.short);
        }
        overlap.insert(order.to_string(), total / n);
        if short > 0 {
            shorts.insert(order.to_string(), short);
        }
    }

    let (human_entail_pct, language_pct) = match human {
        Some(annotations) => human_percentages(annotations, &by_id)?,
        None => (None, None),
    };

    Ok(MetricsReport {
        model,
        reference_mode: mode,
        examples: paired.len(),
        rouge1: sums.0 / n,
        rouge2: sums.1 / n,
        rougel: sums.2 / n,
        article_entail_pct: agreement.article_entail_pct,
        cluster_entail_pct: agreement.cluster_entail_pct,
        hallucination_pct: agreement.hallucination_pct,
        ngram_overlap: overlap,
        ngram_short: shorts,
        human_entail_pct,
        language_pct,
    })
}

/// Aligned plain-text table over one or more reports; approximate-reference
/// rows are starred and footnoted.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let headers = [
        "Model", "R1", "R2", "RL", "ArtEnt%", "CluEnt%", "Halluc%", "Lang%",
        "Ovl3%", "Ovl4%", "Ovl5%", "Ovl6%",
    ];
    let mut rows: Vec<Vec<String>> = Vec::with_capacity(reports.len());
    let mut any_approx = false;
    for report in reports {
        let approx = report.reference_mode == ReferenceMode::TestApprox;
        any_approx |= approx;
        let name = if approx {
            format!("{} *", report.model)
        } else {
            report.model.clone()
        };
        let mut row = vec![
            name,
            format!("{:.3}", report.rouge1),
            format!("{:.3}", report.rouge2),
            format!("{:.3}", report.rougel),
            format!("{:.1}", report.article_entail_pct),
            format!("{:.1}", report.cluster_entail_pct),
            format!("{:.1}", report.hallucination_pct),
            report
                .language_pct
                .map_or_else(|| "-".to_string(), |p| format!("{p:.1}")),
        ];
        for order in OVERLAP_ORDERS {
            row.push(
                report
                    .ngram_overlap
                    .get(&order.to_string())
                    .map_or_else(|| "-".to_string(), |p| format!("{p:.1}")),
            );
        }
        rows.push(row);
    }
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let write_row = |out: &mut String, cells: &[String]| {
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            let _ = write!(out, "{cell:<w$}");
        }
        while out.ends_with(' ') {
            out.pop();
        }
        out.push('\n');
    };
    write_row(&mut out, &headers.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    let dashes: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    write_row(&mut out, &dashes);
    for row in &rows {
        write_row(&mut out, row);
    }
    if any_approx {
        out.push_str("* ROUGE computed against approximate references\n");
    }
    out
}
