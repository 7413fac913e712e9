//! Deterministic synthetic data.
//!
//! Three generators, all driven by per-item derived rngs so output is a pure
//! function of (config, seed) regardless of generation order:
//!
//! - `generate_corpus`: raw clusters for the dataset builder, built around a
//!   token-intersection task. Each cluster has a core word sequence; its
//!   summary is exactly that sequence, entailed articles contain the whole
//!   sequence in order (plus filler words), and non-entailed articles drop
//!   one or two non-topic core words. Containment entailment of every
//!   article is therefore knowable by construction, which makes these
//!   clusters an exact testbed for agreement training and scoring.
//! - `containment_pairs`: balanced (premise, hypothesis, label) triples for
//!   classifier training, where the label is true token containment.
//! - `copy_pairs`: (document, summary) pairs whose summary is the document's
//!   leading tokens — extractive supervision whose n-gram overlap with the
//!   source is total.

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Article, Label};
use crate::dataset::{RawCluster, MAX_NEIGHBORS};
use crate::error::{CoreError, Result};
use crate::seeding::derive_rng;

/// Distinct content words available to core sequences.
const CONTENT_WORDS: usize = 40;
/// Distinct filler words; disjoint from content words, so a dropped core
/// word can never be reintroduced by filler.
const FILLER_WORDS: usize = 60;
/// Word pool for containment pairs and copy pairs.
const PAIR_WORDS: usize = 200;

/// Letters-only pseudo-word: prefix plus a two-letter base-26 index.
fn letter_word(prefix: char, i: usize) -> String {
    let hi = (i / 26) % 26;
    let lo = i % 26;
    format!("{prefix}{}{}", (b'a' + hi as u8) as char, (b'a' + lo as u8) as char)
}

fn vocab(prefix: char, n: usize) -> Vec<String> {
    (0..n).map(|i| letter_word(prefix, i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Raw clusters dated before the default train/dev cutoff.
    pub train_clusters: usize,
    /// Raw clusters dated inside the default test window.
    pub test_clusters: usize,
    /// Neighbor articles per raw cluster.
    pub neighbors: usize,
    /// Probability that a neighbor entails the summary.
    pub p_entail: f64,
    /// Fraction of train-pool clusters that come with neighbor labels.
    pub annotated_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_clusters: 60,
            test_clusters: 40,
            neighbors: 6,
            p_entail: 0.55,
            annotated_fraction: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neighbors < 1 || self.neighbors > MAX_NEIGHBORS {
            return Err(CoreError::Validation(format!(
                "neighbors must be in 1..={MAX_NEIGHBORS}, got {}",
                self.neighbors
            )));
        }
        for (name, v) in [("p_entail", self.p_entail), ("annotated_fraction", self.annotated_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CoreError::Validation(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Raw clusters plus aggregated per-neighbor entailment labels for the
/// annotated subset — exactly what the dataset builder consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub raw: Vec<RawCluster>,
    pub annotations: BTreeMap<String, Vec<bool>>,
}

/// Insert 0–3 filler words at random positions, preserving token order.
fn with_fillers(tokens: &[&str], fillers: &[String], rng: &mut impl Rng) -> String {
    let mut out: Vec<&str> = tokens.to_vec();
    let extra = rng.gen_range(0..=3);
    for _ in 0..extra {
        let word = fillers.choose(rng).expect("filler vocabulary nonempty");
        let at = rng.gen_range(0..=out.len());
        out.insert(at, word);
    }
    out.join(" ")
}

/// Body containing the full core sequence in order.
fn entailed_body(core: &[&str], fillers: &[String], rng: &mut impl Rng) -> String {
    with_fillers(core, fillers, rng)
}

/// Body missing one or two non-topic core words (the topic, `core[0]`, is
/// always kept), so containment of the full summary fails.
fn non_entailed_body(core: &[&str], fillers: &[String], rng: &mut impl Rng) -> String {
    let droppable = core.len() - 1;
    let drop_count = rng.gen_range(1..=2usize).min(droppable);
    let mut drop_at: Vec<usize> = (1..core.len()).collect();
    drop_at.shuffle(rng);
    drop_at.truncate(drop_count);
    let kept: Vec<&str> = core
        .iter()
        .enumerate()
        .filter_map(|(i, w)| (!drop_at.contains(&i)).then_some(*w))
        .collect();
    with_fillers(&kept, fillers, rng)
}

fn article(id: String, date: &str, topic: &str, body: String) -> Article {
    Article {
        article_id: id.clone(),
        title: format!("about {topic}"),
        body,
        url: format!("https://synth.invalid/{id}"),
        published_date: date.to_string(),
    }
}

/// One raw cluster and its per-neighbor truth labels.
fn make_cluster(
    cluster_id: &str,
    date: &str,
    config: &SynthConfig,
    content: &[String],
    fillers: &[String],
) -> (RawCluster, Vec<bool>) {
    let mut rng = derive_rng(config.seed, &["synth", cluster_id]);
    let core_len = rng.gen_range(4..=6usize);
    let mut picks: Vec<usize> = (0..content.len()).collect();
    picks.shuffle(&mut rng);
    let core: Vec<&str> = picks[..core_len].iter().map(|&i| content[i].as_str()).collect();
    let summary = core.join(" ");
    let topic = core[0];

    let linked = article(
        format!("{cluster_id}-src"),
        date,
        topic,
        entailed_body(&core, fillers, &mut rng),
    );
    let mut neighbors = Vec::with_capacity(config.neighbors);
    let mut labels = Vec::with_capacity(config.neighbors);
    for j in 0..config.neighbors {
        let entailed = rng.gen_bool(config.p_entail);
        let body = if entailed {
            entailed_body(&core, fillers, &mut rng)
        } else {
            non_entailed_body(&core, fillers, &mut rng)
        };
        neighbors.push(article(format!("{cluster_id}-n{j}"), date, topic, body));
        labels.push(entailed);
    }

    (
        RawCluster {
            cluster_id: cluster_id.to_string(),
            summary,
            summary_date: date.to_string(),
            linked_article: linked,
            neighbors,
        },
        labels,
    )
}

/// Generate the synthetic raw corpus. Train-pool clusters are dated from
/// 2019-01-01 (before the default builder cutoff) and test-window clusters
/// from 2019-09-01; only train-pool clusters can carry annotations.
pub fn generate_corpus(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let content = vocab('k', CONTENT_WORDS);
    let fillers = vocab('f', FILLER_WORDS);
    let train_base = NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date");
    let test_base = NaiveDate::from_ymd_opt(2019, 9, 1).expect("valid date");

    let mut raw = Vec::with_capacity(config.train_clusters + config.test_clusters);
    let mut annotations = BTreeMap::new();
    for i in 0..config.train_clusters {
        let cluster_id = format!("syn-train-{i:04}");
        let date = (train_base + Days::new((i % 180) as u64)).format("%Y-%m-%d").to_string();
        let (cluster, labels) = make_cluster(&cluster_id, &date, config, &content, &fillers);
        let mut rng = derive_rng(config.seed, &["synth-annot", &cluster_id]);
        if rng.gen_bool(config.annotated_fraction) {
            annotations.insert(cluster_id, labels);
        }
        raw.push(cluster);
    }
    for i in 0..config.test_clusters {
        let cluster_id = format!("syn-test-{i:04}");
        let date = (test_base + Days::new((i % 300) as u64)).format("%Y-%m-%d").to_string();
        let (cluster, _) = make_cluster(&cluster_id, &date, config, &content, &fillers);
        raw.push(cluster);
    }
    Ok(SynthCorpus { raw, annotations })
}

/// Balanced (premise, hypothesis, containment label) triples. Entailed
/// hypotheses are subsets of the premise's tokens; non-entailed ones keep
/// some premise tokens but add one or two words the premise lacks.
pub fn containment_pairs(n: usize, seed: u64) -> Vec<(String, String, Label)> {
    let pool = vocab('w', PAIR_WORDS);
    (0..n)
        .map(|i| {
            let mut rng = derive_rng(seed, &["synth-pair", &i.to_string()]);
            let mut picks: Vec<usize> = (0..pool.len()).collect();
            picks.shuffle(&mut rng);
            let premise_len = rng.gen_range(8..=20usize);
            let (premise_ix, rest_ix) = picks.split_at(premise_len);
            let premise: Vec<&str> = premise_ix.iter().map(|&i| pool[i].as_str()).collect();

            let entailed = rng.gen_bool(0.5);
            let mut hyp: Vec<&str> = Vec::new();
            let from_premise = rng.gen_range(2..=5usize);
            hyp.extend(premise.iter().take(from_premise));
            if !entailed {
                let outside = rng.gen_range(1..=2usize);
                hyp.extend(rest_ix.iter().take(outside).map(|&i| pool[i].as_str()));
            }
            hyp.shuffle(&mut rng);

            (premise.join(" "), hyp.join(" "), Label::from_bool(entailed))
        })
        .collect()
}

/// (document, summary) pairs where the summary is the document's first 3–6
/// tokens, so every summary n-gram up to its length appears in the source.
pub fn copy_pairs(n: usize, seed: u64) -> Vec<(String, String)> {
    let pool = vocab('w', PAIR_WORDS);
    (0..n)
        .map(|i| {
            let mut rng = derive_rng(seed, &["synth-copy", &i.to_string()]);
            let mut picks: Vec<usize> = (0..pool.len()).collect();
            picks.shuffle(&mut rng);
            let doc_len = rng.gen_range(10..=24usize);
            let doc: Vec<&str> = picks[..doc_len].iter().map(|&i| pool[i].as_str()).collect();
            let keep = rng.gen_range(3..=6usize);
            (doc.join(" "), doc[..keep].join(" "))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_dataset, BuilderConfig};
    use crate::entailment::ContainmentOracle;
    use proptest::prelude::*;

    #[test]
    fn oracle_agrees_with_construction_labels() {
        let config = SynthConfig {
            train_clusters: 40,
            test_clusters: 10,
            p_entail: 0.5,
            ..SynthConfig::default()
        };
        let corpus = generate_corpus(&config).unwrap();
        assert_eq!(corpus.raw.len(), 50);
        let mut entailed = 0usize;
        let mut total = 0usize;
        for cluster in &corpus.raw {
            assert_eq!(
                ContainmentOracle::label(&cluster.linked_article.body, &cluster.summary),
                Label::Entailed,
                "linked article must entail its own summary"
            );
            let Some(labels) = corpus.annotations.get(&cluster.cluster_id) else {
                continue;
            };
            for (neighbor, &truth) in cluster.neighbors.iter().zip(labels) {
                assert_eq!(
                    ContainmentOracle::label(&neighbor.body, &cluster.summary),
                    Label::from_bool(truth),
                    "cluster {} neighbor {}",
                    cluster.cluster_id,
                    neighbor.article_id
                );
                entailed += usize::from(truth);
                total += 1;
            }
        }
        // p_entail = 0.5 over 240 draws: both classes far from degenerate.
        assert!(entailed > total / 4 && entailed < 3 * total / 4, "{entailed}/{total}");
    }

    #[test]
    fn topic_word_appears_in_every_article() {
        let corpus = generate_corpus(&SynthConfig::default()).unwrap();
        for cluster in &corpus.raw {
            let topic = cluster.summary.split(' ').next().unwrap();
            for body in std::iter::once(&cluster.linked_article.body)
                .chain(cluster.neighbors.iter().map(|a| &a.body))
            {
                assert!(
                    body.split(' ').any(|w| w == topic),
                    "topic {topic} missing from an article of {}",
                    cluster.cluster_id
                );
            }
        }
    }

    #[test]
    fn reruns_are_identical_and_seeds_differ() {
        let config = SynthConfig { train_clusters: 12, test_clusters: 6, ..SynthConfig::default() };
        let a = generate_corpus(&config).unwrap();
        let b = generate_corpus(&config).unwrap();
        assert_eq!(a, b);
        let other = generate_corpus(&SynthConfig { seed: 1, ..config }).unwrap();
        assert_ne!(a.raw, other.raw);

        assert_eq!(containment_pairs(20, 3), containment_pairs(20, 3));
        assert_ne!(containment_pairs(20, 3), containment_pairs(20, 4));
        assert_eq!(copy_pairs(20, 3), copy_pairs(20, 3));
    }

    #[test]
    fn corpus_feeds_the_dataset_builder() {
        let corpus = generate_corpus(&SynthConfig::default()).unwrap();
        let config = BuilderConfig { test_cluster_count: 20, ..BuilderConfig::default() };
        let built = build_dataset(&corpus.raw, &corpus.annotations, &config).unwrap();
        assert_eq!(built.test.len(), 20);
        assert!(!built.train.is_empty());
        assert!(!built.dev.is_empty(), "some annotated clusters should reach dev");
        assert!(!built.linked_pairs.is_empty());
        // Annotated train clusters carry aligned labels.
        assert!(built.train.iter().any(|c| c.labels.is_some()));
        for cluster in &built.train {
            if let Some(labels) = &cluster.labels {
                assert_eq!(labels.len(), cluster.articles.len());
            }
        }
    }

    #[test]
    fn containment_pairs_are_truthful_and_balanced() {
        let pairs = containment_pairs(300, 11);
        let mut positive = 0usize;
        for (premise, hypothesis, label) in &pairs {
            assert_eq!(ContainmentOracle::label(premise, hypothesis), *label);
            positive += usize::from(label.is_entailed());
        }
        assert!((100..=200).contains(&positive), "positive count {positive}");
    }

    #[test]
    fn copy_pairs_summaries_are_leading_tokens() {
        for (doc, summary) in copy_pairs(50, 7) {
            let doc_tokens: Vec<&str> = doc.split(' ').collect();
            let sum_tokens: Vec<&str> = summary.split(' ').collect();
            assert!((3..=6).contains(&sum_tokens.len()));
            assert_eq!(&doc_tokens[..sum_tokens.len()], &sum_tokens[..]);
            assert_eq!(ContainmentOracle::label(&doc, &summary), Label::Entailed);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn generator_invariants_hold_for_any_seed(
            seed in any::<u64>(),
            p_entail in 0.0f64..=1.0,
            neighbors in 1usize..=8,
        ) {
            let config = SynthConfig {
                train_clusters: 5,
                test_clusters: 2,
                neighbors,
                p_entail,
                annotated_fraction: 1.0,
                seed,
            };
            let corpus = generate_corpus(&config).unwrap();
            prop_assert_eq!(corpus.raw.len(), 7);
            prop_assert_eq!(corpus.annotations.len(), 5);
            for cluster in &corpus.raw {
                cluster.validate().unwrap();
                prop_assert_eq!(cluster.neighbors.len(), neighbors);
                let core_len = cluster.summary.split(' ').count();
                prop_assert!((4..=6).contains(&core_len));
                if let Some(labels) = corpus.annotations.get(&cluster.cluster_id) {
                    prop_assert_eq!(labels.len(), neighbors);
                    for (neighbor, &truth) in cluster.neighbors.iter().zip(labels) {
                        prop_assert_eq!(
                            ContainmentOracle::label(&neighbor.body, &cluster.summary),
                            Label::from_bool(truth)
                        );
                    }
                }
            }
        }
    }
}
