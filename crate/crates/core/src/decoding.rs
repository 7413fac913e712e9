//! Decoding strategies over trained summarizers: plain length-normalized
//! beam output, entailment-reranked beam selection (entdec), and the
//! extractive lead-sentence baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ClusterExample;
use crate::entailment::{cluster_article_labels_batch, EntailmentScore, EntailmentScorer};
use crate::error::{CoreError, Result};
use crate::summarizer::{prepare_cluster_input, SummarizerState};

/// One decoded summary as written to run output files (JSONL, one per
/// cluster).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodedRecord {
    pub cluster_id: String,
    pub model: String,
    pub summary: String,
    /// Fraction of cluster articles entailing the summary, in [0, 1].
    pub entail_score: f64,
    /// Rank of the emitted candidate in the beam (0 = best normalized
    /// score); for the extractive baseline, the chosen article's index.
    pub beam_rank: usize,
    /// True when the emitted candidate hit the length cap without eos.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unfinished: bool,
}

/// Decoder settings shared by the run drivers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub alpha: f64,
    /// When set, rerank a size-k beam by entailment score.
    pub entdec_k: Option<usize>,
    /// Tie-break seed for the extractive baseline.
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { beam_size: 8, alpha: 0.8, entdec_k: None, seed: 0 }
    }
}

impl DecodeConfig {
    pub const KEYS: [&'static str; 4] = ["beam_size", "alpha", "entdec_k", "seed"];

    /// Read from a flat key-value file; absent keys keep defaults.
    pub fn from_kv(kv: &crate::config::KvConfig) -> Result<Self> {
        kv.expect_keys(&Self::KEYS)?;
        let d = DecodeConfig::default();
        let config = DecodeConfig {
            beam_size: kv.get_usize("beam_size")?.unwrap_or(d.beam_size),
            alpha: kv.get_f64("alpha")?.unwrap_or(d.alpha),
            entdec_k: kv.get_usize("entdec_k")?.or(d.entdec_k),
            seed: kv.get_u64("seed")?.unwrap_or(d.seed),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size < 1 {
            return Err(CoreError::Argument("beam_size must be >= 1".into()));
        }
        if self.entdec_k == Some(0) {
            return Err(CoreError::Argument("entdec k must be >= 1".into()));
        }
        if !self.alpha.is_finite() {
            return Err(CoreError::Argument("alpha must be finite".into()));
        }
        Ok(())
    }
}

/// A chosen summary plus everything the output record needs.
#[derive(Debug, Clone)]
pub struct DecodeOutcome {
    pub summary: String,
    pub tokens: Vec<u32>,
    pub score: EntailmentScore,
    pub beam_rank: usize,
    pub unfinished: bool,
}

impl DecodeOutcome {
    pub fn into_record(self, cluster_id: &str, model: &str) -> DecodedRecord {
        DecodedRecord {
            cluster_id: cluster_id.to_string(),
            model: model.to_string(),
            summary: self.summary,
            entail_score: self.score.value(),
            beam_rank: self.beam_rank,
            unfinished: self.unfinished,
        }
    }
}

/// Beam-decode a cluster and entailment-score every candidate in one scorer
/// round trip. Candidates arrive in canonical beam order (rank = index).
struct ScoredBeam {
    tokens: Vec<Vec<u32>>,
    texts: Vec<String>,
    norms: Vec<f64>,
    finished: Vec<bool>,
    scores: Vec<EntailmentScore>,
}

fn scored_beam(
    state: &SummarizerState,
    scorer: &dyn EntailmentScorer,
    cluster: &ClusterExample,
    beam_size: usize,
    alpha: f64,
) -> Result<ScoredBeam> {
    let input = prepare_cluster_input(
        &state.tokenizer,
        state.config.max_input_len,
        cluster,
        None,
    )?;
    let candidates = state.beam_search(&input, beam_size, alpha)?;
    if candidates.is_empty() {
        return Err(CoreError::Training(format!(
            "beam produced no candidates for cluster_id={}",
            cluster.cluster_id
        )));
    }
    let texts: Vec<String> = candidates
        .iter()
        .map(|c| state.tokenizer.decode(&c.tokens))
        .collect();
    let items: Vec<(&ClusterExample, &str)> =
        texts.iter().map(|t| (cluster, t.as_str())).collect();
    let labels = cluster_article_labels_batch(scorer, &items)?;
    Ok(ScoredBeam {
        tokens: candidates.iter().map(|c| c.tokens.clone()).collect(),
        norms: candidates.iter().map(|c| c.norm_score).collect(),
        finished: candidates.iter().map(|c| c.ended_with_eos).collect(),
        scores: labels.iter().map(|l| EntailmentScore::from_labels(l)).collect(),
        texts,
    })
}

fn outcome_at(beam: ScoredBeam, rank: usize) -> DecodeOutcome {
    DecodeOutcome {
        summary: beam.texts[rank].clone(),
        tokens: beam.tokens[rank].clone(),
        score: beam.scores[rank],
        beam_rank: rank,
        unfinished: !beam.finished[rank],
    }
}

/// Plain decode: emit the best-normalized-score candidate of a beam, scored
/// for the record.
pub fn decode_standard(
    state: &SummarizerState,
    scorer: &dyn EntailmentScorer,
    cluster: &ClusterExample,
    beam_size: usize,
    alpha: f64,
) -> Result<DecodeOutcome> {
    if beam_size < 1 {
        return Err(CoreError::Argument("beam_size must be >= 1".into()));
    }
    let beam = scored_beam(state, scorer, cluster, beam_size, alpha)?;
    Ok(outcome_at(beam, 0))
}

/// Among `(entail value, norm score)` candidates in beam order, pick the
/// index with the highest entailment score; break ties by higher norm score,
/// then by earlier beam rank. Pure so it can be checked against a
/// brute-force oracle.
pub fn select_entdec(candidates: &[(f64, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &(score, norm)) in candidates.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => match score.total_cmp(&candidates[b].0) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => {
                    norm.total_cmp(&candidates[b].1) == std::cmp::Ordering::Greater
                }
            },
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Entailment-reranked decode: run a size-k beam, score every candidate
/// against the whole cluster, and emit the best-scoring one (ties by norm
/// score, then beam rank). With k = 1 this is exactly plain beam-1 decoding.
/// If nothing in the beam emitted eos, the best unfinished hypothesis is
/// returned with `unfinished` set.
pub fn decode_entdec(
    state: &SummarizerState,
    scorer: &dyn EntailmentScorer,
    cluster: &ClusterExample,
    k: usize,
    alpha: f64,
) -> Result<DecodeOutcome> {
    if k < 1 {
        return Err(CoreError::Argument("entdec k must be >= 1".into()));
    }
    let beam = scored_beam(state, scorer, cluster, k, alpha)?;
    let keyed: Vec<(f64, f64)> = beam
        .scores
        .iter()
        .zip(&beam.norms)
        .map(|(s, &n)| (s.value(), n))
        .collect();
    let rank = select_entdec(&keyed).expect("beam is non-empty");
    Ok(outcome_at(beam, rank))
}

/// The extractive baseline's choice of lead sentence.
#[derive(Debug, Clone)]
pub struct LeadChoice {
    pub summary: String,
    /// Index of the article whose lead sentence was chosen.
    pub article_index: usize,
    pub score: EntailmentScore,
    /// Articles that yielded no lead sentence (blank bodies).
    pub skipped: usize,
}

impl LeadChoice {
    pub fn into_record(self, cluster_id: &str, model: &str) -> DecodedRecord {
        DecodedRecord {
            cluster_id: cluster_id.to_string(),
            model: model.to_string(),
            summary: self.summary,
            entail_score: self.score.value(),
            beam_rank: self.article_index,
            unfinished: false,
        }
    }
}

/// Extractive baseline: take each article's lead sentence, score each one
/// against every article in the cluster, and pick the best scorer; exact
/// ties are broken uniformly at random with the caller's rng. Articles with
/// no extractable sentence are skipped (counted in the result); a cluster
/// where no article yields a sentence is an argument error.
pub fn decode_b5(
    scorer: &dyn EntailmentScorer,
    cluster: &ClusterExample,
    rng: &mut impl Rng,
) -> Result<LeadChoice> {
    let mut leads: Vec<(usize, String)> = Vec::new();
    let mut skipped = 0usize;
    for (i, article) in cluster.articles.iter().enumerate() {
        match split_sentences(&article.body).into_iter().next() {
            Some(first) => leads.push((i, first)),
            None => skipped += 1,
        }
    }
    if leads.is_empty() {
        return Err(CoreError::Argument(format!(
            "cluster_id={} has no article with a lead sentence",
            cluster.cluster_id
        )));
    }
    let items: Vec<(&ClusterExample, &str)> =
        leads.iter().map(|(_, s)| (cluster, s.as_str())).collect();
    let labels = cluster_article_labels_batch(scorer, &items)?;
    let scores: Vec<EntailmentScore> =
        labels.iter().map(|l| EntailmentScore::from_labels(l)).collect();
    // All candidates share the same denominator (the cluster size), so the
    // integer entailed-count comparison is exact.
    let best = scores.iter().map(|s| s.entailed).max().expect("non-empty");
    let tied: Vec<usize> = (0..leads.len())
        .filter(|&i| scores[i].entailed == best)
        .collect();
    let pick = tied[rng.gen_range(0..tied.len())];
    let (article_index, summary) = leads.swap_remove(pick);
    Ok(LeadChoice { summary, article_index, score: scores[pick], skipped })
}

/// Words that end with a period without ending a sentence. Compared
/// lowercase, trailing period stripped, internal periods kept ("e.g").
const ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "prof", "gen", "sen", "rep", "gov", "st", "mt",
    "vs", "etc", "e.g", "i.e", "a.m", "p.m", "u.s", "u.k", "u.n", "jan",
    "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov",
    "dec",
];

fn is_abbreviation(chars: &[char], period: usize, start: usize) -> bool {
    // The token is everything from the previous whitespace up to (not
    // including) the period itself.
    let mut tok_start = period;
    while tok_start > start && !chars[tok_start - 1].is_whitespace() {
        tok_start -= 1;
    }
    let token: String = chars[tok_start..period]
        .iter()
        .collect::<String>()
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_string();
    if token.is_empty() {
        return false;
    }
    // Single-capital initials ("J. Smith") never end a sentence.
    let mut cs = token.chars();
    if let (Some(first), None) = (cs.next(), cs.next()) {
        if first.is_uppercase() {
            return true;
        }
    }
    let lower = token.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

/// Deterministic rule-based sentence splitter: a sentence ends at `.`, `!`,
/// or `?` (plus any closing quotes/brackets) when followed by whitespace and
/// an uppercase letter, digit, or opening quote — unless the period belongs
/// to a known abbreviation or a single-capital initial. Whitespace between
/// sentences is the only text not preserved.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i];
        if c == '.' || c == '!' || c == '?' {
            let mut end = i + 1;
            while end < chars.len()
                && matches!(chars[end], '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
            {
                end += 1;
            }
            let at_end = end >= chars.len();
            let ws_follows = !at_end && chars[end].is_whitespace();
            let abbreviated = c == '.' && is_abbreviation(&chars, i, start);
            if (at_end || ws_follows) && !abbreviated {
                let mut j = end;
                while j < chars.len() && chars[j].is_whitespace() {
                    j += 1;
                }
                let next_starts_sentence = j >= chars.len()
                    || chars[j].is_uppercase()
                    || chars[j].is_ascii_digit()
                    || matches!(chars[j], '"' | '\u{201c}');
                if next_starts_sentence {
                    let sentence: String = chars[start..end].iter().collect();
                    let trimmed = sentence.trim();
                    if !trimmed.is_empty() {
                        sentences.push(trimmed.to_string());
                    }
                    start = j;
                    i = j;
                    continue;
                }
            }
        }
        i += 1;
    }
    if start < chars.len() {
        let tail: String = chars[start..].iter().collect();
        let trimmed = tail.trim();
        if !trimmed.is_empty() {
            sentences.push(trimmed.to_string());
        }
    }
    sentences
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    use rand::Rng;

    use crate::corpus::{Article, Label, Split};
    use crate::entailment::{ContainmentOracle, FnScorer};
    use crate::seeding::derive_rng;
    use crate::summarizer::{SummarizerConfig, SummarizerState};
    use crate::tokenizer::Tokenizer;

    fn word_level_tokenizer(words: &[&str]) -> Tokenizer {
        let corpus: Vec<String> = (0..50).map(|_| words.join(" ")).collect();
        let refs: Vec<&str> = corpus.iter().map(String::as_str).collect();
        let tok = Tokenizer::train(&refs, 4096).unwrap();
        for w in words {
            assert_eq!(tok.encode(w).len(), 1, "word {w} not a single piece");
        }
        tok
    }

    fn cluster_with_bodies(id: &str, bodies: &[&str]) -> ClusterExample {
        ClusterExample {
            cluster_id: id.to_string(),
            split: Split::Test,
            summary: "reference".into(),
            articles: bodies
                .iter()
                .enumerate()
                .map(|(i, b)| Article {
                    article_id: format!("{id}-a{i}"),
                    title: String::new(),
                    body: b.to_string(),
                    url: String::new(),
                    published_date: "2019-09-01".into(),
                })
                .collect(),
            labels: None,
        }
    }

    fn tiny_state(seed: u64) -> SummarizerState {
        let tok = word_level_tokenizer(&["a", "b", "c", "d"]);
        let config = SummarizerConfig {
            model_dim: 12,
            layers: 1,
            max_input_len: 32,
            max_output_len: 4,
        };
        SummarizerState::new(config, tok, seed).unwrap()
    }

    #[test]
    fn select_entdec_fixture_and_full_tie() {
        // (entail, norm): the (1.0, -2.0) candidate wins on the tie-break.
        let picked = select_entdec(&[(0.5, -1.0), (1.0, -3.0), (1.0, -2.0)]).unwrap();
        assert_eq!(picked, 2);
        // All entailment scores equal → best norm, i.e. beam rank 0.
        assert_eq!(select_entdec(&[(0.0, -1.0), (0.0, -2.0), (0.0, -3.0)]), Some(0));
        // Exact duplicates → earliest rank.
        assert_eq!(select_entdec(&[(0.5, -1.0), (0.5, -1.0)]), Some(0));
        assert_eq!(select_entdec(&[]), None);
    }

    #[test]
    fn select_entdec_matches_brute_force_oracle() {
        let mut rng = derive_rng(11, &["entdec-oracle"]);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=12);
            let candidates: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    // Coarse grids force plenty of exact ties.
                    let score = f64::from(rng.gen_range(0..=4)) / 4.0;
                    let norm = f64::from(rng.gen_range(-6..=0));
                    (score, norm)
                })
                .collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                candidates[b]
                    .0
                    .total_cmp(&candidates[a].0)
                    .then(candidates[b].1.total_cmp(&candidates[a].1))
                    .then(a.cmp(&b))
            });
            assert_eq!(select_entdec(&candidates), Some(order[0]));
        }
    }

    #[test]
    fn entdec_k1_equals_plain_beam_one() {
        let state = tiny_state(3);
        let oracle = ContainmentOracle;
        for (i, bodies) in [
            &["a b c d", "b c d a"][..],
            &["c c c", "c b a"][..],
            &["d a", "a d", "d d"][..],
        ]
        .iter()
        .enumerate()
        {
            let cluster = cluster_with_bodies(&format!("c{i}"), bodies);
            let plain = decode_standard(&state, &oracle, &cluster, 1, 0.8).unwrap();
            let entdec = decode_entdec(&state, &oracle, &cluster, 1, 0.8).unwrap();
            assert_eq!(plain.summary, entdec.summary);
            assert_eq!(plain.beam_rank, 0);
            assert_eq!(entdec.beam_rank, 0);
        }
    }

    #[test]
    fn entdec_never_scores_below_plain_decode() {
        // Reranking selects by entailment score over a superset of the
        // plain choice, so its score can only match or improve.
        let oracle = ContainmentOracle;
        for seed in 0..5u64 {
            let state = tiny_state(seed);
            let cluster = cluster_with_bodies("c", &["a b", "b a", "a b c"]);
            let plain = decode_standard(&state, &oracle, &cluster, 8, 0.8).unwrap();
            let reranked = decode_entdec(&state, &oracle, &cluster, 8, 0.8).unwrap();
            assert!(reranked.score.entailed >= plain.score.entailed);
        }
    }

    #[test]
    fn entdec_rejects_zero_k() {
        let state = tiny_state(3);
        let cluster = cluster_with_bodies("c", &["a b"]);
        assert!(matches!(
            decode_entdec(&state, &ContainmentOracle, &cluster, 0, 0.8),
            Err(CoreError::Argument(_))
        ));
    }

    #[test]
    fn b5_picks_unique_maximum() {
        // Article 1's lead appears in every body; the rest are local.
        let cluster = cluster_with_bodies(
            "c",
            &[
                "Local opener zero here. Shared words everywhere.",
                "Shared words everywhere. More text follows.",
                "Even more shared words everywhere text. Closing bit.",
            ],
        );
        let mut rng = derive_rng(0, &["b5"]);
        let choice = decode_b5(&ContainmentOracle, &cluster, &mut rng).unwrap();
        assert_eq!(choice.article_index, 1);
        assert_eq!(choice.summary, "Shared words everywhere.");
        assert_eq!((choice.score.entailed, choice.score.total), (3, 3));
        assert_eq!(choice.skipped, 0);
    }

    #[test]
    fn b5_single_article_returns_its_lead() {
        let cluster = cluster_with_bodies("c", &["Only story here. Second sentence."]);
        let mut rng = derive_rng(1, &["b5"]);
        let choice = decode_b5(&ContainmentOracle, &cluster, &mut rng).unwrap();
        assert_eq!(choice.article_index, 0);
        assert_eq!(choice.summary, "Only story here.");
    }

    #[test]
    fn b5_uniform_tie_break_frequencies() {
        // Four leads, none entailed anywhere → full tie; each article should
        // be chosen about a quarter of the time.
        let cluster = cluster_with_bodies(
            "c",
            &["alpha one.", "beta two.", "gamma three.", "delta four."],
        );
        let scorer = FnScorer(|_: &str, _: &str| Label::NotEntailed);
        let mut counts = [0usize; 4];
        let mut rng = derive_rng(7, &["b5-ties"]);
        let trials = 10_000;
        for _ in 0..trials {
            let choice = decode_b5(&scorer, &cluster, &mut rng).unwrap();
            counts[choice.article_index] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / trials as f64;
            assert!((freq - 0.25).abs() < 0.02, "tie frequency off: {counts:?}");
        }
    }

    #[test]
    fn b5_skips_blank_bodies_and_rejects_all_blank() {
        let cluster = cluster_with_bodies("c", &["   ", "Real lead here. More.", ""]);
        let mut rng = derive_rng(2, &["b5"]);
        let choice = decode_b5(&ContainmentOracle, &cluster, &mut rng).unwrap();
        assert_eq!(choice.article_index, 1);
        assert_eq!(choice.skipped, 2);
        // Scoring still ran against all three articles.
        assert_eq!(choice.score.total, 3);

        let blank = cluster_with_bodies("c", &["", "  "]);
        assert!(matches!(
            decode_b5(&ContainmentOracle, &blank, &mut rng),
            Err(CoreError::Argument(_))
        ));
    }

    #[test]
    fn b5_deterministic_given_seed() {
        let cluster = cluster_with_bodies("c", &["tie one.", "tie two.", "tie three."]);
        let scorer = FnScorer(|_: &str, _: &str| Label::NotEntailed);
        let run = |seed: u64| {
            let mut rng = derive_rng(seed, &["b5-det"]);
            decode_b5(&scorer, &cluster, &mut rng).unwrap().article_index
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn sentence_split_fixtures() {
        assert_eq!(
            split_sentences("A first. A second."),
            vec!["A first.", "A second."]
        );
        assert_eq!(
            split_sentences("Dr. Smith spoke. He left."),
            vec!["Dr. Smith spoke.", "He left."]
        );
        assert_eq!(split_sentences(""), Vec::<String>::new());
        assert_eq!(split_sentences("   "), Vec::<String>::new());
        assert_eq!(split_sentences("No terminal punctuation"), vec![
            "No terminal punctuation"
        ]);
        assert_eq!(
            split_sentences("Really? Yes! Fine."),
            vec!["Really?", "Yes!", "Fine."]
        );
        // Abbreviations, initials, and times hold the sentence together.
        assert_eq!(
            split_sentences("J. K. Rowling wrote it. Everyone read it."),
            vec!["J. K. Rowling wrote it.", "Everyone read it."]
        );
        assert_eq!(
            split_sentences("Doors open at 5 p.m. Tomorrow they close."),
            vec!["Doors open at 5 p.m. Tomorrow they close."]
        );
        assert_eq!(
            split_sentences("Fruit, e.g. apples. Vegetables too."),
            vec!["Fruit, e.g. apples.", "Vegetables too."]
        );
        // Closing quote rides along with the sentence end.
        assert_eq!(
            split_sentences("He said \"stop.\" Then he left."),
            vec!["He said \"stop.\"", "Then he left."]
        );
        // Lowercase continuation is not a boundary.
        assert_eq!(
            split_sentences("The site example.com is down. It failed."),
            vec!["The site example.com is down.", "It failed."]
        );
        assert_eq!(split_sentences("Version 2. 0 shipped"), vec![
            "Version 2.",
            "0 shipped"
        ]);
    }

    proptest! {
        /// The splitter may only discard whitespace between sentences: the
        /// non-whitespace character stream is preserved exactly.
        #[test]
        fn split_preserves_non_whitespace(words in prop::collection::vec(
            prop::sample::select(vec![
                "alpha", "Beta", "gamma.", "Delta!", "eps?", "Dr.", "No.", "x",
                "\"quote.\"", "U.S.", "9",
            ]),
            0..40,
        )) {
            let text = words.join(" ");
            let joined = split_sentences(&text).join(" ");
            let strip = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
            prop_assert_eq!(strip(&text), strip(&joined));
        }
    }

    #[test]
    fn decoded_record_serde_roundtrip_and_flag_elision() {
        let rec = DecodedRecord {
            cluster_id: "c9".into(),
            model: "asm-entdec8".into(),
            summary: "storm hits coast".into(),
            entail_score: 0.75,
            beam_rank: 2,
            unfinished: false,
        };
        let line = serde_json::to_string(&rec).unwrap();
        assert!(!line.contains("unfinished"));
        let back: DecodedRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rec);

        let rec = DecodedRecord { unfinished: true, ..rec };
        let line = serde_json::to_string(&rec).unwrap();
        assert!(line.contains("\"unfinished\":true"));
        let back: DecodedRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn decode_config_validation() {
        assert!(DecodeConfig::default().validate().is_ok());
        let bad = DecodeConfig { beam_size: 0, ..DecodeConfig::default() };
        assert!(bad.validate().is_err());
        let bad = DecodeConfig { entdec_k: Some(0), ..DecodeConfig::default() };
        assert!(bad.validate().is_err());
        let bad = DecodeConfig { alpha: f64::NAN, ..DecodeConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn decode_config_from_kv() {
        use crate::config::KvConfig;
        let kv = KvConfig::parse_str("beam_size = 4\nalpha = 0.6\nentdec_k = 16\nseed = 3", "t").unwrap();
        let config = DecodeConfig::from_kv(&kv).unwrap();
        assert_eq!(config.beam_size, 4);
        assert_eq!(config.alpha, 0.6);
        assert_eq!(config.entdec_k, Some(16));
        assert_eq!(config.seed, 3);
        // Absent keys keep defaults; unknown keys are rejected.
        let kv = KvConfig::parse_str("alpha = 1.0", "t").unwrap();
        let config = DecodeConfig::from_kv(&kv).unwrap();
        assert_eq!(config.beam_size, DecodeConfig::default().beam_size);
        assert_eq!(config.entdec_k, None);
        let kv = KvConfig::parse_str("beam = 4", "t").unwrap();
        assert!(DecodeConfig::from_kv(&kv).is_err());
    }
}
