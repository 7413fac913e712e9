//! Plain-text normalization shared by the metrics and the containment oracle.
//!
//! One tokenization rule everywhere: lowercase, keep alphanumeric runs, drop
//! punctuation. Metric values are only comparable across runs because this
//! rule never varies.

/// Lowercased alphanumeric tokens; punctuation and symbols act as separators.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// All n-gram windows over `tokens`; empty when `tokens.len() < n`.
pub fn ngrams(tokens: &[String], n: usize) -> impl Iterator<Item = &[String]> {
    tokens.windows(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowercases_and_strips_punctuation() {
        assert_eq!(
            normalize_tokens("The cat, sat -- on MAT3."),
            vec!["the", "cat", "sat", "on", "mat3"]
        );
    }

    #[test]
    fn empty_and_punct_only_inputs_yield_no_tokens() {
        assert!(normalize_tokens("").is_empty());
        assert!(normalize_tokens("?!... --").is_empty());
    }

    #[test]
    fn ngram_windows() {
        let toks = normalize_tokens("a b c d");
        let grams: Vec<_> = ngrams(&toks, 3).collect();
        assert_eq!(grams.len(), 2);
        assert_eq!(grams[0], &["a".to_string(), "b".into(), "c".into()][..]);
        assert!(ngrams(&toks, 5).next().is_none());
    }
}
