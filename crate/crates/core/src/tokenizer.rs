//! Byte-pair-encoding subword tokenizer.
//!
//! Trained from scratch on the working corpus: lowercased words (alphanumeric
//! runs; each punctuation mark its own word) are split into characters with a
//! `</w>` end-of-word marker, then the most frequent adjacent symbol pair is
//! merged repeatedly until the requested vocabulary size is reached. Training
//! is fully deterministic: pair counts live in ordered maps and frequency ties
//! break lexicographically.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

/// Reserved token ids, stable across every trained vocabulary.
pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const UNK_ID: u32 = 4;

pub const SPECIAL_PIECES: [(&str, u32); 5] = [
    ("<pad>", PAD_ID),
    ("<bos>", BOS_ID),
    ("<eos>", EOS_ID),
    ("<sep>", SEP_ID),
    ("<unk>", UNK_ID),
];

pub fn is_special(id: u32) -> bool {
    id <= UNK_ID
}

const END_OF_WORD: &str = "</w>";

/// Lowercase words: alphanumeric runs plus single punctuation marks.
fn pretokenize(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            if !ch.is_whitespace() {
                words.push(ch.to_string());
            }
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Character symbols of one word, the last carrying the end-of-word marker.
fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == n {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tokenizer {
    /// Piece strings; index = token id. First five entries are the specials.
    pieces: Vec<String>,
    /// Merge rules in priority order (earlier = applied first).
    merges: Vec<(String, String)>,
    #[serde(skip)]
    piece_ids: HashMap<String, u32>,
    #[serde(skip)]
    merge_ranks: HashMap<(String, String), usize>,
}

impl PartialEq for Tokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.pieces == other.pieces && self.merges == other.merges
    }
}

impl Tokenizer {
    /// Learn a vocabulary of at most `vocab_size` pieces (specials included)
    /// from the given texts.
    pub fn train(texts: &[&str], vocab_size: usize) -> Result<Tokenizer> {
        let mut word_freq: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            for word in pretokenize(text) {
                *word_freq.entry(word).or_insert(0) += 1;
            }
        }
        if word_freq.is_empty() {
            return Err(CoreError::Argument("tokenizer training corpus is empty".into()));
        }

        let mut words: Vec<(Vec<String>, usize)> = word_freq
            .into_iter()
            .map(|(w, f)| (word_symbols(&w), f))
            .collect();

        let mut alphabet: BTreeMap<String, ()> = BTreeMap::new();
        for (symbols, _) in &words {
            for s in symbols {
                alphabet.entry(s.clone()).or_insert(());
            }
        }
        let base = SPECIAL_PIECES.len() + alphabet.len();
        if vocab_size < base {
            return Err(CoreError::Argument(format!(
                "vocab_size {vocab_size} below alphabet floor {base}"
            )));
        }

        let mut pieces: Vec<String> =
            SPECIAL_PIECES.iter().map(|(p, _)| p.to_string()).collect();
        pieces.extend(alphabet.keys().cloned());
        let mut merges: Vec<(String, String)> = Vec::new();

        while pieces.len() < vocab_size {
            let mut pair_freq: BTreeMap<(String, String), usize> = BTreeMap::new();
            for (symbols, freq) in &words {
                for pair in symbols.windows(2) {
                    *pair_freq
                        .entry((pair[0].clone(), pair[1].clone()))
                        .or_insert(0) += freq;
                }
            }
            // Most frequent pair; BTreeMap order makes ties lexicographic.
            let Some((best_pair, best_freq)) = pair_freq
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            else {
                break;
            };
            if best_freq < 2 {
                break;
            }
            let merged = format!("{}{}", best_pair.0, best_pair.1);
            for (symbols, _) in &mut words {
                apply_merge(symbols, &best_pair, &merged);
            }
            pieces.push(merged);
            merges.push(best_pair);
        }

        let mut tokenizer = Tokenizer {
            pieces,
            merges,
            piece_ids: HashMap::new(),
            merge_ranks: HashMap::new(),
        };
        tokenizer.rebuild_indexes();
        Ok(tokenizer)
    }

    /// Rebuild derived lookup maps (after deserialization or training).
    pub fn rebuild_indexes(&mut self) {
        self.piece_ids = self
            .pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i as u32))
            .collect();
        self.merge_ranks = self
            .merges
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    /// Content hash of the vocabulary and merge table.
    pub fn vocab_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.pieces {
            hasher.update((p.len() as u64).to_le_bytes());
            hasher.update(p.as_bytes());
        }
        for (a, b) in &self.merges {
            hasher.update((a.len() as u64).to_le_bytes());
            hasher.update(a.as_bytes());
            hasher.update((b.len() as u64).to_le_bytes());
            hasher.update(b.as_bytes());
        }
        hex(&hasher.finalize())
    }

    fn encode_word(&self, word: &str) -> Vec<u32> {
        let mut symbols = word_symbols(word);
        loop {
            let mut best: Option<(usize, usize)> = None; // (rank, position)
            for (pos, pair) in symbols.windows(2).enumerate() {
                if let Some(&rank) = self
                    .merge_ranks
                    .get(&(pair[0].clone(), pair[1].clone()))
                {
                    if best.is_none_or(|(r, _)| rank < r) {
                        best = Some((rank, pos));
                    }
                }
            }
            let Some((rank, _)) = best else { break };
            let (a, b) = self.merges[rank].clone();
            let merged = format!("{a}{b}");
            apply_merge(&mut symbols, &(a, b), &merged);
        }
        symbols
            .iter()
            .map(|s| self.piece_ids.get(s).copied().unwrap_or(UNK_ID))
            .collect()
    }

    /// Encode text to token ids (no BOS/EOS framing; callers add those).
    pub fn encode(&self, text: &str) -> Vec<u32> {
        pretokenize(text)
            .iter()
            .flat_map(|w| self.encode_word(w))
            .collect()
    }

    /// Decode ids to text; special tokens are skipped.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            if is_special(id) {
                continue;
            }
            let Some(piece) = self.piece(id) else { continue };
            match piece.strip_suffix(END_OF_WORD) {
                Some(stem) => {
                    out.push_str(stem);
                    out.push(' ');
                }
                None => out.push_str(piece),
            }
        }
        out.trim_end().to_string()
    }
}

/// Replace each adjacent occurrence of `pair` in `symbols` with `merged`.
fn apply_merge(symbols: &mut Vec<String>, pair: &(String, String), merged: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            symbols[i] = merged.to_string();
            symbols.remove(i + 1);
        } else {
            i += 1;
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
