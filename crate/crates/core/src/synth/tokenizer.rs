//! Word-level tokenizer for report text.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub const UNK: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
const SPECIALS: [&str; 3] = ["<unk>", "<bos>", "<eos>"];

/// Lowercase, then split on whitespace; every other non-alphanumeric
/// character becomes its own word.
pub fn split_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
        } else if ch.is_alphanumeric() || ch == '_' {
            cur.push(ch);
        } else {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
            words.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

/// Canonical surface form: words joined by single spaces.
pub fn normalize_text(text: &str) -> String {
    split_words(text).join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Specials followed by the sorted set of words in `texts`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts.into_iter().flat_map(split_words).collect();
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().filter(|w| !SPECIALS.contains(&w.as_str())))
            .collect::<Vec<_>>();
        tokens.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or(SPECIALS[0])
    }

    /// `[BOS, w1, .., wn, EOS]`.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        std::iter::once(BOS)
            .chain(split_words(text).iter().map(|w| self.id(w)))
            .chain(std::iter::once(EOS))
            .collect()
    }

    /// Inverse of [`Vocabulary::tokenize`] on in-vocabulary text; sentinels are dropped.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&i| i != BOS && i != EOS)
            .map(|&i| self.word(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_sentinels_only() {
        let v = Vocabulary::from_texts(["a b"]);
        assert_eq!(v.tokenize(""), vec![BOS, EOS]);
    }

    #[test]
    fn round_trip_normalizes() {
        let s = "The liver shows NORMAL uptake.";
        let v = Vocabulary::from_texts([s]);
        assert_eq!(v.detokenize(&v.tokenize(s)), normalize_text(s));
        assert_eq!(normalize_text(s), "the liver shows normal uptake .");
    }

    #[test]
    fn unknown_word_is_single_unk() {
        let v = Vocabulary::from_texts(["the liver"]);
        let ids = v.tokenize("the spleen");
        assert_eq!(ids, vec![BOS, v.id("the"), UNK, EOS]);
    }

    #[test]
    fn cjk_and_punctuation() {
        assert_eq!(split_words("肝脏 摄取 增高。"), vec!["肝脏", "摄取", "增高", "。"]);
    }
}
