use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const PAD: &str = "<pad>";
const UNK: &str = "<unk>";

/// Token ↔ id map. Ids 0 and 1 are reserved for padding and unknown tokens;
/// kept tokens follow in order of decreasing frequency, ties lexicographic.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    min_freq: usize,
}

impl Vocabulary {
    pub fn build<'a, I, D>(docs: I, min_freq: usize) -> Result<Self>
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = &'a String>,
    {
        if min_freq == 0 {
            return Err(Error::invalid("min_freq must be at least 1"));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut seen_any = false;
        for doc in docs {
            for tok in doc {
                seen_any = true;
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        if !seen_any {
            return Err(Error::Empty("vocabulary corpus"));
        }
        let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_freq).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = [PAD, UNK].into_iter().chain(kept.into_iter().map(|(t, _)| t)).map(String::from).collect();
        Ok(Self::from_tokens(tokens, min_freq))
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>, min_freq: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { index, tokens, min_freq }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied().filter(|&i| i > UNK_ID)
    }

    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(words: &[&str]) -> Vec<Vec<String>> {
        vec![words.iter().map(|s| s.to_string()).collect()]
    }

    #[test]
    fn frequency_filter() {
        let d = docs(&["a", "b", "a", "a"]);
        let v = Vocabulary::build(&d, 2).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a"]);
        let v = Vocabulary::build(&d, 1).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a", "b"]);
        assert_eq!(v.id("zzz"), UNK_ID);
        assert_eq!(v.id("b"), 3);
    }

    #[test]
    fn ties_are_lexicographic() {
        let d = docs(&["c", "b", "a", "b", "c", "a"]);
        let v = Vocabulary::build(&d, 1).unwrap();
        assert_eq!(&v.tokens()[2..], &["a", "b", "c"]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let d: Vec<Vec<String>> = vec![vec![]];
        assert!(Vocabulary::build(&d, 1).is_err());
    }

    #[test]
    fn reserved_tokens_are_not_matched_as_text() {
        let v = Vocabulary::build(&docs(&["x"]), 1).unwrap();
        assert_eq!(v.id("<pad>"), UNK_ID);
    }
}
