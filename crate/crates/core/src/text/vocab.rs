use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tokenize::{tokenize, BOS, EOS, PAD, SPECIALS};
use crate::error::{Error, Result};
use crate::fsutil;

/// Token/id bijection with the special markers at ids 0..6.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const CLS_ID: usize = 2;
    pub const SEP_ID: usize = 3;
    pub const BOS_ID: usize = 4;
    pub const EOS_ID: usize = 5;

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(t, s)| t != s) {
            return Err(Error::invalid(format!("vocabulary must start with {SPECIALS:?}")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Keeps the `max_size - 6` most frequent tokens, ties broken
    /// lexicographically.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Self> {
        if max_size <= SPECIALS.len() {
            return Err(Error::invalid(format!(
                "max vocabulary size {max_size} leaves no room beyond {} special tokens",
                SPECIALS.len()
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            for t in tokenize(text) {
                if !SPECIALS.contains(&t.text.as_str()) {
                    *counts.entry(t.text).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - SPECIALS.len());
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Total: unknown tokens map to `[UNK]`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text)
            .into_iter()
            .map(|t| self.id(&t.text).unwrap_or(Self::UNK_ID))
            .collect()
    }

    /// Drops `[PAD]`, `[BOS]` and `[EOS]`; everything else, `[SEP]`
    /// included, is written literally.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut parts = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self
                .token(id)
                .ok_or_else(|| Error::invalid(format!("token id {id} outside vocabulary of {}", self.len())))?;
            if tok != PAD && tok != BOS && tok != EOS {
                parts.push(tok);
            }
        }
        Ok(parts.join(" "))
    }

    /// SHA-256 over the tokens in id order, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(&self.tokens).expect("tokens serialize");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fsutil::read_to_string(path)?;
        let tokens: Vec<String> = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        Self::from_tokens(tokens)
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize::normalize;

    #[test]
    fn frequency_then_lexicographic() {
        let v = Vocabulary::build(["a b", "a"], 8).unwrap();
        assert_eq!(v.len(), 8);
        assert!(v.id("a").unwrap() < v.id("b").unwrap());
        let v = Vocabulary::build(["c b a"], 8).unwrap();
        assert_eq!(&v.tokens()[6..], ["a", "b"]);
    }

    #[test]
    fn too_small_is_error_and_empty_corpus_is_not() {
        assert!(Vocabulary::build(["a"], 6).is_err());
        let v = Vocabulary::build(std::iter::empty(), 10).unwrap();
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn encode_decode() {
        let v = Vocabulary::build(["what is gdp ?"], 20).unwrap();
        let ids = v.encode("What is GDP");
        assert_eq!(ids, vec![v.id("what").unwrap(), v.id("is").unwrap(), v.id("gdp").unwrap()]);
        assert!(v.encode("what is rust").contains(&Vocabulary::UNK_ID));
        assert_eq!(v.decode(&v.encode("What is  GDP?")).unwrap(), normalize("What is  GDP?"));
        let with_marks = [Vocabulary::BOS_ID, v.id("gdp").unwrap(), Vocabulary::SEP_ID, Vocabulary::EOS_ID, 0];
        assert_eq!(v.decode(&with_marks).unwrap(), "gdp [SEP]");
        assert!(v.decode(&[99]).is_err());
    }

    #[test]
    fn json_round_trip_and_hash() {
        let v = Vocabulary::build(["x y z"], 20).unwrap();
        let back: Vocabulary = serde_json::from_str(&v.to_json()).unwrap();
        assert_eq!(back, v);
        assert_eq!(v.hash().len(), 64);
        assert_ne!(v.hash(), Vocabulary::build(["x y"], 20).unwrap().hash());
        assert!(serde_json::from_str::<Vocabulary>("[\"a\"]").is_err());
    }
}
