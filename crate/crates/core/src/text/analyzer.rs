//! Term analysis for the retrieval index.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rust_stemmers::{Algorithm, Stemmer};

use super::tokenize::{tokenize, TokenKind};
use crate::error::Result;
use crate::fsutil;

/// The shipped English stopword list.
pub const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords.txt");

pub struct Analyzer {
    stopwords: HashSet<String>,
    stemmer: Option<Stemmer>,
}

impl fmt::Debug for Analyzer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Analyzer")
            .field("stopwords", &self.stopwords.len())
            .field("stem", &self.stemmer.is_some())
            .finish()
    }
}

impl Default for Analyzer {
    fn default() -> Self {
        Analyzer::new(parse_stopwords(DEFAULT_STOPWORDS), false)
    }
}

pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

impl Analyzer {
    pub fn new(stopwords: HashSet<String>, stem: bool) -> Self {
        Analyzer {
            stopwords,
            stemmer: stem.then(|| Stemmer::create(Algorithm::English)),
        }
    }

    /// Default list replaced by the newline-separated file at `path`.
    pub fn from_file(path: &Path, stem: bool) -> Result<Self> {
        Ok(Analyzer::new(parse_stopwords(&fsutil::read_to_string(path)?), stem))
    }

    pub fn stems(&self) -> bool {
        self.stemmer.is_some()
    }

    /// Stopwords sorted, one per line.
    pub fn stopwords_text(&self) -> String {
        let mut words: Vec<&str> = self.stopwords.iter().map(String::as_str).collect();
        words.sort_unstable();
        let mut s = words.join("\n");
        s.push('\n');
        s
    }

    pub fn is_stopword(&self, word: &str) -> bool {
        self.stopwords.contains(word)
    }

    /// Lowercased word terms with punctuation, markers and stopwords removed.
    pub fn analyze(&self, text: &str) -> Vec<String> {
        tokenize(text)
            .into_iter()
            .filter(|t| t.kind == TokenKind::Word && !self.stopwords.contains(&t.text))
            .map(|t| match &self.stemmer {
                Some(s) => s.stem(&t.text).into_owned(),
                None => t.text,
            })
            .collect()
    }
}
