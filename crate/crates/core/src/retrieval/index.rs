//! In-memory inverted index with BM25 scoring.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Passage;
use crate::error::{Error, Result};
use crate::text::Analyzer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k1: f64,
    pub b: f64,
    pub top_k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k1: 0.82,
            b: 0.68,
            top_k: 1000,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0) || !(0.0..=1.0).contains(&self.b) || self.top_k == 0 {
            return Err(Error::Config(format!(
                "retrieval needs k1 >= 0, 0 <= b <= 1, top_k >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// Postings entry: internal document number and term frequency.
pub type Posting = (u32, u32);

/// Documents are numbered in ascending passage id order, so postings sorted
/// by document number are also sorted by passage id.
#[derive(Debug)]
pub struct InvertedIndex {
    pub(crate) passage_ids: Vec<String>,
    pub(crate) texts: Vec<String>,
    pub(crate) doc_len: Vec<u32>,
    pub(crate) postings: BTreeMap<String, Vec<Posting>>,
    pub(crate) total_terms: u64,
    pub(crate) analyzer: Analyzer,
    doc_index: HashMap<String, u32>,
}

impl InvertedIndex {
    pub fn build(passages: impl IntoIterator<Item = Result<Passage>>, analyzer: Analyzer) -> Result<Self> {
        let mut docs: Vec<Passage> = passages.into_iter().collect::<Result<_>>()?;
        docs.sort_by(|a, b| a.passage_id.cmp(&b.passage_id));
        if let Some(w) = docs.windows(2).find(|w| w[0].passage_id == w[1].passage_id) {
            return Err(Error::invalid(format!("duplicate passage id `{}`", w[0].passage_id)));
        }
        let analyzed: Vec<Vec<String>> = docs.par_iter().map(|p| analyzer.analyze(&p.text)).collect();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_len = Vec::with_capacity(docs.len());
        for (doc, terms) in analyzed.iter().enumerate() {
            doc_len.push(terms.len() as u32);
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (t, f) in tf {
                postings.entry(t.to_string()).or_default().push((doc as u32, f));
            }
        }
        let (passage_ids, texts) = docs.into_iter().map(|p| (p.passage_id, p.text)).unzip();
        Ok(Self::from_parts(passage_ids, texts, doc_len, postings, analyzer))
    }

    pub(crate) fn from_parts(
        passage_ids: Vec<String>,
        texts: Vec<String>,
        doc_len: Vec<u32>,
        postings: BTreeMap<String, Vec<Posting>>,
        analyzer: Analyzer,
    ) -> Self {
        let doc_index = passage_ids.iter().enumerate().map(|(i, p)| (p.clone(), i as u32)).collect();
        let total_terms = doc_len.iter().map(|&l| l as u64).sum();
        InvertedIndex {
            passage_ids,
            texts,
            doc_len,
            postings,
            total_terms,
            analyzer,
            doc_index,
        }
    }

    pub fn num_docs(&self) -> usize {
        self.passage_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        if self.passage_ids.is_empty() {
            0.0
        } else {
            self.total_terms as f64 / self.passage_ids.len() as f64
        }
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    pub fn passage_ids(&self) -> &[String] {
        &self.passage_ids
    }

    pub fn doc_length(&self, passage_id: &str) -> Option<u32> {
        self.doc_index.get(passage_id).map(|&d| self.doc_len[d as usize])
    }

    pub fn text(&self, passage_id: &str) -> Option<&str> {
        self.doc_index.get(passage_id).map(|&d| self.texts[d as usize].as_str())
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`.
    pub fn idf(&self, term: &str) -> f64 {
        bm25_idf(self.num_docs(), self.df(term))
    }

    fn term_weight(&self, idf: f64, tf: u32, dl: u32, cfg: &RetrievalConfig) -> f64 {
        bm25_term(idf, tf as f64, dl as f64, self.avgdl(), cfg)
    }

    /// BM25 of an analyzed query against one passage. Repeated query terms
    /// contribute once per occurrence.
    pub fn bm25_score(&self, query_terms: &[String], passage_id: &str, cfg: &RetrievalConfig) -> Result<f64> {
        let doc = *self
            .doc_index
            .get(passage_id)
            .ok_or_else(|| Error::invalid(format!("passage `{passage_id}` is not in the index")))?;
        let dl = self.doc_len[doc as usize];
        let mut score = 0.0;
        for t in query_terms {
            let p = self.postings(t);
            if let Ok(i) = p.binary_search_by_key(&doc, |&(d, _)| d) {
                score += self.term_weight(self.idf(t), p[i].1, dl, cfg);
            }
        }
        Ok(score)
    }

    /// Passages with positive score, best first, ties by ascending passage
    /// id, at most `top_k`.
    pub fn retrieve_terms(&self, query_terms: &[String], cfg: &RetrievalConfig) -> Vec<(String, f64)> {
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for t in query_terms {
            let idf = self.idf(t);
            for &(doc, tf) in self.postings(t) {
                *acc.entry(doc).or_default() += self.term_weight(idf, tf, self.doc_len[doc as usize], cfg);
            }
        }
        let mut hits: Vec<(u32, f64)> = acc.into_iter().filter(|&(_, s)| s > 0.0).collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(cfg.top_k);
        hits.into_iter()
            .map(|(d, s)| (self.passage_ids[d as usize].clone(), s))
            .collect()
    }

    pub fn retrieve(&self, question: &str, cfg: &RetrievalConfig) -> Vec<(String, f64)> {
        self.retrieve_terms(&self.analyzer.analyze(question), cfg)
    }
}

pub fn bm25_idf(n: usize, df: usize) -> f64 {
    let (n, df) = (n as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

pub fn bm25_term(idf: f64, tf: f64, dl: f64, avgdl: f64, cfg: &RetrievalConfig) -> f64 {
    let norm = if avgdl > 0.0 { dl / avgdl } else { 0.0 };
    idf * tf * (cfg.k1 + 1.0) / (tf + cfg.k1 * (1.0 - cfg.b + cfg.b * norm))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> InvertedIndex {
        let ps = vec![
            Passage::new("p2", "xi'an has a large gdp"),
            Passage::new("p1", "the city of xi'an xi'an"),
            Passage::new("p3", "gdp of shaanxi"),
        ];
        InvertedIndex::build(ps.into_iter().map(Ok), Analyzer::default()).unwrap()
    }

    #[test]
    fn hand_counts() {
        let idx = toy();
        assert_eq!(idx.passage_ids(), ["p1", "p2", "p3"]);
        assert_eq!(idx.df("xi'an"), 2);
        assert_eq!(idx.df("gdp"), 2);
        assert_eq!(idx.df("the"), 0);
        assert_eq!(idx.postings("xi'an"), &[(0, 2), (1, 1)]);
        assert_eq!(idx.doc_length("p1"), Some(3));
        assert_eq!(idx.doc_length("p2"), Some(3));
        assert!((idx.avgdl() - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_collection() {
        let idx = InvertedIndex::build(std::iter::empty(), Analyzer::default()).unwrap();
        assert_eq!(idx.num_docs(), 0);
        assert!(idx.retrieve("anything", &RetrievalConfig::default()).is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let ps = vec![Passage::new("a", "x"), Passage::new("a", "y")];
        assert!(InvertedIndex::build(ps.into_iter().map(Ok), Analyzer::default()).is_err());
    }

    #[test]
    fn no_shared_terms_scores_zero_and_unknown_passage_errors() {
        let idx = toy();
        let cfg = RetrievalConfig::default();
        assert_eq!(idx.bm25_score(&["rust".into()], "p1", &cfg).unwrap(), 0.0);
        assert!(idx.bm25_score(&["gdp".into()], "nope", &cfg).is_err());
    }

    #[test]
    fn top_k_truncates() {
        let idx = toy();
        let cfg = RetrievalConfig {
            top_k: 1,
            ..Default::default()
        };
        let hits = idx.retrieve("xi'an gdp", &cfg);
        assert_eq!(hits.len(), 1);
        assert_eq!(idx.retrieve("shaanxi", &RetrievalConfig::default())[0].0, "p3");
    }
}
