//! Rewrite quality: ROUGE-1 recall, exact match and embedding similarity.

use std::collections::HashMap;

use serde::Serialize;

use crate::text::{tokenize, words, TokenKind, Vocabulary};

fn counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

/// Clipped unigram overlap over the reference length, on lowercased words
/// with punctuation removed. An empty reference scores 1 against an empty
/// candidate and 0 otherwise.
pub fn rouge1_recall(candidate: &str, reference: &str) -> f64 {
    let (c, r) = (words(candidate), words(reference));
    if r.is_empty() {
        return if c.is_empty() { 1.0 } else { 0.0 };
    }
    let cc = counts(&c);
    let overlap: usize = counts(&r)
        .iter()
        .map(|(t, &n)| n.min(cc.get(t).copied().unwrap_or(0)))
        .sum();
    overlap as f64 / r.len() as f64
}

/// Equality under the ROUGE normalizer.
pub fn rewrite_exact_match(candidate: &str, reference: &str) -> f64 {
    if words(candidate) == words(reference) {
        1.0
    } else {
        0.0
    }
}

pub trait Embedder {
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// L2-normalized word counts over a vocabulary; out-of-vocabulary words are
/// ignored.
#[derive(Debug, Clone)]
pub struct BagOfWords {
    vocab: Vocabulary,
}

impl BagOfWords {
    pub fn new(vocab: Vocabulary) -> Self {
        BagOfWords { vocab }
    }

    /// Vocabulary covering every word of `texts`.
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        BagOfWords::new(Vocabulary::build(texts, usize::MAX).expect("unbounded size"))
    }
}

impl Embedder for BagOfWords {
    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.vocab.len()];
        for t in tokenize(text).into_iter().filter(|t| t.kind == TokenKind::Word) {
            if let Some(id) = self.vocab.id(&t.text) {
                v[id] += 1.0;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

/// Cosine of the two embeddings; 0 when either is the zero vector.
pub fn similarity(candidate: &str, reference: &str, embedder: &dyn Embedder) -> f64 {
    let (a, b) = (embedder.embed(candidate), embedder.embed(reference));
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewriteEval {
    pub rouge1_recall: f64,
    pub exact_match: f64,
    pub similarity: Option<f64>,
}

pub fn evaluate_rewrite(candidate: &str, reference: &str, embedder: Option<&dyn Embedder>) -> RewriteEval {
    RewriteEval {
        rouge1_recall: rouge1_recall(candidate, reference),
        exact_match: rewrite_exact_match(candidate, reference),
        similarity: embedder.map(|e| similarity(candidate, reference, e)),
    }
}
