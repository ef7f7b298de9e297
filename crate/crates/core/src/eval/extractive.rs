//! Answer quality: SQuAD-style exact match and token F1, and No-Answer
//! accuracy.

use std::collections::HashMap;

use serde::Serialize;

/// Lowercase, drop ASCII punctuation and the articles a/an/the, split on
/// whitespace.
pub fn normalize_answer(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    cleaned
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .map(str::to_string)
        .collect()
}

/// `None` is No-Answer: two No-Answers match, one alone does not.
pub fn answer_em(prediction: Option<&str>, gold: Option<&str>) -> f64 {
    match (prediction, gold) {
        (None, None) => 1.0,
        (Some(p), Some(g)) if normalize_answer(p) == normalize_answer(g) => 1.0,
        _ => 0.0,
    }
}

pub fn answer_f1(prediction: Option<&str>, gold: Option<&str>) -> f64 {
    let (p, g) = match (prediction, gold) {
        (None, None) => return 1.0,
        (Some(p), Some(g)) => (normalize_answer(p), normalize_answer(g)),
        _ => return 0.0,
    };
    if p.is_empty() || g.is_empty() {
        return if p == g { 1.0 } else { 0.0 };
    }
    let mut gc: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *gc.entry(t).or_insert(0) += 1;
    }
    let mut common = 0;
    for t in &p {
        if let Some(n) = gc.get_mut(t.as_str()) {
            if *n > 0 {
                *n -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnswerScore {
    pub key: String,
    pub em: f64,
    pub f1: f64,
    pub unanswerable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractiveEval {
    pub em: f64,
    pub f1: f64,
    /// Share of unanswerable questions predicted as No-Answer; `None` when
    /// there are none.
    pub na_acc: Option<f64>,
    pub questions: usize,
    pub unanswerable: usize,
    pub per_question: Vec<AnswerScore>,
}

/// `items` are `(key, prediction, gold)` triples.
pub fn evaluate_answers(items: &[(String, Option<String>, Option<String>)]) -> ExtractiveEval {
    let per_question: Vec<AnswerScore> = items
        .iter()
        .map(|(k, p, g)| AnswerScore {
            key: k.clone(),
            em: answer_em(p.as_deref(), g.as_deref()),
            f1: answer_f1(p.as_deref(), g.as_deref()),
            unanswerable: g.is_none(),
        })
        .collect();
    let n = per_question.len();
    let mean = |f: &dyn Fn(&AnswerScore) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_question.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let na: Vec<&AnswerScore> = per_question.iter().filter(|s| s.unanswerable).collect();
    let na_acc = (!na.is_empty()).then(|| na.iter().map(|s| s.em).sum::<f64>() / na.len() as f64);
    ExtractiveEval {
        em: mean(&|s| s.em),
        f1: mean(&|s| s.f1),
        na_acc,
        questions: n,
        unanswerable: na.len(),
        per_question,
    }
}
