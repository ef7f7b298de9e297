//! Non-neural rewriting baselines.

use std::collections::HashSet;

use crate::data::Dialogue;
use crate::retrieval::InvertedIndex;

pub const DEFAULT_IDF_THRESHOLD: f64 = 0.0001;

pub fn baseline_original(dialogue: &Dialogue, turn_index: usize) -> String {
    dialogue.turns[turn_index].question.clone()
}

fn previous(dialogue: &Dialogue, turn_index: usize, k: usize) -> &[crate::data::Turn] {
    &dialogue.turns[turn_index.saturating_sub(k)..turn_index]
}

/// The previous `k` questions and the current one, joined by `[SEP]`.
pub fn baseline_kdt(dialogue: &Dialogue, turn_index: usize, k: usize) -> String {
    previous(dialogue, turn_index, k)
        .iter()
        .map(|t| t.question.as_str())
        .chain(std::iter::once(dialogue.turns[turn_index].question.as_str()))
        .collect::<Vec<_>>()
        .join(" [SEP] ")
}

/// The current question followed by the analyzed terms of the previous `k`
/// questions whose IDF exceeds `idf_threshold`, first occurrence order,
/// skipping terms the current question already has.
pub fn baseline_kdt_star(
    dialogue: &Dialogue,
    turn_index: usize,
    k: usize,
    index: &InvertedIndex,
    idf_threshold: f64,
) -> String {
    let current = &dialogue.turns[turn_index].question;
    let analyzer = index.analyzer();
    let mut seen: HashSet<String> = analyzer.analyze(current).into_iter().collect();
    let mut extra = Vec::new();
    for t in previous(dialogue, turn_index, k) {
        for term in analyzer.analyze(&t.question) {
            if index.idf(&term) > idf_threshold && seen.insert(term.clone()) {
                extra.push(term);
            }
        }
    }
    if extra.is_empty() {
        current.clone()
    } else {
        format!("{current} {}", extra.join(" "))
    }
}
