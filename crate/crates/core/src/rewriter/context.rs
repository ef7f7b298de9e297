//! Conversation context for the rewriter:
//! `[BOS] t1 [SEP] t2 [SEP] ... [SEP] current`.

use serde::{Deserialize, Serialize};

use crate::data::Dialogue;
use crate::error::{Error, Result};
use crate::text::Vocabulary;

pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteContext {
    /// Most recent last.
    pub previous_turns: Vec<String>,
    pub current_question: String,
    pub window: usize,
    pub include_answers: bool,
}

/// Where the history of a turn comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistoryMode {
    /// The rewrites generated for earlier turns.
    Recursive,
    /// Human rewrites of earlier turns.
    GoldHistory,
    /// Original questions of earlier turns.
    Original,
}

impl RewriteContext {
    /// Context of `dialogue.turns[turn_index]`. `history` supplies one text
    /// per earlier turn; the dialogue's answers are interleaved when
    /// `include_answers` is set.
    pub fn for_turn(
        dialogue: &Dialogue,
        turn_index: usize,
        history: &[String],
        window: usize,
        include_answers: bool,
    ) -> Result<Self> {
        let turn = dialogue
            .turns
            .get(turn_index)
            .ok_or_else(|| Error::invalid(format!("turn index {turn_index} out of range")))?;
        if history.len() < turn_index {
            return Err(Error::invalid(format!(
                "{} history items for turn index {turn_index}",
                history.len()
            )));
        }
        let previous_turns = dialogue.turns[..turn_index]
            .iter()
            .zip(history)
            .map(|(t, h)| match (&t.answer_text, include_answers) {
                (Some(a), true) => format!("{h} [SEP] {a}"),
                _ => h.clone(),
            })
            .collect();
        Ok(RewriteContext {
            previous_turns,
            current_question: turn.question.clone(),
            window,
            include_answers,
        })
    }

    /// The last `window` history items.
    pub fn windowed(&self) -> &[String] {
        let n = self.previous_turns.len();
        &self.previous_turns[n - self.window.min(n)..]
    }

    /// Token ids fitting in `budget`. History tokens are dropped oldest
    /// first; the current question is never cut.
    pub fn encode(&self, vocab: &Vocabulary, budget: usize) -> Result<Vec<usize>> {
        let current = vocab.encode(&self.current_question);
        if current.len() + 1 > budget {
            return Err(Error::invalid(format!(
                "question of {} tokens exceeds the {budget}-token context budget",
                current.len()
            )));
        }
        let mut history = Vec::new();
        for item in self.windowed() {
            history.extend(vocab.encode(item));
            history.push(Vocabulary::SEP_ID);
        }
        let room = budget - 1 - current.len();
        let cut = history.len().saturating_sub(room);
        let mut ids = Vec::with_capacity(budget);
        ids.push(Vocabulary::BOS_ID);
        ids.extend_from_slice(&history[cut..]);
        ids.extend(current);
        Ok(ids)
    }
}

/// `[BOS] + context` ids of a dialogue turn.
pub fn assemble_context(
    dialogue: &Dialogue,
    turn_index: usize,
    history: &[String],
    window: usize,
    include_answers: bool,
    vocab: &Vocabulary,
    budget: usize,
) -> Result<Vec<usize>> {
    RewriteContext::for_turn(dialogue, turn_index, history, window, include_answers)?.encode(vocab, budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Turn;

    fn dialogue(n: usize) -> Dialogue {
        Dialogue {
            topic_id: "t".into(),
            turns: (0..n).map(|i| Turn::new(i as u32, format!("q{i}"))).collect(),
        }
    }

    fn vocab() -> Vocabulary {
        Vocabulary::build(["q0 q1 q2 q3 q4 q5 q6 q7 a0"], 50).unwrap()
    }

    fn hist(d: &Dialogue, i: usize) -> Vec<String> {
        d.turns[..i].iter().map(|t| t.question.clone()).collect()
    }

    #[test]
    fn two_turns() {
        let d = dialogue(2);
        let v = vocab();
        let ids = assemble_context(&d, 1, &hist(&d, 1), 5, false, &v, 64).unwrap();
        assert_eq!(v.decode(&ids).unwrap(), "q0 [SEP] q1");
        assert_eq!(ids[0], Vocabulary::BOS_ID);
    }

    #[test]
    fn first_turn_has_no_history() {
        let d = dialogue(3);
        let v = vocab();
        let ids = assemble_context(&d, 0, &[], 5, false, &v, 64).unwrap();
        assert_eq!(ids, vec![Vocabulary::BOS_ID, v.id("q0").unwrap()]);
    }

    #[test]
    fn window_keeps_last_five() {
        let d = dialogue(8);
        let v = vocab();
        let ids = assemble_context(&d, 7, &hist(&d, 7), 5, false, &v, 64).unwrap();
        assert_eq!(v.decode(&ids).unwrap(), "q2 [SEP] q3 [SEP] q4 [SEP] q5 [SEP] q6 [SEP] q7");
    }

    #[test]
    fn truncation_drops_oldest_tokens() {
        let d = dialogue(4);
        let v = vocab();
        let ids = assemble_context(&d, 3, &hist(&d, 3), 5, false, &v, 5).unwrap();
        assert_eq!(v.decode(&ids).unwrap(), "[SEP] q2 [SEP] q3");
        assert!(assemble_context(&d, 3, &hist(&d, 3), 5, false, &v, 1).is_err());
    }

    #[test]
    fn answers_interleaved() {
        let mut d = dialogue(2);
        d.turns[0].answer_text = Some("a0".into());
        let v = vocab();
        let ids = assemble_context(&d, 1, &hist(&d, 1), 5, true, &v, 64).unwrap();
        assert_eq!(v.decode(&ids).unwrap(), "q0 [SEP] a0 [SEP] q1");
    }
}
