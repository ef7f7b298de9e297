//! `[CLS] question [SEP] passage` inputs for the bidirectional models.

use crate::error::{Error, Result};
use crate::text::{tokenize, Token, Vocabulary};

#[derive(Debug, Clone)]
pub struct PairInput {
    pub ids: Vec<usize>,
    /// Position of the first passage token; equals `ids.len()` when no
    /// passage token fits.
    pub passage_start: usize,
    /// Retained passage tokens with their char offsets.
    pub passage_tokens: Vec<Token>,
    /// Whether passage tokens were cut to fit `max_len`.
    pub truncated: bool,
}

impl PairInput {
    /// Inclusive range of passage positions, if any.
    pub fn passage_region(&self) -> Option<(usize, usize)> {
        (self.passage_start < self.ids.len()).then(|| (self.passage_start, self.ids.len() - 1))
    }
}

/// Passage tokens are cut from the end to fit; question tokens never are.
pub fn encode_pair(vocab: &Vocabulary, question: &str, passage: &str, max_len: usize) -> Result<PairInput> {
    let q = vocab.encode(question);
    if q.len() + 2 > max_len {
        return Err(Error::invalid(format!(
            "question of {} tokens does not fit a {max_len}-token input",
            q.len()
        )));
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(Vocabulary::CLS_ID);
    ids.extend(q);
    ids.push(Vocabulary::SEP_ID);
    let passage_start = ids.len();
    let mut tokens = tokenize(passage);
    let room = max_len - passage_start;
    let truncated = tokens.len() > room;
    tokens.truncate(room);
    ids.extend(tokens.iter().map(|t| vocab.id(&t.text).unwrap_or(Vocabulary::UNK_ID)));
    Ok(PairInput {
        ids,
        passage_start,
        passage_tokens: tokens,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_truncation() {
        let v = Vocabulary::build(["a b c d e"], 20).unwrap();
        let p = encode_pair(&v, "a b", "c d e", 6).unwrap();
        assert_eq!(p.ids[0], Vocabulary::CLS_ID);
        assert_eq!(p.ids[3], Vocabulary::SEP_ID);
        assert_eq!(p.passage_region(), Some((4, 5)));
        assert!(p.truncated);
        assert_eq!(p.passage_tokens.len(), 2);
        let q = encode_pair(&v, "a b", "", 6).unwrap();
        assert_eq!(q.passage_region(), None);
        assert!(encode_pair(&v, "a b c d e", "", 6).is_err());
    }
}
