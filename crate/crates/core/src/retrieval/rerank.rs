use crate::data::RankedList;
use crate::error::{Error, Result};

/// Relevance of a passage to a question, in `[0, 1]`.
pub trait Scorer {
    fn score(&self, question: &str, passage: &str) -> Result<f64>;

    /// Scores many passages for one question. The default calls
    /// [`Scorer::score`] in order.
    fn score_all(&self, question: &str, passages: &[&str]) -> Result<Vec<f64>> {
        passages.iter().map(|p| self.score(question, p)).collect()
    }
}

impl<F> Scorer for F
where
    F: Fn(&str, &str) -> f64,
{
    fn score(&self, question: &str, passage: &str) -> Result<f64> {
        Ok(self(question, passage))
    }
}

/// Reorders `list` by scorer output, highest first, ties keeping the prior
/// rank. Ranks are reassigned from 1 and the tag replaced.
pub fn rerank<'a>(
    question: &str,
    list: &RankedList,
    scorer: &dyn Scorer,
    text_of: impl Fn(&str) -> Option<&'a str>,
    tag: &str,
) -> Result<RankedList> {
    let texts: Vec<&str> = list
        .entries
        .iter()
        .map(|e| {
            text_of(&e.passage_id).ok_or_else(|| {
                Error::invalid(format!("{}: passage `{}` has no text", list.query_id, e.passage_id))
            })
        })
        .collect::<Result<_>>()?;
    let scores = scorer.score_all(question, &texts)?;
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::invalid(format!("re-ranker score {bad} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..list.entries.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let scored = order
        .into_iter()
        .map(|i| (list.entries[i].passage_id.clone(), scores[i]))
        .collect();
    Ok(RankedList::from_scored(list.query_id.clone(), tag, scored))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list() -> RankedList {
        RankedList::from_scored(
            "q",
            "bm25",
            vec![("a".into(), 3.0), ("b".into(), 2.0), ("gold".into(), 1.0)],
        )
    }

    fn text(p: &str) -> Option<&'static str> {
        match p {
            "a" => Some("nothing here"),
            "b" => Some("still nothing"),
            "gold" => Some("the MARKER passage"),
            _ => None,
        }
    }

    fn ids(l: &RankedList) -> Vec<&str> {
        l.passage_ids().collect()
    }

    #[test]
    fn constant_scorer_keeps_order() {
        let out = rerank("q", &list(), &|_: &str, _: &str| 0.5, text, "ce").unwrap();
        assert_eq!(ids(&out), ["a", "b", "gold"]);
        assert_eq!(out.tag, "ce");
        assert_eq!(out.entries[2].rank, 3);
    }

    #[test]
    fn marker_scorer_promotes_gold() {
        let s = |_: &str, p: &str| if p.contains("MARKER") { 1.0 } else { 0.0 };
        let out = rerank("q", &list(), &s, text, "ce").unwrap();
        assert_eq!(ids(&out), ["gold", "a", "b"]);
    }

    #[test]
    fn errors() {
        let mut l = list();
        l.entries[0].passage_id = "missing".into();
        assert!(rerank("q", &l, &|_: &str, _: &str| 0.5, text, "ce").is_err());
        assert!(rerank("q", &list(), &|_: &str, _: &str| 2.0, text, "ce").is_err());
    }
}
