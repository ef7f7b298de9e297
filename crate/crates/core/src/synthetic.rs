//! Generated conversational corpus with a known answer structure.
//!
//! Every passage states one attribute of one invented entity. A dialogue
//! asks about one entity: the first question names it, later questions
//! refer back with "its" and the like. Human rewrites name the entity, so
//! each rewrite shares exactly two content terms with its gold passage and
//! at most one with any other passage.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{query_id, AnswerSpan, Dialogue, Passage, Qrels, Turn};
use crate::error::{Error, Result};

pub const ATTRIBUTES: [&str; 8] = [
    "population", "climate", "river", "founder", "currency", "anthem", "harbor", "festival",
];

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

const FOLLOW_UPS: [&str; 3] = ["what is its {a}?", "and its {a}?", "what about the {a}?"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub entities: usize,
    /// Attributes per entity, at most 8.
    pub attributes: usize,
    pub train_dialogues: usize,
    pub test_dialogues: usize,
    pub turns: usize,
    /// Test dialogues about entities that never occur in training dialogues.
    pub unseen_test_dialogues: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            entities: 40,
            attributes: 5,
            train_dialogues: 240,
            test_dialogues: 20,
            turns: 4,
            unseen_test_dialogues: 4,
            seed: 13,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub passages: Vec<Passage>,
    pub train: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
    /// Gold passage of every turn in both splits, grade 2.
    pub qrels: Qrels,
}

fn name(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables)
        .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
        .collect::<String>()
        + ONSETS.choose(rng).unwrap()
}

fn unique_names(rng: &mut ChaCha8Rng, n: usize, syllables: usize, taken: &mut std::collections::HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = name(rng, syllables);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

pub fn passage_id(entity: usize, attribute: usize) -> String {
    format!("e{entity:03}-{}", ATTRIBUTES[attribute])
}

fn passage_text(entity: &str, attribute: &str, value: &str) -> (String, usize, usize) {
    let prefix = format!("The {attribute} of {} is ", capitalize(entity));
    let start = prefix.chars().count();
    let end = start + value.chars().count();
    (format!("{prefix}{value}."), start, end)
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

fn explicit(attribute: &str, entity: &str) -> String {
    format!("what is the {attribute} of {}?", capitalize(entity))
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if cfg.attributes == 0 || cfg.attributes > ATTRIBUTES.len() || cfg.turns == 0 || cfg.turns > cfg.attributes {
        return Err(Error::Config(format!(
            "synthetic corpus needs 1 <= turns <= attributes <= {}",
            ATTRIBUTES.len()
        )));
    }
    if cfg.unseen_test_dialogues > cfg.test_dialogues || cfg.unseen_test_dialogues >= cfg.entities {
        return Err(Error::Config("too many unseen test dialogues".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut taken = std::collections::HashSet::new();
    let entities = unique_names(&mut rng, cfg.entities, 3, &mut taken);
    let values = unique_names(&mut rng, cfg.entities * cfg.attributes, 2, &mut taken);

    let mut passages = Vec::new();
    let mut spans = Vec::new();
    for (e, ent) in entities.iter().enumerate() {
        for a in 0..cfg.attributes {
            let value = &values[e * cfg.attributes + a];
            let (text, start, end) = passage_text(ent, ATTRIBUTES[a], value);
            passages.push(Passage::new(passage_id(e, a), text));
            spans.push((value.clone(), start, end));
        }
    }

    // The last `unseen_test_dialogues` entities are reserved for testing.
    let seen = cfg.entities - cfg.unseen_test_dialogues;
    let mut qrels = Qrels::new();
    let mut make = |rng: &mut ChaCha8Rng, topic: String, e: usize| -> Dialogue {
        let mut attrs: Vec<usize> = (0..cfg.attributes).collect();
        attrs.shuffle(rng);
        let turns = attrs[..cfg.turns]
            .iter()
            .enumerate()
            .map(|(t, &a)| {
                let attr = ATTRIBUTES[a];
                let rewrite = explicit(attr, &entities[e]);
                let question = if t == 0 {
                    rewrite.clone()
                } else {
                    FOLLOW_UPS[rng.random_range(0..FOLLOW_UPS.len())].replace("{a}", attr)
                };
                let (value, start, end) = &spans[e * cfg.attributes + a];
                let pid = passage_id(e, a);
                qrels
                    .insert(&query_id(&topic, t as u32 + 1), &pid, 2)
                    .expect("fresh query");
                Turn {
                    turn_id: t as u32 + 1,
                    question,
                    rewrite: Some(rewrite),
                    answer_text: Some(value.clone()),
                    answer_span: Some(AnswerSpan {
                        passage_id: pid,
                        start: *start,
                        end: *end,
                    }),
                    answerable: true,
                }
            })
            .collect();
        Dialogue { topic_id: topic, turns }
    };

    let train = (0..cfg.train_dialogues)
        .map(|i| {
            let e = i % seen;
            make(&mut rng, format!("train{i:04}"), e)
        })
        .collect();
    let test = (0..cfg.test_dialogues)
        .map(|i| {
            let held = cfg.test_dialogues - cfg.unseen_test_dialogues;
            let e = if i < held { rng.random_range(0..seen) } else { seen + (i - held) };
            make(&mut rng, format!("test{i:03}"), e)
        })
        .collect();
    Ok(SyntheticCorpus {
        passages,
        train,
        test,
        qrels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{InvertedIndex, RetrievalConfig};
    use crate::text::Analyzer;

    #[test]
    fn shape_and_determinism() {
        let cfg = SyntheticConfig::default();
        let c = generate(&cfg).unwrap();
        assert_eq!(c.passages.len(), 200);
        assert_eq!(c.test.len(), 20);
        assert!(c.test.iter().all(|d| d.turns.len() == 4));
        let again = generate(&cfg).unwrap();
        assert_eq!(c.test, again.test);
        assert_eq!(c.passages, again.passages);
    }

    #[test]
    fn spans_point_at_values() {
        let c = generate(&SyntheticConfig::default()).unwrap();
        let t = &c.test[0].turns[1];
        let s = t.answer_span.as_ref().unwrap();
        let p = c.passages.iter().find(|p| p.passage_id == s.passage_id).unwrap();
        let got: String = p.text.chars().skip(s.start).take(s.end - s.start).collect();
        assert_eq!(Some(got), t.answer_text);
    }

    #[test]
    fn human_rewrites_rank_gold_first() {
        let c = generate(&SyntheticConfig::default()).unwrap();
        let idx = InvertedIndex::build(c.passages.iter().cloned().map(Ok), Analyzer::default()).unwrap();
        for d in c.test.iter().chain(&c.train[..20]) {
            for t in &d.turns {
                let hits = idx.retrieve(t.rewrite.as_ref().unwrap(), &RetrievalConfig::default());
                assert_eq!(hits[0].0, t.answer_span.as_ref().unwrap().passage_id);
                assert!(hits.len() < 2 || hits[1].1 < hits[0].1);
            }
        }
    }
}
