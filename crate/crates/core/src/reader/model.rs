//! Extractive reader: start and end distributions over `[CLS]` and the
//! passage tokens of a `[CLS] question [SEP] passage` input.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use qrqa_neural::transformer::DEFAULT_INIT_STD;
use qrqa_neural::{encoder_forward, init_transformer, restore_into, Graph, Mask, NodeId, ParameterStore, TransformerConfig};

use super::span::{predict_span, SpanChoice};
use crate::error::{Error, Result};
use crate::model_io::{load_model, save_model};
use crate::pair::{encode_pair, PairInput};
use crate::text::Vocabulary;
use crate::train::{train_loop, ExampleLoss, TrainConfig, TrainReport};

pub const MODULE_TAG: &str = "reader";
pub const DEFAULT_MAX_SPAN_LEN: usize = 30;
const PREFIX: &str = "rd.enc";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReaderConfig {
    pub transformer: TransformerConfig,
    pub max_span_len: usize,
}

impl Default for ReaderConfig {
    fn default() -> Self {
        ReaderConfig {
            transformer: TransformerConfig::toy(false),
            max_span_len: DEFAULT_MAX_SPAN_LEN,
        }
    }
}

/// A question, a passage and the gold answer as a char range of the
/// passage, `None` for No-Answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReaderExample {
    pub question: String,
    pub passage: String,
    pub answer: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanPrediction {
    pub start_token: usize,
    pub end_token: usize,
    pub score: f64,
    pub is_no_answer: bool,
    /// Passage substring covered by the span; empty for No-Answer.
    pub answer_text: String,
    /// The passage did not fit and was cut.
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct ReaderModel {
    pub config: ReaderConfig,
    pub vocab: Vocabulary,
    pub store: ParameterStore,
}

/// Positions `{0}` and the passage region.
pub fn allowed_positions(input: &PairInput) -> Vec<bool> {
    let mut allowed = vec![false; input.ids.len()];
    allowed[0] = true;
    for a in allowed.iter_mut().skip(input.passage_start) {
        *a = true;
    }
    allowed
}

/// Gold start/end positions, `(0, 0)` for No-Answer, or `None` when the
/// answer is not inside the retained passage tokens.
pub fn gold_positions(input: &PairInput, answer: Option<(usize, usize)>) -> Option<(usize, usize)> {
    let Some((cs, ce)) = answer else { return Some((0, 0)) };
    let toks = &input.passage_tokens;
    let first = toks.iter().position(|t| t.end > cs)?;
    let last = toks.iter().rposition(|t| t.start < ce)?;
    if first > last || ce > toks.last()?.end {
        return None;
    }
    Some((input.passage_start + first, input.passage_start + last))
}

impl ReaderModel {
    pub fn new(config: ReaderConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        if config.transformer.causal {
            return Err(Error::Config("the reader encoder must not be causal".into()));
        }
        if config.max_span_len == 0 {
            return Err(Error::Config("max_span_len must be at least 1".into()));
        }
        let d = config.transformer.model_dim;
        let mut store = ParameterStore::new(seed);
        init_transformer(&mut store, PREFIX, &config.transformer, vocab.len(), DEFAULT_INIT_STD)?;
        store.insert_normal("rd.start.w", d, 1, DEFAULT_INIT_STD)?;
        store.insert_zeros("rd.start.b", 1, 1)?;
        store.insert_normal("rd.end.w", d, 1, DEFAULT_INIT_STD)?;
        store.insert_zeros("rd.end.b", 1, 1)?;
        Ok(ReaderModel { config, vocab, store })
    }

    pub fn encode(&self, question: &str, passage: &str) -> Result<PairInput> {
        encode_pair(&self.vocab, question, passage, self.config.transformer.max_seq_len)
    }

    /// `S` and `E` as `1 x n` nodes; question positions get probability 0.
    pub fn span_distributions(&self, g: &mut Graph, store: &ParameterStore, input: &PairInput) -> Result<(NodeId, NodeId)> {
        let t = encoder_forward(g, store, PREFIX, &self.config.transformer, &input.ids, Vocabulary::PAD_ID)?;
        let mask: Mask = Arc::new(allowed_positions(input));
        let mut dist = |which: &str| -> Result<NodeId> {
            let w = g.param_named(store, &format!("rd.{which}.w"))?;
            let b = g.param_named(store, &format!("rd.{which}.b"))?;
            let z = g.matmul(t, w)?;
            let z = g.add_row(z, b)?;
            let z = g.transpose(z);
            Ok(g.softmax_rows(z, Some(&mask))?)
        };
        let s = dist("start")?;
        let e = dist("end")?;
        Ok((s, e))
    }

    /// `-ln S[start] - ln E[end]` as a `1 x 1` node.
    pub fn loss_node(&self, g: &mut Graph, store: &ParameterStore, input: &PairInput, gold: (usize, usize)) -> Result<NodeId> {
        let (s, e) = self.span_distributions(g, store, input)?;
        let ls = g.nll(s, &[gold.0], &[1.0], 1.0)?;
        let le = g.nll(e, &[gold.1], &[1.0], 1.0)?;
        Ok(g.add(ls, le)?)
    }

    /// Returns the training report and the number of examples skipped
    /// because their answer was truncated away.
    pub fn train(&mut self, examples: &[ReaderExample], cfg: &TrainConfig, seed: u64) -> Result<(TrainReport, usize)> {
        let prepared: Vec<Option<(PairInput, (usize, usize))>> = examples
            .iter()
            .map(|ex| {
                let input = self.encode(&ex.question, &ex.passage)?;
                Ok(gold_positions(&input, ex.answer).map(|g| (input, g)))
            })
            .collect::<Result<_>>()?;
        let skipped = prepared.iter().filter(|p| p.is_none()).count();
        let model = self.clone();
        let report = train_loop(&mut self.store, examples.len(), cfg, seed, |store, i| {
            let Some((input, gold)) = &prepared[i] else { return Ok(None) };
            let mut g = Graph::new();
            let l = model.loss_node(&mut g, store, input, *gold)?;
            Ok(Some(ExampleLoss {
                loss: g.value(l).item(),
                grads: g.backward(l)?,
                count: 1.0,
            }))
        })?;
        Ok((report, skipped))
    }

    pub fn predict(&self, question: &str, passage: &str) -> Result<SpanPrediction> {
        let input = self.encode(question, passage)?;
        let mut g = Graph::new();
        let (s, e) = self.span_distributions(&mut g, &self.store, &input)?;
        let choice = predict_span(
            g.value(s).row(0),
            g.value(e).row(0),
            input.passage_region(),
            self.config.max_span_len,
        );
        Ok(to_prediction(&input, passage, choice))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let extra = serde_json::json!({ "max_span_len": self.config.max_span_len });
        save_model(path, MODULE_TAG, &self.config.transformer, extra, &self.vocab, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m = load_model(path, MODULE_TAG, "train-reader")?;
        let max_span_len = m.header.extra["max_span_len"]
            .as_u64()
            .ok_or_else(|| Error::invalid(format!("{}: missing max_span_len", path.display())))?
            as usize;
        let config = ReaderConfig {
            transformer: m.header.config,
            max_span_len,
        };
        let mut model = ReaderModel::new(config, m.vocab, m.header.seed)?;
        restore_into(&mut model.store, m.tensors)?;
        model.store.set_step(m.header.step);
        Ok(model)
    }
}

fn to_prediction(input: &PairInput, passage: &str, c: SpanChoice) -> SpanPrediction {
    let answer_text = if c.is_no_answer {
        String::new()
    } else {
        let from = input.passage_tokens[c.start - input.passage_start].start;
        let to = input.passage_tokens[c.end - input.passage_start].end;
        passage.chars().skip(from).take(to - from).collect()
    };
    SpanPrediction {
        start_token: c.start,
        end_token: c.end,
        score: c.score,
        is_no_answer: c.is_no_answer,
        answer_text,
        truncated: input.truncated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ReaderModel {
        let cfg = ReaderConfig {
            transformer: TransformerConfig {
                num_layers: 1,
                num_heads: 2,
                model_dim: 8,
                max_seq_len: 16,
                feed_forward_dim: 16,
                causal: false,
                gate_attention_layer: None,
            },
            max_span_len: 30,
        };
        let vocab = Vocabulary::build(["where is xi'an it is in shaanxi china"], 40).unwrap();
        ReaderModel::new(cfg, vocab, 3).unwrap()
    }

    #[test]
    fn masked_distributions() {
        let m = tiny();
        let input = m.encode("where is xi'an", "it is in shaanxi , china").unwrap();
        let mut g = Graph::new();
        let (s, e) = m.span_distributions(&mut g, &m.store, &input).unwrap();
        for node in [s, e] {
            let row = g.value(node).row(0);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row[1..input.passage_start].iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn uniform_loss_is_two_ln_allowed() {
        let mut m = tiny();
        m.store.value_mut("rd.start.w").unwrap().fill(0.0);
        m.store.value_mut("rd.end.w").unwrap().fill(0.0);
        let input = m.encode("where", "a b c d e f g h i").unwrap();
        assert_eq!(input.passage_region(), Some((3, 11)));
        let mut g = Graph::new();
        let l = m.loss_node(&mut g, &m.store, &input, (4, 5)).unwrap();
        assert!((g.value(l).item() - 2.0 * 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gold_positions_from_chars() {
        let m = tiny();
        let passage = "it is in Shaanxi, China";
        let input = m.encode("where is xi'an", passage).unwrap();
        let gold = gold_positions(&input, Some((9, 23))).unwrap();
        let c = SpanChoice {
            start: gold.0,
            end: gold.1,
            score: 1.0,
            is_no_answer: false,
        };
        assert_eq!(to_prediction(&input, passage, c).answer_text, "Shaanxi, China");
        assert_eq!(gold_positions(&input, None), Some((0, 0)));
        let short = m.encode("where is xi'an", "a b c d e f g h i j k l m").unwrap();
        assert!(short.truncated);
        assert_eq!(gold_positions(&short, Some((24, 25))), None);
    }
}
