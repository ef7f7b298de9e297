//! Cross-encoder re-ranker: sigmoid of a linear map of the `[CLS]` state.

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use qrqa_neural::transformer::DEFAULT_INIT_STD;
use qrqa_neural::{encoder_forward, init_transformer, restore_into, sigmoid, Graph, NodeId, ParameterStore, TransformerConfig};

use super::index::{InvertedIndex, RetrievalConfig};
use super::rerank::Scorer;
use crate::data::Qrels;
use crate::error::{Error, Result};
use crate::model_io::{load_model, save_model};
use crate::pair::encode_pair;
use crate::text::Vocabulary;
use crate::train::{train_loop, ExampleLoss, TrainConfig, TrainReport};

pub const MODULE_TAG: &str = "reranker";
const PREFIX: &str = "ce.enc";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    pub question: String,
    pub passage: String,
    pub label: bool,
}

#[derive(Debug, Clone)]
pub struct CrossEncoder {
    pub config: TransformerConfig,
    pub vocab: Vocabulary,
    pub store: ParameterStore,
}

impl CrossEncoder {
    pub fn new(config: TransformerConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        if config.causal {
            return Err(Error::Config("the re-ranker encoder must not be causal".into()));
        }
        let mut store = ParameterStore::new(seed);
        init_transformer(&mut store, PREFIX, &config, vocab.len(), DEFAULT_INIT_STD)?;
        store.insert_normal("ce.cls.w", config.model_dim, 1, DEFAULT_INIT_STD)?;
        store.insert_zeros("ce.cls.b", 1, 1)?;
        Ok(CrossEncoder { config, vocab, store })
    }

    /// Relevance logit as a `1 x 1` node.
    pub fn logit(&self, g: &mut Graph, store: &ParameterStore, question: &str, passage: &str) -> Result<NodeId> {
        let input = encode_pair(&self.vocab, question, passage, self.config.max_seq_len)?;
        let t = encoder_forward(g, store, PREFIX, &self.config, &input.ids, Vocabulary::PAD_ID)?;
        let cls = g.select_rows(t, &[0])?;
        let w = g.param_named(store, "ce.cls.w")?;
        let b = g.param_named(store, "ce.cls.b")?;
        let z = g.matmul(cls, w)?;
        Ok(g.add(z, b)?)
    }

    pub fn train(&mut self, examples: &[PairExample], cfg: &TrainConfig, seed: u64) -> Result<TrainReport> {
        let pos = examples.iter().filter(|e| e.label).count();
        if pos == 0 || pos == examples.len() {
            return Err(Error::invalid("re-ranker training needs both relevant and non-relevant pairs"));
        }
        let model = self.clone();
        train_loop(&mut self.store, examples.len(), cfg, seed, |store, i| {
            let e = &examples[i];
            let mut g = Graph::new();
            let z = model.logit(&mut g, store, &e.question, &e.passage)?;
            let l = g.bce_with_logits(z, &[if e.label { 1.0 } else { 0.0 }], 1.0)?;
            Ok(Some(ExampleLoss {
                loss: g.value(l).item(),
                grads: g.backward(l)?,
                count: 1.0,
            }))
        })
    }

    /// Mean binary cross-entropy over `examples`.
    pub fn loss(&self, examples: &[PairExample]) -> Result<f64> {
        let mut total = 0.0;
        for e in examples {
            let mut g = Graph::new();
            let z = self.logit(&mut g, &self.store, &e.question, &e.passage)?;
            let l = g.bce_with_logits(z, &[if e.label { 1.0 } else { 0.0 }], 1.0)?;
            total += g.value(l).item();
        }
        Ok(total / examples.len().max(1) as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_model(path, MODULE_TAG, &self.config, serde_json::Value::Null, &self.vocab, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m = load_model(path, MODULE_TAG, "train-reranker")?;
        let mut model = CrossEncoder::new(m.header.config, m.vocab, m.header.seed)?;
        restore_into(&mut model.store, m.tensors)?;
        model.store.set_step(m.header.step);
        Ok(model)
    }
}

impl Scorer for CrossEncoder {
    fn score(&self, question: &str, passage: &str) -> Result<f64> {
        let mut g = Graph::new();
        let z = self.logit(&mut g, &self.store, question, passage)?;
        Ok(sigmoid(g.value(z).item()))
    }
}

/// Relevant pairs from the qrels plus up to `negatives_per_query` passages
/// sampled from the BM25 candidates that are not relevant.
pub fn sample_training_pairs(
    queries: &[(String, String)],
    qrels: &Qrels,
    index: &InvertedIndex,
    retrieval: &RetrievalConfig,
    cutoff_grade: u8,
    negatives_per_query: usize,
    seed: u64,
) -> Vec<PairExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (qid, question) in queries {
        let Some(judged) = qrels.query(qid) else { continue };
        for (pid, &grade) in judged {
            if grade >= cutoff_grade {
                if let Some(text) = index.text(pid) {
                    out.push(PairExample {
                        question: question.clone(),
                        passage: text.to_string(),
                        label: true,
                    });
                }
            }
        }
        let candidates: Vec<String> = index
            .retrieve(question, retrieval)
            .into_iter()
            .map(|(p, _)| p)
            .filter(|p| qrels.grade(qid, p) < cutoff_grade)
            .collect();
        let n = negatives_per_query.min(candidates.len());
        let mut picks = sample(&mut rng, candidates.len(), n).into_vec();
        picks.sort_unstable();
        for i in picks {
            out.push(PairExample {
                question: question.clone(),
                passage: index.text(&candidates[i]).unwrap_or_default().to_string(),
                label: false,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> CrossEncoder {
        let cfg = TransformerConfig {
            num_layers: 1,
            num_heads: 2,
            model_dim: 8,
            max_seq_len: 16,
            feed_forward_dim: 16,
            causal: false,
            gate_attention_layer: None,
        };
        let vocab = Vocabulary::build(["alpha beta gamma delta"], 20).unwrap();
        CrossEncoder::new(cfg, vocab, 1).unwrap()
    }

    #[test]
    fn zero_weights_score_half() {
        let mut m = tiny();
        m.store.value_mut("ce.cls.w").unwrap().fill(0.0);
        assert_eq!(m.score("alpha", "beta gamma").unwrap(), 0.5);
    }

    #[test]
    fn single_class_rejected() {
        let mut m = tiny();
        let ex = vec![PairExample {
            question: "a".into(),
            passage: "b".into(),
            label: true,
        }];
        assert!(m.train(&ex, &TrainConfig::default(), 0).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let m = tiny();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ce.ckpt");
        m.save(&p).unwrap();
        let back = CrossEncoder::load(&p).unwrap();
        assert_eq!(back.score("alpha", "delta").unwrap(), m.score("alpha", "delta").unwrap());
    }
}
