//! Decoder-only rewriter with a mixture-of-softmaxes output head.
//!
//! For a position with hidden state `h`, embedding `x` and gate-head output
//! `g`:
//!
//! ```text
//! D_i   = softmax(h W_i + b)          i = 1..m, shared bias b
//! l_i   = norm(g) . wg_i + x . wx_i + c_i
//! alpha = softmax(l)
//! D     = sum_i alpha_i D_i
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use qrqa_neural::graph::LAYER_NORM_EPS;
use qrqa_neural::transformer::DEFAULT_INIT_STD;
use qrqa_neural::{decoder_forward, init_transformer, restore_into, Graph, NodeId, ParameterStore, TransformerConfig};

use super::context::{HistoryMode, RewriteContext, DEFAULT_WINDOW};
use crate::data::Dialogue;
use crate::error::{Error, Result};
use crate::model_io::{load_model, save_model};
use crate::text::{words, Vocabulary};
use crate::train::{train_loop, ExampleLoss, TrainConfig, TrainReport};

pub const MODULE_TAG: &str = "rewriter";
const PREFIX: &str = "rw.dec";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewriterConfig {
    pub transformer: TransformerConfig,
    /// Mixture components `m`.
    pub mixtures: usize,
    pub window: usize,
    pub include_answers: bool,
    /// Decoding limit; also reserved out of the input length during training
    /// so contexts are cut the same way in both.
    pub max_len: usize,
}

impl Default for RewriterConfig {
    fn default() -> Self {
        RewriterConfig {
            transformer: TransformerConfig::toy(true),
            mixtures: 2,
            window: DEFAULT_WINDOW,
            include_answers: false,
            max_len: 32,
        }
    }
}

impl RewriterConfig {
    pub fn validate(&self) -> Result<()> {
        self.transformer.validate()?;
        if !self.transformer.causal {
            return Err(Error::Config("the rewriter decoder must be causal".into()));
        }
        if self.mixtures == 0 {
            return Err(Error::Config("mixtures must be at least 1".into()));
        }
        if self.max_len == 0 || self.max_len + 2 > self.transformer.max_seq_len {
            return Err(Error::Config(format!(
                "max_len {} leaves no room for context within {} positions",
                self.max_len, self.transformer.max_seq_len
            )));
        }
        Ok(())
    }

    /// Positions available to `[BOS] + context`.
    pub fn context_budget(&self) -> usize {
        self.transformer.max_seq_len - self.max_len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewriteResult {
    pub rewritten_question: String,
    /// Rewrite equals the original question after case and punctuation
    /// normalization.
    pub was_copied: bool,
    pub token_log_probs: Vec<f64>,
    /// Decoding hit `max_len` before `[EOS]`.
    pub truncated: bool,
}

/// Encoded context and target (rewrite tokens followed by `[EOS]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteExample {
    pub context: Vec<usize>,
    pub target: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RewriterModel {
    pub config: RewriterConfig,
    pub vocab: Vocabulary,
    pub store: ParameterStore,
}

fn head_name(i: usize) -> String {
    format!("rw.head.w{i}")
}

fn softmax(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

impl RewriterModel {
    pub fn new(config: RewriterConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let t = &config.transformer;
        let (d, v, m) = (t.model_dim, vocab.len(), config.mixtures);
        let mut store = ParameterStore::new(seed);
        init_transformer(&mut store, PREFIX, t, v, DEFAULT_INIT_STD)?;
        for i in 0..m {
            store.insert_normal(head_name(i), d, v, DEFAULT_INIT_STD)?;
        }
        store.insert_zeros("rw.head.b", 1, v)?;
        store.insert_normal("rw.gate.wg", t.head_dim(), m, DEFAULT_INIT_STD)?;
        store.insert_normal("rw.gate.wx", d, m, DEFAULT_INIT_STD)?;
        store.insert_zeros("rw.gate.b", 1, m)?;
        Ok(RewriterModel { config, vocab, store })
    }

    /// Next-token distributions `D` at `rows` of the decoder input `ids`,
    /// one row per requested position.
    pub fn distributions(&self, g: &mut Graph, store: &ParameterStore, ids: &[usize], rows: &[usize]) -> Result<NodeId> {
        let out = decoder_forward(g, store, PREFIX, &self.config.transformer, ids)?;
        let h = g.select_rows(out.hidden, rows)?;
        let x = g.select_rows(out.embeddings, rows)?;
        let gh = g.select_rows(out.gate_head, rows)?;

        let gn = g.layer_norm(gh);
        let wg = g.param_named(store, "rw.gate.wg")?;
        let wx = g.param_named(store, "rw.gate.wx")?;
        let gb = g.param_named(store, "rw.gate.b")?;
        let from_g = g.matmul(gn, wg)?;
        let from_x = g.matmul(x, wx)?;
        let logits = g.add(from_g, from_x)?;
        let logits = g.add_row(logits, gb)?;
        let alpha = g.softmax_rows(logits, None)?;

        let bias = g.param_named(store, "rw.head.b")?;
        let mut mix = None;
        for i in 0..self.config.mixtures {
            let w = g.param_named(store, &head_name(i))?;
            let z = g.matmul(h, w)?;
            let z = g.add_row(z, bias)?;
            let d_i = g.softmax_rows(z, None)?;
            let a_i = g.slice_cols(alpha, i, i + 1)?;
            let term = g.mul_col(d_i, a_i)?;
            mix = Some(match mix {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        Ok(mix.expect("at least one mixture"))
    }

    /// The head evaluated directly on vectors, without recording a graph.
    pub fn mixture_distribution(&self, h: &[f64], x: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        let t = &self.config.transformer;
        if h.len() != t.model_dim || x.len() != t.model_dim || g.len() != t.head_dim() {
            return Err(Error::invalid("mixture_distribution: vector dimensions do not match the model"));
        }
        let m = self.config.mixtures;
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / g.len() as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let gn: Vec<f64> = g.iter().map(|v| (v - mean) * inv).collect();

        let wg = self.store.value("rw.gate.wg")?;
        let wx = self.store.value("rw.gate.wx")?;
        let gb = self.store.value("rw.gate.b")?;
        let mut alpha: Vec<f64> = (0..m)
            .map(|i| {
                let a: f64 = gn.iter().enumerate().map(|(k, v)| v * wg.get(k, i)).sum();
                let b: f64 = x.iter().enumerate().map(|(k, v)| v * wx.get(k, i)).sum();
                a + b + gb.get(0, i)
            })
            .collect();
        softmax(&mut alpha);

        let bias = self.store.value("rw.head.b")?;
        let v = self.vocab.len();
        let mut out = vec![0.0; v];
        for (i, a) in alpha.iter().enumerate() {
            let w = self.store.value(&head_name(i))?;
            let mut z: Vec<f64> = (0..v)
                .map(|j| h.iter().enumerate().map(|(k, hv)| hv * w.get(k, j)).sum::<f64>() + bias.get(0, j))
                .collect();
            softmax(&mut z);
            out.iter_mut().zip(&z).for_each(|(o, p)| *o += a * p);
        }
        Ok(out)
    }

    /// Teacher-forcing input and loss rows: the decoder reads
    /// `context [SEP] target[..-1]` and position `context.len() + j` predicts
    /// `target[j]`.
    pub fn teacher_forcing(example: &RewriteExample) -> (Vec<usize>, Vec<usize>) {
        let mut ids = example.context.clone();
        ids.push(Vocabulary::SEP_ID);
        ids.extend_from_slice(&example.target[..example.target.len().saturating_sub(1)]);
        let rows = (0..example.target.len()).map(|j| example.context.len() + j).collect();
        (ids, rows)
    }

    /// Summed negative log-likelihood of the target tokens as a `1 x 1` node.
    pub fn example_loss(&self, g: &mut Graph, store: &ParameterStore, example: &RewriteExample) -> Result<NodeId> {
        if example.target.is_empty() {
            return Err(Error::invalid("empty rewrite target"));
        }
        let (ids, rows) = Self::teacher_forcing(example);
        let probs = self.distributions(g, store, &ids, &rows)?;
        let weights = vec![1.0; rows.len()];
        Ok(g.nll(probs, &example.target, &weights, 1.0)?)
    }

    /// Encodes a context and a rewrite, or `None` when the rewrite is longer
    /// than `max_len` tokens including `[EOS]`.
    pub fn make_example(&self, context: &RewriteContext, rewrite: &str) -> Result<Option<RewriteExample>> {
        let mut target = self.vocab.encode(rewrite);
        target.push(Vocabulary::EOS_ID);
        if target.len() > self.config.max_len {
            return Ok(None);
        }
        let context = context.encode(&self.vocab, self.config.context_budget())?;
        Ok(Some(RewriteExample { context, target }))
    }

    /// Mean per-token loss over `examples`.
    pub fn loss(&self, examples: &[RewriteExample]) -> Result<f64> {
        let (mut total, mut count) = (0.0, 0usize);
        for e in examples {
            let mut g = Graph::new();
            let l = self.example_loss(&mut g, &self.store, e)?;
            total += g.value(l).item();
            count += e.target.len();
        }
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }

    /// Loss is averaged over all target tokens of a batch.
    pub fn train(&mut self, examples: &[RewriteExample], cfg: &TrainConfig, seed: u64) -> Result<TrainReport> {
        let model = self.clone();
        train_loop(&mut self.store, examples.len(), cfg, seed, |store, i| {
            let e = &examples[i];
            let mut g = Graph::new();
            let l = model.example_loss(&mut g, store, e)?;
            Ok(Some(ExampleLoss {
                loss: g.value(l).item(),
                grads: g.backward(l)?,
                count: e.target.len() as f64,
            }))
        })
    }

    /// Greedy decoding from encoded context ids; ties go to the lowest id.
    pub fn greedy_ids(&self, context: &[usize], max_len: usize) -> Result<(Vec<usize>, Vec<f64>, bool)> {
        let n = self.config.transformer.max_seq_len;
        let mut ids = context.to_vec();
        ids.push(Vocabulary::SEP_ID);
        let limit = max_len.min(n + 1 - ids.len().min(n + 1));
        let (mut out, mut logps) = (Vec::new(), Vec::new());
        for _ in 0..limit {
            let mut g = Graph::new();
            let last = ids.len() - 1;
            let d = self.distributions(&mut g, &self.store, &ids, &[last])?;
            let row = g.value(d).row(0);
            let (best, p) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, &p)| if p > acc.1 { (j, p) } else { acc });
            logps.push(p.ln());
            if best == Vocabulary::EOS_ID {
                return Ok((out, logps, false));
            }
            out.push(best);
            ids.push(best);
        }
        Ok((out, logps, true))
    }

    pub fn rewrite(&self, context: &RewriteContext, max_len: usize) -> Result<RewriteResult> {
        let ids = context.encode(&self.vocab, self.config.context_budget())?;
        let (out, token_log_probs, truncated) = self.greedy_ids(&ids, max_len)?;
        let rewritten_question = self.vocab.decode(&out)?;
        Ok(RewriteResult {
            was_copied: is_copy(&rewritten_question, &context.current_question),
            rewritten_question,
            token_log_probs,
            truncated,
        })
    }

    /// Rewrites every turn in order. In recursive mode each turn's history
    /// is the rewrites produced so far.
    pub fn rewrite_dialogue(&self, dialogue: &Dialogue, mode: HistoryMode) -> Result<Vec<RewriteResult>> {
        let gold = history_texts(dialogue, mode)?;
        let mut results: Vec<RewriteResult> = Vec::with_capacity(dialogue.turns.len());
        for i in 0..dialogue.turns.len() {
            let history: Vec<String> = match mode {
                HistoryMode::Recursive => results.iter().map(|r| r.rewritten_question.clone()).collect(),
                _ => gold[..i].to_vec(),
            };
            let ctx = RewriteContext::for_turn(
                dialogue,
                i,
                &history,
                self.config.window,
                self.config.include_answers,
            )?;
            results.push(self.rewrite(&ctx, self.config.max_len)?);
        }
        Ok(results)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let extra = serde_json::to_value(&self.config).expect("config serializes");
        save_model(path, MODULE_TAG, &self.config.transformer, extra, &self.vocab, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m = load_model(path, MODULE_TAG, "train-qr")?;
        let config: RewriterConfig = serde_json::from_value(m.header.extra)
            .map_err(|e| Error::invalid(format!("{}: rewriter settings: {e}", path.display())))?;
        if config.transformer != m.header.config {
            return Err(Error::invalid(format!("{}: inconsistent transformer config", path.display())));
        }
        let mut model = RewriterModel::new(config, m.vocab, m.header.seed)?;
        restore_into(&mut model.store, m.tensors)?;
        model.store.set_step(m.header.step);
        Ok(model)
    }
}

/// Case- and punctuation-insensitive equality.
pub fn is_copy(rewrite: &str, original: &str) -> bool {
    words(rewrite) == words(original)
}

/// Per-turn history texts for the non-recursive modes; empty for
/// recursive mode.
pub fn history_texts(dialogue: &Dialogue, mode: HistoryMode) -> Result<Vec<String>> {
    match mode {
        HistoryMode::Recursive => Ok(Vec::new()),
        HistoryMode::Original => Ok(dialogue.turns.iter().map(|t| t.question.clone()).collect()),
        HistoryMode::GoldHistory => dialogue
            .turns
            .iter()
            .map(|t| {
                t.rewrite.clone().ok_or_else(|| {
                    Error::invalid(format!(
                        "gold-history mode needs human rewrites; {} turn {} has none",
                        dialogue.topic_id, t.turn_id
                    ))
                })
            })
            .collect(),
    }
}

/// Training pairs from every turn with a human rewrite, using the human
/// rewrites of earlier turns as history. Returns the examples and the number
/// of turns skipped for an over-long rewrite.
pub fn training_examples(model: &RewriterModel, dialogues: &[Dialogue]) -> Result<(Vec<RewriteExample>, usize)> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for d in dialogues {
        let history: Vec<String> = d
            .turns
            .iter()
            .map(|t| t.rewrite.clone().unwrap_or_else(|| t.question.clone()))
            .collect();
        for (i, t) in d.turns.iter().enumerate() {
            let Some(rewrite) = &t.rewrite else { continue };
            let ctx = RewriteContext::for_turn(d, i, &history[..i], model.config.window, model.config.include_answers)?;
            match model.make_example(&ctx, rewrite)? {
                Some(e) => out.push(e),
                None => skipped += 1,
            }
        }
    }
    Ok((out, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use qrqa_neural::Tensor;

    pub(crate) fn tiny(m: usize) -> RewriterModel {
        let cfg = RewriterConfig {
            transformer: TransformerConfig {
                num_layers: 1,
                num_heads: 2,
                model_dim: 8,
                max_seq_len: 24,
                feed_forward_dim: 16,
                causal: true,
                gate_attention_layer: None,
            },
            mixtures: m,
            window: 5,
            include_answers: false,
            max_len: 8,
        };
        let vocab = Vocabulary::build(["where is xi'an what is its gdp the of"], 40).unwrap();
        RewriterModel::new(cfg, vocab, 7).unwrap()
    }

    #[test]
    fn graph_head_matches_direct_evaluation() {
        let m = tiny(2);
        let mut g = Graph::new();
        let ids = [4, 7, 8, 3];
        let d = m.distributions(&mut g, &m.store, &ids, &[0, 1, 2, 3]).unwrap();
        let d = g.value(d).clone();
        let mut g2 = Graph::new();
        let out = decoder_forward(&mut g2, &m.store, PREFIX, &m.config.transformer, &ids).unwrap();
        for r in 0..4 {
            let direct = m
                .mixture_distribution(
                    g2.value(out.hidden).row(r),
                    g2.value(out.embeddings).row(r),
                    g2.value(out.gate_head).row(r),
                )
                .unwrap();
            for (a, b) in direct.iter().zip(d.row(r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_component_ignores_gate() {
        let mut m = tiny(1);
        let h = vec![0.3; 8];
        let x = vec![-0.2; 8];
        let gv = vec![0.1, 0.5, -0.4, 0.2];
        let before = m.mixture_distribution(&h, &x, &gv).unwrap();
        *m.store.value_mut("rw.gate.wx").unwrap() = Tensor::filled(8, 1, 5.0);
        *m.store.value_mut("rw.gate.b").unwrap() = Tensor::filled(1, 1, -3.0);
        assert_eq!(before, m.mixture_distribution(&h, &x, &gv).unwrap());
    }

    #[test]
    fn equal_gates_average_components() {
        let mut m = tiny(2);
        m.store.value_mut("rw.gate.wg").unwrap().fill(0.0);
        m.store.value_mut("rw.gate.wx").unwrap().fill(0.0);
        let h = vec![0.3, -0.1, 0.2, 0.0, 0.5, 0.4, -0.3, 0.1];
        let mix = m.mixture_distribution(&h, &[0.0; 8], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut solo = m.clone();
        solo.config.mixtures = 1;
        let d1 = solo.mixture_distribution(&h, &[0.0; 8], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        *solo.store.value_mut("rw.head.w0").unwrap() = m.store.value("rw.head.w1").unwrap().clone();
        let d2 = solo.mixture_distribution(&h, &[0.0; 8], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        for j in 0..mix.len() {
            assert!((mix[j] - 0.5 * (d1[j] + d2[j])).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_model_loss_is_ln_v() {
        let mut m = tiny(2);
        for i in 0..2 {
            m.store.value_mut(&head_name(i)).unwrap().fill(0.0);
        }
        let e = RewriteExample {
            context: vec![Vocabulary::BOS_ID, 6],
            target: vec![7, 8, Vocabulary::EOS_ID],
        };
        let expected = (m.vocab.len() as f64).ln();
        assert!((m.loss(&[e]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn decoding_is_deterministic_and_bounded() {
        let m = tiny(2);
        let ctx = RewriteContext {
            previous_turns: vec!["where is xi'an".into()],
            current_question: "what is its gdp".into(),
            window: 5,
            include_answers: false,
        };
        let a = m.rewrite(&ctx, 1).unwrap();
        assert_eq!(a, m.rewrite(&ctx, 1).unwrap());
        assert!(m.vocab.encode(&a.rewritten_question).len() <= 1);
    }

    #[test]
    fn gold_history_needs_rewrites() {
        let m = tiny(2);
        let d = Dialogue {
            topic_id: "t".into(),
            turns: vec![crate::data::Turn::new(1, "where is xi'an")],
        };
        assert!(m.rewrite_dialogue(&d, HistoryMode::GoldHistory).is_err());
        assert_eq!(m.rewrite_dialogue(&d, HistoryMode::Recursive).unwrap().len(), 1);
    }

    #[test]
    fn copy_detection_normalizes() {
        assert!(is_copy("What is its GDP?", "what is its gdp"));
        assert!(!is_copy("what is the gdp of xi'an", "what is its gdp"));
    }

    #[test]
    fn save_load_round_trip() {
        let m = tiny(2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rw.ckpt");
        m.save(&p).unwrap();
        let back = RewriterModel::load(&p).unwrap();
        assert_eq!(back.config, m.config);
        let v = |model: &RewriterModel| model.mixture_distribution(&[0.1; 8], &[0.2; 8], &[0.3, 0.1, 0.0, 0.4]).unwrap();
        assert_eq!(v(&back), v(&m));
    }
}
