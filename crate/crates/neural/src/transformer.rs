//! Pre-norm transformer stacks: a causal decoder and a bidirectional
//! encoder sharing one implementation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::graph::{Graph, Mask, NodeId};
use crate::params::ParameterStore;

pub const DEFAULT_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub max_seq_len: usize,
    pub feed_forward_dim: usize,
    pub causal: bool,
    /// Layer whose head 0 output is exposed as the gate input `G`.
    /// `None` selects the last layer.
    #[serde(default)]
    pub gate_attention_layer: Option<usize>,
}

impl TransformerConfig {
    /// 2 layers, 4 heads, d=64, n=128, ff=256.
    pub fn toy(causal: bool) -> Self {
        Self {
            num_layers: 2,
            num_heads: 4,
            model_dim: 64,
            max_seq_len: 128,
            feed_forward_dim: 256,
            causal,
            gate_attention_layer: None,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn gate_layer(&self) -> usize {
        self.gate_attention_layer.unwrap_or(self.num_layers.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("model_dim", self.model_dim),
            ("max_seq_len", self.max_seq_len),
            ("feed_forward_dim", self.feed_forward_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(NeuralError::Config(format!("{name} must be positive")));
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(NeuralError::Config(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.gate_layer() >= self.num_layers {
            return Err(NeuralError::Config(format!(
                "gate_attention_layer {} out of range for {} layers",
                self.gate_layer(),
                self.num_layers
            )));
        }
        Ok(())
    }
}

/// Registers embeddings and all block weights under `prefix`.
///
/// Weights are drawn from `N(0, init_std)`, biases start at zero and layer
/// norm gains at one.
pub fn init_transformer(
    store: &mut ParameterStore,
    prefix: &str,
    cfg: &TransformerConfig,
    vocab_size: usize,
    init_std: f64,
) -> Result<()> {
    cfg.validate()?;
    let d = cfg.model_dim;
    store.insert_normal(format!("{prefix}.tok_emb"), vocab_size, d, init_std)?;
    store.insert_normal(format!("{prefix}.pos_emb"), cfg.max_seq_len, d, init_std)?;
    for l in 0..cfg.num_layers {
        let p = format!("{prefix}.h{l}");
        store.insert_filled(format!("{p}.ln1.g"), 1, d, 1.0)?;
        store.insert_zeros(format!("{p}.ln1.b"), 1, d)?;
        for w in ["wq", "wk", "wv", "wo"] {
            store.insert_normal(format!("{p}.attn.{w}"), d, d, init_std)?;
        }
        // No key bias: it shifts every score in a row equally and cancels
        // in the softmax.
        for b in ["bq", "bv", "bo"] {
            store.insert_zeros(format!("{p}.attn.{b}"), 1, d)?;
        }
        store.insert_filled(format!("{p}.ln2.g"), 1, d, 1.0)?;
        store.insert_zeros(format!("{p}.ln2.b"), 1, d)?;
        store.insert_normal(format!("{p}.mlp.w1"), d, cfg.feed_forward_dim, init_std)?;
        store.insert_zeros(format!("{p}.mlp.b1"), 1, cfg.feed_forward_dim)?;
        store.insert_normal(format!("{p}.mlp.w2"), cfg.feed_forward_dim, d, init_std)?;
        store.insert_zeros(format!("{p}.mlp.b2"), 1, d)?;
    }
    store.insert_filled(format!("{prefix}.ln_f.g"), 1, d, 1.0)?;
    store.insert_zeros(format!("{prefix}.ln_f.b"), 1, d)?;
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderOutput {
    /// Final hidden states `H`, `n x d`.
    pub hidden: NodeId,
    /// Head 0 output of the gate layer's self-attention before the output
    /// projection, `n x d_head`.
    pub gate_head: NodeId,
    /// Token plus position embeddings `X`, `n x d`.
    pub embeddings: NodeId,
}

/// Causal forward pass. Position `t` of every output depends only on
/// `ids[..=t]`.
pub fn decoder_forward(
    g: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    cfg: &TransformerConfig,
    ids: &[usize],
) -> Result<DecoderOutput> {
    if !cfg.causal {
        return Err(NeuralError::Config("decoder_forward requires causal = true".into()));
    }
    let keys = vec![true; ids.len()];
    forward(g, store, prefix, cfg, ids, &keys)
}

/// Bidirectional forward pass; positions holding `pad_id` are removed from
/// every attention distribution. Returns the final hidden states `T`.
pub fn encoder_forward(
    g: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    cfg: &TransformerConfig,
    ids: &[usize],
    pad_id: usize,
) -> Result<NodeId> {
    if cfg.causal {
        return Err(NeuralError::Config("encoder_forward requires causal = false".into()));
    }
    let keys: Vec<bool> = ids.iter().map(|&t| t != pad_id).collect();
    Ok(forward(g, store, prefix, cfg, ids, &keys)?.hidden)
}

fn affine_norm(g: &mut Graph, store: &ParameterStore, x: NodeId, name: &str) -> Result<NodeId> {
    let gain = g.param_named(store, &format!("{name}.g"))?;
    let bias = g.param_named(store, &format!("{name}.b"))?;
    let n = g.layer_norm(x);
    let scaled = g.mul_row(n, gain)?;
    g.add_row(scaled, bias)
}

fn linear(g: &mut Graph, store: &ParameterStore, x: NodeId, w: &str, b: &str) -> Result<NodeId> {
    let w = g.param_named(store, w)?;
    let b = g.param_named(store, b)?;
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

fn forward(
    g: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    cfg: &TransformerConfig,
    ids: &[usize],
    key_allowed: &[bool],
) -> Result<DecoderOutput> {
    let n = ids.len();
    if n > cfg.max_seq_len {
        return Err(NeuralError::SequenceTooLong {
            len: n,
            max: cfg.max_seq_len,
        });
    }
    let tok = g.param_named(store, &format!("{prefix}.tok_emb"))?;
    let pos = g.param_named(store, &format!("{prefix}.pos_emb"))?;
    let tok_x = g.gather(tok, ids)?;
    let positions: Vec<usize> = (0..n).collect();
    let pos_x = g.gather(pos, &positions)?;
    let embeddings = g.add(tok_x, pos_x)?;

    let mask: Mask = Arc::new(
        (0..n)
            .flat_map(|q| (0..n).map(move |k| (q, k)))
            .map(|(q, k)| key_allowed[k] && (!cfg.causal || k <= q))
            .collect(),
    );
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let gate_layer = cfg.gate_layer();

    let mut x = embeddings;
    let mut gate_head = None;
    for l in 0..cfg.num_layers {
        let p = format!("{prefix}.h{l}");
        let a = affine_norm(g, store, x, &format!("{p}.ln1"))?;
        let q = linear(g, store, a, &format!("{p}.attn.wq"), &format!("{p}.attn.bq"))?;
        let wk = g.param_named(store, &format!("{p}.attn.wk"))?;
        let k = g.matmul(a, wk)?;
        let v = linear(g, store, a, &format!("{p}.attn.wv"), &format!("{p}.attn.bv"))?;
        let mut heads = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let (s, e) = (h * dh, (h + 1) * dh);
            let qh = g.slice_cols(q, s, e)?;
            let kh = g.slice_cols(k, s, e)?;
            let vh = g.slice_cols(v, s, e)?;
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale);
            let probs = g.softmax_rows(scores, Some(&mask))?;
            let out = g.matmul(probs, vh)?;
            if h == 0 && l == gate_layer {
                gate_head = Some(out);
            }
            heads.push(out);
        }
        let merged = g.concat_cols(&heads)?;
        let attn = linear(g, store, merged, &format!("{p}.attn.wo"), &format!("{p}.attn.bo"))?;
        x = g.add(x, attn)?;

        let a = affine_norm(g, store, x, &format!("{p}.ln2"))?;
        let hdn = linear(g, store, a, &format!("{p}.mlp.w1"), &format!("{p}.mlp.b1"))?;
        let hdn = g.gelu(hdn);
        let ff = linear(g, store, hdn, &format!("{p}.mlp.w2"), &format!("{p}.mlp.b2"))?;
        x = g.add(x, ff)?;
    }
    let hidden = affine_norm(g, store, x, &format!("{prefix}.ln_f"))?;
    Ok(DecoderOutput {
        hidden,
        gate_head: gate_head.expect("gate layer validated"),
        embeddings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::gradient_check;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    fn small(causal: bool) -> TransformerConfig {
        TransformerConfig {
            num_layers: 2,
            num_heads: 2,
            model_dim: 16,
            max_seq_len: 12,
            feed_forward_dim: 32,
            causal,
            gate_attention_layer: None,
        }
    }

    fn store_for(cfg: &TransformerConfig, vocab: usize, std: f64, seed: u64) -> ParameterStore {
        let mut s = ParameterStore::new(seed);
        init_transformer(&mut s, "m", cfg, vocab, std).unwrap();
        s
    }

    #[test]
    fn config_validation() {
        let mut c = small(true);
        c.num_heads = 3;
        assert!(c.validate().is_err());
        let mut c = small(true);
        c.gate_attention_layer = Some(2);
        assert!(c.validate().is_err());
        assert!(TransformerConfig::toy(true).validate().is_ok());
    }

    #[test]
    fn decoder_shapes() {
        let cfg = small(true);
        let store = store_for(&cfg, 10, 0.02, 1);
        let mut g = Graph::new();
        let out = decoder_forward(&mut g, &store, "m", &cfg, &[3]).unwrap();
        assert_eq!(g.value(out.hidden).shape(), [1, 16]);
        assert_eq!(g.value(out.gate_head).shape(), [1, 8]);
        assert_eq!(g.value(out.embeddings).shape(), [1, 16]);
    }

    #[test]
    fn too_long_sequence_rejected() {
        let cfg = small(true);
        let store = store_for(&cfg, 10, 0.02, 1);
        let mut g = Graph::new();
        let err = decoder_forward(&mut g, &store, "m", &cfg, &[1; 13]).unwrap_err();
        assert!(matches!(err, NeuralError::SequenceTooLong { len: 13, max: 12 }));
    }

    #[test]
    fn decoder_is_causal_bitwise() {
        let cfg = small(true);
        let store = store_for(&cfg, 10, 0.3, 2);
        let a = [1, 2, 3, 4, 5, 6];
        for t in 0..a.len() - 1 {
            let mut b = a;
            b[t + 1] = 9;
            let mut ga = Graph::new();
            let oa = decoder_forward(&mut ga, &store, "m", &cfg, &a).unwrap();
            let mut gb = Graph::new();
            let ob = decoder_forward(&mut gb, &store, "m", &cfg, &b).unwrap();
            for r in 0..=t {
                assert_eq!(ga.value(oa.hidden).row(r), gb.value(ob.hidden).row(r));
                assert_eq!(ga.value(oa.gate_head).row(r), gb.value(ob.gate_head).row(r));
            }
        }
    }

    #[test]
    fn zero_token_embeddings_leave_positions() {
        let cfg = small(true);
        let mut store = store_for(&cfg, 10, 0.02, 3);
        store.value_mut("m.tok_emb").unwrap().fill(0.0);
        let mut g = Graph::new();
        let out = decoder_forward(&mut g, &store, "m", &cfg, &[0, 0, 0]).unwrap();
        let pos = store.value("m.pos_emb").unwrap();
        for r in 0..3 {
            assert_eq!(g.value(out.embeddings).row(r), pos.row(r));
        }
    }

    #[test]
    fn encoder_ignores_appended_padding() {
        let cfg = small(false);
        let store = store_for(&cfg, 10, 0.3, 4);
        let mut g1 = Graph::new();
        let h1 = encoder_forward(&mut g1, &store, "m", &cfg, &[4, 5, 6], 0).unwrap();
        let mut g2 = Graph::new();
        let h2 = encoder_forward(&mut g2, &store, "m", &cfg, &[4, 5, 6, 0, 0], 0).unwrap();
        for r in 0..3 {
            let diff: f64 = g1
                .value(h1)
                .row(r)
                .iter()
                .zip(g2.value(h2).row(r))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-12, "row {r} differs by {diff}");
        }
    }

    #[test]
    fn encoder_without_positions_is_permutation_equivariant() {
        let cfg = small(false);
        let mut store = store_for(&cfg, 10, 0.3, 5);
        store.value_mut("m.pos_emb").unwrap().fill(0.0);
        let mut g1 = Graph::new();
        let h1 = encoder_forward(&mut g1, &store, "m", &cfg, &[4, 5, 6, 7], 0).unwrap();
        let mut g2 = Graph::new();
        let h2 = encoder_forward(&mut g2, &store, "m", &cfg, &[4, 7, 6, 5], 0).unwrap();
        let (a, b) = (g1.value(h1), g2.value(h2));
        for (ra, rb) in [(0, 0), (1, 3), (2, 2), (3, 1)] {
            let diff: f64 = a.row(ra).iter().zip(b.row(rb)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-12);
        }
    }

    #[test]
    fn decoder_gradients_match_finite_differences() {
        let cfg = small(true);
        let store = store_for(&cfg, 10, 0.3, 6);
        let target = Tensor::random_normal(5, 16, 1.0, &mut rand_chacha::ChaCha8Rng::seed_from_u64(9));
        let report = gradient_check(
            &store,
            &[],
            |s| {
                let mut g = Graph::new();
                let out = decoder_forward(&mut g, s, "m", &cfg, &[1, 2, 3, 2, 7])?;
                let t = g.constant(target.clone());
                let prod = g.mul(out.hidden, t)?;
                let gate = g.sum(out.gate_head);
                let h = g.sum(prod);
                let both = g.add(h, gate)?;
                Ok((g, both))
            },
            1e-5,
            6,
            11,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }
}
