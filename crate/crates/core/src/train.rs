//! Mini-batch training loop shared by the three neural models.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use qrqa_neural::{GradientSet, ParameterStore};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Examples per step; the full set when it is smaller.
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 300,
            learning_rate: 1e-3,
            batch_size: 16,
        }
    }
}

/// Loss summed over one example, its gradients, and the example's weight in
/// the batch mean (target tokens for the rewriter, 1 elsewhere).
pub struct ExampleLoss {
    pub loss: f64,
    pub grads: GradientSet,
    pub count: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Mean batch loss per step.
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Runs `cfg.steps` Adam steps. Batches are drawn without replacement from a
/// generator seeded by `seed`; example gradients are computed in parallel and
/// summed in example order so results do not depend on thread count.
///
/// `example_loss` returns `None` for examples that cannot be trained on.
pub fn train_loop<F>(
    store: &mut ParameterStore,
    num_examples: usize,
    cfg: &TrainConfig,
    seed: u64,
    example_loss: F,
) -> Result<TrainReport>
where
    F: Fn(&ParameterStore, usize) -> Result<Option<ExampleLoss>> + Sync,
{
    if num_examples == 0 {
        return Err(Error::invalid("no training examples"));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config("batch_size and learning_rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = TrainReport::default();
    for _ in 0..cfg.steps {
        let batch: Vec<usize> = if num_examples <= cfg.batch_size {
            (0..num_examples).collect()
        } else {
            let mut b = sample(&mut rng, num_examples, cfg.batch_size).into_vec();
            b.sort_unstable();
            b
        };
        let frozen: &ParameterStore = store;
        let results: Vec<Option<ExampleLoss>> = batch
            .par_iter()
            .map(|&i| example_loss(frozen, i))
            .collect::<Result<_>>()?;
        let total: f64 = results.iter().flatten().map(|r| r.count).sum();
        if total == 0.0 {
            report.losses.push(0.0);
            continue;
        }
        store.zero_grad();
        let mut loss = 0.0;
        for r in results.iter().flatten() {
            store.accumulate(&r.grads);
            loss += r.loss;
        }
        store.scale_grads(1.0 / total);
        store.adam_step(cfg.learning_rate)?;
        report.losses.push(loss / total);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use qrqa_neural::Graph;

    #[test]
    fn fits_a_linear_target() {
        let mut store = ParameterStore::new(1);
        store.insert_zeros("w", 1, 1).unwrap();
        let xs = [1.0, 2.0, -1.0, 0.5];
        let cfg = TrainConfig {
            steps: 400,
            learning_rate: 0.05,
            batch_size: 2,
        };
        let report = train_loop(&mut store, xs.len(), &cfg, 3, |s, i| {
            let mut g = Graph::new();
            let w = g.param_named(s, "w")?;
            let x = g.constant(qrqa_neural::Tensor::scalar(xs[i]));
            let y = g.mul(w, x)?;
            let target = g.constant(qrqa_neural::Tensor::scalar(-3.0 * xs[i]));
            let diff = g.add(y, target)?;
            let sq = g.mul(diff, diff)?;
            let l = g.sum(sq);
            Ok(Some(ExampleLoss {
                loss: g.value(l).item(),
                grads: g.backward(l)?,
                count: 1.0,
            }))
        })
        .unwrap();
        assert!((store.value("w").unwrap().item() - 3.0).abs() < 1e-2);
        assert!(report.final_loss().unwrap() < 1e-3);
    }
}
