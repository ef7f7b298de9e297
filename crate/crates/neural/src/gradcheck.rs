//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

/// Central differences `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps` for every
/// entry of `x`.
pub fn numeric_gradient(x: &Tensor, eps: f64, f: impl Fn(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    out
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: Option<String>,
    pub checked_entries: usize,
}

/// Compares the analytic gradient of `loss_fn` with central differences on
/// up to `samples_per_param` randomly chosen entries of every parameter in
/// `params` (all parameters when `params` is empty).
pub fn gradient_check<F>(
    store: &ParameterStore,
    params: &[&str],
    loss_fn: F,
    eps: f64,
    samples_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParameterStore) -> Result<(Graph, NodeId)>,
{
    let (graph, loss) = loss_fn(store)?;
    let grads = graph.backward(loss)?;

    let names: Vec<String> = if params.is_empty() {
        store.names().map(str::to_string).collect()
    } else {
        params.iter().map(|s| s.to_string()).collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: None,
        checked_entries: 0,
    };
    let eval = |s: &ParameterStore| -> Result<f64> {
        let (g, l) = loss_fn(s)?;
        Ok(g.value(l).item())
    };

    for name in &names {
        let id = store.id(name)?;
        let len = store.get(id).value.len();
        let picks: Vec<usize> = if len <= samples_per_param {
            (0..len).collect()
        } else {
            sample(&mut rng, len, samples_per_param).into_vec()
        };
        for i in picks {
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
            let orig = store.get(id).value.data()[i];
            probe.get_mut(id).value.data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = relative_error(analytic, numeric);
            report.checked_entries += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_parameter = Some(format!("{name}[{i}]"));
            }
        }
    }
    Ok(report)
}
