//! Named parameters, their gradient buffers and Adam state.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NeuralError, Result};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Index of a parameter inside its [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    first_moment: Tensor,
    second_moment: Tensor,
}

impl Parameter {
    fn new(name: String, value: Tensor) -> Self {
        let [r, c] = value.shape();
        Self {
            name,
            grad: Tensor::zeros(r, c),
            first_moment: Tensor::zeros(r, c),
            second_moment: Tensor::zeros(r, c),
            value,
        }
    }
}

/// Gradients for a subset of parameters, produced by one backward pass.
#[derive(Debug, Clone, Default)]
pub struct GradientSet {
    entries: Vec<(ParamId, Tensor)>,
}

impl GradientSet {
    pub fn new(entries: Vec<(ParamId, Tensor)>) -> Self {
        Self { entries }
    }

    pub fn iter(&self) -> impl Iterator<Item = &(ParamId, Tensor)> {
        self.entries.iter()
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.entries.iter().find(|(p, _)| *p == id).map(|(_, t)| t)
    }
}

/// All trainable tensors of a model plus optimizer bookkeeping.
///
/// Parameter insertion order is the iteration order, which keeps
/// initialization and checkpoint layout deterministic.
#[derive(Debug, Clone)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
    step: u64,
    seed: u64,
    rng: ChaCha8Rng,
}

impl ParameterStore {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
            step: 0,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NeuralError::DuplicateParameter(name));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Parameter::new(name, value));
        Ok(id)
    }

    /// Adds a `rows x cols` parameter drawn from `N(0, std)` using the
    /// store's seeded generator.
    pub fn insert_normal(&mut self, name: impl Into<String>, rows: usize, cols: usize, std: f64) -> Result<ParamId> {
        let value = Tensor::random_normal(rows, cols, std, &mut self.rng);
        self.insert(name, value)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Result<ParamId> {
        self.insert(name, Tensor::zeros(rows, cols))
    }

    pub fn insert_filled(&mut self, name: impl Into<String>, rows: usize, cols: usize, v: f64) -> Result<ParamId> {
        self.insert(name, Tensor::filled(rows, cols, v))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| NeuralError::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.params[self.id(name)?.0].value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let id = self.id(name)?;
        Ok(&mut self.params[id.0].value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adds a backward pass's gradients into the gradient buffers.
    pub fn accumulate(&mut self, grads: &GradientSet) {
        for (id, g) in grads.iter() {
            self.params[id.0].grad.add_assign(g);
        }
    }

    pub fn scale_grads(&mut self, c: f64) {
        for p in &mut self.params {
            p.grad.scale_in_place(c);
        }
    }

    /// One Adam update from the current gradient buffers.
    ///
    /// Fails without touching any parameter if a gradient is non-finite.
    pub fn adam_step(&mut self, learning_rate: f64) -> Result<()> {
        if let Some(bad) = self.params.iter().find(|p| !p.grad.all_finite()) {
            return Err(NeuralError::NonFiniteGradient(bad.name.clone()));
        }
        self.step += 1;
        let t = self.step as f64;
        let bias1 = 1.0 - ADAM_BETA1.powf(t);
        let bias2 = 1.0 - ADAM_BETA2.powf(t);
        for p in &mut self.params {
            let g = p.grad.data();
            let m = p.first_moment.data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
            }
            let v = p.second_moment.data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
            }
            let m = p.first_moment.data();
            let v = p.second_moment.data();
            for ((w, mi), vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mi / bias1;
                let v_hat = vi / bias2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_values_unchanged() {
        let mut store = ParameterStore::new(1);
        store.insert_normal("w", 3, 2, 0.5).unwrap();
        let before = store.value("w").unwrap().clone();
        store.zero_grad();
        store.adam_step(0.1).unwrap();
        assert_eq!(store.value("w").unwrap(), &before);
        assert_eq!(store.step(), 1);
    }

    #[test]
    fn descends_on_quadratic() {
        let mut store = ParameterStore::new(0);
        let id = store.insert("w", Tensor::scalar(1.0)).unwrap();
        store.zero_grad();
        // d(w^2)/dw = 2w
        let g = 2.0 * store.get(id).value.item();
        store.accumulate(&GradientSet::new(vec![(id, Tensor::scalar(g))]));
        store.adam_step(0.1).unwrap();
        let w = store.get(id).value.item();
        assert!(w < 1.0 && w > 0.0, "w = {w}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = ParameterStore::new(0);
        let id = store.insert("layer.w", Tensor::scalar(1.0)).unwrap();
        store.accumulate(&GradientSet::new(vec![(id, Tensor::scalar(f64::NAN))]));
        let err = store.adam_step(0.1).unwrap_err();
        assert!(err.to_string().contains("layer.w"));
        assert_eq!(store.get(id).value.item(), 1.0);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParameterStore::new(0);
        store.insert_zeros("a", 1, 1).unwrap();
        assert!(store.insert_zeros("a", 1, 1).is_err());
    }

    #[test]
    fn same_seed_same_init() {
        let build = || {
            let mut s = ParameterStore::new(7);
            s.insert_normal("a", 4, 4, 0.02).unwrap();
            s.insert_normal("b", 2, 3, 0.02).unwrap();
            s
        };
        let (x, y) = (build(), build());
        assert_eq!(x.value("a").unwrap(), y.value("a").unwrap());
        assert_eq!(x.value("b").unwrap(), y.value("b").unwrap());
    }
}
