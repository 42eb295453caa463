//! Named parameters with optimizer state, and the AdamW update.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{NumericsError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Parameters in registration order, looked up by unique name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    index: BTreeMap<String, usize>,
    step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, NumericsError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NumericsError::DuplicateParameter(name));
        }
        let n = value.data.len();
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Xavier-uniform initialized matrix.
    pub fn add_xavier<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) -> Result<ParamId, NumericsError> {
        let limit = libm::sqrt(6.0 / (rows + cols) as f64);
        let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
        self.add(name, Tensor::new(vec![rows, cols], data)?)
    }

    /// Uniform in `[-scale, scale)`.
    pub fn add_uniform<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, scale: f64, rng: &mut R) -> Result<ParamId, NumericsError> {
        let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
        self.add(name, Tensor::new(vec![rows, cols], data)?)
    }

    pub fn add_const(&mut self, name: impl Into<String>, rows: usize, cols: usize, fill: f64) -> Result<ParamId, NumericsError> {
        self.add(name, Tensor::new(vec![rows, cols], vec![fill; rows * cols])?)
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NumericsError> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| NumericsError::UnknownParameter(name.into()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.data.len()).sum()
    }

    /// Euclidean norm over all parameters.
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.params.iter().flat_map(|p| p.value.data.iter()).map(|x| x * x).sum())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    /// Optimizer moments of one parameter (for checkpoint tests).
    pub fn moments(&self, id: ParamId) -> (&[f64], &[f64]) {
        let p = &self.params[id.0];
        (&p.m, &p.v)
    }
}

/// One AdamW step with decoupled decay `theta -= lr * lambda * theta`, then
/// zeroes the gradients.
pub fn adam_step(store: &mut ParameterStore, cfg: &AdamConfig) {
    store.step += 1;
    let t = store.step as f64;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t);
    for p in &mut store.params {
        for i in 0..p.grad.len() {
            let g = p.grad[i];
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = p.m[i] / bc1;
            let v_hat = p.v[i] / bc2;
            let theta = &mut p.value.data[i];
            *theta -= cfg.lr * (m_hat / (libm::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * *theta);
            p.grad[i] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> (ParameterStore, ParamId) {
        let mut s = ParameterStore::new();
        let id = s.add("w", Tensor::new(vec![1], vec![v]).unwrap()).unwrap();
        (s, id)
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let (mut s, id) = scalar_store(0.7);
        adam_step(&mut s, &AdamConfig { weight_decay: 0.0, ..AdamConfig::default() });
        assert_eq!(s.value(id).data[0], 0.7);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = scalar_store(1.0);
        s.grad_mut(id)[0] = 1.0;
        adam_step(&mut s, &AdamConfig { lr: 0.1, weight_decay: 0.0, ..AdamConfig::default() });
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        assert!((s.value(id).data[0] - 0.9).abs() < 1e-8);
        assert_eq!(s.grad(id)[0], 0.0);
    }

    #[test]
    fn decay_only_shrinks_geometrically() {
        let (mut s, id) = scalar_store(2.0);
        let cfg = AdamConfig { lr: 0.1, weight_decay: 0.5, ..AdamConfig::default() };
        let mut expect = 2.0;
        for _ in 0..5 {
            adam_step(&mut s, &cfg);
            expect *= 1.0 - 0.1 * 0.5;
            assert!((s.value(id).data[0] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let (mut s, _) = scalar_store(1.0);
        assert!(matches!(s.add("w", Tensor::zeros(vec![1])), Err(NumericsError::DuplicateParameter(_))));
        assert!(s.id("missing").is_err());
    }
}
