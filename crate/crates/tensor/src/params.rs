use rand::Rng;

use crate::error::{contract, Result};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named, ordered collection of learnable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param { name, value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn filled(&mut self, name: impl Into<String>, shape: &[usize], v: f64) -> ParamId {
        self.add(name, Tensor::filled(shape, v))
    }

    /// Uniform init in `[-bound, bound]`.
    pub fn uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    /// Glorot-uniform init using the last dimension as fan-out and the
    /// product of the rest as fan-in.
    pub fn xavier<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], rng: &mut R) -> ParamId {
        let fan_out = *shape.last().unwrap_or(&1);
        let fan_in: usize = shape[..shape.len().saturating_sub(1)].iter().product::<usize>().max(1);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.uniform(name, shape, bound, rng)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `lambda * theta` to every gradient (L2 regularisation).
    pub fn add_l2(&mut self, lambda: f64) {
        for p in &mut self.params {
            let v = p.value.data().to_vec();
            for (g, t) in p.grad.data_mut().iter_mut().zip(v) {
                *g += lambda * t;
            }
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global L2 norm does not exceed `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale_grads(max_norm / norm);
        }
        norm
    }

    /// Replaces values by name; every stored parameter must be present with
    /// the same shape.
    pub fn load_named(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        for p in &mut self.params {
            let (_, t) = named
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| contract(format!("missing parameter {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(contract(format!(
                    "parameter {} has shape {:?}, checkpoint holds {:?}",
                    p.name,
                    p.value.shape(),
                    t.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }

    pub fn named_values(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }
}
