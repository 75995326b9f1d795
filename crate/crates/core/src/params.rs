use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Gradients, Var};
use crate::error::{contract, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    /// Dot-delimited module path, unique within a store.
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Owns every parameter of a model, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(contract(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, trainable });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count over all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Store gradients on every trainable parameter; parameters the loss
    /// does not reach get zeros.
    pub fn apply_grads(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (i, p) in self.params.iter_mut().enumerate() {
            if !p.trainable {
                p.value.clear_grad();
                continue;
            }
            let g = grads
                .get(ParamId(i))
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![T::zero(); p.value.len()]);
            p.value.set_grad(g)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.value.clear_grad();
        }
    }

    /// Forward context over this store. With `grad == false` no graph is kept.
    pub fn ctx(&self, grad: bool) -> Ctx<'_, T> {
        Ctx { store: self, grad }
    }
}

#[derive(Clone, Copy)]
pub struct Ctx<'a, T> {
    store: &'a ParamStore<T>,
    grad: bool,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn p(&self, id: ParamId) -> Var<T> {
        let p = self.store.get(id);
        Var::param(p.value.detached(), id, self.grad && p.trainable)
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad
    }
}

/// Seeded initializer: truncated normal for weights, constants otherwise.
pub struct Init {
    rng: ChaCha8Rng,
    std: f64,
}

impl Init {
    pub const DEFAULT_STD: f64 = 0.02;

    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            std: Self::DEFAULT_STD,
        }
    }

    pub fn with_std(seed: u64, std: f64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            std,
        }
    }

    /// Normal(0, std) resampled outside ±2·std.
    pub fn trunc_normal<T: Scalar>(&mut self, shape: impl Into<Vec<usize>>) -> Tensor<T> {
        let normal = Normal::new(0.0, self.std).expect("positive std");
        let bound = 2.0 * self.std;
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= bound {
                break T::c(v);
            }
        })
    }

    /// Normal(0, std) without truncation.
    pub fn normal<T: Scalar>(&mut self, shape: impl Into<Vec<usize>>, std: f64) -> Tensor<T> {
        let normal = Normal::new(0.0, std).expect("positive std");
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| T::c(normal.sample(rng)))
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add("a.weight", Tensor::zeros([2]), true).unwrap();
        assert!(s.add("a.weight", Tensor::zeros([2]), true).is_err());
        assert_eq!(s.find("a.weight"), Some(ParamId(0)));
    }

    #[test]
    fn trunc_normal_is_bounded_and_seeded() {
        let a: Tensor<f64> = Init::new(3).trunc_normal([1000]);
        let b: Tensor<f64> = Init::new(3).trunc_normal([1000]);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() <= 0.04));
    }

    #[test]
    fn unreachable_params_get_zero_grad() {
        let mut s = ParamStore::<f64>::new();
        let a = s.add("a", Tensor::full([2], 1.0), true).unwrap();
        s.add("b", Tensor::full([3], 1.0), true).unwrap();
        let loss = s.ctx(true).p(a).sum().unwrap();
        let g = crate::autograd::backward(&loss).unwrap();
        s.apply_grads(&g).unwrap();
        assert_eq!(s.get(a).value.grad().unwrap(), &[1.0, 1.0]);
        assert_eq!(s.get(ParamId(1)).value.grad().unwrap(), &[0.0; 3]);
    }
}
