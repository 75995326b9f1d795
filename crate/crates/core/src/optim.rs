//! AdamW with decoupled weight decay.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: u64,
    state: HashMap<ParamId, Moments<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            state: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// First and second moment of a parameter, if it has been stepped.
    pub fn moments(&self, id: ParamId) -> Option<(&[T], &[T])> {
        self.state.get(&id).map(|s| (s.m.as_slice(), s.v.as_slice()))
    }

    /// One update of every trainable parameter in `store`.
    ///
    /// Decay is applied to the weights before, and independently of, the
    /// bias-corrected moment update.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if let Some((_, p)) = store.iter().find(|(_, p)| p.trainable && p.value.grad().is_none()) {
            return Err(Error::MissingGradient(p.name.clone()));
        }
        self.step += 1;
        let c = self.config;
        let (lr, b1, b2, eps) = (T::c(c.lr), T::c(c.beta1), T::c(c.beta2), T::c(c.eps));
        let decay = T::one() - T::c(c.lr * c.weight_decay);
        let bc1 = T::one() - T::c(c.beta1.powi(self.step as i32));
        let bc2 = T::one() - T::c(c.beta2.powi(self.step as i32));
        let ids: Vec<ParamId> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
        for id in ids {
            let p = store.get_mut(id);
            let n = p.value.len();
            let st = self.state.entry(id).or_insert_with(|| Moments {
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
            });
            let g = p.value.grad().expect("checked above").to_vec();
            let data = p.value.data_mut();
            for i in 0..n {
                data[i] *= decay;
                st.m[i] = b1 * st.m[i] + (T::one() - b1) * g[i];
                st.v[i] = b2 * st.v[i] + (T::one() - b2) * g[i] * g[i];
                let mhat = st.m[i] / bc1;
                let vhat = st.v[i] / bc2;
                data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
