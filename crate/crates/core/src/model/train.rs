//! Seeded synthetic classification and a small AdamW training loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::backward;
use crate::error::{Error, Result};
use crate::optim::{AdamW, AdamWConfig};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::backbone::SwinModel;
use super::config::ModelConfig;

/// Two-class image tasks on Gaussian texture. Both place a horizontal stripe
/// on channel 0 centred on the image's middle row, which is where the first
/// stage's regular windows split for the tiny configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// A stripe of half the image height, bright for class 1, dark for class 0.
    Stripe,
    /// Upper and lower halves of a narrow stripe get independent signs; the
    /// label is whether they agree.
    StripeParity,
}

#[derive(Debug, Clone)]
pub struct Dataset<T> {
    /// `n × H × W × 3`.
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let s = self.images.shape();
        let per = s[1] * s[2] * s[3];
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        Ok((
            Tensor::new([idx.len(), s[1], s[2], s[3]], data)?,
            idx.iter().map(|&i| self.labels[i]).collect(),
        ))
    }
}

const NOISE_STD: f64 = 0.5;

pub fn make_dataset<T: Scalar>(task: Task, n: usize, (h, w): (usize, usize), seed: u64) -> Dataset<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    let mut data = Vec::with_capacity(n * h * w * 3);
    let mut labels = Vec::with_capacity(n);
    let mid = h / 2;
    for i in 0..n {
        let mut img: Vec<f64> = (0..h * w * 3).map(|_| noise.sample(&mut rng)).collect();
        let (label, bands) = match task {
            Task::Stripe => {
                let label = i % 2;
                let sign = if label == 1 { 1.0 } else { -1.0 };
                (label, vec![(mid - h / 4, mid + h / 4, sign)])
            }
            Task::StripeParity => {
                let a: bool = rng.random();
                let b: bool = rng.random();
                let sign = |v: bool| if v { 1.0 } else { -1.0 };
                let half = (h / 8).max(1);
                (
                    usize::from(a == b),
                    vec![(mid - half, mid, sign(a)), (mid, mid + half, sign(b))],
                )
            }
        };
        for (y0, y1, sign) in bands {
            for y in y0..y1 {
                for x in 0..w {
                    img[(y * w + x) * 3] += sign;
                }
            }
        }
        data.extend(img.into_iter().map(T::c));
        labels.push(label);
    }
    Dataset {
        images: Tensor::new([n, h, w, 3], data).expect("dataset shape"),
        labels,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub samples: usize,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub optim: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::Stripe,
            samples: 256,
            steps: 500,
            batch: 32,
            seed: 0,
            optim: AdamWConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    /// Accuracy on the step's minibatch.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    /// Accuracy over the whole training set after the last step.
    pub final_accuracy: f64,
}

fn correct<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .filter(|(row, &l)| {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            best == l
        })
        .count()
}

/// Accuracy of `model` over `data`, in batches without gradients.
pub fn evaluate<T: Scalar>(model: &SwinModel, store: &ParamStore<T>, data: &Dataset<T>) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut hits = 0;
    for chunk in idx.chunks(64) {
        let (x, y) = data.batch(chunk)?;
        let logits = model.forward(&store.ctx(false), &x)?;
        hits += correct(logits.value(), &y);
    }
    Ok(hits as f64 / data.len().max(1) as f64)
}

/// Train from scratch; everything is derived from `tc.seed`.
pub fn train_toy<T: Scalar>(cfg: &ModelConfig, tc: &TrainConfig) -> Result<(TrainLog, SwinModel, ParamStore<T>)> {
    let (model, mut store) = SwinModel::new::<T>(cfg, tc.seed)?;
    let data = make_dataset::<T>(tc.task, tc.samples, cfg.input, tc.seed.wrapping_add(0x5eed));
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(1));
    let mut opt = AdamW::new(tc.optim);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut steps = Vec::with_capacity(tc.steps);
    for step in 0..tc.steps {
        let mut idx = Vec::with_capacity(tc.batch);
        while idx.len() < tc.batch.min(data.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let (x, y) = data.batch(&idx)?;
        let diverged = |e: Error| match e {
            Error::NonFinite { .. } => Error::Diverged { step, loss: f64::NAN },
            other => other,
        };
        let (loss, acc) = {
            let ctx = store.ctx(true);
            let logits = model.forward(&ctx, &x).map_err(diverged)?;
            let loss = logits.cross_entropy(&y).map_err(diverged)?;
            let grads = backward(&loss).map_err(diverged)?;
            let acc = correct(logits.value(), &y) as f64 / y.len() as f64;
            let l = loss.value().data()[0].f64();
            store.apply_grads(&grads)?;
            (l, acc)
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        opt.step(&mut store)?;
        steps.push(StepLog {
            step,
            loss,
            accuracy: acc,
        });
    }
    let final_accuracy = evaluate(&model, &store, &data)?;
    Ok((TrainLog { steps, final_accuracy }, model, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_is_seeded_and_balanced() {
        let a = make_dataset::<f32>(Task::Stripe, 16, (16, 16), 3);
        let b = make_dataset::<f32>(Task::Stripe, 16, (16, 16), 3);
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels.iter().sum::<usize>(), 8);
        let p = make_dataset::<f32>(Task::StripeParity, 64, (32, 32), 1);
        let ones = p.labels.iter().sum::<usize>();
        assert!(ones > 16 && ones < 48);
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let cfg = ModelConfig::tiny();
        let tc = TrainConfig {
            steps: 2,
            batch: 4,
            samples: 8,
            optim: AdamWConfig {
                lr: 0.0,
                ..AdamWConfig::default()
            },
            ..TrainConfig::default()
        };
        let (_, before) = SwinModel::new::<f64>(&cfg, tc.seed).unwrap();
        let (_, _, after) = train_toy::<f64>(&cfg, &tc).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(after.iter()) {
            assert_eq!(a.value.data(), b.value.data(), "{}", a.name);
        }
    }
}
