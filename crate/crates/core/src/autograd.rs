//! Reverse-mode differentiation over a dynamically built graph.
//!
//! A [`Var`] owns its forward value and, when it depends on a trainable
//! parameter, a record of the op that produced it. Vars built without any
//! trainable ancestor drop their parents immediately, so inference runs in
//! bounded memory through the same code path.

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{contract, Error, Result};
use crate::kernels::{self, Broadcast};
use crate::params::ParamId;
use crate::scalar::Scalar;
use crate::tensor::{axis_split, matmul_dims, permute_data, RowMap, Tensor};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

enum Op<T: Scalar> {
    Leaf(Option<ParamId>),
    Matmul(Var<T>, Var<T>),
    Add(Var<T>, Var<T>),
    Mul(Var<T>, Var<T>),
    Scale(Var<T>, T),
    Reshape(Var<T>),
    Permute(Var<T>, Vec<usize>),
    Gather(Var<T>, Arc<RowMap>),
    IndexLast(Var<T>, Arc<[usize]>),
    Select(Var<T>, usize),
    Softmax(Var<T>),
    LayerNorm {
        x: Var<T>,
        gamma: Var<T>,
        beta: Var<T>,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var<T>),
    Mean(Var<T>, usize),
    Sum(Var<T>),
    CrossEntropy {
        logits: Var<T>,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T: Scalar> {
    id: u64,
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Handle to a value in the computation graph. Cloning is cheap.
pub struct Var<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn dim_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl<T: Scalar> Var<T> {
    fn make(value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<T> {
        let op = if requires_grad { op } else { Op::Leaf(None) };
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            op,
            requires_grad,
        }))
    }

    fn derived(name: &'static str, value: Tensor<T>, op: Op<T>, rg: bool) -> Result<Var<T>> {
        value.ensure_finite(name)?;
        Ok(Var::make(value, op, rg))
    }

    /// A value that never receives a gradient.
    pub fn constant(value: Tensor<T>) -> Var<T> {
        Var::make(value, Op::Leaf(None), false)
    }

    /// A parameter leaf; gradients are reported under `id` when `trainable`.
    pub fn param(value: Tensor<T>, id: ParamId, trainable: bool) -> Var<T> {
        Var::make(value, Op::Leaf(Some(id)), trainable)
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Batched matrix product over the last two axes, leading axes equal.
    pub fn matmul(&self, other: &Var<T>) -> Result<Var<T>> {
        let value = self.value().matmul(other.value())?;
        let rg = self.requires_grad() || other.requires_grad();
        Var::derived("matmul", value, Op::Matmul(self.clone(), other.clone()), rg)
    }

    /// `x @ w + b` over the last axis of `x`, with `w: in×out`.
    pub fn linear(&self, w: &Var<T>, b: Option<&Var<T>>) -> Result<Var<T>> {
        let shape = self.shape().to_vec();
        let cin = *shape.last().ok_or_else(|| contract("linear on a scalar"))?;
        let rows = self.value().len() / cin.max(1);
        let y = self.reshape(vec![rows, cin])?.matmul(w)?;
        let y = match b {
            Some(b) => y.add(b)?,
            None => y,
        };
        let mut out_shape = shape;
        *out_shape.last_mut().expect("non-empty") = w.shape()[1];
        y.reshape(out_shape)
    }

    fn binary(&self, other: &Var<T>, name: &'static str, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, bool)> {
        let plan =
            Broadcast::plan(self.shape(), other.shape()).ok_or_else(|| dim_err(name, self.shape(), other.shape()))?;
        let (a, b) = (self.value().data(), other.value().data());
        let mut out = vec![T::zero(); plan.out_len()];
        let block = plan.block;
        plan.for_each_block(|o, ao, bo| {
            for i in 0..block {
                out[o + i] = f(a[ao + i], b[bo + i]);
            }
        });
        let rg = self.requires_grad() || other.requires_grad();
        Ok((Tensor::new(plan.out_shape.clone(), out)?, rg))
    }

    /// Broadcasting elementwise sum.
    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        let (v, rg) = self.binary(other, "add", |a, b| a + b)?;
        Var::derived("add", v, Op::Add(self.clone(), other.clone()), rg)
    }

    /// Broadcasting elementwise product.
    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        let (v, rg) = self.binary(other, "mul", |a, b| a * b)?;
        Var::derived("mul", v, Op::Mul(self.clone(), other.clone()), rg)
    }

    pub fn scale(&self, s: T) -> Result<Var<T>> {
        let v = self.value().map(|x| x * s);
        Var::derived("scale", v, Op::Scale(self.clone(), s), self.requires_grad())
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<T>> {
        let v = self.value().reshape(shape)?;
        Ok(Var::make(v, Op::Reshape(self.clone()), self.requires_grad()))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var<T>> {
        let v = self.value().permute(perm)?;
        Ok(Var::make(
            v,
            Op::Permute(self.clone(), perm.to_vec()),
            self.requires_grad(),
        ))
    }

    pub fn gather_rows(&self, map: &Arc<RowMap>) -> Result<Var<T>> {
        let v = self.value().gather_rows(map)?;
        Ok(Var::make(
            v,
            Op::Gather(self.clone(), Arc::clone(map)),
            self.requires_grad(),
        ))
    }

    /// `out[..., k] = x[..., idx[k]]` along the last axis.
    pub fn index_last(&self, idx: &Arc<[usize]>) -> Result<Var<T>> {
        let shape = self.shape();
        let n = *shape.last().ok_or_else(|| contract("index_last on a scalar"))?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(contract(format!("index {bad} out of range for axis of {n}")));
        }
        let rows = self.value().len() / n.max(1);
        let src = self.value().data();
        let mut out = Vec::with_capacity(rows * idx.len());
        for r in 0..rows {
            out.extend(idx.iter().map(|&i| src[r * n + i]));
        }
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().expect("non-empty") = idx.len();
        Ok(Var::make(
            Tensor::new(out_shape, out)?,
            Op::IndexLast(self.clone(), Arc::clone(idx)),
            self.requires_grad(),
        ))
    }

    /// Slice `index` off the first axis.
    pub fn select(&self, index: usize) -> Result<Var<T>> {
        let shape = self.shape();
        if shape.is_empty() || index >= shape[0] {
            return Err(contract(format!("select {index} from shape {shape:?}")));
        }
        let inner = self.value().len() / shape[0];
        let data = self.value().data()[index * inner..(index + 1) * inner].to_vec();
        Ok(Var::make(
            Tensor::new(shape[1..].to_vec(), data)?,
            Op::Select(self.clone(), index),
            self.requires_grad(),
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Var<T>> {
        let axis = self
            .shape()
            .len()
            .checked_sub(1)
            .ok_or_else(|| contract("softmax on a scalar"))?;
        let v = self.value().softmax(axis)?;
        Var::derived("softmax", v, Op::Softmax(self.clone()), self.requires_grad())
    }

    pub fn layer_norm(&self, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Result<Var<T>> {
        let c = *self.shape().last().ok_or_else(|| contract("layer_norm on a scalar"))?;
        if gamma.value().len() != c || beta.value().len() != c {
            return Err(dim_err("layer_norm", self.shape(), gamma.shape()));
        }
        let (out, stats) = kernels::layer_norm(self.value().data(), gamma.value().data(), beta.value().data(), c, eps);
        let rg = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        Var::derived(
            "layer_norm",
            Tensor::new(self.shape().to_vec(), out)?,
            Op::LayerNorm {
                x: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                xhat: stats.xhat,
                rstd: stats.rstd,
            },
            rg,
        )
    }

    pub fn gelu(&self) -> Result<Var<T>> {
        let v = self.value().gelu();
        Var::derived("gelu", v, Op::Gelu(self.clone()), self.requires_grad())
    }

    /// Mean over `axis`, which is removed.
    pub fn mean_axis(&self, axis: usize) -> Result<Var<T>> {
        let (outer, len, inner) = axis_split(self.shape(), axis)?;
        let x = self.value().data();
        let inv = T::one() / T::c(len as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for t in 0..len {
                let src = &x[(o * len + t) * inner..(o * len + t + 1) * inner];
                for (d, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Var::derived(
            "mean_axis",
            Tensor::new(shape, out)?,
            Op::Mean(self.clone(), axis),
            self.requires_grad(),
        )
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self) -> Result<Var<T>> {
        let s = self.value().data().iter().copied().sum();
        Var::derived("sum", Tensor::scalar(s), Op::Sum(self.clone()), self.requires_grad())
    }

    /// Mean cross-entropy of `batch×classes` logits against integer labels.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Var<T>> {
        let (b, k) = match self.shape() {
            [b, k] => (*b, *k),
            s => return Err(dim_err("cross_entropy", s, &[labels.len()])),
        };
        if labels.len() != b || labels.iter().any(|&l| l >= k) {
            return Err(contract(format!(
                "cross_entropy: {} labels for batch {b} with {k} classes",
                labels.len()
            )));
        }
        let probs = kernels::softmax(self.value().data(), b, k, 1);
        let mut loss = T::zero();
        for (i, &l) in labels.iter().enumerate() {
            // log-softmax computed from the max-shifted logits for stability
            let row = &self.value().data()[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            loss += lse - row[l];
        }
        loss /= T::c(b as f64);
        Var::derived(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.clone(),
                labels: labels.to_vec(),
                probs,
            },
            self.requires_grad(),
        )
    }
}

/// Gradients keyed by parameter, produced by [`backward`].
#[derive(Debug, Default)]
pub struct Gradients<T> {
    pub(crate) by_param: HashMap<ParamId, Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.by_param.get(&id).map(|v| v.as_slice())
    }
}

fn accumulate<T: Scalar>(grads: &mut HashMap<u64, Vec<T>>, v: &Var<T>, g: Vec<T>) {
    if !v.requires_grad() {
        return;
    }
    match grads.get_mut(&v.0.id) {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => {
            grads.insert(v.0.id, g);
        }
    }
}

/// Reverse pass from a scalar `loss`.
pub fn backward<T: Scalar>(loss: &Var<T>) -> Result<Gradients<T>> {
    if loss.value().len() != 1 {
        return Err(contract(format!(
            "backward needs a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    let mut out = Gradients::default();
    if !loss.requires_grad() {
        return Ok(out);
    }

    // Iterative post-order DFS gives a topological order.
    let mut order: Vec<Var<T>> = Vec::new();
    let mut visited = std::collections::HashSet::new();
    let mut stack: Vec<(Var<T>, bool)> = vec![(loss.clone(), false)];
    while let Some((v, expanded)) = stack.pop() {
        if expanded {
            order.push(v);
            continue;
        }
        if !visited.insert(v.0.id) {
            continue;
        }
        stack.push((v.clone(), true));
        for p in parents(&v.0.op) {
            if p.requires_grad() && !visited.contains(&p.0.id) {
                stack.push((p.clone(), false));
            }
        }
    }

    let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
    grads.insert(loss.0.id, vec![T::one()]);
    for v in order.iter().rev() {
        let Some(g) = grads.remove(&v.0.id) else {
            continue;
        };
        propagate(v, g, &mut grads, &mut out)?;
    }
    Ok(out)
}

fn parents<T: Scalar>(op: &Op<T>) -> Vec<&Var<T>> {
    match op {
        Op::Leaf(_) => vec![],
        Op::Matmul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![a, b],
        Op::Scale(a, _)
        | Op::Reshape(a)
        | Op::Permute(a, _)
        | Op::Gather(a, _)
        | Op::IndexLast(a, _)
        | Op::Select(a, _)
        | Op::Softmax(a)
        | Op::Gelu(a)
        | Op::Mean(a, _)
        | Op::Sum(a) => vec![a],
        Op::LayerNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
        Op::CrossEntropy { logits, .. } => vec![logits],
    }
}

fn propagate<T: Scalar>(v: &Var<T>, g: Vec<T>, grads: &mut HashMap<u64, Vec<T>>, out: &mut Gradients<T>) -> Result<()> {
    let node = &v.0;
    match &node.op {
        Op::Leaf(Some(id)) => match out.by_param.get_mut(id) {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => {
                out.by_param.insert(*id, g);
            }
        },
        Op::Leaf(None) => {}
        Op::Matmul(a, b) => {
            let (batch, m, k, n) = matmul_dims(a.shape(), b.shape())?;
            let (ad, bd) = (a.value().data(), b.value().data());
            if a.requires_grad() {
                let mut ga = vec![T::zero(); batch * m * k];
                for i in 0..batch {
                    let bt = kernels::transpose(&bd[i * k * n..(i + 1) * k * n], k, n);
                    kernels::gemm(
                        &g[i * m * n..(i + 1) * m * n],
                        &bt,
                        &mut ga[i * m * k..(i + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
                accumulate(grads, a, ga);
            }
            if b.requires_grad() {
                let mut gb = vec![T::zero(); batch * k * n];
                for i in 0..batch {
                    let at = kernels::transpose(&ad[i * m * k..(i + 1) * m * k], m, k);
                    kernels::gemm(
                        &at,
                        &g[i * m * n..(i + 1) * m * n],
                        &mut gb[i * k * n..(i + 1) * k * n],
                        k,
                        m,
                        n,
                    );
                }
                accumulate(grads, b, gb);
            }
        }
        Op::Add(a, b) => {
            let plan = Broadcast::plan(a.shape(), b.shape()).expect("checked in forward");
            if a.requires_grad() {
                accumulate(grads, a, kernels::reduce_broadcast(&g, &plan, a.value().len(), true));
            }
            if b.requires_grad() {
                accumulate(grads, b, kernels::reduce_broadcast(&g, &plan, b.value().len(), false));
            }
        }
        Op::Mul(a, b) => {
            let plan = Broadcast::plan(a.shape(), b.shape()).expect("checked in forward");
            let (ad, bd) = (a.value().data(), b.value().data());
            let block = plan.block;
            if a.requires_grad() {
                let mut ga = vec![T::zero(); ad.len()];
                plan.for_each_block(|o, ao, bo| {
                    for i in 0..block {
                        ga[ao + i] += g[o + i] * bd[bo + i];
                    }
                });
                accumulate(grads, a, ga);
            }
            if b.requires_grad() {
                let mut gb = vec![T::zero(); bd.len()];
                plan.for_each_block(|o, ao, bo| {
                    for i in 0..block {
                        gb[bo + i] += g[o + i] * ad[ao + i];
                    }
                });
                accumulate(grads, b, gb);
            }
        }
        Op::Scale(a, s) => {
            let s = *s;
            accumulate(grads, a, g.into_iter().map(|x| x * s).collect());
        }
        Op::Reshape(a) => accumulate(grads, a, g),
        Op::Permute(a, perm) => {
            let mut inv = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            let (_, ga) = permute_data(node.value.shape(), &g, &inv)?;
            accumulate(grads, a, ga);
        }
        Op::Gather(a, map) => {
            let row = a.value().len() / map.src_rows;
            accumulate(grads, a, map.scatter_add(&g, row));
        }
        Op::IndexLast(a, idx) => {
            let n = *a.shape().last().expect("non-empty");
            let rows = a.value().len() / n;
            let mut ga = vec![T::zero(); a.value().len()];
            for r in 0..rows {
                for (k, &i) in idx.iter().enumerate() {
                    ga[r * n + i] += g[r * idx.len() + k];
                }
            }
            accumulate(grads, a, ga);
        }
        Op::Select(a, index) => {
            let inner = g.len();
            let mut ga = vec![T::zero(); a.value().len()];
            ga[index * inner..(index + 1) * inner].copy_from_slice(&g);
            accumulate(grads, a, ga);
        }
        Op::Softmax(a) => {
            let y = node.value.data();
            let n = *node.value.shape().last().expect("non-empty");
            let mut ga = vec![T::zero(); y.len()];
            for r in 0..y.len() / n {
                let ys = &y[r * n..(r + 1) * n];
                let gs = &g[r * n..(r + 1) * n];
                let dot: T = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum();
                for j in 0..n {
                    ga[r * n + j] = ys[j] * (gs[j] - dot);
                }
            }
            accumulate(grads, a, ga);
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let c = gamma.value().len();
            let rows = xhat.len() / c;
            let gam = gamma.value().data();
            if gamma.requires_grad() || beta.requires_grad() {
                let mut gg = vec![T::zero(); c];
                let mut gb = vec![T::zero(); c];
                for r in 0..rows {
                    for j in 0..c {
                        gg[j] += g[r * c + j] * xhat[r * c + j];
                        gb[j] += g[r * c + j];
                    }
                }
                accumulate(grads, gamma, gg);
                accumulate(grads, beta, gb);
            }
            if x.requires_grad() {
                let inv_c = T::one() / T::c(c as f64);
                let mut gx = vec![T::zero(); xhat.len()];
                for r in 0..rows {
                    let mut mean_d = T::zero();
                    let mut mean_dx = T::zero();
                    for j in 0..c {
                        let d = g[r * c + j] * gam[j];
                        mean_d += d;
                        mean_dx += d * xhat[r * c + j];
                    }
                    mean_d *= inv_c;
                    mean_dx *= inv_c;
                    for j in 0..c {
                        let d = g[r * c + j] * gam[j];
                        gx[r * c + j] = rstd[r] * (d - mean_d - xhat[r * c + j] * mean_dx);
                    }
                }
                accumulate(grads, x, gx);
            }
        }
        Op::Gelu(a) => {
            let ga = a
                .value()
                .data()
                .iter()
                .zip(&g)
                .map(|(&x, &gy)| gy * kernels::gelu_grad(x))
                .collect();
            accumulate(grads, a, ga);
        }
        Op::Mean(a, axis) => {
            let (outer, len, inner) = axis_split(a.shape(), *axis)?;
            let inv = T::one() / T::c(len as f64);
            let mut ga = vec![T::zero(); a.value().len()];
            for o in 0..outer {
                for t in 0..len {
                    for i in 0..inner {
                        ga[(o * len + t) * inner + i] = g[o * inner + i] * inv;
                    }
                }
            }
            accumulate(grads, a, ga);
        }
        Op::Sum(a) => accumulate(grads, a, vec![g[0]; a.value().len()]),
        Op::CrossEntropy { logits, labels, probs } => {
            let k = logits.shape()[1];
            let scale = g[0] / T::c(labels.len() as f64);
            let mut gl: Vec<T> = probs.iter().map(|&p| p * scale).collect();
            for (i, &l) in labels.iter().enumerate() {
                gl[i * k + l] -= scale;
            }
            accumulate(grads, logits, gl);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(shape: &[usize], v: &[f64], id: usize) -> Var<f64> {
        Var::param(Tensor::from_f64(shape.to_vec(), v).unwrap(), ParamId(id), true)
    }

    #[test]
    fn sum_gives_ones() {
        let p = leaf(&[2, 2], &[1., -2., 3., 0.5], 0);
        let g = backward(&p.sum().unwrap()).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn square_gives_two_p() {
        let p = leaf(&[3], &[1., -2., 3.], 0);
        let g = backward(&p.mul(&p).unwrap().sum().unwrap()).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap(), &[2., -4., 6.]);
    }

    #[test]
    fn non_scalar_backward_is_an_error() {
        let p = leaf(&[3], &[1., 2., 3.], 0);
        assert!(matches!(backward(&p), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_do_not_keep_parents() {
        let c = Var::constant(Tensor::<f64>::zeros([2]));
        let y = c.add(&c).unwrap();
        assert!(!y.requires_grad());
        assert!(matches!(y.0.op, Op::Leaf(None)));
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let x = leaf(&[2, 3], &[0.; 6], 0);
        let b = leaf(&[3], &[0.; 3], 1);
        let w = Var::constant(Tensor::from_f64([2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap());
        let loss = x.add(&b).unwrap().mul(&w).unwrap().sum().unwrap();
        let g = backward(&loss).unwrap();
        assert_eq!(g.get(ParamId(1)).unwrap(), &[5., 7., 9.]);
        assert_eq!(g.get(ParamId(0)).unwrap(), &[1., 2., 3., 4., 5., 6.]);
    }

    #[test]
    fn non_finite_is_surfaced() {
        let x = Var::constant(Tensor::<f64>::from_f64([1], &[f64::MAX]).unwrap());
        assert!(matches!(x.add(&x), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn cross_entropy_value_and_grad() {
        let z = leaf(&[1, 2], &[0., 3f64.ln()], 0);
        let loss = z.cross_entropy(&[1]).unwrap();
        assert!((loss.value().data()[0] - (-(0.75f64).ln())).abs() < 1e-14);
        let g = backward(&loss).unwrap();
        let gz = g.get(ParamId(0)).unwrap();
        assert!((gz[0] - 0.25).abs() < 1e-14 && (gz[1] + 0.25).abs() < 1e-14);
    }
}
