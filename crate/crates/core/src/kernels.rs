//! Slice-level numeric kernels shared by [`Tensor`](crate::Tensor) and the
//! autograd ops. None of these touch the MAC meter.

use rayon::prelude::*;

use crate::meter::{thread_mode, ThreadMode};
use crate::scalar::Scalar;

const ROW_BLOCK: usize = 4;
const COL_BLOCK: usize = 512;
const PAR_THRESHOLD: usize = 1 << 18;

/// `c = a @ b` for row-major `a: m×k`, `b: k×n`; `c` is overwritten.
///
/// Each output element accumulates `p = 0..k` in order starting from zero,
/// whatever the blocking or threading.
pub fn gemm<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 || m == 0 {
        return;
    }
    let chunk = ROW_BLOCK * n;
    let parallel = thread_mode() == ThreadMode::Auto && m * n * k >= PAR_THRESHOLD;
    if parallel {
        c.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(blk, rows)| gemm_rows(a, b, rows, blk * ROW_BLOCK, k, n));
    } else {
        c.chunks_mut(chunk)
            .enumerate()
            .for_each(|(blk, rows)| gemm_rows(a, b, rows, blk * ROW_BLOCK, k, n));
    }
}

fn gemm_rows<T: Scalar>(a: &[T], b: &[T], c: &mut [T], i0: usize, k: usize, n: usize) {
    c.fill(T::zero());
    let rows = c.len() / n;
    for j0 in (0..n).step_by(COL_BLOCK) {
        let j1 = (j0 + COL_BLOCK).min(n);
        if rows == ROW_BLOCK {
            let (c0, rest) = c.split_at_mut(n);
            let (c1, rest) = rest.split_at_mut(n);
            let (c2, c3) = rest.split_at_mut(n);
            let (c0, c1, c2, c3) = (&mut c0[j0..j1], &mut c1[j0..j1], &mut c2[j0..j1], &mut c3[j0..j1]);
            for p in 0..k {
                let brow = &b[p * n + j0..p * n + j1];
                let a0 = a[i0 * k + p];
                let a1 = a[(i0 + 1) * k + p];
                let a2 = a[(i0 + 2) * k + p];
                let a3 = a[(i0 + 3) * k + p];
                for ((((x0, x1), x2), x3), &bv) in c0
                    .iter_mut()
                    .zip(c1.iter_mut())
                    .zip(c2.iter_mut())
                    .zip(c3.iter_mut())
                    .zip(brow)
                {
                    *x0 += a0 * bv;
                    *x1 += a1 * bv;
                    *x2 += a2 * bv;
                    *x3 += a3 * bv;
                }
            }
        } else {
            for r in 0..rows {
                let crow = &mut c[r * n + j0..r * n + j1];
                for p in 0..k {
                    let av = a[(i0 + r) * k + p];
                    let brow = &b[p * n + j0..p * n + j1];
                    for (x, &bv) in crow.iter_mut().zip(brow) {
                        *x += av * bv;
                    }
                }
            }
        }
    }
}

/// Transpose a row-major `rows×cols` matrix.
pub fn transpose<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Softmax along a strided axis: the data is viewed as `outer×len×inner`.
pub fn softmax<T: Scalar>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = T::neg_infinity();
            for t in 0..len {
                max = max.max(x[base + t * inner]);
            }
            let mut sum = T::zero();
            for t in 0..len {
                let e = (x[base + t * inner] - max).exp();
                out[base + t * inner] = e;
                sum += e;
            }
            for t in 0..len {
                out[base + t * inner] /= sum;
            }
        }
    }
    out
}

/// Per-row statistics saved by the layer-norm forward pass.
pub struct NormStats<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

/// Layer norm over contiguous rows of length `c` with population variance.
pub fn layer_norm<T: Scalar>(x: &[T], gamma: &[T], beta: &[T], c: usize, eps: T) -> (Vec<T>, NormStats<T>) {
    let rows = x.len() / c;
    let inv_c = T::one() / T::c(c as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * c..(r + 1) * c];
        let mean = row.iter().copied().sum::<T>() * inv_c;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..c {
            let h = (row[j] - mean) * rs;
            xhat[r * c + j] = h;
            out[r * c + j] = h * gamma[j] + beta[j];
        }
    }
    (out, NormStats { xhat, rstd })
}

pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::c(0.5);
    x * half * (T::one() + (x * T::c(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let cdf = T::c(0.5) * (T::one() + (x * T::c(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::c(0.5)).exp() * T::c(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

/// Iteration plan for a same-rank broadcasting binary op.
pub struct Broadcast {
    pub out_shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    outer_shape: Vec<usize>,
    pub block: usize,
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl Broadcast {
    /// `None` if the shapes are not broadcast-compatible. Lower-rank operands
    /// are right-aligned.
    pub fn plan(a: &[usize], b: &[usize]) -> Option<Broadcast> {
        let rank = a.len().max(b.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (a, b) = (pad(a), pad(b));
        let mut out_shape = Vec::with_capacity(rank);
        for (&x, &y) in a.iter().zip(&b) {
            if x == y || y == 1 {
                out_shape.push(x);
            } else if x == 1 {
                out_shape.push(y);
            } else {
                return None;
            }
        }
        let sa = contiguous_strides(&a);
        let sb = contiguous_strides(&b);
        let a_strides: Vec<usize> = (0..rank)
            .map(|i| if a[i] == 1 && out_shape[i] != 1 { 0 } else { sa[i] })
            .collect();
        let b_strides: Vec<usize> = (0..rank)
            .map(|i| if b[i] == 1 && out_shape[i] != 1 { 0 } else { sb[i] })
            .collect();
        let mut split = rank;
        while split > 0 && a[split - 1] == b[split - 1] {
            split -= 1;
        }
        let block = out_shape[split..].iter().product();
        Some(Broadcast {
            outer_shape: out_shape[..split].to_vec(),
            out_shape,
            a_strides: a_strides[..split].to_vec(),
            b_strides: b_strides[..split].to_vec(),
            block,
        })
    }

    pub fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }

    /// Calls `f(out_offset, a_offset, b_offset)` for each contiguous block of
    /// `self.block` elements, in output order.
    pub fn for_each_block(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n_outer: usize = self.outer_shape.iter().product();
        let mut idx = vec![0usize; self.outer_shape.len()];
        for o in 0..n_outer {
            let mut ao = 0;
            let mut bo = 0;
            for (d, &i) in idx.iter().enumerate() {
                ao += i * self.a_strides[d];
                bo += i * self.b_strides[d];
            }
            f(o * self.block, ao, bo);
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < self.outer_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    }
}

/// Sum `grad` (laid out as `plan.out_shape`) down to one operand's shape.
pub fn reduce_broadcast<T: Scalar>(grad: &[T], plan: &Broadcast, target_len: usize, lhs: bool) -> Vec<T> {
    let mut out = vec![T::zero(); target_len];
    let block = plan.block;
    plan.for_each_block(|o, a, b| {
        let t = if lhs { a } else { b };
        for (dst, &g) in out[t..t + block].iter_mut().zip(&grad[o..o + block]) {
            *dst += g;
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn gemm_matches_triple_loop_bitwise() {
        for &(m, k, n) in &[(1, 1, 1), (3, 5, 7), (4, 4, 4), (9, 13, 600), (17, 2, 3)] {
            let a: Vec<f64> = (0..m * k).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
            let b: Vec<f64> = (0..k * n).map(|i| ((i * 53 % 13) as f64 - 6.0) / 7.0).collect();
            let mut c = vec![0.0; m * n];
            gemm(&a, &b, &mut c, m, k, n);
            assert_eq!(c, naive(&a, &b, m, k, n));
        }
    }

    #[test]
    fn broadcast_offsets() {
        let plan = Broadcast::plan(&[2, 3, 4], &[1, 3, 4]).unwrap();
        assert_eq!(plan.out_shape, vec![2, 3, 4]);
        assert_eq!(plan.block, 12);
        let mut seen = vec![];
        plan.for_each_block(|o, a, b| seen.push((o, a, b)));
        assert_eq!(seen, vec![(0, 0, 0), (12, 12, 0)]);

        let plan = Broadcast::plan(&[2, 3], &[3]).unwrap();
        let mut seen = vec![];
        plan.for_each_block(|o, a, b| seen.push((o, a, b)));
        assert_eq!(seen, vec![(0, 0, 0), (3, 3, 0)]);

        let plan = Broadcast::plan(&[2, 1, 4], &[1, 3, 4]).unwrap();
        assert_eq!(plan.out_shape, vec![2, 3, 4]);
        let mut seen = vec![];
        plan.for_each_block(|o, a, b| seen.push((o, a, b)));
        assert_eq!(
            seen,
            vec![(0, 0, 0), (4, 0, 4), (8, 0, 8), (12, 4, 0), (16, 4, 4), (20, 4, 8)]
        );
        assert!(Broadcast::plan(&[2, 3], &[4]).is_none());
    }
}
