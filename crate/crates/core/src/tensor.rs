//! Dense row-major tensors and the forward operations the model needs.

use crate::error::{contract, Error, Result};
use crate::kernels;
use crate::meter;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeData { shape, len: data.len() });
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, v: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![v; n],
            grad: None,
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
            grad: None,
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(&mut f).collect(),
            grad: None,
        }
    }

    /// Build from `f64` values, converting to `T`.
    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::c(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::Dimension {
                op: "set_grad",
                lhs: self.shape.clone(),
                rhs: vec![grad.len()],
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Copy of the values without the gradient slot.
    pub fn detached(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            grad: None,
        }
    }

    /// Fails on the first NaN or infinity.
    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { op, index }),
            None => Ok(()),
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
            grad: None,
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.f64() - b.f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Batched product over the last two axes; leading axes must match exactly.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Self> {
        let (batch, m, k, n) = matmul_dims(&self.shape, &other.shape)?;
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            kernels::gemm(
                &self.data[bi * m * k..(bi + 1) * m * k],
                &other.data[bi * k * n..(bi + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        meter::record((batch * m * k * n) as u64);
        let mut shape = self.shape[..self.rank() - 1].to_vec();
        shape.push(n);
        let t = Tensor::new(shape, out)?;
        t.ensure_finite("matmul")?;
        Ok(t)
    }

    pub fn softmax(&self, axis: usize) -> Result<Self> {
        let (outer, len, inner) = axis_split(&self.shape, axis)?;
        let t = Tensor::new(self.shape.clone(), kernels::softmax(&self.data, outer, len, inner))?;
        t.ensure_finite("softmax")?;
        Ok(t)
    }

    /// Normalizes over the last axis.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Self> {
        let c = *self.shape.last().ok_or_else(|| contract("layer_norm of a scalar"))?;
        if gamma.len() != c || beta.len() != c {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: self.shape.clone(),
                rhs: gamma.shape.clone(),
            });
        }
        let (out, _) = kernels::layer_norm(&self.data, &gamma.data, &beta.data, c, eps);
        let t = Tensor::new(self.shape.clone(), out)?;
        t.ensure_finite("layer_norm")?;
        Ok(t)
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&self) -> Self {
        self.map(kernels::gelu)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    /// Cyclic shift of an `h×w×C` map: `out[i][j] = x[(i−dy) mod h][(j−dx) mod w]`.
    pub fn roll2d(&self, dy: isize, dx: isize) -> Result<Self> {
        let (h, w, _) = hwc(&self.shape, "roll2d")?;
        self.gather_rows(&RowMap::roll(h, w, dy, dx))?
            .reshape(self.shape.clone())
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let (shape, data) = permute_data(&self.shape, &self.data, perm)?;
        Tensor::new(shape, data)
    }

    /// Gathers rows of width `len / map.src_rows`; the output is
    /// `map.len() × row_shape`.
    pub fn gather_rows(&self, map: &RowMap) -> Result<Self> {
        let (data, row) = map.apply(&self.data)?;
        let mut shape = vec![map.len()];
        shape.extend(row_shape(&self.shape, map.src_rows, row));
        Tensor::new(shape, data)
    }
}

/// Trailing axes of `shape` that make up one row, when they line up.
pub(crate) fn row_shape(shape: &[usize], src_rows: usize, row: usize) -> Vec<usize> {
    for i in (0..shape.len()).rev() {
        if shape[..i].iter().product::<usize>() == src_rows {
            return shape[i..].to_vec();
        }
    }
    vec![row]
}

pub(crate) fn hwc(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    match shape {
        [h, w, c] => Ok((*h, *w, *c)),
        _ => Err(Error::Dimension {
            op,
            lhs: shape.to_vec(),
            rhs: vec![],
        }),
    }
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize)> {
    let err = || Error::Dimension {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || a.len() != b.len() || a[..a.len() - 2] != b[..b.len() - 2] {
        return Err(err());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(err());
    }
    Ok((a[..a.len() - 2].iter().product(), m, k, n))
}

pub(crate) fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(contract(format!("axis {axis} out of range for shape {shape:?}")));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

pub(crate) fn permute_data<T: Copy>(shape: &[usize], data: &[T], perm: &[usize]) -> Result<(Vec<usize>, Vec<T>)> {
    let rank = shape.len();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(contract(format!("invalid permutation {perm:?} for shape {shape:?}")));
    }
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    if data.is_empty() {
        return Ok((out_shape, out));
    }
    // Innermost output axis runs as a strided copy.
    let last = rank - 1;
    let mut idx = vec![0usize; rank];
    let inner = out_shape[last];
    let n_outer = data.len() / inner;
    for _ in 0..n_outer {
        let base: usize = (0..last).map(|d| idx[d] * strides[d]).sum();
        for t in 0..inner {
            out.push(data[base + t * strides[last]]);
        }
        for d in (0..last).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok((out_shape, out))
}

/// A row gather: output row `i` copies source row `map[i]`, or is zero when
/// the entry is [`RowMap::ZERO`].
///
/// Window partitioning, padding, cropping, cyclic shifts and 2×2 merging are
/// all row gathers over a token-major `tokens×C` layout, and they compose.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowMap {
    pub src_rows: usize,
    pub map: Vec<u32>,
}

impl RowMap {
    pub const ZERO: u32 = u32::MAX;

    pub fn new(src_rows: usize, map: Vec<u32>) -> Self {
        debug_assert!(map.iter().all(|&m| m == Self::ZERO || (m as usize) < src_rows));
        RowMap { src_rows, map }
    }

    pub fn identity(n: usize) -> Self {
        RowMap::new(n, (0..n as u32).collect())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// `self ∘ inner`: apply `inner` first, then `self`.
    pub fn after(&self, inner: &RowMap) -> RowMap {
        assert_eq!(self.src_rows, inner.len(), "RowMap composition mismatch");
        RowMap::new(
            inner.src_rows,
            self.map
                .iter()
                .map(|&m| if m == Self::ZERO { m } else { inner.map[m as usize] })
                .collect(),
        )
    }

    /// Replicate across `batch` independent blocks laid out back to back.
    pub fn batched(&self, batch: usize) -> RowMap {
        let mut map = Vec::with_capacity(self.map.len() * batch);
        for b in 0..batch {
            let off = (b * self.src_rows) as u32;
            map.extend(self.map.iter().map(|&m| if m == Self::ZERO { m } else { m + off }));
        }
        RowMap::new(self.src_rows * batch, map)
    }

    /// `out(i,j) = in((i−dy) mod h, (j−dx) mod w)` on an `h×w` grid.
    pub fn roll(h: usize, w: usize, dy: isize, dx: isize) -> RowMap {
        let mut map = Vec::with_capacity(h * w);
        for i in 0..h {
            let si = (i as isize - dy).rem_euclid(h as isize) as usize;
            for j in 0..w {
                let sj = (j as isize - dx).rem_euclid(w as isize) as usize;
                map.push((si * w + sj) as u32);
            }
        }
        RowMap::new(h * w, map)
    }

    pub fn apply<T: Scalar>(&self, src: &[T]) -> Result<(Vec<T>, usize)> {
        if self.src_rows == 0 || !src.len().is_multiple_of(self.src_rows) {
            return Err(Error::Dimension {
                op: "gather_rows",
                lhs: vec![src.len()],
                rhs: vec![self.src_rows],
            });
        }
        let row = src.len() / self.src_rows;
        let mut out = Vec::with_capacity(self.map.len() * row);
        for &m in &self.map {
            if m == Self::ZERO {
                out.extend(std::iter::repeat_n(T::zero(), row));
            } else {
                let s = m as usize * row;
                out.extend_from_slice(&src[s..s + row]);
            }
        }
        Ok((out, row))
    }

    /// Adjoint of [`apply`](Self::apply): scatter-add rows back to the source.
    pub fn scatter_add<T: Scalar>(&self, grad: &[T], row: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.src_rows * row];
        for (i, &m) in self.map.iter().enumerate() {
            if m == Self::ZERO {
                continue;
            }
            let d = m as usize * row;
            for (o, &g) in out[d..d + row].iter_mut().zip(&grad[i * row..(i + 1) * row]) {
                *o += g;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn matmul_identity_zero_and_dot() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        assert_eq!(eye.matmul(&a).unwrap().data(), a.data());
        let z = t(&[2, 1], &[0., 0.]);
        assert_eq!(eye.matmul(&z).unwrap().data(), &[0., 0.]);
        let v = t(&[2, 1], &[5., 6.]);
        assert_eq!(a.matmul(&v).unwrap().data(), &[17., 39.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f32>::zeros([2, 3]);
        let b = Tensor::<f32>::zeros([2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        let c = Tensor::<f32>::zeros([4, 3, 2]);
        let d = Tensor::<f32>::zeros([2, 2, 5]);
        assert!(c.matmul(&d).is_err());
    }

    #[test]
    fn matmul_records_macs() {
        let a = Tensor::<f32>::zeros([3, 4, 5]);
        let b = Tensor::<f32>::zeros([3, 5, 6]);
        let (_, counts) = meter::measure(|| a.matmul(&b).unwrap());
        assert_eq!(counts.linear, 3 * 4 * 5 * 6);
    }

    #[test]
    fn softmax_examples() {
        let s = t(&[2], &[0., 0.]).softmax(0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = t(&[2], &[1000., 1000.]).softmax(0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = t(&[2], &[0., 3f64.ln()]).softmax(0).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_along_inner_axis() {
        let x = t(&[2, 3], &[0., 1., 2., 0., 1., 2.]);
        let s = x.softmax(0).unwrap();
        for v in s.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        assert!(x.softmax(2).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let g = t(&[2], &[1., 1.]);
        let b = t(&[2], &[0., 0.]);
        let y = t(&[2], &[1., -1.]).layer_norm(&g, &b, 1e-5).unwrap();
        assert!((y.data()[0] - 0.999995).abs() < 1e-6);
        assert!((y.data()[1] + 0.999995).abs() < 1e-6);
        let y = t(&[2], &[3., 3.]).layer_norm(&g, &b, 1e-5).unwrap();
        assert_eq!(y.data(), &[0., 0.]);
        let g3 = t(&[3], &[1., 1., 1.]);
        let b3 = t(&[3], &[0., 0., 0.]);
        let y = t(&[3], &[0., 2., 4.]).layer_norm(&g3, &b3, 1e-5).unwrap();
        // (x − 2) / sqrt(8/3 + 1e-5)
        let s = (8.0f64 / 3.0 + 1e-5).sqrt();
        assert!((y.data()[0] + 2.0 / s).abs() < 1e-12);
        assert!((y.data()[0] + 1.2247).abs() < 1e-4);
        assert_eq!(y.data()[1], 0.0);
    }

    #[test]
    fn gelu_examples() {
        let y = t(&[3], &[0., 10., 1.]).gelu();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 10.0).abs() < 1e-12);
        // Φ(1) = 0.841344746068542948585232545632...
        assert!((y.data()[2] - 0.841_344_746_068_543).abs() < 1e-12);
    }

    #[test]
    fn roll2d_examples() {
        let x = t(&[2, 2, 1], &[1., 2., 3., 4.]);
        assert_eq!(x.roll2d(0, 0).unwrap().data(), x.data());
        assert_eq!(x.roll2d(-1, -1).unwrap().data(), &[4., 3., 2., 1.]);
        let y = Tensor::<f64>::from_fn([5, 7, 3], |i| i as f64 * 0.37);
        let back = y.roll2d(-3, -3).unwrap().roll2d(3, 3).unwrap();
        assert_eq!(back.data(), y.data());
    }

    #[test]
    fn roll2d_matches_loop_oracle() {
        let (h, w, c) = (4, 6, 2);
        let x = Tensor::<f64>::from_fn([h, w, c], |i| i as f64);
        for (dy, dx) in [(1, 2), (-3, 5), (7, -1)] {
            let r = x.roll2d(dy, dx).unwrap();
            for i in 0..h {
                for j in 0..w {
                    let si = (i as isize - dy).rem_euclid(h as isize) as usize;
                    let sj = (j as isize - dx).rem_euclid(w as isize) as usize;
                    for k in 0..c {
                        assert_eq!(r.data()[(i * w + j) * c + k], x.data()[(si * w + sj) * c + k]);
                    }
                }
            }
        }
    }

    #[test]
    fn permute_transposes() {
        let x = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let y = x.permute(&[1, 0]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.data(), &[1., 4., 2., 5., 3., 6.]);
        let z = Tensor::<f64>::from_fn([2, 3, 4], |i| i as f64);
        let p = z.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.data()[1], 4.0);
        assert!(z.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn rowmap_compose_and_batch() {
        let roll = RowMap::roll(2, 2, 1, 0);
        let back = RowMap::roll(2, 2, -1, 0);
        assert_eq!(back.after(&roll), RowMap::identity(4));
        let b = RowMap::new(2, vec![1, RowMap::ZERO]).batched(2);
        assert_eq!(b.map, vec![1, RowMap::ZERO, 3, RowMap::ZERO]);
    }

    #[test]
    fn new_rejects_bad_length() {
        assert!(Tensor::<f32>::new([2, 2], vec![0.0; 3]).is_err());
    }
}
