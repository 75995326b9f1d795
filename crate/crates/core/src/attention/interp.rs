//! Bicubic resampling of relative position bias tables between window sizes.
//!
//! Uses the Catmull-Rom kernel (`a = −0.5`), half-pixel sample alignment and
//! edge clamping, separably along rows then columns.

use crate::error::{contract, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const A: f64 = -0.5;

/// Cubic convolution kernel weight at distance `t`.
pub fn catmull_rom(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Four `(source index, weight)` taps per output sample.
fn taps(n_in: usize, n_out: usize) -> Vec<[(usize, f64); 4]> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let src = (i as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let t = src - base;
            let clamp = |k: isize| (base as isize + k).clamp(0, n_in as isize - 1) as usize;
            [
                (clamp(-1), catmull_rom(t + 1.0)),
                (clamp(0), catmull_rom(t)),
                (clamp(1), catmull_rom(1.0 - t)),
                (clamp(2), catmull_rom(2.0 - t)),
            ]
        })
        .collect()
}

/// Resample a `heads × (2M₁−1)²` table to `heads × (2M₂−1)²`.
pub fn interpolate_bias_table<T: Scalar>(table: &Tensor<T>, m1: usize, m2: usize) -> Result<Tensor<T>> {
    if m1 == 0 || m2 == 0 {
        return Err(contract("window sizes must be at least 1"));
    }
    let (s1, s2) = (2 * m1 - 1, 2 * m2 - 1);
    let heads = match table.shape() {
        [heads, len] if *len == s1 * s1 => *heads,
        s => return Err(contract(format!("bias table {s:?} does not fit window {m1}"))),
    };
    if m1 == m2 {
        return Ok(table.clone());
    }
    let tp = taps(s1, s2);
    let mut out = Vec::with_capacity(heads * s2 * s2);
    for grid in table.data().chunks_exact(s1 * s1) {
        // Rows first: s2 × s1, then columns: s2 × s2.
        let mut rows = vec![0.0; s2 * s1];
        for (i, tap) in tp.iter().enumerate() {
            for j in 0..s1 {
                rows[i * s1 + j] = tap.iter().map(|&(k, wt)| wt * grid[k * s1 + j].f64()).sum();
            }
        }
        for i in 0..s2 {
            for tap in &tp {
                out.push(T::c(tap.iter().map(|&(k, wt)| wt * rows[i * s1 + k]).sum()));
            }
        }
    }
    let t = Tensor::new([heads, s2 * s2], out)?;
    t.ensure_finite("interpolate_bias_table")?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_partition_of_unity() {
        for t in [0.0, 0.1, 0.25, 0.5, 0.9] {
            let s = catmull_rom(t + 1.0) + catmull_rom(t) + catmull_rom(1.0 - t) + catmull_rom(2.0 - t);
            assert!((s - 1.0).abs() < 1e-15);
        }
        assert_eq!(catmull_rom(0.0), 1.0);
        assert_eq!(catmull_rom(1.0), 0.0);
        assert_eq!(catmull_rom(2.5), 0.0);
    }

    #[test]
    fn identity_is_bit_exact() {
        let t = Tensor::<f32>::from_fn([3, 25], |i| (i as f32 * 0.37).sin());
        assert_eq!(interpolate_bias_table(&t, 3, 3).unwrap(), t);
    }

    #[test]
    fn constant_is_preserved() {
        let t = Tensor::<f64>::full([2, 9], 0.75);
        for m2 in [1, 3, 4, 7] {
            let out = interpolate_bias_table(&t, 2, m2).unwrap();
            assert_eq!(out.shape(), &[2, (2 * m2 - 1) * (2 * m2 - 1)]);
            assert!(out.data().iter().all(|&v| (v - 0.75).abs() < 1e-12));
        }
    }

    #[test]
    fn wrong_table_size_is_error() {
        assert!(interpolate_bias_table(&Tensor::<f64>::zeros([2, 10]), 2, 3).is_err());
    }
}
