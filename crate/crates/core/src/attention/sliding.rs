//! Per-pixel sliding-window attention, the naive baseline.
//!
//! Every query materializes its own clipped `M×M` neighborhood and runs the
//! layer's qkv projection over it, as an unfold-then-attend implementation
//! does. No projection is shared between overlapping neighborhoods.

use super::WindowAttention;
use crate::error::{contract, Result};
use crate::meter::{record, with_kind, MacKind};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{hwc, Tensor};
use crate::windowing::RelPosIndex;

/// Clipped neighborhood of `(y, x)` with radius `r`, row-major.
pub fn neighborhood(h: usize, w: usize, y: usize, x: usize, r: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for ny in y.saturating_sub(r)..(y + r + 1).min(h) {
        for nx in x.saturating_sub(r)..(x + r + 1).min(w) {
            out.push((ny, nx));
        }
    }
    out
}

pub fn sliding_window_attention<T: Scalar>(
    store: &ParamStore<T>,
    attn: &WindowAttention,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (h, w, c) = hwc(x.shape(), "sliding_window_attention")?;
    let m = attn.window;
    if m.is_multiple_of(2) {
        return Err(contract(format!("sliding window needs an odd size, got {m}")));
    }
    if c != attn.dim {
        return Err(contract(format!("map has {c} channels, layer expects {}", attn.dim)));
    }
    let r = m / 2;
    let (heads, d) = (attn.heads, attn.head_dim);
    let raw = attn.raw(store);
    let qkv_w = Tensor::new([c, 3 * c], raw.qkv_w.to_vec())?;
    let table_len = (2 * m - 1) * (2 * m - 1);
    let scale = T::c(1.0 / (d as f64).sqrt());
    let xs = x.data();
    let mut concat = vec![T::zero(); h * w * c];
    for y in 0..h {
        for xx in 0..w {
            let nb = neighborhood(h, w, y, xx, r);
            let k = nb.len();
            let center = nb
                .iter()
                .position(|&p| p == (y, xx))
                .expect("query in own neighborhood");
            let mut unfolded = Vec::with_capacity(k * c);
            for &(ny, nx) in &nb {
                unfolded.extend_from_slice(&xs[(ny * w + nx) * c..(ny * w + nx + 1) * c]);
            }
            let mut qkv = Tensor::new([k, c], unfolded)?.matmul(&qkv_w)?;
            for row in qkv.data_mut().chunks_exact_mut(3 * c) {
                for (v, &b) in row.iter_mut().zip(raw.qkv_b) {
                    *v += b;
                }
            }
            let qkv = qkv.data();
            let q = &qkv[center * 3 * c..center * 3 * c + c];
            let out = &mut concat[(y * w + xx) * c..(y * w + xx + 1) * c];
            for hd in 0..heads {
                let mut logits = vec![T::zero(); k];
                with_kind(MacKind::AttnScores, || {
                    if attn.pos.has_appearance() {
                        for (j, l) in logits.iter_mut().enumerate() {
                            let key = &qkv[j * 3 * c + c + hd * d..j * 3 * c + c + (hd + 1) * d];
                            let dot: T = q[hd * d..(hd + 1) * d].iter().zip(key).map(|(&a, &b)| a * b).sum();
                            *l = dot * scale;
                        }
                        record((k * d) as u64);
                    }
                });
                if let Some(table) = raw.table {
                    for (l, &(ny, nx)) in logits.iter_mut().zip(&nb) {
                        let b = RelPosIndex::bucket(m, y as isize - ny as isize, xx as isize - nx as isize);
                        *l += table[hd * table_len + b];
                    }
                }
                let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
                let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
                let z: T = exps.iter().copied().sum();
                with_kind(MacKind::AttnValues, || {
                    for e in 0..d {
                        let mut acc = T::zero();
                        for (j, &p) in exps.iter().enumerate() {
                            acc += p * qkv[j * 3 * c + 2 * c + hd * d + e];
                        }
                        out[hd * d + e] = acc / z;
                    }
                    record((k * d) as u64);
                });
            }
        }
    }
    let proj_w = Tensor::new([c, c], raw.proj_w.to_vec())?;
    let mut y = Tensor::new([h * w, c], concat)?.matmul(&proj_w)?;
    for row in y.data_mut().chunks_exact_mut(c) {
        for (v, &b) in row.iter_mut().zip(raw.proj_b) {
            *v += b;
        }
    }
    y.ensure_finite("sliding_window_attention")?;
    y.reshape([h, w, c])
}
