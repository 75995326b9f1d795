//! Token mixing inside (shifted) windows: one learned `M² × M²` matrix per
//! channel group, applied in place of window attention.

use std::sync::Arc;

use crate::autograd::Var;
use crate::error::{contract, Result};
use crate::meter::{with_kind, MacKind};
use crate::params::{Ctx, Init, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::windowing::{cyclic_maps, ShiftMask, WindowConfig};

#[derive(Debug, Clone)]
pub struct TokenMixer {
    pub dim: usize,
    pub group_dim: usize,
    pub window: usize,
    /// `groups × M² × M²`, applied as `out[i] = Σ_j W[g][i][j]·x[j]`.
    pub weight: ParamId,
}

impl TokenMixer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        dim: usize,
        group_dim: usize,
        window: usize,
    ) -> Result<Self> {
        if group_dim == 0 || !dim.is_multiple_of(group_dim) {
            return Err(contract(format!("dim {dim} is not divisible by group dim {group_dim}")));
        }
        let n = window * window;
        let weight = store.add(
            format!("{name}.weight"),
            init.trunc_normal([dim / group_dim, n, n]),
            true,
        )?;
        Ok(TokenMixer {
            dim,
            group_dim,
            window,
            weight,
        })
    }

    pub fn groups(&self) -> usize {
        self.dim / self.group_dim
    }

    /// Mix `batch·numWindows × M² × C` windows; masked pairs get zero weight.
    pub fn forward<T: Scalar>(
        &self,
        ctx: &Ctx<'_, T>,
        windows: &Var<T>,
        mask: &ShiftMask,
        batch: usize,
    ) -> Result<Var<T>> {
        let n = self.window * self.window;
        let (g, d) = (self.groups(), self.group_dim);
        let nw = mask.num_windows();
        if windows.shape() != [batch * nw, n, self.dim] {
            return Err(contract(format!(
                "token mixer expects {}×{n}×{}, got {:?}",
                batch * nw,
                self.dim,
                windows.shape()
            )));
        }
        let w = ctx.p(self.weight).reshape([1, g, n, n])?;
        let keep = Var::constant(mask.multiplicative::<T>().reshape([nw, 1, n, n])?);
        let w = w.mul(&keep)?;
        let x = windows
            .reshape([batch, nw, n, g, d])?
            .permute(&[1, 3, 2, 0, 4])?
            .reshape([nw, g, n, batch * d])?;
        let y = with_kind(MacKind::TokenMix, || w.matmul(&x))?;
        y.reshape([nw, g, n, batch, d])?
            .permute(&[3, 0, 2, 1, 4])?
            .reshape([batch * nw, n, self.dim])
    }
}

/// Token mixing over the cyclic-shift path of a `batch·h·w × C` token map.
pub fn cyclic_token_mixing<T: Scalar>(
    ctx: &Ctx<'_, T>,
    mixer: &TokenMixer,
    tokens: &Var<T>,
    batch: usize,
    cfg: &WindowConfig,
) -> Result<Var<T>> {
    let maps = cyclic_maps(cfg);
    let (to, from) = if batch == 1 {
        (Arc::clone(&maps.to_windows), Arc::clone(&maps.from_windows))
    } else {
        (
            Arc::new(maps.to_windows.batched(batch)),
            Arc::new(maps.from_windows.batched(batch)),
        )
    };
    let n = cfg.tokens_per_window();
    let win = tokens
        .gather_rows(&to)?
        .reshape([batch * cfg.num_windows(), n, mixer.dim])?;
    mixer
        .forward(ctx, &win, &maps.mask, batch)?
        .reshape([batch * cfg.num_windows() * n, mixer.dim])?
        .gather_rows(&from)
}

/// Reference: loops over each displaced window's real tokens, slot
/// `((y−s) mod M, (x−s) mod M)`, with no batching or masks.
pub fn brute_force_token_mixing<T: Scalar>(
    store: &ParamStore<T>,
    mixer: &TokenMixer,
    x: &Tensor<T>,
    cfg: &WindowConfig,
) -> Result<Tensor<T>> {
    let (h, w, c) = crate::tensor::hwc(x.shape(), "brute_force_token_mixing")?;
    if c != mixer.dim || (h, w) != (cfg.h, cfg.w) || cfg.window != mixer.window {
        return Err(contract("map, config and mixer disagree"));
    }
    let wt = store.get(mixer.weight).value.data();
    let (m, s) = (cfg.window as isize, cfg.shift as isize);
    let n = cfg.tokens_per_window();
    let slot = |y: usize, xx: usize| ((y as isize - s).rem_euclid(m) * m + (xx as isize - s).rem_euclid(m)) as usize;
    let mut out = Tensor::zeros([h, w, c]);
    for group in crate::attention::shifted_window_groups(cfg) {
        for &(yi, xi) in &group {
            let si = slot(yi, xi);
            for ch in 0..c {
                let g = ch / mixer.group_dim;
                let mut acc = T::zero();
                for &(yj, xj) in &group {
                    acc += wt[(g * n + si) * n + slot(yj, xj)] * x.data()[(yj * w + xj) * c + ch];
                }
                out.data_mut()[(yi * w + xi) * c + ch] = acc;
            }
        }
    }
    Ok(out)
}
