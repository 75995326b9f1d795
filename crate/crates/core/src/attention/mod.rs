//! Window multi-head self-attention with relative position bias, the three
//! execution strategies for the shifted configuration, the sliding-window
//! baseline and bias-table resampling.

mod interp;
mod sliding;
mod strategies;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use interp::{catmull_rom, interpolate_bias_table};
pub use sliding::{neighborhood, sliding_window_attention};
pub use strategies::{
    brute_force_over, brute_force_shifted_attention, cyclic_attention, dense_group_attention, naive_padded_plan,
    padded_attention, regular_window_attention, shifted_window_attention_cyclic, shifted_window_attention_padded,
    shifted_window_groups, NaivePaddedPlan,
};

use crate::autograd::Var;
use crate::error::{contract, Result};
use crate::meter::{with_kind, MacKind};
use crate::params::{Ctx, Init, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::windowing::{relative_position_index, ShiftMask};

/// How position information enters attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum PosMode {
    #[serde(rename = "none")]
    None,
    /// Learned absolute embedding added after patch embedding.
    #[serde(rename = "abs")]
    Absolute,
    /// Relative position bias in every attention layer.
    #[default]
    #[serde(rename = "rel")]
    Relative,
    #[serde(rename = "abs+rel")]
    AbsoluteRelative,
    /// Relative bias only, without the scaled dot-product term.
    #[serde(rename = "rel-no-app")]
    RelativeNoAppearance,
}

impl PosMode {
    pub fn has_relative(self) -> bool {
        matches!(
            self,
            PosMode::Relative | PosMode::AbsoluteRelative | PosMode::RelativeNoAppearance
        )
    }

    pub fn has_absolute(self) -> bool {
        matches!(self, PosMode::Absolute | PosMode::AbsoluteRelative)
    }

    pub fn has_appearance(self) -> bool {
        self != PosMode::RelativeNoAppearance
    }

    pub fn tag(self) -> &'static str {
        match self {
            PosMode::None => "none",
            PosMode::Absolute => "abs",
            PosMode::Relative => "rel",
            PosMode::AbsoluteRelative => "abs+rel",
            PosMode::RelativeNoAppearance => "rel-no-app",
        }
    }
}

impl std::str::FromStr for PosMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "none" => PosMode::None,
            "abs" => PosMode::Absolute,
            "rel" => PosMode::Relative,
            "abs+rel" => PosMode::AbsoluteRelative,
            "rel-no-app" => PosMode::RelativeNoAppearance,
            other => return Err(format!("unknown position mode `{other}`")),
        })
    }
}

/// Parameters of one window attention layer.
///
/// Weights are stored `in × out`; the qkv output columns are laid out as
/// `[part][head][d]` with parts q, k, v.
#[derive(Debug, Clone)]
pub struct WindowAttention {
    pub dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub window: usize,
    pub pos: PosMode,
    pub qkv_w: ParamId,
    pub qkv_b: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    /// `heads × (2M−1)²`, present when the mode uses relative bias.
    pub bias_table: Option<ParamId>,
}

impl WindowAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        prefix: &str,
        dim: usize,
        heads: usize,
        window: usize,
        pos: PosMode,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(contract(format!("dim {dim} is not divisible by {heads} heads")));
        }
        if window == 0 {
            return Err(contract("window must be at least 1"));
        }
        let qkv_w = store.add(format!("{prefix}.qkv.weight"), init.trunc_normal([dim, 3 * dim]), true)?;
        let qkv_b = store.add(format!("{prefix}.qkv.bias"), Tensor::zeros([3 * dim]), true)?;
        let proj_w = store.add(format!("{prefix}.proj.weight"), init.trunc_normal([dim, dim]), true)?;
        let proj_b = store.add(format!("{prefix}.proj.bias"), Tensor::zeros([dim]), true)?;
        let side = 2 * window - 1;
        let bias_table = if pos.has_relative() {
            Some(store.add(
                format!("{prefix}.relative_position_bias_table"),
                init.trunc_normal([heads, side * side]),
                true,
            )?)
        } else {
            None
        };
        Ok(WindowAttention {
            dim,
            heads,
            head_dim: dim / heads,
            window,
            pos,
            qkv_w,
            qkv_b,
            proj_w,
            proj_b,
            bias_table,
        })
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window * self.window
    }

    /// Gathered bias `heads × M² × M²` as a graph value.
    pub fn gathered_bias<T: Scalar>(&self, ctx: &Ctx<'_, T>) -> Result<Option<Var<T>>> {
        let Some(table) = self.bias_table else {
            return Ok(None);
        };
        let n = self.tokens_per_window();
        let idx = relative_position_index(self.window).as_shared();
        Ok(Some(ctx.p(table).index_last(&idx)?.reshape([self.heads, n, n])?))
    }

    /// Attention within each window.
    ///
    /// `tokens` is `batch·numWindows × M² × C`. `mask`, when given, holds one
    /// additive `M² × M²` matrix per window of a single image and is shared
    /// across the batch.
    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, tokens: &Var<T>, mask: Option<&ShiftMask>) -> Result<Var<T>> {
        let (bw, n, c) = match tokens.shape() {
            [bw, n, c] => (*bw, *n, *c),
            s => return Err(contract(format!("window attention input must be 3-D, got {s:?}"))),
        };
        if c != self.dim || n != self.tokens_per_window() {
            return Err(contract(format!(
                "window attention expects M²={} tokens of dim {} = heads {} × d {}, got {n}×{c}",
                self.tokens_per_window(),
                self.dim,
                self.heads,
                self.head_dim
            )));
        }
        let (h, d) = (self.heads, self.head_dim);
        let qkv = tokens
            .linear(&ctx.p(self.qkv_w), Some(&ctx.p(self.qkv_b)))?
            .reshape([bw, n, 3, h, d])?
            .permute(&[2, 0, 3, 1, 4])?;
        let v = qkv.select(2)?;

        let mut logits = if self.pos.has_appearance() {
            let q = qkv.select(0)?.scale(T::c(1.0 / (d as f64).sqrt()))?;
            let kt = qkv.select(1)?.permute(&[0, 1, 3, 2])?;
            Some(with_kind(MacKind::AttnScores, || q.matmul(&kt))?)
        } else {
            None
        };
        if let Some(bias) = self.gathered_bias(ctx)? {
            let bias = bias.reshape([1, h, n, n])?;
            logits = Some(match logits {
                Some(l) => l.add(&bias)?,
                None => Var::constant(Tensor::zeros([bw, h, n, n])).add(&bias)?,
            });
        }
        let mut logits = logits.unwrap_or_else(|| Var::constant(Tensor::zeros([bw, h, n, n])));
        if let Some(mask) = mask.filter(|m| !m.is_all_zero()) {
            let nw = mask.num_windows();
            if bw % nw != 0 {
                return Err(contract(format!("{bw} windows cannot share a mask of {nw} windows")));
            }
            let m = Var::constant(mask.additive::<T>().reshape([1, nw, 1, n, n])?);
            logits = logits
                .reshape([bw / nw, nw, h, n, n])?
                .add(&m)?
                .reshape([bw, h, n, n])?;
        }
        let probs = logits.softmax()?;
        let out = with_kind(MacKind::AttnValues, || probs.matmul(&v))?
            .permute(&[0, 2, 1, 3])?
            .reshape([bw, n, c])?;
        out.linear(&ctx.p(self.proj_w), Some(&ctx.p(self.proj_b)))
    }

    /// Raw parameter values, for oracles that bypass the graph.
    pub fn raw<'a, T: Scalar>(&self, store: &'a ParamStore<T>) -> RawAttention<'a, T> {
        RawAttention {
            qkv_w: store.get(self.qkv_w).value.data(),
            qkv_b: store.get(self.qkv_b).value.data(),
            proj_w: store.get(self.proj_w).value.data(),
            proj_b: store.get(self.proj_b).value.data(),
            table: self.bias_table.map(|t| store.get(t).value.data()),
        }
    }
}

pub struct RawAttention<'a, T> {
    pub qkv_w: &'a [T],
    pub qkv_b: &'a [T],
    pub proj_w: &'a [T],
    pub proj_b: &'a [T],
    pub table: Option<&'a [T]>,
}

/// Wrap a single-image `h×w×C` tensor as a token-major graph constant.
pub(crate) fn hwc_var<T: Scalar>(x: &Tensor<T>) -> Result<(Var<T>, usize, usize, usize)> {
    let (h, w, c) = crate::tensor::hwc(x.shape(), "attention input")?;
    Ok((Var::constant(x.reshape([h * w, c])?), h, w, c))
}

pub(crate) type SharedMap = Arc<crate::tensor::RowMap>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meter;

    fn layer(pos: PosMode, dim: usize, heads: usize, window: usize, seed: u64) -> (ParamStore<f64>, WindowAttention) {
        let mut store = ParamStore::new();
        let mut init = Init::with_std(seed, 0.5);
        let attn = WindowAttention::new(&mut store, &mut init, "attn", dim, heads, window, pos).unwrap();
        (store, attn)
    }

    #[test]
    fn uniform_attention_averages_values() {
        // Zero q/k, identity v and projection: every output is the window mean.
        let (mut store, attn) = layer(PosMode::None, 2, 1, 2, 0);
        let w = store.get_mut(attn.qkv_w).value.data_mut();
        w.fill(0.0);
        w[4] = 1.0;
        w[6 + 5] = 1.0;
        store
            .get_mut(attn.proj_w)
            .value
            .data_mut()
            .copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let x = Var::constant(Tensor::from_f64([1, 4, 2], &[1., 0., 3., 2., 1., 0., 3., 2.]).unwrap());
        let y = attn.forward(&store.ctx(false), &x, None).unwrap();
        assert_eq!(y.value().data(), &[2., 1., 2., 1., 2., 1., 2., 1.]);
    }

    #[test]
    fn masked_pair_probability_underflows() {
        let logits = Tensor::<f64>::from_f64([1, 2], &[0.3, 0.1 + f64::MASK_NEG]).unwrap();
        let p = logits.softmax(1).unwrap();
        assert!(p.data()[1] <= 1e-30);
    }

    #[test]
    fn head_dim_mismatch_is_error() {
        let mut store = ParamStore::<f32>::new();
        let mut init = Init::new(0);
        assert!(WindowAttention::new(&mut store, &mut init, "a", 10, 3, 2, PosMode::Relative).is_err());
        let (store, attn) = layer(PosMode::Relative, 4, 2, 2, 0);
        let x = Var::constant(Tensor::<f64>::zeros([1, 4, 6]));
        assert!(attn.forward(&store.ctx(false), &x, None).is_err());
    }

    #[test]
    fn no_appearance_ignores_query_key() {
        let (mut store, attn) = layer(PosMode::RelativeNoAppearance, 4, 2, 2, 3);
        let x = Var::constant(Tensor::<f64>::from_fn([1, 4, 4], |i| (i as f64).cos()));
        let y0 = attn.forward(&store.ctx(false), &x, None).unwrap().value().clone();
        // Perturb the q/k columns only.
        let w = &mut store.get_mut(attn.qkv_w).value;
        for r in 0..4 {
            for c in 0..8 {
                w.data_mut()[r * 12 + c] += 0.7;
            }
        }
        let y1 = attn.forward(&store.ctx(false), &x, None).unwrap().value().clone();
        assert_eq!(y0, y1);
    }

    #[test]
    fn attention_macs_follow_window_formula() {
        let (store, attn) = layer(PosMode::Relative, 8, 2, 2, 1);
        let x = Var::constant(Tensor::<f64>::zeros([3, 4, 8]));
        let (_, counts) = meter::measure(|| attn.forward(&store.ctx(false), &x, None).unwrap());
        // Per window: q·kᵀ and p·v each cost N²·C.
        assert_eq!(counts.attn_scores, 3 * 16 * 8);
        assert_eq!(counts.attn_values, 3 * 16 * 8);
        assert_eq!(counts.linear, 3 * 4 * 4 * 8 * 8);
    }
}
