use crate::attention::{cyclic_attention, PosMode, WindowAttention};
use crate::autograd::Var;
use crate::error::Result;
use crate::params::{Ctx, Init, ParamStore};
use crate::scalar::Scalar;
use crate::windowing::WindowConfig;

use super::config::BlockGeometry;
use super::layers::{LayerNorm, Mlp};
use super::mixer::{cyclic_token_mixing, TokenMixer};

#[derive(Debug, Clone)]
pub enum Mixing {
    Attention(WindowAttention),
    Tokens(TokenMixer),
}

/// Pre-norm block: `z + Mix(LN(z))`, then `z + MLP(LN(z))`.
#[derive(Debug, Clone)]
pub struct SwinBlock {
    pub geom: BlockGeometry,
    pub norm1: LayerNorm,
    pub mixing: Mixing,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl SwinBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        geom: BlockGeometry,
        pos: PosMode,
        mlp_hidden: usize,
        mixer_group_dim: Option<usize>,
    ) -> Result<Self> {
        let norm1 = LayerNorm::new(store, &format!("{name}.norm1"), geom.dim)?;
        let mixing = match mixer_group_dim {
            None => Mixing::Attention(WindowAttention::new(
                store,
                init,
                &format!("{name}.attn"),
                geom.dim,
                geom.heads,
                geom.window,
                pos,
            )?),
            Some(g) => Mixing::Tokens(TokenMixer::new(
                store,
                init,
                &format!("{name}.token_mix"),
                geom.dim,
                g,
                geom.window,
            )?),
        };
        let norm2 = LayerNorm::new(store, &format!("{name}.norm2"), geom.dim)?;
        let mlp = Mlp::new(store, init, &format!("{name}.mlp"), geom.dim, mlp_hidden)?;
        Ok(SwinBlock {
            geom,
            norm1,
            mixing,
            norm2,
            mlp,
        })
    }

    pub fn window_config(&self) -> Result<WindowConfig> {
        WindowConfig::new(self.geom.h, self.geom.w, self.geom.window, self.geom.shift)
    }

    /// `x` is `batch·h·w × C`, token-major.
    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>, batch: usize) -> Result<Var<T>> {
        let cfg = self.window_config()?;
        let y = self.norm1.forward(ctx, x)?;
        let y = match &self.mixing {
            Mixing::Attention(a) => cyclic_attention(ctx, a, &y, batch, &cfg)?,
            Mixing::Tokens(m) => cyclic_token_mixing(ctx, m, &y, batch, &cfg)?,
        };
        let x = x.add(&y)?;
        let y = self.mlp.forward(ctx, &self.norm2.forward(ctx, &x)?)?;
        x.add(&y)
    }
}
