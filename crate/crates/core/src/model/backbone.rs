use std::sync::Arc;

use crate::autograd::Var;
use crate::error::{contract, Result};
use crate::params::{Ctx, Init, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{RowMap, Tensor};

use super::block::SwinBlock;
use super::config::ModelConfig;
use super::layers::{LayerNorm, Linear};

#[derive(Debug, Clone)]
pub struct PatchEmbed {
    pub proj: Linear,
    pub norm: LayerNorm,
    /// Learned `tokens × C` embedding, present for absolute position modes.
    pub abs_pos: Option<ParamId>,
}

/// Concatenate each 2×2 token group, normalize, project `4C → 2C`.
#[derive(Debug, Clone)]
pub struct PatchMerging {
    pub from: (usize, usize),
    pub norm: LayerNorm,
    pub reduction: Linear,
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub merge: Option<PatchMerging>,
    pub blocks: Vec<SwinBlock>,
}

/// The hierarchical backbone with a pooled linear classifier.
#[derive(Debug, Clone)]
pub struct SwinModel {
    pub cfg: ModelConfig,
    pub embed: PatchEmbed,
    pub stages: Vec<Stage>,
    pub norm: LayerNorm,
    pub head: Linear,
}

/// Rows of a `batch·H·W` pixel map into `batch·gh·gw` patches of `P·P` pixels,
/// zero beyond the image.
pub fn patch_map(batch: usize, h: usize, w: usize, p: usize) -> RowMap {
    let (gh, gw) = (h.div_ceil(p), w.div_ceil(p));
    let mut map = Vec::with_capacity(batch * gh * gw * p * p);
    for b in 0..batch {
        for py in 0..gh {
            for px in 0..gw {
                for dy in 0..p {
                    for dx in 0..p {
                        let (y, x) = (py * p + dy, px * p + dx);
                        map.push(if y < h && x < w {
                            (b * h * w + y * w + x) as u32
                        } else {
                            RowMap::ZERO
                        });
                    }
                }
            }
        }
    }
    RowMap::new(batch * h * w, map)
}

/// Rows of a `batch·h·w` token map into 2×2 groups, ordered top-left,
/// top-right, bottom-left, bottom-right; zero beyond the map.
pub fn merge_map(batch: usize, h: usize, w: usize) -> RowMap {
    let (h2, w2) = (h.div_ceil(2), w.div_ceil(2));
    let mut map = Vec::with_capacity(batch * h2 * w2 * 4);
    for b in 0..batch {
        for i in 0..h2 {
            for j in 0..w2 {
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let (y, x) = (2 * i + dy, 2 * j + dx);
                    map.push(if y < h && x < w {
                        (b * h * w + y * w + x) as u32
                    } else {
                        RowMap::ZERO
                    });
                }
            }
        }
    }
    RowMap::new(batch * h * w, map)
}

impl PatchEmbed {
    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, cfg: &ModelConfig, images: &Tensor<T>) -> Result<Var<T>> {
        let (b, h, w, c) = match images.shape() {
            [b, h, w, c] => (*b, *h, *w, *c),
            s => return Err(contract(format!("images must be batch×H×W×C, got {s:?}"))),
        };
        if c != cfg.in_channels || (h, w) != cfg.input {
            return Err(contract(format!(
                "model expects {}×{}×{} images, got {h}×{w}×{c}",
                cfg.input.0, cfg.input.1, cfg.in_channels
            )));
        }
        let p = cfg.patch_size;
        let (gh, gw) = cfg.patch_grid();
        let px = Var::constant(images.reshape([b * h * w, c])?);
        let patches = px
            .gather_rows(&Arc::new(patch_map(b, h, w, p)))?
            .reshape([b * gh * gw, p * p * c])?;
        let x = self.norm.forward(ctx, &self.proj.forward(ctx, &patches)?)?;
        match self.abs_pos {
            Some(id) => x
                .reshape([b, gh * gw, cfg.embed_dim])?
                .add(&ctx.p(id))?
                .reshape([b * gh * gw, cfg.embed_dim]),
            None => Ok(x),
        }
    }
}

impl PatchMerging {
    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: &Var<T>, batch: usize) -> Result<Var<T>> {
        let (h, w) = self.from;
        let c = x.shape()[1];
        let groups = x
            .gather_rows(&Arc::new(merge_map(batch, h, w)))?
            .reshape([batch * h.div_ceil(2) * w.div_ceil(2), 4 * c])?;
        self.reduction.forward(ctx, &self.norm.forward(ctx, &groups)?)
    }
}

impl SwinModel {
    /// Build with parameters drawn from `seed`.
    pub fn new<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<(SwinModel, ParamStore<T>)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let s = &mut store;
        let (gh, gw) = cfg.patch_grid();
        let c0 = cfg.embed_dim;
        let raw = cfg.patch_size * cfg.patch_size * cfg.in_channels;
        let embed = PatchEmbed {
            proj: Linear::new(s, &mut init, "patch_embed.proj", raw, c0, true)?,
            norm: LayerNorm::new(s, "patch_embed.norm", c0)?,
            abs_pos: if cfg.pos.has_absolute() {
                Some(s.add("patch_embed.absolute_pos_embed", init.trunc_normal([gh * gw, c0]), true)?)
            } else {
                None
            },
        };
        let mut stages = Vec::new();
        for spec in cfg.stages() {
            let name = format!("stages.{}", spec.index);
            let merge = match spec.merge_from {
                Some(from) => {
                    let cin = spec.dim / 2;
                    Some(PatchMerging {
                        from,
                        norm: LayerNorm::new(s, &format!("{name}.merge.norm"), 4 * cin)?,
                        reduction: Linear::new(
                            s,
                            &mut init,
                            &format!("{name}.merge.reduction"),
                            4 * cin,
                            spec.dim,
                            false,
                        )?,
                    })
                }
                None => None,
            };
            let blocks = spec
                .blocks
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    SwinBlock::new(
                        s,
                        &mut init,
                        &format!("{name}.blocks.{i}"),
                        *g,
                        cfg.pos,
                        cfg.mlp_hidden(g.dim),
                        cfg.mixer_group_dim,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage { merge, blocks });
        }
        let norm = LayerNorm::new(s, "norm", cfg.final_dim())?;
        let head = Linear::new(s, &mut init, "head", cfg.final_dim(), cfg.num_classes, true)?;
        let model = SwinModel {
            cfg: cfg.clone(),
            embed,
            stages,
            norm,
            head,
        };
        Ok((model, store))
    }

    /// Token maps after each stage, each `batch·h_s·w_s × C_s`.
    pub fn forward_features<T: Scalar>(&self, ctx: &Ctx<'_, T>, images: &Tensor<T>) -> Result<Vec<Var<T>>> {
        let batch = images.shape().first().copied().unwrap_or(0);
        let mut x = self.embed.forward(ctx, &self.cfg, images)?;
        let mut outs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            if let Some(m) = &stage.merge {
                x = m.forward(ctx, &x, batch)?;
            }
            for block in &stage.blocks {
                x = block.forward(ctx, &x, batch)?;
            }
            outs.push(x.clone());
        }
        Ok(outs)
    }

    /// `batch × numClasses` logits.
    pub fn forward<T: Scalar>(&self, ctx: &Ctx<'_, T>, images: &Tensor<T>) -> Result<Var<T>> {
        let batch = images.shape().first().copied().unwrap_or(0);
        let x = self
            .forward_features(ctx, images)?
            .pop()
            .ok_or_else(|| contract("model has no stages"))?;
        let c = x.shape()[1];
        let x = self.norm.forward(ctx, &x)?;
        let pooled = x.reshape([batch, x.shape()[0] / batch.max(1), c])?.mean_axis(1)?;
        self.head.forward(ctx, &pooled)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &SwinBlock> {
        self.stages.iter().flat_map(|s| s.blocks.iter())
    }
}
