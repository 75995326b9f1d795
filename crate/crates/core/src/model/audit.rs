//! Parameter and multiply-accumulate accounting.
//!
//! Costs are counted in multiply-accumulates of matrix products; norms,
//! softmax, activations, residual adds and pooling are excluded.

use std::fmt;

use serde::Serialize;

use crate::error::Result;
use crate::meter::{self, MacCounts};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::windowing::WindowConfig;

use super::backbone::SwinModel;
use super::config::{BlockGeometry, ModelConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModuleParams {
    pub name: String,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub model: String,
    pub total: u64,
    pub modules: Vec<ModuleParams>,
}

/// Global attention over `h·w` tokens: `4hwC² + 2(hw)²C`.
pub fn msa_flops(h: u64, w: u64, c: u64) -> u64 {
    4 * h * w * c * c + 2 * (h * w) * (h * w) * c
}

/// Window attention: `4hwC² + 2M²hwC`.
pub fn window_msa_flops(h: u64, w: u64, c: u64, m: u64) -> u64 {
    4 * h * w * c * c + 2 * m * m * h * w * c
}

fn block_params(cfg: &ModelConfig, g: &BlockGeometry) -> u64 {
    let c = g.dim as u64;
    let hidden = cfg.mlp_hidden(g.dim) as u64;
    let n = (g.window * g.window) as u64;
    let mixing = match cfg.mixer_group_dim {
        Some(d) => (c / d as u64) * n * n,
        None => {
            let side = (2 * g.window - 1) as u64;
            let table = if cfg.pos.has_relative() {
                g.heads as u64 * side * side
            } else {
                0
            };
            3 * c * c + 3 * c + c * c + c + table
        }
    };
    2 * c + mixing + 2 * c + (c * hidden + hidden) + (hidden * c + c)
}

/// Exact count by shape arithmetic, without allocating the model.
pub fn count_params(cfg: &ModelConfig) -> Result<ParamReport> {
    cfg.validate()?;
    let mut modules = Vec::new();
    let c0 = cfg.embed_dim as u64;
    let raw = (cfg.patch_size * cfg.patch_size * cfg.in_channels) as u64;
    let (gh, gw) = cfg.patch_grid();
    let abs = if cfg.pos.has_absolute() {
        (gh * gw) as u64 * c0
    } else {
        0
    };
    modules.push(ModuleParams {
        name: "patch_embed".into(),
        params: raw * c0 + c0 + 2 * c0 + abs,
    });
    for spec in cfg.stages() {
        if spec.merge_from.is_some() {
            let cin = (spec.dim / 2) as u64;
            modules.push(ModuleParams {
                name: format!("stages.{}.merge", spec.index),
                params: 2 * 4 * cin + 4 * cin * spec.dim as u64,
            });
        }
        modules.push(ModuleParams {
            name: format!("stages.{}.blocks", spec.index),
            params: spec.blocks.iter().map(|g| block_params(cfg, g)).sum(),
        });
    }
    let cf = cfg.final_dim() as u64;
    let k = cfg.num_classes as u64;
    modules.push(ModuleParams {
        name: "norm".into(),
        params: 2 * cf,
    });
    modules.push(ModuleParams {
        name: "head".into(),
        params: cf * k + k,
    });
    Ok(ParamReport {
        model: cfg.tag.clone(),
        total: modules.iter().map(|m| m.params).sum(),
        modules,
    })
}

fn module_of(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    match parts.as_slice() {
        ["stages", s, kind, ..] => format!("stages.{s}.{kind}"),
        [first, ..] => first.to_string(),
        [] => String::new(),
    }
}

/// Count by summing the shapes of an actual parameter store.
pub fn count_params_built<T: Scalar>(tag: &str, store: &ParamStore<T>) -> ParamReport {
    let mut modules: Vec<ModuleParams> = Vec::new();
    for (_, p) in store.iter() {
        let name = module_of(&p.name);
        let n = p.value.len() as u64;
        match modules.last_mut() {
            Some(m) if m.name == name => m.params += n,
            _ => modules.push(ModuleParams { name, params: n }),
        }
    }
    ParamReport {
        model: tag.to_string(),
        total: modules.iter().map(|m| m.params).sum(),
        modules,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ModuleFlops {
    pub name: String,
    pub linear: u64,
    /// `2M²hwC` for attention blocks: query-key plus probability-value.
    pub attention: u64,
    pub token_mix: u64,
}

impl ModuleFlops {
    pub fn total(&self) -> u64 {
        self.linear + self.attention + self.token_mix
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlopsReport {
    pub model: String,
    pub input: (usize, usize),
    pub modules: Vec<ModuleFlops>,
    pub closed_form_total: u64,
    /// Counts metered during a forward pass of one image, when run.
    pub instrumented: Option<MacCounts>,
}

fn block_flops(cfg: &ModelConfig, g: &BlockGeometry) -> Result<ModuleFlops> {
    let wc = WindowConfig::new(g.h, g.w, g.window, g.shift)?;
    let (hp, wp) = wc.padded();
    let (tokens, padded) = ((g.h * g.w) as u64, (hp * wp) as u64);
    let c = g.dim as u64;
    let n = (g.window * g.window) as u64;
    let mlp = 2 * tokens * c * cfg.mlp_hidden(g.dim) as u64;
    Ok(match cfg.mixer_group_dim {
        Some(_) => ModuleFlops {
            linear: mlp,
            token_mix: padded * n * c,
            ..Default::default()
        },
        None => {
            let terms = if cfg.pos.has_appearance() { 2 } else { 1 };
            ModuleFlops {
                linear: 4 * padded * c * c + mlp,
                attention: terms * n * padded * c,
                ..Default::default()
            }
        }
    })
}

/// Closed-form per-module costs; windows run over the padded map.
pub fn closed_form_flops(cfg: &ModelConfig) -> Result<Vec<ModuleFlops>> {
    cfg.validate()?;
    let (gh, gw) = cfg.patch_grid();
    let raw = (cfg.patch_size * cfg.patch_size * cfg.in_channels) as u64;
    let mut out = vec![ModuleFlops {
        name: "patch_embed".into(),
        linear: (gh * gw) as u64 * raw * cfg.embed_dim as u64,
        ..Default::default()
    }];
    for spec in cfg.stages() {
        if spec.merge_from.is_some() {
            let (h, w) = spec.resolution;
            let cin = (spec.dim / 2) as u64;
            out.push(ModuleFlops {
                name: format!("stages.{}.merge", spec.index),
                linear: (h * w) as u64 * 4 * cin * spec.dim as u64,
                ..Default::default()
            });
        }
        let mut blocks = ModuleFlops {
            name: format!("stages.{}.blocks", spec.index),
            ..Default::default()
        };
        for g in &spec.blocks {
            let f = block_flops(cfg, g)?;
            blocks.linear += f.linear;
            blocks.attention += f.attention;
            blocks.token_mix += f.token_mix;
        }
        out.push(blocks);
    }
    out.push(ModuleFlops {
        name: "head".into(),
        linear: (cfg.final_dim() * cfg.num_classes) as u64,
        ..Default::default()
    });
    Ok(out)
}

/// Closed-form costs, and when `instrument` is set the metered counts of a
/// forward pass over one zero image with a freshly built `f32` model.
pub fn count_flops(cfg: &ModelConfig, instrument: bool) -> Result<FlopsReport> {
    let modules = closed_form_flops(cfg)?;
    let instrumented = if instrument {
        let (model, store) = SwinModel::new::<f32>(cfg, 0)?;
        let image = Tensor::zeros([1, cfg.input.0, cfg.input.1, cfg.in_channels]);
        let (logits, counts) = meter::measure(|| model.forward(&store.ctx(false), &image));
        logits?;
        Some(counts)
    } else {
        None
    };
    Ok(FlopsReport {
        model: cfg.tag.clone(),
        input: cfg.input,
        closed_form_total: modules.iter().map(ModuleFlops::total).sum(),
        modules,
        instrumented,
    })
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<20} {:>14}", "module", "params")?;
        for m in &self.modules {
            writeln!(f, "{:<20} {:>14}", m.name, m.params)?;
        }
        write!(
            f,
            "{:<20} {:>14}  ({:.2}M)",
            "total",
            self.total,
            self.total as f64 / 1e6
        )
    }
}

impl fmt::Display for FlopsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<20} {:>14} {:>14} {:>14}",
            "module", "linear", "attention", "token-mix"
        )?;
        for m in &self.modules {
            writeln!(
                f,
                "{:<20} {:>14} {:>14} {:>14}",
                m.name, m.linear, m.attention, m.token_mix
            )?;
        }
        write!(
            f,
            "{:<20} {:>14}  ({:.3}G MACs)",
            "closed-form total",
            self.closed_form_total,
            self.closed_form_total as f64 / 1e9
        )?;
        if let Some(c) = &self.instrumented {
            write!(
                f,
                "\n{:<20} {:>14}  ({:.3}G MACs; attention {})",
                "instrumented",
                c.total(),
                c.total() as f64 / 1e9,
                c.attention()
            )?;
        }
        Ok(())
    }
}
