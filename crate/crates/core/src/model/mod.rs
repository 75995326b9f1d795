//! The hierarchical backbone: patch embedding, stages of blocks with
//! alternating window displacement, patch merging and a pooled classifier;
//! plus the token-mixing variant, size and cost audits, and a toy trainer.

mod audit;
mod backbone;
mod block;
mod config;
mod layers;
mod mixer;
mod train;

pub use audit::{
    closed_form_flops, count_flops, count_params, count_params_built, msa_flops, window_msa_flops, FlopsReport,
    ModuleFlops, ParamReport,
};
pub use backbone::{merge_map, patch_map, PatchEmbed, PatchMerging, Stage, SwinModel};
pub use block::{Mixing, SwinBlock};
pub use config::{BlockGeometry, ModelConfig, StageSpec, Variant};
pub use layers::{LayerNorm, Linear, Mlp, LN_EPS};
pub use mixer::{brute_force_token_mixing, cyclic_token_mixing, TokenMixer};
pub use train::{evaluate, make_dataset, train_toy, Dataset, StepLog, Task, TrainConfig, TrainLog};
