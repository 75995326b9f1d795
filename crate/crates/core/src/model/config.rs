use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::PosMode;
use crate::error::{contract, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    T,
    S,
    B,
    L,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::T, Variant::S, Variant::B, Variant::L];

    /// `(C, depths, heads)`.
    pub fn shape(self) -> (usize, [usize; 4], [usize; 4]) {
        match self {
            Variant::T => (96, [2, 2, 6, 2], [3, 6, 12, 24]),
            Variant::S => (96, [2, 2, 18, 2], [3, 6, 12, 24]),
            Variant::B => (128, [2, 2, 18, 2], [4, 8, 16, 32]),
            Variant::L => (192, [2, 2, 18, 2], [6, 12, 24, 48]),
        }
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().trim_start_matches("SWIN-") {
            "T" => Ok(Variant::T),
            "S" => Ok(Variant::S),
            "B" => Ok(Variant::B),
            "L" => Ok(Variant::L),
            _ => Err(format!("unknown variant `{s}` (expected T, S, B or L)")),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "swin-{}", format!("{self:?}").to_lowercase())
    }
}

/// Architecture hyper-parameters, serialized as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub tag: String,
    pub embed_dim: usize,
    pub depths: Vec<usize>,
    pub heads: Vec<usize>,
    pub window: usize,
    pub mlp_ratio: f64,
    pub head_dim: usize,
    pub patch_size: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    /// Image extent `(height, width)` in pixels.
    pub input: (usize, usize),
    pub pos: PosMode,
    /// Whether odd-indexed blocks use the displaced partition.
    #[serde(default = "yes")]
    pub shift: bool,
    /// Channels per mixing group; set for the token-mixing variant.
    #[serde(default)]
    pub mixer_group_dim: Option<usize>,
}

fn yes() -> bool {
    true
}

/// Geometry of one block as built for a concrete input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockGeometry {
    pub h: usize,
    pub w: usize,
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
    pub shift: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageSpec {
    pub index: usize,
    /// Token grid `(h, w)` of the stage.
    pub resolution: (usize, usize),
    pub dim: usize,
    /// Token grid entering the patch merge that opens this stage.
    pub merge_from: Option<(usize, usize)>,
    pub blocks: Vec<BlockGeometry>,
}

impl ModelConfig {
    pub fn variant(v: Variant, input: (usize, usize), pos: PosMode) -> Self {
        let (c, depths, heads) = v.shape();
        ModelConfig {
            tag: v.to_string(),
            embed_dim: c,
            depths: depths.to_vec(),
            heads: heads.to_vec(),
            window: 7,
            mlp_ratio: 4.0,
            head_dim: 32,
            patch_size: 4,
            in_channels: 3,
            num_classes: 1000,
            input,
            pos,
            shift: true,
            mixer_group_dim: None,
        }
    }

    /// Small configuration for desk-scale training: `C=16`, one block per
    /// stage, `M=4`, 32×32 input, two classes.
    pub fn tiny() -> Self {
        ModelConfig {
            tag: "tiny".into(),
            embed_dim: 16,
            depths: vec![1, 1, 1, 1],
            heads: vec![2, 4, 8, 16],
            window: 4,
            mlp_ratio: 4.0,
            head_dim: 8,
            patch_size: 4,
            in_channels: 3,
            num_classes: 2,
            input: (32, 32),
            pos: PosMode::Relative,
            shift: true,
            mixer_group_dim: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depths.is_empty() || self.depths.len() != self.heads.len() {
            return Err(contract(format!(
                "{} depths but {} head counts",
                self.depths.len(),
                self.heads.len()
            )));
        }
        if self.window == 0 || self.patch_size == 0 || self.embed_dim == 0 || self.head_dim == 0 {
            return Err(contract("window, patch size, dims must be positive"));
        }
        if self.input.0 == 0 || self.input.1 == 0 || self.in_channels == 0 || self.num_classes == 0 {
            return Err(contract("input extents, channels and classes must be positive"));
        }
        if self.mlp_ratio.is_nan() || self.mlp_ratio <= 0.0 {
            return Err(contract("mlp ratio must be positive"));
        }
        for (s, &h) in self.heads.iter().enumerate() {
            let dim = self.stage_dim(s);
            if h * self.head_dim != dim {
                return Err(contract(format!(
                    "stage {s}: {h} heads × d {} ≠ dim {dim}",
                    self.head_dim
                )));
            }
            if let Some(g) = self.mixer_group_dim {
                if g == 0 || !dim.is_multiple_of(g) {
                    return Err(contract(format!("stage {s}: dim {dim} not divisible by group dim {g}")));
                }
            }
        }
        Ok(())
    }

    pub fn stage_dim(&self, s: usize) -> usize {
        self.embed_dim << s
    }

    pub fn mlp_hidden(&self, dim: usize) -> usize {
        (dim as f64 * self.mlp_ratio).round() as usize
    }

    /// Token grid after patch embedding, padding the image up to the patch size.
    pub fn patch_grid(&self) -> (usize, usize) {
        (
            self.input.0.div_ceil(self.patch_size),
            self.input.1.div_ceil(self.patch_size),
        )
    }

    /// Per-stage layout. A stage whose grid fits inside one window uses a
    /// window equal to its shorter side and no shift; within a stage blocks
    /// alternate shift `0` and `⌊M/2⌋`, an unpaired last block keeping `0`.
    pub fn stages(&self) -> Vec<StageSpec> {
        let mut res = self.patch_grid();
        let mut out = Vec::with_capacity(self.depths.len());
        for (s, (&depth, &heads)) in self.depths.iter().zip(&self.heads).enumerate() {
            let merge_from = (s > 0).then_some(res);
            if s > 0 {
                res = (res.0.div_ceil(2), res.1.div_ceil(2));
            }
            let (window, shift) = if res.0.min(res.1) <= self.window {
                (res.0.min(res.1), 0)
            } else {
                (self.window, self.window / 2)
            };
            let blocks = (0..depth)
                .map(|b| BlockGeometry {
                    h: res.0,
                    w: res.1,
                    dim: self.stage_dim(s),
                    heads,
                    window,
                    shift: if self.shift && b % 2 == 1 { shift } else { 0 },
                })
                .collect();
            out.push(StageSpec {
                index: s,
                resolution: res,
                dim: self.stage_dim(s),
                merge_from,
                blocks,
            });
        }
        out
    }

    pub fn final_dim(&self) -> usize {
        self.stage_dim(self.depths.len() - 1)
    }
}
