//! Execution strategies for (shifted) window attention.
//!
//! Graph-level entry points take token-major `batch·h·w × C` values so the
//! model can thread gradients through them; the tensor-level wrappers run a
//! single `h×w×C` map without gradients.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use super::{hwc_var, SharedMap, WindowAttention};
use crate::autograd::Var;
use crate::cache::Memo;
use crate::error::{contract, Result};
use crate::params::{Ctx, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{RowMap, Tensor};
use crate::windowing::{
    build_shift_mask, crop_map, cyclic_maps, pad_map, partition_map, reverse_map, RelPosIndex, ShiftMask, WindowConfig,
};

fn batched(map: &SharedMap, batch: usize) -> SharedMap {
    if batch == 1 {
        Arc::clone(map)
    } else {
        Arc::new(map.batched(batch))
    }
}

fn check_tokens<T: Scalar>(tokens: &Var<T>, batch: usize, cfg: &WindowConfig) -> Result<usize> {
    match tokens.shape() {
        [rows, c] if *rows == batch * cfg.h * cfg.w => Ok(*c),
        s => Err(contract(format!(
            "expected {batch}·{}·{} tokens, got shape {s:?}",
            cfg.h, cfg.w
        ))),
    }
}

/// Runs `attn` over windows gathered by `to`, scattering results back by `from`.
#[allow(clippy::too_many_arguments)]
fn run_windows<T: Scalar>(
    ctx: &Ctx<'_, T>,
    attn: &WindowAttention,
    tokens: &Var<T>,
    batch: usize,
    to: &SharedMap,
    from: &SharedMap,
    windows: usize,
    mask: &ShiftMask,
) -> Result<Var<T>> {
    let c = tokens.shape()[1];
    let n = attn.tokens_per_window();
    let win = tokens
        .gather_rows(&batched(to, batch))?
        .reshape([batch * windows, n, c])?;
    attn.forward(ctx, &win, Some(mask))?
        .reshape([batch * windows * n, c])?
        .gather_rows(&batched(from, batch))
}

/// Pad, roll by `(−s, −s)`, partition, masked attention, then undo.
pub fn cyclic_attention<T: Scalar>(
    ctx: &Ctx<'_, T>,
    attn: &WindowAttention,
    tokens: &Var<T>,
    batch: usize,
    cfg: &WindowConfig,
) -> Result<Var<T>> {
    check_tokens(tokens, batch, cfg)?;
    let maps = cyclic_maps(cfg);
    run_windows(
        ctx,
        attn,
        tokens,
        batch,
        &maps.to_windows,
        &maps.from_windows,
        cfg.num_windows(),
        &maps.mask,
    )
}

/// Gather plan for partitioning the displaced grid directly.
///
/// Per axis the windows are the bands `[0, s)`, `[s, s+M)`, `[s+M, s+2M)`, …
/// clipped to the padded extent. Each ragged window keeps its tokens at their
/// displaced-grid slots `((y−s) mod M, (x−s) mod M)` and the empty slots are
/// masked.
#[derive(Debug)]
pub struct NaivePaddedPlan {
    pub cfg: WindowConfig,
    pub windows: usize,
    pub to_windows: SharedMap,
    pub from_windows: SharedMap,
    pub mask: Arc<ShiftMask>,
}

fn bands(extent: usize, m: usize, s: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if s > 0 {
        out.push((0, s));
    }
    let mut start = s;
    while start < extent {
        out.push((start, (start + m).min(extent)));
        start += m;
    }
    out
}

fn build_plan(cfg: &WindowConfig) -> NaivePaddedPlan {
    let (hp, wp) = cfg.padded();
    let (m, s) = (cfg.window, cfg.shift);
    let n = m * m;
    let (rows, cols) = (bands(hp, m, s), bands(wp, m, s));
    let windows = rows.len() * cols.len();
    let mut to = Vec::with_capacity(windows * n);
    let mut from = vec![0u32; cfg.h * cfg.w];
    // Slot origin of a band: the first band [0, s) sits at the bottom/right.
    let origin = |(lo, hi): (usize, usize)| {
        if lo == 0 && s > 0 {
            hi as isize - m as isize
        } else {
            lo as isize
        }
    };
    for &(y0, y1) in &rows {
        for &(x0, x1) in &cols {
            let (oy, ox) = (origin((y0, y1)), origin((x0, x1)));
            for ty in 0..m as isize {
                for tx in 0..m as isize {
                    let (y, x) = (oy + ty, ox + tx);
                    let inside =
                        |v: isize, lo: usize, hi: usize, ext: usize| v >= lo as isize && v < hi.min(ext) as isize;
                    if inside(y, y0, y1, cfg.h) && inside(x, x0, x1, cfg.w) {
                        let src = y as usize * cfg.w + x as usize;
                        from[src] = to.len() as u32;
                        to.push(src as u32);
                    } else {
                        to.push(RowMap::ZERO);
                    }
                }
            }
        }
    }
    let mut allowed = Vec::with_capacity(windows * n * n);
    for win in to.chunks_exact(n) {
        for &a in win {
            allowed.extend(win.iter().map(|&b| (a == RowMap::ZERO) == (b == RowMap::ZERO)));
        }
    }
    NaivePaddedPlan {
        cfg: *cfg,
        windows,
        to_windows: Arc::new(RowMap::new(cfg.h * cfg.w, to)),
        from_windows: Arc::new(RowMap::new(windows * n, from)),
        mask: Arc::new(ShiftMask::from_allowed(*cfg, allowed)),
    }
}

pub fn naive_padded_plan(cfg: &WindowConfig) -> Arc<NaivePaddedPlan> {
    static PLANS: OnceLock<Memo<WindowConfig, NaivePaddedPlan>> = OnceLock::new();
    PLANS.get_or_init(Memo::new).get_or_build(cfg, || build_plan(cfg))
}

/// Shifted windows taken directly on the displaced grid, each padded to `M²`.
pub fn padded_attention<T: Scalar>(
    ctx: &Ctx<'_, T>,
    attn: &WindowAttention,
    tokens: &Var<T>,
    batch: usize,
    cfg: &WindowConfig,
) -> Result<Var<T>> {
    check_tokens(tokens, batch, cfg)?;
    let plan = naive_padded_plan(cfg);
    run_windows(
        ctx,
        attn,
        tokens,
        batch,
        &plan.to_windows,
        &plan.from_windows,
        plan.windows,
        &plan.mask,
    )
}

fn check_map<T: Scalar>(x: &Tensor<T>, cfg: &WindowConfig, attn: &WindowAttention) -> Result<()> {
    if x.shape().len() != 3 || x.shape()[..2] != [cfg.h, cfg.w] {
        return Err(contract(format!(
            "map {:?} does not match config {}×{}",
            x.shape(),
            cfg.h,
            cfg.w
        )));
    }
    if cfg.window != attn.window {
        return Err(contract(format!(
            "config window {} differs from layer window {}",
            cfg.window, attn.window
        )));
    }
    Ok(())
}

/// Regular (unshifted) window attention over an `h×w×C` map.
pub fn regular_window_attention<T: Scalar>(
    store: &ParamStore<T>,
    attn: &WindowAttention,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (h, w, c) = crate::tensor::hwc(x.shape(), "regular_window_attention")?;
    let cfg = WindowConfig::regular(h, w, attn.window)?;
    let (hp, wp) = cfg.padded();
    let m = cfg.window;
    let to = Arc::new(partition_map(hp, wp, m).after(&pad_map(h, w, hp, wp)));
    let from = Arc::new(crop_map(hp, wp, h, w).after(&reverse_map(hp, wp, m)));
    let (tokens, ..) = hwc_var(x)?;
    let mask = build_shift_mask(&cfg);
    let ctx = store.ctx(false);
    let y = run_windows(&ctx, attn, &tokens, 1, &to, &from, cfg.num_windows(), &mask)?;
    y.value().reshape([h, w, c])
}

pub fn shifted_window_attention_cyclic<T: Scalar>(
    store: &ParamStore<T>,
    attn: &WindowAttention,
    x: &Tensor<T>,
    cfg: &WindowConfig,
) -> Result<Tensor<T>> {
    check_map(x, cfg, attn)?;
    let (tokens, h, w, c) = hwc_var(x)?;
    let y = cyclic_attention(&store.ctx(false), attn, &tokens, 1, cfg)?;
    y.value().reshape([h, w, c])
}

pub fn shifted_window_attention_padded<T: Scalar>(
    store: &ParamStore<T>,
    attn: &WindowAttention,
    x: &Tensor<T>,
    cfg: &WindowConfig,
) -> Result<Tensor<T>> {
    check_map(x, cfg, attn)?;
    let (tokens, h, w, c) = hwc_var(x)?;
    let y = padded_attention(&store.ctx(false), attn, &tokens, 1, cfg)?;
    y.value().reshape([h, w, c])
}

/// Coordinates of each displaced window's tokens, windows and tokens row-major.
///
/// Token `(y, x)` belongs to window `(⌊(y−s)/M⌋, ⌊(x−s)/M⌋)`.
pub fn shifted_window_groups(cfg: &WindowConfig) -> Vec<Vec<(usize, usize)>> {
    let (m, s) = (cfg.window as isize, cfg.shift as isize);
    let mut groups: BTreeMap<(isize, isize), Vec<(usize, usize)>> = BTreeMap::new();
    for y in 0..cfg.h {
        for x in 0..cfg.w {
            let key = ((y as isize - s).div_euclid(m), (x as isize - s).div_euclid(m));
            groups.entry(key).or_default().push((y, x));
        }
    }
    groups.into_values().collect()
}

/// Dense attention over exactly the tokens of `group`, in scalar loops.
///
/// Returns one output row per group member.
pub fn dense_group_attention<T: Scalar>(
    store: &ParamStore<T>,
    attn: &WindowAttention,
    x: &Tensor<T>,
    group: &[(usize, usize)],
) -> Vec<Vec<T>> {
    let raw = attn.raw(store);
    let (c, heads, d) = (attn.dim, attn.heads, attn.head_dim);
    let w = x.shape()[1];
    let xs = x.data();
    let qkv: Vec<Vec<T>> = group
        .iter()
        .map(|&(y, xx)| {
            let row = &xs[(y * w + xx) * c..(y * w + xx + 1) * c];
            (0..3 * c)
                .map(|o| {
                    let mut acc = raw.qkv_b[o];
                    for (i, &v) in row.iter().enumerate() {
                        acc += v * raw.qkv_w[i * 3 * c + o];
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let scale = T::c(1.0 / (d as f64).sqrt());
    let table_len = (2 * attn.window - 1) * (2 * attn.window - 1);
    let mut concat = vec![vec![T::zero(); c]; group.len()];
    for h in 0..heads {
        for (i, &(yi, xi)) in group.iter().enumerate() {
            let logits: Vec<T> = group
                .iter()
                .enumerate()
                .map(|(j, &(yj, xj))| {
                    let mut l = T::zero();
                    if attn.pos.has_appearance() {
                        let mut dot = T::zero();
                        for e in 0..d {
                            dot += qkv[i][h * d + e] * qkv[j][c + h * d + e];
                        }
                        l += dot * scale;
                    }
                    if let Some(table) = raw.table {
                        let b = RelPosIndex::bucket(attn.window, yi as isize - yj as isize, xi as isize - xj as isize);
                        l += table[h * table_len + b];
                    }
                    l
                })
                .collect();
            let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
            let z: T = exps.iter().copied().sum();
            for e in 0..d {
                let mut acc = T::zero();
                for (j, &p) in exps.iter().enumerate() {
                    acc += p / z * qkv[j][2 * c + h * d + e];
                }
                concat[i][h * d + e] = acc;
            }
        }
    }
    concat
        .iter()
        .map(|row| {
            (0..c)
                .map(|o| {
                    let mut acc = raw.proj_b[o];
                    for (i, &v) in row.iter().enumerate() {
                        acc += v * raw.proj_w[i * c + o];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Reference semantics of shifted window attention: no batching, no rolling,
/// no masks; each displaced window runs dense attention on its own tokens.
pub fn brute_force_shifted_attention<T: Scalar>(
    store: &ParamStore<T>,
    attn: &WindowAttention,
    x: &Tensor<T>,
    cfg: &WindowConfig,
) -> Result<Tensor<T>> {
    check_map(x, cfg, attn)?;
    let groups = shifted_window_groups(cfg);
    brute_force_over(store, attn, x, &groups)
}

/// Brute force over an explicit list of token groups, in the given order.
pub fn brute_force_over<T: Scalar>(
    store: &ParamStore<T>,
    attn: &WindowAttention,
    x: &Tensor<T>,
    groups: &[Vec<(usize, usize)>],
) -> Result<Tensor<T>> {
    let (h, w, c) = crate::tensor::hwc(x.shape(), "brute_force_shifted_attention")?;
    if c != attn.dim {
        return Err(contract(format!("map has {c} channels, layer expects {}", attn.dim)));
    }
    let mut out = Tensor::zeros([h, w, c]);
    for group in groups {
        let rows = dense_group_attention(store, attn, x, group);
        for (&(y, xx), row) in group.iter().zip(rows) {
            out.data_mut()[(y * w + xx) * c..(y * w + xx + 1) * c].copy_from_slice(&row);
        }
    }
    out.ensure_finite("brute_force_shifted_attention")?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::PosMode;
    use crate::params::Init;
    use crate::windowing::window_counts;

    fn setup<T: Scalar>(dim: usize, heads: usize, window: usize, seed: u64) -> (ParamStore<T>, WindowAttention) {
        let mut store = ParamStore::new();
        let mut init = Init::with_std(seed, 0.3);
        let attn = WindowAttention::new(&mut store, &mut init, "attn", dim, heads, window, PosMode::Relative).unwrap();
        (store, attn)
    }

    fn random_map<T: Scalar>(h: usize, w: usize, c: usize, seed: u64) -> Tensor<T> {
        Init::with_std(seed, 1.0).normal([h, w, c], 1.0)
    }

    #[test]
    fn shift_zero_cyclic_is_bitwise_regular() {
        let (store, attn) = setup::<f64>(6, 3, 3, 0);
        for (h, w) in [(6, 6), (7, 5)] {
            let x = random_map(h, w, 6, 1);
            let cfg = WindowConfig::regular(h, w, 3).unwrap();
            let a = shifted_window_attention_cyclic(&store, &attn, &x, &cfg).unwrap();
            let b = regular_window_attention(&store, &attn, &x).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn three_strategies_agree_at_8x8() {
        let (store, attn) = setup::<f64>(6, 3, 4, 2);
        let x = random_map(8, 8, 6, 3);
        let cfg = WindowConfig::shifted(8, 8, 4).unwrap();
        let cyc = shifted_window_attention_cyclic(&store, &attn, &x, &cfg).unwrap();
        let pad = shifted_window_attention_padded(&store, &attn, &x, &cfg).unwrap();
        let bf = brute_force_shifted_attention(&store, &attn, &x, &cfg).unwrap();
        assert!(cyc.max_abs_diff(&pad) <= 1e-10);
        assert!(cyc.max_abs_diff(&bf) <= 1e-10);
    }

    #[test]
    fn f32_strategies_agree() {
        let (store, attn) = setup::<f32>(6, 3, 4, 4);
        let x = random_map(8, 8, 6, 5);
        let cfg = WindowConfig::shifted(8, 8, 4).unwrap();
        let cyc = shifted_window_attention_cyclic(&store, &attn, &x, &cfg).unwrap();
        let pad = shifted_window_attention_padded(&store, &attn, &x, &cfg).unwrap();
        assert!(cyc.max_abs_diff(&pad) <= 1e-5);
    }

    #[test]
    fn padded_window_count_matches_arithmetic() {
        let cfg = WindowConfig::shifted(8, 8, 4).unwrap();
        assert_eq!(naive_padded_plan(&cfg).windows, window_counts(8, 8, 4).1);
        assert_eq!(naive_padded_plan(&cfg).windows, 9);
        assert_eq!(cfg.num_windows(), 4);
        let regular = WindowConfig::regular(8, 8, 4).unwrap();
        assert_eq!(naive_padded_plan(&regular).windows, 4);
    }

    #[test]
    fn small_grid_matches_brute_force() {
        let (store, attn) = setup::<f64>(4, 2, 2, 7);
        let x = random_map(4, 4, 4, 8);
        let cfg = WindowConfig::new(4, 4, 2, 1).unwrap();
        let cyc = shifted_window_attention_cyclic(&store, &attn, &x, &cfg).unwrap();
        let bf = brute_force_shifted_attention(&store, &attn, &x, &cfg).unwrap();
        assert!(cyc.max_abs_diff(&bf) <= 1e-10);
    }

    #[test]
    fn padded_slots_follow_displaced_grid() {
        let cfg = WindowConfig::new(5, 5, 3, 1).unwrap();
        let plan = naive_padded_plan(&cfg);
        for (slot, &src) in plan.to_windows.map.iter().enumerate() {
            if src == RowMap::ZERO {
                continue;
            }
            let (y, x) = (src as isize / 5, src as isize % 5);
            let t = slot % 9;
            assert_eq!(
                ((y - 1).rem_euclid(3), (x - 1).rem_euclid(3)),
                (t as isize / 3, t as isize % 3)
            );
        }
    }

    #[test]
    fn window_order_is_irrelevant() {
        let (store, attn) = setup::<f64>(4, 2, 3, 9);
        let x = random_map(7, 5, 4, 10);
        let cfg = WindowConfig::shifted(7, 5, 3).unwrap();
        let mut groups = shifted_window_groups(&cfg);
        let a = brute_force_over(&store, &attn, &x, &groups).unwrap();
        groups.reverse();
        let b = brute_force_over(&store, &attn, &x, &groups).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_window_brute_force_equals_window_attention() {
        let (store, attn) = setup::<f64>(4, 2, 3, 11);
        let x = random_map(3, 3, 4, 12);
        let cfg = WindowConfig::regular(3, 3, 3).unwrap();
        let bf = brute_force_shifted_attention(&store, &attn, &x, &cfg).unwrap();
        let win = regular_window_attention(&store, &attn, &x).unwrap();
        assert!(bf.max_abs_diff(&win) <= 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (store, attn) = setup::<f64>(4, 2, 3, 0);
        let x = random_map(6, 6, 4, 0);
        let cfg = WindowConfig::shifted(6, 5, 3).unwrap();
        assert!(shifted_window_attention_cyclic(&store, &attn, &x, &cfg).is_err());
        let cfg = WindowConfig::shifted(6, 6, 2).unwrap();
        assert!(shifted_window_attention_padded(&store, &attn, &x, &cfg).is_err());
    }
}
