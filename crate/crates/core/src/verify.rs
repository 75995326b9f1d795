//! Self-checks run by the command-line `verify` subcommand: strategy
//! equivalence over a geometry grid, mask and relative-index enumeration,
//! and finite-difference gradients through a pair of blocks.

use serde::Serialize;

use crate::attention::{
    brute_force_shifted_attention, shifted_window_attention_cyclic, shifted_window_attention_padded, PosMode,
    WindowAttention,
};
use crate::autograd::Var;
use crate::error::Result;
use crate::gradcheck::finite_diff_check;
use crate::model::{BlockGeometry, SwinBlock};
use crate::params::{Init, ParamStore};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;
use crate::windowing::{build_shift_mask, relative_position_index, RelPosIndex, WindowConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub pass: bool,
    /// Worst observed error or mismatch count.
    pub metric: f64,
    pub threshold: f64,
    pub detail: String,
}

/// `h, w ∈ 4..=17`, `M ∈ {2,3,4,7}`, shift `0` and `⌊M/2⌋`.
pub fn geometry_grid() -> Vec<WindowConfig> {
    let mut out = Vec::new();
    for h in 4..=17 {
        for w in 4..=17 {
            for m in [2, 3, 4, 7] {
                for s in [0, m / 2] {
                    out.push(WindowConfig::new(h, w, m, s).expect("valid grid geometry"));
                }
            }
        }
    }
    out
}

pub fn tolerance(dtype: DType) -> f64 {
    match dtype {
        DType::F32 => 1e-5,
        DType::F64 => 1e-10,
    }
}

/// Max |Δ| among cyclic, padded and brute force over the grid, `seeds` each.
pub fn strategy_equivalence<T: Scalar>(grid: &[WindowConfig], seeds: &[u64]) -> Result<(f64, Option<WindowConfig>)> {
    let (dim, heads) = (4, 2);
    let mut worst = (0.0f64, None);
    for cfg in grid {
        for &seed in seeds {
            let mut store = ParamStore::<T>::new();
            let mut init = Init::with_std(seed, 0.5);
            let attn = WindowAttention::new(&mut store, &mut init, "attn", dim, heads, cfg.window, PosMode::Relative)?;
            let x: Tensor<T> = init.normal([cfg.h, cfg.w, dim], 1.0);
            let c = shifted_window_attention_cyclic(&store, &attn, &x, cfg)?;
            let p = shifted_window_attention_padded(&store, &attn, &x, cfg)?;
            let b = brute_force_shifted_attention(&store, &attn, &x, cfg)?;
            let d = c.max_abs_diff(&p).max(c.max_abs_diff(&b));
            if d > worst.0 {
                worst = (d, Some(*cfg));
            }
        }
    }
    Ok(worst)
}

/// Mismatches between the shift mask and coordinate membership: two slots
/// may attend iff both are padding or both are real tokens of the same
/// displaced window `(⌊(y−s)/M⌋, ⌊(x−s)/M⌋)`.
pub fn mask_mismatches(cfg: &WindowConfig) -> usize {
    let mask = build_shift_mask(cfg);
    let (hp, wp) = cfg.padded();
    let (m, s) = (cfg.window, cfg.shift);
    let gw = wp / m;
    let n = m * m;
    let key = |win: usize, t: usize| -> Option<(isize, isize)> {
        // Rolled position of the slot, then the original padded cell.
        let (r, c) = ((win / gw) * m + t / m, (win % gw) * m + t % m);
        let (y, x) = ((r + s) % hp, (c + s) % wp);
        (y < cfg.h && x < cfg.w).then(|| {
            (
                (y as isize - s as isize).div_euclid(m as isize),
                (x as isize - s as isize).div_euclid(m as isize),
            )
        })
    };
    let mut bad = 0;
    for win in 0..cfg.num_windows() {
        for i in 0..n {
            for j in 0..n {
                if (key(win, i) == key(win, j)) != mask.is_allowed(win, i, j) {
                    bad += 1;
                }
            }
        }
    }
    bad
}

/// Mismatches between the stored index and direct offset enumeration.
pub fn rel_index_mismatches(window: usize) -> usize {
    let idx = relative_position_index(window);
    let n = window * window;
    let side = 2 * window - 1;
    let mut bad = 0;
    for i in 0..n {
        for j in 0..n {
            let dy = (i / window) as isize - (j / window) as isize;
            let dx = (i % window) as isize - (j % window) as isize;
            let want = ((dy + window as isize - 1) as usize) * side + (dx + window as isize - 1) as usize;
            if idx.get(i, j) != want || RelPosIndex::bucket(window, dy, dx) != want {
                bad += 1;
            }
        }
    }
    bad
}

/// Max relative error of analytic vs central-difference gradients through a
/// regular block followed by a shifted one (padding, mask, bias gather, norms,
/// GELU and residuals all on the path).
pub fn block_pair_gradcheck(seed: u64, step: f64) -> Result<f64> {
    let geom = BlockGeometry {
        h: 5,
        w: 6,
        dim: 4,
        heads: 2,
        window: 3,
        shift: 0,
    };
    let mut store = ParamStore::<f64>::new();
    let mut init = Init::with_std(seed, 0.3);
    let b0 = SwinBlock::new(&mut store, &mut init, "b0", geom, PosMode::Relative, 8, None)?;
    let b1 = SwinBlock::new(
        &mut store,
        &mut init,
        "b1",
        BlockGeometry { shift: 1, ..geom },
        PosMode::Relative,
        8,
        None,
    )?;
    // Perturb norms and biases away from their initial constants.
    for p in store.iter_mut() {
        if p.name.contains("norm") || p.name.ends_with("bias") {
            let noise: Tensor<f64> = init.normal(p.value.shape().to_vec(), 0.3);
            for (v, n) in p.value.data_mut().iter_mut().zip(noise.data()) {
                *v += n;
            }
        }
    }
    let x = Var::constant(init.normal::<f64>([30, 4], 1.0));
    let r = Var::constant(init.normal::<f64>([30, 4], 1.0));
    let report = finite_diff_check(&mut store, step, |ctx| {
        let y = b0.forward(&ctx, &x, 1)?;
        b1.forward(&ctx, &y, 1)?.mul(&r)?.sum()
    })?;
    Ok(report.max_rel_error)
}

/// The full suite. `seeds` random seeds per grid geometry.
pub fn run_all(seed: u64, dtype: DType, seeds: usize) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let grid = geometry_grid();
    let seed_list: Vec<u64> = (0..seeds as u64).map(|i| seed.wrapping_add(i)).collect();
    let (d, at) = match dtype {
        DType::F32 => strategy_equivalence::<f32>(&grid, &seed_list)?,
        DType::F64 => strategy_equivalence::<f64>(&grid, &seed_list)?,
    };
    let tol = tolerance(dtype);
    out.push(CheckOutcome {
        name: "strategy-equivalence".into(),
        pass: d <= tol,
        metric: d,
        threshold: tol,
        detail: format!("{} geometries × {seeds} seeds; worst at {at:?}", grid.len()),
    });
    let masks: usize = grid.iter().map(mask_mismatches).sum();
    out.push(CheckOutcome {
        name: "mask-enumeration".into(),
        pass: masks == 0,
        metric: masks as f64,
        threshold: 0.0,
        detail: format!("{} geometries", grid.len()),
    });
    let rel: usize = [1, 2, 3, 4, 7].into_iter().map(rel_index_mismatches).sum();
    out.push(CheckOutcome {
        name: "relative-index".into(),
        pass: rel == 0,
        metric: rel as f64,
        threshold: 0.0,
        detail: "M ∈ {1,2,3,4,7}".into(),
    });
    let mut worst = 0.0f64;
    for i in 0..seeds.max(1) as u64 {
        worst = worst.max(block_pair_gradcheck(seed.wrapping_add(i), 1e-5)?);
    }
    out.push(CheckOutcome {
        name: "block-pair-gradients".into(),
        pass: worst <= 1e-4,
        metric: worst,
        threshold: 1e-4,
        detail: format!("{} seeds, f64, step 1e-5", seeds.max(1)),
    });
    Ok(out)
}
