//! Window geometry: partition and reverse, bottom-right padding, the cyclic
//! shift, the shifted-configuration mask and relative position indices.
//!
//! Windows are enumerated row-major over the window grid and tokens row-major
//! within a window. Every rearrangement is expressed as a [`RowMap`] over a
//! token-major `h·w × C` layout so that they compose into a single gather.

use std::sync::{Arc, OnceLock};

use serde::Serialize;

use crate::cache::Memo;
use crate::error::{contract, Result};
use crate::scalar::Scalar;
use crate::tensor::{hwc, RowMap, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct WindowConfig {
    /// Window side `M` in tokens.
    pub window: usize,
    /// Displacement of the partition grid, `0 ≤ shift < M`.
    pub shift: usize,
    pub h: usize,
    pub w: usize,
}

impl WindowConfig {
    pub fn new(h: usize, w: usize, window: usize, shift: usize) -> Result<Self> {
        if window == 0 {
            return Err(contract("window size must be at least 1"));
        }
        if shift >= window {
            return Err(contract(format!("shift {shift} must be below window {window}")));
        }
        if h == 0 || w == 0 {
            return Err(contract("feature map extents must be positive"));
        }
        Ok(WindowConfig { window, shift, h, w })
    }

    pub fn regular(h: usize, w: usize, window: usize) -> Result<Self> {
        Self::new(h, w, window, 0)
    }

    /// Shift of `⌊M/2⌋`.
    pub fn shifted(h: usize, w: usize, window: usize) -> Result<Self> {
        Self::new(h, w, window, window / 2)
    }

    /// Smallest multiples of `M` covering `(h, w)`.
    pub fn padded(&self) -> (usize, usize) {
        (
            self.h.div_ceil(self.window) * self.window,
            self.w.div_ceil(self.window) * self.window,
        )
    }

    pub fn grid(&self) -> (usize, usize) {
        let (hp, wp) = self.padded();
        (hp / self.window, wp / self.window)
    }

    pub fn num_windows(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window * self.window
    }

    pub fn needs_padding(&self) -> bool {
        self.padded() != (self.h, self.w)
    }
}

/// Window counts `(regular, shifted)`: `⌈h/M⌉·⌈w/M⌉` and the naive shifted
/// partition's `(⌈h/M⌉+1)·(⌈w/M⌉+1)`.
pub fn window_counts(h: usize, w: usize, window: usize) -> (usize, usize) {
    let gh = h.div_ceil(window);
    let gw = w.div_ceil(window);
    (gh * gw, (gh + 1) * (gw + 1))
}

pub fn pad_map(h: usize, w: usize, hp: usize, wp: usize) -> RowMap {
    let mut map = Vec::with_capacity(hp * wp);
    for i in 0..hp {
        for j in 0..wp {
            map.push(if i < h && j < w {
                (i * w + j) as u32
            } else {
                RowMap::ZERO
            });
        }
    }
    RowMap::new(h * w, map)
}

pub fn crop_map(hp: usize, wp: usize, h: usize, w: usize) -> RowMap {
    let mut map = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            map.push((i * wp + j) as u32);
        }
    }
    RowMap::new(hp * wp, map)
}

/// `hp×wp` map to `numWindows×M²` windows.
pub fn partition_map(hp: usize, wp: usize, m: usize) -> RowMap {
    let mut map = Vec::with_capacity(hp * wp);
    for wy in 0..hp / m {
        for wx in 0..wp / m {
            for ty in 0..m {
                for tx in 0..m {
                    map.push(((wy * m + ty) * wp + wx * m + tx) as u32);
                }
            }
        }
    }
    RowMap::new(hp * wp, map)
}

pub fn reverse_map(hp: usize, wp: usize, m: usize) -> RowMap {
    let gw = wp / m;
    let mut map = Vec::with_capacity(hp * wp);
    for i in 0..hp {
        for j in 0..wp {
            let win = (i / m) * gw + j / m;
            map.push((win * m * m + (i % m) * m + j % m) as u32);
        }
    }
    RowMap::new(hp * wp, map)
}

/// Bottom-right zero padding of an `h×w×C` map to multiples of `window`.
pub fn pad_bottom_right<T: Scalar>(x: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let (h, w, c) = hwc(x.shape(), "pad_bottom_right")?;
    let hp = h.div_ceil(window) * window;
    let wp = w.div_ceil(window) * window;
    x.gather_rows(&pad_map(h, w, hp, wp))?.reshape([hp, wp, c])
}

/// `h×w×C` (already padded) to `numWindows×M²×C`.
pub fn window_partition<T: Scalar>(x: &Tensor<T>, cfg: &WindowConfig) -> Result<Tensor<T>> {
    let (h, w, c) = hwc(x.shape(), "window_partition")?;
    let m = cfg.window;
    if h % m != 0 || w % m != 0 {
        return Err(contract(format!(
            "extents {h}×{w} are not multiples of window {m}; pad first"
        )));
    }
    x.gather_rows(&partition_map(h, w, m))?
        .reshape([(h / m) * (w / m), m * m, c])
}

/// Inverse of [`window_partition`] onto an `hp×wp` map.
pub fn window_reverse<T: Scalar>(windows: &Tensor<T>, hp: usize, wp: usize, window: usize) -> Result<Tensor<T>> {
    let c = *windows
        .shape()
        .last()
        .ok_or_else(|| contract("window_reverse of a scalar"))?;
    if !hp.is_multiple_of(window) || !wp.is_multiple_of(window) || windows.len() != hp * wp * c {
        return Err(contract(format!(
            "cannot reverse {:?} onto {hp}×{wp} with window {window}",
            windows.shape()
        )));
    }
    let flat = windows.reshape([hp * wp, c])?;
    flat.gather_rows(&reverse_map(hp, wp, window))?.reshape([hp, wp, c])
}

/// Region id assigned to padding cells.
pub const PAD_REGION: u8 = 9;

/// Additive attention mask per batched window of the cyclic path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShiftMask {
    pub cfg: WindowConfig,
    windows: usize,
    /// `windows × M² × M²`; `true` where attention is allowed.
    allowed: Vec<bool>,
}

impl ShiftMask {
    pub fn num_windows(&self) -> usize {
        self.windows
    }

    pub fn is_allowed(&self, win: usize, i: usize, j: usize) -> bool {
        let n = self.cfg.tokens_per_window();
        self.allowed[(win * n + i) * n + j]
    }

    /// True when no pair is masked, so the mask can be skipped.
    pub fn is_all_zero(&self) -> bool {
        self.allowed.iter().all(|&a| a)
    }

    pub fn window_is_zero(&self, win: usize) -> bool {
        let n = self.cfg.tokens_per_window();
        self.allowed[win * n * n..(win + 1) * n * n].iter().all(|&a| a)
    }

    /// `numWindows × M² × M²` tensor of `0` and `T::MASK_NEG`.
    pub fn additive<T: Scalar>(&self) -> Tensor<T> {
        let n = self.cfg.tokens_per_window();
        Tensor::new(
            [self.num_windows(), n, n],
            self.allowed
                .iter()
                .map(|&a| if a { T::zero() } else { T::MASK_NEG })
                .collect(),
        )
        .expect("mask shape")
    }

    /// `numWindows × M² × M²` tensor of `1` where allowed and `0` elsewhere.
    pub fn multiplicative<T: Scalar>(&self) -> Tensor<T> {
        let n = self.cfg.tokens_per_window();
        Tensor::new(
            [self.num_windows(), n, n],
            self.allowed
                .iter()
                .map(|&a| if a { T::one() } else { T::zero() })
                .collect(),
        )
        .expect("mask shape")
    }

    /// Build from an explicit per-pair table, used by the naive padded path.
    pub(crate) fn from_allowed(cfg: WindowConfig, allowed: Vec<bool>) -> Self {
        let n = cfg.tokens_per_window();
        ShiftMask {
            cfg,
            windows: allowed.len() / (n * n),
            allowed,
        }
    }
}

/// Region id per token of each batched window, in partition order.
///
/// Bands are laid on the rolled, padded grid as `[0, hp−M)`, `[hp−M, hp−s)`
/// and `[hp−s, hp)` per axis with id `3·rowBand + colBand`. Cells that come
/// from bottom-right padding get [`PAD_REGION`].
pub fn region_ids(cfg: &WindowConfig) -> Vec<u8> {
    let (hp, wp) = cfg.padded();
    let (m, s) = (cfg.window, cfg.shift);
    let band = |r: usize, ext: usize| -> u8 {
        if r < ext - m {
            0
        } else if r < ext - s {
            1
        } else {
            2
        }
    };
    let mut rolled = Vec::with_capacity(hp * wp);
    for r in 0..hp {
        for c in 0..wp {
            // Rolled position (r, c) holds original cell (r + s, c + s) mod extents.
            let (oy, ox) = ((r + s) % hp, (c + s) % wp);
            rolled.push(if oy >= cfg.h || ox >= cfg.w {
                PAD_REGION
            } else {
                3 * band(r, hp) + band(c, wp)
            });
        }
    }
    partition_map(hp, wp, m)
        .map
        .iter()
        .map(|&i| rolled[i as usize])
        .collect()
}

fn build_mask(cfg: &WindowConfig) -> ShiftMask {
    let n = cfg.tokens_per_window();
    let ids = region_ids(cfg);
    let mut allowed = Vec::with_capacity(ids.len() * n);
    for win in ids.chunks_exact(n) {
        for &a in win {
            allowed.extend(win.iter().map(|&b| a == b));
        }
    }
    ShiftMask::from_allowed(*cfg, allowed)
}

fn masks() -> &'static Memo<WindowConfig, ShiftMask> {
    static MASKS: OnceLock<Memo<WindowConfig, ShiftMask>> = OnceLock::new();
    MASKS.get_or_init(Memo::new)
}

/// Mask for the cyclic path, memoized per `(h, w, M, shift)`.
pub fn build_shift_mask(cfg: &WindowConfig) -> Arc<ShiftMask> {
    masks().get_or_build(cfg, || build_mask(cfg))
}

/// Bucket of every query/key pair into the flattened `(2M−1)²` bias table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelPosIndex {
    pub window: usize,
    /// `M² × M²`, row-major.
    pub index: Vec<usize>,
}

impl RelPosIndex {
    pub fn table_len(&self) -> usize {
        (2 * self.window - 1) * (2 * self.window - 1)
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.index[i * self.window * self.window + j]
    }

    /// Bucket for an explicit `(Δy, Δx)` offset.
    pub fn bucket(window: usize, dy: isize, dx: isize) -> usize {
        let m = window as isize;
        ((dy + m - 1) * (2 * m - 1) + (dx + m - 1)) as usize
    }

    pub fn as_shared(&self) -> Arc<[usize]> {
        Arc::from(self.index.as_slice())
    }
}

fn rel_indices() -> &'static Memo<usize, RelPosIndex> {
    static IDX: OnceLock<Memo<usize, RelPosIndex>> = OnceLock::new();
    IDX.get_or_init(Memo::new)
}

pub fn relative_position_index(window: usize) -> Arc<RelPosIndex> {
    assert!(window >= 1, "window must be at least 1");
    rel_indices().get_or_build(&window, || {
        let n = window * window;
        let mut index = Vec::with_capacity(n * n);
        for i in 0..n {
            let (yi, xi) = ((i / window) as isize, (i % window) as isize);
            for j in 0..n {
                let (yj, xj) = ((j / window) as isize, (j % window) as isize);
                index.push(RelPosIndex::bucket(window, yi - yj, xi - xj));
            }
        }
        RelPosIndex { window, index }
    })
}

/// Gather maps for one cyclic-shift pass over an unpadded `h×w` map.
#[derive(Debug)]
pub struct CyclicMaps {
    /// `h·w` tokens to `numWindows·M²` batched window slots: pad, roll by
    /// `(−s, −s)`, partition.
    pub to_windows: Arc<RowMap>,
    /// Window slots back to `h·w`: reverse, roll by `(+s, +s)`, crop.
    pub from_windows: Arc<RowMap>,
    pub mask: Arc<ShiftMask>,
}

fn cyclic_memo() -> &'static Memo<WindowConfig, CyclicMaps> {
    static MAPS: OnceLock<Memo<WindowConfig, CyclicMaps>> = OnceLock::new();
    MAPS.get_or_init(Memo::new)
}

pub fn cyclic_maps(cfg: &WindowConfig) -> Arc<CyclicMaps> {
    cyclic_memo().get_or_build(cfg, || {
        let (hp, wp) = cfg.padded();
        let (m, s) = (cfg.window, cfg.shift as isize);
        let to_windows = partition_map(hp, wp, m)
            .after(&RowMap::roll(hp, wp, -s, -s))
            .after(&pad_map(cfg.h, cfg.w, hp, wp));
        let from_windows = crop_map(hp, wp, cfg.h, cfg.w)
            .after(&RowMap::roll(hp, wp, s, s))
            .after(&reverse_map(hp, wp, m));
        CyclicMaps {
            to_windows: Arc::new(to_windows),
            from_windows: Arc::new(from_windows),
            mask: build_shift_mask(cfg),
        }
    })
}

/// Pad, roll by `(−shift, −shift)` and partition an `h×w×C` map.
pub fn apply_cyclic_path<T: Scalar>(x: &Tensor<T>, cfg: &WindowConfig) -> Result<(Tensor<T>, Arc<ShiftMask>)> {
    let (h, w, c) = hwc(x.shape(), "apply_cyclic_path")?;
    if (h, w) != (cfg.h, cfg.w) {
        return Err(contract(format!("map is {h}×{w}, config expects {}×{}", cfg.h, cfg.w)));
    }
    let maps = cyclic_maps(cfg);
    let windows = x
        .gather_rows(&maps.to_windows)?
        .reshape([cfg.num_windows(), cfg.tokens_per_window(), c])?;
    Ok((windows, Arc::clone(&maps.mask)))
}

/// Inverse of [`apply_cyclic_path`], cropping back to `h×w×C`.
pub fn undo_cyclic_path<T: Scalar>(windows: &Tensor<T>, cfg: &WindowConfig) -> Result<Tensor<T>> {
    let c = *windows
        .shape()
        .last()
        .ok_or_else(|| contract("undo_cyclic_path of a scalar"))?;
    let maps = cyclic_maps(cfg);
    if windows.len() != maps.from_windows.src_rows * c {
        return Err(contract(format!(
            "{:?} does not match {} window slots",
            windows.shape(),
            maps.from_windows.src_rows
        )));
    }
    windows
        .reshape([maps.from_windows.src_rows, c])?
        .gather_rows(&maps.from_windows)?
        .reshape([cfg.h, cfg.w, c])
}

#[derive(Debug, Serialize)]
pub struct MaskExport {
    pub h: usize,
    pub w: usize,
    pub window: usize,
    pub shift: usize,
    pub grid: (usize, usize),
    pub region_ids: Vec<Vec<u8>>,
    /// Per window, `M² × M²` with `1` where attention is masked.
    pub masked: Vec<Vec<Vec<u8>>>,
}

#[derive(Debug, Serialize)]
pub struct RelIndexExport {
    pub window: usize,
    pub table_side: usize,
    pub index: Vec<Vec<usize>>,
}

pub fn export_mask(cfg: &WindowConfig) -> MaskExport {
    let mask = build_shift_mask(cfg);
    let n = cfg.tokens_per_window();
    MaskExport {
        h: cfg.h,
        w: cfg.w,
        window: cfg.window,
        shift: cfg.shift,
        grid: cfg.grid(),
        region_ids: region_ids(cfg).chunks(n).map(|c| c.to_vec()).collect(),
        masked: (0..cfg.num_windows())
            .map(|win| {
                (0..n)
                    .map(|i| (0..n).map(|j| u8::from(!mask.is_allowed(win, i, j))).collect())
                    .collect()
            })
            .collect(),
    }
}

pub fn export_rel_index(window: usize) -> RelIndexExport {
    let idx = relative_position_index(window);
    let n = window * window;
    RelIndexExport {
        window,
        table_side: 2 * window - 1,
        index: idx.index.chunks(n).map(|c| c.to_vec()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iota(h: usize, w: usize, c: usize) -> Tensor<f64> {
        Tensor::from_fn([h, w, c], |i| i as f64)
    }

    #[test]
    fn config_invariants() {
        assert!(WindowConfig::new(8, 8, 0, 0).is_err());
        assert!(WindowConfig::new(8, 8, 4, 4).is_err());
        assert_eq!(WindowConfig::new(12, 5, 7, 3).unwrap().padded(), (14, 7));
        assert_eq!(WindowConfig::shifted(8, 8, 7).unwrap().shift, 3);
    }

    #[test]
    fn partition_examples() {
        let cfg = WindowConfig::regular(8, 8, 4).unwrap();
        let wins = window_partition(&iota(8, 8, 2), &cfg).unwrap();
        assert_eq!(wins.shape(), &[4, 16, 2]);

        let x = iota(3, 3, 1);
        let one = window_partition(&x, &WindowConfig::regular(3, 3, 3).unwrap()).unwrap();
        assert_eq!(one.data(), x.data());

        let wins = window_partition(&iota(4, 4, 1), &WindowConfig::regular(4, 4, 2).unwrap()).unwrap();
        assert_eq!(&wins.data()[..4], &[0., 1., 4., 5.]);
        assert_eq!(&wins.data()[4..8], &[2., 3., 6., 7.]);

        let bad = WindowConfig::regular(5, 5, 2).unwrap();
        assert!(window_partition(&iota(5, 5, 1), &bad).is_err());
    }

    #[test]
    fn padding_examples() {
        let x = iota(56, 56, 1);
        assert_eq!(pad_bottom_right(&x, 7).unwrap(), x);
        let p = pad_bottom_right(&iota(12, 12, 1), 7).unwrap();
        assert_eq!(p.shape(), &[14, 14, 1]);
        assert_eq!(p.data()[13], 0.0);
        assert_eq!(p.data()[14 + 11], 23.0);
        let p = pad_bottom_right(&Tensor::<f64>::full([1, 1, 1], 5.0), 7).unwrap();
        assert_eq!(p.shape(), &[7, 7, 1]);
        assert_eq!(p.data().iter().filter(|&&v| v == 0.0).count(), 48);
    }

    #[test]
    fn window_count_examples() {
        assert_eq!(window_counts(8, 8, 4), (4, 9));
        assert_eq!(window_counts(7, 7, 7), (1, 4));
        assert_eq!(window_counts(56, 56, 7), (64, 81));
    }

    #[test]
    fn unshifted_unpadded_mask_is_zero() {
        for (h, m) in [(8, 4), (14, 7), (6, 2)] {
            let mask = build_shift_mask(&WindowConfig::regular(h, h, m).unwrap());
            assert!(mask.is_all_zero());
        }
    }

    #[test]
    fn small_shifted_mask_counts() {
        // 4×4, M=2, s=1: the shifted partition has row/col bands {0}, {1,2}, {3}.
        // Batched window 0 is the interior {1,2}², windows 1 and 2 straddle one
        // seam and window 3 gathers the four corners.
        let mask = build_shift_mask(&WindowConfig::new(4, 4, 2, 1).unwrap());
        let allowed = |win| {
            (0..4)
                .flat_map(|i| (0..4).map(move |j| (i, j)))
                .filter(|&(i, j)| mask.is_allowed(win, i, j))
                .collect::<Vec<_>>()
        };
        assert_eq!(allowed(0).len(), 16);
        assert_eq!(allowed(1).len(), 8);
        assert_eq!(allowed(2).len(), 8);
        assert_eq!(allowed(3), vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn interior_window_is_unmasked() {
        let mask = build_shift_mask(&WindowConfig::new(8, 8, 4, 2).unwrap());
        assert!(mask.window_is_zero(0));
        assert!(!mask.window_is_zero(3));
    }

    #[test]
    fn padded_regular_mask_isolates_padding() {
        let cfg = WindowConfig::regular(3, 3, 2).unwrap();
        let mask = build_shift_mask(&cfg);
        // window 0 holds real tokens only; window 3 holds (2,2) plus padding
        assert!(mask.window_is_zero(0));
        assert!(!mask.is_allowed(3, 0, 1));
        assert!(mask.is_allowed(3, 1, 2));
    }

    #[test]
    fn rel_index_examples() {
        assert_eq!(relative_position_index(1).index, vec![0]);
        let idx = relative_position_index(2);
        for i in 0..4 {
            assert_eq!(idx.get(i, i), 4);
        }
        assert_eq!(idx.get(0, 3), 0);
        assert_eq!(idx.get(3, 0), 8);
    }

    #[test]
    fn cyclic_path_examples() {
        let x = Tensor::<f64>::from_fn([8, 8, 3], |i| (i as f64).sin());
        let cfg0 = WindowConfig::regular(8, 8, 4).unwrap();
        let (wins, mask) = apply_cyclic_path(&x, &cfg0).unwrap();
        assert!(mask.is_all_zero());
        assert_eq!(wins, window_partition(&x, &cfg0).unwrap());

        let cfg = WindowConfig::shifted(8, 8, 4).unwrap();
        let (wins, mask) = apply_cyclic_path(&x, &cfg).unwrap();
        assert_eq!(wins.shape(), &[4, 16, 3]);
        assert_eq!(mask.num_windows(), 4);
        assert_eq!(undo_cyclic_path(&wins, &cfg).unwrap(), x);
    }

    #[test]
    fn export_shapes() {
        let e = export_mask(&WindowConfig::shifted(8, 8, 4).unwrap());
        assert_eq!(e.masked.len(), 4);
        assert_eq!(e.masked[0].len(), 16);
        let r = export_rel_index(3);
        assert_eq!(r.index.len(), 9);
        assert_eq!(r.table_side, 5);
    }
}
