//! Latency of attention execution strategies at stage geometries.
//!
//! Each (method, geometry) pair is warmed up, then timed over a fixed number
//! of repetitions; the median and interquartile range are reported together
//! with the metered multiply-accumulates, which must not vary between runs.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::{
    naive_padded_plan, regular_window_attention, shifted_window_attention_cyclic, shifted_window_attention_padded,
    sliding_window_attention, PosMode, WindowAttention,
};
use crate::error::{contract, Error, Result};
use crate::io::write_atomic;
use crate::meter::{self, MacCounts};
use crate::params::{Init, ParamStore};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;
use crate::windowing::WindowConfig;

pub const SCHEMA: u32 = 1;
pub const MIN_REPETITIONS: usize = 30;
pub const MIN_WARMUP: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SlidingNaive,
    WindowNoShift,
    ShiftedPadded,
    ShiftedCyclic,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::SlidingNaive,
        Method::WindowNoShift,
        Method::ShiftedPadded,
        Method::ShiftedCyclic,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::SlidingNaive => "sliding-naive",
            Method::WindowNoShift => "window-no-shift",
            Method::ShiftedPadded => "shifted-padded",
            Method::ShiftedCyclic => "shifted-cyclic",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// One stage's attention geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Geometry {
    pub h: usize,
    pub w: usize,
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
}

impl Geometry {
    pub fn label(&self) -> String {
        format!("{}x{}xC{}", self.h, self.w, self.dim)
    }

    /// The four stages of the smallest standard variant at 224² input.
    pub fn stages_224() -> [Geometry; 4] {
        [(56, 96, 3), (28, 192, 6), (14, 384, 12), (7, 768, 24)].map(|(s, dim, heads)| Geometry {
            h: s,
            w: s,
            dim,
            heads,
            window: 7,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub method: Method,
    pub geometry: Geometry,
    pub dtype: DType,
    pub repetitions: usize,
    pub warmup: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub stage: String,
    pub geometry: Geometry,
    pub median_ms: f64,
    pub iqr_ms: f64,
    pub repetitions: usize,
    pub macs: MacCounts,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub threads: String,
    pub dtype: DType,
    pub os: String,
    pub arch: String,
    pub cpus: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: u32,
    pub batch: usize,
    pub seed: u64,
    pub environment: Environment,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn find(&self, method: Method, g: &Geometry) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method && r.geometry == *g)
    }
}

/// Quantile with linear interpolation of sorted samples.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

struct Fixture<T> {
    store: ParamStore<T>,
    attn: WindowAttention,
    x: Tensor<T>,
}

fn fixture<T: Scalar>(g: &Geometry, seed: u64) -> Result<Fixture<T>> {
    let mut store = ParamStore::new();
    let mut init = Init::new(seed);
    let attn = WindowAttention::new(
        &mut store,
        &mut init,
        "attn",
        g.dim,
        g.heads,
        g.window,
        PosMode::Relative,
    )?;
    let x = Init::new(seed ^ 0x9e37_79b9).normal([g.h, g.w, g.dim], 1.0);
    Ok(Fixture { store, attn, x })
}

fn run_method<T: Scalar>(m: Method, f: &Fixture<T>, g: &Geometry) -> Result<(Tensor<T>, usize)> {
    let shifted = WindowConfig::shifted(g.h, g.w, g.window)?;
    match m {
        Method::SlidingNaive => Ok((sliding_window_attention(&f.store, &f.attn, &f.x)?, g.h * g.w)),
        Method::WindowNoShift => {
            let cfg = WindowConfig::regular(g.h, g.w, g.window)?;
            Ok((regular_window_attention(&f.store, &f.attn, &f.x)?, cfg.num_windows()))
        }
        Method::ShiftedPadded => Ok((
            shifted_window_attention_padded(&f.store, &f.attn, &f.x, &shifted)?,
            naive_padded_plan(&shifted).windows,
        )),
        Method::ShiftedCyclic => Ok((
            shifted_window_attention_cyclic(&f.store, &f.attn, &f.x, &shifted)?,
            shifted.num_windows(),
        )),
    }
}

/// MACs and windows of one run, without timing.
pub fn measure_work(method: Method, g: &Geometry, seed: u64) -> Result<(MacCounts, usize)> {
    let f = fixture::<f32>(g, seed)?;
    let (res, macs) = meter::measure(|| run_method(method, &f, g));
    Ok((macs, res?.1))
}

fn precision_tol(dtype: DType) -> f64 {
    match dtype {
        DType::F32 => 1e-5,
        DType::F64 => 1e-10,
    }
}

/// Padded and cyclic shifted attention must agree before either is timed.
fn precheck<T: Scalar>(g: &Geometry, seed: u64) -> Result<()> {
    let f = fixture::<T>(g, seed)?;
    let (a, _) = run_method(Method::ShiftedPadded, &f, g)?;
    let (b, _) = run_method(Method::ShiftedCyclic, &f, g)?;
    let d = a.max_abs_diff(&b);
    if d > precision_tol(T::DTYPE) {
        return Err(Error::Precheck {
            stage: g.label(),
            max_abs_diff: d,
        });
    }
    Ok(())
}

fn time_spec<T: Scalar>(spec: &BenchSpec, seed: u64) -> Result<BenchRow> {
    let g = &spec.geometry;
    let f = fixture::<T>(g, seed)?;
    for _ in 0..spec.warmup {
        run_method(spec.method, &f, g)?;
    }
    let mut times = Vec::with_capacity(spec.repetitions);
    let mut work: Option<(MacCounts, usize)> = None;
    for _ in 0..spec.repetitions {
        let start = Instant::now();
        let (res, macs) = meter::measure(|| run_method(spec.method, &f, g));
        times.push(start.elapsed().as_secs_f64() * 1e3);
        let windows = res?.1;
        match work {
            None => work = Some((macs, windows)),
            Some(w) if w == (macs, windows) => {}
            Some(_) => return Err(contract(format!("{} did variable work at {}", spec.method, g.label()))),
        }
    }
    times.sort_by(f64::total_cmp);
    let (macs, windows) = work.expect("at least one repetition");
    Ok(BenchRow {
        method: spec.method,
        stage: g.label(),
        geometry: *g,
        median_ms: quantile(&times, 0.5),
        iqr_ms: quantile(&times, 0.75) - quantile(&times, 0.25),
        repetitions: spec.repetitions,
        macs,
        windows,
    })
}

/// Run every spec in order. Geometries that include shifted methods are
/// prechecked for padded/cyclic agreement first.
pub fn run_bench(specs: &[BenchSpec], seed: u64) -> Result<BenchReport> {
    let dtype = specs.first().map_or(DType::F32, |s| s.dtype);
    let mut checked: Vec<(Geometry, DType)> = Vec::new();
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        if spec.repetitions < MIN_REPETITIONS || spec.warmup < MIN_WARMUP {
            return Err(contract(format!(
                "need at least {MIN_REPETITIONS} repetitions and {MIN_WARMUP} warmup runs"
            )));
        }
        let shifted = matches!(spec.method, Method::ShiftedPadded | Method::ShiftedCyclic);
        if shifted && !checked.contains(&(spec.geometry, spec.dtype)) {
            match spec.dtype {
                DType::F32 => precheck::<f32>(&spec.geometry, seed)?,
                DType::F64 => precheck::<f64>(&spec.geometry, seed)?,
            }
            checked.push((spec.geometry, spec.dtype));
        }
        rows.push(match spec.dtype {
            DType::F32 => time_spec::<f32>(spec, seed)?,
            DType::F64 => time_spec::<f64>(spec, seed)?,
        });
    }
    Ok(BenchReport {
        schema: SCHEMA,
        batch: 1,
        seed,
        environment: Environment {
            threads: format!("{:?}", meter::thread_mode()).to_lowercase(),
            dtype,
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    /// Required `padded / cyclic` median ratio.
    pub cyclic_over_padded: f64,
    /// Required `sliding / window` median ratio.
    pub window_over_sliding: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Margins {
            cyclic_over_padded: 1.1,
            window_over_sliding: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub name: String,
    pub stage: String,
    pub ratio: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Speedup ratios per geometry where both methods of a pair were timed.
pub fn compare(report: &BenchReport, margins: &Margins) -> Vec<Comparison> {
    let mut out = Vec::new();
    let mut geoms: Vec<Geometry> = Vec::new();
    for r in &report.rows {
        if !geoms.contains(&r.geometry) {
            geoms.push(r.geometry);
        }
    }
    let pairs = [
        (
            "cyclic-vs-padded",
            Method::ShiftedCyclic,
            Method::ShiftedPadded,
            margins.cyclic_over_padded,
        ),
        (
            "window-vs-sliding",
            Method::WindowNoShift,
            Method::SlidingNaive,
            margins.window_over_sliding,
        ),
    ];
    for g in &geoms {
        for (name, fast, slow, threshold) in pairs {
            if let (Some(f), Some(s)) = (report.find(fast, g), report.find(slow, g)) {
                let ratio = s.median_ms / f.median_ms;
                out.push(Comparison {
                    name: name.into(),
                    stage: g.label(),
                    ratio,
                    threshold,
                    pass: ratio >= threshold,
                });
            }
        }
    }
    out
}

/// Total metered MACs at one geometry must order as
/// sliding ≥ padded ≥ cyclic = window-no-shift.
pub fn mac_ordering_holds(g: &Geometry, seed: u64) -> Result<(bool, [u64; 4])> {
    let mut t = [0u64; 4];
    for (i, m) in Method::ALL.into_iter().enumerate() {
        t[i] = measure_work(m, g, seed)?.0.total();
    }
    let [sliding, window, padded, cyclic] = t;
    Ok((sliding >= padded && padded >= cyclic && cyclic == window, t))
}

/// JSON and CSV side by side, each written atomically.
pub fn write_report(report: &BenchReport, json: &Path, csv_path: &Path) -> Result<()> {
    write_atomic(json, &serde_json::to_vec_pretty(report)?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "schema",
        "method",
        "stage",
        "h",
        "w",
        "dim",
        "heads",
        "window",
        "median_ms",
        "iqr_ms",
        "repetitions",
        "macs_total",
        "macs_attention",
        "windows",
    ])
    .map_err(std::io::Error::other)?;
    for r in &report.rows {
        let g = &r.geometry;
        w.write_record([
            SCHEMA.to_string(),
            r.method.to_string(),
            r.stage.clone(),
            g.h.to_string(),
            g.w.to_string(),
            g.dim.to_string(),
            g.heads.to_string(),
            g.window.to_string(),
            format!("{:.6}", r.median_ms),
            format!("{:.6}", r.iqr_ms),
            r.repetitions.to_string(),
            r.macs.total().to_string(),
            r.macs.attention().to_string(),
            r.windows.to_string(),
        ])
        .map_err(std::io::Error::other)?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    write_atomic(csv_path, &bytes)
}
