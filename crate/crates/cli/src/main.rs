//! Command-line driver: architecture description, audits, self-verification,
//! benchmarks, toy training and mask export.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use swin::attention::PosMode;
use swin::bench::{self, BenchSpec, Geometry, Margins, Method};
use swin::meter::{set_thread_mode, ThreadMode};
use swin::model::{self, ModelConfig, Task, TrainConfig, Variant};
use swin::optim::AdamWConfig;
use swin::windowing::{export_mask, export_rel_index, WindowConfig};
use swin::{checkpoint, io::write_atomic, DType, Scalar};

const DEFAULT_SEED: u64 = 20210325;

#[derive(Parser)]
#[command(name = "swin", version, about = "Shifted-window vision backbone toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Model variant: T, S, B or L.
    #[arg(long, global = true, default_value = "T")]
    variant: Variant,
    /// Square input extent in pixels.
    #[arg(long, global = true, default_value_t = 224)]
    input: usize,
    #[arg(long, global = true, default_value = "f32")]
    dtype: DType,
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Position encoding: none, abs, rel, abs+rel or rel-no-app.
    #[arg(long, global = true, default_value = "rel")]
    pos: PosMode,
    /// `1` for single-threaded kernels or `auto`.
    #[arg(long, global = true, default_value = "1")]
    threads: ThreadMode,
    /// Output file for commands that write results.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-stage layout of a variant.
    Describe,
    /// Parameter audit against the published sizes.
    Params {
        /// Allowed relative deviation.
        #[arg(long, default_value_t = 0.03)]
        tolerance: f64,
    },
    /// Multiply-accumulate audit against the published costs.
    Flops {
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
        /// Also meter a real forward pass.
        #[arg(long)]
        instrument: bool,
    },
    /// Oracle suite: strategy equivalence, masks, relative indices, gradients.
    Verify {
        /// Random seeds per geometry.
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
    /// Latency of attention strategies at stage geometries.
    Bench {
        /// Stage indices (0-3) of the 224² geometry to run.
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 2, 3])]
        stages: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = Method::ALL.map(|m| m.tag().to_string()))]
        methods: Vec<String>,
        #[arg(long, default_value_t = bench::MIN_REPETITIONS)]
        repetitions: usize,
        #[arg(long, default_value_t = bench::MIN_WARMUP)]
        warmup: usize,
        #[arg(long, default_value_t = Margins::default().cyclic_over_padded)]
        cyclic_margin: f64,
        #[arg(long, default_value_t = Margins::default().window_over_sliding)]
        sliding_margin: f64,
    },
    /// Train the tiny configuration on a synthetic task.
    TrainToy {
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 256)]
        samples: usize,
        #[arg(long, default_value = "stripe", value_parser = parse_task)]
        task: Task,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0.05)]
        weight_decay: f64,
        /// Keep every block on the regular partition.
        #[arg(long)]
        no_shift: bool,
    },
    /// Dump the shift mask and relative position index of one geometry.
    ExportMasks {
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long, default_value_t = 7)]
        window: usize,
        /// Defaults to half the window.
        #[arg(long)]
        shift: Option<usize>,
    },
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown task `{s}` (stripe, stripe-parity)"))
}

/// Published sizes at 224²: parameters and multiply-accumulates.
fn reference(v: Variant) -> (f64, Option<f64>) {
    match v {
        Variant::T => (29e6, Some(4.5e9)),
        Variant::S => (50e6, Some(8.7e9)),
        Variant::B => (88e6, Some(15.4e9)),
        Variant::L => (197e6, None),
    }
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol * target
}

fn model_config(c: &Common) -> ModelConfig {
    ModelConfig::variant(c.variant, (c.input, c.input), c.pos)
}

fn emit(out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => {
            write_atomic(p, text.as_bytes()).with_context(|| format!("writing {}", p.display()))?;
            println!("wrote {}", p.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn describe(c: &Common) -> Result<bool> {
    let cfg = model_config(c);
    cfg.validate()?;
    println!(
        "{}: C={} depths={:?} heads={:?} M={} mlp_ratio={} d={} patch={}",
        cfg.tag, cfg.embed_dim, cfg.depths, cfg.heads, cfg.window, cfg.mlp_ratio, cfg.head_dim, cfg.patch_size
    );
    println!(
        "{:<7} {:>9} {:>10} {:>6} {:>6} {:>6} {:>8}",
        "stage", "tokens", "grid", "dim", "heads", "blocks", "window"
    );
    for s in cfg.stages() {
        let g = &s.blocks[0];
        let downsample = cfg.patch_size << s.index;
        println!(
            "{:<7} {:>9} {:>10} {:>6} {:>6} {:>6} {:>8}",
            format!("{} (/{downsample})", s.index + 1),
            s.resolution.0 * s.resolution.1,
            format!("{}x{}", s.resolution.0, s.resolution.1),
            s.dim,
            g.heads,
            s.blocks.len(),
            format!("{}x{}", g.window, g.window),
        );
    }
    Ok(true)
}

fn params(c: &Common, tolerance: f64) -> Result<bool> {
    let report = model::count_params(&model_config(c))?;
    println!("{report}");
    let (target, _) = reference(c.variant);
    let ok = within(report.total as f64, target, tolerance);
    println!(
        "reference {:.0}M ± {:.0}%: {}",
        target / 1e6,
        tolerance * 100.0,
        if ok { "pass" } else { "FAIL" }
    );
    if let Some(out) = &c.out {
        emit(Some(out), &serde_json::to_value(&report)?)?;
    }
    if !ok {
        println!(
            "{}",
            json!({"failures": [{"check": "params", "value": report.total, "target": target}]})
        );
    }
    Ok(ok)
}

fn flops(c: &Common, tolerance: f64, instrument: bool) -> Result<bool> {
    let report = model::count_flops(&model_config(c), instrument)?;
    println!("{report}");
    let mut failures = Vec::new();
    if let Some(counts) = &report.instrumented {
        if counts.total() != report.closed_form_total {
            failures
                .push(json!({"check": "instrumented", "value": counts.total(), "target": report.closed_form_total}));
        }
    }
    match reference(c.variant).1.filter(|_| c.input == 224) {
        Some(target) => {
            let ok = within(report.closed_form_total as f64, target, tolerance);
            println!(
                "reference {:.1}G ± {:.0}%: {}",
                target / 1e9,
                tolerance * 100.0,
                if ok { "pass" } else { "FAIL" }
            );
            if !ok {
                failures.push(json!({"check": "flops", "value": report.closed_form_total, "target": target}));
            }
        }
        None => println!("no published reference for this variant and input"),
    }
    if let Some(out) = &c.out {
        emit(Some(out), &serde_json::to_value(&report)?)?;
    }
    if !failures.is_empty() {
        println!("{}", json!({ "failures": failures }));
    }
    Ok(failures.is_empty())
}

fn verify(c: &Common, seeds: usize) -> Result<bool> {
    let outcomes = swin::verify::run_all(c.seed, c.dtype, seeds)?;
    for o in &outcomes {
        println!(
            "{} {:<22} metric={:.3e} threshold={:.1e}  {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.name,
            o.metric,
            o.threshold,
            o.detail
        );
    }
    let failures: Vec<_> = outcomes.iter().filter(|o| !o.pass).collect();
    if let Some(out) = &c.out {
        emit(Some(out), &serde_json::to_value(&outcomes)?)?;
    }
    if !failures.is_empty() {
        println!("{}", json!({ "failures": failures }));
    }
    Ok(failures.is_empty())
}

#[allow(clippy::too_many_arguments)]
fn run_bench(
    c: &Common,
    stages: &[usize],
    methods: &[String],
    repetitions: usize,
    warmup: usize,
    margins: Margins,
) -> Result<bool> {
    let geoms = Geometry::stages_224();
    let methods = methods
        .iter()
        .map(|m| m.parse::<Method>().map_err(anyhow::Error::msg))
        .collect::<Result<Vec<_>>>()?;
    let mut specs = Vec::new();
    for &s in stages {
        let g = *geoms.get(s).with_context(|| format!("stage {s} out of range 0-3"))?;
        for &method in &methods {
            specs.push(BenchSpec {
                method,
                geometry: g,
                dtype: c.dtype,
                repetitions,
                warmup,
            });
        }
    }
    let report = bench::run_bench(&specs, c.seed)?;
    println!(
        "{:<16} {:<12} {:>11} {:>9} {:>14} {:>8}",
        "method", "stage", "median_ms", "iqr_ms", "macs", "windows"
    );
    for r in &report.rows {
        println!(
            "{:<16} {:<12} {:>11.3} {:>9.3} {:>14} {:>8}",
            r.method.tag(),
            r.stage,
            r.median_ms,
            r.iqr_ms,
            r.macs.total(),
            r.windows
        );
    }
    for cmp in bench::compare(&report, &margins) {
        println!(
            "{} {} at {}: ratio {:.2} (need ≥ {})",
            if cmp.pass { "PASS" } else { "FAIL" },
            cmp.name,
            cmp.stage,
            cmp.ratio,
            cmp.threshold
        );
    }
    let json_path = c.out.clone().unwrap_or_else(|| PathBuf::from("bench.json"));
    let csv_path = json_path.with_extension("csv");
    bench::write_report(&report, &json_path, &csv_path)?;
    println!("wrote {} and {}", json_path.display(), csv_path.display());
    Ok(true)
}

fn train<T: Scalar>(c: &Common, cfg: &ModelConfig, tc: &TrainConfig) -> Result<bool> {
    let (log, model, store) = model::train_toy::<T>(cfg, tc)?;
    for s in log.steps.iter().filter(|s| s.step % 50 == 0 || s.step + 1 == tc.steps) {
        println!("step {:>4}  loss {:.6}  batch acc {:.3}", s.step, s.loss, s.accuracy);
    }
    println!("final train accuracy {:.4}", log.final_accuracy);
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("train-log.json"));
    emit(Some(&out), &json!({ "config": cfg, "train": tc, "log": log }))?;
    let ckpt = out.with_extension("ckpt");
    checkpoint::save(&store, &ckpt)?;
    println!("wrote {}", ckpt.display());
    let _ = model;
    Ok(true)
}

fn run(cli: Cli) -> Result<bool> {
    let c = &cli.common;
    set_thread_mode(c.threads);
    eprintln!(
        "config: {}",
        json!({
            "command": format!("{:?}", cli.command),
            "variant": c.variant, "input": c.input, "dtype": c.dtype, "seed": c.seed,
            "pos": c.pos, "threads": format!("{:?}", c.threads).to_lowercase(), "out": c.out,
        })
    );
    match &cli.command {
        Command::Describe => describe(c),
        Command::Params { tolerance } => params(c, *tolerance),
        Command::Flops { tolerance, instrument } => flops(c, *tolerance, *instrument),
        Command::Verify { seeds } => verify(c, *seeds),
        Command::Bench {
            stages,
            methods,
            repetitions,
            warmup,
            cyclic_margin,
            sliding_margin,
        } => run_bench(
            c,
            stages,
            methods,
            *repetitions,
            *warmup,
            Margins {
                cyclic_over_padded: *cyclic_margin,
                window_over_sliding: *sliding_margin,
            },
        ),
        Command::TrainToy {
            steps,
            batch,
            samples,
            task,
            lr,
            weight_decay,
            no_shift,
        } => {
            let mut cfg = ModelConfig::tiny();
            cfg.pos = c.pos;
            cfg.shift = !no_shift;
            let tc = TrainConfig {
                task: *task,
                samples: *samples,
                steps: *steps,
                batch: *batch,
                seed: c.seed,
                optim: AdamWConfig {
                    lr: *lr,
                    weight_decay: *weight_decay,
                    ..AdamWConfig::default()
                },
            };
            match c.dtype {
                DType::F32 => train::<f32>(c, &cfg, &tc),
                DType::F64 => train::<f64>(c, &cfg, &tc),
            }
        }
        Command::ExportMasks {
            height,
            width,
            window,
            shift,
        } => {
            let cfg = WindowConfig::new(*height, *width, *window, shift.unwrap_or(window / 2))?;
            emit(
                c.out.as_deref(),
                &json!({ "mask": export_mask(&cfg), "relative_position_index": export_rel_index(*window) }),
            )?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
