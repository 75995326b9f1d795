//! Multiply-accumulate instrumentation and the global thread mode.
//!
//! Every matrix product records its MAC count into the meters active on the
//! calling thread, under the current [`MacKind`] tag. Elementwise work
//! (softmax, norms, activations, residual adds) is never counted.

use std::cell::{Cell, RefCell};
use std::sync::atomic::{AtomicU8, Ordering};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MacKind {
    /// Dense projections: qkv, output, MLP, patch embedding, merging, head.
    Linear,
    /// Query-key products.
    AttnScores,
    /// Probability-value products.
    AttnValues,
    /// Mixer token-mixing products.
    TokenMix,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacCounts {
    pub linear: u64,
    pub attn_scores: u64,
    pub attn_values: u64,
    pub token_mix: u64,
}

impl MacCounts {
    pub fn total(&self) -> u64 {
        self.linear + self.attn_scores + self.attn_values + self.token_mix
    }

    /// The attention term: query-key plus probability-value products.
    pub fn attention(&self) -> u64 {
        self.attn_scores + self.attn_values
    }

    fn add(&mut self, kind: MacKind, macs: u64) {
        match kind {
            MacKind::Linear => self.linear += macs,
            MacKind::AttnScores => self.attn_scores += macs,
            MacKind::AttnValues => self.attn_values += macs,
            MacKind::TokenMix => self.token_mix += macs,
        }
    }
}

impl std::ops::Add for MacCounts {
    type Output = MacCounts;

    fn add(self, o: MacCounts) -> MacCounts {
        MacCounts {
            linear: self.linear + o.linear,
            attn_scores: self.attn_scores + o.attn_scores,
            attn_values: self.attn_values + o.attn_values,
            token_mix: self.token_mix + o.token_mix,
        }
    }
}

thread_local! {
    static METERS: RefCell<Vec<MacCounts>> = const { RefCell::new(Vec::new()) };
    static TAG: Cell<MacKind> = const { Cell::new(MacKind::Linear) };
}

/// Run `f` with a fresh meter installed and return what it counted.
///
/// Meters nest: an inner measurement also counts toward every outer one.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, MacCounts) {
    METERS.with(|m| m.borrow_mut().push(MacCounts::default()));
    struct Pop;
    impl Drop for Pop {
        fn drop(&mut self) {
            METERS.with(|m| {
                m.borrow_mut().pop();
            });
        }
    }
    let pop = Pop;
    let out = f();
    let counts = METERS.with(|m| *m.borrow().last().expect("meter installed"));
    drop(pop);
    (out, counts)
}

/// Run `f` with products tagged as `kind`.
pub fn with_kind<R>(kind: MacKind, f: impl FnOnce() -> R) -> R {
    let prev = TAG.with(|t| t.replace(kind));
    struct Restore(MacKind);
    impl Drop for Restore {
        fn drop(&mut self) {
            TAG.with(|t| t.set(self.0));
        }
    }
    let _restore = Restore(prev);
    f()
}

pub fn record(macs: u64) {
    METERS.with(|m| {
        let mut m = m.borrow_mut();
        if m.is_empty() {
            return;
        }
        let kind = TAG.with(|t| t.get());
        for counts in m.iter_mut() {
            counts.add(kind, macs);
        }
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThreadMode {
    /// Everything on the calling thread. The default.
    Single,
    /// Row-parallel matrix products on the rayon pool. Per-element reduction
    /// order is unchanged, so results stay bitwise identical.
    Auto,
}

impl std::str::FromStr for ThreadMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" | "single" => Ok(ThreadMode::Single),
            "auto" => Ok(ThreadMode::Auto),
            other => Err(format!("unknown thread mode `{other}` (expected 1 or auto)")),
        }
    }
}

static THREAD_MODE: AtomicU8 = AtomicU8::new(0);

pub fn set_thread_mode(mode: ThreadMode) {
    THREAD_MODE.store(
        match mode {
            ThreadMode::Single => 0,
            ThreadMode::Auto => 1,
        },
        Ordering::Relaxed,
    );
}

pub fn thread_mode() -> ThreadMode {
    match THREAD_MODE.load(Ordering::Relaxed) {
        0 => ThreadMode::Single,
        _ => ThreadMode::Auto,
    }
}
