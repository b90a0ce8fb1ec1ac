//! Per-iteration run records and their CSV form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    /// Dual objective `h(lambda(t))`.
    pub h: f64,
    pub grad_norm: f64,
    /// Normalized average primal error.
    pub err: f64,
    pub comm_rounds: u64,
    pub comm_msgs: u64,
    pub skips: u64,
    /// Async runs only: cumulative delivered message bundles.
    pub delivered_msgs: Option<u64>,
    /// Async runs only: largest view age seen so far, in ticks.
    pub max_staleness: Option<u64>,
}

impl IterationRecord {
    pub(crate) fn sync(
        t: usize,
        h: f64,
        grad_norm: f64,
        err: f64,
        comm_rounds: u64,
        comm_msgs: u64,
        skips: u64,
    ) -> Self {
        Self {
            t,
            h,
            grad_norm,
            err,
            comm_rounds,
            comm_msgs,
            skips,
            delivered_msgs: None,
            max_staleness: None,
        }
    }
}

/// A run's history. `records[0]` is the initial state (`t = 0`); every
/// further entry follows one iteration (sync) or one tick (async).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<IterationRecord>,
}

pub const SYNC_HEADER: &str = "t,h,grad_norm,err,comm_rounds,comm_msgs,skips";
pub const ASYNC_HEADER: &str = "t,h,grad_norm,err,comm_rounds,comm_msgs,skips,delivered_msgs,max_staleness";

/// 17 significant digits, enough to reproduce any f64.
fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

impl Trace {
    pub fn initial(&self) -> Option<&IterationRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// Records produced by iterations, excluding the initial state.
    pub fn iterations(&self) -> &[IterationRecord] {
        self.records.get(1..).unwrap_or(&[])
    }

    pub fn at(&self, t: usize) -> Option<&IterationRecord> {
        self.records.iter().find(|r| r.t == t)
    }

    pub fn is_async(&self) -> bool {
        self.records.iter().any(|r| r.delivered_msgs.is_some())
    }

    pub fn to_csv(&self) -> String {
        let with_async = self.is_async();
        let mut out = String::new();
        out.push_str(if with_async { ASYNC_HEADER } else { SYNC_HEADER });
        out.push('\n');
        for r in &self.records {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{}",
                r.t,
                fmt_f64(r.h),
                fmt_f64(r.grad_norm),
                fmt_f64(r.err),
                r.comm_rounds,
                r.comm_msgs,
                r.skips
            );
            if with_async {
                let _ = write!(
                    out,
                    ",{},{}",
                    r.delivered_msgs.unwrap_or(0),
                    r.max_staleness.unwrap_or(0)
                );
            }
            out.push('\n');
        }
        out
    }
}
