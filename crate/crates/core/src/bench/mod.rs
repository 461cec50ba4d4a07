//! Load harness and report generator: latency per concurrency level,
//! block sizes and gas fractions.
//!
//! Column meanings:
//! - `avg_sign_ms`: mean client-observed latency of `/api/register`, whose
//!   server work is dominated by signing the template and the block.
//! - `avg_verify_ms`: mean server-side template verification time during
//!   the level, from the `verify_latency_ms` histogram delta.
//! - `p95_ms`: 95th percentile of all request latencies in the level.

mod load;

use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use load::{run_load, LoadOptions};

pub const DEFAULT_LEVELS: [usize; 5] = [1, 10, 20, 40, 80];
pub const CSV_HEADER: &str = "concurrency,avg_sign_ms,avg_verify_ms,p95_ms";
/// Allowed drop in mean request latency between adjacent levels.
pub const MONOTONE_SLACK: f64 = 0.10;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("target {target} is unreachable: {reason}")]
    TargetUnreachable { target: String, reason: String },
    #[error("identity space exhausted: {needed} identities needed, {available} available")]
    InsufficientIdentities { needed: usize, available: usize },
    #[error("{op} failed with status {status}: {body}")]
    RequestFailed { op: &'static str, status: u16, body: String },
    #[error("no concurrency levels given")]
    NoLevels,
    #[error("raw log: {0}")]
    RawLog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Register,
    Authenticate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpSample {
    pub op: Op,
    pub ms: f64,
}

/// Everything measured at one level, before aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawLevel {
    pub concurrency: usize,
    pub ops: Vec<OpSample>,
    /// `verify_latency_ms` sum and count deltas over the level.
    pub verify_sum_ms: f64,
    pub verify_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSizes {
    pub registration_bytes: usize,
    pub vote_bytes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasFractions {
    pub registration_fraction: f64,
    pub vote_fraction: f64,
}

/// Raw measurements of one run; [`BenchReport::from_raw`] is a pure
/// function of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawLog {
    pub levels: Vec<RawLevel>,
    pub block_sizes: BlockSizes,
    pub gas: GasFractions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub concurrency: usize,
    pub avg_sign_ms: f64,
    pub avg_verify_ms: f64,
    pub p95_ms: f64,
    pub avg_request_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// Sorted by concurrency.
    pub rows: Vec<LevelRow>,
    pub block_sizes: BlockSizes,
    pub gas: GasFractions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Nearest-rank percentile of `xs`; 0 for an empty set.
pub fn percentile(xs: &[f64], p: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

impl LevelRow {
    pub fn from_raw(level: &RawLevel) -> LevelRow {
        let all: Vec<f64> = level.ops.iter().map(|o| o.ms).collect();
        LevelRow {
            concurrency: level.concurrency,
            avg_sign_ms: mean(level.ops.iter().filter(|o| o.op == Op::Register).map(|o| o.ms)),
            avg_verify_ms: if level.verify_count == 0 { 0.0 } else { level.verify_sum_ms / level.verify_count as f64 },
            p95_ms: percentile(&all, 95.0),
            avg_request_ms: mean(all.iter().copied()),
        }
    }
}

impl BenchReport {
    pub fn from_raw(raw: &RawLog) -> BenchReport {
        let mut rows: Vec<LevelRow> = raw.levels.iter().map(LevelRow::from_raw).collect();
        rows.sort_by_key(|r| r.concurrency);
        BenchReport { rows, block_sizes: raw.block_sizes, gas: raw.gas }
    }

    pub fn row(&self, concurrency: usize) -> Option<&LevelRow> {
        self.rows.iter().find(|r| r.concurrency == concurrency)
    }

    pub fn render(&self, format: ReportFormat) -> String {
        let mut out = String::new();
        let sizes = format!("registration={} vote={}", self.block_sizes.registration_bytes, self.block_sizes.vote_bytes);
        let gas = format!("registration={:.2}% vote={:.2}%", self.gas.registration_fraction * 100.0, self.gas.vote_fraction * 100.0);
        match format {
            ReportFormat::Csv => {
                let _ = writeln!(out, "{CSV_HEADER}");
                for r in &self.rows {
                    let _ = writeln!(out, "{},{:.3},{:.3},{:.3}", r.concurrency, r.avg_sign_ms, r.avg_verify_ms, r.p95_ms);
                }
                let _ = writeln!(out, "# block_sizes: {sizes}\n# gas: {gas}");
            }
            ReportFormat::Table => {
                let _ = writeln!(
                    out,
                    "{:>11}  {:>12}  {:>13}  {:>10}  {:>14}",
                    "concurrency", "avg_sign_ms", "avg_verify_ms", "p95_ms", "avg_request_ms"
                );
                for r in &self.rows {
                    let _ = writeln!(
                        out,
                        "{:>11}  {:>12.3}  {:>13.3}  {:>10.3}  {:>14.3}",
                        r.concurrency, r.avg_sign_ms, r.avg_verify_ms, r.p95_ms, r.avg_request_ms
                    );
                }
                let _ = writeln!(out, "block_sizes: {sizes}\ngas: {gas}");
            }
        }
        out
    }

    /// The harness properties. Checks that need a level absent from the
    /// report are skipped.
    pub fn check_properties(&self) -> Vec<PropertyCheck> {
        let mut checks = Vec::new();
        if let Some(r) = self.row(1) {
            checks.push(PropertyCheck {
                name: "level 1 latencies are nonzero",
                passed: r.avg_sign_ms > 0.0 && r.p95_ms > 0.0,
                detail: format!("avg_sign_ms={:.3} p95_ms={:.3}", r.avg_sign_ms, r.p95_ms),
            });
        }
        if let Some(r) = self.row(20) {
            checks.push(PropertyCheck {
                name: "verify is at least 10x faster than sign at concurrency 20",
                passed: r.avg_verify_ms * 10.0 <= r.avg_sign_ms,
                detail: format!("avg_verify_ms={:.3} avg_sign_ms={:.3}", r.avg_verify_ms, r.avg_sign_ms),
            });
        }
        if let (Some(lo), Some(hi)) = (self.row(20), self.row(80)) {
            checks.push(PropertyCheck {
                name: "sign latency increases from concurrency 20 to 80",
                passed: hi.avg_sign_ms > lo.avg_sign_ms,
                detail: format!("{:.3} -> {:.3}", lo.avg_sign_ms, hi.avg_sign_ms),
            });
        }
        if self.rows.len() > 1 {
            let drops: Vec<String> = self
                .rows
                .windows(2)
                .filter(|w| w[1].avg_request_ms < w[0].avg_request_ms * (1.0 - MONOTONE_SLACK))
                .map(|w| format!("{}->{}", w[0].concurrency, w[1].concurrency))
                .collect();
            checks.push(PropertyCheck {
                name: "mean request latency is nondecreasing within 10% slack",
                passed: drops.is_empty(),
                detail: if drops.is_empty() { "ok".into() } else { format!("drops at {}", drops.join(", ")) },
            });
        }
        let in_unit = |f: f64| (0.0..=1.0).contains(&f);
        checks.push(PropertyCheck {
            name: "gas fractions lie in [0, 1]",
            passed: in_unit(self.gas.registration_fraction) && in_unit(self.gas.vote_fraction),
            detail: format!("{:?}", self.gas),
        });
        checks
    }
}

impl RawLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("raw log serializes")
    }

    pub fn from_json(text: &str) -> Result<RawLog, BenchError> {
        serde_json::from_str(text).map_err(|e| BenchError::RawLog(e.to_string()))
    }
}
