//! Counters and fixed-bucket histograms rendered in the text exposition
//! format, version 0.0.4.

use std::fmt::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use parking_lot::Mutex;

use crate::protocol::{ProtocolEvent, ProtocolObserver, Stage};

/// Upper bucket bounds in milliseconds, shared by every histogram.
pub const BUCKETS_MS: [f64; 11] = [1.0, 2.0, 5.0, 10.0, 25.0, 50.0, 100.0, 250.0, 500.0, 1000.0, 2500.0];

#[derive(Debug, Default)]
pub struct Counter(AtomicU64);

impl Counter {
    pub fn inc(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HistogramSnapshot {
    /// Non-cumulative counts per bucket, plus one overflow slot.
    pub buckets: [u64; BUCKETS_MS.len() + 1],
    pub sum: f64,
    pub count: u64,
}

/// Observations are applied under one lock, so a rendered histogram
/// always has `count` equal to the sum of its buckets.
#[derive(Debug, Default)]
pub struct Histogram(Mutex<HistogramSnapshot>);

impl Histogram {
    pub fn observe_ms(&self, ms: f64) {
        let slot = BUCKETS_MS.iter().position(|&b| ms <= b).unwrap_or(BUCKETS_MS.len());
        let mut h = self.0.lock();
        h.buckets[slot] += 1;
        h.sum += ms;
        h.count += 1;
    }

    pub fn observe(&self, d: Duration) {
        self.observe_ms(d.as_secs_f64() * 1000.0);
    }

    pub fn snapshot(&self) -> HistogramSnapshot {
        self.0.lock().clone()
    }
}

#[derive(Debug, Default)]
pub struct MetricsRegistry {
    pub registrations_total: Counter,
    pub votes_total: Counter,
    pub spoof_rejections_total: Counter,
    pub auth_failures_total: Counter,
    pub sign_latency_ms: Histogram,
    pub verify_latency_ms: Histogram,
    pub match_latency_ms: Histogram,
    pub request_latency_ms: Histogram,
}

impl MetricsRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let counters = [
            ("registrations_total", "Committed voter registrations.", &self.registrations_total),
            ("votes_total", "Committed votes.", &self.votes_total),
            ("spoof_rejections_total", "Captures rejected by the liveness gate.", &self.spoof_rejections_total),
            ("auth_failures_total", "Authentications ending in an unknown voter, bad signature or no match.", &self.auth_failures_total),
        ];
        for (name, help, c) in counters {
            let _ = writeln!(out, "# HELP {name} {help}\n# TYPE {name} counter\n{name} {}", c.get());
        }
        let histograms = [
            ("sign_latency_ms", "Template signing time per committed enrollment, in milliseconds.", &self.sign_latency_ms),
            ("verify_latency_ms", "Stored template signature verification time, in milliseconds.", &self.verify_latency_ms),
            ("match_latency_ms", "Probe to template matching time, in milliseconds.", &self.match_latency_ms),
            ("request_latency_ms", "HTTP request handling time, in milliseconds.", &self.request_latency_ms),
        ];
        for (name, help, h) in histograms {
            let s = h.snapshot();
            let _ = writeln!(out, "# HELP {name} {help}\n# TYPE {name} histogram");
            let mut cumulative = 0;
            for (bound, n) in BUCKETS_MS.iter().zip(s.buckets) {
                cumulative += n;
                let _ = writeln!(out, "{name}_bucket{{le=\"{bound}\"}} {cumulative}");
            }
            let _ = writeln!(out, "{name}_bucket{{le=\"+Inf\"}} {}", s.count);
            let _ = writeln!(out, "{name}_sum {}\n{name}_count {}", s.sum, s.count);
        }
        out
    }
}

impl ProtocolObserver for MetricsRegistry {
    fn on_stage(&self, stage: Stage, elapsed: Duration) {
        match stage {
            Stage::Sign => self.sign_latency_ms.observe(elapsed),
            Stage::Verify => self.verify_latency_ms.observe(elapsed),
            Stage::Match => self.match_latency_ms.observe(elapsed),
            Stage::Liveness => {}
        }
    }

    fn on_event(&self, event: ProtocolEvent) {
        match event {
            ProtocolEvent::Registered => self.registrations_total.inc(),
            ProtocolEvent::Voted => self.votes_total.inc(),
            ProtocolEvent::SpoofRejected => self.spoof_rejections_total.inc(),
            ProtocolEvent::AuthFailed => self.auth_failures_total.inc(),
        }
    }
}
