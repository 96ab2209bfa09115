//! Per-interval snapshots, the CSV schema and run summaries.

use std::fmt::Write as _;

use serde::Serialize;

use crate::policy::PolicyStats;

pub const CSV_COLUMNS: [&str; 14] = [
    "time_s",
    "policy",
    "intensity",
    "throughput_mbps",
    "p50_us",
    "p99_us",
    "p999_us",
    "offload_ratio",
    "mig_to_perf_bytes",
    "mig_to_cap_bytes",
    "mirror_bytes",
    "clean_bytes",
    "dev0_util",
    "dev1_util",
];

/// One metrics interval. Byte counters are cumulative; the rest describe
/// the interval ending at `time_s`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsSnapshot {
    pub time_s: f64,
    pub policy: String,
    pub intensity: Option<f64>,
    pub workers: u32,
    /// Foreground throughput in MB/s (10^6 bytes).
    pub throughput_mbps: f64,
    pub p50_us: Option<f64>,
    pub p99_us: Option<f64>,
    pub p999_us: Option<f64>,
    pub offload_ratio: f64,
    pub mig_to_perf_bytes: u64,
    pub mig_to_cap_bytes: u64,
    pub mirror_bytes: u64,
    pub clean_bytes: u64,
    pub dev_util: [f64; 2],
    pub dev_queue_depth: [usize; 2],
    /// Mean end-to-end latency of every request the device completed.
    pub dev_latency_us: [Option<f64>; 2],
    pub dev_read_latency_us: [Option<f64>; 2],
    /// Foreground and background bytes moved by each device, MB/s.
    pub dev_throughput_mbps: [f64; 2],
    /// Cumulative mirrored reads per device.
    pub mirrored_reads: [u64; 2],
    pub mirrored_clean_reads: [u64; 2],
    pub mirrored_segments: u32,
}

impl MetricsSnapshot {
    pub fn migration_bytes(&self) -> u64 {
        self.mig_to_perf_bytes + self.mig_to_cap_bytes
    }

    pub fn background_bytes(&self) -> u64 {
        self.migration_bytes() + self.mirror_bytes + self.clean_bytes
    }
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or(String::new(), |x| format!("{x:.prec$}"))
}

pub fn csv_header() -> String {
    CSV_COLUMNS.join(",")
}

pub fn csv_row(r: &MetricsSnapshot) -> String {
    format!(
        "{:.3},{},{},{:.3},{},{},{},{:.4},{},{},{},{},{:.4},{:.4}",
        r.time_s,
        r.policy,
        opt(r.intensity, 3),
        r.throughput_mbps,
        opt(r.p50_us, 1),
        opt(r.p99_us, 1),
        opt(r.p999_us, 1),
        r.offload_ratio,
        r.mig_to_perf_bytes,
        r.mig_to_cap_bytes,
        r.mirror_bytes,
        r.clean_bytes,
        r.dev_util[0],
        r.dev_util[1],
    )
}

pub fn to_csv(rows: &[MetricsSnapshot]) -> String {
    let mut s = csv_header();
    s.push('\n');
    for r in rows {
        writeln!(s, "{}", csv_row(r)).unwrap();
    }
    s
}

/// Mean over the final third of a series.
pub fn steady_mean(series: &[f64]) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    let tail = &series[series.len() - series.len().div_ceil(3)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// End-of-run totals gathered by the engine.
#[derive(Clone, Debug, Serialize)]
pub struct RunTotals {
    /// Completed background write bytes per class.
    pub bg_written: [u64; 4],
    /// Background bytes requested by the policy per class.
    pub bg_requested: [u64; 4],
    pub device_bytes_written: [u64; 2],
    pub device_bytes_read: [u64; 2],
    pub fg_write_bytes_submitted: [u64; 2],
    pub fg_write_bytes_completed: u64,
    pub fg_write_bytes_inflight: u64,
    /// Device-written bytes equal completed foreground plus background writes.
    pub accounting_closed: bool,
    pub routing_violations: u64,
    pub single_copy_violations: u64,
    pub invariants: Option<String>,
    pub fg_bytes: u64,
    pub fg_ops: u64,
    pub total_p50_us: Option<f64>,
    pub total_p99_us: Option<f64>,
    pub offload_ratio: f64,
    pub calibrated_workers: Option<u32>,
    pub request_hash: u64,
    pub stats: PolicyStats,
    pub duration_s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub policy: String,
    pub steady_throughput_mbps: f64,
    pub mean_throughput_mbps: f64,
    pub steady_dev_throughput_mbps: [f64; 2],
    #[serde(flatten)]
    pub totals: RunTotals,
}

impl RunSummary {
    pub fn from_rows(rows: &[MetricsSnapshot], policy: &str, totals: RunTotals) -> Self {
        let tp: Vec<f64> = rows.iter().map(|r| r.throughput_mbps).collect();
        let dev = |i: usize| steady_mean(&rows.iter().map(|r| r.dev_throughput_mbps[i]).collect::<Vec<_>>());
        RunSummary {
            policy: policy.to_string(),
            steady_throughput_mbps: steady_mean(&tp),
            mean_throughput_mbps: if tp.is_empty() { 0.0 } else { tp.iter().sum::<f64>() / tp.len() as f64 },
            steady_dev_throughput_mbps: [dev(0), dev(1)],
            totals,
        }
    }

    pub fn migration_bytes(&self) -> u64 {
        self.totals.bg_written[0] + self.totals.bg_written[1]
    }

    pub fn mirror_bytes(&self) -> u64 {
        self.totals.bg_written[2]
    }

    pub fn clean_bytes(&self) -> u64 {
        self.totals.bg_written[3]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}
