//! Cartesian sweeps over configuration keys.

use std::fmt::Write as _;

use super::config::ExperimentConfig;
use super::engine::RunError;
use super::metrics::{MetricsSnapshot, RunSummary};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for Sweep {
    type Err = String;

    /// Parses `key=v1,v2,...`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (key, vals) = s.split_once('=').ok_or_else(|| format!("sweep `{s}` must look like key=v1,v2"))?;
        let values: Vec<String> = vals.split(',').map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
        if key.trim().is_empty() || values.is_empty() {
            return Err(format!("sweep `{s}` needs a key and at least one value"));
        }
        Ok(Sweep { key: key.trim().to_string(), values })
    }
}

/// One sweep point: the assignments applied and the config they produce.
#[derive(Clone, Debug)]
pub struct Point {
    pub assignments: Vec<(String, String)>,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug)]
pub struct PointResult {
    pub assignments: Vec<(String, String)>,
    pub summary: RunSummary,
    pub rows: Vec<MetricsSnapshot>,
}

/// Expands sweeps into points, first sweep varying slowest.
pub fn points(base: &ExperimentConfig, sweeps: &[Sweep]) -> Result<Vec<Point>, RunError> {
    let mut out = vec![Point { assignments: Vec::new(), config: base.clone() }];
    for sweep in sweeps {
        let mut next = Vec::with_capacity(out.len() * sweep.values.len());
        for p in &out {
            for v in &sweep.values {
                let mut config = p.config.clone();
                config.set(&sweep.key, v)?;
                let mut assignments = p.assignments.clone();
                assignments.push((sweep.key.clone(), v.clone()));
                next.push(Point { assignments, config });
            }
        }
        out = next;
    }
    Ok(out)
}

/// Runs every point, calibrating once first when any point uses intensity
/// units without a recorded worker count.
pub fn compare(base: &ExperimentConfig, sweeps: &[Sweep], parallel: bool) -> Result<Vec<PointResult>, RunError> {
    let mut pts = points(base, sweeps)?;
    if base.engine.calibrated_workers.is_none() && pts.iter().any(|p| super::needs_calibration(&p.config)) {
        let workers = super::calibrate::calibrate(base)?.workers;
        for p in &mut pts {
            p.config.engine.calibrated_workers = Some(workers);
        }
    }
    let job = |p: &Point| -> Result<PointResult, RunError> {
        let (rows, summary) = super::run(&p.config)?;
        Ok(PointResult { assignments: p.assignments.clone(), summary, rows })
    };
    let results = if parallel { crate::exec::map(&pts, job) } else { crate::exec::map_sequential(&pts, job) };
    results.into_iter().collect()
}

fn lookup<'a>(r: &'a PointResult, key: &str) -> Option<&'a str> {
    r.assignments.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn summary_metrics(s: &RunSummary) -> Vec<(&'static str, String)> {
    let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.1}"));
    vec![
        ("steady_throughput_mbps", format!("{:.3}", s.steady_throughput_mbps)),
        ("mean_throughput_mbps", format!("{:.3}", s.mean_throughput_mbps)),
        ("p50_us", f(s.totals.total_p50_us)),
        ("p99_us", f(s.totals.total_p99_us)),
        ("offload_ratio", format!("{:.4}", s.totals.offload_ratio)),
        ("mig_to_perf_bytes", s.totals.bg_written[0].to_string()),
        ("mig_to_cap_bytes", s.totals.bg_written[1].to_string()),
        ("mirror_bytes", s.totals.bg_written[2].to_string()),
        ("clean_bytes", s.totals.bg_written[3].to_string()),
        ("calibrated_workers", s.totals.calibrated_workers.map_or(String::new(), |w| w.to_string())),
    ]
}

/// One row per point: policy, intensity, any other swept keys, then metrics.
pub fn summary_csv(results: &[PointResult]) -> String {
    let extra: Vec<String> = results
        .first()
        .map(|r| r.assignments.iter().map(|(k, _)| k.clone()).filter(|k| k != "policy" && k != "intensity").collect())
        .unwrap_or_default();
    let mut s = String::from("policy,intensity");
    for k in &extra {
        write!(s, ",{k}").unwrap();
    }
    let empty = RunSummary::from_rows(&[], "", empty_totals());
    for (m, _) in summary_metrics(&empty) {
        write!(s, ",{m}").unwrap();
    }
    s.push('\n');
    for r in results {
        let intensity = lookup(r, "intensity").map(String::from).unwrap_or_default();
        write!(s, "{},{intensity}", r.summary.policy).unwrap();
        for k in &extra {
            write!(s, ",{}", lookup(r, k).unwrap_or("")).unwrap();
        }
        for (_, v) in summary_metrics(&r.summary) {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// One row per (point, metric).
pub fn long_csv(results: &[PointResult]) -> String {
    let mut s = String::from("policy,intensity,point,metric,value\n");
    for r in results {
        let intensity = lookup(r, "intensity").unwrap_or("");
        let point: Vec<String> = r.assignments.iter().map(|(k, v)| format!("{k}={v}")).collect();
        for (m, v) in summary_metrics(&r.summary) {
            writeln!(s, "{},{intensity},{},{m},{v}", r.summary.policy, point.join(";")).unwrap();
        }
    }
    s
}

fn empty_totals() -> super::metrics::RunTotals {
    super::metrics::RunTotals {
        bg_written: [0; 4],
        bg_requested: [0; 4],
        device_bytes_written: [0; 2],
        device_bytes_read: [0; 2],
        fg_write_bytes_submitted: [0; 2],
        fg_write_bytes_completed: 0,
        fg_write_bytes_inflight: 0,
        accounting_closed: true,
        routing_violations: 0,
        single_copy_violations: 0,
        invariants: None,
        fg_bytes: 0,
        fg_ops: 0,
        total_p50_us: None,
        total_p99_us: None,
        offload_ratio: 0.0,
        calibrated_workers: None,
        request_hash: 0,
        stats: Default::default(),
        duration_s: 0.0,
    }
}
