//! Finds the worker count that defines intensity 1.0: the smallest load at
//! which the performance device reaches its saturation bandwidth.

use serde::Serialize;

use super::config::ExperimentConfig;
use super::engine::{RunError, Simulation};
use crate::devsim::{OpKind, Tier};
use crate::workloads::Phase;

/// Fraction of the closed-form rate that counts as saturated.
pub const SATURATION_FRACTION: f64 = 0.95;

#[derive(Clone, Debug, Serialize)]
pub struct Calibration {
    pub workers: u32,
    pub target_mbps: f64,
    /// (workers, performance-device MB/s) for every probe, in order.
    pub probes: Vec<(u32, f64)>,
}

/// Closed-form saturation rate of the performance device for the
/// workload's read/write mix, MB/s.
pub fn saturation_target_mbps(config: &ExperimentConfig) -> Result<f64, RunError> {
    let [perf, _] = config.device_specs()?;
    let len = config.workload.access_size;
    let r = config.workload.read_ratio;
    let service_us = r * perf.service_time_us(OpKind::Read, len) + (1.0 - r) * perf.service_time_us(OpKind::Write, len);
    Ok(perf.parallelism as f64 * len as f64 / service_us)
}

/// Performance-device throughput over the final half of a short run with
/// `workers` closed-loop workers under hotness tiering.
pub fn probe(config: &ExperimentConfig, workers: u32) -> Result<f64, RunError> {
    let mut c = config.clone();
    c.policy.name = "hemem".into();
    c.workload.phases = vec![Phase::workers(0.0, workers)];
    c.workload.write_spikes.clear();
    c.engine.duration_s = c.engine.calibration_duration_s;
    c.engine.metrics_interval_s = (c.engine.duration_s / 20.0).min(0.1);
    let policy = super::build_policy(&c)?;
    let (rows, _) = Simulation::new(&c, policy)?.run()?;
    let tail = &rows[rows.len() / 2..];
    Ok(tail.iter().map(|r| r.dev_throughput_mbps[Tier::Performance.index()]).sum::<f64>() / tail.len() as f64)
}

pub fn calibrate(config: &ExperimentConfig) -> Result<Calibration, RunError> {
    let target = saturation_target_mbps(config)?;
    let mut probes = Vec::new();
    let saturated = |w: u32, probes: &mut Vec<(u32, f64)>| -> Result<bool, RunError> {
        let mbps = probe(config, w)?;
        log::debug!("calibration probe: {w} workers -> {mbps:.1} MB/s of {target:.1}");
        probes.push((w, mbps));
        Ok(mbps >= SATURATION_FRACTION * target)
    };
    let mut hi = 1u32;
    while !saturated(hi, &mut probes)? {
        if hi >= 1 << 16 {
            return Err(RunError::Setup(format!("performance device not saturated with {hi} workers")));
        }
        hi *= 2;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if saturated(mid, &mut probes)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Calibration { workers: hi, target_mbps: target, probes })
}
