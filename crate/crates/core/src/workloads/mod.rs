//! Seeded workload generation and trace replay.

mod generator;
mod phases;
mod trace;

pub use generator::{Op, Sampler, WorkerStream};
pub use phases::{burst_schedule, worker_integral, Phase, PhaseLoad, ResolvedPhases};
pub use trace::{format_trace, parse_trace, read_trace_file, write_trace, TraceError, TraceOp};

use serde::{Deserialize, Serialize};

/// Key-popularity distribution over the working set's blocks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    Uniform,
    Hotset {
        hot_fraction: f64,
        hot_probability: f64,
    },
    Zipfian {
        theta: f64,
    },
    ReadLatest {
        hot_new_fraction: f64,
        hot_probability: f64,
        #[serde(default = "default_window")]
        window_fraction: f64,
    },
    Sequential,
}

fn default_window() -> f64 {
    0.05
}

/// Periodic open-loop write bursts against a fixed group of segments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WriteSpike {
    pub period_s: f64,
    pub first_segment: u32,
    pub segments: u32,
    /// Subpages written at the start of each segment per burst, one
    /// single-subpage write each.
    pub subpages: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSpec {
    pub distribution: Distribution,
    pub read_ratio: f64,
    pub access_size: u64,
    pub working_set: u64,
    /// Load when `phases` is empty, in multiples of the calibrated
    /// saturating worker count.
    pub intensity: f64,
    pub phases: Vec<Phase>,
    /// Pause between a worker's completion and its next issue.
    pub think_time_us: f64,
    pub write_spikes: Vec<WriteSpike>,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            distribution: Distribution::Hotset { hot_fraction: 0.2, hot_probability: 0.9 },
            read_ratio: 1.0,
            access_size: 16 << 10,
            working_set: 9 << 30,
            intensity: 1.0,
            phases: Vec::new(),
            think_time_us: 0.0,
            write_spikes: Vec::new(),
            seed: 1,
        }
    }
}

impl WorkloadSpec {
    pub fn blocks(&self) -> u64 {
        self.working_set / self.access_size
    }

    pub fn validate(&self, subpage: u64, logical_bytes: u64) -> Result<(), String> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.read_ratio) {
            return Err(format!("workload.read_ratio {} must be in [0, 1]", self.read_ratio));
        }
        if self.access_size == 0 || self.access_size % subpage != 0 {
            return Err(format!("workload.access_size {} must be a positive multiple of {subpage}", self.access_size));
        }
        if self.working_set < self.access_size || self.working_set % self.access_size != 0 {
            return Err(format!(
                "workload.working_set {} must be a positive multiple of access_size",
                self.working_set
            ));
        }
        if self.working_set > logical_bytes {
            return Err(format!(
                "workload.working_set {} exceeds the logical space of {logical_bytes} bytes",
                self.working_set
            ));
        }
        match self.distribution {
            Distribution::Hotset { hot_fraction, hot_probability } => {
                if !(hot_fraction > 0.0 && hot_fraction < 1.0) || !unit(hot_probability) {
                    return Err("workload.distribution: hot_fraction in (0,1), hot_probability in [0,1]".into());
                }
            }
            Distribution::Zipfian { theta } => {
                if !(theta > 0.0 && theta < 1.0) {
                    return Err(format!("workload.distribution.theta {theta} must be in (0, 1)"));
                }
            }
            Distribution::ReadLatest { hot_new_fraction, hot_probability, window_fraction } => {
                if !unit(hot_new_fraction) || !unit(hot_probability) || !(window_fraction > 0.0 && window_fraction <= 1.0) {
                    return Err("workload.distribution: read_latest fractions must be in [0, 1]".into());
                }
            }
            Distribution::Uniform | Distribution::Sequential => {}
        }
        if !(self.think_time_us >= 0.0) {
            return Err("workload.think_time_us must be non-negative".into());
        }
        if !(self.intensity >= 0.0) {
            return Err("workload.intensity must be non-negative".into());
        }
        phases::validate(&self.phases)?;
        for s in &self.write_spikes {
            if !(s.period_s > 0.0) || s.segments == 0 || s.subpages == 0 {
                return Err("workload.write_spikes: period, segments and subpages must be positive".into());
            }
        }
        Ok(())
    }
}
