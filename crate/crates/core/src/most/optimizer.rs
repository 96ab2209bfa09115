//! Feedback controller that equalizes end-to-end latency across the two
//! devices by adjusting the offload ratio, and decides the direction in
//! which background migration is allowed.

use serde::{Deserialize, Serialize};

/// Directional permission for background migration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MigrationGate {
    ToCapacityOnly,
    ToPerformanceOnly,
    Stopped,
}

/// Mirror-class work requested by the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum MirrorAction {
    EnlargeMirror,
    ImproveMirrorHotness,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub theta: f64,
    pub ratio_step: f64,
    pub tuning_interval_s: f64,
    pub ewma_alpha: f64,
    pub offload_ratio_max: f64,
    pub mirrored_max_fraction: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            theta: 0.05,
            ratio_step: 0.02,
            tuning_interval_s: 0.2,
            ewma_alpha: 0.3,
            offload_ratio_max: 1.0,
            mirrored_max_fraction: 0.20,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), String> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.theta) {
            return Err(format!("theta {} must be in (0, 1)", self.theta));
        }
        if !open_unit(self.ratio_step) {
            return Err(format!("ratio_step {} must be in (0, 1)", self.ratio_step));
        }
        if !(self.ewma_alpha > 0.0 && self.ewma_alpha <= 1.0) {
            return Err(format!("ewma_alpha {} must be in (0, 1]", self.ewma_alpha));
        }
        if !(0.0..=1.0).contains(&self.offload_ratio_max) {
            return Err(format!("offload_ratio_max {} must be in [0, 1]", self.offload_ratio_max));
        }
        if !(0.0..=1.0).contains(&self.mirrored_max_fraction) {
            return Err(format!("mirrored_max_fraction {} must be in [0, 1]", self.mirrored_max_fraction));
        }
        if !(self.tuning_interval_s > 0.0) {
            return Err("tuning_interval must be positive".into());
        }
        Ok(())
    }
}

/// Whole control state of the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub offload_ratio: f64,
    /// Smoothed latencies in microseconds; `None` until the first sample.
    pub latency_perf: Option<f64>,
    pub latency_cap: Option<f64>,
    pub gate: MigrationGate,
}

/// Mirror-class occupancy seen by the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MirrorStats {
    pub mirrored_bytes: u64,
    pub limit_bytes: u64,
}

impl MirrorStats {
    pub fn maximized(&self) -> bool {
        self.mirrored_bytes >= self.limit_bytes
    }
}

const EPS: f64 = 1e-9;

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Self {
        OptimizerState {
            config,
            offload_ratio: 0.0,
            latency_perf: None,
            latency_cap: None,
            gate: MigrationGate::Stopped,
        }
    }

    fn smooth(prev: Option<f64>, sample: Option<f64>, alpha: f64) -> Option<f64> {
        match (prev, sample) {
            (Some(p), Some(s)) => Some(alpha * s + (1.0 - alpha) * p),
            (None, s) => s,
            (p, None) => p,
        }
    }

    /// One tuning interval. Samples are mean latencies in microseconds, or
    /// `None` when the device completed nothing.
    pub fn step(&self, perf_sample: Option<f64>, cap_sample: Option<f64>, mirror: MirrorStats) -> (Self, Vec<MirrorAction>) {
        let mut next = *self;
        let alpha = self.config.ewma_alpha;
        next.latency_perf = Self::smooth(self.latency_perf, perf_sample, alpha);
        next.latency_cap = Self::smooth(self.latency_cap, cap_sample, alpha);
        let mut actions = Vec::new();
        let (Some(lp), Some(lc)) = (next.latency_perf, next.latency_cap) else {
            next.gate = MigrationGate::Stopped;
            return (next, actions);
        };
        let theta = self.config.theta;
        let max = self.config.offload_ratio_max;
        if lp > (1.0 + theta) * lc {
            if next.offload_ratio >= max - EPS {
                next.offload_ratio = max;
                actions.push(if mirror.maximized() {
                    MirrorAction::ImproveMirrorHotness
                } else {
                    MirrorAction::EnlargeMirror
                });
                next.gate = MigrationGate::ToCapacityOnly;
            } else {
                next.offload_ratio = (next.offload_ratio + self.config.ratio_step).min(max);
                next.gate = MigrationGate::Stopped;
            }
        } else if lp < (1.0 - theta) * lc {
            if next.offload_ratio <= EPS {
                next.offload_ratio = 0.0;
                next.gate = MigrationGate::ToPerformanceOnly;
            } else {
                next.offload_ratio = (next.offload_ratio - self.config.ratio_step).max(0.0);
                next.gate = MigrationGate::Stopped;
            }
        } else {
            next.gate = MigrationGate::Stopped;
        }
        (next, actions)
    }
}
