//! Experiment runner: configuration, the event loop, metrics and analysis.

pub mod analysis;
pub mod calibrate;
pub mod compare;
pub mod config;
pub mod engine;
pub mod histogram;
pub mod metrics;

pub use config::{ConfigError, ExperimentConfig};
pub use engine::{RunError, Simulation};
pub use metrics::{MetricsSnapshot, RunSummary};

use crate::baselines::{Batman, Colloid, ColloidVariant, HeMem, Nhc, Striping};
use crate::devsim::OpKind;
use crate::most::MostPolicy;
use crate::policy::Policy;
use crate::workloads::TraceOp;

/// Instantiates the configured policy.
pub fn build_policy(config: &ExperimentConfig) -> Result<Box<dyn Policy>, ConfigError> {
    let p = &config.policy;
    let invalid = ConfigError::Invalid;
    let seg = crate::addrspace::DEFAULT_SEGMENT_SIZE;
    Ok(match p.name.as_str() {
        "most" => Box::new(MostPolicy::new(p.most())),
        "striping" => Box::new(Striping::new(p.striping, seg).map_err(invalid)?),
        "hemem" => Box::new(HeMem::new(p.hemem)),
        "batman" => {
            let [perf, cap] = config.device_specs()?;
            let len = config.workload.access_size;
            let (bp, bc) = (perf.saturation_bandwidth(OpKind::Read, len), cap.saturation_bandwidth(OpKind::Read, len));
            Box::new(Batman::new(p.batman, bp / (bp + bc)).map_err(invalid)?)
        }
        "colloid" => Box::new(Colloid::new(ColloidVariant::Base, p.colloid).map_err(invalid)?),
        "colloid+" => Box::new(Colloid::new(ColloidVariant::Plus, p.colloid).map_err(invalid)?),
        "colloid++" => Box::new(Colloid::new(ColloidVariant::PlusPlus, p.colloid).map_err(invalid)?),
        "nhc" => Box::new(Nhc::new(p.nhc).map_err(invalid)?),
        other => return Err(ConfigError::Invalid(format!("unknown policy `{other}`"))),
    })
}

/// Whether running `config` requires a calibrated worker count.
pub fn needs_calibration(config: &ExperimentConfig) -> bool {
    config.engine.calibrated_workers.is_none()
        && (config.workload.phases.is_empty() || config.workload.phases.iter().any(|p| p.intensity.is_some()))
}

/// Runs one experiment, calibrating first if needed.
pub fn run(config: &ExperimentConfig) -> Result<(Vec<MetricsSnapshot>, RunSummary), RunError> {
    let mut config = config.clone();
    if needs_calibration(&config) {
        config.engine.calibrated_workers = Some(calibrate::calibrate(&config)?.workers);
    }
    let policy = build_policy(&config)?;
    Simulation::new(&config, policy)?.run()
}

/// Replays a trace under the configured policy.
pub fn run_trace(config: &ExperimentConfig, trace: Vec<TraceOp>) -> Result<(Vec<MetricsSnapshot>, RunSummary), RunError> {
    let policy = build_policy(config)?;
    Simulation::with_trace(config, policy, trace)?.run()
}
