//! Experiment configuration, read from TOML. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{BatmanConfig, ColloidConfig, HeMemConfig, NhcConfig, StripingConfig};
use crate::devsim::{DevError, DeviceSpec, OpProfile, SpikeSpec};
use crate::most::{MostConfig, OptimizerConfig};
use crate::workloads::WorkloadSpec;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Device(#[from] DevError),
}

/// A device given by preset name, optionally overriding its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub preset: String,
    pub capacity: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spike: Option<SpikeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub read: Option<OpProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub write: Option<OpProfile>,
}

impl DeviceConfig {
    pub fn new(preset: &str, capacity: u64) -> Self {
        DeviceConfig { preset: preset.into(), capacity, parallelism: None, spike: None, read: None, write: None }
    }

    pub fn build(&self) -> Result<DeviceSpec, DevError> {
        let mut spec = DeviceSpec::preset(&self.preset, self.capacity)?;
        if let Some(p) = self.parallelism {
            spec.parallelism = p;
        }
        if self.spike.is_some() {
            spec.spike = self.spike;
        }
        if let Some(r) = self.read {
            spec.read = r;
        }
        if let Some(w) = self.write {
            spec.write = w;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Devices {
    pub performance: DeviceConfig,
    pub capacity: DeviceConfig,
}

impl Default for Devices {
    fn default() -> Self {
        Devices {
            performance: DeviceConfig::new("optane", 4 << 30),
            capacity: DeviceConfig::new("nvme-pcie3", 8 << 30),
        }
    }
}

pub const POLICY_NAMES: [&str; 8] = ["most", "striping", "hemem", "batman", "colloid", "colloid+", "colloid++", "nhc"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub name: String,
    pub theta: f64,
    pub ratio_step: f64,
    pub tuning_interval_ms: f64,
    pub ewma_alpha: f64,
    pub offload_ratio_max: f64,
    pub mirrored_max_fraction: f64,
    pub watermark_fraction: f64,
    pub migration_budget_bytes: u64,
    pub clean_threshold: f64,
    pub subpages_enabled: bool,
    pub batman: BatmanConfig,
    pub colloid: ColloidConfig,
    pub hemem: HeMemConfig,
    pub nhc: NhcConfig,
    pub striping: StripingConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let m = MostConfig::default();
        let o = m.optimizer;
        PolicyConfig {
            name: "most".into(),
            theta: o.theta,
            ratio_step: o.ratio_step,
            tuning_interval_ms: o.tuning_interval_s * 1e3,
            ewma_alpha: o.ewma_alpha,
            offload_ratio_max: o.offload_ratio_max,
            mirrored_max_fraction: o.mirrored_max_fraction,
            watermark_fraction: m.watermark_fraction,
            migration_budget_bytes: m.migration_budget_bytes,
            clean_threshold: m.clean_threshold,
            subpages_enabled: m.subpages_enabled,
            batman: BatmanConfig::default(),
            colloid: ColloidConfig::default(),
            hemem: HeMemConfig::default(),
            nhc: NhcConfig::default(),
            striping: StripingConfig::default(),
        }
    }
}

impl PolicyConfig {
    pub fn most(&self) -> MostConfig {
        MostConfig {
            optimizer: OptimizerConfig {
                theta: self.theta,
                ratio_step: self.ratio_step,
                tuning_interval_s: self.tuning_interval_ms / 1e3,
                ewma_alpha: self.ewma_alpha,
                offload_ratio_max: self.offload_ratio_max,
                mirrored_max_fraction: self.mirrored_max_fraction,
            },
            watermark_fraction: self.watermark_fraction,
            migration_budget_bytes: self.migration_budget_bytes,
            clean_threshold: self.clean_threshold,
            subpages_enabled: self.subpages_enabled,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayMode {
    /// Each trace record is issued at its timestamp.
    Open,
    /// `replay_workers` workers issue trace records back to back.
    Closed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub duration_s: f64,
    pub metrics_interval_s: f64,
    /// Seeds the policy's routing decisions.
    pub seed: u64,
    /// Worker count at intensity 1.0; found by calibration when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibrated_workers: Option<u32>,
    /// Background transfers are split into chunks of this size.
    pub transfer_chunk_bytes: u64,
    /// Concurrent background chunks per source device.
    pub max_background_outstanding: u32,
    /// Place the whole working set before the run starts.
    pub prefill: bool,
    pub replay_mode: ReplayMode,
    pub replay_workers: u32,
    /// Simulated seconds per calibration probe.
    pub calibration_duration_s: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            duration_s: 30.0,
            metrics_interval_s: 0.2,
            seed: 1,
            calibrated_workers: None,
            transfer_chunk_bytes: 64 << 10,
            max_background_outstanding: 4,
            prefill: true,
            replay_mode: ReplayMode::Closed,
            replay_workers: 32,
            calibration_duration_s: 2.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub devices: Devices,
    pub policy: PolicyConfig,
    pub workload: WorkloadSpec,
    pub engine: EngineConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn device_specs(&self) -> Result<[DeviceSpec; 2], ConfigError> {
        Ok([self.devices.performance.build()?, self.devices.capacity.build()?])
    }

    /// Addressable bytes: physical capacity minus the mirror reserve,
    /// rounded down to whole segments.
    pub fn logical_bytes(&self) -> u64 {
        let seg = crate::addrspace::DEFAULT_SEGMENT_SIZE;
        let total = self.devices.performance.capacity + self.devices.capacity.capacity;
        let usable = (total as f64 * (1.0 - self.policy.mirrored_max_fraction)) as u64;
        usable / seg * seg
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.device_specs()?;
        if !POLICY_NAMES.contains(&self.policy.name.as_str()) {
            return bad(format!("policy.name `{}` is not one of {}", self.policy.name, POLICY_NAMES.join(", ")));
        }
        self.policy.most().optimizer.validate().map_err(|e| ConfigError::Invalid(format!("policy: {e}")))?;
        if !(0.0..1.0).contains(&self.policy.watermark_fraction) {
            return bad("policy.watermark_fraction must be in [0, 1)".into());
        }
        let seg = crate::addrspace::DEFAULT_SEGMENT_SIZE;
        self.workload
            .validate(crate::addrspace::DEFAULT_SUBPAGE_SIZE, self.logical_bytes())
            .map_err(ConfigError::Invalid)?;
        if seg % self.workload.access_size != 0 {
            return bad(format!("workload.access_size must divide the segment size {seg}"));
        }
        let e = &self.engine;
        if !(e.duration_s > 0.0 && e.metrics_interval_s > 0.0 && e.metrics_interval_s <= e.duration_s) {
            return bad("engine.duration_s and engine.metrics_interval_s must be positive with interval <= duration".into());
        }
        if e.transfer_chunk_bytes == 0 || e.transfer_chunk_bytes % crate::addrspace::DEFAULT_SUBPAGE_SIZE != 0 {
            return bad("engine.transfer_chunk_bytes must be a positive multiple of 4096".into());
        }
        if e.max_background_outstanding == 0 {
            return bad("engine.max_background_outstanding must be >= 1".into());
        }
        Ok(())
    }

    /// Sets a dotted key (e.g. `policy.theta`) from its TOML text. `policy`
    /// is short for `policy.name`, `intensity` for `workload.intensity`,
    /// and `seed` sets both the engine and workload seeds.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), ConfigError> {
        match key {
            "policy" => return self.set("policy.name", raw),
            "intensity" => return self.set("workload.intensity", raw),
            "seed" => {
                self.set("engine.seed", raw)?;
                return self.set("workload.seed", raw);
            }
            _ => {}
        }
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut root = toml::Value::try_from(&*self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node.as_table_mut().ok_or_else(|| ConfigError::Invalid(format!("`{key}` is not a table path")))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), value.clone());
                break;
            }
            node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        }
        let next: ExperimentConfig =
            root.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(format!("setting `{key}`: {e}")))?;
        next.validate()?;
        *self = next;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ExperimentConfig::from_toml("[policy]\nthetta = 0.1\n").unwrap_err();
        assert!(e.to_string().contains("thetta"), "{e}");
        assert!(ExperimentConfig::from_toml("[bogus]\nx = 1\n").is_err());
    }

    #[test]
    fn parses_nested_sections() {
        let c = ExperimentConfig::from_toml(
            r#"
            [devices.performance]
            preset = "optane"
            capacity = 1073741824
            [devices.capacity]
            preset = "sata"
            capacity = 2147483648
            [policy]
            name = "colloid++"
            [policy.colloid]
            migration_limit_bytes_s = 10485760
            [workload]
            working_set = 1073741824
            access_size = 4096
            distribution = { kind = "zipfian", theta = 0.8 }
            phases = [{ start_s = 0, workers = 4 }, { start_s = 5, intensity = 2.0 }]
            "#,
        )
        .unwrap();
        assert_eq!(c.policy.colloid.migration_limit_bytes_s, 10 << 20);
        assert_eq!(c.workload.phases.len(), 2);
    }

    #[test]
    fn dotted_overrides() {
        let mut c = ExperimentConfig::default();
        c.set("policy", "colloid++").unwrap();
        c.set("intensity", "1.5").unwrap();
        c.set("policy.batman.ratio", "0.4").unwrap();
        c.set("seed", "9").unwrap();
        assert_eq!(c.policy.name, "colloid++");
        assert_eq!(c.workload.intensity, 1.5);
        assert_eq!(c.policy.batman.ratio, Some(0.4));
        assert_eq!((c.engine.seed, c.workload.seed), (9, 9));
        assert!(c.set("policy", "nonsense").is_err());
        assert!(c.set("policy.nope", "1").is_err());
    }

    #[test]
    fn validation_names_the_key() {
        let mut c = ExperimentConfig::default();
        c.workload.read_ratio = 2.0;
        assert!(c.validate().unwrap_err().to_string().contains("read_ratio"));
    }
}
