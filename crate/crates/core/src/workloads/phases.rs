use serde::{Deserialize, Serialize};

/// Load from `start_s` onward, in either absolute workers or multiples of
/// the calibrated saturating worker count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub start_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PhaseLoad {
    Workers(u32),
    Intensity(f64),
}

impl Phase {
    pub fn workers(start_s: f64, workers: u32) -> Self {
        Phase { start_s, workers: Some(workers), intensity: None }
    }

    pub fn intensity(start_s: f64, intensity: f64) -> Self {
        Phase { start_s, workers: None, intensity: Some(intensity) }
    }

    pub fn load(&self) -> PhaseLoad {
        match (self.workers, self.intensity) {
            (Some(w), _) => PhaseLoad::Workers(w),
            (None, Some(i)) => PhaseLoad::Intensity(i),
            (None, None) => PhaseLoad::Workers(0),
        }
    }
}

pub(super) fn validate(phases: &[Phase]) -> Result<(), String> {
    for (i, p) in phases.iter().enumerate() {
        if p.workers.is_some() == p.intensity.is_some() {
            return Err(format!("workload.phases[{i}]: set exactly one of workers or intensity"));
        }
        if !(p.start_s >= 0.0) || p.intensity.is_some_and(|x| !(x >= 0.0)) {
            return Err(format!("workload.phases[{i}]: start_s and intensity must be non-negative"));
        }
        if i > 0 && p.start_s <= phases[i - 1].start_s {
            return Err(format!("workload.phases[{i}]: start times must be strictly increasing"));
        }
    }
    Ok(())
}

/// Phases with every load expressed as a worker count.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedPhases {
    starts: Vec<f64>,
    workers: Vec<u32>,
    calibrated: Option<u32>,
}

impl ResolvedPhases {
    /// `calibrated` is the worker count at intensity 1.0, required when any
    /// phase is given as an intensity.
    pub fn resolve(phases: &[Phase], default_intensity: f64, calibrated: Option<u32>) -> Result<Self, String> {
        let owned;
        let phases = if phases.is_empty() {
            owned = [Phase::intensity(0.0, default_intensity)];
            &owned[..]
        } else {
            phases
        };
        validate(phases)?;
        let mut starts = Vec::new();
        let mut workers = Vec::new();
        if phases[0].start_s > 0.0 {
            starts.push(0.0);
            workers.push(0);
        }
        for p in phases {
            let w = match p.load() {
                PhaseLoad::Workers(w) => w,
                PhaseLoad::Intensity(x) => {
                    let c = calibrated.ok_or("an intensity phase needs a calibrated worker count")?;
                    (x * c as f64).round().max(if x > 0.0 { 1.0 } else { 0.0 }) as u32
                }
            };
            starts.push(p.start_s);
            workers.push(w);
        }
        Ok(ResolvedPhases { starts, workers, calibrated })
    }

    fn index_at(&self, t: f64) -> usize {
        self.starts.partition_point(|&s| s <= t).saturating_sub(1)
    }

    pub fn workers_at(&self, t: f64) -> u32 {
        self.workers[self.index_at(t)]
    }

    /// Load relative to the calibrated count, when known.
    pub fn intensity_at(&self, t: f64) -> Option<f64> {
        self.calibrated.filter(|&c| c > 0).map(|c| self.workers_at(t) as f64 / c as f64)
    }

    pub fn max_workers(&self) -> u32 {
        self.workers.iter().copied().max().unwrap_or(0)
    }

    /// Phase boundaries after time zero.
    pub fn boundaries(&self) -> impl Iterator<Item = f64> + '_ {
        self.starts.iter().copied().filter(|&s| s > 0.0)
    }

    pub fn segments(&self) -> impl Iterator<Item = (f64, u32)> + '_ {
        self.starts.iter().copied().zip(self.workers.iter().copied())
    }
}

/// Worker-seconds over `[0, duration_s)`.
pub fn worker_integral(phases: &ResolvedPhases, duration_s: f64) -> f64 {
    let seg: Vec<(f64, u32)> = phases.segments().collect();
    seg.iter()
        .enumerate()
        .map(|(i, &(start, w))| {
            let end = seg.get(i + 1).map_or(duration_s, |n| n.0).min(duration_s);
            (end - start).max(0.0) * w as f64
        })
        .sum()
}

/// Periodic bursts: `base` load, switching to `burst` for `burst_s` seconds
/// at the start of every `period_s`, beginning at `first_burst_s`.
pub fn burst_schedule(base: Phase, burst: Phase, first_burst_s: f64, period_s: f64, burst_s: f64, duration_s: f64) -> Vec<Phase> {
    let at = |p: Phase, t: f64| Phase { start_s: t, ..p };
    let mut out = Vec::new();
    if first_burst_s > 0.0 {
        out.push(at(base, 0.0));
    }
    let mut t = first_burst_s;
    while t < duration_s {
        out.push(at(burst, t));
        if t + burst_s < duration_s {
            out.push(at(base, t + burst_s));
        }
        t += period_s;
    }
    out
}
