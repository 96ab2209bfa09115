//! Discrete-event model of a block device.
//!
//! Each device is a FIFO queue in front of `parallelism` identical servers.
//! A request's service time is a fixed access latency plus a transfer time at
//! the per-server bandwidth, both taken from a two-point (4 KiB / 16 KiB)
//! profile. Completion times are fixed at submission, so the queue is fully
//! deterministic; completions are delivered by [`Device::advance`] in
//! timestamp order with ties broken by submission order.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;

/// Unit of validity tracking and the minimum I/O size.
pub const SUBPAGE_SIZE: u64 = 4096;

const SMALL_IO: u64 = 4096;
const LARGE_IO: u64 = 16384;

/// The two devices of the hierarchy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    Performance,
    Capacity,
}

impl Tier {
    pub const BOTH: [Tier; 2] = [Tier::Performance, Tier::Capacity];

    pub fn index(self) -> usize {
        match self {
            Tier::Performance => 0,
            Tier::Capacity => 1,
        }
    }

    pub fn other(self) -> Tier {
        match self {
            Tier::Performance => Tier::Capacity,
            Tier::Capacity => Tier::Performance,
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Performance => "performance",
            Tier::Capacity => "capacity",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Read,
    Write,
}

#[derive(Debug, Error, PartialEq)]
pub enum DevError {
    #[error("request [{offset}, +{length}) outside device capacity {capacity}")]
    Address { offset: u64, length: u64, capacity: u64 },
    #[error("offset {offset} / length {length} not aligned to {SUBPAGE_SIZE}-byte subpages")]
    Alignment { offset: u64, length: u64 },
    #[error("simulated time moved backwards: {now} < {last}")]
    TimeRegression { now: SimTime, last: SimTime },
    #[error("invalid device spec `{name}`: {reason}")]
    Spec { name: String, reason: String },
    #[error("unknown device preset `{0}`")]
    UnknownPreset(String),
}

/// Latency and aggregate bandwidth at one access size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizePoint {
    pub latency_us: f64,
    /// Saturated device bandwidth, bytes/second.
    pub bandwidth: f64,
}

/// Per-operation profile anchored at 4 KiB and 16 KiB.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpProfile {
    pub small: SizePoint,
    pub large: SizePoint,
}

/// Periodic background activity (e.g. garbage collection) that inflates
/// service times inside `[k * period, k * period + duration)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikeSpec {
    pub period_s: f64,
    pub duration_s: f64,
    pub latency_multiplier: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub name: String,
    pub read: OpProfile,
    pub write: OpProfile,
    pub parallelism: u32,
    pub spike: Option<SpikeSpec>,
    pub capacity: u64,
}

/// Table of published device figures: (name, read latency 4K/16K in us,
/// read GB/s 4K/16K, write GB/s 4K/16K).
const PRESET_TABLE: [(&str, [f64; 2], [f64; 2], [f64; 2]); 5] = [
    ("optane", [11.0, 18.0], [2.2, 2.4], [2.2, 2.2]),
    ("nvme-pcie4", [66.0, 86.0], [1.5, 3.3], [1.9, 2.3]),
    ("nvme-pcie3", [82.0, 90.0], [1.0, 1.6], [1.5, 1.6]),
    ("nvme-rdma", [88.0, 114.0], [1.2, 2.7], [1.7, 2.3]),
    ("sata", [104.0, 146.0], [0.38, 0.5], [0.38, 0.5]),
];

pub const PRESET_NAMES: [&str; 6] = ["optane", "nvme-pcie4", "nvme-pcie3", "nvme-rdma", "sata", "flash-gc"];

impl DeviceSpec {
    /// Builds a named preset with the given capacity.
    ///
    /// Only single-thread read latency is published, so the server count is
    /// the smallest integer that lets every read size class reach its
    /// bandwidth (`p * len / bw > latency`), and write latency is capped at
    /// 90% of the per-server occupancy so writes can reach theirs too.
    /// `flash-gc` is `nvme-pcie3` with a periodic 8x slowdown.
    pub fn preset(name: &str, capacity: u64) -> Result<DeviceSpec, DevError> {
        let (base, spike) = match name {
            "flash-gc" => (
                "nvme-pcie3",
                Some(SpikeSpec { period_s: 10.0, duration_s: 0.5, latency_multiplier: 8.0 }),
            ),
            other => (other, None),
        };
        let (_, lat, rbw, wbw) = PRESET_TABLE
            .iter()
            .find(|row| row.0 == base)
            .ok_or_else(|| DevError::UnknownPreset(name.to_string()))?;
        let sizes = [SMALL_IO as f64, LARGE_IO as f64];
        let parallelism = (0..2)
            .map(|i| (lat[i] * 1e-6 * rbw[i] * 1e9 / sizes[i]).floor() as u32 + 1)
            .max()
            .unwrap_or(1);
        let write_lat: Vec<f64> = (0..2)
            .map(|i| {
                let occupancy_us = parallelism as f64 * sizes[i] / (wbw[i] * 1e9) * 1e6;
                lat[i].min(0.9 * occupancy_us)
            })
            .collect();
        let spec = DeviceSpec {
            name: name.to_string(),
            read: OpProfile {
                small: SizePoint { latency_us: lat[0], bandwidth: rbw[0] * 1e9 },
                large: SizePoint { latency_us: lat[1], bandwidth: rbw[1] * 1e9 },
            },
            write: OpProfile {
                small: SizePoint { latency_us: write_lat[0], bandwidth: wbw[0] * 1e9 },
                large: SizePoint { latency_us: write_lat[1], bandwidth: wbw[1] * 1e9 },
            },
            parallelism,
            spike,
            capacity,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DevError> {
        let bad = |reason: String| Err(DevError::Spec { name: self.name.clone(), reason });
        if self.parallelism == 0 {
            return bad("parallelism must be >= 1".into());
        }
        if self.capacity == 0 || self.capacity % crate::addrspace::DEFAULT_SEGMENT_SIZE != 0 {
            return bad(format!("capacity {} is not a positive multiple of the segment size", self.capacity));
        }
        for (op, prof) in [("read", &self.read), ("write", &self.write)] {
            for (len, pt) in [(SMALL_IO, prof.small), (LARGE_IO, prof.large)] {
                if !(pt.latency_us > 0.0 && pt.bandwidth > 0.0) {
                    return bad(format!("{op} {len}B latency and bandwidth must be positive"));
                }
                let occupancy_us = self.parallelism as f64 * len as f64 / pt.bandwidth * 1e6;
                if occupancy_us <= pt.latency_us {
                    return bad(format!(
                        "{op} {len}B: {} servers cannot reach {} B/s with {}us latency",
                        self.parallelism, pt.bandwidth, pt.latency_us
                    ));
                }
            }
        }
        if let Some(s) = self.spike {
            if !(s.latency_multiplier >= 1.0 && s.period_s > 0.0 && s.duration_s >= 0.0) {
                return bad("spike needs period > 0, duration >= 0, multiplier >= 1".into());
            }
        }
        Ok(())
    }

    fn profile(&self, op: OpKind) -> &OpProfile {
        match op {
            OpKind::Read => &self.read,
            OpKind::Write => &self.write,
        }
    }

    /// Bandwidth of a single server at an anchor size, chosen so that
    /// `parallelism * len / (latency + len / server_bw)` equals the anchor
    /// bandwidth.
    fn server_bandwidth(&self, len: u64, pt: SizePoint) -> f64 {
        let occupancy_s = self.parallelism as f64 * len as f64 / pt.bandwidth;
        len as f64 / (occupancy_s - pt.latency_us * 1e-6)
    }

    /// Nominal (spike-free) service time in microseconds.
    pub fn service_time_us(&self, op: OpKind, length: u64) -> f64 {
        let prof = self.profile(op);
        let bw_small = self.server_bandwidth(SMALL_IO, prof.small);
        let bw_large = self.server_bandwidth(LARGE_IO, prof.large);
        let (base_us, bw) = if length <= SMALL_IO {
            (prof.small.latency_us, bw_small)
        } else if length >= LARGE_IO {
            (prof.large.latency_us, bw_large)
        } else {
            let t = (length - SMALL_IO) as f64 / (LARGE_IO - SMALL_IO) as f64;
            (
                prof.small.latency_us + t * (prof.large.latency_us - prof.small.latency_us),
                bw_small + t * (bw_large - bw_small),
            )
        };
        base_us + length as f64 / bw * 1e6
    }

    /// Closed-form saturation throughput (bytes/s) for a stream of
    /// single-size requests.
    pub fn saturation_bandwidth(&self, op: OpKind, length: u64) -> f64 {
        self.parallelism as f64 * length as f64 / (self.service_time_us(op, length) * 1e-6)
    }

    fn spike_multiplier(&self, at: SimTime) -> f64 {
        match self.spike {
            Some(s) if s.duration_s > 0.0 => {
                let period = SimTime::from_secs_f64(s.period_s).as_nanos().max(1);
                let duration = SimTime::from_secs_f64(s.duration_s).as_nanos();
                if at.as_nanos() % period < duration {
                    s.latency_multiplier
                } else {
                    1.0
                }
            }
            _ => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IoRequest {
    pub device: Tier,
    pub op: OpKind,
    pub offset: u64,
    pub length: u64,
    pub issue_time: SimTime,
}

/// Block-layer style cumulative counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DeviceCounters {
    pub ops_completed: u64,
    pub read_ops: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    /// Sum of end-to-end (queue + service) latency, nanoseconds.
    pub latency_sum_ns: u64,
    pub read_latency_sum_ns: u64,
    /// Sum of service times, nanoseconds. Busy time across all servers.
    pub busy_ns: u64,
}

/// Deltas between two samples of [`DeviceCounters`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CounterSample {
    /// Mean end-to-end latency over the interval; `None` when nothing completed.
    pub avg_latency_us: Option<f64>,
    /// Same, restricted to reads.
    pub avg_read_latency_us: Option<f64>,
    pub bytes: u64,
    pub ops: u64,
    pub busy_ns: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Completion {
    pub tag: u64,
    pub request: IoRequest,
    pub completed_at: SimTime,
    pub service_ns: u64,
}

impl Completion {
    pub fn latency(&self) -> SimTime {
        self.completed_at - self.request.issue_time
    }
}

#[derive(Debug)]
struct Pending {
    done: u64,
    seq: u64,
    completion: Completion,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        (self.done, self.seq) == (other.done, other.seq)
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.done, self.seq).cmp(&(other.done, other.seq))
    }
}

/// One simulated device. The event loop is its only mutator.
#[derive(Debug)]
pub struct Device {
    tier: Tier,
    spec: DeviceSpec,
    /// Time each server becomes idle.
    servers: BinaryHeap<Reverse<u64>>,
    pending: BinaryHeap<Reverse<Pending>>,
    next_seq: u64,
    now: SimTime,
    counters: DeviceCounters,
    last_sample: DeviceCounters,
    service_cache: [[f64; 2]; 2],
}

impl Device {
    pub fn new(tier: Tier, spec: DeviceSpec) -> Result<Self, DevError> {
        spec.validate()?;
        let servers = (0..spec.parallelism).map(|_| Reverse(0u64)).collect();
        let service_cache = [
            [spec.service_time_us(OpKind::Read, SMALL_IO), spec.service_time_us(OpKind::Read, LARGE_IO)],
            [spec.service_time_us(OpKind::Write, SMALL_IO), spec.service_time_us(OpKind::Write, LARGE_IO)],
        ];
        Ok(Device {
            tier,
            spec,
            servers,
            pending: BinaryHeap::new(),
            next_seq: 0,
            now: SimTime::ZERO,
            counters: DeviceCounters::default(),
            last_sample: DeviceCounters::default(),
            service_cache,
        })
    }

    pub fn tier(&self) -> Tier {
        self.tier
    }

    pub fn spec(&self) -> &DeviceSpec {
        &self.spec
    }

    pub fn counters(&self) -> &DeviceCounters {
        &self.counters
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn queue_depth(&self) -> usize {
        self.pending.len()
    }

    fn nominal_service_us(&self, op: OpKind, length: u64) -> f64 {
        let row = match op {
            OpKind::Read => 0,
            OpKind::Write => 1,
        };
        match length {
            SMALL_IO => self.service_cache[row][0],
            LARGE_IO => self.service_cache[row][1],
            _ => self.spec.service_time_us(op, length),
        }
    }

    /// Enqueues a request and returns its completion time. `tag` is handed
    /// back unchanged with the completion.
    pub fn submit(&mut self, req: IoRequest, now: SimTime, tag: u64) -> Result<SimTime, DevError> {
        if now < self.now {
            return Err(DevError::TimeRegression { now, last: self.now });
        }
        if req.length == 0 || req.length % SUBPAGE_SIZE != 0 || req.offset % SUBPAGE_SIZE != 0 {
            return Err(DevError::Alignment { offset: req.offset, length: req.length });
        }
        if req.offset.checked_add(req.length).map_or(true, |end| end > self.spec.capacity) {
            return Err(DevError::Address { offset: req.offset, length: req.length, capacity: self.spec.capacity });
        }
        let Reverse(free_at) = self.servers.pop().expect("at least one server");
        let start = free_at.max(now.as_nanos());
        let nominal_ns = self.nominal_service_us(req.op, req.length) * 1_000.0;
        let service_ns = (nominal_ns * self.spec.spike_multiplier(SimTime(start))).round().max(1.0) as u64;
        let done = start + service_ns;
        self.servers.push(Reverse(done));
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending.push(Reverse(Pending {
            done,
            seq,
            completion: Completion { tag, request: req, completed_at: SimTime(done), service_ns },
        }));
        Ok(SimTime(done))
    }

    pub fn next_completion_time(&self) -> Option<SimTime> {
        self.pending.peek().map(|Reverse(p)| SimTime(p.done))
    }

    /// Pops the earliest completion due at or before `now`, updating counters.
    pub fn pop_due(&mut self, now: SimTime) -> Result<Option<Completion>, DevError> {
        if now < self.now {
            return Err(DevError::TimeRegression { now, last: self.now });
        }
        self.now = now;
        match self.pending.peek() {
            Some(Reverse(p)) if p.done <= now.as_nanos() => {}
            _ => return Ok(None),
        }
        let Reverse(Pending { completion: c, .. }) = self.pending.pop().expect("peeked");
        let lat = c.latency().as_nanos();
        let ctr = &mut self.counters;
        ctr.ops_completed += 1;
        ctr.latency_sum_ns += lat;
        ctr.busy_ns += c.service_ns;
        match c.request.op {
            OpKind::Read => {
                ctr.read_ops += 1;
                ctr.bytes_read += c.request.length;
                ctr.read_latency_sum_ns += lat;
            }
            OpKind::Write => ctr.bytes_written += c.request.length,
        }
        Ok(Some(c))
    }

    /// Server time spent up to `now`: completed service plus the elapsed
    /// part of every request still in service.
    pub fn busy_ns_at(&self, now: SimTime) -> u64 {
        let now = now.as_nanos();
        let running: u64 = self
            .pending
            .iter()
            .map(|Reverse(p)| {
                let start = p.done - p.completion.service_ns;
                now.clamp(start, p.done) - start
            })
            .sum();
        self.counters.busy_ns + running
    }

    /// Fires every completion with time <= `now`, in timestamp order.
    pub fn advance(&mut self, now: SimTime) -> Result<Vec<Completion>, DevError> {
        let mut out = Vec::new();
        while let Some(c) = self.pop_due(now)? {
            out.push(c);
        }
        Ok(out)
    }

    /// Counter deltas since the previous sample.
    pub fn sample_counters(&mut self) -> CounterSample {
        let cur = self.counters;
        let prev = std::mem::replace(&mut self.last_sample, cur);
        let ops = cur.ops_completed - prev.ops_completed;
        let read_ops = cur.read_ops - prev.read_ops;
        let avg = |sum: u64, n: u64| (n > 0).then(|| sum as f64 / n as f64 / 1_000.0);
        CounterSample {
            avg_latency_us: avg(cur.latency_sum_ns - prev.latency_sum_ns, ops),
            avg_read_latency_us: avg(cur.read_latency_sum_ns - prev.read_latency_sum_ns, read_ops),
            bytes: (cur.bytes_read + cur.bytes_written) - (prev.bytes_read + prev.bytes_written),
            ops,
            busy_ns: cur.busy_ns - prev.busy_ns,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GB: u64 = 1 << 30;

    fn optane() -> Device {
        Device::new(Tier::Performance, DeviceSpec::preset("optane", 4 * GB).unwrap()).unwrap()
    }

    fn read(offset: u64, length: u64, at: SimTime) -> IoRequest {
        IoRequest { device: Tier::Performance, op: OpKind::Read, offset, length, issue_time: at }
    }

    #[test]
    fn idle_optane_4k_read_matches_table_latency() {
        let mut d = optane();
        let done = d.submit(read(0, 4096, SimTime::ZERO), SimTime::ZERO, 0).unwrap();
        let us = done.as_micros_f64();
        assert!((us - 11.0).abs() / 11.0 < 0.05, "idle 4K read took {us}us");
    }

    #[test]
    fn zero_length_and_unaligned_are_rejected() {
        let mut d = optane();
        assert!(matches!(d.submit(read(0, 0, SimTime::ZERO), SimTime::ZERO, 0), Err(DevError::Alignment { .. })));
        assert!(matches!(d.submit(read(512, 4096, SimTime::ZERO), SimTime::ZERO, 0), Err(DevError::Alignment { .. })));
        assert!(matches!(
            d.submit(read(4 * GB, 4096, SimTime::ZERO), SimTime::ZERO, 0),
            Err(DevError::Address { .. })
        ));
    }

    #[test]
    fn advance_fires_only_due_events_and_rejects_regression() {
        let mut d = optane();
        let t1 = d.submit(read(0, 4096, SimTime::ZERO), SimTime::ZERO, 1).unwrap();
        let _ = d.submit(read(0, 16384, SimTime::ZERO), SimTime::ZERO, 2).unwrap();
        let fired = d.advance(t1).unwrap();
        assert_eq!(fired.len(), 1);
        assert_eq!(fired[0].tag, 1);
        assert!(matches!(d.advance(SimTime::ZERO), Err(DevError::TimeRegression { .. })));
    }

    #[test]
    fn identical_completion_times_fire_in_submission_order() {
        let mut d = optane();
        for tag in 0..4 {
            d.submit(read(0, 4096, SimTime::ZERO), SimTime::ZERO, tag).unwrap();
        }
        let tags: Vec<u64> = d.advance(SimTime::from_secs_f64(1.0)).unwrap().iter().map(|c| c.tag).collect();
        assert_eq!(tags, vec![0, 1, 2, 3]);
    }

    #[test]
    fn sample_reports_no_sample_when_idle() {
        let mut d = optane();
        assert_eq!(d.sample_counters().avg_latency_us, None);
        d.submit(read(0, 4096, SimTime::ZERO), SimTime::ZERO, 0).unwrap();
        d.advance(SimTime::from_secs_f64(1.0)).unwrap();
        let s = d.sample_counters();
        assert_eq!(s.ops, 1);
        assert!(s.avg_latency_us.is_some());
        assert_eq!(d.sample_counters().avg_latency_us, None);
    }

    #[test]
    fn presets_cover_every_name() {
        for name in PRESET_NAMES {
            DeviceSpec::preset(name, 8 * GB).unwrap();
        }
        assert!(matches!(DeviceSpec::preset("floppy", GB), Err(DevError::UnknownPreset(_))));
    }

    #[test]
    fn intermediate_sizes_interpolate_monotonically() {
        let spec = DeviceSpec::preset("nvme-pcie3", 8 * GB).unwrap();
        let mut last = 0.0;
        for len in (4096..=65536).step_by(4096) {
            let t = spec.service_time_us(OpKind::Read, len);
            assert!(t > last, "{len}: {t} <= {last}");
            last = t;
        }
    }
}
