//! Discrete-event run loop tying devices, address space, policy and
//! workload together on one simulated timeline.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ConfigError, ExperimentConfig, ReplayMode};
use super::histogram::LatencyHistogram;
use super::metrics::{MetricsSnapshot, RunSummary};
use crate::addrspace::{AddrError, AddressSpace, Geometry, SegmentId};
use crate::devsim::{DevError, Device, DeviceCounters, IoRequest, OpKind, Tier};
use crate::policy::{record_access, BgClass, Ctx, Policy, PolicyStats, Route, TickInput, Transfer};
use crate::time::SimTime;
use crate::workloads::{Op, ResolvedPhases, Sampler, TraceOp, WorkerStream};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("address space: {0}")]
    Addr(#[from] AddrError),
    #[error("device: {0}")]
    Device(#[from] DevError),
    #[error("{0}")]
    Setup(String),
}

const BACKGROUND: u64 = 1 << 63;
const BG_WRITE: u64 = 1 << 62;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Issue(u32),
    Tick,
    Metrics,
    Phase,
    Spike(u32),
    Replay(u32),
}

#[derive(Clone, Copy, Debug)]
struct FgRequest {
    worker: Option<u32>,
    issued: SimTime,
    parts_left: u32,
    len: u64,
}

#[derive(Clone, Debug)]
struct Worker {
    stream: Option<WorkerStream>,
    busy: bool,
}

enum Source {
    Synthetic { sampler: Sampler },
    Trace { ops: Vec<TraceOp>, cursor: usize, mode: ReplayMode },
}

/// One experiment in progress.
pub struct Simulation {
    config: ExperimentConfig,
    devices: [Device; 2],
    space: AddressSpace,
    policy: Box<dyn Policy>,
    rng: ChaCha8Rng,
    stats: PolicyStats,
    transfers: Vec<Transfer>,
    source: Source,
    phases: ResolvedPhases,
    workers: Vec<Worker>,
    active: u32,
    think: SimTime,
    idle_latency_us: [f64; 2],
    now: SimTime,
    end: SimTime,
    events: BinaryHeap<Reverse<(SimTime, u64, Event)>>,
    event_seq: u64,
    slab: Vec<Option<FgRequest>>,
    free_slots: Vec<u32>,
    bg_queue: [VecDeque<(u64, BgClass)>; 2],
    bg_outstanding: [u32; 2],
    tick: u64,
    // Accounting.
    interval_hist: LatencyHistogram,
    total_hist: LatencyHistogram,
    interval_bytes: u64,
    fg_bytes: u64,
    fg_ops: u64,
    fg_write_device_bytes: [u64; 2],
    fg_write_completed: u64,
    bg_written: [u64; 4],
    violations: u64,
    single_copy_violations: u64,
    request_hash: u64,
    last_counters: [DeviceCounters; 2],
    last_busy_ns: [u64; 2],
    rows: Vec<MetricsSnapshot>,
}

macro_rules! ctx {
    ($s:ident) => {
        Ctx { space: &mut $s.space, rng: &mut $s.rng, transfers: &mut $s.transfers, stats: &mut $s.stats }
    };
}

fn fnv(hash: u64, v: u64) -> u64 {
    v.to_le_bytes().iter().fold(hash, |h, &b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

impl Simulation {
    /// Builds a simulation for a synthetic workload; intensity phases need
    /// `engine.calibrated_workers`.
    pub fn new(config: &ExperimentConfig, policy: Box<dyn Policy>) -> Result<Self, RunError> {
        let sampler = Sampler::new(&config.workload);
        Self::build(config, policy, Source::Synthetic { sampler })
    }

    /// Builds a simulation that replays `trace` instead of generating load.
    pub fn with_trace(config: &ExperimentConfig, policy: Box<dyn Policy>, trace: Vec<TraceOp>) -> Result<Self, RunError> {
        let mode = config.engine.replay_mode;
        Self::build(config, policy, Source::Trace { ops: trace, cursor: 0, mode })
    }

    fn build(config: &ExperimentConfig, policy: Box<dyn Policy>, source: Source) -> Result<Self, RunError> {
        config.validate()?;
        let [perf, cap] = config.device_specs()?;
        let caps = [perf.capacity, cap.capacity];
        let devices = [Device::new(Tier::Performance, perf)?, Device::new(Tier::Capacity, cap)?];
        let space =
            AddressSpace::new(Geometry::default(), caps, config.logical_bytes(), config.policy.watermark_fraction)?;
        let phases = match &source {
            Source::Synthetic { .. } => ResolvedPhases::resolve(
                &config.workload.phases,
                config.workload.intensity,
                config.engine.calibrated_workers,
            )
            .map_err(RunError::Setup)?,
            Source::Trace { mode: ReplayMode::Closed, .. } => {
                ResolvedPhases::resolve(&[crate::workloads::Phase::workers(0.0, config.engine.replay_workers)], 0.0, None)
                    .map_err(RunError::Setup)?
            }
            Source::Trace { mode: ReplayMode::Open, .. } => {
                ResolvedPhases::resolve(&[crate::workloads::Phase::workers(0.0, 0)], 0.0, None).map_err(RunError::Setup)?
            }
        };
        let workers = (0..phases.max_workers())
            .map(|w| Worker {
                stream: match &source {
                    Source::Synthetic { sampler } => Some(sampler.stream(w as u64, phases.max_workers() as u64)),
                    Source::Trace { .. } => None,
                },
                busy: false,
            })
            .collect();
        let idle_latency_us = devices.each_ref().map(|d| {
            let (len, r) = (config.workload.access_size, config.workload.read_ratio);
            r * d.spec().service_time_us(OpKind::Read, len) + (1.0 - r) * d.spec().service_time_us(OpKind::Write, len)
        });
        let mut sim = Simulation {
            config: config.clone(),
            devices,
            space,
            policy,
            rng: ChaCha8Rng::seed_from_u64(config.engine.seed),
            stats: PolicyStats::default(),
            transfers: Vec::new(),
            source,
            phases,
            workers,
            active: 0,
            think: SimTime::from_micros_f64(config.workload.think_time_us),
            idle_latency_us,
            now: SimTime::ZERO,
            end: SimTime::from_secs_f64(config.engine.duration_s),
            events: BinaryHeap::new(),
            event_seq: 0,
            slab: Vec::new(),
            free_slots: Vec::new(),
            bg_queue: [VecDeque::new(), VecDeque::new()],
            bg_outstanding: [0; 2],
            tick: 0,
            interval_hist: LatencyHistogram::new(),
            total_hist: LatencyHistogram::new(),
            interval_bytes: 0,
            fg_bytes: 0,
            fg_ops: 0,
            fg_write_device_bytes: [0; 2],
            fg_write_completed: 0,
            bg_written: [0; 4],
            violations: 0,
            single_copy_violations: 0,
            request_hash: 0xcbf2_9ce4_8422_2325,
            last_counters: [DeviceCounters::default(); 2],
            last_busy_ns: [0; 2],
            rows: Vec::new(),
        };
        if config.engine.prefill {
            sim.prefill()?;
        }
        sim.schedule(SimTime::ZERO, Event::Phase);
        for b in sim.phases.boundaries().collect::<Vec<_>>() {
            sim.schedule(SimTime::from_secs_f64(b), Event::Phase);
        }
        let tick = SimTime::from_secs_f64(sim.policy.tick_interval_s());
        sim.schedule(tick, Event::Tick);
        sim.schedule(SimTime::from_secs_f64(config.engine.metrics_interval_s), Event::Metrics);
        for (g, s) in config.workload.write_spikes.iter().enumerate() {
            sim.schedule(SimTime::from_secs_f64(s.period_s), Event::Spike(g as u32));
        }
        if let Source::Trace { ops, mode: ReplayMode::Open, .. } = &sim.source {
            if let Some(first) = ops.first() {
                let t = SimTime::from_micros_f64(first.timestamp_us as f64);
                sim.schedule(t, Event::Replay(0));
            }
        }
        Ok(sim)
    }

    fn prefill(&mut self) -> Result<(), RunError> {
        let seg = self.space.geometry().segment_size;
        let n = self.config.workload.working_set.div_ceil(seg) as u32;
        for id in (0..n).map(SegmentId) {
            let t = self.policy.initial_tier(id, &self.space);
            let t = if self.space.free_segments(t) > 0 { t } else { t.other() };
            self.space.place_new(id, t)?;
        }
        Ok(())
    }

    pub fn space(&self) -> &AddressSpace {
        &self.space
    }

    pub fn policy(&self) -> &dyn Policy {
        &*self.policy
    }

    pub fn stats(&self) -> &PolicyStats {
        &self.stats
    }

    pub fn device(&self, tier: Tier) -> &Device {
        &self.devices[tier.index()]
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn rows(&self) -> &[MetricsSnapshot] {
        &self.rows
    }

    fn schedule(&mut self, at: SimTime, ev: Event) {
        self.event_seq += 1;
        self.events.push(Reverse((at, self.event_seq, ev)));
    }

    /// Runs to the configured duration and summarizes.
    pub fn run(mut self) -> Result<(Vec<MetricsSnapshot>, RunSummary), RunError> {
        self.run_until(self.end)?;
        Ok(self.finish())
    }

    /// Processes every event at or before `until`.
    pub fn run_until(&mut self, until: SimTime) -> Result<(), RunError> {
        let until = until.min(self.end);
        loop {
            let dev_next = Tier::BOTH
                .iter()
                .filter_map(|&t| self.devices[t.index()].next_completion_time().map(|at| (at, t)))
                .min();
            let ev_next = self.events.peek().map(|Reverse((at, _, _))| *at);
            match (dev_next, ev_next) {
                (Some((at, tier)), e) if at <= until && e.map_or(true, |e| at <= e) => {
                    self.now = at;
                    let c = self.devices[tier.index()].pop_due(at)?.expect("due completion");
                    self.on_completion(c)?;
                }
                (_, Some(at)) if at <= until => {
                    let Reverse((at, _, ev)) = self.events.pop().expect("peeked");
                    self.now = at;
                    self.on_event(ev)?;
                }
                _ => break,
            }
        }
        self.now = until;
        Ok(())
    }

    fn on_event(&mut self, ev: Event) -> Result<(), RunError> {
        match ev {
            Event::Phase => {
                self.active = self.phases.workers_at(self.now.as_secs_f64());
                for w in 0..self.active {
                    if !self.workers[w as usize].busy {
                        self.workers[w as usize].busy = true;
                        self.schedule(self.now, Event::Issue(w));
                    }
                }
            }
            Event::Issue(w) => {
                if w >= self.active {
                    self.workers[w as usize].busy = false;
                    return Ok(());
                }
                match self.next_op(w) {
                    Some(op) => self.issue(op, Some(w))?,
                    None => self.workers[w as usize].busy = false,
                }
            }
            Event::Tick => self.on_tick()?,
            Event::Metrics => {
                self.snapshot();
                let next = self.now + SimTime::from_secs_f64(self.config.engine.metrics_interval_s);
                self.schedule(next, Event::Metrics);
            }
            Event::Spike(g) => {
                let s = self.config.workload.write_spikes[g as usize];
                let seg = self.space.geometry().segment_size;
                let sub = self.space.geometry().subpage_size;
                for i in 0..s.segments {
                    let base = (s.first_segment + i) as u64 * seg;
                    for j in 0..s.subpages as u64 {
                        self.issue(Op { kind: OpKind::Write, lba: base + j * sub, len: sub }, None)?;
                    }
                }
                self.schedule(self.now + SimTime::from_secs_f64(s.period_s), Event::Spike(g));
            }
            Event::Replay(i) => {
                let (op, next) = match &self.source {
                    Source::Trace { ops, .. } => (ops[i as usize].op, ops.get(i as usize + 1).map(|t| t.timestamp_us)),
                    Source::Synthetic { .. } => unreachable!("replay event without a trace"),
                };
                self.issue(op, None)?;
                if let Some(ts) = next {
                    self.schedule(SimTime::from_micros_f64(ts as f64), Event::Replay(i + 1));
                }
            }
        }
        Ok(())
    }

    fn next_op(&mut self, w: u32) -> Option<Op> {
        match &mut self.source {
            Source::Synthetic { sampler } => {
                Some(self.workers[w as usize].stream.as_mut().expect("synthetic worker").next_op(sampler))
            }
            Source::Trace { ops, cursor, .. } => {
                let op = ops.get(*cursor)?.op;
                *cursor += 1;
                Some(op)
            }
        }
    }

    fn issue(&mut self, op: Op, worker: Option<u32>) -> Result<(), RunError> {
        self.request_hash = fnv(fnv(fnv(self.request_hash, op.kind as u64), op.lba), op.len);
        let g = self.space.geometry();
        if op.len == 0 || op.len % g.subpage_size != 0 {
            return Err(RunError::Addr(AddrError::Unaligned { lba: op.len, align: g.subpage_size }));
        }
        let mut parts: Vec<(Tier, SegmentId, std::ops::Range<u32>)> = Vec::new();
        let mut lba = op.lba;
        let end = op.lba + op.len;
        while lba < end {
            let (seg, sp) = self.space.resolve(lba)?;
            let seg_end = ((lba / g.segment_size) + 1) * g.segment_size;
            let piece_end = end.min(seg_end);
            let range = sp..sp + ((piece_end - lba) / g.subpage_size) as u32;
            if self.space.segment(seg).is_none() {
                let tier = self.policy.allocate(&mut ctx!(self), seg)?;
                self.space.place_new(seg, tier)?;
            }
            record_access(&mut self.space, seg, op.kind);
            let route = match op.kind {
                OpKind::Read => self.policy.route_read(&mut ctx!(self), seg, range.clone()),
                OpKind::Write => self.policy.route_write(&mut ctx!(self), seg, range.clone()),
            };
            match route {
                Route::One(t) => parts.push((t, seg, range)),
                Route::Split(v) => {
                    let covered: u32 = v.iter().map(|(_, r)| r.len() as u32).sum();
                    if covered != range.len() as u32 || v.iter().any(|(_, r)| r.start < range.start || r.end > range.end) {
                        self.violations += 1;
                    }
                    parts.extend(v.into_iter().map(|(t, r)| (t, seg, r)));
                }
            }
            lba = piece_end;
        }
        let slot = match self.free_slots.pop() {
            Some(s) => s,
            None => {
                self.slab.push(None);
                (self.slab.len() - 1) as u32
            }
        };
        self.slab[slot as usize] =
            Some(FgRequest { worker, issued: self.now, parts_left: parts.len() as u32, len: op.len });
        for (tier, seg, range) in parts {
            let meta = self.space.segment(seg).expect("placed");
            let Some(phys) = meta.addr[tier.index()] else {
                self.violations += 1;
                return Err(RunError::Setup(format!("{tier} holds no copy of segment {seg}")));
            };
            if op.kind == OpKind::Read && !range.clone().all(|sp| meta.valid_devices(sp).contains(tier)) {
                self.violations += 1;
            }
            let req = IoRequest {
                device: tier,
                op: op.kind,
                offset: phys.0 as u64 * g.segment_size + range.start as u64 * g.subpage_size,
                length: range.len() as u64 * g.subpage_size,
                issue_time: self.now,
            };
            if op.kind == OpKind::Write {
                self.fg_write_device_bytes[tier.index()] += req.length;
            }
            self.devices[tier.index()].submit(req, self.now, slot as u64)?;
        }
        self.flush_transfers()?;
        Ok(())
    }

    fn on_completion(&mut self, c: crate::devsim::Completion) -> Result<(), RunError> {
        if c.tag & BACKGROUND != 0 {
            let class = BgClass::ALL[(c.tag & 3) as usize];
            if c.tag & BG_WRITE == 0 {
                let dst = c.request.device.other();
                let req = IoRequest { device: dst, op: OpKind::Write, offset: 0, length: c.request.length, issue_time: self.now };
                self.devices[dst.index()].submit(req, self.now, c.tag | BG_WRITE)?;
            } else {
                self.bg_written[class.index()] += c.request.length;
                let src = c.request.device.other();
                self.bg_outstanding[src.index()] -= 1;
                self.dispatch_background(src)?;
            }
            return Ok(());
        }
        if c.request.op == OpKind::Write {
            self.fg_write_completed += c.request.length;
        }
        let slot = c.tag as usize;
        let req = self.slab[slot].as_mut().expect("live request");
        req.parts_left -= 1;
        if req.parts_left > 0 {
            return Ok(());
        }
        let req = self.slab[slot].take().expect("live request");
        self.free_slots.push(slot as u32);
        let lat = (self.now - req.issued).as_micros_f64();
        self.interval_hist.record(lat);
        self.total_hist.record(lat);
        self.interval_bytes += req.len;
        self.fg_bytes += req.len;
        self.fg_ops += 1;
        if let Some(w) = req.worker {
            if w < self.active {
                let at = self.now + self.think;
                self.schedule(at, Event::Issue(w));
            } else {
                self.workers[w as usize].busy = false;
            }
        }
        Ok(())
    }

    fn on_tick(&mut self) -> Result<(), RunError> {
        let perf = self.devices[0].sample_counters();
        let cap = self.devices[1].sample_counters();
        let input = TickInput { now: self.now, tick: self.tick, perf, cap, idle_latency_us: self.idle_latency_us };
        self.policy.tick(&mut ctx!(self), &input);
        self.tick += 1;
        if self.policy.single_copy() && self.space.mirrored_count() > 0 {
            self.single_copy_violations += 1;
        }
        self.flush_transfers()?;
        let next = self.now + SimTime::from_secs_f64(self.policy.tick_interval_s());
        self.schedule(next, Event::Tick);
        Ok(())
    }

    fn flush_transfers(&mut self) -> Result<(), RunError> {
        if self.transfers.is_empty() {
            return Ok(());
        }
        for t in std::mem::take(&mut self.transfers) {
            self.bg_queue[t.from.index()].push_back((t.bytes, t.class));
        }
        for t in Tier::BOTH {
            self.dispatch_background(t)?;
        }
        Ok(())
    }

    fn dispatch_background(&mut self, src: Tier) -> Result<(), RunError> {
        let chunk = self.config.engine.transfer_chunk_bytes;
        let limit = self.config.engine.max_background_outstanding;
        while self.bg_outstanding[src.index()] < limit {
            let Some((bytes, class)) = self.bg_queue[src.index()].pop_front() else { break };
            let len = bytes.min(chunk);
            if bytes > len {
                self.bg_queue[src.index()].push_front((bytes - len, class));
            }
            let req = IoRequest { device: src, op: OpKind::Read, offset: 0, length: len, issue_time: self.now };
            self.devices[src.index()].submit(req, self.now, BACKGROUND | class.index() as u64)?;
            self.bg_outstanding[src.index()] += 1;
        }
        Ok(())
    }

    fn snapshot(&mut self) {
        let dt = self.config.engine.metrics_interval_s;
        let mut util = [0.0; 2];
        let mut lat = [None; 2];
        let mut read_lat = [None; 2];
        let mut dev_mbps = [0.0; 2];
        for t in Tier::BOTH {
            let d = &self.devices[t.index()];
            let cur = *d.counters();
            let prev = std::mem::replace(&mut self.last_counters[t.index()], cur);
            let ops = cur.ops_completed - prev.ops_completed;
            let reads = cur.read_ops - prev.read_ops;
            let busy = d.busy_ns_at(self.now);
            let prev_busy = std::mem::replace(&mut self.last_busy_ns[t.index()], busy);
            util[t.index()] = (busy - prev_busy) as f64 / (dt * 1e9 * d.spec().parallelism as f64);
            lat[t.index()] = (ops > 0).then(|| (cur.latency_sum_ns - prev.latency_sum_ns) as f64 / ops as f64 / 1e3);
            read_lat[t.index()] =
                (reads > 0).then(|| (cur.read_latency_sum_ns - prev.read_latency_sum_ns) as f64 / reads as f64 / 1e3);
            let bytes = (cur.bytes_read + cur.bytes_written) - (prev.bytes_read + prev.bytes_written);
            dev_mbps[t.index()] = bytes as f64 / dt / 1e6;
        }
        let time_s = self.now.as_secs_f64();
        let (intensity, workers) = match self.source {
            Source::Synthetic { .. } => {
                (self.phases.intensity_at(time_s - 1e-9), self.phases.workers_at(time_s - 1e-9))
            }
            Source::Trace { .. } => (None, self.active),
        };
        let h = std::mem::take(&mut self.interval_hist);
        self.rows.push(MetricsSnapshot {
            time_s,
            policy: self.policy.name().to_string(),
            intensity,
            workers,
            throughput_mbps: self.interval_bytes as f64 / dt / 1e6,
            p50_us: h.percentile(0.5),
            p99_us: h.percentile(0.99),
            p999_us: h.percentile(0.999),
            offload_ratio: self.policy.offload_ratio(),
            mig_to_perf_bytes: self.bg_written[BgClass::MigrateToPerf.index()],
            mig_to_cap_bytes: self.bg_written[BgClass::MigrateToCap.index()],
            mirror_bytes: self.bg_written[BgClass::Mirror.index()],
            clean_bytes: self.bg_written[BgClass::Clean.index()],
            dev_util: util,
            dev_queue_depth: [self.devices[0].queue_depth(), self.devices[1].queue_depth()],
            dev_latency_us: lat,
            dev_read_latency_us: read_lat,
            dev_throughput_mbps: dev_mbps,
            mirrored_reads: self.stats.mirrored_reads,
            mirrored_clean_reads: self.stats.mirrored_clean_reads,
            mirrored_segments: self.space.mirrored_count(),
        });
        self.interval_bytes = 0;
    }

    /// Summarizes the run so far.
    pub fn finish(self) -> (Vec<MetricsSnapshot>, RunSummary) {
        let device_bytes_written = [self.devices[0].counters().bytes_written, self.devices[1].counters().bytes_written];
        let bg_total: u64 = self.bg_written.iter().sum();
        let closure_lhs: u64 = device_bytes_written.iter().sum();
        let closure_rhs = self.fg_write_completed + bg_total;
        let submitted: u64 = self.fg_write_device_bytes.iter().sum();
        let summary = RunSummary::from_rows(
            &self.rows,
            self.policy.name(),
            super::metrics::RunTotals {
                bg_written: self.bg_written,
                bg_requested: self.stats.bg_bytes,
                device_bytes_written,
                device_bytes_read: [self.devices[0].counters().bytes_read, self.devices[1].counters().bytes_read],
                fg_write_bytes_submitted: self.fg_write_device_bytes,
                fg_write_bytes_completed: self.fg_write_completed,
                fg_write_bytes_inflight: submitted - self.fg_write_completed,
                accounting_closed: closure_lhs == closure_rhs,
                routing_violations: self.violations,
                single_copy_violations: self.single_copy_violations,
                invariants: self.space.check_invariants().err(),
                fg_bytes: self.fg_bytes,
                fg_ops: self.fg_ops,
                total_p50_us: self.total_hist.percentile(0.5),
                total_p99_us: self.total_hist.percentile(0.99),
                offload_ratio: self.policy.offload_ratio(),
                calibrated_workers: self.config.engine.calibrated_workers,
                request_hash: self.request_hash,
                stats: self.stats.clone(),
                duration_s: self.now.as_secs_f64(),
            },
        );
        (self.rows, summary)
    }
}
