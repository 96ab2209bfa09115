//! The seam between the simulation engine and a placement policy.

use std::ops::Range;

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::addrspace::{AddrError, AddressSpace, PlacementClass, SegmentId, SegmentMeta};
use crate::devsim::{CounterSample, OpKind, Tier};
use crate::time::SimTime;

/// Why a background transfer happens; drives byte accounting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum BgClass {
    MigrateToPerf,
    MigrateToCap,
    Mirror,
    Clean,
}

impl BgClass {
    pub const ALL: [BgClass; 4] = [BgClass::MigrateToPerf, BgClass::MigrateToCap, BgClass::Mirror, BgClass::Clean];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A background transfer requested by a policy: `bytes` read from `from`
/// and written to the other device.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transfer {
    pub from: Tier,
    pub bytes: u64,
    pub class: BgClass,
}

/// Counters a policy maintains as it makes decisions.
#[derive(Clone, Debug, Default, Serialize)]
pub struct PolicyStats {
    /// Bytes written by background transfers, indexed by [`BgClass::index`].
    pub bg_bytes: [u64; 4],
    pub migrations: u64,
    pub swaps: u64,
    pub reclaims: u64,
    /// Reclamation requested with nothing mirrored.
    pub reclaim_noops: u64,
    pub deferred_enlarges: u64,
    pub cleaned_subpages: u64,
    /// Reads of mirrored data, split by the device they were sent to.
    pub mirrored_reads: [u64; 2],
    /// Reads of fully clean mirrored data, split by device.
    pub mirrored_clean_reads: [u64; 2],
    pub allocations: [u64; 2],
}

impl PolicyStats {
    pub fn bytes(&self, class: BgClass) -> u64 {
        self.bg_bytes[class.index()]
    }
}

/// Mutable world handed to a policy for one decision.
pub struct Ctx<'a> {
    pub space: &'a mut AddressSpace,
    pub rng: &'a mut ChaCha8Rng,
    pub transfers: &'a mut Vec<Transfer>,
    pub stats: &'a mut PolicyStats,
}

impl Ctx<'_> {
    pub fn transfer(&mut self, from: Tier, bytes: u64, class: BgClass) {
        if bytes == 0 {
            return;
        }
        self.stats.bg_bytes[class.index()] += bytes;
        self.transfers.push(Transfer { from, bytes, class });
    }

    pub fn segment_bytes(&self) -> u64 {
        self.space.geometry().segment_size
    }
}

/// Where an access goes. A split route covers subpage runs whose valid
/// copies live on different devices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Route {
    One(Tier),
    Split(Vec<(Tier, Range<u32>)>),
}

/// Inputs to a background tick.
#[derive(Clone, Copy, Debug)]
pub struct TickInput {
    pub now: SimTime,
    pub tick: u64,
    pub perf: CounterSample,
    pub cap: CounterSample,
    /// Unloaded service latency of each device for the workload's access
    /// mix, in microseconds.
    pub idle_latency_us: [f64; 2],
}

impl TickInput {
    pub fn sample(&self, tier: Tier) -> &CounterSample {
        match tier {
            Tier::Performance => &self.perf,
            Tier::Capacity => &self.cap,
        }
    }

    /// `sample`, or the idle latency when the device has neither a sample
    /// now nor any history (`prev`).
    pub fn seeded(&self, tier: Tier, prev: Option<f64>, sample: Option<f64>) -> Option<f64> {
        match (prev, sample) {
            (None, None) => Some(self.idle_latency_us[tier.index()]),
            (_, s) => s,
        }
    }
}

/// A placement/routing policy.
pub trait Policy: Send {
    fn name(&self) -> &'static str;

    /// Device for a segment when the working set is first laid out.
    fn initial_tier(&self, seg: SegmentId, space: &AddressSpace) -> Tier {
        let _ = seg;
        if space.free_segments(Tier::Performance) > 0 {
            Tier::Performance
        } else {
            Tier::Capacity
        }
    }

    /// Device for a segment written for the first time.
    fn allocate(&mut self, ctx: &mut Ctx<'_>, seg: SegmentId) -> Result<Tier, AddrError> {
        let t = self.initial_tier(seg, ctx.space);
        if ctx.space.free_segments(t) > 0 {
            Ok(t)
        } else if ctx.space.free_segments(t.other()) > 0 {
            Ok(t.other())
        } else {
            Err(AddrError::OutOfSpace(t))
        }
    }

    /// Routes a read of `range` (subpages) within an allocated segment.
    fn route_read(&mut self, ctx: &mut Ctx<'_>, seg: SegmentId, range: Range<u32>) -> Route;

    /// Routes a write, updating any validity state.
    fn route_write(&mut self, ctx: &mut Ctx<'_>, seg: SegmentId, range: Range<u32>) -> Route;

    /// Periodic control step.
    fn tick(&mut self, ctx: &mut Ctx<'_>, input: &TickInput);

    fn offload_ratio(&self) -> f64 {
        0.0
    }

    /// Tuning interval in seconds.
    fn tick_interval_s(&self) -> f64 {
        0.2
    }

    /// Whether this policy ever keeps two copies.
    fn single_copy(&self) -> bool {
        true
    }
}

/// Routes an access to a tiered segment's only copy.
pub fn tiered_route(seg: &SegmentMeta) -> Option<Route> {
    seg.class.tier().map(Route::One)
}

/// Bookkeeping common to every policy for a foreground access.
pub fn record_access(space: &mut AddressSpace, seg: SegmentId, op: OpKind) {
    if let Some(s) = space.segment_mut(seg) {
        match op {
            OpKind::Read => s.record_read(),
            OpKind::Write => s.record_write(),
        }
    }
}

/// Segments of each class ordered hottest first (ties by id).
#[derive(Clone, Debug, Default)]
pub struct HotnessView {
    pub tiered_perf: Vec<(u32, SegmentId)>,
    pub tiered_cap: Vec<(u32, SegmentId)>,
    pub mirrored: Vec<(u32, SegmentId)>,
    pub total_hotness: u64,
}

impl HotnessView {
    pub fn build(space: &AddressSpace) -> Self {
        let mut v = HotnessView::default();
        for s in space.segments() {
            let entry = (s.hotness(), s.id);
            v.total_hotness += s.hotness() as u64;
            match s.class {
                PlacementClass::TieredPerf => v.tiered_perf.push(entry),
                PlacementClass::TieredCap => v.tiered_cap.push(entry),
                PlacementClass::Mirrored => v.mirrored.push(entry),
            }
        }
        let order = |a: &(u32, SegmentId), b: &(u32, SegmentId)| b.0.cmp(&a.0).then(a.1.cmp(&b.1));
        v.tiered_perf.sort_by(order);
        v.tiered_cap.sort_by(order);
        v.mirrored.sort_by(order);
        v
    }

    pub fn tiered(&self, tier: Tier) -> &[(u32, SegmentId)] {
        match tier {
            Tier::Performance => &self.tiered_perf,
            Tier::Capacity => &self.tiered_cap,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addrspace::Geometry;

    #[test]
    fn hotness_view_orders_hottest_first_with_id_ties() {
        let mb2 = 2 << 20;
        let mut space = AddressSpace::new(Geometry::default(), [4 * mb2, 4 * mb2], 8 * mb2, 0.025).unwrap();
        for (i, hits) in [(0u32, 3), (1, 9), (2, 3)] {
            let s = space.place_new(SegmentId(i), Tier::Performance).unwrap();
            for _ in 0..hits {
                s.record_read();
            }
        }
        let v = HotnessView::build(&space);
        let ids: Vec<u32> = v.tiered_perf.iter().map(|e| e.1 .0).collect();
        assert_eq!(ids, vec![1, 0, 2]);
        assert_eq!(v.total_hotness, 15);
    }
}
