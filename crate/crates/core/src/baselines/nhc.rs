//! Non-hierarchical caching. The capacity device holds every segment and the
//! performance device caches hot ones inclusively. Clean cached reads are
//! offloaded to the capacity copy by a latency-driven ratio; writes to cached
//! data are absorbed by the cache and never balanced.

use std::collections::BTreeSet;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::addrspace::{AddressSpace, PlacementClass, SegmentId};
use crate::devsim::Tier;
use crate::most::{MirrorStats, OptimizerConfig, OptimizerState};
use crate::policy::{tiered_route, BgClass, Ctx, HotnessView, Policy, Route, TickInput};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NhcConfig {
    /// Bytes of admission and write-back traffic per interval.
    pub admission_budget_bytes: u64,
    pub theta: f64,
    pub ratio_step: f64,
    pub ewma_alpha: f64,
    pub tuning_interval_s: f64,
}

impl Default for NhcConfig {
    fn default() -> Self {
        NhcConfig {
            admission_budget_bytes: 64 << 20,
            theta: 0.05,
            ratio_step: 0.02,
            ewma_alpha: 0.3,
            tuning_interval_s: 0.2,
        }
    }
}

pub struct Nhc {
    config: NhcConfig,
    controller: OptimizerState,
    missed: BTreeSet<SegmentId>,
}

impl Nhc {
    pub fn new(config: NhcConfig) -> Result<Self, String> {
        let oc = OptimizerConfig {
            theta: config.theta,
            ratio_step: config.ratio_step,
            tuning_interval_s: config.tuning_interval_s,
            ewma_alpha: config.ewma_alpha,
            offload_ratio_max: 1.0,
            mirrored_max_fraction: 1.0,
        };
        oc.validate().map_err(|e| format!("nhc: {e}"))?;
        Ok(Nhc { config, controller: OptimizerState::new(oc), missed: BTreeSet::new() })
    }

    pub fn set_ratio(&mut self, ratio: f64) {
        self.controller.offload_ratio = ratio;
    }

    /// Writes back dirty subpages and drops the cached copy.
    pub fn evict(ctx: &mut Ctx<'_>, seg: SegmentId) -> bool {
        let Some(meta) = ctx.space.segment(seg) else { return false };
        if meta.class != PlacementClass::Mirrored {
            return false;
        }
        let dirty = meta.only_valid_on(Tier::Performance) as u64;
        let sub = ctx.space.geometry().subpage_size;
        ctx.transfer(Tier::Performance, dirty * sub, BgClass::Clean);
        ctx.space.clean_segment(seg).expect("cached");
        ctx.space.unmirror(seg, Tier::Performance).expect("cached");
        true
    }

    /// Admits missed segments hottest first, evicting colder cached segments
    /// when the cache is full. Returns the number admitted.
    pub fn admit(&mut self, ctx: &mut Ctx<'_>, view: &HotnessView) -> usize {
        let seg_bytes = ctx.segment_bytes();
        let mut left = self.config.admission_budget_bytes;
        let mut candidates: Vec<(u32, SegmentId)> = std::mem::take(&mut self.missed)
            .into_iter()
            .filter_map(|id| ctx.space.segment(id).filter(|s| s.class == PlacementClass::TieredCap).map(|s| (s.hotness(), id)))
            .collect();
        candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut victims = view.mirrored.iter().rev();
        let mut admitted = 0;
        for (hot, seg) in candidates {
            if left < seg_bytes {
                break;
            }
            if ctx.space.free_segments(Tier::Performance) == 0 {
                let Some(&(cold, victim)) = victims.next() else { break };
                if cold >= hot {
                    break;
                }
                Self::evict(ctx, victim);
            }
            if ctx.space.mirror(seg).is_ok() {
                ctx.transfer(Tier::Capacity, seg_bytes, BgClass::Mirror);
                left -= seg_bytes;
                admitted += 1;
            }
        }
        admitted
    }
}

impl Policy for Nhc {
    fn name(&self) -> &'static str {
        "nhc"
    }

    fn initial_tier(&self, _seg: SegmentId, space: &AddressSpace) -> Tier {
        if space.free_segments(Tier::Capacity) > 0 {
            Tier::Capacity
        } else {
            Tier::Performance
        }
    }

    fn route_read(&mut self, ctx: &mut Ctx<'_>, seg: SegmentId, range: Range<u32>) -> Route {
        let meta = ctx.space.segment(seg).expect("allocated");
        if let Some(r) = tiered_route(meta) {
            if meta.class == PlacementClass::TieredCap {
                self.missed.insert(seg);
            }
            return r;
        }
        let valid = meta.valid_for_range(range);
        if valid.cap && ctx.rng.gen::<f64>() < self.controller.offload_ratio {
            ctx.stats.mirrored_reads[Tier::Capacity.index()] += 1;
            Route::One(Tier::Capacity)
        } else {
            ctx.stats.mirrored_reads[Tier::Performance.index()] += 1;
            Route::One(Tier::Performance)
        }
    }

    fn route_write(&mut self, ctx: &mut Ctx<'_>, seg: SegmentId, range: Range<u32>) -> Route {
        let meta = ctx.space.segment(seg).expect("allocated");
        if let Some(r) = tiered_route(meta) {
            return r;
        }
        ctx.space.apply_write(seg, range, Tier::Performance).expect("cached segment");
        Route::One(Tier::Performance)
    }

    fn tick(&mut self, ctx: &mut Ctx<'_>, input: &TickInput) {
        let never_full = MirrorStats { mirrored_bytes: 0, limit_bytes: 1 };
        let perf = input.seeded(Tier::Performance, self.controller.latency_perf, input.perf.avg_latency_us);
        let cap = input.seeded(Tier::Capacity, self.controller.latency_cap, input.cap.avg_latency_us);
        self.controller = self.controller.step(perf, cap, never_full).0;
        let view = HotnessView::build(ctx.space);
        self.admit(ctx, &view);
        ctx.space.decay(input.tick + 1);
    }

    fn offload_ratio(&self) -> f64 {
        self.controller.offload_ratio
    }

    fn tick_interval_s(&self) -> f64 {
        self.config.tuning_interval_s
    }

    fn single_copy(&self) -> bool {
        false
    }
}
