//! Hotness tiering: the hottest data lives on the performance device, and
//! accesses always go to the single copy.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::migrate;
use crate::addrspace::SegmentId;
use crate::devsim::Tier;
use crate::policy::{tiered_route, Ctx, HotnessView, Policy, Route, TickInput};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeMemConfig {
    pub migration_budget_bytes: u64,
    /// Hotness at or above which a segment counts as hot. Only hot segments
    /// are promoted and only cold ones are demoted.
    pub hot_threshold: u32,
    /// A capacity segment must beat the coldest performance segment by more
    /// than this many accesses before they swap.
    pub swap_margin: u32,
    pub tuning_interval_s: f64,
}

impl Default for HeMemConfig {
    fn default() -> Self {
        HeMemConfig { migration_budget_bytes: 64 << 20, hot_threshold: 16, swap_margin: 2, tuning_interval_s: 0.2 }
    }
}

pub struct HeMem {
    config: HeMemConfig,
}

impl HeMem {
    pub fn new(config: HeMemConfig) -> Self {
        HeMem { config }
    }

    /// Promotion and demotion for one quantum. Returns the number of
    /// segments moved.
    pub fn rebalance(&self, ctx: &mut Ctx<'_>, view: &HotnessView) -> usize {
        let seg_bytes = ctx.segment_bytes();
        let mut left = self.config.migration_budget_bytes;
        let mut moved = 0;
        let mut coldest = view.tiered_perf.iter().rev().peekable();
        for &(hot, seg) in &view.tiered_cap {
            if hot < self.config.hot_threshold.max(1) || left < seg_bytes {
                break;
            }
            if ctx.space.free_segments(Tier::Performance) == 0 {
                let Some(&&(cold, victim)) = coldest.peek() else { break };
                if cold >= self.config.hot_threshold
                    || hot <= cold.saturating_add(self.config.swap_margin)
                    || left < 2 * seg_bytes
                {
                    break;
                }
                coldest.next();
                if !migrate(ctx, victim, Tier::Capacity) {
                    break;
                }
                left -= seg_bytes;
                moved += 1;
                ctx.stats.swaps += 1;
            }
            if migrate(ctx, seg, Tier::Performance) {
                left -= seg_bytes;
                moved += 1;
            }
        }
        moved
    }
}

impl Policy for HeMem {
    fn name(&self) -> &'static str {
        "hemem"
    }

    fn route_read(&mut self, ctx: &mut Ctx<'_>, seg: SegmentId, _range: Range<u32>) -> Route {
        tiered_route(ctx.space.segment(seg).expect("allocated")).expect("single copy")
    }

    fn route_write(&mut self, ctx: &mut Ctx<'_>, seg: SegmentId, range: Range<u32>) -> Route {
        self.route_read(ctx, seg, range)
    }

    fn tick(&mut self, ctx: &mut Ctx<'_>, input: &TickInput) {
        let view = HotnessView::build(ctx.space);
        self.rebalance(ctx, &view);
        ctx.space.decay(input.tick + 1);
    }

    fn tick_interval_s(&self) -> f64 {
        self.config.tuning_interval_s
    }
}
