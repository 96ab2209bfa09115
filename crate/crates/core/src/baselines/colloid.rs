//! Access-share balancing by migration: the policy keeps a target share of
//! accesses on the performance device and moves hot segments between the
//! devices until the smoothed per-device latencies agree.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::migrate;
use crate::addrspace::SegmentId;
use crate::devsim::{CounterSample, Tier};
use crate::policy::{tiered_route, Ctx, HotnessView, Policy, Route, TickInput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColloidVariant {
    /// Read latency only.
    Base,
    /// Latency over reads and writes.
    Plus,
    /// Reads and writes with a wide tolerance and heavy smoothing.
    PlusPlus,
}

impl ColloidVariant {
    pub fn policy_name(self) -> &'static str {
        match self {
            ColloidVariant::Base => "colloid",
            ColloidVariant::Plus => "colloid+",
            ColloidVariant::PlusPlus => "colloid++",
        }
    }

    fn defaults(self) -> (f64, f64) {
        match self {
            ColloidVariant::Base | ColloidVariant::Plus => (0.05, 0.3),
            ColloidVariant::PlusPlus => (0.2, 0.01),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColloidConfig {
    /// Overrides the variant's tolerance.
    pub theta: Option<f64>,
    /// Overrides the variant's smoothing factor.
    pub ewma_alpha: Option<f64>,
    pub migration_limit_bytes_s: u64,
    /// Change of target access share per interval.
    pub share_step: f64,
    pub tuning_interval_s: f64,
}

impl Default for ColloidConfig {
    fn default() -> Self {
        ColloidConfig {
            theta: None,
            ewma_alpha: None,
            migration_limit_bytes_s: 200 << 20,
            share_step: 0.02,
            tuning_interval_s: 0.2,
        }
    }
}

pub struct Colloid {
    variant: ColloidVariant,
    config: ColloidConfig,
    theta: f64,
    alpha: f64,
    latency: [Option<f64>; 2],
    credit: f64,
}

impl Colloid {
    pub fn new(variant: ColloidVariant, config: ColloidConfig) -> Result<Self, String> {
        let (theta, alpha) = variant.defaults();
        let theta = config.theta.unwrap_or(theta);
        let alpha = config.ewma_alpha.unwrap_or(alpha);
        if !(theta > 0.0 && theta < 1.0) {
            return Err(format!("colloid.theta {theta} must be in (0, 1)"));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(format!("colloid.ewma_alpha {alpha} must be in (0, 1]"));
        }
        Ok(Colloid { variant, config, theta, alpha, latency: [None, None], credit: 0.0 })
    }

    pub fn smoothed_latency(&self, tier: Tier) -> Option<f64> {
        self.latency[tier.index()]
    }

    fn sample(&self, s: &CounterSample) -> Option<f64> {
        match self.variant {
            ColloidVariant::Base => s.avg_read_latency_us,
            ColloidVariant::Plus | ColloidVariant::PlusPlus => s.avg_latency_us,
        }
    }

    /// Direction in which the performance device's access share should move:
    /// -1 to shed load, +1 to attract it, 0 inside the tolerance band.
    pub fn direction(&self) -> i32 {
        match (self.latency[0], self.latency[1]) {
            (Some(lp), Some(lc)) if lp > (1.0 + self.theta) * lc => -1,
            (Some(lp), Some(lc)) if lp < (1.0 - self.theta) * lc => 1,
            _ => 0,
        }
    }

    /// Migrates toward the share target implied by `direction` using at most
    /// `budget` bytes. Returns the number of segments moved.
    pub fn shift(&self, ctx: &mut Ctx<'_>, view: &HotnessView, direction: i32, budget: u64) -> usize {
        if direction == 0 || view.total_hotness == 0 {
            return 0;
        }
        let total = view.total_hotness as f64;
        let seg_bytes = ctx.segment_bytes();
        let mut delta = self.config.share_step;
        let mut left = budget;
        let mut moved = 0;
        if direction < 0 {
            for &(hot, seg) in &view.tiered_perf {
                let share = hot as f64 / total;
                if left < seg_bytes || delta <= 0.0 || hot == 0 {
                    break;
                }
                if share <= delta && migrate(ctx, seg, Tier::Capacity) {
                    delta -= share;
                    left -= seg_bytes;
                    moved += 1;
                }
            }
        } else {
            let mut coldest = view.tiered_perf.iter().rev();
            for &(hot, seg) in &view.tiered_cap {
                let share = hot as f64 / total;
                if left < seg_bytes || delta <= 0.0 || hot == 0 {
                    break;
                }
                if share > delta {
                    continue;
                }
                if ctx.space.free_segments(Tier::Performance) == 0 {
                    let Some(&(cold, victim)) = coldest.next() else { break };
                    if cold >= hot || left < 2 * seg_bytes || !migrate(ctx, victim, Tier::Capacity) {
                        break;
                    }
                    left -= seg_bytes;
                    moved += 1;
                    delta += cold as f64 / total;
                }
                if migrate(ctx, seg, Tier::Performance) {
                    delta -= share;
                    left -= seg_bytes;
                    moved += 1;
                }
            }
        }
        moved
    }
}

impl Policy for Colloid {
    fn name(&self) -> &'static str {
        self.variant.policy_name()
    }

    fn route_read(&mut self, ctx: &mut Ctx<'_>, seg: SegmentId, _range: Range<u32>) -> Route {
        tiered_route(ctx.space.segment(seg).expect("allocated")).expect("single copy")
    }

    fn route_write(&mut self, ctx: &mut Ctx<'_>, seg: SegmentId, range: Range<u32>) -> Route {
        self.route_read(ctx, seg, range)
    }

    fn tick(&mut self, ctx: &mut Ctx<'_>, input: &TickInput) {
        for t in Tier::BOTH {
            let prev = self.latency[t.index()];
            let s = input.seeded(t, prev, self.sample(input.sample(t)));
            self.latency[t.index()] = match (prev, s) {
                (Some(p), Some(s)) => Some(self.alpha * s + (1.0 - self.alpha) * p),
                (None, s) => s,
                (p, None) => p,
            };
        }
        let seg_bytes = ctx.segment_bytes() as f64;
        let per_tick = self.config.migration_limit_bytes_s as f64 * self.config.tuning_interval_s;
        self.credit = (self.credit + per_tick).min(per_tick.max(2.0 * seg_bytes));
        let dir = self.direction();
        if dir != 0 {
            let view = HotnessView::build(ctx.space);
            let moved = self.shift(ctx, &view, dir, self.credit as u64);
            self.credit -= moved as f64 * seg_bytes;
        }
        ctx.space.decay(input.tick + 1);
    }

    fn tick_interval_s(&self) -> f64 {
        self.config.tuning_interval_s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addrspace::{AddressSpace, Geometry};
    use crate::policy::PolicyStats;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SEG: u64 = 2 << 20;

    fn space_with(hot: &[(u32, Tier, u32)]) -> AddressSpace {
        let mut space = AddressSpace::new(Geometry::default(), [8 * SEG, 8 * SEG], 16 * SEG, 0.025).unwrap();
        for &(id, tier, n) in hot {
            let s = space.place_new(SegmentId(id), tier).unwrap();
            for _ in 0..n {
                s.record_read();
            }
        }
        space
    }

    fn shift(space: &mut AddressSpace, dir: i32) -> usize {
        let c = Colloid::new(ColloidVariant::Base, ColloidConfig { share_step: 0.3, ..Default::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut tr, mut st) = (Vec::new(), PolicyStats::default());
        let view = HotnessView::build(space);
        let mut ctx = Ctx { space, rng: &mut rng, transfers: &mut tr, stats: &mut st };
        c.shift(&mut ctx, &view, dir, u64::MAX)
    }

    #[test]
    fn sheds_hot_segments_that_fit_the_share_delta() {
        let mut space = space_with(&[(0, Tier::Performance, 50), (1, Tier::Performance, 20), (2, Tier::Capacity, 30)]);
        assert_eq!(shift(&mut space, -1), 1);
        assert_eq!(space.segment(SegmentId(1)).unwrap().class.tier(), Some(Tier::Capacity));
        assert_eq!(space.segment(SegmentId(0)).unwrap().class.tier(), Some(Tier::Performance));
    }

    #[test]
    fn inside_band_moves_nothing() {
        let mut space = space_with(&[(0, Tier::Capacity, 50)]);
        assert_eq!(shift(&mut space, 0), 0);
        let mut c = Colloid::new(ColloidVariant::Plus, ColloidConfig::default()).unwrap();
        c.latency = [Some(100.0), Some(100.0)];
        assert_eq!(c.direction(), 0);
        c.latency = [Some(200.0), Some(100.0)];
        assert_eq!(c.direction(), -1);
    }

    #[test]
    fn variant_parameters() {
        let pp = Colloid::new(ColloidVariant::PlusPlus, ColloidConfig::default()).unwrap();
        assert_eq!((pp.theta, pp.alpha), (0.2, 0.01));
        assert_eq!(pp.name(), "colloid++");
        let b = Colloid::new(ColloidVariant::Base, ColloidConfig::default()).unwrap();
        assert_eq!((b.theta, b.alpha), (0.05, 0.3));
    }
}
