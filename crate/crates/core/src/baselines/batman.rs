//! Fixed-ratio bandwidth balancing: data is laid out so that a static share
//! of accesses lands on the performance device.

use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::migrate;
use crate::addrspace::{PlacementClass, SegmentId};
use crate::devsim::Tier;
use crate::policy::{tiered_route, Ctx, Policy, Route, TickInput};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatmanConfig {
    /// Target access share of the performance device. When unset the
    /// harness derives it from the two devices' read bandwidths.
    pub ratio: Option<f64>,
    pub migration_budget_bytes: u64,
    pub tuning_interval_s: f64,
    /// Allowed distance between the measured access share and the ratio.
    pub tolerance: f64,
}

impl Default for BatmanConfig {
    fn default() -> Self {
        BatmanConfig { ratio: None, migration_budget_bytes: 64 << 20, tuning_interval_s: 0.2, tolerance: 0.01 }
    }
}

/// Chooses the segments to keep on the performance device.
///
/// `ranked` lists every segment hottest first with its access weight. The
/// result takes the `k` hottest segments and fills the remaining `slots - k`
/// with the coldest ones, where `k` is the largest count whose combined
/// share of the total weight stays at or below `ratio`.
pub fn partition(ranked: &[(f64, SegmentId)], ratio: f64, slots: usize) -> Vec<SegmentId> {
    let n = ranked.len();
    if slots >= n {
        return ranked.iter().map(|e| e.1).collect();
    }
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for (w, _) in ranked {
        prefix.push(prefix.last().unwrap() + w);
    }
    let total = prefix[n];
    let limit = ratio * total + 1e-12 * total.max(1.0);
    let share = |k: usize| prefix[k] + (total - prefix[n - (slots - k)]);
    let mut k = 0;
    while k < slots && share(k + 1) <= limit {
        k += 1;
    }
    ranked[..k].iter().chain(&ranked[n - (slots - k)..]).map(|e| e.1).collect()
}

pub struct Batman {
    config: BatmanConfig,
    ratio: f64,
}

impl Batman {
    pub fn new(config: BatmanConfig, default_ratio: f64) -> Result<Self, String> {
        let ratio = config.ratio.unwrap_or(default_ratio);
        if !(0.0..=1.0).contains(&ratio) {
            return Err(format!("batman.ratio {ratio} must be in [0, 1]"));
        }
        Ok(Batman { config, ratio })
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// Moves segments toward the target partition within the budget while
    /// the measured access share of the performance device is more than
    /// `tolerance` away from the ratio. Returns the number of segments moved.
    pub fn enforce(&self, ctx: &mut Ctx<'_>) -> usize {
        let mut ranked: Vec<(f64, SegmentId)> = ctx
            .space
            .segments()
            .filter(|s| s.class != PlacementClass::Mirrored)
            .map(|s| (s.hotness() as f64, s.id))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let total: f64 = ranked.iter().map(|e| e.0).sum();
        if total == 0.0 {
            return 0;
        }
        let on_perf = |ctx: &Ctx<'_>, id| ctx.space.segment(id).map(|s| s.class) == Some(PlacementClass::TieredPerf);
        let mut share = ranked.iter().filter(|e| on_perf(ctx, e.1)).map(|e| e.0).sum::<f64>() / total;
        let slots = ctx.space.device_segments(Tier::Performance) as usize;
        let target: HashSet<SegmentId> = partition(&ranked, self.ratio, slots).into_iter().collect();
        let evict: Vec<(f64, SegmentId)> =
            ranked.iter().copied().filter(|e| !target.contains(&e.1) && on_perf(ctx, e.1)).collect();
        let admit: Vec<(f64, SegmentId)> =
            ranked.iter().copied().filter(|e| target.contains(&e.1) && !on_perf(ctx, e.1)).collect();

        let seg_bytes = ctx.segment_bytes();
        let tol = self.config.tolerance;
        let mut left = self.config.migration_budget_bytes;
        let mut moved = 0;
        let mut step = |ctx: &mut Ctx<'_>, id, to, left: &mut u64| {
            let ok = *left >= seg_bytes && migrate(ctx, id, to);
            if ok {
                *left -= seg_bytes;
                moved += 1;
            }
            ok
        };
        if share > self.ratio + tol {
            // Too much traffic on the performance device: demote the hottest
            // segments outside the partition, then refill with cold ones.
            for &(h, id) in &evict {
                if share <= self.ratio + tol / 2.0 || !step(ctx, id, Tier::Capacity, &mut left) {
                    break;
                }
                share -= h / total;
            }
            for &(h, id) in admit.iter().rev() {
                if share + h / total > self.ratio + tol || ctx.space.free_segments(Tier::Performance) == 0 {
                    break;
                }
                if !step(ctx, id, Tier::Performance, &mut left) {
                    break;
                }
                share += h / total;
            }
        } else if share < self.ratio - tol {
            let mut victims = evict.iter().rev();
            for &(h, id) in &admit {
                if share >= self.ratio - tol / 2.0 {
                    break;
                }
                if ctx.space.free_segments(Tier::Performance) == 0 {
                    let Some(&(vh, victim)) = victims.next() else { break };
                    if left < 2 * seg_bytes || !step(ctx, victim, Tier::Capacity, &mut left) {
                        break;
                    }
                    share -= vh / total;
                }
                if !step(ctx, id, Tier::Performance, &mut left) {
                    break;
                }
                share += h / total;
            }
        }
        moved
    }
}

impl Policy for Batman {
    fn name(&self) -> &'static str {
        "batman"
    }

    fn route_read(&mut self, ctx: &mut Ctx<'_>, seg: SegmentId, _range: Range<u32>) -> Route {
        tiered_route(ctx.space.segment(seg).expect("allocated")).expect("single copy")
    }

    fn route_write(&mut self, ctx: &mut Ctx<'_>, seg: SegmentId, range: Range<u32>) -> Route {
        self.route_read(ctx, seg, range)
    }

    fn tick(&mut self, ctx: &mut Ctx<'_>, input: &TickInput) {
        self.enforce(ctx);
        ctx.space.decay(input.tick + 1);
    }

    fn tick_interval_s(&self) -> f64 {
        self.config.tuning_interval_s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranked(weights: &[f64]) -> Vec<(f64, SegmentId)> {
        weights.iter().enumerate().map(|(i, &w)| (w, SegmentId(i as u32))).collect()
    }

    #[test]
    fn full_ratio_keeps_the_hottest() {
        let r = ranked(&[9.0, 7.0, 5.0, 3.0, 1.0]);
        let ids: Vec<u32> = partition(&r, 1.0, 3).iter().map(|s| s.0).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn partial_ratio_fills_with_cold_segments() {
        let r = ranked(&[50.0, 30.0, 10.0, 5.0, 5.0]);
        let mut ids: Vec<u32> = partition(&r, 0.6, 3).iter().map(|s| s.0).collect();
        ids.sort();
        assert_eq!(ids, vec![0, 3, 4]);
    }

    #[test]
    fn everything_fits() {
        assert_eq!(partition(&ranked(&[1.0, 2.0]), 0.1, 4).len(), 2);
    }

    #[test]
    fn rejects_bad_ratio() {
        assert!(Batman::new(BatmanConfig::default(), 1.5).is_err());
        assert_eq!(Batman::new(BatmanConfig { ratio: Some(0.3), ..Default::default() }, 0.6).unwrap().ratio(), 0.3);
    }
}
