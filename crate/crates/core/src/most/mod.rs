//! Mirror-optimized tiering.
//!
//! Hot segments are mirrored on both devices; warm data stays tiered on the
//! performance device and cold data on the capacity device. Accesses to
//! mirrored data are split between the copies by a single offload ratio that
//! the [`optimizer`] tunes until both devices show the same end-to-end
//! latency. Migration only moves data away from the slower device.

pub mod optimizer;

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::addrspace::{AddrError, PlacementClass, SegmentId, DEFAULT_WATERMARK_FRACTION};
use crate::devsim::Tier;
use crate::policy::{tiered_route, BgClass, Ctx, HotnessView, Policy, Route, TickInput};

pub use optimizer::{MigrationGate, MirrorAction, MirrorStats, OptimizerConfig, OptimizerState};

/// Set on a segment the cleaner has cleaned at least once.
pub const FLAG_CLEANED: u8 = 1;
/// Set on a segment that has had a mirrored copy invalidated by a write.
pub const FLAG_DIRTIED: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MostConfig {
    pub optimizer: OptimizerConfig,
    pub watermark_fraction: f64,
    /// Bytes of migration, mirroring and cleaning per tuning interval.
    pub migration_budget_bytes: u64,
    /// Minimum rewrite distance (reads per write) for a segment to be cleaned.
    pub clean_threshold: f64,
    /// Track validity per subpage; when off a mirrored segment is valid or
    /// stale as a whole.
    pub subpages_enabled: bool,
}

impl Default for MostConfig {
    fn default() -> Self {
        MostConfig {
            optimizer: OptimizerConfig::default(),
            watermark_fraction: DEFAULT_WATERMARK_FRACTION,
            migration_budget_bytes: 64 << 20,
            clean_threshold: 8.0,
            subpages_enabled: true,
        }
    }
}

/// A background move performed by [`MostPolicy::migrate_tick`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Migration {
    Promote(SegmentId),
    Demote(SegmentId),
    Duplicate(SegmentId),
    /// Mirrored segment whose stale performance copy was rewritten whole.
    Resync(SegmentId),
    /// A mirrored segment dropped one copy.
    Reclaim(SegmentId, Tier),
}

pub struct MostPolicy {
    config: MostConfig,
    state: OptimizerState,
    pending: Vec<MirrorAction>,
    reclaim_requested: bool,
}

impl MostPolicy {
    pub fn new(config: MostConfig) -> Self {
        MostPolicy { state: OptimizerState::new(config.optimizer), config, pending: Vec::new(), reclaim_requested: false }
    }

    pub fn config(&self) -> &MostConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn set_state(&mut self, state: OptimizerState) {
        self.state = state;
    }

    pub fn queue_action(&mut self, action: MirrorAction) {
        self.pending.push(action);
    }

    fn draw(&self, ctx: &mut Ctx<'_>) -> Tier {
        if ctx.rng.gen::<f64>() < self.state.offload_ratio {
            Tier::Capacity
        } else {
            Tier::Performance
        }
    }

    pub fn mirror_stats(&self, ctx: &Ctx<'_>) -> MirrorStats {
        let total = ctx.space.total_segments() as u64 * ctx.segment_bytes();
        MirrorStats {
            mirrored_bytes: ctx.space.mirrored_count() as u64 * 2 * ctx.segment_bytes(),
            limit_bytes: (total as f64 * self.config.optimizer.mirrored_max_fraction) as u64,
        }
    }

    /// Free capacity segments available without crossing the watermark.
    fn spare_capacity_segments(&self, ctx: &Ctx<'_>) -> u32 {
        let reserve = (ctx.space.total_segments() as f64 * self.config.watermark_fraction).ceil() as u32;
        let free_total = ctx.space.free_segments(Tier::Performance) + ctx.space.free_segments(Tier::Capacity);
        ctx.space.free_segments(Tier::Capacity).min(free_total.saturating_sub(reserve))
    }

    fn duplicate(&self, ctx: &mut Ctx<'_>, seg: SegmentId) -> Result<(), AddrError> {
        ctx.space.mirror(seg)?;
        let bytes = ctx.segment_bytes();
        ctx.transfer(Tier::Performance, bytes, BgClass::Mirror);
        ctx.stats.migrations += 1;
        Ok(())
    }

    /// Drops one copy of a mirrored segment, patching first when neither copy
    /// is fully valid. Returns the discarded side.
    pub fn reclaim_segment(&self, ctx: &mut Ctx<'_>, seg: SegmentId) -> Result<Tier, AddrError> {
        let meta = ctx.space.segment(seg).ok_or(AddrError::Unallocated(seg))?;
        if meta.class != PlacementClass::Mirrored {
            return Err(AddrError::NotMirrored(seg));
        }
        let stale_on_perf = meta.only_valid_on(Tier::Capacity);
        let stale_on_cap = meta.only_valid_on(Tier::Performance);
        let discard = if stale_on_perf == 0 {
            Tier::Capacity
        } else if stale_on_cap == 0 {
            Tier::Performance
        } else {
            let sub = ctx.space.geometry().subpage_size;
            ctx.transfer(Tier::Performance, stale_on_cap as u64 * sub, BgClass::Clean);
            ctx.space.clean_segment(seg)?;
            Tier::Performance
        };
        ctx.space.unmirror(seg, discard)?;
        ctx.stats.reclaims += 1;
        Ok(discard)
    }

    /// Reclaims the coldest mirrored segments while free space is below the
    /// watermark.
    pub fn reclaim(&mut self, ctx: &mut Ctx<'_>, view: &HotnessView) -> Vec<Migration> {
        let mut done = Vec::new();
        let mut coldest = view.mirrored.iter().rev();
        while ctx.space.below_watermark() || std::mem::take(&mut self.reclaim_requested) {
            let Some(&(_, seg)) = coldest.next() else {
                ctx.stats.reclaim_noops += 1;
                log::warn!("reclamation requested with no mirrored segments");
                break;
            };
            if ctx.space.segment(seg).map(|s| s.class) != Some(PlacementClass::Mirrored) {
                continue;
            }
            if let Ok(t) = self.reclaim_segment(ctx, seg) {
                done.push(Migration::Reclaim(seg, t));
            }
        }
        done
    }

    /// Background moves for one interval, bounded by `budget` bytes.
    pub fn migrate_tick(&mut self, ctx: &mut Ctx<'_>, view: &HotnessView, budget: u64) -> Vec<Migration> {
        let seg_bytes = ctx.segment_bytes();
        let mut left = budget;
        let mut done = Vec::new();
        let actions = std::mem::take(&mut self.pending);
        match self.state.gate {
            MigrationGate::Stopped => {}
            MigrationGate::ToPerformanceOnly => {
                if !self.config.subpages_enabled {
                    // Whole-segment validity: a stale performance copy can only
                    // be repaired by rewriting it entirely.
                    for &(_, seg) in &view.mirrored {
                        if left < seg_bytes {
                            break;
                        }
                        let stale = ctx.space.segment(seg).map_or(0, |s| s.only_valid_on(Tier::Capacity));
                        if stale > 0 {
                            ctx.space.clean_segment(seg).expect("mirrored");
                            ctx.transfer(Tier::Capacity, seg_bytes, BgClass::MigrateToPerf);
                            ctx.stats.migrations += 1;
                            left -= seg_bytes;
                            done.push(Migration::Resync(seg));
                        }
                    }
                }
                for &(hot, seg) in &view.tiered_cap {
                    if left < seg_bytes || ctx.space.free_segments(Tier::Performance) == 0 || hot == 0 {
                        break;
                    }
                    if ctx.space.move_tiered(seg, Tier::Performance).is_ok() {
                        ctx.transfer(Tier::Capacity, seg_bytes, BgClass::MigrateToPerf);
                        ctx.stats.migrations += 1;
                        left -= seg_bytes;
                        done.push(Migration::Promote(seg));
                    }
                }
            }
            MigrationGate::ToCapacityOnly => {
                let mut hottest = view.tiered_perf.iter().filter(|e| e.0 > 0).peekable();
                for action in actions {
                    match action {
                        MirrorAction::EnlargeMirror => {
                            let mut added = 0;
                            while left >= seg_bytes {
                                let stats = self.mirror_stats(ctx);
                                if stats.mirrored_bytes + 2 * seg_bytes > stats.limit_bytes {
                                    break;
                                }
                                if self.spare_capacity_segments(ctx) == 0 {
                                    ctx.stats.deferred_enlarges += 1;
                                    self.reclaim_requested = added == 0 && ctx.space.mirrored_count() > 0;
                                    break;
                                }
                                let Some(&(_, seg)) = hottest.next() else { break };
                                if self.duplicate(ctx, seg).is_ok() {
                                    left -= seg_bytes;
                                    added += 1;
                                    done.push(Migration::Duplicate(seg));
                                }
                            }
                        }
                        MirrorAction::ImproveMirrorHotness => {
                            let Some(&&(hot, seg)) = hottest.peek() else { continue };
                            let Some(&(cold, victim)) = view.mirrored.last() else { continue };
                            if hot > cold && left >= seg_bytes {
                                if let Ok(t) = self.reclaim_segment(ctx, victim) {
                                    done.push(Migration::Reclaim(victim, t));
                                    if self.duplicate(ctx, seg).is_ok() {
                                        ctx.stats.swaps += 1;
                                        left -= seg_bytes;
                                        hottest.next();
                                        done.push(Migration::Duplicate(seg));
                                    }
                                }
                            }
                        }
                    }
                }
                // Keep headroom on the performance device for new allocations.
                let reserve = (ctx.space.device_segments(Tier::Performance) as f64 * self.config.watermark_fraction)
                    .ceil() as u32;
                for &(_, seg) in view.tiered_perf.iter().rev() {
                    if left < seg_bytes
                        || ctx.space.free_segments(Tier::Performance) >= reserve
                        || self.spare_capacity_segments(ctx) == 0
                    {
                        break;
                    }
                    if ctx.space.segment(seg).map(|s| s.class) != Some(PlacementClass::TieredPerf) {
                        continue;
                    }
                    if ctx.space.move_tiered(seg, Tier::Capacity).is_ok() {
                        ctx.transfer(Tier::Performance, seg_bytes, BgClass::MigrateToCap);
                        ctx.stats.migrations += 1;
                        left -= seg_bytes;
                        done.push(Migration::Demote(seg));
                    }
                }
            }
        }
        done
    }

    /// Cleans mirrored segments whose rewrite distance reaches the threshold,
    /// least-written first. Returns the number of subpages cleaned.
    pub fn cleaner_tick(&mut self, ctx: &mut Ctx<'_>, budget: u64) -> u64 {
        let sub = ctx.space.geometry().subpage_size;
        let mut candidates: Vec<(u64, SegmentId, u32)> = ctx
            .space
            .segments()
            .filter(|s| s.class == PlacementClass::Mirrored && s.invalid_count() > 0)
            .filter(|s| s.rewrite_distance() >= self.config.clean_threshold)
            .map(|s| (s.write_counter as u64, s.id, s.invalid_count()))
            .collect();
        candidates.sort();
        let mut left = budget;
        let mut cleaned = 0u64;
        for (_, seg, invalid) in candidates {
            let bytes = invalid as u64 * sub;
            if bytes > left {
                break;
            }
            let [to_perf, to_cap] = ctx.space.clean_segment(seg).expect("mirrored candidate");
            ctx.transfer(Tier::Capacity, to_perf as u64 * sub, BgClass::Clean);
            ctx.transfer(Tier::Performance, to_cap as u64 * sub, BgClass::Clean);
            if let Some(s) = ctx.space.segment_mut(seg) {
                s.flags |= FLAG_CLEANED;
            }
            left -= bytes;
            cleaned += invalid as u64;
        }
        ctx.stats.cleaned_subpages += cleaned;
        cleaned
    }

    fn split_read(&self, ctx: &mut Ctx<'_>, seg: SegmentId, range: Range<u32>) -> Route {
        let meta = ctx.space.segment(seg).expect("allocated");
        let mut parts: Vec<(Tier, Range<u32>)> = Vec::new();
        for sp in range {
            let v = meta.valid_devices(sp);
            let tier = match parts.last() {
                Some((t, _)) if v.contains(*t) => *t,
                _ if v.perf => Tier::Performance,
                _ => Tier::Capacity,
            };
            match parts.last_mut() {
                Some((t, r)) if *t == tier => r.end = sp + 1,
                _ => parts.push((tier, sp..sp + 1)),
            }
        }
        Route::Split(parts)
    }
}

impl Policy for MostPolicy {
    fn name(&self) -> &'static str {
        "most"
    }

    fn allocate(&mut self, ctx: &mut Ctx<'_>, _seg: SegmentId) -> Result<Tier, AddrError> {
        let want = self.draw(ctx);
        let tier = if ctx.space.free_segments(want) > 0 {
            want
        } else if ctx.space.free_segments(want.other()) > 0 {
            want.other()
        } else {
            return Err(AddrError::OutOfSpace(want));
        };
        ctx.stats.allocations[tier.index()] += 1;
        Ok(tier)
    }

    fn route_read(&mut self, ctx: &mut Ctx<'_>, seg: SegmentId, range: Range<u32>) -> Route {
        let meta = ctx.space.segment(seg).expect("allocated");
        if let Some(r) = tiered_route(meta) {
            return r;
        }
        let valid = meta.valid_for_range(range.clone());
        let route = match (valid.perf, valid.cap) {
            (true, true) => {
                let t = self.draw(ctx);
                ctx.stats.mirrored_clean_reads[t.index()] += 1;
                Route::One(t)
            }
            (true, false) => Route::One(Tier::Performance),
            (false, true) => Route::One(Tier::Capacity),
            (false, false) => self.split_read(ctx, seg, range),
        };
        if let Route::One(t) = route {
            ctx.stats.mirrored_reads[t.index()] += 1;
        }
        route
    }

    fn route_write(&mut self, ctx: &mut Ctx<'_>, seg: SegmentId, range: Range<u32>) -> Route {
        let meta = ctx.space.segment(seg).expect("allocated");
        if let Some(r) = tiered_route(meta) {
            return r;
        }
        let per_segment = ctx.space.geometry().subpages_per_segment();
        let (target, marked) = if self.config.subpages_enabled {
            (self.draw(ctx), range)
        } else {
            // Segment-granular validity: once one copy is stale, partial
            // writes must go to the valid copy.
            let whole = 0..per_segment;
            let valid = meta.valid_for_range(whole.clone());
            let t = if range.len() as u32 == per_segment || (valid.perf && valid.cap) {
                self.draw(ctx)
            } else if valid.perf {
                Tier::Performance
            } else {
                Tier::Capacity
            };
            (t, whole)
        };
        ctx.space.apply_write(seg, marked, target).expect("mirrored segment, valid range");
        if let Some(s) = ctx.space.segment_mut(seg) {
            s.flags |= FLAG_DIRTIED;
        }
        Route::One(target)
    }

    fn tick(&mut self, ctx: &mut Ctx<'_>, input: &TickInput) {
        let mirror = self.mirror_stats(ctx);
        let perf = input.seeded(Tier::Performance, self.state.latency_perf, input.perf.avg_latency_us);
        let cap = input.seeded(Tier::Capacity, self.state.latency_cap, input.cap.avg_latency_us);
        let (next, actions) = self.state.step(perf, cap, mirror);
        self.state = next;
        self.pending.extend(actions);
        let view = HotnessView::build(ctx.space);
        let budget = self.config.migration_budget_bytes;
        let moved = self.migrate_tick(ctx, &view, budget);
        let seg_bytes = ctx.segment_bytes();
        let used = moved.iter().filter(|m| !matches!(m, Migration::Reclaim(..))).count() as u64 * seg_bytes;
        if ctx.space.below_watermark() || self.reclaim_requested {
            let view = HotnessView::build(ctx.space);
            self.reclaim(ctx, &view);
        }
        self.cleaner_tick(ctx, budget.saturating_sub(used));
        ctx.space.decay(input.tick + 1);
    }

    fn offload_ratio(&self) -> f64 {
        self.state.offload_ratio
    }

    fn tick_interval_s(&self) -> f64 {
        self.config.optimizer.tuning_interval_s
    }

    fn single_copy(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addrspace::{AddressSpace, Geometry, SubpageState};
    use crate::policy::PolicyStats;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SEG: u64 = 2 << 20;

    struct World {
        space: AddressSpace,
        rng: ChaCha8Rng,
        transfers: Vec<crate::policy::Transfer>,
        stats: PolicyStats,
    }

    impl World {
        fn new(perf: u64, cap: u64) -> Self {
            World {
                space: AddressSpace::new(Geometry::default(), [perf * SEG, cap * SEG], (perf + cap) * SEG, 0.025)
                    .unwrap(),
                rng: ChaCha8Rng::seed_from_u64(7),
                transfers: Vec::new(),
                stats: PolicyStats::default(),
            }
        }

        fn ctx(&mut self) -> Ctx<'_> {
            Ctx { space: &mut self.space, rng: &mut self.rng, transfers: &mut self.transfers, stats: &mut self.stats }
        }
    }

    fn policy_with_ratio(ratio: f64) -> MostPolicy {
        let mut p = MostPolicy::new(MostConfig::default());
        let mut s = *p.state();
        s.offload_ratio = ratio;
        p.set_state(s);
        p
    }

    fn mirrored_world() -> World {
        let mut w = World::new(16, 32);
        w.space.place_new(SegmentId(0), Tier::Performance).unwrap();
        w.space.mirror(SegmentId(0)).unwrap();
        w
    }

    #[test]
    fn clean_mirrored_read_at_zero_ratio_goes_to_performance() {
        let mut w = mirrored_world();
        let mut p = policy_with_ratio(0.0);
        for _ in 0..100 {
            assert_eq!(p.route_read(&mut w.ctx(), SegmentId(0), 0..4), Route::One(Tier::Performance));
        }
    }

    #[test]
    fn stale_performance_copy_forces_capacity_reads() {
        let mut w = mirrored_world();
        w.space.apply_write(SegmentId(0), 0..4, Tier::Capacity).unwrap();
        for ratio in [0.0, 0.5, 1.0] {
            let mut p = policy_with_ratio(ratio);
            assert_eq!(p.route_read(&mut w.ctx(), SegmentId(0), 0..4), Route::One(Tier::Capacity));
        }
    }

    #[test]
    fn split_validity_read_is_split() {
        let mut w = mirrored_world();
        w.space.apply_write(SegmentId(0), 0..1, Tier::Capacity).unwrap();
        w.space.apply_write(SegmentId(0), 1..2, Tier::Performance).unwrap();
        let mut p = policy_with_ratio(0.5);
        match p.route_read(&mut w.ctx(), SegmentId(0), 0..4) {
            Route::Split(parts) => {
                assert_eq!(parts[0], (Tier::Capacity, 0..1));
                assert_eq!(parts[1], (Tier::Performance, 1..4));
            }
            other => panic!("expected split, got {other:?}"),
        }
    }

    #[test]
    fn full_ratio_write_invalidates_performance_copy() {
        let mut w = mirrored_world();
        let mut p = policy_with_ratio(1.0);
        assert_eq!(p.route_write(&mut w.ctx(), SegmentId(0), 0..4), Route::One(Tier::Capacity));
        let seg = w.space.segment(SegmentId(0)).unwrap();
        assert!((0..4).all(|sp| seg.subpage_state(sp) == SubpageState::InvalidOnPerf));
        assert_eq!(seg.subpage_state(4), SubpageState::Clean);
    }

    #[test]
    fn aligned_subpage_writes_route_freely() {
        let mut w = mirrored_world();
        w.space.apply_write(SegmentId(0), 0..4, Tier::Performance).unwrap();
        let mut p = policy_with_ratio(1.0);
        assert_eq!(p.route_write(&mut w.ctx(), SegmentId(0), 0..4), Route::One(Tier::Capacity));
        assert_eq!(w.space.segment(SegmentId(0)).unwrap().subpage_state(0), SubpageState::InvalidOnPerf);
    }

    #[test]
    fn segment_granular_writes_pin_to_valid_copy() {
        let mut w = mirrored_world();
        let mut cfg = MostConfig::default();
        cfg.subpages_enabled = false;
        let mut p = MostPolicy::new(cfg);
        let mut s = *p.state();
        s.offload_ratio = 1.0;
        p.set_state(s);
        w.space.apply_write(SegmentId(0), 0..512, Tier::Performance).unwrap();
        assert_eq!(p.route_write(&mut w.ctx(), SegmentId(0), 8..12), Route::One(Tier::Performance));
    }

    #[test]
    fn tiered_capacity_write_touches_no_bitmap() {
        let mut w = World::new(4, 4);
        w.space.place_new(SegmentId(1), Tier::Capacity).unwrap();
        let mut p = policy_with_ratio(0.7);
        assert_eq!(p.route_write(&mut w.ctx(), SegmentId(1), 0..1), Route::One(Tier::Capacity));
        assert!(!w.space.segment(SegmentId(1)).unwrap().has_bitmaps());
    }

    #[test]
    fn allocation_follows_ratio_with_fallback() {
        let mut w = World::new(1, 4);
        let mut p = policy_with_ratio(0.0);
        assert_eq!(p.allocate(&mut w.ctx(), SegmentId(0)).unwrap(), Tier::Performance);
        w.space.place_new(SegmentId(0), Tier::Performance).unwrap();
        assert_eq!(p.allocate(&mut w.ctx(), SegmentId(1)).unwrap(), Tier::Capacity);
    }

    #[test]
    fn stopped_gate_moves_nothing() {
        let mut w = World::new(8, 8);
        for i in 0..4 {
            w.space.place_new(SegmentId(i), Tier::Capacity).unwrap();
            w.space.segment_mut(SegmentId(i)).unwrap().record_read();
        }
        let mut p = policy_with_ratio(0.3);
        let view = HotnessView::build(&w.space);
        assert!(p.migrate_tick(&mut w.ctx(), &view, u64::MAX).is_empty());
    }

    #[test]
    fn enlarge_duplicates_hottest_tiered_performance_segment() {
        let mut w = World::new(16, 64);
        for i in 0..10 {
            let s = w.space.place_new(SegmentId(i), Tier::Performance).unwrap();
            for _ in 0..(if i == 7 { 50 } else { i }) {
                s.record_read();
            }
        }
        let mut p = policy_with_ratio(1.0);
        let mut s = *p.state();
        s.gate = MigrationGate::ToCapacityOnly;
        p.set_state(s);
        p.queue_action(MirrorAction::EnlargeMirror);
        let view = HotnessView::build(&w.space);
        let moved = p.migrate_tick(&mut w.ctx(), &view, SEG);
        assert_eq!(moved, vec![Migration::Duplicate(SegmentId(7))]);
        let seg = w.space.segment(SegmentId(7)).unwrap();
        assert_eq!(seg.class, PlacementClass::Mirrored);
        assert!(seg.addr.iter().all(Option::is_some));
        assert_eq!(w.stats.bytes(BgClass::Mirror), SEG);
    }

    fn improve_case(tiered_hot: u32, mirrored_cold: u32) -> Vec<Migration> {
        let mut w = World::new(16, 64);
        let a = w.space.place_new(SegmentId(0), Tier::Performance).unwrap();
        for _ in 0..tiered_hot {
            a.record_read();
        }
        w.space.place_new(SegmentId(1), Tier::Performance).unwrap();
        w.space.mirror(SegmentId(1)).unwrap();
        let b = w.space.segment_mut(SegmentId(1)).unwrap();
        for _ in 0..mirrored_cold {
            b.record_read();
        }
        let mut p = policy_with_ratio(1.0);
        let mut s = *p.state();
        s.gate = MigrationGate::ToCapacityOnly;
        p.set_state(s);
        p.queue_action(MirrorAction::ImproveMirrorHotness);
        let view = HotnessView::build(&w.space);
        let moved = p.migrate_tick(&mut w.ctx(), &view, 64 * SEG);
        w.space.check_invariants().unwrap();
        moved
    }

    #[test]
    fn improve_swaps_only_when_tiered_is_hotter() {
        let swapped = improve_case(40, 12);
        assert_eq!(swapped, vec![Migration::Reclaim(SegmentId(1), Tier::Capacity), Migration::Duplicate(SegmentId(0))]);
        assert!(improve_case(12, 40).is_empty());
    }

    fn reclaim_one(writes: &[(Range<u32>, Tier)]) -> (World, Tier) {
        let mut w = mirrored_world();
        for (r, t) in writes {
            w.space.apply_write(SegmentId(0), r.clone(), *t).unwrap();
        }
        let p = policy_with_ratio(0.0);
        let t = p.reclaim_segment(&mut w.ctx(), SegmentId(0)).unwrap();
        w.space.check_invariants().unwrap();
        (w, t)
    }

    #[test]
    fn reclaim_rules() {
        let (w, t) = reclaim_one(&[]);
        assert_eq!(t, Tier::Capacity);
        assert_eq!(w.space.segment(SegmentId(0)).unwrap().class, PlacementClass::TieredPerf);

        let (w, t) = reclaim_one(&[(0..512, Tier::Capacity)]);
        assert_eq!(t, Tier::Performance);
        assert_eq!(w.space.segment(SegmentId(0)).unwrap().class, PlacementClass::TieredCap);

        let (w, t) = reclaim_one(&[(0..3, Tier::Capacity), (10..15, Tier::Performance)]);
        assert_eq!(t, Tier::Performance);
        let seg = w.space.segment(SegmentId(0)).unwrap();
        assert_eq!(seg.class, PlacementClass::TieredCap);
        assert!(seg.invalid_is_zero());
        assert_eq!(w.stats.bytes(BgClass::Clean), 5 * 4096);
    }

    #[test]
    fn reclaim_without_mirrors_is_a_noop() {
        let mut w = World::new(1, 1);
        w.space.place_new(SegmentId(0), Tier::Performance).unwrap();
        w.space.place_new(SegmentId(1), Tier::Capacity).unwrap();
        let mut p = policy_with_ratio(0.0);
        let view = HotnessView::build(&w.space);
        assert!(p.reclaim(&mut w.ctx(), &view).is_empty());
        assert_eq!(w.stats.reclaim_noops, 1);
    }

    fn cleaner_case(reads: u64, writes: u64, invalid: u32) -> u64 {
        let mut w = mirrored_world();
        if invalid > 0 {
            w.space.apply_write(SegmentId(0), 0..invalid, Tier::Capacity).unwrap();
        }
        let s = w.space.segment_mut(SegmentId(0)).unwrap();
        s.rewrite_read_counter = reads;
        s.rewrite_counter = writes;
        let mut p = policy_with_ratio(0.0);
        p.cleaner_tick(&mut w.ctx(), u64::MAX)
    }

    #[test]
    fn cleaner_selects_by_rewrite_distance() {
        assert_eq!(cleaner_case(1000, 10, 5), 5);
        assert_eq!(cleaner_case(10, 100, 5), 0);
        assert_eq!(cleaner_case(1000, 10, 0), 0);
    }
}
