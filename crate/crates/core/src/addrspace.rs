//! Logical address space carved into fixed-size segments placed on two
//! devices, plus per-subpage validity for mirrored segments.
//!
//! A mirrored segment keeps two bitmaps with one bit per subpage. The
//! `invalid` bit says whether the two copies disagree; when they do, the
//! `location` bit names the device that holds the valid copy (1 = capacity).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devsim::Tier;

pub const DEFAULT_SEGMENT_SIZE: u64 = 2 << 20;
pub const DEFAULT_SUBPAGE_SIZE: u64 = 4096;
pub const DEFAULT_WATERMARK_FRACTION: f64 = 0.025;

/// In-memory metadata per segment: (field, bytes). The two bitmaps are
/// counted as 8-byte pointers; their 64-byte bodies exist only for mirrored
/// segments.
pub const METADATA_FIELDS: [(&str, u64); 12] = [
    ("id", 8),
    ("addr[2]", 16),
    ("invalid", 8),
    ("location", 8),
    ("clock", 8),
    ("read_counter", 1),
    ("write_counter", 1),
    ("rewrite_read_counter", 8),
    ("rewrite_counter", 8),
    ("flags", 1),
    ("placement_class", 1),
    ("lock", 8),
];

pub const SEGMENT_METADATA_BYTES: u64 = {
    let mut total = 0;
    let mut i = 0;
    while i < METADATA_FIELDS.len() {
        total += METADATA_FIELDS[i].1;
        i += 1;
    }
    total
};

#[derive(Debug, Error, PartialEq)]
pub enum AddrError {
    #[error("logical address {lba:#x} is not aligned to {align} bytes")]
    Unaligned { lba: u64, align: u64 },
    #[error("logical address {lba:#x} beyond logical space of {limit} bytes")]
    OutOfRange { lba: u64, limit: u64 },
    #[error("no free segment on the {0} device")]
    OutOfSpace(Tier),
    #[error("segment {0} is not mirrored")]
    NotMirrored(SegmentId),
    #[error("segment {0} is not allocated")]
    Unallocated(SegmentId),
    #[error("subpage range {start}..{end} outside a {per_segment}-subpage segment")]
    BadRange { start: u32, end: u32, per_segment: u32 },
    #[error("invalid geometry: {0}")]
    Geometry(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentId(pub u32);

impl std::fmt::Display for SegmentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Physical segment index on one device.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhysSegment(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlacementClass {
    TieredPerf,
    TieredCap,
    Mirrored,
}

impl PlacementClass {
    pub fn tiered(tier: Tier) -> Self {
        match tier {
            Tier::Performance => PlacementClass::TieredPerf,
            Tier::Capacity => PlacementClass::TieredCap,
        }
    }

    pub fn tier(self) -> Option<Tier> {
        match self {
            PlacementClass::TieredPerf => Some(Tier::Performance),
            PlacementClass::TieredCap => Some(Tier::Capacity),
            PlacementClass::Mirrored => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SubpageState {
    Clean,
    /// Only the capacity copy is valid.
    InvalidOnPerf,
    /// Only the performance copy is valid.
    InvalidOnCap,
}

impl SubpageState {
    fn from_bits(invalid: bool, location: bool) -> Self {
        match (invalid, location) {
            (false, _) => SubpageState::Clean,
            (true, true) => SubpageState::InvalidOnPerf,
            (true, false) => SubpageState::InvalidOnCap,
        }
    }

    /// State after a full-subpage write lands on `target`.
    pub fn after_write(self, target: Tier) -> Self {
        match target {
            Tier::Performance => SubpageState::InvalidOnCap,
            Tier::Capacity => SubpageState::InvalidOnPerf,
        }
    }

    pub fn valid(self) -> ValidSet {
        match self {
            SubpageState::Clean => ValidSet::BOTH,
            SubpageState::InvalidOnPerf => ValidSet::only(Tier::Capacity),
            SubpageState::InvalidOnCap => ValidSet::only(Tier::Performance),
        }
    }
}

/// Set of devices holding a valid copy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ValidSet {
    pub perf: bool,
    pub cap: bool,
}

impl ValidSet {
    pub const BOTH: ValidSet = ValidSet { perf: true, cap: true };
    pub const NONE: ValidSet = ValidSet { perf: false, cap: false };

    pub fn only(tier: Tier) -> Self {
        match tier {
            Tier::Performance => ValidSet { perf: true, cap: false },
            Tier::Capacity => ValidSet { perf: false, cap: true },
        }
    }

    pub fn contains(self, tier: Tier) -> bool {
        match tier {
            Tier::Performance => self.perf,
            Tier::Capacity => self.cap,
        }
    }

    pub fn intersect(self, other: ValidSet) -> ValidSet {
        ValidSet { perf: self.perf && other.perf, cap: self.cap && other.cap }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Bitmap {
    words: Box<[u64]>,
}

impl Bitmap {
    fn new(bits: u32) -> Self {
        Bitmap { words: vec![0u64; bits.div_ceil(64) as usize].into_boxed_slice() }
    }

    fn get(&self, i: u32) -> bool {
        self.words[(i / 64) as usize] >> (i % 64) & 1 == 1
    }

    /// (word index, mask) pairs covering `range`.
    fn masks(range: std::ops::Range<u32>) -> impl Iterator<Item = (usize, u64)> {
        let (start, end) = (range.start, range.end.max(range.start));
        (start / 64..end.div_ceil(64)).map(move |w| {
            let lo = (w * 64).max(start) - w * 64;
            let hi = ((w + 1) * 64).min(end) - w * 64;
            let mask = if hi - lo == 64 { u64::MAX } else { ((1u64 << (hi - lo)) - 1) << lo };
            (w as usize, mask)
        })
    }

    fn fill(&mut self, range: std::ops::Range<u32>, v: bool) {
        for (w, m) in Self::masks(range) {
            if v {
                self.words[w] |= m;
            } else {
                self.words[w] &= !m;
            }
        }
    }

    fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    fn is_zero(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct MirrorBitmaps {
    invalid: Bitmap,
    location: Bitmap,
}

/// Per-segment metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentMeta {
    pub id: SegmentId,
    /// Physical segment on each device, indexed by [`Tier::index`].
    pub addr: [Option<PhysSegment>; 2],
    bitmaps: Option<Box<MirrorBitmaps>>,
    /// Last hotness-decay epoch applied.
    pub clock: u64,
    pub read_counter: u8,
    pub write_counter: u8,
    pub rewrite_read_counter: u64,
    pub rewrite_counter: u64,
    pub flags: u8,
    pub class: PlacementClass,
}

impl SegmentMeta {
    fn tiered(id: SegmentId, tier: Tier, phys: PhysSegment, clock: u64) -> Self {
        let mut addr = [None, None];
        addr[tier.index()] = Some(phys);
        SegmentMeta {
            id,
            addr,
            bitmaps: None,
            clock,
            read_counter: 0,
            write_counter: 0,
            rewrite_read_counter: 0,
            rewrite_counter: 0,
            flags: 0,
            class: PlacementClass::tiered(tier),
        }
    }

    /// Combined access frequency used for hotness ranking.
    pub fn hotness(&self) -> u32 {
        self.read_counter as u32 + self.write_counter as u32
    }

    pub fn has_bitmaps(&self) -> bool {
        self.bitmaps.is_some()
    }

    pub fn record_read(&mut self) {
        self.read_counter = self.read_counter.saturating_add(1);
        if self.class == PlacementClass::Mirrored {
            self.rewrite_read_counter += 1;
        }
    }

    pub fn record_write(&mut self) {
        self.write_counter = self.write_counter.saturating_add(1);
        if self.class == PlacementClass::Mirrored {
            self.rewrite_counter += 1;
        }
    }

    /// Halves the hotness counters once per missed epoch.
    pub fn decay_to(&mut self, epoch: u64) {
        if self.clock < epoch {
            let shift = (epoch - self.clock).min(8) as u32;
            self.read_counter = ((self.read_counter as u32) >> shift) as u8;
            self.write_counter = ((self.write_counter as u32) >> shift) as u8;
            self.clock = epoch;
        }
    }

    /// Average number of reads per write since the segment became mirrored.
    pub fn rewrite_distance(&self) -> f64 {
        self.rewrite_read_counter as f64 / self.rewrite_counter.max(1) as f64
    }

    pub fn subpage_state(&self, subpage: u32) -> SubpageState {
        match &self.bitmaps {
            Some(b) => SubpageState::from_bits(b.invalid.get(subpage), b.location.get(subpage)),
            None => SubpageState::Clean,
        }
    }

    pub fn valid_devices(&self, subpage: u32) -> ValidSet {
        match self.class.tier() {
            Some(t) => ValidSet::only(t),
            None => self.subpage_state(subpage).valid(),
        }
    }

    /// Devices valid for every subpage in `range`.
    pub fn valid_for_range(&self, range: std::ops::Range<u32>) -> ValidSet {
        match self.class.tier() {
            Some(t) => ValidSet::only(t),
            None => {
                let Some(b) = &self.bitmaps else { return ValidSet::BOTH };
                let (mut stale_perf, mut stale_cap) = (false, false);
                for (w, m) in Bitmap::masks(range) {
                    let (inv, loc) = (b.invalid.words[w] & m, b.location.words[w]);
                    stale_perf |= inv & loc != 0;
                    stale_cap |= inv & !loc != 0;
                }
                ValidSet { perf: !stale_perf, cap: !stale_cap }
            }
        }
    }

    pub fn invalid_count(&self) -> u32 {
        self.bitmaps.as_ref().map_or(0, |b| b.invalid.count_ones())
    }

    /// Number of subpages whose only valid copy lives on `tier`.
    pub fn only_valid_on(&self, tier: Tier) -> u32 {
        let Some(b) = &self.bitmaps else { return 0 };
        let want_location = tier == Tier::Capacity;
        b.invalid
            .words
            .iter()
            .zip(b.location.words.iter())
            .map(|(inv, loc)| (inv & if want_location { *loc } else { !*loc }).count_ones())
            .sum()
    }

    pub fn invalid_is_zero(&self) -> bool {
        self.bitmaps.as_ref().map_or(true, |b| b.invalid.is_zero())
    }
}

/// Segment and subpage sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub segment_size: u64,
    pub subpage_size: u64,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry { segment_size: DEFAULT_SEGMENT_SIZE, subpage_size: DEFAULT_SUBPAGE_SIZE }
    }
}

impl Geometry {
    pub fn subpages_per_segment(&self) -> u32 {
        (self.segment_size / self.subpage_size) as u32
    }

    pub fn validate(&self) -> Result<(), AddrError> {
        if self.subpage_size == 0 || self.segment_size == 0 || self.segment_size % self.subpage_size != 0 {
            return Err(AddrError::Geometry(format!(
                "segment {} must be a positive multiple of subpage {}",
                self.segment_size, self.subpage_size
            )));
        }
        Ok(())
    }
}

/// Bytes of in-memory metadata for a hierarchy of `capacity` bytes with
/// `mirrored_fraction` of its segments mirrored.
pub fn metadata_footprint(capacity: u64, mirrored_fraction: f64, geometry: Geometry) -> u64 {
    let segments = capacity / geometry.segment_size;
    let mirrored = (segments as f64 * mirrored_fraction).floor() as u64;
    let bitmap_bytes = (geometry.subpages_per_segment() as u64).div_ceil(8);
    segments * SEGMENT_METADATA_BYTES + mirrored * 2 * bitmap_bytes
}

/// Segment table and per-device free lists.
#[derive(Clone, Debug)]
pub struct AddressSpace {
    geometry: Geometry,
    segments: Vec<Option<SegmentMeta>>,
    free: [Vec<PhysSegment>; 2],
    device_segments: [u32; 2],
    watermark_fraction: f64,
    epoch: u64,
}

impl AddressSpace {
    /// `logical_bytes` is the addressable space; the device capacities are
    /// physical sizes. Logical space normally excludes the mirror reserve.
    pub fn new(
        geometry: Geometry,
        device_capacity: [u64; 2],
        logical_bytes: u64,
        watermark_fraction: f64,
    ) -> Result<Self, AddrError> {
        geometry.validate()?;
        let per_device = device_capacity.map(|c| (c / geometry.segment_size) as u32);
        let logical = logical_bytes / geometry.segment_size;
        if logical > (per_device[0] + per_device[1]) as u64 {
            return Err(AddrError::Geometry(format!(
                "logical space of {logical} segments exceeds {} physical segments",
                per_device[0] + per_device[1]
            )));
        }
        // Lowest address allocated first.
        let free = per_device.map(|n| (0..n).rev().map(PhysSegment).collect());
        Ok(AddressSpace {
            geometry,
            segments: vec![None; logical as usize],
            free,
            device_segments: per_device,
            watermark_fraction,
            epoch: 0,
        })
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn logical_segments(&self) -> u32 {
        self.segments.len() as u32
    }

    pub fn logical_bytes(&self) -> u64 {
        self.segments.len() as u64 * self.geometry.segment_size
    }

    pub fn device_segments(&self, tier: Tier) -> u32 {
        self.device_segments[tier.index()]
    }

    pub fn free_segments(&self, tier: Tier) -> u32 {
        self.free[tier.index()].len() as u32
    }

    pub fn total_segments(&self) -> u32 {
        self.device_segments[0] + self.device_segments[1]
    }

    pub fn free_fraction(&self) -> f64 {
        (self.free_segments(Tier::Performance) + self.free_segments(Tier::Capacity)) as f64
            / self.total_segments() as f64
    }

    pub fn watermark_fraction(&self) -> f64 {
        self.watermark_fraction
    }

    pub fn below_watermark(&self) -> bool {
        self.free_fraction() < self.watermark_fraction
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn resolve(&self, lba: u64) -> Result<(SegmentId, u32), AddrError> {
        if lba % self.geometry.subpage_size != 0 {
            return Err(AddrError::Unaligned { lba, align: self.geometry.subpage_size });
        }
        if lba >= self.logical_bytes() {
            return Err(AddrError::OutOfRange { lba, limit: self.logical_bytes() });
        }
        let seg = lba / self.geometry.segment_size;
        let sub = (lba % self.geometry.segment_size) / self.geometry.subpage_size;
        Ok((SegmentId(seg as u32), sub as u32))
    }

    pub fn allocate_segment(&mut self, tier: Tier) -> Result<PhysSegment, AddrError> {
        self.free[tier.index()].pop().ok_or(AddrError::OutOfSpace(tier))
    }

    pub fn free_segment(&mut self, tier: Tier, phys: PhysSegment) {
        debug_assert!(phys.0 < self.device_segments[tier.index()]);
        self.free[tier.index()].push(phys);
    }

    pub fn segment(&self, id: SegmentId) -> Option<&SegmentMeta> {
        self.segments.get(id.0 as usize).and_then(Option::as_ref)
    }

    pub fn segment_mut(&mut self, id: SegmentId) -> Option<&mut SegmentMeta> {
        self.segments.get_mut(id.0 as usize).and_then(Option::as_mut)
    }

    pub fn segments(&self) -> impl Iterator<Item = &SegmentMeta> {
        self.segments.iter().flatten()
    }

    pub fn segments_mut(&mut self) -> impl Iterator<Item = &mut SegmentMeta> {
        self.segments.iter_mut().flatten()
    }

    /// Places a never-written logical segment on `tier` as tiered data.
    pub fn place_new(&mut self, id: SegmentId, tier: Tier) -> Result<&mut SegmentMeta, AddrError> {
        let phys = self.allocate_segment(tier)?;
        let epoch = self.epoch;
        let slot = &mut self.segments[id.0 as usize];
        debug_assert!(slot.is_none(), "segment {id} already placed");
        Ok(slot.insert(SegmentMeta::tiered(id, tier, phys, epoch)))
    }

    /// Moves a tiered segment's only copy to the other device.
    pub fn move_tiered(&mut self, id: SegmentId, to: Tier) -> Result<(), AddrError> {
        let from = to.other();
        let phys = self.allocate_segment(to)?;
        let seg = self.segments[id.0 as usize].as_mut().ok_or(AddrError::Unallocated(id))?;
        debug_assert_eq!(seg.class, PlacementClass::tiered(from));
        let old = seg.addr[from.index()].take().expect("tiered copy");
        seg.addr[to.index()] = Some(phys);
        seg.class = PlacementClass::tiered(to);
        self.free[from.index()].push(old);
        Ok(())
    }

    /// Adds a second copy on the other device; the segment becomes mirrored
    /// with every subpage clean.
    pub fn mirror(&mut self, id: SegmentId) -> Result<(), AddrError> {
        let seg = self.segments[id.0 as usize].as_ref().ok_or(AddrError::Unallocated(id))?;
        let have = seg.class.tier().ok_or(AddrError::NotMirrored(id))?;
        let phys = self.allocate_segment(have.other())?;
        let bits = self.geometry.subpages_per_segment();
        let seg = self.segments[id.0 as usize].as_mut().expect("checked");
        seg.addr[have.other().index()] = Some(phys);
        seg.class = PlacementClass::Mirrored;
        seg.bitmaps = Some(Box::new(MirrorBitmaps { invalid: Bitmap::new(bits), location: Bitmap::new(bits) }));
        seg.rewrite_counter = 0;
        seg.rewrite_read_counter = 0;
        Ok(())
    }

    /// Drops the copy on `discard`; the segment becomes tiered on the other
    /// device and its bitmaps are released. The caller guarantees the
    /// surviving copy is fully valid.
    pub fn unmirror(&mut self, id: SegmentId, discard: Tier) -> Result<(), AddrError> {
        let seg = self.segments[id.0 as usize].as_mut().ok_or(AddrError::Unallocated(id))?;
        if seg.class != PlacementClass::Mirrored {
            return Err(AddrError::NotMirrored(id));
        }
        debug_assert_eq!(seg.only_valid_on(discard), 0, "discarding the only valid copy of {id}");
        let old = seg.addr[discard.index()].take().expect("mirrored copy");
        seg.class = PlacementClass::tiered(discard.other());
        seg.bitmaps = None;
        self.free[discard.index()].push(old);
        Ok(())
    }

    /// Records a full-subpage write of `range` that landed on `target`.
    pub fn apply_write(&mut self, id: SegmentId, range: std::ops::Range<u32>, target: Tier) -> Result<(), AddrError> {
        let per = self.geometry.subpages_per_segment();
        if range.start >= range.end || range.end > per {
            return Err(AddrError::BadRange { start: range.start, end: range.end, per_segment: per });
        }
        let seg = self.segments[id.0 as usize].as_mut().ok_or(AddrError::Unallocated(id))?;
        if seg.class != PlacementClass::Mirrored {
            return Err(AddrError::NotMirrored(id));
        }
        let b = seg.bitmaps.as_mut().expect("mirrored segment has bitmaps");
        b.invalid.fill(range.clone(), true);
        b.location.fill(range, target == Tier::Capacity);
        Ok(())
    }

    /// Marks every stale subpage clean (the caller copied the data); returns
    /// how many subpages were copied in each direction, indexed by
    /// destination tier.
    pub fn clean_segment(&mut self, id: SegmentId) -> Result<[u32; 2], AddrError> {
        let seg = self.segments[id.0 as usize].as_mut().ok_or(AddrError::Unallocated(id))?;
        if seg.class != PlacementClass::Mirrored {
            return Err(AddrError::NotMirrored(id));
        }
        let to_perf = seg.only_valid_on(Tier::Capacity);
        let to_cap = seg.only_valid_on(Tier::Performance);
        let b = seg.bitmaps.as_mut().expect("mirrored");
        b.invalid.words.iter_mut().for_each(|w| *w = 0);
        b.location.words.iter_mut().for_each(|w| *w = 0);
        Ok([to_perf, to_cap])
    }

    /// Applies hotness decay to every segment behind `epoch`.
    pub fn decay(&mut self, epoch: u64) {
        self.epoch = epoch;
        for seg in self.segments.iter_mut().flatten() {
            seg.decay_to(epoch);
        }
    }

    pub fn mirrored_count(&self) -> u32 {
        self.segments().filter(|s| s.class == PlacementClass::Mirrored).count() as u32
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut used = [vec![false; self.device_segments[0] as usize], vec![false; self.device_segments[1] as usize]];
        for t in Tier::BOTH {
            for p in &self.free[t.index()] {
                if std::mem::replace(&mut used[t.index()][p.0 as usize], true) {
                    return Err(format!("{t} segment {} free twice", p.0));
                }
            }
        }
        for seg in self.segments() {
            match seg.class {
                PlacementClass::Mirrored => {
                    if seg.addr.iter().any(Option::is_none) || seg.bitmaps.is_none() {
                        return Err(format!("mirrored {} missing a copy or bitmaps", seg.id));
                    }
                }
                c => {
                    let t = c.tier().expect("tiered");
                    if seg.addr[t.index()].is_none() || seg.addr[t.other().index()].is_some() {
                        return Err(format!("tiered {} has wrong addresses", seg.id));
                    }
                    if seg.bitmaps.is_some() {
                        return Err(format!("tiered {} holds bitmaps", seg.id));
                    }
                }
            }
            for t in Tier::BOTH {
                if let Some(p) = seg.addr[t.index()] {
                    if std::mem::replace(&mut used[t.index()][p.0 as usize], true) {
                        return Err(format!("{t} segment {} referenced twice", p.0));
                    }
                }
            }
        }
        for t in Tier::BOTH {
            if let Some(i) = used[t.index()].iter().position(|u| !u) {
                return Err(format!("{t} segment {i} leaked"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MB: u64 = 1 << 20;

    fn space(perf_segs: u64, cap_segs: u64) -> AddressSpace {
        let g = Geometry::default();
        AddressSpace::new(g, [perf_segs * 2 * MB, cap_segs * 2 * MB], (perf_segs + cap_segs) * 2 * MB, 0.025).unwrap()
    }

    #[test]
    fn table_footprint_sums_to_76() {
        assert_eq!(SEGMENT_METADATA_BYTES, 76);
        assert_eq!(metadata_footprint(2 * MB, 0.0, Geometry::default()), 76);
        assert_eq!(metadata_footprint(0, 0.5, Geometry::default()), 0);
    }

    #[test]
    fn resolve_examples() {
        let s = space(4, 4);
        assert_eq!(s.resolve(0).unwrap(), (SegmentId(0), 0));
        assert_eq!(s.resolve(2 * MB + 8192).unwrap(), (SegmentId(1), 2));
        assert!(matches!(s.resolve(100), Err(AddrError::Unaligned { .. })));
        assert!(matches!(s.resolve(16 * MB), Err(AddrError::OutOfRange { .. })));
    }

    #[test]
    fn sixteen_segments_then_out_of_space() {
        let mut s = space(16, 1);
        for _ in 0..16 {
            s.allocate_segment(Tier::Performance).unwrap();
        }
        assert_eq!(s.allocate_segment(Tier::Performance), Err(AddrError::OutOfSpace(Tier::Performance)));
    }

    #[test]
    fn alloc_free_alloc_keeps_totals() {
        let mut s = space(4, 4);
        let p = s.allocate_segment(Tier::Capacity).unwrap();
        s.free_segment(Tier::Capacity, p);
        s.allocate_segment(Tier::Capacity).unwrap();
        assert_eq!(s.free_segments(Tier::Capacity), 3);
    }

    #[test]
    fn write_transitions() {
        let mut s = space(4, 4);
        s.place_new(SegmentId(0), Tier::Performance).unwrap();
        assert!(matches!(s.apply_write(SegmentId(0), 0..1, Tier::Capacity), Err(AddrError::NotMirrored(_))));
        s.mirror(SegmentId(0)).unwrap();
        let seg = s.segment(SegmentId(0)).unwrap();
        assert_eq!(seg.valid_devices(3), ValidSet::BOTH);

        s.apply_write(SegmentId(0), 0..2, Tier::Capacity).unwrap();
        let seg = s.segment(SegmentId(0)).unwrap();
        assert_eq!(seg.subpage_state(0), SubpageState::InvalidOnPerf);
        assert_eq!(seg.valid_devices(1), ValidSet::only(Tier::Capacity));
        assert_eq!(seg.subpage_state(2), SubpageState::Clean);

        s.apply_write(SegmentId(0), 0..1, Tier::Capacity).unwrap();
        assert_eq!(s.segment(SegmentId(0)).unwrap().subpage_state(0), SubpageState::InvalidOnPerf);
        s.apply_write(SegmentId(0), 0..1, Tier::Performance).unwrap();
        assert_eq!(s.segment(SegmentId(0)).unwrap().subpage_state(0), SubpageState::InvalidOnCap);

        assert_eq!(s.clean_segment(SegmentId(0)).unwrap(), [1, 1]);
        assert!(s.segment(SegmentId(0)).unwrap().invalid_is_zero());
    }

    #[test]
    fn tiered_segment_validity() {
        let mut s = space(4, 4);
        s.place_new(SegmentId(1), Tier::Capacity).unwrap();
        assert_eq!(s.segment(SegmentId(1)).unwrap().valid_devices(0), ValidSet::only(Tier::Capacity));
    }

    #[test]
    fn unmirror_releases_bitmaps_and_copy() {
        let mut s = space(4, 4);
        s.place_new(SegmentId(0), Tier::Performance).unwrap();
        s.mirror(SegmentId(0)).unwrap();
        assert_eq!(s.free_segments(Tier::Capacity), 3);
        s.unmirror(SegmentId(0), Tier::Capacity).unwrap();
        let seg = s.segment(SegmentId(0)).unwrap();
        assert_eq!(seg.class, PlacementClass::TieredPerf);
        assert!(!seg.has_bitmaps());
        assert_eq!(s.free_segments(Tier::Capacity), 4);
        s.check_invariants().unwrap();
    }

    #[test]
    fn decay_halves_per_epoch() {
        let mut s = space(4, 4);
        s.place_new(SegmentId(0), Tier::Performance).unwrap();
        let seg = s.segment_mut(SegmentId(0)).unwrap();
        for _ in 0..300 {
            seg.record_read();
        }
        assert_eq!(seg.read_counter, 255);
        s.decay(1);
        assert_eq!(s.segment(SegmentId(0)).unwrap().read_counter, 127);
        s.decay(1);
        assert_eq!(s.segment(SegmentId(0)).unwrap().read_counter, 127);
    }

    proptest::proptest! {
        #[test]
        fn word_level_writes_match_per_subpage_model(
            writes in proptest::collection::vec((0u32..512, 1u32..200, proptest::bool::ANY), 1..40),
            query in (0u32..512, 1u32..512),
        ) {
            let mut s = space(2, 2);
            s.place_new(SegmentId(0), Tier::Performance).unwrap();
            s.mirror(SegmentId(0)).unwrap();
            let mut model = vec![SubpageState::Clean; 512];
            for (start, len, to_cap) in writes {
                let end = (start + len).min(512);
                let target = if to_cap { Tier::Capacity } else { Tier::Performance };
                s.apply_write(SegmentId(0), start..end, target).unwrap();
                for m in &mut model[start as usize..end as usize] {
                    *m = m.after_write(target);
                }
            }
            let seg = s.segment(SegmentId(0)).unwrap();
            for (i, m) in model.iter().enumerate() {
                proptest::prop_assert_eq!(seg.subpage_state(i as u32), *m);
            }
            let (qs, ql) = query;
            let qe = (qs + ql).min(512);
            let expect = model[qs as usize..qe as usize].iter().fold(ValidSet::BOTH, |a, m| a.intersect(m.valid()));
            proptest::prop_assert_eq!(seg.valid_for_range(qs..qe), expect);
        }
    }
}
