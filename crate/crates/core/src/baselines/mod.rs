//! Comparison policies. All share the hotness tracker kept in
//! [`SegmentMeta`](crate::addrspace::SegmentMeta) so that they differ only in
//! placement and routing.

pub mod batman;
pub mod colloid;
pub mod hemem;
pub mod nhc;
pub mod striping;

pub use batman::{partition, Batman, BatmanConfig};
pub use colloid::{Colloid, ColloidConfig, ColloidVariant};
pub use hemem::{HeMem, HeMemConfig};
pub use nhc::{Nhc, NhcConfig};
pub use striping::{Striping, StripingConfig};

use crate::addrspace::{PlacementClass, SegmentId};
use crate::devsim::Tier;
use crate::policy::{BgClass, Ctx};

/// Moves a tiered segment to `to`, recording the transfer. Returns false if
/// the segment is not tiered on the other device or `to` is full.
pub(crate) fn migrate(ctx: &mut Ctx<'_>, seg: SegmentId, to: Tier) -> bool {
    let from = to.other();
    if ctx.space.segment(seg).map(|s| s.class) != Some(PlacementClass::tiered(from)) {
        return false;
    }
    if ctx.space.move_tiered(seg, to).is_err() {
        return false;
    }
    let class = match to {
        Tier::Performance => BgClass::MigrateToPerf,
        Tier::Capacity => BgClass::MigrateToCap,
    };
    let bytes = ctx.segment_bytes();
    ctx.transfer(from, bytes, class);
    ctx.stats.migrations += 1;
    true
}
