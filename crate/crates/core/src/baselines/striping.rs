//! Static round-robin placement over fixed-size stripes.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::addrspace::{AddressSpace, SegmentId};
use crate::devsim::Tier;
use crate::policy::{tiered_route, Ctx, Policy, Route, TickInput};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StripingConfig {
    /// Stripe unit in bytes; must be a multiple of the segment size.
    pub stripe_unit_bytes: u64,
}

impl Default for StripingConfig {
    fn default() -> Self {
        StripingConfig { stripe_unit_bytes: crate::addrspace::DEFAULT_SEGMENT_SIZE }
    }
}

pub struct Striping {
    segments_per_stripe: u32,
}

impl Striping {
    pub fn new(config: StripingConfig, segment_size: u64) -> Result<Self, String> {
        if config.stripe_unit_bytes == 0 || config.stripe_unit_bytes % segment_size != 0 {
            return Err(format!(
                "striping.stripe_unit_bytes {} must be a positive multiple of the segment size {segment_size}",
                config.stripe_unit_bytes
            ));
        }
        Ok(Striping { segments_per_stripe: (config.stripe_unit_bytes / segment_size) as u32 })
    }

    pub fn device_for(&self, seg: SegmentId) -> Tier {
        if (seg.0 / self.segments_per_stripe) % 2 == 0 {
            Tier::Performance
        } else {
            Tier::Capacity
        }
    }
}

impl Policy for Striping {
    fn name(&self) -> &'static str {
        "striping"
    }

    fn initial_tier(&self, seg: SegmentId, _space: &AddressSpace) -> Tier {
        self.device_for(seg)
    }

    fn route_read(&mut self, ctx: &mut Ctx<'_>, seg: SegmentId, _range: Range<u32>) -> Route {
        tiered_route(ctx.space.segment(seg).expect("allocated")).expect("single copy")
    }

    fn route_write(&mut self, ctx: &mut Ctx<'_>, seg: SegmentId, range: Range<u32>) -> Route {
        self.route_read(ctx, seg, range)
    }

    fn tick(&mut self, _ctx: &mut Ctx<'_>, _input: &TickInput) {}
}
