//! Block identifiers and destination addresses.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Bits of the block id holding the per-application sequence number.
pub const SEQUENCE_BITS: u32 = 24;
pub const SEQUENCE_MASK: u32 = (1 << SEQUENCE_BITS) - 1;

/// Sequence numbers with this bit set are reserved for re-issued blocks.
pub const REISSUE_FLAG: u32 = 1 << (SEQUENCE_BITS - 1);

/// 32-bit block identifier: 8-bit application id followed by a 24-bit sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockId(pub u32);

impl BlockId {
    pub fn new(app_id: u8, sequence: u32) -> Self {
        debug_assert!(sequence <= SEQUENCE_MASK);
        BlockId(((app_id as u32) << SEQUENCE_BITS) | (sequence & SEQUENCE_MASK))
    }

    pub fn app_id(self) -> u8 {
        (self.0 >> SEQUENCE_BITS) as u8
    }

    pub fn sequence(self) -> u32 {
        self.0 & SEQUENCE_MASK
    }

    pub fn is_reissue(self) -> bool {
        self.sequence() & REISSUE_FLAG != 0
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.app_id(), self.sequence())
    }
}

/// Destinations with this bit set name a switch rather than a host.
pub const SWITCH_DESTINATION_FLAG: u32 = 0x8000_0000;

/// A packet destination: a host address or (for restoration packets) a switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Destination {
    Host(u32),
    /// Switch address plus the 32-port group the restoration bitmap refers to.
    Switch { address: u16, port_group: u8 },
}

impl Destination {
    pub fn encode(self) -> u32 {
        match self {
            Destination::Host(h) => {
                debug_assert!(h & SWITCH_DESTINATION_FLAG == 0);
                h
            }
            Destination::Switch { address, port_group } => {
                SWITCH_DESTINATION_FLAG | ((port_group as u32 & 0x7f) << 16) | address as u32
            }
        }
    }

    pub fn decode(raw: u32) -> Self {
        if raw & SWITCH_DESTINATION_FLAG == 0 {
            Destination::Host(raw)
        } else {
            Destination::Switch {
                address: raw as u16,
                port_group: ((raw >> 16) & 0x7f) as u8,
            }
        }
    }
}
