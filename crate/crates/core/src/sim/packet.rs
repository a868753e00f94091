use crate::codec::{encoded_len, CanaryPacket, FRAMING_OVERHEAD_BYTES, HEADER_BYTES};
use crate::fabric::WirePacket;
use crate::ids::BlockId;

/// Host-to-host messages of the recovery protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Control {
    RetransmitRequest { seq: u32, id: BlockId, from: u32 },
    FailureNotice { seq: u32, id: BlockId },
    FallbackNotice { seq: u32 },
    FallbackContribution { seq: u32, from: u32, data: Vec<i32> },
    Result { seq: u32, data: Vec<i32> },
}

impl Control {
    fn carries_data(&self) -> bool {
        matches!(self, Control::FallbackContribution { .. } | Control::Result { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreePacket {
    pub tree: u16,
    pub seq: u32,
    pub up: bool,
    pub data: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingPacket {
    pub chunk: u32,
    pub index: u32,
    pub step: u32,
    pub data: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    Canary(CanaryPacket),
    Control(Control),
    Tree(TreePacket),
    Ring(RingPacket),
    Background { source: u32 },
}

/// A packet in flight through the simulated fabric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimPacket {
    pub job: u16,
    /// Destination host for unicast bodies; unused for Canary and tree packets.
    pub dest: u32,
    pub wire: u32,
    pub body: Body,
}

impl SimPacket {
    pub fn canary(job: u16, packet: CanaryPacket) -> Self {
        let wire = (encoded_len(packet.data.len()) + FRAMING_OVERHEAD_BYTES) as u32;
        Self {
            job,
            dest: 0,
            wire,
            body: Body::Canary(packet),
        }
    }

    pub fn control(job: u16, dest: u32, control: Control, elements: usize) -> Self {
        let payload = if control.carries_data() { 4 * elements } else { 0 };
        Self {
            job,
            dest,
            wire: (HEADER_BYTES + payload + FRAMING_OVERHEAD_BYTES) as u32,
            body: Body::Control(control),
        }
    }

    pub fn tree(job: u16, packet: TreePacket) -> Self {
        let wire = (encoded_len(packet.data.len()) + FRAMING_OVERHEAD_BYTES) as u32;
        Self {
            job,
            dest: 0,
            wire,
            body: Body::Tree(packet),
        }
    }

    pub fn ring(job: u16, dest: u32, packet: RingPacket) -> Self {
        let wire = (encoded_len(packet.data.len()) + FRAMING_OVERHEAD_BYTES) as u32;
        Self {
            job,
            dest,
            wire,
            body: Body::Ring(packet),
        }
    }

    pub fn background(source: u32, dest: u32, payload: u64) -> Self {
        Self {
            job: u16::MAX,
            dest,
            wire: (payload as usize + HEADER_BYTES + FRAMING_OVERHEAD_BYTES) as u32,
            body: Body::Background { source },
        }
    }

    pub fn is_background(&self) -> bool {
        matches!(self.body, Body::Background { .. })
    }
}

impl WirePacket for SimPacket {
    fn wire_bytes(&self) -> u64 {
        self.wire as u64
    }

    fn lossless(&self) -> bool {
        !self.is_background()
    }

    fn tracked(&self) -> bool {
        !self.is_background()
    }
}
