//! Wire format of Canary packets.
//!
//! ```text
//!  0               4               8       10      12              16      18  19
//!  +---------------+---------------+-------+-------+---------------+-------+---+----------
//!  |  destination  |      id       |counter| hosts |   children    |sw addr|flg| data ...
//!  +---------------+---------------+-------+-------+---------------+-------+---+----------
//!  flg: bit 7 = bypass, bit 6 = multicast, bits 5..0 = padding (zero)
//!  data: E big-endian two's-complement 32-bit fixed-point elements
//! ```
//!
//! All multi-byte fields are big-endian (network order).

use thiserror::Error;

/// Size of the fixed header in bytes.
pub const HEADER_BYTES: usize = 19;

/// Ethernet header (14) plus framing overhead (24) charged on every link traversal.
pub const FRAMING_OVERHEAD_BYTES: usize = 38;

/// Elements per packet supported by the single-pipeline switch prototype.
pub const TOFINO_ELEMENTS: usize = 32;

/// Elements per packet used for the large-network experiments.
pub const LARGE_NETWORK_ELEMENTS: usize = 256;

const BYPASS_BIT: u8 = 0x80;
const MULTICAST_BIT: u8 = 0x40;
const PADDING_MASK: u8 = 0x3f;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("packet carries {actual} elements, expected {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("buffer is {actual} bytes, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("bypass and multicast flags are both set")]
    FlagConflict,
    #[error("padding bits are not zero (flags byte {0:#04x})")]
    NonZeroPadding(u8),
}

/// One Canary packet: header fields plus fixed-point payload.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct CanaryPacket {
    /// Address of the block's leader host, or a switch address for restoration packets.
    pub destination: u32,
    /// Block identifier (application id in the high bits, sequence in the low bits).
    pub id: u32,
    /// Number of host contributions already reduced into `data`.
    pub counter: u16,
    /// Number of host contributions expected on the network for this block.
    pub hosts: u16,
    /// Ingress port on collision-forwarded packets, port bitmap on restoration packets.
    pub children: u32,
    /// Address of the switch that detected a collision.
    pub switch_address: u16,
    pub bypass: bool,
    pub multicast: bool,
    pub data: Vec<i32>,
}

impl CanaryPacket {
    /// A reduce-phase packet carrying one host contribution.
    pub fn contribution(destination: u32, id: u32, hosts: u16, data: Vec<i32>) -> Self {
        Self {
            destination,
            id,
            counter: 1,
            hosts,
            data,
            ..Self::default()
        }
    }

    pub fn is_reduce(&self) -> bool {
        !self.bypass && !self.multicast
    }
}

/// Encoded size of a packet with `elements_per_packet` payload elements.
pub const fn encoded_len(elements_per_packet: usize) -> usize {
    HEADER_BYTES + 4 * elements_per_packet
}

/// Encodes `packet` into a freshly allocated buffer.
pub fn encode(packet: &CanaryPacket, elements_per_packet: usize) -> Result<Vec<u8>, CodecError> {
    let mut buf = Vec::with_capacity(encoded_len(elements_per_packet));
    encode_into(packet, elements_per_packet, &mut buf)?;
    Ok(buf)
}

/// Appends the encoding of `packet` to `buf`.
pub fn encode_into(
    packet: &CanaryPacket,
    elements_per_packet: usize,
    buf: &mut Vec<u8>,
) -> Result<(), CodecError> {
    if packet.data.len() != elements_per_packet {
        return Err(CodecError::DataLength {
            expected: elements_per_packet,
            actual: packet.data.len(),
        });
    }
    if packet.bypass && packet.multicast {
        return Err(CodecError::FlagConflict);
    }
    buf.reserve(encoded_len(elements_per_packet));
    buf.extend_from_slice(&packet.destination.to_be_bytes());
    buf.extend_from_slice(&packet.id.to_be_bytes());
    buf.extend_from_slice(&packet.counter.to_be_bytes());
    buf.extend_from_slice(&packet.hosts.to_be_bytes());
    buf.extend_from_slice(&packet.children.to_be_bytes());
    buf.extend_from_slice(&packet.switch_address.to_be_bytes());
    let mut flags = 0u8;
    if packet.bypass {
        flags |= BYPASS_BIT;
    }
    if packet.multicast {
        flags |= MULTICAST_BIT;
    }
    buf.push(flags);
    for element in &packet.data {
        buf.extend_from_slice(&element.to_be_bytes());
    }
    Ok(())
}

/// Decodes a packet; the buffer must hold exactly one packet of `elements_per_packet` elements.
pub fn decode(bytes: &[u8], elements_per_packet: usize) -> Result<CanaryPacket, CodecError> {
    let expected = encoded_len(elements_per_packet);
    if bytes.len() != expected {
        return Err(CodecError::BufferLength {
            expected,
            actual: bytes.len(),
        });
    }
    let u32_at = |at: usize| u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
    let u16_at = |at: usize| u16::from_be_bytes([bytes[at], bytes[at + 1]]);

    let flags = bytes[18];
    if flags & PADDING_MASK != 0 {
        return Err(CodecError::NonZeroPadding(flags));
    }
    let bypass = flags & BYPASS_BIT != 0;
    let multicast = flags & MULTICAST_BIT != 0;
    if bypass && multicast {
        return Err(CodecError::FlagConflict);
    }
    let data = bytes[HEADER_BYTES..]
        .chunks_exact(4)
        .map(|c| i32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    Ok(CanaryPacket {
        destination: u32_at(0),
        id: u32_at(4),
        counter: u16_at(8),
        hosts: u16_at(10),
        children: u32_at(12),
        switch_address: u16_at(16),
        bypass,
        multicast,
        data,
    })
}

/// Renders bytes as a whitespace-separated hex dump, 16 bytes per line.
pub fn to_hex_dump(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 3);
    for line in bytes.chunks(16) {
        let words: Vec<String> = line.iter().map(|b| format!("{b:02x}")).collect();
        out.push_str(&words.join(" "));
        out.push('\n');
    }
    out
}

/// Parses a hex dump produced by [`to_hex_dump`]; `#` starts a comment.
pub fn from_hex_dump(text: &str) -> Option<Vec<u8>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace)
        .map(|w| u8::from_str_radix(w, 16).ok())
        .collect()
}
