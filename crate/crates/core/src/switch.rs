//! Per-switch Canary state machine.
//!
//! A switch keeps a fixed-size table of block descriptors indexed by a hash of
//! the block id. Reduce-phase packets are aggregated into the descriptor until
//! its timer expires (or the aggregation counter says every contribution has
//! arrived), then a single aggregate moves on toward the leader. Broadcast
//! packets are replicated on the ports recorded in the descriptor, which is
//! then freed. Packets that collide with another block's descriptor bypass
//! the remaining switches and reach the leader directly, which later sends a
//! restoration packet carrying the ports to replicate on.
//!
//! Every operation is a pure transition on [`SwitchState`]; the caller owns
//! timers and packet delivery.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::codec::{encoded_len, CanaryPacket};
use crate::ids::{Destination, SEQUENCE_BITS};
use crate::time::SimTime;

pub type PortId = u16;

/// Ports per restoration bitmap group (the children field is 32 bits wide).
pub const RESTORATION_GROUP_PORTS: u16 = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("packet counter {counter} exceeds host count {hosts}")]
    CounterExceedsHosts { counter: u32, hosts: u16 },
    #[error("payload length {actual} does not match descriptor length {expected}")]
    PayloadLength { expected: usize, actual: usize },
    #[error("packet flags do not match the operation")]
    UnexpectedFlags,
    #[error("restoration packet carries an empty port bitmap")]
    EmptyRestorationBitmap,
    #[error("restoration packet is addressed to {0:#x}, not this switch")]
    MisaddressedRestoration(u32),
    #[error("port {port} is outside the switch's {port_count} ports")]
    PortOutOfRange { port: PortId, port_count: PortId },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("shard count {shards} does not divide port count {ports}")]
    ShardsDoNotDividePorts { ports: u16, shards: u16 },
    #[error("children bitmap is empty")]
    EmptyBitmap,
    #[error("{0}")]
    Invalid(String),
}

/// Seedable multiply-shift hash from block ids to descriptor slots.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SlotHasher {
    pub seed: u64,
}

impl SlotHasher {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn slot(&self, id: u32, table_size: u32) -> u32 {
        assert!(table_size >= 1, "table must have at least one slot");
        let mut x = (id as u64) ^ self.seed;
        x = x.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        x ^= x >> 29;
        x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x ^= x >> 32;
        // Map the high 32 bits onto [0, table_size) without modulo bias.
        (((x >> 32) * table_size as u64) >> 32) as u32
    }
}

/// Maps a block id to a slot with the unseeded hasher.
pub fn map_id_to_slot(id: u32, table_size: u32) -> u32 {
    SlotHasher::default().slot(id, table_size)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchConfig {
    /// 16-bit switch address written into collision-forwarded packets.
    pub address: u16,
    pub port_count: u16,
    /// Number of descriptor slots.
    pub table_size: u32,
    pub shard_count: u16,
    /// Aggregation window.
    pub timeout: SimTime,
    /// Timer check granularity; zero means exact timers.
    pub timer_granularity: SimTime,
    /// Send an aggregate as soon as its counter reaches the host count.
    pub early_completion: bool,
    pub hash_seed: u64,
    /// Static partitions of the table; application `a` uses partition `a % partitions`.
    pub partitions: u32,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        Self {
            address: 0,
            port_count: 64,
            table_size: 32_768,
            shard_count: 4,
            timeout: SimTime::from_micros(1),
            timer_granularity: SimTime::ZERO,
            early_completion: true,
            hash_seed: 0,
            partitions: 1,
        }
    }
}

/// Soft state for one reduction block at one switch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockDescriptor {
    pub id: u32,
    pub accumulator: Vec<i32>,
    pub counter_sum: u32,
    pub hosts: u16,
    /// Bit `p` set when port `p` contributed a reduce packet.
    pub children_bitmap: u64,
    pub leader_destination: u32,
    pub created_at: SimTime,
    pub sent_upstream: bool,
}

impl BlockDescriptor {
    fn upstream_packet(&self) -> CanaryPacket {
        CanaryPacket {
            destination: self.leader_destination,
            id: self.id,
            counter: self.counter_sum as u16,
            hosts: self.hosts,
            data: self.accumulator.clone(),
            ..CanaryPacket::default()
        }
    }

    pub fn children_ports(&self) -> Vec<PortId> {
        bitmap_ports(self.children_bitmap)
    }
}

/// Result of feeding one event to a switch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SwitchAction {
    /// A new descriptor was created; the caller arms a timer for `deadline`.
    /// `emit` is set when the single packet already completes the block.
    StoreNew {
        slot: u32,
        deadline: SimTime,
        emit: Option<CanaryPacket>,
    },
    /// Packet merged into an existing descriptor; `emit` holds the aggregate on early completion.
    Aggregate { slot: u32, emit: Option<CanaryPacket> },
    /// Late packet for an already-sent descriptor, forwarded unchanged toward the leader.
    Straggler { forward: CanaryPacket },
    /// Slot held by another block; the packet bypasses the remaining switches.
    CollisionForward { forward: CanaryPacket },
    /// Timer expiry: the aggregate moves on toward the leader.
    EmitUpstream { packet: CanaryPacket },
    /// Copies of `packet` go out on each of `ports`.
    Replicate { packet: CanaryPacket, ports: Vec<PortId> },
    Drop,
    Noop,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SwitchStats {
    pub stores: u64,
    pub aggregates: u64,
    pub early_completions: u64,
    pub timeouts: u64,
    pub stragglers: u64,
    pub collisions: u64,
    pub broadcasts: u64,
    pub broadcast_drops: u64,
    pub restorations: u64,
    pub peak_occupancy: usize,
}

#[derive(Debug, Clone)]
pub struct SwitchState {
    config: SwitchConfig,
    hasher: SlotHasher,
    /// Occupied slots of the fixed-size table, keyed by slot index.
    table: HashMap<u32, BlockDescriptor>,
    pub stats: SwitchStats,
}

impl SwitchState {
    pub fn new(config: SwitchConfig) -> Self {
        assert!(config.table_size >= 1);
        assert!(config.partitions >= 1);
        let hasher = SlotHasher::new(config.hash_seed);
        Self {
            config,
            hasher,
            table: HashMap::new(),
            stats: SwitchStats::default(),
        }
    }

    pub fn config(&self) -> &SwitchConfig {
        &self.config
    }

    pub fn occupancy(&self) -> usize {
        self.table.len()
    }

    pub fn descriptor(&self, slot: u32) -> Option<&BlockDescriptor> {
        self.table.get(&slot)
    }

    /// Slot that `id` maps to, honouring the static per-application partitions.
    pub fn slot_for(&self, id: u32) -> u32 {
        let partitions = self.config.partitions.min(self.config.table_size);
        let len = self.config.table_size / partitions;
        let app = id >> SEQUENCE_BITS;
        let base = (app % partitions) * len;
        base + self.hasher.slot(id, len)
    }

    /// Drops all soft state, as when the switch fails.
    pub fn reset(&mut self) {
        self.table.clear();
    }

    fn deadline(&self, created_at: SimTime) -> SimTime {
        (created_at + self.config.timeout).round_up_to(self.config.timer_granularity)
    }

    fn check_port(&self, port: PortId) -> Result<(), ProtocolError> {
        if port >= self.config.port_count || port >= 64 {
            return Err(ProtocolError::PortOutOfRange {
                port,
                port_count: self.config.port_count,
            });
        }
        Ok(())
    }

    /// Handles a reduce-phase packet arriving on `in_port`.
    pub fn on_reduce_packet(
        &mut self,
        pkt: CanaryPacket,
        in_port: PortId,
        now: SimTime,
    ) -> Result<SwitchAction, ProtocolError> {
        if !pkt.is_reduce() {
            return Err(ProtocolError::UnexpectedFlags);
        }
        if pkt.counter > pkt.hosts {
            return Err(ProtocolError::CounterExceedsHosts {
                counter: pkt.counter as u32,
                hosts: pkt.hosts,
            });
        }
        self.check_port(in_port)?;
        let slot = self.slot_for(pkt.id);
        let port_bit = 1u64 << in_port;
        let early = self.config.early_completion;

        let Some(desc) = self.table.get_mut(&slot) else {
            let complete = early && pkt.counter == pkt.hosts;
            let desc = BlockDescriptor {
                id: pkt.id,
                counter_sum: pkt.counter as u32,
                hosts: pkt.hosts,
                children_bitmap: port_bit,
                leader_destination: pkt.destination,
                created_at: now,
                sent_upstream: complete,
                accumulator: pkt.data,
            };
            let emit = complete.then(|| desc.upstream_packet());
            self.table.insert(slot, desc);
            self.stats.stores += 1;
            if complete {
                self.stats.early_completions += 1;
            }
            self.stats.peak_occupancy = self.stats.peak_occupancy.max(self.table.len());
            return Ok(SwitchAction::StoreNew {
                slot,
                deadline: self.deadline(now),
                emit,
            });
        };

        if desc.id != pkt.id {
            self.stats.collisions += 1;
            let mut forward = pkt;
            forward.bypass = true;
            forward.switch_address = self.config.address;
            forward.children = in_port as u32;
            return Ok(SwitchAction::CollisionForward { forward });
        }

        desc.children_bitmap |= port_bit;
        if desc.sent_upstream {
            self.stats.stragglers += 1;
            return Ok(SwitchAction::Straggler { forward: pkt });
        }

        let total = desc.counter_sum + pkt.counter as u32;
        if total > desc.hosts as u32 {
            return Err(ProtocolError::CounterExceedsHosts {
                counter: total,
                hosts: desc.hosts,
            });
        }
        if pkt.data.len() != desc.accumulator.len() {
            return Err(ProtocolError::PayloadLength {
                expected: desc.accumulator.len(),
                actual: pkt.data.len(),
            });
        }
        for (acc, x) in desc.accumulator.iter_mut().zip(&pkt.data) {
            *acc = acc.wrapping_add(*x);
        }
        desc.counter_sum = total;
        self.stats.aggregates += 1;

        let emit = if early && total == desc.hosts as u32 {
            desc.sent_upstream = true;
            self.stats.early_completions += 1;
            Some(desc.upstream_packet())
        } else {
            None
        };
        Ok(SwitchAction::Aggregate { slot, emit })
    }

    /// Timer expiry for `slot`. Fires only if the descriptor is due and not yet sent.
    pub fn on_timeout(&mut self, slot: u32, now: SimTime) -> SwitchAction {
        let deadline_of = |d: &BlockDescriptor| d.created_at + self.config.timeout;
        match self.table.get(&slot) {
            Some(desc) if !desc.sent_upstream && deadline_of(desc) <= now => {}
            _ => return SwitchAction::Noop,
        }
        let desc = self.table.get_mut(&slot).expect("checked above");
        desc.sent_upstream = true;
        self.stats.timeouts += 1;
        SwitchAction::EmitUpstream {
            packet: desc.upstream_packet(),
        }
    }

    /// Broadcast-phase packet: replicate to the recorded children and free the slot.
    pub fn on_broadcast_packet(&mut self, pkt: CanaryPacket, _now: SimTime) -> SwitchAction {
        debug_assert!(pkt.multicast);
        let slot = self.slot_for(pkt.id);
        match self.table.get(&slot) {
            Some(desc) if desc.id == pkt.id => {
                let desc = self.table.remove(&slot).expect("present");
                self.stats.broadcasts += 1;
                SwitchAction::Replicate {
                    packet: pkt,
                    ports: desc.children_ports(),
                }
            }
            _ => {
                self.stats.broadcast_drops += 1;
                SwitchAction::Drop
            }
        }
    }

    /// Restoration packet from the leader: replicate on the ports it names.
    pub fn on_restoration_packet(&mut self, pkt: CanaryPacket) -> Result<SwitchAction, ProtocolError> {
        if !pkt.bypass || pkt.multicast {
            return Err(ProtocolError::UnexpectedFlags);
        }
        let group = match Destination::decode(pkt.destination) {
            Destination::Switch { address, port_group } if address == self.config.address => port_group,
            _ => return Err(ProtocolError::MisaddressedRestoration(pkt.destination)),
        };
        if pkt.children == 0 {
            return Err(ProtocolError::EmptyRestorationBitmap);
        }
        let offset = group as u16 * RESTORATION_GROUP_PORTS;
        let ports: Vec<PortId> = bitmap_ports(pkt.children as u64)
            .into_iter()
            .map(|p| p + offset)
            .collect();
        for &p in &ports {
            self.check_port(p)?;
        }
        self.stats.restorations += 1;
        let packet = CanaryPacket {
            bypass: false,
            multicast: true,
            children: 0,
            switch_address: 0,
            ..pkt
        };
        Ok(SwitchAction::Replicate { packet, ports })
    }
}

/// Bytes held by one descriptor: the accumulator plus header-sized bookkeeping.
pub const fn descriptor_bytes(elements_per_packet: usize) -> usize {
    encoded_len(elements_per_packet)
}

/// Ports whose bit is set, ascending.
pub fn bitmap_ports(bitmap: u64) -> Vec<PortId> {
    (0..64u16).filter(|p| bitmap & (1u64 << p) != 0).collect()
}

/// Restoration packets needed to cover `bitmap`: one per 32-port group.
pub fn restoration_groups(bitmap: u64) -> Vec<(u8, u32)> {
    [(0u8, bitmap as u32), (1u8, (bitmap >> 32) as u32)]
        .into_iter()
        .filter(|&(_, bits)| bits != 0)
        .collect()
}

/// One shard of a children bitmap, with its index prepended to form a multicast group key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ShardEntry {
    pub index: u16,
    pub bits: u64,
    /// Ports per shard.
    pub width: u16,
}

impl ShardEntry {
    pub fn key(&self) -> u64 {
        ((self.index as u64) << self.width) | self.bits
    }

    pub fn ports(&self) -> Vec<PortId> {
        bitmap_ports(self.bits)
            .into_iter()
            .map(|p| p + self.index * self.width)
            .collect()
    }
}

fn shard_width(port_count: u16, shard_count: u16) -> Result<u16, ConfigError> {
    if shard_count == 0 || port_count == 0 || !port_count.is_multiple_of(shard_count) {
        return Err(ConfigError::ShardsDoNotDividePorts {
            ports: port_count,
            shards: shard_count,
        });
    }
    if port_count > 64 {
        return Err(ConfigError::Invalid(format!("{port_count} ports exceed the 64-bit bitmap")));
    }
    Ok(port_count / shard_count)
}

/// Splits a children bitmap into `shard_count` shards, keeping only non-empty ones.
pub fn shard_children_bitmap(
    bitmap: u64,
    port_count: u16,
    shard_count: u16,
) -> Result<Vec<ShardEntry>, ConfigError> {
    let width = shard_width(port_count, shard_count)?;
    if bitmap == 0 {
        return Err(ConfigError::EmptyBitmap);
    }
    let mask = if width == 64 { u64::MAX } else { (1u64 << width) - 1 };
    Ok((0..shard_count)
        .map(|index| ShardEntry {
            index,
            bits: (bitmap >> (index * width)) & mask,
            width,
        })
        .filter(|e| e.bits != 0)
        .collect())
}

/// Inverse of [`shard_children_bitmap`].
pub fn reassemble_shards(entries: &[ShardEntry]) -> u64 {
    entries
        .iter()
        .fold(0, |acc, e| acc | (e.bits << (e.index * e.width)))
}

/// Number of multicast groups a switch must pre-install: `2^(p/s) * s`.
pub fn multicast_key_space(port_count: u16, shard_count: u16) -> Result<u64, ConfigError> {
    let width = shard_width(port_count, shard_count)?;
    if width >= 58 {
        return Err(ConfigError::Invalid(format!("shard width {width} overflows the key space")));
    }
    Ok((1u64 << width) * shard_count as u64)
}

/// Pre-installed multicast rules: group key to output ports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardRuleTable {
    pub width: u16,
    pub rules: BTreeMap<u64, Vec<PortId>>,
}

impl ShardRuleTable {
    /// Enumerates every rule; intended for small switches (the table has `2^(p/s)*s` entries).
    pub fn build(port_count: u16, shard_count: u16) -> Result<Self, ConfigError> {
        let width = shard_width(port_count, shard_count)?;
        if width > 16 {
            return Err(ConfigError::Invalid(format!("refusing to enumerate 2^{width} shard values")));
        }
        let mut rules = BTreeMap::new();
        for index in 0..shard_count {
            for bits in 0..(1u64 << width) {
                let e = ShardEntry { index, bits, width };
                rules.insert(e.key(), e.ports());
            }
        }
        Ok(Self { width, rules })
    }

    pub fn lookup(&self, key: u64) -> Option<&[PortId]> {
        self.rules.get(&key).map(Vec::as_slice)
    }

    /// One `key -> [ports]` line per rule, keys in binary.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let key_bits = self.width as usize + 1;
        for (key, ports) in &self.rules {
            let ports: Vec<String> = ports.iter().map(u16::to_string).collect();
            let _ = writeln!(out, "{key:0key_bits$b} -> [{}]", ports.join(","));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ID: u32 = 0x0100_0001;

    fn switch(table_size: u32) -> SwitchState {
        SwitchState::new(SwitchConfig {
            address: 7,
            port_count: 16,
            table_size,
            ..SwitchConfig::default()
        })
    }

    fn pkt(id: u32, counter: u16, hosts: u16, value: i32) -> CanaryPacket {
        CanaryPacket {
            destination: 3,
            id,
            counter,
            hosts,
            data: vec![value; 4],
            ..Default::default()
        }
    }

    fn t(us: u64) -> SimTime {
        SimTime::from_micros(us)
    }

    #[test]
    fn single_slot_table() {
        assert_eq!(map_id_to_slot(12345, 1), 0);
        assert_eq!(map_id_to_slot(ID, 32768), map_id_to_slot(ID, 32768));
    }

    #[test]
    fn first_packet_creates_descriptor() {
        let mut sw = switch(1024);
        let action = sw.on_reduce_packet(pkt(ID, 1, 8, 5), 3, t(0)).unwrap();
        let SwitchAction::StoreNew { slot, deadline, emit } = action else {
            panic!("expected StoreNew, got {action:?}");
        };
        assert_eq!(deadline, t(1));
        assert!(emit.is_none());
        let d = sw.descriptor(slot).unwrap();
        assert_eq!(d.children_bitmap, 1 << 3);
        assert_eq!(d.counter_sum, 1);
        assert_eq!(d.accumulator, vec![5; 4]);
    }

    #[test]
    fn second_packet_aggregates() {
        let mut sw = switch(1024);
        sw.on_reduce_packet(pkt(ID, 1, 8, 5), 0, t(0)).unwrap();
        let action = sw.on_reduce_packet(pkt(ID, 1, 8, 2), 1, t(0)).unwrap();
        let SwitchAction::Aggregate { slot, emit: None } = action else {
            panic!("expected Aggregate, got {action:?}");
        };
        let d = sw.descriptor(slot).unwrap();
        assert_eq!(d.counter_sum, 2);
        assert_eq!(d.accumulator, vec![7; 4]);
        assert_eq!(d.children_bitmap, 0b11);

        let SwitchAction::EmitUpstream { packet } = sw.on_timeout(slot, t(1)) else {
            panic!("timeout should emit");
        };
        assert_eq!(packet.counter, 2);
        assert_eq!(packet.hosts, 8);
        assert_eq!(packet.destination, 3);
    }

    #[test]
    fn completion_emits_immediately() {
        let mut sw = switch(1024);
        sw.on_reduce_packet(pkt(ID, 7, 8, 1), 0, t(0)).unwrap();
        let action = sw.on_reduce_packet(pkt(ID, 1, 8, 1), 1, t(0)).unwrap();
        let SwitchAction::Aggregate { slot, emit: Some(up) } = action else {
            panic!("expected early completion, got {action:?}");
        };
        assert_eq!(up.counter, 8);
        assert_eq!(up.data, vec![2; 4]);
        assert_eq!(sw.on_timeout(slot, t(1)), SwitchAction::Noop);
    }

    #[test]
    fn early_completion_can_be_disabled() {
        let mut sw = SwitchState::new(SwitchConfig {
            port_count: 16,
            early_completion: false,
            ..SwitchConfig::default()
        });
        sw.on_reduce_packet(pkt(ID, 1, 2, 1), 0, t(0)).unwrap();
        let action = sw.on_reduce_packet(pkt(ID, 1, 2, 1), 1, t(0)).unwrap();
        assert!(matches!(action, SwitchAction::Aggregate { emit: None, .. }));
    }

    #[test]
    fn collision_forwards_with_bypass() {
        let mut sw = switch(1);
        sw.on_reduce_packet(pkt(ID, 1, 8, 1), 0, t(0)).unwrap();
        let action = sw.on_reduce_packet(pkt(ID + 1, 1, 8, 9), 5, t(0)).unwrap();
        let SwitchAction::CollisionForward { forward } = action else {
            panic!("expected collision, got {action:?}");
        };
        assert!(forward.bypass);
        assert_eq!(forward.switch_address, 7);
        assert_eq!(forward.children, 5);
        assert_eq!(forward.data, vec![9; 4]);
        assert_eq!(sw.stats.collisions, 1);
    }

    #[test]
    fn straggler_updates_children_and_forwards() {
        let mut sw = switch(1024);
        let SwitchAction::StoreNew { slot, .. } = sw.on_reduce_packet(pkt(ID, 1, 8, 1), 0, t(0)).unwrap() else {
            unreachable!()
        };
        sw.on_timeout(slot, t(1));
        let late = pkt(ID, 1, 8, 4);
        let action = sw.on_reduce_packet(late.clone(), 6, t(2)).unwrap();
        assert_eq!(action, SwitchAction::Straggler { forward: late });
        assert_eq!(sw.descriptor(slot).unwrap().children_bitmap, 1 | 1 << 6);
    }

    #[test]
    fn timeout_is_noop_when_already_sent_or_early() {
        let mut sw = switch(1024);
        let SwitchAction::StoreNew { slot, .. } = sw.on_reduce_packet(pkt(ID, 1, 8, 1), 0, t(0)).unwrap() else {
            unreachable!()
        };
        assert_eq!(sw.on_timeout(slot, SimTime::from_nanos(999)), SwitchAction::Noop);
        assert!(matches!(sw.on_timeout(slot, t(1)), SwitchAction::EmitUpstream { .. }));
        assert_eq!(sw.on_timeout(slot, t(2)), SwitchAction::Noop);
    }

    #[test]
    fn counter_overshoot_is_rejected() {
        let mut sw = switch(1024);
        assert!(matches!(
            sw.on_reduce_packet(pkt(ID, 3, 2, 1), 0, t(0)),
            Err(ProtocolError::CounterExceedsHosts { .. })
        ));
    }

    #[test]
    fn broadcast_replicates_and_frees() {
        let mut sw = switch(1024);
        sw.on_reduce_packet(pkt(ID, 1, 8, 1), 1, t(0)).unwrap();
        sw.on_reduce_packet(pkt(ID, 1, 8, 1), 4, t(0)).unwrap();
        let mut bcast = pkt(ID, 8, 8, 42);
        bcast.multicast = true;
        let SwitchAction::Replicate { ports, packet } = sw.on_broadcast_packet(bcast.clone(), t(3)) else {
            panic!("expected replicate");
        };
        assert_eq!(ports, vec![1, 4]);
        assert_eq!(packet, bcast);
        assert_eq!(sw.occupancy(), 0);
        assert_eq!(sw.on_broadcast_packet(bcast, t(3)), SwitchAction::Drop);
    }

    #[test]
    fn broadcast_without_descriptor_is_dropped() {
        let mut sw = switch(1);
        sw.on_reduce_packet(pkt(ID, 1, 8, 1), 1, t(0)).unwrap();
        let mut other = pkt(ID + 1, 8, 8, 0);
        other.multicast = true;
        assert_eq!(sw.on_broadcast_packet(other, t(1)), SwitchAction::Drop);
        assert_eq!(sw.occupancy(), 1);
    }

    #[test]
    fn single_child_broadcast() {
        let mut sw = switch(16);
        sw.on_reduce_packet(pkt(ID, 1, 8, 1), 9, t(0)).unwrap();
        let mut b = pkt(ID, 8, 8, 1);
        b.multicast = true;
        let SwitchAction::Replicate { ports, .. } = sw.on_broadcast_packet(b, t(1)) else {
            panic!()
        };
        assert_eq!(ports, vec![9]);
    }

    fn restoration(bitmap: u32) -> CanaryPacket {
        CanaryPacket {
            destination: Destination::Switch { address: 7, port_group: 0 }.encode(),
            id: ID,
            counter: 8,
            hosts: 8,
            children: bitmap,
            switch_address: 7,
            bypass: true,
            multicast: false,
            data: vec![3; 4],
        }
    }

    #[test]
    fn restoration_replicates_on_bitmap() {
        let mut sw = switch(1);
        let SwitchAction::Replicate { packet, ports } = sw.on_restoration_packet(restoration(1 << 2)).unwrap() else {
            panic!()
        };
        assert_eq!(ports, vec![2]);
        assert!(packet.multicast && !packet.bypass);

        let SwitchAction::Replicate { ports, .. } = sw.on_restoration_packet(restoration(0b1011)).unwrap() else {
            panic!()
        };
        assert_eq!(ports.len(), 3);
        assert_eq!(sw.occupancy(), 0);
    }

    #[test]
    fn restoration_rejects_empty_bitmap() {
        let mut sw = switch(1);
        assert_eq!(
            sw.on_restoration_packet(restoration(0)),
            Err(ProtocolError::EmptyRestorationBitmap)
        );
    }

    #[test]
    fn partitions_confine_slots() {
        let sw = SwitchState::new(SwitchConfig {
            table_size: 100,
            partitions: 4,
            ..SwitchConfig::default()
        });
        for seq in 0..500 {
            let a = sw.slot_for(crate::ids::BlockId::new(2, seq).0);
            assert!((50..75).contains(&a));
        }
    }

    #[test]
    fn shard_worked_example() {
        let entries = shard_children_bitmap(0b0010_1101, 8, 2).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!((entries[0].index, entries[0].bits), (0, 0b1101));
        assert_eq!(entries[0].ports(), vec![0, 2, 3]);
        assert_eq!(entries[0].key(), 0b0_1101);
        assert_eq!((entries[1].index, entries[1].bits), (1, 0b0010));
        assert_eq!(entries[1].ports(), vec![5]);
        assert_eq!(entries[1].key(), 0b1_0010);
    }

    #[test]
    fn shard_key_space() {
        assert_eq!(multicast_key_space(64, 4).unwrap(), 262_144);
        assert_eq!(multicast_key_space(8, 2).unwrap(), 32);
        assert!(matches!(
            multicast_key_space(64, 5),
            Err(ConfigError::ShardsDoNotDividePorts { .. })
        ));
    }

    #[test]
    fn single_bit_bitmap_has_one_shard() {
        assert_eq!(shard_children_bitmap(1 << 40, 64, 4).unwrap().len(), 1);
        assert_eq!(shard_children_bitmap(0, 8, 2), Err(ConfigError::EmptyBitmap));
    }

    #[test]
    fn rule_table_matches_shards() {
        let table = ShardRuleTable::build(8, 2).unwrap();
        assert_eq!(table.rules.len() as u64, multicast_key_space(8, 2).unwrap());
        assert_eq!(table.lookup(0b1_0010).unwrap(), &[5]);
        assert_eq!(table.lookup(0b0_1101).unwrap(), &[0, 2, 3]);
        assert!(table.dump().contains("10010 -> [5]"));
    }

    #[test]
    fn restoration_groups_split_wide_bitmaps() {
        assert_eq!(restoration_groups(0b101), vec![(0, 0b101)]);
        assert_eq!(restoration_groups(1 << 40 | 1), vec![(0, 1), (1, 1 << 8)]);
    }
}
