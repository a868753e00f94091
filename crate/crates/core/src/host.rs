//! Host-side protocol: packetization, block roles, leader aggregation, loss
//! recovery and completion.
//!
//! Each block has one leader among the participating hosts. The leader keeps
//! its own contribution off the network, so a block of `N` participants
//! expects `N - 1` contributions on the wire; that is the value carried in the
//! packets' `hosts` field.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::codec::CanaryPacket;
use crate::ids::{BlockId, Destination, REISSUE_FLAG, SEQUENCE_MASK};
use crate::switch::restoration_groups;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HostError {
    #[error("payload is empty")]
    EmptyPayload,
    #[error("elements per packet must be positive")]
    ZeroElements,
    #[error("{blocks} blocks do not fit the 23-bit sequence space")]
    TooManyBlocks { blocks: usize },
    #[error("host list is empty")]
    NoHosts,
    #[error("leader of block {id} received counter {received} beyond the {expected} expected contributions")]
    CounterOvershoot { id: BlockId, received: u32, expected: u32 },
    #[error("payload length {actual} does not match block length {expected}")]
    PayloadLength { expected: usize, actual: usize },
}

/// One reduction block of a host's vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub sequence: u32,
    pub id: BlockId,
    pub data: Vec<i32>,
}

/// Splits `payload` into blocks of `elements_per_packet` elements, zero-padding the last one.
pub fn packetize(payload: &[i32], app_id: u8, elements_per_packet: usize) -> Result<Vec<Block>, HostError> {
    if payload.is_empty() {
        return Err(HostError::EmptyPayload);
    }
    if elements_per_packet == 0 {
        return Err(HostError::ZeroElements);
    }
    let blocks = payload.len().div_ceil(elements_per_packet);
    if blocks as u32 > REISSUE_FLAG {
        return Err(HostError::TooManyBlocks { blocks });
    }
    Ok(payload
        .chunks(elements_per_packet)
        .enumerate()
        .map(|(i, chunk)| {
            let mut data = chunk.to_vec();
            data.resize(elements_per_packet, 0);
            Block {
                sequence: i as u32,
                id: BlockId::new(app_id, i as u32),
                data,
            }
        })
        .collect())
}

/// Number of network contributions per block for `participants` hosts.
pub fn contributors(participants: usize) -> u16 {
    participants.saturating_sub(1) as u16
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRoles {
    pub leader: u32,
    /// Edge switch attached to the leader; aggregation for the block converges there.
    pub root_switch: u16,
}

/// Round-robin leader assignment: block `b` is led by `hosts[b mod N]`.
pub fn assign_block_roles(
    block_seq: u32,
    hosts: &[u32],
    edge_of: impl Fn(u32) -> u16,
) -> Result<BlockRoles, HostError> {
    if hosts.is_empty() {
        return Err(HostError::NoHosts);
    }
    let leader = hosts[block_seq as usize % hosts.len()];
    Ok(BlockRoles {
        leader,
        root_switch: edge_of(leader),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HostConfig {
    /// Initial round-trip estimate between this host and the leaders.
    pub initial_rtt: SimTime,
    /// Lower bound on the retransmission timeout.
    pub min_timeout: SimTime,
    /// Failed retransmissions tolerated before the host-based fallback.
    pub max_retries: u32,
}

impl Default for HostConfig {
    fn default() -> Self {
        Self {
            initial_rtt: SimTime::from_micros(10),
            min_timeout: SimTime::ZERO,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingBlock {
    pub sequence: u32,
    pub current_id: BlockId,
    pub send_time: SimTime,
    pub first_send: SimTime,
    pub retransmit_count: u32,
    pub done: bool,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HostAction {
    Ignore,
    /// Ask the leader for the reduced data (or for a re-issue).
    RequestRetransmission { sequence: u32, id: BlockId },
    /// Send this host's contribution directly to the leader.
    SendFallbackContribution { sequence: u32 },
    /// Re-send the block's contribution under a fresh id.
    Resend { sequence: u32, id: BlockId },
}

/// Per-host send and receive bookkeeping for one allreduce.
#[derive(Debug, Clone)]
pub struct HostState {
    pub host_id: u32,
    pub app_id: u8,
    config: HostConfig,
    blocks: BTreeMap<u32, PendingBlock>,
    total_blocks: usize,
    done_blocks: usize,
    smoothed_rtt: SimTime,
    pub retransmissions: u64,
    pub fallbacks: u64,
}

impl HostState {
    pub fn new(host_id: u32, app_id: u8, total_blocks: usize, config: HostConfig) -> Self {
        Self {
            host_id,
            app_id,
            config,
            blocks: BTreeMap::new(),
            total_blocks,
            done_blocks: 0,
            smoothed_rtt: config.initial_rtt,
            retransmissions: 0,
            fallbacks: 0,
        }
    }

    /// Current retransmission timeout: twice the smoothed round trip.
    pub fn retransmit_timeout(&self) -> SimTime {
        self.smoothed_rtt.times(2).max(self.config.min_timeout)
    }

    pub fn block(&self, sequence: u32) -> Option<&PendingBlock> {
        self.blocks.get(&sequence)
    }

    pub fn is_complete(&self) -> bool {
        self.done_blocks == self.total_blocks
    }

    pub fn done_blocks(&self) -> usize {
        self.done_blocks
    }

    pub fn in_flight(&self) -> usize {
        self.blocks.len() - self.done_blocks
    }

    /// Records that the block's contribution left the host (or, for led blocks, started).
    pub fn record_send(&mut self, sequence: u32, id: BlockId, now: SimTime) {
        self.blocks.insert(
            sequence,
            PendingBlock {
                sequence,
                current_id: id,
                send_time: now,
                first_send: now,
                retransmit_count: 0,
                done: false,
                fallback: false,
            },
        );
    }

    /// Reduced data for `sequence` arrived. Returns true when this marks the block done.
    pub fn on_result(&mut self, sequence: u32, now: SimTime) -> bool {
        let Some(block) = self.blocks.get_mut(&sequence) else {
            return false;
        };
        if block.done {
            return false;
        }
        block.done = true;
        self.done_blocks += 1;
        if block.retransmit_count == 0 {
            let sample = now.saturating_sub(block.first_send);
            self.smoothed_rtt = SimTime((self.smoothed_rtt.0 * 7 + sample.0) / 8);
        }
        true
    }

    /// Retransmission timer expiry.
    pub fn host_on_timeout(&mut self, sequence: u32, now: SimTime) -> HostAction {
        let rto = self.retransmit_timeout();
        let max_retries = self.config.max_retries;
        let Some(block) = self.blocks.get_mut(&sequence) else {
            return HostAction::Ignore;
        };
        if block.done || now < block.send_time + rto {
            return HostAction::Ignore;
        }
        block.send_time = now;
        if block.fallback || block.retransmit_count >= max_retries {
            if !block.fallback {
                block.fallback = true;
                self.fallbacks += 1;
            }
            return HostAction::SendFallbackContribution { sequence };
        }
        block.retransmit_count += 1;
        self.retransmissions += 1;
        HostAction::RequestRetransmission {
            sequence,
            id: block.current_id,
        }
    }

    /// The leader asked for the block to be reduced again under `new_id`.
    pub fn on_failure_notice(&mut self, sequence: u32, new_id: BlockId, now: SimTime) -> HostAction {
        let Some(block) = self.blocks.get_mut(&sequence) else {
            return HostAction::Ignore;
        };
        if block.done || block.fallback || block.current_id == new_id {
            return HostAction::Ignore;
        }
        block.current_id = new_id;
        block.send_time = now;
        HostAction::Resend { sequence, id: new_id }
    }

    /// The leader switched the block to the host-based fallback.
    pub fn on_fallback_notice(&mut self, sequence: u32, now: SimTime) -> HostAction {
        let Some(block) = self.blocks.get_mut(&sequence) else {
            return HostAction::Ignore;
        };
        if block.done {
            return HostAction::Ignore;
        }
        if !block.fallback {
            block.fallback = true;
            self.fallbacks += 1;
        }
        block.send_time = now;
        HostAction::SendFallbackContribution { sequence }
    }

    /// Maps a (possibly re-issued) block id back to its sequence number.
    pub fn sequence_of(&self, id: BlockId) -> Option<u32> {
        if !id.is_reissue() {
            return Some(id.sequence());
        }
        self.blocks
            .values()
            .find(|b| b.current_id == id)
            .map(|b| b.sequence)
    }
}

/// Allocates fresh block ids for re-issued reductions from the reserved range.
#[derive(Debug, Clone)]
pub struct ReissueIds {
    app_id: u8,
    prefix: u32,
    next: u32,
}

impl ReissueIds {
    /// `host_index` partitions the reserved range so leaders never hand out the same id.
    pub fn new(app_id: u8, host_index: u32) -> Self {
        Self {
            app_id,
            prefix: REISSUE_FLAG | ((host_index & 0x7ff) << 12),
            next: 0,
        }
    }

    pub fn fresh(&mut self) -> BlockId {
        let id = BlockId::new(self.app_id, (self.prefix | (self.next & 0xfff)) & SEQUENCE_MASK);
        self.next = self.next.wrapping_add(1);
        id
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LeaderMode {
    InNetwork,
    /// Contributions arrive directly from hosts; keyed by host address.
    Fallback { contributors: BTreeSet<u32> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LeaderAction {
    /// Nothing to send yet.
    Wait,
    /// Packet belongs to a stale attempt or a finished block.
    Ignore,
    /// Start the broadcast: one multicast packet toward the root plus restoration packets.
    Broadcast {
        packet: CanaryPacket,
        restorations: Vec<CanaryPacket>,
    },
    /// Send the retained result to one host.
    UnicastResult { to: u32, data: Vec<i32> },
    /// Reduction failed: every host re-issues the block under `new_id`.
    Reissue { new_id: BlockId },
    /// A host is behind: tell it the current id.
    FailureNotice { to: u32, id: BlockId },
    /// Tell hosts (all when `to` is `None`) to send their contribution directly.
    FallbackNotice { to: Option<u32> },
    /// Host-based reduction finished; deliver `data` to every host.
    FallbackComplete { data: Vec<i32> },
}

/// State of a host for a block it leads.
#[derive(Debug, Clone)]
pub struct LeaderState {
    pub sequence: u32,
    pub block_id: BlockId,
    pub address: u32,
    /// Participants including the leader.
    pub hosts: u16,
    own_contribution: Vec<i32>,
    partial_sum: Vec<i32>,
    pub received_counter: u32,
    /// Collision points: switch address to bitmap of ports that need restoration.
    pub pending_restorations: BTreeMap<u16, u64>,
    retained_result: Option<Vec<i32>>,
    pub mode: LeaderMode,
    pub packets_received: u64,
    pub reissues: u32,
}

impl LeaderState {
    pub fn new(sequence: u32, block_id: BlockId, address: u32, hosts: u16, own_contribution: Vec<i32>) -> Self {
        let partial_sum = vec![0; own_contribution.len()];
        let mut state = Self {
            sequence,
            block_id,
            address,
            hosts,
            own_contribution,
            partial_sum,
            received_counter: 0,
            pending_restorations: BTreeMap::new(),
            retained_result: None,
            mode: LeaderMode::InNetwork,
            packets_received: 0,
            reissues: 0,
        };
        if hosts <= 1 {
            state.retained_result = Some(state.own_contribution.clone());
        }
        state
    }

    pub fn expected(&self) -> u32 {
        contributors(self.hosts as usize) as u32
    }

    pub fn is_complete(&self) -> bool {
        self.retained_result.is_some()
    }

    pub fn retained_result(&self) -> Option<&[i32]> {
        self.retained_result.as_deref()
    }

    /// Frees the retained result once every host has acknowledged completion.
    pub fn release(&mut self) {
        self.retained_result = None;
        self.own_contribution.clear();
        self.partial_sum.clear();
    }

    fn finalize(&mut self) -> Vec<i32> {
        let result: Vec<i32> = self
            .partial_sum
            .iter()
            .zip(&self.own_contribution)
            .map(|(a, b)| a.wrapping_add(*b))
            .collect();
        self.retained_result = Some(result.clone());
        result
    }

    fn broadcast(&self, result: Vec<i32>) -> LeaderAction {
        let expected = self.expected() as u16;
        let packet = CanaryPacket {
            destination: self.address,
            id: self.block_id.0,
            counter: expected,
            hosts: expected,
            multicast: true,
            data: result.clone(),
            ..CanaryPacket::default()
        };
        let restorations = self
            .pending_restorations
            .iter()
            .flat_map(|(&switch, &bitmap)| {
                restoration_groups(bitmap).into_iter().map(move |(group, bits)| (switch, group, bits))
            })
            .map(|(switch, group, bits)| CanaryPacket {
                destination: Destination::Switch {
                    address: switch,
                    port_group: group,
                }
                .encode(),
                id: self.block_id.0,
                counter: expected,
                hosts: expected,
                children: bits,
                switch_address: switch,
                bypass: true,
                multicast: false,
                data: result.clone(),
            })
            .collect();
        LeaderAction::Broadcast { packet, restorations }
    }

    /// Reduce-phase packet for this block reached the leader.
    pub fn leader_on_packet(&mut self, pkt: &CanaryPacket) -> Result<LeaderAction, HostError> {
        if pkt.id != self.block_id.0 || self.is_complete() || self.mode != LeaderMode::InNetwork {
            return Ok(LeaderAction::Ignore);
        }
        if pkt.data.len() != self.partial_sum.len() {
            return Err(HostError::PayloadLength {
                expected: self.partial_sum.len(),
                actual: pkt.data.len(),
            });
        }
        let received = self.received_counter + pkt.counter as u32;
        if received > self.expected() {
            return Err(HostError::CounterOvershoot {
                id: self.block_id,
                received,
                expected: self.expected(),
            });
        }
        for (acc, x) in self.partial_sum.iter_mut().zip(&pkt.data) {
            *acc = acc.wrapping_add(*x);
        }
        self.received_counter = received;
        self.packets_received += 1;
        if pkt.bypass {
            let port = pkt.children.min(63);
            *self.pending_restorations.entry(pkt.switch_address).or_default() |= 1u64 << port;
        }
        if received == self.expected() {
            let result = self.finalize();
            return Ok(self.broadcast(result));
        }
        Ok(LeaderAction::Wait)
    }

    /// A host timed out waiting for the block.
    pub fn leader_on_retransmit_request(
        &mut self,
        requester: u32,
        id: BlockId,
        fresh_ids: &mut ReissueIds,
    ) -> LeaderAction {
        if let Some(result) = &self.retained_result {
            return LeaderAction::UnicastResult {
                to: requester,
                data: result.clone(),
            };
        }
        if matches!(self.mode, LeaderMode::Fallback { .. }) {
            return LeaderAction::FallbackNotice { to: Some(requester) };
        }
        if id != self.block_id {
            return LeaderAction::FailureNotice {
                to: requester,
                id: self.block_id,
            };
        }
        let new_id = fresh_ids.fresh();
        self.block_id = new_id;
        self.partial_sum.iter_mut().for_each(|x| *x = 0);
        self.received_counter = 0;
        self.pending_restorations.clear();
        self.reissues += 1;
        LeaderAction::Reissue { new_id }
    }

    /// A host sent its contribution directly (host-based fallback).
    pub fn leader_on_fallback_contribution(&mut self, from: u32, data: &[i32]) -> Result<Vec<LeaderAction>, HostError> {
        if let Some(result) = &self.retained_result {
            return Ok(vec![LeaderAction::UnicastResult {
                to: from,
                data: result.clone(),
            }]);
        }
        if data.len() != self.partial_sum.len() {
            return Err(HostError::PayloadLength {
                expected: self.partial_sum.len(),
                actual: data.len(),
            });
        }
        let mut actions = Vec::new();
        if self.mode == LeaderMode::InNetwork {
            self.mode = LeaderMode::Fallback {
                contributors: BTreeSet::new(),
            };
            self.partial_sum.iter_mut().for_each(|x| *x = 0);
            self.received_counter = 0;
            self.pending_restorations.clear();
            actions.push(LeaderAction::FallbackNotice { to: None });
        }
        let LeaderMode::Fallback { contributors } = &mut self.mode else {
            unreachable!("switched to fallback above");
        };
        if contributors.insert(from) {
            for (acc, x) in self.partial_sum.iter_mut().zip(data) {
                *acc = acc.wrapping_add(*x);
            }
            self.received_counter += 1;
        }
        if self.received_counter == self.expected() {
            let result = self.finalize();
            actions.push(LeaderAction::FallbackComplete { data: result });
        }
        Ok(actions)
    }
}

/// Explicit completion notification: leaders keep results until every host reports done.
#[derive(Debug, Clone)]
pub struct CompletionBarrier {
    notified: Vec<bool>,
    remaining: usize,
}

/// Emitted once, when the last host notifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BarrierRelease;

impl CompletionBarrier {
    pub fn new(hosts: usize) -> Self {
        Self {
            notified: vec![false; hosts],
            remaining: hosts,
        }
    }

    pub fn is_released(&self) -> bool {
        self.remaining == 0
    }

    /// Records that the host at `position` finished every block.
    pub fn notify_completion(&mut self, position: usize) -> Option<BarrierRelease> {
        if self.remaining == 0 || self.notified[position] {
            return None;
        }
        self.notified[position] = true;
        self.remaining -= 1;
        (self.remaining == 0).then_some(BarrierRelease)
    }
}
