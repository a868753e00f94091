use std::collections::HashMap;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::ring::{chunk_ranges, chunk_sent};
use crate::baselines::static_tree::{build_static_trees, StaticTreeSet, TreeAggregator};
use crate::codec::{encoded_len, CanaryPacket, FRAMING_OVERHEAD_BYTES};
use crate::fabric::failure::{inject_failure, FailureEvent, FailureTarget};
use crate::fabric::network::{run, Fabric, Occurrence, SimEvent};
use crate::fabric::routing::LoadBalancing;
use crate::fabric::topology::{build_fat_tree, NodeId, NodeKind};
use crate::fabric::workload::CongestionWorkload;
use crate::fabric::EventQueue;
use crate::host::{
    CompletionBarrier, HostAction, HostConfig, HostState, LeaderAction, LeaderState, ReissueIds,
};
use crate::ids::{BlockId, Destination, SEQUENCE_BITS};
use crate::sim::inputs::JobInputs;
use crate::sim::packet::{Body, Control, RingPacket, SimPacket, TreePacket};
use crate::sim::{Algorithm, BackgroundSpec, JobOutcome, SimConfig, SimOutcome};
use crate::switch::{PortId, SwitchAction, SwitchConfig, SwitchState};
use crate::time::SimTime;

#[derive(Debug)]
enum Ev {
    SwitchTimer { address: u16, slot: u32 },
    HostTimer { job: u16, pos: u32, seq: u32 },
    Inject { node: NodeId, packet: SimPacket },
    Leader { job: u16, pos: u32, packet: SimPacket },
    Pace { job: u16, pos: u32 },
    BgCredit { index: u32, bytes: u64 },
    BgReshuffle,
    Failure(FailureEvent),
}

type Events = EventQueue<SimEvent<SimPacket, Ev>>;
type Net = Fabric<SimPacket>;

/// Host-side sending context handed to job logic.
struct Ctx<'a> {
    net: &'a mut Net,
    ev: &'a mut Events,
    now: SimTime,
    noise: &'a mut ChaCha8Rng,
    noise_probability: f64,
    noise_delay: SimTime,
}

impl Ctx<'_> {
    /// Hands a packet to the host NIC, possibly after the noise delay.
    fn inject(&mut self, host: u32, packet: SimPacket) {
        let node = self.net.topo.host_node(host);
        if self.noise_probability > 0.0 && self.noise.gen_bool(self.noise_probability) {
            self.ev
                .schedule(self.now + self.noise_delay, SimEvent::User(Ev::Inject { node, packet }));
        } else {
            let _ = self.net.send(self.ev, node, 0, packet);
        }
    }

    fn timer(&mut self, at: SimTime, job: u16, pos: usize, seq: u32) {
        self.ev.schedule(
            at,
            SimEvent::User(Ev::HostTimer {
                job,
                pos: pos as u32,
                seq,
            }),
        );
    }
}

struct CanaryJob {
    app: u8,
    states: Vec<HostState>,
    leaders: Vec<Option<LeaderState>>,
    reissue_ids: Vec<ReissueIds>,
    reissued: HashMap<u32, u32>,
    barrier: CompletionBarrier,
    released: bool,
    /// Deadline of the live retransmission timer per (host, block).
    armed: Vec<Vec<SimTime>>,
    /// Spacing between block starts at one host; zero when unpaced.
    pace_gap: SimTime,
    next_start: Vec<SimTime>,
    pace_armed: Vec<bool>,
}

struct RingJob {
    chunks: Vec<Range<usize>>,
}

enum Proto {
    Canary(Box<CanaryJob>),
    Tree(StaticTreeSet),
    Ring(RingJob),
}

struct Job {
    index: u16,
    hosts: Vec<u32>,
    pos_of: HashMap<u32, usize>,
    inputs: JobInputs,
    blocks: u32,
    window: usize,
    elements: usize,
    next: Vec<u32>,
    in_flight: Vec<usize>,
    done: Vec<Vec<bool>>,
    done_count: Vec<u32>,
    remaining_hosts: usize,
    out: JobOutcome,
    proto: Proto,
}

impl Job {
    fn n(&self) -> usize {
        self.hosts.len()
    }

    /// Verifies a delivered block against the oracle and stores it if requested.
    fn check(&mut self, pos: usize, seq: u32, data: &[i32]) {
        if self.inputs.expected(seq) != data {
            self.out.mismatched_blocks += 1;
        }
        let len = self.inputs.len();
        if let Some(results) = &mut self.out.results {
            let start = seq as usize * self.elements;
            let end = (start + self.elements).min(len);
            results[pos][start..end].copy_from_slice(&data[..end - start]);
        }
    }

    fn host_finished(&mut self, pos: usize, now: SimTime) {
        if self.out.host_completion[pos].is_some() {
            return;
        }
        self.out.host_completion[pos] = Some(now);
        self.remaining_hosts -= 1;
        if let Proto::Canary(cj) = &mut self.proto {
            if cj.barrier.notify_completion(pos).is_some() {
                cj.released = true;
                for leader in cj.leaders.iter_mut().flatten() {
                    leader.release();
                }
            }
        }
        if self.remaining_hosts == 0 {
            self.out.completion = Some(now);
        }
    }

    /// Marks a tree or ring block done at `pos`.
    fn record(&mut self, pos: usize, seq: u32, data: &[i32], now: SimTime) -> bool {
        if self.done[pos][seq as usize] {
            return false;
        }
        self.done[pos][seq as usize] = true;
        self.done_count[pos] += 1;
        self.check(pos, seq, data);
        if self.done_count[pos] == self.blocks {
            self.host_finished(pos, now);
        }
        true
    }

    fn start(&mut self, ctx: &mut Ctx) {
        for pos in 0..self.n() {
            match self.proto {
                Proto::Ring(_) => self.ring_start(ctx, pos),
                _ => self.pump(ctx, pos),
            }
        }
    }

    fn pump(&mut self, ctx: &mut Ctx, pos: usize) {
        match &self.proto {
            Proto::Canary(_) => self.canary_pump(ctx, pos),
            Proto::Tree(_) => self.tree_pump(ctx, pos),
            Proto::Ring(_) => {}
        }
    }

    // ---- Canary -----------------------------------------------------------

    fn cj(&mut self) -> &mut CanaryJob {
        match &mut self.proto {
            Proto::Canary(cj) => cj,
            _ => unreachable!("not a Canary job"),
        }
    }

    fn seq_of(&mut self, id: u32) -> Option<u32> {
        let block = BlockId(id);
        if !block.is_reissue() {
            return (block.sequence() < self.blocks).then_some(block.sequence());
        }
        self.cj().reissued.get(&id).copied()
    }

    fn ensure_leader(&mut self, seq: u32) -> &mut LeaderState {
        let n = self.n();
        let lpos = seq as usize % n;
        let leader_host = self.hosts[lpos];
        let own = self.inputs.block(lpos, seq);
        let cj = self.cj();
        let app = cj.app;
        cj.leaders[seq as usize]
            .get_or_insert_with(|| LeaderState::new(seq, BlockId::new(app, seq), leader_host, n as u16, own))
    }

    fn arm(&mut self, ctx: &mut Ctx, pos: usize, seq: u32, at: SimTime) {
        let index = self.index;
        self.cj().armed[pos][seq as usize] = at;
        ctx.timer(at, index, pos, seq);
    }

    fn send_contribution(&mut self, ctx: &mut Ctx, pos: usize, seq: u32, id: BlockId) {
        let n = self.n();
        let leader = self.hosts[seq as usize % n];
        let data = self.inputs.block(pos, seq);
        let pkt = CanaryPacket::contribution(leader, id.0, (n - 1) as u16, data);
        ctx.inject(self.hosts[pos], SimPacket::canary(self.index, pkt));
        let rto = self.cj().states[pos].retransmit_timeout();
        self.arm(ctx, pos, seq, ctx.now + rto);
    }

    fn send_control(&self, ctx: &mut Ctx, from: u32, to: u32, control: Control) {
        ctx.inject(from, SimPacket::control(self.index, to, control, self.elements));
    }

    fn canary_pump(&mut self, ctx: &mut Ctx, pos: usize) {
        let n = self.n();
        loop {
            let seq = self.next[pos];
            let window = self.window;
            let blocks = self.blocks;
            let index = self.index;
            let cj = self.cj();
            if cj.states[pos].in_flight() >= window || seq >= blocks {
                break;
            }
            if cj.pace_gap > SimTime::ZERO {
                if ctx.now < cj.next_start[pos] {
                    if !cj.pace_armed[pos] {
                        cj.pace_armed[pos] = true;
                        let pos = pos as u32;
                        ctx.ev.schedule(cj.next_start[pos as usize], SimEvent::User(Ev::Pace { job: index, pos }));
                    }
                    break;
                }
                cj.next_start[pos] = cj.next_start[pos].max(ctx.now) + cj.pace_gap;
            }
            let id = BlockId::new(cj.app, seq);
            cj.states[pos].record_send(seq, id, ctx.now);
            self.next[pos] += 1;
            if seq as usize % n == pos {
                let done = self.ensure_leader(seq).retained_result().map(<[i32]>::to_vec);
                if let Some(result) = done {
                    self.canary_result(ctx, pos, seq, &result, false);
                }
            } else {
                self.send_contribution(ctx, pos, seq, id);
            }
        }
        if self.cj().states[pos].is_complete() {
            self.host_finished(pos, ctx.now);
        }
    }

    fn canary_result(&mut self, ctx: &mut Ctx, pos: usize, seq: u32, data: &[i32], pump: bool) {
        if !self.cj().states[pos].on_result(seq, ctx.now) {
            return;
        }
        self.check(pos, seq, data);
        if self.cj().states[pos].is_complete() {
            self.host_finished(pos, ctx.now);
        } else if pump {
            self.canary_pump(ctx, pos);
        }
    }

    fn canary_timer(&mut self, ctx: &mut Ctx, pos: usize, seq: u32) {
        if self.cj().armed[pos][seq as usize] != ctx.now {
            return;
        }
        let n = self.n();
        let host = self.hosts[pos];
        let leader = self.hosts[seq as usize % n];
        let now = ctx.now;
        let cj = self.cj();
        let rto = cj.states[pos].retransmit_timeout();
        match cj.states[pos].host_on_timeout(seq, now) {
            HostAction::RequestRetransmission { sequence: seq, id } => {
                self.out.retransmissions += 1;
                self.send_control(ctx, host, leader, Control::RetransmitRequest { seq, id, from: host });
                self.arm(ctx, pos, seq, now + rto);
            }
            HostAction::SendFallbackContribution { sequence: seq } => {
                self.send_fallback(ctx, pos, seq);
            }
            HostAction::Ignore | HostAction::Resend { .. } => {
                let pending = cj.states[pos].block(seq).filter(|b| !b.done).map(|b| b.send_time + rto);
                if let Some(due) = pending.filter(|&d| d > now) {
                    self.arm(ctx, pos, seq, due);
                }
            }
        }
    }

    fn send_fallback(&mut self, ctx: &mut Ctx, pos: usize, seq: u32) {
        let n = self.n();
        let host = self.hosts[pos];
        let leader = self.hosts[seq as usize % n];
        let data = self.inputs.block(pos, seq);
        self.send_control(ctx, host, leader, Control::FallbackContribution { seq, from: host, data });
        let rto = self.cj().states[pos].retransmit_timeout();
        self.arm(ctx, pos, seq, ctx.now + rto);
    }

    fn canary_host_packet(&mut self, ctx: &mut Ctx, pos: usize, packet: SimPacket) {
        let now = ctx.now;
        match packet.body {
            Body::Canary(pkt) => {
                if let Some(seq) = self.seq_of(pkt.id) {
                    self.canary_result(ctx, pos, seq, &pkt.data, true);
                }
            }
            Body::Control(Control::Result { seq, data }) => self.canary_result(ctx, pos, seq, &data, true),
            Body::Control(Control::FailureNotice { seq, id }) => {
                self.cj().reissued.insert(id.0, seq);
                if let HostAction::Resend { sequence: seq, id } = self.cj().states[pos].on_failure_notice(seq, id, now) {
                    self.send_contribution(ctx, pos, seq, id);
                }
            }
            Body::Control(Control::FallbackNotice { seq }) => {
                if let HostAction::SendFallbackContribution { sequence: seq } = self.cj().states[pos].on_fallback_notice(seq, now) {
                    self.send_fallback(ctx, pos, seq);
                }
            }
            _ => {}
        }
    }

    fn canary_leader(&mut self, ctx: &mut Ctx, pos: usize, packet: SimPacket) {
        if self.cj().released {
            return;
        }
        match packet.body {
            Body::Canary(pkt) => {
                let Some(seq) = self.seq_of(pkt.id) else {
                    return;
                };
                self.out.leader_packets += 1;
                self.out.leader_fan_in[seq as usize] += 1;
                if pkt.bypass {
                    self.out.bypass_packets += 1;
                    self.out.bypass_blocks.insert(seq);
                }
                match self.ensure_leader(seq).leader_on_packet(&pkt) {
                    Ok(action) => self.leader_action(ctx, pos, seq, action),
                    Err(_) => self.out.protocol_errors += 1,
                }
            }
            Body::Control(Control::RetransmitRequest { seq, id, from }) => {
                if seq >= self.blocks {
                    return;
                }
                self.ensure_leader(seq);
                let cj = self.cj();
                let leader = cj.leaders[seq as usize].as_mut().expect("ensured");
                let action = leader.leader_on_retransmit_request(from, id, &mut cj.reissue_ids[pos]);
                self.leader_action(ctx, pos, seq, action);
            }
            Body::Control(Control::FallbackContribution { seq, from, data }) => {
                if seq >= self.blocks {
                    return;
                }
                match self.ensure_leader(seq).leader_on_fallback_contribution(from, &data) {
                    Ok(actions) => {
                        for action in actions {
                            self.leader_action(ctx, pos, seq, action);
                        }
                    }
                    Err(_) => self.out.protocol_errors += 1,
                }
            }
            _ => {}
        }
    }

    fn others(&self, pos: usize) -> Vec<u32> {
        self.hosts
            .iter()
            .enumerate()
            .filter(|&(p, _)| p != pos)
            .map(|(_, &h)| h)
            .collect()
    }

    fn leader_action(&mut self, ctx: &mut Ctx, pos: usize, seq: u32, action: LeaderAction) {
        let me = self.hosts[pos];
        match action {
            LeaderAction::Wait | LeaderAction::Ignore => {}
            LeaderAction::Broadcast { packet, restorations } => {
                if !restorations.is_empty() {
                    self.out.restored_blocks.insert(seq);
                    self.out.restoration_packets += restorations.len() as u64;
                }
                let result = packet.data.clone();
                if self.n() > 1 {
                    ctx.inject(me, SimPacket::canary(self.index, packet));
                }
                for r in restorations {
                    ctx.inject(me, SimPacket::canary(self.index, r));
                }
                self.canary_result(ctx, pos, seq, &result, true);
            }
            LeaderAction::UnicastResult { to, data } => {
                self.send_control(ctx, me, to, Control::Result { seq, data });
            }
            LeaderAction::Reissue { new_id } => {
                self.out.reissues += 1;
                let cj = self.cj();
                cj.reissued.insert(new_id.0, seq);
                cj.states[pos].on_failure_notice(seq, new_id, ctx.now);
                for to in self.others(pos) {
                    self.send_control(ctx, me, to, Control::FailureNotice { seq, id: new_id });
                }
            }
            LeaderAction::FailureNotice { to, id } => {
                self.send_control(ctx, me, to, Control::FailureNotice { seq, id });
            }
            LeaderAction::FallbackNotice { to: Some(to) } => {
                self.send_control(ctx, me, to, Control::FallbackNotice { seq });
            }
            LeaderAction::FallbackNotice { to: None } => {
                for to in self.others(pos) {
                    self.send_control(ctx, me, to, Control::FallbackNotice { seq });
                }
            }
            LeaderAction::FallbackComplete { data } => {
                for to in self.others(pos) {
                    self.send_control(ctx, me, to, Control::Result { seq, data: data.clone() });
                }
                self.canary_result(ctx, pos, seq, &data, true);
            }
        }
    }

    // ---- static trees ------------------------------------------------------

    fn tree_pump(&mut self, ctx: &mut Ctx, pos: usize) {
        let Proto::Tree(set) = &self.proto else { unreachable!() };
        let trees = set.trees.len();
        while self.in_flight[pos] < self.window && self.next[pos] < self.blocks {
            let seq = self.next[pos];
            self.next[pos] += 1;
            self.in_flight[pos] += 1;
            let packet = TreePacket {
                tree: (seq as usize % trees) as u16,
                seq,
                up: true,
                data: self.inputs.block(pos, seq),
            };
            ctx.inject(self.hosts[pos], SimPacket::tree(self.index, packet));
        }
        if self.blocks == 0 {
            self.host_finished(pos, ctx.now);
        }
    }

    fn tree_host_packet(&mut self, ctx: &mut Ctx, pos: usize, packet: TreePacket) {
        if packet.up {
            return;
        }
        if self.record(pos, packet.seq, &packet.data, ctx.now) {
            self.in_flight[pos] -= 1;
            self.tree_pump(ctx, pos);
        }
    }

    // ---- ring --------------------------------------------------------------

    fn ring_start(&mut self, ctx: &mut Ctx, pos: usize) {
        let n = self.n();
        if n == 1 {
            for seq in 0..self.blocks {
                let data = self.inputs.block(pos, seq);
                self.record(pos, seq, &data, ctx.now);
            }
            if self.blocks == 0 {
                self.host_finished(pos, ctx.now);
            }
            return;
        }
        let Proto::Ring(ring) = &self.proto else { unreachable!() };
        let chunk = chunk_sent(pos, 0, n);
        let range = ring.chunks[chunk].clone();
        let to = self.hosts[(pos + 1) % n];
        for (index, b) in range.enumerate() {
            let packet = RingPacket {
                chunk: chunk as u32,
                index: index as u32,
                step: 0,
                data: self.inputs.block(pos, b as u32),
            };
            ctx.inject(self.hosts[pos], SimPacket::ring(self.index, to, packet));
        }
        if self.blocks == 0 {
            self.host_finished(pos, ctx.now);
        }
    }

    fn ring_host_packet(&mut self, ctx: &mut Ctx, pos: usize, mut packet: RingPacket) {
        let n = self.n();
        let Proto::Ring(ring) = &self.proto else { unreachable!() };
        let seq = (ring.chunks[packet.chunk as usize].start + packet.index as usize) as u32;
        let step = packet.step as usize;
        let to = self.hosts[(pos + 1) % n];
        if step <= n - 2 {
            for (acc, x) in packet.data.iter_mut().zip(self.inputs.block(pos, seq)) {
                *acc = acc.wrapping_add(x);
            }
        }
        if step >= n - 2 {
            self.record(pos, seq, &packet.data, ctx.now);
        }
        if step < 2 * n - 3 {
            packet.step += 1;
            ctx.inject(self.hosts[pos], SimPacket::ring(self.index, to, packet));
        }
    }
}

struct Background {
    spec: BackgroundSpec,
    workload: CongestionWorkload,
    credits: Vec<u64>,
    remaining: Vec<u64>,
    peer: Vec<u32>,
}

struct World {
    jobs: Vec<Job>,
    switches: Vec<SwitchState>,
    tree_aggs: Vec<TreeAggregator>,
    bg: Option<Background>,
    noise: ChaCha8Rng,
    drops: ChaCha8Rng,
    noise_probability: f64,
    noise_delay: SimTime,
    drop_rate: f64,
    leader_delay: SimTime,
    remaining_jobs: usize,
    bg_delivered: u64,
    bg_dropped: u64,
}

const TREE_KEY_STRIDE: usize = 64;

impl World {
    fn ctx<'a>(&'a mut self, net: &'a mut Net, ev: &'a mut Events, now: SimTime) -> (Ctx<'a>, &'a mut Vec<Job>) {
        (
            Ctx {
                net,
                ev,
                now,
                noise: &mut self.noise,
                noise_probability: self.noise_probability,
                noise_delay: self.noise_delay,
            },
            &mut self.jobs,
        )
    }

    fn job_done_hook(&mut self, job: usize, was_complete: bool) {
        if !was_complete && self.jobs[job].out.completion.is_some() {
            self.remaining_jobs -= 1;
        }
    }

    fn with_job(&mut self, net: &mut Net, ev: &mut Events, now: SimTime, job: usize, f: impl FnOnce(&mut Job, &mut Ctx)) {
        let was_complete = self.jobs[job].out.completion.is_some();
        let (mut ctx, jobs) = self.ctx(net, ev, now);
        f(&mut jobs[job], &mut ctx);
        self.job_done_hook(job, was_complete);
    }

    fn send(&mut self, net: &mut Net, ev: &mut Events, node: NodeId, port: PortId, packet: SimPacket) {
        if let Some(Occurrence::Dropped { packet, .. }) = net.send(ev, node, port, packet) {
            self.dropped(ev, packet);
        }
    }

    fn dropped(&mut self, ev: &mut Events, packet: SimPacket) {
        match packet.body {
            Body::Background { source } => {
                self.bg_dropped += 1;
                if let Some(bg) = &self.bg {
                    ev.schedule_in(
                        bg.spec.ack_delay,
                        SimEvent::User(Ev::BgCredit {
                            index: source,
                            bytes: packet.wire as u64,
                        }),
                    );
                }
            }
            _ => {
                if let Some(job) = self.jobs.get_mut(packet.job as usize) {
                    job.out.injected_drops += 1;
                }
            }
        }
    }

    fn on_event(&mut self, net: &mut Net, ev: &mut Events, now: SimTime, occ: Result<Occurrence<SimPacket>, Ev>) -> bool {
        match occ {
            Ok(Occurrence::Delivered {
                node,
                port,
                link,
                packet,
            }) => self.deliver(net, ev, now, node, port, link, packet),
            Ok(Occurrence::Dropped { packet, .. }) => self.dropped(ev, packet),
            Err(user) => self.user(net, ev, now, user),
        }
        self.remaining_jobs > 0
    }

    #[allow(clippy::too_many_arguments)]
    fn deliver(&mut self, net: &mut Net, ev: &mut Events, now: SimTime, node: NodeId, port: PortId, link: usize, packet: SimPacket) {
        if self.drop_rate > 0.0
            && matches!(packet.body, Body::Canary(_) | Body::Control(_))
            && self.drops.gen_bool(self.drop_rate)
        {
            net.record_loss(link, packet.wire as u64);
            if let Some(job) = self.jobs.get_mut(packet.job as usize) {
                job.out.injected_drops += 1;
            }
            return;
        }
        match net.topo.kind(node) {
            NodeKind::Host(h) => self.at_host(net, ev, now, h, packet),
            _ => self.at_switch(net, ev, now, node, port, packet),
        }
    }

    fn at_host(&mut self, net: &mut Net, ev: &mut Events, now: SimTime, host: u32, packet: SimPacket) {
        if let Body::Background { source } = packet.body {
            self.bg_delivered += packet.wire as u64;
            if let Some(bg) = &self.bg {
                ev.schedule_in(
                    bg.spec.ack_delay,
                    SimEvent::User(Ev::BgCredit {
                        index: source,
                        bytes: packet.wire as u64,
                    }),
                );
            }
            return;
        }
        let j = packet.job as usize;
        let Some(&pos) = self.jobs.get(j).and_then(|job| job.pos_of.get(&host)) else {
            return;
        };
        let to_leader = match &packet.body {
            Body::Canary(p) => !p.multicast,
            Body::Control(Control::RetransmitRequest { .. } | Control::FallbackContribution { .. }) => true,
            _ => false,
        };
        if to_leader {
            ev.schedule_in(
                self.leader_delay,
                SimEvent::User(Ev::Leader {
                    job: packet.job,
                    pos: pos as u32,
                    packet,
                }),
            );
            return;
        }
        self.with_job(net, ev, now, j, |job, ctx| match packet.body {
            Body::Tree(t) => job.tree_host_packet(ctx, pos, t),
            Body::Ring(r) => job.ring_host_packet(ctx, pos, r),
            _ => job.canary_host_packet(ctx, pos, packet),
        });
    }

    fn at_switch(&mut self, net: &mut Net, ev: &mut Events, now: SimTime, node: NodeId, port: PortId, packet: SimPacket) {
        let job = packet.job;
        match packet.body {
            Body::Canary(pkt) => self.canary_switch(net, ev, now, node, port, job, pkt),
            Body::Tree(t) => self.tree_switch(net, ev, node, job, t),
            _ => {
                let policy = match (&packet.body, &self.bg) {
                    (Body::Background { .. }, Some(bg)) => bg.spec.policy,
                    _ => LoadBalancing::Adaptive,
                };
                match net.route_to_host(now, node, packet.dest, policy) {
                    Some(p) => self.send(net, ev, node, p, packet),
                    None => self.dropped(ev, packet),
                }
            }
        }
    }

    fn forward_canary(&mut self, net: &mut Net, ev: &mut Events, now: SimTime, node: NodeId, job: u16, pkt: CanaryPacket) {
        let port = match Destination::decode(pkt.destination) {
            Destination::Host(h) => net.route_to_host(now, node, h, LoadBalancing::Adaptive),
            Destination::Switch { address, .. } => net.route_to_switch(now, node, address, LoadBalancing::Adaptive),
        };
        let packet = SimPacket::canary(job, pkt);
        match port {
            Some(p) => self.send(net, ev, node, p, packet),
            None => self.dropped(ev, packet),
        }
    }

    fn replicate(&mut self, net: &mut Net, ev: &mut Events, node: NodeId, job: u16, pkt: CanaryPacket, ports: Vec<PortId>) {
        for p in ports {
            self.send(net, ev, node, p, SimPacket::canary(job, pkt.clone()));
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn canary_switch(&mut self, net: &mut Net, ev: &mut Events, now: SimTime, node: NodeId, port: PortId, job: u16, pkt: CanaryPacket) {
        let address = net.topo.switch_address(node).expect("switch node");
        let sw = &mut self.switches[address as usize];
        if pkt.multicast {
            if let SwitchAction::Replicate { packet, ports } = sw.on_broadcast_packet(pkt, now) {
                self.replicate(net, ev, node, job, packet, ports);
            }
            return;
        }
        if pkt.bypass {
            match Destination::decode(pkt.destination) {
                Destination::Switch { address: a, .. } if a == address => match sw.on_restoration_packet(pkt) {
                    Ok(SwitchAction::Replicate { packet, ports }) => self.replicate(net, ev, node, job, packet, ports),
                    _ => self.protocol_error(job),
                },
                _ => self.forward_canary(net, ev, now, node, job, pkt),
            }
            return;
        }
        match sw.on_reduce_packet(pkt, port, now) {
            Ok(SwitchAction::StoreNew { slot, deadline, emit }) => match emit {
                Some(p) => self.forward_canary(net, ev, now, node, job, p),
                None => ev.schedule(deadline, SimEvent::User(Ev::SwitchTimer { address, slot })),
            },
            Ok(SwitchAction::Aggregate { emit: Some(p), .. })
            | Ok(SwitchAction::Straggler { forward: p })
            | Ok(SwitchAction::CollisionForward { forward: p }) => self.forward_canary(net, ev, now, node, job, p),
            Ok(_) => {}
            Err(_) => self.protocol_error(job),
        }
    }

    fn protocol_error(&mut self, job: u16) {
        if let Some(j) = self.jobs.get_mut(job as usize) {
            j.out.protocol_errors += 1;
        }
    }

    fn tree_switch(&mut self, net: &mut Net, ev: &mut Events, node: NodeId, job: u16, packet: TreePacket) {
        let address = net.topo.switch_address(node).expect("switch node") as usize;
        let Proto::Tree(set) = &self.jobs[job as usize].proto else {
            return;
        };
        let tree = &set.trees[packet.tree as usize];
        let key = job as usize * TREE_KEY_STRIDE + packet.tree as usize;
        let mut out: Vec<(PortId, TreePacket)> = Vec::new();
        match net.topo.kind(node) {
            NodeKind::Edge(e) if packet.up => {
                let expected = tree.expected_at_edge(e);
                if let Some(partial) = self.tree_aggs[address].add(key, packet.seq, &packet.data, expected) {
                    out.push((tree.parent_port(&net.topo), TreePacket { data: partial, ..packet }));
                }
            }
            NodeKind::Edge(e) => {
                for &p in tree.edge_children.get(&e).into_iter().flatten() {
                    out.push((p, packet.clone()));
                }
            }
            NodeKind::Core(_) if packet.up => {
                let expected = tree.expected_at_root();
                if let Some(total) = self.tree_aggs[address].add(key, packet.seq, &packet.data, expected) {
                    for &p in &tree.root_children {
                        out.push((
                            p,
                            TreePacket {
                                tree: packet.tree,
                                seq: packet.seq,
                                up: false,
                                data: total.clone(),
                            },
                        ));
                    }
                }
            }
            _ => {}
        }
        for (p, t) in out {
            self.send(net, ev, node, p, SimPacket::tree(job, t));
        }
    }

    fn user(&mut self, net: &mut Net, ev: &mut Events, now: SimTime, event: Ev) {
        match event {
            Ev::SwitchTimer { address, slot } => {
                if let SwitchAction::EmitUpstream { packet } = self.switches[address as usize].on_timeout(slot, now) {
                    let node = net.topo.switch_node(address);
                    let job = (packet.id >> SEQUENCE_BITS) as u16;
                    self.forward_canary(net, ev, now, node, job, packet);
                }
            }
            Ev::HostTimer { job, pos, seq } => {
                self.with_job(net, ev, now, job as usize, |j, ctx| j.canary_timer(ctx, pos as usize, seq));
            }
            Ev::Inject { node, packet } => self.send(net, ev, node, 0, packet),
            Ev::Pace { job, pos } => {
                self.with_job(net, ev, now, job as usize, |j, ctx| {
                    j.cj().pace_armed[pos as usize] = false;
                    j.canary_pump(ctx, pos as usize);
                });
            }
            Ev::Leader { job, pos, packet } => {
                self.with_job(net, ev, now, job as usize, |j, ctx| j.canary_leader(ctx, pos as usize, packet));
            }
            Ev::BgCredit { index, bytes } => {
                if let Some(bg) = &mut self.bg {
                    bg.credits[index as usize] += bytes;
                }
                self.bg_pump(net, ev, index as usize);
            }
            Ev::BgReshuffle => {
                if let Some(bg) = &mut self.bg {
                    bg.workload.reshuffle();
                    ev.schedule_in(bg.spec.reshuffle, SimEvent::User(Ev::BgReshuffle));
                }
            }
            Ev::Failure(f) => self.failure(net, ev, f),
        }
    }

    fn bg_pump(&mut self, net: &mut Net, ev: &mut Events, index: usize) {
        loop {
            let Some(bg) = &mut self.bg else { return };
            if bg.remaining[index] == 0 {
                bg.peer[index] = bg.workload.peer_of(index);
                bg.remaining[index] = bg.spec.flow_bytes.max(1);
            }
            let payload = bg.remaining[index].min(bg.spec.payload_bytes);
            let packet = SimPacket::background(index as u32, bg.peer[index], payload);
            let wire = packet.wire as u64;
            if bg.credits[index] < wire {
                return;
            }
            bg.credits[index] -= wire;
            bg.remaining[index] -= payload;
            let node = net.topo.host_node(bg.spec.hosts[index]);
            self.send(net, ev, node, 0, packet);
        }
    }

    fn failure(&mut self, net: &mut Net, ev: &mut Events, f: FailureEvent) {
        let hpe = net.topo.scale.hosts_per_edge as PortId;
        let (target, down) = match f {
            FailureEvent::Down(t) => (t, true),
            FailureEvent::Up(t) => (t, false),
        };
        let switch_node = match target {
            FailureTarget::Edge(e) => Some(net.topo.edge_node(e)),
            FailureTarget::Core(c) => Some(net.topo.core_node(c)),
            FailureTarget::Link { .. } => None,
        };
        let dropped = match (target, switch_node, down) {
            (_, Some(node), true) => {
                let address = net.topo.switch_address(node).expect("switch") as usize;
                self.switches[address].reset();
                self.tree_aggs[address] = TreeAggregator::default();
                net.fail_node(node)
            }
            (_, Some(node), false) => {
                net.restore_node(node);
                Vec::new()
            }
            (FailureTarget::Link { edge, core }, None, true) => net.fail_link(net.topo.edge_node(edge), hpe + core),
            (FailureTarget::Link { edge, core }, None, false) => {
                net.restore_link(net.topo.edge_node(edge), hpe + core);
                Vec::new()
            }
            _ => Vec::new(),
        };
        for (_, packet) in dropped {
            self.dropped(ev, packet);
        }
    }
}

/// Round-trip estimate of one block without queueing.
fn rtt_estimate(cfg: &SimConfig, algorithm: Algorithm, ser: SimTime) -> SimTime {
    let base = (cfg.hop_latency + ser).times(8);
    match algorithm {
        Algorithm::Canary => base + cfg.canary.timeout.times(2) + cfg.canary.leader_delay,
        _ => base,
    }
}

/// Runs the configured scenario to completion (or the time limit).
pub fn simulate(cfg: &SimConfig) -> Result<SimOutcome, String> {
    let topo = build_fat_tree(cfg.scale, cfg.link_bps, cfg.hop_latency).map_err(|e| e.to_string())?;
    let e = cfg.elements_per_packet;
    if e == 0 {
        return Err("elements_per_packet must be positive".into());
    }
    if cfg.jobs.len() > 255 {
        return Err("at most 255 concurrent jobs".into());
    }
    let ser = topo.serialization((encoded_len(e) + FRAMING_OVERHEAD_BYTES) as u64);
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut jobs = Vec::new();
    for (index, spec) in cfg.jobs.iter().enumerate() {
        if spec.hosts.is_empty() {
            return Err(format!("job {index} has no hosts"));
        }
        if let Some(&h) = spec.hosts.iter().find(|&&h| h as usize >= topo.host_count()) {
            return Err(format!("job {index} names host {h} outside the topology"));
        }
        let n = spec.hosts.len();
        let len = spec.bytes.div_ceil(4) as usize;
        if len == 0 {
            return Err(format!("job {index} reduces zero bytes"));
        }
        if let crate::sim::Inputs::Explicit(v) = &spec.inputs {
            if v.len() != n || v.iter().any(|x| x.len() != len) {
                return Err(format!("job {index}: explicit inputs must be {n} vectors of {len} elements"));
            }
        }
        let inputs = JobInputs::new(spec.inputs.clone(), n, len, e);
        let blocks = inputs.blocks() as u32;
        let rtt = rtt_estimate(cfg, spec.algorithm, ser);
        // Paced Canary hosts are clocked by the pacer, so the window only caps
        // memory and must stay clear of queueing delay; others self-clock on it.
        let rtts = match spec.algorithm {
            Algorithm::Canary if cfg.canary.pacing > 0.0 => 16,
            _ => 2,
        };
        let window = if cfg.window_blocks > 0 {
            cfg.window_blocks
        } else {
            ((rtts * rtt.as_picos()).div_ceil(ser.as_picos().max(1)) as usize).max(8)
        };
        let proto = match spec.algorithm {
            Algorithm::Canary => {
                let host_cfg = HostConfig {
                    initial_rtt: rtt,
                    min_timeout: cfg.canary.min_rto,
                    max_retries: cfg.canary.max_retries,
                };
                Proto::Canary(Box::new(CanaryJob {
                    app: index as u8,
                    states: spec
                        .hosts
                        .iter()
                        .map(|&h| HostState::new(h, index as u8, blocks as usize, host_cfg))
                        .collect(),
                    leaders: (0..blocks).map(|_| None).collect(),
                    reissue_ids: (0..n).map(|p| ReissueIds::new(index as u8, p as u32)).collect(),
                    reissued: HashMap::new(),
                    barrier: CompletionBarrier::new(n),
                    released: false,
                    armed: vec![vec![SimTime::MAX; blocks as usize]; n],
                    pace_gap: if cfg.canary.pacing > 0.0 {
                        SimTime::from_secs_f64(ser.as_secs_f64() / cfg.canary.pacing)
                    } else {
                        SimTime::ZERO
                    },
                    next_start: vec![SimTime::ZERO; n],
                    pace_armed: vec![false; n],
                }))
            }
            Algorithm::StaticTree { trees } => {
                let set = build_static_trees(&topo, &spec.hosts, trees, seeds.gen()).map_err(|e| e.to_string())?;
                Proto::Tree(set)
            }
            Algorithm::Ring => Proto::Ring(RingJob {
                chunks: chunk_ranges(blocks as usize, n),
            }),
        };
        let results = cfg.collect_results.then(|| vec![vec![0; len]; n]);
        jobs.push(Job {
            index: index as u16,
            pos_of: spec.hosts.iter().enumerate().map(|(p, &h)| (h, p)).collect(),
            hosts: spec.hosts.clone(),
            inputs,
            blocks,
            window,
            elements: e,
            next: vec![0; n],
            in_flight: vec![0; n],
            done: vec![vec![false; blocks as usize]; n],
            done_count: vec![0; n],
            remaining_hosts: n,
            out: JobOutcome {
                algorithm: Some(spec.algorithm),
                hosts: n,
                bytes: spec.bytes,
                blocks: blocks as usize,
                window_blocks: window,
                host_completion: vec![None; n],
                leader_fan_in: vec![0; blocks as usize],
                results,
                ..JobOutcome::default()
            },
            proto,
        });
    }

    let partitions = (cfg.jobs.len() as u32).max(1);
    let hash_seed: u64 = seeds.gen();
    let switches: Vec<SwitchState> = (0..topo.switch_count())
        .map(|a| {
            let node = topo.switch_node(a as u16);
            SwitchState::new(SwitchConfig {
                address: a as u16,
                port_count: topo.port_count(node) as u16,
                table_size: cfg.canary.table_size.max(1),
                shard_count: 1,
                timeout: cfg.canary.timeout,
                timer_granularity: cfg.canary.timer_granularity,
                early_completion: cfg.canary.early_completion,
                hash_seed,
                partitions: partitions.min(cfg.canary.table_size.max(1)),
            })
        })
        .collect();

    let bg = match &cfg.background {
        Some(spec) if spec.hosts.len() >= 2 => {
            let workload =
                CongestionWorkload::new(spec.hosts.clone(), seeds.gen(), spec.flow_bytes, spec.reshuffle).map_err(|e| e.to_string())?;
            let n = spec.hosts.len();
            Some(Background {
                spec: spec.clone(),
                workload,
                credits: vec![spec.window_bytes; n],
                remaining: vec![0; n],
                peer: vec![0; n],
            })
        }
        _ => None,
    };

    let mut net: Net = Fabric::new(topo, cfg.queue_bytes, cfg.record_routing);
    net.retry_delay = cfg.link_retry_delay;
    let mut ev: Events = EventQueue::new();
    for f in &cfg.failures {
        for (at, event) in inject_failure(&net.topo, *f).map_err(|e| e.to_string())? {
            ev.schedule(at, SimEvent::User(Ev::Failure(event)));
        }
    }

    let mut world = World {
        remaining_jobs: jobs.len(),
        jobs,
        tree_aggs: vec![TreeAggregator::default(); switches.len()],
        switches,
        bg,
        noise: ChaCha8Rng::seed_from_u64(seeds.gen()),
        drops: ChaCha8Rng::seed_from_u64(seeds.gen()),
        noise_probability: cfg.noise_probability.clamp(0.0, 1.0),
        noise_delay: cfg.noise_delay,
        drop_rate: cfg.drop_rate.clamp(0.0, 1.0),
        leader_delay: cfg.canary.leader_delay,
        bg_delivered: 0,
        bg_dropped: 0,
    };

    if let Some(bg) = &world.bg {
        let period = bg.spec.reshuffle;
        let count = bg.spec.hosts.len();
        ev.schedule(period, SimEvent::User(Ev::BgReshuffle));
        for i in 0..count {
            world.bg_pump(&mut net, &mut ev, i);
        }
    }
    for j in 0..world.jobs.len() {
        world.with_job(&mut net, &mut ev, SimTime::ZERO, j, |job, ctx| job.start(ctx));
    }

    if world.remaining_jobs > 0 {
        run(&mut net, &mut ev, cfg.time_limit, |net, ev, now, occ| world.on_event(net, ev, now, occ));
    }

    for job in &mut world.jobs {
        let complete = job.out.completion.is_some();
        job.out.correct = complete && job.out.mismatched_blocks == 0;
        if let Proto::Canary(cj) = &job.proto {
            job.out.fallbacks = cj.states.iter().map(|s| s.fallbacks).sum();
        }
    }
    let end_time = net.trace.end_time;
    Ok(SimOutcome {
        jobs: world.jobs.into_iter().map(|j| j.out).collect(),
        switch_stats: world.switches.iter().map(|s| s.stats.clone()).collect(),
        tree_peak_entries: world.tree_aggs.iter().map(|a| a.peak_entries).collect(),
        events: ev.processed(),
        end_time,
        background_delivered_bytes: world.bg_delivered,
        background_dropped_packets: world.bg_dropped,
        trace: net.trace,
    })
}
