use crate::fabric::event::EventQueue;
use crate::fabric::queue::PortQueue;
use crate::fabric::routing::{default_up_index, select_up_port, LoadBalancing, UpPortLoad};
use crate::fabric::topology::{LinkId, NodeId, NodeKind, Topology};
use crate::fabric::trace::{RoutingDecision, Trace};
use crate::switch::PortId;
use crate::time::SimTime;

/// What the fabric needs to know about a packet it carries.
pub trait WirePacket {
    /// Bytes on the wire, framing included.
    fn wire_bytes(&self) -> u64;
    /// Lossless packets are re-offered after a delay instead of being tail-dropped.
    fn lossless(&self) -> bool {
        false
    }
    /// Counted in the tracked (allreduce) utilization.
    fn tracked(&self) -> bool {
        false
    }
}

#[derive(Debug)]
pub enum NetEvent<P> {
    TxDone { link: LinkId, generation: u64 },
    Arrive { link: LinkId, packet: P },
    Retry { link: LinkId, packet: P },
}

#[derive(Debug)]
pub enum SimEvent<P, U> {
    Net(NetEvent<P>),
    User(U),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    QueueFull,
    Failure,
}

/// Outcome of a network event that the protocol layer must see.
#[derive(Debug)]
pub enum Occurrence<P> {
    Delivered { node: NodeId, port: PortId, link: LinkId, packet: P },
    Dropped { link: LinkId, packet: P, reason: DropReason },
}

/// Links, output queues and failure state of a topology.
pub struct Fabric<P> {
    pub topo: Topology,
    queues: Vec<PortQueue<P>>,
    busy: Vec<bool>,
    generation: Vec<u64>,
    link_up: Vec<bool>,
    node_up: Vec<bool>,
    pub trace: Trace,
    /// Delay before a lossless packet that found a full queue is offered again.
    pub retry_delay: SimTime,
    switch_queue_bytes: u64,
}

impl<P: WirePacket> Fabric<P> {
    /// Switch ports get `switch_queue_bytes` of buffer; host NIC queues are unbounded.
    pub fn new(topo: Topology, switch_queue_bytes: u64, record_routing: bool) -> Self {
        let links = topo.link_count();
        let queues = (0..links)
            .map(|l| {
                let (node, _) = topo.link_source(l);
                match topo.kind(node) {
                    NodeKind::Host(_) => PortQueue::new(None),
                    _ => PortQueue::new(Some(switch_queue_bytes)),
                }
            })
            .collect();
        Self {
            queues,
            busy: vec![false; links],
            generation: vec![0; links],
            link_up: vec![true; links],
            node_up: vec![true; topo.node_count()],
            trace: Trace::new(links, record_routing),
            retry_delay: SimTime::from_micros(1),
            switch_queue_bytes,
            topo,
        }
    }

    pub fn queue(&self, link: LinkId) -> &PortQueue<P> {
        &self.queues[link]
    }

    pub fn node_up(&self, node: NodeId) -> bool {
        self.node_up[node]
    }

    pub fn link_up(&self, link: LinkId) -> bool {
        self.link_up[link]
    }

    /// Queues `packet` on (node, port). Returns the packet when it is dropped.
    pub fn send<U>(
        &mut self,
        events: &mut EventQueue<SimEvent<P, U>>,
        node: NodeId,
        port: PortId,
        packet: P,
    ) -> Option<Occurrence<P>> {
        let link = self.topo.link_id(node, port);
        self.offer(events, link, packet)
    }

    fn offer<U>(&mut self, events: &mut EventQueue<SimEvent<P, U>>, link: LinkId, packet: P) -> Option<Occurrence<P>> {
        let bytes = packet.wire_bytes();
        let (node, _) = self.topo.link_source(link);
        if !self.link_up[link] || !self.node_up[node] {
            let c = &mut self.trace.links[link];
            c.offered_bytes += bytes;
            c.dropped_bytes += bytes;
            c.dropped_packets += 1;
            return Some(Occurrence::Dropped {
                link,
                packet,
                reason: DropReason::Failure,
            });
        }
        let lossless = packet.lossless();
        match self.queues[link].push(bytes, packet) {
            Ok(()) => {
                let c = &mut self.trace.links[link];
                c.offered_bytes += bytes;
                c.peak_queue_bytes = c.peak_queue_bytes.max(self.queues[link].enqueued_bytes());
                if !self.busy[link] {
                    self.start(events, link);
                }
                None
            }
            Err(packet) if lossless => {
                self.trace.links[link].deferrals += 1;
                events.schedule_in(self.retry_delay, SimEvent::Net(NetEvent::Retry { link, packet }));
                None
            }
            Err(packet) => {
                let c = &mut self.trace.links[link];
                c.offered_bytes += bytes;
                c.dropped_bytes += bytes;
                c.dropped_packets += 1;
                Some(Occurrence::Dropped {
                    link,
                    packet,
                    reason: DropReason::QueueFull,
                })
            }
        }
    }

    fn start<U>(&mut self, events: &mut EventQueue<SimEvent<P, U>>, link: LinkId) {
        let Some(bytes) = self.queues[link].front_bytes() else {
            self.busy[link] = false;
            return;
        };
        self.busy[link] = true;
        let generation = self.generation[link];
        events.schedule_in(
            self.topo.serialization(bytes),
            SimEvent::Net(NetEvent::TxDone { link, generation }),
        );
    }

    /// Processes one network event.
    pub fn handle<U>(&mut self, events: &mut EventQueue<SimEvent<P, U>>, event: NetEvent<P>) -> Option<Occurrence<P>> {
        match event {
            NetEvent::TxDone { link, generation } => {
                if generation != self.generation[link] {
                    return None;
                }
                let (bytes, packet) = self.queues[link].pop().expect("busy link has a packet");
                let c = &mut self.trace.links[link];
                c.tx_bytes += bytes;
                c.tx_packets += 1;
                if packet.tracked() {
                    c.tracked_tx_bytes += bytes;
                }
                events.schedule_in(self.topo.hop_latency, SimEvent::Net(NetEvent::Arrive { link, packet }));
                self.start(events, link);
                None
            }
            NetEvent::Arrive { link, packet } => {
                let (src, src_port) = self.topo.link_source(link);
                let (node, port) = self.topo.peer(src, src_port);
                if !self.link_up[link] || !self.node_up[node] {
                    let c = &mut self.trace.links[link];
                    c.lost_bytes += packet.wire_bytes();
                    return Some(Occurrence::Dropped {
                        link,
                        packet,
                        reason: DropReason::Failure,
                    });
                }
                Some(Occurrence::Delivered {
                    node,
                    port,
                    link,
                    packet,
                })
            }
            NetEvent::Retry { link, packet } => self.offer(events, link, packet),
        }
    }

    /// Records an injected loss of a packet that crossed `link`.
    pub fn record_loss(&mut self, link: LinkId, bytes: u64) {
        self.trace.links[link].lost_bytes += bytes;
    }

    fn discard_queue(&mut self, link: LinkId, dropped: &mut Vec<(LinkId, P)>) {
        self.generation[link] += 1;
        self.busy[link] = false;
        let drained: Vec<_> = self.queues[link].drain().collect();
        let c = &mut self.trace.links[link];
        for (bytes, packet) in drained {
            c.dropped_bytes += bytes;
            c.dropped_packets += 1;
            dropped.push((link, packet));
        }
    }

    /// Takes a node down: its queues, and the queues feeding it, are discarded.
    pub fn fail_node(&mut self, node: NodeId) -> Vec<(LinkId, P)> {
        let mut dropped = Vec::new();
        self.node_up[node] = false;
        for port in 0..self.topo.port_count(node) as PortId {
            let out = self.topo.link_id(node, port);
            let (peer, peer_port) = self.topo.peer(node, port);
            let inbound = self.topo.link_id(peer, peer_port);
            for link in [out, inbound] {
                self.link_up[link] = false;
                self.discard_queue(link, &mut dropped);
            }
        }
        dropped
    }

    pub fn restore_node(&mut self, node: NodeId) {
        self.node_up[node] = true;
        for port in 0..self.topo.port_count(node) as PortId {
            let (peer, peer_port) = self.topo.peer(node, port);
            let out = self.topo.link_id(node, port);
            let inbound = self.topo.link_id(peer, peer_port);
            if self.node_up[peer] {
                self.link_up[out] = true;
                self.link_up[inbound] = true;
            }
        }
    }

    /// Takes both directions of the cable at (node, port) down.
    pub fn fail_link(&mut self, node: NodeId, port: PortId) -> Vec<(LinkId, P)> {
        let mut dropped = Vec::new();
        let (peer, peer_port) = self.topo.peer(node, port);
        for link in [self.topo.link_id(node, port), self.topo.link_id(peer, peer_port)] {
            self.link_up[link] = false;
            self.discard_queue(link, &mut dropped);
        }
        dropped
    }

    pub fn restore_link(&mut self, node: NodeId, port: PortId) {
        let (peer, peer_port) = self.topo.peer(node, port);
        if self.node_up[node] && self.node_up[peer] {
            self.link_up[self.topo.link_id(node, port)] = true;
            self.link_up[self.topo.link_id(peer, peer_port)] = true;
        }
    }

    /// Chooses the up-port of edge switch `node` for a packet whose destination key is `key`.
    pub fn route_up(&mut self, now: SimTime, node: NodeId, key: u32, policy: LoadBalancing) -> Option<PortId> {
        let loads: Vec<UpPortLoad> = self
            .topo
            .up_ports()
            .map(|port| {
                let link = self.topo.link_id(node, port);
                let (peer, _) = self.topo.peer(node, port);
                UpPortLoad {
                    port,
                    enqueued_bytes: self.queues[link].enqueued_bytes(),
                    capacity: self.switch_queue_bytes,
                    available: self.link_up[link] && self.node_up[peer],
                }
            })
            .collect();
        let default = default_up_index(key, loads.len());
        let chosen = select_up_port(default, &loads, policy)?;
        if self.trace.record_routing {
            let chosen_load = loads.iter().find(|l| l.port == chosen).expect("chosen from loads");
            self.trace.routing.push(RoutingDecision {
                time: now,
                node,
                default_port: loads[default].port,
                default_bytes: loads[default].enqueued_bytes,
                default_available: loads[default].available,
                chosen,
                chosen_bytes: chosen_load.enqueued_bytes,
                min_bytes: loads
                    .iter()
                    .filter(|l| l.available)
                    .map(|l| l.enqueued_bytes)
                    .min()
                    .unwrap_or(0),
                capacity: self.switch_queue_bytes,
            });
        }
        Some(chosen)
    }

    /// Next port from `node` toward `host`; `None` if no live path exists.
    pub fn route_to_host(&mut self, now: SimTime, node: NodeId, host: u32, policy: LoadBalancing) -> Option<PortId> {
        match self.topo.kind(node) {
            NodeKind::Host(_) => Some(0),
            NodeKind::Edge(e) => match self.topo.host_port(e, host) {
                Some(p) => Some(p),
                None => self.route_up(now, node, host, policy),
            },
            NodeKind::Core(_) => Some(self.topo.edge_of(host)),
        }
    }

    /// Next port from `node` toward the switch with `address`.
    pub fn route_to_switch(&mut self, now: SimTime, node: NodeId, address: u16, policy: LoadBalancing) -> Option<PortId> {
        let edges = self.topo.edge_count() as u16;
        let hpe = self.topo.scale.hosts_per_edge as PortId;
        match self.topo.kind(node) {
            NodeKind::Host(_) => Some(0),
            NodeKind::Edge(e) if address == e => None,
            NodeKind::Edge(_) if address >= edges => Some(hpe + (address - edges)),
            NodeKind::Edge(_) => self.route_up(now, node, address as u32, policy),
            NodeKind::Core(c) if address == edges + c => None,
            NodeKind::Core(_) if address < edges => Some(address),
            // Core to core would need a detour through an edge; hosts never ask for it.
            NodeKind::Core(_) => None,
        }
    }
}

/// Drains the event queue up to `until`, feeding network events through the
/// fabric and everything else to `on_event`.
pub fn run<P: WirePacket, U>(
    fabric: &mut Fabric<P>,
    events: &mut EventQueue<SimEvent<P, U>>,
    until: SimTime,
    mut on_event: impl FnMut(&mut Fabric<P>, &mut EventQueue<SimEvent<P, U>>, SimTime, Result<Occurrence<P>, U>) -> bool,
) {
    while let Some((now, event)) = events.pop_until(until) {
        fabric.trace.end_time = now;
        let keep_going = match event {
            SimEvent::Net(net) => match fabric.handle(events, net) {
                Some(occ) => on_event(fabric, events, now, Ok(occ)),
                None => true,
            },
            SimEvent::User(u) => on_event(fabric, events, now, Err(u)),
        };
        if !keep_going {
            break;
        }
    }
}
