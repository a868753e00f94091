use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::switch::PortId;
use crate::time::{serialization_time, SimTime};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("edge switches need {ports} ports, at most 64 are supported")]
    TooManyPorts { ports: usize },
    #[error("{count} switches exceed the 15-bit address space")]
    TooManySwitches { count: usize },
}

/// Size parameters of a two-level fat tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FatTreeScale {
    pub edge_count: usize,
    /// Up-links per edge switch; also the number of core switches.
    pub up_ports: usize,
    pub hosts_per_edge: usize,
}

impl FatTreeScale {
    pub const PAPER: FatTreeScale = FatTreeScale {
        edge_count: 32,
        up_ports: 32,
        hosts_per_edge: 32,
    };
    pub const DESK: FatTreeScale = FatTreeScale {
        edge_count: 8,
        up_ports: 8,
        hosts_per_edge: 8,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Host(u32),
    Edge(u16),
    Core(u16),
}

/// Dense node index: hosts first, then edge switches, then core switches.
pub type NodeId = usize;

/// Index of a directed link, identified by its transmitting (node, port).
pub type LinkId = usize;

/// Two-level fat tree: every edge switch connects to every core switch once.
///
/// Edge switch ports `0..hosts_per_edge` face hosts, the following `up_ports`
/// ports face cores (port `hosts_per_edge + c` reaches core `c`). Core port `e`
/// reaches edge `e`. Hosts have a single port 0. Switch addresses number the
/// edges first and then the cores.
#[derive(Debug, Clone)]
pub struct Topology {
    pub scale: FatTreeScale,
    pub link_bps: u64,
    pub hop_latency: SimTime,
    port_base: Vec<usize>,
}

pub fn build_fat_tree(scale: FatTreeScale, link_bps: u64, hop_latency: SimTime) -> Result<Topology, TopologyError> {
    if scale.edge_count == 0 {
        return Err(TopologyError::NonPositive("edge_count"));
    }
    if scale.up_ports == 0 {
        return Err(TopologyError::NonPositive("up_ports"));
    }
    if scale.hosts_per_edge == 0 {
        return Err(TopologyError::NonPositive("hosts_per_edge"));
    }
    if link_bps == 0 {
        return Err(TopologyError::NonPositive("link bandwidth"));
    }
    let edge_ports = scale.hosts_per_edge + scale.up_ports;
    if edge_ports > 64 || scale.edge_count > 64 {
        return Err(TopologyError::TooManyPorts {
            ports: edge_ports.max(scale.edge_count),
        });
    }
    let switches = scale.edge_count + scale.up_ports;
    if switches > 0x7fff {
        return Err(TopologyError::TooManySwitches { count: switches });
    }
    let mut topo = Topology {
        scale,
        link_bps,
        hop_latency,
        port_base: Vec::new(),
    };
    let mut base = 0;
    for node in 0..topo.node_count() {
        topo.port_base.push(base);
        base += topo.port_count(node);
    }
    topo.port_base.push(base);
    Ok(topo)
}

impl Topology {
    pub fn host_count(&self) -> usize {
        self.scale.edge_count * self.scale.hosts_per_edge
    }

    pub fn edge_count(&self) -> usize {
        self.scale.edge_count
    }

    pub fn core_count(&self) -> usize {
        self.scale.up_ports
    }

    pub fn switch_count(&self) -> usize {
        self.edge_count() + self.core_count()
    }

    pub fn node_count(&self) -> usize {
        self.host_count() + self.switch_count()
    }

    pub fn link_count(&self) -> usize {
        *self.port_base.last().expect("built")
    }

    pub fn kind(&self, node: NodeId) -> NodeKind {
        let h = self.host_count();
        let e = self.edge_count();
        if node < h {
            NodeKind::Host(node as u32)
        } else if node < h + e {
            NodeKind::Edge((node - h) as u16)
        } else {
            NodeKind::Core((node - h - e) as u16)
        }
    }

    pub fn host_node(&self, host: u32) -> NodeId {
        host as usize
    }

    pub fn edge_node(&self, edge: u16) -> NodeId {
        self.host_count() + edge as usize
    }

    pub fn core_node(&self, core: u16) -> NodeId {
        self.host_count() + self.edge_count() + core as usize
    }

    /// Switch address of a switch node.
    pub fn switch_address(&self, node: NodeId) -> Option<u16> {
        match self.kind(node) {
            NodeKind::Host(_) => None,
            NodeKind::Edge(e) => Some(e),
            NodeKind::Core(c) => Some(self.edge_count() as u16 + c),
        }
    }

    pub fn switch_node(&self, address: u16) -> NodeId {
        self.host_count() + address as usize
    }

    pub fn edge_of(&self, host: u32) -> u16 {
        (host as usize / self.scale.hosts_per_edge) as u16
    }

    pub fn port_count(&self, node: NodeId) -> usize {
        match self.kind(node) {
            NodeKind::Host(_) => 1,
            NodeKind::Edge(_) => self.scale.hosts_per_edge + self.scale.up_ports,
            NodeKind::Core(_) => self.edge_count(),
        }
    }

    pub fn link_id(&self, node: NodeId, port: PortId) -> LinkId {
        debug_assert!((port as usize) < self.port_count(node));
        self.port_base[node] + port as usize
    }

    /// Transmitting (node, port) of a link.
    pub fn link_source(&self, link: LinkId) -> (NodeId, PortId) {
        let node = self.port_base.partition_point(|&b| b <= link) - 1;
        (node, (link - self.port_base[node]) as PortId)
    }

    /// Node and ingress port at the far end of (node, port).
    pub fn peer(&self, node: NodeId, port: PortId) -> (NodeId, PortId) {
        let hpe = self.scale.hosts_per_edge;
        match self.kind(node) {
            NodeKind::Host(h) => (self.edge_node(self.edge_of(h)), (h as usize % hpe) as PortId),
            NodeKind::Edge(e) => {
                let p = port as usize;
                if p < hpe {
                    ((e as usize * hpe + p), 0)
                } else {
                    (self.core_node((p - hpe) as u16), e)
                }
            }
            NodeKind::Core(c) => (self.edge_node(port), (hpe + c as usize) as PortId),
        }
    }

    pub fn is_up_port(&self, node: NodeId, port: PortId) -> bool {
        matches!(self.kind(node), NodeKind::Edge(_)) && port as usize >= self.scale.hosts_per_edge
    }

    /// Up-ports of an edge switch, in port order.
    pub fn up_ports(&self) -> std::ops::Range<PortId> {
        let hpe = self.scale.hosts_per_edge as PortId;
        hpe..hpe + self.scale.up_ports as PortId
    }

    /// Down-port at an edge switch that reaches `host`, if the host hangs off it.
    pub fn host_port(&self, edge: u16, host: u32) -> Option<PortId> {
        (self.edge_of(host) == edge).then(|| (host as usize % self.scale.hosts_per_edge) as PortId)
    }

    pub fn serialization(&self, wire_bytes: u64) -> SimTime {
        serialization_time(wire_bytes, self.link_bps)
    }

    /// Number of link traversals between two hosts.
    pub fn host_hops(&self, a: u32, b: u32) -> usize {
        if a == b {
            0
        } else if self.edge_of(a) == self.edge_of(b) {
            2
        } else {
            4
        }
    }
}
