use crate::fabric::topology::LinkId;
use crate::switch::PortId;
use crate::time::SimTime;

/// Byte counters of one directed link.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkCounters {
    /// Bytes that reached the output queue (accepted or tail-dropped).
    pub offered_bytes: u64,
    pub tx_bytes: u64,
    /// Transmitted bytes belonging to tracked (allreduce) traffic.
    pub tracked_tx_bytes: u64,
    /// Tail drops plus packets discarded by failures.
    pub dropped_bytes: u64,
    /// Transmitted bytes lost on the wire by injected loss.
    pub lost_bytes: u64,
    pub tx_packets: u64,
    pub dropped_packets: u64,
    /// Times a lossless packet found the queue full and was re-offered later.
    pub deferrals: u64,
    pub peak_queue_bytes: u64,
}

/// One up-port decision, recorded when routing tracing is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoutingDecision {
    pub time: SimTime,
    pub node: usize,
    pub default_port: PortId,
    pub default_bytes: u64,
    pub default_available: bool,
    pub chosen: PortId,
    pub chosen_bytes: u64,
    /// Least enqueued bytes over the available up-ports.
    pub min_bytes: u64,
    pub capacity: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub links: Vec<LinkCounters>,
    pub routing: Vec<RoutingDecision>,
    pub record_routing: bool,
    pub end_time: SimTime,
}

impl Trace {
    pub fn new(links: usize, record_routing: bool) -> Self {
        Self {
            links: vec![LinkCounters::default(); links],
            routing: Vec::new(),
            record_routing,
            end_time: SimTime::ZERO,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.links.iter().all(|l| l.offered_bytes == 0) && self.routing.is_empty()
    }

    pub fn link(&self, link: LinkId) -> &LinkCounters {
        &self.links[link]
    }

    pub fn total_tx_bytes(&self) -> u64 {
        self.links.iter().map(|l| l.tx_bytes).sum()
    }
}
