use serde::{Deserialize, Serialize};

use crate::switch::PortId;

/// Up-port selection policy on the upward leg of up/down routing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LoadBalancing {
    /// Default port unless its buffer is more than half full, then the least loaded port.
    Adaptive,
    /// Always the default port (ECMP-style destination hash).
    StaticHash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpPortLoad {
    pub port: PortId,
    pub enqueued_bytes: u64,
    pub capacity: u64,
    /// False when the link or the switch behind it has failed.
    pub available: bool,
}

impl UpPortLoad {
    fn over_half(&self) -> bool {
        self.enqueued_bytes * 2 > self.capacity
    }
}

/// Picks an up-port. `default` indexes into `loads` and is normally derived
/// from the packet destination. Returns `None` when no port is available.
pub fn select_up_port(default: usize, loads: &[UpPortLoad], policy: LoadBalancing) -> Option<PortId> {
    let preferred = loads.get(default)?;
    let usable = preferred.available;
    match policy {
        LoadBalancing::StaticHash if usable => Some(preferred.port),
        LoadBalancing::Adaptive if usable && !preferred.over_half() => Some(preferred.port),
        _ => loads
            .iter()
            .filter(|l| l.available)
            .min_by_key(|l| (l.enqueued_bytes, l.port))
            .map(|l| l.port),
    }
}

/// Default up-port index for a destination key.
pub fn default_up_index(key: u32, up_ports: usize) -> usize {
    key as usize % up_ports
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loads(pcts: &[u64]) -> Vec<UpPortLoad> {
        pcts.iter()
            .enumerate()
            .map(|(i, &p)| UpPortLoad {
                port: 10 + i as PortId,
                enqueued_bytes: p,
                capacity: 100,
                available: true,
            })
            .collect()
    }

    #[test]
    fn keeps_default_below_threshold() {
        assert_eq!(select_up_port(0, &loads(&[10, 0, 0]), LoadBalancing::Adaptive), Some(10));
    }

    #[test]
    fn moves_to_least_loaded() {
        assert_eq!(select_up_port(0, &loads(&[60, 30, 20]), LoadBalancing::Adaptive), Some(12));
    }

    #[test]
    fn ties_go_to_lowest_port() {
        assert_eq!(select_up_port(2, &loads(&[70, 70, 70]), LoadBalancing::Adaptive), Some(10));
    }

    #[test]
    fn static_hash_ignores_load() {
        assert_eq!(select_up_port(1, &loads(&[0, 99, 0]), LoadBalancing::StaticHash), Some(11));
    }

    #[test]
    fn failed_default_is_avoided() {
        let mut l = loads(&[0, 5, 3]);
        l[0].available = false;
        assert_eq!(select_up_port(0, &l, LoadBalancing::StaticHash), Some(12));
        l.iter_mut().for_each(|x| x.available = false);
        assert_eq!(select_up_port(0, &l, LoadBalancing::Adaptive), None);
    }
}
