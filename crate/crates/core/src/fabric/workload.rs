use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("background traffic needs at least two hosts, got {0}")]
    TooFewHosts(usize),
    #[error("reshuffle period must be positive")]
    ZeroPeriod,
}

/// Random uniform background traffic: every host streams fixed-size messages
/// to a peer, and the peers are redrawn every `reshuffle_period`.
#[derive(Debug, Clone)]
pub struct CongestionWorkload {
    pub hosts: Vec<u32>,
    pub flow_bytes: u64,
    pub reshuffle_period: SimTime,
    rng: ChaCha8Rng,
    epoch: u64,
    peers: Vec<u32>,
}

/// A peer assignment taking effect at `time`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerEpoch {
    pub time: SimTime,
    /// `(source, destination)` pairs, one per host.
    pub pairs: Vec<(u32, u32)>,
}

impl CongestionWorkload {
    pub fn new(hosts: Vec<u32>, seed: u64, flow_bytes: u64, reshuffle_period: SimTime) -> Result<Self, WorkloadError> {
        if hosts.len() < 2 {
            return Err(WorkloadError::TooFewHosts(hosts.len()));
        }
        if reshuffle_period == SimTime::ZERO {
            return Err(WorkloadError::ZeroPeriod);
        }
        let mut w = Self {
            hosts,
            flow_bytes,
            reshuffle_period,
            rng: ChaCha8Rng::seed_from_u64(seed),
            epoch: 0,
            peers: Vec::new(),
        };
        w.peers = w.draw();
        Ok(w)
    }

    /// Uniform random derangement of the host list (no host sends to itself).
    fn draw(&mut self) -> Vec<u32> {
        let n = self.hosts.len();
        let mut perm: Vec<usize> = (0..n).collect();
        loop {
            perm.shuffle(&mut self.rng);
            if perm.iter().enumerate().all(|(i, &p)| i != p) {
                return perm.iter().map(|&p| self.hosts[p]).collect();
            }
        }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Current destination of the host at `index` in the host list.
    pub fn peer_of(&self, index: usize) -> u32 {
        self.peers[index]
    }

    pub fn current(&self) -> PeerEpoch {
        PeerEpoch {
            time: self.reshuffle_period.times(self.epoch),
            pairs: self.hosts.iter().copied().zip(self.peers.iter().copied()).collect(),
        }
    }

    /// Advances to the next reshuffle.
    pub fn reshuffle(&mut self) -> PeerEpoch {
        self.epoch += 1;
        self.peers = self.draw();
        self.current()
    }
}

impl Iterator for CongestionWorkload {
    type Item = PeerEpoch;

    /// Yields the current assignment, then reshuffles.
    fn next(&mut self) -> Option<PeerEpoch> {
        let out = self.current();
        self.epoch += 1;
        self.peers = self.draw();
        Some(out)
    }
}
