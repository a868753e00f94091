//! Protocol-level simulation: allreduce jobs and background traffic running
//! on the packet-level fabric model.

mod engine;
pub mod inputs;
pub mod packet;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::fabric::routing::LoadBalancing;
use crate::fabric::topology::FatTreeScale;
use crate::fabric::trace::Trace;
use crate::fabric::FailureSpec;
use crate::switch::SwitchStats;
use crate::time::SimTime;

pub use engine::simulate;
pub use inputs::Inputs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    Canary,
    Ring,
    StaticTree { trees: usize },
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Canary => write!(f, "canary"),
            Algorithm::Ring => write!(f, "ring"),
            Algorithm::StaticTree { trees } => write!(f, "static-tree-{trees}"),
        }
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "canary" => Ok(Algorithm::Canary),
            "ring" => Ok(Algorithm::Ring),
            other => {
                let trees = other
                    .strip_prefix("static-tree-")
                    .or_else(|| other.strip_prefix("static-tree"))
                    .ok_or_else(|| format!("unknown algorithm {other:?}"))?;
                let trees = if trees.is_empty() {
                    1
                } else {
                    trees
                        .trim_start_matches(['-', '(', ':'])
                        .trim_end_matches(')')
                        .parse()
                        .map_err(|_| format!("bad tree count in {other:?}"))?
                };
                if trees == 0 {
                    return Err("static-tree needs at least one tree".into());
                }
                Ok(Algorithm::StaticTree { trees })
            }
        }
    }
}

/// Canary tunables shared by every switch and host.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanaryParams {
    pub timeout: SimTime,
    pub timer_granularity: SimTime,
    pub leader_delay: SimTime,
    pub table_size: u32,
    pub early_completion: bool,
    pub max_retries: u32,
    /// Floor on the host retransmission timeout.
    pub min_rto: SimTime,
    /// Hosts start new blocks at most at this fraction of line rate; 0 disables pacing.
    pub pacing: f64,
}

impl Default for CanaryParams {
    fn default() -> Self {
        Self {
            timeout: SimTime::from_micros(2),
            timer_granularity: SimTime::ZERO,
            leader_delay: SimTime::from_micros(1),
            table_size: 32 * 1024,
            early_completion: true,
            max_retries: 3,
            min_rto: SimTime::from_micros(200),
            pacing: 0.97,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JobSpec {
    /// Participating hosts; list order defines ring order and leader rotation.
    pub hosts: Vec<u32>,
    pub algorithm: Algorithm,
    pub bytes: u64,
    pub inputs: Inputs,
}

#[derive(Debug, Clone)]
pub struct BackgroundSpec {
    pub hosts: Vec<u32>,
    pub flow_bytes: u64,
    pub reshuffle: SimTime,
    /// Unacknowledged bytes each sender may have outstanding.
    pub window_bytes: u64,
    pub payload_bytes: u64,
    pub ack_delay: SimTime,
    pub policy: LoadBalancing,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub scale: FatTreeScale,
    pub link_bps: u64,
    pub hop_latency: SimTime,
    pub queue_bytes: u64,
    pub elements_per_packet: usize,
    pub jobs: Vec<JobSpec>,
    pub background: Option<BackgroundSpec>,
    pub canary: CanaryParams,
    pub noise_probability: f64,
    pub noise_delay: SimTime,
    /// Per-link loss probability for Canary data and control packets.
    pub drop_rate: f64,
    pub failures: Vec<FailureSpec>,
    /// Blocks each host keeps in flight; 0 derives it from the round-trip estimate.
    pub window_blocks: usize,
    pub seed: u64,
    pub record_routing: bool,
    pub collect_results: bool,
    pub time_limit: SimTime,
    pub link_retry_delay: SimTime,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scale: FatTreeScale::DESK,
            link_bps: 100_000_000_000,
            hop_latency: SimTime::from_nanos(300),
            queue_bytes: crate::fabric::queue::DEFAULT_QUEUE_BYTES,
            elements_per_packet: crate::codec::LARGE_NETWORK_ELEMENTS,
            jobs: Vec::new(),
            background: None,
            canary: CanaryParams::default(),
            noise_probability: 0.0,
            noise_delay: SimTime::from_micros(1),
            drop_rate: 0.0,
            failures: Vec::new(),
            window_blocks: 0,
            seed: 1,
            record_routing: false,
            collect_results: false,
            time_limit: SimTime::from_micros(1_000_000),
            link_retry_delay: SimTime::from_micros(1),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct JobOutcome {
    pub algorithm: Option<Algorithm>,
    pub hosts: usize,
    pub bytes: u64,
    pub blocks: usize,
    pub window_blocks: usize,
    /// Time the slowest host finished; `None` if the run hit the time limit.
    pub completion: Option<SimTime>,
    pub host_completion: Vec<Option<SimTime>>,
    pub correct: bool,
    pub mismatched_blocks: u64,
    /// Final vectors per host (job host order), when requested.
    pub results: Option<Vec<Vec<i32>>>,
    pub retransmissions: u64,
    pub reissues: u64,
    pub fallbacks: u64,
    pub bypass_packets: u64,
    pub restoration_packets: u64,
    pub leader_packets: u64,
    /// Reduce packets the leader received, per block.
    pub leader_fan_in: Vec<u32>,
    pub protocol_errors: u64,
    pub injected_drops: u64,
    pub bypass_blocks: BTreeSet<u32>,
    pub restored_blocks: BTreeSet<u32>,
}

#[derive(Debug, Clone, Default)]
pub struct SimOutcome {
    pub jobs: Vec<JobOutcome>,
    pub trace: Trace,
    /// Canary switch counters, indexed by switch address.
    pub switch_stats: Vec<SwitchStats>,
    /// Peak static-tree aggregation entries per switch address.
    pub tree_peak_entries: Vec<usize>,
    pub events: u64,
    pub end_time: SimTime,
    pub background_delivered_bytes: u64,
    pub background_dropped_packets: u64,
}

impl SimOutcome {
    pub fn all_complete(&self) -> bool {
        self.jobs.iter().all(|j| j.completion.is_some())
    }
}
