//! Flat `key = value` experiment description.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::fabric::routing::LoadBalancing;
use crate::fabric::topology::FatTreeScale;
use crate::fabric::FailureSpec;
use crate::sim::Algorithm;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("key {0:?} given twice")]
    Duplicate(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub edge_count: usize,
    pub up_ports: usize,
    pub hosts_per_edge: usize,
    pub link_gbps: f64,
    pub hop_latency_ns: u64,
    pub queue_bytes: u64,

    pub algorithm: Algorithm,
    pub allreduce_bytes: u64,
    /// Share of all hosts running allreduce jobs.
    pub allreduce_fraction: f64,
    /// Share of all hosts generating background traffic.
    pub congestion_fraction: f64,
    pub concurrent_jobs: usize,
    pub elements_per_packet: usize,

    pub timeout_ns: u64,
    pub timer_granularity_ns: u64,
    pub leader_delay_ns: u64,
    pub table_size: u32,
    pub early_completion: bool,
    pub max_retries: u32,
    pub min_rto_ns: u64,
    /// Blocks in flight per host; 0 = derive from the round trip.
    pub window: usize,
    /// Canary block-start rate as a fraction of line rate; 0 = unpaced.
    pub pacing: f64,

    pub noise_probability: f64,
    pub noise_delay_ns: u64,
    pub drop_rate: f64,
    pub failures: Vec<FailureSpec>,

    pub bg_flow_bytes: u64,
    pub bg_reshuffle_ns: u64,
    pub bg_window_bytes: u64,
    pub bg_payload_bytes: u64,
    pub bg_ack_delay_ns: u64,
    pub bg_policy: LoadBalancing,

    pub seed: u64,
    pub repetitions: usize,
    pub time_limit_us: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            edge_count: FatTreeScale::DESK.edge_count,
            up_ports: FatTreeScale::DESK.up_ports,
            hosts_per_edge: FatTreeScale::DESK.hosts_per_edge,
            link_gbps: 100.0,
            hop_latency_ns: 300,
            queue_bytes: crate::fabric::queue::DEFAULT_QUEUE_BYTES,
            algorithm: Algorithm::Canary,
            allreduce_bytes: 4 << 20,
            allreduce_fraction: 0.5,
            congestion_fraction: 0.0,
            concurrent_jobs: 1,
            elements_per_packet: crate::codec::LARGE_NETWORK_ELEMENTS,
            timeout_ns: 2_000,
            timer_granularity_ns: 0,
            leader_delay_ns: 1_000,
            table_size: 32 * 1024,
            early_completion: true,
            max_retries: 3,
            min_rto_ns: 200_000,
            window: 0,
            pacing: 0.97,
            noise_probability: 0.0,
            noise_delay_ns: 1_000,
            drop_rate: 0.0,
            failures: Vec::new(),
            bg_flow_bytes: 64 * 1024,
            bg_reshuffle_ns: 100_000,
            bg_window_bytes: 128 * 1024,
            bg_payload_bytes: 1024,
            bg_ack_delay_ns: 2_000,
            bg_policy: LoadBalancing::Adaptive,
            seed: 1,
            repetitions: 5,
            time_limit_us: 1_000_000,
        }
    }
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err("expected true or false".into()),
    }
}

fn parse_policy(s: &str) -> Result<LoadBalancing, String> {
    match s {
        "adaptive" => Ok(LoadBalancing::Adaptive),
        "static-hash" | "static" | "ecmp" => Ok(LoadBalancing::StaticHash),
        _ => Err("expected adaptive or static-hash".into()),
    }
}

fn policy_name(p: LoadBalancing) -> &'static str {
    match p {
        LoadBalancing::Adaptive => "adaptive",
        LoadBalancing::StaticHash => "static-hash",
    }
}

fn num<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    s.replace('_', "").parse::<T>().map_err(|e| e.to_string())
}

/// Sizes accept a `KiB`/`MiB`/`GiB` suffix.
fn parse_bytes(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let (digits, mult) = [("GiB", 1u64 << 30), ("MiB", 1 << 20), ("KiB", 1 << 10), ("B", 1)]
        .iter()
        .find_map(|(suffix, m)| s.strip_suffix(suffix).map(|d| (d.trim(), *m)))
        .unwrap_or((s, 1));
    num::<u64>(digits)?
        .checked_mul(mult)
        .ok_or_else(|| "size overflows".to_string())
}

/// Keys understood by [`ExperimentConfig::set`], in file order.
pub const KEYS: &[&str] = &[
    "edge_count",
    "up_ports",
    "hosts_per_edge",
    "link_gbps",
    "hop_latency_ns",
    "queue_bytes",
    "algorithm",
    "allreduce_bytes",
    "allreduce_fraction",
    "congestion_fraction",
    "concurrent_jobs",
    "elements_per_packet",
    "timeout_ns",
    "timer_granularity_ns",
    "leader_delay_ns",
    "table_size",
    "early_completion",
    "max_retries",
    "min_rto_ns",
    "window",
    "pacing",
    "noise_probability",
    "noise_delay_ns",
    "drop_rate",
    "failures",
    "bg_flow_bytes",
    "bg_reshuffle_ns",
    "bg_window_bytes",
    "bg_payload_bytes",
    "bg_ack_delay_ns",
    "bg_policy",
    "seed",
    "repetitions",
    "time_limit_us",
];

impl ExperimentConfig {
    /// Parses a config file; absent keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate(key.to_string()));
            }
            cfg.set(key, value.trim())?;
        }
        Ok(cfg)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |reason: String| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            reason,
        };
        match key {
            "edge_count" => self.edge_count = num(value).map_err(bad)?,
            "up_ports" => self.up_ports = num(value).map_err(bad)?,
            "hosts_per_edge" => self.hosts_per_edge = num(value).map_err(bad)?,
            "link_gbps" => self.link_gbps = num(value).map_err(bad)?,
            "hop_latency_ns" => self.hop_latency_ns = num(value).map_err(bad)?,
            "queue_bytes" => self.queue_bytes = parse_bytes(value).map_err(bad)?,
            "algorithm" => self.algorithm = value.parse().map_err(bad)?,
            "allreduce_bytes" => self.allreduce_bytes = parse_bytes(value).map_err(bad)?,
            "allreduce_fraction" => self.allreduce_fraction = num(value).map_err(bad)?,
            "congestion_fraction" => self.congestion_fraction = num(value).map_err(bad)?,
            "concurrent_jobs" => self.concurrent_jobs = num(value).map_err(bad)?,
            "elements_per_packet" => self.elements_per_packet = num(value).map_err(bad)?,
            "timeout_ns" => self.timeout_ns = num(value).map_err(bad)?,
            "timer_granularity_ns" => self.timer_granularity_ns = num(value).map_err(bad)?,
            "leader_delay_ns" => self.leader_delay_ns = num(value).map_err(bad)?,
            "table_size" => self.table_size = num(value).map_err(bad)?,
            "early_completion" => self.early_completion = parse_bool(value).map_err(bad)?,
            "max_retries" => self.max_retries = num(value).map_err(bad)?,
            "min_rto_ns" => self.min_rto_ns = num(value).map_err(bad)?,
            "window" => self.window = num(value).map_err(bad)?,
            "pacing" => self.pacing = num(value).map_err(bad)?,
            "noise_probability" => self.noise_probability = num(value).map_err(bad)?,
            "noise_delay_ns" => self.noise_delay_ns = num(value).map_err(bad)?,
            "drop_rate" => self.drop_rate = num(value).map_err(bad)?,
            "failures" => {
                self.failures = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<FailureSpec>().map_err(|e| bad(e.to_string())))
                    .collect::<Result<_, _>>()?
            }
            "bg_flow_bytes" => self.bg_flow_bytes = parse_bytes(value).map_err(bad)?,
            "bg_reshuffle_ns" => self.bg_reshuffle_ns = num(value).map_err(bad)?,
            "bg_window_bytes" => self.bg_window_bytes = parse_bytes(value).map_err(bad)?,
            "bg_payload_bytes" => self.bg_payload_bytes = parse_bytes(value).map_err(bad)?,
            "bg_ack_delay_ns" => self.bg_ack_delay_ns = num(value).map_err(bad)?,
            "bg_policy" => self.bg_policy = parse_policy(value).map_err(bad)?,
            "seed" => self.seed = num(value).map_err(bad)?,
            "repetitions" => self.repetitions = num(value).map_err(bad)?,
            "time_limit_us" => self.time_limit_us = num(value).map_err(bad)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn scale(&self) -> FatTreeScale {
        FatTreeScale {
            edge_count: self.edge_count,
            up_ports: self.up_ports,
            hosts_per_edge: self.hosts_per_edge,
        }
    }

    pub fn host_count(&self) -> usize {
        self.edge_count * self.hosts_per_edge
    }

    pub fn link_bps(&self) -> u64 {
        (self.link_gbps * 1e9).round() as u64
    }

    /// Hosts given to allreduce jobs and to background traffic.
    pub fn host_split(&self) -> (usize, usize) {
        let total = self.host_count() as f64;
        let jobs = (self.allreduce_fraction * total).round() as usize;
        let bg = (self.congestion_fraction * total).round() as usize;
        (jobs, bg)
    }

    /// Checks cross-field constraints that parsing alone cannot.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let frac = |f: f64| (0.0..=1.0).contains(&f);
        if self.edge_count == 0 || self.up_ports == 0 || self.hosts_per_edge == 0 {
            return fail("topology dimensions must be positive");
        }
        if self.hosts_per_edge + self.up_ports > 64 || self.edge_count > 64 {
            return fail("switches are limited to 64 ports");
        }
        if !(self.link_gbps.is_finite() && self.link_gbps > 0.0) {
            return fail("link_gbps must be positive");
        }
        if !frac(self.allreduce_fraction) || !frac(self.congestion_fraction) {
            return fail("fractions must lie in [0, 1]");
        }
        if self.allreduce_fraction + self.congestion_fraction > 1.0 + 1e-9 {
            return fail("allreduce_fraction + congestion_fraction exceeds 1");
        }
        let (job_hosts, bg_hosts) = self.host_split();
        if self.concurrent_jobs == 0 || self.concurrent_jobs > 255 {
            return fail("concurrent_jobs must be between 1 and 255");
        }
        if job_hosts < self.concurrent_jobs {
            return fail("every job needs at least one host");
        }
        if bg_hosts == 1 {
            return fail("background traffic needs at least two hosts");
        }
        if self.allreduce_bytes == 0 {
            return fail("allreduce_bytes must be positive");
        }
        if self.elements_per_packet == 0 {
            return fail("elements_per_packet must be positive");
        }
        let blocks = (self.allreduce_bytes.div_ceil(4)).div_ceil(self.elements_per_packet as u64);
        if blocks >= 1 << 23 {
            return fail("allreduce needs more blocks than the id space holds");
        }
        if self.table_size == 0 || (self.table_size as usize) < self.concurrent_jobs {
            return fail("table_size must give every job at least one slot");
        }
        if !frac(self.pacing) {
            return fail("pacing must lie in [0, 1]");
        }
        if !frac(self.noise_probability) || !frac(self.drop_rate) {
            return fail("probabilities must lie in [0, 1]");
        }
        if self.drop_rate >= 1.0 {
            return fail("drop_rate must be below 1");
        }
        if self.repetitions == 0 {
            return fail("repetitions must be positive");
        }
        if self.bg_payload_bytes == 0 || self.bg_flow_bytes == 0 || self.bg_reshuffle_ns == 0 {
            return fail("background sizes and period must be positive");
        }
        if self.bg_window_bytes < self.bg_payload_bytes + 57 {
            return fail("bg_window_bytes must cover at least one background packet");
        }
        let topo = crate::fabric::topology::build_fat_tree(
            self.scale(),
            self.link_bps(),
            crate::time::SimTime::from_nanos(self.hop_latency_ns),
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for f in &self.failures {
            crate::fabric::inject_failure(&topo, *f).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    /// Renders every key, so `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "edge_count" => self.edge_count.to_string(),
            "up_ports" => self.up_ports.to_string(),
            "hosts_per_edge" => self.hosts_per_edge.to_string(),
            "link_gbps" => self.link_gbps.to_string(),
            "hop_latency_ns" => self.hop_latency_ns.to_string(),
            "queue_bytes" => self.queue_bytes.to_string(),
            "algorithm" => self.algorithm.to_string(),
            "allreduce_bytes" => self.allreduce_bytes.to_string(),
            "allreduce_fraction" => self.allreduce_fraction.to_string(),
            "congestion_fraction" => self.congestion_fraction.to_string(),
            "concurrent_jobs" => self.concurrent_jobs.to_string(),
            "elements_per_packet" => self.elements_per_packet.to_string(),
            "timeout_ns" => self.timeout_ns.to_string(),
            "timer_granularity_ns" => self.timer_granularity_ns.to_string(),
            "leader_delay_ns" => self.leader_delay_ns.to_string(),
            "table_size" => self.table_size.to_string(),
            "early_completion" => self.early_completion.to_string(),
            "max_retries" => self.max_retries.to_string(),
            "min_rto_ns" => self.min_rto_ns.to_string(),
            "window" => self.window.to_string(),
            "pacing" => self.pacing.to_string(),
            "noise_probability" => self.noise_probability.to_string(),
            "noise_delay_ns" => self.noise_delay_ns.to_string(),
            "drop_rate" => self.drop_rate.to_string(),
            "failures" => self
                .failures
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "bg_flow_bytes" => self.bg_flow_bytes.to_string(),
            "bg_reshuffle_ns" => self.bg_reshuffle_ns.to_string(),
            "bg_window_bytes" => self.bg_window_bytes.to_string(),
            "bg_payload_bytes" => self.bg_payload_bytes.to_string(),
            "bg_ack_delay_ns" => self.bg_ack_delay_ns.to_string(),
            "bg_policy" => policy_name(self.bg_policy).to_string(),
            "seed" => self.seed.to_string(),
            "repetitions" => self.repetitions.to_string(),
            "time_limit_us" => self.time_limit_us.to_string(),
            _ => return None,
        })
    }
}

impl FromStr for ExperimentConfig {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}
