//! Run metrics, CSV rendering and the analytical switch-memory model.

use std::fmt::Write as _;

use crate::fabric::trace::Trace;
use crate::time::SimTime;

/// Bytes of descriptor memory a switch needs to keep a link busy:
/// bandwidth times the window `2·d·(l + t) + r` during which a descriptor lives.
pub fn memory_occupancy_model(bandwidth_bps: u64, diameter: u32, hop_latency: SimTime, timeout: SimTime, leader_delay: SimTime) -> u64 {
    let window_ps = 2 * diameter as u128 * (hop_latency.as_picos() as u128 + timeout.as_picos() as u128)
        + leader_delay.as_picos() as u128;
    // bits/s * ps / (8 bits * 1e12 ps/s)
    (bandwidth_bps as u128 * window_ps / 8_000_000_000_000) as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtilizationReport {
    /// Percentage per directed link, indexed by link id.
    pub per_link: Vec<f64>,
    pub average: f64,
    pub idle_links: usize,
}

/// Per-link utilization of allreduce traffic over `window`.
pub fn link_utilization_distribution(trace: &Trace, link_bps: u64, window: SimTime) -> UtilizationReport {
    let capacity_bits = link_bps as f64 * window.as_secs_f64();
    let per_link: Vec<f64> = trace
        .links
        .iter()
        .map(|l| {
            if capacity_bits <= 0.0 {
                0.0
            } else {
                (l.tracked_tx_bytes as f64 * 8.0 / capacity_bits * 100.0).min(100.0)
            }
        })
        .collect();
    let average = if per_link.is_empty() {
        0.0
    } else {
        per_link.iter().sum::<f64>() / per_link.len() as f64
    };
    let idle_links = trace.links.iter().filter(|l| l.tracked_tx_bytes == 0).count();
    UtilizationReport {
        per_link,
        average,
        idle_links,
    }
}

/// One simulated repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub repetition: usize,
    pub algorithm: String,
    pub jobs: usize,
    pub hosts_per_job: usize,
    pub allreduce_bytes: u64,
    /// Mean over jobs of the slowest-host completion time.
    pub runtime_us: f64,
    pub goodput_gbps: f64,
    pub avg_link_util_pct: f64,
    pub idle_links: usize,
    pub retransmissions: u64,
    pub reissues: u64,
    pub fallbacks: u64,
    pub collisions: u64,
    pub stragglers: u64,
    pub bypass_packets: u64,
    pub restoration_packets: u64,
    pub peak_descriptor_bytes: u64,
    pub dropped_packets: u64,
    pub completed: bool,
    pub correct: bool,
}

pub const CSV_HEADER: &str = "row,repetition,algorithm,jobs,hosts_per_job,allreduce_bytes,runtime_us,goodput_gbps,\
avg_link_util_pct,idle_links,retransmissions,reissues,fallbacks,collisions,stragglers,bypass_packets,\
restoration_packets,peak_descriptor_bytes,dropped_packets,completed,correct";

/// Numeric columns, in CSV order, used for the mean/std rows.
fn numeric(row: &RunRow) -> [f64; 14] {
    [
        row.runtime_us,
        row.goodput_gbps,
        row.avg_link_util_pct,
        row.idle_links as f64,
        row.retransmissions as f64,
        row.reissues as f64,
        row.fallbacks as f64,
        row.collisions as f64,
        row.stragglers as f64,
        row.bypass_packets as f64,
        row.restoration_packets as f64,
        row.peak_descriptor_bytes as f64,
        row.dropped_packets as f64,
        row.completed as u8 as f64,
    ]
}

fn fmt_f(x: f64) -> String {
    format!("{x:.4}")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<RunRow>,
}

impl MetricsReport {
    pub fn mean(&self) -> Option<[f64; 14]> {
        if self.rows.is_empty() {
            return None;
        }
        let n = self.rows.len() as f64;
        let mut acc = [0.0; 14];
        for r in &self.rows {
            for (a, x) in acc.iter_mut().zip(numeric(r)) {
                *a += x;
            }
        }
        Some(acc.map(|a| a / n))
    }

    /// Sample standard deviation (zero for a single run).
    pub fn std(&self) -> Option<[f64; 14]> {
        let mean = self.mean()?;
        let n = self.rows.len();
        if n < 2 {
            return Some([0.0; 14]);
        }
        let mut acc = [0.0; 14];
        for r in &self.rows {
            for ((a, x), m) in acc.iter_mut().zip(numeric(r)).zip(mean) {
                *a += (x - m) * (x - m);
            }
        }
        Some(acc.map(|a| (a / (n - 1) as f64).sqrt()))
    }

    pub fn mean_goodput_gbps(&self) -> f64 {
        self.mean().map_or(0.0, |m| m[1])
    }

    pub fn mean_runtime_us(&self) -> f64 {
        self.mean().map_or(0.0, |m| m[0])
    }

    pub fn mean_utilization_pct(&self) -> f64 {
        self.mean().map_or(0.0, |m| m[2])
    }

    pub fn mean_idle_links(&self) -> f64 {
        self.mean().map_or(0.0, |m| m[3])
    }

    pub fn all_correct(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.correct)
    }

    /// CSV body lines (without header), each prefixed by `prefix`.
    pub fn csv_lines(&self, prefix: &str) -> Vec<String> {
        let mut lines = Vec::new();
        for r in &self.rows {
            lines.push(format!(
                "{prefix}run,{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.repetition,
                r.algorithm,
                r.jobs,
                r.hosts_per_job,
                r.allreduce_bytes,
                fmt_f(r.runtime_us),
                fmt_f(r.goodput_gbps),
                fmt_f(r.avg_link_util_pct),
                r.idle_links,
                r.retransmissions,
                r.reissues,
                r.fallbacks,
                r.collisions,
                r.stragglers,
                r.bypass_packets,
                r.restoration_packets,
                r.peak_descriptor_bytes,
                r.dropped_packets,
                r.completed,
                r.correct
            ));
        }
        if let (Some(mean), Some(std), Some(first)) = (self.mean(), self.std(), self.rows.first()) {
            let correct = self.all_correct();
            for (label, v) in [("mean", mean), ("std", std)] {
                let mut line = format!(
                    "{prefix}{label},,{},{},{},{}",
                    first.algorithm, first.jobs, first.hosts_per_job, first.allreduce_bytes
                );
                for x in v {
                    let _ = write!(line, ",{}", fmt_f(x));
                }
                let _ = write!(line, ",{}", if label == "mean" { correct.to_string() } else { String::new() });
                lines.push(line);
            }
        }
        lines
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for line in self.csv_lines("") {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}
