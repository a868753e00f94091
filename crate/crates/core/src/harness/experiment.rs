//! Experiment driver: placement, repetitions, sweeps, oracle and calibration runs.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec::{encoded_len, FRAMING_OVERHEAD_BYTES, HEADER_BYTES, TOFINO_ELEMENTS};
use crate::fabric::topology::FatTreeScale;
use crate::harness::config::{ConfigError, ExperimentConfig};
use crate::harness::metrics::{link_utilization_distribution, MetricsReport, RunRow, CSV_HEADER};
use crate::sim::{simulate, Algorithm, BackgroundSpec, CanaryParams, Inputs, JobSpec, SimConfig, SimOutcome};
use crate::switch::descriptor_bytes;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation failed: {0}")]
    Simulation(String),
}

/// Host placement of one repetition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub jobs: Vec<Vec<u32>>,
    pub background: Vec<u32>,
}

fn repetition_rng(seed: u64, repetition: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(repetition as u128 * 1024);
    rng
}

/// Random host placement for `repetition`: a shuffled host list is cut into
/// job groups followed by the background senders. Job members are kept in
/// host-index order.
pub fn placement(cfg: &ExperimentConfig, repetition: usize) -> Placement {
    let mut rng = repetition_rng(cfg.seed, repetition, 1);
    let mut hosts: Vec<u32> = (0..cfg.host_count() as u32).collect();
    hosts.shuffle(&mut rng);
    let (job_hosts, bg_hosts) = cfg.host_split();
    let k = cfg.concurrent_jobs.max(1);
    let mut jobs = Vec::with_capacity(k);
    let mut start = 0;
    for j in 0..k {
        let size = job_hosts / k + usize::from(j < job_hosts % k);
        let mut group = hosts[start..start + size].to_vec();
        group.sort_unstable();
        jobs.push(group);
        start += size;
    }
    let mut background = hosts[job_hosts..job_hosts + bg_hosts].to_vec();
    background.sort_unstable();
    Placement { jobs, background }
}

/// Simulator configuration for one repetition.
pub fn sim_config(cfg: &ExperimentConfig, repetition: usize) -> SimConfig {
    let place = placement(cfg, repetition);
    let mut rng = repetition_rng(cfg.seed, repetition, 2);
    let jobs = place
        .jobs
        .iter()
        .map(|hosts| JobSpec {
            hosts: hosts.clone(),
            algorithm: cfg.algorithm,
            bytes: cfg.allreduce_bytes,
            inputs: Inputs::Synthetic { seed: rng.gen() },
        })
        .collect();
    let background = (place.background.len() >= 2).then(|| BackgroundSpec {
        hosts: place.background.clone(),
        flow_bytes: cfg.bg_flow_bytes,
        reshuffle: SimTime::from_nanos(cfg.bg_reshuffle_ns),
        window_bytes: cfg.bg_window_bytes,
        payload_bytes: cfg.bg_payload_bytes,
        ack_delay: SimTime::from_nanos(cfg.bg_ack_delay_ns),
        policy: cfg.bg_policy,
    });
    SimConfig {
        scale: cfg.scale(),
        link_bps: cfg.link_bps(),
        hop_latency: SimTime::from_nanos(cfg.hop_latency_ns),
        queue_bytes: cfg.queue_bytes,
        elements_per_packet: cfg.elements_per_packet,
        jobs,
        background,
        canary: CanaryParams {
            timeout: SimTime::from_nanos(cfg.timeout_ns),
            timer_granularity: SimTime::from_nanos(cfg.timer_granularity_ns),
            leader_delay: SimTime::from_nanos(cfg.leader_delay_ns),
            table_size: cfg.table_size,
            early_completion: cfg.early_completion,
            max_retries: cfg.max_retries,
            min_rto: SimTime::from_nanos(cfg.min_rto_ns),
            pacing: cfg.pacing,
        },
        noise_probability: cfg.noise_probability,
        noise_delay: SimTime::from_nanos(cfg.noise_delay_ns),
        drop_rate: cfg.drop_rate,
        failures: cfg.failures.clone(),
        window_blocks: cfg.window,
        seed: rng.gen(),
        record_routing: false,
        collect_results: false,
        time_limit: SimTime::from_micros(cfg.time_limit_us),
        link_retry_delay: SimTime::from_micros(1),
    }
}

/// Condenses one simulation into a CSV row.
pub fn summarize(cfg: &ExperimentConfig, repetition: usize, sim: &SimConfig, out: &SimOutcome) -> RunRow {
    let jobs = &out.jobs;
    let runtimes: Vec<f64> = jobs
        .iter()
        .map(|j| j.completion.unwrap_or(out.end_time).as_micros_f64())
        .collect();
    let runtime_us = runtimes.iter().sum::<f64>() / runtimes.len().max(1) as f64;
    let goodput_gbps = if runtime_us > 0.0 {
        8.0 * cfg.allreduce_bytes as f64 / (runtime_us * 1e3)
    } else {
        0.0
    };
    let window = jobs
        .iter()
        .filter_map(|j| j.completion)
        .max()
        .unwrap_or(out.end_time);
    let util = link_utilization_distribution(&out.trace, sim.link_bps, window);
    let peak_entries = match cfg.algorithm {
        Algorithm::Canary => out.switch_stats.iter().map(|s| s.peak_occupancy).max().unwrap_or(0),
        _ => out.tree_peak_entries.iter().copied().max().unwrap_or(0),
    };
    let sum = |f: &dyn Fn(&crate::sim::JobOutcome) -> u64| jobs.iter().map(f).sum::<u64>();
    RunRow {
        repetition,
        algorithm: cfg.algorithm.to_string(),
        jobs: jobs.len(),
        hosts_per_job: jobs.first().map_or(0, |j| j.hosts),
        allreduce_bytes: cfg.allreduce_bytes,
        runtime_us,
        goodput_gbps,
        avg_link_util_pct: util.average,
        idle_links: util.idle_links,
        retransmissions: sum(&|j| j.retransmissions),
        reissues: sum(&|j| j.reissues),
        fallbacks: sum(&|j| j.fallbacks),
        collisions: out.switch_stats.iter().map(|s| s.collisions).sum(),
        stragglers: out.switch_stats.iter().map(|s| s.stragglers).sum(),
        bypass_packets: sum(&|j| j.bypass_packets),
        restoration_packets: sum(&|j| j.restoration_packets),
        peak_descriptor_bytes: peak_entries as u64 * descriptor_bytes(cfg.elements_per_packet) as u64,
        dropped_packets: out.trace.links.iter().map(|l| l.dropped_packets).sum::<u64>() + sum(&|j| j.injected_drops),
        completed: out.all_complete(),
        correct: jobs.iter().all(|j| j.correct),
    }
}

/// Runs one repetition and returns its row and the raw outcome.
pub fn run_repetition(cfg: &ExperimentConfig, repetition: usize) -> Result<(RunRow, SimOutcome), ExperimentError> {
    let sim = sim_config(cfg, repetition);
    let out = simulate(&sim).map_err(ExperimentError::Simulation)?;
    Ok((summarize(cfg, repetition, &sim, &out), out))
}

/// All repetitions of a scenario.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport, ExperimentError> {
    cfg.validate()?;
    let mut report = MetricsReport::default();
    for rep in 0..cfg.repetitions {
        report.rows.push(run_repetition(cfg, rep)?.0);
    }
    Ok(report)
}

/// Config key behind a sweep axis name; plain keys are accepted too.
pub fn axis_key(axis: &str) -> &str {
    match axis {
        "timeout" => "timeout_ns",
        "noise_prob" | "noise" => "noise_probability",
        "concurrency" => "concurrent_jobs",
        "host_fraction" => "allreduce_fraction",
        "size" => "allreduce_bytes",
        other => other,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepTable {
    pub axis: String,
    pub entries: Vec<(String, MetricsReport)>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!("axis,value,{CSV_HEADER}\n");
        for (value, report) in &self.entries {
            for line in report.csv_lines(&format!("{},{},", self.axis, value)) {
                out.push_str(&line);
                out.push('\n');
            }
        }
        out
    }
}

/// One experiment per axis value.
pub fn sweep(axis: &str, values: &[String], cfg: &ExperimentConfig) -> Result<SweepTable, ExperimentError> {
    let key = axis_key(axis);
    let mut table = SweepTable {
        axis: axis.to_string(),
        entries: Vec::new(),
    };
    for value in values {
        let mut c = cfg.clone();
        c.set(key, value)?;
        table.entries.push((value.clone(), run_experiment(&c)?));
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleRow {
    pub repetition: usize,
    pub job: usize,
    pub hosts: usize,
    pub completed: bool,
    /// Hosts whose final vector equals the direct element-wise sum.
    pub matching_hosts: usize,
}

impl OracleRow {
    pub fn passed(&self) -> bool {
        self.completed && self.matching_hosts == self.hosts
    }
}

/// Runs every repetition on explicit random inputs and checks each host's
/// final vector against a direct host-side summation.
pub fn oracle(cfg: &ExperimentConfig) -> Result<Vec<OracleRow>, ExperimentError> {
    cfg.validate()?;
    let len = cfg.allreduce_bytes.div_ceil(4) as usize;
    let mut rows = Vec::new();
    for rep in 0..cfg.repetitions {
        let mut sim = sim_config(cfg, rep);
        sim.collect_results = true;
        let mut rng = repetition_rng(cfg.seed, rep, 3);
        let mut sums = Vec::new();
        for job in &mut sim.jobs {
            let vectors: Vec<Vec<i32>> = job
                .hosts
                .iter()
                .map(|_| (0..len).map(|_| rng.gen()).collect())
                .collect();
            let mut sum = vec![0i32; len];
            for v in &vectors {
                for (a, x) in sum.iter_mut().zip(v) {
                    *a = a.wrapping_add(*x);
                }
            }
            sums.push(sum);
            job.inputs = Inputs::Explicit(Arc::new(vectors));
        }
        let out = simulate(&sim).map_err(ExperimentError::Simulation)?;
        for (j, (job, sum)) in out.jobs.iter().zip(&sums).enumerate() {
            let matching = job
                .results
                .as_ref()
                .map_or(0, |r| r.iter().filter(|v| *v == sum).count());
            rows.push(OracleRow {
                repetition: rep,
                job: j,
                hosts: job.hosts,
                completed: job.completion.is_some(),
                matching_hosts: matching,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub elements_per_packet: usize,
    pub measured_gbps: f64,
    /// Line rate scaled by payload over wire bytes.
    pub expected_gbps: f64,
}

impl Calibration {
    pub fn relative_error(&self) -> f64 {
        (self.measured_gbps - self.expected_gbps).abs() / self.expected_gbps
    }
}

/// Two hosts aggregating through a single switch with Tofino-sized packets.
pub fn calibrate(cfg: &ExperimentConfig) -> Result<Calibration, ExperimentError> {
    let e = TOFINO_ELEMENTS;
    let mut sim = SimConfig {
        scale: FatTreeScale {
            edge_count: 1,
            up_ports: 1,
            hosts_per_edge: 2,
        },
        link_bps: cfg.link_bps(),
        hop_latency: SimTime::from_nanos(cfg.hop_latency_ns),
        elements_per_packet: e,
        seed: cfg.seed,
        ..SimConfig::default()
    };
    sim.jobs.push(JobSpec {
        hosts: vec![0, 1],
        algorithm: Algorithm::Canary,
        bytes: cfg.allreduce_bytes,
        inputs: Inputs::Synthetic { seed: cfg.seed },
    });
    let out = simulate(&sim).map_err(ExperimentError::Simulation)?;
    let job = &out.jobs[0];
    let runtime = job.completion.unwrap_or(out.end_time);
    let measured_gbps = 8.0 * cfg.allreduce_bytes as f64 / (runtime.as_secs_f64() * 1e9);
    let payload = (4 * e) as f64;
    let wire = (encoded_len(e) + FRAMING_OVERHEAD_BYTES) as f64;
    debug_assert_eq!(encoded_len(e), 4 * e + HEADER_BYTES);
    Ok(Calibration {
        elements_per_packet: e,
        measured_gbps,
        expected_gbps: cfg.link_gbps * payload / wire,
    })
}
