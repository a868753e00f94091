//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export is a thin wrapper around a plain function so the logic can be
//! tested natively.

use canary::harness::{memory_occupancy_model, run_experiment, ExperimentConfig};
use canary::switch::{multicast_key_space, shard_children_bitmap};
use canary::SimTime;
use wasm_bindgen::prelude::*;

/// Largest allreduce the page will simulate; bigger runs stall the tab.
pub const MAX_DEMO_BYTES: u64 = 1 << 20;
pub const MAX_DEMO_REPETITIONS: usize = 5;

fn nanos(x: f64) -> Result<SimTime, String> {
    if !x.is_finite() || x < 0.0 {
        return Err(format!("{x} is not a valid duration"));
    }
    Ok(SimTime::from_secs_f64(x * 1e-9))
}

/// Descriptor memory in bytes a switch needs to sustain line rate.
pub fn switch_memory(gbps: f64, diameter: u32, hop_ns: f64, timeout_ns: f64, leader_ns: f64) -> Result<f64, String> {
    if !gbps.is_finite() || gbps <= 0.0 {
        return Err("bandwidth must be positive".into());
    }
    let bps = (gbps * 1e9).round() as u64;
    Ok(memory_occupancy_model(bps, diameter, nanos(hop_ns)?, nanos(timeout_ns)?, nanos(leader_ns)?) as f64)
}

/// Splits a children bitmap (hex or decimal) into multicast shards, one line per
/// non-empty shard, followed by the number of rules a switch must hold.
pub fn shard_report(bitmap: &str, ports: u16, shards: u16) -> Result<String, String> {
    let text = bitmap.trim().replace('_', "");
    let value = match text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => text.parse(),
    }
    .map_err(|e| format!("bad bitmap {bitmap:?}: {e}"))?;
    if ports < 64 && value >> ports != 0 {
        return Err(format!("bitmap has bits above port {}", ports - 1));
    }
    let entries = shard_children_bitmap(value, ports, shards).map_err(|e| e.to_string())?;
    let mut out = String::from("shard,key,ports\n");
    for e in &entries {
        let list: Vec<String> = e.ports().iter().map(u16::to_string).collect();
        out.push_str(&format!("{},{:#x},{}\n", e.index, e.key(), list.join(" ")));
    }
    let rules = multicast_key_space(ports, shards).map_err(|e| e.to_string())?;
    out.push_str(&format!("# {rules} pre-installed rules\n"));
    Ok(out)
}

/// Runs a config (flat `key = value` text) and returns the metrics CSV.
pub fn simulate_csv(config: &str) -> Result<String, String> {
    let cfg = ExperimentConfig::parse(config).map_err(|e| e.to_string())?;
    if cfg.allreduce_bytes > MAX_DEMO_BYTES {
        return Err(format!("the demo caps allreduce_bytes at {MAX_DEMO_BYTES}"));
    }
    if cfg.repetitions > MAX_DEMO_REPETITIONS {
        return Err(format!("the demo caps repetitions at {MAX_DEMO_REPETITIONS}"));
    }
    run_experiment(&cfg).map(|r| r.to_csv()).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn memory_model(gbps: f64, diameter: u32, hop_ns: f64, timeout_ns: f64, leader_ns: f64) -> Result<f64, JsError> {
    switch_memory(gbps, diameter, hop_ns, timeout_ns, leader_ns).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn shard_bitmap(bitmap: &str, ports: u16, shards: u16) -> Result<String, JsError> {
    shard_report(bitmap, ports, shards).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate(config: &str) -> Result<String, JsError> {
    simulate_csv(config).map_err(|e| JsError::new(&e))
}
