use std::collections::BTreeSet;
use std::sync::Arc;

use canary::baselines::static_tree::static_tree_reduce_block;
use canary::baselines::{build_static_trees, ring_allreduce, ring_reduce_in_memory};
use canary::fabric::topology::NodeKind;
use canary::fabric::{build_fat_tree, FatTreeScale, Topology};
use canary::sim::{simulate, Algorithm, Inputs, JobSpec, SimConfig, SimOutcome};
use canary::SimTime;
use proptest::prelude::*;

fn desk() -> Topology {
    build_fat_tree(FatTreeScale::DESK, 100_000_000_000, SimTime::from_nanos(300)).unwrap()
}

fn oracle(inputs: &[Vec<i32>]) -> Vec<i32> {
    let mut out = vec![0i32; inputs[0].len()];
    for v in inputs {
        for (o, x) in out.iter_mut().zip(v) {
            *o = o.wrapping_add(*x);
        }
    }
    out
}

fn job_inputs(hosts: usize, len: usize, seed: u64) -> Vec<Vec<i32>> {
    // cheap deterministic filler; values span the full i32 range to exercise wrapping
    (0..hosts)
        .map(|h| {
            (0..len)
                .map(|i| (seed ^ (h as u64) << 40 ^ i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) as i32)
                .collect()
        })
        .collect()
}

fn run_job(hosts: &[u32], algorithm: Algorithm, inputs: &[Vec<i32>], seed: u64) -> SimOutcome {
    let sim = SimConfig {
        jobs: vec![JobSpec {
            hosts: hosts.to_vec(),
            algorithm,
            bytes: 4 * inputs[0].len() as u64,
            inputs: Inputs::Explicit(Arc::new(inputs.to_vec())),
        }],
        collect_results: true,
        seed,
        ..SimConfig::default()
    };
    simulate(&sim).unwrap()
}

fn host_set(max: usize) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::btree_set(0u32..64, 2..max).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn in_memory_ring_and_tree_agree(
        hosts in host_set(20),
        len in 1usize..200,
        seed in any::<u64>(),
        n_trees in 1usize..5,
        order_seed in any::<u64>(),
    ) {
        let inputs = job_inputs(hosts.len(), len, seed);
        let expected = oracle(&inputs);
        let ring = ring_reduce_in_memory(&inputs).unwrap();
        prop_assert!(ring.iter().all(|r| r == &expected));

        let topo = desk();
        let set = build_static_trees(&topo, &hosts, n_trees, seed).unwrap();
        let mut contributions: Vec<(u32, Vec<i32>)> = hosts.iter().copied().zip(inputs.iter().cloned()).collect();
        // arrival order must not matter
        let k = contributions.len();
        contributions.rotate_left(order_seed as usize % k);
        for tree in &set.trees {
            let out = static_tree_reduce_block(&topo, tree, &contributions).unwrap();
            prop_assert_eq!(out.len(), hosts.len());
            prop_assert!(out.values().all(|r| r == &expected));
        }
    }

    #[test]
    fn ring_schedule_moves_the_expected_volume(hosts in host_set(30), bytes in 1u64..1_000_000) {
        let s = ring_allreduce(&hosts, bytes).unwrap();
        let n = hosts.len() as u64;
        prop_assert_eq!(s.step_count() as u64, 2 * (n - 1));
        let total: u64 = hosts.iter().map(|&h| s.bytes_sent_by(h)).sum();
        // every chunk crosses n - 1 links in each of the two phases
        prop_assert_eq!(total, 2 * (n - 1) * bytes);
        for &h in &hosts {
            let sent = s.bytes_sent_by(h) as f64;
            let ideal = 2.0 * (n - 1) as f64 / n as f64 * bytes as f64;
            prop_assert!((sent - ideal).abs() <= 2.0 * (n - 1) as f64, "{} vs {}", sent, ideal);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Every algorithm hands every host the same element-wise sum.
    #[test]
    fn simulated_algorithms_agree(hosts in host_set(12), len in 1usize..2_000, seed in any::<u64>()) {
        let inputs = job_inputs(hosts.len(), len, seed);
        let expected = oracle(&inputs);
        for algorithm in [
            Algorithm::Ring,
            Algorithm::StaticTree { trees: 1 },
            Algorithm::StaticTree { trees: 3 },
            Algorithm::Canary,
        ] {
            let out = run_job(&hosts, algorithm, &inputs, seed);
            let job = &out.jobs[0];
            prop_assert!(job.completion.is_some(), "{} did not finish", algorithm);
            let results = job.results.as_ref().unwrap();
            prop_assert_eq!(results.len(), hosts.len());
            for r in results {
                prop_assert_eq!(r, &expected, "{}", algorithm);
            }
        }
    }
}

/// Tracked bytes each edge sends on its up-links, keyed by (edge, up index).
fn up_link_usage(topo: &Topology, out: &SimOutcome) -> BTreeSet<(u16, u16)> {
    let mut used = BTreeSet::new();
    for link in 0..topo.link_count() {
        let (node, port) = topo.link_source(link);
        if let NodeKind::Edge(e) = topo.kind(node) {
            if topo.is_up_port(node, port) && out.trace.link(link).tracked_tx_bytes > 0 {
                used.insert((e, port - topo.scale.hosts_per_edge as u16));
            }
        }
    }
    used
}

fn cores_used(topo: &Topology, out: &SimOutcome) -> BTreeSet<u16> {
    (0..topo.link_count())
        .filter_map(|link| match topo.kind(topo.link_source(link).0) {
            NodeKind::Core(c) if out.trace.link(link).tracked_tx_bytes > 0 => Some(c),
            _ => None,
        })
        .collect()
}

#[test]
fn static_trees_stay_on_their_cores() {
    let topo = desk();
    let hosts: Vec<u32> = vec![0, 3, 9, 17, 18, 33, 40, 63];
    let edges: BTreeSet<u16> = hosts.iter().map(|&h| topo.edge_of(h)).collect();
    let inputs = job_inputs(hosts.len(), 20_000, 4);
    for n_trees in [1usize, 2, 4] {
        let out = run_job(&hosts, Algorithm::StaticTree { trees: n_trees }, &inputs, 8);
        assert!(out.jobs[0].correct);
        let cores = cores_used(&topo, &out);
        assert_eq!(cores.len(), n_trees, "cores {cores:?}");
        let used = up_link_usage(&topo, &out);
        for &e in &edges {
            let ports: BTreeSet<u16> = used.iter().filter(|(edge, _)| *edge == e).map(|&(_, p)| p).collect();
            // each participating edge talks only to the roots
            assert_eq!(ports, cores, "edge {e}");
        }
        assert!(used.iter().all(|(e, _)| edges.contains(e)));
    }
}

#[test]
fn ring_hosts_send_twice_the_in_network_volume() {
    let topo = desk();
    let hosts: Vec<u32> = (0..64).step_by(4).collect();
    let n = hosts.len() as f64;
    let inputs = job_inputs(hosts.len(), 64 * 1024, 2);
    let uplink = |out: &SimOutcome| -> f64 {
        let total: u64 = hosts
            .iter()
            .map(|&h| out.trace.link(topo.link_id(topo.host_node(h), 0)).tracked_tx_bytes)
            .sum();
        total as f64 / n
    };
    let ring = run_job(&hosts, Algorithm::Ring, &inputs, 1);
    let tree = run_job(&hosts, Algorithm::StaticTree { trees: 1 }, &inputs, 1);
    let canary = run_job(&hosts, Algorithm::Canary, &inputs, 1);
    for out in [&ring, &tree, &canary] {
        assert!(out.jobs[0].correct);
    }
    let ideal = 2.0 * (n - 1.0) / n;
    let ratio = uplink(&ring) / uplink(&tree);
    assert!((ratio - ideal).abs() / ideal < 0.05, "ring/tree {ratio:.3} vs {ideal:.3}");
    let ratio = uplink(&ring) / uplink(&canary);
    assert!((ratio - ideal).abs() / ideal < 0.05, "ring/canary {ratio:.3} vs {ideal:.3}");
}
