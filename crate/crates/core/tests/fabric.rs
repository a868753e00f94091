use canary::fabric::topology::NodeKind;
use canary::fabric::trace::LinkCounters;
use canary::fabric::{build_fat_tree, run, EventQueue, Fabric, FatTreeScale, LoadBalancing, Occurrence, SimEvent, WirePacket};
use canary::harness::{calibrate, ExperimentConfig};
use canary::sim::{simulate, Algorithm, Inputs, JobSpec, SimConfig};
use canary::SimTime;
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Pkt {
    dest: u32,
    bytes: u64,
    lossless: bool,
}

impl WirePacket for Pkt {
    fn wire_bytes(&self) -> u64 {
        self.bytes
    }
    fn lossless(&self) -> bool {
        self.lossless
    }
    fn tracked(&self) -> bool {
        self.lossless
    }
}

#[derive(Debug, Clone)]
enum User {
    Inject { src: u32, pkt: Pkt },
    FailCore(u16),
}

const SCALE: FatTreeScale = FatTreeScale {
    edge_count: 3,
    up_ports: 2,
    hosts_per_edge: 3,
};
const QUEUE: u64 = 4_000;

#[derive(Debug, Clone)]
struct Scenario {
    injections: Vec<(u64, u32, u32, u64, bool)>,
    fail_core: Option<(u64, u16)>,
    policy: LoadBalancing,
}

fn scenario() -> impl Strategy<Value = Scenario> {
    let hosts = (SCALE.edge_count * SCALE.hosts_per_edge) as u32;
    (
        prop::collection::vec((0u64..20_000, 0..hosts, 1..hosts, 64u64..1_600, any::<bool>()), 1..200),
        prop::option::of((0u64..20_000, 0u16..SCALE.up_ports as u16)),
        prop_oneof![Just(LoadBalancing::Adaptive), Just(LoadBalancing::StaticHash)],
    )
        .prop_map(move |(mut injections, fail_core, policy)| {
            for inj in &mut injections {
                // shift so the destination is never the source
                inj.2 = (inj.1 + inj.2) % hosts;
            }
            Scenario {
                injections,
                fail_core,
                policy,
            }
        })
}

#[derive(Debug, Default, PartialEq)]
struct Tally {
    injected: u64,
    delivered: u64,
    dropped: u64,
    unroutable: u64,
}

/// Runs the scenario with a minimal up/down forwarder, checking per-link flow
/// conservation after every observable event.
fn play(s: &Scenario) -> Result<(Fabric<Pkt>, Tally), TestCaseError> {
    let topo = build_fat_tree(SCALE, 100_000_000_000, SimTime::from_nanos(300)).unwrap();
    let mut fabric = Fabric::new(topo, QUEUE, true);
    let mut events: EventQueue<SimEvent<Pkt, User>> = EventQueue::new();
    for &(t, src, dest, bytes, lossless) in &s.injections {
        events.schedule(
            SimTime::from_nanos(t),
            SimEvent::User(User::Inject {
                src,
                pkt: Pkt { dest, bytes, lossless },
            }),
        );
    }
    if let Some((t, core)) = s.fail_core {
        events.schedule(SimTime::from_nanos(t), SimEvent::User(User::FailCore(core)));
    }
    let mut tally = Tally {
        injected: s.injections.len() as u64,
        ..Tally::default()
    };
    let mut violation = None;
    let policy = s.policy;
    run(&mut fabric, &mut events, SimTime::MAX, |fabric, events, now, occ| {
        let forward = |fabric: &mut Fabric<Pkt>, events: &mut EventQueue<SimEvent<Pkt, User>>, node, pkt: Pkt, tally: &mut Tally| {
            match fabric.route_to_host(now, node, pkt.dest, policy) {
                Some(port) => {
                    if fabric.send(events, node, port, pkt).is_some() {
                        tally.dropped += 1;
                    }
                }
                None => tally.unroutable += 1,
            }
        };
        match occ {
            Err(User::Inject { src, pkt }) => {
                let node = fabric.topo.host_node(src);
                forward(fabric, events, node, pkt, &mut tally);
            }
            Err(User::FailCore(c)) => {
                let node = fabric.topo.core_node(c);
                tally.dropped += fabric.fail_node(node).len() as u64;
            }
            Ok(Occurrence::Delivered { node, packet, .. }) => match fabric.topo.kind(node) {
                NodeKind::Host(h) => {
                    assert_eq!(h, packet.dest);
                    tally.delivered += 1;
                }
                _ => forward(fabric, events, node, packet, &mut tally),
            },
            Ok(Occurrence::Dropped { .. }) => tally.dropped += 1,
        }
        for link in 0..fabric.topo.link_count() {
            let c = fabric.trace.link(link);
            let held = fabric.queue(link).enqueued_bytes();
            if c.offered_bytes != c.tx_bytes + c.dropped_bytes + held && violation.is_none() {
                violation = Some(format!("link {link} at {now:?}: {c:?} with {held} queued"));
            }
        }
        true
    });
    if let Some(v) = violation {
        return Err(TestCaseError::fail(v));
    }
    Ok((fabric, tally))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Offered bytes are transmitted, dropped or still queued; packets are delivered or dropped.
    #[test]
    fn flow_conservation(s in scenario()) {
        let (fabric, tally) = play(&s)?;
        prop_assert_eq!(tally.injected, tally.delivered + tally.dropped + tally.unroutable);
        for link in 0..fabric.topo.link_count() {
            prop_assert!(fabric.queue(link).is_empty());
            let c = fabric.trace.link(link);
            prop_assert!(c.peak_queue_bytes <= QUEUE || matches!(fabric.topo.kind(fabric.topo.link_source(link).0), NodeKind::Host(_)));
        }
        if s.fail_core.is_none() {
            // lossless packets are deferred, never dropped
            let lossless = s.injections.iter().filter(|i| i.4).count() as u64;
            prop_assert!(tally.delivered >= lossless);
            prop_assert_eq!(tally.unroutable, 0);
        }
    }

    /// Adaptive routing keeps the default port unless it is over half full, then takes a least-loaded port.
    #[test]
    fn adaptive_dominance(s in scenario()) {
        let (fabric, _) = play(&s)?;
        for d in &fabric.trace.routing {
            let default_ok = d.default_available
                && (s.policy == LoadBalancing::StaticHash || d.default_bytes * 2 <= d.capacity);
            if default_ok {
                prop_assert_eq!(d.chosen, d.default_port);
            } else {
                prop_assert_eq!(d.chosen_bytes, d.min_bytes);
            }
            if s.policy == LoadBalancing::Adaptive && d.default_bytes * 2 > d.capacity {
                prop_assert!(d.chosen_bytes <= d.default_bytes);
            }
        }
    }

    #[test]
    fn fabric_trace_is_deterministic(s in scenario()) {
        let (a, ta) = play(&s)?;
        let (b, tb) = play(&s)?;
        prop_assert_eq!(ta, tb);
        prop_assert_eq!(&a.trace.links, &b.trace.links);
        prop_assert_eq!(&a.trace.routing, &b.trace.routing);
        prop_assert_eq!(a.trace.end_time, b.trace.end_time);
    }
}

fn small_job(seed: u64, background: bool) -> SimConfig {
    let mut cfg = ExperimentConfig {
        allreduce_bytes: 64 * 1024,
        seed,
        ..ExperimentConfig::default()
    };
    if background {
        cfg.congestion_fraction = 0.5;
    }
    let mut sim = canary::harness::experiment::sim_config(&cfg, 0);
    sim.record_routing = true;
    sim
}

#[test]
fn simulation_trace_is_deterministic() {
    for background in [false, true] {
        let a = simulate(&small_job(5, background)).unwrap();
        let b = simulate(&small_job(5, background)).unwrap();
        assert_eq!(a.trace.links, b.trace.links);
        assert_eq!(a.trace.routing, b.trace.routing);
        assert_eq!(a.end_time, b.end_time);
        assert_eq!(a.events, b.events);
        let c = simulate(&small_job(6, background)).unwrap();
        assert_ne!(a.trace.links, c.trace.links, "seed must matter (background {background})");
    }
}

#[test]
fn link_counters_add_up_in_full_simulation() {
    let out = simulate(&small_job(9, true)).unwrap();
    assert!(out.all_complete());
    let busy: Vec<&LinkCounters> = out.trace.links.iter().filter(|c| c.offered_bytes > 0).collect();
    assert!(!busy.is_empty());
    for c in busy {
        // every queue is empty once the event list has drained or the run stopped early
        assert!(c.offered_bytes >= c.tx_bytes + c.dropped_bytes);
        assert!(c.tracked_tx_bytes <= c.tx_bytes);
    }
}

#[test]
fn two_host_goodput_matches_wire_efficiency() {
    let cfg = ExperimentConfig {
        allreduce_bytes: 1 << 20,
        ..ExperimentConfig::default()
    };
    let c = calibrate(&cfg).unwrap();
    assert!(c.relative_error() < 0.10, "{c:?}");
}

#[test]
fn ring_on_one_edge_crosses_no_core() {
    let sim = SimConfig {
        jobs: vec![JobSpec {
            hosts: (0..8).collect(),
            algorithm: Algorithm::Ring,
            bytes: 32 * 1024,
            inputs: Inputs::Synthetic { seed: 1 },
        }],
        ..SimConfig::default()
    };
    let out = simulate(&sim).unwrap();
    assert!(out.jobs[0].correct);
    let topo = build_fat_tree(sim.scale, sim.link_bps, sim.hop_latency).unwrap();
    for link in 0..topo.link_count() {
        let (node, port) = topo.link_source(link);
        if topo.is_up_port(node, port) || matches!(topo.kind(node), NodeKind::Core(_)) {
            assert_eq!(out.trace.link(link).tx_bytes, 0, "link {link}");
        }
    }
}

#[test]
fn bursts_exercise_detours_and_drops() {
    // three hosts on edge 0 blast the same remote host: one default up-port fills
    let injections: Vec<_> = (0..3u32)
        .flat_map(|src| (0..6).map(move |i| (i as u64, src, 8, 1_500, false)))
        .collect();
    for policy in [LoadBalancing::Adaptive, LoadBalancing::StaticHash] {
        let s = Scenario {
            injections: injections.clone(),
            fail_core: None,
            policy,
        };
        let (fabric, tally) = play(&s).unwrap();
        let detours = fabric.trace.routing.iter().filter(|d| d.chosen != d.default_port).count();
        match policy {
            LoadBalancing::Adaptive => assert!(detours > 0),
            LoadBalancing::StaticHash => {
                assert_eq!(detours, 0);
                assert!(tally.dropped > 0);
            }
        }
        assert_eq!(tally.injected, tally.delivered + tally.dropped);
    }
}
