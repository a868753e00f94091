use std::collections::HashMap;

use canary::codec::CanaryPacket;
use canary::switch::{
    multicast_key_space, reassemble_shards, shard_children_bitmap, ShardRuleTable, SwitchAction, SwitchConfig,
    SwitchState,
};
use canary::{BlockId, SimTime};
use proptest::prelude::*;

const E: usize = 4;

#[derive(Debug, Clone)]
enum Step {
    /// Reduce packet for block `block` with `counter` contributions from `port`.
    Packet { block: u32, port: u16, counter: u16 },
    /// Let time pass and fire every due timer.
    Advance(u64),
}

fn steps(blocks: u32) -> impl Strategy<Value = Vec<Step>> {
    prop::collection::vec(
        prop_oneof![
            4 => (0..blocks, 0u16..16, 1u16..4).prop_map(|(block, port, counter)| Step::Packet { block, port, counter }),
            1 => (0u64..2_000).prop_map(Step::Advance),
        ],
        1..80,
    )
}

fn reduce(block: u32, counter: u16, hosts: u16) -> CanaryPacket {
    CanaryPacket {
        destination: 7,
        id: BlockId::new(1, block).0,
        counter,
        hosts,
        data: vec![counter as i32; E],
        ..CanaryPacket::default()
    }
}

fn switch(table_size: u32, early: bool) -> SwitchState {
    SwitchState::new(SwitchConfig {
        port_count: 16,
        table_size,
        timeout: SimTime::from_nanos(500),
        early_completion: early,
        hash_seed: 3,
        ..SwitchConfig::default()
    })
}

/// Counters and data leaving the switch toward the leader, per block id.
#[derive(Default)]
struct Upstream {
    counters: HashMap<u32, u32>,
    sums: HashMap<u32, i64>,
}

impl Upstream {
    fn add(&mut self, p: &CanaryPacket) {
        *self.counters.entry(p.id).or_default() += p.counter as u32;
        *self.sums.entry(p.id).or_default() += p.data[0] as i64;
    }
}

fn absorb(action: SwitchAction, up: &mut Upstream, timers: &mut Vec<(SimTime, u32)>) {
    match action {
        SwitchAction::StoreNew { slot, deadline, emit } => {
            timers.push((deadline, slot));
            if let Some(p) = emit {
                up.add(&p);
            }
        }
        SwitchAction::Aggregate { emit: Some(p), .. } => up.add(&p),
        SwitchAction::Straggler { forward } | SwitchAction::CollisionForward { forward } => up.add(&forward),
        SwitchAction::EmitUpstream { packet } => up.add(&packet),
        SwitchAction::Aggregate { emit: None, .. } | SwitchAction::Noop | SwitchAction::Drop => {}
        SwitchAction::Replicate { .. } => unreachable!("no broadcast in the reduce phase"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    /// Every contribution is either still held in a descriptor or has left the
    /// switch exactly once, and the data travels with it.
    #[test]
    fn counter_conservation(steps in steps(6), table_size in 1u32..8, early in any::<bool>()) {
        let hosts = 200u16;
        let mut sw = switch(table_size, early);
        let mut up = Upstream::default();
        let mut injected: HashMap<u32, u32> = HashMap::new();
        let mut timers = Vec::new();
        let mut now = SimTime::ZERO;
        for step in steps {
            match step {
                Step::Packet { block, port, counter } => {
                    let p = reduce(block, counter, hosts);
                    *injected.entry(p.id).or_default() += counter as u32;
                    let action = sw.on_reduce_packet(p, port, now).unwrap();
                    absorb(action, &mut up, &mut timers);
                }
                Step::Advance(ns) => {
                    now += SimTime::from_nanos(ns);
                    timers.sort();
                    let due: Vec<_> = timers.iter().filter(|(t, _)| *t <= now).copied().collect();
                    timers.retain(|(t, _)| *t > now);
                    for (t, slot) in due {
                        absorb(sw.on_timeout(slot, t), &mut up, &mut timers);
                    }
                }
            }
            for (&id, &total) in &injected {
                let held = (0..table_size)
                    .filter_map(|s| sw.descriptor(s))
                    .filter(|d| d.id == id && !d.sent_upstream)
                    .map(|d| d.counter_sum)
                    .sum::<u32>();
                let sent = up.counters.get(&id).copied().unwrap_or(0);
                prop_assert_eq!(sent + held, total);
                let held_sum: i64 = (0..table_size)
                    .filter_map(|s| sw.descriptor(s))
                    .filter(|d| d.id == id && !d.sent_upstream)
                    .map(|d| d.accumulator[0] as i64)
                    .sum();
                // every element of a packet equals its counter, so data sums track counters
                prop_assert_eq!(up.sums.get(&id).copied().unwrap_or(0) + held_sum, total as i64);
            }
        }
    }

    /// Descriptors are freed only by the broadcast, exactly once.
    #[test]
    fn descriptor_lifetime(steps in steps(4), table_size in 1u32..6) {
        let mut sw = switch(table_size, false);
        let mut up = Upstream::default();
        let mut timers = Vec::new();
        let mut now = SimTime::ZERO;
        let mut seen = std::collections::BTreeSet::new();
        for step in steps {
            let before = sw.occupancy();
            match step {
                Step::Packet { block, port, counter } => {
                    let p = reduce(block, counter, 200);
                    let action = sw.on_reduce_packet(p, port, now).unwrap();
                    if matches!(action, SwitchAction::StoreNew { .. }) {
                        seen.insert(block);
                    }
                    absorb(action, &mut up, &mut timers);
                    prop_assert!(sw.occupancy() >= before);
                }
                Step::Advance(ns) => {
                    now += SimTime::from_nanos(ns);
                    for (_, slot) in timers.clone() {
                        sw.on_timeout(slot, now);
                    }
                    prop_assert_eq!(sw.occupancy(), before);
                }
            }
        }
        for block in seen {
            let mut b = reduce(block, 0, 200);
            b.multicast = true;
            let held = (0..table_size).filter_map(|s| sw.descriptor(s)).any(|d| d.id == b.id);
            let before = sw.occupancy();
            let first = sw.on_broadcast_packet(b.clone(), now);
            prop_assert_eq!(matches!(first, SwitchAction::Replicate { .. }), held);
            prop_assert_eq!(sw.occupancy(), before - usize::from(held));
            prop_assert_eq!(sw.on_broadcast_packet(b, now), SwitchAction::Drop);
        }
        prop_assert_eq!(sw.occupancy(), 0);
    }

    /// Without stragglers or collisions a switch emits at most one packet more
    /// than it receives over a block's reduce and broadcast.
    #[test]
    fn multicast_rate_neutrality(ports in prop::collection::vec(0u16..16, 1..30), early in any::<bool>()) {
        let hosts = ports.len() as u16;
        let mut sw = switch(64, early);
        let mut emitted = 0usize;
        let mut slot = None;
        for (i, &port) in ports.iter().enumerate() {
            match sw.on_reduce_packet(reduce(9, 1, hosts), port, SimTime::from_nanos(i as u64)).unwrap() {
                SwitchAction::StoreNew { slot: s, emit, .. } => {
                    slot = Some(s);
                    emitted += usize::from(emit.is_some());
                }
                SwitchAction::Aggregate { emit, .. } => emitted += usize::from(emit.is_some()),
                other => prop_assert!(false, "unexpected {:?}", other),
            }
        }
        if let SwitchAction::EmitUpstream { .. } = sw.on_timeout(slot.unwrap(), SimTime::from_micros(10)) {
            emitted += 1;
        }
        let mut b = reduce(9, hosts, hosts);
        b.multicast = true;
        match sw.on_broadcast_packet(b, SimTime::from_micros(20)) {
            SwitchAction::Replicate { ports: out, .. } => {
                let mut distinct = ports.clone();
                distinct.sort_unstable();
                distinct.dedup();
                prop_assert_eq!(&out, &distinct);
                emitted += out.len();
            }
            other => prop_assert!(false, "unexpected {:?}", other),
        }
        prop_assert_eq!(emitted, 1 + distinct_count(&ports));
        let received = ports.len() + 1;
        prop_assert!(emitted <= received + 1);
    }

    #[test]
    fn shard_round_trip(bitmap in 1u64.., cfg in prop::sample::select(vec![(64u16, 4u16), (64, 8), (64, 1), (32, 4), (8, 2)])) {
        let (ports, shards) = cfg;
        let mask = if ports == 64 { u64::MAX } else { (1u64 << ports) - 1 };
        let bitmap = bitmap & mask;
        prop_assume!(bitmap != 0);
        let entries = shard_children_bitmap(bitmap, ports, shards).unwrap();
        prop_assert_eq!(reassemble_shards(&entries), bitmap);
        let mut from_ports = 0u64;
        for e in &entries {
            prop_assert!(e.bits != 0);
            for p in e.ports() {
                from_ports |= 1 << p;
            }
        }
        prop_assert_eq!(from_ports, bitmap);
    }
}

fn distinct_count(ports: &[u16]) -> usize {
    let mut d = ports.to_vec();
    d.sort_unstable();
    d.dedup();
    d.len()
}

#[test]
fn worked_shard_example_and_rules() {
    let entries = shard_children_bitmap(0b0010_1101, 8, 2).unwrap();
    let by_key: Vec<(u64, Vec<u16>)> = entries.iter().map(|e| (e.key(), e.ports())).collect();
    assert_eq!(by_key, vec![(0b0_1101, vec![0, 2, 3]), (0b1_0010, vec![5])]);
    let table = ShardRuleTable::build(8, 2).unwrap();
    assert_eq!(table.rules.len() as u64, multicast_key_space(8, 2).unwrap());
    assert_eq!(table.lookup(0b1_0010), Some(&[5u16][..]));
    assert_eq!(multicast_key_space(64, 4).unwrap(), 262_144);
}
