//! Pre-installed reduction trees rooted at core switches.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::BaselineError;
use crate::fabric::topology::Topology;
use crate::switch::PortId;

/// One reduction tree: hosts are leaves, their edge switches are inner nodes,
/// and a core switch is the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticTree {
    pub root_core: u16,
    /// Member host ports below each participating edge switch.
    pub edge_children: BTreeMap<u16, Vec<PortId>>,
    /// Root ports leading to participating edge switches.
    pub root_children: Vec<PortId>,
    pub members: Vec<u32>,
}

impl StaticTree {
    pub fn expected_at_edge(&self, edge: u16) -> usize {
        self.edge_children.get(&edge).map_or(0, Vec::len)
    }

    pub fn expected_at_root(&self) -> usize {
        self.root_children.len()
    }

    /// Up-port of an edge switch toward the root.
    pub fn parent_port(&self, topo: &Topology) -> PortId {
        topo.scale.hosts_per_edge as PortId + self.root_core
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticTreeSet {
    pub trees: Vec<StaticTree>,
}

impl StaticTreeSet {
    /// Round-robin block placement.
    pub fn tree_for_block(&self, block_seq: u32) -> usize {
        block_seq as usize % self.trees.len()
    }
}

/// Builds `n_trees` trees over `hosts`, each rooted at a random core switch.
/// Roots are distinct while there are enough cores.
pub fn build_static_trees(topo: &Topology, hosts: &[u32], n_trees: usize, seed: u64) -> Result<StaticTreeSet, BaselineError> {
    if n_trees == 0 {
        return Err(BaselineError::NoTrees);
    }
    if hosts.is_empty() {
        return Err(BaselineError::NoHosts);
    }
    if let Some(&h) = hosts.iter().find(|&&h| h as usize >= topo.host_count()) {
        return Err(BaselineError::UnknownHost(h));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cores: Vec<u16> = (0..topo.core_count() as u16).collect();
    cores.shuffle(&mut rng);
    let roots: Vec<u16> = (0..n_trees)
        .map(|i| {
            if i < cores.len() {
                cores[i]
            } else {
                rng.gen_range(0..topo.core_count() as u16)
            }
        })
        .collect();

    let mut edge_children: BTreeMap<u16, Vec<PortId>> = BTreeMap::new();
    for &h in hosts {
        let edge = topo.edge_of(h);
        let port = topo.host_port(edge, h).expect("host under its edge");
        edge_children.entry(edge).or_default().push(port);
    }
    edge_children.values_mut().for_each(|v| {
        v.sort_unstable();
        v.dedup();
    });
    let root_children: Vec<PortId> = edge_children.keys().copied().collect();

    let trees = roots
        .into_iter()
        .map(|root_core| StaticTree {
            root_core,
            edge_children: edge_children.clone(),
            root_children: root_children.clone(),
            members: hosts.to_vec(),
        })
        .collect();
    Ok(StaticTreeSet { trees })
}

/// Expected-children aggregation state of one switch.
#[derive(Debug, Clone, Default)]
pub struct TreeAggregator {
    pending: HashMap<(usize, u32), (usize, Vec<i32>)>,
    pub peak_entries: usize,
}

impl TreeAggregator {
    /// Adds one child's data; returns the aggregate once all `expected` children contributed.
    pub fn add(&mut self, tree: usize, block: u32, data: &[i32], expected: usize) -> Option<Vec<i32>> {
        let entry = self
            .pending
            .entry((tree, block))
            .or_insert_with(|| (0, vec![0; data.len()]));
        for (acc, x) in entry.1.iter_mut().zip(data) {
            *acc = acc.wrapping_add(*x);
        }
        entry.0 += 1;
        let complete = entry.0 >= expected;
        self.peak_entries = self.peak_entries.max(self.pending.len());
        if complete {
            return self.pending.remove(&(tree, block)).map(|(_, d)| d);
        }
        None
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }
}

/// Reduces one block over a tree in memory: contributions are fed in the given
/// order and every member gets the root's aggregate. Non-members are ignored.
pub fn static_tree_reduce_block(
    topo: &Topology,
    tree: &StaticTree,
    contributions: &[(u32, Vec<i32>)],
) -> Result<BTreeMap<u32, Vec<i32>>, BaselineError> {
    let members: BTreeSet<u32> = tree.members.iter().copied().collect();
    let mut edges: HashMap<u16, TreeAggregator> = HashMap::new();
    let mut root = TreeAggregator::default();
    let mut result = None;
    for (host, data) in contributions {
        if !members.contains(host) {
            continue;
        }
        let edge = topo.edge_of(*host);
        let agg = edges.entry(edge).or_default();
        if let Some(partial) = agg.add(0, 0, data, tree.expected_at_edge(edge)) {
            if let Some(total) = root.add(0, 0, &partial, tree.expected_at_root()) {
                result = Some(total);
            }
        }
    }
    let total = result.ok_or(BaselineError::Incomplete)?;
    Ok(members.into_iter().map(|h| (h, total.clone())).collect())
}
