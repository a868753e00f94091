//! Reference allreduce algorithms: the host-based ring and static in-network trees.

pub mod ring;
pub mod static_tree;

use thiserror::Error;

pub use ring::{ring_allreduce, ring_reduce_in_memory, RingSchedule};
pub use static_tree::{build_static_trees, StaticTree, StaticTreeSet, TreeAggregator};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BaselineError {
    #[error("host list is empty")]
    NoHosts,
    #[error("at least one tree is required")]
    NoTrees,
    #[error("host {0} is not part of the topology")]
    UnknownHost(u32),
    #[error("input vectors differ in length")]
    LengthMismatch,
    #[error("not every expected child contributed")]
    Incomplete,
}
