//! Packet-level model of a two-level fat tree: links, output queues, up/down
//! routing, background traffic and failures.

pub mod event;
pub mod failure;
pub mod network;
pub mod queue;
pub mod routing;
pub mod topology;
pub mod trace;
pub mod workload;

pub use event::EventQueue;
pub use failure::{inject_failure, FailureSpec, FailureTarget};
pub use network::{run, Fabric, Occurrence, SimEvent, WirePacket};
pub use queue::PortQueue;
pub use routing::{select_up_port, LoadBalancing};
pub use topology::{build_fat_tree, FatTreeScale, Topology};
pub use trace::Trace;
pub use workload::CongestionWorkload;
