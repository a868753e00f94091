//! Congestion-aware in-network allreduce over dynamically built reduction trees.
//!
//! The crate contains the protocol engines (packet codec, switch and host state
//! machines), a deterministic packet-level simulator of a two-level fat tree,
//! baseline allreduce algorithms, and an experiment harness that produces CSV
//! metrics.

pub mod baselines;
pub mod codec;
pub mod fabric;
pub mod harness;
pub mod host;
pub mod ids;
pub mod sim;
pub mod switch;
pub mod time;

pub use codec::CanaryPacket;
pub use ids::BlockId;
pub use time::SimTime;
