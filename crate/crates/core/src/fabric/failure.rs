use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fabric::topology::Topology;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureTarget {
    Edge(u16),
    Core(u16),
    /// The cable between an edge switch and a core switch.
    Link { edge: u16, core: u16 },
}

/// A scheduled failure; `downtime` of `None` means permanent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureSpec {
    pub target: FailureTarget,
    pub at: SimTime,
    pub downtime: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FailureError {
    #[error("failure target {0} does not exist in the topology")]
    NoSuchTarget(String),
    #[error("cannot parse failure spec {0:?}; expected core:N@US[+US], edge:N@US[+US] or link:E-C@US[+US]")]
    Syntax(String),
}

/// Validated failure ready for the event queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureEvent {
    Down(FailureTarget),
    Up(FailureTarget),
}

/// Checks the target against the topology and returns the scheduled transitions.
pub fn inject_failure(topo: &Topology, spec: FailureSpec) -> Result<Vec<(SimTime, FailureEvent)>, FailureError> {
    let exists = match spec.target {
        FailureTarget::Edge(e) => (e as usize) < topo.edge_count(),
        FailureTarget::Core(c) => (c as usize) < topo.core_count(),
        FailureTarget::Link { edge, core } => (edge as usize) < topo.edge_count() && (core as usize) < topo.core_count(),
    };
    if !exists {
        return Err(FailureError::NoSuchTarget(spec.target.to_string()));
    }
    let mut out = vec![(spec.at, FailureEvent::Down(spec.target))];
    if let Some(d) = spec.downtime {
        out.push((spec.at + d, FailureEvent::Up(spec.target)));
    }
    Ok(out)
}

impl fmt::Display for FailureTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureTarget::Edge(e) => write!(f, "edge:{e}"),
            FailureTarget::Core(c) => write!(f, "core:{c}"),
            FailureTarget::Link { edge, core } => write!(f, "link:{edge}-{core}"),
        }
    }
}

impl fmt::Display for FailureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.target, self.at.as_micros_f64())?;
        if let Some(d) = self.downtime {
            write!(f, "+{}", d.as_micros_f64())?;
        }
        Ok(())
    }
}

impl FromStr for FailureSpec {
    type Err = FailureError;

    /// `core:3@20` fails core 3 at 20us; `link:1-2@5+50` fails a cable for 50us.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let syntax = || FailureError::Syntax(s.to_string());
        let (target, when) = s.trim().split_once('@').ok_or_else(syntax)?;
        let (at, downtime) = match when.split_once('+') {
            Some((a, d)) => (a, Some(d)),
            None => (when, None),
        };
        let micros = |v: &str| -> Result<SimTime, FailureError> {
            let x: f64 = v.trim().parse().map_err(|_| syntax())?;
            if !x.is_finite() || x < 0.0 {
                return Err(syntax());
            }
            Ok(SimTime::from_secs_f64(x * 1e-6))
        };
        let (kind, index) = target.split_once(':').ok_or_else(syntax)?;
        let target = match kind.trim() {
            "edge" => FailureTarget::Edge(index.trim().parse().map_err(|_| syntax())?),
            "core" => FailureTarget::Core(index.trim().parse().map_err(|_| syntax())?),
            "link" => {
                let (e, c) = index.split_once('-').ok_or_else(syntax)?;
                FailureTarget::Link {
                    edge: e.trim().parse().map_err(|_| syntax())?,
                    core: c.trim().parse().map_err(|_| syntax())?,
                }
            }
            _ => return Err(syntax()),
        };
        Ok(FailureSpec {
            target,
            at: micros(at)?,
            downtime: downtime.map(micros).transpose()?,
        })
    }
}
