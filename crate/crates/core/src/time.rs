use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

/// Simulation timestamp or duration in picoseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_picos(ps: u64) -> Self {
        SimTime(ps)
    }

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns * 1_000)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000_000)
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        SimTime((secs * 1e12).round() as u64)
    }

    pub const fn as_picos(self) -> u64 {
        self.0
    }

    pub fn as_nanos_f64(self) -> f64 {
        self.0 as f64 / 1e3
    }

    pub fn as_micros_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e12
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }

    /// Rounds up to the next multiple of `granularity` (identity when zero).
    pub fn round_up_to(self, granularity: SimTime) -> SimTime {
        if granularity.0 == 0 {
            return self;
        }
        SimTime(self.0.div_ceil(granularity.0) * granularity.0)
    }

    pub fn times(self, factor: u64) -> SimTime {
        SimTime(self.0 * factor)
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}us", self.as_micros_f64())
    }
}

/// Time to push `bytes` onto a link of `bits_per_sec`, rounded to the nearest picosecond.
pub fn serialization_time(bytes: u64, bits_per_sec: u64) -> SimTime {
    let bits = bytes as u128 * 8;
    let ps = (bits * 1_000_000_000_000 + bits_per_sec as u128 / 2) / bits_per_sec as u128;
    SimTime(ps as u64)
}
