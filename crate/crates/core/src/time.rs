// SPDX-License-Identifier: MIT OR Apache-2.0

//! Simulation clock and participant identifiers.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const MINUTES_PER_DAY: u64 = 1440;

/// Minutes since the simulation epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Minute(pub u64);

impl Minute {
    pub fn day(self) -> DayIndex {
        DayIndex((self.0 / MINUTES_PER_DAY) as u32)
    }

    pub fn minute_of_day(self) -> u64 {
        self.0 % MINUTES_PER_DAY
    }
}

impl fmt::Display for Minute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={}", self.0)
    }
}

/// Days since the simulation epoch; day 0 is the scenario start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DayIndex(pub u32);

impl DayIndex {
    pub fn start(self) -> Minute {
        Minute(u64::from(self.0) * MINUTES_PER_DAY)
    }

    /// Last minute of the day.
    pub fn end(self) -> Minute {
        Minute(u64::from(self.0 + 1) * MINUTES_PER_DAY - 1)
    }

    /// Whole days between `earlier` and `self`, zero if `earlier` is later.
    pub fn age_of(self, earlier: DayIndex) -> u32 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for DayIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "day {}", self.0)
    }
}

/// Identifier of a simulated participant: a device or a beacon.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub String);

impl DeviceId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DeviceId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}
