// SPDX-License-Identifier: MIT OR Apache-2.0

//! A deterministic discrete-event simulator of decentralized, OS-layer
//! exposure notification.
//!
//! The simulated world has devices running an exposure notification service
//! (daily temporary exposure keys, rotating proximity identifiers, local
//! stores of sent keys and received identifiers), a radio channel between
//! co-located devices, a health-authority key server, and apps built on the
//! OS API. Besides honest apps the simulator models the ways the same API
//! can be abused: an app that reports match results back to a central
//! server, an app that probes persons-of-interest keys one at a time, fixed
//! beacons broadcasting identifiers from attacker-chosen keys, and coerced
//! uploads of a victim's keys.
//!
//! Every run is a pure function of its [`scenario::Scenario`] (including its
//! seed), and every run is checked against [`scenario::oracle`], an
//! independent brute-force computation of the expected exposures from the
//! scenario's ground truth.
//!
//! Layering, bottom-up: [`time`] and [`keyschedule`], then [`radio`] and
//! [`riskscore`], then [`device`] and [`authority`], then [`actors`], and
//! finally [`scenario`] (loading, the event loop and the oracle) and
//! [`report`].

pub mod actors;
pub mod authority;
pub mod cli;
pub mod device;
pub mod keyschedule;
pub mod radio;
pub mod report;
pub mod riskscore;
pub mod scenario;
pub mod time;

pub use keyschedule::{EphemeralProximityIdentifier, KeySchedule, TemporaryExposureKey};
pub use report::RunReport;
pub use scenario::{load_scenario, oracle, run, Scenario};
pub use time::{DayIndex, DeviceId, Minute, MINUTES_PER_DAY};
