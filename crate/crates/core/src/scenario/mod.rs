// SPDX-License-Identifier: MIT OR Apache-2.0

//! Scenario files: the ground-truth world a run simulates.
//!
//! A scenario is a JSON document (`"schema": 1`) listing devices, timed
//! contact events, diagnoses and adversary actions. Contacts are explicit
//! events rather than mobility traces. Distances are in meters, durations in
//! minutes, attenuations in dB. The `seed` field is mandatory.

mod bundled;
mod engine;
pub mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actors::{AppKind, ProbeLabel};
use crate::device::{Platform, DEFAULT_MIN_SIGHTINGS, DEFAULT_SCAN_PERIOD_MINUTES};
use crate::keyschedule::{KeySchedule, TemporaryExposureKey, DEFAULT_ROTATION_MINUTES};
use crate::radio::ChannelConfig;
use crate::riskscore::{ReportType, RiskConfig};
use crate::time::{DayIndex, DeviceId, Minute, MINUTES_PER_DAY};

pub use bundled::{bundled, Demo, DemoOutcome, BUNDLED};
pub use engine::{run, run_with, RunEvent, RunEventKind, RunOptions, SightingLogEntry, Simulation};
pub use oracle::{oracle, ExpectedRisk, ExposureEdge, NotificationKey, OracleResult, ProbeExpectation, ProbeTruth};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsentPolicy {
    /// The user accepts the enablement prompt.
    #[default]
    Grant,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub id: DeviceId,
    /// Installed app, if any. Without an app the device can still broadcast
    /// and collect when enabled at the OS level, but nothing polls or uploads.
    #[serde(default)]
    pub app_kind: Option<AppKind>,
    #[serde(default = "yes")]
    pub approved: bool,
    #[serde(default)]
    pub allowlisted: bool,
    /// Minute at which enablement is requested; `null` means never.
    #[serde(default = "minute_zero")]
    pub enable_at_minute: Option<Minute>,
    #[serde(default)]
    pub consent_policy: ConsentPolicy,
    #[serde(default)]
    pub platform: Platform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactEvent {
    pub device_a: DeviceId,
    pub device_b: DeviceId,
    pub start_minute: Minute,
    pub duration_minutes: u64,
    pub distance_m: f64,
}

impl ContactEvent {
    pub fn end_minute(&self) -> Minute {
        Minute(self.start_minute.0 + self.duration_minutes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Diagnosis {
    pub device_id: DeviceId,
    pub day: DayIndex,
    #[serde(default = "confirmed")]
    pub report_type: ReportType,
    /// Whether the user consents to key retrieval.
    #[serde(default = "yes")]
    pub consent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeaconSpec {
    pub id: DeviceId,
    pub location_label: String,
    /// Attacker-chosen keys; days without one get a key from the beacon's stream.
    #[serde(default)]
    pub chosen_keys: Vec<TemporaryExposureKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Visit {
    pub device_id: DeviceId,
    pub beacon_id: DeviceId,
    pub start_minute: Minute,
    pub duration_minutes: u64,
    #[serde(default = "one_meter")]
    pub distance_m: f64,
}

impl Visit {
    pub fn end_minute(&self) -> Minute {
        Minute(self.start_minute.0 + self.duration_minutes)
    }
}

/// A victim's phone reported as infected without their consent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coercion {
    pub device_id: DeviceId,
    pub day: DayIndex,
    #[serde(default = "confirmed")]
    pub report_type: ReportType,
}

/// An attacker reporting a beacon's keys as infected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeaconUpload {
    pub beacon_id: DeviceId,
    pub day: DayIndex,
    #[serde(default = "confirmed")]
    pub report_type: ReportType,
}

/// A probing app testing persons-of-interest keys one by one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeAction {
    pub device_id: DeviceId,
    pub day: DayIndex,
    pub keys: Vec<ProbeLabel>,
    #[serde(default = "confirmed")]
    pub report_type: ReportType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub seed: u64,
    pub duration_days: u32,
    #[serde(default = "default_rotation")]
    pub rotation_minutes: u32,
    #[serde(default = "default_scan")]
    pub scan_period_minutes: u32,
    #[serde(default = "default_min_sightings")]
    pub min_sightings: u32,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub risk: RiskConfig,
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub contacts: Vec<ContactEvent>,
    #[serde(default)]
    pub diagnoses: Vec<Diagnosis>,
    #[serde(default)]
    pub beacons: Vec<BeaconSpec>,
    #[serde(default)]
    pub visits: Vec<Visit>,
    #[serde(default)]
    pub coercions: Vec<Coercion>,
    #[serde(default)]
    pub beacon_uploads: Vec<BeaconUpload>,
    #[serde(default)]
    pub probes: Vec<ProbeAction>,
}

fn yes() -> bool {
    true
}
fn minute_zero() -> Option<Minute> {
    Some(Minute(0))
}
fn one_meter() -> f64 {
    1.0
}
fn confirmed() -> ReportType {
    ReportType::ConfirmedTest
}
fn default_rotation() -> u32 {
    DEFAULT_ROTATION_MINUTES
}
fn default_scan() -> u32 {
    DEFAULT_SCAN_PERIOD_MINUTES
}
fn default_min_sightings() -> u32 {
    DEFAULT_MIN_SIGHTINGS
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    Scenario::from_json_str(&text)
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn schedule(&self) -> KeySchedule {
        KeySchedule::new(self.rotation_minutes).expect("validated")
    }

    pub fn end_minute(&self) -> Minute {
        Minute(u64::from(self.duration_days) * MINUTES_PER_DAY)
    }

    pub fn device(&self, id: &DeviceId) -> Option<&DeviceSpec> {
        self.devices.iter().find(|d| &d.id == id)
    }

    pub fn is_beacon(&self, id: &DeviceId) -> bool {
        self.beacons.iter().any(|b| &b.id == id)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema != SCHEMA_VERSION {
            return Err(invalid("schema", format!("unsupported schema {}, expected {SCHEMA_VERSION}", self.schema)));
        }
        if self.duration_days == 0 {
            return Err(invalid("duration_days", "must be at least 1"));
        }
        KeySchedule::new(self.rotation_minutes).map_err(|e| invalid("rotation_minutes", e.to_string()))?;
        if self.scan_period_minutes == 0 || !self.rotation_minutes.is_multiple_of(self.scan_period_minutes) {
            return Err(invalid("scan_period_minutes", "must be positive and divide rotation_minutes"));
        }
        if self.min_sightings == 0 {
            return Err(invalid("min_sightings", "must be at least 1"));
        }
        self.channel.validate().map_err(|e| invalid("channel", e.to_string()))?;
        self.risk.validate().map_err(|e| invalid("risk", e.to_string()))?;

        let end = self.end_minute();
        let last_day = DayIndex(self.duration_days - 1);

        let mut device_ids = BTreeSet::new();
        for (i, d) in self.devices.iter().enumerate() {
            if d.id.as_str().is_empty() {
                return Err(invalid(format!("devices[{i}].id"), "must not be empty"));
            }
            if !device_ids.insert(&d.id) {
                return Err(invalid(format!("devices[{i}].id"), format!("duplicate id \"{}\"", d.id)));
            }
            if d.enable_at_minute.is_some_and(|m| m >= end) {
                return Err(invalid(format!("devices[{i}].enable_at_minute"), "outside scenario duration"));
            }
        }
        let mut beacon_ids = BTreeSet::new();
        for (i, b) in self.beacons.iter().enumerate() {
            if b.id.as_str().is_empty() {
                return Err(invalid(format!("beacons[{i}].id"), "must not be empty"));
            }
            if device_ids.contains(&b.id) || !beacon_ids.insert(&b.id) {
                return Err(invalid(format!("beacons[{i}].id"), format!("duplicate id \"{}\"", b.id)));
            }
            let mut days = BTreeSet::new();
            for (j, k) in b.chosen_keys.iter().enumerate() {
                if !days.insert(k.day) || k.day > last_day {
                    return Err(invalid(format!("beacons[{i}].chosen_keys[{j}].day"), "duplicate or out of range"));
                }
            }
        }

        let need_device = |field: String, id: &DeviceId| -> Result<(), ScenarioError> {
            if device_ids.contains(id) {
                Ok(())
            } else {
                Err(invalid(field, format!("unknown device \"{id}\"")))
            }
        };
        let need_beacon = |field: String, id: &DeviceId| -> Result<(), ScenarioError> {
            if beacon_ids.contains(id) {
                Ok(())
            } else {
                Err(invalid(field, format!("unknown beacon \"{id}\"")))
            }
        };
        let need_day = |field: String, day: DayIndex| -> Result<(), ScenarioError> {
            if day <= last_day {
                Ok(())
            } else {
                Err(invalid(field, format!("day {} outside scenario duration", day.0)))
            }
        };
        let need_weight = |field: String, rt: ReportType| -> Result<(), ScenarioError> {
            self.risk.report_weight(rt).map(|_| ()).map_err(|e| invalid(field, e.to_string()))
        };
        let need_span = |field: String, start: Minute, duration: u64, distance: f64| -> Result<(), ScenarioError> {
            if duration == 0 {
                return Err(invalid(format!("{field}.duration_minutes"), "must be positive"));
            }
            if start.0 + duration > end.0 {
                return Err(invalid(format!("{field}.start_minute"), "event runs past scenario end"));
            }
            if !(distance > 0.0 && distance.is_finite()) {
                return Err(invalid(format!("{field}.distance_m"), "must be positive"));
            }
            Ok(())
        };

        let mut spans: BTreeMap<(DeviceId, DeviceId), Vec<(Minute, Minute)>> = BTreeMap::new();
        for (i, c) in self.contacts.iter().enumerate() {
            let f = format!("contacts[{i}]");
            need_device(format!("{f}.device_a"), &c.device_a)?;
            need_device(format!("{f}.device_b"), &c.device_b)?;
            if c.device_a == c.device_b {
                return Err(invalid(format!("{f}.device_b"), "a contact needs two distinct devices"));
            }
            need_span(f.clone(), c.start_minute, c.duration_minutes, c.distance_m)?;
            let pair = if c.device_a < c.device_b {
                (c.device_a.clone(), c.device_b.clone())
            } else {
                (c.device_b.clone(), c.device_a.clone())
            };
            spans.entry(pair).or_default().push((c.start_minute, c.end_minute()));
        }
        for (i, v) in self.visits.iter().enumerate() {
            let f = format!("visits[{i}]");
            need_device(format!("{f}.device_id"), &v.device_id)?;
            need_beacon(format!("{f}.beacon_id"), &v.beacon_id)?;
            need_span(f, v.start_minute, v.duration_minutes, v.distance_m)?;
            spans.entry((v.beacon_id.clone(), v.device_id.clone())).or_default().push((v.start_minute, v.end_minute()));
        }
        for ((a, b), mut list) in spans {
            list.sort();
            if list.windows(2).any(|w| w[1].0 < w[0].1) {
                return Err(invalid("contacts", format!("overlapping events between \"{a}\" and \"{b}\"")));
            }
        }

        for (i, d) in self.diagnoses.iter().enumerate() {
            let f = format!("diagnoses[{i}]");
            need_device(format!("{f}.device_id"), &d.device_id)?;
            need_day(format!("{f}.day"), d.day)?;
            need_weight(format!("{f}.report_type"), d.report_type)?;
        }
        for (i, c) in self.coercions.iter().enumerate() {
            let f = format!("coercions[{i}]");
            need_device(format!("{f}.device_id"), &c.device_id)?;
            need_day(format!("{f}.day"), c.day)?;
            need_weight(format!("{f}.report_type"), c.report_type)?;
        }
        for (i, u) in self.beacon_uploads.iter().enumerate() {
            let f = format!("beacon_uploads[{i}]");
            need_beacon(format!("{f}.beacon_id"), &u.beacon_id)?;
            need_day(format!("{f}.day"), u.day)?;
            need_weight(format!("{f}.report_type"), u.report_type)?;
        }
        for (i, p) in self.probes.iter().enumerate() {
            let f = format!("probes[{i}]");
            need_device(format!("{f}.device_id"), &p.device_id)?;
            need_day(format!("{f}.day"), p.day)?;
            need_weight(format!("{f}.report_type"), p.report_type)?;
            let kind = self.device(&p.device_id).and_then(|d| d.app_kind);
            if kind != Some(AppKind::Probing) {
                return Err(invalid(format!("{f}.device_id"), "probing requires a device with a probing app"));
            }
            for (j, k) in p.keys.iter().enumerate() {
                if !device_ids.contains(&k.owner) && !beacon_ids.contains(&k.owner) {
                    return Err(invalid(format!("{f}.keys[{j}].owner"), format!("unknown device \"{}\"", k.owner)));
                }
                if k.day > p.day {
                    return Err(invalid(format!("{f}.keys[{j}].day"), "key day after probe day"));
                }
            }
        }
        Ok(())
    }
}
