// SPDX-License-Identifier: MIT OR Apache-2.0

//! App behaviors built on the device API, plus the adversarial beacon.
//!
//! Apps reach their device only through [`ExposureNotificationApi`], so the
//! malicious variants here can do exactly what an approved app could do on a
//! real phone and nothing more:
//!
//! * [`honest_poll`] downloads new diagnosis keys, matches them in one call
//!   and notifies locally.
//! * [`recentralize_poll`] does the same, then sends every positive daily
//!   summary to the server tagged with the user's identity and the batches
//!   that produced it. No consent is asked on that path.
//! * [`probe`] matches persons-of-interest keys one per call, so each result
//!   is attributable to a single key.
//! * [`Beacon`] broadcasts identifiers from attacker-chosen keys; it needs no
//!   enablement, consent or approval.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authority::{AuthorityError, BatchId, DiagnosisKey, KeyServer, UploadSource};
use crate::device::{budget_check, ApiError, DeviceState, ExposureNotificationApi, MatchBudget, SENT_KEY_DAYS};
use crate::keyschedule::{generate_tek, EphemeralProximityIdentifier, KeySchedule, TemporaryExposureKey};
use crate::riskscore::{summarize, DailySummary, ExposureWindow, ReportType, RiskConfig};
use crate::time::{DayIndex, DeviceId, Minute};

#[derive(Debug, Error, PartialEq)]
pub enum ActorError {
    #[error(transparent)]
    Api(#[from] ApiError),
    #[error(transparent)]
    Upload(#[from] AuthorityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppKind {
    Honest,
    Recentralizing,
    Probing,
}

/// An app as the platform sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppProfile {
    pub kind: AppKind,
    pub approved: bool,
    pub allowlisted: bool,
}

/// App-side state: the profile, the download cursor and the app's own
/// accounting of match calls against the published limit.
#[derive(Debug, Clone)]
pub struct AppInstance {
    pub profile: AppProfile,
    pub cursor: BatchId,
    calls: MatchBudget,
}

impl AppInstance {
    pub fn new(profile: AppProfile) -> Self {
        Self { profile, cursor: 0, calls: MatchBudget::new(profile.allowlisted) }
    }

    fn remaining_calls(&self, time: Minute) -> usize {
        self.calls.limit().saturating_sub(self.calls.calls_in_window(time))
    }

    fn match_keys(
        &mut self,
        device: &mut dyn ExposureNotificationApi,
        keys: &[DiagnosisKey],
        risk: &RiskConfig,
        time: Minute,
    ) -> Result<Vec<ExposureWindow>, ApiError> {
        let got = device.match_keys(&self.profile, keys, risk, time);
        if got.is_ok() {
            self.calls.record(time);
        }
        got
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Notification {
    pub device_id: DeviceId,
    pub day: DayIndex,
    pub total_risk: f64,
    pub issued_at: Minute,
}

fn notifications_for(
    device: &DeviceId,
    summaries: &[DailySummary],
    risk: &RiskConfig,
    time: Minute,
) -> Vec<Notification> {
    summaries
        .iter()
        .filter(|s| s.total_risk >= risk.notification_threshold)
        .map(|s| Notification { device_id: device.clone(), day: s.day, total_risk: s.total_risk, issued_at: time })
        .collect()
}

/// Uploads the user's keys after a positive test, if the user consents.
pub fn upload_on_diagnosis(
    app: &AppInstance,
    device: &mut dyn ExposureNotificationApi,
    server: &mut KeyServer,
    report_type: ReportType,
    user_consent: bool,
    time: Minute,
) -> Result<BatchId, ActorError> {
    let keys = device.retrieve_keys(&app.profile, user_consent)?;
    let uploader = device.device_id().clone();
    Ok(server.upload_keys(uploader, &keys, report_type, UploadSource::Consented, time)?)
}

/// Daily poll of an honest app. All new keys go into a single match call;
/// with no new batches the API is not called at all.
pub fn honest_poll(
    app: &mut AppInstance,
    device: &mut dyn ExposureNotificationApi,
    server: &KeyServer,
    risk: &RiskConfig,
    time: Minute,
) -> Result<Vec<Notification>, ApiError> {
    let new = server.download_since(app.cursor);
    if new.is_empty() {
        return Ok(Vec::new());
    }
    let keys: Vec<DiagnosisKey> = new.iter().flat_map(|b| b.keys.iter().copied()).collect();
    let latest = new.last().map(|b| b.batch_id).expect("non-empty");
    let windows = app.match_keys(device, &keys, risk, time)?;
    app.cursor = latest;
    Ok(notifications_for(device.device_id(), &summarize(&windows), risk, time))
}

/// Notifies exactly like [`honest_poll`], and reports results centrally.
///
/// Each new batch is matched in its own call while the app's remaining budget
/// allows, so the server can attribute every report to one uploader. If there
/// are more new batches than calls left, the overflow shares the last call.
pub fn recentralize_poll(
    app: &mut AppInstance,
    device: &mut dyn ExposureNotificationApi,
    server: &mut KeyServer,
    risk: &RiskConfig,
    time: Minute,
) -> Result<Vec<Notification>, ApiError> {
    let new: Vec<_> = server.download_since(app.cursor).to_vec();
    if new.is_empty() {
        return Ok(Vec::new());
    }
    let remaining = app.remaining_calls(time);
    if remaining == 0 {
        let calls = app.calls.calls_in_window(time);
        return Err(ApiError::RateLimited { calls, limit: app.calls.limit() });
    }
    let singles = if new.len() <= remaining { new.len() } else { remaining - 1 };
    let mut groups: Vec<&[_]> = new[..singles].chunks(1).collect();
    if singles < new.len() {
        groups.push(&new[singles..]);
    }

    let mut all_windows = Vec::new();
    let mut reports = Vec::new();
    for group in groups {
        let keys: Vec<DiagnosisKey> = group.iter().flat_map(|b| b.keys.iter().copied()).collect();
        let windows = app.match_keys(device, &keys, risk, time)?;
        let positive: Vec<DailySummary> = summarize(&windows).into_iter().filter(|s| s.total_risk > 0.0).collect();
        if !positive.is_empty() {
            reports.push((positive, group.iter().map(|b| b.batch_id).collect::<Vec<_>>()));
        }
        all_windows.extend(windows);
    }
    app.cursor = new.last().expect("non-empty").batch_id;
    let user = device.device_id().clone();
    for (summaries, batch_ids) in reports {
        server.record_central_report(&user, &summaries, &batch_ids, time);
    }
    Ok(notifications_for(&user, &summarize(&all_windows), risk, time))
}

/// Attacker-side name for a probed key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProbeLabel {
    pub owner: DeviceId,
    pub day: DayIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ProbeOutcome {
    Matched {
        day: DayIndex,
        duration_minutes: f64,
    },
    NotMatched,
    /// Budget ran out before this key's turn.
    RateLimited,
    Denied,
    /// The attacker had no key for this owner and day.
    Unresolved,
}

impl ProbeOutcome {
    pub fn probed(&self) -> bool {
        matches!(self, Self::Matched { .. } | Self::NotMatched)
    }

    pub fn matched(&self) -> bool {
        matches!(self, Self::Matched { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEntry {
    pub label: ProbeLabel,
    pub outcome: ProbeOutcome,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub entries: Vec<ProbeEntry>,
    pub rate_limited: bool,
}

/// Matches each key in its own API call and records which ones hit.
pub fn probe(
    app: &mut AppInstance,
    device: &mut dyn ExposureNotificationApi,
    keys: &[(ProbeLabel, DiagnosisKey)],
    risk: &RiskConfig,
    time: Minute,
) -> ProbeResult {
    let mut result = ProbeResult::default();
    let mut stopped: Option<ProbeOutcome> = None;
    for (label, key) in keys {
        let outcome = match &stopped {
            Some(o) => o.clone(),
            None => match app.match_keys(device, std::slice::from_ref(key), risk, time) {
                Ok(windows) if windows.is_empty() => ProbeOutcome::NotMatched,
                Ok(windows) => ProbeOutcome::Matched {
                    day: windows[0].day,
                    duration_minutes: windows.iter().map(|w| w.duration_minutes).sum(),
                },
                Err(ApiError::RateLimited { .. }) => {
                    result.rate_limited = true;
                    stopped = Some(ProbeOutcome::RateLimited);
                    ProbeOutcome::RateLimited
                }
                Err(_) => {
                    stopped = Some(ProbeOutcome::Denied);
                    ProbeOutcome::Denied
                }
            },
        };
        result.entries.push(ProbeEntry { label: label.clone(), outcome });
    }
    result
}

/// True if `app` could still make a match call at `time`, by its own accounting.
pub fn app_can_match(app: &AppInstance, time: Minute) -> bool {
    budget_check(&app.calls, time)
}

/// A fixed-location broadcaster of identifiers from attacker-chosen keys.
#[derive(Debug, Clone)]
pub struct Beacon {
    pub beacon_id: DeviceId,
    pub location_label: String,
    chosen_tek_per_day: BTreeMap<DayIndex, TemporaryExposureKey>,
    rng: ChaCha8Rng,
}

impl Beacon {
    /// `chosen` keys are used as given; other days draw from `rng`.
    pub fn new(
        beacon_id: DeviceId,
        location_label: impl Into<String>,
        chosen: impl IntoIterator<Item = TemporaryExposureKey>,
        rng: ChaCha8Rng,
    ) -> Self {
        Self {
            beacon_id,
            location_label: location_label.into(),
            chosen_tek_per_day: chosen.into_iter().map(|k| (k.day, k)).collect(),
            rng,
        }
    }

    pub fn seeded(beacon_id: DeviceId, location_label: impl Into<String>, seed: u64) -> Self {
        Self::new(beacon_id, location_label, [], ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn key_for(&mut self, day: DayIndex) -> TemporaryExposureKey {
        let rng = &mut self.rng;
        *self.chosen_tek_per_day.entry(day).or_insert_with(|| generate_tek(rng, day))
    }

    /// Keys the beacon has used, for the given days.
    pub fn keys(&self) -> impl Iterator<Item = &TemporaryExposureKey> {
        self.chosen_tek_per_day.values()
    }

    /// Keys an attacker would report for an upload on `day`.
    pub fn upload_keys(&mut self, day: DayIndex) -> Vec<TemporaryExposureKey> {
        let first = day.0.saturating_sub(SENT_KEY_DAYS - 1);
        (first..=day.0).map(|d| self.key_for(DayIndex(d))).collect()
    }
}

/// Beacons broadcast on every tick, unconditionally.
pub fn beacon_tick(beacon: &mut Beacon, schedule: &KeySchedule, time: Minute) -> EphemeralProximityIdentifier {
    let tek = beacon.key_for(time.day());
    schedule.derive_epi(&tek, schedule.interval_at(time)).expect("interval_at is in range")
}

/// Uploads a seized phone's keys as if its owner had tested positive.
pub fn coerced_upload(
    device: &DeviceState,
    server: &mut KeyServer,
    report_type: ReportType,
    time: Minute,
) -> Result<BatchId, AuthorityError> {
    server.upload_keys(device.id().clone(), &device.seize_keys(), report_type, UploadSource::Coerced, time)
}
