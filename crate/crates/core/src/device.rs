// SPDX-License-Identifier: MIT OR Apache-2.0

//! The OS-layer exposure notification service of a simulated device.
//!
//! A device owns two stores: `S`, its own daily keys, and `R`, identifiers it
//! received from others. Apps never see either store directly. They go
//! through [`ExposureNotificationApi`], which offers exactly two data paths:
//! key retrieval (consent on every call) and matching (rate limited, no
//! consent, returns scored windows only).

use std::collections::{BTreeMap, VecDeque};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actors::AppProfile;
use crate::authority::DiagnosisKey;
use crate::keyschedule::{
    generate_tek, EphemeralProximityIdentifier, IntervalIndex, KeySchedule, TemporaryExposureKey,
};
use crate::radio::Sighting;
use crate::riskscore::{windows_from_match, ExposureWindow, RiskConfig, RiskError};
use crate::time::{DayIndex, DeviceId, Minute, MINUTES_PER_DAY};

/// `S` holds keys for the most recent 14 days, today included.
pub const SENT_KEY_DAYS: u32 = 14;
/// Records in `R` are pruned once they are more than 14 days old.
pub const RECEIVED_RETENTION_DAYS: u32 = 14;

pub const DAILY_MATCH_LIMIT: usize = 6;
pub const ALLOWLISTED_DAILY_MATCH_LIMIT: usize = 1_000_000;

pub const DEFAULT_SCAN_PERIOD_MINUTES: u32 = 2;
pub const DEFAULT_MIN_SIGHTINGS: u32 = 3;

#[derive(Debug, Error, PartialEq)]
pub enum ApiError {
    #[error("app is not installed on this device or not approved for the exposure notification API")]
    AccessDenied,
    #[error("user declined to share exposure keys")]
    ConsentDenied,
    #[error("match budget exhausted: {calls} calls in trailing 24 h, limit {limit}")]
    RateLimited { calls: usize, limit: usize },
    #[error(transparent)]
    Risk(#[from] RiskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    #[default]
    Android,
    Ios,
}

/// A received identifier that met the close-contact rule in its rotation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceivedRecord {
    pub epi: EphemeralProximityIdentifier,
    pub day: DayIndex,
    pub exposure_minutes: f64,
    pub min_attenuation_db: f64,
    pub sighting_count: u32,
}

#[derive(Debug, Clone, Default)]
pub struct SentKeyStore {
    entries: BTreeMap<DayIndex, TemporaryExposureKey>,
}

impl SentKeyStore {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, day: DayIndex) -> Option<&TemporaryExposureKey> {
        self.entries.get(&day)
    }

    pub fn keys(&self) -> impl Iterator<Item = &TemporaryExposureKey> {
        self.entries.values()
    }

    fn insert(&mut self, tek: TemporaryExposureKey) {
        self.entries.insert(tek.day, tek);
    }

    fn prune(&mut self, current_day: DayIndex) {
        self.entries.retain(|day, _| current_day.age_of(*day) < SENT_KEY_DAYS);
    }
}

#[derive(Debug, Clone, Copy)]
struct PendingSighting {
    day: DayIndex,
    count: u32,
    min_attenuation_db: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ReceivedIdStore {
    records: BTreeMap<EphemeralProximityIdentifier, ReceivedRecord>,
    pending: BTreeMap<EphemeralProximityIdentifier, PendingSighting>,
}

impl ReceivedIdStore {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn get(&self, epi: &EphemeralProximityIdentifier) -> Option<&ReceivedRecord> {
        self.records.get(epi)
    }

    pub fn records(&self) -> impl Iterator<Item = &ReceivedRecord> {
        self.records.values()
    }

    fn prune(&mut self, current_day: DayIndex) {
        self.records.retain(|_, r| current_day.age_of(r.day) <= RECEIVED_RETENTION_DAYS);
        self.pending.retain(|_, p| current_day.age_of(p.day) <= RECEIVED_RETENTION_DAYS);
    }
}

/// Rolling 24 h call budget for the match API.
#[derive(Debug, Clone, Default)]
pub struct MatchBudget {
    call_times: VecDeque<Minute>,
    pub allowlisted: bool,
}

impl MatchBudget {
    pub fn new(allowlisted: bool) -> Self {
        Self { call_times: VecDeque::new(), allowlisted }
    }

    pub fn limit(&self) -> usize {
        if self.allowlisted {
            ALLOWLISTED_DAILY_MATCH_LIMIT
        } else {
            DAILY_MATCH_LIMIT
        }
    }

    /// Calls in the trailing 24 h `(time - 24h, time]`.
    pub fn calls_in_window(&self, time: Minute) -> usize {
        self.call_times.iter().filter(|t| in_window(**t, time)).count()
    }

    pub fn record(&mut self, time: Minute) {
        while self.call_times.front().is_some_and(|t| !in_window(*t, time)) {
            self.call_times.pop_front();
        }
        self.call_times.push_back(time);
    }
}

fn in_window(call: Minute, now: Minute) -> bool {
    call <= now && call.0 + MINUTES_PER_DAY > now.0
}

/// True if another match call is allowed at `time`.
pub fn budget_check(budget: &MatchBudget, time: Minute) -> bool {
    budget.calls_in_window(time) < budget.limit()
}

/// What an installed app may do with the OS service.
pub trait ExposureNotificationApi {
    fn device_id(&self) -> &DeviceId;

    /// Returns the keys in `S`. Requires consent on every call.
    fn retrieve_keys(&mut self, app: &AppProfile, user_consent: bool) -> Result<Vec<TemporaryExposureKey>, ApiError>;

    /// Matches diagnosis keys against `R`. Consumes one budget unit, needs no consent.
    fn match_keys(
        &mut self,
        app: &AppProfile,
        diagnosis_keys: &[DiagnosisKey],
        risk: &RiskConfig,
        time: Minute,
    ) -> Result<Vec<ExposureWindow>, ApiError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceConfig {
    pub schedule: KeySchedule,
    pub scan_period_minutes: u32,
    pub min_sightings: u32,
    pub close_contact_db: f64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            schedule: KeySchedule::default(),
            scan_period_minutes: DEFAULT_SCAN_PERIOD_MINUTES,
            min_sightings: DEFAULT_MIN_SIGHTINGS,
            close_contact_db: 55.0,
        }
    }
}

/// Per-device API call counters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiStats {
    pub match_ok: u64,
    pub match_rate_limited: u64,
    pub retrieve_ok: u64,
    pub consent_denied: u64,
    pub access_denied: u64,
}

#[derive(Debug, Clone)]
pub struct DeviceState {
    id: DeviceId,
    pub platform: Platform,
    cfg: DeviceConfig,
    en_enabled: bool,
    current_tek: Option<TemporaryExposureKey>,
    s_store: SentKeyStore,
    r_store: ReceivedIdStore,
    budget: MatchBudget,
    installed_app: Option<AppProfile>,
    stats: ApiStats,
    rng: ChaCha8Rng,
}

impl DeviceState {
    pub fn new(id: DeviceId, platform: Platform, cfg: DeviceConfig, rng: ChaCha8Rng) -> Self {
        Self {
            id,
            platform,
            cfg,
            en_enabled: false,
            current_tek: None,
            s_store: SentKeyStore::default(),
            r_store: ReceivedIdStore::default(),
            budget: MatchBudget::default(),
            installed_app: None,
            stats: ApiStats::default(),
            rng,
        }
    }

    pub fn id(&self) -> &DeviceId {
        &self.id
    }

    pub fn is_enabled(&self) -> bool {
        self.en_enabled
    }

    pub fn current_tek(&self) -> Option<&TemporaryExposureKey> {
        self.current_tek.as_ref()
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.cfg
    }

    pub fn install_app(&mut self, app: AppProfile) {
        self.budget = MatchBudget::new(app.allowlisted);
        self.installed_app = Some(app);
    }

    pub fn installed_app(&self) -> Option<&AppProfile> {
        self.installed_app.as_ref()
    }

    pub fn budget(&self) -> &MatchBudget {
        &self.budget
    }

    pub fn stats(&self) -> &ApiStats {
        &self.stats
    }

    /// Simulator-side view of `S`. Not reachable through the app API.
    pub fn sent_keys(&self) -> &SentKeyStore {
        &self.s_store
    }

    /// Simulator-side view of `R`. Not reachable through the app API.
    pub fn received(&self) -> &ReceivedIdStore {
        &self.r_store
    }

    /// Turns the service on if the user consents. The first enablement of a
    /// day creates that day's key. Returns whether the service is enabled.
    pub fn enable_exposure_notification(&mut self, user_consent: bool, now: Minute) -> bool {
        if user_consent && !self.en_enabled {
            self.en_enabled = true;
            self.ensure_tek(now.day());
        }
        self.en_enabled
    }

    /// Day-boundary maintenance: prune both stores and roll the key.
    pub fn start_day(&mut self, day: DayIndex) {
        self.prune(day);
        if self.en_enabled {
            self.ensure_tek(day);
        }
    }

    fn ensure_tek(&mut self, day: DayIndex) {
        if self.current_tek.is_some_and(|t| t.day == day) {
            return;
        }
        let tek = generate_tek(&mut self.rng, day);
        self.s_store.insert(tek);
        self.s_store.prune(day);
        self.current_tek = Some(tek);
    }

    /// The identifier to broadcast at `time`, if the service is on.
    pub fn on_tick(&mut self, time: Minute) -> Option<EphemeralProximityIdentifier> {
        if !self.en_enabled {
            return None;
        }
        self.ensure_tek(time.day());
        let tek = self.current_tek.expect("enabled device has a key");
        let interval = self.cfg.schedule.interval_at(time);
        Some(self.cfg.schedule.derive_epi(&tek, interval).expect("interval_at is in range"))
    }

    pub fn on_sighting(&mut self, sighting: &Sighting) {
        if !self.en_enabled {
            return;
        }
        let scan = f64::from(self.cfg.scan_period_minutes);
        if let Some(rec) = self.r_store.records.get_mut(&sighting.epi) {
            rec.sighting_count += 1;
            rec.exposure_minutes = f64::from(rec.sighting_count) * scan;
            rec.min_attenuation_db = rec.min_attenuation_db.min(sighting.attenuation_db);
            return;
        }
        let day = sighting.time.day();
        let p = self.r_store.pending.entry(sighting.epi).or_insert(PendingSighting {
            day,
            count: 0,
            min_attenuation_db: f64::INFINITY,
        });
        p.count += 1;
        p.min_attenuation_db = p.min_attenuation_db.min(sighting.attenuation_db);
        if p.count >= self.cfg.min_sightings && p.min_attenuation_db <= self.cfg.close_contact_db {
            let p = self.r_store.pending.remove(&sighting.epi).expect("just inserted");
            self.r_store.records.insert(
                sighting.epi,
                ReceivedRecord {
                    epi: sighting.epi,
                    day: p.day,
                    exposure_minutes: f64::from(p.count) * scan,
                    min_attenuation_db: p.min_attenuation_db,
                    sighting_count: p.count,
                },
            );
        }
    }

    /// Discards identifiers that never reached the promotion rule.
    pub fn close_rotation_window(&mut self) {
        self.r_store.pending.clear();
    }

    pub fn prune(&mut self, current_day: DayIndex) {
        self.s_store.prune(current_day);
        self.r_store.prune(current_day);
    }

    fn check_app(&mut self, app: &AppProfile) -> Result<(), ApiError> {
        match &self.installed_app {
            Some(installed) if installed == app && app.approved => Ok(()),
            _ => {
                self.stats.access_denied += 1;
                Err(ApiError::AccessDenied)
            }
        }
    }

    /// Ground-truth route around the consent prompt, for scripted coercion.
    pub fn seize_keys(&self) -> Vec<TemporaryExposureKey> {
        self.s_store.keys().copied().collect()
    }
}

impl ExposureNotificationApi for DeviceState {
    fn device_id(&self) -> &DeviceId {
        &self.id
    }

    fn retrieve_keys(&mut self, app: &AppProfile, user_consent: bool) -> Result<Vec<TemporaryExposureKey>, ApiError> {
        self.check_app(app)?;
        if !user_consent {
            self.stats.consent_denied += 1;
            return Err(ApiError::ConsentDenied);
        }
        self.stats.retrieve_ok += 1;
        Ok(self.s_store.keys().copied().collect())
    }

    fn match_keys(
        &mut self,
        app: &AppProfile,
        diagnosis_keys: &[DiagnosisKey],
        risk: &RiskConfig,
        time: Minute,
    ) -> Result<Vec<ExposureWindow>, ApiError> {
        self.check_app(app)?;
        for k in diagnosis_keys {
            risk.report_weight(k.report_type)?;
        }
        if !budget_check(&self.budget, time) {
            self.stats.match_rate_limited += 1;
            return Err(ApiError::RateLimited { calls: self.budget.calls_in_window(time), limit: self.budget.limit() });
        }
        self.budget.record(time);
        self.stats.match_ok += 1;

        let schedule = self.cfg.schedule;
        let mut windows = Vec::new();
        for key in diagnosis_keys {
            let matched: Vec<(IntervalIndex, ReceivedRecord)> = schedule
                .derive_day_identifiers(&key.tek)
                .iter()
                .enumerate()
                .filter_map(|(i, epi)| self.r_store.records.get(epi).map(|r| (IntervalIndex(i as u32), r.clone())))
                .filter(|(_, r)| r.day == key.tek.day)
                .collect();
            windows.extend(windows_from_match(&matched, key.report_type, risk)?);
        }
        Ok(windows)
    }
}
