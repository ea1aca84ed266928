// SPDX-License-Identifier: MIT OR Apache-2.0

//! The minute-granularity event loop.
//!
//! Each simulated day runs in three phases:
//!
//! 1. day start: every device prunes its stores and rolls its key;
//! 2. minutes `0..1440`: scripted enablements, rotation-window closes, and on
//!    every scan tick the radio delivers each sender's identifier to the
//!    receivers it is in contact with;
//! 3. day end: diagnoses upload, coercions and beacon uploads, every polling
//!    app runs once, then scripted probes.
//!
//! Within each phase actors run in ascending id order, so a run is a pure
//! function of the scenario.

use std::collections::BTreeMap;

use log::{debug, info, trace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{oracle, ConsentPolicy, Scenario};
use crate::actors::{
    beacon_tick, coerced_upload, honest_poll, probe, recentralize_poll, upload_on_diagnosis, AppInstance, AppKind,
    AppProfile, Beacon, Notification, ProbeEntry, ProbeOutcome, ProbeResult,
};
use crate::authority::{BatchId, DiagnosisKey, KeyServer, UploadSource};
use crate::device::{DeviceConfig, DeviceState};
use crate::keyschedule::{EphemeralProximityIdentifier, KeySchedule, TemporaryExposureKey};
use crate::radio::{broadcast, Sighting};
use crate::report::{build_report, ProbeRun, RunReport, RunState};
use crate::time::{DayIndex, DeviceId, Minute};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep the structured event log in the report.
    pub verbose: bool,
    /// Replaces the scenario's seed.
    pub seed_override: Option<u64>,
    /// Keep every broadcast and sighting in memory (see [`Simulation::sightings`]).
    pub record_sightings: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvent {
    pub at: Minute,
    pub actor: DeviceId,
    #[serde(flatten)]
    pub kind: RunEventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RunEventKind {
    Enabled,
    EnableDeclined,
    Uploaded { batch_id: BatchId, source: UploadSource, keys: usize },
    UploadFailed { source: UploadSource, reason: String },
    Polled { notifications: usize },
    PollFailed { reason: String },
    Probed { keys: usize, matched: usize, rate_limited: bool },
}

/// One broadcast, with the receiver if it was heard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SightingLogEntry {
    pub sender: DeviceId,
    pub receiver: Option<DeviceId>,
    pub time: Minute,
    pub epi: EphemeralProximityIdentifier,
    pub attenuation_db: Option<f64>,
}

/// Sender, its identifier this tick, and receivers with their distances.
type Outgoing = (DeviceId, EphemeralProximityIdentifier, Vec<(DeviceId, f64)>);

#[derive(Debug, Clone)]
struct Link {
    other: DeviceId,
    start: Minute,
    end: Minute,
    distance_m: f64,
}

impl Link {
    fn active(&self, t: Minute) -> bool {
        self.start <= t && t < self.end
    }
}

/// Independent per-participant RNG stream, stable under adding participants.
fn stream_for(kind: &str, id: &DeviceId) -> u64 {
    let digest = Sha256::new().chain_update(kind.as_bytes()).chain_update(id.as_str().as_bytes()).finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn rng_for(seed: u64, kind: &str, id: &DeviceId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_for(kind, id));
    rng
}

pub struct Simulation {
    scenario: Scenario,
    seed_overridden: bool,
    options: RunOptions,
    schedule: KeySchedule,
    devices: BTreeMap<DeviceId, DeviceState>,
    apps: BTreeMap<DeviceId, AppInstance>,
    beacons: BTreeMap<DeviceId, Beacon>,
    server: KeyServer,
    noise: ChaCha8Rng,
    contacts: BTreeMap<DeviceId, Vec<Link>>,
    visits: BTreeMap<DeviceId, Vec<Link>>,
    enablements: BTreeMap<Minute, Vec<DeviceId>>,
    next_day: u32,
    notifications: Vec<Notification>,
    probe_runs: Vec<ProbeRun>,
    key_history: BTreeMap<(DeviceId, DayIndex), TemporaryExposureKey>,
    consent_requests_while_polling: u64,
    events: Vec<RunEvent>,
    sightings: Vec<SightingLogEntry>,
}

impl Simulation {
    /// `scenario` must already be validated.
    pub fn new(scenario: &Scenario, options: RunOptions) -> Self {
        let mut scenario = scenario.clone();
        let seed_overridden = options.seed_override.is_some_and(|s| s != scenario.seed);
        if let Some(seed) = options.seed_override {
            scenario.seed = seed;
        }
        let seed = scenario.seed;
        let schedule = scenario.schedule();
        let dev_cfg = DeviceConfig {
            schedule,
            scan_period_minutes: scenario.scan_period_minutes,
            min_sightings: scenario.min_sightings,
            close_contact_db: scenario.channel.close_contact_db,
        };

        let mut devices = BTreeMap::new();
        let mut apps = BTreeMap::new();
        let mut enablements: BTreeMap<Minute, Vec<DeviceId>> = BTreeMap::new();
        for spec in &scenario.devices {
            let mut dev = DeviceState::new(spec.id.clone(), spec.platform, dev_cfg, rng_for(seed, "device", &spec.id));
            if let Some(kind) = spec.app_kind {
                let profile = AppProfile { kind, approved: spec.approved, allowlisted: spec.allowlisted };
                dev.install_app(profile);
                apps.insert(spec.id.clone(), AppInstance::new(profile));
            }
            if let Some(m) = spec.enable_at_minute {
                enablements.entry(m).or_default().push(spec.id.clone());
            }
            devices.insert(spec.id.clone(), dev);
        }
        let beacons = scenario
            .beacons
            .iter()
            .map(|b| {
                let beacon = Beacon::new(
                    b.id.clone(),
                    b.location_label.clone(),
                    b.chosen_keys.iter().copied(),
                    rng_for(seed, "beacon", &b.id),
                );
                (b.id.clone(), beacon)
            })
            .collect();

        let mut contacts: BTreeMap<DeviceId, Vec<Link>> = BTreeMap::new();
        for c in &scenario.contacts {
            for (from, to) in [(&c.device_a, &c.device_b), (&c.device_b, &c.device_a)] {
                contacts.entry(from.clone()).or_default().push(Link {
                    other: to.clone(),
                    start: c.start_minute,
                    end: c.end_minute(),
                    distance_m: c.distance_m,
                });
            }
        }
        let mut visits: BTreeMap<DeviceId, Vec<Link>> = BTreeMap::new();
        for v in &scenario.visits {
            visits.entry(v.beacon_id.clone()).or_default().push(Link {
                other: v.device_id.clone(),
                start: v.start_minute,
                end: v.end_minute(),
                distance_m: v.distance_m,
            });
        }

        let mut noise = ChaCha8Rng::seed_from_u64(seed);
        noise.set_stream(0);

        Self {
            scenario,
            seed_overridden,
            options,
            schedule,
            devices,
            apps,
            beacons,
            server: KeyServer::new(),
            noise,
            contacts,
            visits,
            enablements,
            next_day: 0,
            notifications: Vec::new(),
            probe_runs: Vec::new(),
            key_history: BTreeMap::new(),
            consent_requests_while_polling: 0,
            events: Vec::new(),
            sightings: Vec::new(),
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn devices(&self) -> &BTreeMap<DeviceId, DeviceState> {
        &self.devices
    }

    pub fn server(&self) -> &KeyServer {
        &self.server
    }

    pub fn notifications(&self) -> &[Notification] {
        &self.notifications
    }

    /// Broadcast and sighting log; empty unless `record_sightings` was set.
    pub fn sightings(&self) -> &[SightingLogEntry] {
        &self.sightings
    }

    pub fn is_finished(&self) -> bool {
        self.next_day >= self.scenario.duration_days
    }

    /// Runs the next whole day and returns it, or `None` once the run is over.
    pub fn step_day(&mut self) -> Option<DayIndex> {
        if self.is_finished() {
            return None;
        }
        let day = DayIndex(self.next_day);
        self.next_day += 1;
        for dev in self.devices.values_mut() {
            dev.start_day(day);
        }
        for m in day.start().0..=day.end().0 {
            self.minute(Minute(m));
        }
        self.day_end(day);
        debug!("finished {day}");
        Some(day)
    }

    pub fn run_to_end(&mut self) {
        while self.step_day().is_some() {}
    }

    fn event(&mut self, at: Minute, actor: &DeviceId, kind: RunEventKind) {
        trace!("{at} {actor}: {kind:?}");
        if self.options.verbose {
            self.events.push(RunEvent { at, actor: actor.clone(), kind });
        }
    }

    fn minute(&mut self, t: Minute) {
        if let Some(ids) = self.enablements.get(&t).cloned() {
            for id in ids {
                let consent = self.scenario.device(&id).map(|d| d.consent_policy) == Some(ConsentPolicy::Grant);
                let dev = self.devices.get_mut(&id).expect("validated id");
                let kind = if dev.enable_exposure_notification(consent, t) {
                    RunEventKind::Enabled
                } else {
                    RunEventKind::EnableDeclined
                };
                self.event(t, &id, kind);
            }
        }
        if self.schedule.is_rotation_boundary(t) {
            for dev in self.devices.values_mut() {
                dev.close_rotation_window();
            }
        }
        if t.0.is_multiple_of(u64::from(self.scenario.scan_period_minutes)) {
            self.radio_tick(t);
        }
    }

    fn receivers(&self, links: Option<&Vec<Link>>, t: Minute) -> Vec<(DeviceId, f64)> {
        let mut out: Vec<(DeviceId, f64)> = links
            .into_iter()
            .flatten()
            .filter(|l| l.active(t) && self.devices.get(&l.other).is_some_and(|d| d.is_enabled()))
            .map(|l| (l.other.clone(), l.distance_m))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    fn radio_tick(&mut self, t: Minute) {
        let log_all = self.options.record_sightings;
        let mut outgoing: Vec<Outgoing> = Vec::new();

        let ids: Vec<DeviceId> = self.devices.keys().cloned().collect();
        for id in ids {
            let receivers = self.receivers(self.contacts.get(&id), t);
            if receivers.is_empty() && !log_all {
                continue;
            }
            if let Some(epi) = self.devices.get_mut(&id).expect("known").on_tick(t) {
                outgoing.push((id, epi, receivers));
            }
        }
        let beacon_ids: Vec<DeviceId> = self.beacons.keys().cloned().collect();
        for id in beacon_ids {
            let receivers = self.receivers(self.visits.get(&id), t);
            let beacon = self.beacons.get_mut(&id).expect("known");
            let epi = beacon_tick(beacon, &self.schedule, t);
            if !receivers.is_empty() || log_all {
                outgoing.push((id, epi, receivers));
            }
        }

        for (sender, epi, receivers) in outgoing {
            let delivered = broadcast(&sender, Some(epi), &receivers, &self.scenario.channel, &mut self.noise, t)
                .expect("validated distances");
            if log_all {
                self.sightings.push(SightingLogEntry {
                    sender: sender.clone(),
                    receiver: None,
                    time: t,
                    epi,
                    attenuation_db: None,
                });
            }
            for (rx, sighting) in delivered {
                self.deliver(&sender, &rx, sighting);
            }
        }
    }

    fn deliver(&mut self, sender: &DeviceId, rx: &DeviceId, sighting: Sighting) {
        if self.options.record_sightings {
            self.sightings.push(SightingLogEntry {
                sender: sender.clone(),
                receiver: Some(rx.clone()),
                time: sighting.time,
                epi: sighting.epi,
                attenuation_db: Some(sighting.attenuation_db),
            });
        }
        self.devices.get_mut(rx).expect("known receiver").on_sighting(&sighting);
    }

    fn day_end(&mut self, day: DayIndex) {
        let t = day.end();
        for (id, dev) in &self.devices {
            if let Some(tek) = dev.current_tek().filter(|k| k.day == day) {
                self.key_history.insert((id.clone(), day), *tek);
            }
        }
        self.run_diagnoses(day, t);
        self.run_coercions(day, t);
        self.run_beacon_uploads(day, t);
        self.run_polls(t);
        self.run_probes(day, t);
    }

    fn run_diagnoses(&mut self, day: DayIndex, t: Minute) {
        let mut todays: Vec<_> = self.scenario.diagnoses.iter().filter(|d| d.day == day).cloned().collect();
        todays.sort_by(|a, b| a.device_id.cmp(&b.device_id));
        for d in todays {
            let kind = match self.apps.get(&d.device_id) {
                None => {
                    RunEventKind::UploadFailed { source: UploadSource::Consented, reason: "no app installed".into() }
                }
                Some(app) => {
                    let dev = self.devices.get_mut(&d.device_id).expect("validated id");
                    match upload_on_diagnosis(app, dev, &mut self.server, d.report_type, d.consent, t) {
                        Ok(batch_id) => {
                            let keys = self.server.batch(batch_id).map_or(0, |b| b.keys.len());
                            info!("{} uploaded {keys} keys as batch {batch_id}", d.device_id);
                            RunEventKind::Uploaded { batch_id, source: UploadSource::Consented, keys }
                        }
                        Err(e) => RunEventKind::UploadFailed { source: UploadSource::Consented, reason: e.to_string() },
                    }
                }
            };
            self.event(t, &d.device_id, kind);
        }
    }

    fn run_coercions(&mut self, day: DayIndex, t: Minute) {
        let mut todays: Vec<_> = self.scenario.coercions.iter().filter(|c| c.day == day).cloned().collect();
        todays.sort_by(|a, b| a.device_id.cmp(&b.device_id));
        for c in todays {
            let dev = &self.devices[&c.device_id];
            let kind = match coerced_upload(dev, &mut self.server, c.report_type, t) {
                Ok(batch_id) => {
                    let keys = self.server.batch(batch_id).map_or(0, |b| b.keys.len());
                    info!("coerced upload of {}: batch {batch_id}", c.device_id);
                    RunEventKind::Uploaded { batch_id, source: UploadSource::Coerced, keys }
                }
                Err(e) => RunEventKind::UploadFailed { source: UploadSource::Coerced, reason: e.to_string() },
            };
            self.event(t, &c.device_id, kind);
        }
    }

    fn run_beacon_uploads(&mut self, day: DayIndex, t: Minute) {
        let mut todays: Vec<_> = self.scenario.beacon_uploads.iter().filter(|u| u.day == day).cloned().collect();
        todays.sort_by(|a, b| a.beacon_id.cmp(&b.beacon_id));
        for u in todays {
            let keys = self.beacons.get_mut(&u.beacon_id).expect("validated id").upload_keys(day);
            let kind = match self.server.upload_keys(u.beacon_id.clone(), &keys, u.report_type, UploadSource::Beacon, t)
            {
                Ok(batch_id) => RunEventKind::Uploaded { batch_id, source: UploadSource::Beacon, keys: keys.len() },
                Err(e) => RunEventKind::UploadFailed { source: UploadSource::Beacon, reason: e.to_string() },
            };
            self.event(t, &u.beacon_id, kind);
        }
    }

    fn run_polls(&mut self, t: Minute) {
        let ids: Vec<DeviceId> = self.apps.keys().cloned().collect();
        for id in ids {
            let app = self.apps.get_mut(&id).expect("known");
            let dev = self.devices.get_mut(&id).expect("known");
            let consent_before = dev.stats().retrieve_ok + dev.stats().consent_denied;
            let got = match app.profile.kind {
                AppKind::Honest => honest_poll(app, dev, &self.server, &self.scenario.risk, t),
                AppKind::Recentralizing => recentralize_poll(app, dev, &mut self.server, &self.scenario.risk, t),
                AppKind::Probing => continue,
            };
            self.consent_requests_while_polling +=
                dev.stats().retrieve_ok + dev.stats().consent_denied - consent_before;
            let kind = match got {
                Ok(notes) => {
                    let n = notes.len();
                    if n > 0 {
                        info!("{id} notified for {n} day(s)");
                    }
                    self.notifications.extend(notes);
                    RunEventKind::Polled { notifications: n }
                }
                Err(e) => RunEventKind::PollFailed { reason: e.to_string() },
            };
            self.event(t, &id, kind);
        }
    }

    fn resolve_key(&mut self, owner: &DeviceId, day: DayIndex) -> Option<TemporaryExposureKey> {
        if let Some(beacon) = self.beacons.get_mut(owner) {
            return Some(beacon.key_for(day));
        }
        self.key_history.get(&(owner.clone(), day)).copied()
    }

    fn run_probes(&mut self, day: DayIndex, t: Minute) {
        let todays: Vec<_> = self.scenario.probes.iter().filter(|p| p.day == day).cloned().collect();
        for action in todays {
            let mut resolved = Vec::new();
            let mut slots = Vec::new();
            for label in &action.keys {
                match self.resolve_key(&label.owner, label.day) {
                    Some(tek) => {
                        slots.push(None);
                        resolved.push((label.clone(), DiagnosisKey { tek, report_type: action.report_type }));
                    }
                    None => slots.push(Some(ProbeEntry { label: label.clone(), outcome: ProbeOutcome::Unresolved })),
                }
            }
            let app = self.apps.get_mut(&action.device_id).expect("validated probing app");
            let dev = self.devices.get_mut(&action.device_id).expect("known");
            let partial = probe(app, dev, &resolved, &self.scenario.risk, t);
            let mut from_api = partial.entries.into_iter();
            let entries: Vec<ProbeEntry> = slots
                .into_iter()
                .map(|s| s.unwrap_or_else(|| from_api.next().expect("one per resolved key")))
                .collect();
            let result = ProbeResult { rate_limited: partial.rate_limited, entries };
            let matched = result.entries.iter().filter(|e| e.outcome.matched()).count();
            self.event(
                t,
                &action.device_id,
                RunEventKind::Probed { keys: result.entries.len(), matched, rate_limited: result.rate_limited },
            );
            self.probe_runs.push(ProbeRun { device_id: action.device_id.clone(), day, result });
        }
    }

    /// Builds the report, comparing the run against the oracle.
    pub fn into_report(self) -> RunReport {
        let expected = oracle(&self.scenario);
        let state = RunState {
            scenario: &self.scenario,
            seed_overridden: self.seed_overridden,
            notifications: &self.notifications,
            server: &self.server,
            devices: &self.devices,
            probe_runs: &self.probe_runs,
            consent_requests_while_polling: self.consent_requests_while_polling,
            events: self.options.verbose.then_some(self.events.as_slice()),
        };
        build_report(&state, &expected)
    }
}

/// Runs a validated scenario to completion.
pub fn run(scenario: &Scenario) -> RunReport {
    run_with(scenario, RunOptions::default())
}

pub fn run_with(scenario: &Scenario, options: RunOptions) -> RunReport {
    let mut sim = Simulation::new(scenario, options);
    sim.run_to_end();
    sim.into_report()
}
