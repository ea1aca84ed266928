// SPDX-License-Identifier: MIT OR Apache-2.0

//! Brute-force ground truth, computed from the scenario alone.
//!
//! Nothing here touches the device, radio or scoring code. The oracle walks
//! every scan tick of every contact and visit, applies the zero-noise
//! path-loss formula, and rebuilds collection, upload eligibility, window
//! splitting and scoring on its own.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ConsentPolicy, Scenario};
use crate::actors::{AppKind, ProbeLabel};
use crate::riskscore::ReportType;
use crate::time::{DayIndex, DeviceId, MINUTES_PER_DAY};

const KEY_DAYS: u32 = 14;
const RECORD_DAYS: u32 = 14;
const WINDOW_CAP: u64 = 30;
const MATCH_CALLS_PER_DAY: usize = 6;
const ALLOWLISTED_CALLS_PER_DAY: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExposureEdge {
    pub exposed: DeviceId,
    pub diagnosed: DeviceId,
    /// Day of the contact.
    pub day: DayIndex,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NotificationKey {
    pub device_id: DeviceId,
    /// Day of the exposure being notified.
    pub day: DayIndex,
    /// Day the app raised the notification.
    pub notified_on: DayIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedRisk {
    pub notification: NotificationKey,
    pub total_risk: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeExpectation {
    Matched,
    NotMatched,
    RateLimited,
    Denied,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeTruth {
    pub device_id: DeviceId,
    pub probe_day: DayIndex,
    pub label: ProbeLabel,
    pub expected: ProbeExpectation,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Exposed devices with positive risk from an uploaded key, regardless of
    /// whether anything on the exposed device polls.
    pub exposure_edges: BTreeSet<ExposureEdge>,
    pub expected_notifications: BTreeSet<NotificationKey>,
    /// Total risk behind each expected notification, in key order.
    pub expected_risk: Vec<ExpectedRisk>,
    pub per_device_expected_notification: BTreeMap<DeviceId, bool>,
    /// One entry per probed key, in scenario order.
    pub probe_truth: Vec<ProbeTruth>,
}

/// One qualifying rotation window as seen by `receiver` from `sender`.
#[derive(Debug, Clone, Copy)]
struct Slot {
    interval: u64,
    minutes: u64,
    attenuation: f64,
}

/// Ticks and lowest attenuation heard in one rotation window.
#[derive(Debug, Clone, Copy)]
struct Tally {
    ticks: u32,
    attenuation: f64,
}

struct Upload {
    uploader: DeviceId,
    day: u32,
    weight: f64,
    key_days: std::ops::RangeInclusive<u32>,
}

struct World<'a> {
    s: &'a Scenario,
    /// First minute each participant broadcasts and listens.
    on_from: BTreeMap<&'a DeviceId, u64>,
    /// (receiver, sender, day) -> qualifying windows in interval order.
    heard: BTreeMap<(DeviceId, DeviceId, u32), Vec<Slot>>,
}

fn zero_noise_attenuation(s: &Scenario, distance_m: f64) -> f64 {
    (s.channel.a_db + s.channel.b_db * distance_m.log10()).max(0.0)
}

impl<'a> World<'a> {
    fn new(s: &'a Scenario) -> Self {
        let mut on_from = BTreeMap::new();
        for d in &s.devices {
            if let (Some(m), ConsentPolicy::Grant) = (d.enable_at_minute, d.consent_policy) {
                on_from.insert(&d.id, m.0);
            }
        }
        for b in &s.beacons {
            on_from.insert(&b.id, 0);
        }
        let mut w = World { s, on_from, heard: BTreeMap::new() };
        w.enumerate();
        w
    }

    fn enumerate(&mut self) {
        let s = self.s;
        let mut links: Vec<(&DeviceId, &DeviceId, u64, u64, f64)> = Vec::new();
        for c in &s.contacts {
            let end = c.start_minute.0 + c.duration_minutes;
            links.push((&c.device_a, &c.device_b, c.start_minute.0, end, c.distance_m));
            links.push((&c.device_b, &c.device_a, c.start_minute.0, end, c.distance_m));
        }
        for v in &s.visits {
            links.push((
                &v.beacon_id,
                &v.device_id,
                v.start_minute.0,
                v.start_minute.0 + v.duration_minutes,
                v.distance_m,
            ));
        }

        let scan = u64::from(s.scan_period_minutes);
        let rotation = u64::from(s.rotation_minutes);
        let mut tallies: BTreeMap<(DeviceId, DeviceId, u32, u64), Tally> = BTreeMap::new();
        for (tx, rx, start, end, distance) in links {
            let att = zero_noise_attenuation(s, distance);
            if att > s.channel.max_detect_db {
                continue;
            }
            let (Some(&tx_on), Some(&rx_on)) = (self.on_from.get(tx), self.on_from.get(rx)) else {
                continue;
            };
            let first = start.max(tx_on).max(rx_on);
            let first_tick = first.div_ceil(scan) * scan;
            let mut t = first_tick;
            while t < end {
                let day = (t / MINUTES_PER_DAY) as u32;
                let interval = (t % MINUTES_PER_DAY) / rotation;
                let e = tallies
                    .entry((rx.clone(), tx.clone(), day, interval))
                    .or_insert(Tally { ticks: 0, attenuation: f64::INFINITY });
                e.ticks += 1;
                e.attenuation = e.attenuation.min(att);
                t += scan;
            }
        }
        for ((rx, tx, day, interval), tally) in tallies {
            if tally.ticks >= s.min_sightings && tally.attenuation <= s.channel.close_contact_db {
                self.heard.entry((rx, tx, day)).or_default().push(Slot {
                    interval,
                    minutes: u64::from(tally.ticks) * scan,
                    attenuation: tally.attenuation,
                });
            }
        }
    }

    fn bucket_weight(&self, attenuation: f64) -> f64 {
        let r = &self.s.risk;
        let idx = r.attenuation_buckets.iter().position(|&upper| attenuation <= upper).unwrap_or(3);
        r.bucket_weights[idx]
    }

    /// Risk of each 30-minute window `exposed` accumulated from `sender`'s
    /// key for `day`, in interval order. Empty if no window qualified.
    fn window_risks(&self, exposed: &DeviceId, sender: &DeviceId, day: u32, weight: f64) -> Vec<f64> {
        let Some(slots) = self.heard.get(&(exposed.clone(), sender.clone(), day)) else {
            return Vec::new();
        };
        // Split slots into runs of back-to-back intervals.
        let mut runs: Vec<Vec<Slot>> = Vec::new();
        for slot in slots {
            match runs.last_mut() {
                Some(run) if run.last().is_some_and(|p| p.interval + 1 == slot.interval) => run.push(*slot),
                _ => runs.push(vec![*slot]),
            }
        }
        let mut out = Vec::new();
        for run in runs {
            let total: u64 = run.iter().map(|s| s.minutes).sum();
            // Slot i covers run minutes [offset_i, offset_i + minutes_i).
            let mut spans = Vec::with_capacity(run.len());
            let mut offset = 0;
            for s in &run {
                spans.push((offset, offset + s.minutes, s.attenuation));
                offset += s.minutes;
            }
            let mut lo = 0;
            while lo < total {
                let hi = (lo + WINDOW_CAP).min(total);
                let att = spans
                    .iter()
                    .filter(|(a, b, _)| *a < hi && *b > lo)
                    .map(|(_, _, att)| *att)
                    .fold(f64::INFINITY, f64::min);
                out.push((hi - lo) as f64 * self.bucket_weight(att) * weight);
                lo = hi;
            }
        }
        out
    }

    fn weight(&self, rt: ReportType) -> f64 {
        self.s.risk.report_type_weights.get(&rt).copied().unwrap_or(0.0)
    }

    fn enable_day(&self, id: &DeviceId) -> Option<u32> {
        self.on_from.get(id).map(|m| (m / MINUTES_PER_DAY) as u32)
    }

    /// Uploads that reach the server, in the order the server assigns ids.
    fn uploads(&self) -> Vec<Upload> {
        let s = self.s;
        let mut out = Vec::new();
        for k in 0..s.duration_days {
            let recent = k.saturating_sub(KEY_DAYS - 1);
            let mut diagnoses: Vec<_> = s.diagnoses.iter().filter(|d| d.day.0 == k).collect();
            diagnoses.sort_by(|a, b| a.device_id.cmp(&b.device_id));
            for d in diagnoses {
                let spec = s.device(&d.device_id).expect("validated");
                let gate = spec.app_kind.is_some() && spec.approved && d.consent;
                if let (true, Some(from)) = (gate, self.enable_day(&d.device_id)) {
                    if from <= k {
                        let weight = self.weight(d.report_type);
                        out.push(Upload {
                            uploader: d.device_id.clone(),
                            day: k,
                            weight,
                            key_days: from.max(recent)..=k,
                        });
                    }
                }
            }
            let mut coercions: Vec<_> = s.coercions.iter().filter(|c| c.day.0 == k).collect();
            coercions.sort_by(|a, b| a.device_id.cmp(&b.device_id));
            for c in coercions {
                if let Some(from) = self.enable_day(&c.device_id).filter(|&f| f <= k) {
                    let weight = self.weight(c.report_type);
                    out.push(Upload { uploader: c.device_id.clone(), day: k, weight, key_days: from.max(recent)..=k });
                }
            }
            let mut beacon_uploads: Vec<_> = s.beacon_uploads.iter().filter(|u| u.day.0 == k).collect();
            beacon_uploads.sort_by(|a, b| a.beacon_id.cmp(&b.beacon_id));
            for u in beacon_uploads {
                let weight = self.weight(u.report_type);
                out.push(Upload { uploader: u.beacon_id.clone(), day: k, weight, key_days: recent..=k });
            }
        }
        out
    }
}

/// Computes the expected outcome of `scenario` without running it.
pub fn oracle(scenario: &Scenario) -> OracleResult {
    let world = World::new(scenario);
    let uploads = world.uploads();
    let mut result = OracleResult::default();

    for up in &uploads {
        for d in &scenario.devices {
            for day in up.key_days.clone() {
                let risk: f64 = world.window_risks(&d.id, &up.uploader, day, up.weight).iter().sum();
                if risk > 0.0 {
                    result.exposure_edges.insert(ExposureEdge {
                        exposed: d.id.clone(),
                        diagnosed: up.uploader.clone(),
                        day: DayIndex(day),
                    });
                }
            }
        }
    }

    let threshold = scenario.risk.notification_threshold;
    for d in &scenario.devices {
        let polls = matches!(d.app_kind, Some(AppKind::Honest | AppKind::Recentralizing)) && d.approved;
        let mut any = false;
        if polls {
            for k in 0..scenario.duration_days {
                // Running total and "some window exists" per exposure day.
                let mut totals: BTreeMap<u32, (f64, bool)> = BTreeMap::new();
                for up in uploads.iter().filter(|u| u.day == k) {
                    for day in up.key_days.clone() {
                        let risks = world.window_risks(&d.id, &up.uploader, day, up.weight);
                        if risks.is_empty() {
                            continue;
                        }
                        let e = totals.entry(day).or_insert((0.0, false));
                        e.1 = true;
                        for r in risks {
                            e.0 += r;
                        }
                    }
                }
                for (day, (total, _)) in totals.into_iter().filter(|(_, (_, seen))| *seen) {
                    if total >= threshold {
                        any = true;
                        let key =
                            NotificationKey { device_id: d.id.clone(), day: DayIndex(day), notified_on: DayIndex(k) };
                        result.expected_notifications.insert(key.clone());
                        result.expected_risk.push(ExpectedRisk { notification: key, total_risk: total });
                    }
                }
            }
        }
        result.per_device_expected_notification.insert(d.id.clone(), any);
    }

    let mut used: BTreeMap<(DeviceId, u32), usize> = BTreeMap::new();
    for p in &scenario.probes {
        let spec = scenario.device(&p.device_id).expect("validated");
        let limit = if spec.allowlisted { ALLOWLISTED_CALLS_PER_DAY } else { MATCH_CALLS_PER_DAY };
        let calls = used.entry((p.device_id.clone(), p.day.0)).or_default();
        let mut stopped = None;
        for label in &p.keys {
            let key_exists = scenario.is_beacon(&label.owner)
                || world.on_from.get(&label.owner).is_some_and(|&m| m < (u64::from(label.day.0) + 1) * MINUTES_PER_DAY);
            let expected = if !key_exists {
                ProbeExpectation::Unresolved
            } else if let Some(s) = stopped {
                s
            } else if !spec.approved {
                stopped = Some(ProbeExpectation::Denied);
                ProbeExpectation::Denied
            } else if *calls >= limit {
                stopped = Some(ProbeExpectation::RateLimited);
                ProbeExpectation::RateLimited
            } else {
                *calls += 1;
                let retained = label.day.0 + RECORD_DAYS >= p.day.0;
                let heard = world.heard.contains_key(&(p.device_id.clone(), label.owner.clone(), label.day.0));
                if retained && heard {
                    ProbeExpectation::Matched
                } else {
                    ProbeExpectation::NotMatched
                }
            };
            result.probe_truth.push(ProbeTruth {
                device_id: p.device_id.clone(),
                probe_day: p.day,
                label: label.clone(),
                expected,
            });
        }
    }
    result.expected_risk.sort_by(|a, b| a.notification.cmp(&b.notification));
    result
}
