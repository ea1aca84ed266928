// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-of-run metrics and serialization.
//!
//! JSON output has lexicographically sorted keys so two runs of the same
//! scenario can be compared byte for byte. The CSV summary has one row per
//! device. Attack metrics are `null` when the attack is absent from the
//! scenario, and a ratio is `null` when its denominator is empty.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actors::{AppKind, Notification, ProbeLabel, ProbeOutcome, ProbeResult};
use crate::authority::{BatchId, CentralReport, DiagnosisKeyBatch, KeyServer, UploadSource};
use crate::device::DeviceState;
use crate::scenario::{ExposureEdge, NotificationKey, OracleResult, ProbeExpectation, RunEvent, Scenario};
use crate::time::{DayIndex, DeviceId};

/// One scripted probe action and what it returned.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRun {
    pub device_id: DeviceId,
    pub day: DayIndex,
    pub result: ProbeResult,
}

/// Everything [`build_report`] reads from a finished run.
pub struct RunState<'a> {
    pub scenario: &'a Scenario,
    pub seed_overridden: bool,
    pub notifications: &'a [Notification],
    pub server: &'a KeyServer,
    pub devices: &'a BTreeMap<DeviceId, DeviceState>,
    pub probe_runs: &'a [ProbeRun],
    pub consent_requests_while_polling: u64,
    pub events: Option<&'a [RunEvent]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleDiff {
    pub missed: BTreeSet<NotificationKey>,
    pub spurious: BTreeSet<NotificationKey>,
    /// Notifications present on both sides whose total risk differs.
    pub risk_mismatch: BTreeSet<NotificationKey>,
}

impl OracleDiff {
    pub fn is_empty(&self) -> bool {
        self.missed.is_empty() && self.spurious.is_empty() && self.risk_mismatch.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecentralizationMetrics {
    pub central_report_edges: BTreeSet<ExposureEdge>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// Consent prompts shown while apps polled and reported.
    pub consent_prompts_on_report_path: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub device_id: DeviceId,
    pub probe_day: DayIndex,
    pub label: ProbeLabel,
    pub outcome: ProbeOutcome,
    pub expected: ProbeExpectation,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbingMetrics {
    pub entries: Vec<ProbeRecord>,
    pub probed: usize,
    pub rate_limited: bool,
    /// Share of probed keys whose match result equals ground truth.
    pub probe_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeaconMetrics {
    /// Devices with a qualifying exposure to an uploaded beacon key.
    pub expected_visitors: BTreeSet<DeviceId>,
    /// Devices notified on a day a beacon key was uploaded.
    pub notified_visitors: BTreeSet<DeviceId>,
    /// Devices the server learned about from beacon batches.
    pub beacon_visitors_identified: BTreeSet<DeviceId>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoercionMetrics {
    pub coerced_batches: Vec<BatchId>,
    pub victims: BTreeSet<DeviceId>,
    pub expected_contacts: BTreeSet<DeviceId>,
    pub notified_contacts: BTreeSet<DeviceId>,
    pub exact: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Attacks {
    pub recentralization: Option<RecentralizationMetrics>,
    pub probing: Option<ProbingMetrics>,
    pub beacon: Option<BeaconMetrics>,
    pub coercion: Option<CoercionMetrics>,
}

impl Attacks {
    pub fn is_empty(&self) -> bool {
        self.recentralization.is_none() && self.probing.is_none() && self.beacon.is_none() && self.coercion.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetEntry {
    pub app_kind: Option<AppKind>,
    pub allowlisted: bool,
    pub match_ok: u64,
    pub match_rate_limited: u64,
    pub retrieve_ok: u64,
    pub consent_denied: u64,
    pub access_denied: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServerDump {
    pub batches: Vec<DiagnosisKeyBatch>,
    pub central_reports: Vec<CentralReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRow {
    pub device_id: DeviceId,
    pub notified: bool,
    pub expected: bool,
    pub agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub seed: u64,
    pub seed_overridden: bool,
    pub duration_days: u32,
    pub notifications: Vec<Notification>,
    pub expected_notifications: BTreeSet<NotificationKey>,
    pub oracle_diff: OracleDiff,
    pub oracle_edges: BTreeSet<ExposureEdge>,
    pub attacks: Attacks,
    pub budget_audit: BTreeMap<DeviceId, BudgetEntry>,
    pub server_dump: ServerDump,
    pub devices: Vec<DeviceRow>,
    pub events: Option<Vec<RunEvent>>,
}

impl RunReport {
    /// Notifications as comparable keys.
    pub fn notification_keys(&self) -> BTreeSet<NotificationKey> {
        self.notifications.iter().map(notification_key).collect()
    }

    pub fn agrees_with_oracle(&self) -> bool {
        self.oracle_diff.is_empty()
    }

    pub fn to_json_string(&self) -> String {
        to_json_string(self)
    }

    pub fn from_json_str(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

fn notification_key(n: &Notification) -> NotificationKey {
    NotificationKey { device_id: n.device_id.clone(), day: n.day, notified_on: n.issued_at.day() }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn build_report(state: &RunState<'_>, expected: &OracleResult) -> RunReport {
    let s = state.scenario;
    let got = state.notifications.iter().map(notification_key).collect::<BTreeSet<_>>();
    let oracle_diff = OracleDiff {
        missed: expected.expected_notifications.difference(&got).cloned().collect(),
        spurious: got.difference(&expected.expected_notifications).cloned().collect(),
        risk_mismatch: state
            .notifications
            .iter()
            .filter_map(|n| {
                let key = notification_key(n);
                let want = expected.expected_risk.iter().find(|r| r.notification == key)?;
                (want.total_risk != n.total_risk).then_some(key)
            })
            .collect(),
    };
    let notified: BTreeSet<&DeviceId> = state.notifications.iter().map(|n| &n.device_id).collect();
    let mut ids: Vec<&DeviceId> = s.devices.iter().map(|d| &d.id).collect();
    ids.sort();
    let devices = ids
        .into_iter()
        .map(|id| {
            let n = notified.contains(id);
            let e = expected.per_device_expected_notification.get(id).copied().unwrap_or(false);
            DeviceRow { device_id: id.clone(), notified: n, expected: e, agree: n == e }
        })
        .collect();

    let budget_audit = state
        .devices
        .iter()
        .map(|(id, dev)| {
            let st = dev.stats();
            let app = dev.installed_app();
            (
                id.clone(),
                BudgetEntry {
                    app_kind: app.map(|a| a.kind),
                    allowlisted: app.is_some_and(|a| a.allowlisted),
                    match_ok: st.match_ok,
                    match_rate_limited: st.match_rate_limited,
                    retrieve_ok: st.retrieve_ok,
                    consent_denied: st.consent_denied,
                    access_denied: st.access_denied,
                },
            )
        })
        .collect();

    RunReport {
        schema: s.schema,
        seed: s.seed,
        seed_overridden: state.seed_overridden,
        duration_days: s.duration_days,
        notifications: state.notifications.to_vec(),
        expected_notifications: expected.expected_notifications.clone(),
        oracle_diff,
        oracle_edges: expected.exposure_edges.clone(),
        attacks: attacks(state, expected),
        budget_audit,
        server_dump: ServerDump {
            batches: state.server.batches().to_vec(),
            central_reports: state.server.central_reports().to_vec(),
        },
        devices,
        events: state.events.map(<[RunEvent]>::to_vec),
    }
}

fn attacks(state: &RunState<'_>, expected: &OracleResult) -> Attacks {
    let s = state.scenario;
    let server = state.server;
    let uploader_of = |id: BatchId| server.batch(id).map(|b| (&b.uploader, b.source));

    let recentralization = s.devices.iter().any(|d| d.app_kind == Some(AppKind::Recentralizing)).then(|| {
        let mut edges = BTreeSet::new();
        for r in server.central_reports() {
            for &b in &r.batch_ids {
                if let Some((uploader, _)) = uploader_of(b) {
                    edges.insert(ExposureEdge {
                        exposed: r.user_identifier.clone(),
                        diagnosed: uploader.clone(),
                        day: r.day,
                    });
                }
            }
        }
        let hit = edges.intersection(&expected.exposure_edges).count();
        RecentralizationMetrics {
            precision: ratio(hit, edges.len()),
            recall: ratio(hit, expected.exposure_edges.len()),
            central_report_edges: edges,
            consent_prompts_on_report_path: state.consent_requests_while_polling,
        }
    });

    let probing = (!s.probes.is_empty()).then(|| {
        let outcomes = state.probe_runs.iter().flat_map(|run| {
            run.result.entries.iter().map(move |e| (run.device_id.clone(), run.day, e.label.clone(), e.outcome.clone()))
        });
        let mut entries = Vec::new();
        for ((device_id, probe_day, label, outcome), truth) in outcomes.zip(&expected.probe_truth) {
            let correct = match (&outcome, truth.expected) {
                (ProbeOutcome::Matched { .. }, ProbeExpectation::Matched)
                | (ProbeOutcome::NotMatched, ProbeExpectation::NotMatched)
                | (ProbeOutcome::RateLimited, ProbeExpectation::RateLimited)
                | (ProbeOutcome::Denied, ProbeExpectation::Denied)
                | (ProbeOutcome::Unresolved, ProbeExpectation::Unresolved) => {
                    truth.device_id == device_id && truth.label == label && truth.probe_day == probe_day
                }
                _ => false,
            };
            entries.push(ProbeRecord { device_id, probe_day, label, outcome, expected: truth.expected, correct });
        }
        let probed: Vec<&ProbeRecord> = entries.iter().filter(|e| e.outcome.probed()).collect();
        ProbingMetrics {
            probed: probed.len(),
            rate_limited: state.probe_runs.iter().any(|r| r.result.rate_limited),
            probe_accuracy: ratio(probed.iter().filter(|e| e.correct).count(), probed.len()),
            entries,
        }
    });

    let beacon = (!s.beacons.is_empty()).then(|| {
        let beacon_ids: BTreeSet<&DeviceId> = s.beacons.iter().map(|b| &b.id).collect();
        let expected_visitors: BTreeSet<DeviceId> = expected
            .exposure_edges
            .iter()
            .filter(|e| beacon_ids.contains(&e.diagnosed))
            .map(|e| e.exposed.clone())
            .collect();
        let upload_days: BTreeSet<DayIndex> = s.beacon_uploads.iter().map(|u| u.day).collect();
        let notified_visitors = state
            .notifications
            .iter()
            .filter(|n| upload_days.contains(&n.issued_at.day()))
            .map(|n| n.device_id.clone())
            .collect();
        let identified: BTreeSet<DeviceId> = server
            .central_reports()
            .iter()
            .filter(|r| r.batch_ids.iter().any(|&b| uploader_of(b).is_some_and(|(_, src)| src == UploadSource::Beacon)))
            .map(|r| r.user_identifier.clone())
            .collect();
        BeaconMetrics {
            recall: ratio(identified.intersection(&expected_visitors).count(), expected_visitors.len()),
            expected_visitors,
            notified_visitors,
            beacon_visitors_identified: identified,
        }
    });

    let coercion = (!s.coercions.is_empty()).then(|| {
        let coerced: Vec<&DiagnosisKeyBatch> =
            server.batches().iter().filter(|b| b.source == UploadSource::Coerced).collect();
        let days: BTreeSet<DayIndex> = coerced.iter().map(|b| b.published_at.day()).collect();
        let expected_contacts: BTreeSet<DeviceId> = expected
            .expected_notifications
            .iter()
            .filter(|k| days.contains(&k.notified_on))
            .map(|k| k.device_id.clone())
            .collect();
        let notified_contacts: BTreeSet<DeviceId> = state
            .notifications
            .iter()
            .filter(|n| days.contains(&n.issued_at.day()))
            .map(|n| n.device_id.clone())
            .collect();
        CoercionMetrics {
            coerced_batches: coerced.iter().map(|b| b.batch_id).collect(),
            victims: coerced.iter().map(|b| b.uploader.clone()).collect(),
            exact: expected_contacts == notified_contacts,
            expected_contacts,
            notified_contacts,
        }
    });

    Attacks { recentralization, probing, beacon, coercion }
}

/// Pretty JSON with every object's keys in lexicographic order.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    // serde_json's Map is a BTreeMap, so a round trip through Value sorts keys.
    let v = serde_json::to_value(value).expect("report serializes");
    let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
    s.push('\n');
    s
}

pub fn to_csv_string(report: &RunReport) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["device_id", "notified", "expected", "agree"]).expect("in-memory write");
    for row in &report.devices {
        w.write_record([row.device_id.as_str(), bool_str(row.notified), bool_str(row.expected), bool_str(row.agree)])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

fn bool_str(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

pub fn render(report: &RunReport, format: Format) -> String {
    match format {
        Format::Json => to_json_string(report),
        Format::Csv => to_csv_string(report),
    }
}

pub fn emit(report: &RunReport, format: Format, path: impl AsRef<Path>) -> io::Result<()> {
    std::fs::write(path, render(report, format))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{run, run_with, RunOptions};

    const CANONICAL: &str = r#"{
        "schema": 1, "seed": 11, "duration_days": 2,
        "channel": {"noise_sigma_db": 0.0},
        "devices": [{"id": "A", "app_kind": "honest"}, {"id": "B", "app_kind": "honest"}, {"id": "C", "app_kind": "honest"}],
        "contacts": [
            {"device_a": "A", "device_b": "B", "start_minute": 600, "duration_minutes": 20, "distance_m": 1.0},
            {"device_a": "A", "device_b": "C", "start_minute": 600, "duration_minutes": 240, "distance_m": 10.0}
        ],
        "diagnoses": [{"device_id": "A", "day": 1}]
    }"#;

    fn canonical() -> RunReport {
        run(&Scenario::from_json_str(CANONICAL).unwrap())
    }

    #[test]
    fn perfect_run_has_empty_diff() {
        let r = canonical();
        assert!(r.agrees_with_oracle());
        assert_eq!(r.notifications.len(), 1);
    }

    #[test]
    fn honest_only_attacks_empty() {
        assert!(canonical().attacks.is_empty());
    }

    #[test]
    fn json_round_trip() {
        let r =
            run_with(&Scenario::from_json_str(CANONICAL).unwrap(), RunOptions { verbose: true, ..Default::default() });
        assert!(r.events.as_ref().is_some_and(|e| !e.is_empty()));
        assert_eq!(RunReport::from_json_str(&r.to_json_string()).unwrap(), r);
    }

    #[test]
    fn json_keys_sorted() {
        let text = canonical().to_json_string();
        let top: Vec<&str> = text
            .lines()
            .filter(|l| l.starts_with("  \"") && !l.starts_with("   "))
            .map(|l| l.trim().split('"').nth(1).unwrap())
            .collect();
        let mut sorted = top.clone();
        sorted.sort();
        assert_eq!(top, sorted);
        assert!(top.contains(&"attacks"));
    }

    #[test]
    fn csv_one_row_per_device() {
        let csv = to_csv_string(&canonical());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "device_id,notified,expected,agree");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[2], "B,true,true,true");
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn emit_same_seed_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.json"), dir.path().join("b.json"));
        emit(&canonical(), Format::Json, &p1).unwrap();
        emit(&canonical(), Format::Json, &p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn ratios() {
        assert_eq!(ratio(0, 0), None);
        assert_eq!(ratio(3, 4), Some(0.75));
    }
}
