// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::{BTreeSet, HashSet};
use std::time::{Duration, Instant};

use ensim::actors::{probe, AppInstance, AppKind, AppProfile, ProbeLabel};
use ensim::authority::{BatchId, DiagnosisKey, KeyServer, UploadSource};
use ensim::device::{
    ApiError, DeviceConfig, DeviceState, ExposureNotificationApi, Platform, ALLOWLISTED_DAILY_MATCH_LIMIT,
    DAILY_MATCH_LIMIT, SENT_KEY_DAYS,
};
use ensim::keyschedule::{generate_tek, KeySchedule, TemporaryExposureKey};
use ensim::radio::Sighting;
use ensim::riskscore::{DailySummary, ExposureWindow, ReportType, RiskConfig};
use ensim::scenario::{run, run_with, RunOptions, Simulation};
use ensim::{DayIndex, DeviceId, Minute, Scenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use common::*;

/// Wall-clock budget per criterion.
const TIME_LIMIT: Duration = Duration::from_secs(10);
/// Ratios are computed from integer counts, so equality is exact.
const RATIO_EXACT: f64 = 0.0;
const MIN_CORPUS: usize = 10;
const TEKS_FOR_UNIQUENESS: usize = 100;
const RETENTION_RUN_DAYS: u32 = 60;
const ALLOWLISTED_PROBES: usize = 1000;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
type MatchFn =
    fn(&mut DeviceState, &AppProfile, &[DiagnosisKey], &RiskConfig, Minute) -> Result<Vec<ExposureWindow>, ApiError>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ratio_is_one(r: Option<f64>) -> bool {
    r.is_some_and(|v| (v - 1.0).abs() <= RATIO_EXACT)
}

fn c1_oracle_equivalence() -> Outcome {
    let corpus = corpus();
    ensure(corpus.len() >= MIN_CORPUS, || format!("corpus has {} scenarios", corpus.len()))?;
    let mut total = 0;
    for (name, s) in &corpus {
        ensure(s.channel.noise_sigma_db == 0.0, || format!("{name}: noise not zero"))?;
        let r = run(s);
        ensure(r.oracle_diff.is_empty(), || {
            let d = &r.oracle_diff;
            format!("{name}: missed {:?}, spurious {:?}, risk mismatch {:?}", d.missed, d.spurious, d.risk_mismatch)
        })?;
        ensure(r.notification_keys() == r.expected_notifications, || format!("{name}: sets differ"))?;
        total += r.expected_notifications.len();
    }
    let fifty = run(&fifty_device());
    ensure(fifty.expected_notifications.len() >= 5, || "randomized-50 produced too few notifications".into())?;
    let stale: Vec<_> = run(&stale_contact()).oracle_edges.into_iter().map(|e| (e.exposed.0, e.day.0)).collect();
    ensure(stale == [("C".to_string(), 15)], || format!("stale scenario edges {stale:?}"))?;
    ensure(run(&no_consent()).oracle_edges.is_empty(), || "no-consent diagnosis produced edges".into())?;
    Ok(format!(
        "{} scenarios, {total} expected notifications, missed = spurious = 0, every total risk equal",
        corpus.len()
    ))
}

#[derive(serde::Deserialize)]
struct Golden {
    key_hex: String,
    day: u32,
    interval: u32,
    epi_hex: String,
}

fn c2_key_schedule() -> Outcome {
    let schedule = KeySchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut all = HashSet::new();
    for i in 0..TEKS_FOR_UNIQUENESS {
        let tek = generate_tek(&mut rng, DayIndex(i as u32 % 30));
        let ids = schedule.derive_day_identifiers(&tek);
        ensure(ids.len() == 144, || format!("{} identifiers per day", ids.len()))?;
        all.extend(ids);
    }
    ensure(all.len() == TEKS_FOR_UNIQUENESS * 144, || format!("only {} distinct identifiers", all.len()))?;

    let vectors: Vec<Golden> = serde_json::from_str(include_str!("data/epi_golden_vectors.json")).unwrap();
    for v in &vectors {
        let key: [u8; 16] = hex::decode(&v.key_hex).unwrap().try_into().unwrap();
        let tek = TemporaryExposureKey::new(DayIndex(v.day), key);
        let epi = schedule.derive_epi(&tek, schedule.interval(v.interval).unwrap()).unwrap();
        ensure(hex::encode(epi.as_bytes()) == v.epi_hex, || {
            format!("vector {}/{}/{} differs", v.key_hex, v.day, v.interval)
        })?;
    }
    Ok(format!("{} identifiers pairwise distinct; {} golden vectors match", all.len(), vectors.len()))
}

fn c3_retention() -> Outcome {
    let s = parse(serde_json::json!({
        "schema": 1, "seed": 3, "duration_days": RETENTION_RUN_DAYS,
        "channel": {"noise_sigma_db": 0.0},
        "devices": [{"id": "A", "app_kind": "honest"}, {"id": "B", "app_kind": "honest"}],
        "contacts": [{"device_a": "A", "device_b": "B", "start_minute": 600, "duration_minutes": 20, "distance_m": 1.0}]
    }));
    let mut sim = Simulation::new(&s, RunOptions::default());
    let b = DeviceId::from("B");
    let mut max_s = 0;
    while let Some(day) = sim.step_day() {
        for dev in sim.devices().values() {
            let n = dev.sent_keys().len();
            max_s = max_s.max(n);
            ensure(n <= SENT_KEY_DAYS as usize, || format!("{} holds {n} keys on {day}", dev.id()))?;
        }
        let day0 = sim.devices()[&b].received().records().any(|r| r.day == DayIndex(0));
        match day.0 {
            1..=14 => ensure(day0, || format!("day-0 record missing on {day}"))?,
            15.. => ensure(!day0, || format!("day-0 record still present on {day}"))?,
            _ => {}
        }
    }
    let last = DayIndex(RETENTION_RUN_DAYS - 1);
    let days: Vec<u32> = sim.devices()[&b].sent_keys().keys().map(|k| k.day.0).collect();
    let want: Vec<u32> = (last.0 - 13..=last.0).collect();
    ensure(days == want, || format!("S holds days {days:?} on {last}"))?;
    Ok(format!("max |S| = {max_s} over {RETENTION_RUN_DAYS} days; day-0 record kept on day 14, gone on day 15"))
}

fn approved(kind: AppKind, allowlisted: bool) -> AppProfile {
    AppProfile { kind, approved: true, allowlisted }
}

fn enabled_device(seed: u64, app: AppProfile) -> DeviceState {
    let mut d = DeviceState::new(
        DeviceId::new(format!("dev{seed}")),
        Platform::Android,
        DeviceConfig::default(),
        ChaCha8Rng::seed_from_u64(seed),
    );
    d.install_app(app);
    d.enable_exposure_notification(true, Minute(0));
    d
}

fn c4_rate_limiting() -> Outcome {
    let app = approved(AppKind::Honest, false);
    let mut dev = enabled_device(4, app);
    let risk = RiskConfig::default();
    let key =
        DiagnosisKey { tek: TemporaryExposureKey::new(DayIndex(0), [4; 16]), report_type: ReportType::ConfirmedTest };

    // Hourly calls for three days; successes in every trailing 24 h window never exceed the limit.
    let mut successes: Vec<u64> = Vec::new();
    let mut first_error_at = None;
    for hour in 0..72u64 {
        let t = Minute(hour * 60);
        match dev.match_keys(&app, &[key], &risk, t) {
            Ok(_) => successes.push(t.0),
            Err(ApiError::RateLimited { calls, limit }) => {
                ensure(calls == DAILY_MATCH_LIMIT && limit == DAILY_MATCH_LIMIT, || format!("limit {calls}/{limit}"))?;
                first_error_at.get_or_insert(successes.len());
            }
            Err(e) => return Err(format!("unexpected error {e}")),
        }
        let in_window = successes.iter().filter(|&&s| s + 1440 > t.0).count();
        ensure(in_window <= DAILY_MATCH_LIMIT, || format!("{in_window} successes in window ending {t}"))?;
        if hour >= 24 {
            ensure(in_window == DAILY_MATCH_LIMIT, || format!("window ending {t} has {in_window} successes"))?;
        }
    }
    ensure(first_error_at == Some(DAILY_MATCH_LIMIT), || format!("first error after {first_error_at:?} calls"))?;

    let allow = approved(AppKind::Probing, true);
    let mut target = enabled_device(5, allow);
    let keys: Vec<_> = (0..ALLOWLISTED_PROBES as u32)
        .map(|i| {
            let mut k = [0u8; 16];
            k[..4].copy_from_slice(&i.to_be_bytes());
            let label = ProbeLabel { owner: DeviceId::new(format!("k{i}")), day: DayIndex(0) };
            (
                label,
                DiagnosisKey { tek: TemporaryExposureKey::new(DayIndex(0), k), report_type: ReportType::ConfirmedTest },
            )
        })
        .collect();
    let mut instance = AppInstance::new(allow);
    let res = probe(&mut instance, &mut target, &keys, &risk, Minute(100));
    let probed = res.entries.iter().filter(|e| e.outcome.probed()).count();
    ensure(probed == ALLOWLISTED_PROBES && !res.rate_limited, || format!("allowlisted probed {probed}"))?;
    let limit = target.budget().limit();
    let left = limit - target.budget().calls_in_window(Minute(100));
    ensure(limit == ALLOWLISTED_DAILY_MATCH_LIMIT && left == 1_000_000 - ALLOWLISTED_PROBES, || {
        format!("headroom {left}")
    })?;
    Ok(format!(
        "{DAILY_MATCH_LIMIT} successes per trailing 24 h, call 7 rate-limited; allowlisted {probed} probes, {left} calls left of {limit}"
    ))
}

/// Hex of every identifier broadcast during a run, and the report JSON.
fn run_logging(s: &Scenario) -> (BTreeSet<String>, ensim::RunReport) {
    let mut sim = Simulation::new(s, RunOptions { record_sightings: true, ..Default::default() });
    sim.run_to_end();
    let epis = sim.sightings().iter().map(|e| hex::encode(e.epi.as_bytes())).collect();
    (epis, sim.into_report())
}

fn c5_decentralized_baseline() -> Outcome {
    // The server's write paths accept keys and daily summaries only.
    let _upload: fn(&mut KeyServer, DeviceId, &[TemporaryExposureKey], ReportType, UploadSource, Minute) -> _ =
        KeyServer::upload_keys;
    let _report: fn(&mut KeyServer, &DeviceId, &[DailySummary], &[BatchId], Minute) = KeyServer::record_central_report;

    let scenarios = [
        ("canonical", bundled_scenario("canonical")),
        ("randomized-30-honest", randomized(3030, 30, 8, 120, all_honest)),
        ("long-contact", long_contact()),
        ("summed-risk", summed_risk()),
    ];
    let mut epis_checked = 0;
    for (name, s) in &scenarios {
        ensure(s.devices.iter().all(|d| d.app_kind.is_none_or(|k| k == AppKind::Honest)), || {
            format!("{name} not honest")
        })?;
        let (epis, r) = run_logging(s);
        ensure(r.server_dump.central_reports.is_empty(), || format!("{name}: central reports present"))?;
        ensure(r.attacks.is_empty(), || format!("{name}: attack metrics present"))?;
        let dump = serde_json::to_string(&r.server_dump).unwrap();
        if let Some(epi) = epis.iter().find(|e| dump.contains(e.as_str())) {
            return Err(format!("{name}: identifier {epi} reached the server"));
        }
        epis_checked += epis.len();
    }
    Ok(format!(
        "{} honest scenarios: central log empty, none of {epis_checked} broadcast identifiers on the server",
        scenarios.len()
    ))
}

fn c6_recentralization() -> Outcome {
    let scenarios = [
        ("recentralize", bundled_scenario("recentralize")),
        ("randomized-30-recentralizing", randomized(6060, 30, 8, 140, all_recentralizing)),
    ];
    let mut summary = Vec::new();
    for (name, s) in &scenarios {
        let r = run(s);
        let m = r.attacks.recentralization.as_ref().ok_or_else(|| format!("{name}: no metrics"))?;
        ensure(!r.oracle_edges.is_empty(), || format!("{name}: no oracle edges"))?;
        ensure(ratio_is_one(m.precision) && ratio_is_one(m.recall), || {
            format!("{name}: precision {:?} recall {:?}", m.precision, m.recall)
        })?;
        ensure(m.central_report_edges == r.oracle_edges, || format!("{name}: edge sets differ"))?;
        ensure(m.consent_prompts_on_report_path == 0, || format!("{name}: consent prompt on report path"))?;
        summary.push(format!("{name} {} edges", m.central_report_edges.len()));
    }
    Ok(format!("precision = recall = 1.0, 0 consent prompts ({})", summary.join(", ")))
}

fn c7_probing() -> Outcome {
    let r = run(&bundled_scenario("probe"));
    let m = r.attacks.probing.as_ref().ok_or("no probing metrics")?;
    ensure(m.entries.len() == 6 && m.probed == 6, || format!("{} probed", m.probed))?;
    ensure(m.entries.iter().all(|e| e.correct), || "a key disagrees with ground truth".into())?;
    ensure(ratio_is_one(m.probe_accuracy), || format!("accuracy {:?}", m.probe_accuracy))?;
    let hits: Vec<&str> = m.entries.iter().filter(|e| e.outcome.matched()).map(|e| e.label.owner.as_str()).collect();
    ensure(hits == ["poi4"], || format!("matched {hits:?}"))?;
    Ok("6 of 6 keys correct vs ground truth; only poi4 matched".into())
}

fn c8_beacon() -> Outcome {
    let recentral = bundled_scenario("beacon");
    let mut honest = recentral.clone();
    for d in &mut honest.devices {
        d.app_kind = Some(AppKind::Honest);
    }
    let want: BTreeSet<DeviceId> = ["v1", "v2"].into_iter().map(DeviceId::from).collect();
    for (name, s) in [("honest", &honest), ("recentralizing", &recentral)] {
        let r = run(s);
        let m = r.attacks.beacon.as_ref().ok_or_else(|| format!("{name}: no beacon metrics"))?;
        ensure(m.expected_visitors == want, || format!("{name}: qualifying visitors {:?}", m.expected_visitors))?;
        let notified: BTreeSet<DeviceId> = r.notifications.iter().map(|n| n.device_id.clone()).collect();
        ensure(notified == want, || format!("{name}: notified {notified:?}"))?;
        ensure(r.oracle_diff.is_empty(), || format!("{name}: oracle diff"))?;
        if name == "recentralizing" {
            ensure(m.beacon_visitors_identified == want && ratio_is_one(m.recall), || {
                format!("server identified {:?}", m.beacon_visitors_identified)
            })?;
        } else {
            ensure(m.beacon_visitors_identified.is_empty(), || "honest run reported visitors".into())?;
        }
    }
    Ok("visitors {v1, v2} notified and no one else; server recovers {v1, v2}, recall 1.0".into())
}

fn c9_victim() -> Outcome {
    let r = run(&bundled_scenario("victim"));
    let m = r.attacks.coercion.as_ref().ok_or("no coercion metrics")?;
    let want: BTreeSet<DeviceId> = ["c1", "c2", "c3"].into_iter().map(DeviceId::from).collect();
    ensure(m.exact && m.notified_contacts == m.expected_contacts, || format!("notified {:?}", m.notified_contacts))?;
    ensure(m.expected_contacts == want, || format!("oracle contacts {:?}", m.expected_contacts))?;
    let coerced = r.server_dump.batches.iter().filter(|b| b.source == UploadSource::Coerced).count();
    ensure(coerced == 1 && r.server_dump.batches.len() == 1, || "batch not flagged coerced".into())?;
    let victim = &r.budget_audit[&DeviceId::from("victim")];
    ensure(victim.retrieve_ok == 0, || "victim consented".into())?;
    Ok("coerced upload notified exactly {c1, c2, c3}; batch flagged coerced".into())
}

fn c10_determinism() -> Outcome {
    let mut scenarios = corpus();
    let mut noisy = fifty_device();
    noisy.channel.noise_sigma_db = 2.0;
    scenarios.push(("randomized-50-noisy", noisy));
    for (name, s) in &scenarios {
        let opts = || RunOptions { verbose: true, ..Default::default() };
        let a = run_with(s, opts()).to_json_string();
        let b = run_with(s, opts()).to_json_string();
        ensure(a == b, || format!("{name}: reports differ"))?;
    }
    Ok(format!("{} scenarios byte-identical across two runs", scenarios.len()))
}

fn c11_api_opacity() -> Outcome {
    // The match result type is ExposureWindow, with exactly these fields.
    let _match: MatchFn = <DeviceState as ExposureNotificationApi>::match_keys;

    let app = approved(AppKind::Honest, false);
    let mut tx = enabled_device(11, app);
    let mut rx = enabled_device(12, app);
    for t in (600..620).step_by(2) {
        let epi = tx.on_tick(Minute(t)).unwrap();
        rx.on_sighting(&Sighting { epi, time: Minute(t), attenuation_db: 45.0 });
    }
    let tek = *tx.current_tek().unwrap();
    let windows = rx
        .match_keys(
            &app,
            &[DiagnosisKey { tek, report_type: ReportType::ConfirmedTest }],
            &RiskConfig::default(),
            Minute(700),
        )
        .map_err(|e| e.to_string())?;
    ensure(!windows.is_empty(), || "no match".into())?;
    let json = serde_json::to_value(&windows).unwrap();
    let allowed: BTreeSet<&str> = ["bucket", "day", "duration_minutes", "risk"].into();
    for w in json.as_array().unwrap() {
        let keys: BTreeSet<&str> = w.as_object().unwrap().keys().map(String::as_str).collect();
        ensure(keys == allowed, || format!("window fields {keys:?}"))?;
    }
    let text = json.to_string();
    let schedule = KeySchedule::default();
    let secrets: Vec<String> = std::iter::once(tek.key_hex())
        .chain(schedule.derive_day_identifiers(&tek).iter().map(|e| hex::encode(e.as_bytes())))
        .collect();
    ensure(secrets.iter().all(|s| !text.contains(s.as_str())), || "key material in match result".into())?;
    let mut smuggled: Value = json[0].clone();
    smuggled["epi"] = Value::String(secrets[1].clone());
    ensure(serde_json::from_value::<ExposureWindow>(smuggled).is_err(), || {
        "window accepted an identifier field".into()
    })?;
    Ok("match result fields = {bucket, day, duration_minutes, risk}; no key or identifier bytes".into())
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("oracle equivalence", c1_oracle_equivalence),
        ("key schedule", c2_key_schedule),
        ("retention", c3_retention),
        ("rate limiting", c4_rate_limiting),
        ("decentralization baseline", c5_decentralized_baseline),
        ("re-centralization attack", c6_recentralization),
        ("probing attack", c7_probing),
        ("beacon attack", c8_beacon),
        ("victim scenario", c9_victim),
        ("determinism", c10_determinism),
        ("API opacity", c11_api_opacity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|msg| {
            if elapsed <= TIME_LIMIT {
                Ok(msg)
            } else {
                Err(format!("took {elapsed:?}, limit {TIME_LIMIT:?}"))
            }
        });
        match outcome {
            Ok(msg) => println!("PASS criterion {:>2} {name}: {msg} [{:.2}s]", i + 1, elapsed.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {:>2} {name}: {msg} [{:.2}s]", i + 1, elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
