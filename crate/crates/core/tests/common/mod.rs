// SPDX-License-Identifier: MIT OR Apache-2.0

//! Scenario corpus shared by the integration tests.

#![allow(dead_code)]

use ensim::scenario::bundled;
use ensim::Scenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub fn parse(v: Value) -> Scenario {
    Scenario::from_json_str(&v.to_string()).unwrap_or_else(|e| panic!("corpus scenario invalid: {e}"))
}

fn contact(a: &str, b: &str, start: u64, minutes: u64, distance: f64) -> Value {
    json!({"device_a": a, "device_b": b, "start_minute": start, "duration_minutes": minutes, "distance_m": distance})
}

fn honest(ids: &[&str]) -> Value {
    ids.iter().map(|id| json!({"id": id, "app_kind": "honest"})).collect()
}

pub fn stale_contact() -> Scenario {
    parse(json!({
        "schema": 1, "seed": 16, "duration_days": 17,
        "channel": {"noise_sigma_db": 0.0},
        "devices": honest(&["A", "B", "C"]),
        "contacts": [contact("A", "B", 600, 30, 1.0), contact("A", "C", 15 * 1440 + 600, 30, 1.0)],
        "diagnoses": [{"device_id": "A", "day": 16}]
    }))
}

pub fn no_consent() -> Scenario {
    parse(json!({
        "schema": 1, "seed": 17, "duration_days": 3,
        "channel": {"noise_sigma_db": 0.0},
        "devices": honest(&["A", "B"]),
        "contacts": [contact("A", "B", 600, 30, 1.0)],
        "diagnoses": [{"device_id": "A", "day": 1, "consent": false}]
    }))
}

pub fn long_contact() -> Scenario {
    parse(json!({
        "schema": 1, "seed": 18, "duration_days": 2,
        "channel": {"noise_sigma_db": 0.0},
        "devices": honest(&["A", "B", "C"]),
        "contacts": [contact("A", "B", 600, 70, 1.0), contact("A", "C", 900, 14, 2.0)],
        "diagnoses": [{"device_id": "A", "day": 1}]
    }))
}

pub fn mid_day_enable() -> Scenario {
    parse(json!({
        "schema": 1, "seed": 19, "duration_days": 2,
        "channel": {"noise_sigma_db": 0.0},
        "devices": [
            {"id": "A", "app_kind": "honest"},
            {"id": "B", "app_kind": "honest", "enable_at_minute": 612},
            {"id": "C", "app_kind": "honest", "enable_at_minute": 700},
            {"id": "D", "app_kind": "honest", "consent_policy": "deny"}
        ],
        "contacts": [
            contact("A", "B", 600, 30, 1.0),
            contact("A", "C", 600, 60, 1.0),
            contact("A", "D", 800, 60, 1.0)
        ],
        "diagnoses": [{"device_id": "A", "day": 1}]
    }))
}

pub fn unapproved_apps() -> Scenario {
    parse(json!({
        "schema": 1, "seed": 20, "duration_days": 3,
        "channel": {"noise_sigma_db": 0.0},
        "devices": [
            {"id": "A", "app_kind": "honest"},
            {"id": "B", "app_kind": "honest", "approved": false},
            {"id": "C", "app_kind": "honest"},
            {"id": "D", "app_kind": "honest", "approved": false},
            {"id": "E"}
        ],
        "contacts": [
            contact("A", "B", 600, 30, 1.0),
            contact("A", "C", 600, 30, 1.0),
            contact("D", "C", 2000, 30, 1.0),
            contact("E", "C", 2100, 30, 1.0)
        ],
        "diagnoses": [
            {"device_id": "A", "day": 1},
            {"device_id": "D", "day": 2},
            {"device_id": "E", "day": 2}
        ]
    }))
}

pub fn rotation_fifteen() -> Scenario {
    parse(json!({
        "schema": 1, "seed": 21, "duration_days": 3,
        "rotation_minutes": 15, "scan_period_minutes": 5,
        "channel": {"noise_sigma_db": 0.0},
        "devices": honest(&["A", "B", "C"]),
        "contacts": [contact("A", "B", 1435, 40, 1.5), contact("A", "C", 3000, 20, 1.0)],
        "diagnoses": [{"device_id": "A", "day": 2}]
    }))
}

/// One encounter whose distance changes, so windows mix attenuation buckets.
pub fn moving_contact() -> Scenario {
    parse(json!({
        "schema": 1, "seed": 24, "duration_days": 2,
        "channel": {"noise_sigma_db": 0.0},
        "devices": honest(&["A", "B"]),
        "contacts": [contact("A", "B", 600, 20, 1.0), contact("A", "B", 620, 80, 3.0)],
        "diagnoses": [{"device_id": "A", "day": 1}]
    }))
}

/// Two diagnosed users whose contacts with X only notify together.
pub fn summed_risk() -> Scenario {
    parse(json!({
        "schema": 1, "seed": 22, "duration_days": 4,
        "channel": {"noise_sigma_db": 0.0},
        "devices": honest(&["U1", "U2", "U3", "X", "Y"]),
        "contacts": [
            contact("U1", "X", 600, 8, 2.0),
            contact("U2", "X", 700, 8, 2.0),
            contact("U3", "Y", 800, 8, 2.0),
            contact("U1", "Y", 900, 8, 2.0)
        ],
        "diagnoses": [
            {"device_id": "U1", "day": 1},
            {"device_id": "U2", "day": 1},
            {"device_id": "U3", "day": 2}
        ]
    }))
}

/// More diagnoses in one day than a recentralizing app has match calls.
pub fn recentralize_overflow() -> Scenario {
    let ids: Vec<String> = (0..10).map(|i| format!("u{i}")).collect();
    let mut devices: Vec<Value> = ids.iter().map(|id| json!({"id": id, "app_kind": "recentralizing"})).collect();
    devices.push(json!({"id": "x", "app_kind": "recentralizing"}));
    let contacts: Vec<Value> = ids.iter().enumerate().map(|(i, id)| contact(id, "x", 60 * i as u64, 20, 1.0)).collect();
    let diagnoses: Vec<Value> = ids.iter().map(|id| json!({"device_id": id, "day": 1})).collect();
    parse(json!({
        "schema": 1, "seed": 23, "duration_days": 2,
        "channel": {"noise_sigma_db": 0.0},
        "devices": devices, "contacts": contacts, "diagnoses": diagnoses
    }))
}

/// A random world. `kinds` picks each device's app from a uniform draw.
pub fn randomized(
    seed: u64,
    n_devices: usize,
    days: u32,
    n_contacts: usize,
    kinds: fn(f64) -> Option<&'static str>,
) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<String> = (0..n_devices).map(|i| format!("d{i:02}")).collect();
    let devices: Vec<Value> = ids
        .iter()
        .map(|id| {
            let mut d = json!({"id": id});
            if let Some(kind) = kinds(rng.random()) {
                d["app_kind"] = kind.into();
            }
            if rng.random_bool(0.1) {
                d["enable_at_minute"] = rng.random_range(0..3 * 1440u64).into();
            }
            if rng.random_bool(0.04) {
                d["consent_policy"] = "deny".into();
            }
            d
        })
        .collect();

    let mut spans: Vec<(usize, usize, u64, u64)> = Vec::new();
    let mut contacts = Vec::new();
    while contacts.len() < n_contacts {
        let a = rng.random_range(0..n_devices);
        let b = rng.random_range(0..n_devices);
        if a == b {
            continue;
        }
        let (lo, hi) = (a.min(b), a.max(b));
        let day = rng.random_range(0..days) as u64;
        let start = day * 1440 + rng.random_range(0..1440u64);
        let minutes = rng.random_range(1..=90u64).min(days as u64 * 1440 - start);
        let end = start + minutes;
        if spans.iter().any(|&(x, y, s, e)| x == lo && y == hi && s < end && start < e) {
            continue;
        }
        spans.push((lo, hi, start, end));
        let distance = [0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 8.0, 12.0][rng.random_range(0..8)];
        contacts.push(contact(&ids[a], &ids[b], start, minutes, distance));
    }

    let report_types = ["confirmed_test", "clinical_diagnosis", "self_report"];
    let mut per_day = vec![0; days as usize];
    let mut diagnoses = Vec::new();
    for id in &ids {
        if !rng.random_bool(0.2) {
            continue;
        }
        let day = rng.random_range(1..days);
        if per_day[day as usize] >= 6 {
            continue;
        }
        per_day[day as usize] += 1;
        diagnoses.push(json!({
            "device_id": id, "day": day,
            "report_type": report_types[rng.random_range(0..3)],
            "consent": rng.random_bool(0.9)
        }));
    }
    parse(json!({
        "schema": 1, "seed": seed, "duration_days": days,
        "channel": {"noise_sigma_db": 0.0},
        "risk": {"report_type_weights": {"confirmed_test": 1.0, "clinical_diagnosis": 0.8, "self_report": 0.5}},
        "devices": devices, "contacts": contacts, "diagnoses": diagnoses
    }))
}

pub fn mixed_apps(u: f64) -> Option<&'static str> {
    match u {
        u if u < 0.65 => Some("honest"),
        u if u < 0.9 => Some("recentralizing"),
        _ => None,
    }
}

pub fn all_honest(_: f64) -> Option<&'static str> {
    Some("honest")
}

pub fn all_recentralizing(_: f64) -> Option<&'static str> {
    Some("recentralizing")
}

pub fn fifty_device() -> Scenario {
    randomized(5050, 50, 10, 220, mixed_apps)
}

pub fn bundled_scenario(name: &str) -> Scenario {
    bundled(name).expect("bundled")
}

/// The oracle-equivalence corpus, by name.
pub fn corpus() -> Vec<(&'static str, Scenario)> {
    vec![
        ("canonical", bundled_scenario("canonical")),
        ("stale-16-day", stale_contact()),
        ("no-consent", no_consent()),
        ("randomized-50", fifty_device()),
        ("randomized-30-honest", randomized(3030, 30, 8, 120, all_honest)),
        ("recentralize", bundled_scenario("recentralize")),
        ("probe", bundled_scenario("probe")),
        ("beacon", bundled_scenario("beacon")),
        ("victim", bundled_scenario("victim")),
        ("long-contact", long_contact()),
        ("mid-day-enable", mid_day_enable()),
        ("unapproved-apps", unapproved_apps()),
        ("rotation-15", rotation_fifteen()),
        ("summed-risk", summed_risk()),
        ("moving-contact", moving_contact()),
        ("recentralize-overflow", recentralize_overflow()),
    ]
}
