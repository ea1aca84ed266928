// SPDX-License-Identifier: MIT OR Apache-2.0

//! Built-in scenarios, including one per attack demonstration.

use std::fmt;
use std::str::FromStr;

use super::Scenario;
use crate::report::RunReport;

/// `(name, json)` for every bundled scenario.
pub const BUNDLED: &[(&str, &str)] = &[
    ("canonical", include_str!("../../scenarios/canonical.json")),
    ("recentralize", include_str!("../../scenarios/recentralize.json")),
    ("probe", include_str!("../../scenarios/probe.json")),
    ("beacon", include_str!("../../scenarios/beacon.json")),
    ("victim", include_str!("../../scenarios/victim.json")),
];

/// Parses a bundled scenario by name.
pub fn bundled(name: &str) -> Option<Scenario> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| Scenario::from_json_str(text).expect("bundled scenarios are valid"))
}

fn fmt_ratio(r: Option<f64>) -> String {
    r.map_or_else(|| "undefined".into(), |v| format!("{v:.3}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Demo {
    Recentralize,
    Probe,
    Beacon,
    Victim,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemoOutcome {
    pub passed: bool,
    pub summary: String,
}

impl Demo {
    pub const ALL: [Demo; 4] = [Demo::Recentralize, Demo::Probe, Demo::Beacon, Demo::Victim];

    pub fn name(self) -> &'static str {
        match self {
            Demo::Recentralize => "recentralize",
            Demo::Probe => "probe",
            Demo::Beacon => "beacon",
            Demo::Victim => "victim",
        }
    }

    pub fn scenario(self) -> Scenario {
        bundled(self.name()).expect("every demo is bundled")
    }

    /// Compares a report of this demo's scenario with the expected attack outcome.
    pub fn check(self, report: &RunReport) -> DemoOutcome {
        let a = &report.attacks;
        let (passed, summary) = match self {
            Demo::Recentralize => match &a.recentralization {
                Some(m) => {
                    let exact = m.central_report_edges == report.oracle_edges && !m.central_report_edges.is_empty();
                    let ok = exact
                        && m.consent_prompts_on_report_path == 0
                        && m.precision == Some(1.0)
                        && m.recall == Some(1.0);
                    let edges: Vec<String> = m
                        .central_report_edges
                        .iter()
                        .map(|e| format!("({}, {}, day {})", e.exposed, e.diagnosed, e.day.0))
                        .collect();
                    (
                        ok,
                        format!(
                            "server recovered {} of {} oracle edges [{}]; precision {}, recall {}, consent prompts {}",
                            m.central_report_edges.intersection(&report.oracle_edges).count(),
                            report.oracle_edges.len(),
                            edges.join(", "),
                            fmt_ratio(m.precision),
                            fmt_ratio(m.recall),
                            m.consent_prompts_on_report_path
                        ),
                    )
                }
                None => (false, "no recentralizing app in scenario".into()),
            },
            Demo::Probe => match &a.probing {
                Some(m) => {
                    let hits: Vec<String> = m
                        .entries
                        .iter()
                        .filter(|e| e.outcome.matched())
                        .map(|e| format!("{}@day{}", e.label.owner, e.label.day.0))
                        .collect();
                    let ok = m.probe_accuracy == Some(1.0) && m.entries.iter().all(|e| e.correct) && !hits.is_empty();
                    (
                        ok,
                        format!(
                            "probed {} keys, matched [{}], accuracy {}",
                            m.probed,
                            hits.join(", "),
                            fmt_ratio(m.probe_accuracy)
                        ),
                    )
                }
                None => (false, "no probes in scenario".into()),
            },
            Demo::Beacon => match &a.beacon {
                Some(m) => {
                    let ok = !m.expected_visitors.is_empty()
                        && m.notified_visitors == m.expected_visitors
                        && m.beacon_visitors_identified == m.expected_visitors
                        && m.recall == Some(1.0);
                    let names = |s: &std::collections::BTreeSet<crate::time::DeviceId>| {
                        s.iter().map(|d| d.as_str()).collect::<Vec<_>>().join(", ")
                    };
                    (
                        ok,
                        format!(
                            "visitors [{}], notified [{}], identified by server [{}], recall {}",
                            names(&m.expected_visitors),
                            names(&m.notified_visitors),
                            names(&m.beacon_visitors_identified),
                            fmt_ratio(m.recall)
                        ),
                    )
                }
                None => (false, "no beacon in scenario".into()),
            },
            Demo::Victim => match &a.coercion {
                Some(m) => {
                    let ok = m.exact && !m.notified_contacts.is_empty();
                    let names: Vec<&str> = m.notified_contacts.iter().map(|d| d.as_str()).collect();
                    (
                        ok,
                        format!(
                            "coerced batches {:?}; notified [{}], expected {} contacts",
                            m.coerced_batches,
                            names.join(", "),
                            m.expected_contacts.len()
                        ),
                    )
                }
                None => (false, "no coercion in scenario".into()),
            },
        };
        let passed = passed && report.agrees_with_oracle();
        DemoOutcome { passed, summary }
    }
}

impl fmt::Display for Demo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Demo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Demo::ALL.into_iter().find(|d| d.name() == s).ok_or_else(|| format!("unknown demo \"{s}\""))
    }
}
