// SPDX-License-Identifier: MIT OR Apache-2.0

//! Exposure windows and daily risk summaries.
//!
//! A window's risk is `duration * bucket_weight(min attenuation) *
//! report_type_weight`. Matched records of one diagnosis key are grouped into
//! runs of adjacent rotation intervals, and each run is cut into windows of
//! at most [`MAX_WINDOW_MINUTES`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::ReceivedRecord;
use crate::keyschedule::IntervalIndex;
use crate::time::DayIndex;

pub const MAX_WINDOW_MINUTES: f64 = 30.0;

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("no weight configured for report type {0:?}")]
    UnknownReportType(ReportType),
    #[error("window duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("risk config: {0}")]
    InvalidConfig(String),
}

/// How the uploader's infection was established.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportType {
    ConfirmedTest,
    ClinicalDiagnosis,
    SelfReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    /// Upper bounds (inclusive, dB) of buckets 0..=2; bucket 3 is everything above.
    pub attenuation_buckets: [f64; 3],
    pub bucket_weights: [f64; 4],
    pub report_type_weights: BTreeMap<ReportType, f64>,
    /// Weighted minutes a daily summary must reach before the user is notified.
    pub notification_threshold: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            attenuation_buckets: [50.0, 55.0, 70.0],
            bucket_weights: [2.0, 1.0, 0.5, 0.0],
            report_type_weights: BTreeMap::from([(ReportType::ConfirmedTest, 1.0)]),
            notification_threshold: 15.0,
        }
    }
}

impl RiskConfig {
    pub fn validate(&self) -> Result<(), RiskError> {
        let t = &self.attenuation_buckets;
        if t.iter().any(|v| !v.is_finite()) || !(t[0] < t[1] && t[1] < t[2]) {
            return Err(RiskError::InvalidConfig("attenuation_buckets must be finite and strictly increasing".into()));
        }
        let weights = self.bucket_weights.iter().chain(self.report_type_weights.values());
        if weights.into_iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(RiskError::InvalidConfig("weights must be finite and >= 0".into()));
        }
        if !self.notification_threshold.is_finite() || self.notification_threshold < 0.0 {
            return Err(RiskError::InvalidConfig("notification_threshold must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn bucket(&self, attenuation_db: f64) -> u8 {
        self.attenuation_buckets.iter().position(|&upper| attenuation_db <= upper).unwrap_or(3) as u8
    }

    pub fn report_weight(&self, report_type: ReportType) -> Result<f64, RiskError> {
        self.report_type_weights.get(&report_type).copied().ok_or(RiskError::UnknownReportType(report_type))
    }
}

/// A scored slice of matched exposure. Carries no key and no identifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExposureWindow {
    pub day: DayIndex,
    pub duration_minutes: f64,
    pub bucket: u8,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySummary {
    pub day: DayIndex,
    pub total_risk: f64,
}

pub fn score_window(
    duration_minutes: f64,
    min_attenuation_db: f64,
    report_type: ReportType,
    cfg: &RiskConfig,
) -> Result<f64, RiskError> {
    if duration_minutes.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(RiskError::NonPositiveDuration(duration_minutes));
    }
    let bucket_weight = cfg.bucket_weights[cfg.bucket(min_attenuation_db) as usize];
    Ok(duration_minutes * bucket_weight * cfg.report_weight(report_type)?)
}

/// Builds windows from the records one diagnosis key matched.
///
/// `records` may arrive in any order; they are sorted by interval. Each
/// window's bucket comes from the lowest attenuation among the records that
/// contributed minutes to it.
pub fn windows_from_match(
    records: &[(IntervalIndex, ReceivedRecord)],
    report_type: ReportType,
    cfg: &RiskConfig,
) -> Result<Vec<ExposureWindow>, RiskError> {
    let mut sorted: Vec<&(IntervalIndex, ReceivedRecord)> = records.iter().collect();
    sorted.sort_by_key(|(i, _)| *i);

    let mut windows = Vec::new();
    let mut chunk: Option<Chunk> = None;
    let mut prev: Option<IntervalIndex> = None;

    for (interval, record) in sorted {
        let contiguous = prev.is_some_and(|p| p.0 + 1 == interval.0);
        if !contiguous {
            if let Some(c) = chunk.take() {
                windows.push(c.finish(report_type, cfg)?);
            }
        }
        prev = Some(*interval);

        let mut remaining = record.exposure_minutes;
        while remaining > 0.0 {
            let c = chunk.get_or_insert(Chunk::new(record.day));
            let take = remaining.min(MAX_WINDOW_MINUTES - c.minutes);
            c.minutes += take;
            c.min_attenuation_db = c.min_attenuation_db.min(record.min_attenuation_db);
            remaining -= take;
            if c.minutes >= MAX_WINDOW_MINUTES {
                let full = chunk.take().expect("chunk present");
                windows.push(full.finish(report_type, cfg)?);
            }
        }
    }
    if let Some(c) = chunk {
        windows.push(c.finish(report_type, cfg)?);
    }
    Ok(windows)
}

struct Chunk {
    day: DayIndex,
    minutes: f64,
    min_attenuation_db: f64,
}

impl Chunk {
    fn new(day: DayIndex) -> Self {
        Self { day, minutes: 0.0, min_attenuation_db: f64::INFINITY }
    }

    fn finish(self, report_type: ReportType, cfg: &RiskConfig) -> Result<ExposureWindow, RiskError> {
        Ok(ExposureWindow {
            day: self.day,
            duration_minutes: self.minutes,
            bucket: cfg.bucket(self.min_attenuation_db),
            risk: score_window(self.minutes, self.min_attenuation_db, report_type, cfg)?,
        })
    }
}

/// Per-day risk totals, ordered by day.
pub fn summarize(windows: &[ExposureWindow]) -> Vec<DailySummary> {
    let mut by_day: BTreeMap<DayIndex, f64> = BTreeMap::new();
    for w in windows {
        *by_day.entry(w.day).or_default() += w.risk;
    }
    by_day.into_iter().map(|(day, total_risk)| DailySummary { day, total_risk }).collect()
}
