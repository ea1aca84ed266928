// SPDX-License-Identifier: MIT OR Apache-2.0

//! Health-authority diagnosis key server.
//!
//! The server's inputs are typed so that it can only ever receive temporary
//! exposure keys (uploads) and daily summaries (central reports from
//! malicious apps). No method accepts an identifier or a received record.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keyschedule::TemporaryExposureKey;
use crate::riskscore::{DailySummary, ReportType};
use crate::time::{DayIndex, DeviceId, Minute};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuthorityError {
    #[error("upload rejected: empty key list")]
    EmptyUpload,
}

pub type BatchId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisKey {
    pub tek: TemporaryExposureKey,
    pub report_type: ReportType,
}

/// How an upload reached the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UploadSource {
    /// The user consented through the app's retrieve call.
    Consented,
    /// Keys taken from a seized phone, bypassing the consent prompt.
    Coerced,
    /// An attacker reporting its own beacon's keys as infected.
    Beacon,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisKeyBatch {
    pub batch_id: BatchId,
    /// The person or beacon the authority registered the upload for.
    pub uploader: DeviceId,
    pub source: UploadSource,
    pub published_at: Minute,
    pub keys: Vec<DiagnosisKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralReport {
    pub user_identifier: DeviceId,
    pub day: DayIndex,
    pub total_risk: f64,
    pub reported_at: Minute,
    /// Batches whose keys produced this summary.
    pub batch_ids: Vec<BatchId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeyServer {
    batches: Vec<DiagnosisKeyBatch>,
    central_reports: Vec<CentralReport>,
}

impl KeyServer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn upload_keys(
        &mut self,
        uploader: DeviceId,
        keys: &[TemporaryExposureKey],
        report_type: ReportType,
        source: UploadSource,
        time: Minute,
    ) -> Result<BatchId, AuthorityError> {
        if keys.is_empty() {
            return Err(AuthorityError::EmptyUpload);
        }
        let batch_id = self.batches.len() as BatchId + 1;
        self.batches.push(DiagnosisKeyBatch {
            batch_id,
            uploader,
            source,
            published_at: time,
            keys: keys.iter().map(|&tek| DiagnosisKey { tek, report_type }).collect(),
        });
        Ok(batch_id)
    }

    /// Every batch newer than `last_seen`, oldest first.
    pub fn download_since(&self, last_seen: BatchId) -> &[DiagnosisKeyBatch] {
        let start = (last_seen as usize).min(self.batches.len());
        &self.batches[start..]
    }

    pub fn batch(&self, id: BatchId) -> Option<&DiagnosisKeyBatch> {
        id.checked_sub(1).and_then(|i| self.batches.get(i as usize))
    }

    pub fn batches(&self) -> &[DiagnosisKeyBatch] {
        &self.batches
    }

    pub fn latest_batch_id(&self) -> BatchId {
        self.batches.len() as BatchId
    }

    pub fn record_central_report(
        &mut self,
        user_identifier: &DeviceId,
        summaries: &[DailySummary],
        batch_ids: &[BatchId],
        time: Minute,
    ) {
        for s in summaries {
            self.central_reports.push(CentralReport {
                user_identifier: user_identifier.clone(),
                day: s.day,
                total_risk: s.total_risk,
                reported_at: time,
                batch_ids: batch_ids.to_vec(),
            });
        }
    }

    pub fn central_reports(&self) -> &[CentralReport] {
        &self.central_reports
    }
}
