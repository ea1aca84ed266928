// SPDX-License-Identifier: MIT OR Apache-2.0

//! Daily temporary exposure keys and the rotating proximity identifiers
//! derived from them.
//!
//! The derivation is public: anyone holding a key can recompute every
//! identifier it produced that day. Concretely
//!
//! ```text
//! epi(key, day, interval) = SHA-256(key || be32(day) || be32(interval))[0..16]
//! ```
//!
//! Identifiers travel over the air as their raw 16 bytes, with no framing,
//! so any device decodes any other device's identifiers.

use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use crate::time::DayIndex;
use crate::time::{Minute, MINUTES_PER_DAY};

pub const KEY_LEN: usize = 16;
pub const EPI_LEN: usize = 16;

pub const DEFAULT_ROTATION_MINUTES: u32 = 10;
pub const MIN_ROTATION_MINUTES: u32 = 10;
pub const MAX_ROTATION_MINUTES: u32 = 20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyScheduleError {
    #[error("interval {interval} out of range [0, {intervals_per_day})")]
    IntervalOutOfRange { interval: u32, intervals_per_day: u32 },
    #[error("rotation period {0} min must lie in [10, 20] and divide a day")]
    InvalidRotation(u32),
    #[error("identifier must be exactly {EPI_LEN} bytes, got {0}")]
    WrongLength(usize),
    #[error("invalid hex: {0}")]
    Hex(String),
}

/// Index of a rotation interval within a day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntervalIndex(pub u32);

/// Per-day random root secret of a device's broadcast identity.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TemporaryExposureKey {
    pub day: DayIndex,
    #[serde(with = "hex_bytes")]
    pub key: [u8; KEY_LEN],
}

impl TemporaryExposureKey {
    pub fn new(day: DayIndex, key: [u8; KEY_LEN]) -> Self {
        Self { day, key }
    }

    pub fn key_hex(&self) -> String {
        hex::encode(self.key)
    }
}

impl fmt::Debug for TemporaryExposureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tek({}, {})", self.day.0, self.key_hex())
    }
}

/// Rotating identifier broadcast over the radio.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EphemeralProximityIdentifier(#[serde(with = "hex_bytes")] pub [u8; EPI_LEN]);

impl EphemeralProximityIdentifier {
    pub fn as_bytes(&self) -> &[u8; EPI_LEN] {
        &self.0
    }
}

impl fmt::Debug for EphemeralProximityIdentifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Epi({})", hex::encode(self.0))
    }
}

/// Draws a fresh key for `day` from the caller's stream.
pub fn generate_tek<R: RngCore + ?Sized>(rng: &mut R, day: DayIndex) -> TemporaryExposureKey {
    let mut key = [0u8; KEY_LEN];
    rng.fill_bytes(&mut key);
    TemporaryExposureKey { day, key }
}

/// The public identifier function. Callers must ensure `interval` is in range.
fn epi_unchecked(tek: &TemporaryExposureKey, interval: u32) -> EphemeralProximityIdentifier {
    let mut hasher = Sha256::new();
    hasher.update(tek.key);
    hasher.update(tek.day.0.to_be_bytes());
    hasher.update(interval.to_be_bytes());
    let digest = hasher.finalize();
    let mut out = [0u8; EPI_LEN];
    out.copy_from_slice(&digest[..EPI_LEN]);
    EphemeralProximityIdentifier(out)
}

/// Rotation schedule shared by every participant of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeySchedule {
    rotation_minutes: u32,
}

impl Default for KeySchedule {
    fn default() -> Self {
        Self { rotation_minutes: DEFAULT_ROTATION_MINUTES }
    }
}

impl KeySchedule {
    pub fn new(rotation_minutes: u32) -> Result<Self, KeyScheduleError> {
        if !(MIN_ROTATION_MINUTES..=MAX_ROTATION_MINUTES).contains(&rotation_minutes)
            || !MINUTES_PER_DAY.is_multiple_of(u64::from(rotation_minutes))
        {
            return Err(KeyScheduleError::InvalidRotation(rotation_minutes));
        }
        Ok(Self { rotation_minutes })
    }

    pub fn rotation_minutes(&self) -> u32 {
        self.rotation_minutes
    }

    pub fn intervals_per_day(&self) -> u32 {
        (MINUTES_PER_DAY / u64::from(self.rotation_minutes)) as u32
    }

    pub fn interval(&self, value: u32) -> Result<IntervalIndex, KeyScheduleError> {
        if value < self.intervals_per_day() {
            Ok(IntervalIndex(value))
        } else {
            Err(KeyScheduleError::IntervalOutOfRange { interval: value, intervals_per_day: self.intervals_per_day() })
        }
    }

    /// Rotation interval containing `t`.
    pub fn interval_at(&self, t: Minute) -> IntervalIndex {
        IntervalIndex((t.minute_of_day() / u64::from(self.rotation_minutes)) as u32)
    }

    /// True when `t` opens a new rotation interval.
    pub fn is_rotation_boundary(&self, t: Minute) -> bool {
        t.0.is_multiple_of(u64::from(self.rotation_minutes))
    }

    pub fn derive_epi(
        &self,
        tek: &TemporaryExposureKey,
        interval: IntervalIndex,
    ) -> Result<EphemeralProximityIdentifier, KeyScheduleError> {
        let interval = self.interval(interval.0)?;
        Ok(epi_unchecked(tek, interval.0))
    }

    /// Every identifier the key produces over its day, in interval order.
    pub fn derive_day_identifiers(&self, tek: &TemporaryExposureKey) -> Vec<EphemeralProximityIdentifier> {
        (0..self.intervals_per_day()).map(|i| epi_unchecked(tek, i)).collect()
    }
}

pub fn encode_epi(epi: &EphemeralProximityIdentifier) -> [u8; EPI_LEN] {
    epi.0
}

pub fn decode_epi(bytes: &[u8]) -> Result<EphemeralProximityIdentifier, KeyScheduleError> {
    let arr: [u8; EPI_LEN] = bytes.try_into().map_err(|_| KeyScheduleError::WrongLength(bytes.len()))?;
    Ok(EphemeralProximityIdentifier(arr))
}

pub fn parse_key_hex(s: &str) -> Result<[u8; KEY_LEN], KeyScheduleError> {
    let bytes = hex::decode(s).map_err(|e| KeyScheduleError::Hex(e.to_string()))?;
    bytes.as_slice().try_into().map_err(|_| KeyScheduleError::WrongLength(bytes.len()))
}

mod hex_bytes {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8; 16], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 16], D::Error> {
        let s = String::deserialize(d)?;
        super::parse_key_hex(&s).map_err(D::Error::custom)
    }
}
