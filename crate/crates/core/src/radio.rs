// SPDX-License-Identifier: MIT OR Apache-2.0

//! Broadcast propagation between co-located participants.
//!
//! Attenuation follows a log-distance path loss model with i.i.d. gaussian
//! shadowing per sighting: `a + b * log10(d) + N(0, sigma)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keyschedule::EphemeralProximityIdentifier;
use crate::time::{DeviceId, Minute};

#[derive(Debug, Error, PartialEq)]
pub enum RadioError {
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("channel config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub a_db: f64,
    pub b_db: f64,
    pub noise_sigma_db: f64,
    pub max_detect_db: f64,
    pub close_contact_db: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { a_db: 45.0, b_db: 20.0, noise_sigma_db: 2.0, max_detect_db: 90.0, close_contact_db: 55.0 }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), RadioError> {
        let all = [self.a_db, self.b_db, self.noise_sigma_db, self.max_detect_db, self.close_contact_db];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(RadioError::InvalidConfig("all values must be finite".into()));
        }
        if self.noise_sigma_db < 0.0 {
            return Err(RadioError::InvalidConfig("noise_sigma_db must be >= 0".into()));
        }
        if self.close_contact_db >= self.max_detect_db {
            return Err(RadioError::InvalidConfig("close_contact_db must be below max_detect_db".into()));
        }
        Ok(())
    }

    /// Attenuation without shadowing noise.
    pub fn mean_attenuation(&self, distance_m: f64) -> Result<f64, RadioError> {
        if distance_m.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(RadioError::NonPositiveDistance(distance_m));
        }
        Ok(self.a_db + self.b_db * distance_m.log10())
    }
}

/// One received broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sighting {
    pub epi: EphemeralProximityIdentifier,
    pub time: Minute,
    pub attenuation_db: f64,
}

/// Path loss at `distance_m`, with noise drawn from `noise` when the
/// channel has a positive sigma. Attenuation is clamped at 0 dB.
pub fn attenuation<R: Rng + ?Sized>(distance_m: f64, cfg: &ChannelConfig, noise: &mut R) -> Result<f64, RadioError> {
    let mean = cfg.mean_attenuation(distance_m)?;
    if cfg.noise_sigma_db == 0.0 {
        return Ok(mean.max(0.0));
    }
    let dist = Normal::new(0.0, cfg.noise_sigma_db).map_err(|e| RadioError::InvalidConfig(e.to_string()))?;
    Ok((mean + dist.sample(noise)).max(0.0))
}

/// Delivers `sender_epi` to every receiver the signal reaches.
///
/// Receivers are processed in the given order, which fixes the order of
/// noise draws. `sender` is skipped if it appears among the receivers.
pub fn broadcast<R: Rng + ?Sized>(
    sender: &DeviceId,
    sender_epi: Option<EphemeralProximityIdentifier>,
    receiver_distances: &[(DeviceId, f64)],
    cfg: &ChannelConfig,
    noise: &mut R,
    time: Minute,
) -> Result<Vec<(DeviceId, Sighting)>, RadioError> {
    let Some(epi) = sender_epi else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for (receiver, distance) in receiver_distances {
        if receiver == sender {
            continue;
        }
        let attenuation_db = attenuation(*distance, cfg, noise)?;
        if attenuation_db <= cfg.max_detect_db {
            out.push((receiver.clone(), Sighting { epi, time, attenuation_db }));
        }
    }
    Ok(out)
}
