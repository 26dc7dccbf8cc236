//! Uplink physical layer: block Rayleigh fading, non-singular path loss,
//! FDMA achievable rate, upload delay, successful transmission probability
//! and local computation delay.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WirelessError {
    #[error("bandwidth must be positive, got {0} Hz")]
    NonPositiveBandwidth(f64),
    #[error("achievable rate is zero; the upload never completes")]
    ZeroRate,
    #[error("invalid channel parameter `{field}`: {value}")]
    InvalidParam { field: &'static str, value: f64 },
}

/// Converts a power spectral density from dBm/Hz to W/Hz.
pub fn dbm_per_hz_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub path_loss_exponent: f64,
    /// Noise power spectral density N0 in W/Hz.
    pub noise_psd: f64,
    /// Per-user uplink transmit power in W.
    pub tx_power: f64,
    /// Decoding SNR threshold as a linear ratio.
    pub snr_threshold: f64,
    /// Uplink bandwidth budget B in Hz.
    pub total_bandwidth: f64,
    /// Model size Z in bits.
    pub model_size_bits: f64,
}

impl ChannelParams {
    /// The evaluation setup: N0 = -174 dBm/Hz, alpha = 3.76, 0 dB threshold,
    /// P = 10 mW and B = 20 MHz.
    pub fn reference(model_size_bits: f64) -> Self {
        Self {
            path_loss_exponent: 3.76,
            noise_psd: dbm_per_hz_to_watts(-174.0),
            tx_power: 0.01,
            snr_threshold: db_to_linear(0.0),
            total_bandwidth: 20e6,
            model_size_bits,
        }
    }

    pub fn validate(&self) -> Result<(), WirelessError> {
        let checks = [
            ("path_loss_exponent", self.path_loss_exponent, self.path_loss_exponent >= 2.0),
            ("noise_psd", self.noise_psd, self.noise_psd > 0.0),
            ("tx_power", self.tx_power, self.tx_power > 0.0),
            ("snr_threshold", self.snr_threshold, self.snr_threshold > 0.0),
            ("total_bandwidth", self.total_bandwidth, self.total_bandwidth > 0.0),
            ("model_size_bits", self.model_size_bits, self.model_size_bits > 0.0),
        ];
        for (field, value, ok) in checks {
            if !ok || !value.is_finite() {
                return Err(WirelessError::InvalidParam { field, value });
            }
        }
        Ok(())
    }
}

/// One block-fading realization for a user in a round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelDraw {
    pub user_id: usize,
    pub round: u64,
    /// |h|², exponential with unit mean.
    pub fading_power: f64,
    /// |g|² = |h|² l(d).
    pub gain_power: f64,
}

impl ChannelDraw {
    pub fn sample<R: Rng + ?Sized>(
        user_id: usize,
        round: u64,
        distance: f64,
        path_loss_exponent: f64,
        rng: &mut R,
    ) -> Self {
        let fading_power: f64 = rng.sample(Exp1);
        Self {
            user_id,
            round,
            fading_power,
            gain_power: fading_power * path_loss(distance, path_loss_exponent),
        }
    }
}

/// Non-singular path loss `min(1, d^-alpha)`.
pub fn path_loss(distance: f64, exponent: f64) -> f64 {
    if distance <= 1.0 {
        1.0
    } else {
        distance.powf(-exponent).min(1.0)
    }
}

/// Shannon rate `b log2(1 + P|g|²/(N0 b))` in bit/s.
pub fn achievable_rate(
    bandwidth: f64,
    gain_power: f64,
    params: &ChannelParams,
) -> Result<f64, WirelessError> {
    if !(bandwidth > 0.0) {
        return Err(WirelessError::NonPositiveBandwidth(bandwidth));
    }
    let snr = params.tx_power * gain_power / (params.noise_psd * bandwidth);
    Ok(bandwidth * snr.ln_1p() / std::f64::consts::LN_2)
}

/// Rate ceiling `P|g|²/(N0 ln 2)` approached as bandwidth grows without bound.
pub fn rate_ceiling(gain_power: f64, params: &ChannelParams) -> f64 {
    params.tx_power * gain_power / (params.noise_psd * std::f64::consts::LN_2)
}

/// Time to upload Z bits at the achievable rate.
pub fn comm_delay(bandwidth: f64, gain_power: f64, params: &ChannelParams) -> Result<f64, WirelessError> {
    let rate = achievable_rate(bandwidth, gain_power, params)?;
    if params.model_size_bits == 0.0 {
        return Ok(0.0);
    }
    if rate <= 0.0 {
        return Err(WirelessError::ZeroRate);
    }
    Ok(params.model_size_bits / rate)
}

/// Fading power an upload on `bandwidth` must reach to be decoded at
/// `distance`: `gamma N0 b / (P l(d))`.
pub fn fading_threshold(bandwidth: f64, distance: f64, params: &ChannelParams) -> f64 {
    if bandwidth <= 0.0 {
        return 0.0;
    }
    params.snr_threshold * params.noise_psd * bandwidth
        / (params.tx_power * path_loss(distance, params.path_loss_exponent))
}

/// Successful transmission probability `exp(-gamma N0 b / (P l(d)))`.
pub fn stp(bandwidth: f64, distance: f64, params: &ChannelParams) -> f64 {
    (-fading_threshold(bandwidth, distance, params)).exp()
}

/// Decoding outcome for a known fading realization.
pub fn decoded(fading_power: f64, bandwidth: f64, distance: f64, params: &ChannelParams) -> bool {
    fading_power >= fading_threshold(bandwidth, distance, params)
}

/// Draws a fresh fading power and reports whether the upload is decoded.
pub fn draw_success<R: Rng + ?Sized>(
    bandwidth: f64,
    distance: f64,
    params: &ChannelParams,
    rng: &mut R,
) -> bool {
    let fading_power: f64 = rng.sample(Exp1);
    decoded(fading_power, bandwidth, distance, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeProfile {
    /// CPU frequency in cycles/s.
    pub cpu_freq: f64,
    pub cycles_per_sample: f64,
    pub local_epochs: u32,
    pub dataset_size: usize,
}

/// Local training time `zeta D c / f`.
pub fn compute_delay(profile: &ComputeProfile) -> f64 {
    f64::from(profile.local_epochs) * profile.dataset_size as f64 * profile.cycles_per_sample
        / profile.cpu_freq
}
