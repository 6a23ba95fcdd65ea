//! AWGN and block-Rayleigh channel simulation with the SNR to
//! noise-variance mapping sigma^2 = 10^(-SNR/10) (unit-power signals) and
//! the receiver-side SNR-estimate offset protocol.
//!
//! The learned pipeline transmits real-valued symbols, so these channels
//! are real; the classical baseline's QAM path carries its own complex
//! channel. Noise is ChaCha8-seeded Box-Muller Gaussian, making every
//! realization reproducible from (seed, stream).

use rand_chacha::ChaCha8Rng;

use crate::random::{rayleigh as draw_rayleigh, standard_normal};

/// Rayleigh scale parameter giving unit mean channel power: E[h^2] = 2*theta^2 = 1.
pub const RAYLEIGH_THETA: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
}

impl std::fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChannelKind::Awgn => write!(f, "awgn"),
            ChannelKind::Rayleigh => write!(f, "rayleigh"),
        }
    }
}

/// Noise variance for a target SNR in dB under unit-power signaling.
/// `snr_db = +inf` yields exactly zero (transparent channel).
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// One concrete channel draw: SNR operating point, noise variance, fading
/// coefficient (Rayleigh only), and the receiver-side estimate offset.
#[derive(Debug, Clone, Copy)]
pub struct ChannelRealization {
    pub kind: ChannelKind,
    pub snr_db: f64,
    pub sigma2: f64,
    /// Block-fading coefficient; 1.0 under AWGN.
    pub h: f64,
    /// dB added to the receiver-side SNR estimate (0 = matched).
    pub estimate_offset_db: f64,
}

impl ChannelRealization {
    /// Draws a realization. Under Rayleigh fading one `h` is drawn per call
    /// (per sample / block) and applies to every symbol of that block.
    pub fn draw(kind: ChannelKind, snr_db: f64, estimate_offset_db: f64, rng: &mut ChaCha8Rng) -> Self {
        let h = match kind {
            ChannelKind::Awgn => 1.0,
            ChannelKind::Rayleigh => draw_rayleigh(rng, RAYLEIGH_THETA),
        };
        ChannelRealization {
            kind,
            snr_db,
            sigma2: noise_variance(snr_db),
            h,
            estimate_offset_db,
        }
    }

    /// The SNR value handed to the decoder: true SNR plus the configured
    /// estimate offset.
    pub fn receiver_snr_estimate(&self) -> f64 {
        self.snr_db + self.estimate_offset_db
    }
}

/// y = x + n with n ~ N(0, sigma2) i.i.d. per element.
pub fn awgn(x: &[f64], sigma2: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if sigma2 == 0.0 {
        return x.to_vec();
    }
    let sigma = sigma2.sqrt();
    x.iter().map(|&v| v + sigma * standard_normal(rng)).collect()
}

/// y = h*x + n with the block-fading coefficient from the realization.
pub fn fade_and_noise(x: &[f64], real: &ChannelRealization, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sigma = real.sigma2.sqrt();
    x.iter()
        .map(|&v| real.h * v + if sigma > 0.0 { sigma * standard_normal(rng) } else { 0.0 })
        .collect()
}

/// Pure noise buffer (used when the noise must enter a computation graph as
/// a constant tensor).
pub fn noise_buffer(len: usize, sigma2: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sigma = sigma2.sqrt();
    (0..len)
        .map(|_| if sigma > 0.0 { sigma * standard_normal(rng) } else { 0.0 })
        .collect()
}
