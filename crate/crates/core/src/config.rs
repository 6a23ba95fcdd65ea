//! Run configuration: a flat TOML file of sections mirroring the pipeline
//! stages. Every field has a default, so a config file only needs the keys
//! it overrides; CLI flags override file values in turn.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelKind;
use crate::decoder::DecoderConfig;
use crate::encoder::{EncoderConfig, Pooling};
use crate::loss::LossWeights;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    /// Transformer layer count L.
    pub depth: usize,
    /// Token feature width D.
    pub dim: usize,
    /// Attention heads H (must divide dim).
    pub heads: usize,
    /// Token count T.
    pub tokens: usize,
    pub ffn_hidden: usize,
    /// Patch pooling: "mean" or "max".
    pub pooling: String,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            depth: 4,
            dim: 256,
            heads: 8,
            tokens: 64,
            ffn_hidden: 512,
            pooling: "mean".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StfSection {
    /// Sparsity threshold tau.
    pub tau: f64,
}

impl Default for StfSection {
    fn default() -> Self {
        StfSection { tau: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PayloadSection {
    /// Transmitted token budget K; defaults to the full token count.
    pub k: Option<usize>,
    /// Bits per symbol b in the bpp accounting; defaults to quant.bits.
    pub bits_per_symbol: Option<u32>,
}

impl Default for PayloadSection {
    fn default() -> Self {
        PayloadSection {
            k: None,
            bits_per_symbol: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantSection {
    pub bits: u32,
    /// Initial value of the positive scale alpha.
    pub alpha_init: f64,
}

impl Default for QuantSection {
    fn default() -> Self {
        QuantSection {
            bits: 8,
            alpha_init: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub lambda_sym: f64,
    pub lambda_sparsity: f64,
    pub lambda_diversity: f64,
    /// Sparsity threshold used by the penalty (normally equals stf.tau).
    pub tau: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            lambda_sym: 0.5,
            lambda_sparsity: 1.0,
            lambda_diversity: 1.0,
            tau: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderSection {
    pub snr_hidden: usize,
    pub residual_hidden: usize,
}

impl Default for DecoderSection {
    fn default() -> Self {
        DecoderSection {
            snr_hidden: 64,
            residual_hidden: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Early-stopping patience in epochs on validation chamfer.
    pub patience: usize,
    /// Training SNR is sampled uniformly from [snr_low_db, snr_high_db].
    pub snr_low_db: f64,
    pub snr_high_db: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            max_epochs: 100,
            patience: 10,
            snr_low_db: -10.0,
            snr_high_db: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// "synthetic" (generated shapes) or "ply-dir" (every .ply in `path`).
    pub kind: String,
    /// Cloud count for the synthetic generator.
    pub count: usize,
    /// Points per cloud N (inputs are FPS-resampled to this).
    pub points: usize,
    pub path: Option<String>,
    pub val_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            kind: "synthetic".into(),
            count: 200,
            points: 256,
            path: None,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    /// "awgn" or "rayleigh".
    pub kind: String,
    pub snr_db: f64,
    /// Offset added to the receiver-side SNR estimate.
    pub snr_offset_db: f64,
    /// Divide received symbols by the fading coefficient (Rayleigh only).
    pub csi_equalize: bool,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            kind: "awgn".into(),
            snr_db: 10.0,
            snr_offset_db: 0.0,
            csi_equalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub encoder: EncoderSection,
    pub stf: StfSection,
    pub payload: PayloadSection,
    pub quant: QuantSection,
    pub loss: LossSection,
    pub decoder: DecoderSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub channel: ChannelSection,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Config::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Config, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical TOML rendering of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = |msg: String| Err(ConfigError::Invalid(msg));
        if self.encoder.dim == 0 || self.encoder.dim % self.encoder.heads != 0 {
            return e(format!(
                "encoder.dim {} must be a positive multiple of encoder.heads {}",
                self.encoder.dim, self.encoder.heads
            ));
        }
        if !matches!(self.encoder.pooling.as_str(), "mean" | "max") {
            return e(format!("encoder.pooling must be mean|max, got {}", self.encoder.pooling));
        }
        if self.encoder.tokens == 0 || self.data.points % self.encoder.tokens != 0 {
            return e(format!(
                "data.points {} must be a positive multiple of encoder.tokens {}",
                self.data.points, self.encoder.tokens
            ));
        }
        if let Some(k) = self.payload.k {
            if k == 0 || k > self.encoder.tokens {
                return e(format!(
                    "payload.k {} out of range 1..={}",
                    k, self.encoder.tokens
                ));
            }
        }
        if !(2..=16).contains(&self.quant.bits) {
            return e(format!("quant.bits {} out of range 2..=16", self.quant.bits));
        }
        if self.quant.alpha_init <= 0.0 {
            return e("quant.alpha_init must be positive".into());
        }
        if self.train.batch_size == 0 || self.train.learning_rate < 0.0 || self.train.weight_decay < 0.0 {
            return e("train: batch_size must be positive; rates nonnegative".into());
        }
        if self.train.snr_low_db > self.train.snr_high_db {
            return e("train: snr_low_db must not exceed snr_high_db".into());
        }
        if self.loss.lambda_sym < 0.0 || self.loss.lambda_sparsity < 0.0 || self.loss.lambda_diversity < 0.0 {
            return e("loss: lambda weights must be nonnegative".into());
        }
        if !matches!(self.data.kind.as_str(), "synthetic" | "ply-dir") {
            return e(format!("data.kind must be synthetic|ply-dir, got {}", self.data.kind));
        }
        if self.data.kind == "ply-dir" && self.data.path.is_none() {
            return e("data.kind=ply-dir requires data.path".into());
        }
        if !(0.0..1.0).contains(&self.data.val_fraction) {
            return e("data.val_fraction must be in [0,1)".into());
        }
        if !matches!(self.channel.kind.as_str(), "awgn" | "rayleigh") {
            return e(format!("channel.kind must be awgn|rayleigh, got {}", self.channel.kind));
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            dim: self.encoder.dim,
            depth: self.encoder.depth,
            heads: self.encoder.heads,
            ffn_hidden: self.encoder.ffn_hidden,
            tokens: self.encoder.tokens,
            pooling: if self.encoder.pooling == "max" {
                Pooling::Max
            } else {
                Pooling::Mean
            },
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            dim: self.encoder.dim,
            tokens: self.encoder.tokens,
            points: self.data.points,
            heads: self.encoder.heads,
            ffn_hidden: self.encoder.ffn_hidden,
            snr_hidden: self.decoder.snr_hidden,
            residual_hidden: self.decoder.residual_hidden,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_sym: self.loss.lambda_sym,
            lambda_sparsity: self.loss.lambda_sparsity,
            lambda_diversity: self.loss.lambda_diversity,
        }
    }

    pub fn channel_kind(&self) -> ChannelKind {
        if self.channel.kind == "rayleigh" {
            ChannelKind::Rayleigh
        } else {
            ChannelKind::Awgn
        }
    }

    /// Effective transmitted token budget.
    pub fn payload_k(&self) -> usize {
        self.payload.k.unwrap_or(self.encoder.tokens)
    }

    /// Effective bits-per-symbol for the bpp accounting.
    pub fn payload_bits(&self) -> u32 {
        self.payload.bits_per_symbol.unwrap_or(self.quant.bits)
    }

    /// FNV-1a digest of the canonical serialized form, for manifests and
    /// checkpoint compatibility checks.
    pub fn digest(&self) -> u64 {
        let canon = toml::to_string(self).expect("config serializes");
        fnv1a(canon.as_bytes())
    }

    pub fn digest_hex(&self) -> String {
        format!("{:016x}", self.digest())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
