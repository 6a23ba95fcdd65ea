//! End-to-end pipeline assembly: encoder -> sensitivity filter ->
//! quantizer -> channel -> SNR-conditioned decoder.
//!
//! Training uses the differentiable soft path: all T tokens flow through,
//! weighted by their sensitivity scores, with the channel entering the
//! graph as constant noise/fading tensors. Transmission uses the hard
//! path: top-K token selection, integer symbols, exact power
//! normalization, and zero-filling of dropped token slots at the receiver.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel::{awgn, ChannelKind, ChannelRealization};
use crate::config::Config;
use crate::decoder::{Decoder, DecoderError, DecoderIntermediates};
use crate::encoder::Encoder;
use crate::loss::{self, LossBreakdown, LossError, LossWeights};
use crate::nn::Params;
use crate::pointcloud::{knn_group, GeometryError, PatchGrouping, PointCloud};
use crate::quantizer::{
    power_denormalize, power_normalize_exact, NormStats, Quantizer, QuantizerError,
};
use crate::random::{rng_stream, standard_normal, stream};
use crate::stf::{budget, gather_tokens, scatter_tokens, select_topk_indices, PayloadBudget, Stf, StfError};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Quantizer(#[from] QuantizerError),
    #[error(transparent)]
    Stf(#[from] StfError),
    #[error("pipeline error: {0}")]
    Other(String),
}

/// Quantization mode of a forward pass: `Hard` rounds with the
/// straight-through backward rule (training); `Smooth` skips rounding so
/// the whole pipeline is exactly differentiable (gradient checks).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    Hard,
    Smooth,
}

/// One batch worth of channel randomness, drawn up front so a forward pass
/// is a deterministic function of the parameters.
pub struct ChannelDraw {
    pub kind: ChannelKind,
    pub snr_db: f64,
    pub estimate_offset_db: f64,
    /// Per-sample block-fading coefficients (1.0 under AWGN).
    pub h: Vec<f64>,
    /// Unit-variance noise seeds, scaled by sigma inside the forward pass.
    pub noise: Vec<f64>,
}

impl ChannelDraw {
    pub fn sample(
        kind: ChannelKind,
        snr_db: f64,
        estimate_offset_db: f64,
        batch: usize,
        elements_per_sample: usize,
        rng: &mut ChaCha8Rng,
    ) -> ChannelDraw {
        let realizations: Vec<ChannelRealization> = (0..batch)
            .map(|_| ChannelRealization::draw(kind, snr_db, estimate_offset_db, rng))
            .collect();
        let noise = (0..batch * elements_per_sample)
            .map(|_| standard_normal(rng))
            .collect();
        ChannelDraw {
            kind,
            snr_db,
            estimate_offset_db,
            h: realizations.iter().map(|r| r.h).collect(),
            noise,
        }
    }

    /// Transparent channel: no noise, unit gain.
    pub fn transparent(batch: usize, elements_per_sample: usize) -> ChannelDraw {
        ChannelDraw {
            kind: ChannelKind::Awgn,
            snr_db: f64::INFINITY,
            estimate_offset_db: 0.0,
            h: vec![1.0; batch],
            noise: vec![0.0; batch * elements_per_sample],
        }
    }

    pub fn receiver_snr_estimate(&self) -> f64 {
        self.snr_db + self.estimate_offset_db
    }

    pub fn sigma(&self) -> f64 {
        crate::channel::noise_variance(self.snr_db).sqrt()
    }
}

/// Products of one training forward pass.
pub struct TrainForward {
    pub scores: Tensor,
    pub z_quantized: Tensor,
    pub reconstruction: Tensor,
    pub breakdown: LossBreakdown,
}

/// Hard-path payload: what actually crosses the channel plus the
/// receiver-side records.
pub struct QuantizedPayload {
    /// Integer symbols, row-major [B, K, D].
    pub symbols: Vec<i32>,
    pub batch: usize,
    pub kept_per_sample: usize,
    pub dim: usize,
    /// Per-token standardization statistics (receiver record).
    pub norm_stats: NormStats,
    /// Per-sample power scales.
    pub power_scale: Vec<f64>,
    /// Kept token indices per sample (error-free side channel).
    pub kept_indices: Vec<Vec<usize>>,
}

/// Outcome of one hard-path transmission.
pub struct TransmitOutcome {
    pub reconstruction: PointCloud,
    pub payload: QuantizedPayload,
    pub budget: PayloadBudget,
    pub channel_h: f64,
    pub snr_estimate_db: f64,
}

pub struct Pipeline {
    pub config: Config,
    pub encoder: Encoder,
    pub stf: Stf,
    pub quantizer: Quantizer,
    pub decoder: Decoder,
}

impl Pipeline {
    /// Builds a pipeline with parameters initialized from the config seed.
    pub fn new(config: &Config) -> Result<Pipeline, PipelineError> {
        config
            .validate()
            .map_err(|e| PipelineError::Other(e.to_string()))?;
        let mut rng = rng_stream(config.seed, stream::MODEL_INIT);
        let encoder = Encoder::new(&mut rng, config.encoder_config());
        let stf = Stf::new(&mut rng, config.encoder.dim, config.stf.tau);
        let quantizer = Quantizer::new(config.quant.bits, config.quant.alpha_init);
        let decoder = Decoder::new(&mut rng, config.decoder_config())?;
        Ok(Pipeline {
            config: config.clone(),
            encoder,
            stf,
            quantizer,
            decoder,
        })
    }

    pub fn parameters(&self) -> Params {
        let mut out = Vec::new();
        self.encoder.collect("encoder", &mut out);
        self.stf.collect("stf", &mut out);
        self.quantizer.collect("quantizer", &mut out);
        self.decoder.collect("decoder", &mut out);
        out
    }

    pub fn grouping_for(&self, pc: &PointCloud) -> Result<PatchGrouping, GeometryError> {
        let t = self.config.encoder.tokens;
        let k = pc.len() / t;
        knn_group(pc, t, k.max(1))
    }

    /// Differentiable soft-path forward over a batch: tokenize, encode,
    /// sensitivity-weight, standardize, quantize, power-normalize, apply
    /// the drawn channel, decode, and assemble the four-term objective.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_train(
        &self,
        g: &Tape,
        relative_coords: &Tensor,
        reference: &Tensor,
        draw: &ChannelDraw,
        weights: LossWeights,
        tau: f64,
        mode: QuantMode,
        csi_equalize: bool,
    ) -> Result<TrainForward, PipelineError> {
        let (b, t, d) = (
            relative_coords.shape()[0],
            self.config.encoder.tokens,
            self.config.encoder.dim,
        );

        let tokens0 = self.encoder.tokenize(g, relative_coords);
        let z = self.encoder.encode(g, &tokens0);
        let scores = self.stf.score(g, &z);
        let z_prime = self.stf.filter_soft(g, &z, &scores);
        let (z_hat, _stats) = self.quantizer.normalize(g, &z_prime);
        let z_q = match mode {
            QuantMode::Hard => self.quantizer.quantize(g, &z_hat),
            QuantMode::Smooth => self.quantizer.quantize_smooth(g, &z_hat),
        };
        let (symbols, scale) = self.quantizer.power_normalize_graph(g, &z_q);

        // channel as constants: y = h * x + sigma * noise
        let h_t = Tensor::from_vec(&[b, 1, 1], draw.h.clone());
        let noise_t = Tensor::from_vec(&[b, t, d], draw.noise.clone());
        let sigma = draw.sigma();
        let mut received = g.add(&g.mul(&symbols, &h_t), &g.mul_scalar(&noise_t, sigma));
        if csi_equalize {
            received = g.div(&received, &h_t);
        }
        let y = self.quantizer.power_denormalize_graph(g, &received, &scale);

        let decoded = self.decoder.decode(g, &y, draw.receiver_snr_estimate());

        let cd = loss::chamfer(g, reference, &decoded.x_hat)?;
        let histogram = self.quantizer.symbol_histogram(g, &z_q)?;
        let sym = loss::symbol_usage_penalty(g, &histogram)?;
        let sparsity = loss::sparsity_penalty(g, &scores.values, tau);
        // diversity operates on the standardized tokens (the normalization
        // that defines the quantizer input), keeping the term unit-scaled
        let diversity = loss::diversity_penalty(g, &z_hat)?;
        let breakdown = loss::total(g, cd, sym, sparsity, diversity, weights)?;

        Ok(TrainForward {
            scores: scores.values,
            z_quantized: z_q,
            reconstruction: decoded.x_hat,
            breakdown,
        })
    }

    /// Hard transmission path for one cloud (batch of one): top-K
    /// selection, integer quantization, exact power normalization, channel,
    /// zero-filled scatter, SNR-conditioned decode.
    pub fn transmit(
        &self,
        pc: &PointCloud,
        k: usize,
        kind: ChannelKind,
        snr_db: f64,
        estimate_offset_db: f64,
        csi_equalize: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<TransmitOutcome, PipelineError> {
        self.quantizer.set_training(false);
        let result = self.transmit_inner(pc, k, kind, snr_db, estimate_offset_db, csi_equalize, rng);
        self.quantizer.set_training(true);
        result
    }

    #[allow(clippy::too_many_arguments)]
    fn transmit_inner(
        &self,
        pc: &PointCloud,
        k: usize,
        kind: ChannelKind,
        snr_db: f64,
        estimate_offset_db: f64,
        csi_equalize: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<TransmitOutcome, PipelineError> {
        let t = self.config.encoder.tokens;
        let d = self.config.encoder.dim;
        let n = self.config.data.points;
        if pc.len() != n {
            return Err(PipelineError::Other(format!(
                "transmit: cloud has {} points but the pipeline is configured for {n}",
                pc.len()
            )));
        }

        let g = Tape::no_grad();
        let grouping = self.grouping_for(pc)?;
        let rel = Encoder::batch_relative_coords(&[&grouping]);
        let z = self.encoder.encode(&g, &self.encoder.tokenize(&g, &rel));
        let scores = self.stf.score(&g, &z);
        let z_prime = self.stf.filter_soft(&g, &z, &scores);

        let kept = select_topk_indices(&scores, k)?;
        let kept_tokens = gather_tokens(&z_prime, &kept); // [1,K,D]
        let (z_hat, norm_stats) = self.quantizer.normalize(&g, &kept_tokens);
        let z_q_t = self.quantizer.quantize(&g, &z_hat);
        let z_q: Vec<f64> = z_q_t.to_vec();

        // exact power normalization per sample (batch of one here)
        let (x, scale) = power_normalize_exact(&z_q);
        let realization = ChannelRealization::draw(kind, snr_db, estimate_offset_db, rng);
        let faded: Vec<f64> = x.iter().map(|&v| realization.h * v).collect();
        let mut received = awgn(&faded, realization.sigma2, rng);
        if csi_equalize {
            for v in &mut received {
                *v /= realization.h;
            }
        }
        let y = power_denormalize(&received, scale);

        let y_packed = Tensor::from_vec(&[1, k, d], y);
        let y_tokens = scatter_tokens(&y_packed, &kept, t);
        let decoded: DecoderIntermediates =
            self.decoder.decode(&g, &y_tokens, realization.receiver_snr_estimate());

        let points: Vec<[f64; 3]> = decoded
            .x_hat
            .to_vec()
            .chunks(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();

        let payload = QuantizedPayload {
            symbols: z_q.iter().map(|&v| v as i32).collect(),
            batch: 1,
            kept_per_sample: k,
            dim: d,
            norm_stats,
            power_scale: vec![scale],
            kept_indices: kept,
        };
        Ok(TransmitOutcome {
            reconstruction: PointCloud::new(points),
            payload,
            budget: budget(k, d, n, self.config.payload_bits()),
            channel_h: realization.h,
            snr_estimate_db: realization.receiver_snr_estimate(),
        })
    }

    /// No-channel reference: the same hard path with a transparent channel.
    pub fn autoencode(&self, pc: &PointCloud, k: usize) -> Result<TransmitOutcome, PipelineError> {
        let mut rng = rng_stream(0, stream::EVAL_CHANNEL);
        self.transmit(
            pc,
            k,
            ChannelKind::Awgn,
            f64::INFINITY,
            0.0,
            false,
            &mut rng,
        )
    }
}
