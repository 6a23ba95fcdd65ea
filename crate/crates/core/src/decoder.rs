//! SNR-conditioned reconstruction decoder.
//!
//! Stages: (1) a two-layer SNR embedding broadcast-added to the received
//! tokens, (2) a linear coarse coordinate estimate per token, (3) one
//! transformer block refining token features conditioned on the coarse
//! coordinates (added through a learned 3->D embedding), (4) attention-
//! guided upsampling emitting r = N/T child points per token from learned
//! per-child seed codes, and (5) a residual MLP head correcting each point.
//! Every stage past the coarse estimate can be ablated independently.

use rand_chacha::ChaCha8Rng;

use thiserror::Error;

use crate::nn::{init_normal, Linear, Params, TransformerBlock};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("parameter error: {0}")]
    Parameter(String),
}

/// Ablation switches for the reconstruction stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DecoderAblation {
    pub use_transformer: bool,
    pub use_upsample: bool,
    pub use_residual_head: bool,
}

impl DecoderAblation {
    pub fn full() -> Self {
        DecoderAblation {
            use_transformer: true,
            use_upsample: true,
            use_residual_head: true,
        }
    }

    /// All stages off: the output is the coarse estimate replicated to N.
    pub fn coarse_only() -> Self {
        DecoderAblation {
            use_transformer: false,
            use_upsample: false,
            use_residual_head: false,
        }
    }
}

impl Default for DecoderAblation {
    fn default() -> Self {
        Self::full()
    }
}

/// Dimension of the learned per-child seed codes in the upsampler.
const SEED_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecoderConfig {
    /// Token feature width D.
    pub dim: usize,
    /// Token count T.
    pub tokens: usize,
    /// Output point count N; must be divisible by T.
    pub points: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    /// Hidden width of the SNR embedding MLP.
    pub snr_hidden: usize,
    /// Hidden width of the residual correction head.
    pub residual_hidden: usize,
}

/// Two-layer SNR embedding: scalar dB estimate -> hidden -> D, broadcast
/// over batch and token axes.
pub struct SnrEmbedding {
    pub fc_in: Linear,
    pub fc_out: Linear,
}

impl SnrEmbedding {
    pub fn new(rng: &mut ChaCha8Rng, hidden: usize, dim: usize) -> SnrEmbedding {
        SnrEmbedding {
            fc_in: Linear::new(rng, 1, hidden),
            fc_out: Linear::new(rng, hidden, dim),
        }
    }

    /// f_snr of shape [1,1,D] for a scalar dB estimate.
    pub fn forward(&self, g: &Tape, snr_db_estimate: f64) -> Tensor {
        let snr = Tensor::from_vec(&[1, 1], vec![snr_db_estimate]);
        let h = g.relu(&self.fc_in.forward(g, &snr));
        let f = self.fc_out.forward(g, &h); // [1, D]
        let d = f.shape()[1];
        g.reshape(&f, &[1, 1, d])
    }

    pub fn collect(&self, prefix: &str, out: &mut Params) {
        self.fc_in.collect(&format!("{prefix}.fc_in"), out);
        self.fc_out.collect(&format!("{prefix}.fc_out"), out);
    }
}

/// Intermediate products of one decode pass.
pub struct DecoderIntermediates {
    /// Coarse per-token coordinates, [B,T,3].
    pub x_initial: Tensor,
    /// Refined token features, [B,T,D].
    pub f_refined: Tensor,
    /// Upsampled coordinates, [B,N,3].
    pub x_upsampled: Tensor,
    /// Per-point features, [B,N,D].
    pub f_out: Tensor,
    /// Final reconstruction, [B,N,3].
    pub x_hat: Tensor,
}

pub struct Decoder {
    pub cfg: DecoderConfig,
    pub snr_embed: SnrEmbedding,
    pub coarse: Linear,
    pub coord_embed: Linear,
    pub refine_block: TransformerBlock,
    /// Learned seed codes, one per child slot: [r, SEED_DIM].
    pub seed_codes: Tensor,
    pub offset_head: Linear,
    pub feature_head: Linear,
    pub residual_in: Linear,
    pub residual_out: Linear,
    pub ablation: DecoderAblation,
}

impl Decoder {
    pub fn new(rng: &mut ChaCha8Rng, cfg: DecoderConfig) -> Result<Decoder, DecoderError> {
        if cfg.points == 0 || cfg.tokens == 0 || cfg.points % cfg.tokens != 0 {
            return Err(DecoderError::Parameter(format!(
                "output point count {} must be a positive multiple of token count {}",
                cfg.points, cfg.tokens
            )));
        }
        let r = cfg.points / cfg.tokens;
        Ok(Decoder {
            snr_embed: SnrEmbedding::new(rng, cfg.snr_hidden, cfg.dim),
            coarse: Linear::new(rng, cfg.dim, 3),
            coord_embed: Linear::new(rng, 3, cfg.dim),
            refine_block: TransformerBlock::new(rng, cfg.dim, cfg.heads, cfg.ffn_hidden),
            seed_codes: init_normal(rng, &[r, SEED_DIM], 0.02),
            offset_head: Linear::new(rng, cfg.dim + SEED_DIM, 3),
            feature_head: Linear::new(rng, cfg.dim + SEED_DIM, cfg.dim),
            residual_in: Linear::new(rng, cfg.dim, cfg.residual_hidden),
            residual_out: Linear::new(rng, cfg.residual_hidden, 3),
            ablation: DecoderAblation::full(),
            cfg,
        })
    }

    pub fn fanout(&self) -> usize {
        self.cfg.points / self.cfg.tokens
    }

    /// Y' = Y + f_snr (broadcast over batch and token axes). Estimates are
    /// clamped to +-50 dB so the transparent-channel sentinel (+inf dB)
    /// stays finite inside the embedding.
    pub fn inject_snr(&self, g: &Tape, y: &Tensor, snr_db_estimate: f64) -> Tensor {
        let f = self.snr_embed.forward(g, snr_db_estimate.clamp(-50.0, 50.0));
        g.add(y, &f)
    }

    /// Coarse coordinate estimate: one linear map D -> 3 per token.
    pub fn coarse_coords(&self, g: &Tape, y: &Tensor) -> Tensor {
        self.coarse.forward(g, y)
    }

    /// Token refinement conditioned on coarse coordinates. Ablated, this is
    /// the identity on Y'.
    pub fn refine(&self, g: &Tape, y: &Tensor, x_initial: &Tensor) -> Tensor {
        if !self.ablation.use_transformer {
            return y.clone();
        }
        let conditioned = g.add(y, &self.coord_embed.forward(g, x_initial));
        self.refine_block.forward(g, &conditioned)
    }

    /// Attention-guided upsampling: each token emits r children whose
    /// offsets and features come from [refined feature, seed code] heads;
    /// child features then attend over all tokens for global context.
    /// Ablated, coordinates and features are replicated r times.
    pub fn upsample(&self, g: &Tape, x_initial: &Tensor, f_refined: &Tensor) -> (Tensor, Tensor) {
        let (b, t, d) = (
            f_refined.shape()[0],
            f_refined.shape()[1],
            f_refined.shape()[2],
        );
        let r = self.fanout();
        let n = t * r;

        // replicate parents over child slots: [B,T,D] -> [B,T,r,D]
        let feat4 = g.reshape(f_refined, &[b, t, 1, d]);
        let feat4 = g.broadcast_to(&feat4, &[b, t, r, d]);
        let coords4 = g.reshape(x_initial, &[b, t, 1, 3]);
        let coords4 = g.broadcast_to(&coords4, &[b, t, r, 3]);
        let replicated_coords = g.reshape(&coords4, &[b, n, 3]);

        if !self.ablation.use_upsample {
            let replicated_feats = g.reshape(&feat4, &[b, n, d]);
            return (replicated_coords, replicated_feats);
        }

        let seeds = g.reshape(&self.seed_codes, &[1, 1, r, SEED_DIM]);
        let seeds = g.broadcast_to(&seeds, &[b, t, r, SEED_DIM]);
        let child_in = g.concat_last(&feat4, &seeds); // [B,T,r,D+SEED_DIM]
        let child_in = g.reshape(&child_in, &[b, n, d + SEED_DIM]);

        let offsets = self.offset_head.forward(g, &child_in); // [B,N,3]
        let x_up = g.add(&replicated_coords, &offsets);

        let child_feats = self.feature_head.forward(g, &child_in); // [B,N,D]
        // cross attention: child features query the refined tokens
        let context = g.softmax_attention(&child_feats, f_refined, f_refined);
        let f_out = g.add(&child_feats, &context);
        (x_up, f_out)
    }

    /// Residual correction head; ablated, the upsampled coordinates pass
    /// through unchanged.
    pub fn residual_head(&self, g: &Tape, x_up: &Tensor, f_out: &Tensor) -> Tensor {
        if !self.ablation.use_residual_head {
            return x_up.clone();
        }
        let h = g.relu(&self.residual_in.forward(g, f_out));
        let correction = self.residual_out.forward(g, &h);
        g.add(x_up, &correction)
    }

    /// Full decode: Y (zero-filled at dropped token positions) plus the
    /// receiver-side SNR estimate to an N-point reconstruction.
    pub fn decode(&self, g: &Tape, y: &Tensor, snr_db_estimate: f64) -> DecoderIntermediates {
        assert_eq!(
            y.shape()[1],
            self.cfg.tokens,
            "decode: expected {} tokens, got {:?}",
            self.cfg.tokens,
            y.shape()
        );
        let y_prime = self.inject_snr(g, y, snr_db_estimate);
        let x_initial = self.coarse_coords(g, &y_prime);
        let f_refined = self.refine(g, &y_prime, &x_initial);
        let (x_upsampled, f_out) = self.upsample(g, &x_initial, &f_refined);
        let x_hat = self.residual_head(g, &x_upsampled, &f_out);
        DecoderIntermediates {
            x_initial,
            f_refined,
            x_upsampled,
            f_out,
            x_hat,
        }
    }

    pub fn collect(&self, prefix: &str, out: &mut Params) {
        self.snr_embed.collect(&format!("{prefix}.snr_embed"), out);
        self.coarse.collect(&format!("{prefix}.coarse"), out);
        self.coord_embed.collect(&format!("{prefix}.coord_embed"), out);
        self.refine_block.collect(&format!("{prefix}.refine"), out);
        out.push((format!("{prefix}.seed_codes"), self.seed_codes.clone()));
        self.offset_head.collect(&format!("{prefix}.offset_head"), out);
        self.feature_head.collect(&format!("{prefix}.feature_head"), out);
        self.residual_in.collect(&format!("{prefix}.residual_in"), out);
        self.residual_out.collect(&format!("{prefix}.residual_out"), out);
    }
}
