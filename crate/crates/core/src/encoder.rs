//! Patch tokenizer and L-layer transformer encoder producing the latent
//! token sequence.
//!
//! Tokenization embeds each patch's center-relative coordinates with a
//! shared 3->D linear map, pools over the patch, and adds a learned
//! positional table shared across samples. The encoder stack is pre-norm
//! MHSA + two-layer ReLU FFN blocks with residual connections.

use rand_chacha::ChaCha8Rng;

use crate::nn::{init_normal, Linear, Params, TransformerBlock};
use crate::pointcloud::PatchGrouping;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Pooling {
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    /// Token feature width D.
    pub dim: usize,
    /// Transformer layer count L.
    pub depth: usize,
    /// Attention head count H; must divide `dim`.
    pub heads: usize,
    /// FFN hidden width.
    pub ffn_hidden: usize,
    /// Token count T.
    pub tokens: usize,
    pub pooling: Pooling,
}

impl EncoderConfig {
    pub fn validate(&self) {
        assert!(self.dim >= 1 && self.depth < 64 && self.heads >= 1 && self.tokens >= 1);
        assert!(
            self.dim % self.heads == 0,
            "encoder: dim {} not divisible by heads {}",
            self.dim,
            self.heads
        );
    }
}

pub struct Encoder {
    pub cfg: EncoderConfig,
    pub patch_embed: Linear,
    /// Learned positional table, shape [1, T, D], shared across samples.
    pub positional: Tensor,
    pub blocks: Vec<TransformerBlock>,
}

impl Encoder {
    pub fn new(rng: &mut ChaCha8Rng, cfg: EncoderConfig) -> Encoder {
        cfg.validate();
        let patch_embed = Linear::new(rng, 3, cfg.dim);
        let positional = init_normal(rng, &[1, cfg.tokens, cfg.dim], 0.02);
        let blocks = (0..cfg.depth)
            .map(|_| TransformerBlock::new(rng, cfg.dim, cfg.heads, cfg.ffn_hidden))
            .collect();
        Encoder {
            cfg,
            patch_embed,
            positional,
            blocks,
        }
    }

    /// Builds the constant [B, T, k, 3] relative-coordinate tensor for a
    /// batch of groupings.
    pub fn batch_relative_coords(groupings: &[&PatchGrouping]) -> Tensor {
        assert!(!groupings.is_empty());
        let t = groupings[0].token_count();
        let k = groupings[0].patch_size;
        let mut data = Vec::with_capacity(groupings.len() * t * k * 3);
        for gr in groupings {
            assert_eq!(gr.token_count(), t, "tokenize: inconsistent patch counts in batch");
            assert_eq!(gr.patch_size, k, "tokenize: inconsistent patch sizes in batch");
            data.extend_from_slice(&gr.relative_coords);
        }
        Tensor::from_vec(&[groupings.len(), t, k, 3], data)
    }

    /// Patch embedding: per-point 3->D linear map on relative coordinates,
    /// pooled per patch, plus the positional table.
    pub fn tokenize(&self, g: &Tape, relative: &Tensor) -> Tensor {
        assert_eq!(relative.rank(), 4, "tokenize: expected [B,T,k,3] input");
        assert_eq!(
            relative.shape()[1],
            self.cfg.tokens,
            "tokenize: grouping has {} patches but encoder expects {}",
            relative.shape()[1],
            self.cfg.tokens
        );
        assert_eq!(relative.shape()[3], 3, "tokenize: coordinates must be 3D");
        let per_point = self.patch_embed.forward(g, relative); // [B,T,k,D]
        let pooled = match self.cfg.pooling {
            Pooling::Mean => g.mean_axis(&per_point, 2, false),
            Pooling::Max => g.max_axis(&per_point, 2, false),
        };
        g.add(&pooled, &self.positional)
    }

    /// Runs the L-block transformer stack; shape [B,T,D] is preserved.
    pub fn encode(&self, g: &Tape, tokens: &Tensor) -> Tensor {
        let mut z = tokens.clone();
        for block in &self.blocks {
            z = block.forward(g, &z);
        }
        z
    }

    pub fn collect(&self, prefix: &str, out: &mut Params) {
        self.patch_embed.collect(&format!("{prefix}.patch_embed"), out);
        out.push((format!("{prefix}.positional"), self.positional.clone()));
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&format!("{prefix}.block{i}"), out);
        }
    }
}
