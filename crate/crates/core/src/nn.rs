//! Neural building blocks shared by the encoder, token filter, and decoder:
//! linear layers, layer norm with learned affine, multi-head self-attention,
//! and the pre-norm transformer block.
//!
//! Initialization: linear weights and biases ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in));
//! positional/code tables ~ N(0, 0.02) where noted at the call site.

use rand_chacha::ChaCha8Rng;

use crate::random::uniform_symmetric;
use crate::tensor::{Tape, Tensor};

/// Named parameter list, used by the optimizer and checkpointing.
pub type Params = Vec<(String, Tensor)>;

pub fn init_uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| uniform_symmetric(rng, bound)).collect();
    Tensor::param(shape, data)
}

pub fn init_normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| crate::random::standard_normal(rng) * std).collect();
    Tensor::param(shape, data)
}

/// Affine map y = x·W + b with W: [fan_in, fan_out], b: [fan_out].
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Linear {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Linear {
            weight: init_uniform(rng, &[fan_in, fan_out], bound),
            bias: init_uniform(rng, &[fan_out], bound),
        }
    }

    /// Zero-initialized variant; used where a block should start as an
    /// exact identity/no-op contribution.
    pub fn zeros(fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            weight: Tensor::param(&[fan_in, fan_out], vec![0.0; fan_in * fan_out]),
            bias: Tensor::param(&[fan_out], vec![0.0; fan_out]),
        }
    }

    pub fn forward(&self, g: &Tape, x: &Tensor) -> Tensor {
        g.add(&g.matmul(x, &self.weight), &self.bias)
    }

    pub fn collect(&self, prefix: &str, out: &mut Params) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Layer norm over the last axis with learned gamma/beta.
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> LayerNorm {
        LayerNorm {
            gamma: Tensor::param(&[dim], vec![1.0; dim]),
            beta: Tensor::param(&[dim], vec![0.0; dim]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, g: &Tape, x: &Tensor) -> Tensor {
        g.layernorm(x, &self.gamma, &self.beta, self.eps)
    }

    pub fn collect(&self, prefix: &str, out: &mut Params) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}

/// Multi-head self-attention over [B, T, D] with H heads.
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, heads: usize) -> MultiHeadAttention {
        assert!(heads >= 1 && dim % heads == 0, "attention: dim {} not divisible by heads {}", dim, heads);
        MultiHeadAttention {
            wq: Linear::new(rng, dim, dim),
            wk: Linear::new(rng, dim, dim),
            wv: Linear::new(rng, dim, dim),
            wo: Linear::new(rng, dim, dim),
            heads,
        }
    }

    pub fn forward(&self, g: &Tape, x: &Tensor) -> Tensor {
        let (b, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let h = self.heads;
        let dh = d / h;
        let split = |y: &Tensor| -> Tensor {
            // [B,T,D] -> [B,T,H,dh] -> [B,H,T,dh]
            let y = g.reshape(y, &[b, t, h, dh]);
            g.permute(&y, &[0, 2, 1, 3])
        };
        let q = split(&self.wq.forward(g, x));
        let k = split(&self.wk.forward(g, x));
        let v = split(&self.wv.forward(g, x));
        let attn = g.softmax_attention(&q, &k, &v);
        // [B,H,T,dh] -> [B,T,H,dh] -> [B,T,D]
        let merged = g.reshape(&g.permute(&attn, &[0, 2, 1, 3]), &[b, t, d]);
        self.wo.forward(g, &merged)
    }

    pub fn collect(&self, prefix: &str, out: &mut Params) {
        self.wq.collect(&format!("{prefix}.wq"), out);
        self.wk.collect(&format!("{prefix}.wk"), out);
        self.wv.collect(&format!("{prefix}.wv"), out);
        self.wo.collect(&format!("{prefix}.wo"), out);
    }
}

/// Pre-norm transformer block:
/// z' = z + MHSA(LN(z)); out = z' + FFN(LN(z')) with a two-layer ReLU FFN.
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl TransformerBlock {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, heads: usize, ffn_hidden: usize) -> TransformerBlock {
        TransformerBlock {
            ln1: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(rng, dim, heads),
            ln2: LayerNorm::new(dim),
            ffn_in: Linear::new(rng, dim, ffn_hidden),
            ffn_out: Linear::new(rng, ffn_hidden, dim),
        }
    }

    pub fn forward(&self, g: &Tape, x: &Tensor) -> Tensor {
        let attended = g.add(x, &self.attn.forward(g, &self.ln1.forward(g, x)));
        let hidden = g.relu(&self.ffn_in.forward(g, &self.ln2.forward(g, &attended)));
        g.add(&attended, &self.ffn_out.forward(g, &hidden))
    }

    pub fn collect(&self, prefix: &str, out: &mut Params) {
        self.ln1.collect(&format!("{prefix}.ln1"), out);
        self.attn.collect(&format!("{prefix}.attn"), out);
        self.ln2.collect(&format!("{prefix}.ln2"), out);
        self.ffn_in.collect(&format!("{prefix}.ffn_in"), out);
        self.ffn_out.collect(&format!("{prefix}.ffn_out"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn linear_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lin = Linear::new(&mut rng, 4, 6);
        let g = Tape::new();
        let x = Tensor::from_vec(&[2, 3, 4], vec![0.1; 24]);
        let y = lin.forward(&g, &x);
        assert_eq!(y.shape(), &[2, 3, 6]);
    }

    #[test]
    fn block_with_zeroed_outputs_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut block = TransformerBlock::new(&mut rng, 8, 4, 16);
        block.attn.wo = Linear::zeros(8, 8);
        block.ffn_out = Linear::zeros(16, 8);
        let g = Tape::new();
        let x = Tensor::from_vec(&[1, 3, 8], (0..24).map(|i| i as f64 * 0.05).collect());
        let y = block.forward(&g, &x);
        for (a, b) in x.to_vec().iter().zip(y.to_vec().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let w1 = Linear::new(&mut ChaCha8Rng::seed_from_u64(11), 5, 5);
        let w2 = Linear::new(&mut ChaCha8Rng::seed_from_u64(11), 5, 5);
        assert_eq!(w1.weight.to_vec(), w2.weight.to_vec());
    }
}
