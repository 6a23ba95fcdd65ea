//! Sensitivity-based token filtering: per-token sensitivity scores in
//! [0, 1], soft weighting with a residual refinement MLP (training path),
//! hard top-K selection (transmission path), and the exact payload budget
//! arithmetic CBR = K*D/(3N), R_bpp = K*D*b/N.
//!
//! Dropped tokens are zero-filled at the receiver at their known positions;
//! the kept-index side channel is assumed error-free and is not counted in
//! the CBR (which covers the K*D transmitted elements only).

use rand_chacha::ChaCha8Rng;

use thiserror::Error;

use crate::nn::{LayerNorm, Linear, Params};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Error)]
pub enum StfError {
    #[error("parameter error: {0}")]
    Parameter(String),
}

/// Scoring head (LayerNorm -> Linear D->D -> ReLU -> Linear D->1 -> sigmoid)
/// plus the refinement MLP applied after soft weighting. The refinement's
/// output layer starts at zero, so refinement is an exact identity at
/// initialization (the residual skip carries the weighted tokens through).
pub struct Stf {
    pub score_norm: LayerNorm,
    pub score_hidden: Linear,
    pub score_out: Linear,
    pub refine_norm: LayerNorm,
    pub refine_hidden: Linear,
    pub refine_out: Linear,
    /// Sparsity threshold tau recorded with the scores.
    pub tau: f64,
}

/// Token-wise sensitivity scores, shape [B, T, 1], values in [0, 1].
pub struct SensitivityScores {
    pub values: Tensor,
    pub tau: f64,
}

impl Stf {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, tau: f64) -> Stf {
        Stf {
            score_norm: LayerNorm::new(dim),
            score_hidden: Linear::new(rng, dim, dim),
            score_out: Linear::new(rng, dim, 1),
            refine_norm: LayerNorm::new(dim),
            refine_hidden: Linear::new(rng, dim, dim),
            refine_out: Linear::zeros(dim, dim),
            tau,
        }
    }

    /// Sensitivity scores S in [0,1], shape [B,T,1]; no cross-token mixing.
    pub fn score(&self, g: &Tape, z: &Tensor) -> SensitivityScores {
        let h = g.relu(&self.score_hidden.forward(g, &self.score_norm.forward(g, z)));
        let logits = self.score_out.forward(g, &h);
        SensitivityScores {
            values: g.sigmoid(&logits),
            tau: self.tau,
        }
    }

    /// Soft filtering: weighted tokens Z ⊙ S refined by the residual MLP.
    pub fn filter_soft(&self, g: &Tape, z: &Tensor, scores: &SensitivityScores) -> Tensor {
        let weighted = g.mul(z, &scores.values);
        let h = g.relu(&self.refine_hidden.forward(g, &self.refine_norm.forward(g, &weighted)));
        g.add(&weighted, &self.refine_out.forward(g, &h))
    }

    pub fn collect(&self, prefix: &str, out: &mut Params) {
        self.score_norm.collect(&format!("{prefix}.score_norm"), out);
        self.score_hidden.collect(&format!("{prefix}.score_hidden"), out);
        self.score_out.collect(&format!("{prefix}.score_out"), out);
        self.refine_norm.collect(&format!("{prefix}.refine_norm"), out);
        self.refine_hidden.collect(&format!("{prefix}.refine_hidden"), out);
        self.refine_out.collect(&format!("{prefix}.refine_out"), out);
    }
}

/// Per-sample indices of the K largest scores (ties to the lower index),
/// returned in ascending index order.
pub fn select_topk_indices(scores: &SensitivityScores, k: usize) -> Result<Vec<Vec<usize>>, StfError> {
    let shape = scores.values.shape();
    let (b, t) = (shape[0], shape[1]);
    if k < 1 || k > t {
        return Err(StfError::Parameter(format!(
            "top-k: K={} out of range 1..={}",
            k, t
        )));
    }
    let data = scores.values.data();
    let mut out = Vec::with_capacity(b);
    for s in 0..b {
        let row = &data[s * t..(s + 1) * t];
        let mut order: Vec<usize> = (0..t).collect();
        order.sort_by(|&i, &j| row[j].partial_cmp(&row[i]).unwrap().then(i.cmp(&j)));
        let mut kept: Vec<usize> = order.into_iter().take(k).collect();
        kept.sort_unstable();
        out.push(kept);
    }
    Ok(out)
}

/// Gathers kept tokens into a [B, K, D] tensor (transmission path; not
/// recorded on the tape).
pub fn gather_tokens(z: &Tensor, kept: &[Vec<usize>]) -> Tensor {
    let shape = z.shape();
    let (b, t, d) = (shape[0], shape[1], shape[2]);
    assert_eq!(kept.len(), b);
    let k = kept[0].len();
    let data = z.data();
    let mut out = Vec::with_capacity(b * k * d);
    for (s, rows) in kept.iter().enumerate() {
        assert_eq!(rows.len(), k);
        for &r in rows {
            assert!(r < t);
            out.extend_from_slice(&data[(s * t + r) * d..(s * t + r + 1) * d]);
        }
    }
    drop(data);
    Tensor::from_vec(&[b, k, d], out)
}

/// Scatters [B, K, D] values back into a zero-filled [B, T, D] layout at the
/// kept positions (receiver side).
pub fn scatter_tokens(y: &Tensor, kept: &[Vec<usize>], t: usize) -> Tensor {
    let shape = y.shape();
    let (b, k, d) = (shape[0], shape[1], shape[2]);
    assert_eq!(kept.len(), b);
    let data = y.data();
    let mut out = vec![0.0; b * t * d];
    for (s, rows) in kept.iter().enumerate() {
        assert_eq!(rows.len(), k);
        for (j, &r) in rows.iter().enumerate() {
            out[(s * t + r) * d..(s * t + r + 1) * d]
                .copy_from_slice(&data[(s * k + j) * d..(s * k + j + 1) * d]);
        }
    }
    drop(data);
    Tensor::from_vec(&[b, t, d], out)
}

/// Exact unsigned rational, kept reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    pub num: u64,
    pub den: u64,
}

impl Rational {
    pub fn new(num: u64, den: u64) -> Rational {
        assert!(den != 0, "rational: zero denominator");
        let g = gcd(num.max(1), den);
        Rational {
            num: num / g,
            den: den / g,
        }
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

/// Payload accounting for a (K, D, N, b) operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayloadBudget {
    pub k: usize,
    pub d: usize,
    pub n: usize,
    pub bits_per_symbol: u32,
    /// Channel bandwidth ratio K*D / (3*N), exact.
    pub cbr: Rational,
    /// Bits per point K*D*b / N, exact.
    pub bpp: Rational,
}

/// CBR = K*D/(3N) and R_bpp = K*D*b/N, evaluated as exact rationals.
pub fn budget(k: usize, d: usize, n: usize, bits_per_symbol: u32) -> PayloadBudget {
    assert!(k > 0 && d > 0 && n > 0 && bits_per_symbol > 0, "budget: all inputs must be positive");
    let kd = (k as u64) * (d as u64);
    PayloadBudget {
        k,
        d,
        n,
        bits_per_symbol,
        cbr: Rational::new(kd, 3 * n as u64),
        bpp: Rational::new(kd * bits_per_symbol as u64, n as u64),
    }
}
