//! Learnable-scale integer quantization with straight-through gradients,
//! per-token standardization, power normalization, and training-only
//! soft symbol-usage statistics.
//!
//! The scale alpha = softplus(alpha_raw) stays positive by construction.
//! Symbols are rounded half away from zero and clipped to the signed b-bit
//! range [-(2^(b-1)-1), +(2^(b-1)-1)]. The straight-through backward rule
//! passes the output gradient to the standardized input unchanged
//! (Jacobian exactly identity) while the scale receives the ordinary
//! product-rule gradient sum(g ⊙ zhat).

use std::cell::Cell;

use thiserror::Error;

use crate::tensor::{Tape, Tensor};

#[derive(Debug, Error)]
pub enum QuantizerError {
    #[error("symbol statistics are a training-only facility; quantizer is in inference mode")]
    InferenceMode,
    #[error("degenerate symbol histogram: no mass inside the alphabet range")]
    EmptyHistogram,
}

/// Standardization statistics of one token row (receiver-side record).
#[derive(Debug, Clone, Default)]
pub struct NormStats {
    /// Per-token means across the feature dimension, row-major [B*T].
    pub mu: Vec<f64>,
    /// Per-token standard deviations, row-major [B*T].
    pub sigma: Vec<f64>,
}

pub struct Quantizer {
    /// Unconstrained scale parameter; alpha = softplus(alpha_raw) > 0.
    pub alpha_raw: Tensor,
    pub bits: u32,
    /// Standardization guard, fixed at 1e-6.
    pub eps: f64,
    training: Cell<bool>,
}

/// softplus inverse: raw value giving softplus(raw) == alpha.
pub fn alpha_raw_for(alpha: f64) -> f64 {
    assert!(alpha > 0.0, "quantizer: alpha must be positive");
    (alpha.exp() - 1.0).ln()
}

impl Quantizer {
    pub fn new(bits: u32, alpha_init: f64) -> Quantizer {
        assert!((2..=16).contains(&bits), "quantizer: bits must be in 2..=16, got {bits}");
        Quantizer {
            alpha_raw: Tensor::param(&[1], vec![alpha_raw_for(alpha_init)]),
            bits,
            eps: 1e-6,
            training: Cell::new(true),
        }
    }

    pub fn set_training(&self, training: bool) {
        self.training.set(training);
    }

    pub fn is_training(&self) -> bool {
        self.training.get()
    }

    /// Largest representable symbol magnitude: 2^(b-1) - 1.
    pub fn clip_max(&self) -> f64 {
        ((1u32 << (self.bits - 1)) - 1) as f64
    }

    /// Alphabet size: both signs plus zero.
    pub fn alphabet_size(&self) -> usize {
        2 * self.clip_max() as usize + 1
    }

    pub fn alpha(&self, g: &Tape) -> Tensor {
        g.softplus(&self.alpha_raw)
    }

    /// Per-token standardization zhat = (z - mu) / (sigma_z + eps) with mu,
    /// sigma_z computed across the feature dimension of each token row.
    /// The returned statistics are plain data for the receiver-side record.
    pub fn normalize(&self, g: &Tape, z: &Tensor) -> (Tensor, NormStats) {
        let rank = z.rank();
        let d = z.shape()[rank - 1];
        assert!(d >= 2, "normalize: feature width must be >= 2, got {d}");
        let rows = z.len() / d;
        let eps = self.eps;
        let mut out = vec![0.0; z.len()];
        let mut xhat = vec![0.0; z.len()];
        let mut mu = vec![0.0; rows];
        let mut sigma = vec![0.0; rows];
        {
            let zd = z.data();
            for r in 0..rows {
                let row = &zd[r * d..(r + 1) * d];
                let m = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / d as f64;
                let s = var.sqrt();
                mu[r] = m;
                sigma[r] = s;
                let denom = s + eps;
                for j in 0..d {
                    let v = (row[j] - m) / denom;
                    out[r * d + j] = v;
                    xhat[r * d + j] = v;
                }
            }
        }
        let result = Tensor::result(z.shape(), out, g.should_record(&[z]));
        if result.requires_grad() {
            let (zc, oc) = (z.clone(), result.clone());
            let sigma_saved = sigma.clone();
            g.record(move || {
                let Some(gout) = oc.grad_snapshot() else { return };
                let mut dz = vec![0.0; zc.len()];
                for r in 0..rows {
                    let s = sigma_saved[r];
                    let denom = s + eps;
                    let gy = &gout[r * d..(r + 1) * d];
                    let xh = &xhat[r * d..(r + 1) * d];
                    let gmean = gy.iter().sum::<f64>() / d as f64;
                    // ratio (sigma+eps)/sigma appears because zhat uses the
                    // eps-shifted denominator while d(sigma)/dz uses sigma
                    let dot = gy.iter().zip(xh).map(|(&a, &b)| a * b).sum::<f64>() / d as f64;
                    let third = if s > 0.0 { dot * denom / s } else { 0.0 };
                    for j in 0..d {
                        dz[r * d + j] = (gy[j] - gmean - xh[j] * third) / denom;
                    }
                }
                zc.accum_grad(&dz);
            });
        }
        (result, NormStats { mu, sigma })
    }

    /// Hard quantization: round(alpha * zhat) half away from zero, clipped
    /// to the symbol range, with the straight-through backward rule.
    pub fn quantize(&self, g: &Tape, zhat: &Tensor) -> Tensor {
        let alpha = self.alpha(g);
        let a = alpha.item();
        let clip = self.clip_max();
        let data: Vec<f64> = zhat
            .data()
            .iter()
            .map(|&v| (a * v).round().clamp(-clip, clip))
            .collect();
        let out = Tensor::result(zhat.shape(), data, g.should_record(&[zhat, &alpha]));
        if out.requires_grad() {
            let (zc, ac, oc) = (zhat.clone(), alpha.clone(), out.clone());
            g.record(move || {
                let Some(gout) = oc.grad_snapshot() else { return };
                if ac.requires_grad() {
                    let zd = zc.data();
                    let da: f64 = gout.iter().zip(zd.iter()).map(|(&g, &z)| g * z).sum();
                    drop(zd);
                    ac.accum_grad(&[da]);
                }
                if zc.requires_grad() {
                    // straight-through: identity Jacobian wrt zhat
                    zc.accum_grad(&gout);
                }
            });
        }
        out
    }

    /// Smooth surrogate used by gradient checks: alpha * zhat without
    /// rounding or clipping, fully differentiable.
    pub fn quantize_smooth(&self, g: &Tape, zhat: &Tensor) -> Tensor {
        let alpha = self.alpha(g);
        g.mul(zhat, &alpha)
    }

    /// In-graph power normalization over each sample's symbol block:
    /// s = sqrt(mean(zq^2)) per sample (1 if the block is all zero),
    /// returning (zq / s, s) with s of shape [B,1,1].
    pub fn power_normalize_graph(&self, g: &Tape, zq: &Tensor) -> (Tensor, Tensor) {
        assert_eq!(zq.rank(), 3, "power_normalize: expected [B,T,D]");
        let sq = g.square(zq);
        let mean_d = g.mean_axis(&sq, 2, true);
        let mean_td = g.mean_axis(&mean_d, 1, true); // [B,1,1]
        let s = sqrt_or_one(g, &mean_td);
        (g.div(zq, &s), s)
    }

    pub fn power_denormalize_graph(&self, g: &Tape, y: &Tensor, s: &Tensor) -> Tensor {
        g.mul(y, s)
    }

    /// Training-only soft symbol histogram over the integer alphabet.
    /// Each symbol value z spreads triangular weight max(0, 1-|z - c|) over
    /// the neighboring bins c; bins are normalized to sum to one. The
    /// backward rule uses right-derivatives, so integer-valued symbols
    /// still carry usage-spreading gradients through the STE path.
    pub fn symbol_histogram(&self, g: &Tape, zq: &Tensor) -> Result<Tensor, QuantizerError> {
        if !self.training.get() {
            return Err(QuantizerError::InferenceMode);
        }
        let clip = self.clip_max() as i64;
        let bins = self.alphabet_size();
        let offset = clip; // bin index of symbol value 0 is `clip`
        let mut raw = vec![0.0; bins];
        {
            let zd = zq.data();
            for &z in zd.iter() {
                let lo = z.floor();
                let frac = z - lo;
                let lo_bin = lo as i64 + offset;
                if (0..bins as i64).contains(&lo_bin) {
                    raw[lo_bin as usize] += 1.0 - frac;
                }
                let hi_bin = lo_bin + 1;
                if frac >= 0.0 && (0..bins as i64).contains(&hi_bin) {
                    raw[hi_bin as usize] += frac;
                }
            }
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(QuantizerError::EmptyHistogram);
        }
        let raw_t = Tensor::result(&[bins], raw, g.should_record(&[zq]));
        if raw_t.requires_grad() {
            let (zc, rc) = (zq.clone(), raw_t.clone());
            g.record(move || {
                let Some(gout) = rc.grad_snapshot() else { return };
                let zd = zc.data();
                let mut dz = vec![0.0; zc.len()];
                for (j, &z) in zd.iter().enumerate() {
                    let lo_bin = z.floor() as i64 + offset;
                    let hi_bin = lo_bin + 1;
                    // d raw[lo]/dz = -1, d raw[hi]/dz = +1 (right-derivative)
                    if (0..bins as i64).contains(&lo_bin) {
                        dz[j] -= gout[lo_bin as usize];
                    }
                    if (0..bins as i64).contains(&hi_bin) {
                        dz[j] += gout[hi_bin as usize];
                    }
                }
                drop(zd);
                zc.accum_grad(&dz);
            });
        }
        let total_t = g.sum_all(&raw_t);
        Ok(g.div(&raw_t, &total_t))
    }

    pub fn collect(&self, prefix: &str, out: &mut crate::nn::Params) {
        out.push((format!("{prefix}.alpha_raw"), self.alpha_raw.clone()));
    }
}

/// sqrt with the all-zero guard: f(0) = 1 with zero derivative, so an
/// all-zero payload normalizes to itself with a unit scale.
fn sqrt_or_one(g: &Tape, x: &Tensor) -> Tensor {
    let data: Vec<f64> = x
        .data()
        .iter()
        .map(|&v| if v > 0.0 { v.sqrt() } else { 1.0 })
        .collect();
    let out = Tensor::result(x.shape(), data, g.should_record(&[x]));
    if out.requires_grad() {
        let (xc, oc) = (x.clone(), out.clone());
        g.record(move || {
            let Some(gout) = oc.grad_snapshot() else { return };
            let xd = xc.data();
            let od = oc.data();
            let dx: Vec<f64> = gout
                .iter()
                .zip(xd.iter().zip(od.iter()))
                .map(|(&g, (&xv, &yv))| if xv > 0.0 { g * 0.5 / yv } else { 0.0 })
                .collect();
            drop(xd);
            drop(od);
            xc.accum_grad(&dx);
        });
    }
    out
}

/// Per-sample power normalization for the transmission path: x = z / s with
/// s = sqrt(mean(z^2)) (s := 1 for an all-zero block), giving unit average
/// symbol power.
pub fn power_normalize_exact(z: &[f64]) -> (Vec<f64>, f64) {
    let ms = z.iter().map(|&v| v * v).sum::<f64>() / z.len() as f64;
    if ms == 0.0 {
        return (z.to_vec(), 1.0);
    }
    let s = ms.sqrt();
    (z.iter().map(|&zi| zi / s).collect(), s)
}

/// Receiver side of [`power_normalize_exact`]: multiply by the recorded
/// scale, then re-synchronize to the integer symbol grid.
///
/// The divide/multiply pair leaves a rounding residue of at most a couple
/// of ulps, so noiseless received values sit within ~4*eps of the original
/// integer symbols; snapping that band onto the grid makes the zero-noise
/// round trip bit-exact. A noisy value lands inside the band with
/// probability on the order of 1e-14 per element, and even then moves by
/// less than 4*eps of itself, far below any noise floor.
pub fn power_denormalize(y: &[f64], s: f64) -> Vec<f64> {
    y.iter()
        .map(|&v| {
            let w = v * s;
            let r = w.round();
            if (w - r).abs() <= 8.0 * f64::EPSILON * r.abs().max(1.0) {
                r
            } else {
                w
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{rng_stream, uniform_symmetric};
    use crate::tensor::gradcheck::{central_diff, max_rel_err};

    #[test]
    fn normalize_constant_row() {
        let q = Quantizer::new(8, 1.0);
        let g = Tape::new();
        let z = Tensor::from_vec(&[1, 1, 4], vec![3.0; 4]);
        let (zhat, stats) = q.normalize(&g, &z);
        for v in zhat.to_vec() {
            assert!(v.abs() < 1e-9);
        }
        assert_eq!(stats.mu, vec![3.0]);
        assert_eq!(stats.sigma, vec![0.0]);
    }

    #[test]
    fn normalize_plus_minus_one_row() {
        let q = Quantizer::new(8, 1.0);
        let g = Tape::new();
        let z = Tensor::from_vec(&[1, 1, 2], vec![1.0, -1.0]);
        let (zhat, _) = q.normalize(&g, &z);
        let want = 1.0 / (1.0 + 1e-6);
        let got = zhat.to_vec();
        assert!((got[0] - want).abs() < 1e-15);
        assert!((got[1] + want).abs() < 1e-15);
    }

    #[test]
    fn normalize_matches_two_pass_oracle() {
        let q = Quantizer::new(8, 1.0);
        let g = Tape::new();
        let mut rng = rng_stream(4, 0);
        let data: Vec<f64> = (0..3 * 5 * 8).map(|_| uniform_symmetric(&mut rng, 2.0)).collect();
        let z = Tensor::from_vec(&[3, 5, 8], data.clone());
        let (zhat, stats) = q.normalize(&g, &z);
        let got = zhat.to_vec();
        for r in 0..15 {
            let row = &data[r * 8..(r + 1) * 8];
            let m = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / 8.0;
            let s = var.sqrt();
            assert!((stats.mu[r] - m).abs() < 1e-12);
            assert!((stats.sigma[r] - s).abs() < 1e-12);
            for j in 0..8 {
                let want = (row[j] - m) / (s + 1e-6);
                assert!((got[r * 8 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_gradient_matches_finite_differences() {
        let q = Quantizer::new(8, 1.0);
        let mut rng = rng_stream(6, 0);
        let data: Vec<f64> = (0..2 * 3 * 6).map(|_| uniform_symmetric(&mut rng, 1.5)).collect();
        // weighted loss so the gradient does not degenerate (an unweighted
        // sum of squares of standardized rows is nearly input-invariant)
        let weights: Vec<f64> = (0..data.len()).map(|i| ((i as f64) * 0.7).sin() + 1.5).collect();
        let w = Tensor::from_vec(&[2, 3, 6], weights.clone());
        let g = Tape::new();
        let z = Tensor::param(&[2, 3, 6], data.clone());
        let (zhat, _) = q.normalize(&g, &z);
        let loss = g.sum_all(&g.mul(&w, &g.square(&zhat)));
        g.backward(&loss);
        let fd = central_diff(
            |xs| {
                let q = Quantizer::new(8, 1.0);
                let g = Tape::no_grad();
                let z = Tensor::from_vec(&[2, 3, 6], xs.to_vec());
                let w = Tensor::from_vec(&[2, 3, 6], weights.clone());
                let (zhat, _) = q.normalize(&g, &z);
                g.sum_all(&g.mul(&w, &g.square(&zhat))).item()
            },
            &data,
            1e-5,
        );
        assert!(max_rel_err(&z.grad().unwrap(), &fd) < 1e-5);
    }

    #[test]
    fn quantize_zero_is_zero_for_any_alpha() {
        for alpha in [0.1, 1.0, 7.3] {
            let q = Quantizer::new(8, alpha);
            let g = Tape::new();
            let zhat = Tensor::from_vec(&[1, 1, 4], vec![0.0; 4]);
            assert!(q.quantize(&g, &zhat).to_vec().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn softplus_zero_raw_gives_ln2_scale() {
        let q = Quantizer::new(8, 1.0);
        q.alpha_raw.set_data(&[0.0]);
        let g = Tape::new();
        assert!((q.alpha(&g).item() - std::f64::consts::LN_2).abs() < 1e-15);
        let zhat = Tensor::from_vec(&[1, 1, 2], vec![1.0, 1.0]);
        // round(0.6931...) = 1
        assert_eq!(q.quantize(&g, &zhat).to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn rounding_is_half_away_from_zero_and_clipped() {
        // the rounding primitive itself: half-way cases go away from zero
        assert_eq!((0.5f64).round(), 1.0);
        assert_eq!((-0.5f64).round(), -1.0);
        assert_eq!((1.5f64).round(), 2.0);
        assert_eq!((-1.5f64).round(), -2.0);

        let q = Quantizer::new(4, 1.0);
        let g = Tape::new();
        let a = q.alpha(&g).item();
        // pre-divide by alpha so the products land firmly inside rounding cells
        let targets = [0.6, -0.6, 1.4, -1.4, 99.0, -99.0];
        let zhat = Tensor::from_vec(&[1, 1, 6], targets.iter().map(|t| t / a).collect());
        let zq = q.quantize(&g, &zhat).to_vec();
        assert_eq!(zq, vec![1.0, -1.0, 1.0, -1.0, 7.0, -7.0]);
    }

    #[test]
    fn ste_backward_is_exact_identity_wrt_zhat() {
        let q = Quantizer::new(8, 2.5);
        let g = Tape::new();
        let zhat = Tensor::param(&[1, 2, 3], vec![0.3, -1.2, 0.8, 2.4, -0.1, 0.0]);
        let zq = q.quantize(&g, &zhat);
        let loss = g.sum_all(&zq);
        g.backward(&loss);
        assert_eq!(zhat.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn ste_alpha_gradient_is_product_rule_sum() {
        let q = Quantizer::new(8, 2.0);
        let g = Tape::new();
        let vals = vec![0.3, -1.2, 0.8];
        let zhat = Tensor::param(&[1, 1, 3], vals.clone());
        let zq = q.quantize(&g, &zhat);
        let loss = g.sum_all(&zq);
        g.backward(&loss);
        // d loss / d alpha = sum(zhat); chain through softplus to alpha_raw
        let want_alpha_grad: f64 = vals.iter().sum();
        let raw = q.alpha_raw.to_vec()[0];
        let dsoftplus = 1.0 / (1.0 + (-raw).exp());
        let got = q.alpha_raw.grad().unwrap()[0];
        assert!((got - want_alpha_grad * dsoftplus).abs() < 1e-12);
    }

    #[test]
    fn power_normalize_unit_symbols_unchanged() {
        let (x, s) = power_normalize_exact(&[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(s, 1.0);
        assert_eq!(x, vec![1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn power_normalize_sparse_example() {
        let (x, s) = power_normalize_exact(&[2.0, 0.0, 0.0, 0.0]);
        assert_eq!(s, 1.0);
        assert_eq!(x, vec![2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn power_normalized_mean_square_is_one() {
        let mut rng = rng_stream(10, 0);
        for _ in 0..200 {
            let z: Vec<f64> = (0..64).map(|_| uniform_symmetric(&mut rng, 20.0).round()).collect();
            if z.iter().all(|&v| v == 0.0) {
                continue;
            }
            let (x, _) = power_normalize_exact(&z);
            let ms = x.iter().map(|&v| v * v).sum::<f64>() / x.len() as f64;
            assert!((ms - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn power_roundtrip_is_bit_exact() {
        let mut rng = rng_stream(11, 0);
        for _ in 0..500 {
            let z: Vec<f64> = (0..48).map(|_| uniform_symmetric(&mut rng, 127.0).round()).collect();
            let (x, s) = power_normalize_exact(&z);
            let back = power_denormalize(&x, s);
            for (a, b) in z.iter().zip(&back) {
                assert_eq!(a.to_bits(), b.to_bits(), "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn all_zero_payload_uses_unit_scale() {
        let (x, s) = power_normalize_exact(&[0.0; 8]);
        assert_eq!(s, 1.0);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn histogram_one_hot_at_zero() {
        let q = Quantizer::new(4, 1.0);
        let g = Tape::new();
        let zq = Tensor::from_vec(&[1, 2, 4], vec![0.0; 8]);
        let p = q.symbol_histogram(&g, &zq).unwrap().to_vec();
        assert_eq!(p.len(), 15);
        for (i, &v) in p.iter().enumerate() {
            if i == 7 {
                assert!((v - 1.0).abs() < 1e-12);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn histogram_uniform_over_three_symbols() {
        let q = Quantizer::new(4, 1.0);
        let g = Tape::new();
        let zq = Tensor::from_vec(&[1, 2, 3], vec![-1.0, 0.0, 1.0, -1.0, 0.0, 1.0]);
        let p = q.symbol_histogram(&g, &zq).unwrap().to_vec();
        for (i, &v) in p.iter().enumerate() {
            match i {
                6 | 7 | 8 => assert!((v - 1.0 / 3.0).abs() < 1e-12),
                _ => assert_eq!(v, 0.0),
            }
        }
    }

    #[test]
    fn histogram_sums_to_one() {
        let q = Quantizer::new(8, 1.0);
        let g = Tape::new();
        let mut rng = rng_stream(12, 0);
        for _ in 0..20 {
            let z: Vec<f64> = (0..96).map(|_| uniform_symmetric(&mut rng, 100.0).round()).collect();
            let zq = Tensor::from_vec(&[1, 12, 8], z);
            let p = q.symbol_histogram(&g, &zq).unwrap();
            let total: f64 = p.to_vec().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_rejects_inference_mode() {
        let q = Quantizer::new(8, 1.0);
        q.set_training(false);
        let g = Tape::new();
        let zq = Tensor::from_vec(&[1, 1, 2], vec![0.0, 1.0]);
        assert!(matches!(
            q.symbol_histogram(&g, &zq),
            Err(QuantizerError::InferenceMode)
        ));
    }

    #[test]
    fn histogram_gradient_matches_finite_differences_off_kinks() {
        let q = Quantizer::new(4, 1.0);
        let g = Tape::new();
        let vals = vec![0.3, -1.6, 2.2, 0.7, -0.4, 1.1];
        let zq = Tensor::param(&[1, 2, 3], vals.clone());
        let p = q.symbol_histogram(&g, &zq).unwrap();
        let loss = g.sum_all(&g.square(&p));
        g.backward(&loss);
        let fd = central_diff(
            |xs| {
                let q = Quantizer::new(4, 1.0);
                let g = Tape::no_grad();
                let zq = Tensor::from_vec(&[1, 2, 3], xs.to_vec());
                let p = q.symbol_histogram(&g, &zq).unwrap();
                g.sum_all(&g.square(&p)).item()
            },
            &vals,
            1e-6,
        );
        assert!(max_rel_err(&zq.grad().unwrap(), &fd) < 1e-5);
    }

    #[test]
    fn graph_power_normalization_round_trips() {
        let q = Quantizer::new(8, 1.0);
        let g = Tape::new();
        let z = Tensor::from_vec(&[2, 2, 3], vec![3.0, -1.0, 2.0, 0.0, 5.0, -2.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        let (x, s) = q.power_normalize_graph(&g, &z);
        let back = q.power_denormalize_graph(&g, &x, &s);
        for (a, b) in z.to_vec().iter().zip(back.to_vec().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // per-sample mean square of transmitted symbols is 1 (nonzero blocks)
        let xs = x.to_vec();
        let ms0: f64 = xs[..6].iter().map(|v| v * v).sum::<f64>() / 6.0;
        assert!((ms0 - 1.0).abs() < 1e-12);
    }
}
