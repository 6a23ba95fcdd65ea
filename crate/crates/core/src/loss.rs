//! Training objective: chamfer reconstruction loss plus the symbol-usage,
//! sparsity, and token-diversity penalties, combined as
//! total = cd + lambda_sym * sym + lambda_sparsity * sparsity + lambda_diversity * diversity.

use thiserror::Error;

use crate::tensor::{Tape, Tensor};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("contract error: {0}")]
    Contract(String),
}

/// Objective weights; defaults follow the operating configuration
/// lambda_sym = 0.5, lambda_sparsity = lambda_diversity = 1.0.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda_sym: f64,
    pub lambda_sparsity: f64,
    pub lambda_diversity: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_sym: 0.5,
            lambda_sparsity: 1.0,
            lambda_diversity: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.lambda_sym < 0.0 || self.lambda_sparsity < 0.0 || self.lambda_diversity < 0.0 {
            return Err(LossError::Contract("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Per-term scalars of one objective evaluation.
pub struct LossBreakdown {
    pub cd: Tensor,
    pub sym: Tensor,
    pub sparsity: Tensor,
    pub diversity: Tensor,
    pub total: Tensor,
    pub weights: LossWeights,
}

impl LossBreakdown {
    pub fn values(&self) -> LossValues {
        LossValues {
            cd: self.cd.item(),
            sym: self.sym.item(),
            sparsity: self.sparsity.item(),
            diversity: self.diversity.item(),
            total: self.total.item(),
        }
    }
}

/// Plain-number snapshot of a breakdown (history rows, logging).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossValues {
    pub cd: f64,
    pub sym: f64,
    pub sparsity: f64,
    pub diversity: f64,
    pub total: f64,
}

/// Bidirectional chamfer distance between point sets, averaged over the
/// batch: for each cloud pair, the mean squared nearest-neighbor distance
/// in both directions, summed. Differentiable in both inputs; nearest
/// assignments are held fixed in the backward pass.
///
/// Shapes: reference [B,N,3], reconstruction [B,M,3]; scalar output.
pub fn chamfer(g: &Tape, reference: &Tensor, reconstruction: &Tensor) -> Result<Tensor, LossError> {
    for (name, t) in [("reference", reference), ("reconstruction", reconstruction)] {
        if t.rank() != 3 || t.shape()[2] != 3 {
            return Err(LossError::Contract(format!(
                "chamfer: {name} must have shape [B,N,3], got {:?}",
                t.shape()
            )));
        }
        if t.shape()[1] == 0 {
            return Err(LossError::Contract(format!("chamfer: {name} cloud is empty")));
        }
    }
    if reference.shape()[0] != reconstruction.shape()[0] {
        return Err(LossError::Contract(format!(
            "chamfer: batch sizes differ: {:?} vs {:?}",
            reference.shape(),
            reconstruction.shape()
        )));
    }
    let (b, n) = (reference.shape()[0], reference.shape()[1]);
    let m = reconstruction.shape()[1];

    // forward with saved nearest-neighbor assignments
    let mut nn_ab = vec![0usize; b * n]; // for each ref point, nearest rec index
    let mut nn_ba = vec![0usize; b * m]; // for each rec point, nearest ref index
    let mut total = 0.0;
    {
        let ad = reference.data();
        let bd = reconstruction.data();
        for s in 0..b {
            let aoff = s * n * 3;
            let boff = s * m * 3;
            let mut dir_ab = 0.0;
            for i in 0..n {
                let p = &ad[aoff + i * 3..aoff + i * 3 + 3];
                let mut best = f64::INFINITY;
                let mut best_j = 0;
                for j in 0..m {
                    let q = &bd[boff + j * 3..boff + j * 3 + 3];
                    let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                    if d < best {
                        best = d;
                        best_j = j;
                    }
                }
                nn_ab[s * n + i] = best_j;
                dir_ab += best;
            }
            let mut dir_ba = 0.0;
            for j in 0..m {
                let q = &bd[boff + j * 3..boff + j * 3 + 3];
                let mut best = f64::INFINITY;
                let mut best_i = 0;
                for i in 0..n {
                    let p = &ad[aoff + i * 3..aoff + i * 3 + 3];
                    let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                    if d < best {
                        best = d;
                        best_i = i;
                    }
                }
                nn_ba[s * m + j] = best_i;
                dir_ba += best;
            }
            total += dir_ab / n as f64 + dir_ba / m as f64;
        }
    }
    total /= b as f64;

    let out = Tensor::result(&[1], vec![total], g.should_record(&[reference, reconstruction]));
    if out.requires_grad() {
        let (ac, bc, oc) = (reference.clone(), reconstruction.clone(), out.clone());
        g.record(move || {
            let Some(gout) = oc.grad_snapshot() else { return };
            let scale = gout[0] / b as f64;
            let ad = ac.data();
            let bd = bc.data();
            let mut da = vec![0.0; ad.len()];
            let mut db = vec![0.0; bd.len()];
            for s in 0..b {
                let aoff = s * n * 3;
                let boff = s * m * 3;
                for i in 0..n {
                    let j = nn_ab[s * n + i];
                    for c in 0..3 {
                        let diff = ad[aoff + i * 3 + c] - bd[boff + j * 3 + c];
                        let grad = scale * 2.0 * diff / n as f64;
                        da[aoff + i * 3 + c] += grad;
                        db[boff + j * 3 + c] -= grad;
                    }
                }
                for j in 0..m {
                    let i = nn_ba[s * m + j];
                    for c in 0..3 {
                        let diff = bd[boff + j * 3 + c] - ad[aoff + i * 3 + c];
                        let grad = scale * 2.0 * diff / m as f64;
                        db[boff + j * 3 + c] += grad;
                        da[aoff + i * 3 + c] -= grad;
                    }
                }
            }
            drop(ad);
            drop(bd);
            if ac.requires_grad() {
                ac.accum_grad(&da);
            }
            if bc.requires_grad() {
                bc.accum_grad(&db);
            }
        });
    }
    Ok(out)
}

/// Plain-number chamfer distance between two point lists (validation and
/// metric duty; no tape involvement).
pub fn chamfer_points(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "chamfer: empty cloud");
    let dir = |src: &[[f64; 3]], dst: &[[f64; 3]]| -> f64 {
        src.iter()
            .map(|p| {
                dst.iter()
                    .map(|q| crate::pointcloud::squared_distance(p, q))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / src.len() as f64
    };
    dir(a, b) + dir(b, a)
}

/// Normalized-entropy symbol-usage penalty: 1 - H(p)/ln M over an M-bin
/// probability vector; 0 for uniform usage, 1 for a one-hot histogram.
pub fn symbol_usage_penalty(g: &Tape, p: &Tensor) -> Result<Tensor, LossError> {
    let m = p.len();
    if m < 2 {
        return Err(LossError::Contract(format!(
            "symbol-usage penalty needs at least 2 bins, got {m}"
        )));
    }
    let sum: f64 = p.data().iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(LossError::Contract(format!(
            "symbol histogram must sum to 1, got {sum}"
        )));
    }
    if p.data().iter().any(|&v| v < 0.0) {
        return Err(LossError::Contract("symbol histogram has negative mass".into()));
    }
    // H(p) = -sum p ln p; penalty = 1 - H/ln(M)
    let neg_entropy = g.sum_all(&g.xlnx(p));
    Ok(g.add_scalar(&g.mul_scalar(&neg_entropy, 1.0 / (m as f64).ln()), 1.0))
}

/// Mean over scores of max(S - tau, 0).
pub fn sparsity_penalty(g: &Tape, scores: &Tensor, tau: f64) -> Tensor {
    g.mean_all(&g.relu(&g.add_scalar(scores, -tau)))
}

/// Decorrelation penalty over [B,T,D] tokens: the batch mean of
/// (1/(T(T-1))) * sum_{i != j} ((1/D) <z_i, z_j>)^2.
pub fn diversity_penalty(g: &Tape, tokens: &Tensor) -> Result<Tensor, LossError> {
    if tokens.rank() != 3 {
        return Err(LossError::Contract(format!(
            "diversity: expected [B,T,D] tokens, got {:?}",
            tokens.shape()
        )));
    }
    let (b, t, d) = (tokens.shape()[0], tokens.shape()[1], tokens.shape()[2]);
    if t < 2 {
        return Err(LossError::Contract(
            "diversity penalty undefined for a single token (empty i != j sum)".into(),
        ));
    }
    let gram = g.matmul(tokens, &g.transpose_last2(tokens)); // [B,T,T]
    let scaled = g.mul_scalar(&gram, 1.0 / d as f64);
    let sq = g.square(&scaled);
    // zero out the diagonal with a constant mask
    let mut mask = vec![1.0; t * t];
    for i in 0..t {
        mask[i * t + i] = 0.0;
    }
    let mask = Tensor::from_vec(&[1, t, t], mask);
    let off_diag = g.mul(&sq, &mask);
    Ok(g.mul_scalar(&g.sum_all(&off_diag), 1.0 / (b * t * (t - 1)) as f64))
}

/// Weighted sum of the four terms.
pub fn total(
    g: &Tape,
    cd: Tensor,
    sym: Tensor,
    sparsity: Tensor,
    diversity: Tensor,
    weights: LossWeights,
) -> Result<LossBreakdown, LossError> {
    weights.validate()?;
    for (name, t) in [("cd", &cd), ("sym", &sym), ("sparsity", &sparsity), ("diversity", &diversity)] {
        if !t.all_finite() {
            return Err(LossError::Contract(format!("loss term {name} is not finite")));
        }
    }
    let mut acc = cd.clone();
    acc = g.add(&acc, &g.mul_scalar(&sym, weights.lambda_sym));
    acc = g.add(&acc, &g.mul_scalar(&sparsity, weights.lambda_sparsity));
    acc = g.add(&acc, &g.mul_scalar(&diversity, weights.lambda_diversity));
    Ok(LossBreakdown {
        cd,
        sym,
        sparsity,
        diversity,
        total: acc,
        weights,
    })
}
