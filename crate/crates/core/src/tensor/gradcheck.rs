//! Central finite differences for validating analytic gradients.
//!
//! Deliberately knows nothing about the tape: callers pass a scalar-valued
//! closure over a flat parameter vector, keeping the oracle independent of
//! the differentiation path it checks.

/// Central difference gradient of `f` at `x` with the given step.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let fp = f(&probe);
        probe[i] = orig - step;
        let fm = f(&probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * step);
    }
    grad
}

/// Largest per-component relative error between two gradient vectors.
///
/// Components where both magnitudes fall below `1e-7` are treated as zero
/// agreement (central differences bottom out near that scale in f64).
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch: {} vs {}", a.len(), b.len());
    let mut worst = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let scale = x.abs().max(y.abs());
        if scale < 1e-7 {
            continue;
        }
        worst = worst.max((x - y).abs() / scale);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let g = central_diff(f, &[1.0, -2.0, 3.0], 1e-5);
        let want = [2.0, -4.0, 6.0];
        assert!(max_rel_err(&g, &want) < 1e-9);
    }
}
