//! Geometric fidelity metrics: D1 (point-to-point) and D2 (point-to-plane)
//! PSNR with covariance-based normal estimation.
//!
//! Directional MSE: for each source point, the squared distance to its
//! nearest neighbor in the other cloud (D1), or that error vector's squared
//! projection onto a surface normal (D2). The symmetric MSE is the max of
//! the two directions and PSNR = 10*log10(peak^2 / MSE); identical clouds
//! report +inf. For D2, direction X->Y projects onto the normal at the
//! matched point in Y when Y carries normals, falling back to the source
//! point's normal in X otherwise; with normals on both clouds the report is
//! mirror-symmetric in its arguments.
//!
//! The peak constant for unit-cube-normalized clouds is sqrt(3), the cube
//! diagonal; it is shared by every method in this workspace so comparisons
//! stay consistent.

use thiserror::Error;

use crate::pointcloud::{squared_distance, PointCloud};

/// Peak value used for clouds normalized to the unit cube.
pub const UNIT_CUBE_PEAK: f64 = 1.7320508075688772; // sqrt(3)

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("parameter error: {0}")]
    Parameter(String),
}

/// Per-point unit normals; `None` marks a degenerate (rank < 2) neighborhood
/// excluded from point-to-plane statistics.
pub type Normals = Vec<Option<[f64; 3]>>;

/// Covariance normals from the k nearest neighbors of each point: the
/// eigenvector of the smallest covariance eigenvalue, unit length, sign
/// unconstrained.
pub fn estimate_normals(pc: &PointCloud, k: usize) -> Result<Normals, MetricsError> {
    let n = pc.len();
    if k < 3 {
        return Err(MetricsError::Parameter(format!(
            "normal estimation needs k >= 3, got {k}"
        )));
    }
    if n < k {
        return Err(MetricsError::Parameter(format!(
            "normal estimation needs at least k={k} points, cloud has {n}"
        )));
    }
    let pts = pc.points();
    let mut normals = Vec::with_capacity(n);
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..n {
        order.sort_by(|&a, &b| {
            squared_distance(&pts[a], &pts[i])
                .partial_cmp(&squared_distance(&pts[b], &pts[i]))
                .unwrap()
                .then(a.cmp(&b))
        });
        let neigh = &order[..k];
        let mut mean = [0.0; 3];
        for &j in neigh {
            for c in 0..3 {
                mean[c] += pts[j][c];
            }
        }
        for c in &mut mean {
            *c /= k as f64;
        }
        let mut cov = [[0.0; 3]; 3];
        for &j in neigh {
            let d = [pts[j][0] - mean[0], pts[j][1] - mean[1], pts[j][2] - mean[2]];
            for r in 0..3 {
                for c in 0..3 {
                    cov[r][c] += d[r] * d[c];
                }
            }
        }
        for row in &mut cov {
            for v in row {
                *v /= k as f64;
            }
        }
        let (eigenvalues, eigenvectors) = jacobi_eigen3(cov);
        // ascending eigenvalue order
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| eigenvalues[a].partial_cmp(&eigenvalues[b]).unwrap());
        let (l0, l1, l2) = (eigenvalues[idx[0]], eigenvalues[idx[1]], eigenvalues[idx[2]]);
        // rank < 2: the two smallest eigenvalues vanish (collinear points)
        let degenerate = l2 <= 0.0 || l1 <= 1e-12 * l2.max(1e-300);
        if degenerate {
            normals.push(None);
        } else {
            let v = eigenvectors[idx[0]];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            normals.push(Some([v[0] / norm, v[1] / norm, v[2] / norm]));
        }
        let _ = l0;
    }
    Ok(normals)
}

/// Cyclic Jacobi eigen-decomposition of a symmetric 3x3 matrix:
/// (eigenvalues, eigenvectors as rows, unnormalized order).
fn jacobi_eigen3(mut a: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut v = [[0.0; 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..32 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off < 1e-30 {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q].abs() < 1e-300 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut b = a;
            for r in 0..3 {
                b[r][p] = c * a[r][p] - s * a[r][q];
                b[r][q] = s * a[r][p] + c * a[r][q];
            }
            let mut a2 = b;
            for r in 0..3 {
                a2[p][r] = c * b[p][r] - s * b[q][r];
                a2[q][r] = s * b[p][r] + c * b[q][r];
            }
            a = a2;
            let mut v2 = v;
            for r in 0..3 {
                v2[p][r] = c * v[p][r] - s * v[q][r];
                v2[q][r] = s * v[p][r] + c * v[q][r];
            }
            v = v2;
        }
    }
    ([a[0][0], a[1][1], a[2][2]], v)
}

/// Directional and symmetric distortion of one cloud pair.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DistortionReport {
    pub d1_psnr: f64,
    pub d2_psnr: f64,
    pub mse_d1_ab: f64,
    pub mse_d1_ba: f64,
    pub mse_d2_ab: f64,
    pub mse_d2_ba: f64,
    pub peak: f64,
}

fn psnr_from_mse(peak: f64, mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

fn directional(
    src: &[[f64; 3]],
    dst: &[[f64; 3]],
    src_normals: Option<&Normals>,
    dst_normals: Option<&Normals>,
) -> (f64, f64) {
    let mut d1_acc = 0.0;
    let mut d2_acc = 0.0;
    let mut d2_count = 0usize;
    for (i, p) in src.iter().enumerate() {
        let mut best = f64::INFINITY;
        let mut best_j = 0;
        for (j, q) in dst.iter().enumerate() {
            let d = squared_distance(p, q);
            if d < best {
                best = d;
                best_j = j;
            }
        }
        d1_acc += best;
        // normal at the matched destination point if available, else the
        // source point's own normal
        let normal = match (dst_normals, src_normals) {
            (Some(dn), _) => dn[best_j],
            (None, Some(sn)) => sn[i],
            (None, None) => None,
        };
        if let Some(nrm) = normal {
            let q = dst[best_j];
            let e = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
            let proj = e[0] * nrm[0] + e[1] * nrm[1] + e[2] * nrm[2];
            d2_acc += proj * proj;
            d2_count += 1;
        }
    }
    let d1 = d1_acc / src.len() as f64;
    let d2 = if d2_count > 0 { d2_acc / d2_count as f64 } else { f64::NAN };
    (d1, d2)
}

impl DistortionReport {
    /// Full report between clouds `a` and `b`, with optional per-cloud
    /// normals for the point-to-plane terms.
    pub fn compute(
        a: &PointCloud,
        b: &PointCloud,
        normals_a: Option<&Normals>,
        normals_b: Option<&Normals>,
        peak: f64,
    ) -> DistortionReport {
        assert!(peak > 0.0, "peak must be positive");
        let (mse_d1_ab, mse_d2_ab) = directional(a.points(), b.points(), normals_a, normals_b);
        let (mse_d1_ba, mse_d2_ba) = directional(b.points(), a.points(), normals_b, normals_a);
        let d1 = mse_d1_ab.max(mse_d1_ba);
        let d2 = mse_d2_ab.max(mse_d2_ba);
        DistortionReport {
            d1_psnr: psnr_from_mse(peak, d1),
            d2_psnr: if d2.is_nan() { f64::NAN } else { psnr_from_mse(peak, d2) },
            mse_d1_ab,
            mse_d1_ba,
            mse_d2_ab,
            mse_d2_ba,
            peak,
        }
    }
}

/// Point-to-point PSNR of a reconstruction against a reference.
pub fn d1_psnr(reference: &PointCloud, reconstruction: &PointCloud, peak: f64) -> f64 {
    DistortionReport::compute(reference, reconstruction, None, None, peak).d1_psnr
}

/// Point-to-plane PSNR with normals on the reference cloud.
pub fn d2_psnr(
    reference: &PointCloud,
    reconstruction: &PointCloud,
    reference_normals: &Normals,
    peak: f64,
) -> f64 {
    DistortionReport::compute(reference, reconstruction, Some(reference_normals), None, peak).d2_psnr
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{rng_stream, standard_normal, uniform_open01};

    fn random_cloud(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| [uniform_open01(rng), uniform_open01(rng), uniform_open01(rng)])
                .collect(),
        )
    }

    #[test]
    fn planar_cloud_normals_point_up() {
        let mut rng = rng_stream(60, 0);
        let pts: Vec<[f64; 3]> = (0..64)
            .map(|_| [uniform_open01(&mut rng), uniform_open01(&mut rng), 0.0])
            .collect();
        let normals = estimate_normals(&PointCloud::new(pts), 12).unwrap();
        for n in normals {
            let n = n.expect("planar neighborhood is rank 2");
            assert!(n[2].abs() > 1.0 - 1e-9, "normal {:?} not +-z", n);
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            assert!((len - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn normals_are_unit_length_on_random_clouds() {
        let mut rng = rng_stream(61, 0);
        let pc = random_cloud(&mut rng, 128);
        for n in estimate_normals(&pc, 12).unwrap().into_iter().flatten() {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            assert!((len - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn collinear_neighborhood_is_flagged_degenerate() {
        let pts: Vec<[f64; 3]> = (0..16).map(|i| [i as f64 * 0.1, 0.0, 0.0]).collect();
        let normals = estimate_normals(&PointCloud::new(pts), 8).unwrap();
        assert!(normals.iter().all(|n| n.is_none()));
    }

    #[test]
    fn smallest_eigenvector_matches_bruteforce_covariance_oracle() {
        // oracle: smallest-eigenvalue direction minimizes the quadratic form,
        // found by scanning a dense direction grid
        let mut rng = rng_stream(62, 0);
        for _ in 0..5 {
            let pts: Vec<[f64; 3]> = (0..16)
                .map(|_| {
                    let u = uniform_open01(&mut rng);
                    let v = uniform_open01(&mut rng);
                    [u, v, 0.3 * u - 0.2 * v + 0.01 * standard_normal(&mut rng)]
                })
                .collect();
            let pc = PointCloud::new(pts.clone());
            let normals = estimate_normals(&pc, 16).unwrap();
            let n0 = normals[0].unwrap();

            let mut mean = [0.0; 3];
            for p in &pts {
                for c in 0..3 {
                    mean[c] += p[c] / 16.0;
                }
            }
            let quad = |dir: [f64; 3]| -> f64 {
                pts.iter()
                    .map(|p| {
                        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
                        (d[0] * dir[0] + d[1] * dir[1] + d[2] * dir[2]).powi(2)
                    })
                    .sum()
            };
            let val_normal = quad(n0);
            // the normal must not be beaten by any grid direction
            let steps = 60;
            for a in 0..steps {
                for b in 0..steps {
                    let th = std::f64::consts::PI * a as f64 / steps as f64;
                    let ph = std::f64::consts::TAU * b as f64 / steps as f64;
                    let dir = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
                    assert!(quad(dir) >= val_normal - 1e-9);
                }
            }
        }
    }

    #[test]
    fn identical_clouds_report_infinite_psnr() {
        let mut rng = rng_stream(63, 0);
        let pc = random_cloud(&mut rng, 32);
        let r = DistortionReport::compute(&pc, &pc, None, None, UNIT_CUBE_PEAK);
        assert!(r.d1_psnr.is_infinite());
        assert_eq!(r.mse_d1_ab, 0.0);
    }

    #[test]
    fn single_point_hand_computed_case() {
        let reference = PointCloud::new(vec![[0.0, 0.0, 0.0]]);
        let reconstruction = PointCloud::new(vec![[0.0, 0.0, 0.1]]);
        let normals: Normals = vec![Some([0.0, 0.0, 1.0])];
        let r = DistortionReport::compute(
            &reference,
            &reconstruction,
            Some(&normals),
            None,
            UNIT_CUBE_PEAK,
        );
        assert!((r.mse_d1_ab - 0.01).abs() < 1e-15);
        let want = 10.0 * (3.0f64 / 0.01).log10();
        assert!((r.d1_psnr - want).abs() < 1e-9);
        assert!((want - 24.7712).abs() < 1e-3);
        // error is along the normal, so D2 equals D1 here
        assert!((r.d2_psnr - r.d1_psnr).abs() < 1e-12);
    }

    #[test]
    fn tangential_displacement_vanishes_under_projection() {
        let mut rng = rng_stream(64, 0);
        let ref_pts: Vec<[f64; 3]> = (0..32)
            .map(|_| [uniform_open01(&mut rng), uniform_open01(&mut rng), 0.0])
            .collect();
        // shift every point tangentially (within the plane)
        let rec_pts: Vec<[f64; 3]> = ref_pts.iter().map(|p| [p[0] + 0.003, p[1], 0.0]).collect();
        let reference = PointCloud::new(ref_pts);
        let reconstruction = PointCloud::new(rec_pts);
        let normals: Normals = vec![Some([0.0, 0.0, 1.0]); 32];
        let r = DistortionReport::compute(
            &reference,
            &reconstruction,
            Some(&normals),
            Some(&normals),
            UNIT_CUBE_PEAK,
        );
        assert!(r.mse_d1_ab > 0.0);
        assert!(r.mse_d2_ab.abs() < 1e-20);
        assert!(r.mse_d2_ba.abs() < 1e-20);
    }

    #[test]
    fn d2_never_below_d1_on_random_pairs() {
        let mut rng = rng_stream(65, 0);
        for _ in 0..20 {
            let reference = random_cloud(&mut rng, 64);
            let rec_pts: Vec<[f64; 3]> = reference
                .points()
                .iter()
                .map(|p| {
                    [
                        p[0] + 0.01 * standard_normal(&mut rng),
                        p[1] + 0.01 * standard_normal(&mut rng),
                        p[2] + 0.01 * standard_normal(&mut rng),
                    ]
                })
                .collect();
            let reconstruction = PointCloud::new(rec_pts);
            let na = estimate_normals(&reference, 12).unwrap();
            let nb = estimate_normals(&reconstruction, 12).unwrap();
            let r = DistortionReport::compute(
                &reference,
                &reconstruction,
                Some(&na),
                Some(&nb),
                UNIT_CUBE_PEAK,
            );
            assert!(r.d2_psnr >= r.d1_psnr);
        }
    }

    #[test]
    fn rigid_rotation_leaves_both_psnrs_unchanged() {
        let mut rng = rng_stream(66, 0);
        let reference = random_cloud(&mut rng, 48);
        let rec_pts: Vec<[f64; 3]> = reference
            .points()
            .iter()
            .map(|p| {
                [
                    p[0] + 0.02 * standard_normal(&mut rng),
                    p[1] + 0.02 * standard_normal(&mut rng),
                    p[2] + 0.02 * standard_normal(&mut rng),
                ]
            })
            .collect();
        let reconstruction = PointCloud::new(rec_pts);
        let na = estimate_normals(&reference, 12).unwrap();
        let nb = estimate_normals(&reconstruction, 12).unwrap();
        let base = DistortionReport::compute(
            &reference,
            &reconstruction,
            Some(&na),
            Some(&nb),
            UNIT_CUBE_PEAK,
        );

        let (s1, c1) = (0.6f64.sin(), 0.6f64.cos());
        let (s2, c2) = (1.1f64.sin(), 1.1f64.cos());
        let rotate = |p: &[f64; 3]| -> [f64; 3] {
            let q = [c1 * p[0] - s1 * p[1], s1 * p[0] + c1 * p[1], p[2]];
            [q[0], c2 * q[1] - s2 * q[2], s2 * q[1] + c2 * q[2]]
        };
        let rot_cloud = |pc: &PointCloud| PointCloud::new(pc.points().iter().map(&rotate).collect());
        let rot_normals = |ns: &Normals| -> Normals {
            ns.iter().map(|n| n.map(|v| rotate(&v))).collect()
        };
        let rotated = DistortionReport::compute(
            &rot_cloud(&reference),
            &rot_cloud(&reconstruction),
            Some(&rot_normals(&na)),
            Some(&rot_normals(&nb)),
            UNIT_CUBE_PEAK,
        );
        assert!((base.d1_psnr - rotated.d1_psnr).abs() < 1e-9);
        assert!((base.d2_psnr - rotated.d2_psnr).abs() < 1e-9);
    }

    #[test]
    fn report_is_mirror_symmetric() {
        let mut rng = rng_stream(67, 0);
        let a = random_cloud(&mut rng, 40);
        let b = random_cloud(&mut rng, 36);
        let na = estimate_normals(&a, 12).unwrap();
        let nb = estimate_normals(&b, 12).unwrap();
        let ab = DistortionReport::compute(&a, &b, Some(&na), Some(&nb), UNIT_CUBE_PEAK);
        let ba = DistortionReport::compute(&b, &a, Some(&nb), Some(&na), UNIT_CUBE_PEAK);
        assert_eq!(ab.d1_psnr, ba.d1_psnr);
        assert_eq!(ab.d2_psnr, ba.d2_psnr);
        assert_eq!(ab.mse_d1_ab, ba.mse_d1_ba);
        assert_eq!(ab.mse_d2_ab, ba.mse_d2_ba);
    }
}
