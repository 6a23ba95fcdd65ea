//! Point-cloud representation, bounding-box normalization, farthest-point
//! sampling, and kNN patch grouping feeding the tokenizer.

mod ply;
pub mod synthetic;

pub use ply::{load_ply, save_ply, PlyError, PlyFormat};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("degenerate extent: all points identical, cannot normalize")]
    DegenerateExtent,
    #[error("parameter error: {0}")]
    Parameter(String),
}

/// Record of the original-to-normalized mapping: p' = (p - min) / scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceTransform {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub scale: f64,
}

/// Ordered list of 3D coordinates plus the normalization record, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
    pub source: Option<SourceTransform>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> PointCloud {
        assert!(!points.is_empty(), "point cloud must contain at least one point");
        PointCloud { points, source: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// Axis-aligned bounding box of the current coordinates.
    pub fn bbox(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }

    /// Maps the cloud into the unit cube by translating the min corner to the
    /// origin and uniformly scaling by the longest axis extent, so shape and
    /// aspect ratios are preserved. Idempotent. Requires a non-degenerate
    /// extent on at least one axis.
    pub fn normalize_bbox(&self) -> Result<PointCloud, GeometryError> {
        let (lo, hi) = self.bbox();
        let extent = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        let scale = extent[0].max(extent[1]).max(extent[2]);
        if scale <= 0.0 {
            return Err(GeometryError::DegenerateExtent);
        }
        let points = self
            .points
            .iter()
            .map(|p| {
                [
                    (p[0] - lo[0]) / scale,
                    (p[1] - lo[1]) / scale,
                    (p[2] - lo[2]) / scale,
                ]
            })
            .collect();
        Ok(PointCloud {
            points,
            source: Some(SourceTransform { min: lo, max: hi, scale }),
        })
    }

    /// Inverse of [`normalize_bbox`](Self::normalize_bbox) for clouds that
    /// carry a transform record.
    pub fn denormalize(&self) -> PointCloud {
        match self.source {
            None => self.clone(),
            Some(t) => PointCloud::new(
                self.points
                    .iter()
                    .map(|p| {
                        [
                            p[0] * t.scale + t.min[0],
                            p[1] * t.scale + t.min[1],
                            p[2] * t.scale + t.min[2],
                        ]
                    })
                    .collect(),
            ),
        }
    }
}

pub fn squared_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Where farthest-point sampling begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpsStart {
    /// Point nearest the centroid (deterministic default; ties to the lower
    /// index).
    NearestCentroid,
    /// Explicit starting index.
    Index(usize),
}

/// Greedy max-min farthest-point sampling of `m` indices: after the start
/// point, each selection maximizes the distance to the already-selected
/// set, ties broken by the lower point index.
pub fn fps(pc: &PointCloud, m: usize, start: FpsStart) -> Result<Vec<usize>, GeometryError> {
    let n = pc.len();
    if m < 1 || m > n {
        return Err(GeometryError::Parameter(format!(
            "fps: sample count {} out of range 1..={}",
            m, n
        )));
    }
    let pts = pc.points();
    let first = match start {
        FpsStart::Index(i) => {
            if i >= n {
                return Err(GeometryError::Parameter(format!(
                    "fps: start index {} out of range for {} points",
                    i, n
                )));
            }
            i
        }
        FpsStart::NearestCentroid => {
            let mut c = [0.0; 3];
            for p in pts {
                c[0] += p[0];
                c[1] += p[1];
                c[2] += p[2];
            }
            for a in &mut c {
                *a /= n as f64;
            }
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, p) in pts.iter().enumerate() {
                let d = squared_distance(p, &c);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            best
        }
    };

    let mut selected = Vec::with_capacity(m);
    selected.push(first);
    let mut min_dist: Vec<f64> = pts.iter().map(|p| squared_distance(p, &pts[first])).collect();
    while selected.len() < m {
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_dist.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        selected.push(best);
        for (i, d) in min_dist.iter_mut().enumerate() {
            let nd = squared_distance(&pts[i], &pts[best]);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(selected)
}

/// FPS centers plus each center's k nearest points (the center included;
/// ties broken by lower point index) and their center-relative coordinates.
#[derive(Debug, Clone)]
pub struct PatchGrouping {
    /// Indices of the FPS-selected centers, length T.
    pub center_indices: Vec<usize>,
    /// Center coordinates, length T.
    pub centers: Vec<[f64; 3]>,
    /// T x k member point indices.
    pub member_indices: Vec<Vec<usize>>,
    /// Flattened [T, k, 3] member-minus-center coordinates.
    pub relative_coords: Vec<f64>,
    pub patch_size: usize,
}

impl PatchGrouping {
    pub fn token_count(&self) -> usize {
        self.center_indices.len()
    }
}

/// Groups a cloud into `t` patches of `k` nearest neighbors around FPS
/// centers.
pub fn knn_group(pc: &PointCloud, t: usize, k: usize) -> Result<PatchGrouping, GeometryError> {
    let n = pc.len();
    if k < 1 || k > n {
        return Err(GeometryError::Parameter(format!(
            "knn_group: patch size {} out of range 1..={}",
            k, n
        )));
    }
    let center_indices = fps(pc, t, FpsStart::NearestCentroid)?;
    let pts = pc.points();
    let mut member_indices = Vec::with_capacity(t);
    let mut relative = Vec::with_capacity(t * k * 3);
    let mut centers = Vec::with_capacity(t);
    for &ci in &center_indices {
        let center = pts[ci];
        centers.push(center);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let da = squared_distance(&pts[a], &center);
            let db = squared_distance(&pts[b], &center);
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        });
        let members: Vec<usize> = order.into_iter().take(k).collect();
        for &mi in &members {
            relative.push(pts[mi][0] - center[0]);
            relative.push(pts[mi][1] - center[1]);
            relative.push(pts[mi][2] - center[2]);
        }
        member_indices.push(members);
    }
    Ok(PatchGrouping {
        center_indices,
        centers,
        member_indices,
        relative_coords: relative,
        patch_size: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_cloud() -> PointCloud {
        PointCloud::new((0..=10).map(|i| [i as f64, 0.0, 0.0]).collect())
    }

    #[test]
    fn normalize_maps_to_unit_cube() {
        let pc = PointCloud::new(vec![[0.0, 0.0, 0.0], [2.0, 2.0, 2.0]]);
        let n = pc.normalize_bbox().unwrap();
        assert_eq!(n.points(), &[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
    }

    #[test]
    fn normalize_unit_cube_is_identity_and_idempotent() {
        let pc = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.5, 0.25], [1.0, 1.0, 1.0]]);
        let n = pc.normalize_bbox().unwrap();
        assert_eq!(n.points(), pc.points());
        let n2 = n.normalize_bbox().unwrap();
        assert_eq!(n2.points(), n.points());
    }

    #[test]
    fn normalize_preserves_aspect_ratios() {
        let pc = PointCloud::new(vec![
            [0.0, 0.0, 0.0],
            [4.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [1.3, 0.4, 0.2],
        ]);
        let n = pc.normalize_bbox().unwrap();
        let d = |a: &[f64; 3], b: &[f64; 3]| squared_distance(a, b).sqrt();
        let r_before = d(&pc.points()[0], &pc.points()[1]) / d(&pc.points()[0], &pc.points()[2]);
        let r_after = d(&n.points()[0], &n.points()[1]) / d(&n.points()[0], &n.points()[2]);
        assert!((r_before - r_after).abs() < 1e-12);
        for p in n.points() {
            for a in 0..3 {
                assert!(p[a] >= 0.0 && p[a] <= 1.0);
            }
        }
    }

    #[test]
    fn normalize_rejects_degenerate_cloud() {
        let pc = PointCloud::new(vec![[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]);
        assert!(matches!(pc.normalize_bbox(), Err(GeometryError::DegenerateExtent)));
    }

    #[test]
    fn fps_m_equals_n_selects_everything() {
        let pc = line_cloud();
        let mut idx = fps(&pc, 11, FpsStart::Index(0)).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..=10).collect::<Vec<_>>());
    }

    #[test]
    fn fps_line_m2_selects_endpoints() {
        let pc = line_cloud();
        assert_eq!(fps(&pc, 2, FpsStart::Index(0)).unwrap(), vec![0, 10]);
    }

    #[test]
    fn fps_line_m3_selects_midpoint_third() {
        let pc = line_cloud();
        assert_eq!(fps(&pc, 3, FpsStart::Index(0)).unwrap(), vec![0, 10, 5]);
    }

    #[test]
    fn fps_matches_bruteforce_greedy_oracle() {
        // independent oracle: recompute max-min selection directly
        let mut rng = crate::random::rng_stream(123, 0);
        let pts: Vec<[f64; 3]> = (0..40)
            .map(|_| {
                [
                    crate::random::uniform_open01(&mut rng),
                    crate::random::uniform_open01(&mut rng),
                    crate::random::uniform_open01(&mut rng),
                ]
            })
            .collect();
        let pc = PointCloud::new(pts.clone());
        let got = fps(&pc, 8, FpsStart::Index(3)).unwrap();

        let mut sel = vec![3usize];
        while sel.len() < 8 {
            let mut best = 0;
            let mut best_d = f64::NEG_INFINITY;
            for i in 0..pts.len() {
                let d = sel
                    .iter()
                    .map(|&s| squared_distance(&pts[i], &pts[s]))
                    .fold(f64::INFINITY, f64::min);
                if d > best_d {
                    best_d = d;
                    best = i;
                }
            }
            sel.push(best);
        }
        assert_eq!(got, sel);
    }

    #[test]
    fn fps_rejects_oversized_m() {
        let pc = line_cloud();
        assert!(matches!(
            fps(&pc, 12, FpsStart::NearestCentroid),
            Err(GeometryError::Parameter(_))
        ));
    }

    #[test]
    fn fps_is_permutation_invariant_given_same_geometric_start() {
        let mut rng = crate::random::rng_stream(5, 0);
        let pts: Vec<[f64; 3]> = (0..30)
            .map(|_| {
                [
                    crate::random::uniform_open01(&mut rng),
                    crate::random::uniform_open01(&mut rng),
                    crate::random::uniform_open01(&mut rng),
                ]
            })
            .collect();
        let pc = PointCloud::new(pts.clone());
        let sel = fps(&pc, 6, FpsStart::NearestCentroid).unwrap();
        let geo: Vec<[f64; 3]> = sel.iter().map(|&i| pts[i]).collect();

        let mut perm: Vec<usize> = (0..30).collect();
        crate::random::shuffle(&mut rng, &mut perm);
        let pts2: Vec<[f64; 3]> = perm.iter().map(|&i| pts[i]).collect();
        let pc2 = PointCloud::new(pts2.clone());
        let sel2 = fps(&pc2, 6, FpsStart::NearestCentroid).unwrap();
        let geo2: Vec<[f64; 3]> = sel2.iter().map(|&i| pts2[i]).collect();
        assert_eq!(geo, geo2);
    }

    #[test]
    fn knn_single_patch_covers_cloud() {
        let pc = line_cloud();
        let gr = knn_group(&pc, 1, 11).unwrap();
        assert_eq!(gr.token_count(), 1);
        let mut members = gr.member_indices[0].clone();
        members.sort_unstable();
        assert_eq!(members, (0..=10).collect::<Vec<_>>());
        // the center belongs to its own patch with relative coordinate zero
        let ci = gr.center_indices[0];
        let pos = gr.member_indices[0].iter().position(|&m| m == ci).unwrap();
        assert_eq!(&gr.relative_coords[pos * 3..pos * 3 + 3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn knn_matches_exhaustive_oracle() {
        let mut rng = crate::random::rng_stream(77, 0);
        let pts: Vec<[f64; 3]> = (0..64)
            .map(|_| {
                [
                    crate::random::uniform_open01(&mut rng),
                    crate::random::uniform_open01(&mut rng),
                    crate::random::uniform_open01(&mut rng),
                ]
            })
            .collect();
        let pc = PointCloud::new(pts.clone());
        let gr = knn_group(&pc, 4, 16).unwrap();
        for (t, &ci) in gr.center_indices.iter().enumerate() {
            let c = pts[ci];
            let mut order: Vec<usize> = (0..64).collect();
            order.sort_by(|&a, &b| {
                squared_distance(&pts[a], &c)
                    .partial_cmp(&squared_distance(&pts[b], &c))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            assert_eq!(gr.member_indices[t], order[..16].to_vec());
        }
    }

    #[test]
    fn knn_rejects_oversized_k() {
        let pc = line_cloud();
        assert!(matches!(knn_group(&pc, 2, 12), Err(GeometryError::Parameter(_))));
    }

    #[test]
    fn knn_patches_cover_kth_neighbor_balls() {
        let mut rng = crate::random::rng_stream(31, 0);
        let pts: Vec<[f64; 3]> = (0..48)
            .map(|_| {
                [
                    crate::random::uniform_open01(&mut rng),
                    crate::random::uniform_open01(&mut rng),
                    crate::random::uniform_open01(&mut rng),
                ]
            })
            .collect();
        let pc = PointCloud::new(pts.clone());
        let gr = knn_group(&pc, 6, 8).unwrap();
        for (t, members) in gr.member_indices.iter().enumerate() {
            let c = pts[gr.center_indices[t]];
            let radius = members
                .iter()
                .map(|&m| squared_distance(&pts[m], &c))
                .fold(0.0, f64::max);
            for i in 0..pts.len() {
                if squared_distance(&pts[i], &c) < radius && !members.contains(&i) {
                    panic!("point {} strictly inside patch {} radius but missing", i, t);
                }
            }
        }
    }
}
