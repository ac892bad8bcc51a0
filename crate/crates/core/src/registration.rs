//! Planar scan registration by iterative closest point.
//!
//! Keyframe detections are registered against an accumulated reference
//! cloud in the horizontal plane: the robot holds fixed depth with zero
//! roll and pitch, so a 2D rigid transform captures the full relative pose.
//! Each iteration matches every source point to its nearest reference
//! point through a uniform grid index, discards correspondences beyond
//! three times the median match distance, and refits the transform in
//! closed form. Iteration stops when the mean residual improves by less
//! than the tolerance; a step that makes the residual worse is reverted.
//!
//! Registration against a near-collinear point set cannot fix rotation, so
//! such fits are flagged as non-converged rather than trusted.

use std::collections::HashMap;

/// Rigid transform in the plane: rotation by `theta` then translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform2d {
    pub tx: f64,
    pub ty: f64,
    pub theta: f64,
}

impl Transform2d {
    pub fn identity() -> Transform2d {
        Transform2d {
            tx: 0.0,
            ty: 0.0,
            theta: 0.0,
        }
    }

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (
            c * p.0 - s * p.1 + self.tx,
            s * p.0 + c * p.1 + self.ty,
        )
    }

    /// `self` after `other`: `(self ∘ other)(p) = self(other(p))`.
    pub fn compose(&self, other: &Transform2d) -> Transform2d {
        let (s, c) = self.theta.sin_cos();
        Transform2d {
            tx: c * other.tx - s * other.ty + self.tx,
            ty: s * other.tx + c * other.ty + self.ty,
            theta: self.theta + other.theta,
        }
    }

    pub fn inverse(&self) -> Transform2d {
        let (s, c) = self.theta.sin_cos();
        Transform2d {
            tx: -(c * self.tx + s * self.ty),
            ty: -(-s * self.tx + c * self.ty),
            theta: -self.theta,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop when the mean residual improves by less than this (meters).
    pub tolerance: f64,
    /// Correspondences farther than this are never formed (meters).
    pub max_correspondence_distance: f64,
}

impl Default for IcpConfig {
    fn default() -> IcpConfig {
        IcpConfig {
            max_iterations: 50,
            tolerance: 1e-4,
            max_correspondence_distance: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IcpResult {
    /// Maps source points into the target frame.
    pub transform: Transform2d,
    /// False when iteration ran out, too few matches remained, or the
    /// matched geometry was too degenerate to constrain rotation.
    pub converged: bool,
    pub iterations: usize,
    /// Mean correspondence distance under the final transform.
    pub mean_residual: f64,
}

/// Register `source` onto `target`, starting from `init`.
pub fn icp_2d(
    source: &[(f64, f64)],
    target: &[(f64, f64)],
    init: Transform2d,
    config: &IcpConfig,
) -> IcpResult {
    let mut result = IcpResult {
        transform: init,
        converged: false,
        iterations: 0,
        mean_residual: f64::INFINITY,
    };
    if source.len() < 3 || target.len() < 3 || config.max_iterations == 0 {
        return result;
    }

    let index = GridIndex::build(target, config.max_correspondence_distance);
    let mut current = init;
    let mut prev_residual = f64::INFINITY;
    let mut degenerate = false;

    for iter in 0..config.max_iterations {
        // Match transformed source points to nearest reference points.
        let mut pairs: Vec<(usize, usize, f64)> = Vec::with_capacity(source.len());
        for (i, &p) in source.iter().enumerate() {
            let q = current.apply(p);
            if let Some((j, d)) = index.nearest(q, config.max_correspondence_distance) {
                pairs.push((i, j, d));
            }
        }
        if pairs.len() < 3 {
            result.iterations = iter;
            return result;
        }

        // Trim gross outliers at three times the median match distance.
        let mut dists: Vec<f64> = pairs.iter().map(|p| p.2).collect();
        dists.sort_by(|a, b| a.total_cmp(b));
        let median = dists[dists.len() / 2];
        let cutoff = (3.0 * median).max(1e-12);
        let kept: Vec<(usize, usize)> = pairs
            .iter()
            .filter(|p| p.2 <= cutoff)
            .map(|p| (p.0, p.1))
            .collect();
        if kept.len() < 3 {
            result.iterations = iter;
            return result;
        }

        let src_pts: Vec<(f64, f64)> = kept.iter().map(|&(i, _)| source[i]).collect();
        let tgt_pts: Vec<(f64, f64)> = kept.iter().map(|&(_, j)| target[j]).collect();
        degenerate = is_collinear(&src_pts) || is_collinear(&tgt_pts);

        let fitted = fit_rigid(&src_pts, &tgt_pts);
        let residual = mean_distance(&fitted, &src_pts, &tgt_pts);

        if residual > prev_residual {
            // The step made things worse; keep the previous transform.
            result.iterations = iter + 1;
            result.converged = !degenerate;
            result.mean_residual = prev_residual;
            return result;
        }
        current = fitted;
        result.transform = current;
        result.mean_residual = residual;
        result.iterations = iter + 1;

        if prev_residual - residual < config.tolerance {
            result.converged = !degenerate;
            return result;
        }
        prev_residual = residual;
    }

    // Ran out of iterations without the residual settling.
    let _ = degenerate;
    result.converged = false;
    result
}

/// Closed-form least-squares rigid transform mapping `src` onto `tgt`
/// (same length, index-aligned correspondences).
pub fn fit_rigid(src: &[(f64, f64)], tgt: &[(f64, f64)]) -> Transform2d {
    let sc = centroid(src);
    let tc = centroid(tgt);
    let mut dot = 0.0;
    let mut cross = 0.0;
    for (s, t) in src.iter().zip(tgt) {
        let sx = s.0 - sc.0;
        let sy = s.1 - sc.1;
        let tx = t.0 - tc.0;
        let ty = t.1 - tc.1;
        dot += sx * tx + sy * ty;
        cross += sx * ty - sy * tx;
    }
    let theta = if dot == 0.0 && cross == 0.0 {
        0.0
    } else {
        cross.atan2(dot)
    };
    let (s, c) = theta.sin_cos();
    Transform2d {
        tx: tc.0 - (c * sc.0 - s * sc.1),
        ty: tc.1 - (s * sc.0 + c * sc.1),
        theta,
    }
}

fn centroid(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let (sx, sy) = pts
        .iter()
        .fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    (sx / n, sy / n)
}

fn mean_distance(t: &Transform2d, src: &[(f64, f64)], tgt: &[(f64, f64)]) -> f64 {
    let total: f64 = src
        .iter()
        .zip(tgt)
        .map(|(s, g)| {
            let p = t.apply(*s);
            ((p.0 - g.0).powi(2) + (p.1 - g.1).powi(2)).sqrt()
        })
        .sum();
    total / src.len() as f64
}

/// True when the smaller principal variance of the set is negligible, i.e.
/// the points lie on (nearly) one line and cannot constrain rotation.
fn is_collinear(pts: &[(f64, f64)]) -> bool {
    let c = centroid(pts);
    let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
    for p in pts {
        let dx = p.0 - c.0;
        let dy = p.1 - c.1;
        xx += dx * dx;
        xy += dx * dy;
        yy += dy * dy;
    }
    let n = pts.len() as f64;
    xx /= n;
    xy /= n;
    yy /= n;
    // Smaller eigenvalue of the 2x2 covariance.
    let tr = xx + yy;
    let det = xx * yy - xy * xy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let lambda_min = tr / 2.0 - disc;
    lambda_min < 1e-6
}

/// Uniform-grid nearest-neighbor index over a fixed point set.
struct GridIndex {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
    points: Vec<(f64, f64)>,
}

impl GridIndex {
    /// Cell size tracks the search radius so ring scans stay shallow.
    fn build(points: &[(f64, f64)], max_dist: f64) -> GridIndex {
        let cell = (max_dist / 2.0).max(1e-6);
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i);
        }
        GridIndex {
            cell,
            buckets,
            points: points.to_vec(),
        }
    }

    fn key(p: &(f64, f64), cell: f64) -> (i64, i64) {
        ((p.0 / cell).floor() as i64, (p.1 / cell).floor() as i64)
    }

    /// Nearest stored point within `max_dist` of `q`, if any. Scans cell
    /// rings outward and keeps going one ring past the best candidate,
    /// which is enough because a ring at Chebyshev distance `r` only holds
    /// points at Euclidean distance greater than `(r-1) * cell`.
    fn nearest(&self, q: (f64, f64), max_dist: f64) -> Option<(usize, f64)> {
        let (kx, ky) = Self::key(&q, self.cell);
        let max_ring = (max_dist / self.cell).ceil() as i64 + 1;
        let mut best: Option<(usize, f64)> = None;
        for ring in 0..=max_ring {
            if let Some((_, d)) = best {
                if (ring - 1).max(0) as f64 * self.cell > d {
                    break;
                }
            }
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    if dx.abs().max(dy.abs()) != ring {
                        continue;
                    }
                    if let Some(bucket) = self.buckets.get(&(kx + dx, ky + dy)) {
                        for &i in bucket {
                            let p = self.points[i];
                            let d = ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
                            if d <= max_dist && best.map_or(true, |(_, bd)| d < bd) {
                                best = Some((i, d));
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
            .collect()
    }

    #[test]
    fn transform_compose_inverse_round_trip() {
        let a = Transform2d {
            tx: 1.0,
            ty: -2.0,
            theta: 0.7,
        };
        let p = (3.0, 4.0);
        let q = a.apply(p);
        let back = a.inverse().apply(q);
        assert!((back.0 - p.0).abs() < 1e-12 && (back.1 - p.1).abs() < 1e-12);

        let b = Transform2d {
            tx: -0.5,
            ty: 0.25,
            theta: -0.3,
        };
        let via_compose = a.compose(&b).apply(p);
        let sequential = a.apply(b.apply(p));
        assert!((via_compose.0 - sequential.0).abs() < 1e-12);
        assert!((via_compose.1 - sequential.1).abs() < 1e-12);
    }

    #[test]
    fn rigid_fit_matches_svd_oracle() {
        // Expected values computed with an SVD-based Procrustes solver on
        // this exact correspondence set (rotation 0.35 plus fixed noise).
        let src = [
            (0.0, 0.0),
            (1.0, 0.0),
            (1.0, 1.0),
            (0.0, 1.0),
            (2.0, 0.5),
            (0.5, 1.8),
        ];
        let tgt = [
            (0.62, -0.41000000000000003),
            (1.524372712847379, -0.02710219254454868),
            (1.2064749053919275, 0.9022705203028302),
            (0.23710219254454865, 0.5143727128473788),
            (2.337296521967032, 0.7654819713345921),
            (0.442470303003877, 1.4773197868530075),
        ];
        let fit = fit_rigid(&src, &tgt);
        assert!((fit.theta - 0.3601472415318152).abs() < 1e-12);
        assert!((fit.tx - 0.6119643543665003).abs() < 1e-12);
        assert!((fit.ty - (-0.3979407677514466)).abs() < 1e-12);
    }

    #[test]
    fn rigid_fit_is_exact_on_noise_free_pairs() {
        let src = random_cloud(40, 1);
        let truth = Transform2d {
            tx: 0.8,
            ty: -0.6,
            theta: 0.9,
        };
        let tgt: Vec<(f64, f64)> = src.iter().map(|&p| truth.apply(p)).collect();
        let fit = fit_rigid(&src, &tgt);
        assert!((fit.theta - truth.theta).abs() < 1e-12);
        assert!((fit.tx - truth.tx).abs() < 1e-12);
        assert!((fit.ty - truth.ty).abs() < 1e-12);
    }

    #[test]
    fn recovers_known_transform_from_identity_init() {
        let cloud = random_cloud(150, 7);
        let truth = Transform2d {
            tx: 0.3,
            ty: -0.2,
            theta: 0.15,
        };
        let target: Vec<(f64, f64)> = cloud.iter().map(|&p| truth.apply(p)).collect();
        let result = icp_2d(&cloud, &target, Transform2d::identity(), &IcpConfig::default());
        assert!(result.converged);
        assert!((result.transform.theta - truth.theta).abs() < 1e-3);
        assert!((result.transform.tx - truth.tx).abs() < 1e-3);
        assert!((result.transform.ty - truth.ty).abs() < 1e-3);
        assert!(result.mean_residual < 1e-3);
    }

    #[test]
    fn outliers_are_rejected_by_median_trim() {
        let cloud = random_cloud(200, 13);
        let truth = Transform2d {
            tx: -0.25,
            ty: 0.4,
            theta: -0.1,
        };
        let mut target: Vec<(f64, f64)> = cloud.iter().map(|&p| truth.apply(p)).collect();
        // A clump of spurious structure nowhere near the real cloud.
        for k in 0..20 {
            target.push((20.0 + 0.1 * k as f64, 18.0));
        }
        let result = icp_2d(&cloud, &target, Transform2d::identity(), &IcpConfig::default());
        assert!(result.converged);
        assert!((result.transform.theta - truth.theta).abs() < 5e-3);
        assert!((result.transform.tx - truth.tx).abs() < 5e-3);
        assert!((result.transform.ty - truth.ty).abs() < 5e-3);
    }

    #[test]
    fn collinear_geometry_is_not_trusted() {
        let src: Vec<(f64, f64)> = (0..30).map(|i| (0.1 * i as f64, 0.0)).collect();
        let tgt: Vec<(f64, f64)> = (0..30).map(|i| (0.1 * i as f64 + 0.05, 0.0)).collect();
        let result = icp_2d(&src, &tgt, Transform2d::identity(), &IcpConfig::default());
        assert!(!result.converged);
    }

    #[test]
    fn zero_iterations_returns_init_unconverged() {
        let cloud = random_cloud(30, 3);
        let cfg = IcpConfig {
            max_iterations: 0,
            ..IcpConfig::default()
        };
        let init = Transform2d {
            tx: 1.0,
            ty: 2.0,
            theta: 0.3,
        };
        let result = icp_2d(&cloud, &cloud, init, &cfg);
        assert!(!result.converged);
        assert_eq!(result.iterations, 0);
        assert_eq!(result.transform, init);
    }

    #[test]
    fn too_few_points_bails_out() {
        let result = icp_2d(
            &[(0.0, 0.0), (1.0, 1.0)],
            &[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)],
            Transform2d::identity(),
            &IcpConfig::default(),
        );
        assert!(!result.converged);
    }

    #[test]
    fn grid_nearest_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let points = random_cloud(400, 22);
        let index = GridIndex::build(&points, 2.0);
        for _ in 0..500 {
            let q = (rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0));
            let brute = points
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let d = ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
                    (i, d)
                })
                .filter(|(_, d)| *d <= 2.0)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            let fast = index.nearest(q, 2.0);
            match (brute, fast) {
                (None, None) => {}
                (Some((_, bd)), Some((_, fd))) => {
                    assert!((bd - fd).abs() < 1e-12, "distance mismatch {bd} vs {fd}");
                }
                other => panic!("oracle disagreement: {other:?}"),
            }
        }
    }

    #[test]
    fn registration_of_partial_overlap_converges() {
        // Target is a superset: the source sees only part of the structure.
        let full = random_cloud(300, 31);
        let truth = Transform2d {
            tx: 0.2,
            ty: 0.1,
            theta: 0.05,
        };
        let source: Vec<(f64, f64)> = full
            .iter()
            .filter(|p| p.0 > -1.0)
            .map(|&p| truth.inverse().apply(p))
            .collect();
        assert!(source.len() > 100);
        let result = icp_2d(&source, &full, Transform2d::identity(), &IcpConfig::default());
        assert!(result.converged);
        assert!((result.transform.theta - truth.theta).abs() < 2e-2);
        assert!((result.transform.tx - truth.tx).abs() < 5e-2);
        assert!((result.transform.ty - truth.ty).abs() < 5e-2);
    }
}
