//! Coordinate systems and measurement geometry.
//!
//! A sonar return lives in spherical coordinates (range, bearing, elevation)
//! in the robot frame; the map lives in a fixed Cartesian frame. Poses are
//! planar (surge, sway, yaw) at a fixed depth, so the rigid transform to the
//! map frame is a rotation about the vertical axis plus a 3D translation.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Wrap an angle into `[-pi, pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a >= PI {
        a = -PI;
    }
    a
}

/// A single sonar return in spherical coordinates.
///
/// `bearing` is the angle in the horizontal plane, `elevation` the angle out
/// of it. A raw image measures only one of the two; the other is filled in by
/// fusion or inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalMeasurement {
    /// Range in meters, non-negative.
    pub range: f64,
    /// Bearing in radians.
    pub bearing: f64,
    /// Elevation in radians.
    pub elevation: f64,
    /// Return intensity, non-negative.
    pub intensity: f64,
}

impl SphericalMeasurement {
    pub fn new(range: f64, bearing: f64, elevation: f64, intensity: f64) -> Self {
        debug_assert!(range >= 0.0, "range must be non-negative");
        Self {
            range,
            bearing,
            elevation,
            intensity,
        }
    }
}

/// A point in a Cartesian frame (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl CartesianPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance_to(&self, other: &CartesianPoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Robot pose: planar position and heading plus the fixed mission depth.
///
/// Roll and pitch are zero; missions run at constant depth, so the full rigid
/// transform is determined by these four numbers. Yaw is normalized to
/// `[-pi, pi)` on construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub depth: f64,
}

impl PlanarPose {
    pub fn new(x: f64, y: f64, yaw: f64, depth: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_angle(yaw),
            depth,
        }
    }

    pub fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            yaw: 0.0,
            depth: 0.0,
        }
    }
}

/// A return matched across both sonar images, fully defined in 3D.
///
/// Range is the mean of the two per-image ranges, bearing comes from the
/// horizontal image and elevation from the vertical one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedPoint {
    pub range: f64,
    pub bearing: f64,
    pub elevation: f64,
    /// Association confidence in `[0, 1]`.
    pub confidence: f64,
}

impl FusedPoint {
    /// The fused measurement as a Cartesian point in the robot frame.
    pub fn to_cartesian(&self) -> CartesianPoint {
        spherical_to_cartesian(&SphericalMeasurement::new(
            self.range,
            self.bearing,
            self.elevation,
            0.0,
        ))
    }
}

/// Convert a spherical measurement to Cartesian coordinates in the same frame.
///
/// `(x, y, z) = R (cos phi cos theta, cos phi sin theta, sin phi)`.
pub fn spherical_to_cartesian(m: &SphericalMeasurement) -> CartesianPoint {
    let cp = m.elevation.cos();
    CartesianPoint {
        x: m.range * cp * m.bearing.cos(),
        y: m.range * cp * m.bearing.sin(),
        z: m.range * m.elevation.sin(),
    }
}

/// Invert [`spherical_to_cartesian`]. Rejects the origin, where bearing and
/// elevation are undefined.
pub fn cartesian_to_spherical(p: &CartesianPoint) -> Option<SphericalMeasurement> {
    let range = p.norm();
    if range == 0.0 {
        return None;
    }
    let elevation = (p.z / range).clamp(-1.0, 1.0).asin();
    let bearing = p.y.atan2(p.x);
    Some(SphericalMeasurement::new(range, bearing, elevation, 0.0))
}

/// Express a robot-frame point in the fixed map frame: rotate by yaw about
/// the vertical axis, then translate by `(x, y, depth)`.
pub fn transform_to_map(pose: &PlanarPose, p: &CartesianPoint) -> CartesianPoint {
    let (s, c) = pose.yaw.sin_cos();
    CartesianPoint {
        x: c * p.x - s * p.y + pose.x,
        y: s * p.x + c * p.y + pose.y,
        z: p.z + pose.depth,
    }
}

/// Inverse of [`transform_to_map`]: express a map-frame point in the robot
/// frame of `pose`.
pub fn transform_to_robot(pose: &PlanarPose, p: &CartesianPoint) -> CartesianPoint {
    let (s, c) = pose.yaw.sin_cos();
    let dx = p.x - pose.x;
    let dy = p.y - pose.y;
    CartesianPoint {
        x: c * dx + s * dy,
        y: -s * dx + c * dy,
        z: p.z - pose.depth,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1e-9;

    #[test]
    fn spherical_to_cartesian_axis_aligned() {
        let p = spherical_to_cartesian(&SphericalMeasurement::new(1.0, 0.0, 0.0, 0.0));
        assert!((p.x - 1.0).abs() < EPS && p.y.abs() < EPS && p.z.abs() < EPS);

        let p = spherical_to_cartesian(&SphericalMeasurement::new(
            2.0,
            std::f64::consts::FRAC_PI_2,
            0.0,
            0.0,
        ));
        assert!(p.x.abs() < EPS && (p.y - 2.0).abs() < EPS && p.z.abs() < EPS);
    }

    #[test]
    fn spherical_to_cartesian_matches_high_precision_oracle() {
        // Frozen from a 30-digit evaluation of the conversion formula.
        let p = spherical_to_cartesian(&SphericalMeasurement::new(30.0, 0.3, -0.1, 0.0));
        assert!((p.x - 28.516913577661900709).abs() < 1e-12);
        assert!((p.y - 8.8213150965556756069).abs() < 1e-12);
        assert!((p.z - -2.9950024994048445692).abs() < 1e-12);
    }

    #[test]
    fn cartesian_to_spherical_known_values() {
        let m = cartesian_to_spherical(&CartesianPoint::new(0.0, 3.0, 0.0)).unwrap();
        assert!((m.range - 3.0).abs() < EPS);
        assert!((m.bearing - std::f64::consts::FRAC_PI_2).abs() < EPS);
        assert!(m.elevation.abs() < EPS);

        // (1, 1, sqrt 2) -> R = 2, theta = pi/4, phi = pi/4.
        let m = cartesian_to_spherical(&CartesianPoint::new(1.0, 1.0, 2f64.sqrt())).unwrap();
        assert!((m.range - 2.0).abs() < EPS);
        assert!((m.bearing - std::f64::consts::FRAC_PI_4).abs() < EPS);
        assert!((m.elevation - std::f64::consts::FRAC_PI_4).abs() < EPS);
    }

    #[test]
    fn cartesian_to_spherical_rejects_origin() {
        assert!(cartesian_to_spherical(&CartesianPoint::new(0.0, 0.0, 0.0)).is_none());
    }

    #[test]
    fn round_trip_over_sensor_frustum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let m = SphericalMeasurement::new(
                rng.random_range(0.1..30.0),
                rng.random_range(-1.2..1.2),
                rng.random_range(-0.4..0.4),
                0.0,
            );
            let p = spherical_to_cartesian(&m);
            let back = cartesian_to_spherical(&p).unwrap();
            let q = spherical_to_cartesian(&back);
            worst = worst.max(p.distance_to(&q));
        }
        assert!(worst < EPS, "worst round-trip deviation {worst}");
    }

    #[test]
    fn transform_identity_and_quarter_turn() {
        let p = CartesianPoint::new(5.0, 1.0, -2.0);
        let out = transform_to_map(&PlanarPose::identity(), &p);
        assert!(out.distance_to(&p) < EPS);

        let pose = PlanarPose::new(0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0);
        let out = transform_to_map(&pose, &CartesianPoint::new(1.0, 0.0, 0.0));
        assert!(out.distance_to(&CartesianPoint::new(0.0, 1.0, 0.0)) < EPS);
    }

    #[test]
    fn transform_matches_homogeneous_matrix_oracle() {
        // Frozen from an independent 4x4 homogeneous multiply.
        let pose = PlanarPose::new(10.0, -4.0, std::f64::consts::FRAC_PI_6, 1.5);
        let out = transform_to_map(&pose, &CartesianPoint::new(3.0, 2.0, 0.0));
        assert!((out.x - 11.59807621135331594).abs() < 1e-12);
        assert!((out.y - -0.76794919243112270647).abs() < 1e-12);
        assert!((out.z - 1.5).abs() < 1e-12);
    }

    #[test]
    fn transform_is_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pose = PlanarPose::new(3.2, -7.1, 2.4, 1.0);
        for _ in 0..200 {
            let a = CartesianPoint::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-5.0..5.0),
            );
            let b = CartesianPoint::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-5.0..5.0),
            );
            let d0 = a.distance_to(&b);
            let d1 = transform_to_map(&pose, &a).distance_to(&transform_to_map(&pose, &b));
            assert!((d0 - d1).abs() < EPS);
        }
    }

    #[test]
    fn transform_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let pose = PlanarPose::new(-2.0, 8.5, -1.9, 2.5);
        for _ in 0..200 {
            let p = CartesianPoint::new(
                rng.random_range(-30.0..30.0),
                rng.random_range(-30.0..30.0),
                rng.random_range(-6.0..6.0),
            );
            let there = transform_to_map(&pose, &p);
            let back = transform_to_robot(&pose, &there);
            assert!(back.distance_to(&p) < EPS);
        }
    }

    #[test]
    fn yaw_normalized_on_construction() {
        let pose = PlanarPose::new(0.0, 0.0, 3.0 * PI, 0.0);
        assert!(pose.yaw >= -PI && pose.yaw < PI);
        assert!((pose.yaw - normalize_angle(3.0 * PI)).abs() < EPS);
    }
}
