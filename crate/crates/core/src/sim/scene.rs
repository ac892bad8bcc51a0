//! Analytic scene description: primitives, ray intersection, and exact
//! surface distance.
//!
//! The scene doubles as the ground-truth oracle for map error metrics, so
//! every primitive carries both a first-hit ray test (for rendering) and an
//! exact point-to-surface distance (for evaluation).

use crate::geometry::CartesianPoint;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::SimError;

/// A ray in the map frame with unit direction.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: CartesianPoint,
    pub dir: CartesianPoint,
}

/// First intersection of a ray with a surface.
#[derive(Debug, Clone, Copy)]
pub struct RayHit {
    /// Distance along the ray, > 0.
    pub t: f64,
    /// Outward unit surface normal at the hit point.
    pub normal: CartesianPoint,
}

/// Analytic scene primitive. All primitives are z-axis aligned except the
/// box, which may be rotated about the vertical axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Vertical circular cylinder centered at `center`, spanning
    /// `center.z +- height/2`.
    Cylinder {
        center: CartesianPoint,
        radius: f64,
        height: f64,
    },
    /// Axis-aligned box rotated by `yaw` about the vertical through `center`;
    /// `extents` are full side lengths `[x, y, z]` in the box frame.
    #[serde(rename = "box")]
    Cuboid {
        center: CartesianPoint,
        extents: [f64; 3],
        yaw: f64,
    },
    /// Vertical planar rectangle from `start` to `end` in the horizontal
    /// plane, spanning `[z_min, z_max]`.
    Wall {
        start: [f64; 2],
        end: [f64; 2],
        z_min: f64,
        z_max: f64,
    },
}

/// A primitive with its semantic class tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenePrimitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub class: String,
}

/// Ground-truth environment: a set of tagged primitives in the map frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scene {
    pub water_depth: f64,
    pub primitives: Vec<ScenePrimitive>,
}

impl Scene {
    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Check primitive dimensions are positive.
    pub fn validate(&self) -> Result<(), SimError> {
        for (i, p) in self.primitives.iter().enumerate() {
            let ok = match &p.shape {
                Shape::Cylinder { radius, height, .. } => *radius > 0.0 && *height > 0.0,
                Shape::Cuboid { extents, .. } => extents.iter().all(|e| *e > 0.0),
                Shape::Wall {
                    start,
                    end,
                    z_min,
                    z_max,
                } => {
                    let len = ((end[0] - start[0]).powi(2) + (end[1] - start[1]).powi(2)).sqrt();
                    len > 0.0 && z_max > z_min
                }
            };
            if !ok {
                return Err(SimError::InvalidScene(format!(
                    "primitive {i} ({}) has non-positive dimensions",
                    p.class
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Scene, SimError> {
        let text = std::fs::read_to_string(path)?;
        let scene: Scene = serde_json::from_str(&text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// First hit of `ray` against any primitive, if one exists within
    /// `max_range`.
    pub fn first_hit(&self, ray: &Ray, max_range: f64) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        for p in &self.primitives {
            if let Some(hit) = intersect(&p.shape, ray) {
                if hit.t <= max_range && best.map_or(true, |b| hit.t < b.t) {
                    best = Some(hit);
                }
            }
        }
        best
    }

    /// Exact minimum Euclidean distance from `p` to the union of primitive
    /// surfaces. Errors on an empty scene, where the metric is undefined.
    pub fn distance_to(&self, p: &CartesianPoint) -> Result<f64, SimError> {
        if self.is_empty() {
            return Err(SimError::EmptyScene);
        }
        Ok(self
            .primitives
            .iter()
            .map(|prim| surface_distance(&prim.shape, p))
            .fold(f64::INFINITY, f64::min))
    }
}

/// Distance from `p` to the boundary surface of `shape` (zero on the
/// surface, positive inside and outside).
pub fn surface_distance(shape: &Shape, p: &CartesianPoint) -> f64 {
    match shape {
        Shape::Cylinder {
            center,
            radius,
            height,
        } => {
            let rho = ((p.x - center.x).powi(2) + (p.y - center.y).powi(2)).sqrt();
            let dr = rho - radius;
            let dz = (p.z - center.z).abs() - height / 2.0;
            let outside = (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
            let inside = dr.max(dz).min(0.0);
            (outside + inside).abs()
        }
        Shape::Cuboid {
            center,
            extents,
            yaw,
        } => {
            let (s, c) = yaw.sin_cos();
            let dx = p.x - center.x;
            let dy = p.y - center.y;
            let local = [c * dx + s * dy, -s * dx + c * dy, p.z - center.z];
            let q = [
                local[0].abs() - extents[0] / 2.0,
                local[1].abs() - extents[1] / 2.0,
                local[2].abs() - extents[2] / 2.0,
            ];
            let outside = q
                .iter()
                .map(|v| v.max(0.0).powi(2))
                .sum::<f64>()
                .sqrt();
            let inside = q[0].max(q[1]).max(q[2]).min(0.0);
            (outside + inside).abs()
        }
        Shape::Wall {
            start,
            end,
            z_min,
            z_max,
        } => {
            let wx = end[0] - start[0];
            let wy = end[1] - start[1];
            let len2 = wx * wx + wy * wy;
            let s = (((p.x - start[0]) * wx + (p.y - start[1]) * wy) / len2).clamp(0.0, 1.0);
            let qx = start[0] + s * wx;
            let qy = start[1] + s * wy;
            let qz = p.z.clamp(*z_min, *z_max);
            ((p.x - qx).powi(2) + (p.y - qy).powi(2) + (p.z - qz).powi(2)).sqrt()
        }
    }
}

/// First positive intersection of `ray` with `shape`.
pub fn intersect(shape: &Shape, ray: &Ray) -> Option<RayHit> {
    match shape {
        Shape::Cylinder {
            center,
            radius,
            height,
        } => intersect_cylinder(ray, center, *radius, *height),
        Shape::Cuboid {
            center,
            extents,
            yaw,
        } => intersect_cuboid(ray, center, extents, *yaw),
        Shape::Wall {
            start,
            end,
            z_min,
            z_max,
        } => intersect_wall(ray, start, end, *z_min, *z_max),
    }
}

fn intersect_cylinder(
    ray: &Ray,
    center: &CartesianPoint,
    radius: f64,
    height: f64,
) -> Option<RayHit> {
    let z_lo = center.z - height / 2.0;
    let z_hi = center.z + height / 2.0;
    let ox = ray.origin.x - center.x;
    let oy = ray.origin.y - center.y;
    let (dx, dy, dz) = (ray.dir.x, ray.dir.y, ray.dir.z);

    let mut best: Option<RayHit> = None;
    let mut consider = |t: f64, normal: CartesianPoint| {
        if t > 1e-9 && best.map_or(true, |b| t < b.t) {
            best = Some(RayHit { t, normal });
        }
    };

    // Lateral surface: quadratic in the horizontal projection.
    let a = dx * dx + dy * dy;
    if a > 1e-12 {
        let b = 2.0 * (ox * dx + oy * dy);
        let c = ox * ox + oy * oy - radius * radius;
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                let z = ray.origin.z + t * dz;
                if z >= z_lo && z <= z_hi {
                    let nx = (ox + t * dx) / radius;
                    let ny = (oy + t * dy) / radius;
                    consider(t, CartesianPoint::new(nx, ny, 0.0));
                }
            }
        }
    }

    // End caps.
    if dz.abs() > 1e-12 {
        for (z_plane, nz) in [(z_lo, -1.0), (z_hi, 1.0)] {
            let t = (z_plane - ray.origin.z) / dz;
            let hx = ox + t * dx;
            let hy = oy + t * dy;
            if hx * hx + hy * hy <= radius * radius {
                consider(t, CartesianPoint::new(0.0, 0.0, nz));
            }
        }
    }

    best
}

fn intersect_cuboid(
    ray: &Ray,
    center: &CartesianPoint,
    extents: &[f64; 3],
    yaw: f64,
) -> Option<RayHit> {
    let (s, c) = yaw.sin_cos();
    let dx = ray.origin.x - center.x;
    let dy = ray.origin.y - center.y;
    let o = [c * dx + s * dy, -s * dx + c * dy, ray.origin.z - center.z];
    let d = [
        c * ray.dir.x + s * ray.dir.y,
        -s * ray.dir.x + c * ray.dir.y,
        ray.dir.z,
    ];

    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut enter_axis = 0usize;
    for axis in 0..3 {
        let half = extents[axis] / 2.0;
        if d[axis].abs() < 1e-12 {
            if o[axis].abs() > half {
                return None;
            }
            continue;
        }
        let t0 = (-half - o[axis]) / d[axis];
        let t1 = (half - o[axis]) / d[axis];
        let (near, far) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
        if near > t_enter {
            t_enter = near;
            enter_axis = axis;
        }
        t_exit = t_exit.min(far);
    }
    if t_enter > t_exit || t_enter <= 1e-9 {
        return None;
    }

    // Normal in the box frame, then rotated back to the map frame.
    let mut n = [0.0; 3];
    n[enter_axis] = if d[enter_axis] > 0.0 { -1.0 } else { 1.0 };
    Some(RayHit {
        t: t_enter,
        normal: CartesianPoint::new(c * n[0] - s * n[1], s * n[0] + c * n[1], n[2]),
    })
}

fn intersect_wall(
    ray: &Ray,
    start: &[f64; 2],
    end: &[f64; 2],
    z_min: f64,
    z_max: f64,
) -> Option<RayHit> {
    let wx = end[0] - start[0];
    let wy = end[1] - start[1];
    let len = (wx * wx + wy * wy).sqrt();
    // In-plane normal of the vertical rectangle.
    let nx = -wy / len;
    let ny = wx / len;

    let denom = nx * ray.dir.x + ny * ray.dir.y;
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = (nx * (start[0] - ray.origin.x) + ny * (start[1] - ray.origin.y)) / denom;
    if t <= 1e-9 {
        return None;
    }
    let hx = ray.origin.x + t * ray.dir.x;
    let hy = ray.origin.y + t * ray.dir.y;
    let hz = ray.origin.z + t * ray.dir.z;
    let s = ((hx - start[0]) * wx + (hy - start[1]) * wy) / (len * len);
    if !(0.0..=1.0).contains(&s) || hz < z_min || hz > z_max {
        return None;
    }
    let sign = if denom > 0.0 { -1.0 } else { 1.0 };
    Some(RayHit {
        t,
        normal: CartesianPoint::new(sign * nx, sign * ny, 0.0),
    })
}
