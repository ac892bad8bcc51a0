//! Synthetic imaging-sonar simulator.
//!
//! Renders polar intensity images of an analytic scene from a robot pose.
//! Each sonar is a fan: it measures range precisely along one angular axis
//! and integrates everything inside its beamwidth along the other. The
//! horizontal sonar resolves bearing and smears elevation; the vertical
//! sonar is the same unit rotated 90 degrees, so it resolves elevation and
//! smears bearing.
//!
//! Rendering casts a bundle of rays per angular bin, spread uniformly across
//! the unmeasured beamwidth. The first surface hit of each ray contributes
//! to the range bin of its hit distance, weighted by incidence angle (grazing
//! returns are dim). Multiplicative speckle and an additive noise floor are
//! applied per pixel afterwards, so the underlying signal is a deterministic
//! function of geometry and only the noise depends on the seed.

pub mod mission;
pub mod scene;

pub use mission::Mission;
pub use scene::{Ray, Scene, ScenePrimitive, Shape};

use crate::geometry::{spherical_to_cartesian, CartesianPoint, PlanarPose, SphericalMeasurement};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid mission: {0}")]
    InvalidMission(String),
    #[error("invalid sonar config: {0}")]
    InvalidConfig(String),
    #[error("scene has no primitives; surface distance is undefined")]
    EmptyScene,
}

/// Which angular axis the sonar resolves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SonarOrientation {
    /// Angular axis is bearing; elevation is integrated over the beamwidth.
    Horizontal,
    /// Angular axis is elevation; bearing is integrated over the beamwidth.
    Vertical,
}

/// Geometry of one sonar. Angles in radians, ranges in meters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SonarConfig {
    pub max_range: f64,
    pub range_resolution: f64,
    /// Full width of the measured angular axis.
    pub angular_aperture: f64,
    pub angular_bin_count: usize,
    /// Full width of the unmeasured (integrated) axis.
    pub beamwidth: f64,
    pub orientation: SonarOrientation,
}

impl SonarConfig {
    /// Default horizontal unit: 30 m range at 5 cm bins, 130-degree fan.
    pub fn default_horizontal() -> SonarConfig {
        SonarConfig {
            max_range: 30.0,
            range_resolution: 0.05,
            angular_aperture: 130f64.to_radians(),
            angular_bin_count: 256,
            beamwidth: 20f64.to_radians(),
            orientation: SonarOrientation::Horizontal,
        }
    }

    /// Default vertical unit: the horizontal unit rotated 90 degrees, with
    /// the measured axis clipped to the shared overlap fan.
    pub fn default_vertical() -> SonarConfig {
        SonarConfig {
            max_range: 30.0,
            range_resolution: 0.05,
            angular_aperture: 20f64.to_radians(),
            angular_bin_count: 64,
            beamwidth: 20f64.to_radians(),
            orientation: SonarOrientation::Vertical,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.max_range <= 0.0 || self.range_resolution <= 0.0 {
            return Err(SimError::InvalidConfig(
                "max_range and range_resolution must be positive".into(),
            ));
        }
        let bins = self.max_range / self.range_resolution;
        if (bins - bins.round()).abs() > 1e-6 {
            return Err(SimError::InvalidConfig(format!(
                "max_range {} is not an integer multiple of range_resolution {}",
                self.max_range, self.range_resolution
            )));
        }
        if self.angular_bin_count < 2 {
            return Err(SimError::InvalidConfig(
                "angular_bin_count must be at least 2".into(),
            ));
        }
        if self.angular_aperture <= 0.0 || self.angular_aperture > std::f64::consts::TAU {
            return Err(SimError::InvalidConfig(
                "angular_aperture must be in (0, 2*pi]".into(),
            ));
        }
        if self.beamwidth <= 0.0 || self.beamwidth > std::f64::consts::PI {
            return Err(SimError::InvalidConfig(
                "beamwidth must be in (0, pi]".into(),
            ));
        }
        Ok(())
    }

    pub fn range_bin_count(&self) -> usize {
        (self.max_range / self.range_resolution).round() as usize
    }

    /// Center range of bin `i`.
    pub fn range_of_bin(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.range_resolution
    }

    /// Center angle of bin `i`, measured from the fan axis.
    pub fn angle_of_bin(&self, i: usize) -> f64 {
        let step = self.angular_aperture / self.angular_bin_count as f64;
        -self.angular_aperture / 2.0 + (i as f64 + 0.5) * step
    }

    /// Bin containing `range`, if within the swath.
    pub fn bin_of_range(&self, range: f64) -> Option<usize> {
        if range < 0.0 || range >= self.max_range {
            return None;
        }
        Some((range / self.range_resolution) as usize)
    }

    /// Bin containing `angle`, if within the aperture.
    pub fn bin_of_angle(&self, angle: f64) -> Option<usize> {
        let half = self.angular_aperture / 2.0;
        if angle < -half || angle >= half {
            return None;
        }
        let step = self.angular_aperture / self.angular_bin_count as f64;
        Some(((angle + half) / step) as usize)
    }
}

/// Noise and beam-sampling knobs shared by both sonars.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RenderParams {
    /// Rays cast per angular bin across the unmeasured beamwidth.
    pub rays_per_bin: usize,
    /// Strength of multiplicative speckle in [0, 1): each pixel is scaled by
    /// `1 + scale * (e - 1)` with `e ~ Exp(1)`, which has unit mean.
    pub speckle_scale: f64,
    /// Mean of the additive exponential noise floor.
    pub noise_floor: f64,
    /// Minimum incidence weight, so grazing surfaces still return faintly.
    pub grazing_floor: f64,
}

impl Default for RenderParams {
    fn default() -> RenderParams {
        RenderParams {
            rays_per_bin: 32,
            speckle_scale: 0.3,
            noise_floor: 0.01,
            grazing_floor: 0.05,
        }
    }
}

impl RenderParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.rays_per_bin == 0 {
            return Err(SimError::InvalidConfig("rays_per_bin must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.speckle_scale) {
            return Err(SimError::InvalidConfig(
                "speckle_scale must be in [0, 1)".into(),
            ));
        }
        if self.noise_floor < 0.0 || self.grazing_floor < 0.0 {
            return Err(SimError::InvalidConfig(
                "noise_floor and grazing_floor must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Noise-free parameters, used by tests that check pure geometry.
    pub fn noiseless() -> RenderParams {
        RenderParams {
            speckle_scale: 0.0,
            noise_floor: 0.0,
            ..RenderParams::default()
        }
    }
}

/// Polar intensity image: rows are range bins (near to far), columns are
/// angular bins (negative to positive angle).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolarImage {
    pub config: SonarConfig,
    data: Vec<f64>,
}

impl PolarImage {
    pub fn zeros(config: SonarConfig) -> PolarImage {
        let n = config.range_bin_count() * config.angular_bin_count;
        PolarImage {
            config,
            data: vec![0.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.config.range_bin_count()
    }

    pub fn cols(&self) -> usize {
        self.config.angular_bin_count
    }

    #[inline]
    pub fn at(&self, range_bin: usize, angle_bin: usize) -> f64 {
        self.data[range_bin * self.cols() + angle_bin]
    }

    #[inline]
    pub fn at_mut(&mut self, range_bin: usize, angle_bin: usize) -> &mut f64 {
        let cols = self.cols();
        &mut self.data[range_bin * cols + angle_bin]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    /// Min-max normalized copy with intensities in [0, 1]. A flat image
    /// normalizes to all zeros.
    pub fn normalized(&self) -> PolarImage {
        let min = self.data.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = max - min;
        let data = if span <= 0.0 {
            vec![0.0; self.data.len()]
        } else {
            self.data.iter().map(|v| (v - min) / span).collect()
        };
        PolarImage {
            config: self.config,
            data,
        }
    }
}

/// Render the horizontal/vertical image pair for one keyframe.
///
/// The two images share one noise stream seeded from `seed`, so a fixed
/// (scene, pose, configs, seed) tuple always produces identical pixels.
pub fn render_pair(
    scene: &Scene,
    pose: &PlanarPose,
    h_config: &SonarConfig,
    v_config: &SonarConfig,
    params: &RenderParams,
    seed: u64,
) -> Result<(PolarImage, PolarImage), SimError> {
    h_config.validate()?;
    v_config.validate()?;
    params.validate()?;
    scene.validate()?;
    if h_config.orientation != SonarOrientation::Horizontal {
        return Err(SimError::InvalidConfig(
            "h_config must have horizontal orientation".into(),
        ));
    }
    if v_config.orientation != SonarOrientation::Vertical {
        return Err(SimError::InvalidConfig(
            "v_config must have vertical orientation".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = render_single(scene, pose, h_config, params, &mut rng);
    let v = render_single(scene, pose, v_config, params, &mut rng);
    Ok((h, v))
}

fn render_single(
    scene: &Scene,
    pose: &PlanarPose,
    config: &SonarConfig,
    params: &RenderParams,
    rng: &mut ChaCha8Rng,
) -> PolarImage {
    let mut image = PolarImage::zeros(*config);
    let origin = CartesianPoint::new(pose.x, pose.y, pose.depth);
    let (sin_yaw, cos_yaw) = pose.yaw.sin_cos();
    let ray_weight = 1.0 / params.rays_per_bin as f64;

    for angle_bin in 0..config.angular_bin_count {
        let primary = config.angle_of_bin(angle_bin);
        for k in 0..params.rays_per_bin {
            let secondary = -config.beamwidth / 2.0
                + (k as f64 + 0.5) * config.beamwidth / params.rays_per_bin as f64;
            let (bearing, elevation) = match config.orientation {
                SonarOrientation::Horizontal => (primary, secondary),
                SonarOrientation::Vertical => (secondary, primary),
            };
            // Unit direction in the robot frame, then rotated into the map.
            let local = spherical_to_cartesian(&SphericalMeasurement {
                range: 1.0,
                bearing,
                elevation,
                intensity: 0.0,
            });
            let dir = CartesianPoint::new(
                cos_yaw * local.x - sin_yaw * local.y,
                sin_yaw * local.x + cos_yaw * local.y,
                local.z,
            );
            let ray = Ray { origin, dir };
            if let Some(hit) = scene.first_hit(&ray, config.max_range) {
                if let Some(range_bin) = config.bin_of_range(hit.t) {
                    let incidence = (dir.x * hit.normal.x
                        + dir.y * hit.normal.y
                        + dir.z * hit.normal.z)
                        .abs();
                    *image.at_mut(range_bin, angle_bin) +=
                        ray_weight * incidence.max(params.grazing_floor);
                }
            }
        }
    }

    // Per-pixel noise in a fixed row-major order so renders are repeatable.
    for v in image.data.iter_mut() {
        let speckle: f64 = exp_sample(rng);
        let floor: f64 = exp_sample(rng);
        *v = *v * (1.0 + params.speckle_scale * (speckle - 1.0)) + params.noise_floor * floor;
    }
    image
}

/// Unit-mean exponential sample via inverse CDF.
fn exp_sample(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln()
}
