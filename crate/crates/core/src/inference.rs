//! Online per-class height models and MAP elevation prediction.
//!
//! Fused 3D points teach the system what each object class looks like in
//! the vertical. The sensor frame of a class's first sighting becomes the
//! class reference frame, and the sighting's anchor — its minimum range
//! placed at its median bearing — fixes a polar origin (range, bearing)
//! inside it. The class model is a conditional height distribution over
//! (range, bearing) cells offset from that origin, sized like the sonar's
//! own resolution, so one cell corresponds to roughly one image pixel
//! wherever the object sits. Every fused point registered into the class
//! frame multiplies its cell's distribution by a Gaussian likelihood
//! centered on the observed height and renormalizes — a recursive Bayesian
//! update whose running product sharpens as evidence accumulates.
//!
//! Later sightings, including ones where only the horizontal sonar saw the
//! object, are registered onto the class's accumulated 2D reference cloud
//! by ICP. A 2D-only return then borrows the height posterior of the cell
//! it lands in. Because one (range, bearing) can be generated both by an
//! object's underside and by its top, the maximum a-posteriori bin is taken
//! separately over each side of the sonar plane (`z <= 0` and `z > 0`), and
//! an estimate is only trusted when its bin probability clears a floor well
//! above the uniform level.

use crate::registration::{icp_2d, IcpConfig, Transform2d};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model format version {found}, expected {expected}")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("invalid height-model config: {0}")]
    InvalidConfig(String),
    #[error(
        "model file grid does not match the configured grid \
         (file: {file:?}, config: {config:?})"
    )]
    GridMismatch { file: GridParams, config: GridParams },
}

/// Geometry of the per-class grid and height histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    /// Cell size along the range-offset axis, meters.
    pub cell_range_size: f64,
    /// Cell size along the bearing-offset axis, radians.
    pub cell_angle_size: f64,
    /// Points farther than this from the anchor are not modeled.
    pub max_local_range: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub z_step: f64,
}

impl Default for GridParams {
    fn default() -> GridParams {
        GridParams {
            cell_range_size: 0.1,
            cell_angle_size: 1f64.to_radians(),
            max_local_range: 8.0,
            z_min: -5.0,
            z_max: 5.0,
            z_step: 0.05,
        }
    }
}

impl GridParams {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.cell_range_size <= 0.0 || self.cell_angle_size <= 0.0 {
            return Err(InferenceError::InvalidConfig(
                "cell sizes must be positive".into(),
            ));
        }
        if self.max_local_range <= 0.0 {
            return Err(InferenceError::InvalidConfig(
                "max_local_range must be positive".into(),
            ));
        }
        if self.z_max <= self.z_min || self.z_step <= 0.0 {
            return Err(InferenceError::InvalidConfig(
                "height interval is empty or step is non-positive".into(),
            ));
        }
        let bins = (self.z_max - self.z_min) / self.z_step;
        if (bins - bins.round()).abs() > 1e-6 {
            return Err(InferenceError::InvalidConfig(format!(
                "height interval [{}, {}] is not an integer number of {} m bins",
                self.z_min, self.z_max, self.z_step
            )));
        }
        Ok(())
    }

    pub fn z_bin_count(&self) -> usize {
        ((self.z_max - self.z_min) / self.z_step).round() as usize
    }

    pub fn z_of_bin(&self, i: usize) -> f64 {
        self.z_min + (i as f64 + 0.5) * self.z_step
    }

    /// Cell of a reference-frame point, indexed by its (range, bearing)
    /// offset from the class origin. Points beyond `max_local_range` of the
    /// anchor belong to no cell.
    fn cell_of(
        &self,
        p: (f64, f64),
        origin_range: f64,
        origin_bearing: f64,
    ) -> Option<(i32, i32)> {
        let (ox, oy) = (
            origin_range * origin_bearing.cos(),
            origin_range * origin_bearing.sin(),
        );
        if (p.0 - ox).hypot(p.1 - oy) >= self.max_local_range {
            return None;
        }
        let dr = p.0.hypot(p.1) - origin_range;
        let mut dtheta = p.1.atan2(p.0) - origin_bearing;
        if dtheta > std::f64::consts::PI {
            dtheta -= std::f64::consts::TAU;
        } else if dtheta <= -std::f64::consts::PI {
            dtheta += std::f64::consts::TAU;
        }
        Some((
            (dr / self.cell_range_size).floor() as i32,
            (dtheta / self.cell_angle_size).floor() as i32,
        ))
    }
}

/// Behavioral knobs for updating and querying the models.
#[derive(Debug, Clone, Copy)]
pub struct InferenceConfig {
    pub grid: GridParams,
    /// Std-dev of the Gaussian measurement likelihood, meters.
    pub sigma: f64,
    /// MAP acceptance floor, expressed as a multiple of `1 / z_bin_count`.
    pub map_threshold_bins: f64,
    /// Reference clouds stop growing at this many points.
    pub reference_cloud_cap: usize,
    /// Registrations with fewer points than this are not attempted.
    pub min_registration_points: usize,
    pub icp: IcpConfig,
}

impl Default for InferenceConfig {
    fn default() -> InferenceConfig {
        InferenceConfig {
            grid: GridParams::default(),
            sigma: 0.1,
            map_threshold_bins: 5.0,
            reference_cloud_cap: 5000,
            min_registration_points: 3,
            icp: IcpConfig::default(),
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        self.grid.validate()?;
        if self.sigma <= 0.0 {
            return Err(InferenceError::InvalidConfig("sigma must be positive".into()));
        }
        if self.map_threshold_bins <= 0.0 {
            return Err(InferenceError::InvalidConfig(
                "map_threshold_bins must be positive".into(),
            ));
        }
        if self.min_registration_points < 3 {
            return Err(InferenceError::InvalidConfig(
                "registration needs at least 3 points".into(),
            ));
        }
        Ok(())
    }

    /// Absolute probability a MAP bin must reach to be trusted.
    pub fn map_threshold(&self) -> f64 {
        self.map_threshold_bins / self.grid.z_bin_count() as f64
    }
}

/// Discrete distribution over height bins; starts uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightDistribution {
    probs: Vec<f64>,
}

impl HeightDistribution {
    pub fn uniform(bins: usize) -> HeightDistribution {
        HeightDistribution {
            probs: vec![1.0 / bins as f64; bins],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Multiply by a Gaussian likelihood centered on `z` and renormalize.
    /// If the product underflows to nothing (an observation irreconcilable
    /// with a sharply peaked posterior), the likelihood alone replaces the
    /// distribution rather than leaving it invalid.
    pub fn update(&mut self, z: f64, sigma: f64, grid: &GridParams) {
        let inv = 1.0 / (2.0 * sigma * sigma);
        let mut sum = 0.0;
        for (i, p) in self.probs.iter_mut().enumerate() {
            let d = grid.z_of_bin(i) - z;
            *p *= (-d * d * inv).exp();
            sum += *p;
        }
        if sum > 0.0 {
            for p in self.probs.iter_mut() {
                *p /= sum;
            }
        } else {
            let mut like_sum = 0.0;
            for (i, p) in self.probs.iter_mut().enumerate() {
                let d = grid.z_of_bin(i) - z;
                *p = (-d * d * inv).exp();
                like_sum += *p;
            }
            for p in self.probs.iter_mut() {
                *p /= like_sum;
            }
        }
    }

    /// MAP height on each side of the sonar plane. Within a branch the
    /// best bin is kept only if its probability clears `threshold`; ties go
    /// to the lower bin, and a never-updated (uniform) distribution clears
    /// nothing at any sensible threshold.
    pub fn map_estimate(&self, grid: &GridParams, threshold: f64) -> BranchEstimates {
        let mut nonpositive: Option<(f64, f64)> = None;
        let mut positive: Option<(f64, f64)> = None;
        for (i, &p) in self.probs.iter().enumerate() {
            let z = grid.z_of_bin(i);
            let slot = if z <= 0.0 {
                &mut nonpositive
            } else {
                &mut positive
            };
            if slot.map_or(true, |(_, bp)| p > bp) {
                *slot = Some((z, p));
            }
        }
        BranchEstimates {
            nonpositive: nonpositive.filter(|&(_, p)| p >= threshold),
            positive: positive.filter(|&(_, p)| p >= threshold),
        }
    }
}

/// At most one MAP height per side of the sonar plane, each as
/// `(height, bin probability)`. Objects crossing the plane legitimately
/// produce two: the same (range, bearing) cell can be echoed by surface
/// both below and above the sonar.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BranchEstimates {
    /// Best bin with `z <= 0`.
    pub nonpositive: Option<(f64, f64)>,
    /// Best bin with `z > 0`.
    pub positive: Option<(f64, f64)>,
}

impl BranchEstimates {
    pub fn is_empty(&self) -> bool {
        self.nonpositive.is_none() && self.positive.is_none()
    }

    /// The accepted estimates, non-positive branch first.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> {
        self.nonpositive.into_iter().chain(self.positive)
    }
}

/// One polar cell of a class model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightCell {
    pub distribution: HeightDistribution,
    pub observations: u64,
}

/// Everything learned about one object class.
#[derive(Debug, Clone)]
pub struct ClassModel {
    pub label: String,
    /// Polar coordinates of the class origin — the first sighting's anchor
    /// — in the reference frame. Cells are indexed relative to these.
    pub origin_range: f64,
    pub origin_bearing: f64,
    /// 2D points in the class frame that sightings register against.
    pub reference_cloud: Vec<(f64, f64)>,
    /// Sparse cells keyed by (range-offset index, bearing-offset index);
    /// BTreeMap keeps serialization order stable.
    pub cells: BTreeMap<(i32, i32), HeightCell>,
    pub update_count: u64,
    /// Fused points that landed outside the modeled grid.
    pub dropped_out_of_grid: u64,
}

impl ClassModel {
    pub fn new(label: impl Into<String>) -> ClassModel {
        ClassModel {
            label: label.into(),
            origin_range: 0.0,
            origin_bearing: 0.0,
            reference_cloud: Vec::new(),
            cells: BTreeMap::new(),
            update_count: 0,
            dropped_out_of_grid: 0,
        }
    }

    /// Register a sighting (2D points in the robot frame) into the class
    /// frame. The first sighting defines the frame: its own robot frame is
    /// adopted verbatim (an identity transform) and its anchor — minimum
    /// range at median bearing — becomes the class origin. Later sightings
    /// run ICP against the reference cloud, seeded by the translation that
    /// aligns their anchor onto the origin. With `grow`, aligned points
    /// join the reference cloud until the cap is reached.
    ///
    /// Returns the robot-to-class-frame transform, or `None` when the
    /// sighting is too small or registration does not converge.
    pub fn register(
        &mut self,
        points: &[(f64, f64)],
        grow: bool,
        config: &InferenceConfig,
    ) -> Option<Transform2d> {
        if points.len() < config.min_registration_points {
            return None;
        }
        let (ax, ay) = anchor_point(points);
        if self.reference_cloud.is_empty() {
            if !grow {
                return None;
            }
            self.origin_range = ax.hypot(ay);
            self.origin_bearing = ay.atan2(ax);
            let transform = Transform2d::identity();
            self.extend_cloud(points, &transform, config.reference_cloud_cap);
            return Some(transform);
        }

        let init = Transform2d {
            tx: self.origin_range * self.origin_bearing.cos() - ax,
            ty: self.origin_range * self.origin_bearing.sin() - ay,
            theta: 0.0,
        };
        let result = icp_2d(points, &self.reference_cloud, init, &config.icp);
        if !result.converged {
            return None;
        }
        if grow {
            self.extend_cloud(points, &result.transform, config.reference_cloud_cap);
        }
        Some(result.transform)
    }

    fn extend_cloud(&mut self, points: &[(f64, f64)], transform: &Transform2d, cap: usize) {
        for &p in points {
            if self.reference_cloud.len() >= cap {
                break;
            }
            self.reference_cloud.push(transform.apply(p));
        }
    }

    /// Feed fused 3D points (robot frame) through `transform` into the
    /// class frame and update the height cells they land in.
    pub fn update_heights(
        &mut self,
        points: &[(f64, f64, f64)],
        transform: &Transform2d,
        config: &InferenceConfig,
    ) {
        let bins = config.grid.z_bin_count();
        for &(x, y, z) in points {
            let local = transform.apply((x, y));
            match config
                .grid
                .cell_of(local, self.origin_range, self.origin_bearing)
            {
                Some(key) => {
                    let cell = self.cells.entry(key).or_insert_with(|| HeightCell {
                        distribution: HeightDistribution::uniform(bins),
                        observations: 0,
                    });
                    cell.distribution.update(z, config.sigma, &config.grid);
                    cell.observations += 1;
                    self.update_count += 1;
                }
                None => {
                    self.dropped_out_of_grid += 1;
                }
            }
        }
    }

    /// Per-branch MAP heights for each query point (robot frame). Points
    /// landing outside the grid or in never-updated cells get an empty
    /// estimate.
    pub fn predict_heights(
        &self,
        points: &[(f64, f64)],
        transform: &Transform2d,
        config: &InferenceConfig,
    ) -> Vec<BranchEstimates> {
        let threshold = config.map_threshold();
        points
            .iter()
            .map(|&p| {
                let local = transform.apply(p);
                config
                    .grid
                    .cell_of(local, self.origin_range, self.origin_bearing)
                    .and_then(|key| self.cells.get(&key))
                    .filter(|cell| cell.observations > 0)
                    .map(|cell| cell.distribution.map_estimate(&config.grid, threshold))
                    .unwrap_or_default()
            })
            .collect()
    }
}

/// Anchor of a sighting: its minimum observed range, placed at the median
/// bearing of the cluster.
fn anchor_point(points: &[(f64, f64)]) -> (f64, f64) {
    let r_min = points
        .iter()
        .map(|p| (p.0 * p.0 + p.1 * p.1).sqrt())
        .fold(f64::INFINITY, f64::min);
    let mut bearings: Vec<f64> = points.iter().map(|p| p.1.atan2(p.0)).collect();
    bearings.sort_by(|a, b| a.total_cmp(b));
    let median = bearings[bearings.len() / 2];
    (r_min * median.cos(), r_min * median.sin())
}

/// The collection of class models, as persisted between missions.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub grid: GridParams,
    pub models: Vec<ClassModel>,
}

impl ModelSet {
    pub fn new(grid: GridParams) -> ModelSet {
        ModelSet {
            grid,
            models: Vec::new(),
        }
    }

    /// Fetch or create the model for `label`.
    pub fn model_mut(&mut self, label: &str) -> &mut ClassModel {
        if let Some(idx) = self.models.iter().position(|m| m.label == label) {
            return &mut self.models[idx];
        }
        self.models.push(ClassModel::new(label));
        self.models.last_mut().unwrap()
    }

    pub fn model(&self, label: &str) -> Option<&ClassModel> {
        self.models.iter().find(|m| m.label == label)
    }

    pub fn load(path: &Path, config: &InferenceConfig) -> Result<ModelSet, InferenceError> {
        let text = std::fs::read_to_string(path)?;
        let file: ModelSetFile = serde_json::from_str(&text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(InferenceError::UnsupportedVersion {
                found: file.format_version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        if file.grid != config.grid {
            return Err(InferenceError::GridMismatch {
                file: file.grid,
                config: config.grid,
            });
        }
        Ok(ModelSet {
            grid: file.grid,
            models: file.models.into_iter().map(ClassModelFile::into_model).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), InferenceError> {
        let file = ModelSetFile {
            format_version: MODEL_FORMAT_VERSION,
            grid: self.grid,
            models: self.models.iter().map(ClassModelFile::from_model).collect(),
        };
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

// Serialized form: cells flattened to a list, since JSON maps need string
// keys.

#[derive(Debug, Serialize, Deserialize)]
struct ModelSetFile {
    format_version: u32,
    grid: GridParams,
    models: Vec<ClassModelFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassModelFile {
    label: String,
    origin_range: f64,
    origin_bearing: f64,
    reference_cloud: Vec<(f64, f64)>,
    cells: Vec<CellEntry>,
    update_count: u64,
    dropped_out_of_grid: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CellEntry {
    range_idx: i32,
    angle_idx: i32,
    observations: u64,
    probs: Vec<f64>,
}

impl ClassModelFile {
    fn from_model(m: &ClassModel) -> ClassModelFile {
        ClassModelFile {
            label: m.label.clone(),
            origin_range: m.origin_range,
            origin_bearing: m.origin_bearing,
            reference_cloud: m.reference_cloud.clone(),
            cells: m
                .cells
                .iter()
                .map(|(&(r, t), cell)| CellEntry {
                    range_idx: r,
                    angle_idx: t,
                    observations: cell.observations,
                    probs: cell.distribution.probs().to_vec(),
                })
                .collect(),
            update_count: m.update_count,
            dropped_out_of_grid: m.dropped_out_of_grid,
        }
    }

    fn into_model(self) -> ClassModel {
        ClassModel {
            label: self.label,
            origin_range: self.origin_range,
            origin_bearing: self.origin_bearing,
            reference_cloud: self.reference_cloud,
            cells: self
                .cells
                .into_iter()
                .map(|e| {
                    (
                        (e.range_idx, e.angle_idx),
                        HeightCell {
                            distribution: HeightDistribution { probs: e.probs },
                            observations: e.observations,
                        },
                    )
                })
                .collect(),
            update_count: self.update_count,
            dropped_out_of_grid: self.dropped_out_of_grid,
        }
    }
}
