//! Mission configuration: one TOML file naming every tunable constant.
//!
//! Every stage of the pipeline reads its knobs from a [`PipelineConfig`]
//! rather than from scattered literals, so a run is fully described by
//! (scene, mission, config, seed). Angles are written in degrees in the
//! file because that is how sonar data sheets quote them; they are
//! converted to radians on load. Omitted fields fall back to the defaults
//! baked into each module, and the whole tree is validated up front so a
//! bad value fails the run before any frame is rendered.

use crate::classification::ClassifierConfig;
use crate::detection::{CfarConfig, ClusterConfig};
use crate::fusion::FusionConfig;
use crate::inference::InferenceConfig;
use crate::sim::{RenderParams, SonarConfig, SonarOrientation};
use serde::Deserialize;
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: &str, reason: impl fmt::Display) -> ConfigError {
        ConfigError::Invalid {
            field: field.to_string(),
            reason: reason.to_string(),
        }
    }
}

/// What the mission accumulates into the map.
///
/// `Benchmark` registers only the fused (stereo-overlap) points — the
/// prior state of the art. `Semantic` additionally classifies clusters,
/// learns per-class height models from the fused points, and predicts
/// heights for the returns seen in 2D only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Benchmark,
    Semantic,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Benchmark => write!(f, "benchmark"),
            Mode::Semantic => write!(f, "semantic"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Mode, String> {
        match s {
            "benchmark" => Ok(Mode::Benchmark),
            "semantic" => Ok(Mode::Semantic),
            other => Err(format!(
                "unknown mode `{other}` (expected `benchmark` or `semantic`)"
            )),
        }
    }
}

/// Validated, radian-converted settings for an entire run.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub mode: Mode,
    /// Master seed; per-frame noise streams are derived from it.
    pub seed: u64,
    /// Cell size for the coverage metric, meters.
    pub voxel_size: f64,
    /// Class labels that are mapped when fused but never given height
    /// models (frame-spanning structure like seawalls).
    pub excluded_classes: Vec<String>,
    /// Clusters need at least this many features to be classified and
    /// considered for height inference.
    pub min_class_features: usize,
    /// Trained classifier to load; required in semantic mode.
    pub classifier_model: Option<PathBuf>,
    pub horizontal: SonarConfig,
    pub vertical: SonarConfig,
    pub render: RenderParams,
    /// Detector settings for the horizontal image.
    pub cfar: CfarConfig,
    /// Detector settings for the vertical image. Falls back to the
    /// horizontal settings unless overridden; thin vertical structure is
    /// diluted across the unmeasured 20° bearing aperture, so a lower
    /// threshold on this image is often appropriate.
    pub cfar_vertical: CfarConfig,
    pub clustering: ClusterConfig,
    pub fusion: FusionConfig,
    pub classifier: ClassifierConfig,
    /// Side length of the square intensity patch fed to the classifier.
    pub patch_size: usize,
    pub inference: InferenceConfig,
}

impl Default for PipelineConfig {
    fn default() -> PipelineConfig {
        PipelineConfig {
            mode: Mode::Semantic,
            seed: 7,
            voxel_size: 0.1,
            excluded_classes: vec!["seawall".to_string()],
            min_class_features: 8,
            classifier_model: None,
            horizontal: SonarConfig::default_horizontal(),
            vertical: SonarConfig::default_vertical(),
            render: RenderParams::default(),
            cfar: CfarConfig::default(),
            cfar_vertical: CfarConfig::default(),
            clustering: ClusterConfig::default(),
            fusion: FusionConfig::default(),
            classifier: ClassifierConfig::default(),
            patch_size: 40,
            inference: InferenceConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let raw: RawConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source: Box::new(source),
        })?;
        let config = raw.build();
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.horizontal.orientation != SonarOrientation::Horizontal {
            return Err(ConfigError::invalid(
                "sonar.horizontal",
                "orientation must be horizontal",
            ));
        }
        if self.vertical.orientation != SonarOrientation::Vertical {
            return Err(ConfigError::invalid(
                "sonar.vertical",
                "orientation must be vertical",
            ));
        }
        self.horizontal
            .validate()
            .map_err(|e| ConfigError::invalid("sonar.horizontal", e))?;
        self.vertical
            .validate()
            .map_err(|e| ConfigError::invalid("sonar.vertical", e))?;
        if self.render.rays_per_bin == 0 {
            return Err(ConfigError::invalid(
                "render.rays_per_bin",
                "must be at least 1",
            ));
        }
        if !(0.0..1.0).contains(&self.render.speckle_scale) {
            return Err(ConfigError::invalid(
                "render.speckle_scale",
                "must lie in [0, 1)",
            ));
        }
        if self.render.noise_floor < 0.0 || self.render.grazing_floor < 0.0 {
            return Err(ConfigError::invalid(
                "render",
                "noise_floor and grazing_floor must be non-negative",
            ));
        }
        let h_min_dim = self
            .horizontal
            .range_bin_count()
            .min(self.horizontal.angular_bin_count);
        let v_min_dim = self
            .vertical
            .range_bin_count()
            .min(self.vertical.angular_bin_count);
        for (name, cfar, min_dim) in [
            ("cfar", &self.cfar, h_min_dim),
            ("cfar_vertical", &self.cfar_vertical, v_min_dim),
        ] {
            if cfar.train_cells == 0 {
                return Err(ConfigError::invalid(
                    &format!("{name}.train_cells"),
                    "must be at least 1",
                ));
            }
            if cfar.threshold_factor <= 0.0 {
                return Err(ConfigError::invalid(
                    &format!("{name}.threshold_factor"),
                    "must be positive",
                ));
            }
            // The full CFAR window must fit in its image.
            let window = 2 * (cfar.train_cells + cfar.guard_cells) + 1;
            if window > min_dim {
                return Err(ConfigError::invalid(
                    name,
                    format!("window of {window} cells exceeds smallest image dimension {min_dim}"),
                ));
            }
        }
        if self.clustering.eps <= 0.0 {
            return Err(ConfigError::invalid("clustering.eps", "must be positive"));
        }
        if self.clustering.min_pts == 0 {
            return Err(ConfigError::invalid(
                "clustering.min_pts",
                "must be at least 1",
            ));
        }
        if self.fusion.patch_radius == 0 {
            return Err(ConfigError::invalid(
                "fusion.patch_radius",
                "must be at least 1",
            ));
        }
        if !(0.0..=1.0).contains(&self.fusion.min_confidence) {
            return Err(ConfigError::invalid(
                "fusion.min_confidence",
                "must lie in [0, 1]",
            ));
        }
        if self.classifier.samples == 0 {
            return Err(ConfigError::invalid(
                "classifier.samples",
                "must be at least 1",
            ));
        }
        if !(0.0..=1.0).contains(&self.classifier.accept_threshold) {
            return Err(ConfigError::invalid(
                "classifier.accept_threshold",
                "must lie in [0, 1]",
            ));
        }
        if self.classifier.perturbation_sigma < 0.0 {
            return Err(ConfigError::invalid(
                "classifier.perturbation_sigma",
                "must be non-negative",
            ));
        }
        if self.patch_size < 4 {
            return Err(ConfigError::invalid(
                "classifier.patch_size",
                "must be at least 4",
            ));
        }
        self.inference
            .validate()
            .map_err(|e| ConfigError::invalid("inference", e))?;
        if self.voxel_size <= 0.0 {
            return Err(ConfigError::invalid("voxel_size", "must be positive"));
        }
        if self.min_class_features == 0 {
            return Err(ConfigError::invalid(
                "min_class_features",
                "must be at least 1",
            ));
        }
        Ok(())
    }
}

// The on-disk shape: every field optional, angles in degrees. Kept separate
// from the runtime structs so the file format can stay stable if the
// internals move.

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: Option<Mode>,
    seed: Option<u64>,
    voxel_size: Option<f64>,
    excluded_classes: Option<Vec<String>>,
    min_class_features: Option<usize>,
    classifier_model: Option<PathBuf>,
    #[serde(default)]
    sonar: RawSonarPair,
    #[serde(default)]
    render: RawRender,
    #[serde(default)]
    cfar: RawCfar,
    cfar_vertical: Option<RawCfar>,
    #[serde(default)]
    clustering: RawClustering,
    #[serde(default)]
    fusion: RawFusion,
    #[serde(default)]
    classifier: RawClassifier,
    #[serde(default)]
    inference: RawInference,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSonarPair {
    #[serde(default)]
    horizontal: RawSonar,
    #[serde(default)]
    vertical: RawSonar,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSonar {
    max_range: Option<f64>,
    range_resolution: Option<f64>,
    aperture_deg: Option<f64>,
    angle_bins: Option<usize>,
    beamwidth_deg: Option<f64>,
}

impl RawSonar {
    fn apply(&self, mut base: SonarConfig) -> SonarConfig {
        if let Some(v) = self.max_range {
            base.max_range = v;
        }
        if let Some(v) = self.range_resolution {
            base.range_resolution = v;
        }
        if let Some(v) = self.aperture_deg {
            base.angular_aperture = v.to_radians();
        }
        if let Some(v) = self.angle_bins {
            base.angular_bin_count = v;
        }
        if let Some(v) = self.beamwidth_deg {
            base.beamwidth = v.to_radians();
        }
        base
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRender {
    rays_per_bin: Option<usize>,
    speckle_scale: Option<f64>,
    noise_floor: Option<f64>,
    grazing_floor: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCfar {
    train_cells: Option<usize>,
    guard_cells: Option<usize>,
    threshold_factor: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClustering {
    eps: Option<f64>,
    min_pts: Option<usize>,
    min_cluster_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFusion {
    patch_radius: Option<usize>,
    min_confidence: Option<f64>,
    max_range_bin_delta: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClassifier {
    patch_size: Option<usize>,
    samples: Option<usize>,
    accept_threshold: Option<f64>,
    perturbation_sigma: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInference {
    sigma: Option<f64>,
    map_threshold_bins: Option<f64>,
    reference_cloud_cap: Option<usize>,
    min_registration_points: Option<usize>,
    #[serde(default)]
    grid: RawGrid,
    #[serde(default)]
    icp: RawIcp,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    cell_range_size: Option<f64>,
    cell_angle_deg: Option<f64>,
    max_local_range: Option<f64>,
    z_min: Option<f64>,
    z_max: Option<f64>,
    z_step: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIcp {
    max_iterations: Option<usize>,
    tolerance: Option<f64>,
    max_correspondence_distance: Option<f64>,
}

impl RawConfig {
    fn build(self) -> PipelineConfig {
        let defaults = PipelineConfig::default();

        let mut render = RenderParams::default();
        set(&mut render.rays_per_bin, self.render.rays_per_bin);
        set(&mut render.speckle_scale, self.render.speckle_scale);
        set(&mut render.noise_floor, self.render.noise_floor);
        set(&mut render.grazing_floor, self.render.grazing_floor);

        let mut cfar = CfarConfig::default();
        set(&mut cfar.train_cells, self.cfar.train_cells);
        set(&mut cfar.guard_cells, self.cfar.guard_cells);
        set(&mut cfar.threshold_factor, self.cfar.threshold_factor);

        // The vertical detector inherits the horizontal settings, then takes
        // its own overrides on top.
        let mut cfar_vertical = cfar;
        if let Some(raw) = &self.cfar_vertical {
            set(&mut cfar_vertical.train_cells, raw.train_cells);
            set(&mut cfar_vertical.guard_cells, raw.guard_cells);
            set(&mut cfar_vertical.threshold_factor, raw.threshold_factor);
        }

        let mut clustering = ClusterConfig::default();
        set(&mut clustering.eps, self.clustering.eps);
        set(&mut clustering.min_pts, self.clustering.min_pts);
        set(&mut clustering.min_cluster_size, self.clustering.min_cluster_size);

        let mut fusion = FusionConfig::default();
        set(&mut fusion.patch_radius, self.fusion.patch_radius);
        set(&mut fusion.min_confidence, self.fusion.min_confidence);
        set(&mut fusion.max_range_bin_delta, self.fusion.max_range_bin_delta);

        let mut classifier = ClassifierConfig::default();
        set(&mut classifier.samples, self.classifier.samples);
        set(&mut classifier.accept_threshold, self.classifier.accept_threshold);
        set(
            &mut classifier.perturbation_sigma,
            self.classifier.perturbation_sigma,
        );

        let mut inference = InferenceConfig::default();
        set(&mut inference.sigma, self.inference.sigma);
        set(
            &mut inference.map_threshold_bins,
            self.inference.map_threshold_bins,
        );
        set(
            &mut inference.reference_cloud_cap,
            self.inference.reference_cloud_cap,
        );
        set(
            &mut inference.min_registration_points,
            self.inference.min_registration_points,
        );
        let grid = &mut inference.grid;
        set(&mut grid.cell_range_size, self.inference.grid.cell_range_size);
        if let Some(deg) = self.inference.grid.cell_angle_deg {
            grid.cell_angle_size = deg.to_radians();
        }
        set(&mut grid.max_local_range, self.inference.grid.max_local_range);
        set(&mut grid.z_min, self.inference.grid.z_min);
        set(&mut grid.z_max, self.inference.grid.z_max);
        set(&mut grid.z_step, self.inference.grid.z_step);
        let icp = &mut inference.icp;
        set(&mut icp.max_iterations, self.inference.icp.max_iterations);
        set(&mut icp.tolerance, self.inference.icp.tolerance);
        set(
            &mut icp.max_correspondence_distance,
            self.inference.icp.max_correspondence_distance,
        );

        PipelineConfig {
            mode: self.mode.unwrap_or(defaults.mode),
            seed: self.seed.unwrap_or(defaults.seed),
            voxel_size: self.voxel_size.unwrap_or(defaults.voxel_size),
            excluded_classes: self
                .excluded_classes
                .unwrap_or(defaults.excluded_classes),
            min_class_features: self
                .min_class_features
                .unwrap_or(defaults.min_class_features),
            classifier_model: self.classifier_model,
            horizontal: self.sonar.horizontal.apply(SonarConfig::default_horizontal()),
            vertical: self.sonar.vertical.apply(SonarConfig::default_vertical()),
            render,
            cfar,
            cfar_vertical,
            clustering,
            fusion,
            classifier,
            patch_size: self.classifier.patch_size.unwrap_or(defaults.patch_size),
            inference,
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
