//! End-to-end mission orchestration.
//!
//! A mission walks a list of keyframe poses through a fixed scene. At each
//! keyframe the pair of sonar images is rendered, thresholded, and fused;
//! the fused 3D points always enter the global map. In semantic mode each
//! detected cluster is additionally classified, fused points teach the
//! matching class height model, and the model predicts heights for the
//! cluster's 2D-only returns — those predictions enter the map too, tagged
//! as inferred. Benchmark mode stops after fusion, reproducing the
//! overlap-only baseline the semantic pipeline is measured against.
//!
//! Per-keyframe failures are recorded as warnings and the mission moves on;
//! only setup problems (unreadable files, invalid config, a missing
//! classifier in semantic mode) abort a run. All randomness — simulated
//! noise and classifier vote jitter — derives from the config seed, so a
//! (scene, mission, config) triple always reproduces its outputs bit for
//! bit.

use crate::classification::{classify, extract_patch, train, ClassifierError, ClassifierModel};
use crate::config::{Mode, PipelineConfig};
use crate::detection::{
    cfar_detect, cluster_features, drop_border_features, filter_clusters, Cluster,
};
use crate::fusion::fuse_frame;
use crate::geometry::{
    spherical_to_cartesian, transform_to_map, CartesianPoint, PlanarPose, SphericalMeasurement,
};
use crate::inference::{InferenceError, ModelSet};
use crate::mapping::{ErrorStats, GlobalMap, MapPoint, MappingError, Provenance};
use crate::sim::{render_pair, Mission, Scene, SimError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Detection(#[from] crate::detection::DetectionError),
    #[error(transparent)]
    Fusion(#[from] crate::fusion::FusionError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error("semantic mode needs a classifier model (set `classifier_model` in the config)")]
    MissingClassifier,
    #[error("classifier training produced no examples for class {0}")]
    NoTrainingExamples(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot serialize report: {0}")]
    Json(#[from] serde_json::Error),
}

/// Everything a mission leaves behind.
pub struct MissionOutput {
    pub map: GlobalMap,
    pub models: ModelSet,
    pub report: MissionReport,
}

/// The metrics half of a mission, serialized as the JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct MissionReport {
    pub mode: String,
    pub seed: u64,
    pub keyframes: usize,
    pub frames_processed: usize,
    pub fused_points: usize,
    pub inferred_points: usize,
    pub voxel_size: f64,
    pub voxel_count: usize,
    pub error: ErrorStats,
    pub classes: Vec<ClassReport>,
    pub warnings: Vec<String>,
}

/// Per-class activity over one mission.
#[derive(Debug, Clone, Serialize)]
pub struct ClassReport {
    pub label: String,
    /// Clusters classified to this label.
    pub sightings: usize,
    /// Fused points that updated the height model.
    pub height_updates: usize,
    /// Inferred 3D points emitted from the model.
    pub predicted_points: usize,
}

impl MissionOutput {
    /// Write the PLY / CSV point clouds and the JSON report into `dir`,
    /// named by mode so both halves of a comparison can share a directory.
    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir)?;
        let mode = &self.report.mode;
        self.map.write_ply(&dir.join(format!("map_{mode}.ply")))?;
        self.map.write_csv(&dir.join(format!("map_{mode}.csv")))?;
        let json = serde_json::to_string_pretty(&self.report)?;
        std::fs::write(dir.join(format!("report_{mode}.json")), json + "\n")?;
        Ok(())
    }
}

/// Run one mission in the mode set by `config.mode`.
///
/// `classifier` may be `None` in benchmark mode, which never classifies.
pub fn run_mission(
    scene: &Scene,
    mission: &Mission,
    config: &PipelineConfig,
    classifier: Option<&ClassifierModel>,
) -> Result<MissionOutput, PipelineError> {
    scene.validate()?;
    mission.validate()?;
    if config.mode == Mode::Semantic && classifier.is_none() {
        return Err(PipelineError::MissingClassifier);
    }

    let mut map = GlobalMap::default();
    let mut models = ModelSet::new(config.inference.grid);
    let mut stats: BTreeMap<String, ClassReport> = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut frames_processed = 0usize;

    for (index, pose) in mission.poses.iter().enumerate() {
        match process_keyframe(
            scene,
            pose,
            index,
            config,
            classifier,
            &mut models,
            &mut map,
            &mut stats,
        ) {
            Ok(()) => frames_processed += 1,
            Err(e) => warnings.push(format!("keyframe {index}: {e}")),
        }
    }

    let fused_points = map.count_by_provenance(Provenance::Fused);
    let inferred_points = map.count_by_provenance(Provenance::Inferred);
    let error = if map.is_empty() {
        ErrorStats::from_samples(&mut [])
    } else {
        map.error_against(scene)?
    };
    let voxel_count = map.voxel_count(config.voxel_size)?;

    let report = MissionReport {
        mode: config.mode.to_string(),
        seed: config.seed,
        keyframes: mission.poses.len(),
        frames_processed,
        fused_points,
        inferred_points,
        voxel_size: config.voxel_size,
        voxel_count,
        error,
        classes: stats.into_values().collect(),
        warnings,
    };
    Ok(MissionOutput {
        map,
        models,
        report,
    })
}

/// Render, detect, fuse, and (in semantic mode) learn and predict for one
/// keyframe. Any error here skips the frame, not the mission.
#[allow(clippy::too_many_arguments)]
fn process_keyframe(
    scene: &Scene,
    pose: &PlanarPose,
    index: usize,
    config: &PipelineConfig,
    classifier: Option<&ClassifierModel>,
    models: &mut ModelSet,
    map: &mut GlobalMap,
    stats: &mut BTreeMap<String, ClassReport>,
) -> Result<(), PipelineError> {
    let seed = frame_seed(config.seed, index);
    let (h_image, v_image) = render_pair(
        scene,
        pose,
        &config.horizontal,
        &config.vertical,
        &config.render,
        seed,
    )?;
    let h_all =
        drop_border_features(cfar_detect(&h_image, &config.cfar)?, &h_image, &config.cfar);
    let v_all = drop_border_features(
        cfar_detect(&v_image, &config.cfar_vertical)?,
        &v_image,
        &config.cfar_vertical,
    );
    // Lone CFAR alarms in empty water pair across images at coincident
    // range bins and fabricate 3D points, so both feature sets are fused
    // only after DBSCAN's noise rejection: a real return has dense company
    // in its own image, an isolated alarm does not.
    let clusters = filter_clusters(
        cluster_features(&h_all, &config.clustering),
        config.clustering.min_cluster_size,
    );
    let v_clusters = filter_clusters(
        cluster_features(&v_all, &config.clustering),
        config.clustering.min_cluster_size,
    );
    let h_features: Vec<_> = clusters.iter().flat_map(|c| c.features.iter().copied()).collect();
    let v_features: Vec<_> = v_clusters
        .iter()
        .flat_map(|c| c.features.iter().copied())
        .collect();
    let fusion = fuse_frame(&h_image, &v_image, &h_features, &v_features, &config.fusion)?;

    // fused_of_feature[i] = index into fusion.fused for horizontal feature
    // i, if it fused. Clusters hold feature copies, so pixel coordinates
    // bridge back to feature indices.
    let mut fused_of_feature: Vec<Option<usize>> = vec![None; h_features.len()];
    for (fi, det) in fusion.fused.iter().enumerate() {
        fused_of_feature[det.h_index] = Some(fi);
    }
    let h_index_of_pixel: HashMap<(usize, usize), usize> = h_features
        .iter()
        .enumerate()
        .map(|(i, f)| ((f.range_bin, f.angle_bin), i))
        .collect();

    let semantic = config.mode == Mode::Semantic;
    let mut cluster_of_pixel: HashMap<(usize, usize), usize> = HashMap::new();
    let mut labels: Vec<Option<String>> = Vec::new();
    if semantic {
        for (ci, cluster) in clusters.iter().enumerate() {
            for f in &cluster.features {
                cluster_of_pixel.insert((f.range_bin, f.angle_bin), ci);
            }
        }
        // One jitter stream per frame keeps classification deterministic.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_C1A5_51F1_ED00);
        let model = classifier.expect("checked by run_mission");
        for cluster in &clusters {
            if cluster.len() < config.min_class_features {
                labels.push(None);
                continue;
            }
            let label = extract_patch(&h_image, cluster, config.patch_size)
                .map(|patch| classify(model, &patch, &config.classifier, &mut rng).label)
                .unwrap_or(None);
            labels.push(label);
        }
    }

    // Every fused point maps, in both modes; the class tag rides along when
    // the pixel belongs to a labeled cluster.
    for det in &fusion.fused {
        let f = &h_features[det.h_index];
        let class = cluster_of_pixel
            .get(&(f.range_bin, f.angle_bin))
            .and_then(|&ci| labels[ci].clone());
        let local = det.point.to_cartesian();
        map.push(MapPoint {
            position: transform_to_map(pose, &local),
            provenance: Provenance::Fused,
            confidence: det.point.confidence,
            keyframe: index,
            class,
        });
    }

    if !semantic {
        return Ok(());
    }

    for (ci, cluster) in clusters.iter().enumerate() {
        let Some(label) = labels[ci].clone() else {
            continue;
        };
        let entry = stats.entry(label.clone()).or_insert_with(|| ClassReport {
            label: label.clone(),
            sightings: 0,
            height_updates: 0,
            predicted_points: 0,
        });
        entry.sightings += 1;
        if config.excluded_classes.contains(&label) {
            continue;
        }

        // Partition the cluster into members fused this frame and members
        // seen only in 2D.
        let mut fused_3d: Vec<(f64, f64, f64)> = Vec::new();
        let mut flat_queries: Vec<(f64, f64)> = Vec::new();
        let mut flat_features: Vec<(f64, f64)> = Vec::new(); // (range, bearing)
        for f in &cluster.features {
            let hi = h_index_of_pixel[&(f.range_bin, f.angle_bin)];
            if let Some(fi) = fused_of_feature[hi] {
                let c = fusion.fused[fi].point.to_cartesian();
                fused_3d.push((c.x, c.y, c.z));
            } else {
                flat_queries.push((f.range * f.angle.cos(), f.range * f.angle.sin()));
                flat_features.push((f.range, f.angle));
            }
        }

        let model = models.model_mut(&label);
        let grow = !fused_3d.is_empty();
        let cluster_2d: Vec<(f64, f64)> = cluster
            .features
            .iter()
            .map(|f| (f.range * f.angle.cos(), f.range * f.angle.sin()))
            .collect();
        let Some(transform) = model.register(&cluster_2d, grow, &config.inference) else {
            continue;
        };
        if grow {
            model.update_heights(&fused_3d, &transform, &config.inference);
            entry.height_updates += fused_3d.len();
        }
        if model.update_count == 0 || flat_queries.is_empty() {
            continue;
        }
        let estimates = model.predict_heights(&flat_queries, &transform, &config.inference);
        let beam = config.horizontal.beamwidth / 2.0;
        for ((range, bearing), estimate) in flat_features.iter().zip(&estimates) {
            for (z, probability) in estimate.iter() {
                let Some(local) = predicted_point(*range, *bearing, z, beam) else {
                    continue;
                };
                map.push(MapPoint {
                    position: transform_to_map(pose, &local),
                    provenance: Provenance::Inferred,
                    confidence: probability,
                    keyframe: index,
                    class: Some(label.clone()),
                });
                entry.predicted_points += 1;
            }
        }
    }
    Ok(())
}

/// Lift a 2D return to 3D given a predicted height: the elevation angle is
/// the one that puts a range-`range` return at height `z`, so the result
/// keeps `x^2 + y^2 + z^2 = range^2`. Heights taller than the range itself
/// have no geometric solution, and heights implying an elevation outside
/// `max_elevation` are rejected too: the return was observed inside the
/// sonar's vertical beam, so a completion that puts it outside the beam
/// contradicts the measurement (and drags the point off the surface, since
/// tilting up the constant-range sphere shrinks the horizontal footprint).
pub fn predicted_point(
    range: f64,
    bearing: f64,
    z: f64,
    max_elevation: f64,
) -> Option<CartesianPoint> {
    if !(range > 0.0) || z.abs() > range {
        return None;
    }
    let elevation = (z / range).asin();
    if elevation.abs() > max_elevation {
        return None;
    }
    Some(spherical_to_cartesian(&SphericalMeasurement::new(
        range, bearing, elevation, 1.0,
    )))
}

/// Decorrelate per-frame noise streams from one master seed (SplitMix64).
fn frame_seed(master: u64, index: usize) -> u64 {
    let mut z = master.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Both modes over the same inputs, sharing every seed, so the difference
/// between the halves is exactly the semantic machinery.
pub struct Comparison {
    pub benchmark: MissionOutput,
    pub semantic: MissionOutput,
}

#[derive(Serialize)]
struct ComparisonReport<'a> {
    benchmark: &'a MissionReport,
    semantic: &'a MissionReport,
    voxel_ratio: f64,
}

impl Comparison {
    /// Semantic-to-benchmark coverage ratio; infinite benchmark emptiness
    /// degrades to the semantic count.
    pub fn voxel_ratio(&self) -> f64 {
        if self.benchmark.report.voxel_count == 0 {
            self.semantic.report.voxel_count as f64
        } else {
            self.semantic.report.voxel_count as f64 / self.benchmark.report.voxel_count as f64
        }
    }

    /// Write both runs' artifacts plus a side-by-side JSON into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        self.benchmark.write(dir)?;
        self.semantic.write(dir)?;
        let report = ComparisonReport {
            benchmark: &self.benchmark.report,
            semantic: &self.semantic.report,
            voxel_ratio: self.voxel_ratio(),
        };
        let json = serde_json::to_string_pretty(&report)?;
        std::fs::write(dir.join("comparison.json"), json + "\n")?;
        Ok(())
    }

    /// Human-readable summary table.
    pub fn table(&self) -> String {
        let b = &self.benchmark.report;
        let s = &self.semantic.report;
        let mut out = String::new();
        out.push_str(&format!(
            "{:<24} {:>12} {:>12}\n",
            "metric", "benchmark", "semantic"
        ));
        let mut row = |name: &str, bv: String, sv: String| {
            out.push_str(&format!("{name:<24} {bv:>12} {sv:>12}\n"));
        };
        row(
            &format!("voxels ({:.2} m)", b.voxel_size),
            b.voxel_count.to_string(),
            s.voxel_count.to_string(),
        );
        row(
            "fused points",
            b.fused_points.to_string(),
            s.fused_points.to_string(),
        );
        row(
            "inferred points",
            b.inferred_points.to_string(),
            s.inferred_points.to_string(),
        );
        row(
            "median error (m)",
            format!("{:.3}", b.error.median),
            format!("{:.3}", s.error.median),
        );
        row(
            "q1 / q3 (m)",
            format!("{:.3}/{:.3}", b.error.q1, b.error.q3),
            format!("{:.3}/{:.3}", s.error.q1, s.error.q3),
        );
        row(
            "outliers (%)",
            format!("{:.2}", 100.0 * b.error.outlier_fraction),
            format!("{:.2}", 100.0 * s.error.outlier_fraction),
        );
        out.push_str(&format!("coverage ratio: {:.2}x\n", self.voxel_ratio()));
        out
    }
}

/// Run benchmark and semantic missions over the same scene and mission.
pub fn compare_modes(
    scene: &Scene,
    mission: &Mission,
    config: &PipelineConfig,
    classifier: Option<&ClassifierModel>,
) -> Result<Comparison, PipelineError> {
    let mut benchmark_config = config.clone();
    benchmark_config.mode = Mode::Benchmark;
    let mut semantic_config = config.clone();
    semantic_config.mode = Mode::Semantic;
    Ok(Comparison {
        benchmark: run_mission(scene, mission, &benchmark_config, classifier)?,
        semantic: run_mission(scene, mission, &semantic_config, classifier)?,
    })
}

/// What [`train_bootstrap_classifier`] produced.
pub struct TrainingOutcome {
    pub model: ClassifierModel,
    pub examples: usize,
    /// Accuracy of an 80/20 split model on the held-out 20%; the returned
    /// model itself is retrained on everything.
    pub holdout_accuracy: f64,
    /// Examples gathered per class, sorted by label.
    pub class_counts: Vec<(String, usize)>,
}

/// Train the baseline classifier from simulator-generated labeled patches.
///
/// Each scene primitive is rendered in isolation from a set of jittered
/// vantage points — a surrounding ring for compact objects, a parallel
/// transit for walls (see [`training_pose`]) — and the dominant detected
/// cluster at each vantage becomes a labeled example. An 80/20 split
/// estimates held-out accuracy before the final model is fitted on the
/// full set.
pub fn train_bootstrap_classifier(
    scene: &Scene,
    config: &PipelineConfig,
    seed: u64,
) -> Result<TrainingOutcome, PipelineError> {
    scene.validate()?;
    let ranges = [6.0, 9.0, 13.0, 18.0];
    let views_per_range = 6usize;
    let depth = -scene.water_depth / 4.0;

    let mut examples = Vec::new();
    let mut view_index = 0usize;
    for primitive in &scene.primitives {
        let isolated = Scene {
            water_depth: scene.water_depth,
            primitives: vec![primitive.clone()],
        };
        for &range in &ranges {
            for k in 0..views_per_range {
                view_index += 1;
                let view_seed = frame_seed(seed, view_index);
                let mut rng = ChaCha8Rng::seed_from_u64(view_seed ^ 0x0B5E_55ED_7EA4_1234);
                let pose = training_pose(primitive, range, k, views_per_range, depth, &mut rng);
                let Ok((h_image, _)) = render_pair(
                    &isolated,
                    &pose,
                    &config.horizontal,
                    &config.vertical,
                    &config.render,
                    view_seed,
                ) else {
                    continue;
                };
                let Ok(features) = cfar_detect(&h_image, &config.cfar) else {
                    continue;
                };
                let features = drop_border_features(features, &h_image, &config.cfar);
                let clusters = filter_clusters(
                    cluster_features(&features, &config.clustering),
                    config.clustering.min_cluster_size,
                );
                // The target is the brightest thing in its own scene; total
                // intensity picks it over any residual noise cluster, which
                // passes the ratio threshold but stays dim in absolute terms.
                let Some(cluster) = clusters.iter().max_by(|a, b| {
                    let sum = |c: &Cluster| c.features.iter().map(|f| f.intensity).sum::<f64>();
                    sum(a).total_cmp(&sum(b))
                }) else {
                    continue;
                };
                if let Ok(patch) = extract_patch(&h_image, cluster, config.patch_size) {
                    examples.push((patch, primitive.class.clone()));
                }
            }
        }
    }

    let mut class_counts: BTreeMap<String, usize> = BTreeMap::new();
    for (_, label) in &examples {
        *class_counts.entry(label.clone()).or_insert(0) += 1;
    }
    for primitive in &scene.primitives {
        if !class_counts.contains_key(&primitive.class) {
            return Err(PipelineError::NoTrainingExamples(primitive.class.clone()));
        }
    }

    // Held-out estimate on an 80/20 split, then refit on everything.
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x51DE_5EED_0000_0001));
    let holdout_len = (examples.len() / 5).max(1);
    let (holdout_idx, train_idx) = order.split_at(holdout_len);
    let split_examples: Vec<(crate::classification::Patch, String)> = train_idx
        .iter()
        .map(|&i| examples[i].clone())
        .collect();
    let split_model = train(&split_examples)?;
    let mut correct = 0usize;
    for (j, &i) in holdout_idx.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(seed, 1_000_000 + j));
        let got = classify(&split_model, &examples[i].0, &config.classifier, &mut rng);
        if got.label.as_deref() == Some(examples[i].1.as_str()) {
            correct += 1;
        }
    }
    let holdout_accuracy = correct as f64 / holdout_idx.len() as f64;

    let model = train(&examples)?;
    Ok(TrainingOutcome {
        model,
        examples: examples.len(),
        holdout_accuracy,
        class_counts: class_counts.into_iter().collect(),
    })
}

/// A labeled training vantage for one primitive.
///
/// Compact objects (pilings) are viewed from a jittered ring of standoff
/// poses looking at their center — the geometry a survey sees when passing
/// an isolated target. Walls never appear that way: a vehicle transits
/// alongside them and the sonar catches a grazing arc well off boresight.
/// Training from ring views would teach a frontal, fan-filling signature
/// that no mission cluster matches, so wall vantages instead slide along
/// the wall at a lateral standoff with the heading parallel to it.
fn training_pose(
    primitive: &crate::sim::ScenePrimitive,
    range: f64,
    k: usize,
    views_per_range: usize,
    depth: f64,
    rng: &mut ChaCha8Rng,
) -> PlanarPose {
    use crate::sim::Shape;
    match &primitive.shape {
        Shape::Cylinder { center, .. } | Shape::Cuboid { center, .. } => {
            let azimuth = std::f64::consts::TAU * k as f64 / views_per_range as f64
                + 0.12 * centered_unit(rng);
            let standoff = range + 0.8 * centered_unit(rng);
            PlanarPose::new(
                center.x + standoff * azimuth.cos(),
                center.y + standoff * azimuth.sin(),
                azimuth + std::f64::consts::PI,
                depth,
            )
        }
        Shape::Wall { start, end, .. } => {
            let (dx, dy) = (end[0] - start[0], end[1] - start[1]);
            let length = dx.hypot(dy);
            let (ux, uy) = (dx / length, dy / length);
            let (nx, ny) = (-uy, ux);
            let side = if k % 2 == 0 { 1.0 } else { -1.0 };
            let offset = range / 2.0 + 0.5 * centered_unit(rng);
            // Park at successive stations along the wall, leaving room for
            // the grazing arc ahead of the vehicle.
            let along = (0.1 + 0.7 * k as f64 / views_per_range as f64) * length
                + 0.8 * centered_unit(rng);
            PlanarPose::new(
                start[0] + ux * along + side * nx * offset,
                start[1] + uy * along + side * ny * offset,
                uy.atan2(ux) + 0.1 * centered_unit(rng),
                depth,
            )
        }
    }
}

/// Uniform in [-1, 1].
fn centered_unit(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    rng.random_range(-1.0..=1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Scene, ScenePrimitive, Shape};

    fn cylinder(x: f64, y: f64) -> ScenePrimitive {
        ScenePrimitive {
            shape: Shape::Cylinder {
                center: CartesianPoint::new(x, y, -3.0),
                radius: 0.3,
                height: 6.0,
            },
            class: "cylindrical_piling".to_string(),
        }
    }

    fn cuboid(x: f64, y: f64) -> ScenePrimitive {
        ScenePrimitive {
            shape: Shape::Cuboid {
                center: CartesianPoint::new(x, y, -3.0),
                extents: [1.2, 1.2, 6.0],
                yaw: 0.4,
            },
            class: "rectangular_piling".to_string(),
        }
    }

    fn test_scene() -> Scene {
        Scene {
            water_depth: 6.0,
            primitives: vec![cylinder(8.0, 1.5), cylinder(16.0, -1.5), cuboid(13.0, 2.0)],
        }
    }

    fn test_mission() -> Mission {
        Mission::straight_leg((0.0, 0.0), 0.0, -1.5, 4.0, 4)
    }

    #[test]
    fn predicted_point_preserves_range_and_height() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        use rand::Rng;
        let wide_open = std::f64::consts::FRAC_PI_2;
        for _ in 0..500 {
            let range = rng.random_range(0.5..30.0);
            let bearing = rng.random_range(-1.2..1.2);
            let z = rng.random_range(-0.9..0.9) * range;
            let p = predicted_point(range, bearing, z, wide_open).unwrap();
            let r2 = p.x * p.x + p.y * p.y + p.z * p.z;
            assert!(
                (r2 - range * range).abs() <= 1e-12 * range * range,
                "radius drifted: {r2} vs {}",
                range * range
            );
            assert!((p.z - z).abs() < 1e-9);
        }
        assert!(
            predicted_point(2.0, 0.1, 2.5, wide_open).is_none(),
            "z beyond range"
        );
        assert!(
            predicted_point(0.0, 0.0, 0.0, wide_open).is_none(),
            "degenerate range"
        );
    }

    #[test]
    fn predicted_point_rejects_heights_outside_the_beam() {
        let beam = 10f64.to_radians();
        // Right at the beam edge: elevation = asin(z / r) = beam.
        let edge_z = 5.0 * beam.sin();
        assert!(predicted_point(5.0, 0.0, edge_z * 0.999, beam).is_some());
        assert!(
            predicted_point(5.0, 0.0, edge_z * 1.01, beam).is_none(),
            "a return can't have come from outside the vertical beam"
        );
        // A tall-object height queried at close range implies a steep,
        // infeasible elevation even though |z| < r.
        assert!(predicted_point(1.0, 0.0, 0.8, beam).is_none());
    }

    #[test]
    fn frame_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..1000 {
            assert!(seen.insert(frame_seed(7, i)), "collision at {i}");
        }
        assert_ne!(frame_seed(7, 0), frame_seed(8, 0));
    }

    #[test]
    fn semantic_mode_requires_a_classifier() {
        let config = PipelineConfig::default();
        let got = run_mission(&test_scene(), &test_mission(), &config, None);
        assert!(matches!(got, Err(PipelineError::MissingClassifier)));
    }

    #[test]
    fn benchmark_mode_emits_no_inferred_points_and_repeats_exactly() {
        let mut config = PipelineConfig::default();
        config.mode = Mode::Benchmark;
        let scene = test_scene();
        let mission = test_mission();
        let a = run_mission(&scene, &mission, &config, None).unwrap();
        let b = run_mission(&scene, &mission, &config, None).unwrap();

        assert_eq!(a.report.inferred_points, 0);
        assert!(a.report.fused_points > 0, "test scene must fuse something");
        assert_eq!(
            a.report.fused_points + a.report.inferred_points,
            a.map.len()
        );
        assert_eq!(a.report.frames_processed, 4);
        assert!(a.report.warnings.is_empty(), "{:?}", a.report.warnings);

        let ja = serde_json::to_string(&a.report).unwrap();
        let jb = serde_json::to_string(&b.report).unwrap();
        assert_eq!(ja, jb);
        assert_eq!(a.map.len(), b.map.len());
    }

    #[test]
    fn comparison_shares_fused_points_and_semantic_only_adds() {
        let scene = test_scene();
        let config = PipelineConfig::default();
        let outcome = train_bootstrap_classifier(&scene, &config, 3).unwrap();
        assert_eq!(outcome.class_counts.len(), 2);

        let comparison =
            compare_modes(&scene, &test_mission(), &config, Some(&outcome.model)).unwrap();
        let b = &comparison.benchmark.report;
        let s = &comparison.semantic.report;
        assert_eq!(b.fused_points, s.fused_points, "fusion is mode-blind");
        assert_eq!(b.inferred_points, 0);
        assert!(s.voxel_count >= b.voxel_count, "inference only adds");
        assert!(comparison.voxel_ratio() >= 1.0);
        assert!(comparison.table().contains("voxels"));
    }

    #[test]
    fn bootstrap_classifier_separates_the_test_classes() {
        let scene = test_scene();
        let config = PipelineConfig::default();
        let outcome = train_bootstrap_classifier(&scene, &config, 12).unwrap();
        assert!(outcome.examples >= 30, "got {} examples", outcome.examples);
        assert!(
            outcome.holdout_accuracy >= 0.8,
            "holdout accuracy {}",
            outcome.holdout_accuracy
        );
    }

    #[test]
    fn outputs_write_byte_identical_files_across_runs() {
        let scene = test_scene();
        let mission = test_mission();
        let mut config = PipelineConfig::default();
        config.mode = Mode::Benchmark;

        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        run_mission(&scene, &mission, &config, None)
            .unwrap()
            .write(dir_a.path())
            .unwrap();
        run_mission(&scene, &mission, &config, None)
            .unwrap()
            .write(dir_b.path())
            .unwrap();
        for name in ["map_benchmark.ply", "map_benchmark.csv", "report_benchmark.json"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between runs");
        }
    }
}
