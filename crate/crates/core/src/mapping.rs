//! Global map accumulation, coverage and error metrics, and export.
//!
//! The map is a flat point cloud in the map frame, each point tagged with
//! how it was produced (stereo-fused or height-inferred), the confidence
//! attached to it, and the keyframe that contributed it. Coverage is
//! measured by counting occupied voxels at a fixed resolution; accuracy is
//! measured against the analytic scene as point-to-surface distance,
//! summarized box-plot style with quartiles and 1.5-IQR outlier fences.

use crate::geometry::CartesianPoint;
use crate::sim::Scene;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("map has no points")]
    EmptyMap,
    #[error("voxel size must be positive, got {0}")]
    BadVoxelSize(f64),
    #[error("scene error: {0}")]
    Scene(#[from] crate::sim::SimError),
}

/// How a map point came to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Triangulated from a horizontal/vertical detection pair.
    Fused,
    /// Elevation predicted by a class height model.
    Inferred,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapPoint {
    pub position: CartesianPoint,
    pub provenance: Provenance,
    pub confidence: f64,
    pub keyframe: usize,
    pub class: Option<String>,
}

/// Accumulated reconstruction for one mission.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GlobalMap {
    pub points: Vec<MapPoint>,
}

impl GlobalMap {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, point: MapPoint) {
        self.points.push(point);
    }

    pub fn count_by_provenance(&self, provenance: Provenance) -> usize {
        self.points
            .iter()
            .filter(|p| p.provenance == provenance)
            .count()
    }

    /// Number of distinct voxels occupied at `voxel_size` resolution.
    /// Indices use floor division so negative coordinates bin correctly.
    pub fn voxel_count(&self, voxel_size: f64) -> Result<usize, MappingError> {
        if voxel_size <= 0.0 {
            return Err(MappingError::BadVoxelSize(voxel_size));
        }
        let mut voxels: HashSet<(i64, i64, i64)> = HashSet::new();
        for p in &self.points {
            voxels.insert((
                (p.position.x / voxel_size).floor() as i64,
                (p.position.y / voxel_size).floor() as i64,
                (p.position.z / voxel_size).floor() as i64,
            ));
        }
        Ok(voxels.len())
    }

    /// Distance of every map point to the nearest scene surface,
    /// summarized as box-plot statistics.
    pub fn error_against(&self, scene: &Scene) -> Result<ErrorStats, MappingError> {
        if self.is_empty() {
            return Err(MappingError::EmptyMap);
        }
        let mut errors: Vec<f64> = Vec::with_capacity(self.points.len());
        for p in &self.points {
            errors.push(scene.distance_to(&p.position)?);
        }
        Ok(ErrorStats::from_samples(&mut errors))
    }

    /// ASCII PLY export with provenance and confidence as vertex scalars.
    pub fn write_ply(&self, path: &Path) -> Result<(), MappingError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "ply")?;
        writeln!(out, "format ascii 1.0")?;
        writeln!(out, "element vertex {}", self.points.len())?;
        writeln!(out, "property float x")?;
        writeln!(out, "property float y")?;
        writeln!(out, "property float z")?;
        writeln!(out, "property float confidence")?;
        writeln!(out, "property uchar inferred")?;
        writeln!(out, "end_header")?;
        for p in &self.points {
            writeln!(
                out,
                "{} {} {} {} {}",
                p.position.x as f32,
                p.position.y as f32,
                p.position.z as f32,
                p.confidence as f32,
                matches!(p.provenance, Provenance::Inferred) as u8,
            )?;
        }
        Ok(())
    }

    /// CSV export with one row per point.
    pub fn write_csv(&self, path: &Path) -> Result<(), MappingError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "x,y,z,confidence,provenance,keyframe,class")?;
        for p in &self.points {
            let provenance = match p.provenance {
                Provenance::Fused => "fused",
                Provenance::Inferred => "inferred",
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                p.position.x,
                p.position.y,
                p.position.z,
                p.confidence,
                provenance,
                p.keyframe,
                p.class.as_deref().unwrap_or(""),
            )?;
        }
        Ok(())
    }
}

/// Box-plot style summary of a sample of absolute errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Largest sample inside the upper 1.5-IQR fence.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub max: f64,
    pub outlier_count: usize,
    pub outlier_fraction: f64,
}

impl ErrorStats {
    /// Summarize `samples` (sorted in place). Quartiles use linear
    /// interpolation between order statistics; outliers lie beyond 1.5 IQR
    /// from the quartiles.
    pub fn from_samples(samples: &mut [f64]) -> ErrorStats {
        assert!(!samples.is_empty(), "caller guarantees non-empty samples");
        samples.sort_by(|a, b| a.total_cmp(b));
        let q1 = percentile_sorted(samples, 0.25);
        let median = percentile_sorted(samples, 0.50);
        let q3 = percentile_sorted(samples, 0.75);
        let iqr = q3 - q1;
        let lo_fence = q1 - 1.5 * iqr;
        let hi_fence = q3 + 1.5 * iqr;
        let outlier_count = samples
            .iter()
            .filter(|&&v| v < lo_fence || v > hi_fence)
            .count();
        let inliers = samples.iter().filter(|&&v| v >= lo_fence && v <= hi_fence);
        let (mut whisker_low, mut whisker_high) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in inliers {
            whisker_low = whisker_low.min(v);
            whisker_high = whisker_high.max(v);
        }
        ErrorStats {
            count: samples.len(),
            mean: samples.iter().sum::<f64>() / samples.len() as f64,
            q1,
            median,
            q3,
            whisker_low,
            whisker_high,
            max: *samples.last().unwrap(),
            outlier_count,
            outlier_fraction: outlier_count as f64 / samples.len() as f64,
        }
    }
}

/// Linear-interpolation percentile of an already sorted slice.
fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let idx = (sorted.len() - 1) as f64 * p;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    let frac = idx - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{ScenePrimitive, Shape};

    fn point(x: f64, y: f64, z: f64) -> MapPoint {
        MapPoint {
            position: CartesianPoint::new(x, y, z),
            provenance: Provenance::Fused,
            confidence: 1.0,
            keyframe: 0,
            class: None,
        }
    }

    #[test]
    fn voxel_floor_binning_handles_negative_coordinates() {
        let mut map = GlobalMap::default();
        // Flooring must put -0.01 in voxel -1, not muddle it with +0.01 the
        // way integer-cast truncation toward zero would.
        map.push(point(0.01, 0.02, 0.03)); // voxel (0, 0, 0)
        map.push(point(0.09, 0.09, 0.099)); // voxel (0, 0, 0)
        map.push(point(-0.01, 0.02, 0.03)); // voxel (-1, 0, 0)
        map.push(point(0.0, 0.0, 0.0)); // boundary: voxel (0, 0, 0)
        map.push(point(-0.01, -0.02, -0.03)); // voxel (-1, -1, -1)
        assert_eq!(map.voxel_count(0.1).unwrap(), 3);
    }

    #[test]
    fn voxel_count_is_translation_invariant_for_exact_multiples() {
        // Dyadic coordinates and a dyadic voxel size keep every division
        // exact, so shifting by whole voxels must preserve the count.
        let mut base_points = Vec::new();
        for i in 0..50 {
            let f = i as f64;
            base_points.push((f * 0.0625 + 0.03125, -f * 0.125 + 0.03125, f * 0.015625));
        }
        let mut map = GlobalMap::default();
        for &(x, y, z) in &base_points {
            map.push(point(x, y, z));
        }
        let base = map.voxel_count(0.25).unwrap();
        assert!(base > 1 && base <= map.len());

        let mut shifted = GlobalMap::default();
        for &(x, y, z) in &base_points {
            shifted.push(point(x + 1.75, y - 0.5, z + 2.25));
        }
        assert_eq!(shifted.voxel_count(0.25).unwrap(), base);
    }

    #[test]
    fn voxel_count_rejects_bad_size() {
        let map = GlobalMap::default();
        assert!(matches!(
            map.voxel_count(0.0),
            Err(MappingError::BadVoxelSize(_))
        ));
        assert_eq!(map.voxel_count(0.1).unwrap(), 0);
    }

    #[test]
    fn error_stats_match_percentile_oracle() {
        // Expected values computed with an independent linear-interpolation
        // percentile implementation over this exact sample.
        let mut samples = vec![
            0.02, 0.05, 0.07, 0.11, 0.04, 0.09, 0.03, 0.22, 0.06, 0.08, 0.75, 0.01, 0.12,
            0.10, 0.95,
        ];
        let stats = ErrorStats::from_samples(&mut samples);
        assert_eq!(stats.count, 15);
        assert!((stats.q1 - 0.045).abs() < 1e-12);
        assert!((stats.median - 0.08).abs() < 1e-12);
        assert!((stats.q3 - 0.11499999999999999).abs() < 1e-15);
        assert!((stats.mean - 0.18000000000000002).abs() < 1e-12);
        assert_eq!(stats.outlier_count, 3);
        assert!((stats.outlier_fraction - 0.2).abs() < 1e-12);
        assert!((stats.whisker_low - 0.01).abs() < 1e-12);
        assert!((stats.whisker_high - 0.12).abs() < 1e-12);
        assert!((stats.max - 0.95).abs() < 1e-12);
    }

    #[test]
    fn error_stats_on_constant_sample_has_no_outliers() {
        let mut samples = vec![0.3; 9];
        let stats = ErrorStats::from_samples(&mut samples);
        assert_eq!(stats.outlier_count, 0);
        assert_eq!(stats.median, 0.3);
        assert_eq!(stats.q1, 0.3);
        assert_eq!(stats.q3, 0.3);
    }

    #[test]
    fn map_error_uses_scene_surface_distance() {
        let scene = Scene {
            water_depth: 6.0,
            primitives: vec![ScenePrimitive {
                shape: Shape::Cylinder {
                    center: CartesianPoint::new(10.0, 0.0, 0.0),
                    radius: 0.5,
                    height: 4.0,
                },
                class: "piling_cylindrical".into(),
            }],
        };
        let mut map = GlobalMap::default();
        map.push(point(9.5, 0.0, 0.0)); // exactly on the surface
        map.push(point(9.3, 0.0, 0.0)); // 0.2 m off
        let stats = map.error_against(&scene).unwrap();
        assert!(stats.median > 0.0 && stats.median <= 0.2);
        assert!((stats.max - 0.2).abs() < 1e-12);

        let empty = GlobalMap::default();
        assert!(matches!(
            empty.error_against(&scene),
            Err(MappingError::EmptyMap)
        ));
    }

    #[test]
    fn ply_export_has_valid_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.ply");
        let mut map = GlobalMap::default();
        map.push(point(1.0, 2.0, -3.0));
        let mut inferred = point(4.0, 5.0, -1.5);
        inferred.provenance = Provenance::Inferred;
        inferred.confidence = 0.25;
        map.push(inferred);
        map.write_ply(&path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "ply");
        assert!(lines.contains(&"element vertex 2"));
        let header_end = lines.iter().position(|l| *l == "end_header").unwrap();
        assert_eq!(lines.len() - header_end - 1, 2);
        assert_eq!(lines[header_end + 1], "1 2 -3 1 0");
        assert_eq!(lines[header_end + 2], "4 5 -1.5 0.25 1");
    }

    #[test]
    fn csv_export_includes_provenance_and_class() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.csv");
        let mut map = GlobalMap::default();
        let mut p = point(1.0, 2.0, 3.0);
        p.class = Some("seawall".into());
        p.keyframe = 7;
        map.push(p);
        map.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,y,z,confidence,provenance,keyframe,class");
        assert_eq!(lines[1], "1,2,3,1,fused,7,seawall");
    }

    #[test]
    fn provenance_counting() {
        let mut map = GlobalMap::default();
        map.push(point(0.0, 0.0, 0.0));
        let mut q = point(1.0, 0.0, 0.0);
        q.provenance = Provenance::Inferred;
        map.push(q);
        map.push(point(2.0, 0.0, 0.0));
        assert_eq!(map.count_by_provenance(Provenance::Fused), 2);
        assert_eq!(map.count_by_provenance(Provenance::Inferred), 1);
    }
}
