//! Detection front end: adaptive thresholding and clustering of polar images.
//!
//! Thresholding uses smallest-of cell-averaging CFAR. Around each cell under
//! test, four one-sided training arms (leading/lagging in range and in angle)
//! estimate the local noise level after skipping a guard band; the smallest
//! arm average is taken, which keeps the estimate honest next to extended
//! bright targets that would inflate a plain average. A cell fires when its
//! intensity exceeds `threshold_factor` times the noise estimate, a ratio
//! test that is invariant to global intensity scaling. Arms are truncated at
//! image borders and skipped entirely when empty.
//!
//! Truncation keeps border cells testable but quietly breaks the false-alarm
//! guarantee there: an arm cut down to one or two cells is a high-variance
//! noise estimate, and the smallest-of rule latches onto exactly those, so
//! the bins just inside each border fire orders of magnitude more often than
//! the interior. [`drop_border_features`] strips that band before
//! clustering; the near-range part of it is where a fixed Cartesian radius
//! spans every bearing at once, which would otherwise chain the border false
//! alarms into one large phantom cluster.
//!
//! Detections are grouped by density-based clustering in the Cartesian
//! projection of (range, angle), so that angular bins far down-range, which
//! span more meters, cluster consistently with near-field ones.

use crate::sim::PolarImage;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error(
        "CFAR window of {window} cells per side does not fit a {rows}x{cols} image; \
         need at least {min} cells along each axis"
    )]
    WindowTooLarge {
        window: usize,
        rows: usize,
        cols: usize,
        min: usize,
    },
}

/// Smallest-of CFAR parameters.
#[derive(Debug, Clone, Copy)]
pub struct CfarConfig {
    /// Training cells per arm.
    pub train_cells: usize,
    /// Guard cells between the cell under test and each training arm.
    pub guard_cells: usize,
    /// Detection threshold as a multiple of the noise estimate.
    pub threshold_factor: f64,
}

impl Default for CfarConfig {
    fn default() -> CfarConfig {
        CfarConfig {
            train_cells: 10,
            guard_cells: 2,
            threshold_factor: 15.8,
        }
    }
}

/// A single thresholded cell with its polar coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageFeature {
    pub range_bin: usize,
    pub angle_bin: usize,
    /// Bin-center range in meters.
    pub range: f64,
    /// Bin-center angle in radians: bearing for a horizontal image,
    /// elevation for a vertical one.
    pub angle: f64,
    pub intensity: f64,
}

/// Run smallest-of CFAR over every cell of `image`.
///
/// The full window (train + guard cells on both sides, plus the cell under
/// test) must fit within both image dimensions; borders then truncate arms
/// as needed.
pub fn cfar_detect(
    image: &PolarImage,
    config: &CfarConfig,
) -> Result<Vec<ImageFeature>, DetectionError> {
    let rows = image.rows();
    let cols = image.cols();
    let reach = config.train_cells + config.guard_cells;
    let window = 2 * reach + 1;
    if window > rows || window > cols {
        return Err(DetectionError::WindowTooLarge {
            window,
            rows,
            cols,
            min: window,
        });
    }

    let mut features = Vec::new();
    for r in 0..rows {
        for a in 0..cols {
            let value = image.at(r, a);
            let noise = smallest_arm_average(image, r, a, config);
            if value > config.threshold_factor * noise {
                features.push(ImageFeature {
                    range_bin: r,
                    angle_bin: a,
                    range: image.config.range_of_bin(r),
                    angle: image.config.angle_of_bin(a),
                    intensity: value,
                });
            }
        }
    }
    Ok(features)
}

/// Smallest of the four one-sided training-arm averages around `(r, a)`.
/// Arms truncated to nothing by a border are excluded.
fn smallest_arm_average(image: &PolarImage, r: usize, a: usize, config: &CfarConfig) -> f64 {
    let rows = image.rows() as isize;
    let cols = image.cols() as isize;
    let guard = config.guard_cells as isize;
    let train = config.train_cells as isize;
    let (r, a) = (r as isize, a as isize);

    let mut best = f64::INFINITY;
    let mut arm = |dr: isize, da: isize| {
        let mut sum = 0.0;
        let mut count = 0usize;
        for k in (guard + 1)..=(guard + train) {
            let rr = r + dr * k;
            let aa = a + da * k;
            if rr < 0 || rr >= rows || aa < 0 || aa >= cols {
                break;
            }
            sum += image.at(rr as usize, aa as usize);
            count += 1;
        }
        if count > 0 {
            let avg = sum / count as f64;
            if avg < best {
                best = avg;
            }
        }
    };
    arm(1, 0);
    arm(-1, 0);
    arm(0, 1);
    arm(0, -1);

    // At least two arms always survive given the window precondition.
    best
}

/// Drop features within the CFAR window reach of any image border, where
/// truncated training arms inflate the false-alarm rate (a one-cell "arm
/// average" is beaten by noise a few percent of the time). The margin is
/// `train_cells + guard_cells`: the first bin whose arms are all complete
/// lies just past it.
pub fn drop_border_features(
    features: Vec<ImageFeature>,
    image: &PolarImage,
    config: &CfarConfig,
) -> Vec<ImageFeature> {
    let margin = config.train_cells + config.guard_cells;
    let rows = image.rows();
    let cols = image.cols();
    features
        .into_iter()
        .filter(|f| {
            f.range_bin >= margin
                && f.range_bin + margin < rows
                && f.angle_bin >= margin
                && f.angle_bin + margin < cols
        })
        .collect()
}

/// Density-based clustering parameters. `eps` is in meters in the Cartesian
/// projection of the polar cell centers.
#[derive(Debug, Clone, Copy)]
pub struct ClusterConfig {
    pub eps: f64,
    pub min_pts: usize,
    /// Clusters with fewer members than this are discarded by
    /// [`filter_clusters`].
    pub min_cluster_size: usize,
}

impl Default for ClusterConfig {
    fn default() -> ClusterConfig {
        ClusterConfig {
            eps: 0.5,
            min_pts: 4,
            min_cluster_size: 10,
        }
    }
}

/// A group of features belonging to one physical object.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub features: Vec<ImageFeature>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Inclusive (min, max) range-bin extent.
    pub fn range_bin_bounds(&self) -> (usize, usize) {
        let lo = self.features.iter().map(|f| f.range_bin).min().unwrap_or(0);
        let hi = self.features.iter().map(|f| f.range_bin).max().unwrap_or(0);
        (lo, hi)
    }

    /// Inclusive (min, max) angle-bin extent.
    pub fn angle_bin_bounds(&self) -> (usize, usize) {
        let lo = self.features.iter().map(|f| f.angle_bin).min().unwrap_or(0);
        let hi = self.features.iter().map(|f| f.angle_bin).max().unwrap_or(0);
        (lo, hi)
    }

    /// Mean (range, angle) of the member features.
    pub fn centroid_polar(&self) -> (f64, f64) {
        let n = self.features.len().max(1) as f64;
        let r = self.features.iter().map(|f| f.range).sum::<f64>() / n;
        let a = self.features.iter().map(|f| f.angle).sum::<f64>() / n;
        (r, a)
    }
}

/// Standard density-based clustering (DBSCAN) over the Cartesian projection
/// `(range*cos(angle), range*sin(angle))` of each feature. Points that are
/// not density-reachable from any core point are dropped as noise.
pub fn cluster_features(features: &[ImageFeature], config: &ClusterConfig) -> Vec<Cluster> {
    const UNVISITED: isize = -2;
    const NOISE: isize = -1;

    let xy: Vec<(f64, f64)> = features
        .iter()
        .map(|f| (f.range * f.angle.cos(), f.range * f.angle.sin()))
        .collect();
    let eps2 = config.eps * config.eps;
    let neighbors = |i: usize| -> Vec<usize> {
        let (xi, yi) = xy[i];
        xy.iter()
            .enumerate()
            .filter(|(_, (x, y))| {
                let dx = x - xi;
                let dy = y - yi;
                dx * dx + dy * dy <= eps2
            })
            .map(|(j, _)| j)
            .collect()
    };

    let mut label = vec![UNVISITED; features.len()];
    let mut next_cluster = 0isize;
    for i in 0..features.len() {
        if label[i] != UNVISITED {
            continue;
        }
        let seed_neighbors = neighbors(i);
        if seed_neighbors.len() < config.min_pts {
            label[i] = NOISE;
            continue;
        }
        let cluster_id = next_cluster;
        next_cluster += 1;
        label[i] = cluster_id;
        let mut frontier = seed_neighbors;
        while let Some(j) = frontier.pop() {
            if label[j] == NOISE {
                label[j] = cluster_id; // border point
            }
            if label[j] != UNVISITED {
                continue;
            }
            label[j] = cluster_id;
            let jn = neighbors(j);
            if jn.len() >= config.min_pts {
                frontier.extend(jn);
            }
        }
    }

    let mut clusters: Vec<Cluster> = (0..next_cluster)
        .map(|_| Cluster { features: vec![] })
        .collect();
    for (i, &l) in label.iter().enumerate() {
        if l >= 0 {
            clusters[l as usize].features.push(features[i]);
        }
    }
    clusters
}

/// Drop clusters smaller than `min_cluster_size`.
pub fn filter_clusters(clusters: Vec<Cluster>, min_cluster_size: usize) -> Vec<Cluster> {
    clusters
        .into_iter()
        .filter(|c| c.len() >= min_cluster_size)
        .collect()
}
