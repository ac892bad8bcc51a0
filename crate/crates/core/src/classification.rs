//! Object classification from horizontal-image patches.
//!
//! Each detected cluster is cut from the normalized image, letterboxed into
//! a fixed-size square patch (aspect preserved, zero padding), and reduced
//! to a small metric shape descriptor: physical width and depth, fill
//! ratio, leading-edge sagitta, straightness and chord residual, limb
//! darkening, and mean intensity. The sagitta terms capture how the
//! first-return edge bows toward the sonar; the chord residual separates
//! genuinely curved arcs from corner-on wedges, which are piecewise
//! straight; the limb ratio captures that a curved surface presents a
//! normal-incidence highlight flanked by grazing-dark limbs at any aspect,
//! while a flat face returns near-uniform brightness across its visible
//! span; the metric terms separate pilings from extended walls.
//!
//! Classification is k-nearest-neighbor voting over standardized
//! descriptors. A class is not one blob in descriptor space — a box reads
//! flat and shallow face-on but deep and bowed corner-on — so any single
//! per-class prototype misfiles whole aspect modes; neighbor voting keeps
//! every training aspect as its own reference. The decision is made
//! stochastic in the spirit of Monte Carlo dropout: the descriptor is
//! perturbed and re-voted `samples` times, the majority label wins, and
//! the vote fraction serves as confidence. Predictions whose vote fraction
//! falls below the acceptance threshold, or whose descriptor sits farther
//! from the training set than any training point sits from its own
//! neighborhood, come back unlabeled rather than wrong.

use crate::detection::Cluster;
use crate::sim::PolarImage;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Number of scalar features in a patch descriptor.
pub const DESCRIPTOR_LEN: usize = 8;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model format version {found}, expected {expected}")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("cannot extract a patch from an empty cluster")]
    EmptyCluster,
}

/// Fixed-size image cutout around one cluster, letterboxed to preserve the
/// cluster's aspect ratio, with the metric scale of its pixels retained.
#[derive(Debug, Clone)]
pub struct Patch {
    pub size: usize,
    /// Row-major `size * size` intensities in [0, 1].
    pub pixels: Vec<f64>,
    /// Meters of range per patch row.
    pub range_scale: f64,
    /// Meters of cross-range arc per patch column, at the cluster range.
    pub cross_scale: f64,
}

/// Cut the cluster's bounding box out of a normalized image and letterbox
/// it into a `size`-by-`size` patch with nearest-neighbor resampling.
pub fn extract_patch(
    image: &PolarImage,
    cluster: &Cluster,
    size: usize,
) -> Result<Patch, ClassifierError> {
    if cluster.is_empty() {
        return Err(ClassifierError::EmptyCluster);
    }
    let (r0, r1) = cluster.range_bin_bounds();
    let (a0, a1) = cluster.angle_bin_bounds();
    let src_rows = r1 - r0 + 1;
    let src_cols = a1 - a0 + 1;

    // Fit the longer side exactly; the shorter side is centered.
    let scale = size as f64 / src_rows.max(src_cols) as f64;
    let out_rows = ((src_rows as f64 * scale).round() as usize).clamp(1, size);
    let out_cols = ((src_cols as f64 * scale).round() as usize).clamp(1, size);
    let row_off = (size - out_rows) / 2;
    let col_off = (size - out_cols) / 2;

    let mut pixels = vec![0.0; size * size];
    for i in 0..out_rows {
        let sr = r0 + ((i as f64 + 0.5) / scale) as usize;
        for j in 0..out_cols {
            let sa = a0 + ((j as f64 + 0.5) / scale) as usize;
            pixels[(row_off + i) * size + (col_off + j)] =
                image.at(sr.min(r1), sa.min(a1));
        }
    }

    let angular_step = image.config.angular_aperture / image.config.angular_bin_count as f64;
    let (centroid_range, _) = cluster.centroid_polar();
    Ok(Patch {
        size,
        pixels,
        range_scale: image.config.range_resolution / scale,
        cross_scale: angular_step * centroid_range / scale,
    })
}

impl Patch {
    /// Metric shape descriptor: `[width_m, depth_m, fill, sagitta_m,
    /// edge_rms_m, vee_rms_m, limb_ratio, mean_intensity]`.
    pub fn descriptor(&self) -> [f64; DESCRIPTOR_LEN] {
        let size = self.size;
        let max = self.pixels.iter().copied().fold(0.0f64, f64::max);
        if max <= 0.0 {
            return [0.0; DESCRIPTOR_LEN];
        }
        let threshold = 0.2 * max;

        // Leading (first bright row) and peak intensity per occupied
        // column, plus extents.
        let mut lead: Vec<(usize, usize)> = Vec::new(); // (col, first_row)
        let mut peaks: Vec<f64> = Vec::new(); // per occupied column
        let mut row_lo = size;
        let mut row_hi = 0usize;
        let mut occupied = 0usize;
        let mut intensity_sum = 0.0;
        for col in 0..size {
            let mut first: Option<usize> = None;
            let mut peak = 0.0f64;
            for row in 0..size {
                let v = self.pixels[row * size + col];
                if v > threshold {
                    occupied += 1;
                    intensity_sum += v;
                    row_lo = row_lo.min(row);
                    row_hi = row_hi.max(row);
                    peak = peak.max(v);
                    if first.is_none() {
                        first = Some(row);
                    }
                }
            }
            if let Some(r) = first {
                lead.push((col, r));
                peaks.push(peak);
            }
        }
        if lead.is_empty() {
            return [0.0; DESCRIPTOR_LEN];
        }

        let col_lo = lead.first().unwrap().0;
        let col_hi = lead.last().unwrap().0;
        let width_m = (col_hi - col_lo + 1) as f64 * self.cross_scale;
        let depth_m = (row_hi - row_lo + 1) as f64 * self.range_scale;
        let bbox_cells = ((col_hi - col_lo + 1) * (row_hi - row_lo + 1)) as f64;
        let fill = occupied as f64 / bbox_cells;
        let mean_intensity = intensity_sum / occupied as f64;

        // Leading-edge shape in meters: how far the center bows toward the
        // sonar relative to the ends, the residual of a straight fit, and
        // the residual of a two-chord fit hinged at the nearest point. A
        // face seen corner-on is piecewise straight, so two chords absorb
        // it completely; an arc keeps bowing between any two chords.
        let (sagitta_m, edge_rms_m, vee_rms_m) = if lead.len() < 3 {
            (0.0, 0.0, 0.0)
        } else {
            let xs: Vec<f64> = lead.iter().map(|&(c, _)| c as f64 * self.cross_scale).collect();
            let ys: Vec<f64> = lead.iter().map(|&(_, r)| r as f64 * self.range_scale).collect();
            let mid_x = (xs[0] + xs[xs.len() - 1]) / 2.0;
            let mid_idx = (0..xs.len())
                .min_by(|&a, &b| (xs[a] - mid_x).abs().total_cmp(&(xs[b] - mid_x).abs()))
                .unwrap();
            let sagitta = (ys[0] + ys[ys.len() - 1]) / 2.0 - ys[mid_idx];

            // Least-squares line through (xs, ys).
            let n = xs.len() as f64;
            let mean_x = xs.iter().sum::<f64>() / n;
            let mean_y = ys.iter().sum::<f64>() / n;
            let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
            let sxy: f64 = xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| (x - mean_x) * (y - mean_y))
                .sum();
            let slope = if sxx > 1e-12 { sxy / sxx } else { 0.0 };
            let rms = (xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| {
                    let fit = mean_y + slope * (x - mean_x);
                    (y - fit).powi(2)
                })
                .sum::<f64>()
                / n)
                .sqrt();

            let hinge = (0..ys.len())
                .min_by(|&a, &b| ys[a].total_cmp(&ys[b]))
                .unwrap();
            let mut sse = 0.0;
            let mut count = 0.0;
            for (lo, hi) in [(0, hinge), (hinge, ys.len() - 1)] {
                let dx = xs[hi] - xs[lo];
                for i in lo..=hi {
                    let t = if dx.abs() > 1e-12 {
                        (xs[i] - xs[lo]) / dx
                    } else {
                        0.0
                    };
                    let chord = ys[lo] + t * (ys[hi] - ys[lo]);
                    sse += (ys[i] - chord).powi(2);
                    count += 1.0;
                }
            }
            (sagitta, rms, (sse / count).sqrt())
        };

        // Limb darkening: the mean per-column peak over the outer fifths of
        // the span, relative to the central fifth. A curved surface always
        // carries a normal-incidence highlight in the middle of its visible
        // arc and grazing-dark limbs; a flat face is near-uniform.
        let limb_ratio = if peaks.len() < 5 {
            1.0
        } else {
            let fifth = (peaks.len() / 5).max(1);
            let outer: f64 = peaks[..fifth]
                .iter()
                .chain(&peaks[peaks.len() - fifth..])
                .sum::<f64>()
                / (2 * fifth) as f64;
            let mid = (peaks.len() - fifth) / 2;
            let central: f64 =
                peaks[mid..mid + fifth].iter().sum::<f64>() / fifth as f64;
            if central > 0.0 {
                (outer / central).min(2.0)
            } else {
                1.0
            }
        };

        [
            width_m,
            depth_m,
            fill,
            sagitta_m,
            edge_rms_m,
            vee_rms_m,
            limb_ratio,
            mean_intensity,
        ]
    }
}

/// Sorted class labels; an example's `class` indexes into this list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassSummary {
    pub label: String,
    pub examples: usize,
}

/// One stored training example: standardized descriptor plus class index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredExample {
    pub class: usize,
    pub descriptor: Vec<f64>,
}

/// Trained classifier: standardization constants plus the standardized
/// training descriptors themselves (the k-NN reference set).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub format_version: u32,
    /// Per-feature median over the training set.
    pub feature_centers: Vec<f64>,
    /// Per-feature robust scale (1.4826 * MAD, falling back to the std
    /// when the MAD degenerates).
    pub feature_scales: Vec<f64>,
    pub classes: Vec<ClassSummary>,
    pub examples: Vec<StoredExample>,
    /// Neighbors consulted per vote.
    pub neighbors: usize,
    /// Descriptors whose k-th nearest training example is farther than
    /// this (standardized units) vote for no class at all. Fit from the
    /// training set: the largest k-th-neighbor distance any training point
    /// sees within its own set, with a 25% margin and a floor of 4.
    pub reject_distance: f64,
}

impl ClassifierModel {
    pub fn load(path: &Path) -> Result<ClassifierModel, ClassifierError> {
        let text = std::fs::read_to_string(path)?;
        let model: ClassifierModel = serde_json::from_str(&text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(ClassifierError::UnsupportedVersion {
                found: model.format_version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    fn standardize(&self, descriptor: &[f64; DESCRIPTOR_LEN]) -> Vec<f64> {
        descriptor
            .iter()
            .enumerate()
            .map(|(k, v)| (v - self.feature_centers[k]) / self.feature_scales[k])
            .collect()
    }
}

/// Fit standardization constants and per-class centroids.
pub fn train(examples: &[(Patch, String)]) -> Result<ClassifierModel, ClassifierError> {
    if examples.is_empty() {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    let descriptors: Vec<[f64; DESCRIPTOR_LEN]> =
        examples.iter().map(|(p, _)| p.descriptor()).collect();

    // Robust per-feature location and scale: median and 1.4826 * MAD. A
    // plain mean/std buckles when one class is metrically extreme (a wall
    // is two orders of magnitude wider than a piling), inflating the scale
    // until the remaining classes collapse onto each other. When more than
    // half the values tie, the MAD degenerates to zero and the std steps
    // in; a fully constant feature gets scale 1 and carries no information.
    let n = descriptors.len() as f64;
    let mut centers = vec![0.0; DESCRIPTOR_LEN];
    let mut scales = vec![0.0; DESCRIPTOR_LEN];
    for k in 0..DESCRIPTOR_LEN {
        let mut values: Vec<f64> = descriptors.iter().map(|d| d[k]).collect();
        centers[k] = median_in_place(&mut values);
        let mut deviations: Vec<f64> =
            values.iter().map(|v| (v - centers[k]).abs()).collect();
        let mad = median_in_place(&mut deviations);
        scales[k] = 1.4826 * mad;
        if scales[k] < 1e-9 {
            let variance = values
                .iter()
                .map(|v| (v - centers[k]).powi(2))
                .sum::<f64>()
                / n;
            scales[k] = variance.sqrt();
        }
        if scales[k] < 1e-9 {
            scales[k] = 1.0;
        }
    }

    let mut labels: Vec<String> = examples.iter().map(|(_, l)| l.clone()).collect();
    labels.sort();
    labels.dedup();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for (_, label) in examples {
        *counts.entry(label.as_str()).or_insert(0) += 1;
    }
    let classes: Vec<ClassSummary> = labels
        .iter()
        .map(|label| ClassSummary {
            label: label.clone(),
            examples: counts[label.as_str()],
        })
        .collect();

    let stored: Vec<StoredExample> = examples
        .iter()
        .zip(&descriptors)
        .map(|((_, label), d)| StoredExample {
            class: labels.binary_search(label).expect("label was collected"),
            descriptor: d
                .iter()
                .enumerate()
                .map(|(k, v)| (v - centers[k]) / scales[k])
                .collect(),
        })
        .collect();

    let neighbors = 5.min(stored.len());

    // Reject anything farther from the training set than any training
    // point sits from its own k-th neighbor, with a margin. A fixed radius
    // breaks as soon as the robust scales tighten: legitimate within-class
    // spread is measured in many MAD units whenever a feature is tightly
    // bunched for most examples but heavy-tailed for a few.
    let mut max_kth = 0.0f64;
    for (i, a) in stored.iter().enumerate() {
        let mut dists: Vec<f64> = stored
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, b)| squared_distance(&a.descriptor, &b.descriptor))
            .collect();
        if dists.is_empty() {
            continue;
        }
        let kth = neighbors.min(dists.len()) - 1;
        dists.select_nth_unstable_by(kth, f64::total_cmp);
        max_kth = max_kth.max(dists[kth].sqrt());
    }

    Ok(ClassifierModel {
        format_version: MODEL_FORMAT_VERSION,
        feature_centers: centers,
        feature_scales: scales,
        classes,
        examples: stored,
        neighbors,
        reject_distance: (1.25 * max_kth).max(4.0),
    })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of `values` (sorted in place); the average of the two middle
/// order statistics for even lengths.
fn median_in_place(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifierConfig {
    /// Stochastic forward passes per classification.
    pub samples: usize,
    /// Minimum vote fraction to accept the majority label.
    pub accept_threshold: f64,
    /// Std-dev of the descriptor perturbation, in standardized units.
    pub perturbation_sigma: f64,
}

impl Default for ClassifierConfig {
    fn default() -> ClassifierConfig {
        ClassifierConfig {
            samples: 25,
            accept_threshold: 0.8,
            perturbation_sigma: 0.3,
        }
    }
}

/// A label decision with its vote-fraction confidence. `label` is `None`
/// when the votes were too scattered or the descriptor too far from every
/// class.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label: Option<String>,
    pub confidence: f64,
}

/// Classify one patch with `config.samples` perturbed k-NN votes.
pub fn classify(
    model: &ClassifierModel,
    patch: &Patch,
    config: &ClassifierConfig,
    rng: &mut ChaCha8Rng,
) -> Classification {
    let standardized = model.standardize(&patch.descriptor());
    let mut votes: HashMap<usize, usize> = HashMap::new();
    let mut rejected = 0usize;
    for _ in 0..config.samples.max(1) {
        let jittered: Vec<f64> = standardized
            .iter()
            .map(|v| v + config.perturbation_sigma * gaussian(rng))
            .collect();
        match knn_vote(model, &jittered) {
            Some(idx) => *votes.entry(idx).or_insert(0) += 1,
            None => rejected += 1,
        }
    }
    let total = config.samples.max(1);
    let winner = votes.iter().max_by_key(|(idx, count)| (**count, usize::MAX - **idx));
    match winner {
        Some((&idx, &count)) if count >= rejected => {
            let confidence = count as f64 / total as f64;
            if confidence >= config.accept_threshold {
                Classification {
                    label: Some(model.classes[idx].label.clone()),
                    confidence,
                }
            } else {
                Classification {
                    label: None,
                    confidence,
                }
            }
        }
        _ => Classification {
            label: None,
            confidence: rejected as f64 / total as f64,
        },
    }
}

/// Majority class among the `model.neighbors` nearest stored examples, or
/// `None` when even the k-th of them is beyond the reject distance. Vote
/// ties break toward the neighbor set's nearest member.
fn knn_vote(model: &ClassifierModel, descriptor: &[f64]) -> Option<usize> {
    let mut dists: Vec<(f64, usize)> = model
        .examples
        .iter()
        .map(|e| (squared_distance(&e.descriptor, descriptor), e.class))
        .collect();
    if dists.is_empty() {
        return None;
    }
    let k = model.neighbors.clamp(1, dists.len());
    dists.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
    let neighborhood = &mut dists[..k];
    neighborhood.sort_by(|a, b| a.0.total_cmp(&b.0));
    if neighborhood[k - 1].0.sqrt() > model.reject_distance {
        return None;
    }
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &(_, class) in neighborhood.iter() {
        *counts.entry(class).or_insert(0) += 1;
    }
    let best = *counts.values().max().expect("k >= 1");
    neighborhood
        .iter()
        .find(|&&(_, class)| counts[&class] == best)
        .map(|&(_, class)| class)
}

/// Standard normal via Box-Muller.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::ImageFeature;
    use crate::sim::{PolarImage, SonarConfig, SonarOrientation};
    use rand::SeedableRng;

    fn test_image_config(rows: usize, cols: usize) -> SonarConfig {
        SonarConfig {
            max_range: rows as f64 * 0.05,
            range_resolution: 0.05,
            angular_aperture: 1.0,
            angular_bin_count: cols,
            beamwidth: 0.3,
            orientation: SonarOrientation::Horizontal,
        }
    }

    fn cluster_from_cells(img: &PolarImage, cells: &[(usize, usize)]) -> Cluster {
        Cluster {
            features: cells
                .iter()
                .map(|&(r, a)| ImageFeature {
                    range_bin: r,
                    angle_bin: a,
                    range: img.config.range_of_bin(r),
                    angle: img.config.angle_of_bin(a),
                    intensity: img.at(r, a),
                })
                .collect(),
        }
    }

    #[test]
    fn letterbox_centers_and_preserves_aspect() {
        let mut img = PolarImage::zeros(test_image_config(100, 60));
        let mut cells = Vec::new();
        // A 10-row by 5-column solid block.
        for r in 20..30 {
            for a in 40..45 {
                *img.at_mut(r, a) = 1.0;
                cells.push((r, a));
            }
        }
        let cluster = cluster_from_cells(&img, &cells);
        let patch = extract_patch(&img, &cluster, 40).unwrap();

        // Long side (10 rows) fills all 40; short side maps to 20 columns
        // centered with a 10-column margin on each flank.
        for i in 0..40 {
            for j in 0..40 {
                let v = patch.pixels[i * 40 + j];
                if (10..30).contains(&j) {
                    assert_eq!(v, 1.0, "expected fill at ({i}, {j})");
                } else {
                    assert_eq!(v, 0.0, "expected padding at ({i}, {j})");
                }
            }
        }
        // 4 patch rows per source bin: each row spans 0.05 / 4 meters.
        assert!((patch.range_scale - 0.0125).abs() < 1e-12);
    }

    #[test]
    fn wide_cluster_is_letterboxed_vertically() {
        let mut img = PolarImage::zeros(test_image_config(100, 60));
        let mut cells = Vec::new();
        for r in 50..53 {
            for a in 10..40 {
                *img.at_mut(r, a) = 0.8;
                cells.push((r, a));
            }
        }
        let cluster = cluster_from_cells(&img, &cells);
        let patch = extract_patch(&img, &cluster, 40).unwrap();
        let occupied_rows: Vec<usize> = (0..40)
            .filter(|&i| (0..40).any(|j| patch.pixels[i * 40 + j] > 0.0))
            .collect();
        // 3 of 30 bins scale to 4 of 40 rows, centered at 18..22.
        assert_eq!(occupied_rows, vec![18, 19, 20, 21]);
    }

    #[test]
    fn empty_cluster_is_rejected() {
        let img = PolarImage::zeros(test_image_config(50, 50));
        let cluster = Cluster { features: vec![] };
        assert!(matches!(
            extract_patch(&img, &cluster, 40),
            Err(ClassifierError::EmptyCluster)
        ));
    }

    /// Build a patch directly: a leading edge given per column, two bins
    /// thick, in a 30-row by `lead.len()`-column cluster box.
    fn patch_with_leading_edge(lead: &[usize]) -> Patch {
        let size = 40;
        let mut pixels = vec![0.0; size * size];
        for (col, &first) in lead.iter().enumerate() {
            for r in first..(first + 4).min(size) {
                pixels[r * size + col] = 1.0;
            }
        }
        Patch {
            size,
            pixels,
            range_scale: 0.0125,
            cross_scale: 0.0125,
        }
    }

    #[test]
    fn sagitta_separates_curved_from_flat_edges() {
        // Convex edge: center 8 rows nearer than the flanks.
        let curved: Vec<usize> = (0..32)
            .map(|c| {
                let x = (c as f64 - 15.5) / 15.5;
                10 + (8.0 * x * x).round() as usize
            })
            .collect();
        let flat: Vec<usize> = vec![10; 32];

        let d_curved = patch_with_leading_edge(&curved).descriptor();
        let d_flat = patch_with_leading_edge(&flat).descriptor();
        // sagitta_m is descriptor index 3.
        assert!(
            d_curved[3] > 0.05,
            "curved edge sagitta too small: {}",
            d_curved[3]
        );
        assert!(d_flat[3].abs() < 1e-9, "flat edge must have no sagitta");
        assert!(d_curved[4] > d_flat[4], "curved edge should fit a line worse");
    }

    #[test]
    fn two_chord_residual_ignores_corners_but_not_arcs() {
        // Corner-on wedge: two straight flanks meeting at a nearest point.
        let vee: Vec<usize> = (0..32)
            .map(|c| 10 + (c as i64 - 16).unsigned_abs() as usize / 2)
            .collect();
        let curved: Vec<usize> = (0..32)
            .map(|c| {
                let x = (c as f64 - 15.5) / 15.5;
                10 + (8.0 * x * x).round() as usize
            })
            .collect();
        let d_vee = patch_with_leading_edge(&vee).descriptor();
        let d_curved = patch_with_leading_edge(&curved).descriptor();
        // Both bow toward the sonar (similar sagitta), but only the arc
        // resists a piecewise-straight fit; the wedge leaves nothing beyond
        // staircase quantization. vee_rms_m is index 5.
        assert!(d_vee[3] > 0.05, "wedge sagitta: {}", d_vee[3]);
        assert!(d_vee[5] < 0.006, "wedge chord residual: {}", d_vee[5]);
        assert!(d_curved[5] > 0.012, "arc chord residual: {}", d_curved[5]);
        assert!(
            d_curved[5] > 2.5 * d_vee[5],
            "arc {} vs wedge {}",
            d_curved[5],
            d_vee[5]
        );
    }

    #[test]
    fn limb_darkening_separates_curved_from_flat_brightness() {
        let size = 40;
        let flat_lead = vec![10usize; 32];
        let uniform = patch_with_leading_edge(&flat_lead);
        let mut darkened = patch_with_leading_edge(&flat_lead);
        // Same geometry; only the brightness profile differs.
        for col in 0..32 {
            let x = (col as f64 - 15.5) / 15.5;
            let bell = (1.0 - 0.9 * x * x).max(0.25);
            for row in 0..size {
                let v = &mut darkened.pixels[row * size + col];
                if *v > 0.0 {
                    *v = bell;
                }
            }
        }
        let d_uniform = uniform.descriptor();
        let d_darkened = darkened.descriptor();
        // limb_ratio is index 6.
        assert!((d_uniform[6] - 1.0).abs() < 1e-9, "uniform: {}", d_uniform[6]);
        assert!(d_darkened[6] < 0.6, "darkened limbs: {}", d_darkened[6]);
        // Geometry features are untouched by the brightness profile.
        assert!((d_uniform[0] - d_darkened[0]).abs() < 1e-9);
    }

    #[test]
    fn descriptor_width_and_depth_are_metric() {
        let lead: Vec<usize> = vec![10; 32];
        let patch = patch_with_leading_edge(&lead);
        let d = patch.descriptor();
        assert!((d[0] - 32.0 * 0.0125).abs() < 1e-9, "width {}", d[0]);
        assert!((d[1] - 4.0 * 0.0125).abs() < 1e-9, "depth {}", d[1]);
        assert!((d[2] - 1.0).abs() < 1e-9, "solid block fill {}", d[2]);
    }

    fn toy_training_set() -> Vec<(Patch, String)> {
        let mut examples = Vec::new();
        for jitter in 0..8 {
            // "curved": pronounced sagitta; "flat": none; "wide": flat but
            // with a much larger cross scale (physically wide).
            let curved: Vec<usize> = (0..32)
                .map(|c| {
                    let x = (c as f64 - 15.5) / 15.5;
                    10 + jitter % 3 + (8.0 * x * x).round() as usize
                })
                .collect();
            let flat: Vec<usize> = vec![10 + jitter % 3; 32];
            examples.push((patch_with_leading_edge(&curved), "curved".to_string()));
            examples.push((patch_with_leading_edge(&flat), "flat".to_string()));
            let mut wide = patch_with_leading_edge(&flat);
            wide.cross_scale = 0.25;
            examples.push((wide, "wide".to_string()));
        }
        examples
    }

    #[test]
    fn classifier_separates_toy_classes() {
        let examples = toy_training_set();
        let model = train(&examples).unwrap();
        assert_eq!(model.classes.len(), 3);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = ClassifierConfig::default();
        for (patch, label) in &examples {
            let got = classify(&model, patch, &cfg, &mut rng);
            assert_eq!(got.label.as_deref(), Some(label.as_str()));
            assert!(got.confidence >= cfg.accept_threshold);
        }
    }

    #[test]
    fn distant_descriptor_is_rejected_as_unknown() {
        let model = train(&toy_training_set()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // A giant, hollow, deep object resembling no training class.
        let mut weird = patch_with_leading_edge(&[2; 32]);
        weird.cross_scale = 3.0;
        weird.range_scale = 2.0;
        let got = classify(&model, &weird, &ClassifierConfig::default(), &mut rng);
        assert_eq!(got.label, None);
    }

    #[test]
    fn classification_is_deterministic_for_a_seed() {
        let examples = toy_training_set();
        let model = train(&examples).unwrap();
        let cfg = ClassifierConfig::default();
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            classify(&model, &examples[0].0, &cfg, &mut rng)
        };
        assert_eq!(run(42), run(42));
    }

    #[test]
    fn model_round_trips_and_rejects_future_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("classifier.json");
        let model = train(&toy_training_set()).unwrap();
        model.save(&path).unwrap();
        let back = ClassifierModel::load(&path).unwrap();
        assert_eq!(back.classes.len(), model.classes.len());
        assert_eq!(back.feature_centers, model.feature_centers);

        let mut future = model.clone();
        future.format_version = MODEL_FORMAT_VERSION + 1;
        future.save(&path).unwrap();
        assert!(matches!(
            ClassifierModel::load(&path),
            Err(ClassifierError::UnsupportedVersion { .. })
        ));
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(matches!(train(&[]), Err(ClassifierError::EmptyTrainingSet)));
    }
}
