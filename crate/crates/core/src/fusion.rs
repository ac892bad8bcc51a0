//! Stereo fusion of horizontal and vertical sonar detections.
//!
//! Inside the overlap fan shared by both sonars, a feature seen in the
//! horizontal image (range, bearing) and the same surface seen in the
//! vertical image (range, elevation) can be combined into a full 3D point.
//! Candidate pairs must land within one range bin of each other, since both
//! sonars measure the same slant range to the same surface. Ambiguities
//! among candidates at the same range are resolved by minimum-cost
//! assignment, where the cost of a pair is the Frobenius distance between
//! small normalized image patches around the two detections (the vertical
//! patch rotated a quarter turn to account for the sonar mounting).
//!
//! Each association gets a confidence from the margin between the best and
//! second-best candidate costs, normalized by the total cost mass of the
//! row; a pairing that barely beats its runner-up is worth little. Fused
//! points below a confidence floor are discarded and their horizontal
//! features fall back to the 2D-only pool.

use crate::detection::ImageFeature;
use crate::geometry::FusedPoint;
use crate::sim::PolarImage;
use thiserror::Error;

/// Cost assigned to pairs that violate the range gate; large enough that
/// the solver only uses them when a row or column cannot match at all.
const FORBIDDEN: f64 = 1e9;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error(
        "range resolutions differ between sonars ({h} m vs {v} m); \
         range-bin gating requires a shared resolution"
    )]
    ResolutionMismatch { h: f64, v: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct FusionConfig {
    /// Half-width of the square comparison patch (2 gives 5x5).
    pub patch_radius: usize,
    /// Associations with confidence below this are discarded.
    pub min_confidence: f64,
    /// Candidate pairs may differ by at most this many range bins.
    pub max_range_bin_delta: usize,
}

impl Default for FusionConfig {
    fn default() -> FusionConfig {
        FusionConfig {
            patch_radius: 2,
            min_confidence: 0.05,
            max_range_bin_delta: 1,
        }
    }
}

/// One accepted association between a horizontal and a vertical feature.
#[derive(Debug, Clone)]
pub struct FusedDetection {
    /// Index into the horizontal feature slice passed to [`fuse_frame`].
    pub h_index: usize,
    /// Index into the vertical feature slice.
    pub v_index: usize,
    pub point: FusedPoint,
    /// Patch dissimilarity of the accepted pair.
    pub cost: f64,
}

/// Everything [`fuse_frame`] decides about one keyframe.
#[derive(Debug, Clone, Default)]
pub struct FusionOutput {
    pub fused: Vec<FusedDetection>,
    /// Horizontal features that did not fuse: outside the overlap fan,
    /// unmatched, or matched below the confidence floor.
    pub unfused_h: Vec<usize>,
}

/// Associate horizontal and vertical features for one keyframe.
///
/// Only horizontal features whose bearing falls inside the vertical sonar's
/// beamwidth can fuse; everything else is 2D-only by construction. Both
/// images are min-max normalized internally before patches are compared.
pub fn fuse_frame(
    h_image: &PolarImage,
    v_image: &PolarImage,
    h_features: &[ImageFeature],
    v_features: &[ImageFeature],
    config: &FusionConfig,
) -> Result<FusionOutput, FusionError> {
    let h_res = h_image.config.range_resolution;
    let v_res = v_image.config.range_resolution;
    if (h_res - v_res).abs() > 1e-9 {
        return Err(FusionError::ResolutionMismatch { h: h_res, v: v_res });
    }

    let overlap_half = v_image.config.beamwidth / 2.0;
    let h_norm = h_image.normalized();
    let v_norm = v_image.normalized();

    // Split horizontal features into fusion candidates and 2D-only.
    let mut output = FusionOutput::default();
    let mut h_candidates: Vec<usize> = Vec::new();
    for (i, f) in h_features.iter().enumerate() {
        if f.angle.abs() <= overlap_half {
            h_candidates.push(i);
        } else {
            output.unfused_h.push(i);
        }
    }

    // Merge occupied range bins into components no assignment can cross.
    let mut occupied: Vec<usize> = h_candidates
        .iter()
        .map(|&i| h_features[i].range_bin)
        .chain(v_features.iter().map(|f| f.range_bin))
        .collect();
    occupied.sort_unstable();
    occupied.dedup();
    let gate = config.max_range_bin_delta;

    let mut matched_h: Vec<bool> = vec![false; h_features.len()];
    let mut start = 0;
    while start < occupied.len() {
        let mut end = start + 1;
        while end < occupied.len() && occupied[end] - occupied[end - 1] <= gate {
            end += 1;
        }
        let lo = occupied[start];
        let hi = occupied[end - 1];
        let rows: Vec<usize> = h_candidates
            .iter()
            .copied()
            .filter(|&i| (lo..=hi).contains(&h_features[i].range_bin))
            .collect();
        let cols: Vec<usize> = (0..v_features.len())
            .filter(|&j| (lo..=hi).contains(&v_features[j].range_bin))
            .collect();
        solve_component(
            &rows,
            &cols,
            h_features,
            v_features,
            &h_norm,
            &v_norm,
            config,
            &mut output,
            &mut matched_h,
        );
        start = end;
    }

    for &i in &h_candidates {
        if !matched_h[i] {
            output.unfused_h.push(i);
        }
    }
    output.unfused_h.sort_unstable();
    output.fused.sort_by_key(|f| f.h_index);
    Ok(output)
}

/// Run assignment for one connected component of range bins.
#[allow(clippy::too_many_arguments)]
fn solve_component(
    rows: &[usize],
    cols: &[usize],
    h_features: &[ImageFeature],
    v_features: &[ImageFeature],
    h_norm: &PolarImage,
    v_norm: &PolarImage,
    config: &FusionConfig,
    output: &mut FusionOutput,
    matched_h: &mut [bool],
) {
    if rows.is_empty() || cols.is_empty() {
        return;
    }

    let radius = config.patch_radius;
    let gate = config.max_range_bin_delta as isize;
    let n = rows.len().max(cols.len());
    let mut cost = vec![vec![0.0f64; n]; n];
    for (ri, &hi) in rows.iter().enumerate() {
        let hf = &h_features[hi];
        let h_patch = extract_patch(h_norm, hf.range_bin, hf.angle_bin, radius);
        for (ci, &vj) in cols.iter().enumerate() {
            let vf = &v_features[vj];
            let delta = hf.range_bin as isize - vf.range_bin as isize;
            cost[ri][ci] = if delta.abs() > gate {
                FORBIDDEN
            } else {
                let v_patch = rotate_quarter_turn(
                    &extract_patch(v_norm, vf.range_bin, vf.angle_bin, radius),
                    2 * radius + 1,
                );
                patch_distance(&h_patch, &v_patch)
            };
        }
    }

    let assignment = hungarian(&cost);
    for (ri, &hi) in rows.iter().enumerate() {
        let ci = assignment[ri];
        if ci >= cols.len() || cost[ri][ci] >= FORBIDDEN {
            continue;
        }
        // Confidence from the margin over this row's feasible candidates.
        let feasible: Vec<f64> = (0..cols.len())
            .map(|c| cost[ri][c])
            .filter(|&c| c < FORBIDDEN)
            .collect();
        let confidence = association_confidence(&feasible);
        if confidence < config.min_confidence {
            continue;
        }
        let hf = &h_features[hi];
        let vf = &v_features[cols[ci]];
        matched_h[hi] = true;
        output.fused.push(FusedDetection {
            h_index: hi,
            v_index: cols[ci],
            point: FusedPoint {
                range: (hf.range + vf.range) / 2.0,
                bearing: hf.angle,
                elevation: vf.angle,
                confidence,
            },
            cost: cost[ri][ci],
        });
    }
}

/// Margin-based confidence for one row of feasible candidate costs: the gap
/// between the two smallest costs, normalized by the total. A lone candidate
/// is fully trusted; identical candidates (zero gap) or an all-zero row give
/// no confidence... except the degenerate single-zero case, which is trusted.
pub fn association_confidence(costs: &[f64]) -> f64 {
    match costs.len() {
        0 => 0.0,
        1 => 1.0,
        _ => {
            let mut smallest = f64::INFINITY;
            let mut second = f64::INFINITY;
            let mut total = 0.0;
            for &c in costs {
                total += c;
                if c < smallest {
                    second = smallest;
                    smallest = c;
                } else if c < second {
                    second = c;
                }
            }
            if total <= 0.0 {
                0.0
            } else {
                (second - smallest) / total
            }
        }
    }
}

/// Square patch of side `2*radius + 1` centered on a cell, zero-padded
/// beyond the image borders, in row-major order.
fn extract_patch(image: &PolarImage, range_bin: usize, angle_bin: usize, radius: usize) -> Vec<f64> {
    let side = 2 * radius + 1;
    let mut patch = vec![0.0; side * side];
    let r0 = range_bin as isize - radius as isize;
    let a0 = angle_bin as isize - radius as isize;
    for i in 0..side {
        let r = r0 + i as isize;
        if r < 0 || r >= image.rows() as isize {
            continue;
        }
        for j in 0..side {
            let a = a0 + j as isize;
            if a < 0 || a >= image.cols() as isize {
                continue;
            }
            patch[i * side + j] = image.at(r as usize, a as usize);
        }
    }
    patch
}

/// Rotate a square row-major patch 90 degrees counterclockwise.
fn rotate_quarter_turn(patch: &[f64], side: usize) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    for i in 0..side {
        for j in 0..side {
            out[(side - 1 - j) * side + i] = patch[i * side + j];
        }
    }
    out
}

/// Frobenius distance between two equally sized patches.
fn patch_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Minimum-cost perfect assignment on a square matrix, O(n^3) shortest
/// augmenting paths with potentials. Returns the column chosen for each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return vec![];
    }
    debug_assert!(cost.iter().all(|row| row.len() == n));

    // 1-indexed potentials; p[j] is the row matched to column j (0 = none).
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}
