//! Exact radiological-path traversal and the class-weighted projection.
//!
//! A ray is decomposed into per-voxel chord segments by incremental
//! parametric plane stepping. The per-pixel quantities are then
//!
//! * value: `sum(l * rho * w) / (sum(w) / n)` with `l` the per-ray
//!   normalized segment length (`sum(l) = 1`), `rho` the voxel intensity
//!   and `w` the category weight,
//! * contribution rate per category `c`: `sum_c(l * w) / sum(l * w)`,
//! * label: 2 if the infection rate exceeds its threshold, else 1 if the
//!   lung rate exceeds its threshold, else 0 (strict inequalities).
//!
//! Rays that miss the volume produce value 0, label 0 and contributions
//! (1, 0, 0).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ImagingGeometry, Ray, RayCaster, RigidPose};
use crate::volume::{intensity_unchecked, CtVolume, IntensityMode, LabelVolume};

/// One voxel crossed by a ray and the distance traveled inside it (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraversalSegment {
    pub voxel: (usize, usize, usize),
    pub raw_length: f64,
}

/// Per-category projection weights (background, lung, infection).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
}

impl ClassWeights {
    pub fn new(w0: f64, w1: f64, w2: f64) -> Result<Self> {
        let weights = Self { w0, w1, w2 };
        weights.validate()?;
        Ok(weights)
    }

    /// All categories weighted equally; projection degenerates to the
    /// standard unweighted radiological path.
    pub fn uniform() -> Self {
        Self {
            w0: 1.0,
            w1: 1.0,
            w2: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for w in [self.w0, self.w1, self.w2] {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "class weights ({}, {}, {}) must be positive",
                    self.w0, self.w1, self.w2
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn for_category(&self, category: u8) -> f64 {
        match category {
            2 => self.w2,
            1 => self.w1,
            _ => self.w0,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            w0: self.w0 * k,
            w1: self.w1 * k,
            w2: self.w2 * k,
        }
    }
}

/// Contribution thresholds for labeling: `t1` for lung, `t2` for infection,
/// both in [0, 1]. At `t2 = 0` a pixel is labeled infection as soon as its
/// infection contribution is strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelThresholds {
    pub t1: f64,
    pub t2: f64,
}

impl Default for LabelThresholds {
    fn default() -> Self {
        Self { t1: 0.0, t2: 0.0 }
    }
}

impl LabelThresholds {
    pub fn new(t1: f64, t2: f64) -> Result<Self> {
        let thresholds = Self { t1, t2 };
        thresholds.validate()?;
        Ok(thresholds)
    }

    pub fn validate(&self) -> Result<()> {
        for t in [self.t1, self.t2] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidConfig(format!(
                    "thresholds ({}, {}) must lie in [0, 1]",
                    self.t1, self.t2
                )));
            }
        }
        Ok(())
    }
}

/// Denominator used for the pixel value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueNormalization {
    /// Divide by the mean category weight along the ray, `sum(w) / n`.
    #[default]
    MeanWeight,
    /// Divide by the length-weighted mean weight, `sum(l * w)`.
    WeightedLength,
}

/// A rendered DRR: per-pixel intensity, category label and contribution
/// rates (background, lung, infection). Row-major, `row * cols + col`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrrImage {
    size: (usize, usize),
    intensity: Vec<f64>,
    label: Vec<u8>,
    contributions: Vec<[f64; 3]>,
}

impl DrrImage {
    pub fn from_parts(
        size: (usize, usize),
        intensity: Vec<f64>,
        label: Vec<u8>,
        contributions: Vec<[f64; 3]>,
    ) -> Result<Self> {
        let count = size.0 * size.1;
        if intensity.len() != count || label.len() != count || contributions.len() != count {
            return Err(Error::DimMismatch(format!(
                "image buffers ({}, {}, {}) do not match {}x{}",
                intensity.len(),
                label.len(),
                contributions.len(),
                size.0,
                size.1
            )));
        }
        Ok(Self {
            size,
            intensity,
            label,
            contributions,
        })
    }

    pub fn size(&self) -> (usize, usize) {
        self.size
    }

    pub fn rows(&self) -> usize {
        self.size.0
    }

    pub fn cols(&self) -> usize {
        self.size.1
    }

    pub fn pixel_count(&self) -> usize {
        self.intensity.len()
    }

    pub fn intensity(&self) -> &[f64] {
        &self.intensity
    }

    pub fn labels(&self) -> &[u8] {
        &self.label
    }

    pub fn contributions(&self) -> &[[f64; 3]] {
        &self.contributions
    }

    #[inline]
    pub fn intensity_at(&self, row: usize, col: usize) -> f64 {
        self.intensity[row * self.size.1 + col]
    }

    #[inline]
    pub fn label_at(&self, row: usize, col: usize) -> u8 {
        self.label[row * self.size.1 + col]
    }

    #[inline]
    pub fn contributions_at(&self, row: usize, col: usize) -> [f64; 3] {
        self.contributions[row * self.size.1 + col]
    }
}

/// Decompose a ray (in continuous index coordinates) into per-voxel chord
/// segments. Returns an empty list when the ray misses the volume.
pub fn traverse(
    ray: &Ray,
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
) -> Vec<TraversalSegment> {
    let mut out = Vec::new();
    traverse_into(ray, dims, spacing, &mut out);
    out
}

/// Buffer-reusing form of [`traverse`].
///
/// The ray is treated as the segment from `origin` to `endpoint`;
/// intersection parameters are clamped to [0, 1]. Segments are emitted in
/// ray order, voxels are selected by the parametric midpoint of each
/// interval (half-open voxel extents `[i, i+1)`), and zero-length intervals
/// are dropped, so the emitted lengths always telescope to the full
/// entry-to-exit chord.
pub fn traverse_into(
    ray: &Ray,
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    out: &mut Vec<TraversalSegment>,
) {
    out.clear();

    let o = [ray.origin.x, ray.origin.y, ray.origin.z];
    let d = [
        ray.endpoint.x - ray.origin.x,
        ray.endpoint.y - ray.origin.y,
        ray.endpoint.z - ray.origin.z,
    ];
    let n = [dims.0 as f64, dims.1 as f64, dims.2 as f64];

    // physical length of the full index-space segment
    let phys = ((d[0] * spacing.0).powi(2) + (d[1] * spacing.1).powi(2) + (d[2] * spacing.2).powi(2))
        .sqrt();
    if phys == 0.0 || !phys.is_finite() {
        return;
    }

    // clip the parameter range to the box
    let mut t_entry = 0.0f64;
    let mut t_exit = 1.0f64;
    for axis in 0..3 {
        if d[axis] != 0.0 {
            let ta = (0.0 - o[axis]) / d[axis];
            let tb = (n[axis] - o[axis]) / d[axis];
            t_entry = t_entry.max(ta.min(tb));
            t_exit = t_exit.min(ta.max(tb));
        } else if !(0.0..n[axis]).contains(&o[axis]) {
            return;
        }
    }
    if !(t_entry < t_exit) {
        return;
    }

    // parametric distance between successive plane crossings, per axis
    let inf = f64::INFINITY;
    let t_delta = [
        if d[0] != 0.0 { 1.0 / d[0].abs() } else { inf },
        if d[1] != 0.0 { 1.0 / d[1].abs() } else { inf },
        if d[2] != 0.0 { 1.0 / d[2].abs() } else { inf },
    ];

    // first plane crossing after entry, per axis
    let mut t_max = [inf; 3];
    for axis in 0..3 {
        if d[axis] == 0.0 {
            continue;
        }
        let entry = o[axis] + t_entry * d[axis];
        let idx = entry.floor().clamp(0.0, n[axis] - 1.0);
        t_max[axis] = if d[axis] > 0.0 {
            (idx + 1.0 - o[axis]) / d[axis]
        } else {
            (idx - o[axis]) / d[axis]
        };
        // entry exactly on a crossing plane: step to the next one
        if t_max[axis] <= t_entry {
            t_max[axis] += t_delta[axis];
        }
    }

    let max_idx = [
        dims.0 as isize - 1,
        dims.1 as isize - 1,
        dims.2 as isize - 1,
    ];
    let mut t_cur = t_entry;
    loop {
        let t_next = t_max[0].min(t_max[1]).min(t_max[2]).min(t_exit);
        if t_next > t_cur {
            let t_mid = 0.5 * (t_cur + t_next);
            let vx = ((o[0] + t_mid * d[0]).floor() as isize).clamp(0, max_idx[0]) as usize;
            let vy = ((o[1] + t_mid * d[1]).floor() as isize).clamp(0, max_idx[1]) as usize;
            let vz = ((o[2] + t_mid * d[2]).floor() as isize).clamp(0, max_idx[2]) as usize;
            let voxel = (vx, vy, vz);
            let raw_length = (t_next - t_cur) * phys;
            match out.last_mut() {
                Some(last) if last.voxel == voxel => last.raw_length += raw_length,
                _ => out.push(TraversalSegment { voxel, raw_length }),
            }
            t_cur = t_next;
        }
        if t_next >= t_exit {
            break;
        }
        for axis in 0..3 {
            if t_max[axis] <= t_next {
                t_max[axis] += t_delta[axis];
            }
        }
    }
}

/// Class-weighted pixel value over one ray's segments. Empty segment lists
/// (rays that miss) give 0.
pub fn pixel_value(
    segments: &[TraversalSegment],
    ct: &CtVolume,
    labels: &LabelVolume,
    weights: &ClassWeights,
    mode: IntensityMode,
) -> f64 {
    pixel_value_normalized(segments, ct, labels, weights, mode, ValueNormalization::MeanWeight)
}

/// [`pixel_value`] with an explicit choice of denominator.
pub fn pixel_value_normalized(
    segments: &[TraversalSegment],
    ct: &CtVolume,
    labels: &LabelVolume,
    weights: &ClassWeights,
    mode: IntensityMode,
    normalization: ValueNormalization,
) -> f64 {
    if segments.is_empty() {
        return 0.0;
    }
    let total: f64 = segments.iter().map(|s| s.raw_length).sum();
    let mut numerator = 0.0f64;
    let mut weight_sum = 0.0f64;
    let mut length_weight_sum = 0.0f64;
    for seg in segments {
        let l = seg.raw_length / total;
        let rho = intensity_unchecked(ct.value(seg.voxel) as f64, mode);
        let w = weights.for_category(labels.category(seg.voxel));
        numerator += l * rho * w;
        weight_sum += w;
        length_weight_sum += l * w;
    }
    let denominator = match normalization {
        ValueNormalization::MeanWeight => weight_sum / segments.len() as f64,
        ValueNormalization::WeightedLength => length_weight_sum,
    };
    numerator / denominator
}

/// Weighted-length contribution rate per category. Components sum to 1 for
/// any intersecting ray; misses return the (1, 0, 0) convention.
pub fn contribution_rates(
    segments: &[TraversalSegment],
    labels: &LabelVolume,
    weights: &ClassWeights,
) -> [f64; 3] {
    if segments.is_empty() {
        return [1.0, 0.0, 0.0];
    }
    let mut acc = [0.0f64; 3];
    for seg in segments {
        let category = labels.category(seg.voxel);
        acc[category as usize] += seg.raw_length * weights.for_category(category);
    }
    let total = acc[0] + acc[1] + acc[2];
    [acc[0] / total, acc[1] / total, acc[2] / total]
}

/// Threshold the contribution rates into a pixel label, strictly:
/// 2 if the infection rate exceeds `t2`, else 1 if the lung rate exceeds
/// `t1`, else 0.
pub fn classify_pixel(contributions: [f64; 3], thresholds: &LabelThresholds) -> u8 {
    if contributions[2] > thresholds.t2 {
        2
    } else if contributions[1] > thresholds.t1 {
        1
    } else {
        0
    }
}

/// Render a full DRR with the default (mean-weight) value normalization.
pub fn render(
    ct: &CtVolume,
    labels: &LabelVolume,
    pose: &RigidPose,
    geom: &ImagingGeometry,
    weights: &ClassWeights,
    thresholds: &LabelThresholds,
    mode: IntensityMode,
) -> Result<DrrImage> {
    render_normalized(
        ct,
        labels,
        pose,
        geom,
        weights,
        thresholds,
        mode,
        ValueNormalization::MeanWeight,
    )
}

/// Render a full DRR. Pixels are filled independently (the work is
/// parallelized over pixels), so the output does not depend on the worker
/// count.
#[allow(clippy::too_many_arguments)]
pub fn render_normalized(
    ct: &CtVolume,
    labels: &LabelVolume,
    pose: &RigidPose,
    geom: &ImagingGeometry,
    weights: &ClassWeights,
    thresholds: &LabelThresholds,
    mode: IntensityMode,
    normalization: ValueNormalization,
) -> Result<DrrImage> {
    labels.ensure_paired(ct)?;
    geom.validate()?;
    weights.validate()?;
    thresholds.validate()?;

    let caster = RayCaster::new(geom, pose, ct);
    let (rows, cols) = geom.detector_size;
    let dims = ct.dims();
    let spacing = ct.spacing();

    let pixels: Vec<(f64, u8, [f64; 3])> = (0..rows * cols)
        .into_par_iter()
        .map_init(Vec::new, |segments, p| {
            let (row, col) = (p / cols, p % cols);
            let ray = caster.ray(row, col);
            traverse_into(&ray, dims, spacing, segments);
            if segments.is_empty() {
                (0.0, 0u8, [1.0, 0.0, 0.0])
            } else {
                let value =
                    pixel_value_normalized(segments, ct, labels, weights, mode, normalization);
                let rates = contribution_rates(segments, labels, weights);
                (value, classify_pixel(rates, thresholds), rates)
            }
        })
        .collect();

    let mut intensity = Vec::with_capacity(pixels.len());
    let mut label = Vec::with_capacity(pixels.len());
    let mut contributions = Vec::with_capacity(pixels.len());
    for (v, m, c) in pixels {
        intensity.push(v);
        label.push(m);
        contributions.push(c);
    }
    Ok(DrrImage {
        size: (rows, cols),
        intensity,
        label,
        contributions,
    })
}
