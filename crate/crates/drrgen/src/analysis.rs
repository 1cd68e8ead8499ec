//! Sensitivity analytics: per-case infected proportions, their
//! weight-equivalent counterparts (EAPIV), and histograms of the per-pixel
//! infection contribution rate (CRIV) across rendered poses.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ImagingGeometry, RigidPose};
use crate::projector::{render, ClassWeights, LabelThresholds};
use crate::volume::{CtVolume, IntensityMode, LabelVolume};

/// Infected fraction of the lungs: infection voxels over lung plus
/// infection voxels.
pub fn infected_proportion(labels: &LabelVolume) -> Result<f64> {
    let counts = labels.category_counts();
    let lungs = counts[1] + counts[2];
    if lungs == 0 {
        return Err(Error::NoLungRegion);
    }
    Ok(counts[2] as f64 / lungs as f64)
}

/// Equivalent average proportion of infected voxels under class weighting:
/// the infected fraction a uniformly weighted volume would need to match
/// the weighted one, `w2 * p / (w1 * (1 - p) + w2 * p)`.
///
/// Identity when `w1 == w2`; strictly increasing in `w2`, decreasing in
/// `w1`; fixes 0 and 1.
pub fn eapiv(p: f64, weights: &ClassWeights) -> f64 {
    weights.w2 * p / (weights.w1 * (1.0 - p) + weights.w2 * p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EapivEntry {
    pub weights: ClassWeights,
    pub eapiv: f64,
}

/// Per-case voxel statistics plus the equivalent proportion under each
/// weight tuple of interest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStats {
    pub case_id: String,
    pub infected_voxels: usize,
    pub lung_voxels: usize,
    pub p: f64,
    pub eapiv_by_weights: Vec<EapivEntry>,
}

/// Compute [`CaseStats`] for one labeled volume.
pub fn case_stats(
    case_id: &str,
    labels: &LabelVolume,
    weight_grid: &[ClassWeights],
) -> Result<CaseStats> {
    let counts = labels.category_counts();
    let p = infected_proportion(labels)?;
    Ok(CaseStats {
        case_id: case_id.to_string(),
        infected_voxels: counts[2],
        lung_voxels: counts[1],
        p,
        eapiv_by_weights: weight_grid
            .iter()
            .map(|w| EapivEntry {
                weights: *w,
                eapiv: eapiv(p, w),
            })
            .collect(),
    })
}

/// Mean and population standard deviation of per-case equivalent
/// proportions under one weight tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EapivAggregate {
    pub weights: ClassWeights,
    pub mean: f64,
    pub std_dev: f64,
}

/// Aggregate per-case equivalents across cases for each weight tuple.
pub fn eapiv_table(cases: &[CaseStats], weight_grid: &[ClassWeights]) -> Result<Vec<EapivAggregate>> {
    if cases.is_empty() {
        return Err(Error::EmptyInput("eapiv_table needs at least one case".into()));
    }
    let n = cases.len() as f64;
    Ok(weight_grid
        .iter()
        .map(|w| {
            let values: Vec<f64> = cases.iter().map(|c| eapiv(c.p, w)).collect();
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            EapivAggregate {
                weights: *w,
                mean,
                std_dev: var.sqrt(),
            }
        })
        .collect())
}

/// Histogram of the infection contribution rate over all pixels that see
/// any infected tissue, across one or more rendered poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrivHistogram {
    pub bin_count: usize,
    /// `bin_count + 1` uniform edges over [0, 1].
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Exact mean of the included rates (0 when nothing was included).
    pub mean: f64,
    /// Which pixels were counted.
    pub population: String,
}

impl CrivHistogram {
    fn new(bin_count: usize, population: String) -> Self {
        Self {
            bin_count,
            edges: (0..=bin_count).map(|i| i as f64 / bin_count as f64).collect(),
            counts: vec![0; bin_count],
            mean: 0.0,
            population,
        }
    }

    fn insert(&mut self, value: f64) {
        let bin = ((value * self.bin_count as f64) as usize).min(self.bin_count - 1);
        self.counts[bin] += 1;
    }

    fn merge(mut self, other: &CrivHistogram) -> Self {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// CSV dump, one row per bin: `bin_lo,bin_hi,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, count) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{count}\n", self.edges[i], self.edges[i + 1]));
        }
        out
    }
}

/// Render the volume in each pose and histogram the per-pixel infection
/// contribution rates of every pixel with a strictly positive rate.
pub fn criv_histogram(
    ct: &CtVolume,
    labels: &LabelVolume,
    poses: &[RigidPose],
    geom: &ImagingGeometry,
    weights: &ClassWeights,
    bins: usize,
) -> Result<CrivHistogram> {
    if bins == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
    }
    if poses.is_empty() {
        return Err(Error::EmptyInput("criv_histogram needs at least one pose".into()));
    }
    labels.ensure_paired(ct)?;

    let population = format!(
        "pixels with infection contribution > 0 over {} pose(s), {}x{} {} detector",
        poses.len(),
        geom.detector_size.0,
        geom.detector_size.1,
        geom.view,
    );

    // per-pose partial histograms merge associatively
    let thresholds = LabelThresholds::default();
    type Partial = (CrivHistogram, f64, u64);
    let (merged, sum, n) = poses
        .par_iter()
        .map(|pose| -> Result<Partial> {
            let image = render(
                ct,
                labels,
                pose,
                geom,
                weights,
                &thresholds,
                IntensityMode::Attenuation,
            )?;
            let mut partial = CrivHistogram::new(bins, String::new());
            let mut sum = 0.0f64;
            let mut n = 0u64;
            for rates in image.contributions() {
                if rates[2] > 0.0 {
                    partial.insert(rates[2]);
                    sum += rates[2];
                    n += 1;
                }
            }
            Ok((partial, sum, n))
        })
        .reduce(
            || Ok((CrivHistogram::new(bins, String::new()), 0.0, 0)),
            |a: Result<Partial>, b: Result<Partial>| {
                let (ha, sa, na) = a?;
                let (hb, sb, nb) = b?;
                Ok((ha.merge(&hb), sa + sb, na + nb))
            },
        )?;

    let mut histogram = merged;
    histogram.population = population;
    histogram.mean = if n > 0 { sum / n as f64 } else { 0.0 };
    Ok(histogram)
}
