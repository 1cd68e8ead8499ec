//! Deterministic dataset builds: for every (weights, thresholds) grid cell,
//! render each case in randomized poses, split into a "normal" phase
//! (no-findings weighting, all-background masks) and an annotated phase,
//! and record everything in a JSON manifest.
//!
//! Every image gets its own seed derived from the base seed and a stable
//! hash of (case, view, phase, index), so any subset of the dataset can be
//! regenerated independently and builds are byte-identical regardless of
//! worker count.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::{self, Window};
use crate::geometry::{sample_pose, ImagingGeometry, PoseRanges, RigidPose, ViewAxis};
use crate::projector::{
    render_normalized, ClassWeights, LabelThresholds, ValueNormalization,
};
use crate::volume::{load_ct, load_labels, CtVolume, IntensityMode, LabelCodeMap, LabelVolume};

/// The nine-point weight sweep used for sensitivity runs: background and
/// lung dampened at one end, infection amplified at the other.
pub fn default_weight_grid() -> Vec<ClassWeights> {
    [
        (12.0, 12.0, 1.0),
        (6.0, 6.0, 1.0),
        (3.0, 3.0, 1.0),
        (1.5, 1.5, 1.0),
        (1.0, 1.0, 1.0),
        (1.0, 1.0, 1.5),
        (1.0, 1.0, 3.0),
        (1.0, 1.0, 6.0),
        (1.0, 1.0, 12.0),
    ]
    .into_iter()
    .map(|(w0, w1, w2)| ClassWeights { w0, w1, w2 })
    .collect()
}

/// The seven-point infection-threshold sweep (lung threshold fixed at 0).
pub fn default_threshold_grid() -> Vec<LabelThresholds> {
    [0.00, 0.01, 0.05, 0.10, 0.15, 0.20, 0.40]
        .into_iter()
        .map(|t2| LabelThresholds { t1: 0.0, t2 })
        .collect()
}

/// Weighting that suppresses infection findings for the normal phase.
pub fn normal_regime_weights() -> ClassWeights {
    ClassWeights {
        w0: 24.0,
        w1: 24.0,
        w2: 1.0,
    }
}

fn default_per_case_per_view() -> usize {
    20
}

fn default_views() -> Vec<ViewAxis> {
    vec![ViewAxis::Front, ViewAxis::Lateral]
}

fn default_true() -> bool {
    true
}

/// One input case: a CT volume and its category mask.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseSpec {
    /// Defaults to the CT file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub ct: PathBuf,
    pub labels: PathBuf,
}

impl CaseSpec {
    pub fn resolved_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            self.ct
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "case".to_string())
        })
    }
}

/// Full build description; the JSON config file mirrors this field for
/// field. Only `cases` and `output_dir` are required.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub cases: Vec<CaseSpec>,
    #[serde(default = "default_weight_grid")]
    pub weight_grid: Vec<ClassWeights>,
    #[serde(default = "default_threshold_grid")]
    pub threshold_grid: Vec<LabelThresholds>,
    #[serde(default = "normal_regime_weights")]
    pub normal_weights: ClassWeights,
    /// Renders per view per phase for each case.
    #[serde(default = "default_per_case_per_view")]
    pub per_case_per_view: usize,
    #[serde(default = "default_views")]
    pub views: Vec<ViewAxis>,
    /// Whether the no-findings phase is generated at all.
    #[serde(default = "default_true")]
    pub normal_phase: bool,
    #[serde(default)]
    pub pose_ranges: PoseRanges,
    #[serde(default)]
    pub geometry: ImagingGeometry,
    #[serde(default)]
    pub intensity_mode: IntensityMode,
    #[serde(default)]
    pub normalization: ValueNormalization,
    #[serde(default)]
    pub window: Window,
    #[serde(default)]
    pub base_seed: u64,
    /// Also dump raw little-endian f64 intensities next to each PNG.
    #[serde(default)]
    pub float_sidecar: bool,
    pub output_dir: PathBuf,
}

impl DatasetConfig {
    /// Minimal config with every optional field at its default.
    pub fn with_defaults(cases: Vec<CaseSpec>, output_dir: PathBuf) -> Self {
        Self {
            cases,
            weight_grid: default_weight_grid(),
            threshold_grid: default_threshold_grid(),
            normal_weights: normal_regime_weights(),
            per_case_per_view: default_per_case_per_view(),
            views: default_views(),
            normal_phase: true,
            pose_ranges: PoseRanges::default(),
            geometry: ImagingGeometry::default(),
            intensity_mode: IntensityMode::default(),
            normalization: ValueNormalization::default(),
            window: Window::default(),
            base_seed: 0,
            float_sidecar: false,
            output_dir,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let config: Self = serde_json::from_slice(&fs::read(path)?)?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cases.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if self.weight_grid.is_empty() || self.threshold_grid.is_empty() {
            return Err(Error::InvalidConfig(
                "weight and threshold grids must be non-empty".into(),
            ));
        }
        if self.per_case_per_view < 1 {
            return Err(Error::InvalidConfig(
                "per_case_per_view must be at least 1".into(),
            ));
        }
        if self.views.is_empty() {
            return Err(Error::InvalidConfig("views must be non-empty".into()));
        }
        for w in self.weight_grid.iter().chain([&self.normal_weights]) {
            w.validate()?;
        }
        for t in &self.threshold_grid {
            t.validate()?;
        }
        self.pose_ranges.validate()?;
        self.geometry.validate()?;
        self.window.validate()?;
        Ok(())
    }
}

/// One rendered image in the manifest. Paths are relative to the dataset
/// root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub case_id: String,
    pub view: ViewAxis,
    pub pose: RigidPose,
    pub weights: ClassWeights,
    pub thresholds: LabelThresholds,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub is_normal: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact_version: String,
    pub config_hash: String,
    pub window: Window,
    pub records: Vec<DatasetRecord>,
}

impl Manifest {
    pub fn from_file(path: &Path) -> Result<Self> {
        let manifest: Self = serde_json::from_slice(&fs::read(path)?)?;
        Ok(manifest)
    }
}

/// 64-bit FNV-1a. Used for per-image seeds and the config hash; the
/// algorithm is pinned here so stored seeds stay valid across releases.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Seed for one image: the base seed combined with a stable hash of
/// (case, view, phase, index).
pub fn record_seed(base_seed: u64, case_id: &str, view: ViewAxis, is_normal: bool, index: usize) -> u64 {
    let phase = if is_normal { "normal" } else { "annotated" };
    let key = format!("{case_id}\u{0}{view}\u{0}{phase}\u{0}{index}");
    base_seed ^ fnv1a64(key.as_bytes())
}

/// Reconstruct the pose a stored seed produced.
pub fn pose_for_seed(seed: u64, ranges: &PoseRanges) -> RigidPose {
    sample_pose(&mut ChaCha8Rng::seed_from_u64(seed), ranges)
}

fn trim_float(v: f64) -> String {
    format!("{v}")
}

/// Directory name for one grid cell, e.g. `w1-1-3_t1-0_t2-0.2`.
pub fn cell_dir_name(weights: &ClassWeights, thresholds: &LabelThresholds) -> String {
    format!(
        "w{}-{}-{}_t1-{}_t2-{}",
        trim_float(weights.w0),
        trim_float(weights.w1),
        trim_float(weights.w2),
        trim_float(thresholds.t1),
        trim_float(thresholds.t2)
    )
}

struct PlannedRender {
    case_id: String,
    view: ViewAxis,
    is_normal: bool,
    seed: u64,
    pose: RigidPose,
    weights: ClassWeights,
    image: PathBuf,
    mask: PathBuf,
}

fn plan_case(
    case_id: &str,
    config: &DatasetConfig,
    weights: &ClassWeights,
    thresholds: &LabelThresholds,
) -> Vec<PlannedRender> {
    let cell = PathBuf::from(cell_dir_name(weights, thresholds));
    let mut plans = Vec::new();
    let phases: &[bool] = if config.normal_phase {
        &[true, false]
    } else {
        &[false]
    };
    for &is_normal in phases {
        for &view in &config.views {
            for index in 0..config.per_case_per_view {
                let seed = record_seed(config.base_seed, case_id, view, is_normal, index);
                let phase = if is_normal { "normal" } else { "annotated" };
                let stem = format!("{case_id}_{view}_{phase}_{index:03}");
                plans.push(PlannedRender {
                    case_id: case_id.to_string(),
                    view,
                    is_normal,
                    seed,
                    pose: pose_for_seed(seed, &config.pose_ranges),
                    weights: if is_normal {
                        config.normal_weights
                    } else {
                        *weights
                    },
                    image: cell.join(format!("{stem}.png")),
                    mask: cell.join(format!("{stem}_mask.png")),
                });
            }
        }
    }
    plans
}

fn render_planned(
    plan: &PlannedRender,
    ct: &CtVolume,
    labels: &LabelVolume,
    config: &DatasetConfig,
    thresholds: &LabelThresholds,
) -> Result<DatasetRecord> {
    let geom = config.geometry.with_view(plan.view);
    let image = render_normalized(
        ct,
        labels,
        &plan.pose,
        &geom,
        &plan.weights,
        thresholds,
        config.intensity_mode,
        config.normalization,
    )?;

    let image_path = config.output_dir.join(&plan.image);
    let mask_path = config.output_dir.join(&plan.mask);
    export::export_image(&image, &config.window, &image_path)?;
    if plan.is_normal {
        // normal-phase DRRs are negatives: the exported mask is forced
        // all-background regardless of what the rays crossed
        export::export_blank_mask(&image, &mask_path)?;
    } else {
        export::export_mask(&image, &mask_path)?;
    }
    if config.float_sidecar {
        export::export_float(&image, &image_path.with_extension("f64"))?;
    }

    Ok(DatasetRecord {
        case_id: plan.case_id.clone(),
        view: plan.view,
        pose: plan.pose,
        weights: plan.weights,
        thresholds: *thresholds,
        image: plan.image.clone(),
        mask: plan.mask.clone(),
        is_normal: plan.is_normal,
        seed: plan.seed,
    })
}

/// Render all records of one case for one (weights, thresholds) cell:
/// `per_case_per_view` normal renders per view (unless the normal phase is
/// disabled) plus the same count of annotated renders.
pub fn build_case(
    case_id: &str,
    ct: &CtVolume,
    labels: &LabelVolume,
    config: &DatasetConfig,
    weights: &ClassWeights,
    thresholds: &LabelThresholds,
) -> Result<Vec<DatasetRecord>> {
    config.validate()?;
    labels.ensure_paired(ct)?;
    fs::create_dir_all(config.output_dir.join(cell_dir_name(weights, thresholds)))?;

    let plans = plan_case(case_id, config, weights, thresholds);
    plans
        .par_iter()
        .map(|plan| render_planned(plan, ct, labels, config, thresholds))
        .collect()
}

/// Build the full grid: a subdirectory per (weights, thresholds) cell with
/// every case rendered into it, plus `manifest.json` at the dataset root.
///
/// Cases are processed one at a time (outer loop) so only one volume pair
/// is resident; records land in the manifest in canonical
/// (case, cell, phase, view, index) order, independent of scheduling.
pub fn build_dataset(config: &DatasetConfig) -> Result<Manifest> {
    config.validate()?;
    let config_hash = format!("{:016x}", fnv1a64(serde_json::to_string(config)?.as_bytes()));

    for weights in &config.weight_grid {
        for thresholds in &config.threshold_grid {
            fs::create_dir_all(config.output_dir.join(cell_dir_name(weights, thresholds)))?;
        }
    }

    let mut records = Vec::new();
    let map = LabelCodeMap::default();
    for case in &config.cases {
        let case_id = case.resolved_id();
        let ct = load_ct(&case.ct)?;
        let labels = load_labels(&case.labels, &ct, &map)?;
        for weights in &config.weight_grid {
            for thresholds in &config.threshold_grid {
                let plans = plan_case(&case_id, config, weights, thresholds);
                let cell_records: Vec<DatasetRecord> = plans
                    .par_iter()
                    .map(|plan| render_planned(plan, &ct, &labels, config, thresholds))
                    .collect::<Result<_>>()?;
                records.extend(cell_records);
            }
        }
    }

    let manifest = Manifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash,
        window: config.window,
        records,
    };
    let mut file = fs::File::create(config.output_dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut file, &manifest)?;
    use std::io::Write as _;
    file.write_all(b"\n")?;
    Ok(manifest)
}
