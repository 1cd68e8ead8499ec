//! CT and category-mask volumes: domain types, HU conversion, file I/O.
//!
//! Two on-disk formats are supported and picked by file extension:
//!
//! * `.nii` — a deliberate NIfTI-1 subset (see [`crate::nifti`]),
//! * `.rawvol` — little-endian scalars plus a JSON sidecar (see [`crate::rawvol`]).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nifti;
use crate::rawvol;

/// How stored Hounsfield units are turned into the intensity that a ray
/// accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityMode {
    /// Use the HU value unchanged. Air then contributes -1000 per unit
    /// length, so path sums can go negative.
    RawHu,
    /// Clamped linear rescale `max(0, (HU + 1000) / 1000)`: air maps to 0,
    /// water to 1.
    #[default]
    Attenuation,
}

/// Convert one HU sample under the given mode.
pub fn hu_to_intensity(hu: f64, mode: IntensityMode) -> Result<f64> {
    if !hu.is_finite() {
        return Err(Error::NonFiniteValue(format!("HU sample {hu}")));
    }
    Ok(intensity_unchecked(hu, mode))
}

/// Same conversion without the finiteness check. Volumes constructed through
/// this crate are already validated finite.
#[inline]
pub(crate) fn intensity_unchecked(hu: f64, mode: IntensityMode) -> f64 {
    match mode {
        IntensityMode::RawHu => hu,
        IntensityMode::Attenuation => ((hu + 1000.0) / 1000.0).max(0.0),
    }
}

/// A CT volume in Hounsfield units on a regular grid.
///
/// Storage is x-fastest: voxel `(i, j, k)` lives at `i + nx * (j + ny * k)`.
/// `origin` is the world position (mm) of the corner of voxel `(0, 0, 0)`,
/// so the volume spans `origin .. origin + dims * spacing`.
#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    origin: (f64, f64, f64),
    values: Vec<f32>,
}

impl CtVolume {
    pub fn new(
        dims: (usize, usize, usize),
        spacing: (f64, f64, f64),
        origin: (f64, f64, f64),
        values: Vec<f32>,
    ) -> Result<Self> {
        validate_grid(dims, spacing, origin)?;
        let count = dims.0 * dims.1 * dims.2;
        if values.len() != count {
            return Err(Error::DimMismatch(format!(
                "{} values for {}x{}x{} grid ({} expected)",
                values.len(),
                dims.0,
                dims.1,
                dims.2,
                count
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!("voxel value {v}")));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            values,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn spacing(&self) -> (f64, f64, f64) {
        self.spacing
    }

    pub fn origin(&self) -> (f64, f64, f64) {
        self.origin
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn voxel_count(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn linear_index(&self, voxel: (usize, usize, usize)) -> usize {
        voxel.0 + self.dims.0 * (voxel.1 + self.dims.1 * voxel.2)
    }

    #[inline]
    pub fn value(&self, voxel: (usize, usize, usize)) -> f32 {
        self.values[self.linear_index(voxel)]
    }

    /// World position (mm) of the geometric center of the volume.
    pub fn center(&self) -> (f64, f64, f64) {
        (
            self.origin.0 + 0.5 * self.dims.0 as f64 * self.spacing.0,
            self.origin.1 + 0.5 * self.dims.1 as f64 * self.spacing.1,
            self.origin.2 + 0.5 * self.dims.2 as f64 * self.spacing.2,
        )
    }

    pub fn hu_range(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &self.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Per-voxel category mask paired with a [`CtVolume`]:
/// 0 = background, 1 = lungs, 2 = infection.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    origin: (f64, f64, f64),
    categories: Vec<u8>,
}

impl LabelVolume {
    pub fn new(
        dims: (usize, usize, usize),
        spacing: (f64, f64, f64),
        origin: (f64, f64, f64),
        categories: Vec<u8>,
    ) -> Result<Self> {
        validate_grid(dims, spacing, origin)?;
        let count = dims.0 * dims.1 * dims.2;
        if categories.len() != count {
            return Err(Error::DimMismatch(format!(
                "{} categories for {}x{}x{} grid ({} expected)",
                categories.len(),
                dims.0,
                dims.1,
                dims.2,
                count
            )));
        }
        if let Some(&c) = categories.iter().find(|&&c| c > 2) {
            return Err(Error::UnknownLabelCode(c as i64));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            categories,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn spacing(&self) -> (f64, f64, f64) {
        self.spacing
    }

    pub fn origin(&self) -> (f64, f64, f64) {
        self.origin
    }

    pub fn categories(&self) -> &[u8] {
        &self.categories
    }

    #[inline]
    pub fn category(&self, voxel: (usize, usize, usize)) -> u8 {
        self.categories[voxel.0 + self.dims.0 * (voxel.1 + self.dims.1 * voxel.2)]
    }

    /// Voxel counts per category `[background, lung, infection]`.
    pub fn category_counts(&self) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for &c in &self.categories {
            counts[c as usize] += 1;
        }
        counts
    }

    /// Checks dims and spacing against the paired CT volume.
    pub fn ensure_paired(&self, ct: &CtVolume) -> Result<()> {
        if self.dims != ct.dims() {
            return Err(Error::GeometryMismatch(format!(
                "label dims {:?} vs CT dims {:?}",
                self.dims,
                ct.dims()
            )));
        }
        if self.spacing != ct.spacing() {
            return Err(Error::GeometryMismatch(format!(
                "label spacing {:?} vs CT spacing {:?}",
                self.spacing,
                ct.spacing()
            )));
        }
        Ok(())
    }
}

fn validate_grid(
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    origin: (f64, f64, f64),
) -> Result<()> {
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(Error::DimMismatch(format!("zero-sized dims {dims:?}")));
    }
    for s in [spacing.0, spacing.1, spacing.2] {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::DimMismatch(format!("nonpositive spacing {spacing:?}")));
        }
    }
    for o in [origin.0, origin.1, origin.2] {
        if !o.is_finite() {
            return Err(Error::NonFiniteValue(format!("origin {origin:?}")));
        }
    }
    Ok(())
}

/// Maps stored mask codes onto the three projection categories.
///
/// The default collapses left and right lung codes into the single lung
/// category: `0 -> 0`, `1 -> 1`, `2 -> 1`, `3 -> 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelCodeMap(BTreeMap<i64, u8>);

impl Default for LabelCodeMap {
    fn default() -> Self {
        Self(BTreeMap::from([(0, 0), (1, 1), (2, 1), (3, 2)]))
    }
}

impl LabelCodeMap {
    pub fn new(entries: impl IntoIterator<Item = (i64, u8)>) -> Result<Self> {
        let map: BTreeMap<i64, u8> = entries.into_iter().collect();
        if map.is_empty() {
            return Err(Error::EmptyInput("label code map".into()));
        }
        if let Some((code, cat)) = map.iter().find(|(_, &cat)| cat > 2) {
            return Err(Error::InvalidConfig(format!(
                "code {code} maps to category {cat}, outside 0..=2"
            )));
        }
        Ok(Self(map))
    }

    pub fn category_for(&self, code: i64) -> Result<u8> {
        self.0
            .get(&code)
            .copied()
            .ok_or(Error::UnknownLabelCode(code))
    }
}

/// Decoded scalar payload shared by the NIfTI and raw readers.
#[derive(Debug, Clone)]
pub(crate) enum RawData {
    U8(Vec<u8>),
    I16(Vec<i16>),
    F32(Vec<f32>),
}

/// A decoded file before interpretation as CT values or label codes.
#[derive(Debug, Clone)]
pub(crate) struct DecodedVolume {
    pub dims: (usize, usize, usize),
    pub spacing: (f64, f64, f64),
    pub origin: (f64, f64, f64),
    pub slope: f64,
    pub intercept: f64,
    pub data: RawData,
}

impl DecodedVolume {
    fn into_ct(self) -> Result<CtVolume> {
        let (slope, inter) = (self.slope, self.intercept);
        let scale = |raw: f64| (raw * slope + inter) as f32;
        let values = match self.data {
            RawData::U8(v) => v.into_iter().map(|x| scale(x as f64)).collect(),
            RawData::I16(v) => v.into_iter().map(|x| scale(x as f64)).collect(),
            RawData::F32(v) => v.into_iter().map(|x| scale(x as f64)).collect(),
        };
        CtVolume::new(self.dims, self.spacing, self.origin, values)
    }

    fn into_labels(self, map: &LabelCodeMap) -> Result<LabelVolume> {
        let (slope, inter) = (self.slope, self.intercept);
        let decode = |raw: f64| -> Result<u8> {
            let v = raw * slope + inter;
            if !v.is_finite() || v.fract() != 0.0 || v.abs() > i64::MAX as f64 {
                return Err(Error::UnknownLabelCode(v as i64));
            }
            map.category_for(v as i64)
        };
        let categories = match self.data {
            RawData::U8(v) => v
                .into_iter()
                .map(|x| decode(x as f64))
                .collect::<Result<Vec<u8>>>()?,
            RawData::I16(v) => v
                .into_iter()
                .map(|x| decode(x as f64))
                .collect::<Result<Vec<u8>>>()?,
            RawData::F32(v) => v
                .into_iter()
                .map(|x| decode(x as f64))
                .collect::<Result<Vec<u8>>>()?,
        };
        LabelVolume::new(self.dims, self.spacing, self.origin, categories)
    }
}

fn decode_file(path: &Path) -> Result<DecodedVolume> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("rawvol") => rawvol::read(path),
        _ => nifti::read(path),
    }
}

/// Load a CT volume from a `.nii` or `.rawvol` file. Stored rescale slope
/// and intercept are applied so values come back in HU.
pub fn load_ct(path: &Path) -> Result<CtVolume> {
    decode_file(path)?.into_ct()
}

/// Load a category mask, translate codes through `map`, and check that the
/// grid matches the paired CT volume.
pub fn load_labels(path: &Path, paired: &CtVolume, map: &LabelCodeMap) -> Result<LabelVolume> {
    let labels = decode_file(path)?.into_labels(map)?;
    labels.ensure_paired(paired)?;
    Ok(labels)
}

/// Write a CT volume as float32. The format is picked by extension
/// (`.rawvol` for the raw sidecar format, NIfTI-1 otherwise).
pub fn write_ct(volume: &CtVolume, path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("rawvol") => rawvol::write_f32(
            path,
            volume.dims(),
            volume.spacing(),
            volume.origin(),
            volume.values(),
        ),
        _ => nifti::write_f32(
            path,
            volume.dims(),
            volume.spacing(),
            volume.origin(),
            volume.values(),
        ),
    }
}

/// Write a label volume as uint8 with identity code mapping (categories
/// stored as 0/1/2; reload with `LabelCodeMap::new([(0,0),(1,1),(2,2)])`
/// or any map whose codes cover them).
pub fn write_labels(labels: &LabelVolume, path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("rawvol") => rawvol::write_u8(
            path,
            labels.dims(),
            labels.spacing(),
            labels.origin(),
            labels.categories(),
        ),
        _ => nifti::write_u8(
            path,
            labels.dims(),
            labels.spacing(),
            labels.origin(),
            labels.categories(),
        ),
    }
}
