//! Virtual imaging system: a point X-ray source facing a planar detector,
//! with the CT volume stationed at the isocenter and perturbed by a rigid
//! pose.
//!
//! World frame conventions: the isocenter sits at the volume's resting
//! center. A `Front` view casts rays along +y (source on the -y side), a
//! `Lateral` view along +x. Detector rows run along -z (image "up" is +z),
//! columns along +x (front) or +y (lateral).

use nalgebra::{Isometry3, Matrix4, Point3, Rotation3, Translation3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::CtVolume;

/// Rigid volume pose: translation in mm plus rotation in degrees about the
/// volume center. Rotation about x is applied first, then y, then z, all
/// about fixed axes, i.e. the rotation block is `Rz * Ry * Rx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    pub translation: (f64, f64, f64),
    pub rotation_deg: (f64, f64, f64),
}

impl RigidPose {
    pub fn identity() -> Self {
        Self {
            translation: (0.0, 0.0, 0.0),
            rotation_deg: (0.0, 0.0, 0.0),
        }
    }

    pub fn new(translation: (f64, f64, f64), rotation_deg: (f64, f64, f64)) -> Self {
        Self {
            translation,
            rotation_deg,
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.translation.0,
            self.translation.1,
            self.translation.2,
            self.rotation_deg.0,
            self.rotation_deg.1,
            self.rotation_deg.2,
        ]
    }
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

/// Uniform sampling bounds for random poses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRanges {
    /// mm, each translation component drawn from [-bound, bound]
    pub translation_bound: f64,
    /// degrees, each rotation component drawn from [-bound, bound]
    pub rotation_bound: f64,
}

impl Default for PoseRanges {
    fn default() -> Self {
        Self {
            translation_bound: 100.0,
            rotation_bound: 45.0,
        }
    }
}

impl PoseRanges {
    pub fn validate(&self) -> Result<()> {
        if !(self.translation_bound.is_finite() && self.translation_bound >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "translation bound {} must be >= 0",
                self.translation_bound
            )));
        }
        if !(self.rotation_bound.is_finite() && self.rotation_bound >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "rotation bound {} must be >= 0",
                self.rotation_bound
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewAxis {
    Front,
    Lateral,
}

impl ViewAxis {
    pub fn name(&self) -> &'static str {
        match self {
            ViewAxis::Front => "front",
            ViewAxis::Lateral => "lateral",
        }
    }
}

impl std::fmt::Display for ViewAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Source/detector layout. Distances in mm, detector size in pixels,
/// pitch in mm per pixel as (row pitch, column pitch).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagingGeometry {
    pub source_to_detector: f64,
    pub source_to_isocenter: f64,
    pub detector_size: (usize, usize),
    pub pixel_pitch: (f64, f64),
    pub view: ViewAxis,
}

impl Default for ImagingGeometry {
    /// Chest-radiograph sized defaults: 1800 mm source-to-detector,
    /// 1400 mm source-to-isocenter, 256x256 detector at 1.6 mm pitch
    /// (about a 410 mm field of view).
    fn default() -> Self {
        Self {
            source_to_detector: 1800.0,
            source_to_isocenter: 1400.0,
            detector_size: (256, 256),
            pixel_pitch: (1.6, 1.6),
            view: ViewAxis::Front,
        }
    }
}

impl ImagingGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.source_to_isocenter.is_finite()
            && self.source_to_detector.is_finite()
            && 0.0 < self.source_to_isocenter
            && self.source_to_isocenter < self.source_to_detector)
        {
            return Err(Error::InvalidConfig(format!(
                "need 0 < source_to_isocenter ({}) < source_to_detector ({})",
                self.source_to_isocenter, self.source_to_detector
            )));
        }
        if self.detector_size.0 < 1 || self.detector_size.1 < 1 {
            return Err(Error::InvalidConfig(format!(
                "detector size {:?} must be at least 1x1",
                self.detector_size
            )));
        }
        if !(self.pixel_pitch.0.is_finite()
            && self.pixel_pitch.1.is_finite()
            && self.pixel_pitch.0 > 0.0
            && self.pixel_pitch.1 > 0.0)
        {
            return Err(Error::InvalidConfig(format!(
                "pixel pitch {:?} must be positive",
                self.pixel_pitch
            )));
        }
        Ok(())
    }

    pub fn with_view(mut self, view: ViewAxis) -> Self {
        self.view = view;
        self
    }

    /// (ray axis, column direction, row direction) in the world frame.
    fn basis(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        match self.view {
            ViewAxis::Front => (Vector3::y(), Vector3::x(), -Vector3::z()),
            ViewAxis::Lateral => (Vector3::x(), Vector3::y(), -Vector3::z()),
        }
    }
}

/// A source-to-pixel segment. `make_ray` returns it in continuous voxel
/// index coordinates, which is what `traverse` consumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub endpoint: Point3<f64>,
}

/// Rigid transform `T * C * Rz * Ry * Rx * C^-1`: rotate about the volume
/// center, then translate.
pub fn pose_isometry(pose: &RigidPose, volume_center: Point3<f64>) -> Isometry3<f64> {
    let (rx, ry, rz) = pose.rotation_deg;
    let rotation = Rotation3::from_axis_angle(&Vector3::z_axis(), rz.to_radians())
        * Rotation3::from_axis_angle(&Vector3::y_axis(), ry.to_radians())
        * Rotation3::from_axis_angle(&Vector3::x_axis(), rx.to_radians());
    let (tx, ty, tz) = pose.translation;
    let center = volume_center.coords;
    // T * C * R * C^-1 collapses to translation t + c - R*c
    let shift = Vector3::new(tx, ty, tz) + center - rotation * center;
    Isometry3::from_parts(Translation3::from(shift), rotation.into())
}

/// Homogeneous 4x4 form of [`pose_isometry`].
pub fn pose_matrix(pose: &RigidPose, volume_center: Point3<f64>) -> Matrix4<f64> {
    pose_isometry(pose, volume_center).to_homogeneous()
}

/// World position of the X-ray source for the given isocenter.
pub fn source_position(geom: &ImagingGeometry, isocenter: Point3<f64>) -> Point3<f64> {
    let (axis, _, _) = geom.basis();
    isocenter - geom.source_to_isocenter * axis
}

/// World position of the center of detector pixel (row, col).
pub fn detector_pixel_center(
    geom: &ImagingGeometry,
    isocenter: Point3<f64>,
    row: usize,
    col: usize,
) -> Result<Point3<f64>> {
    let (rows, cols) = geom.detector_size;
    if row >= rows || col >= cols {
        return Err(Error::IndexOutOfRange {
            row,
            col,
            rows,
            cols,
        });
    }
    let (axis, col_dir, row_dir) = geom.basis();
    let center = isocenter + (geom.source_to_detector - geom.source_to_isocenter) * axis;
    let dc = (col as f64 - 0.5 * (cols as f64 - 1.0)) * geom.pixel_pitch.1;
    let dr = (row as f64 - 0.5 * (rows as f64 - 1.0)) * geom.pixel_pitch.0;
    Ok(center + dc * col_dir + dr * row_dir)
}

/// Precomputed per-(volume, pose, geometry) state so per-pixel rays cost a
/// couple of multiply-adds. `make_ray` is the checked single-pixel form.
pub(crate) struct RayCaster {
    source: Point3<f64>,
    pixel_origin: Point3<f64>,
    row_step: Vector3<f64>,
    col_step: Vector3<f64>,
}

impl RayCaster {
    pub(crate) fn new(geom: &ImagingGeometry, pose: &RigidPose, volume: &CtVolume) -> Self {
        let (cx, cy, cz) = volume.center();
        let isocenter = Point3::new(cx, cy, cz);
        let inverse = pose_isometry(pose, isocenter).inverse();

        let (ox, oy, oz) = volume.origin();
        let (sx, sy, sz) = volume.spacing();
        let to_index = |p: Point3<f64>| {
            Point3::new((p.x - ox) / sx, (p.y - oy) / sy, (p.z - oz) / sz)
        };

        let (axis, col_dir, row_dir) = geom.basis();
        let (rows, cols) = geom.detector_size;
        let det_center = isocenter + (geom.source_to_detector - geom.source_to_isocenter) * axis;
        let pixel00 = det_center
            - 0.5 * (cols as f64 - 1.0) * geom.pixel_pitch.1 * col_dir
            - 0.5 * (rows as f64 - 1.0) * geom.pixel_pitch.0 * row_dir;

        let rot = inverse.rotation;
        let scale = Vector3::new(1.0 / sx, 1.0 / sy, 1.0 / sz);
        Self {
            source: to_index(inverse * source_position(geom, isocenter)),
            pixel_origin: to_index(inverse * pixel00),
            row_step: (rot * (geom.pixel_pitch.0 * row_dir)).component_mul(&scale),
            col_step: (rot * (geom.pixel_pitch.1 * col_dir)).component_mul(&scale),
        }
    }

    #[inline]
    pub(crate) fn ray(&self, row: usize, col: usize) -> Ray {
        Ray {
            origin: self.source,
            endpoint: self.pixel_origin + row as f64 * self.row_step + col as f64 * self.col_step,
        }
    }
}

/// Build the ray from the source to detector pixel (row, col), expressed in
/// the volume's continuous index coordinates under the given pose.
pub fn make_ray(
    geom: &ImagingGeometry,
    pose: &RigidPose,
    volume: &CtVolume,
    row: usize,
    col: usize,
) -> Result<Ray> {
    geom.validate()?;
    let (rows, cols) = geom.detector_size;
    if row >= rows || col >= cols {
        return Err(Error::IndexOutOfRange {
            row,
            col,
            rows,
            cols,
        });
    }
    Ok(RayCaster::new(geom, pose, volume).ray(row, col))
}

/// Draw a pose with every component uniform in its bound. The draw order is
/// tx, ty, tz, rx, ry, rz, so a given seeded generator always produces the
/// same pose.
pub fn sample_pose<R: Rng + ?Sized>(rng: &mut R, ranges: &PoseRanges) -> RigidPose {
    let mut draw = |bound: f64| (2.0 * rng.gen::<f64>() - 1.0) * bound;
    let t = (
        draw(ranges.translation_bound),
        draw(ranges.translation_bound),
        draw(ranges.translation_bound),
    );
    let r = (
        draw(ranges.rotation_bound),
        draw(ranges.rotation_bound),
        draw(ranges.rotation_bound),
    );
    RigidPose::new(t, r)
}
