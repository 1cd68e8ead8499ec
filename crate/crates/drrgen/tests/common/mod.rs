//! Shared fixtures: synthetic phantoms, hand-written raw-format files, and
//! a dense-sampling oracle for radiological paths that stays independent of
//! the traversal implementation.

#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;

use nalgebra::Point3;
use rand::Rng;

use drrgen::geometry::Ray;
use drrgen::projector::TraversalSegment;
use drrgen::volume::{CtVolume, IntensityMode, LabelVolume};

/// Labels phantom with 90 lung and 10 infection voxels (p = 0.1).
pub fn ten_ninety_phantom() -> (CtVolume, LabelVolume) {
    let dims = (10, 10, 1);
    let mut categories = vec![1u8; 100];
    for c in categories.iter_mut().take(10) {
        *c = 2;
    }
    let hu: Vec<f32> = categories
        .iter()
        .map(|&c| if c == 2 { -300.0 } else { -800.0 })
        .collect();
    let spacing = (1.0, 1.0, 1.0);
    let origin = (0.0, 0.0, 0.0);
    (
        CtVolume::new(dims, spacing, origin, hu).unwrap(),
        LabelVolume::new(dims, spacing, origin, categories).unwrap(),
    )
}

/// Cubic phantom, 200 mm across regardless of `n`, with a centered lung box
/// whose left half (small x) is infected. Front-view rays therefore split
/// into infection-seeing, lung-only and background-only pixels. Background
/// is soft tissue so every ray that hits the volume accumulates something.
pub fn half_infected_phantom(n: usize) -> (CtVolume, LabelVolume) {
    let dims = (n, n, n);
    let mut hu = vec![0.0f32; n * n * n];
    let mut cat = vec![0u8; n * n * n];
    let lo = n / 4;
    let hi = 3 * n / 4;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                if (lo..hi).contains(&i) && (lo..hi).contains(&j) && (lo..hi).contains(&k) {
                    let idx = i + n * (j + n * k);
                    if i < n / 2 {
                        hu[idx] = -300.0;
                        cat[idx] = 2;
                    } else {
                        hu[idx] = -800.0;
                        cat[idx] = 1;
                    }
                }
            }
        }
    }
    let s = 200.0 / n as f64;
    let spacing = (s, s, s);
    let origin = (0.0, 0.0, 0.0);
    (
        CtVolume::new(dims, spacing, origin, hu).unwrap(),
        LabelVolume::new(dims, spacing, origin, cat).unwrap(),
    )
}

/// Ellipsoidal body with a lung sphere and an infected blob; used where a
/// vaguely anatomical intensity profile matters (benchmarks, CLI smoke).
pub fn synthetic_chest(n: usize, spacing: f64) -> (CtVolume, LabelVolume) {
    let dims = (n, n, n);
    let mut hu = vec![-1000.0f32; n * n * n];
    let mut cat = vec![0u8; n * n * n];
    let c = n as f64 / 2.0;
    let body_r = 0.45 * n as f64;
    let lung_r = 0.28 * n as f64;
    let blob_r = 0.12 * n as f64;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let idx = i + n * (j + n * k);
                let (x, y, z) = (i as f64 + 0.5 - c, j as f64 + 0.5 - c, k as f64 + 0.5 - c);
                let r = (x * x + y * y + z * z).sqrt();
                if r < body_r {
                    hu[idx] = 40.0;
                }
                let lx = x.abs() - 0.45 * lung_r;
                let lr = (lx * lx + y * y + z * z).sqrt();
                if lr < lung_r {
                    hu[idx] = -800.0;
                    cat[idx] = 1;
                }
                let bx = x - 0.3 * lung_r;
                let br = (bx * bx + y * y + z * z).sqrt();
                if br < blob_r {
                    hu[idx] = -300.0;
                    cat[idx] = 2;
                }
            }
        }
    }
    let spacing = (spacing, spacing, spacing);
    let origin = (0.0, 0.0, 0.0);
    (
        CtVolume::new(dims, spacing, origin, hu).unwrap(),
        LabelVolume::new(dims, spacing, origin, cat).unwrap(),
    )
}

/// Random HU volume with random categories.
pub fn random_volume_pair<R: Rng>(rng: &mut R, n: usize) -> (CtVolume, LabelVolume) {
    let count = n * n * n;
    let hu: Vec<f32> = (0..count).map(|_| rng.gen_range(-1000.0..400.0)).collect();
    let cat: Vec<u8> = (0..count).map(|_| rng.gen_range(0..=2)).collect();
    let spacing = (1.0, 1.0, 1.0);
    let origin = (0.0, 0.0, 0.0);
    (
        CtVolume::new((n, n, n), spacing, origin, hu).unwrap(),
        LabelVolume::new((n, n, n), spacing, origin, cat).unwrap(),
    )
}

/// A ray guaranteed to pass through the volume: the segment through two
/// random interior points, extended past both faces.
pub fn random_through_ray<R: Rng>(rng: &mut R, dims: (usize, usize, usize)) -> Ray {
    let inside = |rng: &mut R| {
        Point3::new(
            rng.gen_range(0.0..dims.0 as f64),
            rng.gen_range(0.0..dims.1 as f64),
            rng.gen_range(0.0..dims.2 as f64),
        )
    };
    loop {
        let a = inside(rng);
        let b = inside(rng);
        let d = b - a;
        if d.norm() > 0.5 {
            return Ray {
                origin: a - 3.0 * d,
                endpoint: b + 3.0 * d,
            };
        }
    }
}

/// Dense-sampling oracle: split the ray into `samples` equal parametric
/// slices, attribute each slice's physical length to the voxel containing
/// its midpoint. Independent of the traversal code by construction.
pub fn dense_segment_lengths(
    ray: &Ray,
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    samples: usize,
) -> HashMap<(usize, usize, usize), f64> {
    let o = ray.origin;
    let d = ray.endpoint - ray.origin;
    let phys = ((d.x * spacing.0).powi(2) + (d.y * spacing.1).powi(2) + (d.z * spacing.2).powi(2))
        .sqrt();
    let step = phys / samples as f64;
    let mut lengths = HashMap::new();
    for s in 0..samples {
        let t = (s as f64 + 0.5) / samples as f64;
        let p = o + t * d;
        let (i, j, k) = (p.x.floor(), p.y.floor(), p.z.floor());
        if i >= 0.0
            && j >= 0.0
            && k >= 0.0
            && (i as usize) < dims.0
            && (j as usize) < dims.1
            && (k as usize) < dims.2
        {
            *lengths
                .entry((i as usize, j as usize, k as usize))
                .or_insert(0.0) += step;
        }
    }
    lengths
}

/// Dense-sampling radiological path: physical length times voxel intensity,
/// summed over samples inside the volume.
pub fn dense_rpl(ray: &Ray, ct: &CtVolume, mode: IntensityMode, samples: usize) -> f64 {
    let spacing = ct.spacing();
    let dims = ct.dims();
    let o = ray.origin;
    let d = ray.endpoint - ray.origin;
    let phys = ((d.x * spacing.0).powi(2) + (d.y * spacing.1).powi(2) + (d.z * spacing.2).powi(2))
        .sqrt();
    let step = phys / samples as f64;
    let mut sum = 0.0;
    for s in 0..samples {
        let t = (s as f64 + 0.5) / samples as f64;
        let p = o + t * d;
        let (i, j, k) = (p.x.floor(), p.y.floor(), p.z.floor());
        if i >= 0.0
            && j >= 0.0
            && k >= 0.0
            && (i as usize) < dims.0
            && (j as usize) < dims.1
            && (k as usize) < dims.2
        {
            let hu = ct.value((i as usize, j as usize, k as usize)) as f64;
            sum += step * intensity_of(hu, mode);
        }
    }
    sum
}

fn intensity_of(hu: f64, mode: IntensityMode) -> f64 {
    match mode {
        IntensityMode::RawHu => hu,
        IntensityMode::Attenuation => ((hu + 1000.0) / 1000.0).max(0.0),
    }
}

/// Unweighted radiological path from traversal segments, un-normalized:
/// `sum(raw_length * rho)`.
pub fn segment_rpl(segments: &[TraversalSegment], ct: &CtVolume, mode: IntensityMode) -> f64 {
    segments
        .iter()
        .map(|s| s.raw_length * intensity_of(ct.value(s.voxel) as f64, mode))
        .sum()
}

/// Normalized-length unweighted path mean, the value Eq.-style projection
/// reduces to at uniform weights: `sum(l * rho)` with `sum(l) = 1`.
pub fn normalized_rpl_mean(
    segments: &[TraversalSegment],
    ct: &CtVolume,
    mode: IntensityMode,
) -> f64 {
    if segments.is_empty() {
        return 0.0;
    }
    let total: f64 = segments.iter().map(|s| s.raw_length).sum();
    segments
        .iter()
        .map(|s| (s.raw_length / total) * intensity_of(ct.value(s.voxel) as f64, mode))
        .sum()
}

/// Hand-rolled `.rawvol` writer (format spec, not the library writer), so
/// reader tests do not rely on writer symmetry.
pub fn write_rawvol_u8(
    path: &Path,
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    origin: (f64, f64, f64),
    codes: &[u8],
) {
    let sidecar = serde_json::json!({
        "dims": [dims.0, dims.1, dims.2],
        "spacing": [spacing.0, spacing.1, spacing.2],
        "origin": [origin.0, origin.1, origin.2],
        "dtype": "u8",
    });
    let mut sidecar_path = path.as_os_str().to_owned();
    sidecar_path.push(".json");
    std::fs::write(sidecar_path, sidecar.to_string()).unwrap();
    std::fs::write(path, codes).unwrap();
}

/// Hand-rolled `.rawvol` f32 writer.
pub fn write_rawvol_f32(
    path: &Path,
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    origin: (f64, f64, f64),
    values: &[f32],
) {
    let sidecar = serde_json::json!({
        "dims": [dims.0, dims.1, dims.2],
        "spacing": [spacing.0, spacing.1, spacing.2],
        "origin": [origin.0, origin.1, origin.2],
        "dtype": "f32",
    });
    let mut sidecar_path = path.as_os_str().to_owned();
    sidecar_path.push(".json");
    std::fs::write(sidecar_path, sidecar.to_string()).unwrap();
    let mut payload = Vec::with_capacity(values.len() * 4);
    for v in values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, payload).unwrap();
}

/// Write the CT/label pair to disk in the external mask convention
/// (codes 0 = background, 1 = lung, 3 = infection) so the default code map
/// applies. Returns (ct path, labels path).
pub fn write_case_files(
    dir: &Path,
    name: &str,
    ct: &CtVolume,
    labels: &LabelVolume,
) -> (std::path::PathBuf, std::path::PathBuf) {
    let ct_path = dir.join(format!("{name}.rawvol"));
    let labels_path = dir.join(format!("{name}_mask.rawvol"));
    drrgen::volume::write_ct(ct, &ct_path).unwrap();
    let codes: Vec<u8> = labels
        .categories()
        .iter()
        .map(|&c| match c {
            2 => 3,
            other => other,
        })
        .collect();
    write_rawvol_u8(
        &labels_path,
        labels.dims(),
        labels.spacing(),
        labels.origin(),
        &codes,
    );
    (ct_path, labels_path)
}
