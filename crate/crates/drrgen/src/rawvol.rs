//! Raw volume format: `<name>.rawvol` holds little-endian scalars in
//! x-fastest order, `<name>.rawvol.json` is a sidecar with `dims`,
//! `spacing`, `origin` and `dtype` (`"u8"`, `"i16"` or `"f32"`).
//!
//! Unlike NIfTI-1, the sidecar stores spacing and origin at full f64
//! precision, so round trips are exact for any volume.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{DecodedVolume, RawData};

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    dtype: String,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub(crate) fn read(path: &Path) -> Result<DecodedVolume> {
    let sidecar: Sidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let count = sidecar.dims[0]
        .checked_mul(sidecar.dims[1])
        .and_then(|n| n.checked_mul(sidecar.dims[2]))
        .ok_or_else(|| Error::DimMismatch(format!("dims {:?} overflow", sidecar.dims)))?;

    let sample_bytes = match sidecar.dtype.as_str() {
        "u8" => 1,
        "i16" => 2,
        "f32" => 4,
        other => {
            return Err(Error::UnsupportedDatatype {
                path: path.to_path_buf(),
                dtype: other.to_string(),
            })
        }
    };

    let payload = fs::read(path)?;
    let need = (count * sample_bytes) as u64;
    if (payload.len() as u64) < need {
        return Err(Error::TruncatedData {
            path: path.to_path_buf(),
            expected: need,
            actual: payload.len() as u64,
        });
    }
    let payload = &payload[..need as usize];

    let data = match sidecar.dtype.as_str() {
        "u8" => RawData::U8(payload.to_vec()),
        "i16" => {
            let mut out = vec![0i16; count];
            LittleEndian::read_i16_into(payload, &mut out);
            RawData::I16(out)
        }
        "f32" => {
            let mut out = vec![0f32; count];
            LittleEndian::read_f32_into(payload, &mut out);
            RawData::F32(out)
        }
        _ => unreachable!(),
    };

    Ok(DecodedVolume {
        dims: (sidecar.dims[0], sidecar.dims[1], sidecar.dims[2]),
        spacing: (sidecar.spacing[0], sidecar.spacing[1], sidecar.spacing[2]),
        origin: (sidecar.origin[0], sidecar.origin[1], sidecar.origin[2]),
        slope: 1.0,
        intercept: 0.0,
        data,
    })
}

fn write_sidecar(
    path: &Path,
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    origin: (f64, f64, f64),
    dtype: &str,
) -> Result<()> {
    let sidecar = Sidecar {
        dims: [dims.0, dims.1, dims.2],
        spacing: [spacing.0, spacing.1, spacing.2],
        origin: [origin.0, origin.1, origin.2],
        dtype: dtype.to_string(),
    };
    let mut file = fs::File::create(sidecar_path(path))?;
    serde_json::to_writer_pretty(&mut file, &sidecar)?;
    file.write_all(b"\n")?;
    Ok(())
}

pub(crate) fn write_f32(
    path: &Path,
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    origin: (f64, f64, f64),
    values: &[f32],
) -> Result<()> {
    write_sidecar(path, dims, spacing, origin, "f32")?;
    let mut payload = vec![0u8; values.len() * 4];
    LittleEndian::write_f32_into(values, &mut payload);
    fs::write(path, payload)?;
    Ok(())
}

pub(crate) fn write_u8(
    path: &Path,
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    origin: (f64, f64, f64),
    values: &[u8],
) -> Result<()> {
    write_sidecar(path, dims, spacing, origin, "u8")?;
    fs::write(path, values)?;
    Ok(())
}
