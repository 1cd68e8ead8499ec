//! NIfTI-1 subset codec.
//!
//! Supported: single-file `.nii` (magic `n+1\0`) and header+image pairs
//! (magic `ni1\0`, payload in a sibling `.img`), uncompressed, datatypes
//! uint8 / int16 / float32, little- or big-endian (detected from
//! `sizeof_hdr`). Spacing comes from `pixdim`; qform/sform are accepted only
//! when they encode a pure translation, anything with a rotation or flip is
//! rejected as `UnsupportedOrientation`. Writing always produces
//! little-endian single-file `.nii`; spacing and origin are stored as f32,
//! which is all the format offers.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::volume::{DecodedVolume, RawData};

pub(crate) const HEADER_LEN: usize = 348;
const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

// header field offsets
const OFF_SIZEOF_HDR: usize = 0;
const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_QFORM_CODE: usize = 252;
const OFF_SFORM_CODE: usize = 254;
const OFF_QUATERN_B: usize = 256;
const OFF_QOFFSET_X: usize = 268;
const OFF_SROW_X: usize = 280;
const OFF_MAGIC: usize = 344;

struct Header {
    dims: (usize, usize, usize),
    datatype: i16,
    spacing: (f64, f64, f64),
    origin: (f64, f64, f64),
    vox_offset: u64,
    slope: f64,
    intercept: f64,
    pair: bool,
}

pub(crate) fn read(path: &Path) -> Result<DecodedVolume> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedData {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }

    let magic: &[u8] = &bytes[OFF_MAGIC..OFF_MAGIC + 4];
    if magic != MAGIC_SINGLE && magic != MAGIC_PAIR {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let pair = magic == MAGIC_PAIR;

    let header = if LittleEndian::read_i32(&bytes[OFF_SIZEOF_HDR..]) == HEADER_LEN as i32 {
        parse_header::<LittleEndian>(path, &bytes, pair)?
    } else if BigEndian::read_i32(&bytes[OFF_SIZEOF_HDR..]) == HEADER_LEN as i32 {
        parse_header::<BigEndian>(path, &bytes, pair)?
    } else {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    };
    let little = LittleEndian::read_i32(&bytes[OFF_SIZEOF_HDR..]) == HEADER_LEN as i32;

    let payload = if header.pair {
        let img = path.with_extension("img");
        let img_bytes = fs::read(&img)?;
        decode_payload(&img, &img_bytes, &header, little)?
    } else {
        decode_payload(path, &bytes, &header, little)?
    };

    Ok(DecodedVolume {
        dims: header.dims,
        spacing: header.spacing,
        origin: header.origin,
        slope: header.slope,
        intercept: header.intercept,
        data: payload,
    })
}

fn parse_header<E: ByteOrder>(path: &Path, bytes: &[u8], pair: bool) -> Result<Header> {
    let datatype = E::read_i16(&bytes[OFF_DATATYPE..]);
    if ![DT_UINT8, DT_INT16, DT_FLOAT32].contains(&datatype) {
        return Err(Error::UnsupportedDatatype {
            path: path.to_path_buf(),
            dtype: format!("code {datatype}"),
        });
    }
    let bitpix = E::read_i16(&bytes[OFF_BITPIX..]);
    if bitpix != 8 * bytes_per_sample(datatype) as i16 {
        return Err(Error::DimMismatch(format!(
            "bitpix {bitpix} inconsistent with datatype {datatype}"
        )));
    }

    let mut dim = [0i16; 8];
    for (a, slot) in dim.iter_mut().enumerate() {
        *slot = E::read_i16(&bytes[OFF_DIM + 2 * a..]);
    }
    let ndim = dim[0];
    if !(3..=7).contains(&ndim) {
        return Err(Error::DimMismatch(format!("dim[0] = {ndim}, need 3..=7")));
    }
    for (a, &d) in dim.iter().enumerate().take(ndim as usize + 1).skip(4) {
        if d > 1 {
            return Err(Error::DimMismatch(format!("axis {a} has size {d} (> 1)")));
        }
    }
    let (nx, ny, nz) = (dim[1], dim[2], dim[3]);
    if nx < 1 || ny < 1 || nz < 1 {
        return Err(Error::DimMismatch(format!(
            "spatial dims ({nx}, {ny}, {nz}) must all be >= 1"
        )));
    }
    let dims = (nx as usize, ny as usize, nz as usize);

    let mut pixdim = [0f32; 8];
    for (a, slot) in pixdim.iter_mut().enumerate() {
        *slot = E::read_f32(&bytes[OFF_PIXDIM + 4 * a..]);
    }
    for s in &pixdim[1..4] {
        if !(s.is_finite() && *s > 0.0) {
            return Err(Error::DimMismatch(format!(
                "nonpositive pixdim ({}, {}, {})",
                pixdim[1], pixdim[2], pixdim[3]
            )));
        }
    }
    let spacing = (pixdim[1] as f64, pixdim[2] as f64, pixdim[3] as f64);

    let origin = parse_origin::<E>(path, bytes, pixdim[0])?;

    let vox_offset = E::read_f32(&bytes[OFF_VOX_OFFSET..]);
    if !vox_offset.is_finite() || vox_offset < 0.0 || (!pair && (vox_offset as u64) < HEADER_LEN as u64)
    {
        return Err(Error::DimMismatch(format!("bad vox_offset {vox_offset}")));
    }

    let slope = E::read_f32(&bytes[OFF_SCL_SLOPE..]) as f64;
    let intercept = E::read_f32(&bytes[OFF_SCL_INTER..]) as f64;

    Ok(Header {
        dims,
        datatype,
        spacing,
        origin,
        vox_offset: vox_offset as u64,
        // slope 0 means "no scaling" per the format
        slope: if slope == 0.0 || !slope.is_finite() {
            1.0
        } else {
            slope
        },
        intercept: if intercept.is_finite() { intercept } else { 0.0 },
        pair,
    })
}

fn parse_origin<E: ByteOrder>(path: &Path, bytes: &[u8], qfac: f32) -> Result<(f64, f64, f64)> {
    let sform_code = E::read_i16(&bytes[OFF_SFORM_CODE..]);
    if sform_code > 0 {
        let mut srow = [0f32; 12];
        for (a, slot) in srow.iter_mut().enumerate() {
            *slot = E::read_f32(&bytes[OFF_SROW_X + 4 * a..]);
        }
        for row in 0..3 {
            for col in 0..3 {
                let v = srow[4 * row + col];
                if row == col {
                    if !(v.is_finite() && v > 0.0) {
                        return Err(Error::UnsupportedOrientation {
                            path: path.to_path_buf(),
                            detail: format!("srow diagonal entry {v} is not positive"),
                        });
                    }
                } else if v.abs() > 1e-5 {
                    return Err(Error::UnsupportedOrientation {
                        path: path.to_path_buf(),
                        detail: format!("srow off-diagonal entry {v} encodes a rotation"),
                    });
                }
            }
        }
        return Ok((srow[3] as f64, srow[7] as f64, srow[11] as f64));
    }

    let qform_code = E::read_i16(&bytes[OFF_QFORM_CODE..]);
    if qform_code > 0 {
        let b = E::read_f32(&bytes[OFF_QUATERN_B..]);
        let c = E::read_f32(&bytes[OFF_QUATERN_B + 4..]);
        let d = E::read_f32(&bytes[OFF_QUATERN_B + 8..]);
        if b.abs() > 1e-6 || c.abs() > 1e-6 || d.abs() > 1e-6 {
            return Err(Error::UnsupportedOrientation {
                path: path.to_path_buf(),
                detail: format!("qform quaternion ({b}, {c}, {d}) encodes a rotation"),
            });
        }
        if qfac < 0.0 {
            return Err(Error::UnsupportedOrientation {
                path: path.to_path_buf(),
                detail: "qfac = -1 flips the z axis".into(),
            });
        }
        let ox = E::read_f32(&bytes[OFF_QOFFSET_X..]);
        let oy = E::read_f32(&bytes[OFF_QOFFSET_X + 4..]);
        let oz = E::read_f32(&bytes[OFF_QOFFSET_X + 8..]);
        return Ok((ox as f64, oy as f64, oz as f64));
    }

    Ok((0.0, 0.0, 0.0))
}

fn bytes_per_sample(datatype: i16) -> usize {
    match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        _ => unreachable!("datatype validated earlier"),
    }
}

fn decode_payload(path: &Path, bytes: &[u8], header: &Header, little: bool) -> Result<RawData> {
    let count = header
        .dims
        .0
        .checked_mul(header.dims.1)
        .and_then(|n| n.checked_mul(header.dims.2))
        .ok_or_else(|| Error::DimMismatch(format!("dims {:?} overflow", header.dims)))?;
    let need = header.vox_offset + (count * bytes_per_sample(header.datatype)) as u64;
    if (bytes.len() as u64) < need {
        return Err(Error::TruncatedData {
            path: path.to_path_buf(),
            expected: need,
            actual: bytes.len() as u64,
        });
    }
    let payload = &bytes[header.vox_offset as usize..need as usize];
    Ok(match header.datatype {
        DT_UINT8 => RawData::U8(payload.to_vec()),
        DT_INT16 => {
            let mut out = vec![0i16; count];
            if little {
                LittleEndian::read_i16_into(payload, &mut out);
            } else {
                BigEndian::read_i16_into(payload, &mut out);
            }
            RawData::I16(out)
        }
        DT_FLOAT32 => {
            let mut out = vec![0f32; count];
            if little {
                LittleEndian::read_f32_into(payload, &mut out);
            } else {
                BigEndian::read_f32_into(payload, &mut out);
            }
            RawData::F32(out)
        }
        _ => unreachable!(),
    })
}

fn build_header(
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    origin: (f64, f64, f64),
    datatype: i16,
) -> Vec<u8> {
    // 348-byte header plus the 4-byte extension indicator
    let mut h = vec![0u8; HEADER_LEN + 4];
    LittleEndian::write_i32(&mut h[OFF_SIZEOF_HDR..], HEADER_LEN as i32);
    let dim = [3i16, dims.0 as i16, dims.1 as i16, dims.2 as i16, 1, 1, 1, 1];
    for (a, d) in dim.into_iter().enumerate() {
        LittleEndian::write_i16(&mut h[OFF_DIM + 2 * a..], d);
    }
    LittleEndian::write_i16(&mut h[OFF_DATATYPE..], datatype);
    LittleEndian::write_i16(&mut h[OFF_BITPIX..], 8 * bytes_per_sample(datatype) as i16);
    let pixdim = [
        1.0f32,
        spacing.0 as f32,
        spacing.1 as f32,
        spacing.2 as f32,
        1.0,
        1.0,
        1.0,
        1.0,
    ];
    for (a, p) in pixdim.into_iter().enumerate() {
        LittleEndian::write_f32(&mut h[OFF_PIXDIM + 4 * a..], p);
    }
    LittleEndian::write_f32(&mut h[OFF_VOX_OFFSET..], (HEADER_LEN + 4) as f32);
    LittleEndian::write_f32(&mut h[OFF_SCL_SLOPE..], 1.0);
    LittleEndian::write_f32(&mut h[OFF_SCL_INTER..], 0.0);
    // translation-only sform carries the origin
    LittleEndian::write_i16(&mut h[OFF_SFORM_CODE..], 1);
    let srow = [
        [spacing.0 as f32, 0.0, 0.0, origin.0 as f32],
        [0.0, spacing.1 as f32, 0.0, origin.1 as f32],
        [0.0, 0.0, spacing.2 as f32, origin.2 as f32],
    ];
    for (row, vals) in srow.into_iter().enumerate() {
        for (col, v) in vals.into_iter().enumerate() {
            LittleEndian::write_f32(&mut h[OFF_SROW_X + 16 * row + 4 * col..], v);
        }
    }
    h[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(MAGIC_SINGLE);
    h
}

pub(crate) fn write_f32(
    path: &Path,
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    origin: (f64, f64, f64),
    values: &[f32],
) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&build_header(dims, spacing, origin, DT_FLOAT32))?;
    let mut payload = vec![0u8; values.len() * 4];
    LittleEndian::write_f32_into(values, &mut payload);
    file.write_all(&payload)?;
    Ok(())
}

pub(crate) fn write_u8(
    path: &Path,
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    origin: (f64, f64, f64),
    values: &[u8],
) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&build_header(dims, spacing, origin, DT_UINT8))?;
    file.write_all(values)?;
    Ok(())
}
