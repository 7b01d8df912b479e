//! Single-file NIfTI-1 (`.nii`). Only the dimensions, `pixdim`, datatype,
//! `vox_offset` and the voxel blob are interpreted.
//!
//! NIfTI stores `i` (x) fastest, so a `(nx, ny, nz)` image laid out in
//! memory is exactly a row-major `(depth = nz, height = ny, width = nx)`
//! array, and the spacing triple becomes `(pixdim[3], pixdim[2], pixdim[1])`.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array3;

use super::{write_atomic, StoredType};
use crate::data::Spacing;
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_INT8: i16 = 256;
const DT_UINT16: i16 = 512;
const DT_UINT32: i16 = 768;

#[derive(Clone, Copy)]
struct Endian(bool);

impl Endian {
    fn i16(self, b: &[u8]) -> i16 {
        let a: [u8; 2] = b[..2].try_into().expect("2 bytes");
        if self.0 { i16::from_be_bytes(a) } else { i16::from_le_bytes(a) }
    }

    fn i32(self, b: &[u8]) -> i32 {
        let a: [u8; 4] = b[..4].try_into().expect("4 bytes");
        if self.0 { i32::from_be_bytes(a) } else { i32::from_le_bytes(a) }
    }

    fn f32(self, b: &[u8]) -> f32 {
        f32::from_bits(self.i32(b) as u32)
    }
}

pub fn read_nifti(path: &Path) -> Result<(Array3<f64>, Spacing)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_SIZE {
        return Err(Error::corrupt(path, "file shorter than a NIfTI-1 header"));
    }
    let endian = if i32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) == 348 {
        Endian(false)
    } else if i32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes")) == 348 {
        Endian(true)
    } else {
        return Err(Error::corrupt(path, "sizeof_hdr is not 348"));
    };
    if &bytes[344..347] != b"n+1" {
        return Err(Error::corrupt(path, "not a single-file NIfTI-1 image (magic != n+1)"));
    }
    let dim: Vec<i16> = (0..8).map(|i| endian.i16(&bytes[40 + 2 * i..])).collect();
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::corrupt(path, format!("dim[0] = {ndim}")));
    }
    let extent = |i: usize| -> Result<usize> {
        if i as i16 > ndim {
            return Ok(1);
        }
        match dim[i] {
            d if d >= 1 => Ok(d as usize),
            d => Err(Error::corrupt(path, format!("dim[{i}] = {d}"))),
        }
    };
    let (nx, ny, nz) = (extent(1)?, extent(2)?, extent(3)?);
    for i in 4..=ndim as usize {
        if extent(i)? != 1 {
            return Err(Error::corrupt(path, "only 3D volumes are supported"));
        }
    }
    let datatype = endian.i16(&bytes[70..]);
    let pixdim: Vec<f32> = (0..8).map(|i| endian.f32(&bytes[76 + 4 * i..])).collect();
    let spacing_of = |i: usize| -> f64 {
        if i as i16 <= ndim {
            pixdim[i].abs() as f64
        } else {
            1.0
        }
    };
    let spacing = Spacing::new(spacing_of(3), spacing_of(2), spacing_of(1))
        .map_err(|e| Error::corrupt(path, e.to_string()))?;
    let vox_offset = endian.f32(&bytes[108..]);
    if vox_offset.is_nan() || vox_offset < HEADER_SIZE as f32 {
        return Err(Error::corrupt(path, format!("vox_offset = {vox_offset}")));
    }
    let offset = vox_offset as usize;
    let size = match datatype {
        DT_UINT8 | DT_INT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_UINT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => {
            return Err(Error::UnsupportedDatatype {
                path: path.into(),
                datatype: format!("NIfTI datatype code {other}"),
            })
        }
    };
    let n = nx * ny * nz;
    let blob = bytes
        .get(offset..)
        .filter(|b| b.len() >= n * size)
        .ok_or_else(|| {
            Error::corrupt(
                path,
                format!("header declares {nx}x{ny}x{nz} voxels but the blob is too short"),
            )
        })?;
    let blob = &blob[..n * size];
    let e = endian;
    let data: Vec<f64> = match datatype {
        DT_UINT8 => blob.iter().map(|&b| b as f64).collect(),
        DT_INT8 => blob.iter().map(|&b| b as i8 as f64).collect(),
        DT_INT16 => blob.chunks_exact(2).map(|c| e.i16(c) as f64).collect(),
        DT_UINT16 => blob.chunks_exact(2).map(|c| e.i16(c) as u16 as f64).collect(),
        DT_INT32 => blob.chunks_exact(4).map(|c| e.i32(c) as f64).collect(),
        DT_UINT32 => blob.chunks_exact(4).map(|c| e.i32(c) as u32 as f64).collect(),
        DT_FLOAT32 => blob.chunks_exact(4).map(|c| e.f32(c) as f64).collect(),
        _ => blob
            .chunks_exact(8)
            .map(|c| {
                let a: [u8; 8] = c.try_into().expect("8 bytes");
                if e.0 { f64::from_be_bytes(a) } else { f64::from_le_bytes(a) }
            })
            .collect(),
    };
    let voxels = Array3::from_shape_vec((nz, ny, nx), data).expect("size checked above");
    Ok((voxels, spacing))
}

pub fn write_nifti(path: &Path, voxels: &Array3<f64>, spacing: Spacing, dtype: StoredType) -> Result<()> {
    let (nz, ny, nx) = voxels.dim();
    let too_big = |n: usize| i16::try_from(n).is_err();
    if too_big(nx) || too_big(ny) || too_big(nz) {
        return Err(Error::Geometry("NIfTI-1 dimensions must fit in i16".into()));
    }
    let (code, bitpix): (i16, i16) = match dtype {
        StoredType::F32 => (DT_FLOAT32, 32),
        StoredType::U8 => (DT_UINT8, 8),
    };
    let mut h = vec![0u8; HEADER_SIZE + 4];
    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let dims: [i16; 8] = [3, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1];
    for (i, d) in dims.iter().enumerate() {
        h[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
    }
    h[70..72].copy_from_slice(&code.to_le_bytes());
    h[72..74].copy_from_slice(&bitpix.to_le_bytes());
    let [sd, sh, sw] = spacing.0;
    let pixdim: [f32; 8] = [1.0, sw as f32, sh as f32, sd as f32, 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        h[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
    }
    h[108..112].copy_from_slice(&((HEADER_SIZE + 4) as f32).to_le_bytes());
    h[112..116].copy_from_slice(&1.0f32.to_le_bytes());
    // xyzt_units: mm
    h[123] = 2;
    h[344..348].copy_from_slice(b"n+1\0");
    write_atomic(path, |f| {
        f.write_all(&h)?;
        for &v in voxels.iter() {
            match dtype {
                StoredType::F32 => f.write_all(&(v as f32).to_le_bytes())?,
                StoredType::U8 => f.write_all(&[v.clamp(0.0, 255.0) as u8])?,
            }
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(dims: [i16; 8], datatype: i16, pixdim: [f32; 8]) -> Vec<u8> {
        let mut h = vec![0u8; 352];
        h[0..4].copy_from_slice(&348i32.to_le_bytes());
        for (i, d) in dims.iter().enumerate() {
            h[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        h[70..72].copy_from_slice(&datatype.to_le_bytes());
        for (i, p) in pixdim.iter().enumerate() {
            h[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
        }
        h[108..112].copy_from_slice(&352f32.to_le_bytes());
        h[344..348].copy_from_slice(b"n+1\0");
        h
    }

    #[test]
    fn pixdim_maps_to_depth_height_width() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.nii");
        let mut bytes = header([3, 4, 3, 2, 1, 1, 1, 1], DT_INT16, [1.0, 1.5, 1.5, 2.0, 0.0, 0.0, 0.0, 0.0]);
        for i in 0..24i16 {
            bytes.extend_from_slice(&(i - 1000).to_le_bytes());
        }
        fs::write(&path, bytes).unwrap();
        let (v, s) = read_nifti(&path).unwrap();
        assert_eq!(s.0, [2.0, 1.5, 1.5]);
        assert_eq!(v.dim(), (2, 3, 4));
        // x fastest: voxel (x=1, y=2, z=1) is element 1 + 4 * (2 + 3 * 1)
        assert_eq!(v[[1, 2, 1]], (21 - 1000) as f64);
    }

    #[test]
    fn write_then_read_preserves_geometry() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nii");
        let vox = Array3::from_shape_fn((3, 4, 5), |(d, h, w)| ((d + h + w) % 2) as f64);
        let spacing = Spacing::new(4.5, 1.25, 0.75).unwrap();
        write_nifti(&path, &vox, spacing, StoredType::U8).unwrap();
        let (v, s) = read_nifti(&path).unwrap();
        assert_eq!(v, vox);
        assert_eq!(s, spacing);
    }

    #[test]
    fn unsupported_datatype_and_short_blob() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.nii");
        let mut bytes = header([3, 2, 2, 2, 1, 1, 1, 1], 32, [1.0; 8]);
        bytes.extend_from_slice(&[0u8; 64]);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_nifti(&path), Err(Error::UnsupportedDatatype { .. })));

        let mut bytes = header([3, 2, 2, 2, 1, 1, 1, 1], DT_FLOAT32, [1.0; 8]);
        bytes.extend_from_slice(&[0u8; 28]);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_nifti(&path), Err(Error::CorruptHeader { .. })));
    }

    #[test]
    fn garbage_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.nii");
        fs::write(&path, vec![7u8; 400]).unwrap();
        assert!(matches!(read_nifti(&path), Err(Error::CorruptHeader { .. })));
    }
}
