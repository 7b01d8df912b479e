//! `RAWVOL1 d h w sd sh sw dtype\n` followed by a little-endian voxel blob in
//! `(depth, height, width)` row-major order, `dtype` one of `f32`, `u8`.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array3;

use super::{write_atomic, StoredType};
use crate::data::Spacing;
use crate::error::{Error, Result};

const MAGIC: &str = "RAWVOL1";

pub fn read_rawvol(path: &Path) -> Result<(Array3<f64>, Spacing)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::corrupt(path, "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::corrupt(path, "header is not UTF-8"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 8 || fields[0] != MAGIC {
        return Err(Error::corrupt(
            path,
            format!("expected \"{MAGIC} d h w sd sh sw dtype\", got {header:?}"),
        ));
    }
    let dim = |i: usize| -> Result<usize> {
        fields[i]
            .parse::<usize>()
            .map_err(|_| Error::corrupt(path, format!("bad dimension {:?}", fields[i])))
    };
    let sp = |i: usize| -> Result<f64> {
        fields[i]
            .parse::<f64>()
            .map_err(|_| Error::corrupt(path, format!("bad spacing {:?}", fields[i])))
    };
    let (d, h, w) = (dim(1)?, dim(2)?, dim(3)?);
    let spacing = Spacing::new(sp(4)?, sp(5)?, sp(6)?).map_err(|e| Error::corrupt(path, e.to_string()))?;
    let size = match fields[7] {
        "f32" => 4,
        "u8" => 1,
        other => {
            return Err(Error::UnsupportedDatatype {
                path: path.into(),
                datatype: other.into(),
            })
        }
    };
    let n = d
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::corrupt(path, "dimensions overflow"))?;
    let blob = &bytes[nl + 1..];
    if blob.len() != n * size {
        return Err(Error::corrupt(
            path,
            format!(
                "header declares {d}x{h}x{w} = {n} voxels but the blob holds {} bytes",
                blob.len()
            ),
        ));
    }
    let data: Vec<f64> = if size == 4 {
        blob.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect()
    } else {
        blob.iter().map(|&b| b as f64).collect()
    };
    let voxels = Array3::from_shape_vec((d, h, w), data).expect("size checked above");
    Ok((voxels, spacing))
}

pub fn write_rawvol(path: &Path, voxels: &Array3<f64>, spacing: Spacing, dtype: StoredType) -> Result<()> {
    let (d, h, w) = voxels.dim();
    let [sd, sh, sw] = spacing.0;
    let tag = match dtype {
        StoredType::F32 => "f32",
        StoredType::U8 => "u8",
    };
    write_atomic(path, |f| {
        writeln!(f, "{MAGIC} {d} {h} {w} {sd} {sh} {sw} {tag}")?;
        for &v in voxels.iter() {
            match dtype {
                StoredType::F32 => f.write_all(&(v as f32).to_le_bytes())?,
                StoredType::U8 => f.write_all(&[v.clamp(0.0, 255.0) as u8])?,
            }
        }
        Ok(())
    })
}
