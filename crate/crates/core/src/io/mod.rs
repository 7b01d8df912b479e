//! Volume and mask file I/O.

mod nifti;
mod rawvol;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::data::{LabelVolume, Modality, Organ, Spacing, Volume};
use crate::error::{Error, Result};

pub use nifti::{read_nifti, write_nifti};
pub use rawvol::{read_rawvol, write_rawvol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeFormat {
    Nifti1,
    Rawvol,
}

/// Element type used when writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoredType {
    F32,
    U8,
}

impl VolumeFormat {
    /// `.nii` is NIfTI-1, `.rawvol` / `.raw` is the raw format.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("nii") => Ok(Self::Nifti1),
            Some("rawvol") | Some("raw") => Ok(Self::Rawvol),
            _ => Err(Error::Config(format!(
                "cannot infer volume format from {}",
                path.display()
            ))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::Nifti1 => "nii",
            Self::Rawvol => "rawvol",
        }
    }
}

impl FromStr for VolumeFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nifti1" | "nifti" | "nii" => Ok(Self::Nifti1),
            "rawvol" => Ok(Self::Rawvol),
            other => Err(Error::Config(format!("unknown volume format {other:?}"))),
        }
    }
}

fn read_any(path: &Path, format: VolumeFormat) -> Result<(Array3<f64>, Spacing)> {
    match format {
        VolumeFormat::Nifti1 => read_nifti(path),
        VolumeFormat::Rawvol => read_rawvol(path),
    }
}

pub fn load_volume(path: &Path, format: VolumeFormat, modality: Modality) -> Result<Volume> {
    let (voxels, spacing) = read_any(path, format)?;
    Volume::new(voxels, spacing, modality).map_err(|e| match e {
        Error::NonFinite { .. } | Error::Geometry(_) => {
            Error::corrupt(path, e.to_string())
        }
        other => other,
    })
}

/// Loads a mask; see [`LabelVolume::from_labels`] for `label`.
pub fn load_mask(
    path: &Path,
    format: VolumeFormat,
    organ: Organ,
    label: Option<f64>,
) -> Result<LabelVolume> {
    let (voxels, spacing) = read_any(path, format)?;
    LabelVolume::from_labels(&voxels, label, spacing, organ)
}

pub fn write_volume(path: &Path, volume: &Volume, format: VolumeFormat) -> Result<()> {
    match format {
        VolumeFormat::Rawvol => write_rawvol(path, volume.voxels(), volume.spacing(), StoredType::F32),
        VolumeFormat::Nifti1 => write_nifti(path, volume.voxels(), volume.spacing(), StoredType::F32),
    }
}

pub fn write_mask(path: &Path, mask: &LabelVolume, format: VolumeFormat) -> Result<()> {
    let voxels = mask.voxels().mapv(f64::from);
    match format {
        VolumeFormat::Rawvol => write_rawvol(path, &voxels, mask.spacing(), StoredType::U8),
        VolumeFormat::Nifti1 => write_nifti(path, &voxels, mask.spacing(), StoredType::U8),
    }
}

/// Writes through a sibling temporary file and renames it into place, so a
/// failed write never leaves a truncated `path` behind.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut tmp = PathBuf::from(path);
    let name = path
        .file_name()
        .map(|n| format!(".{}.partial", n.to_string_lossy()))
        .unwrap_or_else(|| ".partial".into());
    tmp.set_file_name(name);
    let result = (|| {
        let file = File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        write(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
        Ok(())
    })();
    match result.and_then(|()| fs::rename(&tmp, path)) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(Error::io(path, e))
        }
    }
}
