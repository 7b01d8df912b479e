//! Volumes, masks and the 2D sample unit shared by every stage of the
//! pipeline. Axis order is always `(depth, height, width)` and axial slices
//! index the first axis.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Acquisition modality of a single volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Ct,
    T1In,
    T1Out,
    T2Spir,
}

impl Modality {
    /// T1 in-phase and opposed-phase collapse to one T1-DUAL model.
    pub fn training_modality(self) -> TrainingModality {
        match self {
            Modality::Ct => TrainingModality::Ct,
            Modality::T1In | Modality::T1Out => TrainingModality::T1Dual,
            Modality::T2Spir => TrainingModality::T2Spir,
        }
    }
}

/// Modality granularity at which models are trained and scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingModality {
    #[serde(rename = "ct")]
    Ct,
    #[serde(rename = "t1")]
    T1Dual,
    #[serde(rename = "t2")]
    T2Spir,
}

impl TrainingModality {
    pub const ALL: [TrainingModality; 3] = [Self::Ct, Self::T1Dual, Self::T2Spir];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ct => "ct",
            Self::T1Dual => "t1",
            Self::T2Spir => "t2",
        }
    }

    pub fn is_mr(self) -> bool {
        !matches!(self, Self::Ct)
    }

    /// The modality of the primary plane fed to the network.
    pub fn primary(self) -> Modality {
        match self {
            Self::Ct => Modality::Ct,
            Self::T1Dual => Modality::T1In,
            Self::T2Spir => Modality::T2Spir,
        }
    }
}

impl fmt::Display for TrainingModality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainingModality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ct" => Ok(Self::Ct),
            "t1" | "t1dual" | "t1-dual" => Ok(Self::T1Dual),
            "t2" | "t2spir" | "t2-spir" => Ok(Self::T2Spir),
            other => Err(Error::Config(format!(
                "unknown modality {other:?} (expected ct, t1 or t2)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Organ {
    #[serde(rename = "liver")]
    Liver,
    #[serde(rename = "rkidney")]
    RightKidney,
    #[serde(rename = "lkidney")]
    LeftKidney,
    #[serde(rename = "spleen")]
    Spleen,
}

impl Organ {
    pub const ALL: [Organ; 4] = [Self::Liver, Self::RightKidney, Self::LeftKidney, Self::Spleen];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Liver => "liver",
            Self::RightKidney => "rkidney",
            Self::LeftKidney => "lkidney",
            Self::Spleen => "spleen",
        }
    }
}

impl fmt::Display for Organ {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Organ {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "liver" => Ok(Self::Liver),
            "rkidney" | "right_kidney" | "rightkidney" => Ok(Self::RightKidney),
            "lkidney" | "left_kidney" | "leftkidney" => Ok(Self::LeftKidney),
            "spleen" => Ok(Self::Spleen),
            other => Err(Error::Config(format!(
                "unknown organ {other:?} (expected liver, rkidney, lkidney or spleen)"
            ))),
        }
    }
}

/// One model is bound to exactly one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OrganModality {
    pub organ: Organ,
    pub modality: TrainingModality,
}

/// Physical voxel size in millimetres, `(depth, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing(pub [f64; 3]);

impl Spacing {
    pub fn new(depth: f64, height: f64, width: f64) -> Result<Self> {
        let s = Spacing([depth, height, width]);
        s.check()?;
        Ok(s)
    }

    pub fn isotropic(mm: f64) -> Result<Self> {
        Self::new(mm, mm, mm)
    }

    fn check(&self) -> Result<()> {
        for (axis, &v) in self.0.iter().enumerate() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Geometry(format!(
                    "spacing on axis {axis} must be a positive finite number, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(self.0[0] * k, self.0[1] * k, self.0[2] * k)
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-6 * a.abs().max(b.abs())
    }

    /// Equal on every axis up to a relative 1e-6.
    pub fn approx_eq(&self, other: &Spacing) -> bool {
        self.0.iter().zip(other.0.iter()).all(|(&a, &b)| Self::close(a, b))
    }
}

fn check_dims(dim: (usize, usize, usize)) -> Result<()> {
    let dims = [dim.0, dim.1, dim.2];
    if let Some(axis) = dims.iter().position(|&d| d == 0) {
        return Err(Error::Geometry(format!("axis {axis} has zero length")));
    }
    Ok(())
}

/// Scalar intensity volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    voxels: Array3<f64>,
    spacing: Spacing,
    modality: Modality,
}

impl Volume {
    pub fn new(voxels: Array3<f64>, spacing: Spacing, modality: Modality) -> Result<Self> {
        check_dims(voxels.dim())?;
        spacing.check()?;
        check_finite(&voxels)?;
        Ok(Self {
            voxels,
            spacing,
            modality,
        })
    }

    pub fn voxels(&self) -> &Array3<f64> {
        &self.voxels
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.voxels.dim()
    }

    pub fn into_voxels(self) -> Array3<f64> {
        self.voxels
    }
}

fn check_finite(voxels: &Array3<f64>) -> Result<()> {
    if let Some(((d, h, w), &value)) = voxels.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            at: [d, h, w],
            value,
        });
    }
    Ok(())
}

fn check_binary(voxels: &Array3<u8>) -> Result<()> {
    if let Some(((d, h, w), &value)) = voxels.indexed_iter().find(|(_, &v)| v > 1) {
        return Err(Error::NonBinary {
            at: [d, h, w],
            value: value as f64,
        });
    }
    Ok(())
}

/// Binary organ mask (prediction or groundtruth).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    voxels: Array3<u8>,
    spacing: Spacing,
    organ: Organ,
}

impl LabelVolume {
    pub fn new(voxels: Array3<u8>, spacing: Spacing, organ: Organ) -> Result<Self> {
        check_dims(voxels.dim())?;
        spacing.check()?;
        check_binary(&voxels)?;
        Ok(Self {
            voxels,
            spacing,
            organ,
        })
    }

    /// Binarize a real-valued label map: with `label` set, voxels equal to
    /// it become foreground; otherwise every non-zero voxel does.
    pub fn from_labels(
        labels: &Array3<f64>,
        label: Option<f64>,
        spacing: Spacing,
        organ: Organ,
    ) -> Result<Self> {
        let voxels = labels.mapv(|v| match label {
            Some(l) => u8::from(v == l),
            None => u8::from(v != 0.0),
        });
        Self::new(voxels, spacing, organ)
    }

    pub fn voxels(&self) -> &Array3<u8> {
        &self.voxels
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn organ(&self) -> Organ {
        self.organ
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.voxels.dim()
    }

    /// Number of foreground voxels.
    pub fn count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.iter().all(|&v| v == 0)
    }
}

/// Checks every invariant of a volume/mask pair and hands both back.
pub fn validate_pair<'a>(
    volume: &'a Volume,
    mask: &'a LabelVolume,
) -> Result<(&'a Volume, &'a LabelVolume)> {
    let (vd, md) = (volume.dim(), mask.dim());
    for (axis, (v, m)) in [(vd.0, md.0), (vd.1, md.1), (vd.2, md.2)].into_iter().enumerate() {
        if v != m {
            return Err(Error::DimensionMismatch {
                axis,
                volume: v,
                mask: m,
            });
        }
    }
    for axis in 0..3 {
        let (v, m) = (volume.spacing.0[axis], mask.spacing.0[axis]);
        if !Spacing::close(v, m) {
            return Err(Error::SpacingMismatch {
                axis,
                volume: v,
                mask: m,
            });
        }
    }
    check_binary(&mask.voxels)?;
    check_finite(&volume.voxels)?;
    Ok((volume, mask))
}

/// One axial 2D unit: a 3-channel input plane `(height, width, 3)` and its
/// binary target.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSample {
    pub input: Array3<f64>,
    pub target: Array2<u8>,
    pub slice_index: usize,
    pub source_id: String,
}

impl SliceSample {
    pub fn new(
        input: Array3<f64>,
        target: Array2<u8>,
        slice_index: usize,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let (h, w, c) = input.dim();
        if c != 3 {
            return Err(Error::Shape(format!("sample input has {c} channels, expected 3")));
        }
        if (h, w) != target.dim() {
            return Err(Error::Shape(format!(
                "sample input is {h}x{w} but target is {:?}",
                target.dim()
            )));
        }
        if target.iter().any(|&v| v > 1) {
            return Err(Error::Shape("sample target is not binary".into()));
        }
        Ok(Self {
            input,
            target,
            slice_index,
            source_id: source_id.into(),
        })
    }

    pub fn height(&self) -> usize {
        self.target.dim().0
    }

    pub fn width(&self) -> usize {
        self.target.dim().1
    }
}
