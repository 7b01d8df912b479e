use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch on axis {axis}: volume has {volume}, mask has {mask}")]
    DimensionMismatch { axis: usize, volume: usize, mask: usize },
    #[error("spacing mismatch on axis {axis}: volume {volume} mm, mask {mask} mm")]
    SpacingMismatch { axis: usize, volume: f64, mask: f64 },
    #[error("mask voxel {at:?} holds {value}, expected 0 or 1")]
    NonBinary { at: [usize; 3], value: f64 },
    #[error("intensity at voxel {at:?} is not finite ({value})")]
    NonFinite { at: [usize; 3], value: f64 },
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: corrupt header: {reason}")]
    CorruptHeader { path: PathBuf, reason: String },
    #[error("{path}: unsupported datatype {datatype}")]
    UnsupportedDatatype { path: PathBuf, datatype: String },

    #[error("shape error: {0}")]
    Shape(String),
    #[error("channel replication: {0}")]
    Replication(String),
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("pre-trained weights: {0}")]
    Pretrained(String),
    #[error("weight archive: {0}")]
    Archive(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("non-finite values: {0}")]
    NonFiniteValues(String),
    #[error("empty dataset")]
    EmptyDataset,

    #[error("evaluation: {0}")]
    Metric(String),
    #[error("nothing to aggregate: {0}")]
    EmptyAggregation(String),
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::CorruptHeader {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for failures caused by input data rather than configuration or
    /// numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::SpacingMismatch { .. }
                | Error::NonBinary { .. }
                | Error::NonFinite { .. }
                | Error::Geometry(_)
                | Error::Io { .. }
                | Error::CorruptHeader { .. }
                | Error::UnsupportedDatatype { .. }
                | Error::Shape(_)
                | Error::Replication(_)
                | Error::Archive(_)
                | Error::EmptyDataset
                | Error::Metric(_)
                | Error::EmptyAggregation(_)
        )
    }

    pub fn is_numeric_error(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. } | Error::NonFiniteValues(_))
    }
}
