//! Inference engine for the trained channel-estimation networks.
//!
//! Models are loaded from a package (JSON manifest + little-endian f32 weight
//! blob) and evaluated in inference mode only.

mod infer;
mod model;
mod parity;
mod tensor;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use infer::{assemble_input, estimate_all_subcarriers, forward, forward_raw, NetworkInput};
pub use model::{load_model, load_model_for_band, save_model, LayerSpec, ModelPackage, MANIFEST_FORMAT};
pub use parity::{check_parity, read_parity_vectors, write_parity_vectors, ParityReport, ParityVector};
pub use tensor::{
    activation, batch_norm_inference, concat_skip, conv2d, maxpool2, upsample2, Activation, BatchNorm, Conv2d,
    FeatureTensor,
};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("cannot read model file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed model manifest: {0}")]
    Parse(String),

    #[error("unknown layer kind {0:?}")]
    UnknownLayerKind(String),

    #[error("weight blob size mismatch: {0}")]
    SizeMismatch(String),

    #[error("weight blob checksum mismatch: manifest {expected}, file {actual}")]
    ChecksumMismatch { expected: String, actual: String },

    #[error("model shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid network topology: {0}")]
    Topology(String),

    #[error("network input shape mismatch: expected {expected}, got {actual}")]
    InputShape { expected: String, actual: String },

    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
}

impl ModelError {
    /// Stable short code, used by the CLI and the Python bindings.
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::Io { .. } => "io",
            ModelError::Parse(_) => "parse",
            ModelError::UnknownLayerKind(_) => "unknown-layer-kind",
            ModelError::SizeMismatch(_) => "size-mismatch",
            ModelError::ChecksumMismatch { .. } => "checksum-mismatch",
            ModelError::ShapeMismatch { .. } => "shape-mismatch",
            ModelError::Topology(_) => "topology",
            ModelError::InputShape { .. } => "input-shape",
            ModelError::InvalidParameter(_) => "invalid-parameter",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Cnn,
    Unet,
}

/// `Oob` networks see the in-band LS estimate plus the out-of-band aided
/// estimate and K̃; `Inband` networks see the LS estimate and σ² only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Inband,
    Oob,
}

impl Variant {
    pub fn input_channels(self) -> usize {
        match self {
            Variant::Inband => 4,
            Variant::Oob => 6,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Cnn => "cnn",
            Architecture::Unet => "unet",
        })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Inband => "inband",
            Variant::Oob => "oob",
        })
    }
}

impl FromStr for Architecture {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "cnn" => Ok(Architecture::Cnn),
            "unet" => Ok(Architecture::Unet),
            _ => Err(ModelError::Parse(format!("unknown architecture {s:?}"))),
        }
    }
}

impl FromStr for Variant {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "inband" => Ok(Variant::Inband),
            "oob" => Ok(Variant::Oob),
            _ => Err(ModelError::Parse(format!("unknown variant {s:?}"))),
        }
    }
}
