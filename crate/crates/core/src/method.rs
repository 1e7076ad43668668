use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::nn::{Architecture, Variant};

/// Channel-estimation methods compared by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Ground truth `H̄ = H`; upper bound.
    Perfect,
    /// In-band LS estimate only, `H̄ = H̃`.
    NonMl,
    /// MRC of the in-band and out-of-band aided estimates.
    Mrc,
    CnnInband,
    UnetInband,
    CnnOob,
    UnetOob,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Perfect,
        Method::NonMl,
        Method::Mrc,
        Method::CnnInband,
        Method::UnetInband,
        Method::CnnOob,
        Method::UnetOob,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Perfect => "perfect",
            Method::NonMl => "non-ml",
            Method::Mrc => "mrc",
            Method::CnnInband => "cnn-inband",
            Method::UnetInband => "unet-inband",
            Method::CnnOob => "cnn-oob",
            Method::UnetOob => "unet-oob",
        }
    }

    /// Network kind backing an ML method.
    pub fn network(self) -> Option<(Architecture, Variant)> {
        match self {
            Method::CnnInband => Some((Architecture::Cnn, Variant::Inband)),
            Method::UnetInband => Some((Architecture::Unet, Variant::Inband)),
            Method::CnnOob => Some((Architecture::Cnn, Variant::Oob)),
            Method::UnetOob => Some((Architecture::Unet, Variant::Oob)),
            _ => None,
        }
    }

    pub fn is_ml(self) -> bool {
        self.network().is_some()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method tag {s:?}")))
    }
}
