//! System geometry and OFDM numerology for the two bands.
//!
//! A configuration file is TOML with one key per field:
//!
//! ```toml
//! k_scale = 1.0
//! total_tx_power = 1.0
//!
//! [sub6]
//! carrier_frequency = 2.55e9
//! bandwidth = 20.16e6
//! subcarrier_spacing = 60e3
//! num_tx = 8
//! num_rx = 8
//! cyclic_prefix = 1.19e-6
//! # optional, derived when absent:
//! # wavelength = 0.1176        (c / carrier_frequency)
//! # num_subcarriers = 336      (round(bandwidth / subcarrier_spacing))
//! # antenna_spacing = 0.0588   (wavelength / 2)
//!
//! [mmw]
//! carrier_frequency = 25.5e9
//! # ...
//! ```

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Relative tolerance between the declared wavelength and `c / f_c`.
const WAVELENGTH_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    /// Hz
    pub carrier_frequency: f64,
    /// m
    pub wavelength: f64,
    /// Hz
    pub bandwidth: f64,
    /// Hz
    pub subcarrier_spacing: f64,
    pub num_subcarriers: usize,
    pub num_tx: usize,
    pub num_rx: usize,
    /// Inter-element spacing of both ULAs, m.
    pub antenna_spacing: f64,
    /// s
    pub cyclic_prefix: f64,
}

impl BandConfig {
    /// Builds a band with wavelength, subcarrier count and half-wavelength
    /// spacing derived from the primary parameters.
    pub fn new(
        carrier_frequency: f64,
        bandwidth: f64,
        subcarrier_spacing: f64,
        num_tx: usize,
        num_rx: usize,
        cyclic_prefix: f64,
    ) -> Self {
        let wavelength = SPEED_OF_LIGHT / carrier_frequency;
        BandConfig {
            carrier_frequency,
            wavelength,
            bandwidth,
            subcarrier_spacing,
            num_subcarriers: (bandwidth / subcarrier_spacing).round() as usize,
            num_tx,
            num_rx,
            antenna_spacing: wavelength / 2.0,
            cyclic_prefix,
        }
    }

    pub fn sub6_default() -> Self {
        BandConfig::new(2.55e9, 20.16e6, 60e3, 8, 8, 1.19e-6)
    }

    pub fn mmw_default() -> Self {
        BandConfig::new(25.5e9, 403.2e6, 120e3, 8, 8, 0.59e-6)
    }

    /// Δd / λ
    pub fn spacing_ratio(&self) -> f64 {
        self.antenna_spacing / self.wavelength
    }

    /// M_Rx · M_Tx
    pub fn num_links(&self) -> usize {
        self.num_rx * self.num_tx
    }

    /// min(M_Rx, M_Tx)
    pub fn max_streams(&self) -> usize {
        self.num_rx.min(self.num_tx)
    }

    fn check(&self, prefix: &str, out: &mut Vec<ConfigViolation>) {
        let mut bad = |field: &str, message: String| {
            out.push(ConfigViolation {
                field: format!("{prefix}.{field}"),
                message,
            })
        };
        let positive = [
            ("carrier_frequency", self.carrier_frequency),
            ("wavelength", self.wavelength),
            ("bandwidth", self.bandwidth),
            ("subcarrier_spacing", self.subcarrier_spacing),
            ("antenna_spacing", self.antenna_spacing),
            ("cyclic_prefix", self.cyclic_prefix),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                bad(name, format!("must be finite and > 0, got {v}"));
            }
        }
        if self.num_tx == 0 {
            bad("num_tx", "must be at least 1".into());
        }
        if self.num_rx == 0 {
            bad("num_rx", "must be at least 1".into());
        }
        if self.bandwidth > 0.0 && self.subcarrier_spacing > 0.0 {
            let expected = (self.bandwidth / self.subcarrier_spacing).round() as usize;
            if expected != self.num_subcarriers {
                bad(
                    "num_subcarriers",
                    format!("expected round(bandwidth / subcarrier_spacing) = {expected}, got {}", self.num_subcarriers),
                );
            }
        }
        if self.num_subcarriers < self.num_tx {
            bad(
                "num_subcarriers",
                format!("{} subcarriers cannot host comb pilots for {} transmit antennas", self.num_subcarriers, self.num_tx),
            );
        }
        if self.carrier_frequency > 0.0 && self.wavelength > 0.0 {
            let nominal = SPEED_OF_LIGHT / self.carrier_frequency;
            let rel = (self.wavelength - nominal).abs() / nominal;
            if rel > WAVELENGTH_TOLERANCE {
                bad(
                    "wavelength",
                    format!("{} m deviates from c / carrier_frequency = {nominal} m by {:.3}%", self.wavelength, rel * 100.0),
                );
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualBandConfig {
    pub sub6: BandConfig,
    pub mmw: BandConfig,
    /// c_K in K_mmw = c_K · K_sub6.
    pub k_scale: f64,
    /// Total transmit power P_T (linear) shared by the SVD precoder streams.
    pub total_tx_power: f64,
}

impl Default for DualBandConfig {
    fn default() -> Self {
        DualBandConfig {
            sub6: BandConfig::sub6_default(),
            mmw: BandConfig::mmw_default(),
            k_scale: 1.0,
            total_tx_power: 1.0,
        }
    }
}

/// One violated invariant, tagged with the dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigViolation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Collects every violated invariant instead of stopping at the first.
pub fn validate_config(cfg: &DualBandConfig) -> std::result::Result<(), Vec<ConfigViolation>> {
    let mut out = Vec::new();
    cfg.sub6.check("sub6", &mut out);
    cfg.mmw.check("mmw", &mut out);
    if !(cfg.k_scale.is_finite() && cfg.k_scale > 0.0) {
        out.push(ConfigViolation {
            field: "k_scale".into(),
            message: format!("must be > 0, got {}", cfg.k_scale),
        });
    }
    if !(cfg.total_tx_power.is_finite() && cfg.total_tx_power > 0.0) {
        out.push(ConfigViolation {
            field: "total_tx_power".into(),
            message: format!("must be > 0, got {}", cfg.total_tx_power),
        });
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

impl DualBandConfig {
    pub fn validated(self) -> Result<Self> {
        validate_config(&self).map_err(Error::Config)?;
        Ok(self)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("config parse error: {e}")))?;
        file.into_config().validated()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    sub6: BandFile,
    mmw: BandFile,
    #[serde(default = "one")]
    k_scale: f64,
    #[serde(default = "one")]
    total_tx_power: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BandFile {
    carrier_frequency: f64,
    bandwidth: f64,
    subcarrier_spacing: f64,
    num_tx: usize,
    num_rx: usize,
    cyclic_prefix: f64,
    wavelength: Option<f64>,
    num_subcarriers: Option<usize>,
    antenna_spacing: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl ConfigFile {
    fn into_config(self) -> DualBandConfig {
        DualBandConfig {
            sub6: self.sub6.into_band(),
            mmw: self.mmw.into_band(),
            k_scale: self.k_scale,
            total_tx_power: self.total_tx_power,
        }
    }
}

impl BandFile {
    fn into_band(self) -> BandConfig {
        let mut band = BandConfig::new(
            self.carrier_frequency,
            self.bandwidth,
            self.subcarrier_spacing,
            self.num_tx,
            self.num_rx,
            self.cyclic_prefix,
        );
        if let Some(w) = self.wavelength {
            band.wavelength = w;
            band.antenna_spacing = w / 2.0;
        }
        if let Some(n) = self.num_subcarriers {
            band.num_subcarriers = n;
        }
        if let Some(d) = self.antenna_spacing {
            band.antenna_spacing = d;
        }
        band
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values_validate() {
        let cfg = DualBandConfig::default();
        assert!(validate_config(&cfg).is_ok());
        assert_eq!(cfg.sub6.num_subcarriers, 336);
        assert_eq!(cfg.mmw.num_subcarriers, 3360);
        assert!((cfg.sub6.wavelength - 0.1176).abs() / 0.1176 < 1e-3);
        assert!((cfg.mmw.wavelength - 0.01176).abs() / 0.01176 < 1e-3);
        assert_eq!(cfg.mmw.spacing_ratio(), 0.5);
    }

    #[test]
    fn zero_tx_is_named() {
        let mut cfg = DualBandConfig::default();
        cfg.mmw.num_tx = 0;
        let errs = validate_config(&cfg).unwrap_err();
        assert!(errs.iter().any(|e| e.field == "mmw.num_tx"), "{errs:?}");
    }

    #[test]
    fn negative_k_scale_is_named() {
        let cfg = DualBandConfig {
            k_scale: -1.0,
            ..Default::default()
        };
        let errs = validate_config(&cfg).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].field, "k_scale");
    }

    #[test]
    fn every_violation_reported() {
        let mut cfg = DualBandConfig::default();
        cfg.sub6.num_rx = 0;
        cfg.sub6.wavelength = 0.2;
        cfg.total_tx_power = 0.0;
        let fields: Vec<_> = validate_config(&cfg)
            .unwrap_err()
            .into_iter()
            .map(|v| v.field)
            .collect();
        for f in ["sub6.num_rx", "sub6.wavelength", "total_tx_power"] {
            assert!(fields.iter().any(|x| x == f), "{f} missing from {fields:?}");
        }
    }

    #[test]
    fn too_few_subcarriers() {
        let cfg = DualBandConfig {
            sub6: BandConfig::new(2.55e9, 240e3, 60e3, 8, 8, 1.19e-6),
            ..Default::default()
        };
        let errs = validate_config(&cfg).unwrap_err();
        assert!(errs.iter().any(|e| e.field == "sub6.num_subcarriers"));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = DualBandConfig::default();
        let back = DualBandConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn toml_minimal_derives_fields() {
        let text = r#"
            [sub6]
            carrier_frequency = 2.55e9
            bandwidth = 20.16e6
            subcarrier_spacing = 60e3
            num_tx = 8
            num_rx = 8
            cyclic_prefix = 1.19e-6

            [mmw]
            carrier_frequency = 25.5e9
            bandwidth = 403.2e6
            subcarrier_spacing = 120e3
            num_tx = 4
            num_rx = 4
            cyclic_prefix = 0.59e-6
        "#;
        let cfg = DualBandConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.mmw.num_subcarriers, 3360);
        assert_eq!(cfg.mmw.num_tx, 4);
        assert_eq!(cfg.k_scale, 1.0);
    }

    #[test]
    fn toml_rejects_invalid() {
        let text = DualBandConfig::default()
            .to_toml_string()
            .replace("k_scale = 1.0", "k_scale = -1.0");
        match DualBandConfig::from_toml_str(&text) {
            Err(Error::Config(v)) => assert_eq!(v[0].field, "k_scale"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
