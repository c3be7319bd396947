//! `bands.toml`: which band every physical camera records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{BandDesc, SpectralBandSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandEntry {
    pub name: String,
    pub channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength_nm: Option<f64>,
    pub cameras: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub band: Vec<BandEntry>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        m.band_set()?;
        m.camera_bands()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn band_set(&self) -> Result<SpectralBandSet> {
        SpectralBandSet::new(
            self.band
                .iter()
                .map(|b| BandDesc::new(&b.name, b.channels, b.wavelength_nm))
                .collect(),
        )
        .map_err(|e| Error::Manifest(e.to_string()))
    }

    /// Camera id to band index; a camera may belong to one band only.
    pub fn camera_bands(&self) -> Result<BTreeMap<u32, usize>> {
        let mut out = BTreeMap::new();
        for (j, b) in self.band.iter().enumerate() {
            for &c in &b.cameras {
                if out.insert(c, j).is_some() {
                    return Err(Error::Manifest(format!("camera {c} is assigned to more than one band")));
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_round_trip() {
        let text = r#"
[[band]]
name = "rgb"
channels = 3
cameras = [1]

[[band]]
name = "nir"
channels = 1
wavelength_nm = 860.0
cameras = [2, 3]
"#;
        let m = Manifest::parse(text).unwrap();
        assert_eq!(m.band_set().unwrap().total_channels(), 4);
        assert_eq!(m.camera_bands().unwrap()[&3], 1);
        assert_eq!(Manifest::parse(&m.to_toml().unwrap()).unwrap(), m);
    }

    #[test]
    fn duplicate_camera_rejected() {
        let text = "[[band]]\nname='a'\nchannels=1\ncameras=[1]\n[[band]]\nname='b'\nchannels=1\ncameras=[1]\n";
        assert!(matches!(Manifest::parse(text), Err(Error::Manifest(_))));
    }

    #[test]
    fn duplicate_band_rejected() {
        let text = "[[band]]\nname='a'\nchannels=1\ncameras=[1]\n[[band]]\nname='a'\nchannels=1\ncameras=[2]\n";
        assert!(matches!(Manifest::parse(text), Err(Error::Manifest(_))));
    }
}
