use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of a style-based generator. Synthesis bands are the powers
/// of two from 4 up to `max_resolution`, each with its own channel width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    pub style_dim: usize,
    pub mapping_layers: usize,
    pub max_resolution: u32,
    pub channels_per_band: BTreeMap<u32, usize>,
}

impl GeneratorConfig {
    /// The default desk-scale architecture: 64-d latents, two mapping
    /// layers, bands 4 through 64.
    pub fn desk() -> Self {
        GeneratorConfig {
            latent_dim: 64,
            style_dim: 64,
            mapping_layers: 2,
            max_resolution: 64,
            channels_per_band: [(4, 64), (8, 64), (16, 32), (32, 16), (64, 8)].into_iter().collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.style_dim == 0 {
            return Err(Error::Config("latent and style dims must be positive".into()));
        }
        if self.mapping_layers == 0 {
            return Err(Error::Config("need at least one mapping layer".into()));
        }
        if self.max_resolution < 4 || !self.max_resolution.is_power_of_two() {
            return Err(Error::Config(format!(
                "max_resolution {} must be a power of two >= 4",
                self.max_resolution
            )));
        }
        let bands = self.bands();
        let keys: Vec<u32> = self.channels_per_band.keys().copied().collect();
        if keys != bands {
            return Err(Error::Config(format!(
                "channels_per_band covers {keys:?}, expected exactly {bands:?}"
            )));
        }
        if let Some((r, _)) = self.channels_per_band.iter().find(|(_, &c)| c == 0) {
            return Err(Error::Config(format!("band {r} has zero channels")));
        }
        Ok(())
    }

    /// Resolution bands in ascending order.
    pub fn bands(&self) -> Vec<u32> {
        let mut out = Vec::new();
        let mut r = 4u32;
        while r <= self.max_resolution {
            out.push(r);
            r *= 2;
        }
        out
    }

    pub fn is_band(&self, r: u32) -> bool {
        r >= 4 && r.is_power_of_two() && r <= self.max_resolution
    }

    pub fn channels(&self, r: u32) -> Option<usize> {
        self.channels_per_band.get(&r).copied()
    }

    pub(crate) fn channels_or_err(&self, r: u32) -> Result<usize> {
        self.channels(r).ok_or(Error::InvalidBand(r))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: GeneratorConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::desk()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_is_valid() {
        let cfg = GeneratorConfig::desk();
        cfg.validate().unwrap();
        assert_eq!(cfg.bands(), vec![4, 8, 16, 32, 64]);
    }

    #[test]
    fn band_ladder_must_be_exact() {
        let mut cfg = GeneratorConfig::desk();
        cfg.channels_per_band.remove(&16);
        assert!(cfg.validate().is_err());

        let mut cfg = GeneratorConfig::desk();
        cfg.channels_per_band.insert(128, 4);
        assert!(cfg.validate().is_err());

        let mut cfg = GeneratorConfig::desk();
        cfg.max_resolution = 48;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn json_roundtrip() {
        let cfg = GeneratorConfig::desk();
        let s = cfg.to_json();
        assert!(s.contains("\"channels_per_band\":{\"4\":64,\"8\":64,\"16\":32,\"32\":16,\"64\":8}"));
        assert_eq!(GeneratorConfig::from_json(&s).unwrap(), cfg);
        assert!(GeneratorConfig::from_json(r#"{"latent_dim":1}"#).is_err());
    }
}
