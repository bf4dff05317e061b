//! Which resolution band each parameter belongs to.
//!
//! Parameter names follow a fixed grammar:
//!
//! ```text
//! mapping.fc{i}.{weight|bias}
//! synthesis.b{r}.const
//! synthesis.b{r}.conv{0|1}.{weight|bias|affine_weight|affine_bias|noise_strength}
//! synthesis.b{r}.torgb.{weight|bias|affine_weight|affine_bias}
//! ```
//!
//! A band owns everything that runs at its resolution: the learned constant
//! (band 4), both convolutions with their style affines and noise strengths,
//! and the ToRGB layer rendering that band. Swapping a band therefore moves
//! the block's whole behaviour.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::checkpoint::{Checkpoint, GeneratorConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Mapping,
    Synthesis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    MapWeight,
    MapBias,
    Const,
    ConvWeight,
    ConvBias,
    StyleAffineWeight,
    StyleAffineBias,
    NoiseStrength,
    ToRgbWeight,
    ToRgbBias,
}

impl Role {
    /// Roles whose leading axis (or sole axis, for biases) is the output
    /// channel of the layer.
    pub fn is_output_channel_indexed(self) -> bool {
        matches!(
            self,
            Role::ConvWeight | Role::ConvBias | Role::ToRgbWeight | Role::ToRgbBias
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct LayerKey {
    pub stage: Stage,
    /// Present exactly for synthesis parameters.
    pub resolution: Option<u32>,
    pub role: Role,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Mapping => "mapping",
            Stage::Synthesis => "synthesis",
        })
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::MapWeight => "map_weight",
            Role::MapBias => "map_bias",
            Role::Const => "const",
            Role::ConvWeight => "conv_weight",
            Role::ConvBias => "conv_bias",
            Role::StyleAffineWeight => "style_affine_weight",
            Role::StyleAffineBias => "style_affine_bias",
            Role::NoiseStrength => "noise_strength",
            Role::ToRgbWeight => "torgb_weight",
            Role::ToRgbBias => "torgb_bias",
        };
        f.write_str(s)
    }
}

fn grammar_err(name: &str, segment: &str) -> Error {
    Error::Grammar {
        name: name.to_owned(),
        segment: segment.to_owned(),
    }
}

fn parse_index(digits: &str) -> Option<u32> {
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if digits.len() > 1 && digits.starts_with('0') {
        return None;
    }
    digits.parse().ok()
}

/// Parse a parameter name into its band and role.
pub fn classify(name: &str) -> Result<LayerKey> {
    let parts: Vec<&str> = name.split('.').collect();
    match parts.as_slice() {
        ["mapping", fc, field] => {
            fc.strip_prefix("fc")
                .and_then(parse_index)
                .ok_or_else(|| grammar_err(name, fc))?;
            let role = match *field {
                "weight" => Role::MapWeight,
                "bias" => Role::MapBias,
                other => return Err(grammar_err(name, other)),
            };
            Ok(LayerKey {
                stage: Stage::Mapping,
                resolution: None,
                role,
            })
        }
        ["synthesis", block, rest @ ..] => {
            let r = block
                .strip_prefix('b')
                .and_then(parse_index)
                .filter(|r| *r >= 4 && r.is_power_of_two())
                .ok_or_else(|| grammar_err(name, block))?;
            let role = match rest {
                ["const"] => Role::Const,
                [layer @ ("conv0" | "conv1"), field] => match *field {
                    "weight" => Role::ConvWeight,
                    "bias" => Role::ConvBias,
                    "affine_weight" => Role::StyleAffineWeight,
                    "affine_bias" => Role::StyleAffineBias,
                    "noise_strength" => Role::NoiseStrength,
                    other => return Err(grammar_err(name, &format!("{layer}.{other}"))),
                },
                ["torgb", field] => match *field {
                    "weight" => Role::ToRgbWeight,
                    "bias" => Role::ToRgbBias,
                    "affine_weight" => Role::StyleAffineWeight,
                    "affine_bias" => Role::StyleAffineBias,
                    other => return Err(grammar_err(name, &format!("torgb.{other}"))),
                },
                [] => return Err(grammar_err(name, "")),
                [first, ..] => return Err(grammar_err(name, first)),
            };
            Ok(LayerKey {
                stage: Stage::Synthesis,
                resolution: Some(r),
                role,
            })
        }
        [first, ..] => Err(grammar_err(name, first)),
        [] => Err(grammar_err(name, "")),
    }
}

/// [`classify`], additionally requiring the band to exist in `config`.
pub fn classify_in(config: &GeneratorConfig, name: &str) -> Result<LayerKey> {
    let key = classify(name)?;
    if let Some(r) = key.resolution {
        if !config.is_band(r) {
            return Err(Error::InvalidBand(r));
        }
    }
    Ok(key)
}

/// Parameter names grouped by band, plus the mapping network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BandPartition {
    /// One list per configured band (possibly empty), names sorted.
    pub bands: BTreeMap<u32, Vec<String>>,
    pub mapping: Vec<String>,
}

impl BandPartition {
    pub fn total(&self) -> usize {
        self.mapping.len() + self.bands.values().map(Vec::len).sum::<usize>()
    }
}

pub fn partition_names<'a>(
    config: &GeneratorConfig,
    names: impl IntoIterator<Item = &'a str>,
) -> Result<BandPartition> {
    let mut bands: BTreeMap<u32, Vec<String>> = config.bands().into_iter().map(|r| (r, Vec::new())).collect();
    let mut mapping = Vec::new();
    for name in names {
        let key = classify_in(config, name)?;
        match key.resolution {
            Some(r) => bands.get_mut(&r).expect("band checked").push(name.to_owned()),
            None => mapping.push(name.to_owned()),
        }
    }
    for list in bands.values_mut() {
        list.sort();
    }
    mapping.sort();
    Ok(BandPartition { bands, mapping })
}

pub fn partition(ckpt: &Checkpoint) -> Result<BandPartition> {
    partition_names(ckpt.meta(), ckpt.params().keys().map(String::as_str))
}
