//! Resolution-dependent interpolation between two checkpoints of the same
//! architecture.
//!
//! Every synthesis parameter in band `r` becomes
//! `(1 - α) * base + α * transfer` with `α = schedule(r)`; α multiplies the
//! transferred model. Mapping-network parameters are not resolution
//! dependent and follow a separate [`MappingPolicy`] (base by default).
//!
//! An α of exactly 0 or 1 copies the donor tensor without touching its
//! bits, so a layer swap is a pure selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, GeneratorConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::topology::{classify_in, Stage};

/// One of the two donor models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Base,
    #[default]
    Transfer,
}

/// α as a function of band resolution (and, for `ChannelTable`, output
/// channel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleJson", into = "ScheduleJson")]
pub enum BlendSchedule {
    /// Bands `r <= r_swap` come wholly from `low_source`, the rest from the
    /// other model.
    Swap { r_swap: u32, low_source: Source },
    /// α linear in `log2 r` between `(r_lo, alpha_lo)` and `(r_hi, alpha_hi)`,
    /// constant outside.
    LinearLog {
        r_lo: u32,
        r_hi: u32,
        alpha_lo: f32,
        alpha_hi: f32,
    },
    /// Smoothstep in `log2 r`, 0.5 at `r_center`, rising over
    /// `width_octaves` octaves.
    Smoothstep { r_center: u32, width_octaves: f32 },
    Table { alphas: BTreeMap<u32, f32> },
    /// Per output channel α for conv/ToRGB weights and biases, falling back
    /// to `alphas` for channels without an entry and for other roles.
    ChannelTable {
        alphas: BTreeMap<u32, f32>,
        channels: BTreeMap<u32, BTreeMap<usize, f32>>,
    },
}

impl BlendSchedule {
    /// α ≡ `alpha` over every band of `config`.
    pub fn constant(config: &GeneratorConfig, alpha: f32) -> Self {
        BlendSchedule::Table {
            alphas: config.bands().into_iter().map(|r| (r, alpha)).collect(),
        }
    }

    pub fn swap(r_swap: u32, low_source: Source) -> Self {
        BlendSchedule::Swap { r_swap, low_source }
    }

    pub fn validate(&self, config: &GeneratorConfig) -> Result<()> {
        let band = |r: u32| {
            if config.is_band(r) {
                Ok(())
            } else {
                Err(Error::InvalidBand(r))
            }
        };
        let unit = |what: &str, a: f32| {
            if (0.0..=1.0).contains(&a) {
                Ok(())
            } else {
                Err(Error::Schedule(format!("{what} = {a} is outside [0, 1]")))
            }
        };
        match self {
            BlendSchedule::Swap { r_swap, .. } => band(*r_swap),
            BlendSchedule::LinearLog {
                r_lo,
                r_hi,
                alpha_lo,
                alpha_hi,
            } => {
                band(*r_lo)?;
                band(*r_hi)?;
                if r_lo >= r_hi {
                    return Err(Error::Schedule(format!("r_lo {r_lo} must be below r_hi {r_hi}")));
                }
                unit("alpha_lo", *alpha_lo)?;
                unit("alpha_hi", *alpha_hi)
            }
            BlendSchedule::Smoothstep {
                r_center,
                width_octaves,
            } => {
                band(*r_center)?;
                if !(width_octaves.is_finite() && *width_octaves > 0.0) {
                    return Err(Error::Schedule(format!(
                        "width_octaves {width_octaves} must be positive"
                    )));
                }
                Ok(())
            }
            BlendSchedule::Table { alphas } => {
                for (&r, &a) in alphas {
                    band(r)?;
                    unit(&format!("alpha[{r}]"), a)?;
                }
                Ok(())
            }
            BlendSchedule::ChannelTable { alphas, channels } => {
                for (&r, &a) in alphas {
                    band(r)?;
                    unit(&format!("alpha[{r}]"), a)?;
                }
                for (&r, per_channel) in channels {
                    band(r)?;
                    let width = config.channels_or_err(r)?;
                    for (&c, &a) in per_channel {
                        if c >= width {
                            return Err(Error::Schedule(format!(
                                "channel {c} out of range for band {r} ({width} channels)"
                            )));
                        }
                        unit(&format!("alpha[{r}][{c}]"), a)?;
                    }
                }
                Ok(())
            }
        }
    }

    /// α at band `r`. `channel` only matters for `ChannelTable`.
    pub fn alpha_at(&self, r: u32, channel: Option<usize>) -> Result<f32> {
        let log2 = |x: u32| (x as f64).log2();
        match self {
            BlendSchedule::Swap { r_swap, low_source } => {
                let low = r <= *r_swap;
                let from_transfer = match low_source {
                    Source::Transfer => low,
                    Source::Base => !low,
                };
                Ok(if from_transfer { 1.0 } else { 0.0 })
            }
            BlendSchedule::LinearLog {
                r_lo,
                r_hi,
                alpha_lo,
                alpha_hi,
            } => {
                let t = ((log2(r) - log2(*r_lo)) / (log2(*r_hi) - log2(*r_lo))).clamp(0.0, 1.0);
                let (lo, hi) = (*alpha_lo as f64, *alpha_hi as f64);
                Ok((lo + t * (hi - lo)) as f32)
            }
            BlendSchedule::Smoothstep {
                r_center,
                width_octaves,
            } => {
                let t = ((log2(r) - log2(*r_center)) / *width_octaves as f64 + 0.5).clamp(0.0, 1.0);
                Ok((t * t * (3.0 - 2.0 * t)) as f32)
            }
            BlendSchedule::Table { alphas } => alphas
                .get(&r)
                .copied()
                .ok_or_else(|| Error::Schedule(format!("table has no entry for band {r}"))),
            BlendSchedule::ChannelTable { alphas, channels } => channel
                .and_then(|c| channels.get(&r).and_then(|m| m.get(&c)))
                .or_else(|| alphas.get(&r))
                .copied()
                .ok_or_else(|| match channel {
                    Some(c) => Error::Schedule(format!("no entry for band {r} channel {c}")),
                    None => Error::Schedule(format!("no entry for band {r}")),
                }),
        }
    }
}

/// Where the mapping-network parameters come from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingPolicy {
    #[default]
    Base,
    Transfer,
    /// Interpolate with this α like a synthesis band.
    Alpha(f32),
}

impl MappingPolicy {
    pub fn alpha(self) -> f32 {
        match self {
            MappingPolicy::Base => 0.0,
            MappingPolicy::Transfer => 1.0,
            MappingPolicy::Alpha(a) => a,
        }
    }

    pub fn validate(self) -> Result<()> {
        let a = self.alpha();
        if (0.0..=1.0).contains(&a) {
            Ok(())
        } else {
            Err(Error::Schedule(format!("mapping alpha {a} is outside [0, 1]")))
        }
    }
}

/// `(1 - α) * b + α * t`, exact copies at the endpoints. The two products
/// are exact in f64 and the result is rounded to f32 once.
fn mix_into(out: &mut Vec<f32>, b: &[f32], t: &[f32], alpha: f32) {
    if alpha == 0.0 {
        out.extend_from_slice(b);
    } else if alpha == 1.0 {
        out.extend_from_slice(t);
    } else {
        let a = alpha as f64;
        let keep = 1.0 - a;
        out.extend(
            b.iter()
                .zip(t)
                .map(|(&x, &y)| (keep * x as f64 + a * y as f64) as f32),
        );
    }
}

fn mix(b: &Tensor, t: &Tensor, alpha: f32) -> Tensor {
    let mut out = Vec::with_capacity(b.numel());
    mix_into(&mut out, b.data(), t.data(), alpha);
    Tensor::new(b.dims().to_vec(), out).expect("same shape as donor")
}

pub fn blend_checkpoints(
    base: &Checkpoint,
    transfer: &Checkpoint,
    schedule: &BlendSchedule,
    mapping: MappingPolicy,
) -> Result<Checkpoint> {
    let meta = base.meta();
    if meta != transfer.meta() {
        return Err(Error::ConfigMismatch(
            "base and transfer checkpoints have different architectures".into(),
        ));
    }
    schedule.validate(meta)?;
    mapping.validate()?;

    let mut params = BTreeMap::new();
    for (name, b) in base.params() {
        let t = transfer.tensor(name)?;
        if t.dims() != b.dims() {
            return Err(Error::manifest(
                name,
                format!("base shape {:?} vs transfer shape {:?}", b.dims(), t.dims()),
            ));
        }
        let key = classify_in(meta, name)?;
        let blended = match (key.stage, key.resolution) {
            (Stage::Mapping, _) => mix(b, t, mapping.alpha()),
            (Stage::Synthesis, Some(r))
                if matches!(schedule, BlendSchedule::ChannelTable { .. }) && key.role.is_output_channel_indexed() =>
            {
                let channels = b.dims()[0];
                let slice = b.numel() / channels;
                let mut out = Vec::with_capacity(b.numel());
                for c in 0..channels {
                    let alpha = schedule.alpha_at(r, Some(c))?;
                    let span = c * slice..(c + 1) * slice;
                    mix_into(&mut out, &b.data()[span.clone()], &t.data()[span], alpha);
                }
                Tensor::new(b.dims().to_vec(), out)?
            }
            (Stage::Synthesis, Some(r)) => mix(b, t, schedule.alpha_at(r, None)?),
            (Stage::Synthesis, None) => unreachable!("synthesis keys carry a resolution"),
        };
        params.insert(name.clone(), blended);
    }
    Checkpoint::new(meta.clone(), params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub r: u32,
    pub alpha: f32,
}

/// One `(r, α)` row per band of `config`, lowest resolution first.
pub fn describe_schedule(schedule: &BlendSchedule, config: &GeneratorConfig) -> Result<Vec<ScheduleRow>> {
    schedule.validate(config)?;
    config
        .bands()
        .into_iter()
        .map(|r| Ok(ScheduleRow { r, alpha: schedule.alpha_at(r, None)? }))
        .collect()
}

/// Wire form. Map keys are strings in JSON; they are parsed here rather
/// than by serde because internally tagged enums cannot parse integer keys.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ScheduleJson {
    Swap {
        r_swap: u32,
        #[serde(default)]
        low_source: Source,
    },
    LinearLog {
        r_lo: u32,
        r_hi: u32,
        alpha_lo: f32,
        alpha_hi: f32,
    },
    Smoothstep {
        r_center: u32,
        width_octaves: f32,
    },
    Table {
        alphas: BTreeMap<String, f32>,
    },
    ChannelTable {
        #[serde(default)]
        alphas: BTreeMap<String, f32>,
        #[serde(default)]
        channels: BTreeMap<String, BTreeMap<String, f32>>,
    },
}

fn parse_key<K: std::str::FromStr>(k: &str, what: &str) -> Result<K, String> {
    k.parse().map_err(|_| format!("{what} key `{k}` is not an integer"))
}

fn parse_alphas(raw: BTreeMap<String, f32>) -> Result<BTreeMap<u32, f32>, String> {
    raw.into_iter()
        .map(|(k, v)| Ok((parse_key(&k, "resolution")?, v)))
        .collect()
}

fn format_alphas(m: BTreeMap<u32, f32>) -> BTreeMap<String, f32> {
    m.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

impl TryFrom<ScheduleJson> for BlendSchedule {
    type Error = String;

    fn try_from(raw: ScheduleJson) -> Result<Self, String> {
        Ok(match raw {
            ScheduleJson::Swap { r_swap, low_source } => BlendSchedule::Swap { r_swap, low_source },
            ScheduleJson::LinearLog {
                r_lo,
                r_hi,
                alpha_lo,
                alpha_hi,
            } => BlendSchedule::LinearLog {
                r_lo,
                r_hi,
                alpha_lo,
                alpha_hi,
            },
            ScheduleJson::Smoothstep {
                r_center,
                width_octaves,
            } => BlendSchedule::Smoothstep {
                r_center,
                width_octaves,
            },
            ScheduleJson::Table { alphas } => BlendSchedule::Table {
                alphas: parse_alphas(alphas)?,
            },
            ScheduleJson::ChannelTable { alphas, channels } => BlendSchedule::ChannelTable {
                alphas: parse_alphas(alphas)?,
                channels: channels
                    .into_iter()
                    .map(|(r, per)| {
                        let per = per
                            .into_iter()
                            .map(|(c, a)| Ok((parse_key(&c, "channel")?, a)))
                            .collect::<Result<_, String>>()?;
                        Ok((parse_key(&r, "resolution")?, per))
                    })
                    .collect::<Result<_, String>>()?,
            },
        })
    }
}

impl From<BlendSchedule> for ScheduleJson {
    fn from(s: BlendSchedule) -> Self {
        match s {
            BlendSchedule::Swap { r_swap, low_source } => ScheduleJson::Swap { r_swap, low_source },
            BlendSchedule::LinearLog {
                r_lo,
                r_hi,
                alpha_lo,
                alpha_hi,
            } => ScheduleJson::LinearLog {
                r_lo,
                r_hi,
                alpha_lo,
                alpha_hi,
            },
            BlendSchedule::Smoothstep {
                r_center,
                width_octaves,
            } => ScheduleJson::Smoothstep {
                r_center,
                width_octaves,
            },
            BlendSchedule::Table { alphas } => ScheduleJson::Table {
                alphas: format_alphas(alphas),
            },
            BlendSchedule::ChannelTable { alphas, channels } => ScheduleJson::ChannelTable {
                alphas: format_alphas(alphas),
                channels: channels
                    .into_iter()
                    .map(|(r, per)| (r.to_string(), per.into_iter().map(|(c, a)| (c.to_string(), a)).collect()))
                    .collect(),
            },
        }
    }
}
