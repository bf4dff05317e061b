//! Deterministic stand-ins for a pretrained base model and its fine-tuned
//! transfer.

use std::collections::BTreeMap;

use super::manifest;
use crate::checkpoint::{Checkpoint, GeneratorConfig};
use crate::error::{Error, Result};
use crate::rng::{self, domain};
use crate::tensor::Tensor;
use crate::topology::{classify, Role, Stage};

const SIGMA_FLOOR: f64 = 1e-3;
const MAPPING_ATTENUATION: f64 = 0.01;

fn fan_in(role: Role, shape: &[usize]) -> usize {
    match role {
        // [out, in]; conv [c_out, c_in, k, k]; affine [c_in, style_dim]
        Role::MapWeight | Role::StyleAffineWeight => shape[1],
        Role::ConvWeight | Role::ToRgbWeight => shape[1..].iter().product(),
        _ => 1,
    }
}

/// Random base model. Weights are `N(0, 1/fan_in)` (std `1/sqrt(fan_in)`),
/// the learned constant is `N(0, 1)`, biases and noise strengths are zero.
/// Each tensor has its own stream keyed by `(seed, name)`.
///
/// Panics if `config` is invalid.
pub fn init_random(config: &GeneratorConfig, seed: u64) -> Checkpoint {
    config.validate().expect("init_random needs a valid config");
    let params: BTreeMap<String, Tensor> = manifest(config)
        .into_iter()
        .map(|spec| {
            let role = classify(&spec.name).expect("manifest names classify").role;
            let numel: usize = spec.shape.iter().product();
            let data = match role {
                Role::MapBias | Role::ConvBias | Role::StyleAffineBias | Role::ToRgbBias | Role::NoiseStrength => {
                    vec![0.0; numel]
                }
                Role::Const => rng::normal_vec(domain::INIT, seed, &spec.name, numel),
                _ => {
                    let std = (fan_in(role, &spec.shape) as f32).sqrt().recip();
                    let mut v = rng::normal_vec(domain::INIT, seed, &spec.name, numel);
                    v.iter_mut().for_each(|x| *x *= std);
                    v
                }
            };
            let t = Tensor::new(spec.shape, data).expect("manifest shape");
            (spec.name, t)
        })
        .collect();
    Checkpoint::new(config.clone(), params).expect("manifest-conforming")
}

fn population_std(v: &[f32]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    (v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Perturb every tensor of `base` by `strength * σ * N(0, 1)` per element,
/// where `σ` is the tensor's own standard deviation (at least 1e-3).
/// Mapping tensors get 1% of that perturbation, mirroring how little a
/// fine-tuned model's mapping network moves.
pub fn synth_transfer(base: &Checkpoint, strength: f32, seed: u64) -> Result<Checkpoint> {
    if !(strength >= 0.0 && strength.is_finite()) {
        return Err(Error::Config(format!("transfer strength {strength} must be finite and >= 0")));
    }
    if strength == 0.0 {
        return Ok(base.clone());
    }
    let mut params = BTreeMap::new();
    for (name, t) in base.params() {
        let scale = match classify(name)?.stage {
            Stage::Mapping => MAPPING_ATTENUATION,
            Stage::Synthesis => 1.0,
        } * strength as f64
            * population_std(t.data()).max(SIGMA_FLOOR);
        let noise = rng::normal_vec(domain::TRANSFER, seed, name, t.numel());
        let data = t
            .data()
            .iter()
            .zip(noise)
            .map(|(&x, n)| (x as f64 + scale * n as f64) as f32)
            .collect();
        params.insert(name.clone(), Tensor::new(t.dims().to_vec(), data)?);
    }
    Checkpoint::new(base.meta().clone(), params)
}
