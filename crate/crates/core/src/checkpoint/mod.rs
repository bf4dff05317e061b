//! Generator parameter sets, their on-disk container, and the in-memory
//! model registry.

mod config;
mod format;
mod registry;

pub use self::config::GeneratorConfig;
pub use self::format::{from_bytes, load, save, to_bytes, HEADER_LEN, MAGIC, META_ENTRY, VERSION};
pub use self::registry::{ModelId, ModelInfo, ModelRegistry};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::generator::manifest;
use crate::tensor::Tensor;

/// A complete, validated parameter set for one generator.
///
/// The parameter names and shapes always match [`manifest`] for `meta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    meta: GeneratorConfig,
    params: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(meta: GeneratorConfig, params: BTreeMap<String, Tensor>) -> Result<Self> {
        meta.validate()?;
        let expected = manifest(&meta);
        for name in params.keys() {
            if !expected.iter().any(|spec| &spec.name == name) {
                return Err(Error::manifest(name, "unknown parameter"));
            }
        }
        for spec in &expected {
            let tensor = params
                .get(&spec.name)
                .ok_or_else(|| Error::manifest(&spec.name, "missing parameter"))?;
            if tensor.dims() != spec.shape.as_slice() {
                return Err(Error::manifest(
                    &spec.name,
                    format!("shape {:?}, expected {:?}", tensor.dims(), spec.shape),
                ));
            }
        }
        Ok(Checkpoint { meta, params })
    }

    pub fn meta(&self) -> &GeneratorConfig {
        &self.meta
    }

    /// Parameters in lexicographic name order.
    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::manifest(name, "missing parameter"))
    }

    /// Same config and every tensor bit-identical.
    pub fn bit_eq(&self, other: &Checkpoint) -> bool {
        self.meta == other.meta
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((na, ta), (nb, tb))| na == nb && ta.bit_eq(tb))
    }

    pub fn into_parts(self) -> (GeneratorConfig, BTreeMap<String, Tensor>) {
        (self.meta, self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::init_random;

    #[test]
    fn extra_parameter_is_named() {
        let ckpt = init_random(&GeneratorConfig::desk(), 0);
        let (meta, mut params) = ckpt.into_parts();
        params.insert("synthesis.b8.extra".into(), Tensor::zeros(vec![1]).unwrap());
        match Checkpoint::new(meta, params) {
            Err(Error::Manifest { name, .. }) => assert_eq!(name, "synthesis.b8.extra"),
            other => panic!("expected manifest error, got {other:?}"),
        }
    }

    #[test]
    fn missing_and_misshapen_rejected() {
        let ckpt = init_random(&GeneratorConfig::desk(), 0);
        let (meta, params) = ckpt.into_parts();

        let mut missing = params.clone();
        missing.remove("synthesis.b16.conv1.bias");
        assert!(matches!(
            Checkpoint::new(meta.clone(), missing),
            Err(Error::Manifest { name, .. }) if name == "synthesis.b16.conv1.bias"
        ));

        let mut misshapen = params;
        misshapen.insert("mapping.fc0.bias".into(), Tensor::zeros(vec![3]).unwrap());
        assert!(matches!(
            Checkpoint::new(meta, misshapen),
            Err(Error::Manifest { name, .. }) if name == "mapping.fc0.bias"
        ));
    }
}
