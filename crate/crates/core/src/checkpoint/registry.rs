use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::Checkpoint;
use crate::error::{Error, Result};

/// Opaque registry handle. Identity is per `put`, not per content.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(String);

impl ModelId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ModelId {
    fn from(s: &str) -> Self {
        ModelId(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: ModelId,
    pub name: String,
    pub max_resolution: u32,
}

struct Entry {
    seq: u64,
    name: String,
    ckpt: Arc<Checkpoint>,
}

/// Loaded checkpoints keyed by id. Entries are immutable once inserted;
/// an entry becomes visible to readers only after it is fully built.
#[derive(Default)]
pub struct ModelRegistry {
    next: AtomicU64,
    entries: RwLock<HashMap<ModelId, Entry>>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&self, ckpt: Checkpoint) -> ModelId {
        self.put_named("", ckpt)
    }

    pub fn put_named(&self, name: &str, ckpt: Checkpoint) -> ModelId {
        let seq = self.next.fetch_add(1, Ordering::Relaxed) + 1;
        let id = ModelId(format!("m{seq}"));
        let name = if name.is_empty() { id.0.clone() } else { name.to_owned() };
        let entry = Entry {
            seq,
            name,
            ckpt: Arc::new(ckpt),
        };
        self.entries
            .write()
            .expect("registry lock poisoned")
            .insert(id.clone(), entry);
        id
    }

    pub fn get(&self, id: &ModelId) -> Result<Arc<Checkpoint>> {
        self.entries
            .read()
            .expect("registry lock poisoned")
            .get(id)
            .map(|e| Arc::clone(&e.ckpt))
            .ok_or_else(|| Error::NotFound(id.0.clone()))
    }

    /// Models in insertion order.
    pub fn list(&self) -> Vec<ModelInfo> {
        let guard = self.entries.read().expect("registry lock poisoned");
        let mut rows: Vec<(u64, ModelInfo)> = guard
            .iter()
            .map(|(id, e)| {
                (
                    e.seq,
                    ModelInfo {
                        id: id.clone(),
                        name: e.name.clone(),
                        max_resolution: e.ckpt.meta().max_resolution,
                    },
                )
            })
            .collect();
        rows.sort_by_key(|(seq, _)| *seq);
        rows.into_iter().map(|(_, info)| info).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("registry lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::GeneratorConfig;
    use crate::generator::init_random;

    #[test]
    fn put_get_list() {
        let reg = ModelRegistry::new();
        assert!(reg.list().is_empty());
        let ckpt = init_random(&GeneratorConfig::desk(), 1);
        let a = reg.put_named("base", ckpt.clone());
        let b = reg.put(ckpt.clone());
        assert_ne!(a, b);
        assert!(reg.get(&a).unwrap().bit_eq(&ckpt));
        assert!(reg.get(&b).unwrap().bit_eq(&ckpt));
        let list = reg.list();
        assert_eq!(list.len(), 2);
        assert_eq!(list[0].name, "base");
        assert_eq!(list[0].max_resolution, 64);
        assert!(matches!(reg.get(&ModelId::from("nope")), Err(Error::NotFound(_))));
    }

    #[test]
    fn concurrent_puts_get_unique_ids() {
        let reg = Arc::new(ModelRegistry::new());
        let ckpt = init_random(&GeneratorConfig::desk(), 1);
        let ids: Vec<ModelId> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..8)
                .map(|_| {
                    let reg = Arc::clone(&reg);
                    let ckpt = ckpt.clone();
                    s.spawn(move || reg.put(ckpt))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let mut uniq = ids.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 8);
        assert_eq!(reg.len(), 8);
    }
}
