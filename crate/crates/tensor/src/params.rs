use std::sync::atomic::{AtomicU64, Ordering};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

fn next_store_id() -> u64 {
    NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Named parameter arrays that outlive a single graph.
///
/// Ids are slot indices, so a [`snapshot`](ParamStore::snapshot) can be read
/// through the same model structs as the original.
#[derive(Debug)]
pub struct ParamStore<T> {
    id: u64,
    slots: Vec<Option<Param<T>>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        self.snapshot()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            id: next_store_id(),
            slots: Vec::new(),
        }
    }

    /// Identity used by graphs to memoize bindings. Snapshots get a fresh id.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.slots.push(Some(Param {
            name: name.into(),
            value,
        }));
        ParamId(self.slots.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.param(id).value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.slots[id.0]
            .as_mut()
            .unwrap_or_else(|| panic!("parameter slot {} was removed", id.0))
            .value
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        self.slots[id.0]
            .as_ref()
            .unwrap_or_else(|| panic!("parameter slot {} was removed", id.0))
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.slots.get(id.0).is_some_and(|s| s.is_some())
    }

    pub fn remove(&mut self, id: ParamId) -> Option<Param<T>> {
        self.slots.get_mut(id.0).and_then(Option::take)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.iter().find(|(_, p)| p.name == name).map(|(id, _)| id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|p| (ParamId(i), p)))
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.iter().map(|(id, _)| id).collect()
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.iter().map(|(_, p)| p.value.numel()).sum()
    }

    /// Deep copy under a new store id.
    pub fn snapshot(&self) -> Self {
        ParamStore {
            id: next_store_id(),
            slots: self.slots.clone(),
        }
    }

    /// Overwrite every value with the one stored under the same id in `src`.
    pub fn copy_values_from(&mut self, src: &ParamStore<T>) {
        for (slot, other) in self.slots.iter_mut().zip(&src.slots) {
            match (slot, other) {
                (Some(dst), Some(s)) => dst.value.data_mut().copy_from_slice(s.value.data()),
                (slot @ Some(_), None) => *slot = None,
                _ => {}
            }
        }
    }

    /// FNV-1a over names, shapes and value bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (_, p) in self.iter() {
            eat(p.name.as_bytes());
            for &d in p.value.shape() {
                eat(&(d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                eat(&v.to_f64_lossy().to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Checksum restricted to parameters whose name starts with `prefix`.
    pub fn checksum_prefix(&self, prefix: &str) -> u64 {
        let mut sub = ParamStore::<T>::new();
        for (_, p) in self.iter().filter(|(_, p)| p.name.starts_with(prefix)) {
            sub.add(p.name.clone(), p.value.clone());
        }
        sub.checksum()
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|(_, p)| p.value.all_finite())
    }
}

/// How a graph should bind parameters from a store: as trainable leaves
/// that collect gradient, or as frozen constants.
#[derive(Clone, Copy)]
pub struct Params<'a, T> {
    pub store: &'a ParamStore<T>,
    pub trainable: bool,
}

impl<'a, T: Scalar> Params<'a, T> {
    pub fn trainable(store: &'a ParamStore<T>) -> Self {
        Params {
            store,
            trainable: true,
        }
    }

    pub fn frozen(store: &'a ParamStore<T>) -> Self {
        Params {
            store,
            trainable: false,
        }
    }
}
