use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::ArrayD;

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

/// Globally unique handle of one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamKey {
    pub store: u64,
    pub index: usize,
}

/// Index of a parameter inside its owning [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    value: Arc<ArrayD<f64>>,
}

impl Param {
    pub fn value(&self) -> &ArrayD<f64> {
        &self.value
    }
}

/// Named, ordered collection of trainable tensors owned by one network.
///
/// Values are reference counted so that a [`crate::Graph`] can hold them
/// without copying; mutation goes through copy-on-write.
#[derive(Debug, Clone)]
pub struct ParamStore {
    id: u64,
    params: Vec<Param>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value: Arc::new(value),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn key(&self, id: ParamId) -> ParamKey {
        ParamKey {
            store: self.id,
            index: id.0,
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = ParamKey> + '_ {
        (0..self.params.len()).map(move |index| ParamKey {
            store: self.id,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<ArrayD<f64>> {
        Arc::clone(&self.params[id.0].value)
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<f64> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }
}

/// A selection of parameters, e.g. the trainable subset handed to an optimizer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamSet {
    keys: BTreeSet<ParamKey>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_store(store: &ParamStore) -> Self {
        Self {
            keys: store.keys().collect(),
        }
    }

    pub fn extend_store(&mut self, store: &ParamStore) {
        self.keys.extend(store.keys());
    }

    pub fn union(mut self, other: &ParamSet) -> Self {
        self.keys.extend(other.keys.iter().copied());
        self
    }

    pub fn remove_store(&mut self, store: &ParamStore) {
        self.keys.retain(|k| k.store != store.id());
    }

    pub fn contains(&self, key: &ParamKey) -> bool {
        self.keys.contains(key)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamKey> {
        self.keys.iter()
    }
}

/// Parameter gradients produced by [`crate::Graph::backward`].
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub(crate) by_key: HashMap<ParamKey, ArrayD<f64>>,
}

impl Gradients {
    pub fn get(&self, key: &ParamKey) -> Option<&ArrayD<f64>> {
        self.by_key.get(key)
    }

    pub fn of(&self, store: &ParamStore, id: ParamId) -> Option<&ArrayD<f64>> {
        self.by_key.get(&store.key(id))
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }

    pub(crate) fn accumulate(&mut self, key: ParamKey, grad: ArrayD<f64>) {
        match self.by_key.get_mut(&key) {
            Some(g) => *g += &grad,
            None => {
                self.by_key.insert(key, grad);
            }
        }
    }
}
