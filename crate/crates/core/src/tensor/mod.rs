//! Dense f64 tensors with reverse-mode autodiff on a dynamic tape.
//!
//! The tape is rebuilt for every forward pass; nodes are stored in
//! execution order and `backward` walks them in reverse. Everything is
//! two-dimensional internally (vectors are n x 1 columns), f64 only, and
//! single-threaded per tape. Independent tapes may run on different
//! threads.

mod adam;
mod serialize;
mod tape;

pub mod gradcheck;

pub use adam::{adam_step, clip_global_norm, AdamHyper, AdamState};
pub use serialize::{read_named_tensors, write_named_tensors, NamedTensors};
pub use tape::{Tape, TensorId};

use std::collections::BTreeMap;

/// Plain tensor value: row-major data plus shape. One- and two-dimensional
/// shapes are used throughout; serialization accepts any rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "array shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Array { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Array {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Array {
            shape: vec![1, 1],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Array {
            shape: vec![data.len(), 1],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len());
        Array {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// (rows, cols) view: 1-D arrays are column vectors, scalars are 1x1.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (self.shape[0], 1),
            2 => (self.shape[0], self.shape[1]),
            _ => panic!("tensor of rank {} used where 2-D expected", self.shape.len()),
        }
    }
}

/// Named parameter collection. BTreeMap keeps iteration order stable so
/// optimizer updates and serialization are deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    map: BTreeMap<String, Array>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) {
        let name = name.into();
        assert!(
            self.map.insert(name.clone(), value).is_none(),
            "duplicate parameter `{name}`"
        );
    }

    pub fn get(&self, name: &str) -> &Array {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    /// Overwrites an existing parameter; the shape must not change.
    pub fn replace(&mut self, name: &str, value: Array) {
        let slot = self.get_mut(name);
        assert_eq!(
            slot.shape, value.shape,
            "replace `{name}`: shape {:?} -> {:?}",
            slot.shape, value.shape
        );
        *slot = value;
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl FromIterator<(String, Array)> for ParamStore {
    fn from_iter<T: IntoIterator<Item = (String, Array)>>(iter: T) -> Self {
        let mut store = ParamStore::new();
        for (k, v) in iter {
            store.insert(k, v);
        }
        store
    }
}

/// A tape plus lazily bound parameter leaves. Network code asks for
/// parameters by name; after `backward`, `grads` maps the same names to
/// accumulated gradients. Non-trainable binding is used for scoring and
/// sampling passes that never call backward.
pub struct BoundParams<'p> {
    pub tape: Tape,
    params: &'p ParamStore,
    trainable: bool,
    bound: BTreeMap<String, TensorId>,
}

impl<'p> BoundParams<'p> {
    pub fn new(params: &'p ParamStore, trainable: bool) -> Self {
        BoundParams {
            tape: Tape::new(),
            params,
            trainable,
            bound: BTreeMap::new(),
        }
    }

    pub fn param(&mut self, name: &str) -> TensorId {
        if let Some(&id) = self.bound.get(name) {
            return id;
        }
        let id = self.tape.leaf(self.params.get(name), self.trainable);
        self.bound.insert(name.to_string(), id);
        id
    }

    pub fn store(&self) -> &ParamStore {
        self.params
    }

    /// Gradients for every bound parameter that received one.
    pub fn grads(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out = BTreeMap::new();
        for (name, &id) in &self.bound {
            if let Some(g) = self.tape.grad(id) {
                out.insert(name.clone(), g.to_vec());
            }
        }
        out
    }
}
