use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::numerics::{NumericsError, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
struct Slot<T> {
    name: String,
    value: Tensor<T>,
    first_moment: Tensor<T>,
    second_moment: Tensor<T>,
}

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named parameters plus their Adam state.
///
/// Parameters keep insertion order; names are unique.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    slots: Vec<Slot<T>>,
    by_name: BTreeMap<String, usize>,
    frozen: BTreeSet<usize>,
    step: u64,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            slots: Vec::new(),
            by_name: BTreeMap::new(),
            frozen: BTreeSet::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId, NumericsError> {
        if self.by_name.contains_key(name) {
            return Err(NumericsError::DuplicateParam(name.to_string()));
        }
        let idx = self.slots.len();
        self.slots.push(Slot {
            name: name.to_string(),
            first_moment: Tensor::zeros(value.shape()),
            second_moment: Tensor::zeros(value.shape()),
            value,
        });
        self.by_name.insert(name.to_string(), idx);
        Ok(ParamId(idx))
    }

    /// Inserts a parameter drawn uniformly from `[-bound, bound]`.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Result<ParamId, NumericsError> {
        let len: usize = shape.iter().product();
        let data = (0..len)
            .map(|_| T::from_f64_lossy(rng.gen_range(-bound..=bound)))
            .collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NumericsError> {
        self.by_name
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.slots[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.slots[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor<T>, NumericsError> {
        Ok(self.get(self.id(name)?))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.slots.iter().map(|s| (s.name.as_str(), &s.value))
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn freeze(&mut self, id: ParamId) {
        self.frozen.insert(id.0);
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen.contains(&id.0)
    }

    pub fn moments(&self, id: ParamId) -> (&Tensor<T>, &Tensor<T>) {
        let s = &self.slots[id.0];
        (&s.first_moment, &s.second_moment)
    }

    pub fn num_scalars(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    pub(crate) fn slot_parts_mut(
        &mut self,
        idx: usize,
    ) -> (&mut Tensor<T>, &mut Tensor<T>, &mut Tensor<T>) {
        let s = &mut self.slots[idx];
        (&mut s.value, &mut s.first_moment, &mut s.second_moment)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            slots: self
                .slots
                .iter()
                .map(|s| Slot {
                    name: s.name.clone(),
                    value: s.value.cast(),
                    first_moment: s.first_moment.cast(),
                    second_moment: s.second_moment.cast(),
                })
                .collect(),
            by_name: self.by_name.clone(),
            frozen: self.frozen.clone(),
            step: self.step,
        }
    }
}

/// Dense gradients, one tensor per parameter of the store they were computed against.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// All-zero gradients shaped like `store`.
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            grads: store
                .slots
                .iter()
                .map(|s| Some(Tensor::zeros(s.value.shape())))
                .collect(),
        }
    }

    /// Gradients with no entries; every parameter is reported missing until set.
    pub fn empty(store: &ParamStore<T>) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub fn set(&mut self, id: ParamId, grad: Tensor<T>) {
        self.grads[id.0] = Some(grad);
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> Option<&mut Tensor<T>> {
        self.grads.get_mut(id.0).and_then(Option::as_mut)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds `other` into `self`; both must come from the same store.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.add_assign(t),
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, k: T) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(k);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::all_finite)
    }
}
