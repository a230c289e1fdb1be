use serde::{Deserialize, Serialize};

use super::Real;

/// Location of one tensor inside the flat parameter buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub len: usize,
}

impl Slot {
    pub fn of<'a, T>(&self, flat: &'a [T]) -> &'a [T] {
        &flat[self.offset..self.offset + self.len]
    }

    pub fn of_mut<'a, T>(&self, flat: &'a mut [T]) -> &'a mut [T] {
        &mut flat[self.offset..self.offset + self.len]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slot(&self) -> Slot {
        Slot {
            offset: self.offset,
            len: self.len(),
        }
    }
}

/// Named tensors backed by one contiguous buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    entries: Vec<ParamEntry>,
    values: Vec<T>,
}

impl<T: Real> Default for Params<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Params<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Appends a tensor filled by `init` and returns its slot.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], mut init: impl FnMut() -> T) -> Slot {
        let name = name.into();
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        let offset = self.values.len();
        let entry = ParamEntry {
            name,
            shape: shape.to_vec(),
            offset,
        };
        let len = entry.len();
        self.values.extend((0..len).map(|_| init()));
        self.entries.push(entry);
        Slot { offset, len }
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn flat(&self) -> &[T] {
        &self.values
    }

    pub fn flat_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.entry(name).map(|e| e.slot().of(&self.values))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let slot = self.entry(name)?.slot();
        Some(slot.of_mut(&mut self.values))
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Iterates `(name, values)` in registration order.
    pub fn named(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.entries
            .iter()
            .map(|e| (e.name.as_str(), e.slot().of(&self.values)))
    }

    /// A zero buffer with the same layout, used for gradients.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self.entries.clone(),
            values: vec![T::zero(); self.values.len()],
        }
    }

    /// Replaces every value, keeping the layout.
    pub fn set_flat(&mut self, values: Vec<T>) {
        assert_eq!(values.len(), self.values.len(), "parameter count changed");
        self.values = values;
    }
}
