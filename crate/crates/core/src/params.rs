//! Flat registry of trainable arrays.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Parameters in registration order. Ids are stable for the lifetime of the
/// store and double as the on-disk order in checkpoints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<ParamId> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::size(format!("parameter shape {shape:?} vs {} values", data.len())));
        }
        self.entries.push(Param { name: name.into(), shape, data });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> Result<&Param> {
        self.entries.get(id.0).ok_or(Error::UnknownParam(id.0))
    }

    pub fn get_mut(&mut self, id: ParamId) -> Result<&mut Param> {
        self.entries.get_mut(id.0).ok_or(Error::UnknownParam(id.0))
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].data
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param)> {
        self.entries.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar parameters.
    pub fn element_count(&self) -> usize {
        self.entries.iter().map(|p| p.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients { slots: self.entries.iter().map(|p| vec![0.0; p.data.len()]).collect() }
    }
}

/// One flat gradient array per registered parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    slots: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.slots[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.slots[id.0]
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.slots.iter().enumerate().map(|(i, g)| (ParamId(i), g.as_slice()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slots.concat()
    }

    /// First non-finite entry as `(param, index)`.
    pub fn first_non_finite(&self) -> Option<(ParamId, usize)> {
        self.slots
            .iter()
            .enumerate()
            .find_map(|(i, g)| g.iter().position(|x| !x.is_finite()).map(|j| (ParamId(i), j)))
    }
}
