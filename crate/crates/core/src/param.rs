//! Named, trainable parameters and their gradient slots.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Learning-rate group of a parameter.
///
/// Word embeddings and the contextualization stack train with a smaller rate
/// than the scoring layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LrGroup {
    Contextual,
    Other,
}

impl LrGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            LrGroup::Contextual => "contextual",
            LrGroup::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "contextual" => Some(LrGroup::Contextual),
            "other" => Some(LrGroup::Other),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub gradient: Tensor,
    pub group: LrGroup,
    /// Rows whose gradient is always discarded (the padding row of an embedding table).
    pub frozen_rows: Vec<usize>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor, group: LrGroup) -> Self {
        let gradient = Tensor::zeros(tensor.shape());
        Parameter {
            name: name.into(),
            tensor,
            gradient,
            group,
            frozen_rows: Vec::new(),
        }
    }

    pub fn zero_grad(&mut self) {
        self.gradient.fill(0.0);
    }
}

/// Ordered collection of parameters, addressable by id or name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, param: Parameter) -> Result<ParamId> {
        if self.by_name.contains_key(&param.name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter `{}`",
                param.name
            )));
        }
        let id = self.params.len();
        self.by_name.insert(param.name.clone(), id);
        self.params.push(param);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    /// Total number of scalar weights.
    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut set = ParamSet::new();
        set.add(Parameter::new("w", Tensor::zeros(&[2, 2]), LrGroup::Other))
            .unwrap();
        let dup = set.add(Parameter::new("w", Tensor::zeros(&[1, 1]), LrGroup::Other));
        assert!(dup.is_err());
        assert_eq!(set.by_name("w").unwrap().gradient.shape(), &[2, 2]);
    }
}
