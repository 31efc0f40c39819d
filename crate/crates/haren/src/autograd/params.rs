//! Named trainable parameter storage, persisted across training steps while
//! the graph itself is rebuilt per step.

use super::{Graph, Precision, Tid};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Ordered collection of named parameters. Order is the identity used by
/// the optimizer state and the gradient checker, so it must be stable.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> usize {
        let name = name.into();
        debug_assert!(
            self.index_of(&name).is_none(),
            "duplicate parameter {name}"
        );
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.params.push(Param {
            name,
            shape,
            values,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn by_name(&self, name: &str) -> Result<&Param> {
        self.index_of(name)
            .map(|i| &self.params[i])
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    /// Total scalar count across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    /// Insert every parameter into `g` as a trainable leaf. The returned
    /// binding maps parameter index -> graph node.
    pub fn bind(&self, g: &mut Graph) -> Result<Bound> {
        let mut tids = Vec::with_capacity(self.params.len());
        for p in &self.params {
            tids.push(g.trainable(p.shape.clone(), p.values.clone())?);
        }
        Ok(Bound { tids })
    }

    /// Round every value through f32 (used after optimizer steps in 32-bit
    /// training mode).
    pub fn quantize(&mut self, precision: Precision) {
        for p in self.params.iter_mut() {
            precision.quantize_all(&mut p.values);
        }
    }
}

/// Graph bindings for one recorded step.
pub struct Bound {
    tids: Vec<Tid>,
}

impl Bound {
    pub fn tid(&self, idx: usize) -> Tid {
        self.tids[idx]
    }

    pub fn tids(&self) -> &[Tid] {
        &self.tids
    }
}
