use std::collections::HashMap;

use portrait_tensor::{Param, Tape, Tensor, Var};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result, state};

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, param: Param) -> Result<()> {
        if self.get(&param.name).is_some() {
            return Err(CoreError::Contract(format!("duplicate parameter {}", param.name)));
        }
        self.params.push(param);
        Ok(())
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        self.push(Param::new(name, value))
    }

    pub fn extend(&mut self, other: ParamSet) -> Result<()> {
        for p in other.params {
            self.push(p)?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for p in &mut self.params {
            p.frozen = frozen;
        }
    }

    pub fn all_frozen(&self) -> bool {
        self.params.iter().all(|p| p.frozen)
    }

    /// Parameters whose name starts with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamSet {
        ParamSet {
            params: self
                .params
                .iter()
                .filter(|p| p.name.starts_with(prefix))
                .cloned()
                .collect(),
        }
    }

    /// Records every parameter on `tape`.
    pub fn bind(&self, tape: &Tape) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| (p.name.clone(), tape.param(p)))
                .collect(),
        }
    }

    /// SHA-256 over names, shapes, frozen flags and exact values.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update((p.name.len() as u64).to_le_bytes());
            h.update(p.name.as_bytes());
            h.update([p.frozen as u8]);
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            h.update(p.value.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parameters recorded on one tape, looked up by name.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Bound {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Var> {
        self.vars
            .get(name)
            .ok_or_else(|| state(format!("parameter {name} is not bound")))
    }

    pub fn merge(mut self, other: Bound) -> Self {
        self.vars.extend(other.vars);
        self
    }
}
