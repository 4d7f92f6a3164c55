//! Named parameter storage shared by the three networks.
//!
//! Parameters live here as plain tensors; each forward pass binds them onto
//! a fresh tape as leaves (trainable or constant), and the optimizer pulls
//! gradients back out by index.

use crate::error::{Error, Result};
use crate::tensor::{Bound, GradTape, Tensor};
use sha2::{Digest, Sha256};

/// Stable handle to one named parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    /// Position inside the owning set (also the index into a [`Bound`]).
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(t.with_grad());
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensor_at(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn tensor_mut_at(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Replace the data of a named parameter; shape must match.
    pub fn set_by_name(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Data(format!("unknown parameter {name}")))?;
        if data.len() != self.tensors[idx].numel() {
            return Err(Error::Data(format!(
                "parameter {name}: expected {} values, got {}",
                self.tensors[idx].numel(),
                data.len()
            )));
        }
        let shape = self.tensors[idx].shape().to_vec();
        self.tensors[idx] = Tensor::new(shape, data)?.with_grad();
        Ok(())
    }

    /// Bind every parameter onto `tape`. With `trainable` the leaves carry
    /// `requires_grad`; otherwise they are constants gradients flow
    /// through but never into.
    pub fn bind(&self, tape: &mut GradTape, trainable: bool) -> Bound {
        let ids = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { ids }
    }

    /// SHA-256 over names, shapes and raw data bytes. Used to assert that a
    /// training step touched exactly the parameter sets it should.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            h.update([0u8]);
            for d in t.shape() {
                h.update(d.to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

impl Bound {
    pub fn id(&self, p: ParamId) -> crate::tensor::ValueId {
        self.ids[p.0]
    }
}
