//! Forward-pass records consumed in reverse by the backward passes.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Identifies one layer instance within a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayerId(pub usize);

/// Activations or statistics a layer keeps for its backward pass.
#[derive(Clone, Debug)]
pub enum Saved<T> {
    Conv {
        input: Tensor4<T>,
    },
    BnTrain {
        xhat: Tensor4<T>,
        inv_std: Vec<T>,
    },
    BnEval {
        xhat: Tensor4<T>,
        inv_std: Vec<T>,
    },
    Relu {
        input: Tensor4<T>,
    },
    /// Linear, parameter-free steps (DWT, IWT, pooling, skip adds).
    Marker,
}

impl<T> Saved<T> {
    fn kind(&self) -> &'static str {
        match self {
            Saved::Conv { .. } => "conv",
            Saved::BnTrain { .. } | Saved::BnEval { .. } => "bn",
            Saved::Relu { .. } => "relu",
            Saved::Marker => "marker",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Record<T> {
    pub layer: LayerId,
    pub saved: Saved<T>,
}

/// Stack of forward records. Backward must pop them in exact reverse order;
/// popping a record for the wrong layer or kind is an error.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    records: Vec<Record<T>>,
}

impl<T> Tape<T> {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, layer: LayerId, saved: Saved<T>) {
        self.records.push(Record { layer, saved });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    /// Pops the newest record, checking it belongs to `layer` and has the
    /// expected kind.
    pub fn pop(&mut self, layer: LayerId, kind: &'static str) -> Result<Saved<T>> {
        let rec = self.records.pop().ok_or_else(|| {
            Error::Tape(format!(
                "underflow: expected {kind} record for layer {}",
                layer.0
            ))
        })?;
        if rec.layer != layer || rec.saved.kind() != kind {
            return Err(Error::Tape(format!(
                "expected {kind} record for layer {}, found {} record for layer {}",
                layer.0,
                rec.saved.kind(),
                rec.layer.0
            )));
        }
        Ok(rec.saved)
    }
}
