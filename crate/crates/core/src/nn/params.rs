//! Named parameter tensors in a fixed flat order.

use serde::{Deserialize, Serialize};

use super::tensor::Scalar;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    /// Trained by the optimizer.
    Weight,
    /// Normalization running statistics, updated outside the optimizer.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: TensorKind,
    pub data: Vec<F>,
}

impl<F: Scalar> NamedTensor<F> {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered tensors of one network. Gradients use the same layout, with
/// buffers left at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<F> {
    tensors: Vec<NamedTensor<F>>,
}

impl<F: Scalar> ParameterSet<F> {
    pub(crate) fn from_tensors(tensors: Vec<NamedTensor<F>>) -> Self {
        Self { tensors }
    }

    pub fn tensors(&self) -> &[NamedTensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [NamedTensor<F>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor<F>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub(crate) fn data(&self, index: usize) -> &[F] {
        &self.tensors[index].data
    }

    pub(crate) fn data_mut(&mut self, index: usize) -> &mut Vec<F> {
        &mut self.tensors[index].data
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor { data: vec![F::zero(); t.data.len()], ..t.clone() })
                .collect(),
        }
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.tensors.iter().filter(|t| t.kind == TensorKind::Weight).map(|t| t.data.len()).sum()
    }

    /// Number of stored scalars, buffers included.
    pub fn total_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn flat_values(&self) -> impl Iterator<Item = F> + '_ {
        self.tensors.iter().flat_map(|t| t.data.iter().copied())
    }

    pub fn same_layout<G: Scalar>(&self, other: &ParameterSet<G>) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn check_layout<G: Scalar>(&self, other: &ParameterSet<G>) -> Result<(), NnError> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(NnError::ShapeMismatch("parameter layouts differ".into()))
        }
    }

    /// Elementwise precision conversion.
    pub fn cast<G: Scalar>(&self) -> ParameterSet<G> {
        ParameterSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    kind: t.kind,
                    data: t.data.iter().map(|v| G::from_f64(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    /// Overwrites all values from a flat sequence in layout order.
    pub fn load_flat(&mut self, values: &[F]) -> Result<(), NnError> {
        if values.len() != self.total_count() {
            return Err(NnError::ShapeMismatch(format!(
                "expected {} parameter values, got {}",
                self.total_count(),
                values.len()
            )));
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.data.len();
            t.data.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Little-endian bytes of every value as `f32`, in layout order.
    pub fn to_f32_bytes(&self) -> Vec<u8> {
        self.flat_values().flat_map(|v| (v.as_f64() as f32).to_le_bytes()).collect()
    }
}
