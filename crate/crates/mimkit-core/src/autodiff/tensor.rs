//! Dense row-major tensor.

use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Dense row-major tensor of `F` values.
///
/// Sequence activations use shape `[channels, batch, time]`, pooled
/// vectors `[channels, batch, 1]`, per-element values `[batch]`, and
/// scalars `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    /// Zero-filled tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::ZERO; n],
        }
    }

    /// Builds a tensor from raw row-major data.
    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Single-value tensor of shape `[1]`.
    pub fn scalar(x: F) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![x],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// The single value of a `[1]` tensor.
    pub fn item(&self) -> F {
        debug_assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Channels of a rank-3 sequence tensor.
    pub fn channels(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 3);
        self.shape[0]
    }

    /// Batch size of a rank-3 sequence tensor.
    pub fn batch(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 3);
        self.shape[1]
    }

    /// Time length of a rank-3 sequence tensor.
    pub fn time(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 3);
        self.shape[2]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Lossless precision change for moving tensors across `F` boundaries.
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::from_f64(v.to_f64())).collect(),
        }
    }

    /// Per-element view of one column block `b` of a rank-3 tensor,
    /// flattened over (channel, time).
    pub fn element_rows(&self, b: usize) -> impl Iterator<Item = &[F]> + '_ {
        debug_assert_eq!(self.shape.len(), 3);
        let (bs, t) = (self.shape[1], self.shape[2]);
        (0..self.shape[0]).map(move |c| {
            let start = (c * bs + b) * t;
            &self.data[start..start + t]
        })
    }
}
