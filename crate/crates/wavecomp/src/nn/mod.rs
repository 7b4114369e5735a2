//! Dense f64 tensor engine with exactly the layers the document classifier
//! needs: same-padded 3x3-style convolution, ReLU, 2x2 max pooling, inverted
//! dropout, fully connected, softmax, the per-class binary cross-entropy
//! loss, and Adam.
//!
//! Every reduction runs in a fixed order per output element, so results are
//! bit-identical regardless of how many worker threads are active.

mod adam;
mod ops;
mod pool;

pub use adam::{adam_step, AdamParams, OptimState};
pub use ops::{
    conv2d_backward, conv2d_backward_params, conv2d_forward, cross_entropy, cross_entropy_softmax_grad, dense_backward,
    dense_forward, dropout_backward, dropout_forward, maxpool2x2_backward, maxpool2x2_forward,
    relu_backward, relu_forward, softmax, DropoutMask, PoolCache,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tensor holds a non-finite value")]
    NonFinite,
}

/// N-dimensional array of f64 values, row-major. Storage above a size
/// threshold is recycled through an internal pool when tensors drop.
#[derive(Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Drop for Tensor {
    fn drop(&mut self) {
        pool::give_back(std::mem::take(&mut self.data));
    }
}

impl Clone for Tensor {
    fn clone(&self) -> Tensor {
        let mut data = pool::take_zeroed(self.data.len());
        data.copy_from_slice(&self.data);
        Tensor { shape: self.shape.clone(), data }
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor { shape: shape.to_vec(), data: pool::take_zeroed(shape.iter().product()) }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor, NnError> {
        let need: usize = shape.iter().product();
        if data.len() != need {
            return Err(NnError::ShapeMismatch(format!(
                "{} values for shape {shape:?} (need {need})",
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Tensor, NnError> {
        let need: usize = shape.iter().product();
        if need != self.data.len() {
            return Err(NnError::ShapeMismatch(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }
}
