//! Dense `f64` tensors and a reverse-mode autodiff tape.
//!
//! [`Tensor`] is plain storage: a shape, row-major data, and a gradient
//! buffer of the same size. Differentiable computation happens on a
//! [`Tape`](tape::Tape): each forward call records a node, and
//! [`Tape::backward`](tape::Tape::backward) walks the nodes once in reverse
//! insertion order. Tapes are rebuilt per step (define-by-run); parameters
//! live outside the tape as `Tensor`s and are leased in as leaves.
//!
//! Every completed operation checks its output for NaN/infinity and fails
//! fast naming the producing op.

pub mod adam;
pub mod rng;
pub mod tape;

pub use adam::Adam;
pub use rng::Rng;
pub use tape::{stable_softmax, Tape, Var};

use crate::error::{Error, Result};

/// Shape + row-major data + gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::contract(format!(
                "tensor shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            grad: vec![0.0; n],
            data,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            grad: vec![0.0],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Fails if any data entry is NaN or infinite; `what` names the source.
    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op: what })
        }
    }
}
