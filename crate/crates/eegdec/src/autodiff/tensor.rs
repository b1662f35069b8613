use std::sync::Arc;

use crate::{Error, Result};

/// N-dimensional value block, row-major, cheap to clone (shared storage).
///
/// `grad` is populated by [`super::Tape::backward`] write-back for
/// parameter leaves (`requires_grad == true`).
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Dimension(format!("zero extent in shape {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        if cfg!(debug_assertions) && !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value in tensor of shape {shape:?}"
            )));
        }
        Ok(Self { shape, data: Arc::new(data), requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self::from_vec(shape, vec![0.0; numel]).expect("zeros: consistent by construction")
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(vec![1], vec![v]).expect("scalar")
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
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

    /// Shared handle to the underlying storage.
    pub fn storage(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    /// Mutable access, cloning the storage if it is shared.
    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Same data re-shaped to a flat vector.
    pub fn flattened(&self) -> Tensor {
        Tensor {
            shape: vec![self.numel()],
            data: Arc::clone(&self.data),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }
}
