use rand::Rng;

use crate::{Result, TensorError};

/// Dense rank-1 or rank-2 array of f64 with an optional gradient slot.
///
/// Data is row-major. `product(shape) == data.len()` always holds; the
/// gradient, when present, has the same length as the data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor from raw data, checking the shape/length invariant.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(TensorError::shape(
                "from_vec",
                format!("rank must be 1 or 2, got shape {shape:?}"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::shape(
                "from_vec",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// Rank-2 tensor with explicit dimensions.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::from_vec(data, &[rows, cols])
    }

    /// Rank-1 tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::from_vec(data, &[n]).expect("vector shape is always consistent")
    }

    /// Single-element rank-1 tensor.
    pub fn scalar(value: f64) -> Self {
        Tensor::vector(vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(vec![0.0; numel], shape)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(vec![value; numel], shape)
    }

    /// Uniform samples in `[lo, hi)` drawn from the caller's generator.
    pub fn uniform<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Result<Self> {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::from_vec(data, shape)
    }

    /// Marks the tensor as a differentiation target.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows of a rank-2 tensor; a rank-1 tensor is treated as a single row.
    pub fn rows(&self) -> usize {
        if self.rank() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Columns of a rank-2 tensor, or the length of a rank-1 tensor.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Row `i` of a rank-2 tensor as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
