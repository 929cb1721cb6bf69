use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumCast};

use super::NumError;

/// Element type of a [`Tensor`]. Implemented for `f32` (training) and
/// `f64` (gradient verification).
pub trait Scalar: Float + NumCast + Debug + Display + Default + Sum + Send + Sync + 'static {
    fn of(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("f64 converts to every float type")
    }

    fn to_f64(self) -> f64 {
        <f64 as NumCast>::from(self).expect("float converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, NumError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(NumError::Shape {
                op: "tensor",
                detail: format!("shape {shape:?} must be a non-empty list of positive sizes"),
            });
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NumError::Shape {
                op: "tensor",
                detail: format!("shape {shape:?} holds {n} elements, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![T::zero(); n]).expect("zeros: valid shape")
    }

    pub fn vector(data: Vec<T>) -> Self {
        let n = data.len();
        Tensor::new(vec![n], data).expect("vector: non-empty data")
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, NumError> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn scalar(v: T) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self, NumError> {
        Tensor::new(shape.to_vec(), data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Leading dimension for matrices, 1 for vectors.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 1 {
            1
        } else {
            self.shape[0]
        }
    }

    /// Product of all trailing dimensions.
    pub fn cols(&self) -> usize {
        if self.shape.len() == 1 {
            self.shape[0]
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.to_f64())).collect(),
        }
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self, NumError> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}
