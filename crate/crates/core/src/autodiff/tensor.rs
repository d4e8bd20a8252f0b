use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

use super::AutodiffError;

/// Scalar type the engine computes in. Training runs in `f32`; `f64` exists
/// for gradient verification.
pub trait Real:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Default + Debug + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self, AutodiffError> {
        let expected: usize = dims.iter().product();
        if dims.is_empty() || dims.contains(&0) || expected != data.len() {
            return Err(AutodiffError::Shape(format!(
                "dims {:?} do not describe {} values",
                dims,
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(dims: &[usize], value: T) -> Self {
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Self {
            dims: vec![data.len()],
            data,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    pub fn reshape(mut self, dims: Vec<usize>) -> Result<Self, AutodiffError> {
        if dims.iter().product::<usize>() != self.data.len() {
            return Err(AutodiffError::Shape(format!(
                "cannot reshape {:?} to {:?}",
                self.dims, dims
            )));
        }
        self.dims = dims;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}
