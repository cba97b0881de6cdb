use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Dense `(batch, channels, height, width)` tensor in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 4], value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "{} values do not fill shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: [1, 1, 1, 1],
            data: vec![value],
        }
    }

    /// Single-plane tensor from a field.
    pub fn from_array(a: ArrayView2<f64>) -> Self {
        let (h, w) = a.dim();
        Self {
            shape: [1, 1, h, w],
            data: a.iter().copied().collect(),
        }
    }

    /// Stacks `n·c` planes in batch-major, channel-minor order.
    pub fn from_planes(n: usize, c: usize, planes: &[ArrayView2<f64>]) -> Result<Self> {
        if planes.len() != n * c || planes.is_empty() {
            return Err(Error::Shape(format!(
                "{} planes for {n}x{c} tensor",
                planes.len()
            )));
        }
        let (h, w) = planes[0].dim();
        if planes.iter().any(|p| p.dim() != (h, w)) {
            return Err(Error::Shape("planes differ in size".into()));
        }
        let mut data = Vec::with_capacity(n * c * h * w);
        for p in planes {
            data.extend(p.iter().copied());
        }
        Ok(Self {
            shape: [n, c, h, w],
            data,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let len = self.plane_len();
        let start = (n * self.shape[1] + c) * len;
        &self.data[start..start + len]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let len = self.plane_len();
        let start = (n * self.shape[1] + c) * len;
        &mut self.data[start..start + len]
    }

    pub fn plane_view(&self, n: usize, c: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.shape[2], self.shape[3]), self.plane(n, c))
            .expect("plane length matches shape")
    }

    pub fn plane_array(&self, n: usize, c: usize) -> Array2<f64> {
        self.plane_view(n, c).to_owned()
    }

    /// The value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::Shape(format!(
                "tensor of shape {:?} is not a scalar",
                self.shape
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}
