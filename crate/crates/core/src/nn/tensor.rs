use crate::error::{Error, Result};

/// Dense 4-D array in `(batch, channels, rows, cols)` order.
///
/// Also used for convolution kernels, where the axes are read as
/// `(out, in, kh, kw)` for convolutions and `(in, out, kh, kw)` for
/// transposed convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!("{} values for shape {:?}", data.len(), shape)));
        }
        Ok(Self { shape, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn rows(&self) -> usize {
        self.shape[2]
    }

    pub fn cols(&self) -> usize {
        self.shape[3]
    }

    /// Number of values in one batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn item(&self, n: usize) -> &[f64] {
        let l = self.item_len();
        &self.data[n * l..(n + 1) * l]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f64] {
        let l = self.item_len();
        &mut self.data[n * l..(n + 1) * l]
    }

    pub fn at(&self, n: usize, c: usize, r: usize, col: usize) -> f64 {
        let [_, cs, rs, ws] = self.shape;
        self.data[((n * cs + c) * rs + r) * ws + col]
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack equally-shaped single items into one batch.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::EmptyInput("nothing to stack".into()))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(Error::Shape(format!("cannot stack {:?} with {:?}", t.shape, first.shape)));
            }
            data.extend_from_slice(&t.data);
        }
        let batch = items.iter().map(|t| t.shape[0]).sum();
        Ok(Tensor { shape: [batch, c, h, w], data })
    }
}
