use crate::error::{Error, Result};

use super::Real;

/// Dense `(batch, channels, length)` array in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    data: Vec<T>,
    batch: usize,
    channels: usize,
    length: usize,
}

impl<T: Real> Tensor3<T> {
    pub fn zeros(batch: usize, channels: usize, length: usize) -> Self {
        Self {
            data: vec![T::zero(); batch * channels * length],
            batch,
            channels,
            length,
        }
    }

    pub fn from_vec(data: Vec<T>, batch: usize, channels: usize, length: usize) -> Result<Self> {
        if batch == 0 || channels == 0 || length == 0 {
            return Err(Error::Shape(format!(
                "tensor dimensions must be positive, got ({batch}, {channels}, {length})"
            )));
        }
        if data.len() != batch * channels * length {
            return Err(Error::Shape(format!(
                "data length {} does not match shape ({batch}, {channels}, {length})",
                data.len()
            )));
        }
        Ok(Self {
            data,
            batch,
            channels,
            length,
        })
    }

    /// Single-channel batch from equal-length rows given in `f64`.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let length = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != length) {
            return Err(Error::Shape("rows differ in length".into()));
        }
        let data = rows.iter().flat_map(|r| r.iter().map(|&v| T::from_f64(v))).collect();
        Self::from_vec(data, rows.len(), 1, length)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.channels, self.length)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
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

    /// Elements per batch item (`channels · length`).
    pub fn sample_len(&self) -> usize {
        self.channels * self.length
    }

    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.sample_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn at(&self, b: usize, c: usize, i: usize) -> T {
        self.data[(b * self.channels + c) * self.length + i]
    }

    /// Same data viewed as `(batch, channels·length, 1)`.
    pub fn flattened(mut self) -> Self {
        self.channels *= self.length;
        self.length = 1;
        self
    }

    pub fn reshaped(mut self, channels: usize, length: usize) -> Result<Self> {
        if channels * length != self.sample_len() {
            return Err(Error::Shape(format!(
                "cannot view {} elements per sample as ({channels}, {length})",
                self.sample_len()
            )));
        }
        self.channels = channels;
        self.length = length;
        Ok(self)
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Numeric(format!("{what}: element {i} is {:?}", self.data[i]))),
            None => Ok(()),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor3<U> {
        Tensor3 {
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            batch: self.batch,
            channels: self.channels,
            length: self.length,
        }
    }
}
