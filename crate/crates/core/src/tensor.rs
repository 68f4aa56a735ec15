//! Dense row-major `f32` tensors.

use crate::error::{Error, Result};

/// Row-major dense tensor; the outermost dimension varies slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!("dims must be >= 1, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n]).expect("zeros: invalid shape")
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        let n = data.len().max(1);
        let mut data = data;
        data.resize(n, 0.0);
        Self {
            shape: vec![n],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sum(&self) -> f32 {
        self.data.iter().sum()
    }

    /// Same data viewed under a new shape with equal element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Reorders a `[c, h, w]` tensor into `[h, w, c]`.
    pub fn chw_to_hwc(&self) -> Result<Self> {
        let (c, h, w) = self.dims3()?;
        let mut out = vec![0.0; self.data.len()];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[(y * w + x) * c + ch] = self.data[(ch * h + y) * w + x];
                }
            }
        }
        Self::new(vec![h, w, c], out)
    }

    /// Reorders a `[h, w, c]` tensor into `[c, h, w]`.
    pub fn hwc_to_chw(&self) -> Result<Self> {
        let (h, w, c) = self.dims3()?;
        let mut out = vec![0.0; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[(ch * h + y) * w + x] = self.data[(y * w + x) * c + ch];
                }
            }
        }
        Self::new(vec![c, h, w], out)
    }

    pub(crate) fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::Shape(format!(
                "expected a rank-3 tensor, got {:?}",
                self.shape
            ))),
        }
    }
}

/// Scales a u8 `[h, w, c]` state into the network's `[c, h, w]` input layout.
pub fn state_to_input(state: &[u8], (h, w, c): (usize, usize, usize)) -> Result<Tensor> {
    if state.len() != h * w * c {
        return Err(Error::Shape(format!(
            "state has {} bytes, expected {h}x{w}x{c}",
            state.len()
        )));
    }
    let data = state.iter().map(|&v| f32::from(v) / 255.0).collect();
    Tensor::new(vec![h, w, c], data)?.hwc_to_chw()
}
