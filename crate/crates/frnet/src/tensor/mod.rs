//! Dense row-major real and complex tensors.
//!
//! These are the value types every other module consumes: feature maps and
//! weights are [`Tensor`], frequency-domain quantities are [`ComplexTensor`].
//! There is no broadcasting; every shape mismatch is an error.

mod io;

pub use io::{read_tensor, write_tensor, Dtype, TENSOR_MAGIC};

use crate::error::{Error, Result};

/// Dense n-dimensional array of f64 values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Dense complex tensor stored as separate real and imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("empty shape".into()));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidShape(format!("zero dimension in {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        })
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Tensor> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn ones(shape: &[usize]) -> Result<Tensor> {
        Tensor::full(shape, 1.0)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> Result<f64> {
        if !self.is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "expected scalar, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Row-major strides for the current shape.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::InvalidArgument(format!(
                "index rank {} vs tensor rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut off = 0;
        let mut stride = 1;
        for i in (0..self.shape.len()).rev() {
            if index[i] >= self.shape[i] {
                return Err(Error::InvalidArgument(format!(
                    "index {index:?} out of bounds for shape {:?}",
                    self.shape
                )));
            }
            off += index[i] * stride;
            stride *= self.shape[i];
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elements) to {shape:?} ({n} elements)",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|x| x * c)
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a * b)
    }

    /// Accumulate `other` into self elementwise.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// Zero-pad a 2D tensor into the top-left corner of a larger one.
    pub fn pad2d_zero(&self, target_h: usize, target_w: usize) -> Result<Tensor> {
        let [h, w] = self.dims2()?;
        if target_h < h || target_w < w {
            return Err(Error::InvalidArgument(format!(
                "pad target {target_h}x{target_w} smaller than source {h}x{w}"
            )));
        }
        let mut out = Tensor::zeros(&[target_h, target_w])?;
        for i in 0..h {
            out.data[i * target_w..i * target_w + w].copy_from_slice(&self.data[i * w..(i + 1) * w]);
        }
        Ok(out)
    }

    /// Top-left h×w crop of a 2D tensor.
    pub fn crop2d(&self, h: usize, w: usize) -> Result<Tensor> {
        let [sh, sw] = self.dims2()?;
        if h > sh || w > sw {
            return Err(Error::InvalidArgument(format!(
                "crop {h}x{w} larger than source {sh}x{sw}"
            )));
        }
        let mut out = Tensor::zeros(&[h, w])?;
        for i in 0..h {
            out.data[i * w..(i + 1) * w].copy_from_slice(&self.data[i * sw..i * sw + w]);
        }
        Ok(out)
    }

    /// Stack two [c,h,w] tensors along the channel axis.
    pub fn concat_channels(&self, other: &Tensor) -> Result<Tensor> {
        let [c1, h, w] = self.dims3()?;
        let [c2, h2, w2] = other.dims3()?;
        if h != h2 || w != w2 {
            return Err(Error::ShapeMismatch(format!(
                "spatial dims {h}x{w} vs {h2}x{w2}"
            )));
        }
        let mut data = Vec::with_capacity((c1 + c2) * h * w);
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Tensor {
            shape: vec![c1 + c2, h, w],
            data,
        })
    }

    /// Channels [start, end) of a [c,h,w] tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor> {
        let [c, h, w] = self.dims3()?;
        if start >= end || end > c {
            return Err(Error::InvalidArgument(format!(
                "channel slice {start}..{end} out of range 0..{c}"
            )));
        }
        Ok(Tensor {
            shape: vec![end - start, h, w],
            data: self.data[start * h * w..end * h * w].to_vec(),
        })
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let [m, k] = self.dims2()?;
        let [k2, n] = other.dims2()?;
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul inner dims {k} vs {k2}"
            )));
        }
        let mut out = Tensor::zeros(&[m, n])?;
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                let row = &other.data[p * n..(p + 1) * n];
                let dst = &mut out.data[i * n..(i + 1) * n];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn dims2(&self) -> Result<[usize; 2]> {
        match self.shape[..] {
            [h, w] => Ok([h, w]),
            _ => Err(Error::ShapeMismatch(format!(
                "expected rank 2, got {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims3(&self) -> Result<[usize; 3]> {
        match self.shape[..] {
            [c, h, w] => Ok([c, h, w]),
            _ => Err(Error::ShapeMismatch(format!(
                "expected rank 3, got {:?}",
                self.shape
            ))),
        }
    }
}

impl ComplexTensor {
    pub fn zeros(shape: &[usize]) -> Result<ComplexTensor> {
        let n = check_shape(shape)?;
        Ok(ComplexTensor {
            shape: shape.to_vec(),
            re: vec![0.0; n],
            im: vec![0.0; n],
        })
    }

    pub fn from_parts(shape: &[usize], re: Vec<f64>, im: Vec<f64>) -> Result<ComplexTensor> {
        let n = check_shape(shape)?;
        if re.len() != n || im.len() != n {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} needs {n} elements, got re={} im={}",
                re.len(),
                im.len()
            )));
        }
        Ok(ComplexTensor {
            shape: shape.to_vec(),
            re,
            im,
        })
    }

    /// Promote a real tensor: imaginary part all zero.
    pub fn from_real(t: &Tensor) -> ComplexTensor {
        ComplexTensor {
            shape: t.shape.to_vec(),
            re: t.data.clone(),
            im: vec![0.0; t.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// Real part as a tensor, imaginary part discarded.
    pub fn real(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.re.clone(),
        }
    }

    pub fn conj(&self) -> ComplexTensor {
        ComplexTensor {
            shape: self.shape.clone(),
            re: self.re.clone(),
            im: self.im.iter().map(|&x| -x).collect(),
        }
    }

    /// Elementwise complex product.
    pub fn hadamard(&self, other: &ComplexTensor) -> Result<ComplexTensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let n = self.re.len();
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for i in 0..n {
            re[i] = self.re[i] * other.re[i] - self.im[i] * other.im[i];
            im[i] = self.re[i] * other.im[i] + self.im[i] * other.re[i];
        }
        Ok(ComplexTensor {
            shape: self.shape.clone(),
            re,
            im,
        })
    }
}
