//! Dense f32 tensors, RGB images, and the handful of kernels the generator
//! is built from.

pub(crate) mod kernels;
mod png;
mod simd;

pub use self::kernels::{
    conv2d_modulated, conv2d_modulated_nodemod, demodulation_divisors, downsample2x, leaky_relu,
    leaky_relu_inplace, upsample2x, ModulatedConv, DEMOD_EPSILON, LRELU_GAIN, LRELU_SLOPE,
};
pub use self::png::{decode_png, decode_png_bytes, encode_png, encode_png_bytes, RgbRaster};

use crate::error::{Error, Result};

/// Row-major dense tensor. Rank ≥ 1, every dim ≥ 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Shape("tensor rank must be at least 1".into()));
        }
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dim in {dims:?}")));
        }
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let numel = dims.iter().product();
        Tensor::new(dims, vec![0.0; numel])
    }

    pub fn filled(dims: Vec<usize>, value: f32) -> Result<Self> {
        let numel = dims.iter().product();
        Tensor::new(dims, vec![value; numel])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Equality of dims and of every value's bit pattern (distinguishes
    /// `-0.0` from `0.0`, compares NaN payloads).
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.dims == other.dims
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub(crate) fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::Shape(format!(
                "{what}: expected rank {rank}, got dims {:?}",
                self.dims
            )));
        }
        Ok(())
    }
}

/// Square RGB image stored channel-major `[3, size, size]`, nominal range
/// [-1, 1]. `size` is a power of two.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    size: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(size: usize, data: Vec<f32>) -> Result<Self> {
        if !size.is_power_of_two() {
            return Err(Error::Shape(format!(
                "image side {size} is not a power of two"
            )));
        }
        if data.len() != 3 * size * size {
            return Err(Error::Shape(format!(
                "{size}x{size} RGB image needs {} values, got {}",
                3 * size * size,
                data.len()
            )));
        }
        Ok(Image { size, data })
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match *t.dims() {
            [3, h, w] if h == w => Image::new(h, t.into_data()),
            _ => Err(Error::Shape(format!(
                "expected [3, R, R] image tensor, got {:?}",
                t.dims()
            ))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![3, self.size, self.size],
            data: self.data.clone(),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, channel: usize, y: usize, x: usize) -> f32 {
        self.data[(channel * self.size + y) * self.size + x]
    }

    /// Mean squared error over all pixels and channels, accumulated in f64.
    pub fn mse(&self, other: &Image) -> Result<f64> {
        if self.size != other.size {
            return Err(Error::Shape(format!(
                "cannot compare {0}x{0} with {1}x{1}",
                self.size, other.size
            )));
        }
        Ok(mse_slices(&self.data, &other.data))
    }

    pub fn bit_eq(&self, other: &Image) -> bool {
        self.size == other.size
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub(crate) fn mse_slices(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    sum / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn bit_eq_sees_signed_zero() {
        let a = Tensor::new(vec![1], vec![0.0]).unwrap();
        let b = Tensor::new(vec![1], vec![-0.0]).unwrap();
        assert_eq!(a, b);
        assert!(!a.bit_eq(&b));
    }

    #[test]
    fn image_must_be_square_power_of_two() {
        assert!(Image::new(6, vec![0.0; 108]).is_err());
        assert!(Image::new(4, vec![0.0; 47]).is_err());
        let t = Tensor::zeros(vec![3, 4, 8]).unwrap();
        assert!(Image::from_tensor(t).is_err());
        let img = Image::from_tensor(Tensor::zeros(vec![3, 8, 8]).unwrap()).unwrap();
        assert_eq!(img.size(), 8);
    }

    #[test]
    fn mse_of_offset() {
        let a = Image::new(2, vec![0.0; 12]).unwrap();
        let b = Image::new(2, vec![0.5; 12]).unwrap();
        assert_eq!(a.mse(&b).unwrap(), 0.25);
    }
}
