//! Dense 3D volumes and echo series.
//!
//! Storage is row-major with the readout axis `x` fastest:
//! `index = x + nx * (y + ny * z)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid dimensions `(nx, ny, nz)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Shape {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::invalid(format!("shape must be positive, got {nx}x{ny}x{nz}")));
        }
        Ok(Self { nx, ny, nz })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    /// Inverse of [`Shape::index`].
    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.nx;
        let yz = i / self.nx;
        (x, yz % self.ny, yz / self.ny)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Element types a [`Volume`] can hold.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + Default
    + PartialEq
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<f64, Output = Self>
    + std::ops::AddAssign
    + 'static
{
    const DTYPE: Dtype;
    fn norm_sqr(self) -> f64;
    fn is_finite(self) -> bool;
    fn to_complex(self) -> Complex64;
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::Real32;
    fn norm_sqr(self) -> f64 {
        self * self
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn to_complex(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
}

impl Scalar for Complex64 {
    const DTYPE: Dtype = Dtype::Complex64;
    fn norm_sqr(self) -> f64 {
        Complex64::norm_sqr(&self)
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
    fn to_complex(self) -> Complex64 {
        self
    }
}

/// On-disk element type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "real32")]
    Real32,
    #[serde(rename = "complex64")]
    Complex64,
}

impl Dtype {
    pub fn tag(self) -> &'static str {
        match self {
            Dtype::Real32 => "real32",
            Dtype::Complex64 => "complex64",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "real32" => Ok(Dtype::Real32),
            "complex64" => Ok(Dtype::Complex64),
            other => Err(Error::UnknownDtype(other.to_string())),
        }
    }

    /// Bytes per element on disk.
    pub fn element_bytes(self) -> usize {
        match self {
            Dtype::Real32 => 4,
            Dtype::Complex64 => 8,
        }
    }
}

/// A dense scalar field on a 3D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    shape: Shape,
    data: Vec<T>,
}

pub type RealVolume = Volume<f64>;
pub type ComplexVolume = Volume<Complex64>;

impl<T: Scalar> Volume<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: vec![T::default(); shape.len()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: Shape, f: impl Fn(usize, usize, usize) -> T) -> Self {
        let data = (0..shape.len())
            .map(|i| {
                let (x, y, z) = shape.coords(i);
                f(x, y, z)
            })
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.shape.index(x, y, z)]
    }

    pub fn norm(&self) -> f64 {
        crate::par::sum_map(&self.data, |v| v.norm_sqr()).sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn to_complex(&self) -> ComplexVolume {
        self.map(|v| v.to_complex())
    }
}

impl ComplexVolume {
    pub fn magnitude(&self) -> RealVolume {
        self.map(|v| v.norm())
    }
}

/// Per-echo volumes with their echo times in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoSeries<T> {
    echoes: Vec<Volume<T>>,
    times_ms: Vec<f64>,
}

impl<T: Scalar> EchoSeries<T> {
    pub fn new(echoes: Vec<Volume<T>>, times_ms: Vec<f64>) -> Result<Self> {
        if echoes.is_empty() {
            return Err(Error::invalid("echo series must contain at least one echo"));
        }
        if echoes.len() != times_ms.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} echoes but {} echo times",
                echoes.len(),
                times_ms.len()
            )));
        }
        validate_echo_times(&times_ms)?;
        let shape = echoes[0].shape();
        if echoes.iter().any(|e| e.shape() != shape) {
            return Err(Error::ShapeMismatch("echo volumes differ in shape".into()));
        }
        Ok(Self { echoes, times_ms })
    }

    pub fn echoes(&self) -> &[Volume<T>] {
        &self.echoes
    }

    pub fn times_ms(&self) -> &[f64] {
        &self.times_ms
    }

    pub fn shape(&self) -> Shape {
        self.echoes[0].shape()
    }

    pub fn len(&self) -> usize {
        self.echoes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.echoes.is_empty()
    }

    pub fn into_parts(self) -> (Vec<Volume<T>>, Vec<f64>) {
        (self.echoes, self.times_ms)
    }
}

/// Echo times must be positive and strictly increasing.
pub fn validate_echo_times(times_ms: &[f64]) -> Result<()> {
    if times_ms.is_empty() {
        return Err(Error::invalid("no echo times"));
    }
    if !times_ms.iter().all(|t| t.is_finite() && *t > 0.0) {
        return Err(Error::invalid("echo times must be positive and finite"));
    }
    if times_ms.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("echo times must be strictly increasing"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_and_coords_are_inverse() {
        let s = Shape::new(3, 4, 5).unwrap();
        for i in 0..s.len() {
            let (x, y, z) = s.coords(i);
            assert_eq!(s.index(x, y, z), i);
        }
        assert_eq!(s.index(1, 0, 0), 1);
        assert_eq!(s.index(0, 1, 0), 3);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        let s = Shape::new(2, 2, 1).unwrap();
        assert!(RealVolume::from_vec(s, vec![1.0; 3]).is_err());
        assert!(Shape::new(0, 1, 1).is_err());
    }

    #[test]
    fn echo_series_validates_times_and_shapes() {
        let s = Shape::new(2, 2, 1).unwrap();
        let v = RealVolume::zeros(s);
        assert!(EchoSeries::new(vec![v.clone(), v.clone()], vec![1.0, 2.0]).is_ok());
        assert!(EchoSeries::new(vec![v.clone(), v.clone()], vec![2.0, 2.0]).is_err());
        assert!(EchoSeries::new(vec![v.clone()], vec![-1.0]).is_err());
        let other = RealVolume::zeros(Shape::new(1, 2, 2).unwrap());
        assert!(EchoSeries::new(vec![v, other], vec![1.0, 2.0]).is_err());
    }
}
