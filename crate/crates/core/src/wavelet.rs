//! Orthonormal separable 3D Daubechies-6 wavelet transform with periodic
//! boundaries.
//!
//! Coefficients use the usual nested (Mallat) layout: after each level the
//! low-pass half of every transformed axis sits at the start of that axis,
//! and the next level recurses into that corner. Axes of length 1 are left
//! untouched, which lets the same code serve 1D and 2D grids.

use crate::error::{Error, Result};
use crate::par;
use crate::volume::{Scalar, Shape, Volume};

/// Daubechies-6 scaling filter (12 taps, `sum h = sqrt(2)`).
pub const DB6_LOW: [f64; 12] = [
    0.111_540_743_350_109_47,
    0.494_623_890_398_453_06,
    0.751_133_908_021_095_4,
    0.315_250_351_709_197_63,
    -0.226_264_693_965_439_83,
    -0.129_766_867_567_261_94,
    0.097_501_605_587_323_04,
    0.027_522_865_530_305_727,
    -0.031_582_039_317_486_03,
    0.000_553_842_201_161_496_1,
    0.004_777_257_510_945_511,
    -0.001_077_301_085_308_479_6,
];

pub const DEFAULT_LEVELS: usize = 3;

/// Quadrature-mirror wavelet filter `g[j] = (-1)^j h[L-1-j]`.
pub fn db6_high() -> [f64; 12] {
    let mut g = [0.0; 12];
    for (j, gj) in g.iter_mut().enumerate() {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        *gj = sign * DB6_LOW[11 - j];
    }
    g
}

/// A planned multilevel transform for one grid shape.
#[derive(Debug, Clone)]
pub struct Dwt3 {
    shape: Shape,
    levels: usize,
    high: [f64; 12],
}

impl Dwt3 {
    pub fn new(shape: Shape, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::invalid("wavelet levels must be at least 1"));
        }
        let div = 1usize << levels;
        for n in shape.as_array() {
            if n > 1 && n % div != 0 {
                return Err(Error::ShapeMismatch(format!(
                    "axis length {n} of {shape} is not divisible by 2^{levels}"
                )));
            }
        }
        if shape.len() == 1 {
            return Err(Error::ShapeMismatch("a 1x1x1 grid has no wavelet axes".into()));
        }
        Ok(Self { shape, levels, high: db6_high() })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    fn extents(&self, level: usize) -> [usize; 3] {
        self.shape.as_array().map(|n| if n > 1 { n >> level } else { 1 })
    }

    pub fn forward_in_place<T: Scalar>(&self, data: &mut [T]) {
        assert_eq!(data.len(), self.shape.len());
        for level in 0..self.levels {
            let ext = self.extents(level);
            for axis in 0..3 {
                if ext[axis] > 1 {
                    self.transform_axis(data, ext, axis, true);
                }
            }
        }
    }

    pub fn inverse_in_place<T: Scalar>(&self, data: &mut [T]) {
        assert_eq!(data.len(), self.shape.len());
        for level in (0..self.levels).rev() {
            let ext = self.extents(level);
            for axis in (0..3).rev() {
                if ext[axis] > 1 {
                    self.transform_axis(data, ext, axis, false);
                }
            }
        }
    }

    pub fn forward<T: Scalar>(&self, v: &[T]) -> Vec<T> {
        let mut out = v.to_vec();
        self.forward_in_place(&mut out);
        out
    }

    pub fn inverse<T: Scalar>(&self, c: &[T]) -> Vec<T> {
        let mut out = c.to_vec();
        self.inverse_in_place(&mut out);
        out
    }

    fn transform_axis<T: Scalar>(&self, data: &mut [T], ext: [usize; 3], axis: usize, forward: bool) {
        let Shape { nx, ny, .. } = self.shape;
        let n = ext[axis];
        let stride = [1, nx, nx * ny][axis];
        let run = |line: &mut [T], buf: &mut [T]| {
            if forward {
                analysis(line, buf, &DB6_LOW, &self.high);
            } else {
                synthesis(line, buf, &DB6_LOW, &self.high);
            }
        };
        match axis {
            0 | 1 => {
                // lines stay inside one z slab
                par::for_each_chunk_mut(data, nx * ny, |z, slab| {
                    if z >= ext[2] {
                        return;
                    }
                    let mut line = vec![T::default(); n];
                    let mut buf = vec![T::default(); n];
                    let (outer, inner_stride) = if axis == 0 { (ext[1], nx) } else { (ext[0], 1) };
                    for o in 0..outer {
                        let base = o * inner_stride;
                        for (i, l) in line.iter_mut().enumerate() {
                            *l = slab[base + i * stride];
                        }
                        run(&mut line, &mut buf);
                        for (i, l) in line.iter().enumerate() {
                            slab[base + i * stride] = *l;
                        }
                    }
                });
            }
            _ => {
                let cols: Vec<usize> = (0..ext[1])
                    .flat_map(|y| (0..ext[0]).map(move |x| x + nx * y))
                    .collect();
                let data_ref: &[T] = data;
                let lines: Vec<Vec<T>> = par::map_jobs(&cols, |&c| {
                    let mut line: Vec<T> = (0..n).map(|i| data_ref[c + i * stride]).collect();
                    let mut buf = vec![T::default(); n];
                    run(&mut line, &mut buf);
                    line
                });
                for (c, line) in cols.iter().zip(lines) {
                    for (i, v) in line.into_iter().enumerate() {
                        data[c + i * stride] = v;
                    }
                }
            }
        }
    }
}

/// One analysis step: `line` becomes `[approx.., detail..]`.
fn analysis<T: Scalar>(line: &mut [T], buf: &mut [T], low: &[f64], high: &[f64]) {
    let n = line.len();
    let half = n / 2;
    for k in 0..half {
        let mut a = T::default();
        let mut d = T::default();
        for (j, (&h, &g)) in low.iter().zip(high).enumerate() {
            let x = line[(2 * k + j) % n];
            a += x * h;
            d += x * g;
        }
        buf[k] = a;
        buf[half + k] = d;
    }
    line.copy_from_slice(&buf[..n]);
}

/// Exact adjoint (and inverse) of [`analysis`].
fn synthesis<T: Scalar>(line: &mut [T], buf: &mut [T], low: &[f64], high: &[f64]) {
    let n = line.len();
    let half = n / 2;
    buf.iter_mut().for_each(|b| *b = T::default());
    for k in 0..half {
        let a = line[k];
        let d = line[half + k];
        for (j, (&h, &g)) in low.iter().zip(high).enumerate() {
            buf[(2 * k + j) % n] += a * h + d * g;
        }
    }
    line.copy_from_slice(&buf[..n]);
}

/// Forward DWT of a volume (`H v`).
pub fn dwt_forward<T: Scalar>(v: &Volume<T>, levels: usize) -> Result<Volume<T>> {
    let dwt = Dwt3::new(v.shape(), levels)?;
    Volume::from_vec(v.shape(), dwt.forward(v.data()))
}

/// Inverse DWT of a coefficient volume (`H^-1 c`).
pub fn dwt_inverse<T: Scalar>(c: &Volume<T>, levels: usize) -> Result<Volume<T>> {
    let dwt = Dwt3::new(c.shape(), levels)?;
    Volume::from_vec(c.shape(), dwt.inverse(c.data()))
}

/// Keeps the `fraction` largest-magnitude coefficients and zeroes the rest.
pub fn keep_largest<T: Scalar>(coeffs: &[T], fraction: f64) -> Vec<T> {
    let keep = ((coeffs.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    let mut order: Vec<usize> = (0..coeffs.len()).collect();
    order.sort_by(|&a, &b| coeffs[b].norm_sqr().total_cmp(&coeffs[a].norm_sqr()).then(a.cmp(&b)));
    let mut out = vec![T::default(); coeffs.len()];
    for &i in &order[..keep] {
        out[i] = coeffs[i];
    }
    out
}
