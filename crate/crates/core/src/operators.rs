//! Linear operators of the measurement and sparsity models.
//!
//! All operators act on flat complex vectors. Image-domain vectors use the
//! volume layout of [`crate::volume`]; wavelet-domain vectors use the
//! layout of [`crate::wavelet::Dwt3`]; k-space sample vectors are ordered
//! coil-major, then by selected phase-encode point, then readout `x`.
//! Stacked decay outputs are echo-major.

use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fft::Fft3;
use crate::par;
use crate::sampling::SamplingMask;
use crate::volume::{ComplexVolume, EchoSeries, RealVolume, Shape};
use crate::wavelet::Dwt3;

pub trait LinearOperator: Send + Sync {
    fn domain_len(&self) -> usize;
    fn range_len(&self) -> usize;
    fn apply(&self, x: &[Complex64]) -> Vec<Complex64>;
    fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64>;
}

impl<T: LinearOperator + ?Sized> LinearOperator for Arc<T> {
    fn domain_len(&self) -> usize {
        (**self).domain_len()
    }
    fn range_len(&self) -> usize {
        (**self).range_len()
    }
    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        (**self).apply(x)
    }
    fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        (**self).adjoint(y)
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn domain_len(&self) -> usize {
        (**self).domain_len()
    }
    fn range_len(&self) -> usize {
        (**self).range_len()
    }
    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        (**self).apply(x)
    }
    fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        (**self).adjoint(y)
    }
}

/// `<a, b> = sum conj(a_i) b_i`
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let re = par::sum_indexed(a.len(), |i| (a[i].conj() * b[i]).re);
    let im = par::sum_indexed(a.len(), |i| (a[i].conj() * b[i]).im);
    Complex64::new(re, im)
}

pub fn norm_sq(a: &[Complex64]) -> f64 {
    par::sum_map(a, |v| v.norm_sqr())
}

/// Relative adjoint mismatch `|<Au, w> - <u, A^H w>| / (|u| |A^H w| + 1)`.
pub fn dot_test(op: &dyn LinearOperator, u: &[Complex64], w: &[Complex64]) -> f64 {
    let au = op.apply(u);
    let ahw = op.adjoint(w);
    let lhs = inner(&au, w);
    let rhs = inner(u, &ahw);
    (lhs - rhs).norm() / (norm_sq(u).sqrt() * norm_sq(&ahw).sqrt() + 1.0)
}

/// Hutchinson estimate of `||A||_F^2`: the mean of `||A r||^2` over
/// `probes` i.i.d. circular complex Gaussian vectors with `E|r_n|^2 = 1`.
pub fn frobenius_sq_estimate(op: &dyn LinearOperator, probes: usize, seed: u64) -> f64 {
    let probes = probes.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vectors: Vec<Vec<Complex64>> = (0..probes)
        .map(|_| random_complex(&mut rng, op.domain_len(), 1.0))
        .collect();
    let norms = par::map_jobs(&vectors, |r| norm_sq(&op.apply(r)));
    norms.iter().sum::<f64>() / probes as f64
}

/// Number of Hutchinson probes used for cached operator norms.
pub const FROBENIUS_PROBES: usize = 32;
pub const FROBENIUS_SEED: u64 = 0x5eed_f20b;

/// Circular complex Gaussian samples with `E|z|^2 = variance`.
pub fn random_complex(rng: &mut ChaCha8Rng, n: usize, variance: f64) -> Vec<Complex64> {
    let s = (variance / 2.0).sqrt();
    (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re * s, im * s)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl LinearOperator for Identity {
    fn domain_len(&self) -> usize {
        self.0
    }
    fn range_len(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        x.to_vec()
    }
    fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        y.to_vec()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Zero {
    pub rows: usize,
    pub cols: usize,
}

impl LinearOperator for Zero {
    fn domain_len(&self) -> usize {
        self.cols
    }
    fn range_len(&self) -> usize {
        self.rows
    }
    fn apply(&self, _: &[Complex64]) -> Vec<Complex64> {
        vec![Complex64::default(); self.rows]
    }
    fn adjoint(&self, _: &[Complex64]) -> Vec<Complex64> {
        vec![Complex64::default(); self.cols]
    }
}

/// Explicit row-major matrix; used for small instances and test oracles.
#[derive(Debug, Clone)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!("{rows}x{cols} matrix needs {} entries", rows * cols)));
        }
        Ok(Self { rows, cols, data })
    }

    /// Materializes any operator column by column.
    pub fn from_operator(op: &dyn LinearOperator) -> Self {
        let (rows, cols) = (op.range_len(), op.domain_len());
        let mut data = vec![Complex64::default(); rows * cols];
        let mut e = vec![Complex64::default(); cols];
        for c in 0..cols {
            e[c] = Complex64::new(1.0, 0.0);
            let col = op.apply(&e);
            e[c] = Complex64::default();
            for r in 0..rows {
                data[r * cols + c] = col[r];
            }
        }
        Self { rows, cols, data }
    }

    pub fn at(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }
}

impl LinearOperator for DenseMatrix {
    fn domain_len(&self) -> usize {
        self.cols
    }
    fn range_len(&self) -> usize {
        self.rows
    }
    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self.at(r, c) * x[c]).sum())
            .collect()
    }
    fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self.at(r, c).conj() * y[r]).sum())
            .collect()
    }
}

/// Unitary 3D FFT as an operator.
#[derive(Debug, Clone)]
pub struct FourierOp(pub Fft3);

impl LinearOperator for FourierOp {
    fn domain_len(&self) -> usize {
        self.0.shape().len()
    }
    fn range_len(&self) -> usize {
        self.0.shape().len()
    }
    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut v = x.to_vec();
        self.0.forward(&mut v);
        v
    }
    fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        let mut v = y.to_vec();
        self.0.inverse(&mut v);
        v
    }
}

/// Inverse wavelet transform `H^-1`: wavelet coefficients to image.
#[derive(Debug, Clone)]
pub struct WaveletSynthesis(pub Dwt3);

impl LinearOperator for WaveletSynthesis {
    fn domain_len(&self) -> usize {
        self.0.shape().len()
    }
    fn range_len(&self) -> usize {
        self.0.shape().len()
    }
    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.0.inverse(x)
    }
    fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        self.0.forward(y)
    }
}

/// `outer * inner`
#[derive(Clone)]
pub struct Composed<A, B> {
    pub outer: A,
    pub inner: B,
}

impl<A: LinearOperator, B: LinearOperator> LinearOperator for Composed<A, B> {
    fn domain_len(&self) -> usize {
        self.inner.domain_len()
    }
    fn range_len(&self) -> usize {
        self.outer.range_len()
    }
    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.outer.apply(&self.inner.apply(x))
    }
    fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        self.inner.adjoint(&self.outer.adjoint(y))
    }
}

/// Receiver coil sensitivity maps (image domain).
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivitySet {
    coils: Vec<ComplexVolume>,
}

impl SensitivitySet {
    pub fn new(coils: Vec<ComplexVolume>) -> Result<Self> {
        let first = coils.first().ok_or_else(|| Error::invalid("at least one coil required"))?;
        let shape = first.shape();
        if coils.iter().any(|c| c.shape() != shape) {
            return Err(Error::ShapeMismatch("coil maps differ in shape".into()));
        }
        Ok(Self { coils })
    }

    /// A single coil with unit sensitivity everywhere.
    pub fn unit(shape: Shape) -> Self {
        let ones = ComplexVolume::from_vec(shape, vec![Complex64::new(1.0, 0.0); shape.len()]).unwrap();
        Self { coils: vec![ones] }
    }

    pub fn coils(&self) -> &[ComplexVolume] {
        &self.coils
    }

    pub fn len(&self) -> usize {
        self.coils.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coils.is_empty()
    }

    pub fn shape(&self) -> Shape {
        self.coils[0].shape()
    }

    /// Root-sum-of-squares magnitude per voxel.
    pub fn rss(&self) -> RealVolume {
        let shape = self.shape();
        let data = (0..shape.len())
            .map(|i| self.coils.iter().map(|c| c.data()[i].norm_sqr()).sum::<f64>().sqrt())
            .collect();
        RealVolume::from_vec(shape, data).unwrap()
    }
}

/// `A = P F S`: coil weighting, unitary FFT and k-space sample selection.
#[derive(Debug, Clone)]
pub struct EncodingOperator {
    shape: Shape,
    fft: Fft3,
    sens: Arc<SensitivitySet>,
    /// Flat k-space indices of the selected samples of one coil.
    samples: Arc<Vec<usize>>,
}

impl EncodingOperator {
    pub fn new(sens: Arc<SensitivitySet>, mask: &SamplingMask) -> Result<Self> {
        let shape = sens.shape();
        if mask.ny() != shape.ny || mask.nz() != shape.nz {
            return Err(Error::ShapeMismatch(format!(
                "mask plane {}x{} does not match image {shape}",
                mask.ny(),
                mask.nz()
            )));
        }
        let points = mask.selected_fft_points();
        if points.is_empty() {
            return Err(Error::invalid("sampling mask selects no k-space points"));
        }
        let samples = points
            .iter()
            .flat_map(|&(ky, kz)| (0..shape.nx).map(move |x| shape.index(x, ky, kz)))
            .collect();
        Ok(Self { shape, fft: Fft3::new(shape), sens, samples: Arc::new(samples) })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn coils(&self) -> usize {
        self.sens.len()
    }

    pub fn samples_per_coil(&self) -> usize {
        self.samples.len()
    }

    /// Exact `||A||_F^2 = (samples per coil / N) * sum_c ||s_c||^2`.
    pub fn frobenius_sq_exact(&self) -> f64 {
        let energy: f64 = self.sens.coils().iter().map(|c| c.norm().powi(2)).sum();
        self.samples.len() as f64 / self.shape.len() as f64 * energy
    }
}

impl LinearOperator for EncodingOperator {
    fn domain_len(&self) -> usize {
        self.shape.len()
    }

    fn range_len(&self) -> usize {
        self.sens.len() * self.samples.len()
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.shape.len(), "encoding input length");
        let per_coil = par::map_jobs(self.sens.coils(), |coil| {
            let mut buf: Vec<Complex64> = coil.data().iter().zip(x).map(|(s, v)| s * v).collect();
            self.fft.forward(&mut buf);
            self.samples.iter().map(|&k| buf[k]).collect::<Vec<_>>()
        });
        per_coil.concat()
    }

    fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(y.len(), self.range_len(), "encoding adjoint input length");
        let m = self.samples.len();
        let coil_ids: Vec<usize> = (0..self.sens.len()).collect();
        let per_coil = par::map_jobs(&coil_ids, |&c| {
            let mut buf = vec![Complex64::default(); self.shape.len()];
            for (&k, &v) in self.samples.iter().zip(&y[c * m..(c + 1) * m]) {
                buf[k] = v;
            }
            self.fft.inverse(&mut buf);
            let s = self.sens.coils()[c].data();
            buf.iter_mut().zip(s).for_each(|(b, s)| *b *= s.conj());
            buf
        });
        let mut out = vec![Complex64::default(); self.shape.len()];
        for coil in per_coil {
            out.iter_mut().zip(coil).for_each(|(o, v)| *o += v);
        }
        out
    }
}

/// `P_i F S x` for one echo.
pub fn forward_encode(x: &ComplexVolume, sens: &SensitivitySet, mask: &SamplingMask) -> Result<Vec<Complex64>> {
    if x.shape() != sens.shape() {
        return Err(Error::ShapeMismatch(format!("image {} vs coils {}", x.shape(), sens.shape())));
    }
    let op = EncodingOperator::new(Arc::new(sens.clone()), mask)?;
    Ok(op.apply(x.data()))
}

/// `sum_c conj(s_c) * IFFT(zero-filled y_c)`.
pub fn adjoint_encode(y: &[Complex64], sens: &SensitivitySet, mask: &SamplingMask) -> Result<ComplexVolume> {
    let op = EncodingOperator::new(Arc::new(sens.clone()), mask)?;
    if y.len() != op.range_len() {
        return Err(Error::ShapeMismatch(format!(
            "{} samples given, {} coils x {} mask samples expected",
            y.len(),
            op.coils(),
            op.samples_per_coil()
        )));
    }
    ComplexVolume::from_vec(op.shape(), op.adjoint(y))
}

/// Converts echo time (ms) and relaxation rate (1/s) to a decay factor.
#[inline]
pub fn decay_factor(t_ms: f64, r2star: f64) -> f64 {
    (-t_ms * 1e-3 * r2star).exp()
}

/// Diagonal decay weights `B_i(r2*) = exp(-t_i r2*)` per echo.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayWeights {
    times_ms: Vec<f64>,
    weights: Vec<RealVolume>,
}

impl DecayWeights {
    pub fn new(r2star: &RealVolume, times_ms: &[f64]) -> Result<Self> {
        crate::volume::validate_echo_times(times_ms)?;
        if !r2star.all_finite() {
            return Err(Error::NonFinite("r2* map".into()));
        }
        let weights = times_ms
            .iter()
            .map(|&t| r2star.map(|r| decay_factor(t, r)))
            .collect();
        Ok(Self { times_ms: times_ms.to_vec(), weights })
    }

    pub fn times_ms(&self) -> &[f64] {
        &self.times_ms
    }

    pub fn weights(&self) -> &[RealVolume] {
        &self.weights
    }

    pub fn shape(&self) -> Shape {
        self.weights[0].shape()
    }

    /// `||E||_F^2 = sum_i sum_n B_i[n]^2`, exact for orthonormal `H`.
    pub fn frobenius_sq(&self) -> f64 {
        self.weights.iter().map(|w| w.norm().powi(2)).sum()
    }
}

/// Per-echo magnitudes `|x_i| = B_i(r2*) x0`.
pub fn decay_apply(w: &DecayWeights, x0: &RealVolume) -> Result<EchoSeries<f64>> {
    if x0.shape() != w.shape() {
        return Err(Error::ShapeMismatch(format!("x0 {} vs weights {}", x0.shape(), w.shape())));
    }
    if x0.data().iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("proton density must be nonnegative"));
    }
    let echoes = w
        .weights()
        .iter()
        .map(|b| {
            let data = b.data().iter().zip(x0.data()).map(|(b, x)| b * x).collect();
            RealVolume::from_vec(x0.shape(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    EchoSeries::new(echoes, w.times_ms().to_vec())
}

/// `E = [B_1 H^-1; ...; B_I H^-1]` mapping real proton-density wavelet
/// coefficients to stacked echo magnitudes (echo-major).
#[derive(Debug, Clone)]
pub struct DecayOperator {
    dwt: Dwt3,
    weights: Vec<Vec<f64>>,
}

impl DecayOperator {
    pub fn new(dwt: Dwt3, decay: &DecayWeights) -> Result<Self> {
        if dwt.shape() != decay.shape() {
            return Err(Error::ShapeMismatch("decay weights do not match wavelet grid".into()));
        }
        let weights = decay.weights().iter().map(|w| w.data().to_vec()).collect();
        Ok(Self { dwt, weights })
    }

    pub fn echoes(&self) -> usize {
        self.weights.len()
    }

    pub fn voxels(&self) -> usize {
        self.dwt.shape().len()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.weights.iter().map(|w| par::sum_map(w, |b| b * b)).sum()
    }

    pub fn apply_real(&self, v0: &[f64]) -> Vec<Vec<f64>> {
        let x0 = self.dwt.inverse(v0);
        par::map_jobs(&self.weights, |b| b.iter().zip(&x0).map(|(b, x)| b * x).collect())
    }

    pub fn adjoint_real(&self, s: &[Vec<f64>]) -> Vec<f64> {
        let n = self.voxels();
        let mut acc = vec![0.0; n];
        for (b, si) in self.weights.iter().zip(s) {
            acc.iter_mut().zip(b.iter().zip(si)).for_each(|(a, (b, s))| *a += b * s);
        }
        self.dwt.forward(&acc)
    }
}

impl LinearOperator for DecayOperator {
    fn domain_len(&self) -> usize {
        self.voxels()
    }
    fn range_len(&self) -> usize {
        self.voxels() * self.echoes()
    }
    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let img = self.dwt.inverse(x);
        self.weights
            .iter()
            .flat_map(|b| b.iter().zip(&img).map(|(b, v)| v * *b))
            .collect()
    }
    fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        let n = self.voxels();
        let mut acc = vec![Complex64::default(); n];
        for (i, b) in self.weights.iter().enumerate() {
            for (k, a) in acc.iter_mut().enumerate() {
                *a += y[i * n + k] * b[k];
            }
        }
        self.dwt.forward(&acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::SamplingMask;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn impulse_with_unit_coil_gives_flat_samples() {
        let shape = Shape::new(4, 4, 4).unwrap();
        let mut x = ComplexVolume::zeros(shape);
        x.data_mut()[0] = Complex64::new(1.0, 0.0);
        let y = forward_encode(&x, &SensitivitySet::unit(shape), &SamplingMask::full(4, 4)).unwrap();
        assert_eq!(y.len(), 64);
        for v in y {
            assert!((v - Complex64::new(0.125, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let shape = Shape::new(4, 4, 4).unwrap();
        let mask = SamplingMask::full(4, 4);
        let sens = SensitivitySet::unit(shape);
        let y = forward_encode(&ComplexVolume::zeros(shape), &sens, &mask).unwrap();
        assert!(y.iter().all(|v| v.norm() == 0.0));
        let x = adjoint_encode(&vec![Complex64::default(); 64], &sens, &mask).unwrap();
        assert!(x.data().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn adjoint_rejects_wrong_sample_count() {
        let shape = Shape::new(4, 4, 4).unwrap();
        let err = adjoint_encode(&[Complex64::default(); 10], &SensitivitySet::unit(shape), &SamplingMask::full(4, 4));
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn full_unit_encoding_is_unitary() {
        let shape = Shape::new(8, 4, 4).unwrap();
        let op = EncodingOperator::new(Arc::new(SensitivitySet::unit(shape)), &SamplingMask::full(4, 4)).unwrap();
        let x = random_complex(&mut rng(1), shape.len(), 1.0);
        let y = op.apply(&x);
        assert!((norm_sq(&y).sqrt() - norm_sq(&x).sqrt()).abs() < 1e-10);
        let back = op.adjoint(&y);
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn hutchinson_on_identity_zero_and_fft() {
        let id = frobenius_sq_estimate(&Identity(64), 32, 3);
        assert!((id - 64.0).abs() < 0.15 * 64.0, "{id}");
        assert_eq!(frobenius_sq_estimate(&Zero { rows: 5, cols: 7 }, 4, 1), 0.0);
        let f = FourierOp(Fft3::new(Shape::new(4, 4, 4).unwrap()));
        let est = frobenius_sq_estimate(&f, 32, 9);
        assert!((est - 64.0).abs() < 0.15 * 64.0, "{est}");
        assert_eq!(est, frobenius_sq_estimate(&f, 32, 9));
    }

    #[test]
    fn decay_examples() {
        let shape = Shape::new(2, 1, 1).unwrap();
        let x0 = RealVolume::from_vec(shape, vec![1.0, 2.0]).unwrap();
        let zero = RealVolume::zeros(shape);
        let w = DecayWeights::new(&zero, &[5.0, 10.0]).unwrap();
        for e in decay_apply(&w, &x0).unwrap().echoes() {
            assert_eq!(e, &x0);
        }
        let r = RealVolume::from_vec(shape, vec![100.0, 100.0]).unwrap();
        let w = DecayWeights::new(&r, &[10.0]).unwrap();
        let s = decay_apply(&w, &RealVolume::from_vec(shape, vec![1.0, 1.0]).unwrap()).unwrap();
        assert!((s.echoes()[0].data()[0] - (-1.0f64).exp()).abs() < 1e-15);
        assert!(decay_apply(&w, &RealVolume::from_vec(shape, vec![-1.0, 1.0]).unwrap()).is_err());
    }

    #[test]
    fn decay_operator_norm_matches_dense() {
        let shape = Shape::new(8, 1, 1).unwrap();
        let r = RealVolume::from_fn(shape, |x, _, _| 10.0 * x as f64);
        let w = DecayWeights::new(&r, &[7.64, 13.05]).unwrap();
        let e = DecayOperator::new(Dwt3::new(shape, 1).unwrap(), &w).unwrap();
        let dense = DenseMatrix::from_operator(&e);
        assert!((dense.frobenius_sq() - e.frobenius_sq()).abs() < 1e-12);
        assert!((w.frobenius_sq() - e.frobenius_sq()).abs() < 1e-12);
    }
}
