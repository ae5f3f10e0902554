//! Synthetic multi-echo phantoms and simulated acquisitions.
//!
//! Phantoms are compositions of ellipsoids with constant proton density
//! and relaxation rate. Echo images follow the mono-exponential decay
//! model with a smooth polynomial field map providing the phase:
//! `x_i = x0 * exp(-t_i r2*) * exp(j 2 pi f t_i)`. The field-map phase is
//! a modelling choice; only the magnitude is constrained by the decay
//! model.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{decay_factor, random_complex, EncodingOperator, LinearOperator, SensitivitySet};
use crate::sampling::{derive_seed, SamplingMask};
use crate::volume::{validate_echo_times, ComplexVolume, EchoSeries, RealVolume, Shape};

/// Ellipsoid in normalized coordinates: each axis maps to `(-1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    pub x0: f64,
    /// Relaxation rate in 1/s.
    pub r2star: f64,
}

impl Ellipsoid {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|k| ((p[k] - self.center[k]) / self.semi_axes[k]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

/// Off-resonance field `f(p) = sum_k linear_k p_k + quadratic_k p_k^2` in Hz.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldMapCoefficients {
    pub linear: [f64; 3],
    pub quadratic: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub shape: [usize; 3],
    pub ellipsoids: Vec<Ellipsoid>,
    pub fieldmap: FieldMapCoefficients,
    pub coils: usize,
    /// Complex noise standard deviation (per-component std is this / sqrt 2).
    pub noise_std: f64,
    pub echo_times_ms: Vec<f64>,
    pub seed: u64,
}

/// Echo times `first + k * spacing` in ms.
pub fn echo_train(first_ms: f64, spacing_ms: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| first_ms + spacing_ms * k as f64).collect()
}

/// Acquisition protocol echo train: 6 echoes, first at 7.64 ms, spacing 5.41 ms.
pub fn protocol_echo_times() -> Vec<f64> {
    echo_train(7.64, 5.41, 6)
}

impl PhantomSpec {
    /// Desk-scale brain-like phantom: 64x64x32, three nested ellipsoids,
    /// four coils, six echoes.
    pub fn brain_like() -> Self {
        Self {
            shape: [64, 64, 32],
            ellipsoids: vec![
                Ellipsoid { center: [0.0, 0.0, 0.0], semi_axes: [0.80, 0.86, 0.80], x0: 0.8, r2star: 20.0 },
                Ellipsoid { center: [0.0, 0.05, 0.0], semi_axes: [0.55, 0.58, 0.55], x0: 1.0, r2star: 50.0 },
                Ellipsoid { center: [0.18, -0.12, 0.08], semi_axes: [0.20, 0.16, 0.22], x0: 0.6, r2star: 100.0 },
            ],
            fieldmap: FieldMapCoefficients { linear: [4.0, 6.0, 2.0], quadratic: [6.0, 3.0, 4.0] },
            coils: 4,
            noise_std: 0.02,
            echo_times_ms: protocol_echo_times(),
            seed: 0,
        }
    }

    pub fn shape(&self) -> Result<Shape> {
        Shape::new(self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn validate(&self) -> Result<()> {
        self.shape()?;
        if self.ellipsoids.is_empty() {
            return Err(Error::invalid("phantom needs at least one ellipsoid"));
        }
        for e in &self.ellipsoids {
            if e.x0 < 0.0 || e.r2star < 0.0 || !e.x0.is_finite() || !e.r2star.is_finite() {
                return Err(Error::invalid("ellipsoid x0 and r2* must be finite and nonnegative"));
            }
            if e.semi_axes.iter().any(|&a| a <= 0.0) {
                return Err(Error::invalid("ellipsoid semi-axes must be positive"));
            }
            if (0..3).any(|k| e.center[k] - e.semi_axes[k] < -1.0 || e.center[k] + e.semi_axes[k] > 1.0) {
                return Err(Error::invalid("ellipsoid extends outside the field of view"));
            }
        }
        if self.coils == 0 {
            return Err(Error::invalid("at least one coil required"));
        }
        if self.noise_std.is_nan() || self.noise_std < 0.0 {
            return Err(Error::invalid("noise std must be nonnegative"));
        }
        validate_echo_times(&self.echo_times_ms)
    }
}

/// Voxel center in normalized `(-1, 1)` coordinates.
pub fn normalized_coords(shape: Shape, x: usize, y: usize, z: usize) -> [f64; 3] {
    let f = |i: usize, n: usize| (i as f64 + 0.5) / n as f64 * 2.0 - 1.0;
    [f(x, shape.nx), f(y, shape.ny), f(z, shape.nz)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub x0: RealVolume,
    pub r2star: RealVolume,
    /// Hz
    pub fieldmap: RealVolume,
    pub sens: SensitivitySet,
}

impl Phantom {
    /// Voxels with nonzero proton density.
    pub fn support(&self) -> RealVolume {
        self.x0.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
    }
}

/// Builds ground-truth maps and RSS-normalized coil sensitivities.
pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let shape = spec.shape()?;
    let mut x0 = RealVolume::zeros(shape);
    let mut r2 = RealVolume::zeros(shape);
    for i in 0..shape.len() {
        let (x, y, z) = shape.coords(i);
        let p = normalized_coords(shape, x, y, z);
        for e in &spec.ellipsoids {
            if e.contains(p) {
                x0.data_mut()[i] = e.x0;
                r2.data_mut()[i] = e.r2star;
            }
        }
    }
    let fm = &spec.fieldmap;
    let fieldmap = RealVolume::from_fn(shape, |x, y, z| {
        let p = normalized_coords(shape, x, y, z);
        (0..3).map(|k| fm.linear[k] * p[k] + fm.quadratic[k] * p[k] * p[k]).sum()
    });
    let sens = coil_sensitivities(shape, spec.coils)?;
    Ok(Phantom { x0, r2star: r2, fieldmap, sens })
}

/// Smooth complex Gaussian-profile coils on a ring around the phase-encode
/// (y-z) plane, normalized to unit root-sum-of-squares at every voxel.
pub fn coil_sensitivities(shape: Shape, coils: usize) -> Result<SensitivitySet> {
    if coils == 0 {
        return Err(Error::invalid("at least one coil required"));
    }
    const RING_RADIUS: f64 = 1.3;
    const WIDTH: f64 = 0.9;
    let raw: Vec<Vec<Complex64>> = (0..coils)
        .map(|c| {
            let angle = 2.0 * PI * c as f64 / coils as f64;
            let (cy, cz) = (RING_RADIUS * angle.cos(), RING_RADIUS * angle.sin());
            (0..shape.len())
                .map(|i| {
                    let (x, y, z) = shape.coords(i);
                    let p = normalized_coords(shape, x, y, z);
                    let d2 = p[0].powi(2) * 0.25 + (p[1] - cy).powi(2) + (p[2] - cz).powi(2);
                    let mag = (-d2 / (2.0 * WIDTH * WIDTH)).exp();
                    let phase = angle + 0.6 * (p[1] * angle.cos() + p[2] * angle.sin()) + 0.3 * p[0];
                    Complex64::from_polar(mag, phase)
                })
                .collect()
        })
        .collect();
    let rss: Vec<f64> = (0..shape.len())
        .map(|i| raw.iter().map(|c| c[i].norm_sqr()).sum::<f64>().sqrt())
        .collect();
    let maps = raw
        .into_iter()
        .map(|c| ComplexVolume::from_vec(shape, c.iter().zip(&rss).map(|(v, r)| v / r).collect()))
        .collect::<Result<Vec<_>>>()?;
    SensitivitySet::new(maps)
}

/// Complex echo images `x_i = x0 exp(-t_i r2*) exp(j 2 pi f t_i)`.
pub fn echo_images(x0: &RealVolume, r2star: &RealVolume, fieldmap: &RealVolume, times_ms: &[f64]) -> Result<EchoSeries<Complex64>> {
    if x0.shape() != r2star.shape() || x0.shape() != fieldmap.shape() {
        return Err(Error::ShapeMismatch("x0, r2* and field map must share a shape".into()));
    }
    validate_echo_times(times_ms)?;
    let echoes = times_ms
        .iter()
        .map(|&t| {
            let data = x0
                .data()
                .iter()
                .zip(r2star.data())
                .zip(fieldmap.data())
                .map(|((&m, &r), &f)| Complex64::from_polar(m * decay_factor(t, r), 2.0 * PI * f * t * 1e-3))
                .collect();
            ComplexVolume::from_vec(x0.shape(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    EchoSeries::new(echoes, times_ms.to_vec())
}

/// Per-echo k-space measurements `y_i = P_i F S x_i + w_i`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_acquisition(
    x0: &RealVolume,
    r2star: &RealVolume,
    fieldmap: &RealVolume,
    sens: &SensitivitySet,
    masks: &[SamplingMask],
    times_ms: &[f64],
    noise_std: f64,
    seed: u64,
) -> Result<Vec<Vec<Complex64>>> {
    if noise_std.is_nan() || noise_std < 0.0 {
        return Err(Error::invalid("noise std must be nonnegative"));
    }
    if masks.len() != times_ms.len() {
        return Err(Error::ShapeMismatch(format!("{} masks for {} echoes", masks.len(), times_ms.len())));
    }
    if sens.shape() != x0.shape() {
        return Err(Error::ShapeMismatch("coil maps do not match the phantom grid".into()));
    }
    let images = echo_images(x0, r2star, fieldmap, times_ms)?;
    let sens = std::sync::Arc::new(sens.clone());
    images
        .echoes()
        .iter()
        .zip(masks)
        .enumerate()
        .map(|(i, (x, mask))| {
            let op = EncodingOperator::new(sens.clone(), mask)?;
            let mut y = op.apply(x.data());
            if noise_std > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ 0xacc0_u64, i));
                let w = random_complex(&mut rng, y.len(), noise_std * noise_std);
                y.iter_mut().zip(w).for_each(|(a, b)| *a += b);
            }
            Ok(y)
        })
        .collect()
}
