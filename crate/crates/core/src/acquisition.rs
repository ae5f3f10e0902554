//! Measured data of one multi-echo scan, independent of how it was made.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operators::{EncodingOperator, SensitivitySet};
use crate::sampling::SamplingMask;
use crate::volume::{validate_echo_times, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub sens: Arc<SensitivitySet>,
    pub masks: Vec<SamplingMask>,
    pub times_ms: Vec<f64>,
    /// Per-echo samples ordered coil, phase-encode point, readout.
    pub kspace: Vec<Vec<Complex64>>,
}

impl Acquisition {
    pub fn new(sens: Arc<SensitivitySet>, masks: Vec<SamplingMask>, times_ms: Vec<f64>, kspace: Vec<Vec<Complex64>>) -> Result<Self> {
        validate_echo_times(&times_ms)?;
        if masks.len() != times_ms.len() || kspace.len() != times_ms.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} echo times, {} masks, {} k-space echoes",
                times_ms.len(),
                masks.len(),
                kspace.len()
            )));
        }
        let shape = sens.shape();
        for (i, (m, y)) in masks.iter().zip(&kspace).enumerate() {
            if m.ny() != shape.ny || m.nz() != shape.nz {
                return Err(Error::ShapeMismatch(format!("mask {i} is {}x{}, grid is {shape}", m.ny(), m.nz())));
            }
            let expect = sens.len() * m.count() * shape.nx;
            if y.len() != expect {
                return Err(Error::ShapeMismatch(format!("echo {i}: {} samples, expected {expect}", y.len())));
            }
            if y.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
                return Err(Error::NonFinite(format!("k-space of echo {i}")));
            }
        }
        Ok(Self { sens, masks, times_ms, kspace })
    }

    pub fn shape(&self) -> Shape {
        self.sens.shape()
    }

    pub fn echoes(&self) -> usize {
        self.times_ms.len()
    }

    pub fn encoders(&self) -> Result<Vec<EncodingOperator>> {
        self.masks.iter().map(|m| EncodingOperator::new(self.sens.clone(), m)).collect()
    }

    /// Robust noise standard deviation from the outer k-space shell, where
    /// samples are noise dominated: `sqrt(median |y|^2 / ln 2)`. Returns
    /// `None` if the shell holds no samples.
    pub fn kspace_noise_estimate(&self) -> Option<f64> {
        let shape = self.shape();
        let freq = |j: usize, n: usize| {
            let f = if j < n.div_ceil(2) { j as f64 } else { j as f64 - n as f64 };
            if n > 1 {
                f / (n as f64 / 2.0)
            } else {
                0.0
            }
        };
        let mut power = Vec::new();
        for (m, y) in self.masks.iter().zip(&self.kspace) {
            let points = m.selected_fft_points();
            let per_coil = points.len() * shape.nx;
            for coil in 0..self.sens.len() {
                for (p, &(j, k)) in points.iter().enumerate() {
                    let r_pe = freq(j, shape.ny).powi(2) + freq(k, shape.nz).powi(2);
                    for kx in 0..shape.nx {
                        let r = r_pe + freq(kx, shape.nx).powi(2);
                        if r > 0.75 * 0.75 {
                            power.push(y[coil * per_coil + p * shape.nx + kx].norm_sqr());
                        }
                    }
                }
            }
        }
        if power.is_empty() {
            return None;
        }
        power.sort_by(f64::total_cmp);
        let median = power[power.len() / 2];
        Some((median / std::f64::consts::LN_2).sqrt())
    }
}
