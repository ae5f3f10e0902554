//! Scalar building blocks of the AMP recursions: output-channel updates,
//! Laplace (soft-threshold) denoisers, parameter estimators and damping.
//!
//! Operators enter only through their squared Frobenius norm and shape
//! ([`FrobeniusData`]); the linear passes themselves (`G v`, `G^H r`) are
//! done by the caller.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::par;
use crate::volume::Scalar;

pub const LAMBDA_MIN: f64 = 1e-6;
pub const LAMBDA_MAX: f64 = 1e6;
/// Floor on noise variances, in signal units squared.
pub const VARIANCE_FLOOR: f64 = 1e-12;
pub const DEFAULT_DAMPING: f64 = 0.7;

/// Variance of a Gaussian message: one shared value or one per element.
#[derive(Debug, Clone, PartialEq)]
pub enum Variance {
    Shared(f64),
    PerElement(Vec<f64>),
}

impl Variance {
    pub fn get(&self, i: usize) -> f64 {
        match self {
            Variance::Shared(v) => *v,
            Variance::PerElement(v) => v[i],
        }
    }

    /// Mean over the `len` elements the variance describes.
    pub fn mean(&self, len: usize) -> f64 {
        match self {
            _ if len == 0 => 0.0,
            Variance::Shared(v) => *v,
            Variance::PerElement(v) => par::sum_map(v, |&x| x) / v.len() as f64,
        }
    }

    pub fn is_valid(&self) -> bool {
        match self {
            Variance::Shared(v) => *v >= 0.0 && v.is_finite(),
            Variance::PerElement(v) => v.iter().all(|x| *x >= 0.0 && x.is_finite()),
        }
    }

    pub fn to_vec(&self, len: usize) -> Vec<f64> {
        match self {
            Variance::Shared(v) => vec![*v; len],
            Variance::PerElement(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMessage<T> {
    pub mean: Vec<T>,
    pub var: Variance,
}

impl<T: Scalar> GaussianMessage<T> {
    pub fn new(mean: Vec<T>, var: Variance) -> Result<Self> {
        if let Variance::PerElement(v) = &var {
            if v.len() != mean.len() {
                return Err(Error::ShapeMismatch(format!("{} means, {} variances", mean.len(), v.len())));
            }
        }
        if !var.is_valid() {
            return Err(Error::NonFinite("message variance must be finite and nonnegative".into()));
        }
        Ok(Self { mean, var })
    }

    pub fn shared(mean: Vec<T>, var: f64) -> Self {
        Self { mean, var: Variance::Shared(var) }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean_variance(&self) -> f64 {
        self.var.mean(self.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorParams {
    pub lambda: f64,
}

impl PriorParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("Laplace rate must be positive, got {lambda}")));
        }
        Ok(Self { lambda })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub theta_sq: f64,
    pub floor: f64,
}

impl NoiseParams {
    pub fn new(theta_sq: f64) -> Self {
        Self::with_floor(theta_sq, VARIANCE_FLOOR)
    }

    pub fn with_floor(theta_sq: f64, floor: f64) -> Self {
        let floor = floor.max(f64::MIN_POSITIVE);
        let theta_sq = if theta_sq.is_finite() { theta_sq.max(floor) } else { floor };
        Self { theta_sq, floor }
    }

    pub fn theta(&self) -> f64 {
        self.theta_sq.sqrt()
    }
}

/// Operator data used by the variance recursions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrobeniusData {
    pub frob_sq: f64,
    /// Measurements (rows).
    pub rows: usize,
    /// Unknowns (columns).
    pub cols: usize,
}

impl FrobeniusData {
    /// `tau_in = [ (||G||^2 / N) mean_m tau_out_m ]^-1`
    pub fn input_variance(&self, mean_tau_out: f64) -> Result<f64> {
        let denom = self.frob_sq / self.cols as f64 * mean_tau_out;
        if !(denom > 0.0 && denom.is_finite()) {
            return Err(Error::DegenerateOperator(format!(
                "input variance denominator {denom} (||G||_F^2 = {})",
                self.frob_sq
            )));
        }
        Ok(1.0 / denom)
    }

    /// `tau_out = (||G||^2 / M) mean_n tau_in_n`
    pub fn output_variance(&self, mean_tau_in: f64) -> f64 {
        self.frob_sq / self.rows as f64 * mean_tau_in
    }
}

/// `tau1 = 1 / (theta^2 + tau3)`, `mu1 = (y - mu3) tau1`.
pub fn output_update(y: &[Complex64], z: &GaussianMessage<Complex64>, noise: &NoiseParams) -> Result<GaussianMessage<Complex64>> {
    if y.len() != z.len() {
        return Err(Error::ShapeMismatch(format!("{} samples, {} predictions", y.len(), z.len())));
    }
    let t = noise.theta_sq.max(noise.floor);
    Ok(match &z.var {
        Variance::Shared(v) => {
            let tau = 1.0 / (t + v);
            GaussianMessage::shared(par::collect_indexed(y.len(), |m| (y[m] - z.mean[m]) * tau), tau)
        }
        Variance::PerElement(v) => {
            let tau: Vec<f64> = v.iter().map(|v| 1.0 / (t + v)).collect();
            let mean = par::collect_indexed(y.len(), |m| (y[m] - z.mean[m]) * tau[m]);
            GaussianMessage { mean, var: Variance::PerElement(tau) }
        }
    })
}

/// `tau2 = [ (||G||^2/N) mean tau1 ]^-1`, `mu2 = mu_prev + tau2 * back`
/// where `back = G^H mu1`.
pub fn input_update<T: Scalar>(x_prev: &[T], back: &[T], tau_out: &Variance, frob: &FrobeniusData) -> Result<GaussianMessage<T>> {
    if x_prev.len() != back.len() || x_prev.len() != frob.cols {
        return Err(Error::ShapeMismatch(format!(
            "input update over {} unknowns with {} back-projected values",
            x_prev.len(),
            back.len()
        )));
    }
    let tau = frob.input_variance(tau_out.mean(frob.rows))?;
    let mean = par::collect_indexed(x_prev.len(), |n| x_prev[n] + back[n] * tau);
    Ok(GaussianMessage::shared(mean, tau))
}

/// Complex soft threshold: zero when `|u| <= lambda tau`, otherwise
/// magnitude shrunk by `lambda tau` with the phase kept.
pub fn soft_threshold_complex(u: Complex64, thresh: f64) -> Complex64 {
    let mag = u.norm();
    if mag <= thresh {
        Complex64::default()
    } else {
        u * ((mag - thresh) / mag)
    }
}

pub fn soft_threshold_real(u: f64, thresh: f64) -> f64 {
    if u.abs() <= thresh {
        0.0
    } else {
        u - thresh * u.signum()
    }
}

fn denoise<T: Scalar>(u: &GaussianMessage<T>, lambda: f64, shrink: impl Fn(T, f64) -> T + Sync) -> GaussianMessage<T> {
    let pairs: Vec<(T, f64)> = par::collect_indexed(u.len(), |n| {
        let tau = u.var.get(n);
        let thresh = lambda * tau;
        if u.mean[n].norm_sqr() <= thresh * thresh {
            (T::default(), 0.0)
        } else {
            (shrink(u.mean[n], thresh), tau)
        }
    });
    let (mean, var): (Vec<T>, Vec<f64>) = pairs.into_iter().unzip();
    GaussianMessage { mean, var: Variance::PerElement(var) }
}

/// Laplace MAP denoiser for complex coefficients.
pub fn denoise_laplace_complex(u: &GaussianMessage<Complex64>, lambda: f64) -> GaussianMessage<Complex64> {
    denoise(u, lambda, soft_threshold_complex)
}

/// Laplace MAP denoiser for real coefficients.
pub fn denoise_laplace_real(u: &GaussianMessage<f64>, lambda: f64) -> GaussianMessage<f64> {
    denoise(u, lambda, soft_threshold_real)
}

/// Stationary point of the Laplace log-likelihood, `lambda = N / sum |u_n|`,
/// clamped to `[LAMBDA_MIN, LAMBDA_MAX]`. Complex coefficients use their
/// modulus.
pub fn estimate_lambda<T: Scalar>(u: &GaussianMessage<T>) -> f64 {
    estimate_lambda_from(&u.mean)
}

pub fn estimate_lambda_from<T: Scalar>(values: &[T]) -> f64 {
    if values.is_empty() {
        return LAMBDA_MAX;
    }
    let total = par::sum_map(values, |v| v.norm_sqr().sqrt());
    let lambda = values.len() as f64 / total;
    if lambda.is_nan() {
        LAMBDA_MAX
    } else {
        lambda.clamp(LAMBDA_MIN, LAMBDA_MAX)
    }
}

/// Sufficient statistics `(sum_m |y_m - mu_m|^2 - tau_m, M)` for the
/// noise-variance update; summed across echoes for a shared estimate.
pub fn theta_moments(y: &[Complex64], z: &GaussianMessage<Complex64>) -> Result<(f64, usize)> {
    if y.len() != z.len() {
        return Err(Error::ShapeMismatch(format!("{} samples, {} predictions", y.len(), z.len())));
    }
    let s = par::sum_indexed(y.len(), |m| (y[m] - z.mean[m]).norm_sqr() - z.var.get(m));
    Ok((s, y.len()))
}

pub fn theta_from_moments(moments: &[(f64, usize)], floor: f64) -> f64 {
    let (s, n) = moments.iter().fold((0.0, 0usize), |(a, b), (s, n)| (a + s, b + n));
    if n == 0 {
        return floor;
    }
    let t = s / n as f64;
    if t.is_finite() {
        t.max(floor)
    } else {
        floor
    }
}

/// `theta^2 = max(mean_m(|y_m - mu_m|^2 - tau_m), floor)`.
pub fn estimate_theta(y: &[Complex64], z: &GaussianMessage<Complex64>, floor: f64) -> Result<f64> {
    Ok(theta_from_moments(&[theta_moments(y, z)?], floor))
}

pub fn damp_values<T: Scalar>(new: &[T], old: &[T], beta: f64) -> Vec<T> {
    debug_assert_eq!(new.len(), old.len());
    if beta == 1.0 {
        return new.to_vec();
    }
    par::collect_indexed(new.len(), |i| new[i] * beta + old[i] * (1.0 - beta))
}

/// `beta * new + (1 - beta) * old` on means and variances.
pub fn damp<T: Scalar>(new: &GaussianMessage<T>, old: &GaussianMessage<T>, beta: f64) -> Result<GaussianMessage<T>> {
    if new.len() != old.len() {
        return Err(Error::ShapeMismatch(format!("damping {} against {} values", new.len(), old.len())));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid(format!("damping factor {beta} outside (0, 1]")));
    }
    let mean = damp_values(&new.mean, &old.mean, beta);
    let var = match (&new.var, &old.var) {
        (Variance::Shared(a), Variance::Shared(b)) => Variance::Shared(beta * a + (1.0 - beta) * b),
        (a, b) => {
            let (a, b) = (a.to_vec(new.len()), b.to_vec(new.len()));
            Variance::PerElement(damp_values(&a, &b, beta))
        }
    };
    Ok(GaussianMessage { mean, var })
}
