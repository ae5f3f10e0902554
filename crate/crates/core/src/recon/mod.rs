//! Reconstruction drivers: the per-echo AMP pass that yields a Gaussian
//! multi-echo image prior, and the nonlinear AMP pass that enforces the
//! mono-exponential decay model to recover `x0` and `r2*`.

mod decay_fit;
mod multi_echo;
mod nonlinear;
mod pipeline;

pub use decay_fit::{
    fit_decay_maps, fit_decay_voxel, fit_decay_volumes, fit_r2star_voxel, median_decay_residual, refit_r2star,
    R2STAR_MAX, SUPPORT_FRACTION,
};
pub use multi_echo::{amp_multi_echo, EchoMessages, MultiEchoInit, MultiEchoOutput, MultiEchoPrior, MultiEchoSolver, MultiEchoState};
pub use nonlinear::{amp_nonlinear, NonlinearEcho, NonlinearInit, NonlinearSolver, NonlinearState};
pub use pipeline::{amp_pe_reconstruct, init_from_least_squares, warm_start_variance, LsqInit, ReconConfig};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::LinearOperator;
use crate::volume::{EchoSeries, RealVolume};

/// Consecutive growing iterations that count as divergence.
pub const DIVERGENCE_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmpConfig {
    /// Damping factor in (0, 1]; 1 disables damping.
    pub beta: f64,
    /// Relative-change stopping tolerance.
    pub tol: f64,
    pub max_iter: usize,
}

impl AmpConfig {
    pub fn multi_echo() -> Self {
        Self { beta: crate::amp::DEFAULT_DAMPING, tol: 1e-4, max_iter: 100 }
    }

    pub fn nonlinear() -> Self {
        Self { beta: crate::amp::DEFAULT_DAMPING, tol: 1e-4, max_iter: 50 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::invalid(format!("damping factor {} outside (0, 1]", self.beta)));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid(format!("tolerance {} must be positive", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// Measurements of one echo with its forward operator.
#[derive(Clone, Copy)]
pub struct EchoData<'a> {
    pub y: &'a [Complex64],
    pub op: &'a dyn LinearOperator,
    pub frob_sq: f64,
}

impl<'a> EchoData<'a> {
    pub fn new(y: &'a [Complex64], op: &'a dyn LinearOperator, frob_sq: f64) -> Result<Self> {
        if y.len() != op.range_len() {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for an operator with {} rows",
                y.len(),
                op.range_len()
            )));
        }
        Ok(Self { y, op, frob_sq })
    }

    pub(crate) fn frobenius(&self) -> crate::amp::FrobeniusData {
        crate::amp::FrobeniusData { frob_sq: self.frob_sq, rows: self.op.range_len(), cols: self.op.domain_len() }
    }
}

/// Fraction of the critical step used when capping the damping factor.
pub const DAMPING_MARGIN: f64 = 0.9;

/// Largest damping factor for which the damped iteration stays stable on an
/// operator with `cols / ||G||_F^2 = c`, from the linearised message loop
/// `beta^2 c + 2 beta < 4`.
pub fn critical_damping(c: f64) -> f64 {
    if c > 0.0 && c.is_finite() {
        (((1.0 + 4.0 * c).sqrt() - 1.0) / c).min(1.0)
    } else {
        1.0
    }
}

/// Damping step actually used: `beta` capped at the stability margin.
/// `beta = 1` means damping is off and is passed through unchanged.
pub fn effective_damping(beta: f64, c: f64) -> f64 {
    if beta >= 1.0 {
        beta
    } else {
        beta.min(DAMPING_MARGIN * critical_damping(c))
    }
}

/// Damping step for a set of echo operators, capped by the worst one.
pub(crate) fn damping_for(data: &[EchoData<'_>], beta: f64) -> f64 {
    let c = data.iter().map(|d| d.op.domain_len() as f64 / d.frob_sq).fold(0.0, f64::max);
    effective_damping(beta, c)
}

/// Tracks the convergence metric and flags divergence.
#[derive(Debug, Clone)]
pub(crate) struct Monitor {
    stage: &'static str,
    pub trace: Vec<f64>,
    rising: usize,
}

impl Monitor {
    pub fn new(stage: &'static str) -> Self {
        Self { stage, trace: Vec::new(), rising: 0 }
    }

    pub fn push(&mut self, change: f64) -> Result<()> {
        let iteration = self.trace.len();
        if !change.is_finite() {
            return Err(Error::Divergence {
                stage: self.stage,
                iteration,
                detail: format!("non-finite update (relative change {change})"),
            });
        }
        let grew = self.trace.last().is_some_and(|&prev| change > prev);
        self.rising = if grew { self.rising + 1 } else { 0 };
        self.trace.push(change);
        if self.rising >= DIVERGENCE_WINDOW {
            return Err(Error::Divergence {
                stage: self.stage,
                iteration,
                detail: format!(
                    "relative change grew for {DIVERGENCE_WINDOW} consecutive iterations (now {change:.3e})"
                ),
            });
        }
        Ok(())
    }
}

pub(crate) fn relative_change<T: crate::volume::Scalar>(new: &[Vec<T>], old: &[Vec<T>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in new.iter().zip(old) {
        num += crate::par::sum_indexed(a.len(), |i| (a[i] - b[i]).norm_sqr());
        den += crate::par::sum_map(b, |v| v.norm_sqr());
    }
    if den == 0.0 {
        // starting from zero counts as a full change
        if num == 0.0 {
            0.0
        } else {
            1.0
        }
    } else {
        (num / den).sqrt()
    }
}

/// Unit phasor of `z`, with `Pr(0) = 1`.
pub fn phase_of(z: Complex64) -> Complex64 {
    let m = z.norm();
    if m > 0.0 {
        z / m
    } else {
        Complex64::new(1.0, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub change: f64,
    pub lambda: f64,
    pub theta: f64,
    /// Damping step used for this iteration.
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconParams {
    /// Laplace rate of the proton-density coefficients.
    pub lambda0: Option<f64>,
    /// Per-echo Laplace rates.
    pub lambdas: Vec<f64>,
    /// Noise standard deviation estimate.
    pub theta: Option<f64>,
}

/// Iterations and tolerance outcome of one solver stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    pub x0: RealVolume,
    pub r2star: RealVolume,
    pub echoes: EchoSeries<Complex64>,
    pub params: ReconParams,
    pub iterations: usize,
    pub converged: bool,
    pub stages: Vec<StageSummary>,
    pub trace: Vec<f64>,
    pub log: Vec<IterationLog>,
}
