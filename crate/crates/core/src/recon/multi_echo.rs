//! Per-echo AMP in the wavelet domain, run in lockstep so the noise level
//! is shared across echoes.

use num_complex::Complex64;

use super::{damping_for, relative_change, AmpConfig, EchoData, IterationLog, Monitor};
use crate::amp::{
    damp_values, denoise_laplace_complex, estimate_lambda, input_update, output_update, theta_from_moments,
    theta_moments, GaussianMessage, NoiseParams, Variance, VARIANCE_FLOOR,
};
use crate::error::{Error, Result};
use crate::par;
use crate::volume::{ComplexVolume, Shape};
use crate::wavelet::Dwt3;

/// Message slots of one echo. Slot variances are shared scalars except the
/// denoiser output `tau_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoMessages {
    pub mu_v: Vec<Complex64>,
    pub tau_v: Vec<f64>,
    pub mu1: Vec<Complex64>,
    pub tau1: f64,
    pub mu2: Vec<Complex64>,
    pub tau2: f64,
    pub mu3: Vec<Complex64>,
    pub tau3: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiEchoState {
    pub echoes: Vec<EchoMessages>,
    pub theta_sq: f64,
    pub iteration: usize,
}

/// Starting point: coefficient means, a per-echo coefficient variance and
/// the noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiEchoInit {
    pub mu_v: Vec<Vec<Complex64>>,
    pub tau_v: Vec<f64>,
    pub theta_sq: f64,
}

impl MultiEchoInit {
    /// Zero coefficients with variance `||y||^2 / ||G||_F^2`.
    pub fn cold(data: &[EchoData<'_>], theta_sq: f64) -> Self {
        Self {
            mu_v: data.iter().map(|d| vec![Complex64::default(); d.op.domain_len()]).collect(),
            tau_v: data.iter().map(|d| default_prior_variance(d)).collect(),
            theta_sq,
        }
    }
}

pub(crate) fn default_prior_variance(d: &EchoData<'_>) -> f64 {
    let e = par::sum_map(d.y, |v| v.norm_sqr());
    if d.frob_sq > 0.0 {
        e / d.frob_sq
    } else {
        0.0
    }
}

pub struct MultiEchoSolver<'a> {
    data: Vec<EchoData<'a>>,
    cfg: AmpConfig,
    state: MultiEchoState,
    monitor: Monitor,
    beta: f64,
    log: Vec<IterationLog>,
}

impl<'a> MultiEchoSolver<'a> {
    pub fn new(data: Vec<EchoData<'a>>, init: MultiEchoInit, cfg: AmpConfig) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::invalid("no echoes to reconstruct"));
        }
        if init.mu_v.len() != data.len() || init.tau_v.len() != data.len() {
            return Err(Error::ShapeMismatch("initialization does not match the echo count".into()));
        }
        let mut echoes = Vec::with_capacity(data.len());
        for (d, (mu_v, &tau_v)) in data.iter().zip(init.mu_v.into_iter().zip(&init.tau_v)) {
            if mu_v.len() != d.op.domain_len() {
                return Err(Error::ShapeMismatch("initial coefficients do not match the operator".into()));
            }
            if !(tau_v >= 0.0 && tau_v.is_finite()) {
                return Err(Error::invalid("initial variance must be finite and nonnegative"));
            }
            let f = d.frobenius();
            let tau3 = f.output_variance(tau_v);
            let mu3 = d.op.apply(&mu_v);
            let n = mu_v.len();
            echoes.push(EchoMessages {
                tau_v: vec![tau_v; n],
                mu_v,
                mu1: vec![Complex64::default(); d.y.len()],
                tau1: 0.0,
                mu2: vec![Complex64::default(); n],
                tau2: 0.0,
                mu3,
                tau3,
                lambda: 1.0,
            });
        }
        let theta_sq = NoiseParams::new(init.theta_sq).theta_sq;
        let beta = damping_for(&data, cfg.beta);
        Ok(Self {
            data,
            cfg,
            state: MultiEchoState { echoes, theta_sq, iteration: 0 },
            monitor: Monitor::new("multi-echo"),
            beta,
            log: Vec::new(),
        })
    }

    pub fn state(&self) -> &MultiEchoState {
        &self.state
    }

    pub fn trace(&self) -> &[f64] {
        &self.monitor.trace
    }

    pub fn log(&self) -> &[IterationLog] {
        &self.log
    }

    /// One full iteration over all echoes; returns the relative change of
    /// the coefficient means.
    pub fn step(&mut self) -> Result<f64> {
        let beta = self.beta;
        let noise = NoiseParams::new(self.state.theta_sq);
        let jobs: Vec<usize> = (0..self.data.len()).collect();
        let updated: Vec<Result<EchoMessages>> = par::map_jobs(&jobs, |&i| {
            let d = &self.data[i];
            let old = &self.state.echoes[i];
            let f = d.frobenius();
            let z = GaussianMessage::shared(old.mu3.clone(), old.tau3);
            let out = output_update(d.y, &z, &noise)?;
            let tau1 = out.var.get(0);
            let back = d.op.adjoint(&out.mean);
            let inp = input_update(&old.mu_v, &back, &out.var, &f)?;
            let tau2 = inp.var.get(0);
            let lambda = estimate_lambda(&inp);
            let den = denoise_laplace_complex(&inp, lambda);
            let mu_v = damp_values(&den.mean, &old.mu_v, beta);
            let tau_v = damp_values(&den.var.to_vec(den.len()), &old.tau_v, beta);
            let tau3_new = f.output_variance(Variance::PerElement(tau_v.clone()).mean(tau_v.len()));
            let g = d.op.apply(&mu_v);
            let mu3_new: Vec<Complex64> = par::collect_indexed(g.len(), |m| g[m] - out.mean[m] * tau3_new);
            let mu3 = damp_values(&mu3_new, &old.mu3, beta);
            let tau3 = beta * tau3_new + (1.0 - beta) * old.tau3;
            Ok(EchoMessages { mu_v, tau_v, mu1: out.mean, tau1, mu2: inp.mean, tau2, mu3, tau3, lambda })
        });
        let updated: Vec<EchoMessages> = updated.into_iter().collect::<Result<_>>()?;
        let change = relative_change(
            &updated.iter().map(|e| e.mu_v.clone()).collect::<Vec<_>>(),
            &self.state.echoes.iter().map(|e| e.mu_v.clone()).collect::<Vec<_>>(),
        );
        let moments = self
            .data
            .iter()
            .zip(&updated)
            .map(|(d, e)| theta_moments(d.y, &GaussianMessage::shared(e.mu3.clone(), e.tau3)))
            .collect::<Result<Vec<_>>>()?;
        self.state.theta_sq = beta * theta_from_moments(&moments, VARIANCE_FLOOR) + (1.0 - beta) * self.state.theta_sq;
        self.state.echoes = updated;
        self.state.iteration += 1;
        let lambda = self.state.echoes.iter().map(|e| e.lambda).sum::<f64>() / self.state.echoes.len() as f64;
        self.log.push(IterationLog {
            iteration: self.state.iteration,
            change,
            lambda,
            theta: self.state.theta_sq.sqrt(),
            beta,
        });
        self.monitor.push(change)?;
        Ok(change)
    }

    pub fn run(mut self) -> Result<MultiEchoOutput> {
        let mut converged = false;
        while self.state.iteration < self.cfg.max_iter {
            if self.step()? < self.cfg.tol {
                converged = true;
                break;
            }
        }
        Ok(MultiEchoOutput { state: self.state, trace: self.monitor.trace, converged, log: self.log })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiEchoOutput {
    pub state: MultiEchoState,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub log: Vec<IterationLog>,
}

/// Gaussian image-domain prior `N(mu_M, tau_M)` per echo.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiEchoPrior {
    pub means: Vec<ComplexVolume>,
    pub variances: Vec<f64>,
}

impl MultiEchoPrior {
    pub fn validate(&self, shape: Shape, echoes: usize) -> Result<()> {
        if self.means.len() != echoes || self.variances.len() != echoes {
            return Err(Error::ShapeMismatch(format!("prior has {} echoes, expected {echoes}", self.means.len())));
        }
        if self.means.iter().any(|m| m.shape() != shape) {
            return Err(Error::ShapeMismatch("prior grid does not match the image grid".into()));
        }
        if self.variances.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("prior variances must be finite and nonnegative"));
        }
        Ok(())
    }
}

impl MultiEchoOutput {
    /// Image-domain prior: `mu_M = H^-1 mu_v`, `tau_M = mean tau_v`
    /// (the synthesis operator is orthonormal).
    pub fn prior(&self, dwt: &Dwt3) -> Result<MultiEchoPrior> {
        let means = self
            .state
            .echoes
            .iter()
            .map(|e| ComplexVolume::from_vec(dwt.shape(), dwt.inverse(&e.mu_v)))
            .collect::<Result<Vec<_>>>()?;
        let variances = self.state.echoes.iter().map(|e| Variance::PerElement(e.tau_v.clone()).mean(e.tau_v.len())).collect();
        Ok(MultiEchoPrior { means, variances })
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.state.echoes.iter().map(|e| e.lambda).collect()
    }

    pub fn theta(&self) -> f64 {
        self.state.theta_sq.sqrt()
    }
}

/// Runs the multi-echo AMP pass to convergence or `cfg.max_iter`.
pub fn amp_multi_echo(data: Vec<EchoData<'_>>, init: MultiEchoInit, cfg: AmpConfig) -> Result<MultiEchoOutput> {
    MultiEchoSolver::new(data, init, cfg)?.run()
}
