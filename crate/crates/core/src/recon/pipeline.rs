//! End-to-end AMP reconstruction: least-squares warm start, per-echo AMP
//! for the image prior, then the nonlinear decay-model pass.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::decay_fit::fit_decay_maps;
use super::multi_echo::MultiEchoSolver;
use super::nonlinear::NonlinearSolver;
use super::{AmpConfig, EchoData, MultiEchoInit, NonlinearInit, ReconParams, ReconResult, StageSummary};
use crate::acquisition::Acquisition;
use crate::baselines::{cg_normal, DEFAULT_LSQ_ITERS};
use crate::error::{Error, Result};
use crate::operators::{Composed, EncodingOperator, LinearOperator, WaveletSynthesis};
use crate::par;
use crate::volume::{ComplexVolume, EchoSeries, RealVolume};
use crate::wavelet::Dwt3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    pub multi_echo: AmpConfig,
    pub nonlinear: AmpConfig,
    pub lsq_iters: usize,
    pub levels: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            multi_echo: AmpConfig::multi_echo(),
            nonlinear: AmpConfig::nonlinear(),
            lsq_iters: DEFAULT_LSQ_ITERS,
            levels: crate::wavelet::DEFAULT_LEVELS,
        }
    }
}

impl ReconConfig {
    /// Same damping, tolerance and iteration cap for both passes.
    pub fn with_amp(beta: f64, tol: f64, max_iter: Option<usize>) -> Self {
        let d = Self::default();
        Self {
            multi_echo: AmpConfig { beta, tol, max_iter: max_iter.unwrap_or(d.multi_echo.max_iter) },
            nonlinear: AmpConfig { beta, tol, max_iter: max_iter.unwrap_or(d.nonlinear.max_iter) },
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.multi_echo.validate()?;
        self.nonlinear.validate()?;
        if self.lsq_iters == 0 {
            return Err(Error::invalid("lsq_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Least-squares starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct LsqInit {
    pub images: Vec<Vec<Complex64>>,
    /// Noise variance guess.
    pub theta_sq: f64,
}

/// Per-echo CG images plus a noise variance from the outer k-space shell
/// (falling back to the mean residual power).
pub fn init_from_least_squares(acq: &Acquisition, ops: &[EncodingOperator], iters: usize) -> Result<LsqInit> {
    let jobs: Vec<usize> = (0..ops.len()).collect();
    let runs = par::map_jobs(&jobs, |&i| cg_normal(&ops[i], &acq.kspace[i], iters, None));
    let mut images = Vec::with_capacity(runs.len());
    let (mut res, mut count) = (0.0, 0usize);
    for (i, r) in runs.into_iter().enumerate() {
        let r = r?;
        let last = r.residuals.last().copied().unwrap_or(0.0);
        res += last * last;
        count += acq.kspace[i].len();
        images.push(r.x);
    }
    let theta_sq = match acq.kspace_noise_estimate() {
        Some(t) if t > 0.0 => t * t,
        _ => res / count.max(1) as f64,
    };
    Ok(LsqInit { images, theta_sq })
}

/// Coefficient variance matching a least-squares start: the noise variance
/// carried back through the adjoint, `theta^2 N / ||G||_F^2`.
pub fn warm_start_variance(d: &EchoData<'_>, theta_sq: f64) -> f64 {
    if d.frob_sq > 0.0 {
        theta_sq * d.op.domain_len() as f64 / d.frob_sq
    } else {
        0.0
    }
}

/// Full reconstruction of `x0`, `r2*` and the echo images.
pub fn amp_pe_reconstruct(acq: &Acquisition, cfg: &ReconConfig) -> Result<ReconResult> {
    cfg.validate()?;
    let shape = acq.shape();
    let dwt = Dwt3::new(shape, cfg.levels)?;
    let ops = acq.encoders()?;
    let frob: Vec<f64> = ops.iter().map(|o| o.frobenius_sq_exact()).collect();
    let lsq = init_from_least_squares(acq, &ops, cfg.lsq_iters)?;

    let synth: Vec<Composed<&EncodingOperator, WaveletSynthesis>> =
        ops.iter().map(|o| Composed { outer: o, inner: WaveletSynthesis(dwt.clone()) }).collect();
    let data: Vec<EchoData<'_>> = synth
        .iter()
        .zip(&acq.kspace)
        .zip(&frob)
        .map(|((g, y), &f)| EchoData::new(y, g as &dyn LinearOperator, f))
        .collect::<Result<_>>()?;
    let init = MultiEchoInit {
        mu_v: lsq.images.iter().map(|x| dwt.forward(x)).collect(),
        tau_v: data.iter().map(|d| warm_start_variance(d, lsq.theta_sq)).collect(),
        theta_sq: lsq.theta_sq,
    };
    let first = MultiEchoSolver::new(data, init, cfg.multi_echo)?.run()?;
    let prior = first.prior(&dwt)?;

    let mags: Vec<Vec<f64>> = prior.means.iter().map(|m| m.data().iter().map(|v| v.norm()).collect()).collect();
    let refs: Vec<&[f64]> = mags.iter().map(|m| m.as_slice()).collect();
    let (x0, r2) = fit_decay_maps(&refs, &acq.times_ms)?;
    let tau_x = prior.variances.clone();
    let tau_v0 = tau_x.iter().sum::<f64>() / tau_x.len() as f64;
    let init = NonlinearInit {
        x0,
        r2star: r2,
        x: prior.means.iter().map(|m| m.data().to_vec()).collect(),
        tau_x,
        tau_v0,
        theta_sq: first.state.theta_sq,
    };
    let data: Vec<EchoData<'_>> = ops
        .iter()
        .zip(&acq.kspace)
        .zip(&frob)
        .map(|((o, y), &f)| EchoData::new(y, o as &dyn LinearOperator, f))
        .collect::<Result<_>>()?;
    let (state, trace2, log2, converged) =
        NonlinearSolver::new(data, dwt.clone(), &acq.times_ms, &prior, init, cfg.nonlinear)?.run()?;

    let x0: Vec<f64> = state.x0(&dwt).into_iter().map(|v| v.max(0.0)).collect();
    let echoes = state
        .echoes
        .iter()
        .map(|e| ComplexVolume::from_vec(shape, e.mu_x.clone()))
        .collect::<Result<Vec<_>>>()?;
    if x0.iter().chain(&state.r2star).any(|v| !v.is_finite()) || echoes.iter().any(|e| !e.all_finite()) {
        return Err(Error::Divergence {
            stage: "reconstruction",
            iteration: first.state.iteration + state.iteration,
            detail: "non-finite output".into(),
        });
    }
    let mut trace = first.trace;
    trace.extend(trace2);
    let mut log = first.log.clone();
    log.extend(log2);
    Ok(ReconResult {
        x0: RealVolume::from_vec(shape, x0)?,
        r2star: RealVolume::from_vec(shape, state.r2star.clone())?,
        echoes: EchoSeries::new(echoes, acq.times_ms.clone())?,
        params: ReconParams {
            lambda0: Some(state.lambda0),
            lambdas: first.state.echoes.iter().map(|e| e.lambda).collect(),
            theta: Some(state.theta_sq.sqrt()),
        },
        iterations: first.state.iteration + state.iteration,
        converged: first.converged && converged,
        stages: vec![
            StageSummary { stage: "multi-echo".into(), iterations: first.state.iteration, converged: first.converged },
            StageSummary { stage: "nonlinear".into(), iterations: state.iteration, converged },
        ],
        trace,
        log,
    })
}
