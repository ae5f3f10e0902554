//! Simulated scans and method dispatch shared by the CLI and the sweep.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::acquisition::Acquisition;
use crate::baselines::{decay_maps, fista_l1_recon, gamma_center, lsq_recon, L1Config, DEFAULT_LSQ_ITERS};
use crate::error::{Error, Result};
use crate::phantom::{make_phantom, simulate_acquisition, Phantom, PhantomSpec};
use crate::recon::{amp_pe_reconstruct, ReconConfig, ReconResult};
use crate::sampling::{per_echo_masks, MaskPolicy, SamplingMask, SamplingParams};
use crate::volume::{EchoSeries, RealVolume};
use crate::wavelet::Dwt3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Lsq,
    L1,
    AmpPe,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Lsq, Method::L1, Method::AmpPe];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lsq => "lsq",
            Method::L1 => "l1",
            Method::AmpPe => "amp-pe",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lsq" => Ok(Method::Lsq),
            "l1" => Ok(Method::L1),
            "amp-pe" => Ok(Method::AmpPe),
            _ => Err(Error::invalid(format!("unknown method {s:?} (expected lsq, l1 or amp-pe)"))),
        }
    }
}

/// Ground truth plus the simulated measurements.
#[derive(Debug, Clone)]
pub struct Scan {
    pub phantom: Phantom,
    pub acq: Acquisition,
}

impl Scan {
    pub fn support(&self) -> RealVolume {
        self.phantom.support()
    }
}

/// Phantom, per-echo masks at `rate` and noisy k-space, all driven by
/// `seed` (masks and noise use independent derived streams).
pub fn simulate_scan(spec: &PhantomSpec, rate: f64, seed: u64, policy: MaskPolicy) -> Result<Scan> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::invalid(format!("sampling rate {rate} outside (0, 1]")));
    }
    let [_, ny, nz] = spec.shape;
    let params = SamplingParams::new(ny, nz, rate);
    let masks = per_echo_masks(&params, spec.echo_times_ms.len(), seed, policy)?;
    simulate_scan_with_masks(spec, masks, seed)
}

/// Like [`simulate_scan`] with caller-supplied masks, one per echo.
pub fn simulate_scan_with_masks(spec: &PhantomSpec, masks: Vec<SamplingMask>, seed: u64) -> Result<Scan> {
    let phantom = make_phantom(spec)?;
    let kspace = simulate_acquisition(
        &phantom.x0,
        &phantom.r2star,
        &phantom.fieldmap,
        &phantom.sens,
        &masks,
        &spec.echo_times_ms,
        spec.noise_std,
        seed,
    )?;
    let acq = Acquisition::new(Arc::new(phantom.sens.clone()), masks, spec.echo_times_ms.clone(), kspace)?;
    Ok(Scan { phantom, acq })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfigs {
    pub lsq_iters: usize,
    pub l1: L1Config,
    pub amp: ReconConfig,
    pub levels: usize,
}

impl Default for MethodConfigs {
    fn default() -> Self {
        Self {
            lsq_iters: DEFAULT_LSQ_ITERS,
            l1: L1Config::new(1e-3),
            amp: ReconConfig::default(),
            levels: crate::wavelet::DEFAULT_LEVELS,
        }
    }
}

/// Maps and images produced by one method.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub x0: RealVolume,
    pub r2star: RealVolume,
    pub echoes: EchoSeries<Complex64>,
    /// Solver details for AMP runs.
    pub amp: Option<ReconResult>,
}

pub fn run_method(acq: &Acquisition, method: Method, cfg: &MethodConfigs) -> Result<MethodOutput> {
    let echoes = match method {
        Method::Lsq => lsq_recon(acq, cfg.lsq_iters)?,
        Method::L1 => fista_l1_recon(acq, &Dwt3::new(acq.shape(), cfg.levels)?, &cfg.l1)?,
        Method::AmpPe => {
            let r = amp_pe_reconstruct(acq, &ReconConfig { levels: cfg.levels, ..cfg.amp })?;
            return Ok(MethodOutput { x0: r.x0.clone(), r2star: r.r2star.clone(), echoes: r.echoes.clone(), amp: Some(r) });
        }
    };
    let (x0, r2star) = decay_maps(&echoes)?;
    Ok(MethodOutput { x0, r2star, echoes, amp: None })
}

/// Centre of the l1 weight grid for this scan, from the k-space noise level
/// and the encoder's mean squared column norm.
pub fn default_gamma(acq: &Acquisition) -> Result<f64> {
    let ops = acq.encoders()?;
    let frob = ops.iter().map(|o| o.frobenius_sq_exact()).sum::<f64>() / ops.len() as f64;
    let theta = acq
        .kspace_noise_estimate()
        .ok_or_else(|| Error::invalid("no outer k-space samples to estimate the noise level from"))?;
    Ok(gamma_center(theta, acq.shape().len(), frob))
}
