//! Directory layout shared by the CLI and the sweep.
//!
//! ```text
//! <scan>/spec.json            phantom description
//! <scan>/truth/{x0,r2star,fieldmap}.{json,bin}
//! <scan>/truth/echoes/        noiseless echo images
//! <scan>/coils/coil_XX        sensitivity maps
//! <scan>/acquisition.json     rate, seed, mask policy, echo times
//! <scan>/masks/echo_XX        per-echo sampling masks
//! <scan>/kspace/echo_XX       per-echo samples, complex (M, 1, 1)
//!
//! <result>/{x0,r2star}        maps
//! <result>/echoes/            reconstructed echo images
//! <result>/run.json           solver log
//! ```

use std::fs;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::acquisition::Acquisition;
use crate::error::{Error, Result};
use crate::experiment::{Method, MethodConfigs, MethodOutput};
use crate::io::{self, echo_name};
use crate::operators::SensitivitySet;
use crate::phantom::{echo_images, make_phantom, Phantom, PhantomSpec};
use crate::recon::{IterationLog, ReconParams, StageSummary};
use crate::sampling::{MaskPolicy, SamplingMask};
use crate::volume::{ComplexVolume, EchoSeries, RealVolume, Shape};

fn create(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Ground truth as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub x0: RealVolume,
    pub r2star: RealVolume,
    pub echoes: EchoSeries<Complex64>,
}

impl Truth {
    /// Noiseless maps and echoes of `phantom`, rounded to the stored precision.
    pub fn from_phantom(phantom: &Phantom, times_ms: &[f64]) -> Result<Self> {
        let echoes = echo_images(&phantom.x0, &phantom.r2star, &phantom.fieldmap, times_ms)?;
        Ok(Self {
            x0: round_real(&phantom.x0),
            r2star: round_real(&phantom.r2star),
            echoes: round_series(&echoes)?,
        })
    }

    pub fn support(&self) -> RealVolume {
        self.x0.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
    }
}

pub fn round_real(v: &RealVolume) -> RealVolume {
    v.map(|x| x as f32 as f64)
}

pub fn round_complex(v: &ComplexVolume) -> ComplexVolume {
    v.map(|c| Complex64::new(c.re as f32 as f64, c.im as f32 as f64))
}

pub fn round_series(s: &EchoSeries<Complex64>) -> Result<EchoSeries<Complex64>> {
    EchoSeries::new(s.echoes().iter().map(round_complex).collect(), s.times_ms().to_vec())
}

pub fn write_phantom(dir: &Path, spec: &PhantomSpec, phantom: &Phantom) -> Result<()> {
    let truth_dir = dir.join("truth");
    let coil_dir = dir.join("coils");
    create(&truth_dir)?;
    create(&coil_dir)?;
    io::write_json(&dir.join("spec.json"), spec)?;
    io::write_volume(&truth_dir.join("x0"), &phantom.x0, "x0")?;
    io::write_volume(&truth_dir.join("r2star"), &phantom.r2star, "r2star")?;
    io::write_volume(&truth_dir.join("fieldmap"), &phantom.fieldmap, "fieldmap")?;
    let truth = Truth::from_phantom(phantom, &spec.echo_times_ms)?;
    io::write_series(&truth_dir.join("echoes"), &truth.echoes, "echo")?;
    for (c, coil) in phantom.sens.coils().iter().enumerate() {
        io::write_volume(&coil_dir.join(format!("coil_{c:02}")), coil, "sensitivity")?;
    }
    Ok(())
}

pub fn read_spec(dir: &Path) -> Result<PhantomSpec> {
    let spec: PhantomSpec = io::read_json(&dir.join("spec.json"))?;
    spec.validate()?;
    Ok(spec)
}

pub fn read_truth(dir: &Path) -> Result<Truth> {
    let truth_dir = dir.join("truth");
    Ok(Truth {
        x0: io::read_real(&truth_dir.join("x0"))?,
        r2star: io::read_real(&truth_dir.join("r2star"))?,
        echoes: io::read_complex_series(&truth_dir.join("echoes"))?,
    })
}

pub fn read_sensitivities(dir: &Path) -> Result<SensitivitySet> {
    let coil_dir = dir.join("coils");
    let mut coils = Vec::new();
    while coil_dir.join(format!("coil_{:02}.json", coils.len())).exists() {
        coils.push(io::read_complex(&coil_dir.join(format!("coil_{:02}", coils.len())))?);
    }
    if coils.is_empty() {
        return Err(Error::invalid(format!("no coil maps under {}", coil_dir.display())));
    }
    SensitivitySet::new(coils)
}

/// Regenerates the phantom from `spec.json` at full precision.
pub fn load_phantom(dir: &Path) -> Result<(PhantomSpec, Phantom)> {
    let spec = read_spec(dir)?;
    let phantom = make_phantom(&spec)?;
    Ok((spec, phantom))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionInfo {
    pub rate: f64,
    pub seed: u64,
    pub policy: MaskPolicy,
    pub times_ms: Vec<f64>,
}

pub fn write_acquisition(dir: &Path, acq: &Acquisition, info: &AcquisitionInfo) -> Result<()> {
    let mask_dir = dir.join("masks");
    let k_dir = dir.join("kspace");
    create(&mask_dir)?;
    create(&k_dir)?;
    for (i, (mask, y)) in acq.masks.iter().zip(&acq.kspace).enumerate() {
        mask.write(&mask_dir.join(echo_name(i)))?;
        let v = ComplexVolume::from_vec(Shape::new(y.len(), 1, 1)?, y.clone())?;
        io::write_volume(&k_dir.join(echo_name(i)), &v, "kspace")?;
    }
    io::write_json(&dir.join("acquisition.json"), info)
}

/// Reads masks and samples back, pairing them with the stored coil maps.
pub fn read_acquisition(dir: &Path) -> Result<(Acquisition, AcquisitionInfo)> {
    let info: AcquisitionInfo = io::read_json(&dir.join("acquisition.json"))?;
    let sens = read_sensitivities(dir)?;
    let mut masks = Vec::with_capacity(info.times_ms.len());
    let mut kspace = Vec::with_capacity(info.times_ms.len());
    for i in 0..info.times_ms.len() {
        masks.push(SamplingMask::read(&dir.join("masks").join(echo_name(i)))?);
        kspace.push(io::read_complex(&dir.join("kspace").join(echo_name(i)))?.into_vec());
    }
    let acq = Acquisition::new(Arc::new(sens), masks, info.times_ms.clone(), kspace)?;
    Ok((acq, info))
}

/// Solver record written next to every reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub method: Method,
    pub config: MethodConfigs,
    pub iterations: usize,
    pub converged: bool,
    pub params: Option<ReconParams>,
    pub stages: Vec<StageSummary>,
    pub log: Vec<IterationLog>,
    pub trace: Vec<f64>,
}

impl RunLog {
    pub fn new(method: Method, config: &MethodConfigs, out: &MethodOutput) -> Self {
        match &out.amp {
            Some(r) => Self {
                method,
                config: *config,
                iterations: r.iterations,
                converged: r.converged,
                params: Some(r.params.clone()),
                stages: r.stages.clone(),
                log: r.log.clone(),
                trace: r.trace.clone(),
            },
            None => Self {
                method,
                config: *config,
                iterations: 0,
                converged: true,
                params: None,
                stages: Vec::new(),
                log: Vec::new(),
                trace: Vec::new(),
            },
        }
    }
}

/// Reconstruction read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub x0: RealVolume,
    pub r2star: RealVolume,
    pub echoes: EchoSeries<Complex64>,
}

impl Estimate {
    /// The values a write/read cycle would produce.
    pub fn rounded(out: &MethodOutput) -> Result<Self> {
        Ok(Self { x0: round_real(&out.x0), r2star: round_real(&out.r2star), echoes: round_series(&out.echoes)? })
    }
}

pub fn write_result(dir: &Path, out: &MethodOutput, run: &RunLog) -> Result<()> {
    create(dir)?;
    io::write_volume(&dir.join("x0"), &out.x0, "x0")?;
    io::write_volume(&dir.join("r2star"), &out.r2star, "r2star")?;
    io::write_series(&dir.join("echoes"), &out.echoes, "echo")?;
    io::write_json(&dir.join("run.json"), run)
}

pub fn read_result(dir: &Path) -> Result<Estimate> {
    Ok(Estimate {
        x0: io::read_real(&dir.join("x0"))?,
        r2star: io::read_real(&dir.join("r2star"))?,
        echoes: io::read_complex_series(&dir.join("echoes"))?,
    })
}
