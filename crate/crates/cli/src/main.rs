use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use t2star_amp::experiment::{default_gamma, run_method, simulate_scan_with_masks, Method, MethodConfigs};
use t2star_amp::phantom::{make_phantom, PhantomSpec};
use t2star_amp::recon::ReconConfig;
use t2star_amp::sampling::{per_echo_masks, MaskPolicy, SamplingMask, SamplingParams};
use t2star_amp::store::{self, AcquisitionInfo, RunLog};
use t2star_amp::sweep::{evaluate_dirs, format_mean_std, run_sweep, ExperimentConfig, MapKind};
use t2star_amp::{io, Error};

#[derive(Parser)]
#[command(name = "t2star", version, about = "Multi-echo T2* mapping from undersampled k-space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a phantom and write its ground truth and coil maps.
    Simulate {
        /// Phantom description (JSON); the built-in brain-like phantom if omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw sampling masks and noisy k-space for a simulated phantom.
    Sample {
        #[arg(long, required_unless_present = "full")]
        rate: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory written by `simulate`; samples are added to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Policy::Redraw)]
        policy: Policy,
        /// Keep the whole phase-encode plane (ignores --rate).
        #[arg(long)]
        full: bool,
    },
    /// Reconstruct x0, r2* and echo images from a sampled scan.
    Reconstruct {
        /// lsq, l1 or amp-pe
        #[arg(long, value_parser = parse_method)]
        method: Method,
        /// Scan directory written by `sample`.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Damping factor in (0, 1]; 1 disables damping.
        #[arg(long)]
        beta: Option<f64>,
        /// Relative-change stopping threshold (amp-pe, l1).
        #[arg(long)]
        tol: Option<f64>,
        /// Iteration cap per pass (amp-pe), FISTA (l1) or CG (lsq) iterations.
        #[arg(long)]
        max_iter: Option<usize>,
        /// l1 weight; derived from the noise level if omitted.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Compare a reconstruction against the ground truth of a scan.
    Evaluate {
        /// Reconstruction directory.
        #[arg(long = "in")]
        input: PathBuf,
        /// Scan directory holding the ground truth.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Metrics JSON to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a multi-seed sweep over rates and methods.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Policy {
    Redraw,
    Shared,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn simulate(spec: Option<&Path>, out: &Path) -> Result<()> {
    let spec = match spec {
        Some(p) => io::read_json(p)?,
        None => PhantomSpec::brain_like(),
    };
    let phantom = make_phantom(&spec)?;
    store::write_phantom(out, &spec, &phantom)?;
    eprintln!("phantom {:?}, {} coils, {} echoes -> {}", spec.shape, spec.coils, spec.echo_times_ms.len(), out.display());
    Ok(())
}

fn sample(rate: Option<f64>, seed: u64, dir: &Path, policy: Policy, full: bool) -> Result<()> {
    let spec = store::read_spec(dir)?;
    let [_, ny, nz] = spec.shape;
    let echoes = spec.echo_times_ms.len();
    let policy = match policy {
        Policy::Redraw => MaskPolicy::Redraw,
        Policy::Shared => MaskPolicy::Shared,
    };
    let rate = if full { 1.0 } else { rate.unwrap_or(f64::NAN) };
    let masks = if full {
        vec![SamplingMask::full(ny, nz); echoes]
    } else {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(Error::invalid(format!("sampling rate {rate} outside (0, 1]")).into());
        }
        per_echo_masks(&SamplingParams::new(ny, nz, rate), echoes, seed, policy)?
    };
    let scan = simulate_scan_with_masks(&spec, masks, seed)?;
    let info = AcquisitionInfo { rate, seed, policy, times_ms: spec.echo_times_ms.clone() };
    store::write_acquisition(dir, &scan.acq, &info)?;
    let kept: Vec<String> = scan.acq.masks.iter().map(|m| format!("{:.3}", m.count() as f64 / (ny * nz) as f64)).collect();
    eprintln!("sampled {} echoes, kept fractions [{}]", echoes, kept.join(", "));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn reconstruct(
    method: Method,
    input: &Path,
    out: &Path,
    beta: Option<f64>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    gamma: Option<f64>,
) -> Result<()> {
    let (acq, _) = store::read_acquisition(input)?;
    let mut cfg = MethodConfigs::default();
    match method {
        Method::AmpPe => {
            let d = ReconConfig::default();
            cfg.amp = ReconConfig {
                levels: cfg.levels,
                ..ReconConfig::with_amp(beta.unwrap_or(d.multi_echo.beta), tol.unwrap_or(d.multi_echo.tol), max_iter)
            };
            cfg.amp.validate()?;
        }
        Method::L1 => {
            cfg.l1.gamma = match gamma {
                Some(g) => g,
                None => default_gamma(&acq)?,
            };
            cfg.l1.tol = tol.unwrap_or(cfg.l1.tol);
            cfg.l1.max_iter = max_iter.unwrap_or(cfg.l1.max_iter);
            cfg.l1.validate()?;
        }
        Method::Lsq => {
            cfg.lsq_iters = max_iter.unwrap_or(cfg.lsq_iters);
            if cfg.lsq_iters == 0 {
                return Err(Error::invalid("max-iter must be at least 1").into());
            }
        }
    }
    let start = Instant::now();
    let result = run_method(&acq, method, &cfg)?;
    let run = RunLog::new(method, &cfg, &result);
    store::write_result(out, &result, &run)?;
    let mut line = format!("{method}: {:.1} s", start.elapsed().as_secs_f64());
    if let Some(p) = &run.params {
        line += &format!(", {} iterations, converged {}", run.iterations, run.converged);
        if let Some(t) = p.theta {
            line += &format!(", theta {t:.4e}");
        }
    }
    eprintln!("{line}");
    Ok(())
}

fn evaluate(input: &Path, reference: &Path, out: &Path) -> Result<()> {
    let m = evaluate_dirs(input, reference)?;
    io::write_json(out, &m)?;
    println!("nrmse x0 {:.4}  r2* {:.4}", m.nrmse_x0, m.nrmse_r2star);
    Ok(())
}

fn sweep(config: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    let start = Instant::now();
    let report = run_sweep(&cfg)?;
    for (map, name) in [(MapKind::X0, "x0"), (MapKind::R2star, "r2*")] {
        println!("NRMSE {name}");
        for &m in &report.methods {
            let row: Vec<String> = report.rates.iter().map(|&r| format_mean_std(report.mean_std(m, r, map))).collect();
            println!("  {:<7} {}", m.name(), row.join("  "));
        }
    }
    for c in report.failures() {
        eprintln!("failed: {} rate {} seed {}: {}", c.method, c.rate, c.seed, c.error.as_deref().unwrap_or(""));
    }
    eprintln!("{} cells in {:.0} s -> {}", report.cells.len(), start.elapsed().as_secs_f64(), cfg.out_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { spec, out } => simulate(spec.as_deref(), &out),
        Command::Sample { rate, seed, out, policy, full } => sample(rate, seed, &out, policy, full),
        Command::Reconstruct { method, input, out, beta, tol, max_iter, gamma } => {
            reconstruct(method, &input, &out, beta, tol, max_iter, gamma)
        }
        Command::Evaluate { input, reference, out } => evaluate(&input, &reference, &out),
        Command::Sweep { config } => sweep(&config),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_divergence() => 3,
        Some(e) if e.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
