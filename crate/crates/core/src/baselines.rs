//! Reference reconstructions: least squares by conjugate gradients and
//! l1-regularized wavelet recovery by FISTA. Both feed the same per-voxel
//! decay fit as the AMP pipeline.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::Acquisition;
use crate::amp::soft_threshold_complex;
use crate::error::{Error, Result};
use crate::metrics::nrmse;
use crate::operators::{norm_sq, random_complex, Composed, LinearOperator, WaveletSynthesis};
use crate::par;
use crate::recon::fit_decay_volumes;
use crate::volume::{ComplexVolume, EchoSeries, RealVolume};
use crate::wavelet::Dwt3;

pub const DEFAULT_LSQ_ITERS: usize = 15;

#[derive(Debug, Clone, PartialEq)]
pub struct CgResult {
    pub x: Vec<Complex64>,
    /// `||y - A x_k||` after each iteration (index 0 is the start); stops
    /// early once the gradient vanishes.
    pub residuals: Vec<f64>,
}

/// Conjugate gradients on `A^H A x = A^H y` (CGLS form, which keeps the
/// data residual monotone).
pub fn cg_normal(op: &dyn LinearOperator, y: &[Complex64], iters: usize, start: Option<&[Complex64]>) -> Result<CgResult> {
    if y.len() != op.range_len() {
        return Err(Error::ShapeMismatch(format!("{} samples for {} operator rows", y.len(), op.range_len())));
    }
    let n = op.domain_len();
    let mut x = match start {
        Some(s) if s.len() == n => s.to_vec(),
        Some(s) => return Err(Error::ShapeMismatch(format!("start has {} entries, expected {n}", s.len()))),
        None => vec![Complex64::default(); n],
    };
    let mut r: Vec<Complex64> = if start.is_some() {
        let ax = op.apply(&x);
        y.iter().zip(&ax).map(|(a, b)| a - b).collect()
    } else {
        y.to_vec()
    };
    let mut s = op.adjoint(&r);
    let mut p = s.clone();
    let mut gamma = norm_sq(&s);
    // below this the normal-equation gradient is rounding noise
    let floor = gamma * 1e-28;
    let mut residuals = vec![norm_sq(&r).sqrt()];
    for _ in 0..iters {
        if gamma <= floor || gamma == 0.0 {
            break;
        }
        let q = op.apply(&p);
        let qq = norm_sq(&q);
        if qq == 0.0 {
            break;
        }
        let alpha = gamma / qq;
        par::for_each_chunk_mut(&mut x, par::REDUCE_CHUNK, |c, xs| {
            let off = c * par::REDUCE_CHUNK;
            xs.iter_mut().enumerate().for_each(|(i, v)| *v += p[off + i] * alpha);
        });
        par::for_each_chunk_mut(&mut r, par::REDUCE_CHUNK, |c, rs| {
            let off = c * par::REDUCE_CHUNK;
            rs.iter_mut().enumerate().for_each(|(i, v)| *v -= q[off + i] * alpha);
        });
        residuals.push(norm_sq(&r).sqrt());
        s = op.adjoint(&r);
        let g_new = norm_sq(&s);
        let b = g_new / gamma;
        gamma = g_new;
        p = par::collect_indexed(n, |i| s[i] + p[i] * b);
    }
    Ok(CgResult { x, residuals })
}

/// Per-echo least-squares images.
pub fn lsq_recon(acq: &Acquisition, iters: usize) -> Result<EchoSeries<Complex64>> {
    let ops = acq.encoders()?;
    let jobs: Vec<usize> = (0..acq.echoes()).collect();
    let images = par::map_jobs(&jobs, |&i| {
        let res = cg_normal(&ops[i], &acq.kspace[i], iters, None)?;
        ComplexVolume::from_vec(acq.shape(), res.x)
    });
    EchoSeries::new(images.into_iter().collect::<Result<_>>()?, acq.times_ms.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L1Config {
    pub gamma: f64,
    pub max_iter: usize,
    /// Relative-change stopping tolerance.
    pub tol: f64,
    /// Power iterations for the Lipschitz constant.
    pub power_iters: usize,
}

impl L1Config {
    pub fn new(gamma: f64) -> Self {
        Self { gamma, max_iter: 40, tol: 1e-4, power_iters: 15 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("l1 weight must be positive, got {}", self.gamma)));
        }
        if self.max_iter == 0 || self.power_iters == 0 {
            return Err(Error::invalid("iteration counts must be positive"));
        }
        Ok(())
    }
}

/// Largest eigenvalue of `G^H G` by power iteration, padded by 1%.
pub fn lipschitz_estimate(op: &dyn LinearOperator, iters: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = random_complex(&mut rng, op.domain_len(), 1.0);
    let mut est = 0.0;
    for _ in 0..iters.max(1) {
        let nv = norm_sq(&v).sqrt();
        if !(nv > 0.0 && nv.is_finite()) {
            return Err(Error::DegenerateOperator("power iteration collapsed".into()));
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let w = op.adjoint(&op.apply(&v));
        est = crate::operators::inner(&v, &w).re;
        v = w;
    }
    if !(est > 0.0 && est.is_finite()) {
        return Err(Error::DegenerateOperator(format!("Lipschitz estimate {est}")));
    }
    Ok(est * 1.01)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FistaResult {
    pub v: Vec<Complex64>,
    /// Objective at each accepted iterate.
    pub objective: Vec<f64>,
    pub restarts: usize,
    pub iterations: usize,
}

fn l1_objective(gv: &[Complex64], y: &[Complex64], v: &[Complex64], gamma: f64) -> f64 {
    let fit = par::sum_indexed(y.len(), |m| (gv[m] - y[m]).norm_sqr());
    let reg = par::sum_map(v, |c| c.norm());
    0.5 * fit + gamma * reg
}

/// FISTA on `1/2 ||G v - y||^2 + gamma ||v||_1` with restart whenever the
/// objective would increase.
pub fn fista_l1(op: &dyn LinearOperator, y: &[Complex64], cfg: &L1Config, lipschitz: f64) -> Result<FistaResult> {
    cfg.validate()?;
    if y.len() != op.range_len() {
        return Err(Error::ShapeMismatch("sample count does not match the operator".into()));
    }
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(Error::DegenerateOperator(format!("Lipschitz constant {lipschitz}")));
    }
    let n = op.domain_len();
    let step = 1.0 / lipschitz;
    let thresh = cfg.gamma * step;
    let mut x = vec![Complex64::default(); n];
    let mut gx = vec![Complex64::default(); y.len()];
    let mut fx = l1_objective(&gx, y, &x, cfg.gamma);
    let mut z = x.clone();
    let mut gz = gx.clone();
    let mut t = 1.0f64;
    let mut objective = vec![fx];
    let mut restarts = 0;
    let mut fresh = true;
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        let resid: Vec<Complex64> = par::collect_indexed(y.len(), |m| gz[m] - y[m]);
        let grad = op.adjoint(&resid);
        let x_new: Vec<Complex64> = par::collect_indexed(n, |k| soft_threshold_complex(z[k] - grad[k] * step, thresh));
        let gx_new = op.apply(&x_new);
        let f_new = l1_objective(&gx_new, y, &x_new, cfg.gamma);
        if f_new > fx && !fresh {
            // drop the momentum and retry from the last accepted iterate
            restarts += 1;
            t = 1.0;
            z.clone_from(&x);
            gz.clone_from(&gx);
            fresh = true;
            continue;
        }
        fresh = false;
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_new;
        z = par::collect_indexed(n, |k| x_new[k] + (x_new[k] - x[k]) * mom);
        gz = par::collect_indexed(y.len(), |m| gx_new[m] + (gx_new[m] - gx[m]) * mom);
        let dx = par::sum_indexed(n, |k| (x_new[k] - x[k]).norm_sqr());
        let xx = norm_sq(&x);
        x = x_new;
        gx = gx_new;
        fx = f_new.min(fx);
        objective.push(f_new);
        t = t_new;
        if xx > 0.0 && (dx / xx).sqrt() < cfg.tol {
            break;
        }
        if xx == 0.0 && dx == 0.0 {
            break;
        }
    }
    Ok(FistaResult { v: x, objective, restarts, iterations })
}

/// Per-echo l1-wavelet images `H^-1 v`.
pub fn fista_l1_recon(acq: &Acquisition, dwt: &Dwt3, cfg: &L1Config) -> Result<EchoSeries<Complex64>> {
    cfg.validate()?;
    let ops = acq.encoders()?;
    let jobs: Vec<usize> = (0..acq.echoes()).collect();
    let images = par::map_jobs(&jobs, |&i| {
        let g = Composed { outer: &ops[i], inner: WaveletSynthesis(dwt.clone()) };
        let l = lipschitz_estimate(&g, cfg.power_iters, 0x11f5 + i as u64)?;
        let res = fista_l1(&g, &acq.kspace[i], cfg, l)?;
        ComplexVolume::from_vec(acq.shape(), dwt.inverse(&res.v))
    });
    EchoSeries::new(images.into_iter().collect::<Result<_>>()?, acq.times_ms.clone())
}

/// `(x0, r2*)` from reconstructed echoes by the per-voxel decay fit.
pub fn decay_maps(echoes: &EchoSeries<Complex64>) -> Result<(RealVolume, RealVolume)> {
    let mags: Vec<RealVolume> = echoes.echoes().iter().map(|e| e.magnitude()).collect();
    fit_decay_volumes(&mags, echoes.times_ms())
}

/// `points` log-spaced values spanning `decades` decades centered on `center`.
pub fn gamma_grid(center: f64, points: usize, decades: f64) -> Vec<f64> {
    if points == 1 {
        return vec![center];
    }
    (0..points)
        .map(|k| center * 10f64.powf(decades * (k as f64 / (points - 1) as f64 - 0.5)))
        .collect()
}

/// Noise-scaled center of the grid, `theta sqrt(2 log N)` times the RMS
/// column norm `sqrt(||G||_F^2 / N)` (the noise level of `G^H y` per
/// coefficient).
pub fn gamma_center(theta: f64, unknowns: usize, frob_sq: f64) -> f64 {
    let n = unknowns as f64;
    theta * (2.0 * n.ln()).sqrt() * (frob_sq / n).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaTuning {
    pub best: f64,
    /// `(gamma, r2* NRMSE)` per grid point.
    pub scores: Vec<(f64, f64)>,
}

/// Picks the grid value with the lowest `r2*` NRMSE on a training scan.
pub fn tune_gamma(
    train: &Acquisition,
    truth_r2: &RealVolume,
    support: &RealVolume,
    dwt: &Dwt3,
    grid: &[f64],
    base: &L1Config,
) -> Result<GammaTuning> {
    if grid.is_empty() {
        return Err(Error::invalid("empty regularization grid"));
    }
    if grid.len() == 1 {
        return Ok(GammaTuning { best: grid[0], scores: vec![(grid[0], f64::NAN)] });
    }
    let scores = par::map_jobs(grid, |&gamma| -> Result<(f64, f64)> {
        let cfg = L1Config { gamma, ..*base };
        let echoes = fista_l1_recon(train, dwt, &cfg)?;
        let (_, r2) = decay_maps(&echoes)?;
        Ok((gamma, nrmse(&r2, truth_r2, support)?))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let best = scores.iter().min_by(|a, b| a.1.total_cmp(&b.1)).map(|s| s.0).unwrap_or(grid[0]);
    Ok(GammaTuning { best, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{DenseMatrix, Identity};
    use rand::Rng;

    fn dense(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::new(rows, cols, random_complex(&mut rng, rows * cols, 1.0 / rows as f64)).unwrap()
    }

    #[test]
    fn cg_on_identity_is_exact_in_one_step() {
        let y: Vec<Complex64> = (0..8).map(|i| Complex64::new(i as f64, -1.0)).collect();
        let r = cg_normal(&Identity(8), &y, 2, None).unwrap();
        assert_eq!(r.x, y);
        let z = cg_normal(&Identity(8), &vec![Complex64::default(); 8], 5, None).unwrap();
        assert!(z.x.iter().all(|v| *v == Complex64::default()));
    }

    #[test]
    fn cg_residual_is_monotone_and_converges() {
        let a = dense(30, 12, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = random_complex(&mut rng, 30, 1.0);
        let r = cg_normal(&a, &y, 12, None).unwrap();
        for w in r.residuals.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        // normal equations satisfied at the end
        let ax = a.apply(&r.x);
        let res: Vec<Complex64> = y.iter().zip(&ax).map(|(a, b)| a - b).collect();
        assert!(norm_sq(&a.adjoint(&res)).sqrt() < 1e-8);
    }

    #[test]
    fn lipschitz_of_identity_is_one() {
        let l = lipschitz_estimate(&Identity(16), 5, 1).unwrap();
        assert!((l - 1.01).abs() < 1e-12);
    }

    #[test]
    fn vanishing_weight_matches_least_squares() {
        let y: Vec<Complex64> = (0..16).map(|i| Complex64::new((i as f64).sin(), 0.3)).collect();
        let cfg = L1Config { gamma: 1e-12, max_iter: 200, tol: 1e-14, power_iters: 5 };
        let r = fista_l1(&Identity(16), &y, &cfg, 1.0).unwrap();
        for (a, b) in r.v.iter().zip(&y) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn huge_weight_gives_zero() {
        let a = dense(10, 16, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = random_complex(&mut rng, 10, 1.0);
        let cfg = L1Config::new(1e6);
        let r = fista_l1(&a, &y, &cfg, lipschitz_estimate(&a, 50, 1).unwrap()).unwrap();
        assert!(r.v.iter().all(|v| *v == Complex64::default()));
    }

    /// Cyclic coordinate descent on the same objective, run to stagnation.
    fn coordinate_descent(a: &DenseMatrix, y: &[Complex64], gamma: f64) -> Vec<Complex64> {
        let (m, n) = (a.rows, a.cols);
        let mut v = vec![Complex64::default(); n];
        let mut r = y.to_vec();
        for _ in 0..100_000 {
            let mut moved = 0.0f64;
            for k in 0..n {
                let col: Vec<Complex64> = (0..m).map(|i| a.at(i, k)).collect();
                let cc: f64 = col.iter().map(|c| c.norm_sqr()).sum();
                let rho: Complex64 = col.iter().zip(&r).map(|(c, ri)| c.conj() * ri).sum::<Complex64>() + v[k] * cc;
                let new = soft_threshold_complex(rho / cc, gamma / cc);
                let d = new - v[k];
                if d != Complex64::default() {
                    for i in 0..m {
                        r[i] -= col[i] * d;
                    }
                    moved = moved.max(d.norm());
                    v[k] = new;
                }
            }
            if moved < 1e-15 {
                break;
            }
        }
        v
    }

    #[test]
    fn fista_matches_coordinate_descent_objective() {
        let a = dense(12, 16, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let truth: Vec<Complex64> = (0..16)
            .map(|k| if k % 5 == 0 { Complex64::new(rng.random_range(-2.0..2.0), 1.0) } else { Complex64::default() })
            .collect();
        let mut y = a.apply(&truth);
        y.iter_mut().zip(random_complex(&mut rng, 12, 0.01)).for_each(|(a, b)| *a += b);
        let gamma = 0.05;
        let cfg = L1Config { gamma, max_iter: 20_000, tol: 1e-15, power_iters: 100 };
        let r = fista_l1(&a, &y, &cfg, lipschitz_estimate(&a, 200, 3).unwrap()).unwrap();
        for w in r.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let cd = coordinate_descent(&a, &y, gamma);
        let f_fista = l1_objective(&a.apply(&r.v), &y, &r.v, gamma);
        let f_cd = l1_objective(&a.apply(&cd), &y, &cd, gamma);
        assert!((f_fista - f_cd).abs() <= 1e-8, "{f_fista} vs {f_cd}");
    }

    #[test]
    fn grid_shape() {
        let g = gamma_grid(1.0, 10, 4.0);
        assert_eq!(g.len(), 10);
        assert!((g[0] - 1e-2).abs() < 1e-15 && (g[9] - 1e2).abs() < 1e-10);
        for w in g.windows(2) {
            assert!((w[1] / w[0] - 10f64.powf(4.0 / 9.0)).abs() < 1e-9);
        }
        assert_eq!(gamma_grid(0.3, 1, 4.0), vec![0.3]);
    }
}
