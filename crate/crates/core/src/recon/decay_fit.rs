//! Per-voxel mono-exponential fits `s_i ~ x0 exp(-t_i r)`.
//!
//! Echo times are in ms and rates in 1/s throughout.

use crate::error::{Error, Result};
use crate::par;
use crate::volume::RealVolume;

pub const R2STAR_MAX: f64 = 2000.0;
/// Voxels whose proton density is below this fraction of the peak echo
/// magnitude get `r2* = 0`.
pub const SUPPORT_FRACTION: f64 = 0.05;

const MAX_STEPS: usize = 50;
const GRAD_TOL: f64 = 1e-10;

fn secs(t_ms: f64) -> f64 {
    t_ms * 1e-3
}

fn cost(s: &[f64], x0: f64, t: &[f64], r: f64) -> f64 {
    s.iter().zip(t).map(|(&si, &ti)| (si - x0 * (-secs(ti) * r).exp()).powi(2)).sum()
}

/// Log-linear estimate of `r` with `x0` fixed: least squares of
/// `log(s_i / x0) = -t_i r` over the positive samples.
fn log_linear_rate(s: &[f64], x0: f64, t: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (&si, &ti) in s.iter().zip(t) {
        if si > 0.0 {
            num -= secs(ti) * (si / x0).ln();
            den += secs(ti) * secs(ti);
        }
    }
    if den > 0.0 && num.is_finite() {
        (num / den).clamp(0.0, R2STAR_MAX)
    } else {
        0.0
    }
}

/// `argmin_{0 <= r <= R2STAR_MAX} sum_i (s_i - x0 exp(-t_i r))^2` by a
/// log-linear start and projected Gauss-Newton with backtracking.
pub fn fit_r2star_voxel(s: &[f64], x0: f64, times_ms: &[f64]) -> Result<f64> {
    if s.len() != times_ms.len() || s.len() < 2 {
        return Err(Error::invalid(format!("{} magnitudes for {} echo times (need >= 2)", s.len(), times_ms.len())));
    }
    if !x0.is_finite() || s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("decay fit input".into()));
    }
    if x0 <= 0.0 {
        return Ok(0.0);
    }
    Ok(fit_rate(s, x0, times_ms))
}

fn fit_rate(s: &[f64], x0: f64, t: &[f64]) -> f64 {
    let mut r = log_linear_rate(s, x0, t);
    let mut f = cost(s, x0, t, r);
    for _ in 0..MAX_STEPS {
        let (mut g, mut h) = (0.0, 0.0);
        for (&si, &ti) in s.iter().zip(t) {
            let ts = secs(ti);
            let m = x0 * (-ts * r).exp();
            let dm = -ts * m;
            g += (m - si) * dm;
            h += dm * dm;
        }
        if g.abs() < GRAD_TOL || h <= 0.0 {
            break;
        }
        let step = g / h;
        let mut alpha = 1.0;
        let mut moved = false;
        while alpha > 1e-10 {
            let cand = (r - alpha * step).clamp(0.0, R2STAR_MAX);
            let fc = cost(s, x0, t, cand);
            if fc <= f {
                moved = cand != r;
                r = cand;
                f = fc;
                break;
            }
            alpha *= 0.5;
        }
        if !moved || (alpha * step).abs() < 1e-13 * (1.0 + r) {
            break;
        }
    }
    r
}

/// Joint least-squares fit of `(x0, r)`: log-linear start, then
/// Levenberg-Marquardt on both parameters.
pub fn fit_decay_voxel(s: &[f64], times_ms: &[f64]) -> Result<(f64, f64)> {
    if s.len() != times_ms.len() || s.len() < 2 {
        return Err(Error::invalid("decay fit needs matching magnitudes and at least two echoes"));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("decay fit input".into()));
    }
    Ok(fit_joint(s, times_ms))
}

fn fit_joint(s: &[f64], t: &[f64]) -> (f64, f64) {
    // weighted log-linear start (weights s^2)
    let (mut sw, mut st, mut sl, mut stt, mut stl) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&si, &ti) in s.iter().zip(t) {
        if si > 0.0 {
            let w = si * si;
            let (ts, l) = (secs(ti), si.ln());
            sw += w;
            st += w * ts;
            sl += w * l;
            stt += w * ts * ts;
            stl += w * ts * l;
        }
    }
    let det = sw * stt - st * st;
    let (mut x0, mut r) = if sw > 0.0 && det > 1e-300 {
        let slope = (sw * stl - st * sl) / det;
        let icpt = (sl - slope * st) / sw;
        (icpt.exp(), (-slope).clamp(0.0, R2STAR_MAX))
    } else {
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        (mean.max(0.0), 0.0)
    };
    if x0 <= 0.0 || !x0.is_finite() {
        return (0.0, 0.0);
    }
    let mut f = cost(s, x0, t, r);
    let mut mu = 1e-3;
    for _ in 0..MAX_STEPS {
        // J columns: d/dx0 = e, d/dr = -t x0 e
        let (mut a11, mut a12, mut a22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&si, &ti) in s.iter().zip(t) {
            let ts = secs(ti);
            let e = (-ts * r).exp();
            let res = x0 * e - si;
            let (j1, j2) = (e, -ts * x0 * e);
            a11 += j1 * j1;
            a12 += j1 * j2;
            a22 += j2 * j2;
            g1 += j1 * res;
            g2 += j2 * res;
        }
        if g1.abs().max(g2.abs()) < GRAD_TOL {
            break;
        }
        let mut improved = false;
        for _ in 0..30 {
            let (b11, b22) = (a11 * (1.0 + mu), a22 * (1.0 + mu));
            let det = b11 * b22 - a12 * a12;
            if det <= 0.0 {
                mu *= 10.0;
                continue;
            }
            let d1 = (b22 * g1 - a12 * g2) / det;
            let d2 = (b11 * g2 - a12 * g1) / det;
            let (cx, cr) = ((x0 - d1).max(0.0), (r - d2).clamp(0.0, R2STAR_MAX));
            let fc = cost(s, cx, t, cr);
            if fc <= f {
                let small = (cx - x0).abs() < 1e-14 * (1.0 + x0) && (cr - r).abs() < 1e-12 * (1.0 + r);
                x0 = cx;
                r = cr;
                f = fc;
                mu = (mu * 0.3).max(1e-12);
                improved = !small;
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (x0, r)
}

/// Per-echo magnitudes for voxel `n`.
fn voxel_series(mags: &[&[f64]], n: usize) -> Vec<f64> {
    mags.iter().map(|m| m[n]).collect()
}

// Anchored to the observed magnitudes: a joint fit in a noise-only voxel can
// extrapolate x0 far above anything measured.
fn support_cut(mags: &[&[f64]]) -> f64 {
    let peak = mags.iter().flat_map(|m| m.iter()).cloned().filter(|v| v.is_finite()).fold(0.0, f64::max);
    SUPPORT_FRACTION * peak
}

/// Refits `r2*` at every voxel for fixed `x0`; voxels below the support
/// threshold get 0.
pub fn refit_r2star(mags: &[&[f64]], x0: &[f64], times_ms: &[f64]) -> Result<Vec<f64>> {
    if mags.len() != times_ms.len() || mags.iter().any(|m| m.len() != x0.len()) {
        return Err(Error::ShapeMismatch("echo magnitudes do not match x0".into()));
    }
    let cut = support_cut(mags);
    let out = par::collect_indexed(x0.len(), |n| {
        if x0[n] <= cut || x0[n] <= 0.0 {
            return 0.0;
        }
        let s = voxel_series(mags, n);
        if s.iter().any(|v| !v.is_finite()) {
            return f64::NAN;
        }
        fit_rate(&s, x0[n], times_ms)
    });
    if out.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("echo magnitudes".into()));
    }
    Ok(out)
}

/// Joint fit of `x0` then `r2*` refit with that `x0`, at every voxel.
pub fn fit_decay_maps(mags: &[&[f64]], times_ms: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if mags.len() != times_ms.len() || mags.len() < 2 {
        return Err(Error::ShapeMismatch("need one magnitude image per echo (at least two)".into()));
    }
    let n = mags[0].len();
    if mags.iter().any(|m| m.len() != n) {
        return Err(Error::ShapeMismatch("echo magnitudes differ in length".into()));
    }
    let x0 = par::collect_indexed(n, |v| {
        let s = voxel_series(mags, v);
        if s.iter().any(|v| !v.is_finite()) {
            f64::NAN
        } else {
            fit_joint(&s, times_ms).0
        }
    });
    if x0.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("echo magnitudes".into()));
    }
    let r2 = refit_r2star(mags, &x0, times_ms)?;
    Ok((x0, r2))
}

/// Convenience wrapper over volumes.
pub fn fit_decay_volumes(mags: &[RealVolume], times_ms: &[f64]) -> Result<(RealVolume, RealVolume)> {
    let shape = mags.first().ok_or_else(|| Error::invalid("no echoes"))?.shape();
    let slices: Vec<&[f64]> = mags.iter().map(|m| m.data()).collect();
    let (x0, r2) = fit_decay_maps(&slices, times_ms)?;
    Ok((RealVolume::from_vec(shape, x0)?, RealVolume::from_vec(shape, r2)?))
}

/// Median over voxels in `support` of the decay residual
/// `sum_i (s_i - x0 exp(-t_i r))^2`.
pub fn median_decay_residual(mags: &[&[f64]], x0: &[f64], r2: &[f64], times_ms: &[f64], support: &[bool]) -> f64 {
    let mut res: Vec<f64> = (0..x0.len())
        .filter(|&n| support[n])
        .map(|n| cost(&voxel_series(mags, n), x0[n], times_ms, r2[n]))
        .collect();
    if res.is_empty() {
        return 0.0;
    }
    res.sort_by(f64::total_cmp);
    res[res.len() / 2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::protocol_echo_times;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn series(x0: f64, r: f64, t: &[f64]) -> Vec<f64> {
        t.iter().map(|&ti| x0 * (-ti * 1e-3 * r).exp()).collect()
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let t = protocol_echo_times();
        for r in [0.0, 5.0, 20.0, 50.0, 100.0, 400.0] {
            let got = fit_r2star_voxel(&series(1.0, r, &t), 1.0, &t).unwrap();
            assert!((got - r).abs() < 1e-6, "{r}: {got}");
        }
        let (x0, r) = fit_decay_voxel(&series(0.8, 50.0, &t), &t).unwrap();
        assert!((x0 - 0.8).abs() < 1e-9 && (r - 50.0).abs() < 1e-6);
    }

    #[test]
    fn constant_series_gives_zero_rate() {
        let t = protocol_echo_times();
        assert_eq!(fit_r2star_voxel(&[0.7; 6], 0.7, &t).unwrap(), 0.0);
    }

    #[test]
    fn invalid_inputs() {
        let t = protocol_echo_times();
        assert!(fit_r2star_voxel(&[1.0], 1.0, &t[..1]).is_err());
        assert!(fit_r2star_voxel(&[f64::NAN; 6], 1.0, &t).is_err());
        assert_eq!(fit_r2star_voxel(&[1.0; 6], 0.0, &t).unwrap(), 0.0);
    }

    #[test]
    fn noisy_fit_matches_grid_search() {
        let t = protocol_echo_times();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.01).unwrap();
        for (k, r_true) in [20.0, 50.0, 100.0, 180.0].into_iter().enumerate() {
            let s: Vec<f64> = series(1.0, r_true, &t).iter().map(|v| v + noise.sample(&mut rng)).collect();
            let got = fit_r2star_voxel(&s, 1.0, &t).unwrap();
            let mut best = (f64::INFINITY, 0.0);
            for i in 0..=500_000 {
                let r = i as f64 * 0.001;
                let c = cost(&s, 1.0, &t, r);
                if c < best.0 {
                    best = (c, r);
                }
            }
            assert!((got - best.1).abs() <= 0.01, "case {k}: {got} vs {}", best.1);
        }
    }

    #[test]
    fn maps_respect_support_threshold() {
        let t = protocol_echo_times();
        let a = series(1.0, 50.0, &t);
        let b = series(0.01, 80.0, &t);
        let mags: Vec<Vec<f64>> = (0..t.len()).map(|i| vec![a[i], b[i], 0.0]).collect();
        let refs: Vec<&[f64]> = mags.iter().map(|m| m.as_slice()).collect();
        let (x0, r2) = fit_decay_maps(&refs, &t).unwrap();
        assert!((r2[0] - 50.0).abs() < 1e-6);
        assert_eq!(r2[1], 0.0);
        assert_eq!((x0[2], r2[2]), (0.0, 0.0));
    }
}
