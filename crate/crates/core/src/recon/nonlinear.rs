//! Nonlinear AMP coupling the per-echo images to the mono-exponential
//! decay model `|x_i| = exp(-t_i r2*) H^-1 v0`.
//!
//! The decay operator `E` stacks the echoes echo-major: row `i N + n`
//! holds `exp(-t_i r_n)` times row `n` of `H^-1`.

use num_complex::Complex64;

use super::decay_fit::refit_r2star;
use super::{damping_for, phase_of, relative_change, AmpConfig, EchoData, IterationLog, Monitor, MultiEchoPrior};
use crate::amp::{
    damp_values, denoise_laplace_real, estimate_lambda, output_update, theta_from_moments, theta_moments,
    GaussianMessage, NoiseParams, Variance, VARIANCE_FLOOR,
};
use crate::error::{Error, Result};
use crate::operators::decay_factor;
use crate::par;
use crate::volume::{validate_echo_times, Scalar};
use crate::wavelet::Dwt3;

/// Slots of one echo. All variances are shared scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearEcho {
    pub mu1: Vec<Complex64>,
    pub tau1: f64,
    pub mu2: Vec<Complex64>,
    pub tau2: f64,
    pub mu3: Vec<Complex64>,
    pub tau3: f64,
    pub mu4: Vec<f64>,
    pub tau4: f64,
    pub mu5: Vec<f64>,
    pub tau5: f64,
    pub mu7: Vec<f64>,
    pub tau7: f64,
    pub mu_s: Vec<f64>,
    pub tau_s: f64,
    pub mu_x: Vec<Complex64>,
    pub tau_x: f64,
    pub mu8: Vec<Complex64>,
    pub tau8: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearState {
    pub mu_v0: Vec<f64>,
    pub tau_v0: Vec<f64>,
    pub mu6: Vec<f64>,
    pub tau6: f64,
    pub lambda0: f64,
    pub r2star: Vec<f64>,
    pub echoes: Vec<NonlinearEcho>,
    pub theta_sq: f64,
    pub iteration: usize,
}

impl NonlinearState {
    /// `x0 = H^-1 mu_v0`
    pub fn x0(&self, dwt: &Dwt3) -> Vec<f64> {
        dwt.inverse(&self.mu_v0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearInit {
    pub x0: Vec<f64>,
    pub r2star: Vec<f64>,
    /// Initial complex images (usually the prior means).
    pub x: Vec<Vec<Complex64>>,
    /// Initial image variance per echo.
    pub tau_x: Vec<f64>,
    /// Initial coefficient variance of `v0`.
    pub tau_v0: f64,
    pub theta_sq: f64,
}

pub struct NonlinearSolver<'a> {
    data: Vec<EchoData<'a>>,
    dwt: Dwt3,
    times_ms: Vec<f64>,
    prior_means: Vec<Vec<Complex64>>,
    prior_vars: Vec<f64>,
    cfg: AmpConfig,
    state: NonlinearState,
    monitor: Monitor,
    beta: f64,
    log: Vec<IterationLog>,
}

fn decay_weights(r2: &[f64], times_ms: &[f64]) -> Vec<Vec<f64>> {
    times_ms
        .iter()
        .map(|&t| par::collect_indexed(r2.len(), |n| decay_factor(t, r2[n])))
        .collect()
}

fn frob_e(weights: &[Vec<f64>]) -> f64 {
    weights.iter().map(|w| par::sum_map(w, |b| b * b)).sum()
}

impl<'a> NonlinearSolver<'a> {
    pub fn new(
        data: Vec<EchoData<'a>>,
        dwt: Dwt3,
        times_ms: &[f64],
        prior: &MultiEchoPrior,
        init: NonlinearInit,
        cfg: AmpConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        validate_echo_times(times_ms)?;
        let echoes = data.len();
        let n = dwt.shape().len();
        if echoes != times_ms.len() {
            return Err(Error::ShapeMismatch(format!("{echoes} echoes, {} echo times", times_ms.len())));
        }
        prior.validate(dwt.shape(), echoes)?;
        if data.iter().any(|d| d.op.domain_len() != n) {
            return Err(Error::ShapeMismatch("encoding operators do not act on the image grid".into()));
        }
        if init.x0.len() != n || init.r2star.len() != n || init.x.len() != echoes || init.tau_x.len() != echoes {
            return Err(Error::ShapeMismatch("initialization does not match the problem".into()));
        }
        if init.x.iter().any(|x| x.len() != n) {
            return Err(Error::ShapeMismatch("initial images do not match the grid".into()));
        }
        let mu_v0 = dwt.forward(&init.x0);
        let tau_v0 = init.tau_v0.max(0.0);
        let weights = decay_weights(&init.r2star, times_ms);
        let e_sq = frob_e(&weights);
        let tau7 = e_sq / (echoes * n) as f64 * tau_v0;
        let states = data
            .iter()
            .zip(&init.x)
            .zip(&init.tau_x)
            .zip(&weights)
            .map(|(((d, x), &tau_x), w)| {
                let f = d.frobenius();
                let tau8 = f.output_variance(tau_x);
                NonlinearEcho {
                    mu1: vec![Complex64::default(); d.y.len()],
                    tau1: 0.0,
                    mu2: vec![Complex64::default(); n],
                    tau2: 0.0,
                    mu3: x.clone(),
                    tau3: 0.0,
                    mu4: vec![0.0; n],
                    tau4: 0.0,
                    mu5: vec![0.0; n],
                    tau5: 0.0,
                    mu7: w.iter().zip(&init.x0).map(|(b, x)| b * x).collect(),
                    tau7,
                    mu_s: x.iter().map(|v| v.norm()).collect(),
                    tau_s: tau_x,
                    mu_x: x.clone(),
                    tau_x,
                    mu8: d.op.apply(x),
                    tau8,
                }
            })
            .collect();
        let beta = damping_for(&data, cfg.beta);
        Ok(Self {
            prior_means: prior.means.iter().map(|m| m.data().to_vec()).collect(),
            prior_vars: prior.variances.clone(),
            data,
            dwt,
            times_ms: times_ms.to_vec(),
            cfg,
            state: NonlinearState {
                mu6: vec![0.0; n],
                tau6: 0.0,
                lambda0: 1.0,
                tau_v0: vec![tau_v0; n],
                mu_v0,
                r2star: init.r2star,
                echoes: states,
                theta_sq: NoiseParams::new(init.theta_sq).theta_sq,
                iteration: 0,
            },
            monitor: Monitor::new("nonlinear"),
            beta,
            log: Vec::new(),
        })
    }

    pub fn state(&self) -> &NonlinearState {
        &self.state
    }

    pub fn dwt(&self) -> &Dwt3 {
        &self.dwt
    }

    pub fn trace(&self) -> &[f64] {
        &self.monitor.trace
    }

    pub fn step(&mut self) -> Result<f64> {
        let beta = self.beta;
        let n = self.dwt.shape().len();
        let echoes = self.data.len();
        let noise = NoiseParams::new(self.state.theta_sq);
        let weights = decay_weights(&self.state.r2star, &self.times_ms);
        let e_sq = frob_e(&weights);

        // slots 1-5 per echo
        struct Front {
            mu1: Vec<Complex64>,
            tau1: f64,
            mu2: Vec<Complex64>,
            tau2: f64,
            mu3: Vec<Complex64>,
            tau3: f64,
            mu4: Vec<f64>,
            tau4: f64,
            mu5: Vec<f64>,
            tau5: f64,
        }
        let jobs: Vec<usize> = (0..echoes).collect();
        let fronts: Vec<Result<Front>> = par::map_jobs(&jobs, |&i| {
            let d = &self.data[i];
            let old = &self.state.echoes[i];
            let f = d.frobenius();
            let out = output_update(d.y, &GaussianMessage::shared(old.mu8.clone(), old.tau8), &noise)?;
            let tau1 = out.var.get(0);
            let back = d.op.adjoint(&out.mean);
            let tau2 = f.input_variance(tau1)?;
            let mu2: Vec<Complex64> = par::collect_indexed(n, |k| old.mu_x[k] + back[k] * tau2);
            let (pm, pv) = (&self.prior_means[i], self.prior_vars[i]);
            let tau3 = fuse_var(tau2, pv);
            let mu3: Vec<Complex64> = par::collect_indexed(n, |k| fuse_mean(tau2, mu2[k], pv, pm[k]));
            let mu4: Vec<f64> = mu3.iter().map(|v| v.norm()).collect();
            let tau4 = tau3;
            let tau5 = 1.0 / (tau4 + old.tau7);
            let mu5: Vec<f64> = par::collect_indexed(n, |k| (mu4[k] - old.mu7[k]) * tau5);
            Ok(Front { mu1: out.mean, tau1, mu2, tau2, mu3, tau3, mu4, tau4, mu5, tau5 })
        });
        let fronts: Vec<Front> = fronts.into_iter().collect::<Result<_>>()?;

        // slot 6 and the v0 denoiser
        let mean_tau5 = fronts.iter().map(|f| f.tau5).sum::<f64>() / echoes as f64;
        let denom = e_sq / n as f64 * mean_tau5;
        if !(denom > 0.0 && denom.is_finite()) {
            return Err(Error::DegenerateOperator(format!("decay operator variance denominator {denom}")));
        }
        let tau6 = 1.0 / denom;
        let mut ete = vec![0.0; n];
        for (w, f) in weights.iter().zip(&fronts) {
            for k in 0..n {
                ete[k] += w[k] * f.mu5[k];
            }
        }
        let et = self.dwt.forward(&ete);
        let mu6: Vec<f64> = par::collect_indexed(n, |k| self.state.mu_v0[k] + tau6 * et[k]);
        let msg6 = GaussianMessage::shared(mu6, tau6);
        let lambda0 = estimate_lambda(&msg6);
        let den = denoise_laplace_real(&msg6, lambda0);
        let mu_v0 = damp_values(&den.mean, &self.state.mu_v0, beta);
        let tau_v0 = damp_values(&den.var.to_vec(n), &self.state.tau_v0, beta);

        // slot 7, s fusion
        let mean_tau_v0 = Variance::PerElement(tau_v0.clone()).mean(n);
        let tau7 = e_sq / (echoes * n) as f64 * mean_tau_v0;
        let x0 = self.dwt.inverse(&mu_v0);
        let mut mu7s = Vec::with_capacity(echoes);
        let mut mu_ss = Vec::with_capacity(echoes);
        let mut tau_ss = Vec::with_capacity(echoes);
        for (i, f) in fronts.iter().enumerate() {
            let w = &weights[i];
            let mu7: Vec<f64> = par::collect_indexed(n, |k| w[k] * x0[k] - tau7 * f.mu5[k]);
            let tau_s_new = fuse_var(tau7, f.tau4);
            let mu_s_new: Vec<f64> = par::collect_indexed(n, |k| fuse_mean(f.tau4, f.mu4[k], tau7, mu7[k]));
            let old = &self.state.echoes[i];
            mu_ss.push(damp_values(&mu_s_new, &old.mu_s, beta));
            tau_ss.push(beta * tau_s_new + (1.0 - beta) * old.tau_s);
            mu7s.push(mu7);
        }

        // r2* refit against the fused magnitudes
        let mags: Vec<&[f64]> = mu_ss.iter().map(|m| m.as_slice()).collect();
        let r2star = refit_r2star(&mags, &x0, &self.times_ms)?;

        // x reassembly and slot 8
        let mut new_echoes = Vec::with_capacity(echoes);
        for (i, f) in fronts.into_iter().enumerate() {
            let d = &self.data[i];
            let old = &self.state.echoes[i];
            let mu_s = std::mem::take(&mut mu_ss[i]);
            let tau_s = tau_ss[i];
            let mu_x: Vec<Complex64> = par::collect_indexed(n, |k| phase_of(f.mu3[k]) * mu_s[k]);
            // The phase of x follows mu3 with slope |mu_s|/|mu3|, so the
            // variance averages that tangential slope with the radial one.
            let ratio = par::sum_indexed(n, |k| {
                let m = f.mu3[k].norm();
                if m > 0.0 {
                    mu_s[k].abs() / m
                } else {
                    0.0
                }
            }) / n as f64;
            let tau_x = 0.5 * (tau_s + f.tau3 * ratio);
            let fr = d.frobenius();
            let tau8_new = fr.output_variance(tau_x);
            let ax = d.op.apply(&mu_x);
            let mu8_new: Vec<Complex64> = par::collect_indexed(ax.len(), |m| ax[m] - f.mu1[m] * tau8_new);
            let mu8 = damp_values(&mu8_new, &old.mu8, beta);
            let tau8 = beta * tau8_new + (1.0 - beta) * old.tau8;
            new_echoes.push(NonlinearEcho {
                mu1: f.mu1,
                tau1: f.tau1,
                mu2: f.mu2,
                tau2: f.tau2,
                mu3: f.mu3,
                tau3: f.tau3,
                mu4: f.mu4,
                tau4: f.tau4,
                mu5: f.mu5,
                tau5: f.tau5,
                mu7: std::mem::take(&mut mu7s[i]),
                tau7,
                mu_s,
                tau_s,
                mu_x,
                tau_x,
                mu8,
                tau8,
            });
        }
        let moments = self
            .data
            .iter()
            .zip(&new_echoes)
            .map(|(d, e)| theta_moments(d.y, &GaussianMessage::shared(e.mu8.clone(), e.tau8)))
            .collect::<Result<Vec<_>>>()?;
        let theta_sq = beta * theta_from_moments(&moments, VARIANCE_FLOOR) + (1.0 - beta) * self.state.theta_sq;

        let change_v = relative_change(std::slice::from_ref(&mu_v0), std::slice::from_ref(&self.state.mu_v0));
        let change_x = relative_change(
            &new_echoes.iter().map(|e| e.mu_x.clone()).collect::<Vec<_>>(),
            &self.state.echoes.iter().map(|e| e.mu_x.clone()).collect::<Vec<_>>(),
        );
        let change = change_v.max(change_x);
        self.state = NonlinearState {
            mu_v0,
            tau_v0,
            mu6: msg6.mean,
            tau6,
            lambda0,
            r2star,
            echoes: new_echoes,
            theta_sq,
            iteration: self.state.iteration + 1,
        };
        self.log.push(IterationLog { iteration: self.state.iteration, change, lambda: lambda0, theta: theta_sq.sqrt(), beta });
        self.monitor.push(change)?;
        Ok(change)
    }

    /// Iterates to convergence; returns the final state, trace, log and
    /// whether the tolerance was reached.
    pub fn run(mut self) -> Result<(NonlinearState, Vec<f64>, Vec<IterationLog>, bool)> {
        let mut converged = false;
        while self.state.iteration < self.cfg.max_iter {
            if self.step()? < self.cfg.tol {
                converged = true;
                break;
            }
        }
        Ok((self.state, self.monitor.trace, self.log, converged))
    }
}

pub(crate) fn fuse_var(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        a * b / (a + b)
    } else {
        0.0
    }
}

/// Mean of the product of `N(ma, va)` and `N(mb, vb)`.
pub(crate) fn fuse_mean<T: Scalar>(va: f64, ma: T, vb: f64, mb: T) -> T {
    if va + vb > 0.0 {
        (ma * vb + mb * va) * (1.0 / (va + vb))
    } else {
        (ma + mb) * 0.5
    }
}

/// Runs the nonlinear pass and assembles `(x0, r2*, x_i)`.
pub fn amp_nonlinear(
    data: Vec<EchoData<'_>>,
    dwt: Dwt3,
    times_ms: &[f64],
    prior: &MultiEchoPrior,
    init: NonlinearInit,
    cfg: AmpConfig,
) -> Result<(NonlinearState, Vec<f64>, Vec<IterationLog>, bool)> {
    NonlinearSolver::new(data, dwt, times_ms, prior, init, cfg)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_is_symmetric() {
        let (a, b) = (Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.3));
        assert_eq!(fuse_mean(0.3, a, 0.7, b), fuse_mean(0.7, b, 0.3, a));
        assert_eq!(fuse_var(0.3, 0.7), fuse_var(0.7, 0.3));
        assert_eq!(fuse_mean(0.2, 1.0, 0.5, 3.0), fuse_mean(0.5, 3.0, 0.2, 1.0));
        assert!((fuse_mean(1.0, 0.0, 3.0, 4.0) - 1.0f64).abs() < 1e-15);
    }
}
