//! Dense per-node reference implementations of both message-passing loops,
//! compared slot by slot against the vectorized solvers.
#![allow(dead_code)]

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use t2star_amp::operators::{random_complex, DenseMatrix, LinearOperator};
use t2star_amp::recon::{
    fit_r2star_voxel, AmpConfig, EchoData, MultiEchoInit, MultiEchoPrior, MultiEchoSolver, NonlinearInit,
    NonlinearSolver, SUPPORT_FRACTION,
};
use t2star_amp::volume::{ComplexVolume, Shape};
use t2star_amp::wavelet::Dwt3;

const FLOOR: f64 = 1e-12;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Row-major dense matrix as nested rows.
struct Mat {
    rows: Vec<Vec<Complex64>>,
}

impl Mat {
    fn random(m: usize, n: usize, rng: &mut ChaCha8Rng) -> Self {
        let data = random_complex(rng, m * n, 1.0 / m as f64);
        Self { rows: data.chunks(n).map(|r| r.to_vec()).collect() }
    }

    fn m(&self) -> usize {
        self.rows.len()
    }

    fn n(&self) -> usize {
        self.rows[0].len()
    }

    fn frob_sq(&self) -> f64 {
        let mut s = 0.0;
        for row in &self.rows {
            for g in row {
                s += g.norm_sqr();
            }
        }
        s
    }

    fn dense(&self) -> DenseMatrix {
        DenseMatrix::new(self.m(), self.n(), self.rows.concat()).unwrap()
    }

    /// Row node `m`: `sum_n G[m][n] v[n]`.
    fn row_sum(&self, m: usize, v: &[Complex64]) -> Complex64 {
        let mut s = Complex64::default();
        for n in 0..self.n() {
            s += self.rows[m][n] * v[n];
        }
        s
    }

    /// Column node `n`: `sum_m conj(G[m][n]) r[m]`.
    fn col_sum(&self, n: usize, r: &[Complex64]) -> Complex64 {
        let mut s = Complex64::default();
        for m in 0..self.m() {
            s += self.rows[m][n].conj() * r[m];
        }
        s
    }
}

fn assert_close(what: &str, a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol * (1.0 + b.abs()), "{what}: {a} vs {b}");
}

fn assert_close_c(what: &str, a: &[Complex64], b: &[Complex64], tol: f64) {
    assert_eq!(a.len(), b.len(), "{what}");
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).norm() <= tol * (1.0 + y.norm()), "{what}[{k}]: {x} vs {y}");
    }
}

fn assert_close_r(what: &str, a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len(), "{what}");
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{what}[{k}]: {x} vs {y}");
    }
}

// ---------------------------------------------------------------- per-echo loop

#[derive(Clone)]
struct NodeEcho {
    mu_v: Vec<Complex64>,
    tau_v: Vec<f64>,
    mu1: Vec<Complex64>,
    tau1: f64,
    mu2: Vec<Complex64>,
    tau2: f64,
    mu3: Vec<Complex64>,
    tau3: f64,
    lambda: f64,
}

struct NodeAlg1<'a> {
    g: &'a [Mat],
    y: &'a [Vec<Complex64>],
    beta: f64,
    echoes: Vec<NodeEcho>,
    theta_sq: f64,
    /// Coefficients sent to zero by the threshold so far.
    zeroed: usize,
}

impl<'a> NodeAlg1<'a> {
    fn new(g: &'a [Mat], y: &'a [Vec<Complex64>], mu_v: Vec<Vec<Complex64>>, tau_v: Vec<f64>, theta_sq: f64, beta: f64) -> Self {
        let echoes = g
            .iter()
            .zip(mu_v)
            .zip(tau_v)
            .map(|((g, mu_v), tau_v)| {
                let (m, n) = (g.m(), g.n());
                let mu3 = (0..m).map(|r| g.row_sum(r, &mu_v)).collect();
                NodeEcho {
                    tau_v: vec![tau_v; n],
                    mu_v,
                    mu1: vec![Complex64::default(); m],
                    tau1: 0.0,
                    mu2: vec![Complex64::default(); n],
                    tau2: 0.0,
                    mu3,
                    tau3: g.frob_sq() / m as f64 * tau_v,
                    lambda: 1.0,
                }
            })
            .collect();
        Self { g, y, beta, echoes, theta_sq: theta_sq.max(FLOOR), zeroed: 0 }
    }

    fn step(&mut self) {
        let b = self.beta;
        let t = self.theta_sq.max(FLOOR);
        let mut moments = 0.0;
        let mut count = 0usize;
        for (i, e) in self.echoes.iter_mut().enumerate() {
            let (g, y) = (&self.g[i], &self.y[i]);
            let (m, n) = (g.m(), g.n());
            let frob = g.frob_sq();
            // measurement nodes
            e.tau1 = 1.0 / (t + e.tau3);
            for r in 0..m {
                e.mu1[r] = (y[r] - e.mu3[r]) * e.tau1;
            }
            // variable nodes
            e.tau2 = 1.0 / (frob / n as f64 * e.tau1);
            for k in 0..n {
                e.mu2[k] = e.mu_v[k] + g.col_sum(k, &e.mu1) * e.tau2;
            }
            let abs_sum: f64 = e.mu2.iter().map(|v| v.norm()).sum();
            e.lambda = (n as f64 / abs_sum).clamp(1e-6, 1e6);
            let thresh = e.lambda * e.tau2;
            for k in 0..n {
                let mag = e.mu2[k].norm();
                if mag <= thresh {
                    self.zeroed += 1;
                }
                let (v, tv) = if mag <= thresh { (Complex64::default(), 0.0) } else { (e.mu2[k] * ((mag - thresh) / mag), e.tau2) };
                e.mu_v[k] = v * b + e.mu_v[k] * (1.0 - b);
                e.tau_v[k] = tv * b + e.tau_v[k] * (1.0 - b);
            }
            // back to the measurement nodes
            let tau3_new = frob / m as f64 * (e.tau_v.iter().sum::<f64>() / n as f64);
            for r in 0..m {
                let z = g.row_sum(r, &e.mu_v) - e.mu1[r] * tau3_new;
                e.mu3[r] = z * b + e.mu3[r] * (1.0 - b);
            }
            e.tau3 = b * tau3_new + (1.0 - b) * e.tau3;
            for r in 0..m {
                moments += (y[r] - e.mu3[r]).norm_sqr() - e.tau3;
            }
            count += m;
        }
        self.theta_sq = b * (moments / count as f64).max(FLOOR) + (1.0 - b) * self.theta_sq;
    }
}

fn alg1_instance(echoes: usize, seed: u64) -> (Vec<Mat>, Vec<Vec<Complex64>>, Vec<Vec<Complex64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Vec::new();
    let mut y = Vec::new();
    let mut init = Vec::new();
    for _ in 0..echoes {
        let mat = Mat::random(8, 8, &mut rng);
        let mut x = random_complex(&mut rng, 8, 0.01);
        for k in [1, 4, 6] {
            x[k] = Complex64::default();
        }
        let noise = random_complex(&mut rng, 8, 1e-3);
        let yi: Vec<Complex64> = (0..8).map(|r| mat.row_sum(r, &x) + noise[r]).collect();
        init.push((0..8).map(|k| mat.col_sum(k, &yi)).collect());
        y.push(yi);
        g.push(mat);
    }
    (g, y, init)
}

pub fn check_multi_echo(echoes: usize, beta: f64, seed: u64) {
    let (g, y, init) = alg1_instance(echoes, seed);
    let dense: Vec<DenseMatrix> = g.iter().map(Mat::dense).collect();
    let data: Vec<EchoData<'_>> = dense
        .iter()
        .zip(&y)
        .zip(&g)
        .map(|((d, yi), m)| EchoData::new(yi, d as &dyn LinearOperator, m.frob_sq()).unwrap())
        .collect();
    let tau_v = vec![2e-3; echoes];
    let theta_sq = 1e-3;
    let cfg = AmpConfig { beta, tol: 1e-300, max_iter: 10 };
    let mut solver =
        MultiEchoSolver::new(data, MultiEchoInit { mu_v: init.clone(), tau_v: tau_v.clone(), theta_sq }, cfg).unwrap();
    let mut oracle = NodeAlg1::new(&g, &y, init, tau_v, theta_sq, beta);
    let tol = 1e-10;
    for it in 1..=5 {
        solver.step().unwrap();
        oracle.step();
        let s = solver.state();
        assert_eq!(solver.log()[it - 1].beta, beta, "damping must not be capped on this instance");
        for (i, (a, o)) in s.echoes.iter().zip(&oracle.echoes).enumerate() {
            let tag = |slot: &str| format!("iteration {it}, echo {i}, {slot}");
            assert_close_c(&tag("mu1"), &a.mu1, &o.mu1, tol);
            assert_close(&tag("tau1"), a.tau1, o.tau1, tol);
            assert_close_c(&tag("mu2"), &a.mu2, &o.mu2, tol);
            assert_close(&tag("tau2"), a.tau2, o.tau2, tol);
            assert_close_c(&tag("mu3"), &a.mu3, &o.mu3, tol);
            assert_close(&tag("tau3"), a.tau3, o.tau3, tol);
            assert_close_c(&tag("mu_v"), &a.mu_v, &o.mu_v, tol);
            assert_close_r(&tag("tau_v"), &a.tau_v, &o.tau_v, tol);
            assert_close(&tag("lambda"), a.lambda, o.lambda, tol);
        }
        assert_close(&format!("iteration {it}, theta"), s.theta_sq, oracle.theta_sq, tol);
    }
    // the instance must exercise both denoiser branches
    let total = 5 * 8 * echoes;
    assert!(oracle.zeroed > 0 && oracle.zeroed < total, "{} of {total} thresholded", oracle.zeroed);
}

// ---------------------------------------------------------------- decay-model loop

fn fuse_var(a: f64, b: f64) -> f64 {
    a * b / (a + b)
}

fn fuse_c(va: f64, ma: Complex64, vb: f64, mb: Complex64) -> Complex64 {
    (ma * vb + mb * va) / (va + vb)
}

fn fuse_r(va: f64, ma: f64, vb: f64, mb: f64) -> f64 {
    (ma * vb + mb * va) / (va + vb)
}

#[derive(Clone)]
struct NodeNlEcho {
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
    mu7: Vec<f64>,
    tau7: f64,
    mu_s: Vec<f64>,
    tau_s: f64,
    mu_x: Vec<Complex64>,
    tau_x: f64,
    mu8: Vec<Complex64>,
    tau8: f64,
}

struct NodeAlg2<'a> {
    a: &'a [Mat],
    y: &'a [Vec<Complex64>],
    /// Synthesis matrix: `x0[n] = sum_k hinv[n][k] v0[k]`.
    hinv: Vec<Vec<f64>>,
    times: Vec<f64>,
    pm: Vec<Vec<Complex64>>,
    pv: Vec<f64>,
    beta: f64,
    echoes: Vec<NodeNlEcho>,
    mu_v0: Vec<f64>,
    tau_v0: Vec<f64>,
    mu6: Vec<f64>,
    tau6: f64,
    lambda0: f64,
    r2: Vec<f64>,
    theta_sq: f64,
}

fn weight(t_ms: f64, r: f64) -> f64 {
    (-t_ms * 1e-3 * r).exp()
}

impl<'a> NodeAlg2<'a> {
    fn weights(&self) -> Vec<Vec<f64>> {
        self.times.iter().map(|&t| self.r2.iter().map(|&r| weight(t, r)).collect()).collect()
    }

    fn synth(&self, v: &[f64]) -> Vec<f64> {
        self.hinv.iter().map(|row| row.iter().zip(v).map(|(h, x)| h * x).sum()).collect()
    }

    fn analyse(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n).map(|k| (0..n).map(|j| self.hinv[j][k] * x[j]).sum()).collect()
    }

    fn step(&mut self) {
        let b = self.beta;
        let t = self.theta_sq.max(FLOOR);
        let n = self.mu_v0.len();
        let echoes = self.echoes.len();
        let w = self.weights();
        let e_sq: f64 = w.iter().flatten().map(|v| v * v).sum();

        let mut next = self.echoes.clone();
        for (i, e) in next.iter_mut().enumerate() {
            let (a, y) = (&self.a[i], &self.y[i]);
            let m = a.m();
            e.tau1 = 1.0 / (t + e.tau8);
            for r in 0..m {
                e.mu1[r] = (y[r] - e.mu8[r]) * e.tau1;
            }
            e.tau2 = 1.0 / (a.frob_sq() / n as f64 * e.tau1);
            for k in 0..n {
                e.mu2[k] = e.mu_x[k] + a.col_sum(k, &e.mu1) * e.tau2;
            }
            e.tau3 = fuse_var(e.tau2, self.pv[i]);
            for k in 0..n {
                e.mu3[k] = fuse_c(e.tau2, e.mu2[k], self.pv[i], self.pm[i][k]);
                e.mu4[k] = e.mu3[k].norm();
            }
            e.tau4 = e.tau3;
            e.tau5 = 1.0 / (e.tau4 + e.tau7);
            for k in 0..n {
                e.mu5[k] = (e.mu4[k] - e.mu7[k]) * e.tau5;
            }
        }

        let mean_tau5 = next.iter().map(|e| e.tau5).sum::<f64>() / echoes as f64;
        self.tau6 = 1.0 / (e_sq / n as f64 * mean_tau5);
        let ete: Vec<f64> = (0..n).map(|k| (0..echoes).map(|i| w[i][k] * next[i].mu5[k]).sum()).collect();
        let et = self.analyse(&ete);
        self.mu6 = (0..n).map(|k| self.mu_v0[k] + self.tau6 * et[k]).collect();
        let abs_sum: f64 = self.mu6.iter().map(|v| v.abs()).sum();
        self.lambda0 = (n as f64 / abs_sum).clamp(1e-6, 1e6);
        let thresh = self.lambda0 * self.tau6;
        for k in 0..n {
            let u = self.mu6[k];
            let (v, tv) = if u.abs() <= thresh { (0.0, 0.0) } else { (u - thresh * u.signum(), self.tau6) };
            self.mu_v0[k] = b * v + (1.0 - b) * self.mu_v0[k];
            self.tau_v0[k] = b * tv + (1.0 - b) * self.tau_v0[k];
        }

        let tau7 = e_sq / (echoes * n) as f64 * (self.tau_v0.iter().sum::<f64>() / n as f64);
        let x0 = self.synth(&self.mu_v0);
        for (i, e) in next.iter_mut().enumerate() {
            e.tau7 = tau7;
            for k in 0..n {
                e.mu7[k] = w[i][k] * x0[k] - tau7 * e.mu5[k];
                let s = fuse_r(e.tau4, e.mu4[k], tau7, e.mu7[k]);
                e.mu_s[k] = b * s + (1.0 - b) * e.mu_s[k];
            }
            e.tau_s = b * fuse_var(tau7, e.tau4) + (1.0 - b) * e.tau_s;
        }

        let peak = next.iter().flat_map(|e| &e.mu_s).fold(0.0f64, |a, &v| a.max(v));
        let cut = SUPPORT_FRACTION * peak;
        for k in 0..n {
            self.r2[k] = if x0[k] <= cut || x0[k] <= 0.0 {
                0.0
            } else {
                let s: Vec<f64> = next.iter().map(|e| e.mu_s[k]).collect();
                fit_r2star_voxel(&s, x0[k], &self.times).unwrap()
            };
        }

        let mut moments = 0.0;
        let mut count = 0usize;
        for (i, e) in next.iter_mut().enumerate() {
            let (a, y) = (&self.a[i], &self.y[i]);
            let m = a.m();
            let mut ratio = 0.0;
            for k in 0..n {
                let mag = e.mu3[k].norm();
                let phase = if mag > 0.0 { e.mu3[k] / mag } else { c(1.0) };
                e.mu_x[k] = phase * e.mu_s[k];
                if mag > 0.0 {
                    ratio += e.mu_s[k].abs() / mag;
                }
            }
            ratio /= n as f64;
            e.tau_x = 0.5 * (e.tau_s + e.tau3 * ratio);
            let tau8_new = a.frob_sq() / m as f64 * e.tau_x;
            for r in 0..m {
                let z = a.row_sum(r, &e.mu_x) - e.mu1[r] * tau8_new;
                e.mu8[r] = z * b + e.mu8[r] * (1.0 - b);
            }
            e.tau8 = b * tau8_new + (1.0 - b) * e.tau8;
            for r in 0..m {
                moments += (y[r] - e.mu8[r]).norm_sqr() - e.tau8;
            }
            count += m;
        }
        self.theta_sq = b * (moments / count as f64).max(FLOOR) + (1.0 - b) * self.theta_sq;
        self.echoes = next;
    }
}

/// 8 voxels, 2 echoes, 3 iterations.
pub fn check_nonlinear() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let shape = Shape::new(8, 1, 1).unwrap();
    let dwt = Dwt3::new(shape, 1).unwrap();
    let n = 8;
    let times = vec![7.64, 13.05];
    let hinv: Vec<Vec<f64>> = {
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                dwt.inverse(&e)
            })
            .collect();
        (0..n).map(|r| (0..n).map(|k| cols[k][r]).collect()).collect()
    };
    let x0_true: Vec<f64> = (0..n).map(|k| 0.8 + 0.05 * k as f64).collect();
    let r2_true: Vec<f64> = (0..n).map(|k| 20.0 + 10.0 * (k % 3) as f64).collect();
    let phase: Vec<Complex64> = (0..n).map(|k| Complex64::from_polar(1.0, 0.3 * k as f64)).collect();
    let mut a = Vec::new();
    let mut y = Vec::new();
    let mut pm = Vec::new();
    for &t in &times {
        let mat = Mat::random(8, n, &mut rng);
        let x: Vec<Complex64> = (0..n).map(|k| phase[k] * (x0_true[k] * weight(t, r2_true[k]))).collect();
        let noise = random_complex(&mut rng, 8, 1e-4);
        y.push((0..8).map(|r| mat.row_sum(r, &x) + noise[r]).collect::<Vec<_>>());
        let jitter = random_complex(&mut rng, n, 1e-3);
        pm.push(x.iter().zip(&jitter).map(|(a, b)| a + b).collect::<Vec<_>>());
        a.push(mat);
    }
    let pv = vec![2e-3, 3e-3];
    let x0_init: Vec<f64> = x0_true.iter().map(|v| v * 1.05).collect();
    let r2_init: Vec<f64> = r2_true.iter().map(|v| v * 0.9).collect();
    let tau_x = vec![2e-3, 3e-3];
    let tau_v0 = 1e-3;
    let theta_sq = 1e-3;
    let beta = 0.7;

    let dense: Vec<DenseMatrix> = a.iter().map(Mat::dense).collect();
    let data: Vec<EchoData<'_>> = dense
        .iter()
        .zip(&y)
        .zip(&a)
        .map(|((d, yi), m)| EchoData::new(yi, d as &dyn LinearOperator, m.frob_sq()).unwrap())
        .collect();
    let prior = MultiEchoPrior {
        means: pm.iter().map(|m| ComplexVolume::from_vec(shape, m.clone()).unwrap()).collect(),
        variances: pv.clone(),
    };
    let init = NonlinearInit {
        x0: x0_init.clone(),
        r2star: r2_init.clone(),
        x: pm.clone(),
        tau_x: tau_x.clone(),
        tau_v0,
        theta_sq,
    };
    let cfg = AmpConfig { beta, tol: 1e-300, max_iter: 10 };
    let mut solver = NonlinearSolver::new(data, dwt.clone(), &times, &prior, init, cfg).unwrap();

    // oracle initial state
    let w0: Vec<Vec<f64>> = times.iter().map(|&t| r2_init.iter().map(|&r| weight(t, r)).collect()).collect();
    let e_sq0: f64 = w0.iter().flatten().map(|v| v * v).sum();
    let echoes = times
        .iter()
        .enumerate()
        .map(|(i, _)| NodeNlEcho {
            mu1: vec![Complex64::default(); 8],
            tau1: 0.0,
            mu2: vec![Complex64::default(); n],
            tau2: 0.0,
            mu3: pm[i].clone(),
            tau3: 0.0,
            mu4: vec![0.0; n],
            tau4: 0.0,
            mu5: vec![0.0; n],
            tau5: 0.0,
            mu7: (0..n).map(|k| w0[i][k] * x0_init[k]).collect(),
            tau7: e_sq0 / (times.len() * n) as f64 * tau_v0,
            mu_s: pm[i].iter().map(|v| v.norm()).collect(),
            tau_s: tau_x[i],
            mu_x: pm[i].clone(),
            tau_x: tau_x[i],
            mu8: (0..8).map(|r| a[i].row_sum(r, &pm[i])).collect(),
            tau8: a[i].frob_sq() / 8.0 * tau_x[i],
        })
        .collect();
    let mut oracle = NodeAlg2 {
        a: &a,
        y: &y,
        hinv,
        times: times.clone(),
        pm,
        pv,
        beta,
        echoes,
        mu_v0: vec![0.0; n],
        tau_v0: vec![tau_v0; n],
        mu6: vec![0.0; n],
        tau6: 0.0,
        lambda0: 1.0,
        r2: r2_init,
        theta_sq,
    };
    oracle.mu_v0 = oracle.analyse(&x0_init);

    let tol = 1e-8;
    for it in 1..=3 {
        solver.step().unwrap();
        oracle.step();
        let s = solver.state();
        let tag = |slot: &str| format!("iteration {it}, {slot}");
        assert_close_r(&tag("mu6"), &s.mu6, &oracle.mu6, tol);
        assert_close(&tag("tau6"), s.tau6, oracle.tau6, tol);
        assert_close_r(&tag("mu_v0"), &s.mu_v0, &oracle.mu_v0, tol);
        assert_close_r(&tag("tau_v0"), &s.tau_v0, &oracle.tau_v0, tol);
        assert_close(&tag("lambda0"), s.lambda0, oracle.lambda0, tol);
        assert_close_r(&tag("r2*"), &s.r2star, &oracle.r2, tol);
        assert_close(&tag("theta"), s.theta_sq, oracle.theta_sq, tol);
        for (i, (e, o)) in s.echoes.iter().zip(&oracle.echoes).enumerate() {
            let tag = |slot: &str| format!("iteration {it}, echo {i}, {slot}");
            assert_close_c(&tag("mu1"), &e.mu1, &o.mu1, tol);
            assert_close(&tag("tau1"), e.tau1, o.tau1, tol);
            assert_close_c(&tag("mu2"), &e.mu2, &o.mu2, tol);
            assert_close(&tag("tau2"), e.tau2, o.tau2, tol);
            assert_close_c(&tag("mu3"), &e.mu3, &o.mu3, tol);
            assert_close(&tag("tau3"), e.tau3, o.tau3, tol);
            assert_close_r(&tag("mu4"), &e.mu4, &o.mu4, tol);
            assert_close_r(&tag("mu5"), &e.mu5, &o.mu5, tol);
            assert_close(&tag("tau5"), e.tau5, o.tau5, tol);
            assert_close_r(&tag("mu7"), &e.mu7, &o.mu7, tol);
            assert_close(&tag("tau7"), e.tau7, o.tau7, tol);
            assert_close_r(&tag("mu_s"), &e.mu_s, &o.mu_s, tol);
            assert_close(&tag("tau_s"), e.tau_s, o.tau_s, tol);
            assert_close_c(&tag("mu_x"), &e.mu_x, &o.mu_x, tol);
            assert_close(&tag("tau_x"), e.tau_x, o.tau_x, tol);
            assert_close_c(&tag("mu8"), &e.mu8, &o.mu8, tol);
            assert_close(&tag("tau8"), e.tau8, o.tau8, tol);
        }
    }
    assert!(oracle.r2.iter().all(|&r| r > 0.0), "every voxel should be fitted");
}
