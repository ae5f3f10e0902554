use num_complex::Complex64;

use t2star_amp::baselines::{gamma_grid, tune_gamma, L1Config};
use t2star_amp::experiment::{default_gamma, simulate_scan, Scan};
use t2star_amp::metrics::nrmse;
use t2star_amp::operators::{adjoint_encode, inner, norm_sq, Composed, LinearOperator, WaveletSynthesis};
use t2star_amp::phantom::{echo_images, PhantomSpec};
use t2star_amp::recon::{
    amp_pe_reconstruct, init_from_least_squares, warm_start_variance, AmpConfig, EchoData, MultiEchoInit,
    MultiEchoSolver, ReconConfig,
};
use t2star_amp::sampling::MaskPolicy;
use t2star_amp::wavelet::{Dwt3, DEFAULT_LEVELS};

fn spec() -> PhantomSpec {
    PhantomSpec { shape: [32, 32, 16], ..PhantomSpec::brain_like() }
}

fn scan(spec: &PhantomSpec, rate: f64, seed: u64) -> Scan {
    simulate_scan(spec, rate, seed, MaskPolicy::Redraw).unwrap()
}

/// Iterations the first pass needs from the least-squares start and from zeros.
fn warm_and_cold_iterations(scan: &Scan) -> (usize, usize) {
    let acq = &scan.acq;
    let cfg = ReconConfig::default();
    let dwt = Dwt3::new(acq.shape(), DEFAULT_LEVELS).unwrap();
    let ops = acq.encoders().unwrap();
    let lsq = init_from_least_squares(acq, &ops, cfg.lsq_iters).unwrap();
    let synth: Vec<_> = ops.iter().map(|o| Composed { outer: o, inner: WaveletSynthesis(dwt.clone()) }).collect();
    let data = || -> Vec<EchoData<'_>> {
        synth
            .iter()
            .zip(&acq.kspace)
            .zip(&ops)
            .map(|((g, y), o)| EchoData::new(y, g as &dyn LinearOperator, o.frobenius_sq_exact()).unwrap())
            .collect()
    };
    let d = data();
    let warm = MultiEchoInit {
        mu_v: lsq.images.iter().map(|x| dwt.forward(x)).collect(),
        tau_v: d.iter().map(|e| warm_start_variance(e, lsq.theta_sq)).collect(),
        theta_sq: lsq.theta_sq,
    };
    let cold = MultiEchoInit::cold(&d, lsq.theta_sq);
    let me = AmpConfig { max_iter: 300, ..cfg.multi_echo };
    let count = |init| {
        let out = MultiEchoSolver::new(data(), init, me).unwrap().run().unwrap();
        if out.converged {
            out.state.iteration
        } else {
            usize::MAX
        }
    };
    (count(warm), count(cold))
}

#[test]
fn least_squares_start_converges_faster_than_zeros() {
    let spec = spec();
    for seed in 1..=5 {
        let (warm, cold) = warm_and_cold_iterations(&scan(&spec, 0.10, seed));
        assert!(warm < cold, "seed {seed}: warm {warm} vs cold {cold}");
    }
}

#[test]
fn echo_images_beat_zero_filled_adjoint() {
    let spec = spec();
    let s = scan(&spec, 0.15, 2);
    let out = amp_pe_reconstruct(&s.acq, &ReconConfig::default()).unwrap();
    let p = &s.phantom;
    let truth = echo_images(&p.x0, &p.r2star, &p.fieldmap, &spec.echo_times_ms).unwrap();
    let support = s.support();
    for (i, (mask, y)) in s.acq.masks.iter().zip(&s.acq.kspace).enumerate() {
        let adj = adjoint_encode(y, &p.sens, mask).unwrap();
        // best complex scale for the adjoint image, chosen against the truth
        let t = truth.echoes()[i].data();
        let alpha: Complex64 = inner(adj.data(), t) / norm_sq(adj.data());
        let zero_filled = adj.map(|v| v * alpha.conj());
        let base = nrmse(&zero_filled, &truth.echoes()[i], &support).unwrap();
        let amp = nrmse(&out.echoes.echoes()[i], &truth.echoes()[i], &support).unwrap();
        assert!(amp < base, "echo {i}: amp {amp} vs zero-filled {base}");
    }
}

#[test]
fn noise_level_is_recovered_at_twenty_percent() {
    let spec = PhantomSpec { noise_std: 0.05, ..spec() };
    let s = scan(&spec, 0.20, 4);
    let out = amp_pe_reconstruct(&s.acq, &ReconConfig::default()).unwrap();
    let theta = out.params.theta.unwrap();
    assert!((theta / 0.05 - 1.0).abs() <= 0.2, "theta {theta}");
}

// At 10-15% the r2* error keeps falling slowly towards gamma -> 0, so the
// lower extreme does not degrade there; 20% is where both extremes do.
#[test]
fn gamma_grid_selects_an_interior_point() {
    let spec = PhantomSpec::brain_like();
    let s = scan(&spec, 0.20, 1000);
    let dwt = Dwt3::new(s.acq.shape(), DEFAULT_LEVELS).unwrap();
    let grid = gamma_grid(default_gamma(&s.acq).unwrap(), 10, 4.0);
    let t = tune_gamma(&s.acq, &s.phantom.r2star, &s.support(), &dwt, &grid, &L1Config::new(grid[0])).unwrap();
    let scores: Vec<f64> = t.scores.iter().map(|s| s.1).collect();
    let best = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(scores[0] > best && scores[scores.len() - 1] > best, "{scores:?}");
    assert_ne!(t.best, grid[0]);
    assert_ne!(t.best, grid[grid.len() - 1]);
}
