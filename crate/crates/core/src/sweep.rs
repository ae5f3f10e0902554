//! Multi-seed experiment sweeps and the metrics report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{gamma_grid, tune_gamma, GammaTuning, L1Config};
use crate::error::{Error, Result};
use crate::experiment::{default_gamma, run_method, simulate_scan, Method, MethodConfigs};
use crate::metrics::{mean_std, nrmse, relative_errors, BoxSummary};
use crate::par;
use crate::phantom::{make_phantom, PhantomSpec};
use crate::sampling::MaskPolicy;
use crate::store::{self, Estimate, RunLog, Truth};
use crate::wavelet::Dwt3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningConfig {
    pub enabled: bool,
    /// Seed of the training scan; must not be one of the test seeds.
    pub train_seed: u64,
    pub points: usize,
    pub decades: f64,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self { enabled: true, train_seed: 1000, points: 10, decades: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Phantom file, relative paths resolved against the config file.
    pub spec_path: Option<PathBuf>,
    /// Inline phantom, used when no path is given.
    pub spec: Option<PhantomSpec>,
    pub rates: Vec<f64>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub solvers: MethodConfigs,
    pub policy: MaskPolicy,
    pub tuning: TuningConfig,
    /// Store every reconstruction under `out_dir/cells`.
    pub save_volumes: bool,
    /// Concurrent cells; 0 uses all cores.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            spec_path: None,
            spec: None,
            rates: vec![0.10, 0.15, 0.20],
            methods: Method::ALL.to_vec(),
            seeds: (1..=5).collect(),
            out_dir: PathBuf::from("sweep-out"),
            solvers: MethodConfigs::default(),
            policy: MaskPolicy::Redraw,
            tuning: TuningConfig::default(),
            save_volumes: false,
            workers: 0,
        }
    }
}

impl ExperimentConfig {
    /// Reads a config, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = crate::io::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = &cfg.spec_path {
            if p.is_relative() {
                cfg.spec_path = Some(base.join(p));
            }
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() || self.rates.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(Error::invalid("rates must be a nonempty list within (0, 1]"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds must be nonempty"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("methods must be nonempty"));
        }
        if self.tuning.enabled && self.methods.contains(&Method::L1) {
            if self.seeds.contains(&self.tuning.train_seed) {
                return Err(Error::invalid("the tuning seed must differ from every test seed"));
            }
            if self.tuning.points == 0 || self.tuning.decades.is_nan() || self.tuning.decades < 0.0 {
                return Err(Error::invalid("tuning needs at least one point and a nonnegative span"));
            }
        }
        self.solvers.amp.validate()
    }

    pub fn phantom_spec(&self) -> Result<PhantomSpec> {
        let spec = match (&self.spec_path, &self.spec) {
            (Some(p), _) => crate::io::read_json(p)?,
            (None, Some(s)) => s.clone(),
            (None, None) => PhantomSpec::brain_like(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    X0,
    R2star,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub nrmse_x0: f64,
    pub nrmse_r2star: f64,
    pub nrmse_echoes: Vec<f64>,
    pub errors_x0: BoxSummary,
    pub errors_r2star: BoxSummary,
}

impl CellMetrics {
    pub fn nrmse(&self, map: MapKind) -> f64 {
        match map {
            MapKind::X0 => self.nrmse_x0,
            MapKind::R2star => self.nrmse_r2star,
        }
    }
}

/// Metrics over the truth support. Both sides are taken at stored precision
/// so the numbers can be regenerated from files.
pub fn cell_metrics(est: &Estimate, truth: &Truth) -> Result<CellMetrics> {
    let support = truth.support();
    if est.echoes.len() != truth.echoes.len() {
        return Err(Error::ShapeMismatch(format!("{} echoes against {} in the reference", est.echoes.len(), truth.echoes.len())));
    }
    let nrmse_echoes = est
        .echoes
        .echoes()
        .iter()
        .zip(truth.echoes.echoes())
        .map(|(e, t)| nrmse(e, t, &support))
        .collect::<Result<Vec<_>>>()?;
    Ok(CellMetrics {
        nrmse_x0: nrmse(&est.x0, &truth.x0, &support)?,
        nrmse_r2star: nrmse(&est.r2star, &truth.r2star, &support)?,
        nrmse_echoes,
        errors_x0: BoxSummary::from_values(&relative_errors(&est.x0, &truth.x0, &support)?)?,
        errors_r2star: BoxSummary::from_values(&relative_errors(&est.r2star, &truth.r2star, &support)?)?,
    })
}

/// Recomputes a cell from a stored reconstruction and a scan directory.
pub fn evaluate_dirs(result_dir: &Path, scan_dir: &Path) -> Result<CellMetrics> {
    cell_metrics(&store::read_result(result_dir)?, &store::read_truth(scan_dir)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    pub rate: f64,
    pub seed: u64,
    pub metrics: Option<CellMetrics>,
    pub error: Option<String>,
    pub iterations: usize,
    pub converged: bool,
    pub theta: Option<f64>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTuning {
    pub rate: f64,
    pub center: f64,
    pub result: Option<GammaTuning>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rates: Vec<f64>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub tuning: Vec<RateTuning>,
    pub cells: Vec<Cell>,
}

fn same_rate(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

impl MetricsReport {
    pub fn cell(&self, method: Method, rate: f64, seed: u64) -> Option<&Cell> {
        self.cells.iter().find(|c| c.method == method && same_rate(c.rate, rate) && c.seed == seed)
    }

    /// NRMSE values over the successful seeds of one (method, rate).
    pub fn values(&self, method: Method, rate: f64, map: MapKind) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.method == method && same_rate(c.rate, rate))
            .filter_map(|c| c.metrics.as_ref().map(|m| m.nrmse(map)))
            .collect()
    }

    /// `(mean, std)` over seeds; NaN when every seed failed.
    pub fn mean_std(&self, method: Method, rate: f64, map: MapKind) -> (f64, f64) {
        mean_std(&self.values(method, rate, map))
    }

    /// Mean NRMSE strictly increases along `order` at every rate.
    pub fn ordering_holds(&self, order: &[Method], map: MapKind) -> bool {
        self.rates.iter().all(|&r| {
            order.windows(2).all(|w| self.mean_std(w[0], r, map).0 < self.mean_std(w[1], r, map).0)
        })
    }

    /// Fraction of seeds on which NRMSE strictly decreases with the rate.
    pub fn monotone_fraction(&self, method: Method, map: MapKind) -> f64 {
        let mut rates = self.rates.clone();
        rates.sort_by(f64::total_cmp);
        let ok = self
            .seeds
            .iter()
            .filter(|&&s| {
                let v: Option<Vec<f64>> = rates
                    .iter()
                    .map(|&r| self.cell(method, r, s).and_then(|c| c.metrics.as_ref()).map(|m| m.nrmse(map)))
                    .collect();
                v.is_some_and(|v| v.windows(2).all(|w| w[1] < w[0]))
            })
            .count();
        ok as f64 / self.seeds.len() as f64
    }

    pub fn failures(&self) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(|c| c.error.is_some())
    }

    /// `report.json`, the two mean ± std tables, per-cell and box-plot CSVs.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::io::write_json(&dir.join("report.json"), self)?;
        self.write_table(&dir.join("table_x0.csv"), MapKind::X0)?;
        self.write_table(&dir.join("table_r2star.csv"), MapKind::R2star)?;
        self.write_cells(&dir.join("cells.csv"))?;
        self.write_boxplot(&dir.join("boxplot.csv"))
    }

    fn write_table(&self, path: &Path, map: MapKind) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["method".to_string()];
        header.extend(self.rates.iter().map(|r| format!("{:.0}%", r * 100.0)));
        w.write_record(&header)?;
        for &m in &self.methods {
            let mut row = vec![m.name().to_string()];
            row.extend(self.rates.iter().map(|&r| format_mean_std(self.mean_std(m, r, map))));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write_cells(&self, path: &Path) -> Result<()> {
        let echoes = self.cells.iter().filter_map(|c| c.metrics.as_ref()).map(|m| m.nrmse_echoes.len()).max().unwrap_or(0);
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> =
            ["method", "rate", "seed", "nrmse_x0", "nrmse_r2star"].iter().map(|s| s.to_string()).collect();
        header.extend((0..echoes).map(|i| format!("nrmse_echo_{i:02}")));
        header.extend(["iterations", "converged", "theta", "gamma", "error"].iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for c in &self.cells {
            let mut row = vec![c.method.name().to_string(), format!("{:.2}", c.rate), c.seed.to_string()];
            match &c.metrics {
                Some(m) => {
                    row.push(format!("{:.6}", m.nrmse_x0));
                    row.push(format!("{:.6}", m.nrmse_r2star));
                    row.extend((0..echoes).map(|i| m.nrmse_echoes.get(i).map(|v| format!("{v:.6}")).unwrap_or_default()));
                }
                None => row.extend(std::iter::repeat_n(String::new(), 2 + echoes)),
            }
            row.push(c.iterations.to_string());
            row.push(c.converged.to_string());
            row.push(c.theta.map(|t| format!("{t:.6e}")).unwrap_or_default());
            row.push(c.gamma.map(|g| format!("{g:.6e}")).unwrap_or_default());
            row.push(c.error.clone().unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write_boxplot(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "method", "rate", "seed", "map", "count", "min", "whisker_low", "q1", "median", "q3", "whisker_high", "max", "mean",
        ])?;
        for c in &self.cells {
            let Some(m) = &c.metrics else { continue };
            for (name, b) in [("x0", &m.errors_x0), ("r2star", &m.errors_r2star)] {
                let mut row = vec![c.method.name().to_string(), format!("{:.2}", c.rate), c.seed.to_string(), name.into()];
                row.push(b.count.to_string());
                row.extend(
                    [b.min, b.whisker_low, b.q1, b.median, b.q3, b.whisker_high, b.max, b.mean].iter().map(|v| format!("{v:.6}")),
                );
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Fixed three-decimal `mean ± std`.
pub fn format_mean_std((mean, std): (f64, f64)) -> String {
    if mean.is_nan() {
        "n/a".into()
    } else {
        format!("{mean:.3} ± {std:.3}")
    }
}

fn cell_dir(root: &Path, method: Method, rate: f64, seed: u64) -> PathBuf {
    root.join("cells").join(format!("{}-r{:03.0}-s{seed}", method.name(), rate * 100.0))
}

fn tune_rate(cfg: &ExperimentConfig, spec: &PhantomSpec, rate: f64) -> RateTuning {
    let run = || -> Result<(f64, GammaTuning)> {
        let scan = simulate_scan(spec, rate, cfg.tuning.train_seed, cfg.policy)?;
        let acq = &scan.acq;
        let center = default_gamma(acq)?;
        let grid = gamma_grid(center, cfg.tuning.points, cfg.tuning.decades);
        let dwt = Dwt3::new(acq.shape(), cfg.solvers.levels)?;
        let t = tune_gamma(acq, &scan.phantom.r2star, &scan.support(), &dwt, &grid, &cfg.solvers.l1)?;
        Ok((center, t))
    };
    match run() {
        Ok((center, t)) => RateTuning { rate, center, result: Some(t), error: None },
        Err(e) => RateTuning { rate, center: cfg.solvers.l1.gamma, result: None, error: Some(e.chain()) },
    }
}

fn run_cells(
    cfg: &ExperimentConfig,
    spec: &PhantomSpec,
    truth: &Truth,
    rate: f64,
    seed: u64,
    l1: L1Config,
) -> Vec<Cell> {
    let blank = |method: Method| Cell {
        method,
        rate,
        seed,
        metrics: None,
        error: None,
        iterations: 0,
        converged: false,
        theta: None,
        gamma: (method == Method::L1).then_some(l1.gamma),
    };
    let scan = match simulate_scan(spec, rate, seed, cfg.policy) {
        Ok(s) => s,
        Err(e) => {
            return cfg.methods.iter().map(|&m| Cell { error: Some(format!("simulation: {}", e.chain())), ..blank(m) }).collect();
        }
    };
    let solvers = MethodConfigs { l1, ..cfg.solvers };
    cfg.methods
        .iter()
        .map(|&method| {
            let mut cell = blank(method);
            let result = run_method(&scan.acq, method, &solvers).and_then(|out| {
                let run = RunLog::new(method, &solvers, &out);
                cell.iterations = run.iterations;
                cell.converged = run.converged;
                cell.theta = run.params.as_ref().and_then(|p| p.theta);
                if cfg.save_volumes {
                    store::write_result(&cell_dir(&cfg.out_dir, method, rate, seed), &out, &run)?;
                }
                cell_metrics(&Estimate::rounded(&out)?, truth)
            });
            match result {
                Ok(m) => cell.metrics = Some(m),
                Err(e) => cell.error = Some(e.chain()),
            }
            cell
        })
        .collect()
}

/// Runs every (rate, seed) cell for every method. Failures are recorded in
/// their cell and the sweep carries on; only configuration and output
/// errors abort it.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let spec = cfg.phantom_spec()?;
    let phantom = make_phantom(&spec)?;
    let truth = Truth::from_phantom(&phantom, &spec.echo_times_ms)?;
    if cfg.save_volumes {
        store::write_phantom(&cfg.out_dir.join("truth"), &spec, &phantom)?;
    }
    par::with_threads(cfg.workers, || {
        let tuning: Vec<RateTuning> = if cfg.tuning.enabled && cfg.methods.contains(&Method::L1) {
            par::map_jobs(&cfg.rates, |&r| tune_rate(cfg, &spec, r))
        } else {
            Vec::new()
        };
        let gammas: BTreeMap<usize, f64> = cfg
            .rates
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let g = tuning
                    .iter()
                    .find(|t| same_rate(t.rate, r))
                    .map(|t| t.result.as_ref().map_or(t.center, |g| g.best))
                    .unwrap_or(cfg.solvers.l1.gamma);
                (i, g)
            })
            .collect();
        let jobs: Vec<(usize, u64)> = (0..cfg.rates.len()).flat_map(|i| cfg.seeds.iter().map(move |&s| (i, s))).collect();
        let cells = par::map_jobs(&jobs, |&(i, seed)| {
            let l1 = L1Config { gamma: gammas[&i], ..cfg.solvers.l1 };
            run_cells(cfg, &spec, &truth, cfg.rates[i], seed, l1)
        });
        let report = MetricsReport {
            rates: cfg.rates.clone(),
            methods: cfg.methods.clone(),
            seeds: cfg.seeds.clone(),
            tuning,
            cells: cells.into_iter().flatten().collect(),
        };
        report.write(&cfg.out_dir)?;
        Ok(report)
    })
}
