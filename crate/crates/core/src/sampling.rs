//! Poisson-disk undersampling of the phase-encode plane.
//!
//! Masks live on the `ny x nz` phase-encode plane in centered coordinates
//! (plane index `j` corresponds to frequency `j - ny/2`); the readout axis
//! is always fully sampled. Selection happens inside an elliptical support
//! with a fully sampled central disk; outside the disk, points are placed
//! by dart throwing over a random visiting order with a minimum pairwise
//! distance, and that distance is bisected until the achieved rate is
//! within 5% of the target.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::volume::{RealVolume, Shape};

pub const RATE_TOLERANCE: f64 = 0.05;
const MAX_BISECTIONS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingMask {
    ny: usize,
    nz: usize,
    /// Row-major `ny x nz` plane (`j + ny * k`), centered coordinates.
    plane: Vec<bool>,
    pub full_center_radius: f64,
    pub semi_axes: (f64, f64),
    pub target_rate: f64,
    pub achieved_rate: f64,
    pub min_distance: f64,
    pub seed: u64,
}

/// Parameters shared by all echoes of an acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub ny: usize,
    pub nz: usize,
    pub rate: f64,
    pub center_fraction: f64,
}

impl SamplingParams {
    pub const DEFAULT_CENTER_FRACTION: f64 = 0.02;

    pub fn new(ny: usize, nz: usize, rate: f64) -> Self {
        let center_fraction = Self::DEFAULT_CENTER_FRACTION.min(0.5 * rate);
        Self { ny, nz, rate, center_fraction }
    }
}

/// Whether every echo gets its own pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskPolicy {
    #[default]
    Redraw,
    Shared,
}

fn centered(j: usize, n: usize) -> f64 {
    j as f64 - (n / 2) as f64
}

impl SamplingMask {
    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn plane(&self) -> &[bool] {
        &self.plane
    }

    pub fn is_selected(&self, j: usize, k: usize) -> bool {
        self.plane[j + self.ny * k]
    }

    pub fn count(&self) -> usize {
        self.plane.iter().filter(|&&b| b).count()
    }

    /// Mask that selects every point of the plane. Its support ellipse is
    /// the one circumscribing the plane, so every point lies inside it.
    pub fn full(ny: usize, nz: usize) -> Self {
        let axes = (ny as f64 / 2.0 * 2f64.sqrt(), nz as f64 / 2.0 * 2f64.sqrt());
        Self {
            ny,
            nz,
            plane: vec![true; ny * nz],
            full_center_radius: axes.0.max(axes.1),
            semi_axes: axes,
            target_rate: 1.0,
            achieved_rate: 1.0,
            min_distance: 1.0,
            seed: 0,
        }
    }

    pub fn in_support(&self, j: usize, k: usize) -> bool {
        in_ellipse(centered(j, self.ny), centered(k, self.nz), self.semi_axes)
    }

    pub fn support_count(&self) -> usize {
        (0..self.nz)
            .flat_map(|k| (0..self.ny).map(move |j| (j, k)))
            .filter(|&(j, k)| self.in_support(j, k))
            .count()
    }

    /// Selected points as unshifted FFT bin indices `(ky, kz)`, in plane order.
    pub fn selected_fft_points(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.count());
        for k in 0..self.nz {
            for j in 0..self.ny {
                if self.is_selected(j, k) {
                    let ky = (j + self.ny - self.ny / 2) % self.ny;
                    let kz = (k + self.nz - self.nz / 2) % self.nz;
                    out.push((ky, kz));
                }
            }
        }
        out
    }

    /// Centered coordinates of selected points outside the central disk.
    pub fn outer_points(&self) -> Vec<(f64, f64)> {
        let mut pts = Vec::new();
        for k in 0..self.nz {
            for j in 0..self.ny {
                let (u, w) = (centered(j, self.ny), centered(k, self.nz));
                if self.is_selected(j, k) && (u * u + w * w).sqrt() > self.full_center_radius {
                    pts.push((u, w));
                }
            }
        }
        pts
    }

    /// 0/1 real volume of shape `1 x ny x nz`.
    pub fn to_volume(&self) -> RealVolume {
        let shape = Shape::new(1, self.ny, self.nz).unwrap();
        RealVolume::from_vec(shape, self.plane.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).unwrap()
    }

    /// Writes the 0/1 volume pair plus `<path>.mask.json`.
    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_volume(path, &self.to_volume(), "sampling_mask")?;
        let mut meta = self.clone();
        meta.plane.clear();
        io::write_json(&mask_meta_path(path), &meta)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let vol = io::read_real(path)?;
        let mut meta: SamplingMask = io::read_json(&mask_meta_path(path))?;
        let s = vol.shape();
        if s.nx != 1 || s.ny != meta.ny || s.nz != meta.nz {
            return Err(Error::ShapeMismatch(format!("mask volume {s} disagrees with its sidecar")));
        }
        meta.plane = vol.data().iter().map(|&v| v > 0.5).collect();
        Ok(meta)
    }
}

fn mask_meta_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".mask.json");
    s.into()
}

fn in_ellipse(u: f64, w: f64, (ay, az): (f64, f64)) -> bool {
    (u / ay).powi(2) + (w / az).powi(2) <= 1.0
}

/// Uniform background grid for neighbour queries during dart throwing.
struct DartGrid {
    cell: f64,
    cols: usize,
    rows: usize,
    origin: (f64, f64),
    cells: Vec<Vec<(f64, f64)>>,
}

impl DartGrid {
    fn new(ny: usize, nz: usize, radius: f64) -> Self {
        let cell = radius.max(1.0);
        let cols = (ny as f64 / cell).ceil() as usize + 1;
        let rows = (nz as f64 / cell).ceil() as usize + 1;
        let origin = (-((ny / 2) as f64), -((nz / 2) as f64));
        Self { cell, cols, rows, origin, cells: vec![Vec::new(); cols * rows] }
    }

    fn cell_of(&self, p: (f64, f64)) -> (usize, usize) {
        let c = ((p.0 - self.origin.0) / self.cell) as usize;
        let r = ((p.1 - self.origin.1) / self.cell) as usize;
        (c.min(self.cols - 1), r.min(self.rows - 1))
    }

    fn is_free(&self, p: (f64, f64), radius: f64) -> bool {
        let (c, r) = self.cell_of(p);
        let r2 = radius * radius;
        for rr in r.saturating_sub(1)..=(r + 1).min(self.rows - 1) {
            for cc in c.saturating_sub(1)..=(c + 1).min(self.cols - 1) {
                for q in &self.cells[cc + self.cols * rr] {
                    let d2 = (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2);
                    if d2 < r2 {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn insert(&mut self, p: (f64, f64)) {
        let (c, r) = self.cell_of(p);
        self.cells[c + self.cols * r].push(p);
    }
}

struct Layout {
    ny: usize,
    nz: usize,
    axes: (f64, f64),
    center_radius: f64,
    support: usize,
    center: Vec<usize>,
    /// Candidate plane indices outside the center, in random visiting order.
    order: Vec<usize>,
}

impl Layout {
    fn throw(&self, radius: f64) -> Vec<bool> {
        let mut plane = vec![false; self.ny * self.nz];
        for &i in &self.center {
            plane[i] = true;
        }
        let mut grid = DartGrid::new(self.ny, self.nz, radius);
        for &i in &self.order {
            let p = (centered(i % self.ny, self.ny), centered(i / self.ny, self.nz));
            if grid.is_free(p, radius) {
                grid.insert(p);
                plane[i] = true;
            }
        }
        plane
    }
}

/// Circular Poisson-disk mask with a fully sampled center and elliptical
/// support `(ny/2, nz/2)`.
pub fn poisson_disk_mask(ny: usize, nz: usize, target_rate: f64, center_fraction: f64, seed: u64) -> Result<SamplingMask> {
    if ny == 0 || nz == 0 {
        return Err(Error::invalid("mask plane must be nonempty"));
    }
    if !(target_rate > 0.0 && target_rate <= 1.0) {
        return Err(Error::invalid(format!("target rate {target_rate} outside (0, 1]")));
    }
    if !(center_fraction >= 0.0 && center_fraction < target_rate) {
        return Err(Error::invalid(format!(
            "center fraction {center_fraction} must lie in [0, target rate {target_rate})"
        )));
    }
    let axes = (ny as f64 / 2.0, nz as f64 / 2.0);
    let mut support = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            if in_ellipse(centered(j, ny), centered(k, nz), axes) {
                support.push(j + ny * k);
            }
        }
    }
    let support_len = support.len();
    let center_radius = (center_fraction * support_len as f64 / std::f64::consts::PI).sqrt();
    let (center, mut order): (Vec<usize>, Vec<usize>) = support.iter().partition(|&&i| {
        let (u, w) = (centered(i % ny, ny), centered(i / ny, nz));
        (u * u + w * w).sqrt() <= center_radius
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let layout = Layout { ny, nz, axes, center_radius, support: support_len, center, order };

    let make = |plane: Vec<bool>, radius: f64| {
        let count = plane.iter().filter(|&&b| b).count();
        SamplingMask {
            ny,
            nz,
            plane,
            full_center_radius: layout.center_radius,
            semi_axes: layout.axes,
            target_rate,
            achieved_rate: count as f64 / layout.support as f64,
            min_distance: radius,
            seed,
        }
    };

    // Distinct grid points are at least 1 apart, so radius 1 accepts all.
    let full = make(layout.throw(1.0), 1.0);
    let within = |m: &SamplingMask| (m.achieved_rate - target_rate).abs() <= RATE_TOLERANCE * target_rate;
    if within(&full) {
        return Ok(full);
    }
    let mut lo = 1.0;
    let mut hi = (ny.max(nz)) as f64;
    for _ in 0..MAX_BISECTIONS {
        if hi - lo < 1e-9 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let m = make(layout.throw(mid), mid);
        if within(&m) {
            return Ok(m);
        }
        if m.achieved_rate > target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // The rate is a step function of the radius on a grid. When a step
    // straddles the window, thin the denser pattern by dropping its most
    // recently accepted darts; removal keeps the distance constraint.
    let want = (target_rate * layout.support as f64).round() as usize;
    if want < layout.center.len() {
        return Err(Error::InfeasibleRate {
            target: target_rate,
            reason: format!("fully sampled center alone holds {} points", layout.center.len()),
        });
    }
    let mut plane = layout.throw(lo);
    let mut count = plane.iter().filter(|&&b| b).count();
    for &i in layout.order.iter().rev() {
        if count <= want {
            break;
        }
        if plane[i] {
            plane[i] = false;
            count -= 1;
        }
    }
    let m = make(plane, lo);
    if within(&m) {
        Ok(m)
    } else {
        Err(Error::InfeasibleRate {
            target: target_rate,
            reason: format!("closest achievable rate is {:.4}", m.achieved_rate),
        })
    }
}

/// Seed for echo `echo` derived from a base seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, echo: usize) -> u64 {
    let mut z = seed ^ (echo as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One mask per echo with independent derived seeds (or one shared mask).
pub fn per_echo_masks(params: &SamplingParams, echoes: usize, seed: u64, policy: MaskPolicy) -> Result<Vec<SamplingMask>> {
    if echoes == 0 {
        return Err(Error::invalid("echo count must be at least 1"));
    }
    match policy {
        MaskPolicy::Redraw => (0..echoes)
            .map(|i| poisson_disk_mask(params.ny, params.nz, params.rate, params.center_fraction, derive_seed(seed, i)))
            .collect(),
        MaskPolicy::Shared => {
            let m = poisson_disk_mask(params.ny, params.nz, params.rate, params.center_fraction, derive_seed(seed, 0))?;
            Ok(vec![m; echoes])
        }
    }
}
