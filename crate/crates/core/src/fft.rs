//! Unitary 3D FFT on row-major grids.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::par;
use crate::volume::Shape;

/// Pre-planned forward and inverse transforms for one grid shape.
/// Both directions are scaled by `1/sqrt(N)`.
#[derive(Clone)]
pub struct Fft3 {
    shape: Shape,
    fwd: [Arc<dyn Fft<f64>>; 3],
    inv: [Arc<dyn Fft<f64>>; 3],
    scale: f64,
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("shape", &self.shape).finish()
    }
}

impl Fft3 {
    pub fn new(shape: Shape) -> Self {
        let mut planner = FftPlanner::new();
        let dims = shape.as_array();
        let fwd = dims.map(|n| planner.plan_fft(n, FftDirection::Forward));
        let inv = dims.map(|n| planner.plan_fft(n, FftDirection::Inverse));
        Self { shape, fwd, inv, scale: 1.0 / (shape.len() as f64).sqrt() }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.fwd);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inv);
    }

    fn transform(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        assert_eq!(data.len(), self.shape.len(), "FFT buffer length");
        let Shape { nx, ny, nz } = self.shape;

        // x lines are contiguous
        if nx > 1 {
            let plan = &plans[0];
            par::for_each_chunk_mut(data, nx * ny, |_, slab| {
                let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
                for line in slab.chunks_exact_mut(nx) {
                    plan.process_with_scratch(line, &mut scratch);
                }
            });
        }
        // y lines live inside one z slab
        if ny > 1 {
            let plan = &plans[1];
            par::for_each_chunk_mut(data, nx * ny, |_, slab| {
                let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
                let mut line = vec![Complex64::default(); ny];
                for x in 0..nx {
                    for y in 0..ny {
                        line[y] = slab[x + nx * y];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for y in 0..ny {
                        slab[x + nx * y] = line[y];
                    }
                }
            });
        }
        // z lines span slabs: transpose-free gather per (x, y) column block
        if nz > 1 {
            let plan = &plans[2];
            let plane = nx * ny;
            let columns: Vec<Vec<Complex64>> = par::collect_indexed(plane, |c| {
                let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
                let mut line: Vec<Complex64> = (0..nz).map(|z| data[c + plane * z]).collect();
                plan.process_with_scratch(&mut line, &mut scratch);
                line
            });
            for (c, col) in columns.into_iter().enumerate() {
                for (z, v) in col.into_iter().enumerate() {
                    data[c + plane * z] = v;
                }
            }
        }
        let s = self.scale;
        par::for_each_mut(data, |v| *v *= s);
    }
}
