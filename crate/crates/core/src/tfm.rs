//! Total focusing method on the analytic FMC matrix.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::acquisition::FmcDataset;
use crate::error::{Error, Result};
use crate::grid::{ImageGrid, RasterGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    Nearest,
    #[default]
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TfmConfig {
    pub grid: RasterGrid,
    /// Longitudinal speed used for the delays.
    pub c: f64,
    pub interpolation: Interpolation,
    /// Time of the pulse reference point after excitation; subtracted from
    /// every recorded time.
    pub delay: f64,
}

impl TfmConfig {
    pub fn new(grid: RasterGrid, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid(format!(
                "TFM speed must be positive, got {c}"
            )));
        }
        Ok(Self {
            grid,
            c,
            interpolation: Interpolation::Linear,
            delay: 0.0,
        })
    }
}

/// Analytic signal by the one-sided spectrum construction.
pub fn analytic_signal(trace: &[f64]) -> Vec<Complex<f64>> {
    let n = trace.len();
    if n < 2 {
        return trace.iter().map(|&v| Complex::new(v, 0.0)).collect();
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex<f64>> = trace.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    // DC (and Nyquist for even n) unchanged; positive doubled; negative zeroed
    let half = n.div_ceil(2);
    for v in buf.iter_mut().take(half).skip(1) {
        *v *= 2.0;
    }
    let first_neg = n / 2 + 1;
    for v in buf.iter_mut().skip(first_neg) {
        *v = Complex::new(0.0, 0.0);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let s = 1.0 / n as f64;
    buf.iter_mut().for_each(|v| *v *= s);
    // the real part is the input up to round-off; keep it exact
    for (v, &x) in buf.iter_mut().zip(trace) {
        v.re = x;
    }
    buf
}

#[inline]
pub fn travel_time(tx: (f64, f64), pixel: (f64, f64), rx: (f64, f64), c: f64) -> f64 {
    let d1 = (pixel.0 - tx.0).hypot(pixel.1 - tx.1);
    let d2 = (pixel.0 - rx.0).hypot(pixel.1 - rx.1);
    (d1 + d2) / c
}

#[inline]
fn sample(trace: &[Complex<f64>], x: f64, mode: Interpolation) -> Complex<f64> {
    let last = (trace.len() - 1) as f64;
    if !(x >= 0.0 && x <= last) {
        return Complex::new(0.0, 0.0);
    }
    match mode {
        Interpolation::Nearest => trace[x.round() as usize],
        Interpolation::Linear => {
            let k = x.floor() as usize;
            if k + 1 >= trace.len() {
                return trace[k];
            }
            let f = x - k as f64;
            trace[k] * (1.0 - f) + trace[k + 1] * f
        }
    }
}

/// `I(x, z) = |sum_ij X_ij((s1 + s2) / c)|` over the pixel grid.
pub fn tfm_image(fmc: &FmcDataset, cfg: &TfmConfig) -> Result<ImageGrid> {
    if cfg.grid.is_empty() {
        return Err(Error::invalid("TFM grid has no pixels"));
    }
    if !(cfg.c > 0.0) {
        return Err(Error::invalid("TFM speed must be positive"));
    }
    let n = fmc.n;
    let analytic: Vec<Vec<Complex<f64>>> = (0..n * n)
        .into_par_iter()
        .map(|ij| analytic_signal(fmc.trace(ij / n, ij % n)))
        .collect();
    let elems = fmc.array.positions();
    let grid = cfg.grid;
    let inv = 1.0 / (cfg.c * fmc.dt);
    let t0 = (fmc.t0 - cfg.delay) / fmc.dt;
    let mut values = vec![0.0; grid.len()];
    values
        .par_chunks_mut(grid.nx)
        .enumerate()
        .for_each(|(j, row)| {
            let mut dist = vec![0.0; n];
            for (i, out) in row.iter_mut().enumerate() {
                let (x, y) = grid.center(i, j);
                for (d, e) in dist.iter_mut().zip(&elems) {
                    *d = (x - e.0).hypot(y - e.1);
                }
                let mut acc = Complex::new(0.0, 0.0);
                for a in 0..n {
                    for b in 0..n {
                        let k = (dist[a] + dist[b]) * inv - t0;
                        acc += sample(&analytic[a * n + b], k, cfg.interpolation);
                    }
                }
                *out = acc.norm();
            }
        });
    ImageGrid::from_values(grid, values)
}
