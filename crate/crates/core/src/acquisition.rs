//! Full-matrix-capture synthesis, source time functions and the FMC file format.
//!
//! FMC file layout (little-endian):
//!
//! ```text
//! "FMC1" | u32 n | u32 n_t | f64 dt | f64 t0 | f64 pitch | f64 first_x
//! n * n * n_t f64 samples, transmitter-major then receiver then time
//! ```

use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::model::ArraySpec;
use crate::wavesim::{ForwardStorage, ReceiverSpec, SourceTerm, Traces, WaveSolver};

const MAGIC: &[u8; 4] = b"FMC1";
const HEADER_LEN: usize = 4 + 4 + 4 + 4 * 8;

/// Centre frequency of the shipped default pulse.
pub const DEFAULT_PULSE_FC: f64 = 2.282e6;
/// Gaussian envelope width (standard deviation) of the default pulse.
pub const DEFAULT_PULSE_SIGMA: f64 = 1.842e-7;
/// Minimum FFT length used for spectrum statistics.
const MIN_SPECTRUM_LEN: usize = 1 << 16;

/// `n x n` transmitter/receiver matrix of traces.
#[derive(Debug, Clone, PartialEq)]
pub struct FmcDataset {
    pub n: usize,
    pub n_t: usize,
    pub dt: f64,
    pub t0: f64,
    pub array: ArraySpec,
    /// `data[(i * n + j) * n_t + k]`
    pub data: Vec<f64>,
}

impl FmcDataset {
    pub fn zeros(array: ArraySpec, n_t: usize, dt: f64) -> Self {
        let n = array.n_elements;
        Self {
            n,
            n_t,
            dt,
            t0: 0.0,
            array,
            data: vec![0.0; n * n * n_t],
        }
    }

    pub fn trace(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.n + j) * self.n_t;
        &self.data[o..o + self.n_t]
    }

    pub fn trace_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = (i * self.n + j) * self.n_t;
        &mut self.data[o..o + self.n_t]
    }

    /// All receiver traces for transmitter `i`.
    pub fn shot(&self, i: usize) -> Traces {
        let o = i * self.n * self.n_t;
        Traces {
            dt: self.dt,
            n_receivers: self.n,
            n_samples: self.n_t,
            data: self.data[o..o + self.n * self.n_t].to_vec(),
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Copy scaled so that `max |amplitude| = 1`, with the applied factor.
    pub fn normalized(&self) -> Result<(FmcDataset, f64)> {
        let m = self.max_abs();
        if m == 0.0 {
            return Err(Error::invalid("cannot normalize an all-zero dataset"));
        }
        let s = 1.0 / m;
        Ok((self.scaled(s), s))
    }

    pub fn scaled(&self, factor: f64) -> FmcDataset {
        FmcDataset {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Keep every `factor`-th sample.
    pub fn decimated(&self, factor: usize) -> Result<FmcDataset> {
        if factor == 0 {
            return Err(Error::invalid("decimation factor must be >= 1"));
        }
        let n_t = (self.n_t + factor - 1) / factor;
        let mut out = FmcDataset {
            n_t,
            dt: self.dt * factor as f64,
            data: Vec::with_capacity(self.n * self.n * n_t),
            ..self.clone()
        };
        for tr in self.data.chunks_exact(self.n_t) {
            out.data.extend(tr.iter().step_by(factor));
        }
        Ok(out)
    }

    /// Largest relative L2 difference between `I_ij` and `I_ji`.
    pub fn max_reciprocity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                let (a, b) = (self.trace(i, j), self.trace(j, i));
                let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
                let den = a
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .max(b.iter().map(|x| x * x).sum());
                if den > 0.0 {
                    worst = worst.max((num / den).sqrt());
                }
            }
        }
        worst
    }

    /// Error unless the array geometry matches `other` to within 1 nm.
    pub fn ensure_array_matches(&self, array: &ArraySpec) -> Result<()> {
        let tol = 1e-9;
        if self.n != array.n_elements
            || (self.array.pitch - array.pitch).abs() > tol
            || (self.array.first_element_x - array.first_element_x).abs() > tol
        {
            return Err(Error::ShapeMismatch(format!(
                "FMC array ({} elements, pitch {:.4e} m, first x {:.4e} m) differs from scenario ({} elements, pitch {:.4e} m, first x {:.4e} m)",
                self.n, self.array.pitch, self.array.first_element_x, array.n_elements, array.pitch, array.first_element_x
            )));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let mut head = Vec::with_capacity(HEADER_LEN);
        head.extend_from_slice(MAGIC);
        head.extend_from_slice(&(self.n as u32).to_le_bytes());
        head.extend_from_slice(&(self.n_t as u32).to_le_bytes());
        for v in [
            self.dt,
            self.t0,
            self.array.pitch,
            self.array.first_element_x,
        ] {
            head.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&head).map_err(|e| Error::io(path, e))?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Read an FMC file. The surface height is not stored and comes back as 0.
    pub fn read(path: &Path) -> Result<FmcDataset> {
        let mut raw = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut raw))
            .map_err(|e| Error::io(path, e))?;
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if raw.len() < HEADER_LEN || &raw[..4] != MAGIC {
            return Err(bad("missing FMC1 header".into()));
        }
        let u = |o: usize| u32::from_le_bytes(raw[o..o + 4].try_into().unwrap()) as usize;
        let f = |o: usize| f64::from_le_bytes(raw[o..o + 8].try_into().unwrap());
        let (n, n_t) = (u(4), u(8));
        let (dt, t0, pitch, first_x) = (f(12), f(20), f(28), f(36));
        let expected = HEADER_LEN + n * n * n_t * 8;
        if raw.len() != expected {
            return Err(bad(format!(
                "file has {} bytes, header implies {expected}",
                raw.len()
            )));
        }
        if !(dt > 0.0) {
            return Err(bad(format!("nonpositive dt {dt}")));
        }
        let data = raw[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(FmcDataset {
            n,
            n_t,
            dt,
            t0,
            array: ArraySpec {
                n_elements: n,
                pitch,
                first_element_x: first_x,
                surface_y: 0.0,
            },
            data,
        })
    }

    /// One row per sample: `tx,rx,t,value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let io = |e| Error::io(path, e);
        writeln!(w, "tx,rx,t,value").map_err(io)?;
        for i in 0..self.n {
            for j in 0..self.n {
                for (k, v) in self.trace(i, j).iter().enumerate() {
                    writeln!(w, "{i},{j},{:.9e},{v:.12e}", self.time(k)).map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)
    }
}

/// Peak and 95%-energy frequencies of a pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumStats {
    pub f_max: f64,
    pub f_95: f64,
    /// Frequency resolution of the spectrum the stats were read from.
    pub df: f64,
}

/// One-sided power spectrum `(frequencies, |X(f)|^2)` of a zero-padded signal.
pub fn power_spectrum(samples: &[f64], dt: f64, min_len: usize) -> (Vec<f64>, Vec<f64>) {
    let len = samples.len().max(min_len).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(len, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let half = len / 2 + 1;
    let df = 1.0 / (len as f64 * dt);
    let freqs = (0..half).map(|k| k as f64 * df).collect();
    let power = buf[..half].iter().map(|c| c.norm_sqr()).collect();
    (freqs, power)
}

pub fn spectrum_stats(samples: &[f64], dt: f64) -> Result<SpectrumStats> {
    if samples.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("spectrum of an all-zero signal"));
    }
    let (f, p) = power_spectrum(samples, dt, MIN_SPECTRUM_LEN.max(8 * samples.len()));
    let mut k_max = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[k_max] {
            k_max = k;
        }
    }
    let total: f64 = p.iter().sum();
    let mut acc = 0.0;
    let mut k95 = p.len() - 1;
    for (k, &v) in p.iter().enumerate() {
        acc += v;
        if acc >= 0.95 * total {
            k95 = k;
            break;
        }
    }
    Ok(SpectrumStats {
        f_max: f[k_max],
        f_95: f[k95],
        df: f[1] - f[0],
    })
}

/// Tukey window: flat with raised-cosine edges, each `fraction / 2` of the length.
pub fn tukey(n: usize, fraction: f64) -> Vec<f64> {
    let a = fraction.clamp(0.0, 1.0);
    if n < 2 || a == 0.0 {
        return vec![1.0; n];
    }
    let edge = 0.5 * a;
    (0..n)
        .map(|k| {
            let x = k as f64 / (n - 1) as f64;
            if x < edge {
                0.5 * (1.0 - (PI * x / edge).cos())
            } else if x > 1.0 - edge {
                0.5 * (1.0 - (PI * (1.0 - x) / edge).cos())
            } else {
                1.0
            }
        })
        .collect()
}

/// Sampled excitation pulse starting at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTimeFunction {
    pub samples: Vec<f64>,
    pub dt: f64,
}

impl SourceTimeFunction {
    pub fn new(samples: Vec<f64>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid("pulse sampling interval must be positive"));
        }
        if samples.is_empty() || samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("pulse samples must be finite and nonempty"));
        }
        Ok(Self { samples, dt })
    }

    /// Gaussian-enveloped sine centred at `5 sigma`, Tukey-tapered so the
    /// first and last samples are exactly zero.
    pub fn gaussian_tone(fc: f64, sigma: f64, dt: f64) -> Self {
        let t0 = 5.0 * sigma;
        let n = (2.0 * t0 / dt).round() as usize + 1;
        let w = tukey(n, 0.2);
        let samples = (0..n)
            .map(|k| {
                let t = k as f64 * dt - t0;
                w[k] * (-t * t / (2.0 * sigma * sigma)).exp() * (2.0 * PI * fc * t).sin()
            })
            .collect();
        Self { samples, dt }
    }

    /// The shipped excitation: `f_max = 2.296 MHz`, `f_95 = 3.284 MHz`.
    pub fn default_pulse(dt: f64) -> Self {
        Self::gaussian_tone(DEFAULT_PULSE_FC, DEFAULT_PULSE_SIGMA, dt)
    }

    /// Default pulse with all frequencies multiplied by `factor`.
    pub fn default_pulse_scaled(factor: f64, dt: f64) -> Self {
        Self::gaussian_tone(DEFAULT_PULSE_FC * factor, DEFAULT_PULSE_SIGMA / factor, dt)
    }

    pub fn duration(&self) -> f64 {
        (self.samples.len() - 1) as f64 * self.dt
    }

    pub fn value_at(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        let x = t / self.dt;
        let k = x.floor() as usize;
        if k + 1 >= self.samples.len() {
            return if k + 1 == self.samples.len() && x == k as f64 {
                self.samples[k]
            } else {
                0.0
            };
        }
        let f = x - k as f64;
        (1.0 - f) * self.samples[k] + f * self.samples[k + 1]
    }

    /// Linear resampling onto a new interval.
    pub fn resampled(&self, dt: f64) -> Self {
        if (dt - self.dt).abs() <= 1e-12 * self.dt {
            return self.clone();
        }
        let n = (self.duration() / dt).floor() as usize + 1;
        Self {
            samples: (0..n).map(|k| self.value_at(k as f64 * dt)).collect(),
            dt,
        }
    }

    /// Waveform on a solver time axis of `n` samples (zero-padded or cut).
    pub fn waveform(&self, dt: f64, n: usize) -> Vec<f64> {
        let mut w = self.resampled(dt).samples;
        w.resize(n, 0.0);
        w
    }

    pub fn stats(&self) -> Result<SpectrumStats> {
        spectrum_stats(&self.samples, self.dt)
    }

    /// One period of the peak frequency.
    pub fn dominant_period(&self) -> Result<f64> {
        Ok(1.0 / self.stats()?.f_max)
    }
}

/// Cut `[t_a, t_b]` out of a trace, taper it and normalize the peak to 1.
pub fn estimate_stf(
    trace: &[f64],
    dt: f64,
    window: (f64, f64),
    taper: f64,
) -> Result<SourceTimeFunction> {
    let (ta, tb) = window;
    if !(tb > ta) || ta < 0.0 {
        return Err(Error::invalid(format!(
            "empty pulse window [{ta:.3e}, {tb:.3e}] s"
        )));
    }
    let a = (ta / dt).ceil() as usize;
    let b = ((tb / dt).floor() as usize).min(trace.len().saturating_sub(1));
    if a >= b {
        return Err(Error::invalid(format!(
            "pulse window [{ta:.3e}, {tb:.3e}] s holds no samples"
        )));
    }
    let w = tukey(b - a + 1, taper);
    let mut samples: Vec<f64> = trace[a..=b].iter().zip(&w).map(|(v, w)| v * w).collect();
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::invalid("pulse window contains only zeros"));
    }
    samples.iter_mut().for_each(|v| *v /= peak);
    SourceTimeFunction::new(samples, dt)
}

/// Point sources for a set of array elements firing the same pulse.
pub fn element_sources(
    array: &ArraySpec,
    elements: &[usize],
    waveform: &[f64],
    amplitude: f64,
) -> Result<Vec<SourceTerm>> {
    elements
        .iter()
        .map(|&i| {
            SourceTerm::new(
                (array.element_x(i), array.surface_y),
                (0.0, 1.0),
                waveform.to_vec(),
                amplitude,
            )
            .map(|s| s.with_width(array.element_width()))
        })
        .collect()
}

pub fn array_receivers(array: &ArraySpec) -> ReceiverSpec {
    ReceiverSpec::surface_normal(array.positions()).with_width(array.element_width())
}

/// Fire every element in turn and record all elements.
pub fn generate_fmc(
    solver: &WaveSolver<'_>,
    array: &ArraySpec,
    stf: &SourceTimeFunction,
) -> Result<FmcDataset> {
    let time = solver.time();
    let n_t = time.n_samples();
    let wave = stf.waveform(time.dt, n_t);
    let rx = array_receivers(array);
    let shots: Vec<Result<Traces>> = (0..array.n_elements)
        .into_par_iter()
        .map(|i| {
            let src = element_sources(array, &[i], &wave, 1.0)?;
            Ok(solver.run_forward(&src, &rx, ForwardStorage::None)?.traces)
        })
        .collect();
    let mut fmc = FmcDataset::zeros(*array, n_t, time.dt);
    let block = array.n_elements * n_t;
    for (i, shot) in shots.into_iter().enumerate() {
        fmc.data[i * block..(i + 1) * block].copy_from_slice(&shot?.data);
    }
    Ok(fmc)
}
