use std::f64::consts::PI;

use crate::acquisition::{element_sources, FmcDataset};
use crate::error::{Error, Result};
use crate::wavesim::{SourceTerm, Traces};

/// `1/2 sum_r int (sim - obs)^2 dt` with the trapezoid rule.
pub fn misfit(sim: &Traces, obs: &Traces) -> Result<f64> {
    sim.ensure_same_shape(obs)?;
    let n = sim.n_samples;
    let mut chi = 0.0;
    for r in 0..sim.n_receivers {
        let (a, b) = (sim.trace(r), obs.trace(r));
        for k in 0..n {
            let w = if k == 0 || k + 1 == n { 0.5 } else { 1.0 };
            chi += w * (a[k] - b[k]).powi(2);
        }
    }
    Ok(0.5 * sim.dt * chi)
}

/// Exclusion interval `[t_a, t_b]` with raised-cosine ramps of length `taper`
/// just outside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWindow {
    pub t_a: f64,
    pub t_b: f64,
    pub taper: f64,
}

impl TimeWindow {
    pub fn new(t_a: f64, t_b: f64, taper: f64) -> Result<Self> {
        if t_b < t_a {
            return Err(Error::invalid(format!(
                "inverted time window [{t_a:.3e}, {t_b:.3e}] s"
            )));
        }
        if taper < 0.0 {
            return Err(Error::invalid("taper length must be nonnegative"));
        }
        Ok(Self { t_a, t_b, taper })
    }

    /// Everything from `t_a` on.
    pub fn from(t_a: f64, taper: f64) -> Self {
        Self {
            t_a,
            t_b: f64::INFINITY,
            taper,
        }
    }

    pub fn weight(&self, t: f64) -> f64 {
        let ramp = |d: f64| {
            if self.taper <= 0.0 || d >= self.taper {
                1.0
            } else {
                0.5 * (1.0 - (PI * d / self.taper).cos())
            }
        };
        if t >= self.t_a && t <= self.t_b {
            0.0
        } else if t < self.t_a {
            ramp(self.t_a - t)
        } else {
            ramp(t - self.t_b)
        }
    }

    pub fn weights(&self, dt: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| self.weight(k as f64 * dt)).collect()
    }
}

pub fn apply_time_window(traces: &Traces, window: Option<&TimeWindow>) -> Traces {
    let Some(w) = window else {
        return traces.clone();
    };
    let weights = w.weights(traces.dt, traces.n_samples);
    let mut out = traces.clone();
    for tr in out.data.chunks_exact_mut(traces.n_samples) {
        for (v, w) in tr.iter_mut().zip(&weights) {
            *v *= w;
        }
    }
    out
}

/// Simultaneous excitation of a group of neighbouring elements.
#[derive(Debug, Clone)]
pub struct Supershot {
    pub members: Vec<usize>,
    pub sources: Vec<SourceTerm>,
    pub observed: Traces,
}

/// Group the selected transmitters by position into chunks of `group_size`
/// and sum their rows of the information matrix.
pub fn stack_sources(
    fmc: &FmcDataset,
    group_size: usize,
    selection: &[usize],
    waveform: &[f64],
    amplitude: f64,
) -> Result<Vec<Supershot>> {
    if selection.is_empty() {
        return Err(Error::invalid("empty transmitter selection"));
    }
    if group_size == 0 {
        return Err(Error::invalid("group size must be >= 1"));
    }
    if let Some(&bad) = selection.iter().find(|&&i| i >= fmc.n) {
        return Err(Error::invalid(format!(
            "transmitter {bad} outside a {}-element array",
            fmc.n
        )));
    }
    let mut order = selection.to_vec();
    order.sort_by(|&a, &b| fmc.array.element_x(a).total_cmp(&fmc.array.element_x(b)));
    order.dedup();
    order
        .chunks(group_size)
        .map(|members| {
            let mut observed = fmc.shot(members[0]);
            for &m in &members[1..] {
                observed.add_assign(&fmc.shot(m))?;
            }
            Ok(Supershot {
                members: members.to_vec(),
                sources: element_sources(&fmc.array, members, waveform, amplitude)?,
                observed,
            })
        })
        .collect()
}
