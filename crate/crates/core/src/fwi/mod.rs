//! Density-only full waveform inversion with adjoint gradients.

mod config;
mod data;
mod lbfgs;
mod param;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::FmcDataset;
use crate::error::{Error, Result};
use crate::grid::{ImageGrid, RasterGrid};
use crate::wavesim::{
    AdjointOptions, ForwardAccess, ForwardStorage, NodalMaterial, ReceiverSpec, SpectralMesh,
    SpongeLayer, TimeParams, Traces, WaveSolver,
};

pub use config::{FwiConfig, LbfgsSettings, StageSettings};
pub use data::{apply_time_window, misfit, stack_sources, Supershot, TimeWindow};
pub use lbfgs::{minimize, LbfgsOptions, LbfgsResult, MisfitRecord, Objective, StopReason};
pub use param::{DensityParameterization, NodeBasis, Roi};

/// Density bounds as fractions of the background.
pub const DEFAULT_BOUNDS: (f64, f64) = (0.1, 1.0);
pub const DEFAULT_INVERSION_SPACING: f64 = 0.25e-3;
pub const DEFAULT_BOTTOM_BAND: f64 = 0.1;

/// Discretisation shared by every simulation of an inversion.
#[derive(Debug, Clone)]
pub struct FwiSetup<'a> {
    pub mesh: &'a SpectralMesh,
    /// Defect-free material; only the density inside the ROI is updated.
    pub background: NodalMaterial,
    pub sponge: SpongeLayer,
    pub time: TimeParams,
    /// Steps between forward checkpoints; 0 picks `sqrt(n_steps)`.
    pub checkpoint_interval: usize,
}

impl FwiSetup<'_> {
    fn checkpoint_interval(&self) -> usize {
        if self.checkpoint_interval > 0 {
            self.checkpoint_interval
        } else {
            ((self.time.n_steps() as f64).sqrt().ceil() as usize).max(1)
        }
    }
}

/// Misfit and its derivatives at one model.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub chi: f64,
    /// `d chi / d c_i` for every density coefficient.
    pub coeffs: Vec<f64>,
    /// Density sensitivity kernel at the mesh nodes, summed over supershots.
    pub kernel: Vec<f64>,
}

/// Windowed L2 waveform misfit over a set of supershots.
pub struct FwiProblem<'a> {
    setup: &'a FwiSetup<'a>,
    template: DensityParameterization,
    basis: NodeBasis,
    receivers: ReceiverSpec,
    shots: Vec<Supershot>,
    window: Option<TimeWindow>,
}

impl<'a> FwiProblem<'a> {
    pub fn new(
        setup: &'a FwiSetup<'a>,
        template: DensityParameterization,
        receivers: ReceiverSpec,
        shots: Vec<Supershot>,
        window: Option<TimeWindow>,
    ) -> Result<Self> {
        let n_t = setup.time.n_samples();
        for s in &shots {
            if s.observed.n_samples != n_t || s.observed.n_receivers != receivers.len() {
                return Err(Error::ShapeMismatch(format!(
                    "observed data {}x{} for {} receivers and {} samples",
                    s.observed.n_receivers,
                    s.observed.n_samples,
                    receivers.len(),
                    n_t
                )));
            }
        }
        let basis = NodeBasis::new(&template, setup.mesh);
        Ok(Self {
            setup,
            template,
            basis,
            receivers,
            shots,
            window,
        })
    }

    pub fn template(&self) -> &DensityParameterization {
        &self.template
    }

    pub fn material(&self, param: &DensityParameterization) -> NodalMaterial {
        self.basis.apply(param, &self.setup.background)
    }

    fn with_x(&self, x: &[f64]) -> DensityParameterization {
        let mut p = self.template.clone();
        p.set_normalized(x);
        p
    }

    pub fn misfit_at(&self, param: &DensityParameterization) -> Result<f64> {
        let mat = self.material(param);
        let solver = WaveSolver::new(self.setup.mesh, &mat, &self.setup.sponge, self.setup.time)?;
        let parts: Vec<Result<f64>> = self
            .shots
            .par_iter()
            .map(|shot| {
                let sim = solver
                    .run_forward(&shot.sources, &self.receivers, ForwardStorage::None)?
                    .traces;
                misfit(
                    &apply_time_window(&sim, self.window.as_ref()),
                    &apply_time_window(&shot.observed, self.window.as_ref()),
                )
            })
            .collect();
        parts.into_iter().sum()
    }

    pub fn gradient(&self, param: &DensityParameterization) -> Result<Gradient> {
        let mat = self.material(param);
        let solver = WaveSolver::new(self.setup.mesh, &mat, &self.setup.sponge, self.setup.time)?;
        let interval = self.setup.checkpoint_interval();
        let parts: Vec<Result<(f64, Vec<f64>)>> = self
            .shots
            .par_iter()
            .map(|shot| {
                let fwd = solver.run_forward(
                    &shot.sources,
                    &self.receivers,
                    ForwardStorage::Checkpoints { interval },
                )?;
                let w = self.window.as_ref();
                let sim = apply_time_window(&fwd.traces, w);
                let obs = apply_time_window(&shot.observed, w);
                let chi = misfit(&sim, &obs)?;
                let mut res = sim;
                for (r, o) in res.data.iter_mut().zip(&obs.data) {
                    *r -= o;
                }
                let res = apply_time_window(&res, w);
                let cps = fwd.checkpoints.expect("checkpoints requested");
                let run = solver.run_adjoint(
                    &self.receivers,
                    &res,
                    AdjointOptions {
                        forward: Some(ForwardAccess::Replay {
                            checkpoints: &cps,
                            sources: &shot.sources,
                        }),
                        store_decimation: None,
                    },
                )?;
                Ok((chi, run.kernels.expect("kernels requested").density))
            })
            .collect();
        let mut chi = 0.0;
        let mut kernel = vec![0.0; self.setup.mesh.n_nodes()];
        for p in parts {
            let (c, k) = p?;
            chi += c;
            kernel.iter_mut().zip(&k).for_each(|(a, b)| *a += b);
        }
        let um = self.setup.mesh.unit_mass();
        let nodal: Vec<f64> = kernel.iter().zip(um).map(|(k, m)| k * m).collect();
        let coeffs = self.basis.project(&nodal, self.template.len());
        Ok(Gradient {
            chi,
            coeffs,
            kernel,
        })
    }

    /// Sensitivity kernel sampled on an image grid.
    pub fn kernel_image(&self, g: &Gradient, grid: RasterGrid) -> ImageGrid {
        self.setup.mesh.to_image(&g.kernel, grid)
    }
}

impl Objective for FwiProblem<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.misfit_at(&self.with_x(x))
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let g = self.gradient(&self.with_x(x))?;
        let s = self.template.rho_bg;
        Ok((g.chi, g.coeffs.into_iter().map(|v| v * s).collect()))
    }

    fn data_scale(&self) -> Option<f64> {
        let w = self.window.as_ref();
        let mut e = 0.0;
        for s in &self.shots {
            let obs = apply_time_window(&s.observed, w);
            e += misfit(&obs, &Traces::zeros(obs.dt, obs.n_receivers, obs.n_samples)).ok()?;
        }
        Some(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionStageConfig {
    pub max_iters: usize,
    pub group_size: usize,
    /// Exclude data from this window (e.g. the back-wall echo).
    #[serde(skip)]
    pub time_window: Option<TimeWindow>,
    /// Applied to the starting model before the stage runs.
    pub reset_threshold: Option<f64>,
}

impl InversionStageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size == 0 {
            return Err(Error::invalid("group size must be >= 1"));
        }
        if let Some(t) = self.reset_threshold {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::invalid(format!(
                    "reset threshold {t} outside (0, 1)"
                )));
            }
        }
        Ok(())
    }
}

/// Observed data and excitation for an inversion.
#[derive(Debug, Clone)]
pub struct InversionData<'d> {
    /// Dataset on the inversion time axis, already normalized.
    pub fmc: &'d FmcDataset,
    /// Source waveform on the inversion time axis.
    pub waveform: &'d [f64],
    /// Source amplitude matching the dataset normalization.
    pub amplitude: f64,
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub param: DensityParameterization,
    pub history: Vec<MisfitRecord>,
    pub stop: StopReason,
}

pub fn run_stage(
    setup: &FwiSetup<'_>,
    initial: &DensityParameterization,
    cfg: &InversionStageConfig,
    data: &InversionData<'_>,
    opts: &LbfgsOptions,
) -> Result<StageResult> {
    cfg.validate()?;
    let mut start = initial.clone();
    if let Some(t) = cfg.reset_threshold {
        start.reset_high_densities(t)?;
    }
    if cfg.max_iters == 0 {
        return Ok(StageResult {
            param: start,
            history: Vec::new(),
            stop: StopReason::MaxIterations,
        });
    }
    let all: Vec<usize> = (0..data.fmc.n).collect();
    let shots = stack_sources(
        data.fmc,
        cfg.group_size,
        &all,
        data.waveform,
        data.amplitude,
    )?;
    let receivers = crate::acquisition::array_receivers(&data.fmc.array);
    let problem = FwiProblem::new(setup, start.clone(), receivers, shots, cfg.time_window)?;
    let (lo, hi) = start.normalized_bounds();
    let o = LbfgsOptions {
        max_iters: cfg.max_iters,
        ..*opts
    };
    let r = minimize(&problem, &start.normalized(), lo, hi, &o)?;
    let mut param = start;
    param.set_normalized(&r.x);
    // the box projection in normalized units can round just past a bound
    for c in &mut param.coeffs {
        *c = c.clamp(param.bounds.0, param.bounds.1);
    }
    Ok(StageResult {
        param,
        history: r.history,
        stop: r.stop,
    })
}

/// Exclusion of the back-wall echo: from two periods before its arrival
/// `delay + 2 depth / vp` to the end of the record, with a one-period taper.
/// `delay` is the time of the pulse centre after excitation.
pub fn backwall_window(depth: f64, vp: f64, period: f64, delay: f64) -> TimeWindow {
    TimeWindow::from(delay + 2.0 * depth / vp - 2.0 * period, period)
}

#[derive(Debug, Clone)]
pub struct TwoStageResult {
    pub param: DensityParameterization,
    pub image: ImageGrid,
    /// `(stage, record)` pairs.
    pub history: Vec<(usize, MisfitRecord)>,
    pub stage1: StageResult,
    /// Model handed to stage 2 (after the resets).
    pub stage2_start: DensityParameterization,
}

pub fn two_stage_inversion(
    setup: &FwiSetup<'_>,
    initial: &DensityParameterization,
    data: &InversionData<'_>,
    stage1: &InversionStageConfig,
    stage2: &InversionStageConfig,
    bottom_band: f64,
    image_grid: RasterGrid,
    opts: &LbfgsOptions,
) -> Result<TwoStageResult> {
    let s1 = run_stage(setup, initial, stage1, data, opts)?;
    let mut mid = s1.param.clone();
    if let Some(t) = stage2.reset_threshold {
        mid.reset_high_densities(t)?;
    }
    mid.reset_bottom_band(bottom_band);
    let s2_cfg = InversionStageConfig {
        reset_threshold: None,
        ..*stage2
    };
    let s2 = run_stage(setup, &mid, &s2_cfg, data, opts)?;
    let history = s1
        .history
        .iter()
        .map(|r| (1, *r))
        .chain(s2.history.iter().map(|r| (2, *r)))
        .collect();
    let image = s2.param.contrast_image(image_grid);
    Ok(TwoStageResult {
        param: s2.param,
        image,
        history,
        stage1: s1,
        stage2_start: mid,
    })
}

pub fn history_csv(history: &[(usize, MisfitRecord)]) -> String {
    let mut s = String::from("stage,iteration,chi,grad_norm,step,accepted\n");
    for (stage, r) in history {
        let _ = writeln!(
            s,
            "{stage},{},{:e},{:e},{:e},{}",
            r.iteration, r.chi, r.grad_norm, r.step, r.accepted
        );
    }
    s
}

pub fn write_history_csv(path: &Path, history: &[(usize, MisfitRecord)]) -> Result<()> {
    fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}
