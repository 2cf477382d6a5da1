//! Scenario-level drivers shared by the command line and the tests.

use crate::acquisition::{array_receivers, element_sources, generate_fmc, FmcDataset};
use crate::error::{Error, Result};
use crate::fwi::{
    backwall_window, two_stage_inversion, DensityParameterization, FwiConfig, FwiProblem, FwiSetup,
    InversionData, InversionStageConfig, LbfgsOptions, Roi, StageSettings, Supershot,
    TwoStageResult,
};
use crate::grid::{ImageGrid, RasterGrid};
use crate::model::ScenarioSpec;
use crate::rtm::{
    finalize_rtm, rtm_shot_images, KernelKind, RtmConfig, RtmImage, Shot, DEFAULT_SIGMA,
};
use crate::scenarios::{reference_time_step, Simulation, SimulationConfig};
use crate::tfm::{tfm_image, TfmConfig};
use crate::wavesim::WaveSolver;

/// Snapshots per dominant period stored for RTM.
pub const SNAPSHOTS_PER_PERIOD: f64 = 20.0;

/// Synthesise an FMC dataset for the scenario. With `reference`, the mesh is
/// refined 2x and the time step is an integer fraction (at least 1/2) of the
/// step an inversion on the base mesh would use; the returned dataset is
/// decimated back onto that inversion step.
pub fn simulate(
    spec: &ScenarioSpec,
    cfg: &SimulationConfig,
    reference: bool,
    dt_guard: f64,
) -> Result<FmcDataset> {
    if !reference {
        let sim = Simulation::build(spec, cfg)?;
        return generate_fmc(&sim.solver()?, &spec.array, &sim.pulse);
    }
    let base = Simulation::build(
        &spec.without_defects(),
        &SimulationConfig { dt: None, ..*cfg },
    )?;
    let dt_inv = base.time.dt / dt_guard;
    let n_inv = (cfg.t_end / dt_inv).round() as usize;
    let fine = Simulation::build(
        spec,
        &SimulationConfig {
            dt: Some(dt_inv),
            ..cfg.refined(2)
        },
    )?;
    let (dt_ref, k) = reference_time_step(&fine, dt_inv, 2, crate::scenarios::STABILITY_SAFETY)?;
    let fine = fine.with_dt(dt_ref, n_inv * k)?;
    let fmc = generate_fmc(&fine.solver()?, &spec.array, &fine.pulse)?;
    fmc.decimated(k)
}

/// Background (defect-free) model on the time axis of a dataset.
#[derive(Debug, Clone)]
pub struct Context {
    pub sim: Simulation,
    /// Dataset resampled onto the solver step.
    pub fmc: FmcDataset,
    pub decimation: usize,
}

impl Context {
    /// The solver step is the largest integer multiple of the data step
    /// below `cfl / dt_guard`.
    pub fn new(
        spec: &ScenarioSpec,
        cfg: &SimulationConfig,
        fmc: &FmcDataset,
        dt_guard: f64,
    ) -> Result<Self> {
        fmc.ensure_array_matches(&spec.array)?;
        if fmc.t0 != 0.0 {
            return Err(Error::invalid(
                "datasets for model-based imaging must start at t = 0",
            ));
        }
        let sim = Simulation::build(
            &spec.without_defects(),
            &SimulationConfig { dt: None, ..*cfg },
        )?;
        let limit = sim.time.dt / dt_guard;
        if fmc.dt > limit * (1.0 + 1e-9) {
            return Err(Error::invalid(format!(
                "dataset step {:.3e} s exceeds the stable solver step {limit:.3e} s",
                fmc.dt
            )));
        }
        let decimation = ((limit / fmc.dt) * (1.0 + 1e-9)).floor().max(1.0) as usize;
        let fmc = fmc.decimated(decimation)?;
        let sim = sim.with_dt(fmc.dt, fmc.n_t - 1)?;
        Ok(Self {
            sim,
            fmc,
            decimation,
        })
    }

    pub fn solver(&self) -> Result<WaveSolver<'_>> {
        self.sim.solver()
    }

    pub fn waveform(&self) -> Vec<f64> {
        self.sim
            .pulse
            .waveform(self.sim.time.dt, self.sim.time.n_samples())
    }

    pub fn shots(&self) -> Result<Vec<Shot>> {
        let w = self.waveform();
        (0..self.fmc.n)
            .map(|i| {
                Ok(Shot {
                    sources: element_sources(&self.fmc.array, &[i], &w, 1.0)?,
                    observed: self.fmc.shot(i),
                })
            })
            .collect()
    }

    fn setup(&self) -> FwiSetup<'_> {
        FwiSetup {
            mesh: &self.sim.mesh,
            background: self.sim.material.clone(),
            sponge: self.sim.sponge,
            time: self.sim.time,
            checkpoint_interval: 0,
        }
    }
}

fn imaging_roi(spec: &ScenarioSpec, cfg: &FwiConfig) -> Result<Roi> {
    let (x0, x1, y0, y1) =
        crate::scenarios::roi_under_array(spec, cfg.roi_width_mm * 1e-3, cfg.roi_depth_mm * 1e-3);
    Roi::new(x0, x1, y0, y1)
}

/// Region of free density: the imaging region minus the surface standoff.
pub fn fwi_roi(spec: &ScenarioSpec, cfg: &FwiConfig) -> Result<Roi> {
    let r = imaging_roi(spec, cfg)?;
    Roi::new(
        r.x_min,
        r.x_max,
        r.y_min + cfg.surface_standoff_mm * 1e-3,
        r.y_max,
    )
}

/// Pixel grid shared by all methods.
pub fn image_grid(spec: &ScenarioSpec, cfg: &FwiConfig) -> Result<RasterGrid> {
    imaging_roi(spec, cfg)?.pixel_grid(cfg.pixel_mm * 1e-3)
}

/// TFM with delays measured from the centre of the configured pulse.
pub fn reconstruct_tfm(
    spec: &ScenarioSpec,
    cfg: &SimulationConfig,
    fmc: &FmcDataset,
    grid: RasterGrid,
    c: Option<f64>,
) -> Result<ImageGrid> {
    fmc.ensure_array_matches(&spec.array)?;
    let mut tc = TfmConfig::new(grid, c.unwrap_or(spec.background.vp))?;
    tc.delay = cfg.pulse(fmc.dt).duration() / 2.0;
    tfm_image(fmc, &tc)
}

pub fn rtm_config(ctx: &Context, grid: RasterGrid, kernel: KernelKind) -> Result<RtmConfig> {
    let period = ctx.sim.pulse.dominant_period()?;
    let decimation = ((period / SNAPSHOTS_PER_PERIOD / ctx.sim.time.dt).floor() as usize).max(1);
    Ok(RtmConfig {
        grid,
        decimation,
        sigma: DEFAULT_SIGMA,
        kernel,
    })
}

/// Per-shot images summed, before absolute value and smoothing.
pub fn rtm_raw(ctx: &Context, cfg: &RtmConfig) -> Result<ImageGrid> {
    let solver = ctx.solver()?;
    let images = rtm_shot_images(
        &solver,
        &array_receivers(&ctx.fmc.array),
        &ctx.shots()?,
        cfg,
    )?;
    let mut sum = ImageGrid::zeros(cfg.grid);
    for im in &images {
        sum.values
            .iter_mut()
            .zip(&im.values)
            .for_each(|(s, v)| *s += v);
    }
    Ok(sum)
}

pub fn reconstruct_rtm(ctx: &Context, cfg: &RtmConfig) -> Result<RtmImage> {
    let solver = ctx.solver()?;
    let images = rtm_shot_images(
        &solver,
        &array_receivers(&ctx.fmc.array),
        &ctx.shots()?,
        cfg,
    )?;
    finalize_rtm(&images, cfg.sigma, cfg.kernel)
}

fn stage(s: &StageSettings, window: Option<crate::fwi::TimeWindow>) -> InversionStageConfig {
    InversionStageConfig {
        max_iters: s.max_iters,
        group_size: s.group_size,
        time_window: if s.backwall_exclusion { window } else { None },
        reset_threshold: s.reset_threshold,
    }
}

pub fn initial_model(spec: &ScenarioSpec, cfg: &FwiConfig) -> Result<DensityParameterization> {
    let rho = spec.background.rho;
    DensityParameterization::new(
        fwi_roi(spec, cfg)?,
        cfg.spacing_mm * 1e-3,
        rho,
        (cfg.bounds_factor[0] * rho, cfg.bounds_factor[1] * rho),
    )
}

/// Misfit gradient field at the background model for single-element shots,
/// on the raw data scale and without time windows.
pub fn fwi_gradient_image(
    ctx: &Context,
    spec: &ScenarioSpec,
    cfg: &FwiConfig,
    grid: RasterGrid,
) -> Result<ImageGrid> {
    let setup = ctx.setup();
    let shots: Vec<Supershot> = ctx
        .shots()?
        .into_iter()
        .enumerate()
        .map(|(i, s)| Supershot {
            members: vec![i],
            sources: s.sources,
            observed: s.observed,
        })
        .collect();
    let problem = FwiProblem::new(
        &setup,
        initial_model(spec, cfg)?,
        array_receivers(&ctx.fmc.array),
        shots,
        None,
    )?;
    let g = problem.gradient(problem.template())?;
    Ok(problem.kernel_image(&g, grid))
}

/// Both inversion runs on the normalised dataset.
pub fn reconstruct_fwi(
    ctx: &Context,
    spec: &ScenarioSpec,
    cfg: &FwiConfig,
) -> Result<TwoStageResult> {
    cfg.validate()?;
    let (fmc, scale) = ctx.fmc.normalized()?;
    let wave = ctx.waveform();
    let data = InversionData {
        fmc: &fmc,
        waveform: &wave,
        amplitude: scale,
    };
    let pulse = &ctx.sim.pulse;
    let period = pulse.dominant_period()?;
    let delay = pulse.duration() / 2.0;
    let window = backwall_window(spec.domain_height, spec.background.vp, period, delay);
    let setup = ctx.setup();
    two_stage_inversion(
        &setup,
        &initial_model(spec, cfg)?,
        &data,
        &stage(&cfg.stage1, Some(window)),
        &stage(&cfg.stage2, Some(window)),
        cfg.bottom_band,
        image_grid(spec, cfg)?,
        &LbfgsOptions::from(cfg.lbfgs),
    )
}
