//! Shipped scenarios and simulation setups.
//!
//! Full-scale scenarios use a 67.25 x 45 mm cross-section under a 64-element
//! array. Desk scenarios shrink the domain and halve the frequency so the
//! whole pipeline runs in minutes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acquisition::SourceTimeFunction;
use crate::error::{Error, Result};
use crate::grid::RasterGrid;
use crate::model::{
    build_material_model_on, ArraySpec, Background, DefectShape, ScenarioSpec,
    DEFAULT_VOID_DENSITY_FACTOR,
};
use crate::wavesim::{NodalMaterial, SpectralMesh, SpongeLayer, TimeParams, WaveSolver};

pub const FULL_WIDTH: f64 = 67.25e-3;
pub const FULL_HEIGHT: f64 = 45e-3;
pub const FULL_ELEMENTS: usize = 64;
pub const FULL_PITCH: f64 = 0.75e-3;
pub const FULL_DT: f64 = 1e-9;
pub const FULL_T_END: f64 = 2.5e-5;
/// Element grid reproducing 9869 elements / 158745 nodes at degree 4.
pub const FULL_MESH: (usize, usize) = (139, 71);

pub const DESK_WIDTH: f64 = 24e-3;
pub const DESK_HEIGHT: f64 = 15e-3;
pub const DESK_ELEMENTS: usize = 8;
pub const DESK_PITCH: f64 = 1e-3;
pub const DESK_FREQUENCY_FACTOR: f64 = 0.5;
pub const DESK_SPONGE_WIDTH: f64 = 5e-3;
pub const DESK_T_END: f64 = 9e-6;

pub const ELEMENTS_PER_S_WAVELENGTH: f64 = 1.5;
/// Round-trip amplitude left by a tuned sponge.
pub const SPONGE_REFLECTION: f64 = 1e-3;

/// Fraction of the measured stability edge used when no time step is given.
pub const STABILITY_SAFETY: f64 = 0.7;

const MM: f64 = 1e-3;

fn full_array() -> ArraySpec {
    ArraySpec::centered(FULL_ELEMENTS, FULL_PITCH, FULL_WIDTH)
}

fn desk_array() -> ArraySpec {
    ArraySpec::centered(DESK_ELEMENTS, DESK_PITCH, DESK_WIDTH)
}

fn full(name: &str, defects: Vec<DefectShape>) -> ScenarioSpec {
    ScenarioSpec {
        name: name.into(),
        domain_width: FULL_WIDTH,
        domain_height: FULL_HEIGHT,
        background: Background::ALUMINIUM,
        defects,
        array: full_array(),
    }
}

fn desk(name: &str, defects: Vec<DefectShape>) -> ScenarioSpec {
    ScenarioSpec {
        name: name.into(),
        domain_width: DESK_WIDTH,
        domain_height: DESK_HEIGHT,
        background: Background::ALUMINIUM,
        defects,
        array: desk_array(),
    }
}

fn hole(x: f64, depth: f64, r: f64) -> DefectShape {
    DefectShape::Circle {
        center: (x, depth),
        radius: r,
    }
}

/// The shipped scenario pack. Geometry is approximate: holes and notches are
/// placed under the array centre within the inversion depth band.
pub fn scenario_library() -> Vec<ScenarioSpec> {
    let c = FULL_WIDTH / 2.0;
    let dc = DESK_WIDTH / 2.0;
    let notch = |deg: f64| {
        DefectShape::y_notch(
            (c, 16.0 * MM),
            6.0 * MM,
            6.0 * MM,
            deg.to_radians(),
            0.5 * MM,
        )
    };
    vec![
        full(
            "hole1",
            vec![
                hole(c, 8.0 * MM, 1.0 * MM),
                hole(c, 15.0 * MM, 1.0 * MM),
                hole(c, 22.0 * MM, 1.0 * MM),
            ],
        ),
        full(
            "hole2",
            vec![
                hole(c - 5.0 * MM, 8.0 * MM, 1.0 * MM),
                hole(c, 15.0 * MM, 1.0 * MM),
                hole(c + 5.0 * MM, 22.0 * MM, 1.0 * MM),
            ],
        ),
        full(
            "hole3",
            vec![
                hole(c, 8.0 * MM, 2.0 * MM),
                hole(c, 15.0 * MM, 1.0 * MM),
                hole(c, 21.0 * MM, 0.75 * MM),
            ],
        ),
        full("notch1", vec![notch(60.0)]),
        full("notch2", vec![notch(45.0)]),
        full("notch3", vec![notch(20.0)]),
        desk("desk-hole", vec![hole(dc, 5.0 * MM, 1.5 * MM)]),
        desk(
            "desk-notch",
            vec![DefectShape::y_notch(
                (dc, 6.0 * MM),
                2.0 * MM,
                2.5 * MM,
                45f64.to_radians(),
                0.75 * MM,
            )],
        ),
        desk("desk-null", Vec::new()),
    ]
}

pub fn scenario_by_name(name: &str) -> Result<ScenarioSpec> {
    scenario_library()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::invalid(format!("unknown scenario '{name}'")))
}

pub fn is_desk(spec: &ScenarioSpec) -> bool {
    spec.domain_width < 0.5 * FULL_WIDTH
}

/// Discretisation and excitation of a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub nex: usize,
    pub ney: usize,
    pub degree: usize,
    /// Time step in seconds; `None` uses the CFL limit.
    pub dt: Option<f64>,
    pub t_end: f64,
    /// Multiplies every frequency of the default pulse.
    pub frequency_factor: f64,
    pub sponge_width: f64,
    pub sponge_reflection: f64,
    pub density_factor: f64,
}

impl SimulationConfig {
    /// Mesh with 1.5 degree-4 elements per shear wavelength at `f_95` and a
    /// sponge two dominant p-wavelengths wide.
    pub fn for_scenario(spec: &ScenarioSpec, frequency_factor: f64) -> Result<Self> {
        let stf =
            SourceTimeFunction::default_pulse_scaled(frequency_factor, 1e-9 / frequency_factor);
        let stats = stf.stats()?;
        let h = spec.background.vs / stats.f_95 / ELEMENTS_PER_S_WAVELENGTH;
        let lambda_p = spec.background.vp / stats.f_max;
        Ok(Self {
            nex: (spec.domain_width / h).ceil() as usize,
            ney: (spec.domain_height / h).ceil() as usize,
            degree: 4,
            dt: None,
            // shear back-wall round trip
            t_end: 2.0 * spec.domain_height / spec.background.vs,
            frequency_factor,
            sponge_width: (2.0 * lambda_p).min(0.3 * spec.domain_width),
            sponge_reflection: SPONGE_REFLECTION,
            density_factor: DEFAULT_VOID_DENSITY_FACTOR,
        })
    }

    /// Shipped defaults: the full-scale discretisation for full-size
    /// scenarios, the desk setup otherwise.
    pub fn default_for(spec: &ScenarioSpec) -> Result<Self> {
        if is_desk(spec) {
            let mut c = Self::for_scenario(spec, DESK_FREQUENCY_FACTOR)?;
            c.sponge_width = DESK_SPONGE_WIDTH;
            c.t_end = DESK_T_END;
            Ok(c)
        } else {
            let mut c = Self::for_scenario(spec, 1.0)?;
            (c.nex, c.ney) = FULL_MESH;
            c.dt = Some(FULL_DT);
            c.t_end = FULL_T_END;
            Ok(c)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nex == 0 || self.ney == 0 {
            return Err(Error::invalid(
                "mesh needs at least one element per direction",
            ));
        }
        if !(self.t_end > 0.0) || self.dt.is_some_and(|d| !(d > 0.0)) {
            return Err(Error::invalid("time step and duration must be positive"));
        }
        if !(self.frequency_factor > 0.0) {
            return Err(Error::invalid("frequency factor must be positive"));
        }
        if !(self.sponge_reflection > 0.0 && self.sponge_reflection < 1.0)
            || self.sponge_width < 0.0
        {
            return Err(Error::invalid(
                "sponge needs width >= 0 and reflection in (0, 1)",
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Self =
            toml::from_str(text).map_err(|e| Error::invalid(format!("simulation config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn pulse(&self, dt: f64) -> SourceTimeFunction {
        SourceTimeFunction::default_pulse_scaled(self.frequency_factor, dt)
    }

    /// Mesh refined by an integer factor in both directions.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            nex: self.nex * factor,
            ney: self.ney * factor,
            ..*self
        }
    }
}

/// Everything a solver needs, owned.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub mesh: SpectralMesh,
    pub material: NodalMaterial,
    pub sponge: SpongeLayer,
    pub time: TimeParams,
    pub pulse: SourceTimeFunction,
    pub config: SimulationConfig,
}

impl Simulation {
    /// Mesh the scenario (with its defects) and sample the material at the nodes.
    pub fn build(spec: &ScenarioSpec, cfg: &SimulationConfig) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        let mesh = SpectralMesh::new(
            spec.domain_width,
            spec.domain_height,
            cfg.nex,
            cfg.ney,
            cfg.degree,
        )?;
        let material = nodal_material(spec, &mesh, cfg.density_factor)?;
        let sponge = SpongeLayer::tuned(
            cfg.sponge_width,
            spec.background.vp,
            cfg.sponge_reflection,
            spec.domain_width,
        );
        let dt = match cfg.dt {
            Some(dt) => dt,
            None => {
                // density jumps at voids lower the stability edge below the
                // wave-speed estimate
                let cfl = crate::wavesim::cfl_limit(&mesh, &material);
                let probe = WaveSolver::new(&mesh, &material, &sponge, TimeParams::new(cfl, cfl)?)?;
                cfl.min(STABILITY_SAFETY * probe.stability_limit(200))
            }
        };
        let time = TimeParams::new(dt, cfg.t_end)?;
        Ok(Self {
            mesh,
            material,
            sponge,
            time,
            pulse: cfg.pulse(dt),
            config: SimulationConfig {
                dt: Some(dt),
                ..*cfg
            },
        })
    }

    pub fn solver(&self) -> Result<WaveSolver<'_>> {
        WaveSolver::new(&self.mesh, &self.material, &self.sponge, self.time)
    }

    /// Replace the time step, keeping the record length on a whole number of steps.
    pub fn with_dt(mut self, dt: f64, n_steps: usize) -> Result<Self> {
        self.time = TimeParams::new(dt, dt * n_steps as f64)?;
        self.config.dt = Some(dt);
        self.config.t_end = self.time.t_end;
        self.pulse = self.config.pulse(dt);
        Ok(self)
    }
}

/// Material sampled at the mesh nodes. Nodes inside a defect get the void
/// density directly so no raster is needed.
pub fn nodal_material(
    spec: &ScenarioSpec,
    mesh: &SpectralMesh,
    density_factor: f64,
) -> Result<NodalMaterial> {
    // validates the factor and the scenario
    let probe = RasterGrid::new(1, 1, spec.domain_width.max(spec.domain_height), 0.0, 0.0)?;
    build_material_model_on(spec, probe, density_factor, 0.0)?;
    let bg = spec.background;
    let mut m = NodalMaterial::uniform(mesh, bg.rho, bg.vp, bg.vs);
    for g in 0..mesh.n_nodes() {
        let (x, y) = mesh.node_coord(g);
        if spec.contains_defect(x, y) {
            m.rho[g] = bg.rho * density_factor;
        }
    }
    Ok(m)
}

/// Time step for a reference run: an integer fraction `1/k` (`k >= min_factor`)
/// of the inversion step that is below `safety` times the measured stability
/// edge of the reference solver.
pub fn reference_time_step(
    sim: &Simulation,
    dt_inv: f64,
    min_factor: usize,
    safety: f64,
) -> Result<(f64, usize)> {
    let probe = WaveSolver::new(
        &sim.mesh,
        &sim.material,
        &sim.sponge,
        TimeParams::new(dt_inv, dt_inv)?,
    )?;
    let edge = probe.stability_limit(200);
    let k = ((dt_inv / (safety * edge)).ceil() as usize)
        .max(min_factor)
        .max(1);
    Ok((dt_inv / k as f64, k))
}

/// Dominant period of a scaled default pulse.
pub fn dominant_period(frequency_factor: f64) -> Result<f64> {
    SourceTimeFunction::default_pulse_scaled(frequency_factor, 1e-9 / frequency_factor)
        .dominant_period()
}

/// Local ROI of the inversion: centred under the aperture, from the surface
/// down to `depth`, `width` wide, clipped to the domain.
pub fn roi_under_array(spec: &ScenarioSpec, width: f64, depth: f64) -> (f64, f64, f64, f64) {
    let xc = spec.array.element_x(0) + 0.5 * spec.array.aperture();
    let x0 = (xc - 0.5 * width).max(0.0);
    let x1 = (xc + 0.5 * width).min(spec.domain_width);
    (x0, x1, 0.0, depth.min(spec.domain_height))
}

/// Half-wavelength of a plane wave at `f`: the spatial resolution scale.
pub fn half_wavelength(speed: f64, f: f64) -> f64 {
    0.5 * speed / f
}
