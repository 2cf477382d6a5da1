use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::lbfgs::LbfgsOptions;

/// One optimisation run as stored in an inversion config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSettings {
    pub max_iters: usize,
    pub group_size: usize,
    /// Drop the back-wall echo and everything after it from the data.
    pub backwall_exclusion: bool,
    pub reset_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsSettings {
    pub memory: usize,
    pub step0: f64,
    pub max_step: f64,
    pub c1: f64,
    pub max_backtracks: usize,
    pub rel_tol: f64,
}

impl From<LbfgsSettings> for LbfgsOptions {
    fn from(s: LbfgsSettings) -> Self {
        LbfgsOptions {
            memory: s.memory,
            max_iters: 0,
            step0: s.step0,
            max_step: s.max_step,
            c1: s.c1,
            max_backtracks: s.max_backtracks,
            rel_tol: s.rel_tol,
        }
    }
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        let o = LbfgsOptions::default();
        Self {
            memory: o.memory,
            step0: o.step0,
            max_step: o.max_step,
            c1: o.c1,
            max_backtracks: o.max_backtracks,
            rel_tol: o.rel_tol,
        }
    }
}

/// Inversion settings. Lengths in millimetres; the ROI is centred under the
/// array and starts at the probe surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FwiConfig {
    pub roi_width_mm: f64,
    pub roi_depth_mm: f64,
    /// Density bounds as fractions of the background density.
    pub bounds_factor: [f64; 2],
    pub spacing_mm: f64,
    /// The inversion time step is at most the CFL limit divided by this.
    pub dt_guard: f64,
    /// Depth fraction of the ROI reset to background between the stages.
    pub bottom_band: f64,
    /// Pixel size of the output image.
    pub pixel_mm: f64,
    /// Depth below the probe surface where density stays at background.
    #[serde(default)]
    pub surface_standoff_mm: f64,
    pub stage1: StageSettings,
    pub stage2: StageSettings,
    #[serde(default)]
    pub lbfgs: LbfgsSettings,
}

impl FwiConfig {
    pub fn full_scale() -> Self {
        Self {
            roi_width_mm: 50.0,
            roi_depth_mm: 25.0,
            bounds_factor: [super::DEFAULT_BOUNDS.0, super::DEFAULT_BOUNDS.1],
            spacing_mm: super::DEFAULT_INVERSION_SPACING * 1e3,
            dt_guard: 10f64.sqrt(),
            bottom_band: super::DEFAULT_BOTTOM_BAND,
            pixel_mm: 0.1,
            surface_standoff_mm: 0.5,
            stage1: StageSettings {
                max_iters: 20,
                group_size: 8,
                backwall_exclusion: true,
                reset_threshold: None,
            },
            stage2: StageSettings {
                max_iters: 20,
                group_size: 2,
                backwall_exclusion: false,
                reset_threshold: Some(0.9),
            },
            lbfgs: LbfgsSettings::default(),
        }
    }

    /// Same workflow over a 10 x 10 mm ROI.
    pub fn desk() -> Self {
        Self {
            roi_width_mm: 10.0,
            roi_depth_mm: 10.0,
            ..Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.bounds_factor;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0) {
            return Err(Error::invalid(format!(
                "density bounds [{lo}, {hi}] must bracket 1"
            )));
        }
        if !(self.roi_width_mm > 0.0
            && self.roi_depth_mm > 0.0
            && self.spacing_mm > 0.0
            && self.pixel_mm > 0.0)
        {
            return Err(Error::invalid(
                "ROI size, inversion spacing and pixel size must be positive",
            ));
        }
        if !(self.surface_standoff_mm >= 0.0 && self.surface_standoff_mm < self.roi_depth_mm) {
            return Err(Error::invalid(
                "surface standoff must lie in [0, ROI depth)",
            ));
        }
        if !(self.dt_guard >= 1.0) {
            return Err(Error::invalid("time step guard must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.bottom_band) {
            return Err(Error::invalid("bottom band must lie in [0, 1)"));
        }
        for s in [&self.stage1, &self.stage2] {
            if s.group_size == 0 {
                return Err(Error::invalid("group size must be >= 1"));
            }
            if let Some(t) = s.reset_threshold {
                if !(t > 0.0 && t < 1.0) {
                    return Err(Error::invalid(format!(
                        "reset threshold {t} outside (0, 1)"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Self =
            toml::from_str(text).map_err(|e| Error::invalid(format!("inversion config: {e}")))?;
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
}
