//! Scenario geometry, material fields and ground-truth masks.
//!
//! Coordinates are in metres with `x` along the specimen surface and `y`
//! growing with depth; `y = 0` is the probe surface. Scenario files store
//! lengths in millimetres.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RasterGrid;

/// Density fraction used for rasterized voids.
pub const DEFAULT_VOID_DENSITY_FACTOR: f64 = 0.01;
/// Smallest defect feature, in pixels, accepted by [`build_material_model`].
pub const MIN_FEATURE_PIXELS: f64 = 4.0;

/// Isotropic background material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub rho: f64,
    pub vp: f64,
    pub vs: f64,
}

impl Background {
    /// AlMg3 specimen values (density in kg/m^3, speeds in m/s).
    pub const ALUMINIUM: Background = Background {
        rho: 2582.8,
        vp: 6315.8,
        vs: 3129.3,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.vp > 0.0 && self.vs > 0.0) {
            return Err(Error::invalid(format!(
                "background values must be positive: {self:?}"
            )));
        }
        if self.vp <= self.vs * std::f64::consts::SQRT_2 {
            return Err(Error::invalid(format!(
                "vp = {} must exceed sqrt(2) * vs = {} (negative Lame lambda)",
                self.vp,
                self.vs * std::f64::consts::SQRT_2
            )));
        }
        Ok(())
    }
}

/// Active width of an element as a fraction of the pitch.
pub const ELEMENT_FILL: f64 = 0.8;

/// Linear phased array lying on the top surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub n_elements: usize,
    pub pitch: f64,
    pub first_element_x: f64,
    pub surface_y: f64,
}

impl ArraySpec {
    pub fn aperture(&self) -> f64 {
        (self.n_elements.saturating_sub(1)) as f64 * self.pitch
    }

    pub fn element_x(&self, i: usize) -> f64 {
        self.first_element_x + i as f64 * self.pitch
    }

    pub fn element_width(&self) -> f64 {
        ELEMENT_FILL * self.pitch
    }

    pub fn positions(&self) -> Vec<(f64, f64)> {
        (0..self.n_elements)
            .map(|i| (self.element_x(i), self.surface_y))
            .collect()
    }

    /// Array centred horizontally on a domain of the given width.
    pub fn centered(n_elements: usize, pitch: f64, domain_width: f64) -> Self {
        let aperture = (n_elements.saturating_sub(1)) as f64 * pitch;
        Self {
            n_elements,
            pitch,
            first_element_x: 0.5 * (domain_width - aperture),
            surface_y: 0.0,
        }
    }

    pub fn validate(&self, domain_width: f64) -> Result<()> {
        if self.n_elements == 0 {
            return Err(Error::invalid("array needs at least one element"));
        }
        if !(self.pitch > 0.0) {
            return Err(Error::invalid("array pitch must be positive"));
        }
        let last = self.element_x(self.n_elements - 1);
        if self.first_element_x < 0.0 || last > domain_width {
            return Err(Error::invalid(format!(
                "array spans [{:.4e}, {:.4e}] m, outside domain width {:.4e} m",
                self.first_element_x, last, domain_width
            )));
        }
        Ok(())
    }
}

/// A defect outline. Y-notches are polygons.
#[derive(Debug, Clone, PartialEq)]
pub enum DefectShape {
    Circle { center: (f64, f64), radius: f64 },
    Polygon { vertices: Vec<(f64, f64)> },
}

impl DefectShape {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            DefectShape::Circle { center, radius } => {
                let (dx, dy) = (x - center.0, y - center.1);
                dx * dx + dy * dy <= radius * radius
            }
            DefectShape::Polygon { vertices } => point_in_polygon(vertices, x, y),
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            DefectShape::Circle { radius, .. } => std::f64::consts::PI * radius * radius,
            DefectShape::Polygon { vertices } => shoelace_area(vertices).abs(),
        }
    }

    /// Characteristic thickness: diameter for circles, `2A/P` for polygons
    /// (which equals the width of a long strip).
    pub fn feature_size(&self) -> f64 {
        match self {
            DefectShape::Circle { radius, .. } => 2.0 * radius,
            DefectShape::Polygon { vertices } => {
                let perimeter: f64 = edges(vertices).map(|(a, b)| dist(a, b)).sum();
                2.0 * self.area() / perimeter
            }
        }
    }

    /// `(x_min, x_max, y_min, y_max)`
    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        match self {
            DefectShape::Circle { center, radius } => (
                center.0 - radius,
                center.0 + radius,
                center.1 - radius,
                center.1 + radius,
            ),
            DefectShape::Polygon { vertices } => vertices.iter().fold(
                (
                    f64::INFINITY,
                    f64::NEG_INFINITY,
                    f64::INFINITY,
                    f64::NEG_INFINITY,
                ),
                |b, &(x, y)| (b.0.min(x), b.1.max(x), b.2.min(y), b.3.max(y)),
            ),
        }
    }

    /// Y-shaped notch: a vertical stem of length `stem` hanging below the
    /// junction and two arms of length `arm` opening upwards at
    /// `half_angle` (radians) from vertical, all of width `width`.
    pub fn y_notch(junction: (f64, f64), stem: f64, arm: f64, half_angle: f64, width: f64) -> Self {
        let (jx, jy) = junction;
        let (s, c) = half_angle.sin_cos();
        let hw = 0.5 * width;
        // outer arm edge meets the stem side at x = +-hw
        let shoulder = hw * s - hw * (1.0 - c) / s * c;
        let crotch = -hw / s;
        let end_r = (jx + arm * s, jy - arm * c);
        let n_r = (c, s);
        let vertices = vec![
            (jx - hw, jy + stem),
            (jx + hw, jy + stem),
            (jx + hw, jy + shoulder),
            (end_r.0 + hw * n_r.0, end_r.1 + hw * n_r.1),
            (end_r.0 - hw * n_r.0, end_r.1 - hw * n_r.1),
            (jx, jy + crotch),
            (2.0 * jx - (end_r.0 - hw * n_r.0), end_r.1 - hw * n_r.1),
            (2.0 * jx - (end_r.0 + hw * n_r.0), end_r.1 + hw * n_r.1),
            (jx - hw, jy + shoulder),
        ];
        DefectShape::Polygon { vertices }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DefectShape::Circle { radius, center } => {
                if !(*radius > 0.0) || !center.0.is_finite() || !center.1.is_finite() {
                    return Err(Error::invalid(format!(
                        "circle radius must be positive, got {radius}"
                    )));
                }
            }
            DefectShape::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return Err(Error::invalid("polygon needs at least 3 vertices"));
                }
                if vertices
                    .iter()
                    .any(|v| !v.0.is_finite() || !v.1.is_finite())
                {
                    return Err(Error::invalid("polygon has non-finite vertex"));
                }
                if shoelace_area(vertices).abs() <= 0.0 {
                    return Err(Error::invalid("polygon is degenerate (zero area)"));
                }
                if !is_simple(vertices) {
                    return Err(Error::invalid("polygon is self-intersecting"));
                }
            }
        }
        Ok(())
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn edges(v: &[(f64, f64)]) -> impl Iterator<Item = ((f64, f64), (f64, f64))> + '_ {
    (0..v.len()).map(move |i| (v[i], v[(i + 1) % v.len()]))
}

/// Signed shoelace area (positive for counter-clockwise in a y-up frame).
pub fn shoelace_area(v: &[(f64, f64)]) -> f64 {
    0.5 * edges(v).map(|(a, b)| a.0 * b.1 - b.0 * a.1).sum::<f64>()
}

fn point_in_polygon(v: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    for (a, b) in edges(v) {
        if (a.1 > y) != (b.1 > y) {
            let t = (y - a.1) / (b.1 - a.1);
            if x < a.0 + t * (b.0 - a.0) {
                inside = !inside;
            }
        }
    }
    inside
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn segments_cross(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    ((d1 > 0.0) != (d2 > 0.0))
        && ((d3 > 0.0) != (d4 > 0.0))
        && d1 != 0.0
        && d2 != 0.0
        && d3 != 0.0
        && d4 != 0.0
}

fn is_simple(v: &[(f64, f64)]) -> bool {
    let n = v.len();
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// Specimen cross-section with defects and probe layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub domain_width: f64,
    pub domain_height: f64,
    pub background: Background,
    pub defects: Vec<DefectShape>,
    pub array: ArraySpec,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.domain_width > 0.0 && self.domain_height > 0.0) {
            return Err(Error::invalid("domain dimensions must be positive"));
        }
        self.background.validate()?;
        self.array.validate(self.domain_width)?;
        for (k, d) in self.defects.iter().enumerate() {
            d.validate()?;
            let (x0, x1, y0, y1) = d.bounding_box();
            if !(x0 > 0.0 && y0 > 0.0 && x1 < self.domain_width && y1 < self.domain_height) {
                return Err(Error::invalid(format!(
                    "defect {k} of scenario '{}' is not strictly inside the domain",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn contains_defect(&self, x: f64, y: f64) -> bool {
        self.defects.iter().any(|d| d.contains(x, y))
    }

    /// Same geometry without defects (the background model for RTM/FWI).
    pub fn without_defects(&self) -> ScenarioSpec {
        ScenarioSpec {
            defects: Vec::new(),
            ..self.clone()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<ScenarioSpec> {
        let file: ScenarioFile = toml::from_str(text)
            .map_err(|e| Error::invalid(format!("scenario parse error: {e}")))?;
        let spec = file.into_spec();
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<ScenarioSpec> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::Format {
                path: path.to_path_buf(),
                reason: msg,
            },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&ScenarioFile::from_spec(self)).expect("scenario serializes")
    }
}

// --- scenario file schema (millimetres) ---

/// On-disk scenario schema. All lengths in millimetres.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub name: String,
    pub domain_width_mm: f64,
    pub domain_height_mm: f64,
    pub background: Background,
    pub array: ArrayFile,
    #[serde(default)]
    pub defects: Vec<DefectFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayFile {
    pub n_elements: usize,
    pub pitch_mm: f64,
    pub first_element_x_mm: f64,
    #[serde(default)]
    pub surface_y_mm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DefectFile {
    Circle { center_mm: [f64; 2], radius_mm: f64 },
    Polygon { vertices_mm: Vec<[f64; 2]> },
}

const MM: f64 = 1e-3;

impl ScenarioFile {
    fn into_spec(self) -> ScenarioSpec {
        ScenarioSpec {
            name: self.name,
            domain_width: self.domain_width_mm * MM,
            domain_height: self.domain_height_mm * MM,
            background: self.background,
            array: ArraySpec {
                n_elements: self.array.n_elements,
                pitch: self.array.pitch_mm * MM,
                first_element_x: self.array.first_element_x_mm * MM,
                surface_y: self.array.surface_y_mm * MM,
            },
            defects: self
                .defects
                .into_iter()
                .map(|d| match d {
                    DefectFile::Circle {
                        center_mm,
                        radius_mm,
                    } => DefectShape::Circle {
                        center: (center_mm[0] * MM, center_mm[1] * MM),
                        radius: radius_mm * MM,
                    },
                    DefectFile::Polygon { vertices_mm } => DefectShape::Polygon {
                        vertices: vertices_mm.iter().map(|v| (v[0] * MM, v[1] * MM)).collect(),
                    },
                })
                .collect(),
        }
    }

    fn from_spec(spec: &ScenarioSpec) -> Self {
        ScenarioFile {
            name: spec.name.clone(),
            domain_width_mm: spec.domain_width / MM,
            domain_height_mm: spec.domain_height / MM,
            background: spec.background,
            array: ArrayFile {
                n_elements: spec.array.n_elements,
                pitch_mm: spec.array.pitch / MM,
                first_element_x_mm: spec.array.first_element_x / MM,
                surface_y_mm: spec.array.surface_y / MM,
            },
            defects: spec
                .defects
                .iter()
                .map(|d| match d {
                    DefectShape::Circle { center, radius } => DefectFile::Circle {
                        center_mm: [center.0 / MM, center.1 / MM],
                        radius_mm: radius / MM,
                    },
                    DefectShape::Polygon { vertices } => DefectFile::Polygon {
                        vertices_mm: vertices.iter().map(|v| [v.0 / MM, v.1 / MM]).collect(),
                    },
                })
                .collect(),
        }
    }
}

/// Density and wave-speed rasters over the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialModel {
    pub grid: RasterGrid,
    pub rho: Vec<f64>,
    pub vp: Vec<f64>,
    pub vs: Vec<f64>,
}

impl MaterialModel {
    pub fn homogeneous(grid: RasterGrid, bg: Background) -> Self {
        let n = grid.len();
        Self {
            grid,
            rho: vec![bg.rho; n],
            vp: vec![bg.vp; n],
            vs: vec![bg.vs; n],
        }
    }

    /// Material at the pixel containing `(x, y)` (clamped at the edges).
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let (i, j) = self.grid.pixel_of(x, y);
        let k = self.grid.index(i, j);
        (self.rho[k], self.vp[k], self.vs[k])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.len();
        if self.rho.len() != n || self.vp.len() != n || self.vs.len() != n {
            return Err(Error::ShapeMismatch(
                "material field sizes differ from grid".into(),
            ));
        }
        let positive = |f: &[f64]| f.iter().all(|&v| v > 0.0 && v.is_finite());
        if !(positive(&self.rho) && positive(&self.vp) && positive(&self.vs)) {
            return Err(Error::invalid("material fields must be strictly positive"));
        }
        Ok(())
    }

    pub fn max_vp(&self) -> f64 {
        self.vp.iter().cloned().fold(0.0, f64::max)
    }
}

/// Raster the scenario over its whole domain at the given pixel spacing.
/// Voids become `density_factor * rho`; wave speeds stay at background.
pub fn build_material_model(
    spec: &ScenarioSpec,
    spacing: f64,
    density_factor: f64,
) -> Result<MaterialModel> {
    let grid = RasterGrid::covering(0.0, spec.domain_width, 0.0, spec.domain_height, spacing)?;
    build_material_model_on(spec, grid, density_factor, MIN_FEATURE_PIXELS)
}

/// As [`build_material_model`] on an explicit grid, with a configurable
/// resolution requirement (`0` disables the check).
pub fn build_material_model_on(
    spec: &ScenarioSpec,
    grid: RasterGrid,
    density_factor: f64,
    min_feature_pixels: f64,
) -> Result<MaterialModel> {
    spec.validate()?;
    if !(density_factor > 0.0 && density_factor.is_finite()) {
        return Err(Error::invalid(format!(
            "defect density factor must be positive (got {density_factor}); nonpositive density is not a valid material"
        )));
    }
    if let Some(feature) = spec
        .defects
        .iter()
        .map(DefectShape::feature_size)
        .min_by(|a, b| a.total_cmp(b))
    {
        let pixels = feature / grid.spacing;
        if pixels < min_feature_pixels {
            return Err(Error::Resolution {
                feature,
                spacing: grid.spacing,
                pixels,
                required: min_feature_pixels,
            });
        }
    }
    let mut model = MaterialModel::homogeneous(grid, spec.background);
    let void_rho = spec.background.rho * density_factor;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (x, y) = grid.center(i, j);
            if spec.contains_defect(x, y) {
                model.rho[grid.index(i, j)] = void_rho;
            }
        }
    }
    Ok(model)
}

/// Binary defect mask: 1 where the pixel centre lies inside any defect.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMask {
    pub grid: RasterGrid,
    pub mask: Vec<u8>,
}

impl GroundTruthMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

pub fn rasterize_ground_truth(spec: &ScenarioSpec, grid: RasterGrid) -> GroundTruthMask {
    let mut mask = vec![0u8; grid.len()];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (x, y) = grid.center(i, j);
            if spec.contains_defect(x, y) {
                mask[grid.index(i, j)] = 1;
            }
        }
    }
    GroundTruthMask { grid, mask }
}

/// Independent components of the isotropic plane-strain stiffness tensor, in Pa.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constitutive {
    pub c1111: f64,
    pub c1122: f64,
    pub c1212: f64,
}

impl Constitutive {
    /// Full tensor entry `C_ijkl` with indices in `0..2`.
    pub fn entry(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        let lambda = self.c1122;
        let mu = self.c1212;
        lambda * d(i, j) * d(k, l) + mu * (d(i, k) * d(j, l) + d(i, l) * d(j, k))
    }
}

pub fn constitutive_components(rho: f64, vp: f64, vs: f64) -> Constitutive {
    if vp * vp < 2.0 * vs * vs {
        log::warn!("vp^2 < 2 vs^2 (vp = {vp}, vs = {vs}): negative Lame lambda");
    }
    Constitutive {
        c1111: rho * vp * vp,
        c1122: rho * (vp * vp - 2.0 * vs * vs),
        c1212: rho * vs * vs,
    }
}
