use crate::error::{Error, Result};
use crate::grid::{ImageGrid, RasterGrid};
use crate::wavesim::{NodalMaterial, SpectralMesh};

/// Axis-aligned region whose density is free during inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roi {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Roi {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        if !(x_max > x_min && y_max > y_min) {
            return Err(Error::invalid("ROI must have positive extent"));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    /// Pixel grid of the given spacing whose pixels tile the ROI.
    pub fn pixel_grid(&self, spacing: f64) -> Result<RasterGrid> {
        RasterGrid::covering(self.x_min, self.x_max, self.y_min, self.y_max, spacing)
    }
}

/// Bilinear nodal density expansion on a regular lattice over the ROI:
/// `rho(x) = rho_bg + sum_i N_i(x) (c_i - rho_bg)` inside, `rho_bg` outside.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityParameterization {
    pub roi: Roi,
    pub nx: usize,
    pub ny: usize,
    pub rho_bg: f64,
    pub bounds: (f64, f64),
    pub coeffs: Vec<f64>,
}

impl DensityParameterization {
    /// Lattice with spacing at most `spacing`, all coefficients at background.
    pub fn new(roi: Roi, spacing: f64, rho_bg: f64, bounds: (f64, f64)) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::invalid("inversion grid spacing must be positive"));
        }
        if !(bounds.0 > 0.0 && bounds.0 <= rho_bg && rho_bg <= bounds.1) {
            return Err(Error::invalid(format!(
                "density bounds [{}, {}] must be positive and bracket the background {rho_bg}",
                bounds.0, bounds.1
            )));
        }
        let nx = ((roi.x_max - roi.x_min) / spacing - 1e-9).ceil().max(1.0) as usize + 1;
        let ny = ((roi.y_max - roi.y_min) / spacing - 1e-9).ceil().max(1.0) as usize + 1;
        Ok(Self {
            roi,
            nx,
            ny,
            rho_bg,
            bounds,
            coeffs: vec![rho_bg; nx * ny],
        })
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn hx(&self) -> f64 {
        (self.roi.x_max - self.roi.x_min) / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        (self.roi.y_max - self.roi.y_min) / (self.ny - 1) as f64
    }

    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.roi.x_min + i as f64 * self.hx(),
            self.roi.y_min + j as f64 * self.hy(),
        )
    }

    /// Nonzero basis functions `(index, N_i)` at a point; empty outside the ROI.
    pub fn basis_at(&self, x: f64, y: f64) -> Vec<(usize, f64)> {
        if !self.roi.contains(x, y) {
            return Vec::new();
        }
        let fx = ((x - self.roi.x_min) / self.hx()).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((y - self.roi.y_min) / self.hy()).clamp(0.0, (self.ny - 1) as f64);
        let i = (fx.floor() as usize).min(self.nx - 2);
        let j = (fy.floor() as usize).min(self.ny - 2);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let mut out = Vec::with_capacity(4);
        for (di, wx) in [(0, 1.0 - tx), (1, tx)] {
            for (dj, wy) in [(0, 1.0 - ty), (1, ty)] {
                let w = wx * wy;
                if w != 0.0 {
                    out.push(((j + dj) * self.nx + i + di, w));
                }
            }
        }
        out
    }

    pub fn density_at(&self, x: f64, y: f64) -> f64 {
        self.rho_bg
            + self
                .basis_at(x, y)
                .into_iter()
                .map(|(k, w)| w * (self.coeffs[k] - self.rho_bg))
                .sum::<f64>()
    }

    pub fn in_bounds(&self) -> bool {
        self.coeffs
            .iter()
            .all(|&c| c >= self.bounds.0 && c <= self.bounds.1)
    }

    /// Coefficients as fractions of the background density.
    pub fn normalized(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c / self.rho_bg).collect()
    }

    pub fn set_normalized(&mut self, x: &[f64]) {
        for (c, v) in self.coeffs.iter_mut().zip(x) {
            *c = v * self.rho_bg;
        }
    }

    pub fn normalized_bounds(&self) -> (f64, f64) {
        (self.bounds.0 / self.rho_bg, self.bounds.1 / self.rho_bg)
    }

    /// Coefficients above `threshold * rho_bg` go back to background.
    pub fn reset_high_densities(&mut self, threshold: f64) -> Result<()> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::invalid(format!(
                "reset threshold {threshold} outside (0, 1)"
            )));
        }
        let limit = threshold * self.rho_bg;
        for c in &mut self.coeffs {
            if *c > limit {
                *c = self.rho_bg;
            }
        }
        Ok(())
    }

    /// Reset every coefficient in the deepest `fraction` of the ROI depth.
    pub fn reset_bottom_band(&mut self, fraction: f64) {
        if fraction <= 0.0 {
            return;
        }
        let cut = self.roi.y_max - fraction * (self.roi.y_max - self.roi.y_min);
        for j in 0..self.ny {
            if self.node(0, j).1 >= cut - 1e-12 {
                for i in 0..self.nx {
                    self.coeffs[j * self.nx + i] = self.rho_bg;
                }
            }
        }
    }

    /// Contrast image `1 - rho / rho_bg` at pixel centres.
    pub fn contrast_image(&self, grid: RasterGrid) -> ImageGrid {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.center(i, j);
                values.push(1.0 - self.density_at(x, y) / self.rho_bg);
            }
        }
        ImageGrid { grid, values }
    }
}

/// Precomputed basis weights at the mesh nodes inside the ROI.
#[derive(Debug, Clone)]
pub struct NodeBasis {
    entries: Vec<(usize, Vec<(usize, f64)>)>,
}

impl NodeBasis {
    pub fn new(param: &DensityParameterization, mesh: &SpectralMesh) -> Self {
        let entries = (0..mesh.n_nodes())
            .filter_map(|g| {
                let (x, y) = mesh.node_coord(g);
                let b = param.basis_at(x, y);
                (!b.is_empty()).then_some((g, b))
            })
            .collect();
        Self { entries }
    }

    /// Background material with the parameterized density applied at ROI nodes.
    pub fn apply(&self, param: &DensityParameterization, base: &NodalMaterial) -> NodalMaterial {
        let mut m = base.clone();
        for (g, b) in &self.entries {
            m.rho[*g] = param.rho_bg
                + b.iter()
                    .map(|&(k, w)| w * (param.coeffs[k] - param.rho_bg))
                    .sum::<f64>();
        }
        m
    }

    /// Chain rule from nodal `d chi / d rho_g` to coefficient derivatives.
    pub fn project(&self, nodal: &[f64], n_coeffs: usize) -> Vec<f64> {
        let mut g = vec![0.0; n_coeffs];
        for (node, b) in &self.entries {
            for &(k, w) in b {
                g[k] += w * nodal[*node];
            }
        }
        g
    }
}
