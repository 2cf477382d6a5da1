//! Pixel rasters shared by the material model, the reconstructions and the
//! evaluation, plus the portable float-grid file format.
//!
//! Float-grid layout (all little-endian):
//!
//! ```text
//! u32 nx | u32 ny | f64 x0 | f64 y0 | f64 spacing | nx*ny f32 values, row-major (row = depth)
//! ```
//!
//! `(x0, y0)` is the centre of pixel `(0, 0)`; `y` grows with depth.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A uniform pixel grid. Pixel `(i, j)` is centred at `(x0 + i*spacing, y0 + j*spacing)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterGrid {
    pub nx: usize,
    pub ny: usize,
    pub spacing: f64,
    pub x0: f64,
    pub y0: f64,
}

impl RasterGrid {
    pub fn new(nx: usize, ny: usize, spacing: f64, x0: f64, y0: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::invalid("raster grid must have at least one pixel"));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::invalid(format!(
                "raster spacing must be positive, got {spacing}"
            )));
        }
        Ok(Self {
            nx,
            ny,
            spacing,
            x0,
            y0,
        })
    }

    /// Grid whose pixels tile the rectangle `[x_min, x_max] x [y_min, y_max]`.
    pub fn covering(x_min: f64, x_max: f64, y_min: f64, y_max: f64, spacing: f64) -> Result<Self> {
        if !(x_max > x_min && y_max > y_min) {
            return Err(Error::invalid("covering rectangle is empty"));
        }
        let nx = ((x_max - x_min) / spacing).round().max(1.0) as usize;
        let ny = ((y_max - y_min) / spacing).round().max(1.0) as usize;
        Self::new(
            nx,
            ny,
            spacing,
            x_min + 0.5 * spacing,
            y_min + 0.5 * spacing,
        )
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x0 + i as f64 * self.spacing,
            self.y0 + j as f64 * self.spacing,
        )
    }

    /// Pixel containing `(x, y)`, clamped to the grid.
    pub fn pixel_of(&self, x: f64, y: f64) -> (usize, usize) {
        let fi = ((x - self.x0) / self.spacing + 0.5).floor();
        let fj = ((y - self.y0) / self.spacing + 0.5).floor();
        let i = fi.clamp(0.0, (self.nx - 1) as f64) as usize;
        let j = fj.clamp(0.0, (self.ny - 1) as f64) as usize;
        (i, j)
    }

    /// Physical extent `(x_min, x_max, y_min, y_max)` of the pixel tiles.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        let h = 0.5 * self.spacing;
        (
            self.x0 - h,
            self.x0 + (self.nx as f64 - 0.5) * self.spacing,
            self.y0 - h,
            self.y0 + (self.ny as f64 - 0.5) * self.spacing,
        )
    }

    pub fn pixel_area(&self) -> f64 {
        self.spacing * self.spacing
    }

    fn same_layout(&self, other: &RasterGrid) -> bool {
        let tol = 1e-9 * self.spacing.max(other.spacing);
        self.nx == other.nx
            && self.ny == other.ny
            && (self.spacing - other.spacing).abs() <= tol
            && (self.x0 - other.x0).abs() <= tol
            && (self.y0 - other.y0).abs() <= tol
    }

    pub fn ensure_matches(&self, other: &RasterGrid) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "grid {}x{} @ {:.3e} m vs {}x{} @ {:.3e} m",
                self.nx, self.ny, self.spacing, other.nx, other.ny, other.spacing
            )))
        }
    }
}

/// Scalar image on a raster grid. TFM envelopes are nonnegative; RTM and FWI
/// maps may be signed.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pub grid: RasterGrid,
    pub values: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(grid: RasterGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: RasterGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                grid.nx,
                grid.ny
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        Ok(Self { grid, values })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Pixel index `(i, j)` of the maximum value (first occurrence).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (k, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = k;
            }
        }
        (best % self.grid.nx, best / self.grid.nx)
    }

    /// Affine rescale to `[0, 1]`; a constant image maps to all zeros.
    pub fn normalized(&self) -> ImageGrid {
        let (lo, hi) = self.min_max();
        let span = hi - lo;
        let values = if span > 0.0 {
            self.values.iter().map(|v| (v - lo) / span).collect()
        } else {
            vec![0.0; self.values.len()]
        };
        ImageGrid {
            grid: self.grid,
            values,
        }
    }

    pub fn write_float_grid(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + 4 * self.values.len());
        buf.extend_from_slice(&(self.grid.nx as u32).to_le_bytes());
        buf.extend_from_slice(&(self.grid.ny as u32).to_le_bytes());
        buf.extend_from_slice(&self.grid.x0.to_le_bytes());
        buf.extend_from_slice(&self.grid.y0.to_le_bytes());
        buf.extend_from_slice(&self.grid.spacing.to_le_bytes());
        for &v in &self.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_float_grid(path: &Path) -> Result<ImageGrid> {
        let mut raw = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut raw))
            .map_err(|e| Error::io(path, e))?;
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if raw.len() < 32 {
            return Err(bad("truncated header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(raw[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(raw[o..o + 8].try_into().unwrap());
        let (nx, ny) = (u32_at(0), u32_at(4));
        let (x0, y0, spacing) = (f64_at(8), f64_at(16), f64_at(24));
        let expected = 32 + 4 * nx * ny;
        if raw.len() != expected {
            return Err(bad(&format!(
                "expected {expected} bytes, found {}",
                raw.len()
            )));
        }
        let grid = RasterGrid::new(nx, ny, spacing, x0, y0).map_err(|e| bad(&e.to_string()))?;
        let values = raw[32..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        ImageGrid::from_values(grid, values).map_err(|e| bad(&e.to_string()))
    }

    /// 8-bit grayscale PNG, linearly mapped from `[min, max]`.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let norm = self.normalized();
        let bytes: Vec<u8> = norm
            .values
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        write_gray_png(path, self.grid.nx, self.grid.ny, bytes)
    }
}

pub(crate) fn write_gray_png(path: &Path, nx: usize, ny: usize, bytes: Vec<u8>) -> Result<()> {
    let img = image::GrayImage::from_raw(nx as u32, ny as u32, bytes)
        .ok_or_else(|| Error::invalid("png buffer size mismatch"))?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}
