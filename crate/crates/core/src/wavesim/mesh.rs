//! Structured quadrilateral spectral-element mesh.
//!
//! Elements are axis-aligned rectangles of equal size. Global nodes form a
//! (non-uniform) lattice of `(nex*p + 1) x (ney*p + 1)` points, so node
//! `(ix, iy)` has index `iy * nx + ix`.

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, RasterGrid};
use crate::model::MaterialModel;

use super::gll::Gll;

#[derive(Debug, Clone)]
pub struct SpectralMesh {
    pub nex: usize,
    pub ney: usize,
    pub hx: f64,
    pub hy: f64,
    pub x0: f64,
    pub y0: f64,
    pub gll: Gll,
    xs: Vec<f64>,
    ys: Vec<f64>,
    unit_mass: Vec<f64>,
}

impl SpectralMesh {
    pub fn new(width: f64, height: f64, nex: usize, ney: usize, degree: usize) -> Result<Self> {
        if nex == 0 || ney == 0 {
            return Err(Error::invalid(
                "mesh needs at least one element per direction",
            ));
        }
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::invalid("mesh dimensions must be positive"));
        }
        let gll = Gll::new(degree)?;
        let p = degree;
        let (hx, hy) = (width / nex as f64, height / ney as f64);
        let axis = |ne: usize, h: f64| -> Vec<f64> {
            (0..=ne * p)
                .map(|i| {
                    let e = (i / p).min(ne - 1);
                    let a = i - e * p;
                    e as f64 * h + 0.5 * (gll.nodes[a] + 1.0) * h
                })
                .collect()
        };
        let xs = axis(nex, hx);
        let ys = axis(ney, hy);
        let mut mesh = Self {
            nex,
            ney,
            hx,
            hy,
            x0: 0.0,
            y0: 0.0,
            gll,
            xs,
            ys,
            unit_mass: Vec::new(),
        };
        let (nx, ny) = mesh.node_dims();
        let jac = mesh.jacobian();
        let mut mass = vec![0.0; nx * ny];
        for ey in 0..ney {
            for ex in 0..nex {
                for b in 0..=p {
                    for a in 0..=p {
                        mass[mesh.global_index(ex, ey, a, b)] +=
                            mesh.gll.weights[a] * mesh.gll.weights[b] * jac;
                    }
                }
            }
        }
        mesh.unit_mass = mass;
        Ok(mesh)
    }

    /// Mesh with the fewest elements whose size does not exceed `max_h`.
    pub fn with_max_element_size(
        width: f64,
        height: f64,
        max_h: f64,
        degree: usize,
    ) -> Result<Self> {
        if !(max_h > 0.0) {
            return Err(Error::invalid("element size must be positive"));
        }
        let nex = (width / max_h - 1e-9).ceil().max(1.0) as usize;
        let ney = (height / max_h - 1e-9).ceil().max(1.0) as usize;
        Self::new(width, height, nex, ney, degree)
    }

    pub fn degree(&self) -> usize {
        self.gll.degree
    }

    pub fn width(&self) -> f64 {
        self.nex as f64 * self.hx
    }

    pub fn height(&self) -> f64 {
        self.ney as f64 * self.hy
    }

    /// Element Jacobian determinant (reference square `[-1,1]^2` to element).
    pub fn jacobian(&self) -> f64 {
        0.25 * self.hx * self.hy
    }

    pub fn node_dims(&self) -> (usize, usize) {
        let p = self.degree();
        (self.nex * p + 1, self.ney * p + 1)
    }

    pub fn n_nodes(&self) -> usize {
        let (nx, ny) = self.node_dims();
        nx * ny
    }

    pub fn n_elements(&self) -> usize {
        self.nex * self.ney
    }

    #[inline]
    pub fn global_index(&self, ex: usize, ey: usize, a: usize, b: usize) -> usize {
        let p = self.degree();
        let nx = self.nex * p + 1;
        (ey * p + b) * nx + ex * p + a
    }

    #[inline]
    pub fn node_coord(&self, g: usize) -> (f64, f64) {
        let nx = self.xs.len();
        (self.x0 + self.xs[g % nx], self.y0 + self.ys[g / nx])
    }

    pub fn node_xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn node_ys(&self) -> &[f64] {
        &self.ys
    }

    /// Lumped mass of every node for unit density (sum of `w_a w_b J`).
    pub fn unit_mass(&self) -> &[f64] {
        &self.unit_mass
    }

    /// Smallest distance between neighbouring nodes along either axis.
    pub fn min_node_spacing(&self) -> f64 {
        let d = 0.5 * (self.gll.nodes[1] - self.gll.nodes[0]);
        (d * self.hx).min(d * self.hy)
    }

    /// Element and reference coordinates of a point (clamped to the mesh).
    pub fn locate(&self, x: f64, y: f64) -> (usize, usize, f64, f64) {
        let lx = ((x - self.x0) / self.hx).clamp(0.0, self.nex as f64);
        let ly = ((y - self.y0) / self.hy).clamp(0.0, self.ney as f64);
        let ex = (lx.floor() as usize).min(self.nex - 1);
        let ey = (ly.floor() as usize).min(self.ney - 1);
        let xi = 2.0 * (lx - ex as f64) - 1.0;
        let eta = 2.0 * (ly - ey as f64) - 1.0;
        (ex, ey, xi.clamp(-1.0, 1.0), eta.clamp(-1.0, 1.0))
    }

    /// Nodes and Lagrange weights interpolating a nodal field at `(x, y)`.
    /// Zero weights are dropped.
    pub fn interpolation_weights(&self, x: f64, y: f64) -> Vec<(usize, f64)> {
        let (ex, ey, xi, eta) = self.locate(x, y);
        let lx = self.gll.lagrange(xi);
        let ly = self.gll.lagrange(eta);
        let mut out = Vec::new();
        for (b, wy) in ly.iter().enumerate() {
            for (a, wx) in lx.iter().enumerate() {
                let w = wx * wy;
                if w != 0.0 {
                    out.push((self.global_index(ex, ey, a, b), w));
                }
            }
        }
        out
    }

    /// Weights of a raised-cosine average over a segment of length `width`
    /// centred at `(x, y)` along `tangent`; a point for `width <= 0`.
    pub fn aperture_weights(
        &self,
        x: f64,
        y: f64,
        tangent: (f64, f64),
        width: f64,
    ) -> Vec<(usize, f64)> {
        if width <= 0.0 {
            return self.interpolation_weights(x, y);
        }
        let m = ((8.0 * width / self.min_node_spacing()).ceil() as usize).max(16);
        let mut acc = std::collections::BTreeMap::new();
        let mut total = 0.0;
        for k in 0..m {
            let s = width * ((k as f64 + 0.5) / m as f64 - 0.5);
            let c = (std::f64::consts::PI * s / width).cos().powi(2);
            total += c;
            for (g, w) in self.interpolation_weights(x + s * tangent.0, y + s * tangent.1) {
                *acc.entry(g).or_insert(0.0) += c * w;
            }
        }
        acc.into_iter().map(|(g, w)| (g, w / total)).collect()
    }

    pub fn interpolate(&self, field: &[f64], x: f64, y: f64) -> f64 {
        self.interpolation_weights(x, y)
            .into_iter()
            .map(|(g, w)| w * field[g])
            .sum()
    }

    /// Evaluate a nodal scalar field at every pixel centre of `grid`.
    pub fn to_image(&self, field: &[f64], grid: RasterGrid) -> ImageGrid {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.center(i, j);
                values.push(self.interpolate(field, x, y));
            }
        }
        ImageGrid { grid, values }
    }
}

/// Material sampled at the mesh nodes, with the density-normalised stiffness
/// components `vp^2`, `vp^2 - 2 vs^2` and `vs^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalMaterial {
    pub rho: Vec<f64>,
    pub vp: Vec<f64>,
    pub vs: Vec<f64>,
}

impl NodalMaterial {
    pub fn uniform(mesh: &SpectralMesh, rho: f64, vp: f64, vs: f64) -> Self {
        let n = mesh.n_nodes();
        Self {
            rho: vec![rho; n],
            vp: vec![vp; n],
            vs: vec![vs; n],
        }
    }

    /// Pixel-containing-node sampling of a raster material.
    pub fn sample(mesh: &SpectralMesh, model: &MaterialModel) -> Self {
        let n = mesh.n_nodes();
        let (mut rho, mut vp, mut vs) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for g in 0..n {
            let (x, y) = mesh.node_coord(g);
            let (r, p, s) = model.sample(x, y);
            rho.push(r);
            vp.push(p);
            vs.push(s);
        }
        Self { rho, vp, vs }
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn validate(&self, mesh: &SpectralMesh) -> Result<()> {
        let n = mesh.n_nodes();
        if self.rho.len() != n || self.vp.len() != n || self.vs.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "nodal material has {} entries, mesh has {n} nodes",
                self.rho.len()
            )));
        }
        if self
            .rho
            .iter()
            .chain(&self.vp)
            .any(|&v| !(v > 0.0 && v.is_finite()))
            || self.vs.iter().any(|&v| !(v >= 0.0 && v.is_finite()))
        {
            return Err(Error::invalid("nodal material must be positive and finite"));
        }
        Ok(())
    }
}
