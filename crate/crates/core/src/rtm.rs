//! Residual reverse time migration: classic zero-lag correlation and the
//! density sensitivity image, summed over shots and smoothed.

use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, RasterGrid};
use crate::wavesim::{
    AdjointOptions, ForwardAccess, ForwardStorage, ReceiverSpec, Snapshots, SourceTerm, Traces,
    WaveSolver,
};

/// Default Gaussian smoothing width in pixels.
pub const DEFAULT_SIGMA: f64 = 3.0;

/// Residual time series to be injected at the receivers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSourceSet {
    pub receivers: ReceiverSpec,
    pub residuals: Traces,
}

/// `sim - obs` per receiver.
pub fn build_adjoint_sources(
    sim: &Traces,
    obs: &Traces,
    receivers: &ReceiverSpec,
) -> Result<AdjointSourceSet> {
    sim.ensure_same_shape(obs)?;
    if sim.n_receivers != receivers.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} traces for {} receivers",
            sim.n_receivers,
            receivers.len()
        )));
    }
    let mut residuals = sim.clone();
    for (r, o) in residuals.data.iter_mut().zip(&obs.data) {
        *r -= o;
    }
    if residuals.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite residual"));
    }
    Ok(AdjointSourceSet {
        receivers: receivers.clone(),
        residuals,
    })
}

/// Trapezoid `int u . u_adj dt` at every node.
pub fn rtm_classic(forward: &Snapshots, backward: &Snapshots) -> Result<Vec<f64>> {
    forward.ensure_compatible(backward)?;
    let n = forward.nx * forward.ny;
    let mut out = vec![0.0; n];
    for k in 0..forward.len() {
        let w = forward.trapezoid_weight(k);
        let (u, b) = (&forward.displacement[k], &backward.displacement[k]);
        for g in 0..n {
            out[g] += w * (u[g][0] * b[g][0] + u[g][1] * b[g][1]);
        }
    }
    Ok(out)
}

/// Trapezoid `int (-v . v_adj + grad u : C~ : grad u_adj) dt` at every node,
/// with `C~` built from the solver's local wave speeds.
pub fn rtm_density_kernel(
    solver: &WaveSolver<'_>,
    forward: &Snapshots,
    backward: &Snapshots,
) -> Result<Vec<f64>> {
    forward.ensure_compatible(backward)?;
    let mesh = solver.mesh();
    let (nx, ny) = mesh.node_dims();
    if forward.nx != nx || forward.ny != ny {
        return Err(Error::ShapeMismatch(
            "snapshots are not on the solver mesh".into(),
        ));
    }
    let n = nx * ny;
    let mut point = vec![0.0; n];
    let mut strain = vec![0.0; n];
    for k in 0..forward.len() {
        let w = forward.trapezoid_weight(k);
        let (v, vb) = (&forward.velocity[k], &backward.velocity[k]);
        for g in 0..n {
            point[g] -= w * (v[g][0] * vb[g][0] + v[g][1] * vb[g][1]);
        }
        solver.accumulate_strain_kernel(
            &backward.displacement[k],
            &forward.displacement[k],
            w,
            &mut strain,
        );
    }
    let um = mesh.unit_mass();
    Ok((0..n).map(|g| point[g] + strain[g] / um[g]).collect())
}

/// Which imaging condition an RTM image holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelKind {
    Classic,
    #[default]
    Density,
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Classic => "classic",
            KernelKind::Density => "density",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RtmImage {
    pub image: ImageGrid,
    pub kernel: KernelKind,
    pub sigma: f64,
    pub shots: usize,
}

impl RtmImage {
    pub fn metadata(&self) -> String {
        format!(
            "kernel={}\nsigma={}\nshots={}\n",
            self.kernel, self.sigma, self.shots
        )
    }

    pub fn write_metadata(&self, path: &Path) -> Result<()> {
        fs::write(path, self.metadata()).map_err(|e| Error::io(path, e))
    }
}

/// Normalised Gaussian weights on `[-4 sigma, 4 sigma]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (4.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Half-sample symmetric index into `0..n` (period `2n`).
#[inline]
fn reflect(i: i64, n: i64) -> usize {
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

fn blur_axis(
    src: &[f64],
    dst: &mut [f64],
    len: usize,
    stride: usize,
    count: usize,
    step: usize,
    w: &[f64],
) {
    let r = (w.len() / 2) as i64;
    for c in 0..count {
        let base = c * step;
        for i in 0..len {
            let mut acc = 0.0;
            for (k, wk) in w.iter().enumerate() {
                let j = reflect(i as i64 + k as i64 - r, len as i64);
                acc += wk * src[base + j * stride];
            }
            dst[base + i * stride] = acc;
        }
    }
}

/// Separable Gaussian blur with mirrored edges; preserves the image sum.
pub fn gaussian_blur(image: &ImageGrid, sigma: f64) -> ImageGrid {
    if sigma <= 0.0 {
        return image.clone();
    }
    let w = gaussian_kernel(sigma);
    let (nx, ny) = (image.grid.nx, image.grid.ny);
    let mut tmp = vec![0.0; nx * ny];
    blur_axis(&image.values, &mut tmp, nx, 1, ny, nx, &w);
    let mut out = vec![0.0; nx * ny];
    blur_axis(&tmp, &mut out, ny, nx, nx, 1, &w);
    ImageGrid {
        grid: image.grid,
        values: out,
    }
}

/// Sum per-shot images, take the absolute value and smooth with `sigma` pixels.
pub fn finalize_rtm(images: &[ImageGrid], sigma: f64, kernel: KernelKind) -> Result<RtmImage> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("no shot images to combine"))?;
    if sigma < 0.0 {
        return Err(Error::invalid("smoothing width must be nonnegative"));
    }
    let mut sum = vec![0.0; first.values.len()];
    for im in images {
        im.grid.ensure_matches(&first.grid)?;
        for (s, v) in sum.iter_mut().zip(&im.values) {
            *s += v;
        }
    }
    let abs = ImageGrid {
        grid: first.grid,
        values: sum.into_iter().map(f64::abs).collect(),
    };
    Ok(RtmImage {
        image: gaussian_blur(&abs, sigma),
        kernel,
        sigma,
        shots: images.len(),
    })
}

/// One excitation with its observed data.
#[derive(Debug, Clone)]
pub struct Shot {
    pub sources: Vec<SourceTerm>,
    pub observed: Traces,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtmConfig {
    pub grid: RasterGrid,
    pub decimation: usize,
    pub sigma: f64,
    pub kernel: KernelKind,
}

/// Per-shot images before absolute value and blur, in shot order.
pub fn rtm_shot_images(
    solver: &WaveSolver<'_>,
    receivers: &ReceiverSpec,
    shots: &[Shot],
    cfg: &RtmConfig,
) -> Result<Vec<ImageGrid>> {
    if cfg.decimation == 0 {
        return Err(Error::invalid("snapshot decimation must be >= 1"));
    }
    shots
        .par_iter()
        .map(|shot| {
            let fwd = solver.run_forward(
                &shot.sources,
                receivers,
                ForwardStorage::Snapshots {
                    decimation: cfg.decimation,
                },
            )?;
            let adj = build_adjoint_sources(&fwd.traces, &shot.observed, receivers)?;
            let snaps = fwd.snapshots.expect("snapshots requested");
            let run = solver.run_adjoint(
                &adj.receivers,
                &adj.residuals,
                AdjointOptions {
                    forward: Some(ForwardAccess::Snapshots(&snaps)),
                    store_decimation: None,
                },
            )?;
            let k = run.kernels.expect("kernels requested");
            let field = match cfg.kernel {
                KernelKind::Classic => k.classic,
                KernelKind::Density => k.density,
            };
            Ok(solver.mesh().to_image(&field, cfg.grid))
        })
        .collect()
}

pub fn run_rtm(
    solver: &WaveSolver<'_>,
    receivers: &ReceiverSpec,
    shots: &[Shot],
    cfg: &RtmConfig,
) -> Result<RtmImage> {
    let images = rtm_shot_images(solver, receivers, shots, cfg)?;
    finalize_rtm(&images, cfg.sigma, cfg.kernel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_is_half_sample_symmetric() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect(i, 3)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 2, 1, 0, 0]);
    }

    #[test]
    fn kernel_is_normalised_and_truncated_at_four_sigma() {
        let k = gaussian_kernel(3.0);
        assert_eq!(k.len(), 25);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_sigma_keeps_absolute_image() {
        let g = RasterGrid::new(2, 2, 1.0, 0.0, 0.0).unwrap();
        let im = ImageGrid::from_values(g, vec![-1.0, 2.0, -3.0, 4.0]).unwrap();
        let r = finalize_rtm(&[im], 0.0, KernelKind::Density).unwrap();
        assert_eq!(r.image.values, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(r.metadata(), "kernel=density\nsigma=0\nshots=1\n");
    }
}
