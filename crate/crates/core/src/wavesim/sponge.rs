use crate::error::{Error, Result};

use super::mesh::SpectralMesh;

/// Velocity-proportional damping layers on the left and right sides.
///
/// The coefficient ramps quadratically from zero at the inner edge of each
/// layer to `strength` (1/s) at the side of the domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpongeLayer {
    pub width: f64,
    pub strength: f64,
    pub domain_width: f64,
}

impl SpongeLayer {
    pub fn none(domain_width: f64) -> Self {
        Self {
            width: 0.0,
            strength: 0.0,
            domain_width,
        }
    }

    /// Strength giving a round-trip amplitude decay of `reflection` for a wave
    /// of speed `speed` crossing a layer of the given width.
    pub fn tuned(width: f64, speed: f64, reflection: f64, domain_width: f64) -> Self {
        // round trip through a quadratic ramp: exp(-strength * width / (3 * speed))
        let strength = if width > 0.0 {
            3.0 * speed * (1.0 / reflection).ln() / width
        } else {
            0.0
        };
        Self {
            width,
            strength,
            domain_width,
        }
    }

    #[inline]
    pub fn damping_at(&self, x: f64) -> f64 {
        if self.width <= 0.0 {
            return 0.0;
        }
        let depth = if x < self.width {
            self.width - x
        } else if x > self.domain_width - self.width {
            x - (self.domain_width - self.width)
        } else {
            return 0.0;
        };
        let r = (depth / self.width).min(1.0);
        self.strength * r * r
    }

    pub fn nodal(&self, mesh: &SpectralMesh) -> Vec<f64> {
        (0..mesh.n_nodes())
            .map(|g| self.damping_at(mesh.node_coord(g).0))
            .collect()
    }
}

/// Build a damping profile for a domain; both layers must fit side by side.
pub fn absorbing_profile(
    layer_width: f64,
    strength: f64,
    domain_width: f64,
) -> Result<SpongeLayer> {
    if layer_width < 0.0 || strength < 0.0 {
        return Err(Error::invalid(
            "sponge width and strength must be nonnegative",
        ));
    }
    if 2.0 * layer_width >= domain_width && layer_width > 0.0 {
        return Err(Error::invalid(format!(
            "two sponge layers of {layer_width:.3e} m do not fit in a {domain_width:.3e} m domain"
        )));
    }
    Ok(SpongeLayer {
        width: layer_width,
        strength,
        domain_width,
    })
}
