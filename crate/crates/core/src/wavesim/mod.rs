//! 2D isotropic elastic wave propagation with spectral elements.

mod gll;
mod mesh;
mod snapshots;
mod solver;
mod sponge;

pub use gll::{gll_nodes, legendre, Gll};
pub use mesh::{NodalMaterial, SpectralMesh};
pub use snapshots::Snapshots;
pub use solver::{
    cfl_limit, cfl_limit_with, AdjointOptions, AdjointRun, Checkpoints, ForwardAccess, ForwardRun,
    ForwardStorage, Kernels, ReceiverSpec, SourceTerm, Stepper, TimeParams, Traces, WaveSolver,
    DEFAULT_COURANT, MAX_DEGREE, MEASURED_STABILITY_RATIO,
};
pub use sponge::{absorbing_profile, SpongeLayer};
