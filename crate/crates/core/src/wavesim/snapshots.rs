//! Decimated wavefield storage for imaging, kept in memory and optionally
//! spilled to a binary file.
//!
//! File layout (little-endian):
//!
//! ```text
//! u32 nx | u32 ny | u32 n_snapshots | f64 dt_snap
//! per snapshot: ux, uy, vx, vy, each nx*ny f32 row-major
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Displacement and velocity at the mesh nodes every `decimation` steps.
///
/// The velocity stored with step `n` is the forward difference
/// `(u[n+1] - u[n]) / dt`, i.e. the leapfrog velocity at `n + 1/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshots {
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub decimation: usize,
    pub n_steps: usize,
    pub displacement: Vec<Vec<[f64; 2]>>,
    pub velocity: Vec<Vec<[f64; 2]>>,
}

impl Snapshots {
    pub fn new(nx: usize, ny: usize, dt: f64, decimation: usize, n_steps: usize) -> Self {
        Self {
            nx,
            ny,
            dt,
            decimation,
            n_steps,
            displacement: Vec::new(),
            velocity: Vec::new(),
        }
    }

    /// Number of snapshots a full run produces: `floor(n_steps / decimation) + 1`.
    pub fn expected_count(n_steps: usize, decimation: usize) -> usize {
        n_steps / decimation + 1
    }

    pub fn len(&self) -> usize {
        self.displacement.len()
    }

    pub fn is_empty(&self) -> bool {
        self.displacement.is_empty()
    }

    pub fn step_of(&self, k: usize) -> usize {
        k * self.decimation
    }

    pub fn dt_snap(&self) -> f64 {
        self.dt * self.decimation as f64
    }

    /// Trapezoid weight of snapshot `k` for a time integral over the stored span.
    pub fn trapezoid_weight(&self, k: usize) -> f64 {
        let last = self.len() - 1;
        if last == 0 {
            return 0.0;
        }
        let w = self.dt_snap();
        if k == 0 || k == last {
            0.5 * w
        } else {
            w
        }
    }

    pub(crate) fn push(&mut self, u: &[[f64; 2]], v: Vec<[f64; 2]>) {
        self.displacement.push(u.to_vec());
        self.velocity.push(v);
    }

    /// Error unless both stores cover the same nodes and times.
    pub fn ensure_compatible(&self, other: &Snapshots) -> Result<()> {
        if self.nx != other.nx || self.ny != other.ny {
            return Err(Error::ShapeMismatch(format!(
                "snapshot grids {}x{} and {}x{}",
                self.nx, self.ny, other.nx, other.ny
            )));
        }
        if self.len() != other.len()
            || self.decimation != other.decimation
            || (self.dt - other.dt).abs() > 1e-12 * self.dt
        {
            return Err(Error::ShapeMismatch(format!(
                "snapshot times differ: {} x {:.3e} s vs {} x {:.3e} s",
                self.len(),
                self.dt_snap(),
                other.len(),
                other.dt_snap()
            )));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let n = self.nx * self.ny;
        let mut buf = Vec::with_capacity(20 + self.len() * 16 * n);
        buf.extend_from_slice(&(self.nx as u32).to_le_bytes());
        buf.extend_from_slice(&(self.ny as u32).to_le_bytes());
        buf.extend_from_slice(&(self.len() as u32).to_le_bytes());
        buf.extend_from_slice(&self.dt_snap().to_le_bytes());
        for (u, v) in self.displacement.iter().zip(&self.velocity) {
            for field in [u, v] {
                for comp in 0..2 {
                    for node in field.iter() {
                        buf.extend_from_slice(&(node[comp] as f32).to_le_bytes());
                    }
                }
            }
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }

    /// Read a snapshot file. Values come back at f32 precision; the decimation
    /// is unknown on disk and reported as 1 with `dt = dt_snap`.
    pub fn read(path: &Path) -> Result<Snapshots> {
        let mut raw = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut raw))
            .map_err(|e| Error::io(path, e))?;
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if raw.len() < 20 {
            return Err(bad("truncated header".into()));
        }
        let u = |o: usize| u32::from_le_bytes(raw[o..o + 4].try_into().unwrap()) as usize;
        let (nx, ny, count) = (u(0), u(4), u(8));
        let dt_snap = f64::from_le_bytes(raw[12..20].try_into().unwrap());
        let n = nx * ny;
        if raw.len() != 20 + count * 16 * n {
            return Err(bad(format!("size {} does not match header", raw.len())));
        }
        let mut vals = raw[20..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        let mut s = Snapshots::new(nx, ny, dt_snap, 1, count.saturating_sub(1));
        for _ in 0..count {
            let mut fields = [vec![[0.0; 2]; n], vec![[0.0; 2]; n]];
            for field in fields.iter_mut() {
                for comp in 0..2 {
                    for node in field.iter_mut() {
                        node[comp] = vals.next().unwrap();
                    }
                }
            }
            let [d, v] = fields;
            s.displacement.push(d);
            s.velocity.push(v);
        }
        Ok(s)
    }
}
