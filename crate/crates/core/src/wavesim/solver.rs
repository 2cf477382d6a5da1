//! Explicit central-difference time stepping of the semi-discrete elastic
//! system `M u'' + D u' + K u = F`, and its discrete adjoint.
//!
//! `M` is the GLL-lumped mass, `D = alpha M` the sponge damping and `K` the
//! stiffness assembled element by element with sum factorisation. The
//! adjoint sweep runs the same scheme backward in time and accumulates the
//! density sensitivity kernel; in replay mode the result is the exact
//! derivative of the discrete trapezoid misfit.

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::mesh::{NodalMaterial, SpectralMesh};
use super::snapshots::Snapshots;
use super::sponge::SpongeLayer;

pub const MAX_DEGREE: usize = 8;
const MAXN: usize = MAX_DEGREE + 1;
const MAXQ: usize = MAXN * MAXN;

/// Ratio of the measured central-difference stability edge to
/// `min node spacing / vp` for degree-4 elements on homogeneous aluminium
/// (power iteration on `M^-1 K`; see the `courant_constant_calibration` test).
pub const MEASURED_STABILITY_RATIO: f64 = 0.673;
/// Default Courant constant: 70% of the measured stability edge.
pub const DEFAULT_COURANT: f64 = 0.7 * MEASURED_STABILITY_RATIO;

const NAN_CHECK_INTERVAL: usize = 32;
const PARALLEL_MIN_ELEMENTS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeParams {
    pub dt: f64,
    pub t_end: f64,
}

impl TimeParams {
    pub fn new(dt: f64, t_end: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!(
                "time step must be positive, got {dt}"
            )));
        }
        if !(t_end >= 0.0 && t_end.is_finite()) {
            return Err(Error::invalid(format!(
                "end time must be nonnegative, got {t_end}"
            )));
        }
        Ok(Self { dt, t_end })
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// Samples per trace: `t_k = k dt` for `k = 0..=n_steps`.
    pub fn n_samples(&self) -> usize {
        self.n_steps() + 1
    }
}

fn unit(v: (f64, f64), what: &str) -> Result<(f64, f64)> {
    let n = (v.0 * v.0 + v.1 * v.1).sqrt();
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "{what} direction must be a unit vector, |d| = {n}"
        )));
    }
    Ok(v)
}

/// Force `amplitude * waveform(t) * direction` at a position, spread with a
/// raised-cosine profile over `width` perpendicular to `direction` (a point
/// force for zero width).
/// `waveform[n]` is the value at `t_n = n dt`; samples beyond the end are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTerm {
    pub position: (f64, f64),
    pub direction: (f64, f64),
    pub waveform: Vec<f64>,
    pub amplitude: f64,
    pub width: f64,
}

impl SourceTerm {
    pub fn new(
        position: (f64, f64),
        direction: (f64, f64),
        waveform: Vec<f64>,
        amplitude: f64,
    ) -> Result<Self> {
        unit(direction, "source")?;
        if waveform.iter().any(|v| !v.is_finite()) || !amplitude.is_finite() {
            return Err(Error::invalid("source waveform must be finite"));
        }
        Ok(Self {
            position,
            direction,
            waveform,
            amplitude,
            width: 0.0,
        })
    }

    pub fn with_width(mut self, width: f64) -> Self {
        self.width = width.max(0.0);
        self
    }

    /// Source pushing into the specimen perpendicular to the top surface.
    pub fn surface_normal(position: (f64, f64), waveform: Vec<f64>) -> Result<Self> {
        Self::new(position, (0.0, 1.0), waveform, 1.0)
    }
}

/// Receiver positions and measuring directions. Each receiver averages the
/// displacement over `width` with the same profile as [`SourceTerm`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverSpec {
    pub positions: Vec<(f64, f64)>,
    pub directions: Vec<(f64, f64)>,
    pub width: f64,
}

impl ReceiverSpec {
    pub fn new(positions: Vec<(f64, f64)>, directions: Vec<(f64, f64)>) -> Result<Self> {
        if positions.len() != directions.len() {
            return Err(Error::ShapeMismatch(
                "receiver positions and directions differ in length".into(),
            ));
        }
        for &d in &directions {
            unit(d, "receiver")?;
        }
        Ok(Self {
            positions,
            directions,
            width: 0.0,
        })
    }

    pub fn surface_normal(positions: Vec<(f64, f64)>) -> Self {
        let directions = vec![(0.0, 1.0); positions.len()];
        Self {
            positions,
            directions,
            width: 0.0,
        }
    }

    pub fn with_width(mut self, width: f64) -> Self {
        self.width = width.max(0.0);
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Receiver time series, receiver-major: `data[r * n_samples + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Traces {
    pub dt: f64,
    pub n_receivers: usize,
    pub n_samples: usize,
    pub data: Vec<f64>,
}

impl Traces {
    pub fn zeros(dt: f64, n_receivers: usize, n_samples: usize) -> Self {
        Self {
            dt,
            n_receivers,
            n_samples,
            data: vec![0.0; n_receivers * n_samples],
        }
    }

    pub fn from_rows(dt: f64, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_samples = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_samples) {
            return Err(Error::ShapeMismatch("traces of unequal length".into()));
        }
        Ok(Self {
            dt,
            n_receivers: rows.len(),
            n_samples,
            data: rows.concat(),
        })
    }

    pub fn trace(&self, r: usize) -> &[f64] {
        &self.data[r * self.n_samples..(r + 1) * self.n_samples]
    }

    pub fn trace_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.n_samples..(r + 1) * self.n_samples]
    }

    pub fn ensure_same_shape(&self, other: &Traces) -> Result<()> {
        if self.n_receivers != other.n_receivers
            || self.n_samples != other.n_samples
            || (self.dt - other.dt).abs() > 1e-9 * self.dt
        {
            return Err(Error::ShapeMismatch(format!(
                "traces {}x{} @ {:.4e} s vs {}x{} @ {:.4e} s",
                self.n_receivers,
                self.n_samples,
                self.dt,
                other.n_receivers,
                other.n_samples,
                other.dt
            )));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Traces {
        Traces {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    pub fn add_assign(&mut self, other: &Traces) -> Result<()> {
        self.ensure_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

/// What a forward run keeps besides the receiver traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardStorage {
    None,
    /// Displacement and velocity every `decimation` steps.
    Snapshots {
        decimation: usize,
    },
    /// Restart states every `interval` steps for exact replay in the adjoint.
    Checkpoints {
        interval: usize,
    },
}

/// Restart states `(u[c-1], u[c])` at `c = 0, interval, 2 interval, ...`.
#[derive(Debug, Clone)]
pub struct Checkpoints {
    pub interval: usize,
    pub n_steps: usize,
    states: Vec<(Vec<[f64; 2]>, Vec<[f64; 2]>)>,
}

#[derive(Debug, Clone)]
pub struct ForwardRun {
    pub traces: Traces,
    pub snapshots: Option<Snapshots>,
    pub checkpoints: Option<Checkpoints>,
}

/// Access to the forward field during the adjoint sweep.
#[derive(Clone, Copy)]
pub enum ForwardAccess<'a> {
    /// Decimated snapshots; kernels use the velocity form and the trapezoid rule
    /// over snapshot times.
    Snapshots(&'a Snapshots),
    /// Exact recomputation of every step from checkpoints; kernels are the
    /// exact gradient of the discrete misfit.
    Replay {
        checkpoints: &'a Checkpoints,
        sources: &'a [SourceTerm],
    },
}

#[derive(Clone, Copy, Default)]
pub struct AdjointOptions<'a> {
    pub forward: Option<ForwardAccess<'a>>,
    /// Keep the adjoint field every `n` steps.
    pub store_decimation: Option<usize>,
}

/// Nodal kernels accumulated during the adjoint sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernels {
    /// Density sensitivity `K_rho` (per unit volume).
    pub density: Vec<f64>,
    /// Zero-lag correlation of displacements.
    pub classic: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AdjointRun {
    pub kernels: Option<Kernels>,
    pub snapshots: Option<Snapshots>,
}

struct InjectionPoint {
    node: usize,
    coef: [f64; 2],
    series: usize,
}

fn compile_points(
    mesh: &SpectralMesh,
    items: impl Iterator<Item = ((f64, f64), (f64, f64), f64, f64)>,
) -> Vec<InjectionPoint> {
    let mut pts = Vec::new();
    for (series, (pos, dir, amp, width)) in items.enumerate() {
        for (node, w) in mesh.aperture_weights(pos.0, pos.1, (-dir.1, dir.0), width) {
            pts.push(InjectionPoint {
                node,
                coef: [amp * w * dir.0, amp * w * dir.1],
                series,
            });
        }
    }
    pts
}

struct CompiledSources<'a> {
    points: Vec<InjectionPoint>,
    waveforms: Vec<&'a [f64]>,
}

impl<'a> CompiledSources<'a> {
    fn new(mesh: &SpectralMesh, sources: &'a [SourceTerm]) -> Self {
        let points = compile_points(
            mesh,
            sources
                .iter()
                .map(|s| (s.position, s.direction, s.amplitude, s.width)),
        );
        Self {
            points,
            waveforms: sources.iter().map(|s| s.waveform.as_slice()).collect(),
        }
    }

    fn add_force(&self, n: usize, f: &mut [[f64; 2]]) {
        for p in &self.points {
            if let Some(&w) = self.waveforms[p.series].get(n) {
                f[p.node][0] += p.coef[0] * w;
                f[p.node][1] += p.coef[1] * w;
            }
        }
    }
}

/// The discretised operator for one material model and time axis.
pub struct WaveSolver<'m> {
    mesh: &'m SpectralMesh,
    ctilde: Vec<[f64; 3]>,
    stiff: Vec<[f64; 3]>,
    mass: Vec<f64>,
    inv_mass: Vec<f64>,
    damping: Vec<f64>,
    c_plus: Vec<f64>,
    c_minus: Vec<f64>,
    time: TimeParams,
    parallel: bool,
}

impl<'m> WaveSolver<'m> {
    pub fn new(
        mesh: &'m SpectralMesh,
        material: &NodalMaterial,
        sponge: &SpongeLayer,
        time: TimeParams,
    ) -> Result<Self> {
        if mesh.degree() > MAX_DEGREE {
            return Err(Error::invalid(format!(
                "degree {} exceeds maximum {MAX_DEGREE}",
                mesh.degree()
            )));
        }
        material.validate(mesh)?;
        let n = mesh.n_nodes();
        let ctilde: Vec<[f64; 3]> = (0..n)
            .map(|g| {
                let (vp2, vs2) = (material.vp[g].powi(2), material.vs[g].powi(2));
                [vp2, vp2 - 2.0 * vs2, vs2]
            })
            .collect();
        let stiff = ctilde
            .iter()
            .zip(&material.rho)
            .map(|(c, &r)| [r * c[0], r * c[1], r * c[2]])
            .collect();
        let mass: Vec<f64> = mesh
            .unit_mass()
            .iter()
            .zip(&material.rho)
            .map(|(m, r)| m * r)
            .collect();
        let inv_mass = mass.iter().map(|m| 1.0 / m).collect();
        let damping = sponge.nodal(mesh);
        let half = 0.5 * time.dt;
        let c_plus = damping.iter().map(|a| 1.0 / (1.0 + a * half)).collect();
        let c_minus = damping.iter().map(|a| 1.0 - a * half).collect();
        Ok(Self {
            mesh,
            ctilde,
            stiff,
            mass,
            inv_mass,
            damping,
            c_plus,
            c_minus,
            time,
            parallel: mesh.n_elements() >= PARALLEL_MIN_ELEMENTS,
        })
    }

    /// Force element-parallel assembly on or off. Results are bit-identical
    /// either way.
    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn mesh(&self) -> &SpectralMesh {
        self.mesh
    }

    pub fn time(&self) -> TimeParams {
        self.time
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn damping(&self) -> &[f64] {
        &self.damping
    }

    /// Run `f(ey, rows)` for every element row, where `rows` starts at node row
    /// `ey * p`. Even rows first, then odd rows; rows of one colour touch
    /// disjoint nodes so they may run concurrently.
    fn for_element_rows<T: Send>(&self, out: &mut [T], f: impl Fn(usize, &mut [T]) + Sync) {
        let p = self.mesh.degree();
        let (nx, _) = self.mesh.node_dims();
        let ney = self.mesh.ney;
        let chunk = 2 * p * nx;
        for color in 0..2 {
            let start = color * p * nx;
            if start >= out.len() {
                continue;
            }
            let body = |(c, rows): (usize, &mut [T])| {
                let ey = 2 * c + color;
                if ey < ney {
                    f(ey, rows);
                }
            };
            if self.parallel {
                out[start..]
                    .par_chunks_mut(chunk)
                    .enumerate()
                    .for_each(body);
            } else {
                out[start..].chunks_mut(chunk).enumerate().for_each(body);
            }
        }
    }

    /// Displacement gradients `[dux/dx, dux/dy, duy/dx, duy/dy]` at the GLL points of one element.
    #[inline(always)]
    fn element_gradients(&self, u: &[[f64; 2]], ex: usize, ey: usize, grad: &mut [[f64; 4]; MAXQ]) {
        let mesh = self.mesh;
        let p = mesh.degree();
        let n = p + 1;
        let (nx, _) = mesh.node_dims();
        let d = &mesh.gll.deriv;
        let (sx, sy) = (2.0 / mesh.hx, 2.0 / mesh.hy);
        let mut loc = [[0.0f64; 2]; MAXQ];
        for b in 0..n {
            let row = (ey * p + b) * nx + ex * p;
            loc[b * n..b * n + n].copy_from_slice(&u[row..row + n]);
        }
        for b in 0..n {
            for a in 0..n {
                let (mut x0, mut x1, mut e0, mut e1) = (0.0, 0.0, 0.0, 0.0);
                for k in 0..n {
                    let da = d[a * n + k];
                    let la = loc[b * n + k];
                    x0 += da * la[0];
                    x1 += da * la[1];
                    let db = d[b * n + k];
                    let lb = loc[k * n + a];
                    e0 += db * lb[0];
                    e1 += db * lb[1];
                }
                grad[b * n + a] = [x0 * sx, e0 * sy, x1 * sx, e1 * sy];
            }
        }
    }

    /// `out = K u`.
    pub fn internal_force(&self, u: &[[f64; 2]], out: &mut [[f64; 2]]) {
        out.iter_mut().for_each(|v| *v = [0.0; 2]);
        let mesh = self.mesh;
        let p = mesh.degree();
        let n = p + 1;
        let (nx, _) = mesh.node_dims();
        let d = &mesh.gll.deriv;
        let w = &mesh.gll.weights;
        let jac = mesh.jacobian();
        let (sx, sy) = (2.0 / mesh.hx, 2.0 / mesh.hy);
        self.for_element_rows(out, |ey, rows| {
            let base = ey * p * nx;
            let mut grad = [[0.0; 4]; MAXQ];
            let mut fx = [[0.0f64; 2]; MAXQ];
            let mut fy = [[0.0f64; 2]; MAXQ];
            for ex in 0..mesh.nex {
                self.element_gradients(u, ex, ey, &mut grad);
                for b in 0..n {
                    for a in 0..n {
                        let q = b * n + a;
                        let g = mesh.global_index(ex, ey, a, b);
                        let [c11, c12, c66] = self.stiff[g];
                        let [dxx, dxy, dyx, dyy] = grad[q];
                        let sxx = c11 * dxx + c12 * dyy;
                        let syy = c12 * dxx + c11 * dyy;
                        let sxy = c66 * (dxy + dyx);
                        let wq = w[a] * w[b] * jac;
                        fx[q] = [wq * sx * sxx, wq * sx * sxy];
                        fy[q] = [wq * sy * sxy, wq * sy * syy];
                    }
                }
                for b in 0..n {
                    for a in 0..n {
                        let (mut f0, mut f1) = (0.0, 0.0);
                        for k in 0..n {
                            let dk = d[k * n + a];
                            f0 += dk * fx[b * n + k][0];
                            f1 += dk * fx[b * n + k][1];
                            let dl = d[k * n + b];
                            f0 += dl * fy[k * n + a][0];
                            f1 += dl * fy[k * n + a][1];
                        }
                        let g = mesh.global_index(ex, ey, a, b) - base;
                        rows[g][0] += f0;
                        rows[g][1] += f1;
                    }
                }
            }
        });
    }

    /// `out[g] += weight * sum over element copies of node g of w_q J (grad lam : C~ : grad u)`.
    pub fn accumulate_strain_kernel(
        &self,
        lam: &[[f64; 2]],
        u: &[[f64; 2]],
        weight: f64,
        out: &mut [f64],
    ) {
        let mesh = self.mesh;
        let p = mesh.degree();
        let n = p + 1;
        let (nx, _) = mesh.node_dims();
        let w = &mesh.gll.weights;
        let jac = mesh.jacobian();
        self.for_element_rows(out, |ey, rows| {
            let base = ey * p * nx;
            let mut gl = [[0.0; 4]; MAXQ];
            let mut gu = [[0.0; 4]; MAXQ];
            for ex in 0..mesh.nex {
                self.element_gradients(lam, ex, ey, &mut gl);
                self.element_gradients(u, ex, ey, &mut gu);
                for b in 0..n {
                    for a in 0..n {
                        let q = b * n + a;
                        let g = mesh.global_index(ex, ey, a, b);
                        let [c11, c12, c66] = self.ctilde[g];
                        let [lxx, lxy, lyx, lyy] = gl[q];
                        let [uxx, uxy, uyx, uyy] = gu[q];
                        let v = c11 * (lxx * uxx + lyy * uyy)
                            + c12 * (lxx * uyy + lyy * uxx)
                            + c66 * (lxy + lyx) * (uxy + uyx);
                        rows[g - base] += weight * w[a] * w[b] * jac * v;
                    }
                }
            }
        });
    }

    /// One central-difference update: `next` from `cur`, `prev` and the
    /// external force already stored in `force`.
    fn update(
        &self,
        prev: &[[f64; 2]],
        cur: &[[f64; 2]],
        force: &mut [[f64; 2]],
        kbuf: &mut [[f64; 2]],
        next: &mut [[f64; 2]],
    ) {
        self.internal_force(cur, kbuf);
        let dt2 = self.time.dt * self.time.dt;
        for g in 0..next.len() {
            let s = dt2 * self.inv_mass[g];
            for c in 0..2 {
                let acc = s * (force[g][c] - kbuf[g][c]);
                next[g][c] =
                    (acc + 2.0 * cur[g][c] - self.c_minus[g] * prev[g][c]) * self.c_plus[g];
            }
            force[g] = [0.0; 2];
        }
    }

    /// Time-stepping state machine for custom drivers (energy checks,
    /// smoke tests). Starts at rest: `u[-1] = u[0] = 0`.
    pub fn stepper<'s>(&'s self, sources: &'s [SourceTerm]) -> Stepper<'s, 'm> {
        let n = self.mesh.n_nodes();
        Stepper {
            solver: self,
            sources: CompiledSources::new(self.mesh, sources),
            prev: vec![[0.0; 2]; n],
            cur: vec![[0.0; 2]; n],
            next: vec![[0.0; 2]; n],
            force: vec![[0.0; 2]; n],
            kbuf: vec![[0.0; 2]; n],
            step: 0,
        }
    }

    /// Conserved leapfrog energy between steps `n` and `n+1`:
    /// `1/2 v^T M v + 1/2 u_n^T K u_{n+1}` with `v = (u_{n+1} - u_n) / dt`.
    pub fn discrete_energy(&self, u_n: &[[f64; 2]], u_np1: &[[f64; 2]]) -> f64 {
        let mut ku = vec![[0.0; 2]; u_n.len()];
        self.internal_force(u_np1, &mut ku);
        let dt = self.time.dt;
        let mut e = 0.0;
        for g in 0..u_n.len() {
            for c in 0..2 {
                let v = (u_np1[g][c] - u_n[g][c]) / dt;
                e += 0.5 * self.mass[g] * v * v + 0.5 * u_n[g][c] * ku[g][c];
            }
        }
        e
    }

    /// Central-difference stability edge `2 / sqrt(lambda_max(M^-1 K))`, by
    /// power iteration.
    pub fn stability_limit(&self, iterations: usize) -> f64 {
        let n = self.mesh.n_nodes();
        let mut x: Vec<[f64; 2]> = (0..n)
            .map(|g| {
                let s = if g % 2 == 0 { 1.0 } else { -1.0 };
                [s, -0.7 * s + 0.1 * ((g % 7) as f64)]
            })
            .collect();
        let mut kx = vec![[0.0; 2]; n];
        let mut lambda = 0.0;
        for _ in 0..iterations {
            self.internal_force(&x, &mut kx);
            let (mut num, mut den) = (0.0, 0.0);
            for g in 0..n {
                for c in 0..2 {
                    num += x[g][c] * kx[g][c];
                    den += self.mass[g] * x[g][c] * x[g][c];
                }
            }
            lambda = num / den;
            let mut norm = 0.0;
            for g in 0..n {
                for c in 0..2 {
                    x[g][c] = kx[g][c] * self.inv_mass[g];
                    norm += x[g][c] * x[g][c];
                }
            }
            let inv = 1.0 / norm.sqrt();
            x.iter_mut().for_each(|v| {
                v[0] *= inv;
                v[1] *= inv;
            });
        }
        2.0 / lambda.sqrt()
    }

    pub fn run_forward(
        &self,
        sources: &[SourceTerm],
        receivers: &ReceiverSpec,
        storage: ForwardStorage,
    ) -> Result<ForwardRun> {
        let n_steps = self.time.n_steps();
        let dt = self.time.dt;
        let rx = compile_points(
            self.mesh,
            receivers
                .positions
                .iter()
                .zip(&receivers.directions)
                .map(|(&p, &d)| (p, d, 1.0, receivers.width)),
        );
        let mut traces = Traces::zeros(dt, receivers.len(), n_steps + 1);
        let (nx, ny) = self.mesh.node_dims();
        let mut snaps = match storage {
            ForwardStorage::Snapshots { decimation } => {
                if decimation == 0 {
                    return Err(Error::invalid("snapshot decimation must be >= 1"));
                }
                Some(Snapshots::new(nx, ny, dt, decimation, n_steps))
            }
            _ => None,
        };
        let mut cps = match storage {
            ForwardStorage::Checkpoints { interval } => {
                if interval == 0 {
                    return Err(Error::invalid("checkpoint interval must be >= 1"));
                }
                Some(Checkpoints {
                    interval,
                    n_steps,
                    states: Vec::new(),
                })
            }
            _ => None,
        };
        let mut st = self.stepper(sources);
        for n in 0..=n_steps {
            for p in &rx {
                let u = st.cur[p.node];
                traces.data[p.series * traces.n_samples + n] += p.coef[0] * u[0] + p.coef[1] * u[1];
            }
            if let Some(c) = cps.as_mut() {
                if n % c.interval == 0 && n < n_steps {
                    c.states.push((st.prev.clone(), st.cur.clone()));
                }
            }
            let need_snapshot = snaps.as_ref().is_some_and(|s| n % s.decimation == 0);
            if n == n_steps && !need_snapshot {
                break;
            }
            st.step()?;
            if need_snapshot {
                let v = st
                    .prev
                    .iter()
                    .zip(&st.cur)
                    .map(|(a, b)| [(b[0] - a[0]) / dt, (b[1] - a[1]) / dt])
                    .collect();
                snaps.as_mut().unwrap().push(&st.prev, v);
            }
        }
        Ok(ForwardRun {
            traces,
            snapshots: snaps,
            checkpoints: cps,
        })
    }

    /// Backward sweep driven by receiver residuals.
    ///
    /// The adjoint state solves the same equation with the residual injected
    /// along each receiver direction, negated and weighted by the trapezoid
    /// rule, so that the accumulated `K_rho` is `d chi / d rho` for
    /// `chi = 1/2 sum_r int residual^2 dt`.
    pub fn run_adjoint(
        &self,
        receivers: &ReceiverSpec,
        residuals: &Traces,
        opts: AdjointOptions<'_>,
    ) -> Result<AdjointRun> {
        let n_steps = self.time.n_steps();
        let dt = self.time.dt;
        if residuals.n_receivers != receivers.len() || residuals.n_samples != n_steps + 1 {
            return Err(Error::ShapeMismatch(format!(
                "adjoint sources {}x{} for {} receivers and {} samples",
                residuals.n_receivers,
                residuals.n_samples,
                receivers.len(),
                n_steps + 1
            )));
        }
        if (residuals.dt - dt).abs() > 1e-9 * dt {
            return Err(Error::ShapeMismatch(format!(
                "adjoint source dt {:.4e} s differs from solver dt {dt:.4e} s",
                residuals.dt
            )));
        }
        let rx = compile_points(
            self.mesh,
            receivers
                .positions
                .iter()
                .zip(&receivers.directions)
                .map(|(&p, &d)| (p, d, 1.0, receivers.width)),
        );
        let n = self.mesh.n_nodes();
        let (nx, ny) = self.mesh.node_dims();

        let mut replay = None;
        let mut fwd_snaps = None;
        match opts.forward {
            Some(ForwardAccess::Snapshots(s)) => {
                if s.nx != nx || s.ny != ny {
                    return Err(Error::ShapeMismatch(
                        "forward snapshots are on a different mesh".into(),
                    ));
                }
                if s.n_steps != n_steps
                    || (s.dt - dt).abs() > 1e-9 * dt
                    || s.len() != Snapshots::expected_count(n_steps, s.decimation)
                {
                    return Err(Error::ShapeMismatch(format!(
                        "forward snapshots ({} x {:.4e} s) do not match the adjoint time axis ({} steps of {dt:.4e} s)",
                        s.len(),
                        s.dt_snap(),
                        n_steps
                    )));
                }
                fwd_snaps = Some(s);
            }
            Some(ForwardAccess::Replay {
                checkpoints,
                sources,
            }) => {
                if checkpoints.n_steps != n_steps {
                    return Err(Error::ShapeMismatch(
                        "checkpoints cover a different time axis".into(),
                    ));
                }
                replay = Some(Replay::new(self, checkpoints, sources));
            }
            None => {}
        }
        let accumulate = opts.forward.is_some();

        let store = match opts.store_decimation {
            Some(0) => return Err(Error::invalid("snapshot decimation must be >= 1")),
            Some(k) => Some(Snapshots::new(nx, ny, dt, k, n_steps)),
            None => None,
        };
        let mut stored_rev: Vec<(Vec<[f64; 2]>, Vec<[f64; 2]>)> = Vec::new();

        let mut k_point = vec![0.0; n];
        let mut k_strain = vec![0.0; n];
        let mut classic = vec![0.0; n];

        // lam_next = lambda[m+1], lam = lambda[m]
        let mut lam_next = vec![[0.0; 2]; n];
        let mut lam = vec![[0.0; 2]; n];
        let mut lam_prev = vec![[0.0; 2]; n];
        let mut force = vec![[0.0; 2]; n];
        let mut kbuf = vec![[0.0; 2]; n];

        if let Some(s) = store.as_ref() {
            if n_steps % s.decimation == 0 {
                stored_rev.push((lam.clone(), vec![[0.0; 2]; n]));
            }
        }

        for m in (1..=n_steps).rev() {
            let w_m = if m == n_steps { 0.5 } else { 1.0 };
            for p in &rx {
                let r = residuals.data[p.series * residuals.n_samples + m];
                force[p.node][0] -= w_m * r * p.coef[0];
                force[p.node][1] -= w_m * r * p.coef[1];
            }
            self.update(&lam_next, &lam, &mut force, &mut kbuf, &mut lam_prev);
            // rotate: lam_next <- lam, lam <- lam_prev
            std::mem::swap(&mut lam_next, &mut lam);
            std::mem::swap(&mut lam, &mut lam_prev);
            let step = m - 1;
            if (step % NAN_CHECK_INTERVAL == 0)
                && lam.iter().any(|v| !(v[0].is_finite() && v[1].is_finite()))
            {
                return Err(Error::Instability { step });
            }

            if let Some(rp) = replay.as_mut() {
                let (u_prev, u_cur, u_next) = rp.window(step)?;
                let inv_dt = 1.0 / dt;
                for g in 0..n {
                    let l = lam[g];
                    let acc = [
                        u_next[g][0] - 2.0 * u_cur[g][0] + u_prev[g][0],
                        u_next[g][1] - 2.0 * u_cur[g][1] + u_prev[g][1],
                    ];
                    let mut v = (l[0] * acc[0] + l[1] * acc[1]) * inv_dt;
                    let a = self.damping[g];
                    if a != 0.0 {
                        v += 0.5
                            * a
                            * (l[0] * (u_next[g][0] - u_prev[g][0])
                                + l[1] * (u_next[g][1] - u_prev[g][1]));
                    }
                    k_point[g] += v;
                    classic[g] += dt * (l[0] * u_cur[g][0] + l[1] * u_cur[g][1]);
                }
                self.accumulate_strain_kernel(&lam, u_cur, dt, &mut k_strain);
            } else if let Some(s) = fwd_snaps {
                if step % s.decimation == 0 {
                    let j = step / s.decimation;
                    let wj = s.trapezoid_weight(j);
                    let (u, v) = (&s.displacement[j], &s.velocity[j]);
                    for g in 0..n {
                        let l = lam[g];
                        let vl = [(lam_next[g][0] - l[0]) / dt, (lam_next[g][1] - l[1]) / dt];
                        k_point[g] -= wj * (v[g][0] * vl[0] + v[g][1] * vl[1]);
                        classic[g] += wj * (l[0] * u[g][0] + l[1] * u[g][1]);
                    }
                    self.accumulate_strain_kernel(&lam, u, wj, &mut k_strain);
                }
            }

            if let Some(s) = store.as_ref() {
                if step % s.decimation == 0 {
                    let v = lam
                        .iter()
                        .zip(&lam_next)
                        .map(|(a, b)| [(b[0] - a[0]) / dt, (b[1] - a[1]) / dt])
                        .collect();
                    stored_rev.push((lam.clone(), v));
                }
            }
        }

        let snapshots = store.map(|mut s| {
            for (u, v) in stored_rev.into_iter().rev() {
                s.push(&u, v);
            }
            s
        });
        let kernels = accumulate.then(|| {
            let um = self.mesh.unit_mass();
            let density = (0..n).map(|g| k_point[g] + k_strain[g] / um[g]).collect();
            Kernels { density, classic }
        });
        Ok(AdjointRun { kernels, snapshots })
    }
}

/// Forward time stepper; see [`WaveSolver::stepper`].
pub struct Stepper<'s, 'm> {
    solver: &'s WaveSolver<'m>,
    sources: CompiledSources<'s>,
    prev: Vec<[f64; 2]>,
    cur: Vec<[f64; 2]>,
    next: Vec<[f64; 2]>,
    force: Vec<[f64; 2]>,
    kbuf: Vec<[f64; 2]>,
    step: usize,
}

impl Stepper<'_, '_> {
    /// Advance from `u[n]` to `u[n+1]`.
    pub fn step(&mut self) -> Result<()> {
        self.sources.add_force(self.step, &mut self.force);
        self.solver.update(
            &self.prev,
            &self.cur,
            &mut self.force,
            &mut self.kbuf,
            &mut self.next,
        );
        std::mem::swap(&mut self.prev, &mut self.cur);
        std::mem::swap(&mut self.cur, &mut self.next);
        self.step += 1;
        if self.step % NAN_CHECK_INTERVAL == 0
            && self
                .cur
                .iter()
                .any(|v| !(v[0].is_finite() && v[1].is_finite()))
        {
            return Err(Error::Instability { step: self.step });
        }
        Ok(())
    }

    /// Index `n` of the current state `u[n]`.
    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn current(&self) -> &[[f64; 2]] {
        &self.cur
    }

    pub fn previous(&self) -> &[[f64; 2]] {
        &self.prev
    }

    fn restart(&mut self, step: usize, prev: &[[f64; 2]], cur: &[[f64; 2]]) {
        self.prev.copy_from_slice(prev);
        self.cur.copy_from_slice(cur);
        self.force.iter_mut().for_each(|f| *f = [0.0; 2]);
        self.step = step;
    }
}

/// Recomputes forward states segment by segment from checkpoints.
struct Replay<'s, 'm> {
    stepper: Stepper<'s, 'm>,
    checkpoints: &'s Checkpoints,
    seg_start: Option<usize>,
    /// `buf[i] = u[seg_start - 1 + i]`
    buf: Vec<Vec<[f64; 2]>>,
}

impl<'s, 'm> Replay<'s, 'm> {
    fn new(
        solver: &'s WaveSolver<'m>,
        checkpoints: &'s Checkpoints,
        sources: &'s [SourceTerm],
    ) -> Self {
        Self {
            stepper: solver.stepper(sources),
            checkpoints,
            seg_start: None,
            buf: Vec::new(),
        }
    }

    fn load(&mut self, c: usize) -> Result<()> {
        let k = self.checkpoints.interval;
        let (p, u) = self
            .checkpoints
            .states
            .get(c / k)
            .ok_or_else(|| Error::ShapeMismatch(format!("no checkpoint for step {c}")))?;
        self.stepper.restart(c, p, u);
        let last = (c + k).min(self.checkpoints.n_steps);
        self.buf.clear();
        self.buf.push(p.clone());
        self.buf.push(u.clone());
        for _ in c..last {
            self.stepper.step()?;
            self.buf.push(self.stepper.cur.clone());
        }
        self.seg_start = Some(c);
        Ok(())
    }

    /// `(u[n-1], u[n], u[n+1])` for `0 <= n < n_steps`.
    fn window(&mut self, n: usize) -> Result<(&[[f64; 2]], &[[f64; 2]], &[[f64; 2]])> {
        let k = self.checkpoints.interval;
        let c = (n / k) * k;
        if self.seg_start != Some(c) {
            self.load(c)?;
        }
        let i = n - c;
        Ok((&self.buf[i], &self.buf[i + 1], &self.buf[i + 2]))
    }
}

/// Courant-limited time step with the default safety constant.
pub fn cfl_limit(mesh: &SpectralMesh, material: &NodalMaterial) -> f64 {
    cfl_limit_with(mesh, material, DEFAULT_COURANT)
}

/// `courant * min over nodes (local node spacing / vp)`.
pub fn cfl_limit_with(mesh: &SpectralMesh, material: &NodalMaterial, courant: f64) -> f64 {
    let xs = mesh.node_xs();
    let ys = mesh.node_ys();
    let gap = |v: &[f64], i: usize| {
        let l = if i > 0 {
            v[i] - v[i - 1]
        } else {
            f64::INFINITY
        };
        let r = if i + 1 < v.len() {
            v[i + 1] - v[i]
        } else {
            f64::INFINITY
        };
        l.min(r)
    };
    let nx = xs.len();
    let mut best = f64::INFINITY;
    for (g, &vp) in material.vp.iter().enumerate() {
        let (ix, iy) = (g % nx, g / nx);
        let h = gap(xs, ix).min(gap(ys, iy));
        best = best.min(h / vp);
    }
    courant * best
}
