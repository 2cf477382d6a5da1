//! Box-constrained L-BFGS: two-loop recursion on the free variables,
//! projection onto the box and Armijo backtracking.

use std::collections::VecDeque;

use crate::error::{Error, Result};

pub trait Objective {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Value of a zero model response, if known. Values below `1e-24` of it
    /// are rounding noise and count as stationary.
    fn data_scale(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    /// Largest component change of the first (steepest-descent) step.
    pub step0: f64,
    /// Cap on the largest component change of any trial step.
    pub max_step: f64,
    pub c1: f64,
    pub max_backtracks: usize,
    /// Stop once an accepted step lowers the objective by less than this fraction.
    pub rel_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 20,
            step0: 0.1,
            max_step: 0.5,
            c1: 1e-4,
            max_backtracks: 8,
            rel_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MisfitRecord {
    pub iteration: usize,
    pub chi: f64,
    pub grad_norm: f64,
    /// Largest component change of the accepted step (0 for the start point).
    pub step: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    LineSearchFailed,
    SmallDecrease,
    Stationary,
    Instability,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub chi: f64,
    pub history: Vec<MisfitRecord>,
    pub stop: StopReason,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Variables not pinned at a bound by the gradient.
fn free_mask(x: &[f64], g: &[f64], lo: f64, hi: f64) -> Vec<bool> {
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| !((xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0)))
        .collect()
}

fn two_loop(g: &[f64], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, free: &[bool]) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .zip(free)
            .map(|(a, &f)| if f { *a } else { 0.0 })
            .collect()
    };
    let mut q = mask(g);
    let mut alpha = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(&mask(s), &q);
        let ym = mask(y);
        q.iter_mut().zip(&ym).for_each(|(qi, yi)| *qi -= a * yi);
        alpha.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in mem.iter().zip(alpha.into_iter().rev()) {
        let b = rho * dot(&mask(y), &q);
        let sm = mask(s);
        q.iter_mut()
            .zip(&sm)
            .for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter().map(|v| -v).collect()
}

/// Minimise `obj` over the box `[lo, hi]^n` starting from `x0` (projected into the box).
pub fn minimize(
    obj: &dyn Objective,
    x0: &[f64],
    lo: f64,
    hi: f64,
    opts: &LbfgsOptions,
) -> Result<LbfgsResult> {
    if !(lo < hi) {
        return Err(Error::invalid(format!("empty box [{lo}, {hi}]")));
    }
    let mut x: Vec<f64> = x0.iter().map(|v| v.clamp(lo, hi)).collect();
    if opts.max_iters == 0 {
        return Ok(LbfgsResult {
            x,
            chi: f64::NAN,
            history: Vec::new(),
            stop: StopReason::MaxIterations,
        });
    }
    let (mut f, mut g) = obj.value_and_gradient(&x)?;
    let mut history = vec![MisfitRecord {
        iteration: 0,
        chi: f,
        grad_norm: norm(&g),
        step: 0.0,
        accepted: true,
    }];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut stop = StopReason::MaxIterations;
    let floor = obj.data_scale().map_or(0.0, |e| 1e-24 * e);

    for it in 1..=opts.max_iters {
        let free = free_mask(&x, &g, lo, hi);
        let pg: Vec<f64> = g
            .iter()
            .zip(&free)
            .map(|(gi, &fr)| if fr { *gi } else { 0.0 })
            .collect();
        if f <= floor || max_abs(&pg) == 0.0 {
            stop = StopReason::Stationary;
            break;
        }
        let mut d = if mem.is_empty() {
            pg.iter().map(|v| -v).collect()
        } else {
            two_loop(&g, &mem, &free)
        };
        if dot(&d, &pg) >= 0.0 {
            mem.clear();
            d = pg.iter().map(|v| -v).collect();
        }
        let dmax = max_abs(&d);
        let scale = if mem.is_empty() {
            opts.step0 / dmax
        } else {
            (opts.max_step / dmax).min(1.0)
        };
        d.iter_mut().for_each(|v| *v *= scale);

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let xt: Vec<f64> = x
                .iter()
                .zip(&d)
                .map(|(xi, di)| (xi + alpha * di).clamp(lo, hi))
                .collect();
            let dx: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
            if max_abs(&dx) == 0.0 {
                break;
            }
            match obj.value(&xt) {
                Ok(ft) if ft.is_finite() && ft <= f + opts.c1 * dot(&g, &dx) => {
                    accepted = Some((xt, dx));
                    break;
                }
                Ok(_) | Err(Error::Instability { .. }) => alpha *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((xt, dx)) = accepted else {
            history.push(MisfitRecord {
                iteration: it,
                chi: f,
                grad_norm: norm(&g),
                step: 0.0,
                accepted: false,
            });
            stop = StopReason::LineSearchFailed;
            break;
        };
        let (ft, gt) = match obj.value_and_gradient(&xt) {
            Ok(v) => v,
            Err(Error::Instability { .. }) => {
                stop = StopReason::Instability;
                break;
            }
            Err(e) => return Err(e),
        };
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&dx, &y);
        if sy > 1e-12 * norm(&dx) * norm(&y) {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((dx.clone(), y, 1.0 / sy));
        }
        let decrease = (f - ft) / f;
        x = xt;
        f = ft;
        g = gt;
        history.push(MisfitRecord {
            iteration: it,
            chi: f,
            grad_norm: norm(&g),
            step: max_abs(&dx),
            accepted: true,
        });
        if decrease < opts.rel_tol {
            stop = StopReason::SmallDecrease;
            break;
        }
    }
    Ok(LbfgsResult {
        x,
        chi: f,
        history,
        stop,
    })
}
