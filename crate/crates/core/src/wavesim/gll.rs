//! Gauss-Lobatto-Legendre nodes, weights and the Lagrange derivative matrix.

use crate::error::{Error, Result};

/// Legendre polynomial `P_n(x)` and its derivative.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    // P'_n = n (x P_n - P_{n-1}) / (x^2 - 1), valid off the endpoints
    let dp = if (x * x - 1.0).abs() < 1e-300 {
        0.5 * x.powi(n as i32 + 1) * (n * (n + 1)) as f64
    } else {
        n as f64 * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, dp)
}

/// Nodes, quadrature weights and derivative matrix for one polynomial degree.
#[derive(Debug, Clone)]
pub struct Gll {
    pub degree: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `deriv[i * n + j] = l_j'(xi_i)` for the Lagrange basis on the nodes.
    pub deriv: Vec<f64>,
}

impl Gll {
    pub fn new(degree: usize) -> Result<Self> {
        let nodes = gll_nodes(degree)?;
        let n = degree + 1;
        let pn: Vec<f64> = nodes.iter().map(|&x| legendre(degree, x).0).collect();
        let scale = 2.0 / (degree * (degree + 1)) as f64;
        let weights = pn.iter().map(|p| scale / (p * p)).collect();
        let mut deriv = vec![0.0; n * n];
        let end = (degree * (degree + 1)) as f64 / 4.0;
        for i in 0..n {
            for j in 0..n {
                deriv[i * n + j] = if i != j {
                    pn[i] / (pn[j] * (nodes[i] - nodes[j]))
                } else if i == 0 {
                    -end
                } else if i == degree {
                    end
                } else {
                    0.0
                };
            }
        }
        Ok(Self {
            degree,
            nodes,
            weights,
            deriv,
        })
    }

    pub fn n(&self) -> usize {
        self.degree + 1
    }

    /// Lagrange basis values `l_j(xi)` at an arbitrary reference coordinate.
    pub fn lagrange(&self, xi: f64) -> Vec<f64> {
        let x = &self.nodes;
        (0..x.len())
            .map(|j| {
                x.iter()
                    .enumerate()
                    .filter(|&(m, _)| m != j)
                    .map(|(_, &xm)| (xi - xm) / (x[j] - xm))
                    .product()
            })
            .collect()
    }
}

/// The `p + 1` GLL points on `[-1, 1]`: the endpoints and the roots of `P_p'`.
pub fn gll_nodes(p: usize) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(Error::invalid("GLL degree must be at least 1"));
    }
    let mut x: Vec<f64> = (0..=p)
        .map(|i| -(std::f64::consts::PI * i as f64 / p as f64).cos())
        .collect();
    // Newton on (1 - x^2) P_p'(x), using P_p'' from the Legendre ODE
    for xi in x.iter_mut().take(p).skip(1) {
        for _ in 0..100 {
            let (pn, dpn) = legendre(p, *xi);
            let ddpn = (2.0 * *xi * dpn - (p * (p + 1)) as f64 * pn) / (1.0 - *xi * *xi);
            let step = dpn / ddpn;
            *xi -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
    }
    x[0] = -1.0;
    x[p] = 1.0;
    // enforce exact symmetry
    for i in 0..=p / 2 {
        let s = 0.5 * (x[p - i] - x[i]);
        x[i] = -s;
        x[p - i] = s;
    }
    if p % 2 == 0 {
        x[p / 2] = 0.0;
    }
    Ok(x)
}
