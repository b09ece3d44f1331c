//! Preconditioned conjugate gradients for weighted torus Laplacians
//! `div* (w grad)`, restricted to mean-zero fields.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::lattice::TorusLattice;
use crate::numeric;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    None,
    Diagonal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default = "default_preconditioner")]
    pub preconditioner: Preconditioner,
}

fn default_preconditioner() -> Preconditioner {
    Preconditioner::Diagonal
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 20_000,
            preconditioner: Preconditioner::Diagonal,
        }
    }
}

impl SolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.tol > 0.0, || {
            format!("solver tol must be > 0, got {}", self.tol)
        })?;
        ensure(self.max_iter > 0, || "solver max_iter must be > 0".into())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// `||b - A x|| / ||b||`, recomputed from the returned iterate.
    pub relative_residual: f64,
    pub converged: bool,
}

impl SolveStats {
    fn trivial() -> Self {
        Self {
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        }
    }
}

/// `div* (w grad)` on a torus; `weights = None` is the plain Laplacian.
#[derive(Clone, Copy)]
pub struct WeightedLaplacian<'a> {
    lat: &'a TorusLattice,
    weights: Option<&'a [f64]>,
}

impl<'a> WeightedLaplacian<'a> {
    pub fn new(lat: &'a TorusLattice, weights: Option<&'a [f64]>) -> Self {
        debug_assert!(weights.is_none_or(|w| w.len() == lat.num_edges()));
        Self { lat, weights }
    }

    #[inline]
    fn weight(&self, e: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[e])
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let lat = self.lat;
        let d = lat.dim();
        for v in 0..lat.num_vertices() {
            let xv = x[v];
            let mut acc = 0.0;
            for i in 0..d {
                let up = lat.forward(v, i);
                let down = lat.backward(v, i);
                acc += self.weight(v * d + i) * (xv - x[up]);
                acc += self.weight(down * d + i) * (xv - x[down]);
            }
            y[v] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let lat = self.lat;
        let d = lat.dim();
        (0..lat.num_vertices())
            .map(|v| {
                (0..d)
                    .map(|i| self.weight(v * d + i) + self.weight(lat.backward(v, i) * d + i))
                    .sum()
            })
            .collect()
    }
}

/// Solves `A x = b` for mean-zero `x`. The right-hand side is projected onto
/// mean-zero fields first (the range of `A`). A zero right-hand side returns
/// zero without iterating. On `max_iter` the best iterate seen is returned
/// with `converged = false`.
pub fn solve_mean_zero(
    op: &WeightedLaplacian<'_>,
    rhs: &[f64],
    cfg: &SolverConfig,
) -> (Vec<f64>, SolveStats) {
    let n = rhs.len();
    let mut b = rhs.to_vec();
    numeric::project_mean_zero(&mut b);
    let b_norm = numeric::norm2(&b);
    if b_norm == 0.0 {
        return (vec![0.0; n], SolveStats::trivial());
    }

    let inv_diag: Option<Vec<f64>> = match cfg.preconditioner {
        Preconditioner::Diagonal => Some(op.diagonal().iter().map(|v| 1.0 / v).collect()),
        Preconditioner::None => None,
    };
    let precondition = |r: &[f64], z: &mut [f64]| {
        match &inv_diag {
            Some(m) => z
                .iter_mut()
                .zip(r.iter().zip(m))
                .for_each(|(z, (r, m))| *z = r * m),
            None => z.copy_from_slice(r),
        }
        numeric::project_mean_zero(z);
    };
    let true_residual = |x: &[f64], out: &mut [f64]| {
        op.apply(x, out);
        for (o, bk) in out.iter_mut().zip(&b) {
            *o = bk - *o;
        }
        numeric::project_mean_zero(out);
        numeric::norm2(out)
    };

    let target = cfg.tol * b_norm;
    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut best = (b_norm, x.clone());
    let mut iterations = 0;

    // restarted whenever the recurrence claims convergence but the
    // recomputed residual disagrees
    'restart: while iterations < cfg.max_iter {
        precondition(&r, &mut z);
        p.copy_from_slice(&z);
        let mut rz = numeric::dot(&r, &z);
        while iterations < cfg.max_iter {
            op.apply(&p, &mut ap);
            let pap = numeric::dot(&p, &ap);
            if pap <= 0.0 {
                break 'restart;
            }
            let alpha = rz / pap;
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            iterations += 1;
            if numeric::norm2(&r) <= 0.5 * target {
                let res = true_residual(&x, &mut r);
                if res < best.0 {
                    best = (res, x.clone());
                }
                if res <= target {
                    break 'restart;
                }
                continue 'restart;
            }
            precondition(&r, &mut z);
            let rz_new = numeric::dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..n {
                p[k] = z[k] + beta * p[k];
            }
        }
        let res = true_residual(&x, &mut r);
        if res < best.0 {
            best = (res, x.clone());
        }
    }

    let (res, mut x) = best;
    numeric::project_mean_zero(&mut x);
    let relative_residual = res / b_norm;
    (
        x,
        SolveStats {
            iterations,
            relative_residual,
            converged: relative_residual <= cfg.tol,
        },
    )
}
