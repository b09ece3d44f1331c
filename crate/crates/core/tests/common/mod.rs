//! Dense reference computations shared by the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rcm_lab::environment::Environment;
use rcm_lab::lattice::TorusLattice;

/// Generator `L f(x) = sum_y omega(x, y) (f(y) - f(x))` as a dense matrix.
pub fn dense_generator(env: &Environment) -> DMatrix<f64> {
    let lat = env.lattice();
    let n = lat.num_vertices();
    let mut m = DMatrix::zeros(n, n);
    for x in 0..n {
        for i in 0..lat.dim() {
            let y = lat.forward(x, i);
            let w = env.conductance(x, i);
            m[(x, y)] += w;
            m[(y, x)] += w;
            m[(x, x)] -= w;
            m[(y, y)] -= w;
        }
    }
    m
}

/// Mean-zero solution of `-L u = rhs` for mean-zero `rhs`, via the
/// nonsingular matrix `-L + 11^T / N`.
pub fn dense_solve_mean_zero(env: &Environment, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let a = -dense_generator(env) + DMatrix::from_element(n, n, 1.0 / n as f64);
    let u = a
        .lu()
        .solve(&DVector::from_column_slice(rhs))
        .expect("nonsingular");
    u.iter().copied().collect()
}

/// `-div*(omega e_i)(x) = omega(x, i) - omega(x - e_i, i)`.
pub fn dense_corrector(env: &Environment, i: usize) -> Vec<f64> {
    let lat = env.lattice();
    let rhs: Vec<f64> = (0..lat.num_vertices())
        .map(|x| env.conductance(x, i) - env.conductance(lat.backward(x, i), i))
        .collect();
    dense_solve_mean_zero(env, &rhs)
}

pub fn dense_green(env: &Environment, source: usize) -> Vec<f64> {
    let n = env.lattice().num_vertices();
    let mut rhs = vec![-1.0 / n as f64; n];
    rhs[source] += 1.0;
    dense_solve_mean_zero(env, &rhs)
}

/// `exp(t L) delta_base` by the dense matrix exponential.
pub fn dense_heat_kernel(env: &Environment, base: usize, t: f64) -> Vec<f64> {
    let k = (dense_generator(env) * t).exp();
    k.column(base).iter().copied().collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn lattice(d: usize, side: usize) -> TorusLattice {
    TorusLattice::new(d, side).unwrap()
}

/// Conductances alternating `a, b` along a ring of even length.
pub fn alternating_ring(side: usize, a: f64, b: f64) -> Environment {
    let lat = lattice(1, side);
    let values = (0..side).map(|x| if x % 2 == 0 { a } else { b }).collect();
    let omega = rcm_lab::lattice::EdgeField::from_values(&lat, 1, values).unwrap();
    Environment::from_conductances(omega).unwrap()
}
