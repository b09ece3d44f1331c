//! Gradient interface (Ginzburg-Landau) heights sampled by unadjusted Langevin
//! dynamics, and the conductances they induce.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::lattice::{divergence_into, gradient_into, TorusLattice, VertexField};
use crate::numeric;
use crate::seed::counter_normal;

/// Even, strictly convex nearest-neighbour potential `V`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    /// `V(x) = k x^2 / 2`; the field is a discrete Gaussian free field.
    Quadratic { stiffness: f64 },
    /// `V(x) = k x^2 / 2 + a log cosh x`, so `V'' = k + a sech^2 x`.
    LogCosh { stiffness: f64, anharmonic: f64 },
}

impl Potential {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.convexity_bounds();
        ensure(lo > 0.0 && hi.is_finite(), || {
            format!("potential {self:?} is not uniformly convex (V'' in [{lo}, {hi}])")
        })
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Potential::Quadratic { stiffness } => 0.5 * stiffness * x * x,
            Potential::LogCosh {
                stiffness,
                anharmonic,
            } => 0.5 * stiffness * x * x + anharmonic * log_cosh(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Potential::Quadratic { stiffness } => stiffness * x,
            Potential::LogCosh {
                stiffness,
                anharmonic,
            } => stiffness * x + anharmonic * x.tanh(),
        }
    }

    /// `(c_-, c_+)` with `c_- <= V'' <= c_+`.
    pub fn convexity_bounds(&self) -> (f64, f64) {
        match *self {
            Potential::Quadratic { stiffness } => (stiffness, stiffness),
            Potential::LogCosh {
                stiffness,
                anharmonic,
            } => (
                stiffness.min(stiffness + anharmonic),
                stiffness.max(stiffness + anharmonic),
            ),
        }
    }
}

fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// `lambda(x) = base + slope * min(|x|, cap)`: positive, even and Lipschitz
/// with constant `slope`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaMap {
    pub base: f64,
    pub slope: f64,
    pub cap: f64,
}

impl LambdaMap {
    pub fn constant(value: f64) -> Self {
        Self {
            base: value,
            slope: 0.0,
            cap: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.base > 0.0, || {
            format!("lambda base must be > 0, got {}", self.base)
        })?;
        ensure(self.slope >= 0.0, || {
            format!("lambda slope must be >= 0, got {}", self.slope)
        })?;
        ensure(self.cap > 0.0, || {
            format!("lambda cap must be > 0, got {}", self.cap)
        })
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.base + self.slope * x.abs().min(self.cap)
    }

    pub fn lipschitz(&self) -> f64 {
        self.slope
    }
}

/// One sample of the interface heights.
#[derive(Clone, Debug)]
pub struct InterfaceField {
    pub heights: VertexField,
    pub potential: Potential,
    pub c_minus: f64,
    pub c_plus: f64,
    pub n_steps: u64,
    pub step_size: f64,
}

impl InterfaceField {
    /// `sum_e V(grad phi(e))`.
    pub fn energy(&self) -> f64 {
        hamiltonian(
            self.heights.lattice(),
            &self.potential,
            self.heights.values(),
        )
    }
}

pub fn hamiltonian(lat: &TorusLattice, potential: &Potential, heights: &[f64]) -> f64 {
    let mut grad = vec![0.0; lat.num_edges()];
    gradient_into(lat, heights, &mut grad);
    numeric::sum(grad.iter().map(|&g| potential.value(g)))
}

pub fn default_step_size(lat: &TorusLattice, potential: &Potential) -> f64 {
    0.5 / (2.0 * lat.dim() as f64 * potential.convexity_bounds().1)
}

pub fn default_steps(lat: &TorusLattice) -> u64 {
    10_000 * lat.num_vertices() as u64
}

/// Unadjusted Langevin sampler started from the flat interface. Each step is
/// `phi <- phi - h div*(V'(grad phi)) + sqrt(2h) xi` followed by pinning the
/// mean to zero.
pub fn sample_gl_field(
    lat: &TorusLattice,
    potential: &Potential,
    n_steps: u64,
    step_size: f64,
    seed: u64,
) -> Result<InterfaceField> {
    sample_gl_field_shifted(
        lat,
        potential,
        n_steps,
        step_size,
        seed,
        &vec![0; lat.dim()],
    )
}

/// As [`sample_gl_field`], with the noise at vertex `x` read from the stream
/// position of `x + shift`. The result equals the unshifted sample translated
/// by `shift`.
pub fn sample_gl_field_shifted(
    lat: &TorusLattice,
    potential: &Potential,
    n_steps: u64,
    step_size: f64,
    seed: u64,
    shift: &[i64],
) -> Result<InterfaceField> {
    potential.validate()?;
    ensure(shift.len() == lat.dim(), || {
        "shift must have one entry per dimension".into()
    })?;
    let (c_minus, c_plus) = potential.convexity_bounds();
    let limit = 2.0 / (2.0 * lat.dim() as f64 * c_plus);
    ensure(step_size > 0.0 && step_size < limit, || {
        format!("step size must lie in (0, {limit}) for stability, got {step_size}")
    })?;

    let n = lat.num_vertices();
    let site_ids: Vec<u64> = (0..n).map(|x| lat.translate(x, shift) as u64).collect();
    let mut phi = vec![0.0; n];
    let mut grad = vec![0.0; lat.num_edges()];
    let mut div = vec![0.0; n];
    let noise_scale = (2.0 * step_size).sqrt();
    for step in 0..n_steps {
        gradient_into(lat, &phi, &mut grad);
        for g in grad.iter_mut() {
            *g = potential.derivative(*g);
        }
        divergence_into(lat, &grad, &mut div);
        for x in 0..n {
            phi[x] += -step_size * div[x] + noise_scale * counter_normal(seed, step, site_ids[x]);
        }
        numeric::project_mean_zero(&mut phi);
    }

    Ok(InterfaceField {
        heights: VertexField::from_values(lat, 1, phi)?,
        potential: *potential,
        c_minus,
        c_plus,
        n_steps,
        step_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_convex_potentials_are_rejected() {
        let lat = TorusLattice::new(1, 8).unwrap();
        let bad = Potential::LogCosh {
            stiffness: 1.0,
            anharmonic: -1.5,
        };
        assert!(sample_gl_field(&lat, &bad, 10, 0.01, 1).is_err());
        let q = Potential::Quadratic { stiffness: 1.0 };
        assert!(sample_gl_field(&lat, &q, 10, 2.0, 1).is_err());
    }

    #[test]
    fn tiny_steps_keep_the_initial_field() {
        let lat = TorusLattice::new(2, 6).unwrap();
        let q = Potential::Quadratic { stiffness: 1.0 };
        let f = sample_gl_field(&lat, &q, 50, 1e-16, 3).unwrap();
        assert!(f.heights.max_abs() < 1e-6);
    }

    #[test]
    fn energy_ignores_global_shift() {
        let lat = TorusLattice::new(2, 6).unwrap();
        let v = Potential::LogCosh {
            stiffness: 1.0,
            anharmonic: 0.5,
        };
        let f = sample_gl_field(&lat, &v, 200, 0.05, 5).unwrap();
        let shifted: Vec<f64> = f.heights.values().iter().map(|h| h + 3.7).collect();
        let e0 = f.energy();
        let e1 = hamiltonian(&lat, &v, &shifted);
        assert!((e0 - e1).abs() <= 1e-12 * e0.abs().max(1.0));
    }

    #[test]
    fn log_cosh_is_stable_for_large_arguments() {
        assert!((log_cosh(800.0) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-9);
        assert!((log_cosh(0.3) - 0.3f64.cosh().ln()).abs() < 1e-15);
    }
}
