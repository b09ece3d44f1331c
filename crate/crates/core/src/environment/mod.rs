//! Conductance fields and the laws they are drawn from.

mod interface;

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use interface::{
    default_step_size, default_steps, hamiltonian, sample_gl_field, sample_gl_field_shifted,
    InterfaceField, LambdaMap, Potential,
};

use crate::error::{ensure, Error, Result};
use crate::fieldio;
use crate::lattice::{gradient, EdgeField, TorusLattice};
use crate::numeric::{self, CompensatedSum};
use crate::seed::{derive_seed, rng_from_seed, SeedSequence};

pub const METADATA_SCHEMA_VERSION: u32 = 1;

/// Law of the conductance field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentLaw {
    /// I.i.d. uniform on `[1/c, c]`; `c = 1` gives constant unit conductances.
    UniformElliptic { c: f64 },
    /// I.i.d.: with probability 1/2 `U^{1/q_tail}`, otherwise `U^{-1/p_tail}`.
    /// `E[w^p] < inf` iff `p < p_tail`, `E[w^-q] < inf` iff `q < q_tail`.
    IidDegenerate { p_tail: f64, q_tail: f64 },
    /// I.i.d. `exp(s Z)` with `Z` standard normal.
    IidLognormal { s: f64 },
    /// I.i.d. `high` with probability `p_high`, else `low`.
    IidTwoPoint { low: f64, high: f64, p_high: f64 },
    /// `w(e) = lambda(grad phi(e))` for a gradient interface sample `phi`.
    GlInterface {
        potential: Potential,
        lambda: LambdaMap,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_steps: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_size: Option<f64>,
    },
}

impl EnvironmentLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EnvironmentLaw::UniformElliptic { c } => ensure(c >= 1.0 && c.is_finite(), || {
                format!("ellipticity c must be >= 1, got {c}")
            }),
            EnvironmentLaw::IidDegenerate { p_tail, q_tail } => ensure(
                p_tail > 0.0 && q_tail > 0.0 && p_tail.is_finite() && q_tail.is_finite(),
                || format!("tail exponents must be positive, got ({p_tail}, {q_tail})"),
            ),
            EnvironmentLaw::IidLognormal { s } => ensure(s > 0.0 && s.is_finite(), || {
                format!("lognormal s must be > 0, got {s}")
            }),
            EnvironmentLaw::IidTwoPoint { low, high, p_high } => ensure(
                low > 0.0 && high > 0.0 && (0.0..=1.0).contains(&p_high),
                || {
                    format!("two-point law needs positive values and p in [0,1], got ({low}, {high}, {p_high})")
                },
            ),
            EnvironmentLaw::GlInterface {
                potential,
                lambda,
                n_steps,
                step_size,
            } => {
                potential.validate()?;
                lambda.validate()?;
                ensure(n_steps != Some(0), || "n_steps must be positive".into())?;
                ensure(step_size.is_none_or(|h| h > 0.0), || {
                    "step_size must be positive".into()
                })
            }
        }
    }

    /// True when edges are independent, identically distributed.
    pub fn is_product(&self) -> bool {
        !matches!(self, EnvironmentLaw::GlInterface { .. })
    }

    /// Short tag recorded in metadata.
    pub fn tag(&self) -> String {
        match self {
            EnvironmentLaw::UniformElliptic { c } => format!("uniform_elliptic(c={c})"),
            EnvironmentLaw::IidDegenerate { p_tail, q_tail } => {
                format!("iid_degenerate(p_tail={p_tail},q_tail={q_tail})")
            }
            EnvironmentLaw::IidLognormal { s } => format!("iid_lognormal(s={s})"),
            EnvironmentLaw::IidTwoPoint { low, high, p_high } => {
                format!("iid_two_point({low},{high},p={p_high})")
            }
            EnvironmentLaw::GlInterface {
                potential, lambda, ..
            } => {
                format!("gl_interface({potential:?},{lambda:?})")
            }
        }
    }

    /// One draw from the single-edge marginal of a product law.
    pub fn sample_edge<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<f64> {
        let v = match *self {
            EnvironmentLaw::UniformElliptic { c } => {
                let lo = 1.0 / c;
                lo + (c - lo) * rng.gen::<f64>()
            }
            EnvironmentLaw::IidDegenerate { p_tail, q_tail } => {
                let lower = rng.gen_bool(0.5);
                let u = 1.0 - rng.gen::<f64>();
                if lower {
                    u.powf(1.0 / q_tail)
                } else {
                    u.powf(-1.0 / p_tail)
                }
            }
            EnvironmentLaw::IidLognormal { s } => {
                let z: f64 = rng.sample(StandardNormal);
                (s * z).exp()
            }
            EnvironmentLaw::IidTwoPoint { low, high, p_high } => {
                if rng.gen_bool(p_high) {
                    high
                } else {
                    low
                }
            }
            EnvironmentLaw::GlInterface { .. } => return None,
        };
        Some(v)
    }
}

/// Strictly positive conductances on the canonical edges of a torus.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    omega: EdgeField,
    law: Option<EnvironmentLaw>,
    seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentMetadata {
    pub schema_version: u32,
    pub law: Option<EnvironmentLaw>,
    pub seed: Option<u64>,
}

impl Environment {
    /// Wraps explicit conductances; every entry must be positive and finite.
    pub fn from_conductances(omega: EdgeField) -> Result<Self> {
        ensure(omega.channels() == 1, || {
            "conductances are single-channel".into()
        })?;
        if let Some(e) = omega
            .values()
            .iter()
            .position(|&w| !(w > 0.0 && w.is_finite()))
        {
            return Err(Error::InvalidParameter(format!(
                "conductance on edge {e} is {} (must be positive and finite)",
                omega.values()[e]
            )));
        }
        Ok(Self {
            omega,
            law: None,
            seed: None,
        })
    }

    pub fn constant(lat: &TorusLattice, value: f64) -> Result<Self> {
        Self::from_conductances(EdgeField::constant(lat, value))
    }

    pub fn lattice(&self) -> &TorusLattice {
        self.omega.lattice()
    }

    pub fn conductances(&self) -> &EdgeField {
        &self.omega
    }

    pub fn law(&self) -> Option<&EnvironmentLaw> {
        self.law.as_ref()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// `omega(x, x + e_i)`.
    #[inline]
    pub fn conductance(&self, x: usize, i: usize) -> f64 {
        self.omega.get(x, i)
    }

    /// `mu(x) = sum_y omega(x, y)`.
    pub fn mu(&self, x: usize) -> f64 {
        let lat = self.lattice();
        (0..lat.dim())
            .map(|i| self.omega.get(x, i) + self.omega.get(lat.backward(x, i), i))
            .sum()
    }

    pub fn max_mu(&self) -> f64 {
        (0..self.lattice().num_vertices())
            .map(|x| self.mu(x))
            .fold(0.0, f64::max)
    }

    /// Copy with edge `e` set to `value`.
    pub fn with_edge(&self, e: usize, value: f64) -> Result<Self> {
        ensure(value > 0.0 && value.is_finite(), || {
            format!("conductance must be positive, got {value}")
        })?;
        let mut out = self.clone();
        out.omega.values_mut()[e] = value;
        Ok(out)
    }

    /// Writes `path` in the binary field format and a JSON sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        fieldio::write_edge_field(path, &self.omega)?;
        let meta = EnvironmentMetadata {
            schema_version: METADATA_SCHEMA_VERSION,
            law: self.law.clone(),
            seed: self.seed,
        };
        let side = sidecar_path(path);
        std::fs::write(&side, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let omega = fieldio::read_field(path)?.into_edge()?;
        let side = sidecar_path(path);
        let mut env = Self::from_conductances(omega)?;
        if side.exists() {
            let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let meta: EnvironmentMetadata = serde_json::from_str(&text)?;
            env.law = meta.law;
            env.seed = meta.seed;
        }
        Ok(env)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Draws an environment; a deterministic function of `(law, lattice, seed)`.
pub fn sample_environment(
    law: &EnvironmentLaw,
    lat: &TorusLattice,
    seed: u64,
) -> Result<Environment> {
    law.validate()?;
    let omega = match law {
        EnvironmentLaw::GlInterface {
            potential,
            lambda,
            n_steps,
            step_size,
        } => {
            let h = step_size.unwrap_or_else(|| default_step_size(lat, potential));
            let steps = n_steps.unwrap_or_else(|| default_steps(lat));
            let field =
                sample_gl_field(lat, potential, steps, h, derive_seed(seed, "gl-noise", 0))?;
            let grad = gradient(&field.heights, lat)?;
            let values = grad.values().iter().map(|&g| lambda.value(g)).collect();
            EdgeField::from_values(lat, 1, values)?
        }
        iid => {
            let mut rng = rng_from_seed(seed);
            let values = (0..lat.num_edges())
                .map(|_| iid.sample_edge(&mut rng).expect("product law"))
                .collect();
            EdgeField::from_values(lat, 1, values)?
        }
    };
    let mut env = Environment::from_conductances(omega)?;
    env.law = Some(law.clone());
    env.seed = Some(seed);
    Ok(env)
}

/// Monte Carlo estimate of the moment functional
/// `M(p,q) = sum_i E[w(0,e_i)^p] + E[w(0,e_i)^-q]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub p: f64,
    pub q: f64,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub positive_stderr: Vec<f64>,
    pub negative_stderr: Vec<f64>,
    pub samples: Vec<usize>,
}

impl MomentReport {
    pub fn estimate(&self) -> f64 {
        numeric::sum(self.positive.iter().chain(&self.negative).copied())
    }

    pub fn stderr(&self) -> f64 {
        numeric::sum(
            self.positive_stderr
                .iter()
                .chain(&self.negative_stderr)
                .map(|s| s * s),
        )
        .sqrt()
    }
}

/// Independent environments drawn from one law; environment `k` uses the
/// child seed `(seed, "environment", k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub law: EnvironmentLaw,
    pub lattice: TorusLattice,
    pub n_env: usize,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn new(law: EnvironmentLaw, lattice: TorusLattice, n_env: usize, seed: u64) -> Self {
        Self {
            law,
            lattice,
            n_env,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.law.validate()?;
        ensure(self.n_env >= 1, || {
            "ensemble needs at least one environment".into()
        })
    }

    pub fn environment_seed(&self, k: usize) -> u64 {
        derive_seed(self.seed, "environment", k as u64)
    }

    pub fn environment(&self, k: usize) -> Result<Environment> {
        sample_environment(&self.law, &self.lattice, self.environment_seed(k))
    }

    /// Runs `f` on every environment in parallel; results are in index order.
    pub fn map<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, Environment) -> Result<T> + Sync,
    {
        self.validate()?;
        (0..self.n_env)
            .into_par_iter()
            .map(|k| f(k, self.environment(k)?))
            .collect()
    }
}

pub(crate) fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = numeric::mean(xs);
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let var = numeric::sum(xs.iter().map(|v| (v - m) * (v - m))) / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn moment_report(
    law: &EnvironmentLaw,
    lat: &TorusLattice,
    p: f64,
    q: f64,
    n_samples: usize,
    seed: u64,
) -> Result<MomentReport> {
    law.validate()?;
    ensure(n_samples >= 2, || {
        format!("need at least 2 samples, got {n_samples}")
    })?;
    let seeds = SeedSequence::new(seed);
    let d = lat.dim();
    let per_direction: Vec<Vec<f64>> = if law.is_product() {
        (0..d)
            .map(|i| {
                let mut rng = seeds.rng("moment-direction", i as u64);
                (0..n_samples)
                    .map(|_| law.sample_edge(&mut rng).expect("product law"))
                    .collect()
            })
            .collect()
    } else {
        // stationary law: pool every edge of a direction across fresh samples
        let n_env = n_samples.div_ceil(lat.num_vertices());
        let envs: Vec<Environment> = (0..n_env)
            .into_par_iter()
            .map(|k| sample_environment(law, lat, seeds.child("moment-env", k as u64)))
            .collect::<Result<_>>()?;
        (0..d)
            .map(|i| {
                envs.iter()
                    .flat_map(|env| (0..lat.num_vertices()).map(move |x| env.conductance(x, i)))
                    .take(n_samples)
                    .collect()
            })
            .collect()
    };

    let mut report = MomentReport {
        p,
        q,
        positive: vec![],
        negative: vec![],
        positive_stderr: vec![],
        negative_stderr: vec![],
        samples: vec![],
    };
    for values in &per_direction {
        let pos: Vec<f64> = values.iter().map(|w| w.powf(p)).collect();
        let neg: Vec<f64> = values.iter().map(|w| w.powf(-q)).collect();
        let (mp, sp) = mean_stderr(&pos);
        let (mn, sn) = mean_stderr(&neg);
        report.positive.push(mp);
        report.negative.push(mn);
        report.positive_stderr.push(sp);
        report.negative_stderr.push(sn);
        report.samples.push(values.len());
    }
    Ok(report)
}

/// Result of a finite-difference vertical derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerticalDerivative {
    pub value: f64,
    pub h: f64,
    /// Set when `w(e) - h <= 0` forced a forward difference.
    pub one_sided: bool,
}

pub fn default_vertical_step(omega_e: f64) -> f64 {
    1e-5 * omega_e.max(1.0)
}

/// `(u(w + h d_e) - u(w - h d_e)) / 2h`, falling back to a forward difference
/// when the backward perturbation would leave the positive cone.
pub fn vertical_derivative<U>(
    u: U,
    env: &Environment,
    e: usize,
    h: Option<f64>,
) -> Result<VerticalDerivative>
where
    U: Fn(&Environment) -> f64,
{
    ensure(e < env.lattice().num_edges(), || {
        format!("edge {e} out of range")
    })?;
    let w = env.conductances().values()[e];
    let h = h.unwrap_or_else(|| default_vertical_step(w));
    ensure(h > 0.0 && h.is_finite(), || {
        format!("step must be positive, got {h}")
    })?;
    let plus = u(&env.with_edge(e, w + h)?);
    if w - h > 0.0 {
        let minus = u(&env.with_edge(e, w - h)?);
        Ok(VerticalDerivative {
            value: (plus - minus) / (2.0 * h),
            h,
            one_sided: false,
        })
    } else {
        Ok(VerticalDerivative {
            value: (plus - u(env)) / h,
            h,
            one_sided: true,
        })
    }
}

/// Monte Carlo comparison of `Var(u)` with `sum_e E[(u - E[u|F_e])^2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfronSteinReport {
    pub var_lhs: f64,
    pub sum_rhs: f64,
    pub se_lhs: f64,
    pub se_rhs: f64,
    /// `var_lhs / sum_rhs`; absent when both sides vanish.
    pub ratio: Option<f64>,
    pub se_ratio: Option<f64>,
    pub n_env: usize,
}

/// The conditional variance given all edges but `e` is estimated as
/// `E[(u(w) - u(w'))^2] / 2`, where `w'` redraws edge `e` only.
pub fn efron_stein_check<U>(
    law: &EnvironmentLaw,
    lat: &TorusLattice,
    u: U,
    n_env: usize,
    n_resample: usize,
    seed: u64,
) -> Result<EfronSteinReport>
where
    U: Fn(&Environment) -> f64 + Sync,
{
    law.validate()?;
    if !law.is_product() {
        return Err(Error::InvalidParameter(
            "Efron-Stein resampling requires a product law".into(),
        ));
    }
    ensure(n_env >= 2, || "need at least 2 environments".into())?;
    ensure(n_resample >= 1, || {
        "need at least 1 resample per edge".into()
    })?;
    let seeds = SeedSequence::new(seed);

    let per_env: Vec<(f64, f64)> = (0..n_env)
        .into_par_iter()
        .map(|k| {
            let env = sample_environment(law, lat, seeds.child("es-env", k as u64))?;
            let base = u(&env);
            let mut rng = seeds.rng("es-resample", k as u64);
            let mut scratch = env.clone();
            let mut total = CompensatedSum::new();
            for e in 0..lat.num_edges() {
                let original = env.conductances().values()[e];
                let mut acc = CompensatedSum::new();
                for _ in 0..n_resample {
                    scratch.omega.values_mut()[e] = law.sample_edge(&mut rng).expect("product law");
                    let diff = base - u(&scratch);
                    acc.add(0.5 * diff * diff);
                }
                scratch.omega.values_mut()[e] = original;
                total.add(acc.value() / n_resample as f64);
            }
            Ok((base, total.value()))
        })
        .collect::<Result<_>>()?;

    let us: Vec<f64> = per_env.iter().map(|p| p.0).collect();
    let rhs: Vec<f64> = per_env.iter().map(|p| p.1).collect();
    let n = n_env as f64;
    let mu = numeric::mean(&us);
    let sq: Vec<f64> = us.iter().map(|v| (v - mu) * (v - mu)).collect();
    let var_lhs = numeric::sum(sq.iter().copied()) / (n - 1.0);
    let (_, se_sq) = mean_stderr(&sq);
    let se_lhs = se_sq * n / (n - 1.0);
    let (sum_rhs, se_rhs) = mean_stderr(&rhs);

    let (ratio, se_ratio) = if sum_rhs > 0.0 {
        let r = var_lhs / sum_rhs;
        let rel_l = if var_lhs > 0.0 { se_lhs / var_lhs } else { 0.0 };
        let rel_r = se_rhs / sum_rhs;
        (Some(r), Some(r * (rel_l * rel_l + rel_r * rel_r).sqrt()))
    } else {
        (None, None)
    };
    Ok(EfronSteinReport {
        var_lhs,
        sum_rhs,
        se_lhs,
        se_rhs,
        ratio,
        se_ratio,
        n_env,
    })
}
