//! Generator, correctors, flux correctors, homogenized matrix, the
//! divergence-form representation of the carré du champ and Green functions.
//!
//! Conventions: `phi` stores one channel per direction `i`; the flux
//! corrector stores channel `(i * d + k) * d + l` for `sigma_{ikl}`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::Environment;
use crate::error::{ensure, Error, Result};
use crate::fieldio;
use crate::lattice::{divergence_into, gradient_into, EdgeField, TorusLattice, VertexField};
use crate::numeric::{self, CompensatedSum};
use crate::parabolic::carre_du_champ_field;
use crate::solver::{solve_mean_zero, SolveStats, SolverConfig, WeightedLaplacian};
use crate::stats::{loglog_fit, RateFit};

/// `(L f)(x) = sum_y omega(x, y) (f(y) - f(x))`.
pub fn apply_generator(env: &Environment, f: &VertexField) -> Result<VertexField> {
    let lat = env.lattice();
    f.expect_lattice(lat)?;
    ensure(f.channels() == 1, || {
        "generator acts on single-channel fields".into()
    })?;
    let d = lat.dim();
    let v = f.values();
    Ok(VertexField::from_fn(lat, |x| {
        let mut acc = 0.0;
        for i in 0..d {
            let up = lat.forward(x, i);
            let down = lat.backward(x, i);
            acc += env.conductance(x, i) * (v[up] - v[x]);
            acc += env.conductance(down, i) * (v[down] - v[x]);
        }
        acc
    }))
}

/// `-div*(omega grad f)`, the same operator through the edge calculus.
pub fn apply_generator_divergence_form(env: &Environment, f: &VertexField) -> Result<VertexField> {
    let lat = env.lattice();
    f.expect_lattice(lat)?;
    ensure(f.channels() == 1, || {
        "generator acts on single-channel fields".into()
    })?;
    let mut grad = vec![0.0; lat.num_edges()];
    gradient_into(lat, f.values(), &mut grad);
    for (g, w) in grad.iter_mut().zip(env.conductances().values()) {
        *g *= w;
    }
    let mut out = vec![0.0; lat.num_vertices()];
    divergence_into(lat, &grad, &mut out);
    out.iter_mut().for_each(|v| *v = -*v);
    VertexField::from_values(lat, 1, out)
}

/// Small dense row-major square matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    dim: usize,
    entries: Vec<f64>,
}

impl Matrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        ensure(rows.iter().all(|r| r.len() == dim), || {
            "matrix rows must be square".into()
        })?;
        Ok(Self {
            dim,
            entries: rows.concat(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.dim + j] = v;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// `xi . M xi`.
    pub fn quadratic_form(&self, xi: &[f64]) -> f64 {
        let mut acc = CompensatedSum::new();
        for i in 0..self.dim {
            for j in 0..self.dim {
                acc.add(xi[i] * self.get(i, j) * xi[j]);
            }
        }
        acc.value()
    }

    pub fn apply(&self, xi: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| numeric::dot(&self.entries[i * self.dim..(i + 1) * self.dim], xi))
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn mean_of(ms: &[Matrix]) -> Result<Matrix> {
        let first = ms
            .first()
            .ok_or_else(|| Error::InvalidParameter("mean of no matrices".into()))?;
        let dim = first.dim;
        let entries = (0..dim * dim)
            .map(|k| numeric::mean(&ms.iter().map(|m| m.entries[k]).collect::<Vec<_>>()))
            .collect();
        Ok(Matrix { dim, entries })
    }
}

/// Right-hand side `-div*(omega xi)` of the corrector equation.
pub fn corrector_rhs(env: &Environment, xi: &[f64]) -> Vec<f64> {
    let lat = env.lattice();
    let d = lat.dim();
    let flux: Vec<f64> = env
        .conductances()
        .values()
        .iter()
        .enumerate()
        .map(|(e, w)| w * xi[e % d])
        .collect();
    let mut out = vec![0.0; lat.num_vertices()];
    divergence_into(lat, &flux, &mut out);
    out.iter_mut().for_each(|v| *v = -*v);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrectorSolve {
    pub phi: VertexField,
    /// `||div* omega (grad phi + xi)|| / ||div* (omega xi)||`.
    pub stats: SolveStats,
}

/// Mean-zero `phi_xi` with `div* omega (grad phi_xi + xi) = 0`.
pub fn solve_corrector_direction(
    env: &Environment,
    xi: &[f64],
    cfg: &SolverConfig,
) -> Result<CorrectorSolve> {
    cfg.validate()?;
    let lat = env.lattice();
    ensure(xi.len() == lat.dim(), || {
        format!(
            "direction has {} entries, lattice dimension is {}",
            xi.len(),
            lat.dim()
        )
    })?;
    let op = WeightedLaplacian::new(lat, Some(env.conductances().values()));
    let (phi, stats) = solve_mean_zero(&op, &corrector_rhs(env, xi), cfg);
    Ok(CorrectorSolve {
        phi: VertexField::from_values(lat, 1, phi)?,
        stats,
    })
}

pub fn solve_corrector(env: &Environment, i: usize, cfg: &SolverConfig) -> Result<CorrectorSolve> {
    let d = env.lattice().dim();
    ensure(i < d, || format!("direction {i} out of range for d = {d}"))?;
    solve_corrector_direction(env, &unit(d, i), cfg)
}

pub(crate) fn unit(d: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[i] = 1.0;
    e
}

/// Both homogenized-matrix estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomogenizedMatrix {
    /// Torus average of the flux: column `i` is `avg omega (grad phi_i + e_i)`.
    pub flux: Matrix,
    /// Energy form `avg (grad phi_j + e_j) . omega (grad phi_i + e_i)`.
    pub energy: Matrix,
    pub discrepancy: f64,
}

impl HomogenizedMatrix {
    /// `sigma_xi^2 = 2 xi . B xi`.
    pub fn sigma_sq(&self, xi: &[f64]) -> f64 {
        2.0 * self.energy.quadratic_form(xi)
    }
}

/// Estimates the homogenized matrix from a `d`-channel corrector.
pub fn homogenized_matrix(env: &Environment, phi: &VertexField) -> Result<HomogenizedMatrix> {
    let lat = env.lattice();
    phi.expect_lattice(lat)?;
    let d = lat.dim();
    ensure(phi.channels() == d, || {
        format!("corrector needs {d} channels, got {}", phi.channels())
    })?;
    let n = lat.num_vertices() as f64;
    let grads = corrector_gradients(lat, phi);
    let omega = env.conductances().values();
    let mut flux = Matrix::zeros(d);
    let mut energy = Matrix::zeros(d);
    for i in 0..d {
        for k in 0..d {
            let s = numeric::sum((0..lat.num_vertices()).map(|x| {
                let e = x * d + k;
                omega[e] * (grads[i][e] + delta(i, k))
            }));
            flux.set(k, i, s / n);
        }
        for j in 0..d {
            let s = numeric::sum((0..lat.num_edges()).map(|e| {
                let k = e % d;
                (grads[j][e] + delta(j, k)) * omega[e] * (grads[i][e] + delta(i, k))
            }));
            energy.set(i, j, s / n);
        }
    }
    let discrepancy = flux.max_abs_diff(&energy);
    Ok(HomogenizedMatrix {
        flux,
        energy,
        discrepancy,
    })
}

fn delta(i: usize, k: usize) -> f64 {
    if i == k {
        1.0
    } else {
        0.0
    }
}

fn corrector_gradients(lat: &TorusLattice, phi: &VertexField) -> Vec<Vec<f64>> {
    (0..phi.channels())
        .map(|i| {
            let mut g = vec![0.0; lat.num_edges()];
            gradient_into(lat, phi.channel(i), &mut g);
            g
        })
        .collect()
}

/// `q_i = omega (grad phi_i + e_i) - omega_hom e_i`, one channel per `i`.
pub fn flux(env: &Environment, phi: &VertexField, omega_hom: &Matrix) -> Result<EdgeField> {
    let lat = env.lattice();
    phi.expect_lattice(lat)?;
    let d = lat.dim();
    ensure(phi.channels() == d && omega_hom.dim() == d, || {
        "flux needs d corrector channels and a d x d matrix".into()
    })?;
    let grads = corrector_gradients(lat, phi);
    let omega = env.conductances().values();
    let mut values = Vec::with_capacity(d * lat.num_edges());
    for (i, g) in grads.iter().enumerate() {
        values.extend((0..lat.num_edges()).map(|e| {
            let k = e % d;
            omega[e] * (g[e] + delta(i, k)) - omega_hom.get(k, i)
        }));
    }
    EdgeField::from_values(lat, d, values)
}

/// Skew-symmetric flux corrector with `div* sigma_i = q_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct FluxCorrector {
    sigma: VertexField,
    pub stats: Vec<SolveStats>,
    /// `max |div* sigma_i - q_i|` over all edges and `i`.
    pub divergence_residual: f64,
}

impl FluxCorrector {
    pub fn dim(&self) -> usize {
        self.sigma.lattice().dim()
    }

    pub fn field(&self) -> &VertexField {
        &self.sigma
    }

    pub fn component(&self, i: usize, k: usize, l: usize) -> &[f64] {
        let d = self.dim();
        self.sigma.channel((i * d + k) * d + l)
    }

    /// `sigma_xi = sum_i xi_i sigma_i`, `d^2` channels indexed `k * d + l`.
    pub fn contract(&self, xi: &[f64]) -> VertexField {
        let lat = *self.sigma.lattice();
        let d = self.dim();
        let n = lat.num_vertices();
        let mut out = VertexField::zeros(&lat, d * d);
        for k in 0..d {
            for l in 0..d {
                let ch = out.channel_mut(k * d + l);
                for (i, &w) in xi.iter().enumerate() {
                    if w != 0.0 {
                        let src = &self.sigma.values()[((i * d + k) * d + l) * n..][..n];
                        ch.iter_mut().zip(src).for_each(|(o, s)| *o += w * s);
                    }
                }
            }
        }
        out
    }

    pub fn converged(&self) -> bool {
        self.stats.iter().all(|s| s.converged)
    }
}

/// Solves `div* grad sigma_{ikl} = grad_l q_{ik} - grad_k q_{il}` for `k < l`
/// and mirrors with a sign change, so skew-symmetry holds exactly.
pub fn solve_flux_corrector(
    lat: &TorusLattice,
    q: &EdgeField,
    cfg: &SolverConfig,
) -> Result<FluxCorrector> {
    cfg.validate()?;
    q.expect_lattice(lat)?;
    let d = lat.dim();
    ensure(q.channels() == d, || {
        format!("flux needs {d} channels, got {}", q.channels())
    })?;
    let n = lat.num_vertices();
    let pairs: Vec<(usize, usize, usize)> = (0..d)
        .flat_map(|i| (0..d).flat_map(move |k| (k + 1..d).map(move |l| (i, k, l))))
        .collect();
    let op = WeightedLaplacian::new(lat, None);
    let solved: Vec<(Vec<f64>, SolveStats)> = pairs
        .par_iter()
        .map(|&(i, k, l)| {
            let qc = q.channel(i);
            let rhs: Vec<f64> = (0..n)
                .map(|x| {
                    let dl = qc[lat.forward(x, l) * d + k] - qc[x * d + k];
                    let dk = qc[lat.forward(x, k) * d + l] - qc[x * d + l];
                    dl - dk
                })
                .collect();
            solve_mean_zero(&op, &rhs, cfg)
        })
        .collect();
    let mut sigma = VertexField::zeros(lat, d * d * d);
    let mut stats = Vec::with_capacity(pairs.len());
    for (&(i, k, l), (sol, st)) in pairs.iter().zip(solved) {
        let neg: Vec<f64> = sol.iter().map(|v| -v).collect();
        sigma.channel_mut((i * d + k) * d + l).copy_from_slice(&sol);
        sigma.channel_mut((i * d + l) * d + k).copy_from_slice(&neg);
        stats.push(st);
    }
    let mut fc = FluxCorrector {
        sigma,
        stats,
        divergence_residual: 0.0,
    };
    fc.divergence_residual = sigma_divergence_residual(&fc, q);
    Ok(fc)
}

fn sigma_divergence_residual(fc: &FluxCorrector, q: &EdgeField) -> f64 {
    let lat = *q.lattice();
    let d = lat.dim();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for k in 0..d {
            for x in 0..lat.num_vertices() {
                let div: f64 = (0..d)
                    .map(|l| {
                        let s = fc.component(i, k, l);
                        s[lat.backward(x, l)] - s[x]
                    })
                    .sum();
                worst = worst.max((div - q.at(i, x, k)).abs());
            }
        }
    }
    worst
}

/// The edge field `H` with `g_xi - 2 xi . omega_hom xi = div* H` and the
/// pointwise residual of that identity.
#[derive(Clone, Debug, PartialEq)]
pub struct DivergenceForm {
    pub h: EdgeField,
    /// Carré du champ of the harmonic coordinate `psi_xi`.
    pub g: VertexField,
    pub residual: VertexField,
    pub max_residual: f64,
}

/// With `phi_xi`, `sigma_xi` the `xi`-contractions and `J = omega (xi + grad phi_xi)`:
/// `H_l(x) = omega(x,l) (xi_l + grad_l phi_xi(x))^2 + 2 sum_k sigma_xi,kl(x) xi_k
///          - 2 phi_xi(x + e_l) J_l(x)`.
pub fn divergence_form_h(
    env: &Environment,
    phi: &VertexField,
    sigma: &FluxCorrector,
    xi: &[f64],
    omega_hom: &Matrix,
) -> Result<DivergenceForm> {
    let lat = env.lattice();
    let d = lat.dim();
    phi.expect_lattice(lat)?;
    ensure(
        phi.channels() == d && sigma.dim() == d && xi.len() == d,
        || "inconsistent corrector dimensions".into(),
    )?;
    let phi_xi = contract_phi(phi, xi);
    let sigma_xi = sigma.contract(xi);
    let mut grad = vec![0.0; lat.num_edges()];
    gradient_into(lat, phi_xi.values(), &mut grad);
    let omega = env.conductances().values();
    let n = lat.num_vertices();
    let h: Vec<f64> = (0..lat.num_edges())
        .map(|e| {
            let (x, l) = (e / d, e % d);
            let slope = xi[l] + grad[e];
            let j = omega[e] * slope;
            let st: f64 = (0..d)
                .map(|k| sigma_xi.values()[(k * d + l) * n + x] * xi[k])
                .sum();
            omega[e] * slope * slope + 2.0 * st - 2.0 * phi_xi.get(lat.forward(x, l)) * j
        })
        .collect();
    let mut div_h = vec![0.0; n];
    divergence_into(lat, &h, &mut div_h);
    let g = carre_du_champ_field(env, &phi_xi, xi)?.explicit;
    let level = 2.0 * omega_hom.quadratic_form(xi);
    let residual: Vec<f64> = (0..n).map(|x| g.get(x) - level - div_h[x]).collect();
    let max_residual = numeric::max_abs(&residual);
    Ok(DivergenceForm {
        h: EdgeField::from_values(lat, 1, h)?,
        g,
        residual: VertexField::from_values(lat, 1, residual)?,
        max_residual,
    })
}

/// `phi_xi = sum_i xi_i phi_i`.
pub fn contract_phi(phi: &VertexField, xi: &[f64]) -> VertexField {
    let lat = *phi.lattice();
    let mut out = VertexField::zeros(&lat, 1);
    for (i, &w) in xi.iter().enumerate() {
        if w != 0.0 {
            out.values_mut()
                .iter_mut()
                .zip(phi.channel(i))
                .for_each(|(o, p)| *o += w * p);
        }
    }
    out
}

/// Correctors, fluxes, flux correctors and homogenized matrix of one environment.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectorBundle {
    pub phi: VertexField,
    pub flux: EdgeField,
    pub sigma: FluxCorrector,
    pub omega_hom: HomogenizedMatrix,
    pub corrector_stats: Vec<SolveStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleMetadata {
    pub schema_version: u32,
    pub omega_hom: HomogenizedMatrix,
    pub corrector_stats: Vec<SolveStats>,
    pub sigma_stats: Vec<SolveStats>,
    pub sigma_divergence_residual: f64,
}

const BUNDLE_SCHEMA_VERSION: u32 = 1;

/// The `d` correctors and the homogenized matrix, without the flux corrector.
#[derive(Clone, Debug, PartialEq)]
pub struct Correctors {
    pub phi: VertexField,
    pub omega_hom: HomogenizedMatrix,
    pub stats: Vec<SolveStats>,
}

impl Correctors {
    pub fn max_residual(&self) -> f64 {
        self.stats
            .iter()
            .fold(0.0, |m, s| m.max(s.relative_residual))
    }
}

pub fn solve_correctors(env: &Environment, cfg: &SolverConfig) -> Result<Correctors> {
    let solves: Vec<CorrectorSolve> = (0..env.lattice().dim())
        .into_par_iter()
        .map(|i| solve_corrector(env, i, cfg))
        .collect::<Result<_>>()?;
    let stats = solves.iter().map(|s| s.stats).collect();
    let parts: Vec<VertexField> = solves.into_iter().map(|s| s.phi).collect();
    let phi = VertexField::stack(&parts)?;
    let omega_hom = homogenized_matrix(env, &phi)?;
    Ok(Correctors {
        phi,
        omega_hom,
        stats,
    })
}

impl CorrectorBundle {
    /// Flux uses the flux-average estimator, so each `q_i` has zero mean.
    pub fn solve(env: &Environment, cfg: &SolverConfig) -> Result<Self> {
        let Correctors {
            phi,
            omega_hom,
            stats,
        } = solve_correctors(env, cfg)?;
        let q = flux(env, &phi, &omega_hom.flux)?;
        let sigma = solve_flux_corrector(env.lattice(), &q, cfg)?;
        Ok(Self {
            phi,
            flux: q,
            sigma,
            omega_hom,
            corrector_stats: stats,
        })
    }

    pub fn lattice(&self) -> &TorusLattice {
        self.phi.lattice()
    }

    pub fn phi_xi(&self, xi: &[f64]) -> VertexField {
        contract_phi(&self.phi, xi)
    }

    pub fn converged(&self) -> bool {
        self.corrector_stats.iter().all(|s| s.converged) && self.sigma.converged()
    }

    pub fn max_corrector_residual(&self) -> f64 {
        self.corrector_stats
            .iter()
            .fold(0.0, |m, s| m.max(s.relative_residual))
    }

    /// Writes `phi.rcmf`, `flux.rcmf`, `sigma.rcmf` and `metadata.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        fieldio::write_vertex_field(&dir.join("phi.rcmf"), &self.phi)?;
        fieldio::write_edge_field(&dir.join("flux.rcmf"), &self.flux)?;
        fieldio::write_vertex_field(&dir.join("sigma.rcmf"), &self.sigma.sigma)?;
        let meta = BundleMetadata {
            schema_version: BUNDLE_SCHEMA_VERSION,
            omega_hom: self.omega_hom.clone(),
            corrector_stats: self.corrector_stats.clone(),
            sigma_stats: self.sigma.stats.clone(),
            sigma_divergence_residual: self.sigma.divergence_residual,
        };
        let path = dir.join("metadata.json");
        std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let phi = fieldio::read_field(&dir.join("phi.rcmf"))?.into_vertex()?;
        let q = fieldio::read_field(&dir.join("flux.rcmf"))?.into_edge()?;
        let sigma = fieldio::read_field(&dir.join("sigma.rcmf"))?.into_vertex()?;
        let path = dir.join("metadata.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: BundleMetadata = serde_json::from_str(&text)?;
        let d = phi.lattice().dim();
        ensure(
            phi.channels() == d && q.channels() == d && sigma.channels() == d * d * d,
            || "bundle fields have inconsistent channel counts".into(),
        )?;
        Ok(Self {
            phi,
            flux: q,
            sigma: FluxCorrector {
                sigma,
                stats: meta.sigma_stats,
                divergence_residual: meta.sigma_divergence_residual,
            },
            omega_hom: meta.omega_hom,
            corrector_stats: meta.corrector_stats,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GreenFunction {
    pub source: usize,
    /// Mean-zero solution of `div* omega grad G = delta_source - 1/N`.
    pub g: VertexField,
    pub stats: SolveStats,
}

pub fn green_function(
    env: &Environment,
    source: usize,
    cfg: &SolverConfig,
) -> Result<GreenFunction> {
    cfg.validate()?;
    let lat = env.lattice();
    ensure(source < lat.num_vertices(), || {
        format!("source {source} out of range")
    })?;
    let n = lat.num_vertices();
    let mut rhs = vec![-1.0 / n as f64; n];
    rhs[source] += 1.0;
    let op = WeightedLaplacian::new(lat, Some(env.conductances().values()));
    let (g, stats) = solve_mean_zero(&op, &rhs, cfg);
    Ok(GreenFunction {
        source,
        g: VertexField::from_values(lat, 1, g)?,
        stats,
    })
}

/// Green functions for every source in `sources`, in order.
pub fn green_kernel(
    env: &Environment,
    sources: &[usize],
    cfg: &SolverConfig,
) -> Result<Vec<GreenFunction>> {
    sources
        .par_iter()
        .map(|&s| green_function(env, s, cfg))
        .collect()
}

/// Moments of `|grad G(x, y)|` and `|grad grad G(x, y)|` binned by `|x - y|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenDecayProfile {
    pub order: f64,
    pub radii: Vec<usize>,
    /// `E[|grad_x G(x, y)|^n]^{1/n}` per radius.
    pub gradient: Vec<f64>,
    /// `E[|grad_x grad_y G(x, y)|^n]^{1/n}` per radius.
    pub mixed: Vec<f64>,
    pub counts: Vec<usize>,
    pub max_relative_residual: f64,
}

/// Pools over environments and base points `y`; with `all_sources` every
/// vertex is a base point (`N` solves), otherwise only the origin.
pub fn green_decay_profile(
    envs: &[Environment],
    order: f64,
    cfg: &SolverConfig,
    all_sources: bool,
) -> Result<GreenDecayProfile> {
    ensure(order > 0.0, || {
        format!("moment order must be > 0, got {order}")
    })?;
    let lat = *envs
        .first()
        .ok_or_else(|| Error::InvalidParameter("no environments".into()))?
        .lattice();
    let d = lat.dim();
    let r_max = lat.side() / 4;
    let n = lat.num_vertices();
    let bases: Vec<usize> = if all_sources {
        (0..n).collect()
    } else {
        vec![0]
    };
    let mut grad_acc = vec![CompensatedSum::new(); r_max + 1];
    let mut mixed_acc = vec![CompensatedSum::new(); r_max + 1];
    let mut counts = vec![0usize; r_max + 1];
    let mut worst: f64 = 0.0;
    for env in envs {
        ensure(env.lattice() == &lat, || {
            "environments live on different lattices".into()
        })?;
        let sources: Vec<usize> = if all_sources {
            (0..n).collect()
        } else {
            std::iter::once(0)
                .chain((0..d).map(|j| lat.forward(0, j)))
                .collect()
        };
        let kernel = green_kernel(env, &sources, cfg)?;
        let column = |y: usize| -> &[f64] {
            let k = if all_sources {
                y
            } else {
                sources.iter().position(|&s| s == y).unwrap_or(0)
            };
            kernel[k].g.values()
        };
        worst = kernel
            .iter()
            .fold(worst, |m, g| m.max(g.stats.relative_residual));
        for &y in &bases {
            let gy = column(y);
            for x in 0..n {
                let r = lat.torus_distance(x, y);
                if r > r_max {
                    continue;
                }
                let mut grad_sq = 0.0;
                let mut mixed_sq = 0.0;
                for i in 0..d {
                    let xi = lat.forward(x, i);
                    grad_sq += (gy[xi] - gy[x]).powi(2);
                    for j in 0..d {
                        let gyj = column(lat.forward(y, j));
                        let m = gyj[xi] - gyj[x] - gy[xi] + gy[x];
                        mixed_sq += m * m;
                    }
                }
                grad_acc[r].add(grad_sq.powf(order / 2.0));
                mixed_acc[r].add(mixed_sq.powf(order / 2.0));
                counts[r] += 1;
            }
        }
    }
    let finish = |acc: &[CompensatedSum]| -> Vec<f64> {
        acc.iter()
            .zip(&counts)
            .map(|(a, &c)| (a.value() / c as f64).powf(1.0 / order))
            .collect()
    };
    Ok(GreenDecayProfile {
        order,
        radii: (0..=r_max).collect(),
        gradient: finish(&grad_acc),
        mixed: finish(&mixed_acc),
        counts,
        max_relative_residual: worst,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthField {
    Phi,
    Sigma,
}

/// `E[|f(y + x) - f(y)|^p]^{1/p}` against `|x|`, pooled over base points
/// `y` and bundles, with a log-log growth exponent over radii `>= 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthProfile {
    pub field: GrowthField,
    pub direction: usize,
    pub exponent: f64,
    pub radii: Vec<usize>,
    pub moments: Vec<f64>,
    pub fit: Option<RateFit>,
}

pub fn corrector_growth_profile(
    bundles: &[CorrectorBundle],
    field: GrowthField,
    direction: usize,
    exponent: f64,
) -> Result<GrowthProfile> {
    ensure(exponent > 0.0, || {
        format!("exponent must be > 0, got {exponent}")
    })?;
    let lat = *bundles
        .first()
        .ok_or_else(|| Error::InvalidParameter("no corrector bundles".into()))?
        .lattice();
    let d = lat.dim();
    ensure(direction < d, || {
        format!("direction {direction} out of range")
    })?;
    let r_max = lat.side() / 4;
    ensure(r_max >= 2, || {
        format!("need at least 2 radii, side {} gives {r_max}", lat.side())
    })?;
    let n = lat.num_vertices();
    // offsets grouped by radius, shared across base points
    let offsets: Vec<(usize, Vec<i64>)> = (0..n)
        .filter_map(|x| {
            let r = lat.torus_norm(x);
            (r <= r_max).then(|| (r, lat.minimal_offset(x)))
        })
        .collect();
    let mut acc = vec![CompensatedSum::new(); r_max + 1];
    let mut counts = vec![0usize; r_max + 1];
    for b in bundles {
        ensure(b.lattice() == &lat, || {
            "bundles live on different lattices".into()
        })?;
        let channels: Vec<&[f64]> = match field {
            GrowthField::Phi => vec![b.phi.channel(direction)],
            GrowthField::Sigma => (0..d * d)
                .map(|kl| b.sigma.field().channel(direction * d * d + kl))
                .collect(),
        };
        for y in 0..n {
            for (r, off) in &offsets {
                let x = lat.translate(y, off);
                let sq: f64 = channels.iter().map(|c| (c[x] - c[y]).powi(2)).sum();
                acc[*r].add(sq.powf(exponent / 2.0));
                counts[*r] += 1;
            }
        }
    }
    let moments: Vec<f64> = acc
        .iter()
        .zip(&counts)
        .map(|(a, &c)| (a.value() / c as f64).powf(1.0 / exponent))
        .collect();
    let radii: Vec<usize> = (0..=r_max).collect();
    let fit = if moments[1..].iter().all(|&m| m > 0.0) {
        let xs: Vec<f64> = radii[1..].iter().map(|&r| r as f64).collect();
        Some(loglog_fit(&xs, &moments[1..])?)
    } else {
        None
    };
    Ok(GrowthProfile {
        field,
        direction,
        exponent,
        radii,
        moments,
        fit,
    })
}
