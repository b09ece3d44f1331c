//! Variable speed random walks on `Z^d` in a periodized environment, the
//! martingale decomposition along their paths and Berry-Esseen statistics.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elliptic::{contract_phi, solve_correctors, HomogenizedMatrix, Matrix};
use crate::environment::{EnsembleSpec, Environment};
use crate::error::{ensure, Error, Result};
use crate::lattice::{TorusLattice, VertexField};
use crate::numeric::{self, CompensatedSum};
use crate::parabolic::carre_du_champ_field;
use crate::seed::{derive_seed, rng_from_seed, Rng};
use crate::series::{check_times, write_text, DecaySeries};
use crate::solver::SolverConfig;
use crate::stats::{self, dkw_floor, kolmogorov_distance, linear_regression, RateFit};

/// Paths with more jumps abort with a resource error.
pub const MAX_JUMPS: u64 = 100_000_000;

/// Jump powers tracked per checkpoint: `sum |dM|^{2k}` for `k = 1..=4`.
pub const JUMP_POWERS: [i32; 4] = [2, 4, 6, 8];

/// One VSRW trajectory. Positions are offsets in `Z^d` from the vertex
/// `start` of the torus; `positions[0]` is the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkPath {
    pub dim: usize,
    pub start: usize,
    pub t_max: f64,
    pub seed: u64,
    /// Time of the `k`-th jump; `positions[k + 1]` is the position after it.
    pub jump_times: Vec<f64>,
    positions: Vec<i64>,
}

impl WalkPath {
    pub fn num_jumps(&self) -> usize {
        self.jump_times.len()
    }

    pub fn position(&self, k: usize) -> &[i64] {
        &self.positions[k * self.dim..(k + 1) * self.dim]
    }

    /// Index into `position` of the state at time `t`.
    pub fn state_index_at(&self, t: f64) -> usize {
        self.jump_times.partition_point(|&s| s <= t)
    }

    pub fn position_at(&self, t: f64) -> &[i64] {
        self.position(self.state_index_at(t))
    }
}

/// Per-vertex jump tables for a fixed environment and direction.
struct Walker<'a> {
    lat: &'a TorusLattice,
    degree: usize,
    mu: Vec<f64>,
    targets: Vec<usize>,
    rates: Vec<f64>,
    /// `(direction, sign)` per slot.
    moves: Vec<(usize, i64)>,
    /// `xi . (y - x)` per slot.
    step: Vec<f64>,
    /// `psi(y) - psi(x)` per slot.
    increment: Vec<f64>,
    phi: &'a [f64],
    g: &'a [f64],
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// `xi . X_t`.
    pub position: f64,
    /// `xi . M_t`, summed from the jump increments.
    pub martingale: f64,
    /// `xi . chi(X_t) = phi_xi(X_t) - phi_xi(X_0)`.
    pub corrector: f64,
    /// `<xi . M>_t`, summed over holding intervals.
    pub qv: f64,
    pub jump_powers: [f64; 4],
    pub jumps: u64,
}

impl Checkpoint {
    /// `|xi . X_t - (xi . M_t - xi . chi_t)|`.
    pub fn decomposition_residual(&self) -> f64 {
        (self.position - (self.martingale - self.corrector)).abs()
    }
}

impl<'a> Walker<'a> {
    fn new(env: &'a Environment, phi_xi: &'a [f64], g: &'a [f64], xi: &[f64]) -> Self {
        let lat = env.lattice();
        let d = lat.dim();
        let n = lat.num_vertices();
        let degree = 2 * d;
        let mut targets = Vec::with_capacity(n * degree);
        let mut rates = Vec::with_capacity(n * degree);
        let mut moves = Vec::with_capacity(n * degree);
        let mut step = Vec::with_capacity(n * degree);
        let mut increment = Vec::with_capacity(n * degree);
        let mut mu = Vec::with_capacity(n);
        for x in 0..n {
            let mut total = 0.0;
            for i in 0..d {
                let up = lat.forward(x, i);
                let down = lat.backward(x, i);
                for (y, w, sign) in [
                    (up, env.conductance(x, i), 1i64),
                    (down, env.conductance(down, i), -1),
                ] {
                    targets.push(y);
                    rates.push(w);
                    moves.push((i, sign));
                    let s = sign as f64 * xi[i];
                    step.push(s);
                    increment.push(s + phi_xi[y] - phi_xi[x]);
                    total += w;
                }
            }
            mu.push(total);
        }
        Self {
            lat,
            degree,
            mu,
            targets,
            rates,
            moves,
            step,
            increment,
            phi: phi_xi,
            g,
        }
    }

    /// Simulates until the last checkpoint; optionally records the path.
    fn run(
        &self,
        start: usize,
        checkpoints: &[f64],
        rng: &mut Rng,
        mut path: Option<&mut WalkPath>,
    ) -> Result<Vec<Checkpoint>> {
        let d = self.lat.dim();
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut x = start;
        let mut t = 0.0;
        let mut coords = vec![0i64; d];
        let mut pos = CompensatedSum::new();
        let mut mart = CompensatedSum::new();
        let mut qv = CompensatedSum::new();
        let mut powers = [0.0; 4];
        let mut jumps = 0u64;
        let mut next_cp = 0;
        let horizon = checkpoints.last().copied().unwrap_or(0.0);
        loop {
            let hold: f64 = Exp1.sample(rng);
            let hold = hold / self.mu[x];
            let t_next = t + hold;
            while next_cp < checkpoints.len() && checkpoints[next_cp] < t_next {
                let mut q = qv;
                q.add((checkpoints[next_cp] - t) * self.g[x]);
                out.push(Checkpoint {
                    position: pos.value(),
                    martingale: mart.value(),
                    corrector: self.phi[x] - self.phi[start],
                    qv: q.value(),
                    jump_powers: powers,
                    jumps,
                });
                next_cp += 1;
            }
            if next_cp == checkpoints.len() && t_next > horizon {
                break;
            }
            qv.add(hold * self.g[x]);
            t = t_next;
            let mut u = rng.gen::<f64>() * self.mu[x];
            let base = x * self.degree;
            let mut slot = base + self.degree - 1;
            for k in base..base + self.degree {
                if u < self.rates[k] {
                    slot = k;
                    break;
                }
                u -= self.rates[k];
            }
            let (i, sign) = self.moves[slot];
            coords[i] += sign;
            pos.add(self.step[slot]);
            let inc = self.increment[slot];
            mart.add(inc);
            let sq = inc * inc;
            let mut p = sq;
            for slot_power in powers.iter_mut() {
                *slot_power += p;
                p *= sq;
            }
            x = self.targets[slot];
            jumps += 1;
            if jumps > MAX_JUMPS {
                return Err(Error::ResourceLimit(format!(
                    "walk exceeded {MAX_JUMPS} jumps before t = {horizon}"
                )));
            }
            if let Some(p) = path.as_deref_mut() {
                p.jump_times.push(t);
                p.positions.extend_from_slice(&coords);
            }
        }
        Ok(out)
    }
}

/// Simulates one walk from vertex 0 up to `t_max`.
pub fn simulate_vsrw(env: &Environment, t_max: f64, seed: u64) -> Result<WalkPath> {
    simulate_vsrw_from(env, 0, t_max, seed)
}

pub fn simulate_vsrw_from(
    env: &Environment,
    start: usize,
    t_max: f64,
    seed: u64,
) -> Result<WalkPath> {
    ensure(t_max >= 0.0 && t_max.is_finite(), || {
        format!("t_max must be finite and >= 0, got {t_max}")
    })?;
    let lat = env.lattice();
    ensure(start < lat.num_vertices(), || {
        format!("start vertex {start} out of range")
    })?;
    let zeros = vec![0.0; lat.num_vertices()];
    let walker = Walker::new(env, &zeros, &zeros, &vec![0.0; lat.dim()]);
    let mut path = WalkPath {
        dim: lat.dim(),
        start,
        t_max,
        seed,
        jump_times: Vec::new(),
        positions: vec![0; lat.dim()],
    };
    let mut rng = rng_from_seed(seed);
    walker.run(start, &[t_max], &mut rng, Some(&mut path))?;
    Ok(path)
}

/// `psi_xi(x) = xi . x + phi_xi(base + x) - phi_xi(base)` for an offset `x`.
pub fn harmonic_coordinate(phi_xi: &VertexField, xi: &[f64], base: usize, x: &[i64]) -> f64 {
    let lat = phi_xi.lattice();
    let linear: f64 = xi.iter().zip(x).map(|(a, b)| a * *b as f64).sum();
    linear + phi_xi.get(lat.translate(base, x)) - phi_xi.get(base)
}

/// `M_t`, `chi_t` and `<xi . M>_t` at checkpoints along a recorded path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleSeries {
    pub times: Vec<f64>,
    pub position: Vec<f64>,
    pub martingale: Vec<f64>,
    pub corrector: Vec<f64>,
    pub qv: Vec<f64>,
    pub max_decomposition_residual: f64,
}

/// Evaluates `psi` directly at the recorded positions; the quadratic variation
/// integrates the carré du champ over the holding intervals.
pub fn martingale_series(
    path: &WalkPath,
    phi_xi: &VertexField,
    xi: &[f64],
    env: &Environment,
    checkpoints: &[f64],
) -> Result<MartingaleSeries> {
    let lat = env.lattice();
    phi_xi.expect_lattice(lat)?;
    ensure(
        checkpoints.iter().all(|&t| t >= 0.0 && t <= path.t_max),
        || "checkpoints must lie in [0, t_max]".into(),
    )?;
    let g = carre_du_champ_field(env, phi_xi, xi)?.explicit;
    let mut out = MartingaleSeries {
        times: checkpoints.to_vec(),
        position: Vec::new(),
        martingale: Vec::new(),
        corrector: Vec::new(),
        qv: Vec::new(),
        max_decomposition_residual: 0.0,
    };
    for &t in checkpoints {
        let k = path.state_index_at(t);
        let x = path.position(k);
        let linear: f64 = xi.iter().zip(x).map(|(a, b)| a * *b as f64).sum();
        let m = harmonic_coordinate(phi_xi, xi, path.start, x);
        let chi = phi_xi.get(lat.translate(path.start, x)) - phi_xi.get(path.start);
        let mut qv = CompensatedSum::new();
        let mut last = 0.0;
        for j in 0..k {
            let v = lat.translate(path.start, path.position(j));
            qv.add((path.jump_times[j] - last) * g.get(v));
            last = path.jump_times[j];
        }
        qv.add((t - last) * g.get(lat.translate(path.start, x)));
        out.max_decomposition_residual = out
            .max_decomposition_residual
            .max((linear - (m - chi)).abs());
        out.position.push(linear);
        out.martingale.push(m);
        out.corrector.push(chi);
        out.qv.push(qv.value());
    }
    Ok(out)
}

/// Walk ensemble parameters shared by every walk statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkSetup {
    pub xi: Vec<f64>,
    pub times: Vec<f64>,
    pub n_walk: usize,
    /// Start each walk at a uniformly drawn torus vertex instead of 0.
    pub random_start: bool,
}

/// Walks in one environment with its corrector data.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentWalks {
    pub index: usize,
    pub omega_hom: HomogenizedMatrix,
    /// `2 xi . B xi` of this environment.
    pub sigma_sq: f64,
    pub corrector_residual: f64,
    /// `[walk][time]`.
    pub checkpoints: Vec<Vec<Checkpoint>>,
    /// Torus average of `sum_y omega(x, y) |psi(y) - psi(x)|^n`, `n = 2, 4, 6, 8`.
    pub stationary_jump_moments: [f64; 4],
    /// Torus average of `g^2`.
    pub mean_g_sq: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkEnsemble {
    pub setup: WalkSetup,
    pub envs: Vec<EnvironmentWalks>,
    /// Ensemble `sigma_xi^2 = 2 xi . B xi`.
    pub sigma_sq: f64,
    pub omega_hom: Matrix,
}

impl WalkEnsemble {
    /// Independent environments, `n_walk` walks each; walk `w` in environment
    /// `k` uses the child seed `(env seed, "walk", w)`.
    pub fn run(ens: &EnsembleSpec, setup: &WalkSetup, solver: &SolverConfig) -> Result<Self> {
        validate_setup(ens.lattice.dim(), setup)?;
        ensure(ens.n_env * setup.n_walk >= 100, || {
            format!(
                "need at least 100 walks in total, got {}",
                ens.n_env * setup.n_walk
            )
        })?;
        let envs = ens.map(|k, env| walks_in(&env, k, ens.environment_seed(k), setup, solver))?;
        Self::assemble(setup, envs)
    }

    /// All walks in one fixed environment.
    pub fn run_quenched(
        env: &Environment,
        setup: &WalkSetup,
        solver: &SolverConfig,
        seed: u64,
    ) -> Result<Self> {
        validate_setup(env.lattice().dim(), setup)?;
        let walks = walks_in(env, 0, seed, setup, solver)?;
        Self::assemble(setup, vec![walks])
    }

    fn assemble(setup: &WalkSetup, envs: Vec<EnvironmentWalks>) -> Result<Self> {
        let mats: Vec<_> = envs.iter().map(|e| e.omega_hom.energy.clone()).collect();
        let omega_hom = Matrix::mean_of(&mats)?;
        let sigma_sq = 2.0 * omega_hom.quadratic_form(&setup.xi);
        Ok(Self {
            setup: setup.clone(),
            envs,
            sigma_sq,
            omega_hom,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.setup.times
    }

    pub fn total_walks(&self) -> usize {
        self.envs.iter().map(|e| e.checkpoints.len()).sum()
    }

    /// `f` applied to every walk at time index `j`, in (env, walk) order.
    pub fn pooled(&self, j: usize, f: impl Fn(&Checkpoint) -> f64) -> Vec<f64> {
        self.envs
            .iter()
            .flat_map(|e| e.checkpoints.iter().map(|w| f(&w[j])))
            .collect()
    }

    /// Per-environment walk averages of `f` at time index `j`.
    pub fn env_means(&self, j: usize, f: impl Fn(&Checkpoint) -> f64) -> Vec<f64> {
        self.envs
            .iter()
            .map(|e| numeric::mean(&e.checkpoints.iter().map(|w| f(&w[j])).collect::<Vec<_>>()))
            .collect()
    }

    pub fn max_decomposition_residual(&self) -> f64 {
        self.envs
            .iter()
            .flat_map(|e| e.checkpoints.iter().flatten())
            .fold(0.0, |m, c| m.max(c.decomposition_residual()))
    }

    /// Mean of `f` with a standard error clustered by environment when
    /// there are at least two environments.
    pub fn clustered_mean(&self, j: usize, f: impl Fn(&Checkpoint) -> f64 + Copy) -> (f64, f64) {
        if self.envs.len() >= 2 {
            stats::mean_stderr(&self.env_means(j, f))
        } else {
            stats::mean_stderr(&self.pooled(j, f))
        }
    }
}

fn validate_setup(d: usize, setup: &WalkSetup) -> Result<()> {
    check_times(&setup.times)?;
    ensure(setup.times[0] > 0.0, || {
        "walk checkpoints must be > 0".into()
    })?;
    ensure(setup.xi.len() == d, || {
        "direction does not match the lattice dimension".into()
    })?;
    ensure(setup.xi.iter().any(|&v| v != 0.0), || {
        "direction must be nonzero".into()
    })?;
    ensure(setup.n_walk >= 1, || "need at least one walk".into())
}

fn walks_in(
    env: &Environment,
    index: usize,
    seed: u64,
    setup: &WalkSetup,
    solver: &SolverConfig,
) -> Result<EnvironmentWalks> {
    let lat = env.lattice();
    let correctors = solve_correctors(env, solver)?;
    let phi_xi = contract_phi(&correctors.phi, &setup.xi);
    let g = carre_du_champ_field(env, &phi_xi, &setup.xi)?.explicit;
    let walker = Walker::new(env, phi_xi.values(), g.values(), &setup.xi);
    let n = lat.num_vertices();
    let checkpoints: Vec<Vec<Checkpoint>> = (0..setup.n_walk)
        .into_par_iter()
        .map(|w| {
            let mut rng = rng_from_seed(derive_seed(seed, "walk", w as u64));
            let start = if setup.random_start {
                rng.gen_range(0..n)
            } else {
                0
            };
            walker.run(start, &setup.times, &mut rng, None)
        })
        .collect::<Result<_>>()?;
    let mut moments = [0.0; 4];
    for (m, &p) in moments.iter_mut().zip(&JUMP_POWERS) {
        *m = numeric::sum(
            (0..n * walker.degree).map(|s| walker.rates[s] * walker.increment[s].abs().powi(p)),
        ) / n as f64;
    }
    let mean_g_sq = numeric::dot(g.values(), g.values()) / n as f64;
    Ok(EnvironmentWalks {
        index,
        sigma_sq: correctors.omega_hom.sigma_sq(&setup.xi),
        corrector_residual: correctors.max_residual(),
        omega_hom: correctors.omega_hom,
        checkpoints,
        stationary_jump_moments: moments,
        mean_g_sq,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeMode {
    Annealed,
    Quenched,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerryEsseenRow {
    pub t: f64,
    pub n: usize,
    /// Kolmogorov distance of `xi . X_t` against `N(0, sigma^2 t)`.
    pub ks_position: f64,
    /// Same for the martingale part `xi . M_t`.
    pub ks_martingale: f64,
    pub floor: f64,
}

/// Discretized `int KS(t)^5 w(t) dt` for `w = (t+1)^{-1/2-eps}` and
/// `w = (t+1)^{-eps}`, trapezoid on the grid plus a tail bound assuming the
/// integrand decays like `(t+1)^{-1-eps}` beyond the last time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuenchedIntegrals {
    pub epsilon: f64,
    pub half_weight: f64,
    pub half_weight_tail: f64,
    pub flat_weight: f64,
    pub flat_weight_tail: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerryEsseenReport {
    pub mode: BeMode,
    pub sigma_sq: f64,
    pub delta: f64,
    pub rows: Vec<BerryEsseenRow>,
    pub fit: Option<RateFit>,
    pub integrals: Option<QuenchedIntegrals>,
}

/// Result of `KS(t) <= C r(t) + floor(t)` with `C` calibrated on the first
/// third of the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub c_hat: f64,
    pub calibration_points: usize,
    /// `max_t (KS(t) - C r(t) - floor(t))`; nonpositive when the check passes.
    pub worst_excess: f64,
    pub passes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCheck {
    /// Consecutive pairs with `KS(t_{k+1}) > KS(t_k) + floor`.
    pub violations: usize,
    pub slope: Option<f64>,
    pub slope_ci_high: Option<f64>,
    pub passes: bool,
}

/// `(log(t+1) / (t+1))^{1/5}`.
pub fn rate_two_dimensional(t: f64) -> f64 {
    ((t + 1.0).ln() / (t + 1.0)).powf(0.2)
}

impl BerryEsseenReport {
    pub fn from_ensemble(ensemble: &WalkEnsemble, mode: BeMode, delta: f64) -> Result<Self> {
        ensure(delta > 0.0 && delta < 1.0, || {
            format!("confidence delta must lie in (0, 1), got {delta}")
        })?;
        let sigma_sq = match mode {
            BeMode::Annealed => ensemble.sigma_sq,
            BeMode::Quenched => ensemble.envs[0].sigma_sq,
        };
        ensure(sigma_sq > 0.0, || "sigma_xi^2 must be positive".into())?;
        let sigma = sigma_sq.sqrt();
        let rows = ensemble
            .times()
            .iter()
            .enumerate()
            .map(|(j, &t)| {
                let x = ensemble.pooled(j, |c| c.position);
                let m = ensemble.pooled(j, |c| c.martingale);
                Ok(BerryEsseenRow {
                    t,
                    n: x.len(),
                    ks_position: kolmogorov_distance(&x, sigma, t)?,
                    ks_martingale: kolmogorov_distance(&m, sigma, t)?,
                    floor: dkw_floor(x.len(), delta),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut report = Self {
            mode,
            sigma_sq,
            delta,
            rows,
            fit: None,
            integrals: None,
        };
        report.fit = report.fit_above_floor(|r| r.ks_position);
        Ok(report)
    }

    /// Power-law fit of the distances over the rows above the floor.
    pub fn fit_above_floor(&self, ks: impl Fn(&BerryEsseenRow) -> f64) -> Option<RateFit> {
        let rows: Vec<&BerryEsseenRow> = self.rows.iter().filter(|r| ks(r) > r.floor).collect();
        let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
        let v: Vec<f64> = rows.iter().map(|r| ks(r)).collect();
        stats::rate_fit(&t, &v, None, Some(&Default::default())).ok()
    }

    pub fn envelope_check(
        &self,
        ks: impl Fn(&BerryEsseenRow) -> f64,
        rate: impl Fn(f64) -> f64,
    ) -> EnvelopeCheck {
        let k = self.rows.len().div_ceil(3).max(1);
        let c_hat = self.rows[..k]
            .iter()
            .map(|r| ks(r) / rate(r.t))
            .fold(0.0, f64::max);
        let worst_excess = self
            .rows
            .iter()
            .map(|r| ks(r) - c_hat * rate(r.t) - r.floor)
            .fold(f64::NEG_INFINITY, f64::max);
        EnvelopeCheck {
            c_hat,
            calibration_points: k,
            worst_excess,
            passes: worst_excess <= 0.0,
        }
    }

    /// Non-increasing up to the floor, and a negative fitted slope (95% CI)
    /// over the rows above the floor.
    pub fn monotone_check(&self, ks: impl Fn(&BerryEsseenRow) -> f64 + Copy) -> MonotoneCheck {
        let violations = self
            .rows
            .windows(2)
            .filter(|w| ks(&w[1]) > ks(&w[0]) + w[1].floor.max(w[0].floor))
            .count();
        let fit = self.fit_above_floor(ks);
        let slope_ok = fit.is_none_or(|f| {
            f.ci_high < 0.0 || !f.ci_high.is_finite() && f.slope < 0.0
        });
        MonotoneCheck {
            violations,
            slope: fit.map(|f| f.slope),
            slope_ci_high: fit.map(|f| f.ci_high),
            passes: violations == 0 && slope_ok,
        }
    }

    pub fn with_integrals(mut self, epsilon: f64) -> Result<Self> {
        ensure(epsilon > 0.0, || {
            format!("epsilon must be > 0, got {epsilon}")
        })?;
        let w_half = |t: f64| (t + 1.0).powf(-0.5 - epsilon);
        let w_flat = |t: f64| (t + 1.0).powf(-epsilon);
        let integrate = |w: &dyn Fn(f64) -> f64| -> (f64, f64) {
            let f: Vec<f64> = self
                .rows
                .iter()
                .map(|r| r.ks_position.powi(5) * w(r.t))
                .collect();
            let mut acc = CompensatedSum::new();
            for k in 1..self.rows.len() {
                acc.add(0.5 * (f[k] + f[k - 1]) * (self.rows[k].t - self.rows[k - 1].t));
            }
            let last = self.rows.last().expect("nonempty grid");
            let tail = f[f.len() - 1] * (last.t + 1.0) / epsilon;
            (acc.value(), tail)
        };
        let (half_weight, half_weight_tail) = integrate(&w_half);
        let (flat_weight, flat_weight_tail) = integrate(&w_flat);
        self.integrals = Some(QuenchedIntegrals {
            epsilon,
            half_weight,
            half_weight_tail,
            flat_weight,
            flat_weight_tail,
        });
        Ok(self)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(["t", "n", "ks_position", "ks_martingale", "dkw_floor"])?;
        for r in &self.rows {
            w.write_record([
                r.t.to_string(),
                r.n.to_string(),
                r.ks_position.to_string(),
                r.ks_martingale.to_string(),
                r.floor.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    /// Writes `path` (CSV) and `path.json` (the full report).
    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv_string()?)?;
        write_text(
            &crate::series::sidecar(path),
            &serde_json::to_string_pretty(self)?,
        )
    }
}

pub fn annealed_be_series(
    ens: &EnsembleSpec,
    setup: &WalkSetup,
    solver: &SolverConfig,
    delta: f64,
) -> Result<BerryEsseenReport> {
    let mut setup = setup.clone();
    setup.random_start = true;
    let ensemble = WalkEnsemble::run(ens, &setup, solver)?;
    BerryEsseenReport::from_ensemble(&ensemble, BeMode::Annealed, delta)
}

pub fn quenched_be_series(
    env: &Environment,
    setup: &WalkSetup,
    solver: &SolverConfig,
    epsilon: f64,
    delta: f64,
    seed: u64,
) -> Result<BerryEsseenReport> {
    let mut setup = setup.clone();
    setup.random_start = false;
    let ensemble = WalkEnsemble::run_quenched(env, &setup, solver, seed)?;
    BerryEsseenReport::from_ensemble(&ensemble, BeMode::Quenched, delta)?.with_integrals(epsilon)
}

/// `E E_0 |<xi . M>_t / t - sigma^2|^2`, centred per environment on its own
/// `2 xi . B xi` (the ergodic limit of the periodized environment).
pub fn qv_concentration_from(ensemble: &WalkEnsemble) -> Result<DecaySeries> {
    let times = ensemble.times();
    let per_env: Vec<Vec<f64>> = ensemble
        .envs
        .iter()
        .map(|e| {
            (0..times.len())
                .map(|j| {
                    let vals: Vec<f64> = e
                        .checkpoints
                        .iter()
                        .map(|w| (w[j].qv / times[j] - e.sigma_sq).powi(2))
                        .collect();
                    numeric::mean(&vals)
                })
                .collect()
        })
        .collect();
    DecaySeries::from_samples("qv_concentration", times, &per_env)
}

pub fn qv_concentration_series(
    ens: &EnsembleSpec,
    setup: &WalkSetup,
    solver: &SolverConfig,
) -> Result<DecaySeries> {
    let ensemble = WalkEnsemble::run(ens, setup, solver)?;
    Ok(qv_concentration_from(&ensemble)?.with_context(
        Some(&ens.law),
        ens.lattice.dim(),
        ens.lattice.side(),
        ens.seed,
    ))
}

/// Empirical jump-moment rate against its stationary prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpMomentReport {
    pub n: i32,
    pub t: f64,
    /// `(1/t) E sum_{s <= t} |d(xi . M)_s|^n`.
    pub empirical: f64,
    pub empirical_se: f64,
    /// Average of `sum_y omega(x, y) |psi(y) - psi(x)|^n`.
    pub prediction: f64,
    pub prediction_se: f64,
    /// Standard error of the paired per-environment difference.
    pub difference_se: f64,
    /// `(empirical - prediction) / difference_se`.
    pub z: f64,
}

/// Uses the last checkpoint; `n` must be one of 2, 4, 6, 8.
pub fn jump_moment_from(ensemble: &WalkEnsemble, n: i32) -> Result<JumpMomentReport> {
    let slot = JUMP_POWERS.iter().position(|&p| p == n).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "jump moment order must be one of {JUMP_POWERS:?}, got {n}"
        ))
    })?;
    let j = ensemble.times().len() - 1;
    let t = ensemble.times()[j];
    let emp = ensemble.env_means(j, |c| c.jump_powers[slot] / t);
    let pred: Vec<f64> = ensemble
        .envs
        .iter()
        .map(|e| e.stationary_jump_moments[slot])
        .collect();
    let (empirical, empirical_se) = ensemble.clustered_mean(j, |c| c.jump_powers[slot] / t);
    let (prediction, prediction_se) = stats::mean_stderr(&pred);
    let difference_se = if ensemble.envs.len() >= 2 {
        let diff: Vec<f64> = emp.iter().zip(&pred).map(|(a, b)| a - b).collect();
        stats::mean_stderr(&diff).1
    } else {
        empirical_se
    };
    let z = if difference_se > 0.0 {
        (empirical - prediction) / difference_se
    } else {
        0.0
    };
    Ok(JumpMomentReport {
        n,
        t,
        empirical,
        empirical_se,
        prediction,
        prediction_se: if prediction_se.is_finite() {
            prediction_se
        } else {
            0.0
        },
        difference_se,
        z,
    })
}

pub fn jump_moment_rate(
    ens: &EnsembleSpec,
    setup: &WalkSetup,
    n: i32,
    solver: &SolverConfig,
) -> Result<JumpMomentReport> {
    let mut setup = setup.clone();
    setup.random_start = true;
    jump_moment_from(&WalkEnsemble::run(ens, &setup, solver)?, n)
}

/// `E[(xi . M_t)^2]` against `E[<xi . M>_t]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsometryCheck {
    pub t: f64,
    pub second_moment: f64,
    pub quadratic_variation: f64,
    pub difference_se: f64,
    pub z: f64,
}

pub fn isometry_check(ensemble: &WalkEnsemble) -> Vec<IsometryCheck> {
    ensemble
        .times()
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let (second_moment, _) = ensemble.clustered_mean(j, |c| c.martingale * c.martingale);
            let (quadratic_variation, _) = ensemble.clustered_mean(j, |c| c.qv);
            let (diff, difference_se) =
                ensemble.clustered_mean(j, |c| c.martingale * c.martingale - c.qv);
            IsometryCheck {
                t,
                second_moment,
                quadratic_variation,
                difference_se,
                z: if difference_se > 0.0 {
                    diff / difference_se
                } else {
                    0.0
                },
            }
        })
        .collect()
}

/// `(term_qv + term_jumps)^{1/(2n+1)}`.
pub fn haeusler_bound(term_qv: f64, term_jumps: f64, n: u32) -> f64 {
    (term_qv + term_jumps).powf(1.0 / (2 * n + 1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HaeuslerRow {
    pub t: f64,
    /// `E |<N>_1 - 1|^n`.
    pub term_qv: f64,
    /// `E sum_{s <= 1} |dN_s|^{2n}`.
    pub term_jumps: f64,
    pub bound: f64,
    pub ks: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HaeuslerReport {
    pub n: u32,
    pub sigma_sq: f64,
    pub rows: Vec<HaeuslerRow>,
}

impl HaeuslerReport {
    pub fn max_ratio(&self) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max(r.ratio))
    }
}

/// Normalizes `N_s = xi . M_{st} / (sqrt(t) sigma)` at every checkpoint `t`.
pub fn haeusler_report(ensemble: &WalkEnsemble, n: u32) -> Result<HaeuslerReport> {
    ensure((1..=4).contains(&n), || {
        format!("Haeusler order n must be in 1..=4, got {n}")
    })?;
    let sigma_sq = ensemble.sigma_sq;
    ensure(sigma_sq > 0.0, || "sigma_xi^2 must be positive".into())?;
    let rows = ensemble
        .times()
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let scale = t * sigma_sq;
            let term_qv =
                numeric::mean(&ensemble.pooled(j, |c| (c.qv / scale - 1.0).abs().powi(n as i32)));
            let term_jumps = numeric::mean(&ensemble.pooled(j, |c| c.jump_powers[n as usize - 1]))
                / scale.powi(n as i32);
            let bound = haeusler_bound(term_qv, term_jumps, n);
            let ks =
                kolmogorov_distance(&ensemble.pooled(j, |c| c.martingale), sigma_sq.sqrt(), t)?;
            Ok(HaeuslerRow {
                t,
                term_qv,
                term_jumps,
                bound,
                ks,
                ratio: if bound > 0.0 {
                    ks / bound
                } else {
                    f64::INFINITY
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HaeuslerReport { n, sigma_sq, rows })
}

/// Per-environment `E_0 |xi . chi(X_t)|`.
pub fn corrector_along_path_from(ensemble: &WalkEnsemble) -> Result<DecaySeries> {
    let times = ensemble.times();
    let per_env: Vec<Vec<f64>> = ensemble
        .envs
        .iter()
        .map(|e| {
            (0..times.len())
                .map(|j| {
                    numeric::mean(
                        &e.checkpoints
                            .iter()
                            .map(|w| w[j].corrector.abs())
                            .collect::<Vec<_>>(),
                    )
                })
                .collect()
        })
        .collect();
    DecaySeries::from_samples("corrector_along_path", times, &per_env)
}

pub fn corrector_along_path(
    ens: &EnsembleSpec,
    setup: &WalkSetup,
    solver: &SolverConfig,
) -> Result<DecaySeries> {
    let ensemble = WalkEnsemble::run(ens, setup, solver)?;
    Ok(corrector_along_path_from(&ensemble)?.with_context(
        Some(&ens.law),
        ens.lattice.dim(),
        ens.lattice.side(),
        ens.seed,
    ))
}

/// Regression of `value^2` on `log(t + 1)`: `(slope, R^2)`.
pub fn log_growth_check(times: &[f64], values: &[f64]) -> Result<(f64, f64)> {
    let x: Vec<f64> = times.iter().map(|t| (t + 1.0).ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v * v).collect();
    let fit = linear_regression(&x, &y, None)?;
    Ok((fit.slope, fit.r_squared))
}
