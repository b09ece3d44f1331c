//! Heat kernel and environment semigroup on the torus, evolved by
//! uniformization, and the decay series measured from them.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::elliptic::{corrector_rhs, solve_corrector_direction};
use crate::environment::{EnsembleSpec, Environment};
use crate::error::{ensure, Error, Result};
use crate::lattice::{gradient_into, SpaceTimeWeight, TorusLattice, VertexField};
use crate::numeric::{self, CompensatedSum};
use crate::series::{check_times, DecaySeries};
use crate::solver::SolverConfig;

/// Poisson tail mass dropped on each side of the uniformization series.
pub const TAIL_TOLERANCE: f64 = 1e-12;

/// Largest `Lambda * t` accepted before aborting.
pub const MAX_JUMP_MEAN: f64 = 1e8;

/// Contiguous Poisson weights `P[K = k]`, `k = lo..lo + weights.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoissonWindow {
    pub lo: usize,
    pub weights: Vec<f64>,
    /// Upper bound on the mass outside the window.
    pub tail_bound: f64,
}

impl PoissonWindow {
    pub fn hi(&self) -> usize {
        self.lo + self.weights.len() - 1
    }

    pub fn weight(&self, k: usize) -> f64 {
        if k < self.lo {
            0.0
        } else {
            self.weights.get(k - self.lo).copied().unwrap_or(0.0)
        }
    }
}

/// Window with each tail bounded by `eps / 2`, evaluated in log space.
pub fn poisson_window(mean: f64, eps: f64) -> PoissonWindow {
    if mean == 0.0 {
        return PoissonWindow {
            lo: 0,
            weights: vec![1.0],
            tail_bound: 0.0,
        };
    }
    let ln_pmf = |k: usize| (k as f64) * mean.ln() - mean - ln_gamma(k as f64 + 1.0);
    let mode = mean.floor() as usize;
    // geometric bounds: ratios p(k+1)/p(k) = mean/(k+1) above the mode and
    // p(k-1)/p(k) = k/mean below it
    let mut hi = mode;
    let upper = loop {
        let next = ln_pmf(hi + 1).exp();
        let ratio = mean / (hi + 2) as f64;
        let bound = next / (1.0 - ratio);
        if ratio < 1.0 && bound < eps / 2.0 {
            break bound;
        }
        hi += 1;
    };
    let mut lo = mode;
    let lower = loop {
        if lo == 0 {
            break 0.0;
        }
        let prev = ln_pmf(lo - 1).exp();
        let ratio = (lo - 1) as f64 / mean;
        let bound = prev / (1.0 - ratio);
        if bound < eps / 2.0 {
            break bound;
        }
        lo -= 1;
    };
    // renormalized so constants are preserved to round-off
    let mut weights: Vec<f64> = (lo..=hi).map(|k| ln_pmf(k).exp()).collect();
    let total = numeric::sum(weights.iter().copied());
    weights.iter_mut().for_each(|w| *w /= total);
    PoissonWindow {
        lo,
        weights,
        tail_bound: upper + lower,
    }
}

/// `K = I + L / Lambda`, a symmetric stochastic matrix when `Lambda >= max mu`.
struct JumpChain {
    n: usize,
    degree: usize,
    neighbors: Vec<usize>,
    rates: Vec<f64>,
    rate: f64,
}

impl JumpChain {
    fn new(env: &Environment) -> Self {
        let lat = env.lattice();
        let d = lat.dim();
        let n = lat.num_vertices();
        let mut neighbors = Vec::with_capacity(2 * d * n);
        let mut rates = Vec::with_capacity(2 * d * n);
        for x in 0..n {
            for i in 0..d {
                neighbors.push(lat.forward(x, i));
                rates.push(env.conductance(x, i));
                let down = lat.backward(x, i);
                neighbors.push(down);
                rates.push(env.conductance(down, i));
            }
        }
        Self {
            n,
            degree: 2 * d,
            neighbors,
            rates,
            rate: env.max_mu(),
        }
    }

    /// `out = L v`.
    fn generator(&self, v: &[f64], out: &mut [f64]) {
        for x in 0..self.n {
            let base = x * self.degree;
            let mut acc = 0.0;
            for k in base..base + self.degree {
                acc += self.rates[k] * (v[self.neighbors[k]] - v[x]);
            }
            out[x] = acc;
        }
    }

    /// `out = K v`.
    fn step(&self, v: &[f64], out: &mut [f64]) {
        self.generator(v, out);
        let inv = 1.0 / self.rate;
        for (o, vi) in out.iter_mut().zip(v) {
            *o = vi + inv * *o;
        }
    }
}

/// `exp(t L) u0` at several times.
#[derive(Clone, Debug, PartialEq)]
pub struct Evolution {
    pub times: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
    /// Poisson mass dropped per time.
    pub tail_mass: Vec<f64>,
    pub rate: f64,
}

/// Uniformization: `exp(tL) = sum_k Poisson(Lambda t; k) K^k`, all times in
/// one pass over the powers of `K`. Times need not be ordered.
pub fn evolve(env: &Environment, u0: &[f64], times: &[f64]) -> Result<Evolution> {
    let lat = env.lattice();
    ensure(u0.len() == lat.num_vertices(), || {
        format!(
            "initial field has {} values, lattice has {}",
            u0.len(),
            lat.num_vertices()
        )
    })?;
    ensure(times.iter().all(|t| t.is_finite() && *t >= 0.0), || {
        "times must be finite and >= 0".into()
    })?;
    let chain = JumpChain::new(env);
    let t_max = times.iter().copied().fold(0.0, f64::max);
    if chain.rate * t_max > MAX_JUMP_MEAN {
        return Err(Error::ResourceLimit(format!(
            "uniformization needs about {:.3e} jump-chain steps (rate {:.3e}, t {t_max})",
            chain.rate * t_max,
            chain.rate
        )));
    }
    let windows: Vec<PoissonWindow> = times
        .iter()
        .map(|t| poisson_window(chain.rate * t, TAIL_TOLERANCE))
        .collect();
    let k_max = windows.iter().map(PoissonWindow::hi).max().unwrap_or(0);
    let n = u0.len();
    let mut fields = vec![vec![0.0; n]; times.len()];
    let mut v = u0.to_vec();
    let mut next = vec![0.0; n];
    for k in 0..=k_max {
        for (w, f) in windows.iter().zip(fields.iter_mut()) {
            let c = w.weight(k);
            if c != 0.0 {
                f.iter_mut().zip(&v).for_each(|(f, v)| *f += c * v);
            }
        }
        if k < k_max {
            chain.step(&v, &mut next);
            std::mem::swap(&mut v, &mut next);
        }
    }
    Ok(Evolution {
        times: times.to_vec(),
        fields,
        tail_mass: windows.iter().map(|w| w.tail_bound).collect(),
        rate: chain.rate,
    })
}

/// Explicit Euler fallback with `dt <= 0.9 / (2 max mu)`; `times` increasing.
pub fn evolve_euler(
    env: &Environment,
    u0: &[f64],
    times: &[f64],
    dt: Option<f64>,
) -> Result<Evolution> {
    let lat = env.lattice();
    ensure(u0.len() == lat.num_vertices(), || {
        "initial field does not match the lattice".into()
    })?;
    ensure(
        times.windows(2).all(|w| w[0] <= w[1]) && times.first().is_none_or(|t| *t >= 0.0),
        || "Euler times must be nondecreasing and >= 0".into(),
    )?;
    let chain = JumpChain::new(env);
    let limit = 0.9 / (2.0 * chain.rate);
    let dt = dt.unwrap_or(limit);
    ensure(dt > 0.0 && dt <= limit, || {
        format!("Euler step {dt} outside (0, {limit}]")
    })?;
    let t_max = times.last().copied().unwrap_or(0.0);
    if t_max / dt > MAX_JUMP_MEAN {
        return Err(Error::ResourceLimit(format!(
            "Euler needs {:.3e} steps",
            t_max / dt
        )));
    }
    let mut v = u0.to_vec();
    let mut lv = vec![0.0; v.len()];
    let mut t = 0.0;
    let mut fields = Vec::with_capacity(times.len());
    for &target in times {
        while t < target {
            let h = dt.min(target - t);
            chain.generator(&v, &mut lv);
            v.iter_mut().zip(&lv).for_each(|(v, l)| *v += h * l);
            t += h;
            if target - t < 1e-12 * target.max(1.0) {
                t = target;
            }
        }
        fields.push(v.clone());
    }
    Ok(Evolution {
        times: times.to_vec(),
        fields,
        tail_mass: vec![0.0; times.len()],
        rate: chain.rate,
    })
}

/// `p(t, base, .)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatKernelSnapshot {
    pub t: f64,
    pub base: usize,
    pub p: VertexField,
    pub tail_mass: f64,
}

impl HeatKernelSnapshot {
    pub fn total_mass(&self) -> f64 {
        self.p.sum()
    }

    /// `sum_y p(t, y)^2`.
    pub fn return_mass(&self) -> f64 {
        numeric::dot(self.p.values(), self.p.values())
    }
}

pub fn heat_kernel(
    env: &Environment,
    base: usize,
    times: &[f64],
) -> Result<Vec<HeatKernelSnapshot>> {
    let lat = env.lattice();
    ensure(base < lat.num_vertices(), || {
        format!("base vertex {base} out of range")
    })?;
    let delta = VertexField::delta(lat, base);
    let evo = evolve(env, delta.values(), times)?;
    evo.fields
        .into_iter()
        .zip(times.iter().zip(&evo.tail_mass))
        .map(|(p, (&t, &tail))| {
            Ok(HeatKernelSnapshot {
                t,
                base,
                p: VertexField::from_values(lat, 1, p)?,
                tail_mass: tail,
            })
        })
        .collect()
}

/// `(P_t u)(tau_x omega)` for every `x`: the heat flow of the field `u`.
pub fn semigroup_apply(env: &Environment, u: &VertexField, t: f64) -> Result<VertexField> {
    Ok(semigroup_evolve(env, u, &[t])?.remove(0))
}

pub fn semigroup_evolve(
    env: &Environment,
    u: &VertexField,
    times: &[f64],
) -> Result<Vec<VertexField>> {
    u.expect_lattice(env.lattice())?;
    ensure(u.channels() == 1, || {
        "semigroup acts on single-channel fields".into()
    })?;
    let evo = evolve(env, u.values(), times)?;
    evo.fields
        .into_iter()
        .map(|f| VertexField::from_values(env.lattice(), 1, f))
        .collect()
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 {
                1.0
            } else if n == 1 {
                x
            } else {
                p1
            };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let step = pn / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        nodes[k] = -x;
        nodes[n - 1 - k] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[k] = w;
        weights[n - 1 - k] = w;
    }
    (nodes, weights)
}

/// Panels `[0, 1], [1, 2], [2, 4], ...` up to `horizon`.
fn panels(horizon: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut a = 0.0;
    let mut b = horizon.min(1.0);
    while a < horizon {
        out.push((a, b));
        a = b;
        b = (2.0 * b).min(horizon);
    }
    out
}

/// `int_0^horizon exp(tL) u0 dt` by panelled Gauss-Legendre quadrature.
pub fn integrate_semigroup(
    env: &Environment,
    u0: &[f64],
    horizon: f64,
    nodes_per_panel: usize,
) -> Result<Vec<f64>> {
    ensure(horizon > 0.0, || {
        format!("horizon must be > 0, got {horizon}")
    })?;
    ensure(nodes_per_panel >= 1, || {
        "need at least one node per panel".into()
    })?;
    let (x, w) = gauss_legendre(nodes_per_panel);
    let mut times = Vec::new();
    let mut weights = Vec::new();
    for (a, b) in panels(horizon) {
        let half = 0.5 * (b - a);
        for k in 0..nodes_per_panel {
            times.push(a + half * (x[k] + 1.0));
            weights.push(half * w[k]);
        }
    }
    let evo = evolve(env, u0, &times)?;
    let mut out = vec![0.0; u0.len()];
    for (f, w) in evo.fields.iter().zip(&weights) {
        out.iter_mut().zip(f).for_each(|(o, f)| *o += w * f);
    }
    Ok(out)
}

/// Horizon at which the slowest torus mode of the integrated kernel has
/// decayed well below the quadrature error.
pub fn default_green_horizon(lat: &TorusLattice) -> f64 {
    let l = lat.side() as f64;
    l * l
}

/// `int_0^horizon (p(t, ., source) - 1/N) dt`.
pub fn integrated_green(env: &Environment, source: usize, horizon: f64) -> Result<VertexField> {
    let lat = env.lattice();
    ensure(source < lat.num_vertices(), || {
        format!("source {source} out of range")
    })?;
    let n = lat.num_vertices();
    let mut u0 = vec![-1.0 / n as f64; n];
    u0[source] += 1.0;
    VertexField::from_values(lat, 1, integrate_semigroup(env, &u0, horizon, 16)?)
}

/// `sum_e omega(e) |grad f(e)|^2`.
pub fn dirichlet_energy(env: &Environment, f: &[f64]) -> f64 {
    let lat = env.lattice();
    let mut g = vec![0.0; lat.num_edges()];
    gradient_into(lat, f, &mut g);
    numeric::sum(
        g.iter()
            .zip(env.conductances().values())
            .map(|(g, w)| w * g * g),
    )
}

/// `g(x) = sum_y omega(x, y) (psi(y) - psi(x))^2` for `psi(y) = xi . y + phi(y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CarreDuChamp {
    pub explicit: VertexField,
    /// `L psi^2 - 2 psi L psi`, with `psi` anchored at each vertex's own coordinates.
    pub bracket: VertexField,
    pub max_discrepancy: f64,
}

pub fn carre_du_champ_field(
    env: &Environment,
    phi_xi: &VertexField,
    xi: &[f64],
) -> Result<CarreDuChamp> {
    let lat = env.lattice();
    phi_xi.expect_lattice(lat)?;
    let d = lat.dim();
    ensure(xi.len() == d && phi_xi.channels() == 1, || {
        "carre du champ needs a scalar corrector and a d-vector".into()
    })?;
    let phi = phi_xi.values();
    let n = lat.num_vertices();
    let mut explicit = vec![0.0; n];
    let mut bracket = vec![0.0; n];
    for x in 0..n {
        let psi_x: f64 = (0..d).map(|i| xi[i] * lat.coord(x, i) as f64).sum::<f64>() + phi[x];
        let mut sum = 0.0;
        let mut l_sq = 0.0;
        let mut l_lin = 0.0;
        for i in 0..d {
            let up = lat.forward(x, i);
            let down = lat.backward(x, i);
            for (y, w, step) in [
                (up, env.conductance(x, i), xi[i]),
                (down, env.conductance(down, i), -xi[i]),
            ] {
                let psi_y = psi_x + step + phi[y] - phi[x];
                sum += w * (psi_y - psi_x).powi(2);
                l_sq += w * (psi_y * psi_y - psi_x * psi_x);
                l_lin += w * (psi_y - psi_x);
            }
        }
        explicit[x] = sum;
        bracket[x] = l_sq - 2.0 * psi_x * l_lin;
    }
    let max_discrepancy = explicit
        .iter()
        .zip(&bracket)
        .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
    Ok(CarreDuChamp {
        explicit: VertexField::from_values(lat, 1, explicit)?,
        bracket: VertexField::from_values(lat, 1, bracket)?,
        max_discrepancy,
    })
}

/// Warnings for times beyond the pre-wrap window `t <= (L/4)^2`.
pub fn window_warnings(lat: &TorusLattice, times: &[f64]) -> Vec<String> {
    let limit = (lat.side() as f64 / 4.0).powi(2);
    match times.iter().filter(|&&t| t > limit).count() {
        0 => Vec::new(),
        k => vec![format!("{k} times exceed the pre-wrap window t <= {limit}")],
    }
}

fn finish(mut series: DecaySeries, ens: &EnsembleSpec, times: &[f64]) -> DecaySeries {
    series
        .meta
        .warnings
        .extend(window_warnings(&ens.lattice, times));
    series.with_context(
        Some(&ens.law),
        ens.lattice.dim(),
        ens.lattice.side(),
        ens.seed,
    )
}

/// `sum_y p(t, 0, y)^2` per environment, with the identity
/// `sum_y p(t, y)^2 = p(2t, 0, 0)` recorded as a diagnostic.
pub fn on_diagonal_series(ens: &EnsembleSpec, times: &[f64]) -> Result<DecaySeries> {
    check_times(times)?;
    let doubled: Vec<f64> = times.iter().flat_map(|&t| [t, 2.0 * t]).collect();
    let rows: Vec<(Vec<f64>, f64, f64)> = ens.map(|_, env| {
        let snaps = heat_kernel(&env, 0, &doubled)?;
        let mut vals = Vec::with_capacity(times.len());
        let mut worst: f64 = 0.0;
        let mut tail: f64 = 0.0;
        for pair in snaps.chunks(2) {
            let r = pair[0].return_mass();
            worst = worst.max((r - pair[1].p.get(0)).abs());
            tail = tail.max(pair[0].tail_mass).max(pair[1].tail_mass);
            vals.push(r);
        }
        Ok((vals, worst, tail))
    })?;
    let per_env: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
    let mut s = DecaySeries::from_samples("on_diagonal", times, &per_env)?;
    s.meta.diagnostics.insert(
        "identity_residual".into(),
        rows.iter().fold(0.0, |m, r| m.max(r.1)),
    );
    s.meta
        .diagnostics
        .insert("tail_mass".into(), rows.iter().fold(0.0, |m, r| m.max(r.2)));
    Ok(finish(s, ens, times))
}

/// `(sum_y m(t, y)^{2 alpha} |grad p(t, 0, y)|^2)^{1/2}` per environment.
pub fn weighted_gradient_norm_series(
    ens: &EnsembleSpec,
    alpha: f64,
    times: &[f64],
) -> Result<DecaySeries> {
    check_times(times)?;
    ensure(alpha >= 0.0, || format!("alpha must be >= 0, got {alpha}"))?;
    let lat = ens.lattice;
    let d = lat.dim();
    let norms: Vec<usize> = (0..lat.num_vertices()).map(|y| lat.torus_norm(y)).collect();
    let per_env: Vec<Vec<f64>> = ens.map(|_, env| {
        let snaps = heat_kernel(&env, 0, times)?;
        let mut grad = vec![0.0; lat.num_edges()];
        snaps
            .iter()
            .map(|s| {
                gradient_into(&lat, s.p.values(), &mut grad);
                let w = SpaceTimeWeight::new(s.t, alpha)?;
                let total: CompensatedSum = (0..lat.num_vertices())
                    .map(|y| {
                        let g2: f64 = grad[y * d..(y + 1) * d].iter().map(|g| g * g).sum();
                        let m = ((norms[y] as f64 + 1.0).powi(2) / (s.t + 1.0) + 1.0).sqrt();
                        debug_assert!((m - w.m(&lat, 0, y)).abs() < 1e-12);
                        m.powf(2.0 * alpha) * g2
                    })
                    .collect();
                Ok(total.value().sqrt())
            })
            .collect()
    })?;
    let s = DecaySeries::from_samples("weighted_gradient_norm", times, &per_env)?;
    Ok(finish(s, ens, times))
}

/// `E[(P_t u)^{2n}]^{1/2n}` for `u = div*(-omega xi)`, pooling the torus
/// average with the ensemble.
pub fn semigroup_decay_series(
    ens: &EnsembleSpec,
    xi: &[f64],
    n: u32,
    times: &[f64],
) -> Result<DecaySeries> {
    check_times(times)?;
    ensure(n >= 1, || "moment order n must be >= 1".into())?;
    ensure(xi.len() == ens.lattice.dim(), || {
        "direction does not match the lattice dimension".into()
    })?;
    let per_env: Vec<Vec<f64>> = ens.map(|_, env| {
        let u = corrector_rhs(&env, xi);
        let evo = evolve(&env, &u, times)?;
        Ok(evo
            .fields
            .iter()
            .map(|f| numeric::mean(&f.iter().map(|v| v.powi(2 * n as i32)).collect::<Vec<_>>()))
            .collect())
    })?;
    let s = DecaySeries::from_moments("semigroup_decay", times, &per_env, 2.0 * n as f64)?;
    Ok(finish(s, ens, times))
}

/// `E[(P_t (g_xi - E g_xi))^2]^{1/2}` with the torus mean standing in for `E g_xi`.
pub fn variance_decay_series(
    ens: &EnsembleSpec,
    xi: &[f64],
    times: &[f64],
    cfg: &SolverConfig,
) -> Result<DecaySeries> {
    check_times(times)?;
    ensure(xi.len() == ens.lattice.dim(), || {
        "direction does not match the lattice dimension".into()
    })?;
    let rows: Vec<(Vec<f64>, bool)> = ens.map(|_, env| {
        let sol = solve_corrector_direction(&env, xi, cfg)?;
        let mut g = carre_du_champ_field(&env, &sol.phi, xi)?
            .explicit
            .into_values();
        numeric::project_mean_zero(&mut g);
        let evo = evolve(&env, &g, times)?;
        let moments = evo
            .fields
            .iter()
            .map(|f| numeric::dot(f, f) / f.len() as f64)
            .collect();
        Ok((moments, sol.stats.converged))
    })?;
    let per_env: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
    let mut s = DecaySeries::from_moments("variance_decay", times, &per_env, 2.0)?;
    let failed = rows.iter().filter(|r| !r.1).count();
    if failed > 0 {
        s.meta
            .warnings
            .push(format!("{failed} corrector solves did not converge"));
    }
    Ok(finish(s, ens, times))
}

/// Per-time summary of a kernel used by the invariant checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelDiagnostics {
    pub mass_error: f64,
    pub min_value: f64,
    pub tail_mass: f64,
}

pub fn kernel_diagnostics(snap: &HeatKernelSnapshot) -> KernelDiagnostics {
    KernelDiagnostics {
        mass_error: (snap.total_mass() - 1.0).abs(),
        min_value: snap
            .p
            .values()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min),
        tail_mass: snap.tail_mass,
    }
}
