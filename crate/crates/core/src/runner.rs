//! Runs configured experiments end to end and writes CSVs, metadata and a
//! summary with fitted exponents flagged against the target table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Experiment, ExperimentConfig};
use crate::elliptic::{
    corrector_growth_profile, green_decay_profile, solve_correctors, CorrectorBundle, Matrix,
};
use crate::environment::{efron_stein_check, EnvironmentLaw};
use crate::error::{Error, Result};
use crate::parabolic::{
    on_diagonal_series, semigroup_decay_series, variance_decay_series,
    weighted_gradient_norm_series,
};
use crate::seed::derive_seed;
use crate::series::{write_text, DecaySeries, SeriesTable};
use crate::stats::{self, loglog_fit, rate_fit, FitWindow, RateFit};
use crate::walk::{
    corrector_along_path_from, haeusler_report, isometry_check, jump_moment_from, log_growth_check,
    qv_concentration_from, rate_two_dimensional, BeMode, BerryEsseenReport, WalkEnsemble,
    WalkSetup,
};

pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Exit status of the command line front end for a given error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidParameter(_) | Error::Json(_) => 2,
        Error::ResourceLimit(_) => 3,
        _ => 1,
    }
}

/// Upper-bound exponent that a fitted decay slope is compared against.
pub fn target_exponent(experiment: Experiment, d: usize, law: &EnvironmentLaw) -> Option<f64> {
    let d_f = d as f64;
    let elliptic = matches!(
        law,
        EnvironmentLaw::UniformElliptic { .. } | EnvironmentLaw::IidTwoPoint { .. }
    );
    match experiment {
        Experiment::Ondiag => Some(-d_f / 2.0),
        Experiment::Gradnorm | Experiment::SemigroupDecay => Some(-(d_f / 4.0 + 0.5)),
        // Uniformly elliptic laws reach -1/2 already in d = 3.
        Experiment::VarianceDecay => match d {
            3 if elliptic => Some(-0.5),
            3 => Some(-0.25),
            d if d >= 4 => Some(-0.5),
            _ => None,
        },
        Experiment::QvConcentration => match d {
            3 => Some(-0.5),
            d if d >= 4 => Some(-1.0),
            _ => None,
        },
        Experiment::BeAnnealed | Experiment::BeQuenched => match d {
            2 if elliptic => Some(-0.2),
            3 => Some(-0.1),
            d if d >= 4 => Some(-0.2),
            _ => None,
        },
        _ => None,
    }
}

/// Berry-Esseen envelope `r(t)` by dimension; `None` where no rate is known.
pub fn be_rate(d: usize) -> Option<fn(f64) -> f64> {
    match d {
        2 => Some(rate_two_dimensional),
        3 => Some(|t| (t + 1.0).powf(-0.1)),
        d if d >= 4 => Some(|t| (t + 1.0).powf(-0.2)),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSummary {
    pub quantity: String,
    pub fit: Option<RateFit>,
    pub target: Option<f64>,
    pub margin: f64,
    /// `fit.ci_high > target + margin`.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub schema_version: u32,
    pub experiment: Experiment,
    pub seed: u64,
    pub artifacts: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
    pub fits: Vec<FitSummary>,
    pub flags: Vec<String>,
    pub warnings: Vec<String>,
}

impl Summary {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            schema_version: SUMMARY_SCHEMA_VERSION,
            experiment: cfg.experiment,
            seed: cfg.seed,
            artifacts: Vec::new(),
            metrics: BTreeMap::new(),
            fits: Vec::new(),
            flags: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn flagged(&self) -> bool {
        !self.flags.is_empty()
    }

    /// Non-finite values become warnings; JSON has no NaN.
    fn metric(&mut self, name: &str, value: f64) {
        if value.is_finite() {
            self.metrics.insert(name.to_string(), value);
        } else {
            self.warnings
                .push(format!("metric {name} is not finite ({value})"));
        }
    }

    fn check(&mut self, ok: bool, message: impl FnOnce() -> String) {
        if !ok {
            self.flags.push(message());
        }
    }

    fn record_fit(
        &mut self,
        quantity: &str,
        fit: Option<RateFit>,
        target: Option<f64>,
        margin: f64,
    ) {
        let flagged = matches!((fit, target), (Some(f), Some(t)) if f.ci_high > t + margin);
        if flagged {
            let f = fit.expect("flagged fits exist");
            self.flags.push(format!(
                "{quantity}: slope {:.4} (CI upper {:.4}) above target {} + margin {margin}",
                f.slope,
                f.ci_high,
                target.expect("flagged fits have targets")
            ));
        }
        if fit.is_none() {
            self.warnings.push(format!("{quantity}: no fit"));
        }
        self.fits.push(FitSummary {
            quantity: quantity.to_string(),
            fit,
            target,
            margin,
            flagged,
        });
    }

    fn artifact(&mut self, dir: &Path, path: &Path) {
        let rel = path.strip_prefix(dir).unwrap_or(path);
        self.artifacts.push(rel.to_string_lossy().into_owned());
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub summary: Summary,
}

/// Output directory: `--out`, else the config's `output`, else
/// `runs/<experiment>`.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let mut cfg = config.clone();
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &opts.out {
        cfg.output = Some(out.clone());
    }
    cfg.validate()?;
    let dir = cfg
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(cfg.experiment.name()));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    if opts.threads == Some(0) {
        return Err(Error::Config("--threads must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let summary = pool.install(|| execute(&cfg, &dir))?;
    write_text(&dir.join(CONFIG_FILE), &cfg.to_json()?)?;
    write_text(
        &dir.join(SUMMARY_FILE),
        &serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(RunOutcome {
        dir,
        config: cfg,
        summary,
    })
}

fn execute(cfg: &ExperimentConfig, dir: &Path) -> Result<Summary> {
    let mut summary = Summary::new(cfg);
    let s = &mut summary;
    let lat = cfg.lattice()?;
    let d = lat.dim();
    let ens = cfg.ensemble()?;
    let p = &cfg.params;
    let target = target_exponent(cfg.experiment, d, &cfg.law);
    match cfg.experiment {
        Experiment::Corrector => {
            let bundles = ens.map(|_, env| CorrectorBundle::solve(&env, &cfg.solver))?;
            let bundle_dir = dir.join("bundle");
            bundles[0].save(&bundle_dir)?;
            s.artifact(dir, &bundle_dir);
            let hom: Vec<_> = bundles.iter().map(|b| b.omega_hom.clone()).collect();
            homogenized_metrics(s, dir, &hom)?;
            s.metric(
                "max_corrector_residual",
                bundles
                    .iter()
                    .fold(0.0, |m, b| m.max(b.max_corrector_residual())),
            );
            s.metric(
                "phi_max_abs",
                bundles
                    .iter()
                    .fold(0.0, |m, b| m.max(crate::numeric::max_abs(b.phi.values()))),
            );
            s.metric(
                "sigma_divergence_residual",
                bundles
                    .iter()
                    .fold(0.0, |m, b| m.max(b.sigma.divergence_residual)),
            );
            if !bundles.iter().all(CorrectorBundle::converged) {
                s.warnings
                    .push("some corrector solves did not converge".into());
            }
            if lat.side() / 4 >= 2 {
                let order = p.order.unwrap_or(2) as f64;
                let growth = corrector_growth_profile(&bundles, p.growth_field, 0, order)?;
                let path = dir.join("growth.csv");
                write_columns(
                    &path,
                    &["r", "moment"],
                    &[
                        growth.radii.iter().map(|&r| r as f64).collect(),
                        growth.moments.clone(),
                    ],
                )?;
                s.artifact(dir, &path);
                s.record_fit("corrector_growth", growth.fit, None, p.margin);
            }
        }
        Experiment::Homogenize => {
            let hom: Vec<_> =
                ens.map(|_, env| Ok(solve_correctors(&env, &cfg.solver)?.omega_hom))?;
            let (scalar, se) = homogenized_metrics(s, dir, &hom)?;
            if let Some(expected) = p.expected {
                s.check((scalar - expected).abs() <= p.band * expected.abs(), || {
                    format!("homogenized coefficient {scalar:.5} (se {se:.2e}) outside {expected} +- {}%", p.band * 100.0)
                });
            }
        }
        Experiment::Green => {
            let envs = (0..ens.n_env)
                .map(|k| ens.environment(k))
                .collect::<Result<Vec<_>>>()?;
            let profile = green_decay_profile(
                &envs,
                p.order.unwrap_or(2) as f64,
                &cfg.solver,
                p.all_sources,
            )?;
            let path = dir.join("green.csv");
            let radii: Vec<f64> = profile.radii.iter().map(|&r| r as f64).collect();
            write_columns(
                &path,
                &["r", "count", "gradient", "mixed"],
                &[
                    radii.clone(),
                    profile.counts.iter().map(|&c| c as f64).collect(),
                    profile.gradient.clone(),
                    profile.mixed.clone(),
                ],
            )?;
            s.artifact(dir, &path);
            s.metric("max_relative_residual", profile.max_relative_residual);
            s.record_fit(
                "green_gradient",
                loglog_fit(&radii, &profile.gradient).ok(),
                Some(1.0 - d as f64),
                p.margin,
            );
            s.record_fit(
                "green_mixed",
                loglog_fit(&radii, &profile.mixed).ok(),
                Some(-(d as f64)),
                p.margin,
            );
        }
        Experiment::Ondiag => {
            let series = on_diagonal_series(&ens, &cfg.times()?)?;
            save_series(s, dir, "ondiag", series, cfg, target)?;
        }
        Experiment::Gradnorm => {
            let series = weighted_gradient_norm_series(&ens, p.alpha, &cfg.times()?)?;
            save_series(s, dir, "gradnorm", series, cfg, target)?;
        }
        Experiment::SemigroupDecay => {
            let series =
                semigroup_decay_series(&ens, &cfg.xi(), p.order.unwrap_or(1), &cfg.times()?)?;
            save_series(s, dir, "semigroup_decay", series, cfg, target)?;
        }
        Experiment::VarianceDecay => {
            let series = variance_decay_series(&ens, &cfg.xi(), &cfg.times()?, &cfg.solver)?;
            save_series(s, dir, "variance_decay", series, cfg, target)?;
        }
        Experiment::BeAnnealed => {
            let ensemble = WalkEnsemble::run(&ens, &walk_setup(cfg, true)?, &cfg.solver)?;
            walk_metrics(s, &ensemble);
            let report = BerryEsseenReport::from_ensemble(&ensemble, BeMode::Annealed, p.delta)?;
            be_outputs(s, dir, &report, d, target, p.margin)?;
            let n = p.order.unwrap_or(2);
            let h = haeusler_report(&ensemble, n)?;
            let path = dir.join("haeusler.csv");
            write_columns(
                &path,
                &["t", "term_qv", "term_jumps", "bound", "ks", "ratio"],
                &[
                    h.rows.iter().map(|r| r.t).collect(),
                    h.rows.iter().map(|r| r.term_qv).collect(),
                    h.rows.iter().map(|r| r.term_jumps).collect(),
                    h.rows.iter().map(|r| r.bound).collect(),
                    h.rows.iter().map(|r| r.ks).collect(),
                    h.rows.iter().map(|r| r.ratio).collect(),
                ],
            )?;
            s.artifact(dir, &path);
            s.metric("haeusler_max_ratio", h.max_ratio());
            s.check(h.max_ratio() <= 5.0, || {
                format!("Haeusler KS/bound ratio {:.3} above 5", h.max_ratio())
            });
        }
        Experiment::BeQuenched => {
            let env = ens.environment(0)?;
            let seed = derive_seed(cfg.seed, "quenched-walks", 0);
            let ensemble =
                WalkEnsemble::run_quenched(&env, &walk_setup(cfg, false)?, &cfg.solver, seed)?;
            walk_metrics(s, &ensemble);
            let report = BerryEsseenReport::from_ensemble(&ensemble, BeMode::Quenched, p.delta)?
                .with_integrals(p.epsilon)?;
            be_outputs(s, dir, &report, d, target, p.margin)?;
            let q = report.integrals.expect("integrals were requested");
            s.metric("integral_half_weight", q.half_weight);
            s.metric("integral_half_weight_tail", q.half_weight_tail);
            s.metric("integral_flat_weight", q.flat_weight);
            s.metric("integral_flat_weight_tail", q.flat_weight_tail);
        }
        Experiment::QvConcentration => {
            let ensemble = WalkEnsemble::run(&ens, &walk_setup(cfg, true)?, &cfg.solver)?;
            walk_metrics(s, &ensemble);
            let series = qv_concentration_from(&ensemble)?;
            // E|a - b|^2 <= 2(E a^2 + b^2) and E_0 (qv/t)^2 <= E g^2 under a stationary start
            let bounds: Vec<f64> = ensemble
                .envs
                .iter()
                .map(|e| 2.0 * (e.mean_g_sq + e.sigma_sq * e.sigma_sq))
                .collect();
            let bound = crate::numeric::mean(&bounds);
            let worst = series.mean.iter().copied().fold(0.0, f64::max);
            s.metric("crude_bound", bound);
            s.check(worst <= bound, || {
                format!("QV concentration {worst:.4} exceeds the crude moment bound {bound:.4}")
            });
            save_series(s, dir, "qv_concentration", series, cfg, target)?;
        }
        Experiment::JumpMoments => {
            let ensemble = WalkEnsemble::run(&ens, &walk_setup(cfg, true)?, &cfg.solver)?;
            walk_metrics(s, &ensemble);
            let n = p.order.unwrap_or(2) as i32;
            let jm = jump_moment_from(&ensemble, n)?;
            let path = dir.join("jump_moments.json");
            write_text(&path, &serde_json::to_string_pretty(&jm)?)?;
            s.artifact(dir, &path);
            s.metric("empirical", jm.empirical);
            s.metric("empirical_se", jm.empirical_se);
            s.metric("prediction", jm.prediction);
            s.metric("prediction_se", jm.prediction_se);
            s.metric("z", jm.z);
            s.check(jm.z.abs() <= 3.0, || {
                format!(
                    "jump moment rate differs from its prediction by {:.2} sigma",
                    jm.z
                )
            });
        }
        Experiment::CorrectorPath => {
            let ensemble = WalkEnsemble::run(&ens, &walk_setup(cfg, true)?, &cfg.solver)?;
            walk_metrics(s, &ensemble);
            let series = corrector_along_path_from(&ensemble)?;
            if !series.is_identically_zero() {
                let (slope, r2) = log_growth_check(&series.times, &series.mean)?;
                s.metric("log_growth_slope", slope);
                s.metric("log_growth_r_squared", r2);
            }
            save_series(s, dir, "corrector_path", series, cfg, None)?;
        }
        Experiment::EsCheck => {
            let es = efron_stein_check(
                &cfg.law,
                &lat,
                |env| crate::numeric::mean(env.conductances().values()),
                ens.n_env,
                cfg.ensemble.n_resample,
                cfg.seed,
            )?;
            let path = dir.join("efron_stein.json");
            write_text(&path, &serde_json::to_string_pretty(&es)?)?;
            s.artifact(dir, &path);
            s.metric("var_lhs", es.var_lhs);
            s.metric("sum_rhs", es.sum_rhs);
            if let (Some(r), Some(se)) = (es.ratio, es.se_ratio) {
                s.metric("ratio", r);
                s.metric("ratio_se", se);
                s.check((r - 1.0).abs() <= 3.0 * se, || {
                    format!("Efron-Stein ratio {r:.4} not within 3 se ({se:.4}) of 1")
                });
            }
        }
    }
    Ok(summary)
}

fn walk_setup(cfg: &ExperimentConfig, random_start: bool) -> Result<WalkSetup> {
    Ok(WalkSetup {
        xi: cfg.xi(),
        times: cfg.times()?,
        n_walk: cfg.ensemble.n_walk,
        random_start,
    })
}

fn walk_metrics(s: &mut Summary, ensemble: &WalkEnsemble) {
    s.metric("sigma_sq", ensemble.sigma_sq);
    s.metric("total_walks", ensemble.total_walks() as f64);
    s.metric(
        "max_decomposition_residual",
        ensemble.max_decomposition_residual(),
    );
    let worst_z = isometry_check(ensemble)
        .iter()
        .fold(0.0, |m: f64, c| m.max(c.z.abs()));
    s.metric("isometry_max_abs_z", worst_z);
}

fn be_outputs(
    s: &mut Summary,
    dir: &Path,
    report: &BerryEsseenReport,
    d: usize,
    target: Option<f64>,
    margin: f64,
) -> Result<()> {
    let path = dir.join("be.csv");
    report.save(&path)?;
    s.artifact(dir, &path);
    s.metric("sigma_sq_normalization", report.sigma_sq);
    if let Some(rate) = be_rate(d) {
        for (name, ks) in [
            ("position", pick_position as fn(&_) -> f64),
            ("martingale", pick_martingale),
        ] {
            let env = report.envelope_check(ks, rate);
            let mono = report.monotone_check(ks);
            s.metric(&format!("envelope_c_hat_{name}"), env.c_hat);
            s.metric(&format!("envelope_worst_excess_{name}"), env.worst_excess);
            s.metric(
                &format!("monotone_violations_{name}"),
                mono.violations as f64,
            );
            s.check(env.passes, || {
                format!(
                    "{name} KS leaves the calibrated envelope by {:.4}",
                    env.worst_excess
                )
            });
            s.check(mono.passes, || {
                format!("{name} KS is not decreasing above the DKW floor")
            });
        }
    }
    s.record_fit("ks_position", report.fit, target, margin);
    Ok(())
}

fn pick_position(r: &crate::walk::BerryEsseenRow) -> f64 {
    r.ks_position
}

fn pick_martingale(r: &crate::walk::BerryEsseenRow) -> f64 {
    r.ks_martingale
}

/// Writes `environments.csv` and returns the mean scalar coefficient
/// `tr(A) / d` with its standard error.
fn homogenized_metrics(
    s: &mut Summary,
    dir: &Path,
    hom: &[crate::elliptic::HomogenizedMatrix],
) -> Result<(f64, f64)> {
    let d = hom[0].flux.dim();
    let mut headers = vec!["env".to_string()];
    for name in ["flux", "energy"] {
        for i in 0..d {
            for j in 0..d {
                headers.push(format!("{name}_{i}{j}"));
            }
        }
    }
    let mut w = csv_writer();
    w.write_record(&headers)?;
    for (k, h) in hom.iter().enumerate() {
        let mut row = vec![k.to_string()];
        for m in [&h.flux, &h.energy] {
            row.extend(m.rows().iter().flatten().map(|v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    let path = dir.join("environments.csv");
    write_text(&path, &finish_csv(w)?)?;
    s.artifact(dir, &path);
    let flux = Matrix::mean_of(&hom.iter().map(|h| h.flux.clone()).collect::<Vec<_>>())?;
    let energy = Matrix::mean_of(&hom.iter().map(|h| h.energy.clone()).collect::<Vec<_>>())?;
    for i in 0..d {
        for j in 0..d {
            s.metric(&format!("omega_hom_flux_{i}{j}"), flux.get(i, j));
            s.metric(&format!("omega_hom_energy_{i}{j}"), energy.get(i, j));
        }
    }
    s.metric(
        "estimator_discrepancy",
        hom.iter().fold(0.0, |m, h| m.max(h.discrepancy)),
    );
    let scalars: Vec<f64> = hom
        .iter()
        .map(|h| (0..d).map(|i| h.flux.get(i, i)).sum::<f64>() / d as f64)
        .collect();
    let (scalar, se) = stats::mean_stderr(&scalars);
    s.metric("omega_hom_scalar", scalar);
    if se.is_finite() {
        s.metric("omega_hom_scalar_se", se);
    }
    Ok((scalar, se))
}

fn save_series(
    s: &mut Summary,
    dir: &Path,
    name: &str,
    mut series: DecaySeries,
    cfg: &ExperimentConfig,
    target: Option<f64>,
) -> Result<()> {
    series = series.with_context(Some(&cfg.law), cfg.lattice.d, cfg.lattice.side, cfg.seed);
    let fit = if series.is_identically_zero() {
        series
            .meta
            .warnings
            .push("series is identically zero; no fit".into());
        None
    } else {
        series.fit(cfg.fit_window.as_ref())
    };
    for (k, v) in &series.meta.diagnostics {
        s.metric(k, *v);
    }
    s.warnings.extend(series.meta.warnings.iter().cloned());
    let path = dir.join(format!("{name}.csv"));
    series.save(&path)?;
    s.artifact(dir, &path);
    if series.is_identically_zero() {
        s.metric("max_abs_value", 0.0);
        s.fits.push(FitSummary {
            quantity: name.to_string(),
            fit: None,
            target,
            margin: cfg.params.margin,
            flagged: false,
        });
    } else {
        s.record_fit(name, fit, target, cfg.params.margin);
    }
    Ok(())
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn write_columns(path: &Path, headers: &[&str], columns: &[Vec<f64>]) -> Result<()> {
    let mut w = csv_writer();
    w.write_record(headers)?;
    for j in 0..columns[0].len() {
        w.write_record(columns.iter().map(|c| c[j].to_string()))?;
    }
    write_text(path, &finish_csv(w)?)
}

/// Fits the `mean` column (or the second column) of a series CSV.
pub fn fit_csv(path: &Path, window: Option<&FitWindow>) -> Result<RateFit> {
    let table = SeriesTable::read(path)?;
    let values = match table.column("mean") {
        Ok(v) => v,
        Err(_) => table
            .columns
            .first()
            .cloned()
            .ok_or_else(|| Error::Format(format!("{}: no value column", path.display())))?,
    };
    rate_fit(&table.times, &values, None, window)
}

/// Every `summary.json` under `dir`, in path order.
pub fn collect_summaries(dir: &Path) -> Result<Vec<(PathBuf, Summary)>> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&d)
            .map_err(|e| Error::io(&d, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(&d, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for path in entries {
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == SUMMARY_FILE) {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                found.push((path.clone(), serde_json::from_str(&text)?));
            }
        }
    }
    found.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(found)
}

/// One line per fit and per flag of every summary under `dir`.
pub fn summarize_dir(dir: &Path) -> Result<String> {
    let summaries = collect_summaries(dir)?;
    if summaries.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no {SUMMARY_FILE} under {}",
            dir.display()
        )));
    }
    let mut out = String::new();
    for (path, s) in &summaries {
        let run = path.parent().unwrap_or(dir).display();
        let status = if s.flagged() { "FLAG" } else { "ok" };
        out.push_str(&format!("{run}\t{}\t{status}\n", s.experiment.name()));
        for f in &s.fits {
            let fit = f.fit.map_or("no fit".to_string(), |r| {
                format!(
                    "slope {:.4} [{:.4}, {:.4}] R2 {:.3}",
                    r.slope, r.ci_low, r.ci_high, r.r_squared
                )
            });
            let target = f.target.map_or("-".to_string(), |t| format!("{t:.3}"));
            out.push_str(&format!(
                "  {}\t{fit}\ttarget {target}\t{}\n",
                f.quantity,
                if f.flagged { "FLAG" } else { "ok" }
            ));
        }
        for flag in &s.flags {
            out.push_str(&format!("  flag: {flag}\n"));
        }
    }
    Ok(out)
}
