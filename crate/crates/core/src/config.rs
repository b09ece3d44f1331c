//! Experiment configuration: a strict JSON schema with unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::elliptic::GrowthField;
use crate::environment::{EnsembleSpec, EnvironmentLaw};
use crate::error::{Error, Result};
use crate::lattice::{LatticeSpec, TorusLattice};
use crate::series::check_times;
use crate::solver::SolverConfig;
use crate::stats::FitWindow;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Corrector,
    Homogenize,
    Green,
    Ondiag,
    Gradnorm,
    SemigroupDecay,
    VarianceDecay,
    BeAnnealed,
    BeQuenched,
    QvConcentration,
    JumpMoments,
    CorrectorPath,
    EsCheck,
}

impl Experiment {
    pub const ALL: [Experiment; 13] = [
        Experiment::Corrector,
        Experiment::Homogenize,
        Experiment::Green,
        Experiment::Ondiag,
        Experiment::Gradnorm,
        Experiment::SemigroupDecay,
        Experiment::VarianceDecay,
        Experiment::BeAnnealed,
        Experiment::BeQuenched,
        Experiment::QvConcentration,
        Experiment::JumpMoments,
        Experiment::CorrectorPath,
        Experiment::EsCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Corrector => "corrector",
            Experiment::Homogenize => "homogenize",
            Experiment::Green => "green",
            Experiment::Ondiag => "ondiag",
            Experiment::Gradnorm => "gradnorm",
            Experiment::SemigroupDecay => "semigroup-decay",
            Experiment::VarianceDecay => "variance-decay",
            Experiment::BeAnnealed => "be-annealed",
            Experiment::BeQuenched => "be-quenched",
            Experiment::QvConcentration => "qv-concentration",
            Experiment::JumpMoments => "jump-moments",
            Experiment::CorrectorPath => "corrector-path",
            Experiment::EsCheck => "es-check",
        }
    }

    /// Experiments that evolve or simulate along a time grid.
    pub fn needs_times(self) -> bool {
        !matches!(
            self,
            Experiment::Corrector
                | Experiment::Homogenize
                | Experiment::Green
                | Experiment::EsCheck
        )
    }

    pub fn uses_walks(self) -> bool {
        matches!(
            self,
            Experiment::BeAnnealed
                | Experiment::BeQuenched
                | Experiment::QvConcentration
                | Experiment::JumpMoments
                | Experiment::CorrectorPath
        )
    }
}

/// Time grid: explicit values or `points` log/linearly spaced in `[start, end]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeGrid {
    Values(Vec<f64>),
    Log { start: f64, end: f64, points: usize },
    Linear { start: f64, end: f64, points: usize },
}

impl TimeGrid {
    pub fn times(&self) -> Result<Vec<f64>> {
        let spaced = |start: f64, end: f64, points: usize, log: bool| -> Result<Vec<f64>> {
            if points < 2 || !(start < end) || (log && start <= 0.0) {
                return Err(Error::Config(format!(
                    "time grid needs points >= 2 and 0 {} start < end, got ({start}, {end}, {points})",
                    if log { "<" } else { "<=" }
                )));
            }
            Ok((0..points)
                .map(|k| {
                    let s = k as f64 / (points - 1) as f64;
                    match (k, log) {
                        (0, _) => start,
                        (k, _) if k == points - 1 => end,
                        (_, true) => start * (end / start).powf(s),
                        (_, false) => start + (end - start) * s,
                    }
                })
                .collect())
        };
        let times = match *self {
            TimeGrid::Values(ref v) => v.clone(),
            TimeGrid::Log { start, end, points } => spaced(start, end, points, true)?,
            TimeGrid::Linear { start, end, points } => spaced(start, end, points, false)?,
        };
        check_times(&times).map_err(|e| Error::Config(e.to_string()))?;
        Ok(times)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSizes {
    #[serde(default = "one")]
    pub n_env: usize,
    #[serde(default = "default_walks")]
    pub n_walk: usize,
    /// Edge resamples per environment in the Efron-Stein check.
    #[serde(default = "one")]
    pub n_resample: usize,
}

impl Default for EnsembleSizes {
    fn default() -> Self {
        Self {
            n_env: 1,
            n_walk: default_walks(),
            n_resample: 1,
        }
    }
}

fn one() -> usize {
    1
}

fn default_walks() -> usize {
    1000
}

/// Experiment-specific knobs; each experiment reads only the ones it uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Direction; defaults to `e_1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
    /// Weight exponent of the gradient norm.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Moment order: `n` of `E[(P_t u)^{2n}]`, of the Haeusler bound and of
    /// the jump moments; `p` of the Green and growth moments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u32>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Slack added to each target exponent before a fit is flagged.
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Expected scalar homogenized coefficient and its relative band.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<f64>,
    #[serde(default = "default_band")]
    pub band: f64,
    #[serde(default)]
    pub all_sources: bool,
    #[serde(default = "default_growth_field")]
    pub growth_field: GrowthField,
}

fn default_alpha() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    0.05
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_margin() -> f64 {
    0.2
}
fn default_band() -> f64 {
    0.05
}
fn default_growth_field() -> GrowthField {
    GrowthField::Phi
}

impl Default for Params {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all params have defaults")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub lattice: LatticeSpec,
    pub law: EnvironmentLaw,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<TimeGrid>,
    #[serde(default)]
    pub ensemble: EnsembleSizes,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<FitWindow>,
    #[serde(default)]
    pub params: Params,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Every check is reported as a configuration error.
    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|e| match e {
            Error::Config(m) => Error::Config(m),
            e => Error::Config(e.to_string()),
        })
    }

    fn check(&self) -> Result<()> {
        let lat = self.lattice()?;
        self.law.validate()?;
        self.solver.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.experiment.needs_times() {
            match &self.times {
                Some(grid) => {
                    grid.times()?;
                }
                None => {
                    return bad(format!(
                        "experiment '{}' needs a time grid",
                        self.experiment.name()
                    ))
                }
            }
        }
        let e = &self.ensemble;
        if e.n_env == 0 || e.n_walk == 0 || e.n_resample == 0 {
            return bad("ensemble sizes must be >= 1".into());
        }
        if self.experiment == Experiment::EsCheck && e.n_env < 2 {
            return bad("es-check needs n_env >= 2".into());
        }
        if self.experiment.uses_walks()
            && self.experiment != Experiment::BeQuenched
            && e.n_env * e.n_walk < 100
        {
            return bad("walk experiments need n_env * n_walk >= 100".into());
        }
        let p = &self.params;
        if let Some(xi) = &p.xi {
            if xi.len() != lat.dim()
                || xi.iter().all(|&v| v == 0.0)
                || xi.iter().any(|v| !v.is_finite())
            {
                return bad(format!(
                    "xi must be a finite nonzero vector of length {}",
                    lat.dim()
                ));
            }
        }
        if !(p.alpha >= 0.0)
            || !(p.delta > 0.0 && p.delta < 1.0)
            || !(p.epsilon > 0.0)
            || !(p.band > 0.0)
            || !p.margin.is_finite()
        {
            return bad(
                "params out of range: need alpha >= 0, 0 < delta < 1, epsilon > 0, band > 0".into(),
            );
        }
        if p.order == Some(0) {
            return bad("order must be >= 1".into());
        }
        if let Some(w) = &self.fit_window {
            if let (Some(a), Some(b)) = (w.t_min, w.t_max) {
                if !(a < b) {
                    return bad(format!("fit window {a}:{b} is empty"));
                }
            }
        }
        Ok(())
    }

    pub fn lattice(&self) -> Result<TorusLattice> {
        TorusLattice::try_from(self.lattice)
    }

    pub fn times(&self) -> Result<Vec<f64>> {
        self.times
            .as_ref()
            .ok_or_else(|| Error::Config("missing time grid".into()))?
            .times()
    }

    pub fn ensemble(&self) -> Result<EnsembleSpec> {
        Ok(EnsembleSpec::new(
            self.law.clone(),
            self.lattice()?,
            self.ensemble.n_env,
            self.seed,
        ))
    }

    pub fn xi(&self) -> Vec<f64> {
        self.params
            .xi
            .clone()
            .unwrap_or_else(|| crate::elliptic::unit(self.lattice.d, 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "experiment": "ondiag",
        "lattice": {"d": 2, "side": 8},
        "law": {"kind": "uniform_elliptic", "c": 2.0},
        "times": {"log": {"start": 1, "end": 16, "points": 5}},
        "seed": 7
    }"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.experiment, Experiment::Ondiag);
        assert_eq!(cfg.ensemble.n_env, 1);
        assert_eq!(cfg.solver, SolverConfig::default());
        assert_eq!(cfg.times().unwrap(), vec![1.0, 2.0, 4.0, 8.0, 16.0]);
        assert_eq!(cfg.xi(), vec![1.0, 0.0]);
    }

    #[test]
    fn round_trips() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_unknown_keys_everywhere() {
        let top = MINIMAL.replace("\"seed\": 7", "\"seed\": 7, \"colour\": 1");
        let nested = MINIMAL.replace("\"d\": 2,", "\"d\": 2, \"depth\": 3,");
        let law = MINIMAL.replace("\"c\": 2.0", "\"c\": 2.0, \"p\": 1");
        for text in [top, nested, law] {
            assert!(
                matches!(ExperimentConfig::from_json(&text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn rejects_out_of_range_values() {
        for (from, to) in [
            ("\"side\": 8", "\"side\": 1"),
            ("\"c\": 2.0", "\"c\": 0.5"),
            ("\"start\": 1", "\"start\": 0"),
            ("\"seed\": 7", "\"seed\": 7, \"ensemble\": {\"n_env\": 0}"),
            ("\"seed\": 7", "\"seed\": 7, \"params\": {\"delta\": 1.5}"),
            ("\"seed\": 7", "\"seed\": 7, \"params\": {\"xi\": [1.0]}"),
            (
                "\"experiment\": \"ondiag\"",
                "\"experiment\": \"ondiagonal\"",
            ),
        ] {
            let text = MINIMAL.replace(from, to);
            assert!(
                matches!(ExperimentConfig::from_json(&text), Err(Error::Config(_))),
                "{to}"
            );
        }
        let no_times = MINIMAL.replace(
            "\"times\": {\"log\": {\"start\": 1, \"end\": 16, \"points\": 5}},",
            "",
        );
        assert!(ExperimentConfig::from_json(&no_times).is_err());
    }

    #[test]
    fn experiment_names_match_serde() {
        for e in Experiment::ALL {
            assert_eq!(
                serde_json::to_string(&e).unwrap(),
                format!("\"{}\"", e.name())
            );
        }
    }
}
