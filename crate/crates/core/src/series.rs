//! Ensemble time series with quantile bands, CSV persistence and rate fits.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::environment::EnvironmentLaw;
use crate::error::{ensure, Error, Result};
use crate::numeric;
use crate::stats::{self, rate_fit, FitWindow, RateFit};

pub const SERIES_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesMetadata {
    pub schema_version: u32,
    pub quantity: String,
    pub law: Option<EnvironmentLaw>,
    pub d: usize,
    pub side: usize,
    pub n_env: usize,
    pub seed: u64,
    pub fit_window: Option<FitWindow>,
    pub fit: Option<RateFit>,
    #[serde(default)]
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Per-time ensemble statistics. `variance` is the variance of `mean` as an
/// estimator and drives the fit weights; it is not written to the CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct DecaySeries {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub q10: Vec<f64>,
    pub q50: Vec<f64>,
    pub q90: Vec<f64>,
    pub n_eff: Vec<usize>,
    pub variance: Vec<f64>,
    pub meta: SeriesMetadata,
}

impl DecaySeries {
    /// `per_env[k][j]` is environment `k`'s value at `times[j]`.
    pub fn from_samples(quantity: &str, times: &[f64], per_env: &[Vec<f64>]) -> Result<Self> {
        Self::from_moments(quantity, times, per_env, 1.0)
    }

    /// `per_env[k][j]` is a moment `E_k[|X|^order]` for environment `k`.
    /// The pooled value is `(mean_k moment)^{1/order}`; quantiles are over
    /// the per-environment values `moment^{1/order}`.
    pub fn from_moments(
        quantity: &str,
        times: &[f64],
        per_env: &[Vec<f64>],
        order: f64,
    ) -> Result<Self> {
        check_times(times)?;
        ensure(!per_env.is_empty(), || {
            "series needs at least one environment".into()
        })?;
        ensure(per_env.iter().all(|v| v.len() == times.len()), || {
            "per-environment rows must match the time grid".into()
        })?;
        let n = per_env.len();
        let mut out = Self {
            times: times.to_vec(),
            mean: Vec::with_capacity(times.len()),
            q10: Vec::new(),
            q50: Vec::new(),
            q90: Vec::new(),
            n_eff: vec![n; times.len()],
            variance: Vec::new(),
            meta: SeriesMetadata {
                schema_version: SERIES_SCHEMA_VERSION,
                quantity: quantity.to_string(),
                n_env: n,
                ..Default::default()
            },
        };
        for j in 0..times.len() {
            let column: Vec<f64> = per_env.iter().map(|v| v[j]).collect();
            let m = numeric::mean(&column);
            let var_m = if n > 1 {
                stats::sample_variance(&column) / n as f64
            } else {
                f64::NAN
            };
            let value = m.max(0.0).powf(1.0 / order);
            // delta method for m^{1/order}
            let slope = if m > 0.0 { value / (order * m) } else { 0.0 };
            let mut roots: Vec<f64> = column
                .iter()
                .map(|v| v.max(0.0).powf(1.0 / order))
                .collect();
            roots.sort_by(f64::total_cmp);
            out.mean.push(value);
            out.q10.push(stats::quantile_sorted(&roots, 0.1));
            out.q50.push(stats::quantile_sorted(&roots, 0.5));
            out.q90.push(stats::quantile_sorted(&roots, 0.9));
            out.variance.push(var_m * slope * slope);
        }
        Ok(out)
    }

    pub fn with_context(
        mut self,
        law: Option<&EnvironmentLaw>,
        d: usize,
        side: usize,
        seed: u64,
    ) -> Self {
        self.meta.law = law.cloned();
        self.meta.d = d;
        self.meta.side = side;
        self.meta.seed = seed;
        self
    }

    pub fn is_identically_zero(&self) -> bool {
        self.mean.iter().all(|&v| v == 0.0)
    }

    /// Fits `mean ~ t^slope`; stores the fit (or a warning) in the metadata.
    pub fn fit(&mut self, window: Option<&FitWindow>) -> Option<RateFit> {
        let var = self
            .variance
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
            .then_some(self.variance.as_slice());
        match rate_fit(&self.times, &self.mean, var, window) {
            Ok(fit) => {
                self.meta.fit_window = Some(fit.window);
                self.meta.fit = Some(fit);
                Some(fit)
            }
            Err(e) => {
                self.meta.fit_window = window.copied();
                self.meta.fit = None;
                self.meta.warnings.push(format!("no rate fit: {e}"));
                None
            }
        }
    }

    pub fn slope(&self) -> Option<f64> {
        self.meta.fit.map(|f| f.slope)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(["t", "mean", "q10", "q50", "q90", "n_eff"])?;
        for j in 0..self.times.len() {
            w.write_record([
                self.times[j].to_string(),
                self.mean[j].to_string(),
                self.q10[j].to_string(),
                self.q50[j].to_string(),
                self.q90[j].to_string(),
                self.n_eff[j].to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    /// Writes `path` (CSV) and `path.json` (metadata).
    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv_string()?)?;
        write_text(&sidecar(path), &serde_json::to_string_pretty(&self.meta)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let table = SeriesTable::read(path)?;
        let side = sidecar(path);
        let meta: SeriesMetadata = if side.exists() {
            serde_json::from_str(&std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?)?
        } else {
            SeriesMetadata::default()
        };
        let col = |name: &str| table.column(name);
        Ok(Self {
            times: table.times.clone(),
            mean: col("mean")?,
            q10: col("q10")?,
            q50: col("q50")?,
            q90: col("q90")?,
            n_eff: col("n_eff")?.iter().map(|&v| v as usize).collect(),
            variance: vec![f64::NAN; table.times.len()],
            meta,
        })
    }
}

/// A CSV whose first column is `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesTable {
    pub headers: Vec<String>,
    pub times: Vec<f64>,
    pub columns: Vec<Vec<f64>>,
}

impl SeriesTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        ensure(headers.first().map(String::as_str) == Some("t"), || {
            format!("{}: first column must be 't'", path.display())
        })?;
        let mut times = Vec::new();
        let mut columns = vec![Vec::new(); headers.len() - 1];
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("{}: bad number '{s}'", path.display())))
            };
            times.push(parse(&rec[0])?);
            for (c, col) in columns.iter_mut().enumerate() {
                col.push(parse(&rec[c + 1])?);
            }
        }
        Ok(Self {
            headers,
            times,
            columns,
        })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .headers
            .iter()
            .position(|h| h == name)
            .filter(|&k| k > 0)
            .ok_or_else(|| Error::Format(format!("missing column '{name}'")))?;
        Ok(self.columns[k - 1].clone())
    }
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn check_times(times: &[f64]) -> Result<()> {
    ensure(!times.is_empty(), || "empty time grid".into())?;
    ensure(times.iter().all(|t| t.is_finite() && *t >= 0.0), || {
        "times must be finite and >= 0".into()
    })?;
    ensure(times.windows(2).all(|w| w[0] < w[1]), || {
        "times must be strictly increasing".into()
    })
}
