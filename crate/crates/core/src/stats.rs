//! Statistics shared by the experiments: normal CDF, Kolmogorov distance,
//! DKW floors, quantiles and log-log rate fits.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{ensure, Error, Result};
use crate::numeric::{self, CompensatedSum};

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `sup_x |F_n(sigma x sqrt(t)) - Phi(x)|` for the empirical distribution of
/// `samples`, evaluated exactly at the jump points.
pub fn kolmogorov_distance(samples: &[f64], sigma: f64, t: f64) -> Result<f64> {
    ensure(!samples.is_empty(), || {
        "Kolmogorov distance of an empty sample".into()
    })?;
    ensure(sigma > 0.0, || format!("sigma must be > 0, got {sigma}"))?;
    ensure(t > 0.0, || format!("t must be > 0, got {t}"))?;
    let scale = sigma * t.sqrt();
    let mut z: Vec<f64> = samples.iter().map(|s| s / scale).collect();
    z.sort_by(f64::total_cmp);
    Ok(ks_sorted(&z))
}

/// Kolmogorov distance of sorted standardized samples against `Phi`.
pub(crate) fn ks_sorted(z: &[f64]) -> f64 {
    let n = z.len() as f64;
    z.iter().enumerate().fold(0.0, |acc: f64, (i, &v)| {
        let phi = normal_cdf(v);
        let upper = (i + 1) as f64 / n - phi;
        let lower = phi - i as f64 / n;
        acc.max(upper).max(lower)
    })
}

/// Dvoretzky-Kiefer-Wolfowitz half-width `sqrt(ln(2/delta) / 2n)`.
pub fn dkw_floor(n: usize, delta: f64) -> f64 {
    ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt()
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

/// Sample mean and its standard error.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = numeric::mean(xs);
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let var = numeric::sum(xs.iter().map(|v| (v - m) * (v - m))) / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = numeric::mean(xs);
    numeric::sum(xs.iter().map(|v| (v - m) * (v - m))) / (n - 1.0)
}

/// Weighted least squares line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
    pub n: usize,
}

pub fn linear_regression(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<LinearFit> {
    ensure(x.len() == y.len(), || {
        "regression inputs differ in length".into()
    })?;
    ensure(x.len() >= 2, || {
        format!("need at least 2 points, got {}", x.len())
    })?;
    let w: Vec<f64> = match weights {
        Some(w) => w.to_vec(),
        None => vec![1.0; x.len()],
    };
    let sw = numeric::sum(w.iter().copied());
    let mx = numeric::sum(w.iter().zip(x).map(|(w, x)| w * x)) / sw;
    let my = numeric::sum(w.iter().zip(y).map(|(w, y)| w * y)) / sw;
    let mut sxx = CompensatedSum::new();
    let mut sxy = CompensatedSum::new();
    let mut syy = CompensatedSum::new();
    for k in 0..x.len() {
        let dx = x[k] - mx;
        let dy = y[k] - my;
        sxx.add(w[k] * dx * dx);
        sxy.add(w[k] * dx * dy);
        syy.add(w[k] * dy * dy);
    }
    let (sxx, sxy, syy) = (sxx.value(), sxy.value(), syy.value());
    ensure(sxx > 0.0, || "regression abscissae are all equal".into())?;
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr = numeric::sum((0..x.len()).map(|k| {
        let r = y[k] - intercept - slope * x[k];
        w[k] * r * r
    }));
    let n = x.len();
    let slope_stderr = if n > 2 {
        (ssr / (n - 2) as f64 / sxx).sqrt()
    } else {
        f64::NAN
    };
    let r_squared = if syy > 0.0 {
        (1.0 - ssr / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr,
        r_squared,
        n,
    })
}

/// Range of times included in a fit. Unset bounds are open.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitWindow {
    #[serde(default)]
    pub t_min: Option<f64>,
    #[serde(default)]
    pub t_max: Option<f64>,
}

impl FitWindow {
    pub fn new(t_min: f64, t_max: f64) -> Self {
        Self {
            t_min: Some(t_min),
            t_max: Some(t_max),
        }
    }

    /// Drops the smallest quartile of the given (increasing) times.
    pub fn drop_first_quartile(times: &[f64]) -> Self {
        Self {
            t_min: times.get(times.len() / 4).copied(),
            t_max: None,
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.t_min.is_none_or(|lo| t >= lo) && self.t_max.is_none_or(|hi| t <= hi)
    }

    /// Parses `a:b`, either side may be empty.
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s.split_once(':').ok_or_else(|| {
            Error::InvalidParameter(format!("window '{s}' is not of the form a:b"))
        })?;
        let parse = |v: &str| -> Result<Option<f64>> {
            if v.trim().is_empty() {
                Ok(None)
            } else {
                v.trim()
                    .parse()
                    .map(Some)
                    .map_err(|_| Error::InvalidParameter(format!("bad window bound '{v}'")))
            }
        };
        Ok(Self {
            t_min: parse(a)?,
            t_max: parse(b)?,
        })
    }
}

/// Power-law fit `value ~ exp(intercept) * t^slope` on log-log axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub r_squared: f64,
    pub window: FitWindow,
    pub n_points: usize,
}

/// Weighted least squares on `(log t, log value)` over `window` (default:
/// drop the smallest quartile of times). `variances` are variances of the
/// values; when given (and all positive) the weights are `value^2 / var`.
pub fn rate_fit(
    times: &[f64],
    values: &[f64],
    variances: Option<&[f64]>,
    window: Option<&FitWindow>,
) -> Result<RateFit> {
    ensure(times.len() == values.len(), || {
        "times and values differ in length".into()
    })?;
    let window = window
        .copied()
        .unwrap_or_else(|| FitWindow::drop_first_quartile(times));
    let idx: Vec<usize> = (0..times.len())
        .filter(|&k| window.contains(times[k]))
        .collect();
    ensure(idx.len() >= 3, || {
        format!(
            "need at least 3 points in the fit window, got {}",
            idx.len()
        )
    })?;
    fit_indices(times, values, variances, &idx, window)
}

/// Log-log fit over every point with positive abscissa, at least two points.
pub fn loglog_fit(xs: &[f64], values: &[f64]) -> Result<RateFit> {
    let idx: Vec<usize> = (0..xs.len()).filter(|&k| xs[k] > 0.0).collect();
    ensure(idx.len() >= 2, || {
        format!("need at least 2 points, got {}", idx.len())
    })?;
    fit_indices(xs, values, None, &idx, FitWindow::default())
}

fn fit_indices(
    times: &[f64],
    values: &[f64],
    variances: Option<&[f64]>,
    idx: &[usize],
    window: FitWindow,
) -> Result<RateFit> {
    for &k in idx {
        if !(values[k] > 0.0) || !(times[k] > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "log-log fit needs positive data, got ({}, {}) at index {k}",
                times[k], values[k]
            )));
        }
    }
    let x: Vec<f64> = idx.iter().map(|&k| times[k].ln()).collect();
    let y: Vec<f64> = idx.iter().map(|&k| values[k].ln()).collect();
    let weights: Option<Vec<f64>> = variances.and_then(|var| {
        let w: Vec<f64> = idx
            .iter()
            .map(|&k| values[k] * values[k] / var[k])
            .collect();
        w.iter().all(|w| w.is_finite() && *w > 0.0).then_some(w)
    });
    let fit = linear_regression(&x, &y, weights.as_deref())?;
    let half = if fit.n > 2 && fit.slope_stderr.is_finite() {
        let t = StudentsT::new(0.0, 1.0, (fit.n - 2) as f64)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        t.inverse_cdf(0.975) * fit.slope_stderr
    } else {
        f64::NAN
    };
    Ok(RateFit {
        slope: fit.slope,
        intercept: fit.intercept,
        slope_stderr: fit.slope_stderr,
        ci_low: fit.slope - half,
        ci_high: fit.slope + half,
        r_squared: fit.r_squared,
        window,
        n_points: fit.n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn normal_cdf_reference_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        let err = (normal_cdf(1.0) - 0.841_344_746_068_542_9).abs();
        assert!(err < 1e-12, "{err:e}");
        assert!((normal_cdf(-3.0) - 0.001_349_898_031_630_094_6).abs() < 1e-16);
    }

    #[test]
    fn two_point_sample_distance() {
        let d = kolmogorov_distance(&[-1.0, 1.0], 1.0, 1.0).unwrap();
        assert!((d - (normal_cdf(1.0) - 0.5)).abs() < 1e-14);
        assert!((d - 0.341345).abs() < 1e-6);
    }

    #[test]
    fn single_sample_distance_is_half() {
        assert_eq!(kolmogorov_distance(&[0.0], 2.0, 3.0).unwrap(), 0.5);
        assert!(kolmogorov_distance(&[], 1.0, 1.0).is_err());
    }

    #[test]
    fn distance_is_scale_invariant() {
        let s = [0.3, -1.2, 2.5, 0.0, 0.7];
        let a = kolmogorov_distance(&s, 1.5, 4.0).unwrap();
        let scaled: Vec<f64> = s.iter().map(|v| v * 7.0).collect();
        let b = kolmogorov_distance(&scaled, 1.5 * 7.0, 4.0).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn gaussian_samples_converge_at_root_n() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 2.0 * 3f64.sqrt()).unwrap();
        for n in [1_000usize, 100_000] {
            let s: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            let d = kolmogorov_distance(&s, 2.0, 3.0).unwrap();
            assert!(d < dkw_floor(n, 0.001), "n={n}: {d}");
        }
    }

    #[test]
    fn exact_power_laws_are_recovered() {
        let t: Vec<f64> = (1..=10).map(|k| k as f64 * 2.0).collect();
        let v: Vec<f64> = t.iter().map(|t| 1.0 / t).collect();
        let fit = rate_fit(&t, &v, None, Some(&FitWindow::default())).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        let v: Vec<f64> = t.iter().map(|t| 5.0 * t.powf(-0.5)).collect();
        let fit = rate_fit(&t, &v, None, Some(&FitWindow::default())).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 5f64.ln()).abs() < 1e-12);
        assert!(fit.ci_low <= fit.slope && fit.slope <= fit.ci_high);
    }

    #[test]
    fn rate_fit_rejects_bad_input() {
        let t = [1.0, 2.0, 3.0, 4.0];
        assert!(rate_fit(&t, &[1.0, 0.0, 1.0, 1.0], None, Some(&FitWindow::default())).is_err());
        assert!(rate_fit(
            &t,
            &[1.0, 1.0, 1.0, 1.0],
            None,
            Some(&FitWindow::new(3.5, 10.0))
        )
        .is_err());
    }

    #[test]
    fn default_window_drops_first_quartile() {
        let t: Vec<f64> = (1..=8).map(|k| k as f64).collect();
        let w = FitWindow::drop_first_quartile(&t);
        assert_eq!(w.t_min, Some(3.0));
        let fit = rate_fit(&t, &t, None, None).unwrap();
        assert_eq!(fit.n_points, 6);
    }

    #[test]
    fn window_parsing() {
        assert_eq!(FitWindow::parse("4:64").unwrap(), FitWindow::new(4.0, 64.0));
        assert_eq!(FitWindow::parse(":8").unwrap().t_min, None);
        assert!(FitWindow::parse("4-64").is_err());
    }
}
