//! Extraction of `T2` and `p` from `L(t) ≈ exp[-(t/T2)^p]`.
//!
//! Three procedures are offered:
//!
//! * [`FitMethod::Exponential`]: least squares of `exp[-(t/T2)^p]` against `L(t)`.
//! * [`FitMethod::Power`]: least squares of `(t/T2)^p` against `-ln L(t)`.
//! * [`FitMethod::Linear`]: straight line through `ln(-ln L)` versus `ln t`.
//!
//! The two nonlinear fits use a damped Gauss–Newton iteration on `(ln T2, p)` with
//! analytic Jacobians, started from the linear fit. Damping follows the usual
//! Levenberg schedule: `λ` starts at 1e-3, is divided by 3 after an accepted step
//! and multiplied by 4 after a rejected one.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::linear_regression;

/// Fewer surviving points than this and no fit is attempted.
pub const MIN_POINTS: usize = 5;

/// Log-based fits drop points with `-ln L` below this value.
pub const LOG_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Exponential,
    Power,
    Linear,
}

impl FitMethod {
    pub const ALL: [FitMethod; 3] = [FitMethod::Exponential, FitMethod::Power, FitMethod::Linear];

    /// Whether the method works on `-ln L`.
    pub fn is_log_based(self) -> bool {
        !matches!(self, FitMethod::Exponential)
    }

    pub fn name(self) -> &'static str {
        match self {
            FitMethod::Exponential => "exponential",
            FitMethod::Power => "power",
            FitMethod::Linear => "linear",
        }
    }
}

impl fmt::Display for FitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" | "exp" => Ok(FitMethod::Exponential),
            "power" => Ok(FitMethod::Power),
            "linear" | "loglog" => Ok(FitMethod::Linear),
            _ => Err(Error::invalid("fit_method", "expected exponential, power or linear")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Per-point weights aligned with the input; `None` is unweighted.
    pub weights: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iter: 200,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// ms
    pub t2: f64,
    pub p: f64,
    /// Covariance of `(T2, p)`.
    pub covariance: [[f64; 2]; 2],
    pub method: FitMethod,
    /// Truncation level `L_f` when the fit came from [`fit_curve`].
    pub truncation: Option<f64>,
    pub points_used: usize,
    /// Root of the (weighted) residual sum of squares in the fitted space.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn t2_std(&self) -> f64 {
        libm::sqrt(self.covariance[0][0].max(0.0))
    }

    pub fn p_std(&self) -> f64 {
        libm::sqrt(self.covariance[1][1].max(0.0))
    }
}

/// Points of a curve kept for fitting, with their indices in the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncated {
    pub indices: Vec<usize>,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Keep the decay range `1 > L(t) > L_f` at `t > 0`.
///
/// The range ends at the first point with `L <= L_f`, so later excursions of a noisy
/// tail back above `L_f` are not used. With `log_based` points with `-ln L < 1e-3`
/// are dropped as well.
pub fn truncate_curve(times: &[f64], values: &[f64], l_f: f64, log_based: bool) -> Result<Truncated> {
    if !(l_f > 0.0 && l_f < 1.0) {
        return Err(Error::invalid("l_f", "truncation level must lie in (0, 1)"));
    }
    if times.len() != values.len() {
        return Err(Error::invalid("curve", "times and values differ in length"));
    }
    let mut out = Truncated {
        indices: Vec::new(),
        times: Vec::new(),
        values: Vec::new(),
    };
    for (i, (&t, &l)) in times.iter().zip(values).enumerate() {
        if t <= 0.0 {
            continue;
        }
        if !(l > l_f) {
            break;
        }
        if l >= 1.0 || (log_based && -libm::log(l) < LOG_FLOOR) {
            continue;
        }
        out.indices.push(i);
        out.times.push(t);
        out.values.push(l);
    }
    if out.indices.len() < MIN_POINTS {
        return Err(Error::TooFewPoints {
            found: out.indices.len(),
            needed: MIN_POINTS,
        });
    }
    Ok(out)
}

/// Truncate at `l_f` and fit with `method`.
pub fn fit_curve(times: &[f64], values: &[f64], method: FitMethod, l_f: f64, options: &FitOptions) -> Result<FitResult> {
    let kept = truncate_curve(times, values, l_f, method.is_log_based())?;
    let opts = FitOptions {
        weights: options
            .weights
            .as_ref()
            .map(|w| kept.indices.iter().map(|&i| w[i]).collect()),
        ..options.clone()
    };
    let mut result = fit(method, &kept.times, &kept.values, &opts)?;
    result.truncation = Some(l_f);
    Ok(result)
}

pub fn fit(method: FitMethod, times: &[f64], values: &[f64], options: &FitOptions) -> Result<FitResult> {
    match method {
        FitMethod::Exponential => fit_exponential(times, values, options),
        FitMethod::Power => fit_power(times, values, options),
        FitMethod::Linear => fit_linear_loglog(times, values, options),
    }
}

fn check_input(times: &[f64], values: &[f64], options: &FitOptions) -> Result<()> {
    if times.len() != values.len() {
        return Err(Error::invalid("curve", "times and values differ in length"));
    }
    if let Some(w) = &options.weights {
        if w.len() != times.len() || w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::invalid("weights", "need one finite non-negative weight per point"));
        }
    }
    if times.iter().chain(values).any(|x| !x.is_finite()) {
        return Err(Error::invalid("curve", "non-finite data"));
    }
    if times.len() < MIN_POINTS {
        return Err(Error::TooFewPoints {
            found: times.len(),
            needed: MIN_POINTS,
        });
    }
    Ok(())
}

/// Points usable on log axes: `t > 0` and `0 < L < 1`.
fn log_points(times: &[f64], values: &[f64], weights: Option<&[f64]>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    for i in 0..times.len() {
        let (t, l) = (times[i], values[i]);
        if t > 0.0 && l > 0.0 && l < 1.0 {
            x.push(libm::log(t));
            y.push(libm::log(-libm::log(l)));
            w.push(weights.map_or(1.0, |w| w[i]));
        }
    }
    (x, y, w)
}

/// Closed-form straight-line fit of `ln(-ln L)` against `ln t`.
pub fn fit_linear_loglog(times: &[f64], values: &[f64], options: &FitOptions) -> Result<FitResult> {
    check_input(times, values, options)?;
    let (x, y, w) = log_points(times, values, options.weights.as_deref());
    if x.len() < MIN_POINTS {
        return Err(Error::TooFewPoints {
            found: x.len(),
            needed: MIN_POINTS,
        });
    }
    let line = linear_regression(&x, &y, Some(&w))?;
    let p = line.slope;
    if !(p > 0.0) {
        return Err(Error::Degenerate(alloc::format!("log-log slope {p} is not positive")));
    }
    let b = line.intercept;
    let t2 = libm::exp(-b / p);
    // (T2, p) as functions of (slope, intercept)
    let jac = [[t2 * b / (p * p), -t2 / p], [1.0, 0.0]];
    let covariance = propagate(&jac, &line.covariance);
    Ok(FitResult {
        t2,
        p,
        covariance,
        method: FitMethod::Linear,
        truncation: None,
        points_used: x.len(),
        residual_norm: libm::sqrt(line.rss),
        converged: true,
        iterations: 0,
    })
}

/// `J Σ Jᵀ` for 2×2 matrices.
fn propagate(jac: &[[f64; 2]; 2], cov: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    acc += jac[i][a] * cov[a][b] * jac[j][b];
                }
            }
            out[i][j] = acc;
        }
    }
    let sym = 0.5 * (out[0][1] + out[1][0]);
    out[0][1] = sym;
    out[1][0] = sym;
    out
}

#[derive(Clone, Copy)]
enum Model {
    /// `exp[-(t/T2)^p]` against `L`
    Stretched,
    /// `(t/T2)^p` against `-ln L`
    Power,
}

impl Model {
    /// Model value and derivatives with respect to `(ln T2, p)`.
    fn eval(self, t: f64, ln_t2: f64, p: f64) -> (f64, f64, f64) {
        if t <= 0.0 {
            return match self {
                Model::Stretched => (1.0, 0.0, 0.0),
                Model::Power => (0.0, 0.0, 0.0),
            };
        }
        let log_ratio = libm::log(t) - ln_t2;
        let u = libm::exp(p * log_ratio);
        match self {
            Model::Stretched => {
                let f = libm::exp(-u);
                (f, f * p * u, -f * u * log_ratio)
            }
            Model::Power => (u, -p * u, u * log_ratio),
        }
    }
}

fn cost(model: Model, t: &[f64], y: &[f64], w: &[f64], ln_t2: f64, p: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..t.len() {
        let r = model.eval(t[i], ln_t2, p).0 - y[i];
        acc += w[i] * r * r;
    }
    acc
}

fn initial_guess(times: &[f64], values: &[f64]) -> (f64, f64) {
    let mut t = Vec::new();
    let mut l = Vec::new();
    for (&ti, &li) in times.iter().zip(values) {
        if ti > 0.0 && li > 0.0 && li < 1.0 && -libm::log(li) >= LOG_FLOOR {
            t.push(ti);
            l.push(li);
        }
    }
    let (x, y, _) = log_points(&t, &l, None);
    if x.len() >= 2 {
        if let Ok(line) = linear_regression(&x, &y, None) {
            if line.slope > 0.0 && line.slope.is_finite() && line.intercept.is_finite() {
                return (-line.intercept / line.slope, line.slope);
            }
        }
    }
    // time at which L comes closest to 1/e
    let target = libm::exp(-1.0);
    let t_e = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t > 0.0)
        .min_by(|a, b| libm::fabs(*a.1 - target).total_cmp(&libm::fabs(*b.1 - target)))
        .map_or(1.0, |(t, _)| *t);
    (libm::log(t_e), 1.0)
}

fn gauss_newton(model: Model, method: FitMethod, t: &[f64], y: &[f64], values: &[f64], options: &FitOptions) -> Result<FitResult> {
    let n = t.len();
    let w: Vec<f64> = options.weights.clone().unwrap_or_else(|| alloc::vec![1.0; n]);
    let (mut ln_t2, mut p) = initial_guess(t, values);
    let mut current = cost(model, t, y, &w, ln_t2, p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iter && !converged {
        iterations += 1;
        let (mut a00, mut a01, mut a11, mut g0, mut g1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let (f, d0, d1) = model.eval(t[i], ln_t2, p);
            let r = f - y[i];
            a00 += w[i] * d0 * d0;
            a01 += w[i] * d0 * d1;
            a11 += w[i] * d1 * d1;
            g0 += w[i] * d0 * r;
            g1 += w[i] * d1 * r;
        }
        if current == 0.0 || (g0 == 0.0 && g1 == 0.0) {
            converged = true;
            break;
        }
        loop {
            let (m00, m11) = (a00 * (1.0 + lambda), a11 * (1.0 + lambda));
            let det = m00 * m11 - a01 * a01;
            if !(det.abs() > 0.0) || !det.is_finite() {
                lambda *= 4.0;
            } else {
                let step0 = -(m11 * g0 - a01 * g1) / det;
                let step1 = -(m00 * g1 - a01 * g0) / det;
                let (trial_t2, trial_p) = (ln_t2 + step0, p + step1);
                let trial = if trial_p > 0.0 && trial_t2.is_finite() {
                    cost(model, t, y, &w, trial_t2, trial_p)
                } else {
                    f64::INFINITY
                };
                if trial <= current {
                    let small = libm::fabs(libm::expm1(step0)) <= options.rel_tol
                        && libm::fabs(step1) <= options.rel_tol * libm::fabs(p);
                    ln_t2 = trial_t2;
                    p = trial_p;
                    current = trial;
                    lambda = (lambda / 3.0).max(1e-15);
                    converged = small;
                    break;
                }
                lambda *= 4.0;
            }
            if lambda > 1e16 {
                // no descent direction left at working precision
                let grad = libm::sqrt(g0 * g0 + g1 * g1);
                let scale = libm::sqrt((a00 + a11) * current).max(f64::MIN_POSITIVE);
                converged = grad <= 1e-6 * scale;
                iterations = options.max_iter;
                break;
            }
        }
    }

    // covariance in (ln T2, p), then mapped to (T2, p)
    let (mut a00, mut a01, mut a11) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (_, d0, d1) = model.eval(t[i], ln_t2, p);
        a00 += w[i] * d0 * d0;
        a01 += w[i] * d0 * d1;
        a11 += w[i] * d1 * d1;
    }
    let det = a00 * a11 - a01 * a01;
    let sigma2 = if n > 2 { current / (n - 2) as f64 } else { 0.0 };
    let cov_log = if det > 0.0 {
        [[sigma2 * a11 / det, -sigma2 * a01 / det], [-sigma2 * a01 / det, sigma2 * a00 / det]]
    } else {
        [[f64::INFINITY, 0.0], [0.0, f64::INFINITY]]
    };
    let t2 = libm::exp(ln_t2);
    let covariance = propagate(&[[t2, 0.0], [0.0, 1.0]], &cov_log);

    Ok(FitResult {
        t2,
        p,
        covariance,
        method,
        truncation: None,
        points_used: n,
        residual_norm: libm::sqrt(current),
        converged,
        iterations,
    })
}

/// Nonlinear least squares of `exp[-(t/T2)^p]` against `L(t)`.
pub fn fit_exponential(times: &[f64], values: &[f64], options: &FitOptions) -> Result<FitResult> {
    check_input(times, values, options)?;
    if values.iter().any(|&l| !(l > 0.0 && l <= 1.0)) {
        return Err(Error::invalid("curve", "exponential fit needs 0 < L <= 1"));
    }
    if values.iter().all(|&l| l == 1.0) {
        return Err(Error::Degenerate("coherence never decays".into()));
    }
    gauss_newton(Model::Stretched, FitMethod::Exponential, times, values, values, options)
}

/// Nonlinear least squares of `(t/T2)^p` against `-ln L(t)`; points with `L >= 1`
/// are excluded before taking the logarithm.
pub fn fit_power(times: &[f64], values: &[f64], options: &FitOptions) -> Result<FitResult> {
    check_input(times, values, options)?;
    let mut t = Vec::new();
    let mut l = Vec::new();
    let mut w = Vec::new();
    for i in 0..times.len() {
        if values[i] > 0.0 && values[i] < 1.0 {
            t.push(times[i]);
            l.push(values[i]);
            w.push(options.weights.as_ref().map_or(1.0, |w| w[i]));
        }
    }
    if t.len() < MIN_POINTS {
        return Err(Error::TooFewPoints {
            found: t.len(),
            needed: MIN_POINTS,
        });
    }
    let y: Vec<f64> = l.iter().map(|&v| -libm::log(v)).collect();
    let opts = FitOptions {
        weights: Some(w),
        ..options.clone()
    };
    gauss_newton(Model::Power, FitMethod::Power, &t, &y, &l, &opts)
}

/// Centered finite-difference slope of `ln(-ln L)` against `ln t`, the local `p`.
///
/// Points without two valid neighbours (`t > 0`, `0 < L < 1`) get `NaN`.
pub fn local_slope(times: &[f64], values: &[f64]) -> Vec<(f64, f64)> {
    let valid = |i: usize| times[i] > 0.0 && values[i] > 0.0 && values[i] < 1.0;
    let x = |i: usize| libm::log(times[i]);
    let y = |i: usize| libm::log(-libm::log(values[i]));
    (0..times.len())
        .map(|i| {
            let slope = if i > 0 && i + 1 < times.len() && valid(i - 1) && valid(i) && valid(i + 1) {
                (y(i + 1) - y(i - 1)) / (x(i + 1) - x(i - 1))
            } else {
                f64::NAN
            };
            (times[i], slope)
        })
        .collect()
}

/// Fit with and without the `drop` earliest points of the fitted range, exposing how
/// strongly the short-time data steer the result.
pub fn early_point_sensitivity(
    times: &[f64],
    values: &[f64],
    method: FitMethod,
    l_f: f64,
    drop: usize,
) -> Result<(FitResult, FitResult)> {
    let kept = truncate_curve(times, values, l_f, method.is_log_based())?;
    let options = FitOptions::default();
    let full = fit(method, &kept.times, &kept.values, &options)?;
    let start = drop.min(kept.times.len());
    let reduced = fit(method, &kept.times[start..], &kept.values[start..], &options)?;
    Ok((full, reduced))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn synthetic(t2: f64, p: f64, n: usize, t_max: f64) -> (Vec<f64>, Vec<f64>) {
        let t: Vec<f64> = (0..n).map(|i| t_max * i as f64 / (n - 1) as f64).collect();
        let l = t.iter().map(|&x| libm::exp(-libm::pow(x / t2, p))).collect();
        (t, l)
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn truncation_keeps_the_decay_window() {
        let (t, l) = synthetic(1.0, 1.5, 101, 4.0);
        let kept = truncate_curve(&t, &l, 0.6, false).unwrap();
        let expected: Vec<usize> = (0..t.len()).filter(|&i| t[i] > 0.0 && l[i] > 0.6 && l[i] < 1.0).collect();
        assert_eq!(kept.indices, expected);
        // contiguous prefix after t = 0
        assert!(kept.indices.windows(2).all(|w| w[1] == w[0] + 1));
        assert_eq!(kept.indices[0], 1);

        let kept = truncate_curve(&t, &l, 0.2, false).unwrap();
        assert!(kept.values.iter().all(|&v| v > 0.2));
        let next = kept.indices.last().unwrap() + 1;
        assert!(l[next] <= 0.2);

        assert!(truncate_curve(&t, &l, 1.0, false).is_err());
        assert!(truncate_curve(&t, &l, 0.0, false).is_err());
    }

    #[test]
    fn log_truncation_drops_the_flat_start() {
        let (t, l) = synthetic(1.0, 3.0, 101, 2.0);
        let kept = truncate_curve(&t, &l, 0.4, true).unwrap();
        assert!(kept.values.iter().all(|&v| -libm::log(v) >= LOG_FLOOR));
    }

    #[test]
    fn flat_curve_is_degenerate() {
        let t: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let l = vec![1.0; 20];
        for method in FitMethod::ALL {
            assert!(fit_curve(&t, &l, method, 0.4, &FitOptions::default()).is_err());
        }
        assert!(fit_exponential(&t[1..], &l[1..], &FitOptions::default()).is_err());
    }

    #[test]
    fn recovers_reference_parameters() {
        let (t, l) = synthetic(0.1, 1.5, 101, 0.4);
        for method in FitMethod::ALL {
            let r = fit_curve(&t, &l, method, 0.2, &FitOptions::default()).unwrap();
            assert!(rel(r.t2, 0.1) < 1e-6 && rel(r.p, 1.5) < 1e-6, "{method}: {r:?}");
            assert!(r.converged);
            assert_eq!(r.truncation, Some(0.2));
        }
    }

    #[test]
    fn duplicated_points_leave_the_optimum() {
        // mildly noisy data so that the optimum is not an exact interpolation
        let (t, mut l) = synthetic(0.3, 1.2, 61, 0.6);
        for (i, v) in l.iter_mut().enumerate() {
            *v *= 1.0 + 0.01 * libm::sin(7.0 * i as f64);
        }
        let kept = truncate_curve(&t, &l, 0.3, true).unwrap();
        let doubled_t = [kept.times.clone(), kept.times.clone()].concat();
        let doubled_l = [kept.values.clone(), kept.values.clone()].concat();
        for method in [FitMethod::Power, FitMethod::Exponential, FitMethod::Linear] {
            let a = fit(method, &kept.times, &kept.values, &FitOptions::default()).unwrap();
            let b = fit(method, &doubled_t, &doubled_l, &FitOptions::default()).unwrap();
            assert!(rel(a.t2, b.t2) < 1e-8 && rel(a.p, b.p) < 1e-8, "{method}");
        }
    }

    #[test]
    fn uniform_weights_change_nothing() {
        let (t, l) = synthetic(2.0, 0.8, 41, 5.0);
        let kept = truncate_curve(&t, &l, 0.3, false).unwrap();
        let a = fit_exponential(&kept.times, &kept.values, &FitOptions::default()).unwrap();
        let opts = FitOptions {
            weights: Some(vec![3.0; kept.times.len()]),
            ..FitOptions::default()
        };
        let b = fit_exponential(&kept.times, &kept.values, &opts).unwrap();
        assert!(rel(a.t2, b.t2) < 1e-9);
    }

    #[test]
    fn noisy_fit_reports_a_covariance() {
        let (t, mut l) = synthetic(1.0, 1.4, 81, 2.0);
        for (i, v) in l.iter_mut().enumerate() {
            *v += 0.004 * libm::sin(3.3 * i as f64 + 0.2);
        }
        let r = fit_curve(&t, &l, FitMethod::Exponential, 0.3, &FitOptions::default()).unwrap();
        assert!(r.converged);
        let c = r.covariance;
        assert!(c[0][0] > 0.0 && c[1][1] > 0.0);
        assert_eq!(c[0][1], c[1][0]);
        assert!(c[0][0] * c[1][1] - c[0][1] * c[0][1] >= 0.0);
    }

    #[test]
    fn local_slope_of_a_stretched_exponential() {
        let (t, l) = synthetic(1.0, 1.7, 60, 1.5);
        let s = local_slope(&t, &l);
        assert!(s[0].1.is_nan());
        assert!(s.last().unwrap().1.is_nan());
        for &(_, p) in &s[2..s.len() - 1] {
            assert!((p - 1.7).abs() < 1e-6, "{p}");
        }
    }

    #[test]
    fn early_points_can_move_the_linear_fit() {
        let (t, mut l) = synthetic(1.0, 1.5, 101, 3.0);
        // perturb the earliest decay, as a noisy short-time signal would
        for v in l.iter_mut().skip(1).take(6) {
            *v = 1.0 - (1.0 - *v) * 1.8;
        }
        let (full, reduced) = early_point_sensitivity(&t, &l, FitMethod::Linear, 0.4, 6).unwrap();
        assert!(rel(full.p, reduced.p) > 0.02);
        let (fe, re) = early_point_sensitivity(&t, &l, FitMethod::Exponential, 0.4, 6).unwrap();
        assert!(rel(fe.p, re.p) < rel(full.p, reduced.p));
    }

    #[test]
    fn parse_method_names() {
        assert_eq!("exponential".parse::<FitMethod>().unwrap(), FitMethod::Exponential);
        assert_eq!("power".parse::<FitMethod>().unwrap(), FitMethod::Power);
        assert_eq!("linear".parse::<FitMethod>().unwrap(), FitMethod::Linear);
        assert!("cubic".parse::<FitMethod>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn all_methods_agree_on_clean_data(log_t2 in -4.0..1.0f64, p in 0.5..3.0f64) {
            let t2 = libm::pow(10.0, log_t2);
            let (t, l) = synthetic(t2, p, 101, 4.0 * t2);
            for method in FitMethod::ALL {
                let r = fit_curve(&t, &l, method, 0.2, &FitOptions::default()).unwrap();
                prop_assert!(rel(r.t2, t2) < 1e-6, "{} T2 {} vs {}", method, r.t2, t2);
                prop_assert!(rel(r.p, p) < 1e-6, "{} p {} vs {}", method, r.p, p);
            }
        }

        #[test]
        fn time_rescaling_rescales_t2(lambda in 0.01..100.0f64) {
            let (t, mut l) = synthetic(0.5, 1.3, 81, 1.5);
            for (i, v) in l.iter_mut().enumerate() {
                *v *= 1.0 + 0.003 * libm::cos(5.0 * i as f64);
            }
            let ts: Vec<f64> = t.iter().map(|x| x * lambda).collect();
            for method in FitMethod::ALL {
                let a = fit_curve(&t, &l, method, 0.3, &FitOptions::default()).unwrap();
                let b = fit_curve(&ts, &l, method, 0.3, &FitOptions::default()).unwrap();
                prop_assert!(rel(b.t2, a.t2 * lambda) < 1e-7);
                prop_assert!(rel(b.p, a.p) < 1e-7);
            }
        }
    }
}
