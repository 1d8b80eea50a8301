//! Small statistics helpers: weighted straight-line fits and quantiles.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Covariance of `(slope, intercept)`.
    pub covariance: [[f64; 2]; 2],
    /// Weighted residual sum of squares.
    pub rss: f64,
    pub n: usize,
}

/// Weighted least-squares fit of `y = slope·x + intercept`.
pub fn linear_regression(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<LineFit> {
    let n = x.len();
    if y.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::invalid("regression", "inputs must have equal lengths"));
    }
    if n < 2 {
        return Err(Error::Degenerate(format!("{n} points cannot define a line")));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        sw += w(i);
        sx += w(i) * x[i];
        sy += w(i) * y[i];
    }
    let (mx, my) = (sx / sw, sy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for i in 0..n {
        let dx = x[i] - mx;
        sxx += w(i) * dx * dx;
        sxy += w(i) * dx * (y[i] - my);
    }
    if !(sxx > 0.0) || !sxx.is_finite() {
        return Err(Error::Degenerate("abscissae are all identical".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = (0..n)
        .map(|i| {
            let r = y[i] - slope * x[i] - intercept;
            w(i) * r * r
        })
        .sum();
    let sigma2 = if n > 2 { rss / (n - 2) as f64 } else { 0.0 };
    let var_slope = sigma2 / sxx;
    let var_intercept = sigma2 * (1.0 / sw + mx * mx / sxx);
    let cov = -sigma2 * mx / sxx;
    Ok(LineFit {
        slope,
        intercept,
        covariance: [[var_slope, cov], [cov, var_intercept]],
        rss,
        n,
    })
}

/// Linear-interpolation quantile (type 7) of unsorted data.
pub fn quantile(data: &[f64], q: f64) -> f64 {
    let mut sorted: Vec<f64> = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
            let lo = libm::floor(h) as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

pub fn mean(data: &[f64]) -> f64 {
    data.iter().sum::<f64>() / data.len() as f64
}

/// Sample standard deviation.
pub fn std_dev(data: &[f64]) -> f64 {
    if data.len() < 2 {
        return 0.0;
    }
    let m = mean(data);
    libm::sqrt(data.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (data.len() - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| -1.0 * v + 3.0).collect();
        let fit = linear_regression(&x, &y, None).unwrap();
        assert_relative_eq!(fit.slope, -1.0, epsilon = 1e-14);
        assert_relative_eq!(fit.intercept, 3.0, epsilon = 1e-14);
        assert!(fit.rss < 1e-28);
    }

    #[test]
    fn identical_abscissae_are_degenerate() {
        assert!(matches!(linear_regression(&[2.0, 2.0], &[1.0, 3.0], None), Err(Error::Degenerate(_))));
    }

    #[test]
    fn duplicated_points_keep_the_line() {
        let x = [0.0, 1.0, 2.0, 5.0];
        let y = [0.3, 0.9, 2.2, 4.8];
        let a = linear_regression(&x, &y, None).unwrap();
        let b = linear_regression(&[x, x].concat(), &[y, y].concat(), None).unwrap();
        assert_relative_eq!(a.slope, b.slope, epsilon = 1e-13);
        assert_relative_eq!(a.intercept, b.intercept, epsilon = 1e-13);
        let w = linear_regression(&x, &y, Some(&[2.0; 4])).unwrap();
        assert_relative_eq!(a.slope, w.slope, epsilon = 1e-13);
    }

    #[test]
    fn quantiles() {
        let d = [3.0, 1.0, 2.0, 4.0, 5.0];
        assert_eq!(quantile(&d, 0.5), 3.0);
        assert_eq!(quantile(&d, 0.0), 1.0);
        assert_eq!(quantile(&d, 1.0), 5.0);
        assert_eq!(quantile(&d, 0.25), 2.0);
        assert!(quantile(&[], 0.5).is_nan());
    }
}
