//! Configuration averages and finite-ensemble statistics.
//!
//! A subsample of `N` members is drawn without replacement, averaged, fitted and
//! compared with the fit of the full ensemble; repeating this gives the
//! distribution of the relative deviations `ΔT2` and `Δp`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_curve, FitMethod, FitOptions, FitResult};
use crate::gcce::{CoherenceCurve, CurveKind, CurveMetadata};
use crate::seed;
use crate::stats::quantile_sorted;

/// Percentiles reported for every deviation distribution.
pub const PERCENTILES: [f64; 5] = [2.5, 16.0, 50.0, 84.0, 97.5];

/// Bin width used when every sample is identical.
const DEGENERATE_BIN_WIDTH: f64 = 1e-3;

const MAX_BINS: usize = 10_000;

fn check_grids(curves: &[CoherenceCurve]) -> Result<()> {
    let first = curves.first().ok_or_else(|| Error::invalid("curves", "need at least one curve"))?;
    for c in curves {
        let same = c.times.len() == first.times.len()
            && c.values.len() == c.times.len()
            && c.times.iter().zip(&first.times).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(Error::GridMismatch);
        }
    }
    Ok(())
}

/// Pointwise mean of the curves selected by `indices`, summed in index order.
fn mean_of(curves: &[CoherenceCurve], indices: impl Iterator<Item = usize>) -> Vec<Complex64> {
    let mut sum = vec![Complex64::new(0.0, 0.0); curves[0].len()];
    let mut count = 0usize;
    for i in indices {
        for (s, v) in sum.iter_mut().zip(&curves[i].values) {
            *s += v;
        }
        count += 1;
    }
    let scale = 1.0 / count as f64;
    sum.iter_mut().for_each(|s| *s *= scale);
    sum
}

/// Pointwise arithmetic mean of curves on a shared time grid.
///
/// The metadata lists each member's configuration id (its position when the
/// curve carries none) and Monte Carlo seed.
pub fn ensemble_average(curves: &[CoherenceCurve]) -> Result<CoherenceCurve> {
    check_grids(curves)?;
    let first = &curves[0].metadata;
    let shared = |f: fn(&CurveMetadata) -> Option<f64>| {
        let v = f(first);
        curves.iter().all(|c| f(&c.metadata).map(f64::to_bits) == v.map(f64::to_bits)).then_some(v).flatten()
    };
    let mut metadata = CurveMetadata {
        order: curves
            .iter()
            .all(|c| c.metadata.order == first.order)
            .then_some(first.order)
            .flatten(),
        r_bath: shared(|m| m.r_bath),
        r_dipole: shared(|m| m.r_dipole),
        n_mc_samples: curves.iter().map(|c| c.metadata.n_mc_samples).min().unwrap_or(0),
        seed: first.seed,
        divergence_events: curves.iter().map(|c| c.metadata.divergence_events).sum(),
        ..CurveMetadata::new(CurveKind::Ensemble)
    };
    for (i, c) in curves.iter().enumerate() {
        metadata.members.push(c.metadata.config_id.unwrap_or(i as u64));
        metadata.member_seeds.push(c.metadata.seed);
    }
    let mut out = CoherenceCurve {
        times: curves[0].times.clone(),
        values: mean_of(curves, 0..curves.len()),
        metadata,
    };
    out.refresh_imag();
    Ok(out)
}

/// Probability density on equal-width bins, padded with an empty bin on each side
/// so that trapezoidal integration over the bin centres equals the histogram area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub centers: Vec<f64>,
    pub density: Vec<f64>,
}

impl Histogram {
    /// Freedman–Diaconis binning: width `2·IQR·n^{-1/3}`.
    pub fn freedman_diaconis(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("samples", "histogram of no data"));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("samples", "non-finite value"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let (lo, hi) = (sorted[0], sorted[n - 1]);
        let range = hi - lo;
        let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
        let mut width = 2.0 * iqr / libm::cbrt(n as f64);
        if !(width > 0.0) {
            width = if range > 0.0 { range / libm::ceil(libm::sqrt(n as f64)) } else { DEGENERATE_BIN_WIDTH };
        }
        let mut n_bins = (libm::ceil(range / width) as usize).max(1);
        if n_bins > MAX_BINS {
            n_bins = MAX_BINS;
            width = range / MAX_BINS as f64;
        }
        // bins centred on the data span
        let start = 0.5 * (lo + hi) - 0.5 * n_bins as f64 * width;
        let mut counts = vec![0usize; n_bins];
        for &x in &sorted {
            let k = libm::floor((x - start) / width) as isize;
            counts[k.clamp(0, n_bins as isize - 1) as usize] += 1;
        }
        let norm = 1.0 / (n as f64 * width);
        let mut centers = Vec::with_capacity(n_bins + 2);
        let mut density = Vec::with_capacity(n_bins + 2);
        centers.push(start - 0.5 * width);
        density.push(0.0);
        for (k, &c) in counts.iter().enumerate() {
            centers.push(start + (k as f64 + 0.5) * width);
            density.push(c as f64 * norm);
        }
        centers.push(start + (n_bins as f64 + 0.5) * width);
        density.push(0.0);
        Ok(Self {
            bin_width: width,
            centers,
            density,
        })
    }

    /// Trapezoidal integral of the density over the bin centres.
    pub fn integral(&self) -> f64 {
        self.centers
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentile {
    pub percent: f64,
    pub value: f64,
}

/// Outcome of one subsample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub subsample_size: usize,
    pub ensemble_size: usize,
    pub repeats: usize,
    pub method: FitMethod,
    pub l_f: f64,
    pub seed: u64,
    /// Fit of the full-ensemble average, the reference for the deviations.
    pub reference: FitResult,
    /// `(T2^(N) - T2^(N_max)) / T2^(N_max)` of each successful repeat.
    pub delta_t2: Vec<f64>,
    pub delta_p: Vec<f64>,
    /// Repeats whose fit failed; they are excluded from the deviations.
    pub failed_repeats: Vec<usize>,
}

impl BootstrapResult {
    pub fn failures(&self) -> usize {
        self.failed_repeats.len()
    }

    pub fn histogram_t2(&self) -> Result<Histogram> {
        Histogram::freedman_diaconis(&self.delta_t2)
    }

    pub fn histogram_p(&self) -> Result<Histogram> {
        Histogram::freedman_diaconis(&self.delta_p)
    }

    /// Half of the central 95% interval of `ΔT2`.
    pub fn half_width_t2(&self) -> f64 {
        half_width(&self.delta_t2)
    }

    pub fn half_width_p(&self) -> f64 {
        half_width(&self.delta_p)
    }

    pub fn percentiles_t2(&self) -> Vec<Percentile> {
        percentile_table(&self.delta_t2)
    }

    pub fn percentiles_p(&self) -> Vec<Percentile> {
        percentile_table(&self.delta_p)
    }
}

/// `(q_97.5 - q_2.5) / 2`
pub fn half_width(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    0.5 * (quantile_sorted(&sorted, 0.975) - quantile_sorted(&sorted, 0.025))
}

pub fn percentile_table(samples: &[f64]) -> Vec<Percentile> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    PERCENTILES
        .iter()
        .map(|&percent| Percentile {
            percent,
            value: quantile_sorted(&sorted, percent / 100.0),
        })
        .collect()
}

/// Subsampling set-up shared by all repeats of one subsample size.
///
/// Repeats are independent; [`Bootstrap::repeat`] may run in any order and the
/// outcomes are aggregated in repeat order by [`Bootstrap::finish`].
#[derive(Debug, Clone)]
pub struct Bootstrap<'a> {
    curves: &'a [CoherenceCurve],
    n: usize,
    repeats: usize,
    method: FitMethod,
    l_f: f64,
    seed: u64,
    options: FitOptions,
    reference: FitResult,
}

impl<'a> Bootstrap<'a> {
    pub fn new(
        curves: &'a [CoherenceCurve],
        n: usize,
        repeats: usize,
        method: FitMethod,
        l_f: f64,
        seed: u64,
    ) -> Result<Self> {
        check_grids(curves)?;
        if n == 0 || n > curves.len() {
            return Err(Error::invalid(
                "subsample_size",
                format!("must lie in 1..={}, got {n}", curves.len()),
            ));
        }
        if repeats == 0 {
            return Err(Error::invalid("repeats", "must be at least 1"));
        }
        let options = FitOptions::default();
        let full = real_part(&mean_of(curves, 0..curves.len()));
        let reference = fit_curve(&curves[0].times, &full, method, l_f, &options)?;
        Ok(Self {
            curves,
            n,
            repeats,
            method,
            l_f,
            seed,
            options,
            reference,
        })
    }

    pub fn reference(&self) -> &FitResult {
        &self.reference
    }

    pub fn repeats(&self) -> usize {
        self.repeats
    }

    /// Sorted member indices of repeat `r`.
    pub fn draw(&self, r: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(self.seed, seed::SUBSAMPLE, r as u64));
        let mut idx = rand::seq::index::sample(&mut rng, self.curves.len(), self.n).into_vec();
        idx.sort_unstable();
        idx
    }

    /// Relative deviations `(ΔT2, Δp)` of repeat `r`.
    pub fn repeat(&self, r: usize) -> Result<(f64, f64)> {
        let idx = self.draw(r);
        let mean = real_part(&mean_of(self.curves, idx.into_iter()));
        let fit = fit_curve(&self.curves[0].times, &mean, self.method, self.l_f, &self.options)?;
        Ok((
            (fit.t2 - self.reference.t2) / self.reference.t2,
            (fit.p - self.reference.p) / self.reference.p,
        ))
    }

    pub fn finish(&self, outcomes: Vec<Result<(f64, f64)>>) -> BootstrapResult {
        let mut delta_t2 = Vec::with_capacity(outcomes.len());
        let mut delta_p = Vec::with_capacity(outcomes.len());
        let mut failed_repeats = Vec::new();
        for (r, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok((dt, dp)) => {
                    delta_t2.push(dt);
                    delta_p.push(dp);
                }
                Err(_) => failed_repeats.push(r),
            }
        }
        BootstrapResult {
            subsample_size: self.n,
            ensemble_size: self.curves.len(),
            repeats: self.repeats,
            method: self.method,
            l_f: self.l_f,
            seed: self.seed,
            reference: self.reference.clone(),
            delta_t2,
            delta_p,
            failed_repeats,
        }
    }
}

fn real_part(values: &[Complex64]) -> Vec<f64> {
    values.iter().map(|v| v.re).collect()
}

/// Draw `repeats` subsamples of `n` distinct curves, average and fit each, and
/// collect the relative deviations from the full-ensemble fit.
pub fn bootstrap_subsample(
    curves: &[CoherenceCurve],
    n: usize,
    repeats: usize,
    method: FitMethod,
    l_f: f64,
    seed: u64,
) -> Result<BootstrapResult> {
    let plan = Bootstrap::new(curves, n, repeats, method, l_f, seed)?;
    let outcomes = (0..repeats).map(|r| plan.repeat(r)).collect();
    Ok(plan.finish(outcomes))
}

/// Averaged ensemble with its subsampling statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub concentration_ppm: Option<f64>,
    pub order: Option<usize>,
    pub method: FitMethod,
    pub averaged: CoherenceCurve,
    pub fit: FitResult,
    pub subsamples: Vec<BootstrapResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<CoherenceCurve>,
}
