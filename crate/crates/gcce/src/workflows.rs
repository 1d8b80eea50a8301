//! End-to-end experiments built on the core kernels.
//!
//! Seeds: configuration `k` of an ensemble with master seed `s` is drawn from
//! `derive(s, CONFIGURATION, k)` and its Monte Carlo bath states from the stream keyed
//! by `derive(s, BATH_STATE, k)`. Studies that vary one parameter (concentration,
//! order, field, cutoff) keep `s`, so they compare like with like. All reductions run
//! in index order, so thread count and scheduling never change a result.

use std::path::{Path, PathBuf};

use nv_gcce_core::ensemble::{half_width, percentile_table, Histogram, Percentile};
use nv_gcce_core::fit::{early_point_sensitivity, fit_curve};
use nv_gcce_core::gcce::{ExactAveraging, DEFAULT_EXACT_CAP};
use nv_gcce_core::stats::{linear_regression, mean, std_dev, LineFit};
use nv_gcce_core::{
    build_neighbor_graph, enumerate_clusters, ensemble_average, exact_coherence, generate_configuration,
    seed, BathSpin, Bootstrap, BootstrapResult, CentralSpin, CoherenceCurve, ExternalField, FitMethod,
    FitOptions, FitResult, GcceProblem, LatticeSpec, SpinBathConfiguration, TimeGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EnsembleSpec, ResolvedConfig, RunConfig};
use crate::error::{Error, Result};
use crate::io::{self, Checkpoint, CheckpointKey};

/// Successive (T2, p) changes below this fraction count as converged.
pub const CONVERGENCE_TOLERANCE: f64 = 0.05;
/// Truncation level of convergence scans.
pub const CONVERGENCE_L_F: f64 = 0.4;
/// Earliest fitted points dropped by the short-time sensitivity diagnostic.
pub const SENSITIVITY_DROP: usize = 2;

/// Keep only the spins within `r_bath`.
pub fn restrict_configuration(config: &SpinBathConfiguration, r_bath: f64) -> SpinBathConfiguration {
    let r2 = r_bath * r_bath;
    let spins = config
        .spins
        .iter()
        .filter(|s| s.position.iter().map(|x| x * x).sum::<f64>() <= r2)
        .copied()
        .collect();
    SpinBathConfiguration {
        r_bath,
        spins,
        ..config.clone()
    }
}

/// Configuration `index` of an ensemble, drawn in a sphere of `generation_r_bath`
/// and cut down to the ensemble's own `r_bath`.
pub fn ensemble_configuration(spec: &EnsembleSpec, generation_r_bath: f64, index: u64) -> Result<SpinBathConfiguration> {
    let bath_seed = seed::derive(spec.seed, seed::CONFIGURATION, index);
    let config = generate_configuration(
        spec.concentration_ppm,
        generation_r_bath,
        &LatticeSpec::DIAMOND,
        bath_seed,
        index,
    )?;
    Ok(if generation_r_bath > spec.r_bath {
        restrict_configuration(&config, spec.r_bath)
    } else {
        config
    })
}

fn checkpoint_key(spec: &EnsembleSpec, generation_r_bath: f64, index: u64) -> CheckpointKey {
    CheckpointKey {
        version: crate::VERSION.to_owned(),
        concentration_ppm: spec.concentration_ppm,
        order: spec.order,
        r_bath: spec.r_bath,
        r_dipole: spec.r_dipole,
        generation_r_bath,
        field_gauss: spec.field_gauss,
        n_mc_samples: spec.n_mc_samples,
        times_ms: spec.times_ms.clone(),
        seed: spec.seed,
        index,
    }
}

/// gCCE curve of one configuration, Monte Carlo samples evaluated in parallel.
pub fn compute_configuration(spec: &EnsembleSpec, generation_r_bath: f64, index: u64) -> Result<Checkpoint> {
    let config = ensemble_configuration(spec, generation_r_bath, index)?;
    let graph = build_neighbor_graph(config.positions(), spec.r_dipole)?;
    let clusters = enumerate_clusters(&graph, spec.order)?;
    let grid = spec.grid()?;
    let problem = GcceProblem::new(
        &config,
        &clusters,
        &CentralSpin::nv(),
        &ExternalField::along_z(spec.field_gauss),
        &grid,
        spec.n_mc_samples,
        seed::derive(spec.seed, seed::BATH_STATE, index),
    )?;
    let samples = (0..spec.n_mc_samples)
        .into_par_iter()
        .map(|k| problem.evaluate_sample(k))
        .collect::<nv_gcce_core::Result<Vec<_>>>()?;
    Ok(Checkpoint {
        key: checkpoint_key(spec, generation_r_bath, index),
        n_spins: config.len(),
        n_clusters: clusters.len(),
        curve: problem.combine(&samples),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigFailure {
    pub index: u64,
    pub error: String,
}

/// Member curves of one ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub spec: EnsembleSpec,
    /// Successful configurations in index order.
    pub members: Vec<Checkpoint>,
    pub failures: Vec<ConfigFailure>,
}

impl EnsembleRun {
    pub fn curves(&self) -> Vec<CoherenceCurve> {
        self.members.iter().map(|m| m.curve.clone()).collect()
    }

    pub fn average(&self) -> Result<CoherenceCurve> {
        Ok(ensemble_average(&self.curves())?)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimulateOptions<'a> {
    /// Per-configuration checkpoints are read from and written to this directory.
    pub checkpoint_dir: Option<&'a Path>,
    /// Draw configurations in this larger sphere before restricting them.
    pub generation_r_bath: Option<f64>,
}

/// Compute every configuration of `spec`. A failing configuration is retried once
/// and then recorded; more than 1% failures abort the ensemble.
pub fn simulate_ensemble(spec: &EnsembleSpec, options: SimulateOptions<'_>) -> Result<EnsembleRun> {
    let gen_r = options.generation_r_bath.unwrap_or(spec.r_bath).max(spec.r_bath);
    log::info!(
        "{} ppm, order {}: {} configurations x {} samples (r_bath {:.1} Å, r_dipole {:.1} Å, B {} G)",
        spec.concentration_ppm,
        spec.order,
        spec.n_configs,
        spec.n_mc_samples,
        spec.r_bath,
        spec.r_dipole,
        spec.field_gauss
    );
    let outcomes = (0..spec.n_configs as u64)
        .into_par_iter()
        .map(|k| -> Result<std::result::Result<Checkpoint, ConfigFailure>> {
            if let Some(dir) = options.checkpoint_dir {
                if let Some(c) = io::load_checkpoint(dir, &checkpoint_key(spec, gen_r, k)) {
                    log::debug!("configuration {k}: reused checkpoint");
                    return Ok(Ok(c));
                }
            }
            let result = compute_configuration(spec, gen_r, k).or_else(|e| {
                log::warn!("configuration {k} failed ({e}), retrying");
                compute_configuration(spec, gen_r, k)
            });
            match result {
                Ok(c) => {
                    if let Some(dir) = options.checkpoint_dir {
                        io::store_checkpoint(dir, &c)?;
                    }
                    log::debug!("configuration {k}: {} spins, {} clusters", c.n_spins, c.n_clusters);
                    Ok(Ok(c))
                }
                Err(e) => {
                    log::warn!("configuration {k} failed again: {e}");
                    Ok(Err(ConfigFailure {
                        index: k,
                        error: e.to_string(),
                    }))
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut members = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(c) => members.push(c),
            Err(f) => failures.push(f),
        }
    }
    if failures.len() * 100 > spec.n_configs {
        return Err(Error::FailureThreshold {
            failed: failures.len(),
            total: spec.n_configs,
            concentration_ppm: spec.concentration_ppm,
        });
    }
    Ok(EnsembleRun {
        spec: spec.clone(),
        members,
        failures,
    })
}

/// Shift of the fit when the earliest points of the fitted range are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub dropped_points: usize,
    pub t2_relative_shift: f64,
    pub p_relative_shift: f64,
}

/// A fit, or the reason there is none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEntry {
    pub method: FitMethod,
    pub l_f: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<Sensitivity>,
}

pub fn fit_entry(curve: &CoherenceCurve, method: FitMethod, l_f: f64) -> FitEntry {
    let values = curve.real_values();
    let result = fit_curve(&curve.times, &values, method, l_f, &FitOptions::default());
    let sensitivity = (method == FitMethod::Linear && result.is_ok())
        .then(|| early_point_sensitivity(&curve.times, &values, method, l_f, SENSITIVITY_DROP).ok())
        .flatten()
        .map(|(full, reduced)| Sensitivity {
            dropped_points: SENSITIVITY_DROP,
            t2_relative_shift: (reduced.t2 - full.t2) / full.t2,
            p_relative_shift: (reduced.p - full.p) / full.p,
        });
    match result {
        Ok(fit) => FitEntry {
            method,
            l_f,
            fit: Some(fit),
            error: None,
            sensitivity,
        },
        Err(e) => FitEntry {
            method,
            l_f,
            fit: None,
            error: Some(e.to_string()),
            sensitivity: None,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub concentration_ppm: f64,
    pub order: usize,
    pub r_bath: f64,
    pub r_dipole: f64,
    pub field_gauss: f64,
    pub n_configs: usize,
    pub n_mc_samples: usize,
    pub succeeded: usize,
    pub failures: Vec<ConfigFailure>,
    pub mean_spin_count: f64,
    pub std_spin_count: f64,
    pub mean_cluster_count: f64,
    pub divergence_events: u64,
    /// Largest `|Im L|` of the averaged curve.
    pub max_abs_imag: f64,
    pub fits: Vec<FitEntry>,
}

impl EnsembleSummary {
    pub fn fit(&self, method: FitMethod, l_f: f64) -> Option<&FitResult> {
        self.fits
            .iter()
            .find(|f| f.method == method && f.l_f == l_f)
            .and_then(|f| f.fit.as_ref())
    }
}

/// Average the members and fit with every method × truncation.
pub fn summarize(run: &EnsembleRun, methods: &[FitMethod], l_fs: &[f64]) -> Result<(CoherenceCurve, EnsembleSummary)> {
    if run.members.is_empty() {
        return Err(Error::FailureThreshold {
            failed: run.failures.len(),
            total: run.spec.n_configs,
            concentration_ppm: run.spec.concentration_ppm,
        });
    }
    let averaged = run.average()?;
    let mut fits = Vec::new();
    for &method in methods {
        for &l_f in l_fs {
            let entry = fit_entry(&averaged, method, l_f);
            if let Some(e) = &entry.error {
                log::warn!("{} ppm, order {}: {method} fit at L_f = {l_f}: {e}", run.spec.concentration_ppm, run.spec.order);
            }
            fits.push(entry);
        }
    }
    let spins: Vec<f64> = run.members.iter().map(|m| m.n_spins as f64).collect();
    let clusters: Vec<f64> = run.members.iter().map(|m| m.n_clusters as f64).collect();
    let summary = EnsembleSummary {
        concentration_ppm: run.spec.concentration_ppm,
        order: run.spec.order,
        r_bath: run.spec.r_bath,
        r_dipole: run.spec.r_dipole,
        field_gauss: run.spec.field_gauss,
        n_configs: run.spec.n_configs,
        n_mc_samples: run.spec.n_mc_samples,
        succeeded: run.members.len(),
        failures: run.failures.clone(),
        mean_spin_count: mean(&spins),
        std_spin_count: if spins.len() > 1 { std_dev(&spins) } else { 0.0 },
        mean_cluster_count: mean(&clusters),
        divergence_events: averaged.metadata.divergence_events,
        max_abs_imag: averaged.metadata.max_abs_imag,
        fits,
    };
    Ok((averaged, summary))
}

/// Output layout under a run's output directory.
fn ensemble_dir(output: &Path, spec: &EnsembleSpec, suffix: &str) -> PathBuf {
    output.join(format!("{}{suffix}", io::ensemble_label(spec.concentration_ppm, spec.order)))
}

fn provenance(config: &ResolvedConfig) -> serde_json::Value {
    serde_json::to_value(config).unwrap_or(serde_json::Value::Null)
}

/// Simulate one ensemble, writing checkpoints, member curves and the average under
/// `output/<label><suffix>` when `output` is given.
fn run_ensemble(
    resolved: &ResolvedConfig,
    spec: &EnsembleSpec,
    output: Option<&Path>,
    suffix: &str,
    generation_r_bath: Option<f64>,
) -> Result<(EnsembleRun, CoherenceCurve, EnsembleSummary)> {
    let dir = output.map(|o| ensemble_dir(o, spec, suffix));
    let checkpoints = dir.as_ref().map(|d| d.join("checkpoints"));
    let run = simulate_ensemble(
        spec,
        SimulateOptions {
            checkpoint_dir: checkpoints.as_deref(),
            generation_r_bath,
        },
    )?;
    let (averaged, summary) = summarize(&run, &resolved.fit_methods, &resolved.l_f)?;
    if let Some(dir) = &dir {
        let prov = provenance(resolved);
        for m in &run.members {
            let idx = m.curve.metadata.config_id.unwrap_or(0);
            io::write_curve(&dir.join("curves").join(format!("config_{idx:06}.csv")), &m.curve, Some(&prov))?;
        }
        io::write_curve(&dir.join("average.csv"), &averaged, Some(&prov))?;
    }
    Ok((run, averaged, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub schema_version: u32,
    pub version: String,
    pub config: ResolvedConfig,
    pub ensembles: Vec<EnsembleSummary>,
}

/// Simulate, average and fit every ensemble of `config`; with `write` the results
/// land in the configured output directory, ending with `summary.json`.
pub fn run_simulation(config: &RunConfig, write: bool) -> Result<SimulationSummary> {
    let resolved = config.resolve()?;
    let output_dir = resolved.output_dir.clone();
    let output = write.then_some(output_dir.as_path());
    let mut ensembles = Vec::new();
    for spec in &resolved.ensembles {
        let (_, _, summary) = run_ensemble(&resolved, spec, output, "", None)?;
        ensembles.push(summary);
    }
    let summary = SimulationSummary {
        schema_version: io::SCHEMA_VERSION,
        version: crate::VERSION.to_owned(),
        config: resolved,
        ensembles,
    };
    if let Some(out) = output {
        io::write_json(&out.join("summary.json"), &summary)?;
    }
    Ok(summary)
}

// ---------------------------------------------------------------------------
// concentration sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeEntry {
    pub method: FitMethod,
    pub l_f: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intercept: Option<f64>,
    /// Concentrations that entered the regression.
    pub concentrations_ppm: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub version: String,
    pub config: ResolvedConfig,
    pub ensembles: Vec<EnsembleSummary>,
    pub slopes: Vec<SlopeEntry>,
}

/// Reject concentration lists that cannot support a log–log regression.
pub fn validate_sweep(concentrations: &[f64]) -> Result<()> {
    if let Some(bad) = concentrations.iter().find(|c| !(**c > 0.0)) {
        return Err(Error::validation(format!("sweep concentrations must be positive, got {bad}")));
    }
    let mut sorted = concentrations.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::validation("sweep concentrations must be distinct"));
    }
    if sorted.len() < 3 {
        return Err(Error::validation(format!(
            "a sweep needs at least 3 concentrations, got {}",
            sorted.len()
        )));
    }
    Ok(())
}

/// Least-squares line through `(ln ρ, ln T2)`.
pub fn concentration_slope(points: &[(f64, f64)]) -> Result<LineFit> {
    let x: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    Ok(linear_regression(&x, &y, None)?)
}

/// Slope of `ln T2` against `ln ρ` per method and truncation, from finished ensembles.
pub fn sweep_slopes(ensembles: &[EnsembleSummary], methods: &[FitMethod], l_fs: &[f64]) -> Vec<SlopeEntry> {
    let mut out = Vec::new();
    for &method in methods {
        for &l_f in l_fs {
            let mut warnings = Vec::new();
            let mut points = Vec::new();
            for e in ensembles {
                match e.fit(method, l_f) {
                    Some(f) => points.push((e.concentration_ppm, f.t2)),
                    None => warnings.push(format!("no fit at {} ppm; left out", e.concentration_ppm)),
                }
            }
            let line = concentration_slope(&points);
            if let Err(e) = &line {
                warnings.push(e.to_string());
            }
            let line = line.ok();
            out.push(SlopeEntry {
                method,
                l_f,
                slope: line.as_ref().map(|l| l.slope),
                slope_std: line.as_ref().map(|l| l.covariance[0][0].sqrt()),
                intercept: line.as_ref().map(|l| l.intercept),
                concentrations_ppm: points.iter().map(|p| p.0).collect(),
                warnings,
            });
        }
    }
    out
}

pub fn sweep_concentration(config: &RunConfig, write: bool) -> Result<SweepReport> {
    validate_sweep(&config.concentrations_ppm)?;
    let resolved = config.resolve()?;
    let output_dir = resolved.output_dir.clone();
    let output = write.then_some(output_dir.as_path());
    let mut ensembles = Vec::new();
    for spec in &resolved.ensembles {
        match run_ensemble(&resolved, spec, output, "", None) {
            Ok((_, _, s)) => ensembles.push(s),
            Err(Error::FailureThreshold { failed, total, concentration_ppm }) => {
                log::warn!("{concentration_ppm} ppm: {failed} of {total} configurations failed; left out of the sweep");
            }
            Err(e) => return Err(e),
        }
    }
    let slopes = sweep_slopes(&ensembles, &resolved.fit_methods, &resolved.l_f);
    for s in &slopes {
        if let Some(slope) = s.slope {
            log::info!("{} at L_f = {}: slope {slope:.4}", s.method, s.l_f);
        }
    }
    let report = SweepReport {
        schema_version: io::SCHEMA_VERSION,
        version: crate::VERSION.to_owned(),
        config: resolved,
        ensembles,
        slopes,
    };
    if let Some(out) = output {
        io::write_json(&out.join("sweep.json"), &report)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// order comparison

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderEntry {
    pub order: usize,
    pub t2: f64,
    pub p: f64,
    /// `T2(order) / T2(reference)` on the full ensemble.
    pub ratio: f64,
    /// Spread of the ratio over paired resamples of the configurations.
    pub ratio_std: f64,
    pub ratio_percentiles: Vec<Percentile>,
    pub failed_repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderComparison {
    pub concentration_ppm: f64,
    pub reference_order: usize,
    pub method: FitMethod,
    pub l_f: f64,
    /// Configurations present in every order.
    pub shared_configs: usize,
    pub entries: Vec<OrderEntry>,
    pub ensembles: Vec<EnsembleSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub schema_version: u32,
    pub version: String,
    pub config: RunConfig,
    pub orders: Vec<usize>,
    pub repeats: usize,
    pub comparisons: Vec<OrderComparison>,
}

fn fit_mean(curves: &[&CoherenceCurve], idx: &[usize], method: FitMethod, l_f: f64) -> nv_gcce_core::Result<FitResult> {
    let n = curves[0].len();
    let mut sum = vec![0.0; n];
    for &i in idx {
        for (s, v) in sum.iter_mut().zip(&curves[i].values) {
            *s += v.re;
        }
    }
    let scale = 1.0 / idx.len() as f64;
    sum.iter_mut().for_each(|s| *s *= scale);
    fit_curve(&curves[0].times, &sum, method, l_f, &FitOptions::default())
}

/// `T2(order) / T2(reference)` per order on the same configurations, with error bars
/// from resampling configurations with replacement (the same draw for every order).
pub fn order_ratios(
    runs: &[(usize, Vec<&CoherenceCurve>)],
    reference: usize,
    method: FitMethod,
    l_f: f64,
    repeats: usize,
    seed: u64,
) -> Result<Vec<OrderEntry>> {
    let reference_curves = &runs
        .iter()
        .find(|(o, _)| *o == reference)
        .ok_or_else(|| Error::validation(format!("reference order {reference} was not computed")))?
        .1;
    let n = reference_curves.len();
    if n == 0 || runs.iter().any(|(_, c)| c.len() != n) {
        return Err(Error::validation("every order needs the same non-empty set of configurations"));
    }
    let all: Vec<usize> = (0..n).collect();
    let reference_fit = fit_mean(reference_curves, &all, method, l_f)?;
    let draws: Vec<Vec<usize>> = (0..repeats)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, seed::SUBSAMPLE, r as u64));
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        })
        .collect();
    let reference_draws: Vec<Option<f64>> = draws
        .par_iter()
        .map(|idx| fit_mean(reference_curves, idx, method, l_f).ok().map(|f| f.t2))
        .collect();
    let mut entries = Vec::new();
    for (order, curves) in runs {
        let fit = fit_mean(curves, &all, method, l_f)?;
        let ratios: Vec<Option<f64>> = draws
            .par_iter()
            .zip(&reference_draws)
            .map(|(idx, r)| {
                let t2 = fit_mean(curves, idx, method, l_f).ok()?.t2;
                r.map(|r| t2 / r)
            })
            .collect();
        let ok: Vec<f64> = ratios.iter().flatten().copied().collect();
        entries.push(OrderEntry {
            order: *order,
            t2: fit.t2,
            p: fit.p,
            ratio: fit.t2 / reference_fit.t2,
            ratio_std: if ok.len() > 1 { std_dev(&ok) } else { f64::NAN },
            ratio_percentiles: if ok.is_empty() { Vec::new() } else { percentile_table(&ok) },
            failed_repeats: repeats - ok.len(),
        });
    }
    Ok(entries)
}

/// Compare CCE orders at every concentration of `config` on shared configurations.
pub fn compare_orders(
    config: &RunConfig,
    orders: &[usize],
    reference: usize,
    repeats: usize,
    write: bool,
) -> Result<OrderReport> {
    let mut orders = orders.to_vec();
    if !orders.contains(&reference) {
        orders.push(reference);
    }
    orders.sort_unstable();
    orders.dedup();
    if repeats == 0 {
        return Err(Error::validation("repeats must be at least 1"));
    }
    // validate every order before any computation
    let resolved: Vec<ResolvedConfig> = orders
        .iter()
        .map(|&o| RunConfig { order: o, ..config.clone() }.resolve())
        .collect::<Result<_>>()?;
    let method = resolved[0].fit_methods[0];
    let l_f = resolved[0].l_f[0];
    let output = write.then_some(resolved[0].output_dir.as_path());
    let mut comparisons = Vec::new();
    for (ci, &rho) in config.concentrations_ppm.iter().enumerate() {
        let gen_r = resolved.iter().map(|r| r.ensembles[ci].r_bath).fold(0.0, f64::max);
        let mut runs = Vec::new();
        let mut ensembles = Vec::new();
        for (r, &order) in resolved.iter().zip(&orders) {
            let (run, _, summary) = run_ensemble(r, &r.ensembles[ci], output, "_orders", Some(gen_r))?;
            runs.push((order, run));
            ensembles.push(summary);
        }
        // configurations that succeeded in every order
        let shared: Vec<u64> = runs[0]
            .1
            .members
            .iter()
            .filter_map(|m| m.curve.metadata.config_id)
            .filter(|id| runs.iter().all(|(_, r)| r.members.iter().any(|m| m.curve.metadata.config_id == Some(*id))))
            .collect();
        let curves: Vec<(usize, Vec<&CoherenceCurve>)> = runs
            .iter()
            .map(|(o, r)| {
                let c = r
                    .members
                    .iter()
                    .filter(|m| m.curve.metadata.config_id.is_some_and(|id| shared.contains(&id)))
                    .map(|m| &m.curve)
                    .collect();
                (*o, c)
            })
            .collect();
        let entries = order_ratios(&curves, reference, method, l_f, repeats, config.seed)?;
        for e in &entries {
            log::info!("{rho} ppm: T2(order {})/T2(order {reference}) = {:.4} ± {:.4}", e.order, e.ratio, e.ratio_std);
        }
        comparisons.push(OrderComparison {
            concentration_ppm: rho,
            reference_order: reference,
            method,
            l_f,
            shared_configs: shared.len(),
            entries,
            ensembles,
        });
    }
    let report = OrderReport {
        schema_version: io::SCHEMA_VERSION,
        version: crate::VERSION.to_owned(),
        config: config.clone(),
        orders,
        repeats,
        comparisons,
    };
    if let Some(out) = output {
        io::write_json(&out.join("orders.json"), &report)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// field sensitivity

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldEntry {
    pub field_gauss: f64,
    /// Zero field leaves the bath electrons without a quantization axis.
    pub zero_field: bool,
    pub fit: FitEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldTable {
    pub concentration_ppm: f64,
    pub entries: Vec<FieldEntry>,
    /// `(max T2 - min T2) / min T2` over the fields with a fit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_spread: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldReport {
    pub schema_version: u32,
    pub version: String,
    pub config: RunConfig,
    pub tables: Vec<FieldTable>,
}

pub fn relative_spread(values: &[f64]) -> Option<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (!values.is_empty() && min > 0.0).then(|| (max - min) / min)
}

/// T2 against field on identical configurations and bath-state samples.
pub fn field_sensitivity(config: &RunConfig, fields: &[f64], write: bool) -> Result<FieldReport> {
    if fields.is_empty() {
        return Err(Error::validation("at least one field is required"));
    }
    if let Some(bad) = fields.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
        return Err(Error::validation(format!("fields must be finite and non-negative, got {bad}")));
    }
    let resolved: Vec<ResolvedConfig> = fields
        .iter()
        .map(|&b| RunConfig { field_gauss: b, ..config.clone() }.resolve())
        .collect::<Result<_>>()?;
    let method = resolved[0].fit_methods[0];
    let l_f = resolved[0].l_f[0];
    let output = write.then_some(resolved[0].output_dir.as_path());
    let mut tables = Vec::new();
    for (ci, &rho) in config.concentrations_ppm.iter().enumerate() {
        let mut entries = Vec::new();
        for (r, &b) in resolved.iter().zip(fields) {
            if b == 0.0 {
                log::warn!("B = 0 G: the bath Zeeman term vanishes; the result is flagged");
            }
            let (_, averaged, _) = run_ensemble(r, &r.ensembles[ci], output, &format!("_B{b}G"), None)?;
            entries.push(FieldEntry {
                field_gauss: b,
                zero_field: b == 0.0,
                fit: fit_entry(&averaged, method, l_f),
            });
        }
        let t2: Vec<f64> = entries.iter().filter_map(|e| e.fit.fit.as_ref().map(|f| f.t2)).collect();
        tables.push(FieldTable {
            concentration_ppm: rho,
            relative_spread: relative_spread(&t2),
            entries,
        });
    }
    let report = FieldReport {
        schema_version: io::SCHEMA_VERSION,
        version: crate::VERSION.to_owned(),
        config: config.clone(),
        tables,
    };
    if let Some(out) = output {
        io::write_json(&out.join("fields.json"), &report)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// convergence scan

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanParameter {
    RDipole,
    RBath,
    Order,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub value: f64,
    pub fit: FitEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scan {
    pub parameter: ScanParameter,
    pub order: usize,
    pub r_dipole: f64,
    pub r_bath: f64,
    pub points: Vec<ScanPoint>,
    /// Smallest grid value beyond which successive (T2, p) changes stay below tolerance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged_at: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub concentration_ppm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_dipole: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_bath: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_bath_over_r_dipole: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    pub scans: Vec<Scan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub schema_version: u32,
    pub version: String,
    pub config: RunConfig,
    pub tolerance: f64,
    pub l_f: f64,
    pub rows: Vec<ConvergenceRow>,
}

fn rel_change(a: f64, b: f64) -> f64 {
    ((b - a) / a).abs()
}

/// Index of the first grid point from which every successive (T2, p) change stays
/// below `tol`. `None` when the last pair already moves, or fewer than two points
/// follow the candidate.
pub fn converged_index(fits: &[Option<(f64, f64)>], tol: f64) -> Option<usize> {
    let n = fits.len();
    if n < 2 {
        return None;
    }
    let ok = |j: usize| match (fits[j], fits[j + 1]) {
        (Some((t0, p0)), Some((t1, p1))) => rel_change(t0, t1) < tol && rel_change(p0, p1) < tol,
        _ => false,
    };
    let mut start = None;
    for j in (0..n - 1).rev() {
        if ok(j) {
            start = Some(j);
        } else {
            break;
        }
    }
    start
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::validation(format!("{name} grid values must be positive")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation(format!("{name} grid must be strictly increasing")));
    }
    Ok(())
}

/// Grids for [`scan_convergence`]; an empty grid skips that scan.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanGrids {
    pub r_dipole: Vec<f64>,
    pub r_bath: Vec<f64>,
    pub orders: Vec<usize>,
}

/// One-dimensional convergence scans per concentration. While one parameter moves the
/// others sit at their largest grid value (or the configured value when that grid is
/// empty); configurations are drawn once in the largest sphere and shared.
pub fn scan_convergence(config: &RunConfig, grids: &ScanGrids, write: bool) -> Result<ConvergenceReport> {
    check_grid("r_dipole", &grids.r_dipole)?;
    check_grid("r_bath", &grids.r_bath)?;
    if grids.orders.windows(2).any(|w| w[1] <= w[0]) || grids.orders.contains(&0) {
        return Err(Error::validation("order grid must be strictly increasing and positive"));
    }
    if grids.r_dipole.is_empty() && grids.r_bath.is_empty() && grids.orders.is_empty() {
        return Err(Error::validation("nothing to scan: every grid is empty"));
    }
    let base = config.resolve()?;
    let method = base.fit_methods[0];
    let output = write.then_some(base.output_dir.as_path());
    let mut rows = Vec::new();
    for spec in &base.ensembles {
        let rd = grids.r_dipole.last().copied().unwrap_or(spec.r_dipole);
        let rb = grids.r_bath.last().copied().unwrap_or(spec.r_bath);
        let order = grids.orders.last().copied().unwrap_or(spec.order);
        let gen_r = rb.max(spec.r_bath);
        let fixed = EnsembleSpec {
            r_dipole: rd,
            r_bath: rb,
            order,
            ..spec.clone()
        };
        let points_of = |param: ScanParameter, values: Vec<f64>| -> Result<Scan> {
            let mut points = Vec::new();
            for &v in &values {
                let mut s = fixed.clone();
                match param {
                    ScanParameter::RDipole => s.r_dipole = v,
                    ScanParameter::RBath => s.r_bath = v,
                    ScanParameter::Order => s.order = v as usize,
                }
                if s.order >= 4 && s.concentration_ppm > base.high_order_cap_ppm {
                    return Err(Error::validation(format!(
                        "order {} at {} ppm exceeds the cost cap of {} ppm",
                        s.order, s.concentration_ppm, base.high_order_cap_ppm
                    )));
                }
                let suffix = format!("_scan_rd{}_rb{}", s.r_dipole, s.r_bath);
                let (_, averaged, _) = run_ensemble(&base, &s, output, &suffix, Some(gen_r))?;
                points.push(ScanPoint {
                    value: v,
                    fit: fit_entry(&averaged, method, CONVERGENCE_L_F),
                });
            }
            let fits: Vec<Option<(f64, f64)>> =
                points.iter().map(|p| p.fit.fit.as_ref().map(|f| (f.t2, f.p))).collect();
            let idx = converged_index(&fits, CONVERGENCE_TOLERANCE);
            let note = idx
                .is_none()
                .then(|| "grid does not bracket convergence; extend it to larger values".to_owned());
            Ok(Scan {
                parameter: param,
                order: fixed.order,
                r_dipole: fixed.r_dipole,
                r_bath: fixed.r_bath,
                converged_at: idx.map(|i| values[i]),
                note,
                points,
            })
        };
        let mut scans = Vec::new();
        if !grids.r_dipole.is_empty() {
            scans.push(points_of(ScanParameter::RDipole, grids.r_dipole.clone())?);
        }
        if !grids.r_bath.is_empty() {
            scans.push(points_of(ScanParameter::RBath, grids.r_bath.clone())?);
        }
        if !grids.orders.is_empty() {
            scans.push(points_of(ScanParameter::Order, grids.orders.iter().map(|&o| o as f64).collect())?);
        }
        let find = |p: ScanParameter| scans.iter().find(|s| s.parameter == p).and_then(|s| s.converged_at);
        let r_dipole = find(ScanParameter::RDipole);
        let r_bath = find(ScanParameter::RBath);
        rows.push(ConvergenceRow {
            concentration_ppm: spec.concentration_ppm,
            r_dipole,
            r_bath,
            r_bath_over_r_dipole: r_dipole.zip(r_bath).map(|(d, b)| b / d),
            order: find(ScanParameter::Order).map(|o| o as usize),
            scans,
        });
    }
    let report = ConvergenceReport {
        schema_version: io::SCHEMA_VERSION,
        version: crate::VERSION.to_owned(),
        config: config.clone(),
        tolerance: CONVERGENCE_TOLERANCE,
        l_f: CONVERGENCE_L_F,
        rows,
    };
    if let Some(out) = output {
        io::write_json(&out.join("convergence.json"), &report)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// bootstrap

/// Subsampling statistics for every size in `sizes`; repeats run in parallel.
pub fn bootstrap_report(
    curves: &[CoherenceCurve],
    sizes: &[usize],
    repeats: usize,
    method: FitMethod,
    l_f: f64,
    seed: u64,
) -> Result<Vec<BootstrapResult>> {
    sizes
        .iter()
        .map(|&n| {
            let plan = Bootstrap::new(curves, n, repeats, method, l_f, seed)?;
            let outcomes = (0..repeats).into_par_iter().map(|r| plan.repeat(r)).collect();
            let result = plan.finish(outcomes);
            if result.failures() > 0 {
                log::warn!("N = {n}: {} of {repeats} subsample fits failed", result.failures());
            }
            Ok(result)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEntry {
    pub subsample_size: usize,
    pub repeats: usize,
    pub failed_repeats: Vec<usize>,
    pub half_width_t2: f64,
    pub half_width_p: f64,
    pub percentiles_t2: Vec<Percentile>,
    pub percentiles_p: Vec<Percentile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub schema_version: u32,
    pub version: String,
    pub ensemble_size: usize,
    pub method: FitMethod,
    pub l_f: f64,
    pub seed: u64,
    pub reference: FitResult,
    pub entries: Vec<BootstrapEntry>,
}

pub fn bootstrap_summary(results: &[BootstrapResult]) -> Option<BootstrapSummary> {
    let first = results.first()?;
    Some(BootstrapSummary {
        schema_version: io::SCHEMA_VERSION,
        version: crate::VERSION.to_owned(),
        ensemble_size: first.ensemble_size,
        method: first.method,
        l_f: first.l_f,
        seed: first.seed,
        reference: first.reference.clone(),
        entries: results
            .iter()
            .map(|r| BootstrapEntry {
                subsample_size: r.subsample_size,
                repeats: r.repeats,
                failed_repeats: r.failed_repeats.clone(),
                half_width_t2: half_width(&r.delta_t2),
                half_width_p: half_width(&r.delta_p),
                percentiles_t2: r.percentiles_t2(),
                percentiles_p: r.percentiles_p(),
            })
            .collect(),
    })
}

/// Write `hist_N<n>_{t2,p}.csv` per size and `bootstrap.json` into `dir`.
pub fn write_bootstrap(dir: &Path, results: &[BootstrapResult]) -> Result<()> {
    for r in results {
        let pairs: [(&str, nv_gcce_core::Result<Histogram>); 2] = [("t2", r.histogram_t2()), ("p", r.histogram_p())];
        for (name, hist) in pairs {
            match hist {
                Ok(h) => io::write_histogram(&dir.join(format!("hist_N{}_{name}.csv", r.subsample_size)), &h)?,
                Err(e) => log::warn!("N = {}: no {name} histogram ({e})", r.subsample_size),
            }
        }
    }
    if let Some(summary) = bootstrap_summary(results) {
        io::write_json(&dir.join("bootstrap.json"), &summary)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// oracle check

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCase {
    pub seed: u64,
    pub n_spins: usize,
    pub max_abs_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub tolerance: f64,
    pub cases: Vec<OracleCase>,
    pub max_abs_difference: f64,
    pub passed: bool,
}

pub const ORACLE_TOLERANCE: f64 = 1e-8;

/// A bath of 2–4 electrons placed at random 15–40 Å from the NV and at least 8 Å apart.
pub fn random_small_bath(seed: u64) -> SpinBathConfiguration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=4);
    let mut spins: Vec<BathSpin> = Vec::with_capacity(n);
    while spins.len() < n {
        let p = [
            rng.gen_range(-40.0..40.0),
            rng.gen_range(-40.0..40.0),
            rng.gen_range(-40.0..40.0f64),
        ];
        let r = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        let apart = spins
            .iter()
            .all(|s| (0..3).map(|k| (s.position[k] - p[k]).powi(2)).sum::<f64>().sqrt() >= 8.0);
        if (15.0..=40.0).contains(&r) && apart {
            spins.push(BathSpin::electron(p));
        }
    }
    SpinBathConfiguration {
        id: seed,
        seed,
        concentration_ppm: 0.0,
        r_bath: 40.0,
        lattice: LatticeSpec::DIAMOND,
        spins,
    }
}

/// gCCE with order equal to the bath size against exact evolution of the whole bath,
/// both averaged over the same bath-state samples.
pub fn oracle_check(n_baths: usize, seed: u64, n_samples: usize) -> Result<OracleReport> {
    if n_baths == 0 || n_samples == 0 {
        return Err(Error::validation("oracle check needs at least one bath and one sample"));
    }
    let grid = TimeGrid::linear(5e-3, 101)?;
    let central = CentralSpin::nv();
    let field = ExternalField::along_z(100.0);
    let cases = (0..n_baths as u64)
        .into_par_iter()
        .map(|i| -> Result<OracleCase> {
            let case_seed = seed::derive(seed, seed::CONFIGURATION, i);
            let config = random_small_bath(case_seed);
            let graph = build_neighbor_graph(config.positions(), 1e3)?;
            let clusters = enumerate_clusters(&graph, config.len())?;
            let mc = seed::derive(seed, seed::BATH_STATE, i);
            let gcce = GcceProblem::new(&config, &clusters, &central, &field, &grid, n_samples, mc)?.run()?;
            let exact = exact_coherence(
                &config,
                &central,
                &field,
                &grid,
                ExactAveraging::Samples {
                    count: n_samples,
                    seed: mc,
                },
                DEFAULT_EXACT_CAP,
            )?;
            let diff = gcce
                .values
                .iter()
                .zip(&exact.values)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            Ok(OracleCase {
                seed: case_seed,
                n_spins: config.len(),
                max_abs_difference: diff,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max = cases.iter().map(|c| c.max_abs_difference).fold(0.0, f64::max);
    Ok(OracleReport {
        tolerance: ORACLE_TOLERANCE,
        max_abs_difference: max,
        passed: max < ORACLE_TOLERANCE,
        cases,
    })
}
