//! Run configuration, its defaults and resolution into concrete ensembles.

use std::fmt;
use std::path::{Path, PathBuf};

use nv_gcce_core::fit::FitMethod;
use nv_gcce_core::gcce::DEFAULT_TIME_POINTS;
use nv_gcce_core::TimeGrid;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Converged cutoffs `(ρ [ppm], r_dipole [Å], r_bath [Å])` for second-order runs.
pub const CUTOFFS_ORDER2: [(f64, f64, f64); 4] = [
    (0.1, 850.0, 1000.0),
    (1.0, 400.0, 500.0),
    (10.0, 210.0, 250.0),
    (100.0, 105.0, 125.0),
];

/// Converged cutoffs for third-order runs, also used for higher orders.
pub const CUTOFFS_ORDER3: [(f64, f64, f64); 4] = [
    (0.1, 650.0, 1100.0),
    (1.0, 300.0, 600.0),
    (10.0, 170.0, 340.0),
    (100.0, 90.0, 180.0),
];

/// Default concentration above which fourth and higher orders are refused.
pub const DEFAULT_HIGH_ORDER_CAP_PPM: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Desk,
    Production,
}

impl Scale {
    pub fn default_configs(self) -> usize {
        match self {
            Scale::Desk => 50,
            Scale::Production => 500,
        }
    }

    pub fn default_mc_samples(self) -> usize {
        match self {
            Scale::Desk => 32,
            Scale::Production => 128,
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Production => "production",
        })
    }
}

/// A cutoff radius in Å, or `"auto"` for the built-in converged value.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cutoff {
    #[default]
    #[serde(with = "auto_keyword")]
    Auto,
    Value(f64),
}

mod auto_keyword {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("auto")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "auto" {
            Ok(())
        } else {
            Err(de::Error::custom(format!("expected \"auto\" or a number, got {s:?}")))
        }
    }
}

impl std::str::FromStr for Cutoff {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(Cutoff::Auto);
        }
        s.parse::<f64>()
            .map(Cutoff::Value)
            .map_err(|_| format!("expected \"auto\" or a radius in Å, got {s:?}"))
    }
}

/// Time points of the coherence curve, in ms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSpec {
    /// `points` equally spaced times up to four reference decay times of the concentration.
    Auto { points: usize },
    Linear { t_max_ms: f64, points: usize },
    Explicit { times_ms: Vec<f64> },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Auto {
            points: DEFAULT_TIME_POINTS,
        }
    }
}

impl GridSpec {
    pub fn resolve(&self, concentration_ppm: f64) -> Result<TimeGrid> {
        let grid = match self {
            GridSpec::Auto { points } => {
                if concentration_ppm > 0.0 {
                    let t_max = TimeGrid::default_for_concentration(concentration_ppm)?.times().last().copied();
                    TimeGrid::linear(t_max.unwrap_or(0.0), *points)?
                } else {
                    // nothing decays; any span will do
                    TimeGrid::linear(1.0, *points)?
                }
            }
            GridSpec::Linear { t_max_ms, points } => TimeGrid::linear(*t_max_ms, *points)?,
            GridSpec::Explicit { times_ms } => TimeGrid::new(times_ms.clone())?,
        };
        Ok(grid)
    }
}

fn default_order() -> usize {
    2
}

fn default_field() -> f64 {
    100.0
}

fn default_methods() -> Vec<FitMethod> {
    vec![FitMethod::Exponential]
}

fn default_l_f() -> Vec<f64> {
    vec![0.4]
}

fn default_output() -> PathBuf {
    PathBuf::from("nv-gcce-out")
}

fn default_high_order_cap() -> f64 {
    DEFAULT_HIGH_ORDER_CAP_PPM
}

/// User-facing run description, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub concentrations_ppm: Vec<f64>,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub r_bath: Cutoff,
    #[serde(default)]
    pub r_dipole: Cutoff,
    #[serde(default = "default_field")]
    pub field_gauss: f64,
    #[serde(default)]
    pub n_configs: Option<usize>,
    #[serde(default)]
    pub n_mc_samples: Option<usize>,
    #[serde(default)]
    pub time_grid: GridSpec,
    #[serde(default = "default_methods")]
    pub fit_methods: Vec<FitMethod>,
    #[serde(default = "default_l_f")]
    pub l_f: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scale: Scale,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Orders of four and above are refused above this concentration.
    #[serde(default = "default_high_order_cap")]
    pub high_order_cap_ppm: f64,
}

impl RunConfig {
    pub fn new(concentrations_ppm: Vec<f64>) -> Self {
        Self {
            concentrations_ppm,
            order: default_order(),
            r_bath: Cutoff::Auto,
            r_dipole: Cutoff::Auto,
            field_gauss: default_field(),
            n_configs: None,
            n_mc_samples: None,
            time_grid: GridSpec::default(),
            fit_methods: default_methods(),
            l_f: default_l_f(),
            seed: 0,
            scale: Scale::Desk,
            output_dir: default_output(),
            high_order_cap_ppm: DEFAULT_HIGH_ORDER_CAP_PPM,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })
    }

    /// Check every parameter and resolve `"auto"` values; no computation happens
    /// before this succeeds.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        if self.concentrations_ppm.is_empty() {
            return Err(Error::validation("concentrations_ppm must not be empty"));
        }
        if !(1..=nv_gcce_core::model::MAX_HAMILTONIAN_SPINS).contains(&self.order) {
            return Err(Error::validation(format!(
                "order must lie in 1..={}, got {}",
                nv_gcce_core::model::MAX_HAMILTONIAN_SPINS,
                self.order
            )));
        }
        if !(self.field_gauss >= 0.0 && self.field_gauss.is_finite()) {
            return Err(Error::validation("field_gauss must be finite and non-negative"));
        }
        if self.fit_methods.is_empty() {
            return Err(Error::validation("fit_methods must not be empty"));
        }
        if let Some(bad) = self.l_f.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return Err(Error::validation(format!("l_f values must lie in (0, 1), got {bad}")));
        }
        if self.l_f.is_empty() {
            return Err(Error::validation("l_f must not be empty"));
        }
        let n_configs = self.n_configs.unwrap_or(self.scale.default_configs());
        let n_mc_samples = self.n_mc_samples.unwrap_or(self.scale.default_mc_samples());
        if n_configs == 0 {
            return Err(Error::validation("n_configs must be at least 1"));
        }
        if n_mc_samples == 0 {
            return Err(Error::validation("n_mc_samples must be at least 1"));
        }
        let mut ensembles = Vec::with_capacity(self.concentrations_ppm.len());
        for &rho in &self.concentrations_ppm {
            if !(rho >= 0.0 && rho.is_finite()) {
                return Err(Error::validation(format!("concentration {rho} ppm is not a valid density")));
            }
            if self.order >= 4 && rho > self.high_order_cap_ppm {
                return Err(Error::validation(format!(
                    "order {} at {rho} ppm exceeds the cost cap of {} ppm for orders of four and above; \
                     raise high_order_cap_ppm to run it anyway",
                    self.order, self.high_order_cap_ppm
                )));
            }
            let (auto_dipole, auto_bath) = default_cutoffs(self.order, rho);
            let r_dipole = resolve_cutoff(self.r_dipole, auto_dipole, "r_dipole")?;
            let r_bath = resolve_cutoff(self.r_bath, auto_bath, "r_bath")?;
            let limit = nv_gcce_core::LatticeSpec::DIAMOND.supercell_edge / 2.0;
            if r_bath > limit {
                return Err(Error::validation(format!(
                    "r_bath = {r_bath} Å at {rho} ppm exceeds the supercell limit of {limit} Å"
                )));
            }
            let grid = self.time_grid.resolve(rho)?;
            ensembles.push(EnsembleSpec {
                concentration_ppm: rho,
                order: self.order,
                r_bath,
                r_dipole,
                field_gauss: self.field_gauss,
                n_configs,
                n_mc_samples,
                times_ms: grid.times().to_vec(),
                seed: self.seed,
            });
        }
        Ok(ResolvedConfig {
            version: crate::VERSION.to_owned(),
            scale: self.scale,
            ensembles,
            fit_methods: self.fit_methods.clone(),
            l_f: self.l_f.clone(),
            seed: self.seed,
            output_dir: self.output_dir.clone(),
            high_order_cap_ppm: self.high_order_cap_ppm,
        })
    }
}

fn resolve_cutoff(c: Cutoff, auto: f64, name: &str) -> Result<f64> {
    match c {
        Cutoff::Auto => Ok(auto),
        Cutoff::Value(v) if v > 0.0 && v.is_finite() => Ok(v),
        Cutoff::Value(v) => Err(Error::validation(format!("{name} must be positive, got {v}"))),
    }
}

/// Converged `(r_dipole, r_bath)` for `order` at `rho` ppm, interpolated linearly in
/// log–log between tabulated concentrations and extrapolated along the end segments.
pub fn default_cutoffs(order: usize, rho: f64) -> (f64, f64) {
    let table = if order <= 2 { &CUTOFFS_ORDER2 } else { &CUTOFFS_ORDER3 };
    if rho <= 0.0 {
        // an empty bath; the largest cutoffs are as good as any
        return (table[0].1, table[0].2);
    }
    if let Some(row) = table.iter().find(|r| r.0 == rho) {
        return (row.1, row.2);
    }
    let x = rho.ln();
    let seg = table
        .windows(2)
        .position(|w| x <= w[1].0.ln())
        .unwrap_or(table.len() - 2);
    let (a, b) = (table[seg], table[seg + 1]);
    let w = (x - a.0.ln()) / (b.0.ln() - a.0.ln());
    let lerp = |u: f64, v: f64| (u.ln() + w * (v.ln() - u.ln())).exp();
    (lerp(a.1, b.1), lerp(a.2, b.2))
}

/// One fully specified ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub concentration_ppm: f64,
    pub order: usize,
    /// Å
    pub r_bath: f64,
    /// Å
    pub r_dipole: f64,
    pub field_gauss: f64,
    pub n_configs: usize,
    pub n_mc_samples: usize,
    pub times_ms: Vec<f64>,
    /// Master seed; configuration `k` and its Monte Carlo samples use seeds derived
    /// from it and `k`.
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn grid(&self) -> Result<TimeGrid> {
        Ok(TimeGrid::new(self.times_ms.clone())?)
    }
}

/// A [`RunConfig`] with every default filled in, recorded in every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub version: String,
    pub scale: Scale,
    pub ensembles: Vec<EnsembleSpec>,
    pub fit_methods: Vec<FitMethod>,
    pub l_f: Vec<f64>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub high_order_cap_ppm: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tabulated_cutoffs_are_reproduced() {
        for &(rho, d, b) in &CUTOFFS_ORDER2 {
            let (rd, rb) = default_cutoffs(2, rho);
            assert!((rd - d).abs() < 1e-9 && (rb - b).abs() < 1e-9);
        }
        for &(rho, d, b) in &CUTOFFS_ORDER3 {
            let (rd, rb) = default_cutoffs(3, rho);
            assert!((rd - d).abs() < 1e-9 && (rb - b).abs() < 1e-9);
            assert_eq!(default_cutoffs(4, rho), (rd, rb));
        }
    }

    #[test]
    fn interpolation_is_monotone() {
        let mut last = f64::INFINITY;
        for i in 0..60 {
            let rho = 0.05 * 1.2f64.powi(i);
            let (rd, rb) = default_cutoffs(2, rho);
            assert!(rd < last);
            assert!(rb > rd);
            last = rd;
        }
    }

    #[test]
    fn cutoff_json_forms() {
        let c: Cutoff = serde_json::from_str("\"auto\"").unwrap();
        assert_eq!(c, Cutoff::Auto);
        let c: Cutoff = serde_json::from_str("125.5").unwrap();
        assert_eq!(c, Cutoff::Value(125.5));
        assert!(serde_json::from_str::<Cutoff>("\"big\"").is_err());
        assert_eq!(serde_json::to_string(&Cutoff::Auto).unwrap(), "\"auto\"");
    }

    #[test]
    fn minimal_config_resolves() {
        let cfg: RunConfig = serde_json::from_str(r#"{"concentrations_ppm": [100]}"#).unwrap();
        let r = cfg.resolve().unwrap();
        let e = &r.ensembles[0];
        assert_eq!((e.r_dipole, e.r_bath), (105.0, 125.0));
        assert_eq!(e.n_configs, Scale::Desk.default_configs());
        assert_eq!(e.times_ms.len(), DEFAULT_TIME_POINTS);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = RunConfig::new(vec![10.0]);
        let mut c = base.clone();
        c.l_f = vec![1.0];
        assert!(matches!(c.resolve(), Err(Error::Validation(_))));
        let mut c = base.clone();
        c.order = 4;
        assert!(matches!(c.resolve(), Err(Error::Validation(_))));
        c.high_order_cap_ppm = 20.0;
        assert!(c.resolve().is_ok());
        let mut c = base.clone();
        c.r_bath = Cutoff::Value(2500.0);
        assert!(c.resolve().is_err());
        let mut c = base;
        c.concentrations_ppm = vec![-1.0];
        assert!(c.resolve().is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"concentrations_ppm": [1], "typo": 3}"#).is_err());
    }
}
