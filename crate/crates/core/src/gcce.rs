//! Generalized CCE with Monte Carlo mean-field sampling, and an exact oracle.
//!
//! For every bath-state sample each cluster is evolved under its full Hamiltonian
//! while spins outside the cluster only shift the cluster spins (and the central
//! spin) through their secular `zz` couplings at the sampled projections. The
//! irreducible factor of a cluster is its coherence divided by the irreducible
//! factors of all of its subclusters; the sample's coherence is the product of all
//! irreducible factors, and the curve is the mean over samples.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterSet;
use crate::echo::EchoEvolution;
use crate::error::{Error, Result};
use crate::lattice::SpinBathConfiguration;
use crate::model::{
    dipolar_tensor_with, BathSpin, CentralSpin, ClusterHamiltonian, CouplingRole, ExternalField,
    MeanFieldShifts, PhysicalConstants,
};
use crate::seed;

/// Irreducible factors whose denominator falls below this magnitude are replaced by 1.
pub const DIVERGENCE_THRESHOLD: f64 = 1e-10;

/// Default number of bath spins the exact oracle accepts (dimension 3·2¹⁰).
pub const DEFAULT_EXACT_CAP: usize = 10;

/// Reference coherence time at 1 ppm used to size the default grid (ms).
pub const REFERENCE_T2_AT_1PPM: f64 = 0.0527;

pub const DEFAULT_TIME_POINTS: usize = 101;

/// Budget for caching the static cluster Hamiltonians across samples (bytes).
const HAMILTONIAN_CACHE_BYTES: usize = 256 << 20;

/// Total echo times `t = 2τ` in ms, strictly increasing and non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::invalid("time_grid", "needs at least one point"));
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::invalid("time_grid", "times must be finite and non-negative"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("time_grid", "times must be strictly increasing"));
        }
        Ok(Self { times })
    }

    /// `n_points` evenly spaced values from 0 to `t_max` inclusive.
    pub fn linear(t_max: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 || !(t_max > 0.0) {
            return Err(Error::invalid("time_grid", "need t_max > 0 and at least two points"));
        }
        let step = t_max / (n_points - 1) as f64;
        Self::new((0..n_points).map(|i| i as f64 * step).collect())
    }

    /// 101 points over `[0, 4·T2_est]` with `T2_est = 52.7 μs · (1 ppm / ρ)`.
    pub fn default_for_concentration(concentration_ppm: f64) -> Result<Self> {
        if !(concentration_ppm > 0.0) {
            return Err(Error::invalid("concentration_ppm", "default grid needs a positive concentration"));
        }
        Self::linear(4.0 * REFERENCE_T2_AT_1PPM / concentration_ppm, DEFAULT_TIME_POINTS)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Sampled `m_I = ±1/2` of every bath spin of a configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BathStateSample {
    pub seed: u64,
    up: Vec<bool>,
}

impl BathStateSample {
    /// Independent uniform projections (infinite-temperature bath).
    pub fn draw(n_spins: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            seed,
            up: (0..n_spins).map(|_| rng.gen::<bool>()).collect(),
        }
    }

    /// Sample `index` of the stream keyed by `master`.
    pub fn nth(n_spins: usize, master: u64, index: u64) -> Self {
        Self::draw(n_spins, seed::derive(master, seed::BATH_STATE, index))
    }

    pub fn from_spins_up(up: Vec<bool>) -> Self {
        Self { seed: 0, up }
    }

    pub fn len(&self) -> usize {
        self.up.len()
    }

    pub fn is_empty(&self) -> bool {
        self.up.is_empty()
    }

    /// `+1/2` or `-1/2`.
    pub fn projection(&self, spin: usize) -> f64 {
        if self.up[spin] {
            0.5
        } else {
            -0.5
        }
    }

    /// Bath basis index of `members` in the cluster layout (first member most significant).
    pub fn basis_index(&self, members: &[usize]) -> usize {
        let k = members.len();
        members
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &m)| if self.up[m] { acc } else { acc | (1 << (k - 1 - i)) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Gcce,
    Exact,
    Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMetadata {
    pub kind: CurveKind,
    pub order: Option<usize>,
    pub r_bath: Option<f64>,
    pub r_dipole: Option<f64>,
    pub n_mc_samples: usize,
    pub seed: u64,
    pub config_id: Option<u64>,
    /// Time points at which an irreducible factor was replaced by 1.
    pub divergence_events: u64,
    /// Largest `|Im L|` of the reported curve.
    pub max_abs_imag: f64,
    /// Configuration ids of averaged members (empty for a single curve).
    pub members: Vec<u64>,
    /// Monte Carlo seeds of averaged members, aligned with `members`.
    #[serde(default)]
    pub member_seeds: Vec<u64>,
}

impl CurveMetadata {
    pub(crate) fn new(kind: CurveKind) -> Self {
        Self {
            kind,
            order: None,
            r_bath: None,
            r_dipole: None,
            n_mc_samples: 0,
            seed: 0,
            config_id: None,
            divergence_events: 0,
            max_abs_imag: 0.0,
            members: Vec::new(),
            member_seeds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceCurve {
    pub times: Vec<f64>,
    pub values: Vec<Complex64>,
    pub metadata: CurveMetadata,
}

impl CoherenceCurve {
    pub fn from_real(times: Vec<f64>, values: Vec<f64>) -> Self {
        let values = values.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
        Self {
            times,
            values,
            metadata: CurveMetadata::new(CurveKind::Ensemble),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `Re L(t)`, the reported coherence.
    pub fn real_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub(crate) fn refresh_imag(&mut self) {
        self.metadata.max_abs_imag = self.values.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    }
}

/// Secular couplings of a configuration: `K_ij^zz` between bath spins and `A_i^zz`
/// between the central spin and each bath spin.
#[derive(Debug, Clone)]
struct SecularCouplings {
    n: usize,
    kzz: Vec<f64>,
    azz: Vec<f64>,
}

impl SecularCouplings {
    fn new(spins: &[BathSpin], central: &CentralSpin, constants: &PhysicalConstants) -> Result<Self> {
        let n = spins.len();
        let mut kzz = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let k = dipolar_tensor_with(
                    constants,
                    &spins[i].position,
                    &spins[j].position,
                    spins[i].gamma,
                    spins[j].gamma,
                    CouplingRole::BathBath,
                )?
                .zz();
                kzz[i * n + j] = k;
                kzz[j * n + i] = k;
            }
        }
        let azz = spins
            .iter()
            .map(|s| {
                dipolar_tensor_with(constants, &[0.0; 3], &s.position, central.gamma, s.gamma, CouplingRole::CentralBath)
                    .map(|t| t.zz())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { n, kzz, azz })
    }

    /// Mean-field z-shifts on `members` from every spin outside them.
    fn shifts(&self, members: &[usize], sample: &BathStateSample, outside: &mut [bool]) -> MeanFieldShifts {
        for &m in members {
            outside[m] = false;
        }
        let mut central = 0.0;
        let mut bath = vec![0.0; members.len()];
        for j in 0..self.n {
            if !outside[j] {
                continue;
            }
            let s = sample.projection(j);
            central += self.azz[j] * s;
            for (slot, &m) in bath.iter_mut().zip(members) {
                *slot += self.kzz[m * self.n + j] * s;
            }
        }
        for &m in members {
            outside[m] = true;
        }
        MeanFieldShifts::along_z(central, &bath)
    }
}

fn cluster_spins(config: &SpinBathConfiguration, members: &[usize]) -> Vec<BathSpin> {
    members.iter().map(|&m| config.spins[m]).collect()
}

/// Coherence of one cluster under mean-field shifts from the rest of the bath.
pub fn cluster_coherence(
    members: &[usize],
    config: &SpinBathConfiguration,
    central: &CentralSpin,
    field: &ExternalField,
    sample: &BathStateSample,
    grid: &TimeGrid,
) -> Result<Vec<Complex64>> {
    if sample.len() != config.len() {
        return Err(Error::invalid("sample", "one projection per bath spin is required"));
    }
    let constants = PhysicalConstants::STANDARD;
    let couplings = SecularCouplings::new(&config.spins, central, &constants)?;
    let mut outside = vec![true; config.len()];
    let shifts = couplings.shifts(members, sample, &mut outside);
    let h = ClusterHamiltonian::new(&cluster_spins(config, members), central, field, &constants)?;
    let evo = EchoEvolution::new(h.with_shifts(&shifts)?)?;
    Ok(evo.coherence(sample.basis_index(members), grid.times()))
}

/// Coherence of a single bath-state sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCoherence {
    pub values: Vec<Complex64>,
    pub divergence_events: u64,
}

/// A configuration and its cluster set, ready to evaluate bath-state samples.
///
/// Samples are independent, so callers may evaluate them in any order or in
/// parallel and hand the results to [`GcceProblem::combine`] in index order.
pub struct GcceProblem<'a> {
    config: &'a SpinBathConfiguration,
    clusters: &'a ClusterSet,
    central: CentralSpin,
    field: ExternalField,
    constants: PhysicalConstants,
    grid: &'a TimeGrid,
    couplings: SecularCouplings,
    hamiltonians: Option<Vec<ClusterHamiltonian>>,
    r_dipole: Option<f64>,
    n_samples: usize,
    seed: u64,
}

impl<'a> GcceProblem<'a> {
    pub fn new(
        config: &'a SpinBathConfiguration,
        clusters: &'a ClusterSet,
        central: &CentralSpin,
        field: &ExternalField,
        grid: &'a TimeGrid,
        n_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::invalid("n_mc_samples", "must be at least 1"));
        }
        central.validate()?;
        field.validate()?;
        if let Some(bad) = clusters.clusters().iter().flatten().find(|&&m| m >= config.len()) {
            return Err(Error::invalid("clusters", alloc::format!("spin index {bad} outside the configuration")));
        }
        let constants = PhysicalConstants::STANDARD;
        let couplings = SecularCouplings::new(&config.spins, central, &constants)?;
        let bytes: usize = clusters
            .clusters()
            .iter()
            .map(|c| {
                let d = 3usize << c.len();
                d * d * core::mem::size_of::<Complex64>()
            })
            .sum();
        let hamiltonians = if bytes <= HAMILTONIAN_CACHE_BYTES {
            Some(
                clusters
                    .clusters()
                    .iter()
                    .map(|c| ClusterHamiltonian::new(&cluster_spins(config, c), central, field, &constants))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(Self {
            config,
            clusters,
            central: *central,
            field: *field,
            constants,
            grid,
            couplings,
            hamiltonians,
            r_dipole: clusters.r_dipole,
            n_samples,
            seed,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Factorized coherence of bath-state sample `index`.
    pub fn evaluate_sample(&self, index: usize) -> Result<SampleCoherence> {
        let sample = BathStateSample::nth(self.config.len(), self.seed, index as u64);
        self.evaluate(&sample)
    }

    pub fn evaluate(&self, sample: &BathStateSample) -> Result<SampleCoherence> {
        let n_times = self.grid.len();
        let order = self.clusters.order;
        let one = Complex64::new(1.0, 0.0);
        let mut product = vec![one; n_times];
        let mut irreducible: Vec<Vec<Complex64>> = vec![Vec::new(); self.clusters.len()];
        let mut outside = vec![true; self.config.len()];
        let mut denominator = vec![one; n_times];
        let mut events = 0u64;

        for (idx, members) in self.clusters.clusters().iter().enumerate() {
            let shifts = self.couplings.shifts(members, sample, &mut outside);
            let h = match &self.hamiltonians {
                Some(cache) => cache[idx].with_shifts(&shifts)?,
                None => ClusterHamiltonian::new(
                    &cluster_spins(self.config, members),
                    &self.central,
                    &self.field,
                    &self.constants,
                )?
                .with_shifts(&shifts)?,
            };
            let evo = EchoEvolution::new(h)?;
            let mut values = evo.coherence(sample.basis_index(members), self.grid.times());

            let subs = self.clusters.subclusters(idx);
            if !subs.is_empty() {
                denominator.iter_mut().for_each(|d| *d = one);
                for &s in subs {
                    for (d, v) in denominator.iter_mut().zip(&irreducible[s]) {
                        *d *= v;
                    }
                }
                for (v, d) in values.iter_mut().zip(&denominator) {
                    if d.norm() < DIVERGENCE_THRESHOLD {
                        *v = one;
                        events += 1;
                    } else {
                        *v /= d;
                    }
                }
            }
            for (p, v) in product.iter_mut().zip(&values) {
                *p *= v;
            }
            if members.len() < order {
                irreducible[idx] = values;
            }
        }
        Ok(SampleCoherence {
            values: product,
            divergence_events: events,
        })
    }

    /// Mean over samples, accumulated in the order given.
    pub fn combine(&self, samples: &[SampleCoherence]) -> CoherenceCurve {
        let n_times = self.grid.len();
        let mut mean = vec![Complex64::new(0.0, 0.0); n_times];
        let mut events = 0;
        for s in samples {
            for (m, v) in mean.iter_mut().zip(&s.values) {
                *m += v;
            }
            events += s.divergence_events;
        }
        let scale = 1.0 / samples.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m *= scale);
        let mut curve = CoherenceCurve {
            times: self.grid.times().to_vec(),
            values: mean,
            metadata: CurveMetadata {
                order: Some(self.clusters.order),
                r_bath: Some(self.config.r_bath),
                r_dipole: self.r_dipole,
                n_mc_samples: samples.len(),
                seed: self.seed,
                config_id: Some(self.config.id),
                divergence_events: events,
                ..CurveMetadata::new(CurveKind::Gcce)
            },
        };
        curve.refresh_imag();
        curve
    }

    pub fn run(&self) -> Result<CoherenceCurve> {
        let samples = (0..self.n_samples)
            .map(|k| self.evaluate_sample(k))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.combine(&samples))
    }
}

/// Ensemble-free gCCE coherence of one configuration, averaged over `n_mc_samples`.
pub fn gcce_coherence(
    config: &SpinBathConfiguration,
    clusters: &ClusterSet,
    central: &CentralSpin,
    field: &ExternalField,
    grid: &TimeGrid,
    n_mc_samples: usize,
    seed: u64,
) -> Result<CoherenceCurve> {
    GcceProblem::new(config, clusters, central, field, grid, n_mc_samples, seed)?.run()
}

/// Which bath states the exact oracle averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExactAveraging {
    /// The same sample stream as [`GcceProblem::evaluate_sample`].
    Samples { count: usize, seed: u64 },
    /// All `2^N` product states with equal weight (infinite temperature).
    AllStates,
}

/// Brute-force evolution of the whole bath without cluster truncation or mean field.
pub fn exact_coherence(
    config: &SpinBathConfiguration,
    central: &CentralSpin,
    field: &ExternalField,
    grid: &TimeGrid,
    averaging: ExactAveraging,
    max_spins: usize,
) -> Result<CoherenceCurve> {
    let n = config.len();
    if n > max_spins {
        return Err(Error::BathTooLarge {
            n_spins: n,
            cap: max_spins,
            dim: 3usize.saturating_mul(1usize.checked_shl(n as u32).unwrap_or(usize::MAX)),
        });
    }
    let h = ClusterHamiltonian::new(&config.spins, central, field, &PhysicalConstants::STANDARD)?;
    let evo = EchoEvolution::new(h.with_shifts(&MeanFieldShifts::none(n))?)?;
    let members: Vec<usize> = (0..n).collect();

    let mut mean = vec![Complex64::new(0.0, 0.0); grid.len()];
    let (count, seed_used) = match averaging {
        ExactAveraging::Samples { count, seed } => {
            if count == 0 {
                return Err(Error::invalid("n_mc_samples", "must be at least 1"));
            }
            for k in 0..count {
                let sample = BathStateSample::nth(n, seed, k as u64);
                let l = evo.coherence(sample.basis_index(&members), grid.times());
                mean.iter_mut().zip(&l).for_each(|(m, v)| *m += v);
            }
            (count, seed)
        }
        ExactAveraging::AllStates => {
            let states = 1usize << n;
            for b in 0..states {
                let l = evo.coherence(b, grid.times());
                mean.iter_mut().zip(&l).for_each(|(m, v)| *m += v);
            }
            (states, 0)
        }
    };
    let scale = 1.0 / count as f64;
    mean.iter_mut().for_each(|m| *m *= scale);
    let mut curve = CoherenceCurve {
        times: grid.times().to_vec(),
        values: mean,
        metadata: CurveMetadata {
            r_bath: Some(config.r_bath),
            n_mc_samples: count,
            seed: seed_used,
            config_id: Some(config.id),
            ..CurveMetadata::new(CurveKind::Exact)
        },
    };
    curve.refresh_imag();
    Ok(curve)
}
