//! Random electron-spin baths on the carbon sites of diamond.
//!
//! The supercell is never materialized: the number of occupied sites is drawn from
//! a binomial over the carbon sites inside the `r_bath` sphere, and that many
//! distinct sites are then picked uniformly. The vacancy sits at the origin and the
//! nitrogen on the neighbouring site along [111]; both are excluded.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{norm, rotate_from_nv_frame, rotate_to_nv_frame, BathSpin, Position, GAMMA_E};

/// Fractional coordinates of the eight atoms of the conventional diamond cell.
const DIAMOND_BASIS: [[f64; 3]; 8] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
    [0.5, 0.5, 0.0],
    [0.25, 0.25, 0.25],
    [0.25, 0.75, 0.75],
    [0.75, 0.25, 0.75],
    [0.75, 0.75, 0.25],
];

/// Lattice sites `(cell_x, cell_y, cell_z, basis)` taken by the NV itself.
const NV_SITES: [(i64, i64, i64, usize); 2] = [(0, 0, 0, 0), (0, 0, 0, 4)];

/// Above this many sites in the sphere the enumerate-and-shuffle path is never used.
const ENUMERATION_LIMIT: u64 = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    /// Cubic lattice constant in Å.
    pub lattice_constant: f64,
    pub sites_per_cell: u32,
    /// Edge of the cubic supercell in Å.
    pub supercell_edge: f64,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self::DIAMOND
    }
}

impl LatticeSpec {
    pub const DIAMOND: LatticeSpec = LatticeSpec {
        lattice_constant: 3.57,
        sites_per_cell: 8,
        supercell_edge: 4000.0,
    };

    /// Carbon sites per Å³.
    pub fn carbon_density(&self) -> f64 {
        let a = self.lattice_constant;
        self.sites_per_cell as f64 / (a * a * a)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lattice_constant > 0.0 && self.lattice_constant.is_finite()) {
            return Err(Error::invalid("lattice_constant", "must be positive"));
        }
        if self.sites_per_cell != 8 {
            return Err(Error::invalid("sites_per_cell", "diamond has 8 sites per cubic cell"));
        }
        if !(self.supercell_edge > 0.0 && self.supercell_edge.is_finite()) {
            return Err(Error::invalid("supercell_edge", "must be positive"));
        }
        Ok(())
    }

    /// Cubic-frame position of a site in Å.
    pub fn site_position(&self, cell: (i64, i64, i64), basis: usize) -> Position {
        let a = self.lattice_constant;
        let f = DIAMOND_BASIS[basis];
        [
            (cell.0 as f64 + f[0]) * a,
            (cell.1 as f64 + f[1]) * a,
            (cell.2 as f64 + f[2]) * a,
        ]
    }

    /// Distance from a cubic-frame point to the nearest diamond site.
    pub fn distance_to_nearest_site(&self, p: &Position) -> f64 {
        let a = self.lattice_constant;
        let mut best = f64::INFINITY;
        for f in DIAMOND_BASIS {
            let mut d2 = 0.0;
            for k in 0..3 {
                let x = p[k] / a - f[k];
                let r = x - libm::round(x);
                d2 += r * r * a * a;
            }
            best = best.min(libm::sqrt(d2));
        }
        best
    }

    /// Number of carbon sites within `r_bath` of the vacancy, excluding the NV.
    pub fn sites_in_sphere(&self, r_bath: f64) -> u64 {
        let a = self.lattice_constant;
        let rr = r_bath / a;
        let m = libm::ceil(rr) as i64 + 1;
        let mut count: u64 = 0;
        for f in DIAMOND_BASIS {
            for i in -m..=m {
                let x = i as f64 + f[0];
                for j in -m..=m {
                    let y = j as f64 + f[1];
                    let rem = rr * rr - x * x - y * y;
                    if rem < 0.0 {
                        continue;
                    }
                    let s = libm::sqrt(rem);
                    let lo = libm::ceil(-s - f[2]) as i64;
                    let hi = libm::floor(s - f[2]) as i64;
                    if hi >= lo {
                        count += (hi - lo + 1) as u64;
                    }
                }
            }
        }
        count.saturating_sub(NV_SITES.len() as u64)
    }
}

/// Mean number of bath spins, `(8/a³)·(4π/3)·r_bath³·ρ_e·10⁻⁶`.
pub fn expected_spin_count(concentration_ppm: f64, r_bath: f64, lattice: &LatticeSpec) -> f64 {
    let volume = 4.0 / 3.0 * core::f64::consts::PI * r_bath * r_bath * r_bath;
    lattice.carbon_density() * volume * concentration_ppm * 1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinBathConfiguration {
    pub id: u64,
    pub seed: u64,
    pub concentration_ppm: f64,
    /// Å
    pub r_bath: f64,
    pub lattice: LatticeSpec,
    /// Bath electrons in the NV frame, sorted by distance from the NV.
    pub spins: Vec<BathSpin>,
}

impl SpinBathConfiguration {
    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = &Position> {
        self.spins.iter().map(|s| &s.position)
    }

    /// Check the invariants a loaded or hand-built configuration must satisfy.
    pub fn validate(&self) -> Result<()> {
        self.lattice.validate()?;
        if !(self.r_bath > 0.0 && self.r_bath.is_finite()) {
            return Err(Error::InvalidConfiguration(format!("r_bath = {} must be positive", self.r_bath)));
        }
        if !(0.0..=1e6).contains(&self.concentration_ppm) {
            return Err(Error::InvalidConfiguration(format!(
                "concentration {} ppm outside [0, 1e6]",
                self.concentration_ppm
            )));
        }
        let tol = 1e-9 * self.r_bath.max(1.0);
        let mut seen = BTreeSet::new();
        for (i, spin) in self.spins.iter().enumerate() {
            let r = norm(&spin.position);
            if !r.is_finite() || !spin.gamma.is_finite() {
                return Err(Error::InvalidConfiguration(format!("spin {i} has non-finite data")));
            }
            if r == 0.0 {
                return Err(Error::InvalidConfiguration(format!("spin {i} sits on the NV center")));
            }
            if r > self.r_bath + tol {
                return Err(Error::InvalidConfiguration(format!(
                    "spin {i} at {r} Å lies outside r_bath = {} Å",
                    self.r_bath
                )));
            }
            // positions snapped to 1e-6 Å identify duplicates
            let key = spin.position.map(|x| libm::round(x * 1e6) as i64);
            if !seen.insert(key) {
                return Err(Error::InvalidConfiguration(format!("spin {i} duplicates another site")));
            }
        }
        Ok(())
    }
}

/// Draw a bath of electron spins at `concentration_ppm` inside a sphere of `r_bath` Å.
pub fn generate_configuration(
    concentration_ppm: f64,
    r_bath: f64,
    lattice: &LatticeSpec,
    seed: u64,
    id: u64,
) -> Result<SpinBathConfiguration> {
    lattice.validate()?;
    if !(0.0..=1e6).contains(&concentration_ppm) {
        return Err(Error::invalid("concentration_ppm", "must lie in [0, 1e6]"));
    }
    if !(r_bath > 0.0 && r_bath.is_finite()) {
        return Err(Error::invalid("r_bath", "must be positive"));
    }
    let limit = lattice.supercell_edge / 2.0;
    if r_bath > limit {
        return Err(Error::BathExceedsSupercell { r_bath, limit });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n_sites = lattice.sites_in_sphere(r_bath);
    let probability = (concentration_ppm * 1e-6).min(1.0);
    let count = if probability == 0.0 || n_sites == 0 {
        0
    } else {
        Binomial::new(n_sites, probability)
            .map_err(|_| Error::invalid("concentration_ppm", "invalid binomial parameters"))?
            .sample(&mut rng)
    };

    let sites = if count == 0 {
        Vec::new()
    } else if 4 * count > n_sites && n_sites <= ENUMERATION_LIMIT {
        let mut all = enumerate_sites(lattice, r_bath);
        let (chosen, _) = all.partial_shuffle(&mut rng, count as usize);
        chosen.to_vec()
    } else {
        reject_sample_sites(lattice, r_bath, count as usize, &mut rng)
    };

    let mut spins: Vec<BathSpin> = sites
        .into_iter()
        .map(|(cell, basis)| BathSpin {
            position: rotate_to_nv_frame(&lattice.site_position(cell, basis)),
            gamma: GAMMA_E,
        })
        .collect();
    spins.sort_by(|a, b| {
        norm(&a.position)
            .total_cmp(&norm(&b.position))
            .then_with(|| a.position.partial_cmp(&b.position).unwrap_or(core::cmp::Ordering::Equal))
    });

    Ok(SpinBathConfiguration {
        id,
        seed,
        concentration_ppm,
        r_bath,
        lattice: *lattice,
        spins,
    })
}

type Site = ((i64, i64, i64), usize);

fn inside(lattice: &LatticeSpec, cell: (i64, i64, i64), basis: usize, r_bath: f64) -> bool {
    if NV_SITES.contains(&(cell.0, cell.1, cell.2, basis)) {
        return false;
    }
    let p = lattice.site_position(cell, basis);
    p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= r_bath * r_bath
}

fn enumerate_sites(lattice: &LatticeSpec, r_bath: f64) -> Vec<Site> {
    let m = libm::ceil(r_bath / lattice.lattice_constant) as i64 + 1;
    let mut out = Vec::new();
    for i in -m..=m {
        for j in -m..=m {
            for k in -m..=m {
                for b in 0..DIAMOND_BASIS.len() {
                    if inside(lattice, (i, j, k), b, r_bath) {
                        out.push(((i, j, k), b));
                    }
                }
            }
        }
    }
    out
}

fn reject_sample_sites<R: Rng>(lattice: &LatticeSpec, r_bath: f64, count: usize, rng: &mut R) -> Vec<Site> {
    let m = libm::ceil(r_bath / lattice.lattice_constant) as i64 + 1;
    let mut chosen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let cell = (rng.gen_range(-m..=m), rng.gen_range(-m..=m), rng.gen_range(-m..=m));
        let basis = rng.gen_range(0..DIAMOND_BASIS.len());
        if inside(lattice, cell, basis, r_bath) && chosen.insert((cell, basis)) {
            out.push((cell, basis));
        }
    }
    out
}

/// Cubic-frame coordinates of a bath spin, for lattice checks.
pub fn to_cubic_frame(p: &Position) -> Position {
    rotate_from_nv_frame(p)
}
