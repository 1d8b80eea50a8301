//! Hahn-echo decoherence of an NV-center electron spin in a bath of dipolar-coupled
//! electron spins, computed with the generalized cluster-correlation expansion (gCCE).
//!
//! The crate is `no_std` (it needs `alloc`) and holds only pure kernels:
//!
//! * [`model`]: constants, unit system, dipolar tensors and cluster Hamiltonians.
//! * [`lattice`]: random electron-spin baths on diamond carbon sites.
//! * [`cluster`]: proximity graph and connected-cluster enumeration.
//! * [`echo`]: Hahn-echo propagation of a single cluster.
//! * [`gcce`]: mean-field Monte Carlo gCCE and the exact-diagonalization oracle.
//! * [`fit`]: stretched-exponential fits of a coherence curve.
//! * [`ensemble`]: configuration averages and subsampling statistics.
//!
//! Units throughout: lengths in Å, times in ms, magnetic fields in G and every
//! Hamiltonian stored as an angular frequency `H/ħ` in rad·ms⁻¹.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cluster;
pub mod echo;
pub mod ensemble;
pub mod error;
pub mod fit;
pub mod gcce;
pub mod lattice;
mod linalg;
pub mod model;
pub mod seed;
pub mod stats;

pub use cluster::{build_neighbor_graph, enumerate_clusters, ClusterSet, NeighborGraph};
pub use echo::{hahn_echo_propagator, EchoEvolution};
pub use ensemble::{bootstrap_subsample, ensemble_average, Bootstrap, BootstrapResult, EnsembleReport, Histogram};
pub use error::{Error, Result};
pub use fit::{FitMethod, FitOptions, FitResult};
pub use gcce::{
    exact_coherence, gcce_coherence, BathStateSample, CoherenceCurve, CurveMetadata,
    ExactAveraging, GcceProblem, TimeGrid,
};
pub use lattice::{expected_spin_count, generate_configuration, LatticeSpec, SpinBathConfiguration};
pub use model::{
    BathSpin, CentralSpin, ExternalField, InteractionTensor, MeanFieldShifts, PhysicalConstants,
};

pub use num_complex::Complex64;
