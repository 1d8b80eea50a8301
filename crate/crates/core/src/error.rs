use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("two spins occupy the same position {0:?}")]
    CoincidentSpins([f64; 3]),

    #[error("cluster of {size} bath spins exceeds the configured maximum of {max}")]
    ClusterTooLarge { size: usize, max: usize },

    #[error("matrix is not Hermitian (max |H - H^dagger| = {residual:e})")]
    NotHermitian { residual: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("r_bath = {r_bath} Å exceeds half the supercell edge ({limit} Å)")]
    BathExceedsSupercell { r_bath: f64, limit: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("cluster enumeration exceeded the safety cap of {cap} clusters; reduce r_dipole")]
    TooManyClusters { cap: usize },

    #[error("bath of {n_spins} spins is too large for exact evolution (cap {cap}, dimension {dim})")]
    BathTooLarge { n_spins: usize, cap: usize, dim: usize },

    #[error("time grids of the curves differ")]
    GridMismatch,

    #[error("only {found} points survive truncation, at least {needed} are required")]
    TooFewPoints { found: usize, needed: usize },

    #[error("degenerate regression input: {0}")]
    Degenerate(String),

    #[error("eigendecomposition failed to converge")]
    EigenFailure,
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
