//! Physical constants, the NV frame and the spin Hamiltonian of a cluster.
//!
//! All Hamiltonians are angular frequencies (`H/ħ`, rad·ms⁻¹). Distances are in Å,
//! fields in G and gyromagnetic ratios in rad·ms⁻¹·G⁻¹.
//!
//! Basis layout of a cluster Hamiltonian: the central spin is the slowest index with
//! levels ordered `m_s = +1, 0, -1`; bath spins follow in cluster order, the first
//! bath spin being the most significant bit, with bit value 0 for `m_I = +1/2` and
//! 1 for `m_I = -1/2`. Row `c * 2^k + b` is central level `c` and bath pattern `b`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, CMatrix};

/// Electron gyromagnetic ratio in rad·ms⁻¹·G⁻¹.
pub const GAMMA_E: f64 = -17_608.597;

/// `μ0·ħ/(4π)` in units where `γ` is in rad·ms⁻¹·G⁻¹, distances in Å and the
/// resulting coupling in rad·ms⁻¹.
///
/// With `γ` in SI (rad·s⁻¹·T⁻¹) equal to `10⁷ ×` its value in rad·ms⁻¹·G⁻¹, the SI
/// product `10⁻⁷ · ħ · γ²` in rad·s⁻¹·m³ converts to rad·ms⁻¹·Å³ with a factor
/// `10²⁷`, leaving `ħ × 10³⁴`.
pub const DIPOLE_PREFACTOR: f64 = 1.054_571_817;

/// Axial zero-field splitting of the NV ground state, 2π × 2.87 GHz in rad·ms⁻¹.
pub const NV_ZERO_FIELD_SPLITTING: f64 = 2.0 * PI * 2.87e6;

/// Hard cap on the number of bath spins in one Hamiltonian (dimension `3·2^k`).
pub const MAX_HAMILTONIAN_SPINS: usize = 12;

pub type Position = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub gamma_e: f64,
    pub dipole_prefactor: f64,
}

impl PhysicalConstants {
    pub const STANDARD: PhysicalConstants = PhysicalConstants {
        gamma_e: GAMMA_E,
        dipole_prefactor: DIPOLE_PREFACTOR,
    };
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::STANDARD
    }
}

/// Static external magnetic field in G.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExternalField {
    pub b: [f64; 3],
}

impl ExternalField {
    pub fn along_z(b: f64) -> Self {
        Self { b: [0.0, 0.0, b] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.b.iter().all(|c| c.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("field", "components must be finite"))
        }
    }

    pub fn magnitude(&self) -> f64 {
        norm(&self.b)
    }
}

/// The S = 1 NV electron spin at the origin, quantized along the NV axis (z).
///
/// The qubit is the pair `m_s = 0, +1`; `m_s = -1` is kept in the Hilbert space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentralSpin {
    /// Zero-field splitting tensor `D` (rad·ms⁻¹), symmetric.
    pub zfs: [[f64; 3]; 3],
    pub gamma: f64,
}

impl CentralSpin {
    /// NV center with an axial splitting `d` between `m_s = 0` and `m_s = ±1`.
    pub fn with_axial_splitting(d: f64) -> Self {
        let zfs = [
            [-d / 3.0, 0.0, 0.0],
            [0.0, -d / 3.0, 0.0],
            [0.0, 0.0, 2.0 * d / 3.0],
        ];
        Self { zfs, gamma: GAMMA_E }
    }

    pub fn nv() -> Self {
        Self::with_axial_splitting(NV_ZERO_FIELD_SPLITTING)
    }

    pub fn zfs_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.zfs[i][j])
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            for j in 0..3 {
                let (a, b) = (self.zfs[i][j], self.zfs[j][i]);
                if !a.is_finite() || (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::invalid("zfs", "tensor must be finite and symmetric"));
                }
            }
        }
        if !self.gamma.is_finite() {
            return Err(Error::invalid("gamma", "must be finite"));
        }
        Ok(())
    }
}

impl Default for CentralSpin {
    fn default() -> Self {
        Self::nv()
    }
}

/// An I = 1/2 bath electron at `position` (Å, NV frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathSpin {
    pub position: Position,
    pub gamma: f64,
}

impl BathSpin {
    pub fn electron(position: Position) -> Self {
        Self {
            position,
            gamma: GAMMA_E,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CouplingRole {
    /// `S·A_i·I_i`
    CentralBath,
    /// `I_i·K_ij·I_j`
    BathBath,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionTensor {
    pub tensor: Matrix3<f64>,
    pub role: CouplingRole,
}

impl InteractionTensor {
    pub fn zz(&self) -> f64 {
        self.tensor[(2, 2)]
    }
}

/// Static effective fields (rad·ms⁻¹) from frozen spins outside a cluster.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeanFieldShifts {
    /// Multiplies `(S_x, S_y, S_z)` of the central spin.
    pub central: [f64; 3],
    /// Multiplies `(I_x, I_y, I_z)` of each cluster spin, in cluster order.
    pub bath: Vec<[f64; 3]>,
}

impl MeanFieldShifts {
    pub fn none(n_bath: usize) -> Self {
        Self {
            central: [0.0; 3],
            bath: vec![[0.0; 3]; n_bath],
        }
    }

    /// Shifts along z only.
    pub fn along_z(central: f64, bath: &[f64]) -> Self {
        Self {
            central: [0.0, 0.0, central],
            bath: bath.iter().map(|&b| [0.0, 0.0, b]).collect(),
        }
    }
}

pub(crate) fn norm(v: &Position) -> f64 {
    libm::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
}

/// Point-dipole coupling `-γ_i γ_j (μ0ħ/4π) [3 r̂⊗r̂ - 1] / |r|³` in rad·ms⁻¹.
pub fn dipolar_tensor(
    r_i: &Position,
    r_j: &Position,
    gamma_i: f64,
    gamma_j: f64,
    role: CouplingRole,
) -> Result<InteractionTensor> {
    dipolar_tensor_with(&PhysicalConstants::STANDARD, r_i, r_j, gamma_i, gamma_j, role)
}

pub fn dipolar_tensor_with(
    constants: &PhysicalConstants,
    r_i: &Position,
    r_j: &Position,
    gamma_i: f64,
    gamma_j: f64,
    role: CouplingRole,
) -> Result<InteractionTensor> {
    let d = [r_j[0] - r_i[0], r_j[1] - r_i[1], r_j[2] - r_i[2]];
    let r = norm(&d);
    if r == 0.0 || !r.is_finite() {
        return Err(Error::CoincidentSpins(*r_i));
    }
    let u = Vector3::new(d[0] / r, d[1] / r, d[2] / r);
    let scale = -gamma_i * gamma_j * constants.dipole_prefactor / (r * r * r);
    let mut tensor = u * u.transpose() * 3.0 - Matrix3::identity();
    tensor *= scale;
    // exact symmetry regardless of rounding in the outer product
    for a in 0..3 {
        for b in (a + 1)..3 {
            let avg = 0.5 * (tensor[(a, b)] + tensor[(b, a)]);
            tensor[(a, b)] = avg;
            tensor[(b, a)] = avg;
        }
    }
    Ok(InteractionTensor { tensor, role })
}

/// `γ·B`, the Zeeman coefficient vector multiplying the spin operator.
pub fn zeeman_term(gamma: f64, field: &ExternalField) -> [f64; 3] {
    [gamma * field.b[0], gamma * field.b[1], gamma * field.b[2]]
}

const INV_SQRT_6: f64 = 0.408_248_290_463_863;
const INV_SQRT_3: f64 = 0.577_350_269_189_625_8;

/// Rows are the NV-frame axes expressed in cubic lattice coordinates; the last row
/// is the [111] trigonal axis.
const NV_FRAME: [[f64; 3]; 3] = [
    [INV_SQRT_6, INV_SQRT_6, -2.0 * INV_SQRT_6],
    [-FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0],
    [INV_SQRT_3, INV_SQRT_3, INV_SQRT_3],
];

/// Rotate a cubic-lattice vector into the NV frame (z ∥ [111]).
pub fn rotate_to_nv_frame(v: &Position) -> Position {
    let m = &NV_FRAME;
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Inverse of [`rotate_to_nv_frame`].
pub fn rotate_from_nv_frame(v: &Position) -> Position {
    let m = &NV_FRAME;
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Spin-1 operators `[S_x, S_y, S_z]` in the basis `+1, 0, -1`.
pub fn spin_one_operators() -> [DMatrix<Complex64>; 3] {
    let s = FRAC_1_SQRT_2;
    let z = c(0.0, 0.0);
    let sx = DMatrix::from_row_slice(3, 3, &[z, c(s, 0.0), z, c(s, 0.0), z, c(s, 0.0), z, c(s, 0.0), z]);
    let sy = DMatrix::from_row_slice(
        3,
        3,
        &[z, c(0.0, -s), z, c(0.0, s), z, c(0.0, -s), z, c(0.0, s), z],
    );
    let sz = DMatrix::from_row_slice(3, 3, &[c(1.0, 0.0), z, z, z, z, z, z, z, c(-1.0, 0.0)]);
    [sx, sy, sz]
}

/// Spin-1/2 operators `[I_x, I_y, I_z]` in the basis `+1/2, -1/2`.
pub fn spin_half_operators() -> [DMatrix<Complex64>; 3] {
    let z = c(0.0, 0.0);
    let ix = DMatrix::from_row_slice(2, 2, &[z, c(0.5, 0.0), c(0.5, 0.0), z]);
    let iy = DMatrix::from_row_slice(2, 2, &[z, c(0.0, -0.5), c(0.0, 0.5), z]);
    let iz = DMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), z, z, c(-0.5, 0.0)]);
    [ix, iy, iz]
}

/// `Σ_ab M_ab X_a ⊗ Y_b`
fn bilinear(m: &Matrix3<f64>, x: &[DMatrix<Complex64>; 3], y: &[DMatrix<Complex64>; 3]) -> CMatrix {
    let (dx, dy) = (x[0].nrows(), y[0].nrows());
    let mut out = CMatrix::zeros(dx * dy, dx * dy);
    for a in 0..3 {
        for b in 0..3 {
            let coeff = m[(a, b)];
            if coeff != 0.0 {
                out += x[a].kronecker(&y[b]) * Complex64::new(coeff, 0.0);
            }
        }
    }
    out
}

/// `Σ_ab M_ab X_a X_b`
fn quadratic(m: &Matrix3<f64>, x: &[DMatrix<Complex64>; 3]) -> CMatrix {
    let d = x[0].nrows();
    let mut out = CMatrix::zeros(d, d);
    for a in 0..3 {
        for b in 0..3 {
            let coeff = m[(a, b)];
            if coeff != 0.0 {
                out += &x[a] * &x[b] * Complex64::new(coeff, 0.0);
            }
        }
    }
    out
}

fn linear(v: &[f64; 3], x: &[DMatrix<Complex64>; 3]) -> CMatrix {
    let d = x[0].nrows();
    let mut out = CMatrix::zeros(d, d);
    for a in 0..3 {
        if v[a] != 0.0 {
            out += &x[a] * Complex64::new(v[a], 0.0);
        }
    }
    out
}

/// Hamiltonian of the central spin plus a cluster of bath spins, split into the
/// sample-independent part and the diagonal of the mean-field shift operators.
#[derive(Debug, Clone)]
pub struct ClusterHamiltonian {
    n_bath: usize,
    static_part: CMatrix,
}

impl ClusterHamiltonian {
    pub fn new(
        spins: &[BathSpin],
        central: &CentralSpin,
        field: &ExternalField,
        constants: &PhysicalConstants,
    ) -> Result<Self> {
        let k = spins.len();
        if k > MAX_HAMILTONIAN_SPINS {
            return Err(Error::ClusterTooLarge {
                size: k,
                max: MAX_HAMILTONIAN_SPINS,
            });
        }
        let nb = 1usize << k;
        let dim = 3 * nb;
        let s_ops = spin_one_operators();
        let i_ops = spin_half_operators();

        let mut h = CMatrix::zeros(dim, dim);

        // central spin: S·D·S + γ_S B·S
        let mut h_central = quadratic(&central.zfs_matrix(), &s_ops);
        h_central += linear(&zeeman_term(central.gamma, field), &s_ops);
        add_central_single(&mut h, nb, &h_central);

        let origin = [0.0; 3];
        for (i, spin) in spins.iter().enumerate() {
            let bit = k - 1 - i;
            let h_single = linear(&zeeman_term(spin.gamma, field), &i_ops);
            add_bath_single(&mut h, nb, bit, &h_single);

            let a = dipolar_tensor_with(
                constants,
                &origin,
                &spin.position,
                central.gamma,
                spin.gamma,
                CouplingRole::CentralBath,
            )?;
            let op = bilinear(&a.tensor, &s_ops, &i_ops);
            add_central_bath(&mut h, nb, bit, &op);
        }

        for i in 0..k {
            for j in (i + 1)..k {
                let kij = dipolar_tensor_with(
                    constants,
                    &spins[i].position,
                    &spins[j].position,
                    spins[i].gamma,
                    spins[j].gamma,
                    CouplingRole::BathBath,
                )?;
                let op = bilinear(&kij.tensor, &i_ops, &i_ops);
                add_bath_pair(&mut h, nb, k - 1 - i, k - 1 - j, &op);
            }
        }

        symmetrize(&mut h);
        Ok(Self {
            n_bath: k,
            static_part: h,
        })
    }

    pub fn n_bath(&self) -> usize {
        self.n_bath
    }

    pub fn dim(&self) -> usize {
        3 << self.n_bath
    }

    pub fn static_part(&self) -> &CMatrix {
        &self.static_part
    }

    /// Full Hamiltonian with `shift.central·S + Σ_i shift.bath[i]·I_i` added.
    pub fn with_shifts(&self, shifts: &MeanFieldShifts) -> Result<CMatrix> {
        if shifts.bath.len() != self.n_bath {
            return Err(Error::invalid(
                "mean_field_shifts",
                "one bath shift per cluster spin is required",
            ));
        }
        let nb = 1usize << self.n_bath;
        let mut h = self.static_part.clone();
        let central = linear(&shifts.central, &spin_one_operators());
        add_central_single(&mut h, nb, &central);
        let i_ops = spin_half_operators();
        for (i, v) in shifts.bath.iter().enumerate() {
            add_bath_single(&mut h, nb, self.n_bath - 1 - i, &linear(v, &i_ops));
        }
        Ok(h)
    }
}

fn add_central_single(h: &mut CMatrix, nb: usize, op: &CMatrix) {
    for cr in 0..3 {
        for cc in 0..3 {
            let v = op[(cr, cc)];
            if v.re != 0.0 || v.im != 0.0 {
                for b in 0..nb {
                    h[(cr * nb + b, cc * nb + b)] += v;
                }
            }
        }
    }
}

fn add_bath_single(h: &mut CMatrix, nb: usize, bit: usize, op: &CMatrix) {
    let mask = 1usize << bit;
    for c in 0..3 {
        for b in 0..nb {
            let s = (b >> bit) & 1;
            for s2 in 0..2 {
                let v = op[(s, s2)];
                if v.re != 0.0 || v.im != 0.0 {
                    let b2 = (b & !mask) | (s2 << bit);
                    h[(c * nb + b, c * nb + b2)] += v;
                }
            }
        }
    }
}

fn add_central_bath(h: &mut CMatrix, nb: usize, bit: usize, op: &CMatrix) {
    let mask = 1usize << bit;
    for b in 0..nb {
        let s = (b >> bit) & 1;
        for c in 0..3 {
            for c2 in 0..3 {
                for s2 in 0..2 {
                    let v = op[(c * 2 + s, c2 * 2 + s2)];
                    if v.re != 0.0 || v.im != 0.0 {
                        let b2 = (b & !mask) | (s2 << bit);
                        h[(c * nb + b, c2 * nb + b2)] += v;
                    }
                }
            }
        }
    }
}

fn add_bath_pair(h: &mut CMatrix, nb: usize, bit_i: usize, bit_j: usize, op: &CMatrix) {
    let mask = (1usize << bit_i) | (1usize << bit_j);
    for c in 0..3 {
        for b in 0..nb {
            let si = (b >> bit_i) & 1;
            let sj = (b >> bit_j) & 1;
            for si2 in 0..2 {
                for sj2 in 0..2 {
                    let v = op[(si * 2 + sj, si2 * 2 + sj2)];
                    if v.re != 0.0 || v.im != 0.0 {
                        let b2 = (b & !mask) | (si2 << bit_i) | (sj2 << bit_j);
                        h[(c * nb + b, c * nb + b2)] += v;
                    }
                }
            }
        }
    }
}

/// `H = SDS + γ_S B·S + Σ S·A_i·I_i + Σ_{i<j} I_i·K_ij·I_j + Σ γ_i B·I_i + shifts`.
pub fn build_cluster_hamiltonian(
    spins: &[BathSpin],
    central: &CentralSpin,
    field: &ExternalField,
    shifts: &MeanFieldShifts,
) -> Result<DMatrix<Complex64>> {
    ClusterHamiltonian::new(spins, central, field, &PhysicalConstants::STANDARD)?.with_shifts(shifts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hermitian_residual;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn identity(n: usize) -> CMatrix {
        CMatrix::identity(n, n)
    }

    /// Kronecker product of a list of operators, first factor slowest.
    fn kron_all(ops: &[CMatrix]) -> CMatrix {
        let mut out = ops[0].clone();
        for op in &ops[1..] {
            out = out.kronecker(op);
        }
        out
    }

    #[test]
    fn dipolar_tensor_at_one_nanometre() {
        let k = dipolar_tensor(&[0.0; 3], &[0.0, 0.0, 10.0], GAMMA_E, GAMMA_E, CouplingRole::BathBath)
            .unwrap()
            .tensor;
        // (μ0/4π) γ_e² ħ / r³ evaluated independently in SI units
        let gamma_si = 1.760_859_7e11_f64;
        let hbar = 1.054_571_817e-34;
        let coupling_rad_per_s = 1e-7 * gamma_si * gamma_si * hbar / 1e-27;
        let expected_zz = -2.0 * coupling_rad_per_s / 1e3;
        assert_relative_eq!(k[(2, 2)], expected_zz, max_relative = 1e-9);
        assert!((k[(2, 2)].abs() - 6.54e5).abs() < 0.01e5);
        assert_relative_eq!(k[(0, 0)], -k[(2, 2)] / 2.0, max_relative = 1e-12);
        assert_relative_eq!(k[(1, 1)], -k[(2, 2)] / 2.0, max_relative = 1e-12);
        // 2π × 52 MHz
        assert!((coupling_rad_per_s / (2.0 * PI) / 1e6 - 52.0).abs() < 0.1);
    }

    #[test]
    fn coincident_positions_are_rejected() {
        let r = [1.0, 2.0, 3.0];
        assert!(matches!(
            dipolar_tensor(&r, &r, GAMMA_E, GAMMA_E, CouplingRole::BathBath),
            Err(Error::CoincidentSpins(_))
        ));
    }

    #[test]
    fn zeeman_examples() {
        let z = zeeman_term(GAMMA_E, &ExternalField::along_z(100.0));
        assert_eq!(z[0], 0.0);
        assert_eq!(z[1], 0.0);
        assert_relative_eq!(z[2], -1.760_859_7e6, max_relative = 1e-12);
        assert_eq!(zeeman_term(GAMMA_E, &ExternalField::along_z(0.0)), [0.0; 3]);
        let small = zeeman_term(GAMMA_E, &ExternalField::along_z(1.0));
        assert_relative_eq!(small[2] * 100.0, z[2], max_relative = 1e-14);
    }

    #[test]
    fn nv_frame_examples() {
        let s3 = 1.0 / 3.0_f64.sqrt();
        let z = rotate_to_nv_frame(&[s3, s3, s3]);
        assert!(z[0].abs() < 1e-15 && z[1].abs() < 1e-15);
        assert_relative_eq!(z[2], 1.0, epsilon = 1e-15);
        let s2 = FRAC_1_SQRT_2;
        let v = rotate_to_nv_frame(&[s2, -s2, 0.0]);
        assert!(v[2].abs() < 1e-15);
        assert_relative_eq!(norm(&v), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn empty_cluster_is_diagonal_three_by_three() {
        let h = build_cluster_hamiltonian(
            &[],
            &CentralSpin::nv(),
            &ExternalField::along_z(100.0),
            &MeanFieldShifts::none(0),
        )
        .unwrap();
        assert_eq!(h.shape(), (3, 3));
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(h[(i, j)], Complex64::new(0.0, 0.0));
                }
            }
        }
        // m_s = ±1 sit D above m_s = 0, split by ±γB
        let d = NV_ZERO_FIELD_SPLITTING;
        let gb = GAMMA_E * 100.0;
        assert_relative_eq!(h[(0, 0)].re - h[(1, 1)].re, d + gb, max_relative = 1e-12);
        assert_relative_eq!(h[(2, 2)].re - h[(1, 1)].re, d - gb, max_relative = 1e-12);
    }

    #[test]
    fn single_spin_hamiltonian_is_hermitian() {
        let spins = [BathSpin::electron([12.0, -3.0, 7.5])];
        let h = build_cluster_hamiltonian(
            &spins,
            &CentralSpin::nv(),
            &ExternalField::along_z(100.0),
            &MeanFieldShifts {
                central: [5.0, -2.0, 12.0],
                bath: vec![[1.0, 3.0, -40.0]],
            },
        )
        .unwrap();
        assert_eq!(h.shape(), (6, 6));
        assert!(hermitian_residual(&h) < 1e-12);
    }

    #[test]
    fn matches_kronecker_oracle() {
        let spins = [
            BathSpin::electron([20.0, 5.0, -8.0]),
            BathSpin::electron([-6.0, 14.0, 11.0]),
        ];
        let central = CentralSpin::nv();
        let field = ExternalField {
            b: [3.0, -2.0, 100.0],
        };
        let shifts = MeanFieldShifts {
            central: [1.5, -4.0, 7.0],
            bath: vec![[2.0, 0.5, 30.0], [-3.0, 1.0, -11.0]],
        };
        let h = build_cluster_hamiltonian(&spins, &central, &field, &shifts).unwrap();

        // brute-force construction with explicit Kronecker products
        let s = spin_one_operators();
        let i = spin_half_operators();
        let (e3, e2) = (identity(3), identity(2));
        let on_central = |op: &CMatrix| kron_all(&[op.clone(), e2.clone(), e2.clone()]);
        let on_bath0 = |op: &CMatrix| kron_all(&[e3.clone(), op.clone(), e2.clone()]);
        let on_bath1 = |op: &CMatrix| kron_all(&[e3.clone(), e2.clone(), op.clone()]);
        let re = |x: f64| Complex64::new(x, 0.0);

        let mut oracle = CMatrix::zeros(12, 12);
        let d = central.zfs_matrix();
        for a in 0..3 {
            for b in 0..3 {
                oracle += on_central(&(&s[a] * &s[b])) * re(d[(a, b)]);
            }
            oracle += on_central(&s[a]) * re(central.gamma * field.b[a]);
            oracle += on_bath0(&i[a]) * re(GAMMA_E * field.b[a]);
            oracle += on_bath1(&i[a]) * re(GAMMA_E * field.b[a]);
        }
        let a0 = dipolar_tensor(&[0.0; 3], &spins[0].position, GAMMA_E, GAMMA_E, CouplingRole::CentralBath)
            .unwrap()
            .tensor;
        let a1 = dipolar_tensor(&[0.0; 3], &spins[1].position, GAMMA_E, GAMMA_E, CouplingRole::CentralBath)
            .unwrap()
            .tensor;
        let k01 = dipolar_tensor(
            &spins[0].position,
            &spins[1].position,
            GAMMA_E,
            GAMMA_E,
            CouplingRole::BathBath,
        )
        .unwrap()
        .tensor;
        let mut bath_bath = CMatrix::zeros(12, 12);
        for a in 0..3 {
            for b in 0..3 {
                oracle += kron_all(&[s[a].clone(), i[b].clone(), e2.clone()]) * re(a0[(a, b)]);
                oracle += kron_all(&[s[a].clone(), e2.clone(), i[b].clone()]) * re(a1[(a, b)]);
                bath_bath += kron_all(&[e3.clone(), i[a].clone(), i[b].clone()]) * re(k01[(a, b)]);
            }
        }
        oracle += &bath_bath;
        for a in 0..3 {
            oracle += on_central(&s[a]) * re(shifts.central[a]);
            oracle += on_bath0(&i[a]) * re(shifts.bath[0][a]);
            oracle += on_bath1(&i[a]) * re(shifts.bath[1][a]);
        }

        let scale = h.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let diff = (&h - &oracle).iter().map(|x| x.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-12 * scale, "diff {diff}");

        // the bath-bath block alone against a 4×4 hand expansion
        let mut block = CMatrix::zeros(4, 4);
        for a in 0..3 {
            for b in 0..3 {
                block += i[a].kronecker(&i[b]) * re(k01[(a, b)]);
            }
        }
        for r in 0..4 {
            for c in 0..4 {
                assert!((bath_bath[(4 + r, 4 + c)] - block[(r, c)]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn too_many_spins_is_rejected() {
        let spins: Vec<BathSpin> = (0..=MAX_HAMILTONIAN_SPINS)
            .map(|i| BathSpin::electron([i as f64 + 1.0, 0.0, 0.0]))
            .collect();
        assert!(matches!(
            ClusterHamiltonian::new(&spins, &CentralSpin::nv(), &ExternalField::along_z(100.0), &PhysicalConstants::STANDARD),
            Err(Error::ClusterTooLarge { .. })
        ));
    }

    fn position() -> impl Strategy<Value = Position> {
        prop::array::uniform3(-50.0..50.0f64)
    }

    proptest! {
        #[test]
        fn dipolar_tensor_is_symmetric_traceless_and_swap_invariant(a in position(), b in position()) {
            prop_assume!(norm(&[a[0]-b[0], a[1]-b[1], a[2]-b[2]]) > 1e-3);
            let k = dipolar_tensor(&a, &b, GAMMA_E, GAMMA_E, CouplingRole::BathBath).unwrap().tensor;
            let k2 = dipolar_tensor(&b, &a, GAMMA_E, GAMMA_E, CouplingRole::BathBath).unwrap().tensor;
            let scale = k.abs().max();
            prop_assert!(k.trace().abs() <= 1e-12 * scale);
            prop_assert!((k - k.transpose()).abs().max() == 0.0);
            prop_assert!((k - k2).abs().max() <= 1e-14 * scale);
        }

        #[test]
        fn dipolar_tensor_scales_as_inverse_cube(a in position(), b in position(), lambda in 0.1..10.0f64) {
            prop_assume!(norm(&[a[0]-b[0], a[1]-b[1], a[2]-b[2]]) > 1e-3);
            let k = dipolar_tensor(&a, &b, GAMMA_E, GAMMA_E, CouplingRole::BathBath).unwrap().tensor;
            let da = [a[0]*lambda, a[1]*lambda, a[2]*lambda];
            let db = [b[0]*lambda, b[1]*lambda, b[2]*lambda];
            let kd = dipolar_tensor(&da, &db, GAMMA_E, GAMMA_E, CouplingRole::BathBath).unwrap().tensor;
            let expect = k / (lambda * lambda * lambda);
            prop_assert!((kd - expect).abs().max() <= 1e-12 * expect.abs().max());
        }

        #[test]
        fn rotation_preserves_length_and_inverts(v in position()) {
            let r = rotate_to_nv_frame(&v);
            prop_assert!((norm(&r) - norm(&v)).abs() <= 1e-12 * norm(&v).max(1.0));
            let back = rotate_from_nv_frame(&r);
            for i in 0..3 {
                prop_assert!((back[i] - v[i]).abs() <= 1e-12 * norm(&v).max(1.0));
            }
        }

        #[test]
        fn cluster_hamiltonians_are_hermitian(p in prop::collection::vec(position(), 0..4), bz in -500.0..500.0f64) {
            let spins: Vec<BathSpin> = p.iter().map(|q| BathSpin::electron([q[0] + 0.5, q[1], q[2]])).collect();
            let shifts = MeanFieldShifts { central: [0.5, -1.0, 3.0], bath: vec![[0.2, 0.1, 1.5]; spins.len()] };
            if let Ok(h) = build_cluster_hamiltonian(&spins, &CentralSpin::nv(), &ExternalField::along_z(bz), &shifts) {
                prop_assert!(hermitian_residual(&h) < 1e-12);
            }
        }
    }
}
