//! Hahn-echo evolution `U(2τ) = e^{-iHτ} Π e^{-iHτ}` of one Hamiltonian.
//!
//! `Π` exchanges the central-spin levels `m_s = 0` and `m_s = +1` and leaves
//! `m_s = -1` and the bath untouched. The initial state is
//! `(|0⟩ + |+1⟩)/√2 ⊗ |b⟩` for a bath product state `|b⟩`, and the measured
//! coherence is `⟨+1| Tr_bath[U ρ U†] |0⟩` divided by its value at `τ = 0`.
//!
//! One eigendecomposition of `H` serves every τ on the time grid, and all time
//! points are propagated together.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, hermitian_residual, CMatrix};

/// Tolerance on the relative anti-Hermitian part of an input Hamiltonian.
pub const HERMITIAN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseKind {
    HahnEcho,
}

/// τ – π – τ with the π pulse acting on the (0, +1) qubit pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSequence {
    pub kind: PulseKind,
    /// ms
    pub tau: f64,
}

impl PulseSequence {
    pub fn hahn(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid("tau", "must be positive"));
        }
        Ok(Self {
            kind: PulseKind::HahnEcho,
            tau,
        })
    }

    pub fn total_time(&self) -> f64 {
        2.0 * self.tau
    }
}

fn dim_to_bath_states(dim: usize) -> Result<usize> {
    if dim % 3 != 0 || !(dim / 3).is_power_of_two() {
        return Err(Error::invalid("hamiltonian", "dimension must be 3·2^k"));
    }
    Ok(dim / 3)
}

/// The π pulse `Π` on a `3·2^k` dimensional space.
pub fn pi_pulse(dim: usize) -> Result<CMatrix> {
    let nb = dim_to_bath_states(dim)?;
    let one = Complex64::new(1.0, 0.0);
    let mut p = CMatrix::zeros(dim, dim);
    for b in 0..nb {
        p[(b, nb + b)] = one;
        p[(nb + b, b)] = one;
        p[(2 * nb + b, 2 * nb + b)] = one;
    }
    Ok(p)
}

fn check_hermitian(h: &CMatrix) -> Result<()> {
    if h.nrows() != h.ncols() {
        return Err(Error::invalid("hamiltonian", "must be square"));
    }
    let residual = hermitian_residual(h);
    if residual > HERMITIAN_TOLERANCE {
        return Err(Error::NotHermitian { residual });
    }
    Ok(())
}

/// Full echo propagator for a single `τ`.
pub fn hahn_echo_propagator(h: &CMatrix, tau: f64) -> Result<CMatrix> {
    check_hermitian(h)?;
    let pi = pi_pulse(h.nrows())?;
    let (energies, v) = hermitian_eigen(h.clone())?;
    let phases = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        energies.len(),
        energies.iter().map(|&e| Complex64::from_polar(1.0, -e * tau)),
    ));
    let half = &v * phases * v.adjoint();
    Ok(&half * pi * &half)
}

/// Eigendecomposition of a cluster Hamiltonian prepared for echo evaluation.
///
/// With `χ_b = (|+1,b⟩ - |0,b⟩)/√2` the pulse is `Π = 1 - 2 Σ_b |χ_b⟩⟨χ_b|`, so in the
/// eigenbasis `V†ΠV = 1 - 2 X X†` with `X = V†χ`, a rank-`2^k` correction.
#[derive(Debug, Clone)]
pub struct EchoEvolution {
    n_bath_states: usize,
    energies: Vec<f64>,
    /// Eigenvectors as columns.
    vectors: CMatrix,
}

/// Time points propagated together; keeps the working set in L1.
const TIME_BLOCK: usize = 32;

/// Split complex storage, `len` rows of `width` entries each.
struct Planes {
    re: Vec<f64>,
    im: Vec<f64>,
    width: usize,
}

impl Planes {
    fn zeros(len: usize, width: usize) -> Self {
        Self {
            re: vec![0.0; len * width],
            im: vec![0.0; len * width],
            width,
        }
    }

    fn clear(&mut self) {
        self.re.iter_mut().for_each(|x| *x = 0.0);
        self.im.iter_mut().for_each(|x| *x = 0.0);
    }

    fn row(&self, i: usize) -> (&[f64], &[f64]) {
        let r = i * self.width..(i + 1) * self.width;
        (&self.re[r.clone()], &self.im[r])
    }

    fn row_mut(&mut self, i: usize) -> (&mut [f64], &mut [f64]) {
        let r = i * self.width..(i + 1) * self.width;
        (&mut self.re[r.clone()], &mut self.im[r])
    }
}

/// `y += x·a` for a complex scalar `x`.
#[inline]
fn axpy(yr: &mut [f64], yi: &mut [f64], (xr, xi): (f64, f64), ar: &[f64], ai: &[f64]) {
    let n = yr.len();
    let (yi, ar, ai) = (&mut yi[..n], &ar[..n], &ai[..n]);
    for t in 0..n {
        yr[t] += xr * ar[t] - xi * ai[t];
        yi[t] += xr * ai[t] + xi * ar[t];
    }
}

/// Spacing of `times` when it is an arithmetic progression.
fn uniform_step(times: &[f64]) -> Option<f64> {
    let n = times.len();
    if n < 3 {
        return None;
    }
    let step = (times[n - 1] - times[0]) / (n - 1) as f64;
    let tol = 1e-14 * times[n - 1].abs().max(times[0].abs());
    times
        .iter()
        .enumerate()
        .all(|(i, &t)| (t - (times[0] + i as f64 * step)).abs() <= tol)
        .then_some(step)
}

impl EchoEvolution {
    pub fn new(h: CMatrix) -> Result<Self> {
        check_hermitian(&h)?;
        let nb = dim_to_bath_states(h.nrows())?;
        let (energies, vectors) = hermitian_eigen(h)?;
        Ok(Self {
            n_bath_states: nb,
            energies,
            vectors,
        })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Normalized coherence at each total time `t = 2τ` for bath basis state `bath_state`.
    pub fn coherence(&self, bath_state: usize, total_times: &[f64]) -> Vec<Complex64> {
        let nb = self.n_bath_states;
        debug_assert!(bath_state < nb);
        let dim = 3 * nb;
        let v = self.vectors.as_slice();
        let s = core::f64::consts::FRAC_1_SQRT_2;
        // column-major: V[(r, k)] = v[r + k·dim]
        let at = |r: usize, k: usize| v[r + k * dim];

        // ⟨v_k|ψ0⟩ and X_kj = ⟨v_k|χ_j⟩, the latter stored by j
        let c: Vec<Complex64> = (0..dim)
            .map(|k| (at(bath_state, k) + at(nb + bath_state, k)).conj() * s)
            .collect();
        let mut x = Vec::with_capacity(nb * dim);
        for j in 0..nb {
            for k in 0..dim {
                x.push((at(j, k) - at(nb + j, k)).conj() * s);
            }
        }

        let step = uniform_step(total_times);
        let (mut rot, mut phase) = (Vec::new(), Vec::new());
        if let (Some(dt), Some(&t0)) = (step, total_times.first()) {
            for &e in &self.energies {
                let (ds, dc) = libm::sincos(-e * 0.5 * dt);
                let (s0, c0) = libm::sincos(-e * 0.5 * t0);
                rot.push((dc, ds));
                phase.push((c0, s0));
            }
        }

        let width = total_times.len().min(TIME_BLOCK);
        let mut ph = Planes::zeros(dim, width);
        let mut a = Planes::zeros(dim, width);
        let mut z = Planes::zeros(nb, width);
        let mut psi = Planes::zeros(2 * nb, width);
        let mut out = Vec::with_capacity(total_times.len());

        for block in total_times.chunks(TIME_BLOCK) {
            let n_t = block.len();
            for p in [&mut ph, &mut a, &mut z, &mut psi] {
                p.width = n_t;
            }
            // e^{-i E_k t/2}
            for k in 0..dim {
                let (re, im) = ph.row_mut(k);
                if step.is_some() {
                    let (dc, ds) = rot[k];
                    let (mut pr, mut pi) = phase[k];
                    for t in 0..n_t {
                        re[t] = pr;
                        im[t] = pi;
                        (pr, pi) = (pr * dc - pi * ds, pr * ds + pi * dc);
                    }
                    phase[k] = (pr, pi);
                } else {
                    for (t, &time) in block.iter().enumerate() {
                        let (sn, cs) = libm::sincos(-self.energies[k] * 0.5 * time);
                        re[t] = cs;
                        im[t] = sn;
                    }
                }
            }

            // a_k = phase_k · c_k
            for k in 0..dim {
                let (pr, pi) = ph.row(k);
                let (ar, ai) = a.row_mut(k);
                for t in 0..n_t {
                    ar[t] = c[k].re * pr[t] - c[k].im * pi[t];
                    ai[t] = c[k].re * pi[t] + c[k].im * pr[t];
                }
            }

            // z_j = Σ_k conj(X_kj) a_k
            z.clear();
            for j in 0..nb {
                let (zr, zi) = z.row_mut(j);
                for k in 0..dim {
                    let xkj = x[j * dim + k].conj();
                    let (ar, ai) = a.row(k);
                    axpy(zr, zi, (xkj.re, xkj.im), ar, ai);
                }
            }

            // y_k = phase_k · (a_k - 2 Σ_j X_kj z_j), stored in `a`
            for k in 0..dim {
                let (yr, yi) = a.row_mut(k);
                for j in 0..nb {
                    let xkj = x[j * dim + k] * -2.0;
                    let (zr, zi) = z.row(j);
                    axpy(yr, yi, (xkj.re, xkj.im), zr, zi);
                }
                let (pr, pi) = ph.row(k);
                for t in 0..n_t {
                    let (r, i) = (yr[t], yi[t]);
                    yr[t] = r * pr[t] - i * pi[t];
                    yi[t] = r * pi[t] + i * pr[t];
                }
            }

            // ψ_r = Σ_k V_rk y_k on the m_s = +1 and m_s = 0 blocks
            psi.clear();
            for r in 0..2 * nb {
                let (qr, qi) = psi.row_mut(r);
                for k in 0..dim {
                    let vrk = at(r, k);
                    let (yr, yi) = a.row(k);
                    axpy(qr, qi, (vrk.re, vrk.im), yr, yi);
                }
            }

            let mut acc = [Complex64::new(0.0, 0.0); TIME_BLOCK];
            for b in 0..nb {
                let (pr, pi) = psi.row(b);
                let (qr, qi) = psi.row(nb + b);
                for t in 0..n_t {
                    // ψ_+ · conj(ψ_0)
                    acc[t].re += pr[t] * qr[t] + pi[t] * qi[t];
                    acc[t].im += pi[t] * qr[t] - pr[t] * qi[t];
                }
            }
            out.extend(acc[..n_t].iter().map(|l| l * 2.0));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        build_cluster_hamiltonian, BathSpin, CentralSpin, ExternalField, MeanFieldShifts,
    };

    fn max_abs(m: &CMatrix) -> f64 {
        m.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    fn sample_hamiltonian() -> CMatrix {
        let spins = [
            BathSpin::electron([15.0, 4.0, -9.0]),
            BathSpin::electron([-8.0, 11.0, 13.0]),
        ];
        build_cluster_hamiltonian(
            &spins,
            &CentralSpin::nv(),
            &ExternalField::along_z(100.0),
            &MeanFieldShifts::along_z(50.0, &[200.0, -120.0]),
        )
        .unwrap()
    }

    #[test]
    fn zero_hamiltonian_gives_bare_pulse() {
        let h = CMatrix::zeros(6, 6);
        let u = hahn_echo_propagator(&h, 0.3).unwrap();
        assert_eq!(u, pi_pulse(6).unwrap());
    }

    #[test]
    fn propagator_is_unitary() {
        let h = sample_hamiltonian();
        for tau in [1e-4, 0.01, 0.7] {
            let u = hahn_echo_propagator(&h, tau).unwrap();
            let err = max_abs(&(u.adjoint() * &u - CMatrix::identity(12, 12)));
            assert!(err < 1e-10, "{err}");
        }
    }

    #[test]
    fn non_hermitian_input_is_rejected() {
        let mut h = sample_hamiltonian();
        h[(0, 1)] += Complex64::new(1e3, 0.0);
        assert!(matches!(hahn_echo_propagator(&h, 0.1), Err(Error::NotHermitian { .. })));
        assert!(matches!(EchoEvolution::new(h), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn diagonal_central_hamiltonian_refocuses() {
        // diagonal 3×3 with arbitrary splittings: the echo phase cancels exactly
        let mut h = CMatrix::zeros(3, 3);
        h[(0, 0)] = Complex64::new(1.234e7, 0.0);
        h[(1, 1)] = Complex64::new(-5.0e6, 0.0);
        h[(2, 2)] = Complex64::new(3.3e5, 0.0);
        let times = [0.0, 1e-3, 0.02, 0.5, 2.0];
        let l = EchoEvolution::new(h).unwrap().coherence(0, &times);
        for x in l {
            assert!((x.norm() - 1.0).abs() < 1e-9, "{x}");
        }
    }

    #[test]
    fn fast_path_matches_full_propagator() {
        let h = sample_hamiltonian();
        let evo = EchoEvolution::new(h.clone()).unwrap();
        let times = [0.0, 0.004, 0.05, 0.3];
        for bath_state in 0..4 {
            let fast = evo.coherence(bath_state, &times);
            for (&t, &l) in times.iter().zip(&fast) {
                let u = if t == 0.0 { pi_pulse(12).unwrap() } else { hahn_echo_propagator(&h, t / 2.0).unwrap() };
                let mut psi0 = nalgebra::DVector::<Complex64>::zeros(12);
                let s = core::f64::consts::FRAC_1_SQRT_2;
                psi0[bath_state] = Complex64::new(s, 0.0);
                psi0[4 + bath_state] = Complex64::new(s, 0.0);
                let psi = &u * psi0;
                let mut rho_10 = Complex64::new(0.0, 0.0);
                for b in 0..4 {
                    rho_10 += psi[b] * psi[4 + b].conj();
                }
                assert!((rho_10 * 2.0 - l).norm() < 1e-9, "t={t}: {} vs {l}", rho_10 * 2.0);
            }
        }
    }

    #[test]
    fn uniform_grid_matches_pointwise_evaluation() {
        let evo = EchoEvolution::new(sample_hamiltonian()).unwrap();
        let times: Vec<f64> = (0..101).map(|i| 0.3 * i as f64 / 100.0).collect();
        let batch = evo.coherence(2, &times);
        // phases reach ~1e6 rad here, so both paths carry ~1e-10 rounding
        for (&t, &l) in times.iter().zip(&batch) {
            let single = evo.coherence(2, &[t])[0];
            assert!((single - l).norm() < 1e-9, "t={t}: {single} vs {l}");
        }
    }

    #[test]
    fn coherence_starts_at_one_and_stays_bounded() {
        let evo = EchoEvolution::new(sample_hamiltonian()).unwrap();
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.02).collect();
        for b in 0..4 {
            let l = evo.coherence(b, &times);
            assert!((l[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
            assert!(l.iter().all(|x| x.norm() <= 1.0 + 1e-10));
        }
    }

    #[test]
    fn pulse_sequence_requires_positive_tau() {
        assert!(PulseSequence::hahn(0.0).is_err());
        assert_eq!(PulseSequence::hahn(0.25).unwrap().total_time(), 0.5);
    }
}
