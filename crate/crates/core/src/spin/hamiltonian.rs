use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use super::state::{SpinState, PARALLEL_THRESHOLD};
use super::{Result, SpinError};
use crate::coupling::CouplingMatrix;

/// Default largest chain simulated in the full Hilbert space.
pub const DEFAULT_ION_CAP: usize = 21;

/// Output block length for parallel application.
const APPLY_CHUNK: usize = 1 << 12;

/// Linear operator on complex vectors, as used by the Krylov propagator.
pub trait Operator: Sync {
    fn dim(&self) -> usize;
    /// y ← A x.
    fn apply(&self, x: &[Complex64], y: &mut [Complex64]);
}

/// H = −Σ_{i<j} J_ij σ_x^i σ_x^j + g Σ_i σ_z^i, applied matrix-free.
#[derive(Debug, Clone)]
pub struct FullHamiltonian {
    ions: usize,
    couplings: Vec<(usize, usize, f64)>,
    transverse_field: f64,
    diagonal: Vec<f64>,
}

pub fn build_full_hamiltonian(
    j: &CouplingMatrix,
    transverse_field: f64,
) -> Result<FullHamiltonian> {
    FullHamiltonian::with_cap(j, transverse_field, DEFAULT_ION_CAP)
}

impl FullHamiltonian {
    pub fn with_cap(j: &CouplingMatrix, transverse_field: f64, cap: usize) -> Result<Self> {
        let ions = j.ion_count();
        if ions > cap {
            return Err(SpinError::TooManyIons { ions, cap });
        }
        if ions == 0 {
            return Err(SpinError::TooFewIons { ions, min: 1 });
        }
        if !transverse_field.is_finite() {
            return Err(SpinError::InvalidParameter(
                "transverse field must be finite".into(),
            ));
        }
        let couplings: Vec<_> = j.pairs().collect();
        let diagonal = ising_diagonal(ions, j);
        Ok(Self {
            ions,
            couplings,
            transverse_field,
            diagonal,
        })
    }

    pub fn ions(&self) -> usize {
        self.ions
    }

    pub fn transverse_field(&self) -> f64 {
        self.transverse_field
    }

    pub fn couplings(&self) -> &[(usize, usize, f64)] {
        &self.couplings
    }

    /// Ising energies of the x-basis states.
    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    /// y ← (H_xx + g_z Σσ_z + b_y Σσ_y) x.
    pub fn apply_fields(&self, g_z: f64, b_y: f64, x: &[Complex64], y: &mut [Complex64]) {
        // Coefficient of x[b ^ m] in y[b]: σ_z contributes g_z either way,
        // σ_y contributes −i b_y into |−⟩ (bit set) and +i b_y into |+⟩.
        let into_minus = Complex64::new(g_z, -b_y);
        let into_plus = Complex64::new(g_z, b_y);
        let ions = self.ions;
        let diag = &self.diagonal;
        let flips = g_z != 0.0 || b_y != 0.0;
        // `out` covers the aligned block starting at `offset`, whose length
        // is a power of two. Bits inside the block pair entries within it;
        // higher bits read a whole contiguous block of `x` with one sign.
        let kernel = |offset: usize, out: &mut [Complex64]| {
            for ((o, s), d) in out.iter_mut().zip(&x[offset..]).zip(&diag[offset..]) {
                *o = s * d;
            }
            if !flips {
                return;
            }
            if b_y == 0.0 {
                flip_terms(ions, offset, x, out, |s| s * g_z, |s| s * g_z);
            } else {
                flip_terms(ions, offset, x, out, |s| into_plus * s, |s| into_minus * s);
            }
        };
        if y.len() >= PARALLEL_THRESHOLD {
            y.par_chunks_mut(APPLY_CHUNK)
                .enumerate()
                .for_each(|(c, out)| kernel(c * APPLY_CHUNK, out));
        } else {
            kernel(0, y);
        }
    }

    pub fn apply_state(&self, state: &SpinState) -> Result<SpinState> {
        self.check(state)?;
        let mut out = vec![Complex64::new(0.0, 0.0); state.dim()];
        self.apply(&state.amplitudes, &mut out);
        SpinState::from_amplitudes(self.ions, out)
    }

    /// ⟨ψ|H|ψ⟩.
    pub fn energy(&self, state: &SpinState) -> Result<f64> {
        let h = self.apply_state(state)?;
        Ok(state.inner(&h).re)
    }

    pub(crate) fn check(&self, state: &SpinState) -> Result<()> {
        if state.ions() != self.ions {
            return Err(SpinError::DimensionMismatch {
                expected: self.ions,
                got: state.ions(),
            });
        }
        Ok(())
    }

    /// Dense x-basis matrix; H is real symmetric in this basis.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = 1usize << self.ions;
        let mut m = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.diagonal));
        for b in 0..d {
            for i in 0..self.ions {
                m[(b, b ^ (1 << i))] += self.transverse_field;
            }
        }
        m
    }

    /// View with an added σ_y field of strength `b_y`.
    pub fn with_probe(&self, b_y: f64) -> ProbeOperator<'_> {
        ProbeOperator { base: self, b_y }
    }
}

impl Operator for FullHamiltonian {
    fn dim(&self) -> usize {
        1 << self.ions
    }

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        self.apply_fields(self.transverse_field, 0.0, x, y);
    }
}

/// H_xx + g Σσ_z + b_y Σσ_y.
#[derive(Debug, Clone, Copy)]
pub struct ProbeOperator<'a> {
    base: &'a FullHamiltonian,
    b_y: f64,
}

impl Operator for ProbeOperator<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        self.base
            .apply_fields(self.base.transverse_field, self.b_y, x, y);
    }
}

/// E(b) = −Σ_{i<j} J_ij s_i s_j with s = +1 for a clear bit. Each entry is
/// derived from the index with its highest bit cleared, which only differs
/// in the sign of that one spin.
fn ising_diagonal(ions: usize, j: &CouplingMatrix) -> Vec<f64> {
    let d = 1usize << ions;
    let mut e = vec![0.0; d];
    e[0] = -j.pairs().map(|(_, _, v)| v).sum::<f64>();
    for b in 1..d {
        let k = usize::BITS as usize - 1 - b.leading_zeros() as usize;
        let prev = b ^ (1 << k);
        let mut field = 0.0;
        for other in 0..ions {
            if other == k {
                continue;
            }
            let s = if prev & (1 << other) != 0 { -1.0 } else { 1.0 };
            field += j.get(k, other) * s;
        }
        e[b] = e[prev] + 2.0 * field;
    }
    e
}

/// Adds the bit-flip part of the Hamiltonian for the aligned block of `out`
/// starting at `offset`, whose length is a power of two. Bits inside the
/// block pair entries within it; higher bits read a whole contiguous block
/// of `x` with one coefficient. `to_plus` weights an amplitude moving into a
/// clear bit, `to_minus` one moving into a set bit.
#[inline(always)]
fn flip_terms(
    ions: usize,
    offset: usize,
    x: &[Complex64],
    out: &mut [Complex64],
    to_plus: impl Fn(Complex64) -> Complex64,
    to_minus: impl Fn(Complex64) -> Complex64,
) {
    let len = out.len();
    let block = &x[offset..offset + len];
    for i in 0..ions {
        let m = 1usize << i;
        if m < len {
            for (o, s) in out.chunks_exact_mut(2 * m).zip(block.chunks_exact(2 * m)) {
                let (o_plus, o_minus) = o.split_at_mut(m);
                let (s_plus, s_minus) = s.split_at(m);
                for (op, sm) in o_plus.iter_mut().zip(s_minus) {
                    *op += to_plus(*sm);
                }
                for (om, sp) in o_minus.iter_mut().zip(s_plus) {
                    *om += to_minus(*sp);
                }
            }
        } else {
            let src = &x[offset ^ m..(offset ^ m) + len];
            if offset & m != 0 {
                for (o, s) in out.iter_mut().zip(src) {
                    *o += to_minus(*s);
                }
            } else {
                for (o, s) in out.iter_mut().zip(src) {
                    *o += to_plus(*s);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;

    fn random_couplings(n: usize, seed: u64) -> CouplingMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in a + 1..n {
                let v = rng.gen_range(0.1..2.0);
                m[(a, b)] = v;
                m[(b, a)] = v;
            }
        }
        CouplingMatrix::from_matrix(m, 0.0, 0.0).unwrap()
    }

    fn kron(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        a.kronecker(b)
    }

    /// Operator on ion `i` (ion 1 least significant) in the z basis.
    fn single(n: usize, i: usize, op: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let id = DMatrix::<Complex64>::identity(2, 2);
        let mut m = DMatrix::<Complex64>::identity(1, 1);
        for k in (0..n).rev() {
            m = kron(&m, if k == i { op } else { &id });
        }
        m
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Builds −ΣJσxσx + g_zΣσz + b_yΣσy in the z basis and rotates it into
    /// the x basis with the Hadamard transform.
    fn z_basis_oracle(j: &CouplingMatrix, g_z: f64, b_y: f64) -> DMatrix<Complex64> {
        let n = j.ion_count();
        let d = 1 << n;
        let sx = DMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)]);
        let sy = DMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)]);
        let sz = DMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)]);
        let mut h = DMatrix::<Complex64>::zeros(d, d);
        for (a, b, v) in j.pairs() {
            h -= single(n, a, &sx) * single(n, b, &sx) * c(v, 0.0);
        }
        for i in 0..n {
            h += single(n, i, &sz) * c(g_z, 0.0) + single(n, i, &sy) * c(b_y, 0.0);
        }
        // Column for |+⟩ is (1, 1)/√2 and for |−⟩ is (1, −1)/√2.
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let had = DMatrix::from_row_slice(2, 2, &[c(r, 0.), c(r, 0.), c(r, 0.), c(-r, 0.)]);
        let mut w = DMatrix::<Complex64>::identity(1, 1);
        for _ in 0..n {
            w = kron(&w, &had);
        }
        w.adjoint() * h * w
    }

    #[test]
    fn matches_dense_z_basis_oracle() {
        for n in 1..=6 {
            let j = random_couplings(n, n as u64);
            let (g_z, b_y) = (0.37, -0.61);
            let oracle = z_basis_oracle(&j, g_z, b_y);
            let h = FullHamiltonian::with_cap(&j, g_z, 21).unwrap();
            let d = 1 << n;
            for col in 0..d {
                let mut x = vec![c(0., 0.); d];
                x[col] = c(1.0, 0.0);
                let mut y = vec![c(0., 0.); d];
                h.apply_fields(g_z, b_y, &x, &mut y);
                for row in 0..d {
                    assert!(
                        (y[row] - oracle[(row, col)]).norm() <= 1e-12,
                        "n={n} ({row},{col})"
                    );
                }
            }
        }
    }

    #[test]
    fn small_spectra() {
        let h = build_full_hamiltonian(&CouplingMatrix::power_law(1, 1.0, 1.0), 0.8).unwrap();
        let e = SymmetricEigen::new(h.to_dense());
        let mut v: Vec<f64> = e.eigenvalues.iter().cloned().collect();
        v.sort_by(f64::total_cmp);
        assert_relative_eq!(v[0], -0.8, epsilon = 1e-14);
        assert_relative_eq!(v[1], 0.8, epsilon = 1e-14);

        let h = build_full_hamiltonian(&CouplingMatrix::power_law(2, 1.5, 1.0), 0.0).unwrap();
        assert_eq!(h.diagonal(), &[-1.5, 1.5, 1.5, -1.5]);
    }

    #[test]
    fn parallel_path_matches_serial() {
        let n = 16;
        let j = random_couplings(n, 7);
        let h = FullHamiltonian::with_cap(&j, 0.3, 21).unwrap();
        let d = 1 << n;
        let x: Vec<Complex64> = (0..d)
            .map(|k| c((k as f64).sin(), (k as f64 * 0.3).cos()))
            .collect();
        let mut y = vec![c(0., 0.); d];
        h.apply(&x, &mut y);
        for b in (0..d).step_by(997) {
            let mut acc = x[b] * h.diagonal()[b];
            for i in 0..n {
                acc += x[b ^ (1 << i)] * 0.3;
            }
            assert!((acc - y[b]).norm() < 1e-12);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let j = CouplingMatrix::power_law(22, 1.0, 1.0);
        assert!(matches!(
            build_full_hamiltonian(&j, 0.1),
            Err(SpinError::TooManyIons { ions: 22, cap: 21 })
        ));
    }

    #[test]
    fn kink_energies_match_potential() {
        let j = random_couplings(7, 3);
        let h = build_full_hamiltonian(&j, 0.0).unwrap();
        let raw = crate::coupling::kink_potential(&j).unwrap().raw();
        let e0 = h.diagonal()[0];
        for site in 1..7 {
            let e = h.diagonal()[super::super::state::kink_index(7, site)];
            assert_relative_eq!(e - e0, raw[site - 1], max_relative = 1e-12);
        }
    }
}
