use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Result, SpinError};

/// Vectors at least this long are processed in parallel.
pub(crate) const PARALLEL_THRESHOLD: usize = 1 << 15;
/// Fixed block length for reductions, so sums do not depend on thread count.
pub(crate) const REDUCTION_CHUNK: usize = 1 << 12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Single-ion amplitudes in the x basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Qubit {
    pub plus: Complex64,
    pub minus: Complex64,
}

impl Qubit {
    pub const PLUS: Qubit = Qubit {
        plus: Complex64::new(1.0, 0.0),
        minus: ZERO,
    };
    pub const MINUS: Qubit = Qubit {
        plus: ZERO,
        minus: Complex64::new(1.0, 0.0),
    };

    /// |+y⟩ = (|↑⟩ + i|↓⟩)/√2 with |±⟩ = (|↑⟩ ± |↓⟩)/√2.
    pub fn plus_y() -> Qubit {
        Qubit {
            plus: Complex64::new(0.5, 0.5),
            minus: Complex64::new(0.5, -0.5),
        }
    }

    /// |−y⟩ = (|↑⟩ − i|↓⟩)/√2.
    pub fn minus_y() -> Qubit {
        Qubit {
            plus: Complex64::new(0.5, -0.5),
            minus: Complex64::new(0.5, 0.5),
        }
    }

    /// exp(iθσ_z/2), the addressed rotation: cos(θ/2) on the diagonal and
    /// i sin(θ/2) across, since σ_z swaps |±⟩.
    pub fn rotate_z(self, theta: f64) -> Qubit {
        let c = (0.5 * theta).cos();
        let s = Complex64::new(0.0, (0.5 * theta).sin());
        Qubit {
            plus: self.plus * c + self.minus * s,
            minus: self.minus * c + self.plus * s,
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.plus.norm_sqr() + self.minus.norm_sqr()
    }
}

/// Basis index of the kink state |n⟩ = |+⟩^{⊗n}|−⟩^{⊗(N−n)}: bits n..N−1 set.
pub fn kink_index(ions: usize, site: usize) -> usize {
    ((1usize << ions) - 1) & !((1usize << site) - 1)
}

/// Amplitudes over the 2^N x-basis states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinState {
    ions: usize,
    pub amplitudes: Vec<Complex64>,
}

impl SpinState {
    pub fn from_amplitudes(ions: usize, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != 1usize << ions {
            return Err(SpinError::DimensionMismatch {
                expected: 1 << ions,
                got: amplitudes.len(),
            });
        }
        Ok(Self { ions, amplitudes })
    }

    pub fn basis(ions: usize, index: usize) -> Self {
        let mut amplitudes = vec![ZERO; 1 << ions];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Self { ions, amplitudes }
    }

    /// |n⟩ for 1 ≤ n ≤ N−1.
    pub fn kink(ions: usize, site: usize) -> Result<Self> {
        if site == 0 || site >= ions {
            return Err(SpinError::SiteOutOfRange {
                site,
                max: ions.saturating_sub(1),
            });
        }
        Ok(Self::basis(ions, kink_index(ions, site)))
    }

    /// ⊗_i q_i with `qubits[0]` on ion 1.
    pub fn product(qubits: &[Qubit]) -> Self {
        let mut amplitudes = vec![Complex64::new(1.0, 0.0)];
        for (i, q) in qubits.iter().enumerate() {
            let half = 1usize << i;
            amplitudes.resize(2 * half, ZERO);
            let (low, high) = amplitudes.split_at_mut(half);
            for (l, h) in low.iter_mut().zip(high.iter_mut()) {
                *h = *l * q.minus;
                *l *= q.plus;
            }
        }
        Self {
            ions: qubits.len(),
            amplitudes,
        }
    }

    pub fn ions(&self) -> usize {
        self.ions
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.amplitudes)
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &SpinState) -> Complex64 {
        inner(&self.amplitudes, &other.amplitudes)
    }

    /// ‖self − other‖.
    pub fn distance(&self, other: &SpinState) -> f64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// |⟨self|other⟩|, insensitive to global phase.
    pub fn fidelity_amplitude(&self, other: &SpinState) -> f64 {
        self.inner(other).norm()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c.norm_sqr()).collect()
    }
}

/// Σ|v|² in fixed-size blocks.
pub(crate) fn norm_sqr(v: &[Complex64]) -> f64 {
    let block = |c: &[Complex64]| c.iter().map(|x| x.norm_sqr()).sum::<f64>();
    if v.len() >= PARALLEL_THRESHOLD {
        let partial: Vec<f64> = v.par_chunks(REDUCTION_CHUNK).map(block).collect();
        partial.iter().sum()
    } else {
        v.chunks(REDUCTION_CHUNK).map(block).sum()
    }
}

/// Σ conj(a) b in fixed-size blocks.
pub(crate) fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let block = |(x, y): (&[Complex64], &[Complex64])| -> Complex64 {
        x.iter().zip(y).map(|(p, q)| p.conj() * q).sum()
    };
    if a.len() >= PARALLEL_THRESHOLD {
        let partial: Vec<Complex64> = a
            .par_chunks(REDUCTION_CHUNK)
            .zip(b.par_chunks(REDUCTION_CHUNK))
            .map(block)
            .collect();
        partial.iter().sum()
    } else {
        a.chunks(REDUCTION_CHUNK)
            .zip(b.chunks(REDUCTION_CHUNK))
            .map(block)
            .sum()
    }
}

/// y ← y + s x.
pub(crate) fn axpy(s: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    if y.len() >= PARALLEL_THRESHOLD {
        y.par_iter_mut()
            .zip(x.par_iter())
            .for_each(|(b, a)| *b += s * a);
    } else {
        y.iter_mut().zip(x).for_each(|(b, a)| *b += s * a);
    }
}

pub(crate) fn scale(s: f64, y: &mut [Complex64]) {
    if y.len() >= PARALLEL_THRESHOLD {
        y.par_iter_mut().for_each(|b| *b *= s);
    } else {
        y.iter_mut().for_each(|b| *b *= s);
    }
}
