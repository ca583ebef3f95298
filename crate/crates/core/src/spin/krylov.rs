//! exp(−iHt)ψ by Hermitian Lanczos with full reorthogonalization.
//!
//! Each step builds an m-dimensional Krylov basis, then picks the largest
//! step τ whose a-posteriori error estimate
//! `β₀ β_m τ |e_mᵀ φ₁(−iτT) e₁|` stays below the tolerance. The projected
//! exponential is unitary, so the state is never renormalized.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::hamiltonian::{FullHamiltonian, Operator};
use super::state::{axpy, inner, norm_sqr, scale, SpinState};
use super::{Result, SpinError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrylovOptions {
    /// Local error bound per step.
    pub tol: f64,
    /// Largest Krylov subspace dimension.
    pub krylov_dim: usize,
    /// Steps shorter than this fraction of the total time count as underflow.
    pub min_step_fraction: f64,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            krylov_dim: 30,
            min_step_fraction: 1e-12,
        }
    }
}

impl KrylovOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KrylovStats {
    pub steps: usize,
    pub matvecs: usize,
    /// Largest accepted per-step error estimate.
    pub max_error_estimate: f64,
    /// | ‖ψ(t)‖ − ‖ψ(0)‖ |.
    pub norm_drift: f64,
}

/// ψ(t) = exp(−iHt)ψ with per-step error ≤ `tol`.
pub fn evolve_full(h: &FullHamiltonian, state: &SpinState, t: f64, tol: f64) -> Result<SpinState> {
    evolve_full_with(h, state, t, &KrylovOptions::with_tol(tol)).map(|(s, _)| s)
}

pub fn evolve_full_with(
    h: &FullHamiltonian,
    state: &SpinState,
    t: f64,
    options: &KrylovOptions,
) -> Result<(SpinState, KrylovStats)> {
    h.check(state)?;
    let (v, stats) = expmv(h, &state.amplitudes, t, options)?;
    Ok((SpinState::from_amplitudes(state.ions(), v)?, stats))
}

/// Smallest subspace for which the early-stop test is tried.
const MIN_EARLY_STOP: usize = 4;

/// exp(−i A t) v for Hermitian `A`.
pub fn expmv<O: Operator>(
    op: &O,
    v: &[Complex64],
    t: f64,
    options: &KrylovOptions,
) -> Result<(Vec<Complex64>, KrylovStats)> {
    if v.len() != op.dim() {
        return Err(SpinError::DimensionMismatch {
            expected: op.dim(),
            got: v.len(),
        });
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(SpinError::InvalidParameter(format!(
            "time must be non-negative, got {t}"
        )));
    }
    if !(options.tol > 0.0) {
        return Err(SpinError::InvalidParameter(format!(
            "tolerance must be positive, got {}",
            options.tol
        )));
    }
    if options.krylov_dim == 0 {
        return Err(SpinError::InvalidParameter(
            "Krylov dimension must be positive".into(),
        ));
    }
    let mut stats = KrylovStats::default();
    let mut w = v.to_vec();
    let initial_norm = norm_sqr(v).sqrt();
    if t == 0.0 || initial_norm == 0.0 {
        return Ok((w, stats));
    }

    let m_max = options.krylov_dim.min(op.dim());
    let mut done = 0.0;
    let mut basis: Vec<Vec<Complex64>> = Vec::new();
    let mut scratch = vec![Complex64::new(0.0, 0.0); op.dim()];
    while done < t {
        let remaining = t - done;
        let beta0 = norm_sqr(&w).sqrt();
        // Stop growing the subspace once it already covers the whole
        // remaining interval.
        let covers = |alpha: &[f64], beta: &[f64], beta_last: f64| {
            leading_error(alpha, beta, beta0, beta_last, remaining) <= options.tol
        };
        let lanczos = lanczos(op, &w, beta0, m_max, &mut basis, &mut scratch, covers);
        stats.matvecs += lanczos.matvecs;
        let m = lanczos.alpha.len();

        let eig = tridiagonal_eigen(&lanczos.alpha, &lanczos.beta);
        let beta_last = if lanczos.breakdown {
            0.0
        } else {
            lanczos.beta_last
        };
        let error = |tau: f64| step_error(&eig, beta0, beta_last, tau);

        let (tau, estimate) = if error(remaining) <= options.tol {
            (remaining, error(remaining))
        } else {
            // Largest admissible step; err(lo) ≤ tol is kept throughout.
            let (mut lo, mut hi) = (0.0, remaining);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if error(mid) <= options.tol {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            (lo, error(lo))
        };
        if tau <= options.min_step_fraction * t {
            return Err(SpinError::StepUnderflow {
                time: done,
                step: tau,
                estimate: error(remaining),
                tol: options.tol,
            });
        }

        // y = β₀ Q exp(−iτΛ) Qᵀ e₁.
        let y: Vec<Complex64> = (0..m)
            .map(|a| {
                (0..m)
                    .map(|k| {
                        eig.eigenvectors[(a, k)]
                            * eig.eigenvectors[(0, k)]
                            * Complex64::from_polar(beta0, -tau * eig.eigenvalues[k])
                    })
                    .sum()
            })
            .collect();
        w.iter_mut().for_each(|x| *x = Complex64::new(0.0, 0.0));
        for (coef, vec) in y.iter().zip(&basis[..m]) {
            axpy(*coef, vec, &mut w);
        }

        done = if tau == remaining { t } else { done + tau };
        stats.steps += 1;
        stats.max_error_estimate = stats.max_error_estimate.max(estimate);
    }
    stats.norm_drift = (norm_sqr(&w).sqrt() - initial_norm).abs();
    Ok((w, stats))
}

fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let m = alpha.len();
    let tri = DMatrix::from_fn(m, m, |a, b| {
        if a == b {
            alpha[a]
        } else if a.abs_diff(b) == 1 {
            beta[a.min(b)]
        } else {
            0.0
        }
    });
    SymmetricEigen::new(tri)
}

/// β₀ β_m τ |e_mᵀ φ₁(−iτT) e₁|, the local error estimate of a step τ.
fn step_error(
    eig: &SymmetricEigen<f64, nalgebra::Dyn>,
    beta0: f64,
    beta_last: f64,
    tau: f64,
) -> f64 {
    if beta_last == 0.0 {
        return 0.0;
    }
    let m = eig.eigenvalues.len();
    let s: Complex64 = (0..m)
        .map(|k| {
            eig.eigenvectors[(m - 1, k)]
                * eig.eigenvectors[(0, k)]
                * phi1(-tau * eig.eigenvalues[k])
        })
        .sum();
    beta0 * beta_last * tau * s.norm()
}

/// Cheap bound on [`step_error`] for small τ‖T‖: the leading series term
/// β₀ τ^m Π β_k / m! times a geometric tail factor. Infinite when the series
/// does not converge fast enough to be trusted.
fn leading_error(alpha: &[f64], beta: &[f64], beta0: f64, beta_last: f64, tau: f64) -> f64 {
    let m = alpha.len();
    let norm = (0..m)
        .map(|k| {
            alpha[k].abs()
                + if k > 0 { beta[k - 1] } else { 0.0 }
                + if k + 1 < m { beta[k] } else { beta_last }
        })
        .fold(0.0, f64::max);
    let ratio = tau * norm / (m + 1) as f64;
    if ratio >= 0.5 {
        return f64::INFINITY;
    }
    let mut term = beta0 * tau * beta_last;
    for (k, b) in beta.iter().enumerate() {
        term *= tau * b / (k + 1) as f64;
    }
    term / m as f64 / (1.0 - ratio)
}

/// φ₁(−iθ) = (e^{−iθ} − 1)/(−iθ).
fn phi1(theta: f64) -> Complex64 {
    let z = Complex64::new(0.0, theta);
    if theta.abs() < 1e-5 {
        1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0
    } else {
        (z.exp() - 1.0) / z
    }
}

struct Lanczos {
    alpha: Vec<f64>,
    /// Off-diagonal entries T[k, k+1].
    beta: Vec<f64>,
    /// β_m coupling the basis to the next, unused, vector.
    beta_last: f64,
    breakdown: bool,
    matvecs: usize,
}

/// Writes orthonormal Krylov vectors from v/β₀ into the leading entries of
/// `basis`, reusing allocations left by earlier steps. Stops early when
/// `enough(α, β, β_m)` holds for the current subspace.
fn lanczos<O: Operator>(
    op: &O,
    v: &[Complex64],
    beta0: f64,
    m_max: usize,
    basis: &mut Vec<Vec<Complex64>>,
    w: &mut [Complex64],
    enough: impl Fn(&[f64], &[f64], f64) -> bool,
) -> Lanczos {
    let mut alpha = Vec::with_capacity(m_max);
    let mut beta = Vec::with_capacity(m_max);
    let mut matvecs = 0;
    store(basis, 0, v);
    scale(1.0 / beta0, &mut basis[0]);

    let mut scale_estimate: f64 = 0.0;
    loop {
        let j = alpha.len();
        op.apply(&basis[j], w);
        matvecs += 1;
        // Classical Gram-Schmidt against every active vector, repeated once
        // when the first pass cancels most of w.
        let mut a = 0.0;
        let mut before = norm_sqr(w).sqrt();
        let mut b;
        let mut pass = 0;
        loop {
            let coeffs: Vec<Complex64> = basis[..=j].iter().map(|q| inner(q, w)).collect();
            for (q, c) in basis[..=j].iter().zip(&coeffs) {
                axpy(-c, q, w);
            }
            a += coeffs[j].re;
            b = norm_sqr(w).sqrt();
            pass += 1;
            if pass == 2 || b > 0.7 * before {
                break;
            }
            before = b;
        }
        alpha.push(a);
        scale_estimate = scale_estimate.max(a.abs()).max(b);
        let breakdown = b <= 1e-13 * scale_estimate.max(f64::MIN_POSITIVE);
        if breakdown
            || alpha.len() == m_max
            || (alpha.len() >= MIN_EARLY_STOP && enough(&alpha, &beta, b))
        {
            return Lanczos {
                alpha,
                beta,
                beta_last: if breakdown { 0.0 } else { b },
                breakdown,
                matvecs,
            };
        }
        beta.push(b);
        store(basis, j + 1, w);
        scale(1.0 / b, &mut basis[j + 1]);
    }
}

fn store(basis: &mut Vec<Vec<Complex64>>, k: usize, v: &[Complex64]) {
    if k < basis.len() {
        basis[k].copy_from_slice(v);
    } else {
        basis.push(v.to_vec());
    }
}
