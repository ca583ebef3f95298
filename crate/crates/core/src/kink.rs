//! Single-kink effective model: a tight-binding chain on the N−1 bond sites
//! with on-site potential V_n and nearest-neighbour hopping g.
//!
//! Site labels are 1-based (`n = 1..=N−1`); vectors store site `n` at index
//! `n − 1`.

use std::io::Write;
use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::KinkPotential;

/// Tolerance on Σp = 1 for distributions handed to the metrics.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinkError {
    #[error("site {site} outside 1..={dim}")]
    SiteOutOfRange { site: usize, dim: usize },
    #[error("hopping must be finite and non-negative, got {0}")]
    InvalidHop(f64),
    #[error("time must be finite and non-negative, got {0}")]
    InvalidTime(f64),
    #[error("dimension mismatch: state has {state} sites, Hamiltonian {hamiltonian}")]
    DimensionMismatch { state: usize, hamiltonian: usize },
    #[error("effective model needs at least one site")]
    Empty,
    #[error("state is not normalized (norm² = {0})")]
    NotNormalized(f64),
    #[error("distribution sums to {0}, expected 1")]
    BadDistribution(f64),
    #[error("interference metrics need at least 3 sites, got {0}")]
    TooFewSites(usize),
}

pub type Result<T> = std::result::Result<T, KinkError>;

/// H = Σ V_n |n⟩⟨n| + g Σ (|n⟩⟨n+1| + h.c.).
#[derive(Debug)]
pub struct EffectiveHamiltonian {
    potential: Vec<f64>,
    hop: f64,
    matrix: DMatrix<f64>,
    eigen: OnceLock<(Vec<f64>, DMatrix<f64>)>,
}

impl Clone for EffectiveHamiltonian {
    fn clone(&self) -> Self {
        Self {
            potential: self.potential.clone(),
            hop: self.hop,
            matrix: self.matrix.clone(),
            eigen: OnceLock::new(),
        }
    }
}

pub fn build_effective(potential: &KinkPotential, hop: f64) -> Result<EffectiveHamiltonian> {
    EffectiveHamiltonian::new(potential.values.clone(), hop)
}

impl EffectiveHamiltonian {
    pub fn new(potential: Vec<f64>, hop: f64) -> Result<Self> {
        if potential.is_empty() {
            return Err(KinkError::Empty);
        }
        if !(hop >= 0.0 && hop.is_finite()) {
            return Err(KinkError::InvalidHop(hop));
        }
        let d = potential.len();
        let matrix = DMatrix::from_fn(d, d, |a, b| {
            if a == b {
                potential[a]
            } else if a.abs_diff(b) == 1 {
                hop
            } else {
                0.0
            }
        });
        Ok(Self {
            potential,
            hop,
            matrix,
            eigen: OnceLock::new(),
        })
    }

    /// Flat potential.
    pub fn flat(dim: usize, hop: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], hop)
    }

    pub fn dim(&self) -> usize {
        self.potential.len()
    }

    pub fn hop(&self) -> f64 {
        self.hop
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Eigenvalues and orthonormal eigenvectors (columns), computed once.
    pub fn eigen(&self) -> (&[f64], &DMatrix<f64>) {
        let (vals, vecs) = self.eigen.get_or_init(|| {
            let e = SymmetricEigen::new(self.matrix.clone());
            (e.eigenvalues.iter().cloned().collect(), e.eigenvectors)
        });
        (vals, vecs)
    }

    pub fn apply(&self, state: &KinkState) -> Result<Vec<Complex64>> {
        self.check(state)?;
        let c = &state.amplitudes;
        let d = self.dim();
        Ok((0..d)
            .map(|a| {
                let mut v = c[a] * self.potential[a];
                if a > 0 {
                    v += c[a - 1] * self.hop;
                }
                if a + 1 < d {
                    v += c[a + 1] * self.hop;
                }
                v
            })
            .collect())
    }

    /// ⟨ψ|H|ψ⟩.
    pub fn energy(&self, state: &KinkState) -> Result<f64> {
        let h = self.apply(state)?;
        Ok(state
            .amplitudes
            .iter()
            .zip(&h)
            .map(|(c, hc)| (c.conj() * hc).re)
            .sum())
    }

    fn check(&self, state: &KinkState) -> Result<()> {
        if state.dim() != self.dim() {
            return Err(KinkError::DimensionMismatch {
                state: state.dim(),
                hamiltonian: self.dim(),
            });
        }
        Ok(())
    }
}

/// Amplitudes c_n of the single-kink state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinkState {
    pub amplitudes: Vec<Complex64>,
}

impl KinkState {
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        let s = Self { amplitudes };
        let norm = s.norm_sqr();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(KinkError::NotNormalized(norm));
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn overlap(&self, other: &KinkState) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

fn check_site(site: usize, dim: usize) -> Result<()> {
    if site == 0 || site > dim {
        return Err(KinkError::SiteOutOfRange { site, dim });
    }
    Ok(())
}

/// |n0⟩.
pub fn initial_localized(site: usize, dim: usize) -> Result<KinkState> {
    check_site(site, dim)?;
    let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
    amplitudes[site - 1] = Complex64::new(1.0, 0.0);
    Ok(KinkState { amplitudes })
}

/// (|n0⟩ + e^{iφ}|n0+1⟩)/√2.
pub fn initial_superposition(site: usize, phase: f64, dim: usize) -> Result<KinkState> {
    check_site(site, dim)?;
    check_site(site + 1, dim)?;
    let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
    let r = std::f64::consts::FRAC_1_SQRT_2;
    amplitudes[site - 1] = Complex64::new(r, 0.0);
    amplitudes[site] = Complex64::from_polar(r, phase);
    Ok(KinkState { amplitudes })
}

/// ψ(t) = exp(−iHt) ψ0 through the cached eigendecomposition.
pub fn evolve(h: &EffectiveHamiltonian, state: &KinkState, t: f64) -> Result<KinkState> {
    h.check(state)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(KinkError::InvalidTime(t));
    }
    if t == 0.0 {
        return Ok(state.clone());
    }
    let (vals, vecs) = h.eigen();
    let d = h.dim();
    // Components in the eigenbasis, phased, then mapped back.
    let coeffs: Vec<Complex64> = (0..d)
        .map(|k| {
            let proj: Complex64 = (0..d).map(|a| state.amplitudes[a] * vecs[(a, k)]).sum();
            proj * Complex64::from_polar(1.0, -vals[k] * t)
        })
        .collect();
    let amplitudes = (0..d)
        .map(|a| (0..d).map(|k| coeffs[k] * vecs[(a, k)]).sum())
        .collect();
    Ok(KinkState { amplitudes })
}

/// p(n) = |c_n|².
pub fn kink_distribution(state: &KinkState) -> Vec<f64> {
    state.amplitudes.iter().map(|c| c.norm_sqr()).collect()
}

/// ⟨n⟩ = Σ n p(n) with 1-based site labels.
pub fn mean_position(state: &KinkState) -> f64 {
    mean_site(&kink_distribution(state))
}

pub fn mean_site(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(a, x)| (a + 1) as f64 * x).sum()
}

/// d⟨n⟩/dt at t = 0 from i⟨[H, n̂]⟩, in sites per second. With g in rad/s
/// this is −2g Σ Im(c_n* c_{n+1}); the potential commutes with n̂.
pub fn short_time_drift(state: &KinkState, h: &EffectiveHamiltonian) -> Result<f64> {
    h.check(state)?;
    let norm = state.norm_sqr();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(KinkError::NotNormalized(norm));
    }
    let c = &state.amplitudes;
    let s: f64 = c.windows(2).map(|w| (w[0].conj() * w[1]).im).sum();
    Ok(-2.0 * h.hop() * s)
}

/// Classical nearest-neighbour hopping with rate `hop` (per second):
/// dp_n/dt = hop (p_{n−1} + p_{n+1} − 2 p_n), with reflecting ends so that
/// probability is conserved.
pub fn classical_baseline(hop: f64, populations: &[f64], t: f64) -> Result<Vec<f64>> {
    if populations.is_empty() {
        return Err(KinkError::Empty);
    }
    if !(hop >= 0.0 && hop.is_finite()) {
        return Err(KinkError::InvalidHop(hop));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(KinkError::InvalidTime(t));
    }
    let total: f64 = populations.iter().sum();
    if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(KinkError::BadDistribution(total));
    }
    let d = populations.len();
    let generator = DMatrix::from_fn(d, d, |a, b| {
        if a == b {
            let neighbours = (a > 0) as usize + (a + 1 < d) as usize;
            -(neighbours as f64) * hop
        } else if a.abs_diff(b) == 1 {
            hop
        } else {
            0.0
        }
    });
    let e = SymmetricEigen::new(generator);
    let mut out = vec![0.0; d];
    for k in 0..d {
        let v = e.eigenvectors.column(k);
        let proj: f64 = (0..d).map(|a| v[a] * populations[a]).sum();
        let decay = (e.eigenvalues[k] * t).exp();
        for a in 0..d {
            out[a] += v[a] * proj * decay;
        }
    }
    Ok(out)
}

/// Fringe summary of a kink distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceMetrics {
    /// Local maxima (1-based sites). A plateau counts once, at its leftmost site.
    pub peaks: Vec<usize>,
    /// Interior local minima, same plateau rule.
    pub dips: Vec<usize>,
    /// Dip used for the visibility, if one is flanked by peaks.
    pub central_dip: Option<usize>,
    /// (p̄_peaks − p_dip)/(p̄_peaks + p_dip), p̄ the mean of the two flanking
    /// peaks; 0 without a flanked dip.
    pub visibility: f64,
}

/// Extrema of `p` with sites beyond the ends treated as −∞, so the ends can
/// be maxima but never minima.
pub fn interference_metrics(p: &[f64]) -> Result<InterferenceMetrics> {
    let d = p.len();
    if d < 3 {
        return Err(KinkError::TooFewSites(d));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(KinkError::BadDistribution(total));
    }
    let mut peaks = Vec::new();
    let mut dips = Vec::new();
    let mut start = 0;
    while start < d {
        let mut end = start;
        while end + 1 < d && p[end + 1] == p[start] {
            end += 1;
        }
        let left = (start > 0).then(|| p[start - 1]);
        let right = (end + 1 < d).then(|| p[end + 1]);
        let v = p[start];
        if left.is_none_or(|l| l < v) && right.is_none_or(|r| r < v) {
            peaks.push(start + 1);
        }
        if let (Some(l), Some(r)) = (left, right) {
            if l > v && r > v {
                dips.push(start + 1);
            }
        }
        start = end + 1;
    }

    let centre = mean_site(p);
    let mut central_dip = None;
    let mut visibility = 0.0;
    let mut best_distance = f64::INFINITY;
    for &dip in &dips {
        let left = peaks.iter().rev().find(|&&s| s < dip);
        let right = peaks.iter().find(|&&s| s > dip);
        if let (Some(&l), Some(&r)) = (left, right) {
            let distance = (dip as f64 - centre).abs();
            if distance < best_distance {
                best_distance = distance;
                let peak = 0.5 * (p[l - 1] + p[r - 1]);
                let low = p[dip - 1];
                central_dip = Some(dip);
                visibility = (peak - low) / (peak + low);
            }
        }
    }
    Ok(InterferenceMetrics {
        peaks,
        dips,
        central_dip,
        visibility,
    })
}

/// t = (J_max t/π) · π / J_max.
pub fn seconds_from_jmax_units(jmax: f64, units: f64) -> f64 {
    units * std::f64::consts::PI / jmax
}

/// Kink distributions on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSeries {
    /// J_max (rad/s) used to express times as J_max t/π.
    pub jmax: f64,
    pub times: Vec<f64>,
    pub probabilities: Vec<Vec<f64>>,
}

impl DistributionSeries {
    /// Evolves `state` to each time in `times` (seconds).
    pub fn evolve(
        h: &EffectiveHamiltonian,
        state: &KinkState,
        jmax: f64,
        times: &[f64],
    ) -> Result<Self> {
        let probabilities = times
            .iter()
            .map(|&t| evolve(h, state, t).map(|s| kink_distribution(&s)))
            .collect::<Result<_>>()?;
        Ok(Self {
            jmax,
            times: times.to_vec(),
            probabilities,
        })
    }

    /// Columns `t_seconds,Jmax_t_over_pi,site,probability`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_seconds", "Jmax_t_over_pi", "site", "probability"])?;
        for (t, p) in self.times.iter().zip(&self.probabilities) {
            let units = t * self.jmax / std::f64::consts::PI;
            for (a, x) in p.iter().enumerate() {
                w.write_record(&[
                    t.to_string(),
                    units.to_string(),
                    (a + 1).to_string(),
                    x.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
