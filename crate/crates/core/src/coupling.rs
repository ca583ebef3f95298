//! Phonon-mediated Ising couplings and the quantities derived from them:
//! the kink potential on the dual lattice, single-spin-flip energies,
//! multi-kink excitation gaps and the power-law summary `J_0 / |i−j|^α`.
//!
//! Ions are indexed from 0. Kink sites are labelled `n = 1..=N−1`, the number
//! of leading `|+⟩` spins in `|n⟩ = |+⟩^{⊗n}|−⟩^{⊗(N−n)}`.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trap::{rabi_profile, BeamProfile, IonPositions, ModeSpectrum};
use crate::units::{hz, to_hz};

/// Couplings are rejected when μ is within this distance of any mode (rad/s).
pub const RESONANCE_GUARD: f64 = 2.0 * std::f64::consts::PI * 1e3;

/// Relative tolerance on J_max when solving for the peak Rabi frequency.
pub const PEAK_RABI_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("mode spectrum has no Lamb-Dicke parameters")]
    MissingLambDicke,
    #[error("detuning {detuning:.6e} rad/s is not above the highest mode {highest:.6e} rad/s")]
    BelowModes { detuning: f64, highest: f64 },
    #[error(
        "detuning is within {distance:.3e} rad/s of mode {mode} (guard {RESONANCE_GUARD:.3e})"
    )]
    NearResonance { mode: usize, distance: f64 },
    #[error("length mismatch: {0}")]
    Shape(String),
    #[error("no peak Rabi frequency reaches J_max = {target:.6e} rad/s: {reason}")]
    NoRoot { target: f64, reason: String },
    #[error("index {index} out of range for {len}")]
    OutOfRange { index: usize, len: usize },
    #[error("flipping ion {ion} moves the kink at site {site} instead of creating new ones")]
    KinkMovingFlip { site: usize, ion: usize },
    #[error("power-law fit needs positive couplings; J[{i}][{j}] = {value:.6e}")]
    NonPositiveCoupling { i: usize, j: usize, value: f64 },
    #[error("invalid coupling matrix: {0}")]
    Invalid(String),
    #[error("coupling CSV: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, CouplingError>;

/// Symmetric Ising coupling matrix (rad/s) with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    j: DMatrix<f64>,
    /// Bichromatic detuning μ (rad/s); zero when not laser-derived.
    pub detuning: f64,
    /// Transverse field g (rad/s).
    pub transverse_field: f64,
}

impl CouplingMatrix {
    /// Validates symmetry and a zero diagonal.
    pub fn from_matrix(j: DMatrix<f64>, detuning: f64, transverse_field: f64) -> Result<Self> {
        let n = j.nrows();
        if j.ncols() != n {
            return Err(CouplingError::Invalid("matrix is not square".into()));
        }
        for a in 0..n {
            if j[(a, a)] != 0.0 {
                return Err(CouplingError::Invalid(format!("non-zero diagonal at {a}")));
            }
            for b in 0..a {
                if j[(a, b)] != j[(b, a)] {
                    return Err(CouplingError::Invalid(format!("asymmetric at ({a}, {b})")));
                }
                if !j[(a, b)].is_finite() {
                    return Err(CouplingError::Invalid(format!("non-finite at ({a}, {b})")));
                }
            }
        }
        Ok(Self {
            j,
            detuning,
            transverse_field,
        })
    }

    /// J_ij = j0 / |i − j|^α.
    pub fn power_law(n: usize, j0: f64, alpha: f64) -> Self {
        let j = DMatrix::from_fn(n, n, |a, b| {
            if a == b {
                0.0
            } else {
                j0 / (a.abs_diff(b) as f64).powf(alpha)
            }
        });
        Self {
            j,
            detuning: 0.0,
            transverse_field: 0.0,
        }
    }

    /// Uniform nearest-neighbour chain.
    pub fn nearest_neighbour(n: usize, j0: f64) -> Self {
        let j = DMatrix::from_fn(n, n, |a, b| if a.abs_diff(b) == 1 { j0 } else { 0.0 });
        Self {
            j,
            detuning: 0.0,
            transverse_field: 0.0,
        }
    }

    pub fn with_transverse_field(mut self, g: f64) -> Self {
        self.transverse_field = g;
        self
    }

    pub fn ion_count(&self) -> usize {
        self.j.nrows()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.j[(a, b)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.j
    }

    /// J_max = max_ij J_ij.
    pub fn max(&self) -> f64 {
        self.j.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Upper-triangle pairs `(i, j, J_ij)` with i < j.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.ion_count();
        (0..n).flat_map(move |a| (a + 1..n).map(move |b| (a, b, self.j[(a, b)])))
    }

    /// Writes `n,mu_hz,g_hz` followed by the matrix in Hz, row-major.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "n,mu_hz,g_hz")?;
        writeln!(
            out,
            "{},{},{}",
            self.ion_count(),
            to_hz(self.detuning),
            to_hz(self.transverse_field)
        )?;
        for a in 0..self.ion_count() {
            let row: Vec<String> = (0..self.ion_count())
                .map(|b| to_hz(self.j[(a, b)]).to_string())
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let bad = |m: &str| CouplingError::Csv(m.to_string());
        let mut lines = input
            .lines()
            .map(|l| l.map_err(|e| CouplingError::Csv(e.to_string())));
        let header = lines.next().ok_or_else(|| bad("empty input"))??;
        if header.trim() != "n,mu_hz,g_hz" {
            return Err(bad("expected header `n,mu_hz,g_hz`"));
        }
        let meta = lines.next().ok_or_else(|| bad("missing metadata row"))??;
        let fields: Vec<&str> = meta.trim().split(',').collect();
        if fields.len() != 3 {
            return Err(bad("metadata row needs three fields"));
        }
        let n: usize = fields[0].parse().map_err(|_| bad("bad ion count"))?;
        let mu: f64 = fields[1].parse().map_err(|_| bad("bad mu_hz"))?;
        let g: f64 = fields[2].parse().map_err(|_| bad("bad g_hz"))?;
        let mut j = DMatrix::zeros(n, n);
        for a in 0..n {
            let row = lines.next().ok_or_else(|| bad("missing matrix row"))??;
            let values: Vec<&str> = row.trim().split(',').collect();
            if values.len() != n {
                return Err(bad(&format!(
                    "row {a} has {} entries, expected {n}",
                    values.len()
                )));
            }
            for (b, v) in values.iter().enumerate() {
                j[(a, b)] = hz(v.parse::<f64>().map_err(|_| bad("bad matrix entry"))?);
            }
        }
        // Rounding through Hz may break bitwise symmetry; restore it.
        for a in 0..n {
            for b in 0..a {
                let m = 0.5 * (j[(a, b)] + j[(b, a)]);
                j[(a, b)] = m;
                j[(b, a)] = m;
            }
        }
        Self::from_matrix(j, hz(mu), hz(g))
    }
}

/// μ = ω_COM + 3 η_COM Ω_c.
pub fn detuning_rule(spectrum: &ModeSpectrum, peak_rabi: f64) -> Result<f64> {
    let eta = spectrum
        .com_lamb_dicke()
        .ok_or(CouplingError::MissingLambDicke)?;
    if !(peak_rabi >= 0.0) {
        return Err(CouplingError::Invalid(format!(
            "peak Rabi frequency must be non-negative, got {peak_rabi}"
        )));
    }
    let mu = spectrum.com_freq() + 3.0 * eta * peak_rabi;
    let highest = spectrum
        .freqs
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    // Without laser drive there is no virtual excitation to protect.
    if peak_rabi > 0.0 && mu <= highest {
        return Err(CouplingError::BelowModes {
            detuning: mu,
            highest,
        });
    }
    Ok(mu)
}

/// J_ij = Ω_i Ω_j Σ_k η_k² b_ik b_jk ω_k / (μ² − ω_k²).
pub fn coupling_matrix(
    rabi: &[f64],
    spectrum: &ModeSpectrum,
    detuning: f64,
) -> Result<CouplingMatrix> {
    let eta = spectrum
        .lamb_dicke
        .as_ref()
        .ok_or(CouplingError::MissingLambDicke)?;
    let n = spectrum.vectors.nrows();
    if rabi.len() != n {
        return Err(CouplingError::Shape(format!(
            "{} Rabi frequencies for {n} ions",
            rabi.len()
        )));
    }
    let mut weights = Vec::with_capacity(spectrum.len());
    for (k, &w) in spectrum.freqs.iter().enumerate() {
        let distance = (detuning - w).abs();
        if distance < RESONANCE_GUARD {
            return Err(CouplingError::NearResonance { mode: k, distance });
        }
        weights.push(eta[k] * eta[k] * w / (detuning * detuning - w * w));
    }
    let b = &spectrum.vectors;
    let mut j = DMatrix::zeros(n, n);
    for a in 0..n {
        for c in a + 1..n {
            let s: f64 = (0..weights.len())
                .map(|k| weights[k] * b[(a, k)] * b[(c, k)])
                .sum();
            let v = rabi[a] * rabi[c] * s;
            j[(a, c)] = v;
            j[(c, a)] = v;
        }
    }
    Ok(CouplingMatrix {
        j,
        detuning,
        transverse_field: 0.0,
    })
}

/// Couplings for a beam with the detuning set by [`detuning_rule`].
pub fn laser_couplings(
    positions: &IonPositions,
    spectrum: &ModeSpectrum,
    beam: &BeamProfile,
) -> Result<CouplingMatrix> {
    let mu = detuning_rule(spectrum, beam.peak_rabi)?;
    coupling_matrix(&rabi_profile(positions, beam), spectrum, mu)
}

/// Peak Rabi frequency Ω_c for which the detuning rule plus the coupling
/// formula give `max J_ij = target`. Only the beam's centre and width are
/// used; its peak value is ignored.
pub fn solve_peak_rabi(
    target: f64,
    spectrum: &ModeSpectrum,
    positions: &IonPositions,
    beam: &BeamProfile,
) -> Result<f64> {
    if target == 0.0 {
        return Ok(0.0);
    }
    if !(target > 0.0 && target.is_finite()) {
        return Err(CouplingError::NoRoot {
            target,
            reason: "target must be positive".into(),
        });
    }
    let eta = spectrum
        .com_lamb_dicke()
        .ok_or(CouplingError::MissingLambDicke)?;
    let response = |omega: f64| -> Result<f64> {
        Ok(laser_couplings(positions, spectrum, &beam.with_peak(omega))?.max())
    };

    // Smallest Ω_c that clears the resonance guard of the COM mode.
    let mut lo = RESONANCE_GUARD / (3.0 * eta) * (1.0 + 1e-9);
    let j_lo = response(lo)?;
    if j_lo > target {
        return Err(CouplingError::NoRoot {
            target,
            reason: format!("smallest admissible Ω_c already gives J_max = {j_lo:.6e} rad/s"),
        });
    }
    // J_max rises with Ω_c until μ leaves the mode band, then falls again.
    let mut j_prev = j_lo;
    let mut hi = 2.0 * lo;
    loop {
        let j_hi = response(hi)?;
        if j_hi >= target {
            break;
        }
        if j_hi <= j_prev {
            return Err(CouplingError::NoRoot {
                target,
                reason: format!("J_max peaks below the target, near {j_prev:.6e} rad/s"),
            });
        }
        j_prev = j_hi;
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-13 * hi {
        let mid = 0.5 * (lo + hi);
        if response(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let omega = 0.5 * (lo + hi);
    let achieved = response(omega)?;
    if ((achieved - target) / target).abs() > PEAK_RABI_TOLERANCE {
        return Err(CouplingError::NoRoot {
            target,
            reason: format!("bisection ended at J_max = {achieved:.6e} rad/s"),
        });
    }
    Ok(omega)
}

/// Kink potential on the N−1 dual-lattice sites, offset to zero at the
/// central site ⌈(N−1)/2⌉.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinkPotential {
    /// V_n − offset for n = 1..=N−1 (rad/s).
    pub values: Vec<f64>,
    /// Raw V at the central site (rad/s).
    pub zero_offset: f64,
}

impl KinkPotential {
    pub fn site_count(&self) -> usize {
        self.values.len()
    }

    /// V_n before offsetting.
    pub fn raw(&self) -> Vec<f64> {
        self.values.iter().map(|v| v + self.zero_offset).collect()
    }

    /// Central site label (1-based).
    pub fn center_site(&self) -> usize {
        center_site(self.values.len())
    }

    /// Potential from explicit values with no offset applied.
    pub fn from_values(values: Vec<f64>) -> Self {
        Self {
            values,
            zero_offset: 0.0,
        }
    }
}

/// ⌈sites/2⌉, i.e. site 10 for both 19 and 20 sites.
pub fn center_site(sites: usize) -> usize {
    sites.div_ceil(2)
}

/// V_n = 2 Σ_{i≤n, j>n} J_ij, built incrementally:
/// V_n − V_{n−1} = 2(Σ_{j>n} J_nj − Σ_{i<n} J_in) with 1-based ions.
pub fn kink_potential(j: &CouplingMatrix) -> Result<KinkPotential> {
    let n = j.ion_count();
    if n < 2 {
        return Err(CouplingError::Invalid(
            "a kink needs at least two ions".into(),
        ));
    }
    let mut raw = Vec::with_capacity(n - 1);
    let mut v = 0.0;
    for site in 1..n {
        // Ion `site − 1` (0-based) moves from the right domain to the left.
        let moved = site - 1;
        let right: f64 = (site..n).map(|b| j.get(moved, b)).sum();
        let left: f64 = (0..moved).map(|a| j.get(a, moved)).sum();
        v += 2.0 * (right - left);
        raw.push(v);
    }
    let offset = raw[center_site(n - 1) - 1];
    Ok(KinkPotential {
        values: raw.iter().map(|x| x - offset).collect(),
        zero_offset: offset,
    })
}

/// ΔE_i = 2 Σ_{j≠i} J_ij.
pub fn spin_flip_energy(j: &CouplingMatrix, ion: usize) -> Result<f64> {
    let n = j.ion_count();
    if ion >= n {
        return Err(CouplingError::OutOfRange { index: ion, len: n });
    }
    Ok(2.0
        * (0..n)
            .filter(|&b| b != ion)
            .map(|b| j.get(ion, b))
            .sum::<f64>())
}

/// Energy cost of σ_z on `ion` (0-based) applied to the kink state at `site`.
/// Each branch sums `J_{ion,j}` over the ranges of the two-branch formula:
/// the ion's own domain with a plus sign, the other domain with a minus sign.
pub fn excitation_gap(j: &CouplingMatrix, site: usize, ion: usize) -> Result<f64> {
    let n = j.ion_count();
    if site == 0 || site >= n {
        return Err(CouplingError::OutOfRange {
            index: site,
            len: n,
        });
    }
    if ion >= n {
        return Err(CouplingError::OutOfRange { index: ion, len: n });
    }
    // 1-based labels of the formula.
    let i = ion + 1;
    let row = |range: std::ops::RangeInclusive<usize>| -> f64 {
        range.map(|jj| j.get(ion, jj - 1)).sum()
    };
    if i < site {
        Ok(2.0 * (row(1..=i - 1) + row(i + 1..=site) - row(site + 1..=n)))
    } else if i > site + 1 {
        Ok(2.0 * (row(site + 1..=i - 1) + row(i + 1..=n) - row(1..=site)))
    } else {
        Err(CouplingError::KinkMovingFlip { site, ion })
    }
}

/// Smallest excitation gap over all admissible flips for a kink at `site`.
pub fn min_excitation_gap(j: &CouplingMatrix, site: usize) -> Result<f64> {
    let mut best = f64::INFINITY;
    for ion in 0..j.ion_count() {
        match excitation_gap(j, site, ion) {
            Ok(gap) => best = best.min(gap),
            Err(CouplingError::KinkMovingFlip { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(best)
}

/// `J_ij ≈ J_0 / |i − j|^α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// J_0 (rad/s).
    pub j0: f64,
    pub alpha: f64,
    /// RMS residual of the log-log regression.
    pub residual: f64,
}

/// Unweighted least squares of ln J_ij against ln|i − j| over all pairs.
pub fn power_law_fit(j: &CouplingMatrix) -> Result<PowerLawFit> {
    let n = j.ion_count();
    power_law_fit_range(j, 0..n)
}

/// Same regression restricted to pairs with both ions in `ions`.
pub fn power_law_fit_range(
    j: &CouplingMatrix,
    ions: std::ops::Range<usize>,
) -> Result<PowerLawFit> {
    let n = j.ion_count();
    if ions.end > n {
        return Err(CouplingError::OutOfRange {
            index: ions.end,
            len: n,
        });
    }
    if ions.len() < 3 {
        return Err(CouplingError::Invalid(
            "power-law fit needs at least three ions".into(),
        ));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for a in ions.clone() {
        for b in a + 1..ions.end {
            let v = j.get(a, b);
            if !(v > 0.0) {
                return Err(CouplingError::NonPositiveCoupling {
                    i: a,
                    j: b,
                    value: v,
                });
            }
            xs.push(((b - a) as f64).ln());
            ys.push(v.ln());
        }
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(PowerLawFit {
        j0: intercept.exp(),
        alpha: -slope,
        residual: (rss / m).sqrt(),
    })
}
