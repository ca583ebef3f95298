//! Ion-chain physics: axial equilibrium, transverse normal modes, Lamb-Dicke
//! parameters and the Gaussian Rabi profile of the global Raman beam.
//!
//! Axial positions are solved in the dimensionless units `u = z / l` with
//! `l = (e²/(4πε₀ m ω_z²))^(1/3)`. In those units the axial potential is
//! `Σ u_i²/2 + Σ_{i<j} 1/|u_i − u_j|` and the transverse Hessian, in units of
//! `m ω_z²`, is `β² I + C` with `β = ω_x/ω_z` and `C` a pure Coulomb matrix
//! that only depends on the ion count.

use std::f64::consts::LN_2;
use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{self, coulomb_constant, hz, to_hz, HBAR, YB171_ION_MASS};

/// Gradient tolerance of the equilibrium solver (dimensionless units).
pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-12;
const EQUILIBRIUM_MAX_ITER: usize = 200;

/// Transverse COM frequency of the reference trap (Hz).
pub const REFERENCE_TRANSVERSE_HZ: f64 = 3.16e6;
/// Smallest nearest-neighbour spacing of the 21-ion reference chain (m).
pub const REFERENCE_MIN_SPACING: f64 = 4.7e-6;
/// Ion count used to pin the reference axial frequency.
pub const REFERENCE_CALIBRATION_IONS: usize = 21;
/// FWHM of the global Raman beam (m).
pub const REFERENCE_BEAM_FWHM: f64 = 143e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrapError {
    #[error("invalid trap configuration: {0}")]
    InvalidConfig(String),
    #[error("equilibrium solver did not converge after {iterations} iterations (gradient {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error(
        "transverse mode {mode} has non-positive eigenvalue {eigenvalue:.6e} (zigzag instability)"
    )]
    ZigzagInstability { mode: usize, eigenvalue: f64 },
    #[error("Raman wavevector must be positive, got {0}")]
    InvalidWavevector(f64),
    #[error("invalid beam profile: {0}")]
    InvalidBeam(String),
    #[error("invalid measured frequencies: {0}")]
    InvalidMeasurement(String),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("a single measured frequency fixes only the transverse COM frequency ({transverse_freq:.6e} rad/s); the axial frequency is unconstrained")]
    Underdetermined { transverse_freq: f64 },
}

pub type Result<T> = std::result::Result<T, TrapError>;

/// Linear Paul-trap parameters. Frequencies are angular.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapConfig {
    pub ion_count: usize,
    /// ω_z (rad/s).
    pub axial_freq: f64,
    /// ω_x (rad/s).
    pub transverse_freq: f64,
    /// Ion mass (kg).
    pub ion_mass: f64,
    /// Raman wavevector difference projected on the transverse axis (rad/m).
    pub raman_wavevector: f64,
}

impl TrapConfig {
    pub fn new(ion_count: usize, axial_freq: f64, transverse_freq: f64) -> Result<Self> {
        let cfg = Self {
            ion_count,
            axial_freq,
            transverse_freq,
            ion_mass: YB171_ION_MASS,
            raman_wavevector: units::default_raman_wavevector(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The trap used for both experiments: ω_x = 2π×3.16 MHz and ω_z chosen
    /// so the 21-ion chain has a minimum spacing of 4.7 μm. Chains of other
    /// lengths reuse the same trap settings.
    pub fn reference(ion_count: usize) -> Result<Self> {
        let axial = axial_freq_for_min_spacing(
            REFERENCE_CALIBRATION_IONS,
            REFERENCE_MIN_SPACING,
            YB171_ION_MASS,
        )?;
        Self::new(ion_count, axial, hz(REFERENCE_TRANSVERSE_HZ))
    }

    pub fn with_ion_count(&self, ion_count: usize) -> Result<Self> {
        let cfg = Self { ion_count, ..*self };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ion_count == 0 {
            return Err(TrapError::InvalidConfig("ion_count must be >= 1".into()));
        }
        if !(self.axial_freq > 0.0 && self.axial_freq.is_finite()) {
            return Err(TrapError::InvalidConfig(format!(
                "axial frequency must be positive, got {}",
                self.axial_freq
            )));
        }
        if !(self.transverse_freq > self.axial_freq && self.transverse_freq.is_finite()) {
            return Err(TrapError::InvalidConfig(format!(
                "transverse frequency {} must exceed axial frequency {}",
                self.transverse_freq, self.axial_freq
            )));
        }
        if !(self.ion_mass > 0.0) {
            return Err(TrapError::InvalidConfig("ion mass must be positive".into()));
        }
        Ok(())
    }

    /// l = (e²/(4πε₀ m ω_z²))^(1/3).
    pub fn length_scale(&self) -> f64 {
        (coulomb_constant() / (self.ion_mass * self.axial_freq * self.axial_freq)).cbrt()
    }
}

/// Axial frequency that gives an `ion_count` chain the requested minimum
/// nearest-neighbour spacing.
pub fn axial_freq_for_min_spacing(ion_count: usize, spacing: f64, ion_mass: f64) -> Result<f64> {
    if ion_count < 2 {
        return Err(TrapError::InvalidConfig(
            "a spacing needs at least two ions".into(),
        ));
    }
    let u = equilibrium_dimensionless(ion_count)?;
    let min_du = u
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let l = spacing / min_du;
    Ok((coulomb_constant() / (ion_mass * l * l * l)).sqrt())
}

/// Equilibrium axial coordinates, sorted ascending and centred on zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IonPositions {
    /// z_i (m).
    pub z: Vec<f64>,
    /// l (m).
    pub length_scale: f64,
    /// Largest force component at convergence, in dimensionless units.
    pub residual: f64,
}

impl IonPositions {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn dimensionless(&self) -> Vec<f64> {
        self.z.iter().map(|z| z / self.length_scale).collect()
    }

    pub fn spacings(&self) -> Vec<f64> {
        self.z.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn centroid(&self) -> f64 {
        self.z.iter().sum::<f64>() / self.z.len() as f64
    }
}

fn axial_energy(u: &[f64]) -> f64 {
    let mut e = 0.0;
    for i in 0..u.len() {
        e += 0.5 * u[i] * u[i];
        for j in i + 1..u.len() {
            e += 1.0 / (u[j] - u[i]).abs();
        }
    }
    e
}

fn axial_gradient(u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let mut g = u.to_vec();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = u[i] - u[j];
                g[i] -= d.signum() / (d * d);
            }
        }
    }
    g
}

fn axial_hessian(u: &[f64]) -> DMatrix<f64> {
    let n = u.len();
    let mut h = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let k = 2.0 / (u[i] - u[j]).abs().powi(3);
                h[(i, i)] += k;
                h[(i, j)] = -k;
            }
        }
    }
    h
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn strictly_increasing(u: &[f64]) -> bool {
    u.windows(2).all(|w| w[1] > w[0])
}

/// Damped Newton on the dimensionless axial potential.
///
/// The axial Hessian of any ordered configuration is strictly diagonally
/// dominant, so the Newton direction is always a descent direction.
pub(crate) fn equilibrium_dimensionless(n: usize) -> Result<Vec<f64>> {
    if n == 1 {
        return Ok(vec![0.0]);
    }
    let half_extent = (0.75 * n as f64 * (n as f64).ln()).cbrt().max(1.0);
    let mut u: Vec<f64> = (0..n)
        .map(|i| -half_extent + 2.0 * half_extent * i as f64 / (n - 1) as f64)
        .collect();
    let mut grad = axial_gradient(&u);
    let mut energy = axial_energy(&u);

    for _ in 0..EQUILIBRIUM_MAX_ITER {
        let gnorm = max_abs(&grad);
        if gnorm <= EQUILIBRIUM_TOLERANCE {
            return Ok(u);
        }
        let h = axial_hessian(&u);
        let rhs = -DVector::from_column_slice(&grad);
        let step = match h.cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => rhs,
        };
        let slope: f64 = step.iter().zip(&grad).map(|(s, g)| s * g).sum();

        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = u
                .iter()
                .zip(step.iter())
                .map(|(x, s)| x + alpha * s)
                .collect();
            if strictly_increasing(&trial) {
                let trial_grad = axial_gradient(&trial);
                let trial_energy = axial_energy(&trial);
                // Near the minimum the energy decrease drops below rounding,
                // so a smaller gradient is also accepted.
                if trial_energy <= energy + 1e-4 * alpha * slope || max_abs(&trial_grad) < gnorm {
                    u = trial;
                    grad = trial_grad;
                    energy = trial_energy;
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                return Err(TrapError::NoConvergence {
                    iterations: EQUILIBRIUM_MAX_ITER,
                    residual: gnorm,
                });
            }
        }
    }
    let residual = max_abs(&grad);
    if residual <= EQUILIBRIUM_TOLERANCE {
        Ok(u)
    } else {
        Err(TrapError::NoConvergence {
            iterations: EQUILIBRIUM_MAX_ITER,
            residual,
        })
    }
}

/// Equilibrium positions of the chain in the harmonic-plus-Coulomb axial
/// potential.
pub fn solve_equilibrium(trap: &TrapConfig) -> Result<IonPositions> {
    trap.validate()?;
    let u = equilibrium_dimensionless(trap.ion_count)?;
    let residual = max_abs(&axial_gradient(&u));
    let l = trap.length_scale();
    Ok(IonPositions {
        z: u.iter().map(|x| x * l).collect(),
        length_scale: l,
        residual,
    })
}

/// Transverse normal modes, sorted by descending frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSpectrum {
    /// ω_k (rad/s), descending. Mode 0 is the COM mode.
    pub freqs: Vec<f64>,
    /// b_ik with ion index as row, mode index as column.
    pub vectors: DMatrix<f64>,
    /// η_k, populated by [`lamb_dicke`].
    pub lamb_dicke: Option<Vec<f64>>,
}

impl ModeSpectrum {
    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn com_freq(&self) -> f64 {
        self.freqs[0]
    }

    pub fn com_lamb_dicke(&self) -> Option<f64> {
        self.lamb_dicke.as_ref().map(|eta| eta[0])
    }

    /// ‖BᵀB − I‖_max.
    pub fn orthonormality_residual(&self) -> f64 {
        let n = self.vectors.ncols();
        let g = self.vectors.transpose() * &self.vectors;
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }
}

/// Eigenvalues (descending) and eigenvectors of the Coulomb part `C` of the
/// dimensionless transverse Hessian.
fn coulomb_matrix(u: &[f64]) -> DMatrix<f64> {
    let n = u.len();
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let k = 1.0 / (u[i] - u[j]).abs().powi(3);
                c[(i, j)] = k;
                c[(i, i)] -= k;
            }
        }
    }
    c
}

fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).clone_owned();
        // Sign convention: first non-negligible component positive.
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-8) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        vectors.set_column(col, &v);
    }
    (values, vectors)
}

/// Transverse normal modes of an equilibrium chain.
pub fn transverse_modes(positions: &IonPositions, trap: &TrapConfig) -> Result<ModeSpectrum> {
    trap.validate()?;
    if positions.len() != trap.ion_count {
        return Err(TrapError::InvalidConfig(format!(
            "positions hold {} ions, trap expects {}",
            positions.len(),
            trap.ion_count
        )));
    }
    let u = positions.dimensionless();
    let beta2 = (trap.transverse_freq / trap.axial_freq).powi(2);
    let mut k = coulomb_matrix(&u);
    for i in 0..u.len() {
        k[(i, i)] += beta2;
    }
    let (values, vectors) = sorted_eigen(k);
    // Eigenvalues are descending, so the softest mode is last.
    let softest = values.len() - 1;
    if values[softest] <= 0.0 {
        return Err(TrapError::ZigzagInstability {
            mode: softest,
            eigenvalue: values[softest],
        });
    }
    let freqs = values.iter().map(|l| trap.axial_freq * l.sqrt()).collect();
    Ok(ModeSpectrum {
        freqs,
        vectors,
        lamb_dicke: None,
    })
}

/// η_k = Δk √(ħ / (2 m ω_k)), the single-ion Lamb-Dicke parameter of each
/// mode. Participation of ion i enters separately through b_ik.
pub fn lamb_dicke(spectrum: &ModeSpectrum, trap: &TrapConfig) -> Result<ModeSpectrum> {
    if !(trap.raman_wavevector > 0.0) {
        return Err(TrapError::InvalidWavevector(trap.raman_wavevector));
    }
    let eta = spectrum
        .freqs
        .iter()
        .map(|w| trap.raman_wavevector * (HBAR / (2.0 * trap.ion_mass * w)).sqrt())
        .collect();
    Ok(ModeSpectrum {
        lamb_dicke: Some(eta),
        ..spectrum.clone()
    })
}

/// Gaussian intensity profile of the global Raman beam along the chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamProfile {
    /// Beam centre along the chain axis (m), relative to the trap centre.
    pub center: f64,
    /// Full width at half maximum of the Rabi-frequency profile (m).
    pub fwhm: f64,
    /// Ω_c, carrier Rabi frequency at the beam centre (rad/s).
    pub peak_rabi: f64,
}

impl BeamProfile {
    pub fn new(center: f64, fwhm: f64, peak_rabi: f64) -> Result<Self> {
        let b = Self {
            center,
            fwhm,
            peak_rabi,
        };
        b.validate()?;
        Ok(b)
    }

    /// Beam centred on the chain with the calibrated 143 μm FWHM.
    pub fn reference(peak_rabi: f64) -> Self {
        Self {
            center: 0.0,
            fwhm: REFERENCE_BEAM_FWHM,
            peak_rabi,
        }
    }

    pub fn with_peak(&self, peak_rabi: f64) -> Self {
        Self { peak_rabi, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm > 0.0) {
            return Err(TrapError::InvalidBeam(format!(
                "fwhm must be positive, got {}",
                self.fwhm
            )));
        }
        if !(self.peak_rabi >= 0.0) {
            return Err(TrapError::InvalidBeam(format!(
                "peak Rabi frequency must be non-negative, got {}",
                self.peak_rabi
            )));
        }
        Ok(())
    }

    /// Relative Rabi frequency at axial position `z`.
    pub fn shape(&self, z: f64) -> f64 {
        let d = z - self.center;
        (-4.0 * LN_2 * d * d / (self.fwhm * self.fwhm)).exp()
    }
}

/// Ω_i = Ω_c exp(−4 ln2 (z_i − center)² / fwhm²).
pub fn rabi_profile(positions: &IonPositions, beam: &BeamProfile) -> Vec<f64> {
    positions
        .z
        .iter()
        .map(|&z| beam.peak_rabi * beam.shape(z))
        .collect()
}

/// Result of [`fit_axial_frequency`].
#[derive(Debug, Clone, PartialEq)]
pub struct AxialFit {
    pub trap: TrapConfig,
    /// RMS frequency residual (rad/s).
    pub residual: f64,
}

/// Least-squares fit of ω_z (and optionally ω_x) to measured transverse mode
/// frequencies, matched to the highest modes in descending order.
///
/// Since ω_k² = ω_x² + c_k ω_z² with `c_k` the Coulomb-matrix eigenvalues,
/// which only depend on N, the model is evaluated without re-solving the
/// chain for every trial.
pub fn fit_axial_frequency(
    measured: &[f64],
    guess: &TrapConfig,
    fit_transverse: bool,
) -> Result<AxialFit> {
    guess.validate()?;
    let m = measured.len();
    if m == 0 || m > guess.ion_count {
        return Err(TrapError::InvalidMeasurement(format!(
            "need between 1 and {} frequencies, got {m}",
            guess.ion_count
        )));
    }
    if measured.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(TrapError::InvalidMeasurement(
            "frequencies must be positive".into(),
        ));
    }
    if measured.windows(2).any(|w| w[1] > w[0]) {
        return Err(TrapError::InvalidMeasurement(
            "frequencies must be sorted descending".into(),
        ));
    }
    if m == 1 {
        return if fit_transverse {
            Err(TrapError::Underdetermined {
                transverse_freq: measured[0],
            })
        } else {
            Err(TrapError::DegenerateFit(
                "the COM frequency alone does not depend on the axial frequency".into(),
            ))
        };
    }

    let u = equilibrium_dimensionless(guess.ion_count)?;
    let (c_all, _) = sorted_eigen(coulomb_matrix(&u));
    let c = &c_all[..m];

    let model = |a: f64, b: f64| -> Option<Vec<f64>> {
        let w2: Vec<f64> = c.iter().map(|ck| a + ck * b).collect();
        if w2.iter().all(|x| *x > 0.0) {
            Some(w2.iter().map(|x| x.sqrt()).collect())
        } else {
            None
        }
    };
    let sum_sq = |w: &[f64]| -> f64 { w.iter().zip(measured).map(|(x, y)| (x - y).powi(2)).sum() };

    let mut a = guess.transverse_freq.powi(2);
    let mut b = guess.axial_freq.powi(2);

    // Seed from the linear problem in squared frequencies.
    {
        let y: Vec<f64> = measured.iter().map(|w| w * w).collect();
        if fit_transverse {
            let (s1, sc, scc) = (
                m as f64,
                c.iter().sum::<f64>(),
                c.iter().map(|x| x * x).sum::<f64>(),
            );
            let sy: f64 = y.iter().sum();
            let scy: f64 = c.iter().zip(&y).map(|(x, y)| x * y).sum();
            let det = s1 * scc - sc * sc;
            if det.abs() > 1e-12 * s1 * scc {
                let b0 = (s1 * scy - sc * sy) / det;
                let a0 = (sy - sc * b0) / s1;
                if b0 > 0.0 && model(a0, b0).is_some() {
                    a = a0;
                    b = b0;
                }
            }
        } else {
            let scc: f64 = c.iter().map(|x| x * x).sum();
            if scc > 0.0 {
                let b0 = c.iter().zip(&y).map(|(ck, yk)| ck * (yk - a)).sum::<f64>() / scc;
                if b0 > 0.0 && model(a, b0).is_some() {
                    b = b0;
                }
            }
        }
    }

    let mut current = model(a, b)
        .ok_or_else(|| TrapError::DegenerateFit("initial guess is zigzag-unstable".into()))?;
    for _ in 0..100 {
        // Gauss-Newton normal equations; unknowns (a, b) = (ω_x², ω_z²).
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 0..m {
            let r = current[k] - measured[k];
            let da = 0.5 / current[k];
            let db = c[k] * 0.5 / current[k];
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let (step_a, step_b) = if fit_transverse {
            let det = jaa * jbb - jab * jab;
            if det.abs() <= 1e-14 * jaa * jbb {
                return Err(TrapError::DegenerateFit(
                    "flat objective in (ω_x, ω_z)".into(),
                ));
            }
            ((-jbb * ga + jab * gb) / det, (jab * ga - jaa * gb) / det)
        } else {
            if jbb <= 1e-300 {
                return Err(TrapError::DegenerateFit("flat objective in ω_z".into()));
            }
            (0.0, -gb / jbb)
        };
        let before = sum_sq(&current);
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-10 {
            let (ta, tb) = (a + alpha * step_a, b + alpha * step_b);
            if tb > 0.0 {
                if let Some(w) = model(ta, tb) {
                    if sum_sq(&w) <= before {
                        a = ta;
                        b = tb;
                        current = w;
                        accepted = true;
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        let rel = (step_a.abs() / a).max(step_b.abs() / b) * alpha;
        if !accepted || rel < 1e-15 {
            break;
        }
    }

    let trap = TrapConfig {
        axial_freq: b.sqrt(),
        transverse_freq: a.sqrt(),
        ..*guess
    };
    trap.validate()?;
    Ok(AxialFit {
        trap,
        residual: (sum_sq(&current) / m as f64).sqrt(),
    })
}

/// Writes the spectrum as CSV: `mode_index,freq_hz,eta,b_1..b_N`.
pub fn write_modes_csv<W: Write>(spectrum: &ModeSpectrum, out: W) -> csv::Result<()> {
    let n = spectrum.vectors.nrows();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["mode_index".to_string(), "freq_hz".into(), "eta".into()];
    header.extend((1..=n).map(|i| format!("b_{i}")));
    w.write_record(&header)?;
    for k in 0..spectrum.len() {
        let eta = spectrum
            .lamb_dicke
            .as_ref()
            .map(|e| e[k].to_string())
            .unwrap_or_default();
        let mut row = vec![
            (k + 1).to_string(),
            to_hz(spectrum.freqs[k]).to_string(),
            eta,
        ];
        row.extend((0..n).map(|i| spectrum.vectors[(i, k)].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn default_ion_count() -> usize {
    REFERENCE_CALIBRATION_IONS
}

fn default_transverse_hz() -> f64 {
    REFERENCE_TRANSVERSE_HZ
}

fn default_fwhm_um() -> f64 {
    REFERENCE_BEAM_FWHM * 1e6
}

/// Trap and beam section of a configuration file.
///
/// ```toml
/// ion_count = 21
/// axial_freq_hz = 101890.0      # optional; reference trap if absent
/// transverse_freq_hz = 3.16e6
/// beam_fwhm_um = 143.0
/// beam_center_um = 0.0
/// peak_rabi_hz = 1.0e5          # optional; solved from a J_max target if absent
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapSettings {
    #[serde(default = "default_ion_count")]
    pub ion_count: usize,
    #[serde(default)]
    pub axial_freq_hz: Option<f64>,
    #[serde(default = "default_transverse_hz")]
    pub transverse_freq_hz: f64,
    #[serde(default = "default_fwhm_um")]
    pub beam_fwhm_um: f64,
    #[serde(default)]
    pub beam_center_um: f64,
    #[serde(default)]
    pub peak_rabi_hz: Option<f64>,
    #[serde(default)]
    pub raman_wavevector_per_m: Option<f64>,
    #[serde(default)]
    pub ion_mass_amu: Option<f64>,
}

impl Default for TrapSettings {
    fn default() -> Self {
        Self {
            ion_count: REFERENCE_CALIBRATION_IONS,
            axial_freq_hz: None,
            transverse_freq_hz: REFERENCE_TRANSVERSE_HZ,
            beam_fwhm_um: default_fwhm_um(),
            beam_center_um: 0.0,
            peak_rabi_hz: None,
            raman_wavevector_per_m: None,
            ion_mass_amu: None,
        }
    }
}

impl TrapSettings {
    pub fn trap_config(&self) -> Result<TrapConfig> {
        let ion_mass = self
            .ion_mass_amu
            .map(|a| a * units::AMU - units::ELECTRON_MASS)
            .unwrap_or(YB171_ION_MASS);
        let axial = match self.axial_freq_hz {
            Some(f) => hz(f),
            None => axial_freq_for_min_spacing(
                REFERENCE_CALIBRATION_IONS,
                REFERENCE_MIN_SPACING,
                ion_mass,
            )?,
        };
        let cfg = TrapConfig {
            ion_count: self.ion_count,
            axial_freq: axial,
            transverse_freq: hz(self.transverse_freq_hz),
            ion_mass,
            raman_wavevector: self
                .raman_wavevector_per_m
                .unwrap_or_else(units::default_raman_wavevector),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Beam profile; the peak is zero when no Rabi frequency is configured.
    pub fn beam(&self) -> Result<BeamProfile> {
        BeamProfile::new(
            self.beam_center_um * 1e-6,
            self.beam_fwhm_um * 1e-6,
            self.peak_rabi_hz.map(hz).unwrap_or(0.0),
        )
    }
}

/// Convenience: positions and Lamb-Dicke-populated modes for a trap.
pub fn chain(trap: &TrapConfig) -> Result<(IonPositions, ModeSpectrum)> {
    let positions = solve_equilibrium(trap)?;
    let modes = transverse_modes(&positions, trap)?;
    let modes = lamb_dicke(&modes, trap)?;
    Ok((positions, modes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference(n: usize) -> TrapConfig {
        TrapConfig::reference(n).unwrap()
    }

    #[test]
    fn single_ion_sits_at_centre() {
        let p = solve_equilibrium(&reference(1)).unwrap();
        assert_eq!(p.z, vec![0.0]);
    }

    #[test]
    fn two_ions_balance_at_cube_root_quarter() {
        let p = solve_equilibrium(&reference(2)).unwrap();
        let u = p.dimensionless();
        let expected = 0.25_f64.cbrt();
        assert_relative_eq!(u[0], -expected, epsilon = 1e-12);
        assert_relative_eq!(u[1], expected, epsilon = 1e-12);
        assert!((-0.6300..=-0.6299).contains(&u[0]));
    }

    #[test]
    fn three_ions_match_closed_form() {
        let u = equilibrium_dimensionless(3).unwrap();
        let outer = 1.25_f64.cbrt();
        assert_relative_eq!(u[0], -outer, epsilon = 1e-12);
        assert!(u[1].abs() < 1e-12);
        assert_relative_eq!(u[2], outer, epsilon = 1e-12);
    }

    #[test]
    fn reference_chain_spacing_is_pinned_at_the_centre() {
        let p = solve_equilibrium(&reference(21)).unwrap();
        let s = p.spacings();
        let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = s.iter().cloned().fold(0.0, f64::max);
        assert_relative_eq!(min, 4.7e-6, max_relative = 1e-10);
        // Model-invariant edge/centre spacing ratio of a harmonic 21-ion chain.
        assert_relative_eq!(max / min, 1.743_740_490_866_551_5, max_relative = 1e-9);
        // Independent solve: u_1 of the 21-ion chain.
        assert_relative_eq!(
            p.dimensionless()[0],
            -4.445_485_956_118_211,
            max_relative = 1e-11
        );
    }

    #[test]
    fn reference_axial_frequency() {
        let t = reference(21);
        assert_relative_eq!(t.axial_freq, 640193.7688253343, max_relative = 1e-9);
    }

    #[test]
    fn equilibrium_is_mirror_symmetric_and_force_free() {
        for n in [2, 5, 20, 21, 40] {
            let t = reference(n);
            let p = solve_equilibrium(&t).unwrap();
            let l = p.length_scale;
            assert!(p.residual <= EQUILIBRIUM_TOLERANCE);
            let c = p.centroid();
            for i in 0..n {
                assert!((p.z[i] + p.z[n - 1 - i] - 2.0 * c).abs() <= 1e-9 * l);
            }
            // Local minimum: axial Hessian positive definite.
            assert!(axial_hessian(&p.dimensionless()).cholesky().is_some());
        }
    }

    #[test]
    fn com_mode_is_highest_and_uniform() {
        for n in [1, 2, 7, 21] {
            let t = reference(n);
            let p = solve_equilibrium(&t).unwrap();
            let m = transverse_modes(&p, &t).unwrap();
            assert_relative_eq!(m.freqs[0], t.transverse_freq, max_relative = 1e-12);
            assert!(m.orthonormality_residual() <= 1e-10);
            let expected = 1.0 / (n as f64).sqrt();
            for i in 0..n {
                assert!((m.vectors[(i, 0)] - expected).abs() <= 1e-8);
            }
            assert!(m.freqs.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn two_ion_tilt_mode() {
        let t = reference(2);
        let p = solve_equilibrium(&t).unwrap();
        let m = transverse_modes(&p, &t).unwrap();
        let expected = (t.transverse_freq.powi(2) - t.axial_freq.powi(2)).sqrt();
        assert_relative_eq!(m.freqs[1], expected, max_relative = 1e-10);
    }

    #[test]
    fn zigzag_instability_is_reported() {
        let mut t = reference(21);
        t.transverse_freq = 3.0 * t.axial_freq;
        let p = solve_equilibrium(&t).unwrap();
        match transverse_modes(&p, &t) {
            Err(TrapError::ZigzagInstability { mode, .. }) => assert_eq!(mode, 20),
            other => panic!("expected zigzag error, got {other:?}"),
        }
    }

    #[test]
    fn lamb_dicke_values() {
        let t = reference(21);
        let (_, m) = chain(&t).unwrap();
        let eta = m.lamb_dicke.as_ref().unwrap();
        assert!(eta.iter().all(|e| *e > 0.0 && e.is_finite()));
        let com = eta[0];
        assert!((com - 0.08).abs() / 0.08 < 0.15, "eta_COM = {com}");

        let mut doubled = m.clone();
        doubled.freqs.iter_mut().for_each(|w| *w *= 2.0);
        let d = lamb_dicke(&doubled, &t).unwrap();
        for (a, b) in d.lamb_dicke.unwrap().iter().zip(eta) {
            assert_relative_eq!(*a, b / 2f64.sqrt(), max_relative = 1e-14);
        }

        let mut bad = t;
        bad.raman_wavevector = 0.0;
        assert!(matches!(
            lamb_dicke(&m, &bad),
            Err(TrapError::InvalidWavevector(_))
        ));
    }

    #[test]
    fn rabi_profile_shape() {
        let t = reference(21);
        let p = solve_equilibrium(&t).unwrap();
        let beam = BeamProfile::reference(1000.0);
        let omega = rabi_profile(&p, &beam);
        assert_relative_eq!(omega[10], 1000.0, max_relative = 1e-12);
        for i in 0..21 {
            assert_relative_eq!(omega[i], omega[20 - i], max_relative = 1e-12);
        }
        // Edge ion at 55.852 μm from the beam centre.
        let edge_ratio = (-4.0 * LN_2 * (55.851_947_053_730_12f64 / 143.0).powi(2)).exp();
        assert_relative_eq!(omega[0] / 1000.0, edge_ratio, max_relative = 1e-9);
        assert_relative_eq!(edge_ratio, 0.655_110_760_426_619_3, max_relative = 1e-12);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(TrapConfig::new(0, 1.0, 2.0).is_err());
        assert!(TrapConfig::new(3, 2.0, 1.0).is_err());
        assert!(BeamProfile::new(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn fit_recovers_axial_frequency() {
        let truth = reference(21);
        let (_, m) = chain(&truth).unwrap();
        let mut guess = truth;
        guess.axial_freq *= 1.2;
        let fit = fit_axial_frequency(&m.freqs, &guess, false).unwrap();
        assert!((fit.trap.axial_freq / truth.axial_freq - 1.0).abs() < 1e-4);

        guess.transverse_freq *= 1.01;
        let fit = fit_axial_frequency(&m.freqs[..8], &guess, true).unwrap();
        assert!((fit.trap.axial_freq / truth.axial_freq - 1.0).abs() < 1e-4);
        assert!((fit.trap.transverse_freq / truth.transverse_freq - 1.0).abs() < 1e-8);
        assert!(fit.residual < 1e-3);
    }

    #[test]
    fn fit_with_single_frequency() {
        let truth = reference(21);
        let guess = TrapConfig {
            transverse_freq: truth.transverse_freq * 1.05,
            ..truth
        };
        match fit_axial_frequency(&[truth.transverse_freq], &guess, true) {
            Err(TrapError::Underdetermined { transverse_freq }) => {
                assert_eq!(transverse_freq, truth.transverse_freq)
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            fit_axial_frequency(&[truth.transverse_freq], &guess, false),
            Err(TrapError::DegenerateFit(_))
        ));
    }

    #[test]
    fn fit_rejects_unsorted_input() {
        let t = reference(5);
        assert!(fit_axial_frequency(&[1.0, 2.0], &t, false).is_err());
        assert!(fit_axial_frequency(&[3.0; 6], &t, false).is_err());
    }

    #[test]
    fn noisy_fit_stays_close() {
        use rand::{Rng, SeedableRng};
        let truth = reference(21);
        let (_, m) = chain(&truth).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            // ±0.1% noise on each mode's offset from the COM line.
            let noisy: Vec<f64> = m
                .freqs
                .iter()
                .map(|w| {
                    let gap = truth.transverse_freq - w;
                    truth.transverse_freq - gap * (1.0 + rng.gen_range(-1e-3..1e-3))
                })
                .collect();
            let mut sorted = noisy.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let fit = fit_axial_frequency(&sorted, &truth, true).unwrap();
            assert!((fit.trap.axial_freq / truth.axial_freq - 1.0).abs() < 5e-3);
            assert!(fit.residual.is_finite());
        }
    }

    #[test]
    fn modes_csv_layout() {
        let t = reference(3);
        let (_, m) = chain(&t).unwrap();
        let mut buf = Vec::new();
        write_modes_csv(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "mode_index,freq_hz,eta,b_1,b_2,b_3");
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn settings_defaults_build_the_reference_trap() {
        let s: TrapSettings = toml::from_str("ion_count = 20").unwrap();
        let t = s.trap_config().unwrap();
        assert_eq!(t, reference(20));
        assert!(toml::from_str::<TrapSettings>("ion_count = 2\nbogus = 1").is_err());
    }
}
