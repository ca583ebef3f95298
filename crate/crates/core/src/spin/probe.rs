//! Spin-flip spectroscopy: H_probe = H_xx + B_p sin(ω_p t) Σ_i σ_y^i applied
//! to |−⟩^{⊗N}. On resonance with ΔE_i the probe flips ion i at a Rabi
//! frequency close to B_p.
//!
//! The drive acts on every ion, so a flipped ion shifts its neighbours'
//! resonances and the marginal flip probability of ion i can also peak
//! where some other ion flips first. Peaks are therefore located on the
//! probability that ion i flipped while all others stayed in |−⟩.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hamiltonian::{FullHamiltonian, DEFAULT_ION_CAP};
use super::krylov::{expmv, KrylovOptions};
use super::{Result, SpinError};
use crate::coupling::CouplingMatrix;
use crate::units::to_hz;

/// Piecewise-constant steps per probe period.
pub const STEPS_PER_PERIOD: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub krylov: KrylovOptions,
    pub steps_per_period: usize,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            krylov: KrylovOptions::with_tol(1e-10),
            steps_per_period: STEPS_PER_PERIOD,
        }
    }
}

/// Flip probabilities against probe frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeScan {
    /// ω_p grid (rad/s).
    pub probe_freqs: Vec<f64>,
    /// `response[ion][k]`: probability that `ion` reads |+⟩ after the probe.
    pub response: Vec<Vec<f64>>,
    /// `single_flip[ion][k]`: probability that `ion` alone reads |+⟩.
    pub single_flip: Vec<Vec<f64>>,
    pub probe_amplitude: f64,
    pub duration: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakEstimate {
    /// 0-based ion.
    pub ion: usize,
    /// Refined peak position (rad/s).
    pub freq: f64,
    pub height: f64,
    /// Full width at half maximum (rad/s), if both half-height crossings
    /// lie inside the grid.
    pub fwhm: Option<f64>,
}

/// Probe duration for a π pulse at Rabi frequency B_p.
pub fn pi_pulse_duration(probe_amplitude: f64) -> f64 {
    PI / probe_amplitude
}

pub fn probe_spectroscopy(
    j: &CouplingMatrix,
    probe_amplitude: f64,
    probe_freqs: &[f64],
    duration: f64,
) -> Result<ProbeScan> {
    probe_spectroscopy_with(
        j,
        probe_amplitude,
        probe_freqs,
        duration,
        &ProbeOptions::default(),
    )
}

pub fn probe_spectroscopy_with(
    j: &CouplingMatrix,
    probe_amplitude: f64,
    probe_freqs: &[f64],
    duration: f64,
    options: &ProbeOptions,
) -> Result<ProbeScan> {
    if !(probe_amplitude >= 0.0 && probe_amplitude.is_finite()) {
        return Err(SpinError::InvalidParameter(format!(
            "probe amplitude must be non-negative, got {probe_amplitude}"
        )));
    }
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(SpinError::InvalidParameter(format!(
            "probe duration must be non-negative, got {duration}"
        )));
    }
    if let Some(w) = probe_freqs.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(SpinError::InvalidParameter(format!(
            "probe frequency must be positive, got {w}"
        )));
    }
    if options.steps_per_period == 0 {
        return Err(SpinError::InvalidParameter(
            "steps per period must be positive".into(),
        ));
    }
    let h = FullHamiltonian::with_cap(j, 0.0, DEFAULT_ION_CAP)?;
    let ions = h.ions();
    let mut warnings = Vec::new();
    let jmax = j.max();
    if probe_amplitude > 0.1 * jmax {
        warnings.push(format!(
            "probe amplitude {:.3} Hz is not small against J_max = {:.3} Hz",
            to_hz(probe_amplitude),
            to_hz(jmax)
        ));
    }

    let scan_one = |omega: f64| -> Result<(Vec<f64>, Vec<f64>)> {
        let dim = 1usize << ions;
        let mut psi = vec![Complex64::new(0.0, 0.0); dim];
        psi[dim - 1] = Complex64::new(1.0, 0.0);
        if probe_amplitude > 0.0 && duration > 0.0 {
            let max_step = 2.0 * PI / (options.steps_per_period as f64 * omega);
            let steps = (duration / max_step).ceil().max(1.0) as usize;
            let dt = duration / steps as f64;
            for k in 0..steps {
                let field = probe_amplitude * (omega * (k as f64 + 0.5) * dt).sin();
                psi = expmv(&h.with_probe(field), &psi, dt, &options.krylov)?.0;
            }
        }
        let marginal = (0..ions)
            .map(|i| {
                psi.iter()
                    .enumerate()
                    .filter(|(b, _)| b & (1 << i) == 0)
                    .map(|(_, a)| a.norm_sqr())
                    .sum()
            })
            .collect();
        let alone = (0..ions)
            .map(|i| psi[(dim - 1) ^ (1 << i)].norm_sqr())
            .collect();
        Ok((marginal, alone))
    };
    let per_freq: Vec<(Vec<f64>, Vec<f64>)> = probe_freqs
        .par_iter()
        .map(|&w| scan_one(w))
        .collect::<Result<_>>()?;
    let response = (0..ions)
        .map(|i| per_freq.iter().map(|row| row.0[i]).collect())
        .collect();
    let single_flip = (0..ions)
        .map(|i| per_freq.iter().map(|row| row.1[i]).collect())
        .collect();
    Ok(ProbeScan {
        probe_freqs: probe_freqs.to_vec(),
        response,
        single_flip,
        probe_amplitude,
        duration,
        warnings,
    })
}

impl ProbeScan {
    pub fn ions(&self) -> usize {
        self.response.len()
    }

    /// Highest grid point of each ion's single-flip response, refined by a
    /// parabola through its neighbours, with the FWHM from linear
    /// interpolation of the half-height crossings.
    pub fn peaks(&self) -> Vec<PeakEstimate> {
        let w = &self.probe_freqs;
        self.single_flip
            .iter()
            .enumerate()
            .map(|(ion, r)| {
                let k = r
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, v)| if *v > r[best] { i } else { best });
                let (mut freq, mut height) = (w[k], r[k]);
                if k > 0 && k + 1 < r.len() {
                    let (x0, x1, x2) = (w[k - 1], w[k], w[k + 1]);
                    let (y0, y1, y2) = (r[k - 1], r[k], r[k + 1]);
                    let denom = (x0 - x1) * (x0 - x2) * (x1 - x2);
                    let a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom;
                    let b =
                        (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom;
                    if a < 0.0 {
                        let vertex = -b / (2.0 * a);
                        if vertex > x0 && vertex < x2 {
                            freq = vertex;
                            let c = y1 - a * x1 * x1 - b * x1;
                            height = a * vertex * vertex + b * vertex + c;
                        }
                    }
                }
                let half = 0.5 * r[k];
                let left = (1..=k)
                    .rev()
                    .find(|&i| r[i - 1] < half)
                    .map(|i| w[i - 1] + (half - r[i - 1]) / (r[i] - r[i - 1]) * (w[i] - w[i - 1]));
                let right = (k..r.len() - 1)
                    .find(|&i| r[i + 1] < half)
                    .map(|i| w[i] + (r[i] - half) / (r[i] - r[i + 1]) * (w[i + 1] - w[i]));
                let fwhm = match (left, right) {
                    (Some(l), Some(rr)) if r[k] > 0.0 => Some(rr - l),
                    _ => None,
                };
                PeakEstimate {
                    ion,
                    freq,
                    height,
                    fwhm,
                }
            })
            .collect()
    }

    /// Columns `omega_p_hz,ion,flip_probability,single_flip_probability`,
    /// ions 1-based.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "omega_p_hz",
            "ion",
            "flip_probability",
            "single_flip_probability",
        ])?;
        for (k, omega) in self.probe_freqs.iter().enumerate() {
            for (ion, (r, s)) in self.response.iter().zip(&self.single_flip).enumerate() {
                w.write_record(&[
                    to_hz(*omega).to_string(),
                    (ion + 1).to_string(),
                    r[k].to_string(),
                    s[k].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `points` evenly spaced values from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![lo];
    }
    (0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .collect()
}
