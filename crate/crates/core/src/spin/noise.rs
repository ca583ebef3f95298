//! State preparation with addressing crosstalk, and the noise parameters
//! shared with measurement.
//!
//! Preparation starts from |+⟩^{⊗N} and flips ions n+1..N (1-based) to |−⟩
//! with addressed π rotations, left to right. Right-side crosstalk of each
//! pulse is absorbed by the next pulse, so the only leftover of that
//! sequence is the left-side crosstalk of the first target onto ion n. The
//! optional phase pulse on ion n+1 is the final addressed operation and
//! leaves crosstalk on both of its neighbours.
//!
//! A spectator rotation from a pulse of area A has flip probability
//! `c · A/π` in the small-angle sense: angle `2 asin(√c) · A/π`.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::state::{Qubit, SpinState};
use super::{Result, SpinError};

/// Detection error at the chain centre.
pub const CENTER_DETECTION_ERROR: f64 = 0.02;
/// Detection error at the chain edges.
pub const EDGE_DETECTION_ERROR: f64 = 0.03;
pub const CROSSTALK_LEFT: f64 = 0.025;
pub const CROSSTALK_RIGHT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Per-ion probability that a detected bit is flipped.
    pub detection_error: Vec<f64>,
    /// Spectator flip probability on the left neighbour of an addressed ion.
    pub crosstalk_left: f64,
    /// Same for the right neighbour.
    pub crosstalk_right: f64,
    pub seed: u64,
}

impl NoiseModel {
    /// No noise; the seed still drives sampling.
    pub fn ideal(ions: usize, seed: u64) -> Self {
        Self {
            detection_error: vec![0.0; ions],
            crosstalk_left: 0.0,
            crosstalk_right: 0.0,
            seed,
        }
    }

    /// Same detection error on every ion, no crosstalk.
    pub fn uniform_detection(ions: usize, epsilon: f64, seed: u64) -> Self {
        Self {
            detection_error: vec![epsilon; ions],
            ..Self::ideal(ions, seed)
        }
    }

    /// Detection error rising linearly from 2% at the centre to 3% at the
    /// edges, with 2.5% / 5% crosstalk.
    pub fn reference(ions: usize, seed: u64) -> Self {
        Self {
            detection_error: detection_profile(ions),
            crosstalk_left: CROSSTALK_LEFT,
            crosstalk_right: CROSSTALK_RIGHT,
            seed,
        }
    }

    pub fn ions(&self) -> usize {
        self.detection_error.len()
    }

    pub fn validate(&self, ions: usize) -> Result<()> {
        if self.detection_error.len() != ions {
            return Err(SpinError::DimensionMismatch {
                expected: ions,
                got: self.detection_error.len(),
            });
        }
        let probs = self
            .detection_error
            .iter()
            .chain([&self.crosstalk_left, &self.crosstalk_right]);
        for &p in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(SpinError::InvalidParameter(format!(
                    "probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// ε_i = 0.02 + 0.01 |i − c| / c with c the chain centre.
pub fn detection_profile(ions: usize) -> Vec<f64> {
    let centre = (ions as f64 - 1.0) / 2.0;
    (0..ions)
        .map(|i| {
            let rel = if centre > 0.0 {
                (i as f64 - centre).abs() / centre
            } else {
                0.0
            };
            CENTER_DETECTION_ERROR + (EDGE_DETECTION_ERROR - CENTER_DETECTION_ERROR) * rel
        })
        .collect()
}

/// Area of the phase pulse: the short R_z(π/2) for sin φ ≥ 0, the long
/// R_z(3π/2) otherwise.
pub fn phase_pulse_area(phase: f64) -> f64 {
    if phase.sin() >= 0.0 {
        FRAC_PI_2
    } else {
        3.0 * FRAC_PI_2
    }
}

fn spectator_angle(probability: f64, area: f64) -> f64 {
    2.0 * probability.sqrt().asin() * area / PI
}

/// Kink state |n⟩, or (|n⟩ + e^{iφ}|n+1⟩)/√2 when `phase` is given,
/// optionally with crosstalk from `noise`.
pub fn prepare_kink_state(
    ions: usize,
    site: usize,
    phase: Option<f64>,
    noise: Option<&NoiseModel>,
) -> Result<SpinState> {
    if ions < 2 {
        return Err(SpinError::TooFewIons { ions, min: 2 });
    }
    let last_site = if phase.is_some() { ions - 2 } else { ions - 1 };
    if site == 0 || site > last_site {
        return Err(SpinError::SiteOutOfRange {
            site,
            max: last_site,
        });
    }
    if let Some(noise) = noise {
        noise.validate(ions)?;
    }
    let mut qubits: Vec<Qubit> = (0..ions)
        .map(|i| if i < site { Qubit::PLUS } else { Qubit::MINUS })
        .collect();
    let Some(noise) = noise else {
        if let Some(phi) = phase {
            qubits[site] = superposed(phi);
        }
        return Ok(SpinState::product(&qubits));
    };

    // Ion `site − 1` (0-based) is the left neighbour of the first target.
    qubits[site - 1] = qubits[site - 1].rotate_z(spectator_angle(noise.crosstalk_left, PI));
    if let Some(phi) = phase {
        let area = phase_pulse_area(phi);
        qubits[site] = superposed(phi);
        qubits[site - 1] = qubits[site - 1].rotate_z(spectator_angle(noise.crosstalk_left, area));
        if site + 1 < ions {
            qubits[site + 1] =
                qubits[site + 1].rotate_z(spectator_angle(noise.crosstalk_right, area));
        }
    }
    Ok(SpinState::product(&qubits))
}

/// (|−⟩ + e^{iφ}|+⟩)/√2, the ion between the two kink positions.
fn superposed(phase: f64) -> Qubit {
    Qubit {
        plus: Complex64::from_polar(FRAC_1_SQRT_2, phase),
        minus: Complex64::new(FRAC_1_SQRT_2, 0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::measure::single_kink_projection;

    #[test]
    fn profile_endpoints() {
        let p = detection_profile(21);
        assert!((p[10] - 0.02).abs() < 1e-15);
        assert!((p[0] - 0.03).abs() < 1e-15 && (p[20] - 0.03).abs() < 1e-15);
        let p = detection_profile(20);
        assert!(p.iter().all(|e| (0.02..=0.03).contains(e)));
        assert_eq!(detection_profile(1), vec![0.02]);
        assert!(NoiseModel::reference(20, 0).validate(20).is_ok());
        let mut bad = NoiseModel::reference(4, 0);
        bad.detection_error[1] = 1.5;
        assert!(bad.validate(4).is_err());
    }

    #[test]
    fn noiseless_kink() {
        let s = prepare_kink_state(20, 10, None, None).unwrap();
        let k = SpinState::kink(20, 10).unwrap();
        assert!((s.inner(&k).norm() - 1.0).abs() < 1e-14);
        assert!(prepare_kink_state(20, 20, None, None).is_err());
        assert!(prepare_kink_state(20, 19, Some(0.0), None).is_err());
    }

    #[test]
    fn phased_state_matches_two_site_superposition() {
        for phi in [FRAC_PI_2, -FRAC_PI_2, 0.3] {
            let s = prepare_kink_state(21, 10, Some(phi), None).unwrap();
            let mut target = SpinState::kink(21, 10).unwrap();
            let other = SpinState::kink(21, 11).unwrap();
            let e = Complex64::from_polar(1.0, phi);
            for (t, o) in target.amplitudes.iter_mut().zip(&other.amplitudes) {
                *t = (*t + e * o) * FRAC_1_SQRT_2;
            }
            assert!((s.inner(&target).norm() - 1.0).abs() < 1e-14);
        }
        // φ = +π/2 puts ion 11 in |+y⟩ with |±⟩ = (|↑⟩ ± |↓⟩)/√2.
        let s = prepare_kink_state(21, 10, Some(FRAC_PI_2), None).unwrap();
        let mut q = vec![Qubit::PLUS; 10];
        q.push(Qubit::plus_y());
        q.extend(vec![Qubit::MINUS; 10]);
        assert!((s.inner(&SpinState::product(&q)).norm() - 1.0).abs() < 1e-14);
        // The addressed quarter turn realizes it exactly.
        let r = Qubit::PLUS
            .rotate_z(PI)
            .rotate_z(phase_pulse_area(FRAC_PI_2));
        let ov = r.plus.conj() * Qubit::plus_y().plus + r.minus.conj() * Qubit::plus_y().minus;
        assert!((ov.norm() - 1.0).abs() < 1e-14);
        let r = Qubit::PLUS
            .rotate_z(PI)
            .rotate_z(phase_pulse_area(-FRAC_PI_2));
        let ov = r.plus.conj() * Qubit::minus_y().plus + r.minus.conj() * Qubit::minus_y().minus;
        assert!((ov.norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn crosstalk_populations() {
        let noise = NoiseModel::reference(21, 0);
        // The first-target residual only moves the kink.
        let s = prepare_kink_state(20, 10, None, Some(&NoiseModel::reference(20, 0))).unwrap();
        let (p, leakage) = single_kink_projection(&s).unwrap();
        assert!(leakage.abs() < 1e-12);
        assert!((p[8] - 0.025).abs() < 1e-12);

        let plus = prepare_kink_state(21, 10, Some(FRAC_PI_2), Some(&noise)).unwrap();
        let minus = prepare_kink_state(21, 10, Some(-FRAC_PI_2), Some(&noise)).unwrap();
        let (_, leak_plus) = single_kink_projection(&plus).unwrap();
        let (_, leak_minus) = single_kink_projection(&minus).unwrap();
        assert!(leak_plus > 0.0 && leak_plus < 0.05);
        assert!(leak_minus > leak_plus);
        assert!((plus.norm_sqr() - 1.0).abs() < 1e-12);
    }
}
