//! Physical constants and unit helpers.
//!
//! Every frequency inside the crate is angular (rad/s). Conversion to and
//! from ordinary frequency (Hz) only happens at I/O boundaries.

use std::f64::consts::PI;

/// Elementary charge (C).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Vacuum permittivity (F/m).
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Atomic mass unit (kg).
pub const AMU: f64 = 1.660_539_066_60e-27;
/// Electron mass (kg).
pub const ELECTRON_MASS: f64 = 9.109_383_701_5e-31;

/// Mass of a singly ionized ¹⁷¹Yb atom (kg).
pub const YB171_ION_MASS: f64 = 170.936_331_5 * AMU - ELECTRON_MASS;

/// Wavelength of the Raman beams (m).
pub const RAMAN_WAVELENGTH: f64 = 355e-9;

/// Coulomb constant e²/(4πε₀) (J m).
pub fn coulomb_constant() -> f64 {
    ELEMENTARY_CHARGE * ELEMENTARY_CHARGE / (4.0 * PI * VACUUM_PERMITTIVITY)
}

/// Hz -> rad/s.
#[inline]
pub fn hz(f: f64) -> f64 {
    2.0 * PI * f
}

/// rad/s -> Hz.
#[inline]
pub fn to_hz(w: f64) -> f64 {
    w / (2.0 * PI)
}

/// Default transverse wavevector difference of the Raman pair.
///
/// The beams counter-propagate, so |Δk| = 2k, and the difference vector sits
/// at 45° to the transverse principal axis; only its projection couples to
/// the transverse modes.
pub fn default_raman_wavevector() -> f64 {
    2.0 * (2.0 * PI / RAMAN_WAVELENGTH) * (PI / 4.0).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hz_round_trip() {
        let f = 3.16e6;
        assert!((to_hz(hz(f)) - f).abs() < 1e-6);
    }
}
