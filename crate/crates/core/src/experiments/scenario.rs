//! Scenario configuration and the end-to-end runner.
//!
//! A scenario file is TOML. Its `scenario` key picks a preset whose values
//! the remaining keys override; tables such as `[trap]` are merged key by
//! key, except `[coupling]`, which replaces the preset's wholesale.
//!
//! ```toml
//! scenario = "fig3_interference"
//! ions = 20
//! g_hz = 50.0
//! times = [0.0, 0.31, 0.62, 1.09]   # J_max t / π
//! g_offsets_hz = [-15.0, 0.0, 15.0]
//! backend = "both"
//!
//! [coupling]
//! source = "power_law"              # or "trap", or "csv" with `path`
//! j0_hz = 150.0
//! alpha = 1.3
//! ```

use std::f64::consts::PI;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::table::{
    DynamicsRow, PeakRow, PotentialRow, Provenance, ResultTable, SpectroscopyRow, SpinFlipRow,
    SummaryRow, WarningRow,
};
use super::{ExperimentError, Result, Stage};
use crate::coupling::{
    center_site, coupling_matrix, detuning_rule, kink_potential, min_excitation_gap, power_law_fit,
    solve_peak_rabi, spin_flip_energy, CouplingMatrix,
};
use crate::kink::{
    build_effective, evolve, initial_localized, initial_superposition, kink_distribution,
    seconds_from_jmax_units,
};
use crate::spin::krylov::{evolve_full_with, KrylovOptions};
use crate::spin::measure::{post_select_single_kink, sample_x_basis, single_kink_projection};
use crate::spin::noise::{prepare_kink_state, NoiseModel};
use crate::spin::probe::{linear_grid, pi_pulse_duration, probe_spectroscopy, PeakEstimate};
use crate::spin::{build_full_hamiltonian, DEFAULT_ION_CAP};
use crate::trap::{chain, rabi_profile, TrapSettings};
use crate::units::{hz, to_hz};

/// Sweeps with the full backend run in parallel only up to this size.
pub const PARALLEL_SWEEP_MAX_IONS: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Fig2Potential,
    Fig3Interference,
    Fig4Directional,
    Spectroscopy,
    Custom,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Fig2Potential,
        ScenarioKind::Fig3Interference,
        ScenarioKind::Fig4Directional,
        ScenarioKind::Spectroscopy,
        ScenarioKind::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Fig2Potential => "fig2_potential",
            ScenarioKind::Fig3Interference => "fig3_interference",
            ScenarioKind::Fig4Directional => "fig4_directional",
            ScenarioKind::Spectroscopy => "spectroscopy",
            ScenarioKind::Custom => "custom",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Effective,
    Full,
    Both,
}

impl Backend {
    fn effective(self) -> bool {
        matches!(self, Backend::Effective | Backend::Both)
    }

    fn full(self) -> bool {
        matches!(self, Backend::Full | Backend::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingSource {
    /// Computed from the trap and beam; Ω_c is solved on the calibration
    /// chain unless `trap.peak_rabi_hz` is set.
    Trap,
    /// J_ij = J_0 / |i−j|^α.
    PowerLaw { j0_hz: f64, alpha: f64 },
    /// Matrix written by `CouplingMatrix::write_csv`.
    Csv { path: PathBuf },
}

/// Which probe frequencies a spectroscopy run visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanMode {
    /// Separate windows centred on each predicted ΔE_i; overlapping
    /// windows are merged.
    Windows,
    /// One uniform grid covering every ΔE_i.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectroscopySettings {
    /// B_p as a fraction of J_max.
    pub probe_fraction: f64,
    /// Grid spacing in units of B_p.
    pub step_fraction: f64,
    /// Half-width of the scanned region beyond each ΔE_i, in units of B_p.
    pub span_fraction: f64,
    pub scan: ScanMode,
}

impl Default for SpectroscopySettings {
    fn default() -> Self {
        Self {
            probe_fraction: 0.01,
            step_fraction: 0.25,
            span_fraction: 6.0,
            scan: ScanMode::Windows,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub ions: usize,
    pub g_hz: f64,
    /// J_max the beam is calibrated to (trap couplings only).
    pub target_jmax_hz: f64,
    /// Chain length used to solve Ω_c; defaults to `ions`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_ions: Option<usize>,
    /// Time grid in units of J_max t / π.
    pub times: Vec<f64>,
    /// 1-based kink site; defaults to the centre ⌈(N−1)/2⌉.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_site: Option<usize>,
    /// Superpose |n⟩ and |n+1⟩ with relative phase φ = π · phase_over_pi.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_over_pi: Option<f64>,
    /// Preparation crosstalk and detection errors for the full backend.
    pub noise: bool,
    pub g_offsets_hz: Vec<f64>,
    /// Detuning shifts; trap couplings only.
    pub mu_offsets_hz: Vec<f64>,
    pub shots: usize,
    pub seed: u64,
    pub backend: Backend,
    pub krylov_tol: f64,
    pub coupling: CouplingSource,
    pub trap: TrapSettings,
    pub spectroscopy: SpectroscopySettings,
}

impl ScenarioConfig {
    pub fn preset(kind: ScenarioKind) -> Self {
        let base = Self {
            scenario: kind,
            ions: 21,
            g_hz: 50.0,
            target_jmax_hz: 184.0,
            calibration_ions: None,
            times: vec![0.0, 0.5, 1.0],
            initial_site: None,
            phase_over_pi: None,
            noise: false,
            g_offsets_hz: vec![0.0],
            mu_offsets_hz: vec![0.0],
            shots: 4000,
            seed: 1,
            backend: Backend::Effective,
            krylov_tol: 1e-8,
            coupling: CouplingSource::Trap,
            trap: TrapSettings::default(),
            spectroscopy: SpectroscopySettings::default(),
        };
        match kind {
            ScenarioKind::Fig2Potential => Self {
                times: Vec::new(),
                mu_offsets_hz: vec![-500.0, 0.0, 500.0],
                ..base
            },
            ScenarioKind::Fig3Interference => Self {
                ions: 20,
                calibration_ions: Some(21),
                times: vec![0.0, 0.31, 0.62, 1.09],
                initial_site: Some(10),
                g_offsets_hz: vec![-15.0, 0.0, 15.0],
                ..base
            },
            ScenarioKind::Fig4Directional => Self {
                times: vec![0.0, 0.36, 0.73, 1.09],
                initial_site: Some(10),
                phase_over_pi: Some(0.5),
                g_offsets_hz: vec![-15.0, 0.0, 15.0],
                ..base
            },
            ScenarioKind::Spectroscopy => Self {
                ions: 6,
                calibration_ions: Some(21),
                times: Vec::new(),
                ..base
            },
            ScenarioKind::Custom => base,
        }
    }

    /// Parses a scenario file over its preset and validates the result.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ExperimentError::Config(e.to_string()))?;
        let kind = match user.get("scenario") {
            None => ScenarioKind::Custom,
            Some(toml::Value::String(s)) => ScenarioKind::from_name(s)
                .ok_or_else(|| ExperimentError::Config(format!("unknown scenario {s:?}")))?,
            Some(other) => {
                return Err(ExperimentError::Config(format!(
                    "scenario must be a string, got {other}"
                )))
            }
        };
        Self::preset(kind).overlay(user)
    }

    /// Like [`ScenarioConfig::from_toml_str`]; a relative CSV coupling path
    /// is taken relative to the file.
    pub fn from_path(path: &Path) -> Result<Self> {
        Self::load(None, Some(path))
    }

    /// Preset `kind` (or the file's own `scenario`, or `custom`) overlaid
    /// with the file at `path`. A file naming a different scenario than
    /// `kind` is rejected.
    pub fn load(kind: Option<ScenarioKind>, path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            let cfg = Self::preset(kind.unwrap_or(ScenarioKind::Custom));
            cfg.validate()?;
            return Ok(cfg);
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let mut user: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            ExperimentError::Config(format!("{}: {e}", path.display()))
        })?;
        if let Some(kind) = kind {
            match user.get("scenario") {
                Some(toml::Value::String(s)) if s != kind.name() => {
                    return Err(ExperimentError::Config(format!(
                        "{} is a {s} scenario, not {}",
                        path.display(),
                        kind.name()
                    )));
                }
                _ => {
                    user.insert("scenario".into(), toml::Value::String(kind.name().into()));
                }
            }
        }
        let mut cfg = Self::from_toml_str(&toml::to_string(&user).expect("table serializes"))?;
        if let CouplingSource::Csv { path: p } = &mut cfg.coupling {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Applies the keys of `user` on top of this configuration.
    pub fn overlay(&self, user: toml::Table) -> Result<Self> {
        let mut base = match toml::Value::try_from(self)
            .map_err(|e| ExperimentError::Config(e.to_string()))?
        {
            toml::Value::Table(t) => t,
            _ => unreachable!("configuration serializes to a table"),
        };
        merge(&mut base, user);
        let cfg: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn initial_site(&self) -> usize {
        self.initial_site
            .unwrap_or_else(|| center_site(self.ions.saturating_sub(1)))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        let n = self.ions;
        if n < 2 {
            return bad(format!("need at least 2 ions, got {n}"));
        }
        if !self.g_hz.is_finite() {
            return bad("g_hz must be finite".into());
        }
        if !(self.target_jmax_hz.is_finite() && self.target_jmax_hz >= 0.0) {
            return bad("target_jmax_hz must be non-negative".into());
        }
        if let Some(c) = self.calibration_ions {
            if c < 2 {
                return bad(format!("calibration_ions must be at least 2, got {c}"));
            }
        }
        if self.times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return bad("times must be finite and non-negative".into());
        }
        if self.times.windows(2).any(|w| w[1] < w[0]) {
            return bad("times must be ascending".into());
        }
        let last = if self.phase_over_pi.is_some() {
            n - 2
        } else {
            n - 1
        };
        let site = self.initial_site();
        if site == 0 || site > last {
            return bad(format!("initial_site {site} outside 1..={last}"));
        }
        if let Some(p) = self.phase_over_pi {
            if !p.is_finite() {
                return bad("phase_over_pi must be finite".into());
            }
        }
        if self.g_offsets_hz.is_empty() || self.mu_offsets_hz.is_empty() {
            return bad("offset sweeps need at least one entry; use [0.0]".into());
        }
        if self
            .g_offsets_hz
            .iter()
            .chain(&self.mu_offsets_hz)
            .any(|x| !x.is_finite())
        {
            return bad("offsets must be finite".into());
        }
        if self.noise && self.shots == 0 {
            return bad("noisy runs need shots > 0".into());
        }
        if self.backend.full() && n > DEFAULT_ION_CAP {
            return bad(format!(
                "the full backend supports at most {DEFAULT_ION_CAP} ions, got {n}"
            ));
        }
        if !(self.krylov_tol > 0.0 && self.krylov_tol.is_finite()) {
            return bad("krylov_tol must be positive".into());
        }
        match &self.coupling {
            CouplingSource::Trap => {}
            CouplingSource::PowerLaw { j0_hz, alpha } => {
                if !(j0_hz.is_finite() && *j0_hz > 0.0 && alpha.is_finite()) {
                    return bad("power law needs j0_hz > 0 and finite alpha".into());
                }
            }
            CouplingSource::Csv { .. } => {}
        }
        if !matches!(self.coupling, CouplingSource::Trap)
            && self.mu_offsets_hz.iter().any(|m| *m != 0.0)
        {
            return bad("mu_offsets_hz needs trap couplings".into());
        }
        let s = &self.spectroscopy;
        if [s.probe_fraction, s.step_fraction]
            .iter()
            .any(|x| !(x.is_finite() && *x > 0.0))
            || !(s.span_fraction.is_finite() && s.span_fraction >= 0.0)
        {
            return bad("spectroscopy fractions must be positive".into());
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) if key != "coupling" => {
                merge(b, u)
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sampling seed for one (g offset, μ offset, time index); depends only on
/// the values, never on the sweep's shape.
fn run_seed(seed: u64, g_offset: f64, mu_offset: f64, time_index: usize) -> u64 {
    [g_offset.to_bits(), mu_offset.to_bits(), time_index as u64]
        .into_iter()
        .fold(mix(seed), |acc, x| mix(acc ^ x))
}

fn push(summary: &mut Vec<SummaryRow>, key: &str, value: f64) {
    summary.push(SummaryRow {
        key: key.to_string(),
        value,
    });
}

/// Coupling matrices for every μ offset, nominal one included.
struct Couplings {
    by_mu: Vec<(f64, CouplingMatrix)>,
    nominal: CouplingMatrix,
}

fn build_couplings(cfg: &ScenarioConfig, summary: &mut Vec<SummaryRow>) -> Result<Couplings> {
    let trap_err = ExperimentError::at(Stage::Trap);
    let coupling_err = ExperimentError::at(Stage::Coupling);
    let by_mu = match &cfg.coupling {
        CouplingSource::PowerLaw { j0_hz, alpha } => {
            vec![(0.0, CouplingMatrix::power_law(cfg.ions, hz(*j0_hz), *alpha))]
        }
        CouplingSource::Csv { path } => {
            let file = File::open(path)
                .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
            let j = CouplingMatrix::read_csv(BufReader::new(file))
                .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
            if j.ion_count() != cfg.ions {
                return Err(ExperimentError::Config(format!(
                    "{} holds {} ions, configuration asks for {}",
                    path.display(),
                    j.ion_count(),
                    cfg.ions
                )));
            }
            vec![(0.0, j)]
        }
        CouplingSource::Trap => {
            let calibration_ions = cfg.calibration_ions.unwrap_or(cfg.ions);
            let settings = TrapSettings {
                ion_count: calibration_ions,
                ..cfg.trap.clone()
            };
            let cal_trap = settings.trap_config().map_err(&trap_err)?;
            let beam = settings.beam().map_err(&trap_err)?;
            let (cal_pos, cal_modes) = chain(&cal_trap).map_err(&trap_err)?;
            let omega_c = match cfg.trap.peak_rabi_hz {
                Some(f) => hz(f),
                None => solve_peak_rabi(hz(cfg.target_jmax_hz), &cal_modes, &cal_pos, &beam)
                    .map_err(&coupling_err)?,
            };
            let (pos, modes) = if calibration_ions == cfg.ions {
                (cal_pos, cal_modes)
            } else {
                let run_trap = cal_trap.with_ion_count(cfg.ions).map_err(&trap_err)?;
                chain(&run_trap).map_err(&trap_err)?
            };
            let mu = detuning_rule(&modes, omega_c).map_err(&coupling_err)?;
            let rabi = rabi_profile(&pos, &beam.with_peak(omega_c));
            let spacings = pos.spacings();
            push(summary, "axial_freq_hz", to_hz(cal_trap.axial_freq));
            push(summary, "peak_rabi_hz", to_hz(omega_c));
            push(summary, "com_freq_hz", to_hz(modes.com_freq()));
            push(
                summary,
                "eta_com",
                modes.com_lamb_dicke().unwrap_or(f64::NAN),
            );
            push(summary, "detuning_hz", to_hz(mu));
            push(
                summary,
                "min_spacing_um",
                spacings.iter().cloned().fold(f64::INFINITY, f64::min) * 1e6,
            );
            push(
                summary,
                "max_spacing_um",
                spacings.iter().cloned().fold(0.0, f64::max) * 1e6,
            );
            cfg.mu_offsets_hz
                .iter()
                .map(|&off| {
                    coupling_matrix(&rabi, &modes, mu + hz(off))
                        .map(|j| (off, j))
                        .map_err(&coupling_err)
                })
                .collect::<Result<_>>()?
        }
    };
    let nominal = match by_mu.iter().find(|(off, _)| *off == 0.0) {
        Some((_, j)) => j.clone(),
        None => match &cfg.coupling {
            CouplingSource::Trap => {
                // The nominal matrix is needed for the time axis even when
                // the sweep omits μ offset 0.
                let mut c = cfg.clone();
                c.mu_offsets_hz = vec![0.0];
                build_couplings(&c, &mut Vec::new())?.nominal
            }
            _ => by_mu[0].1.clone(),
        },
    };
    Ok(Couplings { by_mu, nominal })
}

fn potential_sections(
    cfg: &ScenarioConfig,
    couplings: &Couplings,
    table: &mut ResultTable,
) -> Result<()> {
    let err = ExperimentError::at(Stage::Coupling);
    for (off, j) in &couplings.by_mu {
        let v = kink_potential(j).map_err(&err)?;
        let raw = v.raw();
        for (k, (value, raw)) in v.values.iter().zip(raw).enumerate() {
            table.potential.push(PotentialRow {
                mu_offset_hz: *off,
                site: k + 1,
                v_hz: to_hz(*value),
                raw_hz: to_hz(raw),
            });
        }
        for ion in 0..cfg.ions {
            table.spin_flip.push(SpinFlipRow {
                mu_offset_hz: *off,
                ion: ion + 1,
                delta_e_hz: to_hz(spin_flip_energy(j, ion).map_err(&err)?),
            });
        }
    }
    let j = &couplings.nominal;
    push(&mut table.summary, "jmax_hz", to_hz(j.max()));
    if cfg.ions >= 3 {
        let fit = power_law_fit(j).map_err(&err)?;
        push(&mut table.summary, "j0_hz", to_hz(fit.j0));
        push(&mut table.summary, "alpha", fit.alpha);
        push(&mut table.summary, "fit_residual", fit.residual);
        let site = center_site(cfg.ions - 1);
        if let Ok(gap) = min_excitation_gap(j, site) {
            push(&mut table.summary, "center_min_gap_hz", to_hz(gap));
            push(&mut table.summary, "center_min_gap_over_j0", gap / fit.j0);
        }
    }
    Ok(())
}

struct SweepPoint {
    g_offset: f64,
    mu_offset: f64,
}

struct SweepOutput {
    rows: Vec<DynamicsRow>,
    norm_drift: f64,
    matvecs: usize,
}

fn run_point(
    cfg: &ScenarioConfig,
    j: &CouplingMatrix,
    point: &SweepPoint,
    times: &[(f64, f64)],
) -> Result<SweepOutput> {
    let g = hz(cfg.g_hz + point.g_offset);
    let site = cfg.initial_site();
    let phase = cfg.phase_over_pi.map(|p| p * PI);
    let name = cfg.scenario.name();
    let row = |backend: &str,
               t: (f64, f64),
               site: usize,
               p: f64,
               leak: Option<f64>,
               kept: Option<f64>| DynamicsRow {
        scenario: name.to_string(),
        backend: backend.to_string(),
        g_offset_hz: point.g_offset,
        mu_offset_hz: point.mu_offset,
        t_seconds: t.1,
        jmax_t_over_pi: t.0,
        site,
        probability: p,
        leakage: leak,
        retained_fraction: kept,
    };
    let mut out = SweepOutput {
        rows: Vec::new(),
        norm_drift: 0.0,
        matvecs: 0,
    };

    if cfg.backend.effective() {
        let err = ExperimentError::at(Stage::Kink);
        let potential = kink_potential(j).map_err(ExperimentError::at(Stage::Coupling))?;
        let h = build_effective(&potential, g).map_err(&err)?;
        let dim = h.dim();
        let psi0 = match phase {
            Some(phi) => initial_superposition(site, phi, dim),
            None => initial_localized(site, dim),
        }
        .map_err(&err)?;
        for &t in times {
            let p = kink_distribution(&evolve(&h, &psi0, t.1).map_err(&err)?);
            for (k, q) in p.into_iter().enumerate() {
                out.rows.push(row("effective", t, k + 1, q, None, None));
            }
        }
    }

    if cfg.backend.full() {
        let err = ExperimentError::at(Stage::FullSpin);
        let h = build_full_hamiltonian(j, g).map_err(&err)?;
        let prep_noise = cfg.noise.then(|| NoiseModel::reference(cfg.ions, cfg.seed));
        let mut psi =
            prepare_kink_state(cfg.ions, site, phase, prep_noise.as_ref()).map_err(&err)?;
        let options = KrylovOptions::with_tol(cfg.krylov_tol);
        let mut now = 0.0;
        for (index, &t) in times.iter().enumerate() {
            let (next, stats) = evolve_full_with(&h, &psi, t.1 - now, &options).map_err(&err)?;
            out.norm_drift += stats.norm_drift;
            out.matvecs += stats.matvecs;
            psi = next;
            now = t.1;
            let (exact, leakage) = single_kink_projection(&psi).map_err(&err)?;
            let (p, kept) = if cfg.noise {
                let noise = NoiseModel::reference(
                    cfg.ions,
                    run_seed(cfg.seed, point.g_offset, point.mu_offset, index),
                );
                let record = sample_x_basis(&psi, cfg.shots, &noise).map_err(&err)?;
                let (p, kept) = post_select_single_kink(&record).map_err(&err)?;
                (p, Some(kept))
            } else {
                (exact, None)
            };
            for (k, q) in p.into_iter().enumerate() {
                out.rows.push(row("full", t, k + 1, q, Some(leakage), kept));
            }
        }
    }
    Ok(out)
}

fn spectroscopy_sections(
    cfg: &ScenarioConfig,
    j: &CouplingMatrix,
    table: &mut ResultTable,
) -> Result<()> {
    let err = ExperimentError::at(Stage::Coupling);
    let s = &cfg.spectroscopy;
    let energies: Vec<f64> = (0..cfg.ions)
        .map(|i| spin_flip_energy(j, i))
        .collect::<std::result::Result<_, _>>()
        .map_err(&err)?;
    let b = s.probe_fraction * j.max();
    if !(b > 0.0) {
        return Err(ExperimentError::Numerical {
            stage: Stage::Spectroscopy,
            message: "couplings vanish; no probe amplitude".into(),
        });
    }
    let half = s.span_fraction * b;
    let windows = scan_windows(&energies, half, s.scan);
    if !windows.first().is_some_and(|w| w.0 > 0.0) {
        return Err(ExperimentError::Config(
            "spectroscopy grid reaches non-positive frequencies; reduce span_fraction".into(),
        ));
    }
    let duration = pi_pulse_duration(b);
    let mut points = 0;
    let mut best: Vec<Option<PeakEstimate>> = vec![None; cfg.ions];
    for (lo, hi) in windows {
        let n = ((hi - lo) / (s.step_fraction * b)).ceil() as usize + 1;
        points += n;
        let scan = probe_spectroscopy(j, b, &linear_grid(lo, hi, n), duration)
            .map_err(ExperimentError::at(Stage::Spectroscopy))?;
        for (k, w) in scan.probe_freqs.iter().enumerate() {
            for (ion, (r, single)) in scan.response.iter().zip(&scan.single_flip).enumerate() {
                table.spectroscopy.push(SpectroscopyRow {
                    omega_p_hz: to_hz(*w),
                    ion: ion + 1,
                    flip_probability: r[k],
                    single_flip_probability: single[k],
                });
            }
        }
        for peak in scan.peaks() {
            let slot = &mut best[peak.ion];
            if slot.as_ref().is_none_or(|p| peak.height > p.height) {
                *slot = Some(peak);
            }
        }
        table.warnings.extend(
            scan.warnings
                .into_iter()
                .map(|message| WarningRow { message }),
        );
    }
    let mut worst: f64 = 0.0;
    for peak in best.into_iter().flatten() {
        let predicted = energies[peak.ion];
        worst = worst.max(match peak.fwhm {
            Some(f) => (peak.freq - predicted).abs() / f,
            None => f64::INFINITY,
        });
        table.peaks.push(PeakRow {
            ion: peak.ion + 1,
            predicted_hz: to_hz(predicted),
            measured_hz: to_hz(peak.freq),
            fwhm_hz: peak.fwhm.map(to_hz),
            height: peak.height,
        });
    }
    push(&mut table.summary, "probe_amplitude_hz", to_hz(b));
    push(&mut table.summary, "probe_duration_s", duration);
    push(&mut table.summary, "probe_grid_points", points as f64);
    push(&mut table.summary, "max_peak_error_over_fwhm", worst);
    Ok(())
}

/// Frequency intervals to scan: one per distinct ΔE_i widened by `half`
/// on each side (merged where they touch), or a single covering interval.
fn scan_windows(energies: &[f64], half: f64, mode: ScanMode) -> Vec<(f64, f64)> {
    let mut e: Vec<f64> = energies.to_vec();
    e.sort_by(f64::total_cmp);
    let (Some(&first), Some(&last)) = (e.first(), e.last()) else {
        return Vec::new();
    };
    if mode == ScanMode::Full {
        return vec![(first - half, last + half)];
    }
    let mut out: Vec<(f64, f64)> = Vec::new();
    for x in e {
        match out.last_mut() {
            Some(w) if x - half <= w.1 => w.1 = w.1.max(x + half),
            _ => out.push((x - half, x + half)),
        }
    }
    out
}

/// Nominal coupling matrix of a scenario, carrying its transverse field.
pub fn scenario_couplings(cfg: &ScenarioConfig) -> Result<CouplingMatrix> {
    cfg.validate()?;
    let c = build_couplings(cfg, &mut Vec::new())?;
    Ok(c.nominal.with_transverse_field(hz(cfg.g_hz)))
}

/// Runs trap → couplings → kink model and/or full spin simulation →
/// result table.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let mut table = ResultTable::new(Provenance {
        scenario: cfg.scenario.name().to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
    });
    let couplings = build_couplings(cfg, &mut table.summary)?;
    potential_sections(cfg, &couplings, &mut table)?;

    if !cfg.times.is_empty() {
        let jmax = couplings.nominal.max();
        if !(jmax > 0.0) {
            return Err(ExperimentError::Numerical {
                stage: Stage::Coupling,
                message: "J_max is zero; the time grid is undefined".into(),
            });
        }
        let times: Vec<(f64, f64)> = cfg
            .times
            .iter()
            .map(|&u| (u, seconds_from_jmax_units(jmax, u)))
            .collect();
        let points: Vec<(SweepPoint, &CouplingMatrix)> = couplings
            .by_mu
            .iter()
            .flat_map(|(mu, j)| {
                cfg.g_offsets_hz.iter().map(move |&g| {
                    (
                        SweepPoint {
                            g_offset: g,
                            mu_offset: *mu,
                        },
                        j,
                    )
                })
            })
            .collect();
        let parallel = !cfg.backend.full() || cfg.ions <= PARALLEL_SWEEP_MAX_IONS;
        let outputs: Vec<SweepOutput> = if parallel {
            points
                .par_iter()
                .map(|(p, j)| run_point(cfg, j, p, &times))
                .collect::<Result<_>>()?
        } else {
            points
                .iter()
                .map(|(p, j)| run_point(cfg, j, p, &times))
                .collect::<Result<_>>()?
        };
        let mut drift: f64 = 0.0;
        let mut matvecs = 0;
        for o in outputs {
            drift = drift.max(o.norm_drift);
            matvecs += o.matvecs;
            table.dynamics.extend(o.rows);
        }
        if cfg.backend.full() {
            push(&mut table.summary, "krylov_max_norm_drift", drift);
            push(&mut table.summary, "krylov_matvecs", matvecs as f64);
        }
    }

    if cfg.scenario == ScenarioKind::Spectroscopy {
        spectroscopy_sections(cfg, &couplings.nominal, &mut table)?;
    }
    Ok(table)
}
