//! Tabular scenario results and their CSV / JSON forms.
//!
//! CSV output is one file per non-empty section, `{scenario}_{section}.csv`,
//! whose first line is a `#` comment carrying the provenance. JSON output is
//! a single `{scenario}.json`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{ExperimentError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub scenario: String,
    /// SHA-256 of the resolved configuration.
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

/// p(n; t) for one backend and sweep point. Sites are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsRow {
    pub scenario: String,
    pub backend: String,
    pub g_offset_hz: f64,
    pub mu_offset_hz: f64,
    pub t_seconds: f64,
    pub jmax_t_over_pi: f64,
    pub site: usize,
    pub probability: f64,
    /// Weight outside the single-kink subspace (full backend only).
    pub leakage: Option<f64>,
    /// Fraction of shots kept by post-selection (sampled runs only).
    pub retained_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialRow {
    pub mu_offset_hz: f64,
    pub site: usize,
    /// Offset so the centre site is zero.
    pub v_hz: f64,
    pub raw_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinFlipRow {
    pub mu_offset_hz: f64,
    pub ion: usize,
    pub delta_e_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectroscopyRow {
    pub omega_p_hz: f64,
    pub ion: usize,
    pub flip_probability: f64,
    /// Probability that this ion alone flipped.
    pub single_flip_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakRow {
    pub ion: usize,
    pub predicted_hz: f64,
    pub measured_hz: f64,
    pub fwhm_hz: Option<f64>,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub key: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarningRow {
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub provenance: Provenance,
    pub dynamics: Vec<DynamicsRow>,
    pub potential: Vec<PotentialRow>,
    pub spin_flip: Vec<SpinFlipRow>,
    pub spectroscopy: Vec<SpectroscopyRow>,
    pub peaks: Vec<PeakRow>,
    pub summary: Vec<SummaryRow>,
    pub warnings: Vec<WarningRow>,
}

/// Key of one distribution: backend and the bit patterns of
/// (g offset, μ offset, t).
pub type DistributionKey = (String, u64, u64, u64);

impl ResultTable {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            provenance,
            dynamics: Vec::new(),
            potential: Vec::new(),
            spin_flip: Vec::new(),
            spectroscopy: Vec::new(),
            peaks: Vec::new(),
            summary: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn summary_value(&self, key: &str) -> Option<f64> {
        self.summary.iter().find(|r| r.key == key).map(|r| r.value)
    }

    /// Dynamics rows grouped into distributions, sites in order.
    pub fn distributions(&self) -> BTreeMap<DistributionKey, Vec<&DynamicsRow>> {
        let mut map: BTreeMap<DistributionKey, Vec<&DynamicsRow>> = BTreeMap::new();
        for r in &self.dynamics {
            map.entry((
                r.backend.clone(),
                r.g_offset_hz.to_bits(),
                r.mu_offset_hz.to_bits(),
                r.t_seconds.to_bits(),
            ))
            .or_default()
            .push(r);
        }
        for rows in map.values_mut() {
            rows.sort_by_key(|r| r.site);
        }
        map
    }

    /// Largest |Σ_n p(n) − 1| over all distributions.
    pub fn normalization_error(&self) -> f64 {
        self.distributions()
            .values()
            .map(|rows| (rows.iter().map(|r| r.probability).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Writes the table under `dir` and returns the created paths.
    pub fn emit(&self, format: OutputFormat, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
            paths.extend(self.write_section(dir, "dynamics", &self.dynamics)?);
            paths.extend(self.write_section(dir, "potential", &self.potential)?);
            paths.extend(self.write_section(dir, "spin_flip", &self.spin_flip)?);
            paths.extend(self.write_section(dir, "spectroscopy", &self.spectroscopy)?);
            paths.extend(self.write_section(dir, "peaks", &self.peaks)?);
            paths.extend(self.write_section(dir, "summary", &self.summary)?);
            paths.extend(self.write_section(dir, "warnings", &self.warnings)?);
        }
        if matches!(format, OutputFormat::Json | OutputFormat::Both) {
            let path = dir.join(format!("{}.json", self.provenance.scenario));
            let mut out = BufWriter::new(File::create(&path)?);
            serde_json::to_writer_pretty(&mut out, self).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
            out.flush()?;
            paths.push(path);
        }
        Ok(paths)
    }

    fn write_section<T: Serialize>(
        &self,
        dir: &Path,
        name: &str,
        rows: &[T],
    ) -> Result<Option<PathBuf>> {
        if rows.is_empty() {
            return Ok(None);
        }
        let path = dir.join(format!("{}_{name}.csv", self.provenance.scenario));
        let mut out = BufWriter::new(File::create(&path)?);
        let p = &self.provenance;
        writeln!(
            out,
            "# scenario={} config_hash={} seed={} version={}",
            p.scenario, p.config_hash, p.seed, p.version
        )?;
        {
            let mut w = csv::Writer::from_writer(&mut out);
            for r in rows {
                w.serialize(r).map_err(csv_io)?;
            }
            w.flush()?;
        }
        out.flush()?;
        Ok(Some(path))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let file = BufReader::new(File::open(path)?);
        serde_json::from_reader(file).map_err(|e| ExperimentError::Io(e.into()))
    }

    /// Reads the CSV files written by [`ResultTable::emit`] for `scenario`.
    /// Missing sections are empty; at least one file must exist.
    pub fn read_csv(dir: &Path, scenario: &str) -> Result<Self> {
        let mut provenance: Option<Provenance> = None;
        let mut table = ResultTable::new(Provenance {
            scenario: scenario.to_string(),
            config_hash: String::new(),
            seed: 0,
            version: String::new(),
        });
        table.dynamics = read_section(dir, scenario, "dynamics", &mut provenance)?;
        table.potential = read_section(dir, scenario, "potential", &mut provenance)?;
        table.spin_flip = read_section(dir, scenario, "spin_flip", &mut provenance)?;
        table.spectroscopy = read_section(dir, scenario, "spectroscopy", &mut provenance)?;
        table.peaks = read_section(dir, scenario, "peaks", &mut provenance)?;
        table.summary = read_section(dir, scenario, "summary", &mut provenance)?;
        table.warnings = read_section(dir, scenario, "warnings", &mut provenance)?;
        table.provenance = provenance.ok_or_else(|| {
            ExperimentError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no CSV output for scenario {scenario} in {}", dir.display()),
            ))
        })?;
        Ok(table)
    }
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

fn invalid(msg: String) -> ExperimentError {
    ExperimentError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, msg))
}

fn parse_provenance(line: &str) -> Result<Provenance> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| invalid(format!("missing provenance line, got {line:?}")))?;
    let mut fields = BTreeMap::new();
    for part in body.split_whitespace() {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| invalid(format!("bad provenance field {part:?}")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| {
        fields
            .get(k)
            .map(|v| v.to_string())
            .ok_or_else(|| invalid(format!("provenance lacks {k}")))
    };
    Ok(Provenance {
        scenario: get("scenario")?,
        config_hash: get("config_hash")?,
        seed: get("seed")?
            .parse()
            .map_err(|e| invalid(format!("bad seed: {e}")))?,
        version: get("version")?,
    })
}

fn read_section<T: DeserializeOwned>(
    dir: &Path,
    scenario: &str,
    name: &str,
    provenance: &mut Option<Provenance>,
) -> Result<Vec<T>> {
    let path = dir.join(format!("{scenario}_{name}.csv"));
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut input = BufReader::new(File::open(&path)?);
    let mut first = String::new();
    input.read_line(&mut first)?;
    let p = parse_provenance(first.trim_end())?;
    match provenance {
        Some(existing) if *existing != p => {
            return Err(invalid(format!(
                "{} has different provenance",
                path.display()
            )));
        }
        _ => *provenance = Some(p),
    }
    let mut reader = csv::Reader::from_reader(input);
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| invalid(format!("{}: {e}", path.display())))
}
