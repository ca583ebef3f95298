//! Divergence between the effective single-kink model and the full spin
//! simulation.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::table::{DynamicsRow, ResultTable};
use super::{ExperimentError, Result, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceEntry {
    pub g_offset_hz: f64,
    pub mu_offset_hz: f64,
    pub t_seconds: f64,
    pub jmax_t_over_pi: f64,
    /// ½ Σ_n |p_eff(n) − p_full(n)|.
    pub total_variation: f64,
    pub leakage: Option<f64>,
    pub retained_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub entries: Vec<DivergenceEntry>,
    pub max_total_variation: f64,
    pub max_leakage: Option<f64>,
}

impl DivergenceReport {
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }
}

type Key = (u64, u64, u64);

fn grid(table: &ResultTable, label: &str) -> Result<BTreeMap<Key, Vec<DynamicsRow>>> {
    let backends: Vec<&str> = {
        let mut b: Vec<&str> = table.dynamics.iter().map(|r| r.backend.as_str()).collect();
        b.sort_unstable();
        b.dedup();
        b
    };
    if backends.len() != 1 {
        return Err(mismatch(format!(
            "{label} table must hold exactly one backend, found {backends:?}"
        )));
    }
    let mut map: BTreeMap<Key, Vec<DynamicsRow>> = BTreeMap::new();
    for r in &table.dynamics {
        map.entry((
            r.g_offset_hz.to_bits(),
            r.mu_offset_hz.to_bits(),
            r.t_seconds.to_bits(),
        ))
        .or_default()
        .push(r.clone());
    }
    for rows in map.values_mut() {
        rows.sort_by_key(|r| r.site);
    }
    Ok(map)
}

fn mismatch(message: String) -> ExperimentError {
    ExperimentError::Numerical {
        stage: Stage::Compare,
        message,
    }
}

/// Total-variation distance between the two tables at every shared
/// (g offset, μ offset, t). The grids and site sets must match exactly.
pub fn compare_backends(effective: &ResultTable, full: &ResultTable) -> Result<DivergenceReport> {
    let a = grid(effective, "effective")?;
    let b = grid(full, "full")?;
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(mismatch("time or offset grids differ".into()));
    }
    let mut entries = Vec::with_capacity(a.len());
    for (key, pa) in &a {
        let pb = &b[key];
        let sites_a: Vec<usize> = pa.iter().map(|r| r.site).collect();
        let sites_b: Vec<usize> = pb.iter().map(|r| r.site).collect();
        if sites_a != sites_b {
            return Err(mismatch(format!(
                "site sets differ at t = {} s",
                pa[0].t_seconds
            )));
        }
        let tv = 0.5
            * pa.iter()
                .zip(pb)
                .map(|(x, y)| (x.probability - y.probability).abs())
                .sum::<f64>();
        entries.push(DivergenceEntry {
            g_offset_hz: pa[0].g_offset_hz,
            mu_offset_hz: pa[0].mu_offset_hz,
            t_seconds: pa[0].t_seconds,
            jmax_t_over_pi: pb[0].jmax_t_over_pi,
            total_variation: tv,
            leakage: pb[0].leakage,
            retained_fraction: pb[0].retained_fraction,
        });
    }
    // Report in (g, μ, t) numeric order rather than bit order.
    entries.sort_by(|x, y| {
        x.g_offset_hz
            .total_cmp(&y.g_offset_hz)
            .then(x.mu_offset_hz.total_cmp(&y.mu_offset_hz))
            .then(x.t_seconds.total_cmp(&y.t_seconds))
    });
    let max_total_variation = entries
        .iter()
        .map(|e| e.total_variation)
        .fold(0.0, f64::max);
    let max_leakage = entries.iter().filter_map(|e| e.leakage).reduce(f64::max);
    Ok(DivergenceReport {
        entries,
        max_total_variation,
        max_leakage,
    })
}

/// Splits a table run with both backends into (effective, full) tables.
/// Non-dynamics sections are copied into both.
pub fn split_backends(table: &ResultTable) -> (ResultTable, ResultTable) {
    let pick = |backend: &str| {
        let mut t = table.clone();
        t.dynamics.retain(|r| r.backend == backend);
        t
    };
    (pick("effective"), pick("full"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::table::Provenance;

    fn table(backend: &str, dists: &[(f64, [f64; 3])]) -> ResultTable {
        let mut t = ResultTable::new(Provenance {
            scenario: "x".into(),
            config_hash: String::new(),
            seed: 0,
            version: String::new(),
        });
        for (time, p) in dists {
            for (i, q) in p.iter().enumerate() {
                t.dynamics.push(DynamicsRow {
                    scenario: "x".into(),
                    backend: backend.into(),
                    g_offset_hz: 0.0,
                    mu_offset_hz: 0.0,
                    t_seconds: *time,
                    jmax_t_over_pi: *time,
                    site: i + 1,
                    probability: *q,
                    leakage: (backend == "full").then_some(0.01),
                    retained_fraction: None,
                });
            }
        }
        t
    }

    #[test]
    fn identical_tables_give_zero() {
        let d = [(0.0, [0.0, 1.0, 0.0]), (1.0, [0.25, 0.5, 0.25])];
        let r = compare_backends(&table("effective", &d), &table("full", &d)).unwrap();
        assert_eq!(r.entries.len(), 2);
        assert!(r.entries.iter().all(|e| e.total_variation == 0.0));
        assert_eq!(r.max_total_variation, 0.0);
        assert_eq!(r.max_leakage, Some(0.01));
    }

    #[test]
    fn total_variation_value() {
        let a = table("effective", &[(0.0, [0.5, 0.5, 0.0])]);
        let b = table("full", &[(0.0, [0.0, 0.5, 0.5])]);
        let r = compare_backends(&a, &b).unwrap();
        assert!((r.max_total_variation - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let a = table("effective", &[(0.0, [0.5, 0.5, 0.0])]);
        let b = table("full", &[(1.0, [0.5, 0.5, 0.0])]);
        assert!(compare_backends(&a, &b).is_err());
        let mut both = a.clone();
        both.dynamics.extend(b.dynamics.clone());
        assert!(compare_backends(&both, &b).is_err());
        let (e, f) = split_backends(&both);
        assert_eq!(e, a);
        assert_eq!(f.dynamics, b.dynamics);
    }
}
