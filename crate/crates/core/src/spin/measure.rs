//! x-basis readout: projection onto the single-kink subspace, sampled
//! bitstrings with detection errors, kink counting and post-selection.
//!
//! Text form of a record: one JSON header line, then one line per shot with
//! `0` for |+⟩ and `1` for |−⟩, ion 1 first.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::noise::NoiseModel;
use super::state::{kink_index, SpinState};
use super::{Result, SpinError};

/// p(n) = |⟨n|ψ⟩|² renormalized over the N−1 kink states, and the weight
/// outside them.
pub fn single_kink_projection(state: &SpinState) -> Result<(Vec<f64>, f64)> {
    let n = state.ions();
    if n < 2 {
        return Err(SpinError::TooFewIons { ions: n, min: 2 });
    }
    let raw: Vec<f64> = (1..n)
        .map(|site| state.amplitudes[kink_index(n, site)].norm_sqr())
        .collect();
    let weight: f64 = raw.iter().sum();
    if !(weight > 0.0) {
        return Err(SpinError::NoSingleKinkWeight);
    }
    let leakage = state.norm_sqr() - weight;
    Ok((raw.iter().map(|p| p / weight).collect(), leakage))
}

/// Number of neighbouring ions with different outcomes.
pub fn count_kinks(bits: u32, ions: usize) -> usize {
    if ions < 2 {
        return 0;
    }
    let mask = (1u32 << (ions - 1)) - 1;
    ((bits ^ (bits >> 1)) & mask).count_ones() as usize
}

/// Bitstring text (ion 1 first) to basis index. Accepts `0`/`+` for |+⟩ and
/// `1`/`-`/`−` for |−⟩.
pub fn parse_bitstring(s: &str) -> Result<(u32, usize)> {
    let mut bits = 0u32;
    let mut ions = 0;
    for ch in s.trim().chars() {
        if ions >= 32 {
            return Err(SpinError::Record("bitstring longer than 32 ions".into()));
        }
        match ch {
            '0' | '+' => {}
            '1' | '-' | '−' => bits |= 1 << ions,
            other => return Err(SpinError::Record(format!("unexpected character {other:?}"))),
        }
        ions += 1;
    }
    Ok((bits, ions))
}

pub fn format_bitstring(bits: u32, ions: usize) -> String {
    (0..ions)
        .map(|i| if bits & (1 << i) != 0 { '1' } else { '0' })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub ions: usize,
    pub shots: usize,
    pub seed: u64,
    pub detection_error: Vec<f64>,
    pub crosstalk_left: f64,
    pub crosstalk_right: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub header: RecordHeader,
    /// Detected basis index of each shot.
    pub outcomes: Vec<u32>,
    pub kink_counts: Vec<usize>,
}

impl MeasurementRecord {
    pub fn from_outcomes(header: RecordHeader, outcomes: Vec<u32>) -> Self {
        let kink_counts = outcomes
            .iter()
            .map(|&b| count_kinks(b, header.ions))
            .collect();
        Self {
            header,
            outcomes,
            kink_counts,
        }
    }

    /// Record from bitstring text, e.g. `["+++---", "++----"]`.
    pub fn from_strings<S: AsRef<str>>(strings: &[S]) -> Result<Self> {
        let mut outcomes = Vec::with_capacity(strings.len());
        let mut ions = None;
        for s in strings {
            let (bits, n) = parse_bitstring(s.as_ref())?;
            if *ions.get_or_insert(n) != n {
                return Err(SpinError::Record("bitstrings differ in length".into()));
            }
            outcomes.push(bits);
        }
        let ions = ions.unwrap_or(0);
        let header = RecordHeader {
            ions,
            shots: outcomes.len(),
            seed: 0,
            detection_error: vec![0.0; ions],
            crosstalk_left: 0.0,
            crosstalk_right: 0.0,
        };
        Ok(Self::from_outcomes(header, outcomes))
    }

    pub fn shots(&self) -> usize {
        self.outcomes.len()
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        writeln!(out)?;
        for &b in &self.outcomes {
            writeln!(out, "{}", format_bitstring(b, self.header.ions))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let io = |e: std::io::Error| SpinError::Record(e.to_string());
        let header_line = lines
            .next()
            .ok_or_else(|| SpinError::Record("empty record".into()))?
            .map_err(io)?;
        let header: RecordHeader =
            serde_json::from_str(&header_line).map_err(|e| SpinError::Record(e.to_string()))?;
        let mut outcomes = Vec::with_capacity(header.shots);
        for line in lines {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let (bits, n) = parse_bitstring(&line)?;
            if n != header.ions {
                return Err(SpinError::Record(format!(
                    "shot has {n} ions, header says {}",
                    header.ions
                )));
            }
            outcomes.push(bits);
        }
        if outcomes.len() != header.shots {
            return Err(SpinError::Record(format!(
                "{} shots, header says {}",
                outcomes.len(),
                header.shots
            )));
        }
        Ok(Self::from_outcomes(header, outcomes))
    }
}

/// Draws `shots` x-basis outcomes from |ψ|², then flips each ion's result
/// with its detection error. Shot `k` uses its own ChaCha stream `k` of the
/// seed, so records do not depend on thread scheduling.
pub fn sample_x_basis(
    state: &SpinState,
    shots: usize,
    noise: &NoiseModel,
) -> Result<MeasurementRecord> {
    let ions = state.ions();
    if shots == 0 {
        return Err(SpinError::InvalidParameter("need at least one shot".into()));
    }
    if ions > 32 {
        return Err(SpinError::TooManyIons { ions, cap: 32 });
    }
    noise.validate(ions)?;
    let mut cdf = Vec::with_capacity(state.dim());
    let mut acc = 0.0;
    for a in &state.amplitudes {
        acc += a.norm_sqr();
        cdf.push(acc);
    }
    let total = acc;
    if !(total > 0.0) {
        return Err(SpinError::InvalidParameter("state has zero norm".into()));
    }
    let draw = |shot: usize| -> u32 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        rng.set_stream(shot as u64);
        let u: f64 = rng.gen::<f64>() * total;
        // First entry whose cumulative weight exceeds u; never a zero-weight one.
        let index = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        let mut bits = index as u32;
        for (i, &eps) in noise.detection_error.iter().enumerate() {
            if rng.gen::<f64>() < eps {
                bits ^= 1 << i;
            }
        }
        bits
    };
    let outcomes: Vec<u32> = if shots >= 256 {
        (0..shots).into_par_iter().map(draw).collect()
    } else {
        (0..shots).map(draw).collect()
    };
    let header = RecordHeader {
        ions,
        shots,
        seed: noise.seed,
        detection_error: noise.detection_error.clone(),
        crosstalk_left: noise.crosstalk_left,
        crosstalk_right: noise.crosstalk_right,
    };
    Ok(MeasurementRecord::from_outcomes(header, outcomes))
}

/// Kink site of a single-wall outcome: the number of leading ions that
/// share ion 1's result. Both orientations count.
pub fn wall_site(bits: u32, ions: usize) -> Option<usize> {
    if count_kinks(bits, ions) != 1 {
        return None;
    }
    let first = bits & 1;
    (1..ions).find(|&i| (bits >> i) & 1 != first)
}

/// Frequencies of the wall position among single-kink shots, and the
/// retained fraction.
pub fn post_select_single_kink(record: &MeasurementRecord) -> Result<(Vec<f64>, f64)> {
    let ions = record.header.ions;
    let shots = record.shots();
    if shots == 0 {
        return Err(SpinError::Record("empty record".into()));
    }
    if ions < 2 {
        return Err(SpinError::TooFewIons { ions, min: 2 });
    }
    let mut counts = vec![0usize; ions - 1];
    for &b in &record.outcomes {
        if let Some(site) = wall_site(b, ions) {
            counts[site - 1] += 1;
        }
    }
    let kept: usize = counts.iter().sum();
    if kept == 0 {
        return Err(SpinError::NothingRetained { shots });
    }
    Ok((
        counts.iter().map(|&c| c as f64 / kept as f64).collect(),
        kept as f64 / shots as f64,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::noise::detection_profile;
    use num_complex::Complex64;

    #[test]
    fn kink_counting() {
        assert_eq!(count_kinks(0, 10), 0);
        assert_eq!(count_kinks(0b11111, 5), 0);
        assert_eq!(count_kinks(0b0101010101, 10), 9);
        let (b, n) = parse_bitstring("++++++++++----------").unwrap();
        assert_eq!(count_kinks(b, n), 1);
        assert_eq!(wall_site(b, n), Some(10));
        assert_eq!(count_kinks(1, 1), 0);
    }

    #[test]
    fn bitstring_round_trip() {
        let (b, n) = parse_bitstring("0110").unwrap();
        assert_eq!((b, n), (0b0110, 4));
        assert_eq!(format_bitstring(b, n), "0110");
        assert_eq!(parse_bitstring("+−-").unwrap(), (0b110, 3));
        assert!(parse_bitstring("01x").is_err());
    }

    #[test]
    fn hand_built_record() {
        let r = MeasurementRecord::from_strings(&["+++---", "++----", "+-+---"]).unwrap();
        assert_eq!(r.kink_counts, vec![1, 1, 3]);
        let (p, kept) = post_select_single_kink(&r).unwrap();
        assert!((kept - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(p, vec![0.0, 0.5, 0.5, 0.0, 0.0]);
        // The mirrored orientation counts at the same site.
        let r = MeasurementRecord::from_strings(&["---+++"]).unwrap();
        assert_eq!(post_select_single_kink(&r).unwrap().0[2], 1.0);
        let r = MeasurementRecord::from_strings(&["+-+---"]).unwrap();
        assert!(matches!(
            post_select_single_kink(&r),
            Err(SpinError::NothingRetained { shots: 1 })
        ));
    }

    #[test]
    fn projection_cases() {
        let s = SpinState::kink(6, 3).unwrap();
        let (p, leak) = single_kink_projection(&s).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(leak, 0.0);
        let ground = SpinState::basis(6, 0);
        assert_eq!(
            single_kink_projection(&ground),
            Err(SpinError::NoSingleKinkWeight)
        );
    }

    #[test]
    fn noiseless_delta_is_deterministic() {
        let s = SpinState::kink(8, 4).unwrap();
        let r = sample_x_basis(&s, 500, &NoiseModel::ideal(8, 3)).unwrap();
        assert!(r.outcomes.iter().all(|&b| b as usize == kink_index(8, 4)));
        let (p, kept) = post_select_single_kink(&r).unwrap();
        assert_eq!(kept, 1.0);
        assert_eq!(p[3], 1.0);
    }

    #[test]
    fn same_seed_same_record() {
        let s = crate::spin::prepare_kink_state(9, 4, Some(0.7), None).unwrap();
        let noise = NoiseModel::reference(9, 11);
        let a = sample_x_basis(&s, 1000, &noise).unwrap();
        let b = sample_x_basis(&s, 1000, &noise).unwrap();
        assert_eq!(a, b);
        let c = sample_x_basis(&s, 1000, &NoiseModel::reference(9, 12)).unwrap();
        assert_ne!(a.outcomes, c.outcomes);
        let mut text = Vec::new();
        a.write(&mut text).unwrap();
        assert_eq!(MeasurementRecord::read(&text[..]).unwrap(), a);
        let first = String::from_utf8(text).unwrap();
        assert!(first.starts_with("{\"ions\":9,\"shots\":1000,\"seed\":11,"));
    }

    #[test]
    fn fully_depolarized_readout_has_uniform_marginals() {
        let n = 6;
        let shots = 20_000;
        let s = SpinState::kink(n, 2).unwrap();
        let r = sample_x_basis(&s, shots, &NoiseModel::uniform_detection(n, 0.5, 5)).unwrap();
        // 5σ binomial band.
        let band = 5.0 * (0.25 / shots as f64).sqrt();
        for i in 0..n {
            let ones = r.outcomes.iter().filter(|&&b| b & (1 << i) != 0).count();
            assert!((ones as f64 / shots as f64 - 0.5).abs() < band);
        }
    }

    /// Exact probability that independent flips turn `bits` into something
    /// other than a single-wall string: dynamic programme over ions with
    /// state (last detected value, walls so far capped at 2).
    fn corruption_probability(bits: u32, eps: &[f64]) -> f64 {
        let mut table = [[0.0f64; 3]; 2];
        let b0 = (bits & 1) as usize;
        table[b0][0] = 1.0 - eps[0];
        table[1 - b0][0] = eps[0];
        for (i, &e) in eps.iter().enumerate().skip(1) {
            let bi = ((bits >> i) & 1) as usize;
            let mut next = [[0.0f64; 3]; 2];
            for (last, row) in table.iter().enumerate() {
                for (walls, &p) in row.iter().enumerate() {
                    for (value, pv) in [(bi, 1.0 - e), (1 - bi, e)] {
                        let w = (walls + (value != last) as usize).min(2);
                        next[value][w] += p * pv;
                    }
                }
            }
            table = next;
        }
        1.0 - (table[0][1] + table[1][1])
    }

    #[test]
    fn detection_corruption_matches_exact_rate() {
        let n = 20;
        let eps = detection_profile(n);
        let bits = kink_index(n, 10) as u32;
        let expected = corruption_probability(bits, &eps);
        assert!(expected > 0.3 && expected < 0.5);
        let shots = 40_000;
        let s = SpinState::kink(n, 10).unwrap();
        let noise = NoiseModel {
            detection_error: eps,
            crosstalk_left: 0.0,
            crosstalk_right: 0.0,
            seed: 99,
        };
        let r = sample_x_basis(&s, shots, &noise).unwrap();
        let bad = r.kink_counts.iter().filter(|&&k| k != 1).count() as f64 / shots as f64;
        let sigma = (expected * (1.0 - expected) / shots as f64).sqrt();
        assert!((bad - expected).abs() < 5.0 * sigma, "{bad} vs {expected}");
    }

    #[test]
    fn sampling_converges_to_projection() {
        // Chi-square against the projection probabilities at 10⁴ shots.
        let n = 7;
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
        let weights: [f64; 6] = [0.1, 0.25, 0.3, 0.15, 0.12, 0.08];
        for (k, w) in weights.iter().enumerate() {
            amps[kink_index(n, k + 1)] = Complex64::from_polar(w.sqrt(), k as f64);
        }
        let s = SpinState::from_amplitudes(n, amps).unwrap();
        let (p, _) = single_kink_projection(&s).unwrap();
        let shots = 10_000;
        let r = sample_x_basis(&s, shots, &NoiseModel::ideal(n, 21)).unwrap();
        let (f, kept) = post_select_single_kink(&r).unwrap();
        assert_eq!(kept, 1.0);
        let chi2: f64 = p
            .iter()
            .zip(&f)
            .map(|(e, o)| shots as f64 * (o - e).powi(2) / e)
            .sum();
        // 5 degrees of freedom, 99.9% quantile 20.5.
        assert!(chi2 < 20.5, "chi2 = {chi2}");
    }
}
