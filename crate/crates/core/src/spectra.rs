//! Hamiltonian spectra on an exact integer grid and the combinatorics of
//! N-copy total-energy distributions.
//!
//! Energies are exact rationals. They are rescaled by the least common multiple
//! of their denominators so that every eigenvalue of the N-copy Hamiltonian is an
//! integer multiple of [`Spectrum::grid_unit`], and coincident total energies are
//! identified exactly.

use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::logspace::{log_sum_exp, neumaier_sum};

/// Largest absolute grid energy accepted for a single level.
const MAX_LEVEL_GRID: i64 = 1 << 40;

/// Default cap on the number of grid points of an N-copy distribution.
pub const DEFAULT_SUPPORT_CAP: u64 = 100_000_000;
/// Default cap on the number of enumerated partitions.
pub const DEFAULT_PARTITION_CAP: u64 = 10_000_000;

/// Resource caps shared by everything that materialises distributions or
/// enumerates partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub support_cap: u64,
    pub partition_cap: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            support_cap: DEFAULT_SUPPORT_CAP,
            partition_cap: DEFAULT_PARTITION_CAP,
        }
    }
}

/// One energy level of the single-copy Hamiltonian together with its
/// occupation probability in the input state.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub energy: BigRational,
    pub prob: f64,
}

/// A validated spectrum: at least two levels, strictly positive
/// probabilities summing to one, ascending distinct energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpectrumFile", into = "SpectrumFile")]
pub struct Spectrum {
    levels: Vec<Level>,
    grid_unit: BigRational,
    int_energies: Vec<i64>,
}

/// Wire form: `{"levels":[{"energy":"-1/2","prob":0.25}, ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumFile {
    pub levels: Vec<RawLevel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawLevel {
    pub energy: String,
    pub prob: f64,
}

impl TryFrom<SpectrumFile> for Spectrum {
    type Error = Error;

    fn try_from(file: SpectrumFile) -> Result<Self> {
        let raw: Vec<(&str, f64)> = file
            .levels
            .iter()
            .map(|l| (l.energy.as_str(), l.prob))
            .collect();
        normalize_spectrum(&raw)
    }
}

impl From<Spectrum> for SpectrumFile {
    fn from(s: Spectrum) -> Self {
        SpectrumFile {
            levels: s
                .levels
                .iter()
                .map(|l| RawLevel {
                    energy: l.energy.to_string(),
                    prob: l.prob,
                })
                .collect(),
        }
    }
}

/// Parses an exact rational: `"3"`, `"-1/2"`, `"0.25"` or `"1.5e-1"`.
pub fn parse_rational(text: &str) -> Result<BigRational> {
    let t = text.trim();
    if t.is_empty() {
        return Err(Error::Parse("empty energy string".into()));
    }
    let bad = || Error::Parse(format!("not an exact rational: {text:?}"));
    if t.contains('/') {
        let (num, den) = t.split_once('/').ok_or_else(bad)?;
        let num = BigInt::from_str(num.trim()).map_err(|_| bad())?;
        let den = BigInt::from_str(den.trim()).map_err(|_| bad())?;
        if den.is_zero() {
            return Err(Error::Parse(format!("zero denominator in {text:?}")));
        }
        return Ok(BigRational::new(num, den));
    }
    if !t.contains(['.', 'e', 'E']) {
        return BigInt::from_str(t)
            .map(BigRational::from_integer)
            .map_err(|_| bad());
    }

    let (mantissa, exponent) = match t.find(['e', 'E']) {
        Some(i) => {
            let exp: i32 = t[i + 1..].parse().map_err(|_| bad())?;
            (&t[..i], exp)
        }
        None => (t, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    if exponent.unsigned_abs() > 400 {
        return Err(bad());
    }
    let all_digits = format!("{int_part}{frac_part}");
    let mut num = BigInt::from_str(if all_digits.is_empty() { "0" } else { &all_digits })
        .map_err(|_| bad())?;
    if negative {
        num = -num;
    }
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10u8);
    let value = if scale >= 0 {
        BigRational::from_integer(num * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(num, num_traits::pow(ten, (-scale) as usize))
    };
    Ok(value)
}

/// Builds a [`Spectrum`] from raw `(energy, probability)` pairs.
///
/// Zero-probability levels are dropped, equal energies are merged and the
/// probabilities are renormalised.
pub fn normalize_spectrum(raw_levels: &[(&str, f64)]) -> Result<Spectrum> {
    let mut parsed: Vec<(BigRational, f64)> = Vec::with_capacity(raw_levels.len());
    for (energy, prob) in raw_levels {
        if !prob.is_finite() {
            return Err(Error::Validation(format!(
                "probability for energy {energy} is not finite"
            )));
        }
        if *prob < 0.0 {
            return Err(Error::Validation(format!(
                "negative probability {prob} for energy {energy}"
            )));
        }
        parsed.push((parse_rational(energy)?, *prob));
    }

    let total = neumaier_sum(parsed.iter().map(|(_, p)| *p));
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "probabilities sum to {total}, expected 1 within 1e-9"
        )));
    }

    parsed.retain(|(_, p)| *p > 0.0);
    parsed.sort_by(|a, b| a.0.cmp(&b.0));
    let mut merged: Vec<(BigRational, Vec<f64>)> = Vec::new();
    for (e, p) in parsed {
        match merged.last_mut() {
            Some((last, ps)) if *last == e => ps.push(p),
            _ => merged.push((e, vec![p])),
        }
    }
    if merged.len() < 2 {
        return Err(Error::DegenerateSpectrum(format!(
            "{} level(s) with positive probability; at least 2 are required",
            merged.len()
        )));
    }

    let probs: Vec<f64> = merged.iter().map(|(_, ps)| neumaier_sum(ps.iter().copied())).collect();
    // Already-normalized input is kept bit for bit so serialization round-trips.
    let norm = match neumaier_sum(probs.iter().copied()) {
        t if (t - 1.0).abs() <= 4.0 * f64::EPSILON => 1.0,
        t => t,
    };

    let lcm = merged
        .iter()
        .fold(BigInt::one(), |acc, (e, _)| acc.lcm(e.denom()));
    let grid_unit = BigRational::new(BigInt::one(), lcm.clone());
    let mut int_energies = Vec::with_capacity(merged.len());
    for (e, _) in &merged {
        let scaled = e * BigRational::from_integer(lcm.clone());
        debug_assert!(scaled.is_integer());
        let v = scaled
            .to_integer()
            .to_i64()
            .filter(|v| v.abs() <= MAX_LEVEL_GRID)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "energy {e} needs a grid index beyond ±2^40 (grid unit 1/{lcm})"
                ))
            })?;
        int_energies.push(v);
    }

    let levels = merged
        .into_iter()
        .zip(probs)
        .map(|((energy, _), p)| Level {
            energy,
            prob: p / norm,
        })
        .collect();

    Ok(Spectrum {
        levels,
        grid_unit,
        int_energies,
    })
}

impl Spectrum {
    /// Parses the JSON wire form and validates it.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: SpectrumFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Spectrum::try_from(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&SpectrumFile::from(self.clone())).expect("spectrum serializes")
    }

    /// Two levels `{0, 1}` with equal weights.
    pub fn equatorial_qubit() -> Self {
        normalize_spectrum(&[("0", 0.5), ("1", 0.5)]).expect("valid qubit spectrum")
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    /// Number of distinct levels (K).
    pub fn k(&self) -> usize {
        self.levels.len()
    }

    pub fn grid_unit(&self) -> &BigRational {
        &self.grid_unit
    }

    pub fn grid_unit_f64(&self) -> f64 {
        rational_to_f64(&self.grid_unit)
    }

    /// Level energies in grid units.
    pub fn int_energies(&self) -> &[i64] {
        &self.int_energies
    }

    pub fn probs(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.prob).collect()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.prob.ln()).collect()
    }

    /// Level energies in physical units.
    pub fn energies_f64(&self) -> Vec<f64> {
        self.levels.iter().map(|l| rational_to_f64(&l.energy)).collect()
    }

    pub fn p_min(&self) -> f64 {
        self.levels.iter().map(|l| l.prob).fold(f64::INFINITY, f64::min)
    }

    pub fn e_min(&self) -> f64 {
        rational_to_f64(&self.levels[0].energy)
    }

    pub fn e_max(&self) -> f64 {
        rational_to_f64(&self.levels[self.k() - 1].energy)
    }

    /// `max_E |E|` on the uncentred spectrum.
    pub fn norm_inf(&self) -> f64 {
        self.e_min().abs().max(self.e_max().abs())
    }

    /// Width of the spectrum in grid units.
    pub fn grid_span(&self) -> i64 {
        self.int_energies[self.k() - 1] - self.int_energies[0]
    }

    /// `<ψ|H|ψ>` in grid units.
    pub fn mean_grid(&self) -> f64 {
        neumaier_sum(
            self.levels
                .iter()
                .zip(&self.int_energies)
                .map(|(l, &e)| l.prob * e as f64),
        )
    }

    /// `<ψ|H|ψ>` in physical units.
    pub fn mean_energy(&self) -> f64 {
        self.mean_grid() * self.grid_unit_f64()
    }

    /// `max_E |E - <H>|` in grid units, i.e. the operator norm of the centred
    /// Hamiltonian.
    pub fn centered_norm_inf_grid(&self) -> f64 {
        let mean = self.mean_grid();
        self.int_energies
            .iter()
            .map(|&e| (e as f64 - mean).abs())
            .fold(0.0, f64::max)
    }

    pub fn centered_norm_inf(&self) -> f64 {
        self.centered_norm_inf_grid() * self.grid_unit_f64()
    }

    /// Index of the level with maximum centred modulus; ties go to the
    /// higher energy.
    pub fn extreme_level(&self) -> usize {
        let mean = self.mean_grid();
        let scale = self.centered_norm_inf_grid().max(1.0);
        let mut best = 0;
        let mut best_dev = f64::NEG_INFINITY;
        for (i, &e) in self.int_energies.iter().enumerate() {
            let dev = (e as f64 - mean).abs();
            if dev >= best_dev - 1e-12 * scale {
                best = i;
                best_dev = best_dev.max(dev);
            }
        }
        best
    }

    /// Grid energy of a partition, `Σ n_E · E`.
    pub fn partition_energy(&self, n: &Partition) -> i64 {
        n.counts
            .iter()
            .zip(&self.int_energies)
            .map(|(&c, &e)| c as i64 * e)
            .sum()
    }
}

pub(crate) fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Total-energy law `p_{N,E}` of N copies, stored as log-probabilities on the
/// contiguous integer grid `offset ..= offset + len - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyDistribution {
    n_copies: u64,
    offset: i64,
    log_weights: Vec<f64>,
    support_size: usize,
}

impl EnergyDistribution {
    fn from_parts(n_copies: u64, offset: i64, log_weights: Vec<f64>) -> Self {
        let support_size = log_weights.iter().filter(|w| w.is_finite()).count();
        Self {
            n_copies,
            offset,
            log_weights,
            support_size,
        }
    }

    pub fn n_copies(&self) -> u64 {
        self.n_copies
    }

    /// Lowest grid energy of the distribution's grid range.
    pub fn offset(&self) -> i64 {
        self.offset
    }

    pub fn max_energy(&self) -> i64 {
        self.offset + self.log_weights.len() as i64 - 1
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Number of grid energies carrying positive probability.
    pub fn support_size(&self) -> usize {
        self.support_size
    }

    pub fn grid_len(&self) -> usize {
        self.log_weights.len()
    }

    /// `ln p_{N,E}`; `-inf` outside the support.
    pub fn log_prob(&self, energy: i64) -> f64 {
        let idx = energy - self.offset;
        if idx < 0 || idx as usize >= self.log_weights.len() {
            f64::NEG_INFINITY
        } else {
            self.log_weights[idx as usize]
        }
    }

    pub fn prob(&self, energy: i64) -> f64 {
        self.log_prob(energy).exp()
    }

    /// `(energy, ln p)` over the support, ascending in energy.
    pub fn support(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.log_weights
            .iter()
            .enumerate()
            .filter(|(_, w)| w.is_finite())
            .map(move |(i, &w)| (self.offset + i as i64, w))
    }

    /// `ln Σ_E p_{N,E}`, zero up to rounding.
    pub fn total_log_mass(&self) -> f64 {
        log_sum_exp(&self.log_weights)
    }
}

fn check_support(s: &Spectrum, n_copies: u64, cap: u64) -> Result<usize> {
    let len = n_copies as u128 * s.grid_span() as u128 + 1;
    if len > cap as u128 {
        return Err(Error::Resource {
            what: "energy grid points",
            required: len,
            cap,
        });
    }
    Ok(len as usize)
}

/// `p_{N,·}` with the default support cap.
pub fn n_copy_distribution(s: &Spectrum, n_copies: u64) -> Result<EnergyDistribution> {
    n_copy_distribution_with_cap(s, n_copies, DEFAULT_SUPPORT_CAP)
}

/// `p_{N,·}` for `N = n_copies`.
///
/// Two-level spectra use the closed-form binomial law; everything else goes
/// through [`n_copy_distribution_by_convolution`].
pub fn n_copy_distribution_with_cap(
    s: &Spectrum,
    n_copies: u64,
    support_cap: u64,
) -> Result<EnergyDistribution> {
    if n_copies == 0 {
        return Err(Error::Domain("number of copies must be at least 1".into()));
    }
    let len = check_support(s, n_copies, support_cap)?;
    if s.k() != 2 {
        return n_copy_distribution_by_convolution(s, n_copies, support_cap);
    }

    let e = s.int_energies();
    let lp = s.log_probs();
    let step = (e[1] - e[0]) as usize;
    let ln_n_fact = ln_factorial(n_copies);
    let mut log_weights = vec![f64::NEG_INFINITY; len];
    for k in 0..=n_copies {
        let lw = ln_n_fact - ln_factorial(k) - ln_factorial(n_copies - k)
            + k as f64 * lp[1]
            + (n_copies - k) as f64 * lp[0];
        log_weights[k as usize * step] = lw;
    }
    Ok(EnergyDistribution::from_parts(
        n_copies,
        n_copies as i64 * e[0],
        log_weights,
    ))
}

/// `p_{N,·}` by iterated single-copy convolution in log space. Cost is
/// `O(N² · span · K)`; this is the general path and the reference the
/// closed form is checked against.
pub fn n_copy_distribution_by_convolution(
    s: &Spectrum,
    n_copies: u64,
    support_cap: u64,
) -> Result<EnergyDistribution> {
    if n_copies == 0 {
        return Err(Error::Domain("number of copies must be at least 1".into()));
    }
    let len = check_support(s, n_copies, support_cap)?;
    let base = s.int_energies()[0];
    let shifts: Vec<usize> = s.int_energies().iter().map(|&e| (e - base) as usize).collect();
    let lp = s.log_probs();
    let span = s.grid_span() as usize;

    let mut cur = vec![f64::NEG_INFINITY; len];
    let mut next = vec![f64::NEG_INFINITY; len];
    cur[0] = 0.0;
    let mut terms = Vec::with_capacity(shifts.len());
    for step in 1..=n_copies as usize {
        let new_len = step * span + 1;
        let old_len = (step - 1) * span + 1;
        for (j, slot) in next.iter_mut().enumerate().take(new_len) {
            terms.clear();
            for (&sh, &l) in shifts.iter().zip(&lp) {
                if j >= sh && j - sh < old_len {
                    let w = cur[j - sh];
                    if w > f64::NEG_INFINITY {
                        terms.push(w + l);
                    }
                }
            }
            *slot = log_sum_exp(&terms);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(EnergyDistribution::from_parts(
        n_copies,
        n_copies as i64 * base,
        cur,
    ))
}

/// A composition of N into K non-negative parts: occupation numbers of the
/// single-copy levels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Partition {
    counts: Vec<u64>,
}

impl Partition {
    pub fn new(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

impl From<Vec<u64>> for Partition {
    fn from(counts: Vec<u64>) -> Self {
        Self { counts }
    }
}

/// `C(n + k - 1, k - 1)`, saturating at `u128::MAX`.
pub fn partition_count(n: u64, k: usize) -> u128 {
    if k == 0 {
        return u128::from(n == 0);
    }
    let top = n as u128 + k as u128 - 1;
    let r = (k as u128 - 1).min(n as u128);
    let mut acc: u128 = 1;
    for i in 0..r {
        // acc * (top - i) / (i + 1) stays integral at every step
        match acc.checked_mul(top - i) {
            Some(v) => acc = v / (i + 1),
            None => return u128::MAX,
        }
    }
    acc
}

pub fn enumerate_partitions(n: u64, k: usize) -> Result<Vec<Partition>> {
    enumerate_partitions_with_cap(n, k, DEFAULT_PARTITION_CAP)
}

/// All partitions of `n` into `k` parts in lexicographic order.
pub fn enumerate_partitions_with_cap(n: u64, k: usize, cap: u64) -> Result<Vec<Partition>> {
    if k == 0 {
        return Err(Error::Domain("number of parts must be at least 1".into()));
    }
    let count = partition_count(n, k);
    if count > cap as u128 {
        return Err(Error::Resource {
            what: "partitions",
            required: count,
            cap,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut buf = vec![0u64; k];
    fill_partitions(n, 0, &mut buf, &mut out);
    Ok(out)
}

fn fill_partitions(remaining: u64, pos: usize, buf: &mut [u64], out: &mut Vec<Partition>) {
    if pos + 1 == buf.len() {
        buf[pos] = remaining;
        out.push(Partition::new(buf.to_vec()));
        return;
    }
    for first in 0..=remaining {
        buf[pos] = first;
        fill_partitions(remaining - first, pos + 1, buf, out);
    }
}

/// `ln q_N(n) = ln N! + Σ_E (n_E ln p_E - ln n_E!)` for raw counts.
pub(crate) fn log_multinomial(log_probs: &[f64], counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let mut acc = ln_factorial(total);
    for (&c, &lp) in counts.iter().zip(log_probs) {
        if c > 0 {
            acc += c as f64 * lp - ln_factorial(c);
        }
    }
    acc
}

/// Log of the multinomial weight `q_N(n) = N! Π p_E^{n_E} / n_E!`.
pub fn multinomial_weight(s: &Spectrum, n: &Partition) -> Result<f64> {
    if n.len() != s.k() {
        return Err(Error::Domain(format!(
            "partition has {} parts but the spectrum has {} levels",
            n.len(),
            s.k()
        )));
    }
    Ok(log_multinomial(&s.log_probs(), n.counts()))
}

/// Partitions `n0` of N and `m0` of M whose frequencies track the level
/// probabilities, and the grid shift `E(m0) - E(n0)` between them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorPair {
    pub n0: Partition,
    pub m0: Partition,
    pub delta_e0: i64,
}

/// Largest-remainder rounding of `total · p`: floors first, the residual goes
/// to levels by decreasing fractional part, ties to the lower energy.
pub fn largest_remainder(total: u64, probs: &[f64]) -> Vec<u64> {
    let exact: Vec<f64> = probs.iter().map(|p| total as f64 * p).collect();
    let mut counts: Vec<u64> = exact.iter().map(|x| x.floor().max(0.0) as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let frac: Vec<f64> = exact.iter().zip(&counts).map(|(x, &c)| x - c as f64).collect();

    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        if (frac[a] - frac[b]).abs() <= 1e-12 {
            a.cmp(&b)
        } else {
            frac[b].total_cmp(&frac[a])
        }
    });

    if assigned <= total {
        let residual = (total - assigned) as usize;
        for &i in order.iter().cycle().take(residual) {
            counts[i] += 1;
        }
    } else {
        // floors overshot through rounding; take back from the smallest fractions
        let mut excess = assigned - total;
        for &i in order.iter().rev() {
            if excess == 0 {
                break;
            }
            if counts[i] > 0 {
                counts[i] -= 1;
                excess -= 1;
            }
        }
    }
    counts
}

/// Anchor partitions and the spectrum shift for `N → M` replication.
pub fn anchor_shift(s: &Spectrum, n_copies: u64, m_copies: u64) -> Result<AnchorPair> {
    if n_copies == 0 || m_copies < n_copies {
        return Err(Error::Domain(format!(
            "anchor shift needs 1 <= N <= M, got N={n_copies}, M={m_copies}"
        )));
    }
    let probs = s.probs();
    let n0 = Partition::new(largest_remainder(n_copies, &probs));
    let m0 = Partition::new(largest_remainder(m_copies, &probs));
    let delta_e0 = s.partition_energy(&m0) - s.partition_energy(&n0);
    Ok(AnchorPair { n0, m0, delta_e0 })
}
