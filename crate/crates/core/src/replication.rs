//! Fidelities and bounds for `N → M` replication of clock states.
//!
//! Every process here is a diagonal filter followed by the shift isometry
//! `|N,E⟩ ↦ |M,E+δ⟩`. Its worst-case fidelity does not depend on `t` and reads
//!
//! ```text
//! F = (Σ_E π_E sqrt(p_{N,E} p_{M,E+δ}))² / Σ_E π_E² p_{N,E}
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{log_success_probability, Filter, FilterKind};
use crate::logspace::{log_sum_exp, neumaier_sum};
use crate::spectra::{
    anchor_shift, n_copy_distribution_with_cap, AnchorPair, EnergyDistribution, Limits, Spectrum,
};

/// Everything needed to evaluate `N → M` replication for one spectrum:
/// both total-energy laws and the anchor shift.
#[derive(Debug, Clone)]
pub struct ReplicationInstance {
    pub spectrum: Spectrum,
    pub n: u64,
    pub m: u64,
    pub p_n: EnergyDistribution,
    pub p_m: EnergyDistribution,
    pub anchor: AnchorPair,
    pub limits: Limits,
}

impl ReplicationInstance {
    pub fn new(s: &Spectrum, n: u64, m: u64, limits: Limits) -> Result<Self> {
        let anchor = anchor_shift(s, n, m)?;
        let p_n = n_copy_distribution_with_cap(s, n, limits.support_cap)?;
        let p_m = if m == n {
            p_n.clone()
        } else {
            n_copy_distribution_with_cap(s, m, limits.support_cap)?
        };
        Ok(Self {
            spectrum: s.clone(),
            n,
            m,
            p_n,
            p_m,
            anchor,
            limits,
        })
    }

    /// `ln Σ_E sqrt(p_{N,E} p_{M,E+shift})`, the log Bhattacharyya overlap of
    /// `p_N` and `p_M` translated by `shift`.
    fn log_overlap(&self, shift: i64) -> f64 {
        let terms: Vec<f64> = self
            .p_n
            .support()
            .map(|(e, lpn)| 0.5 * (lpn + self.p_m.log_prob(e + shift)))
            .collect();
        log_sum_exp(&terms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub n: u64,
    pub m: u64,
    pub fidelity: f64,
    pub p_yes: f64,
    pub filter_kind: FilterKind,
    pub delta_e0: i64,
    /// `ln p_yes`, exact even when `p_yes` itself underflows.
    pub log_p_yes: f64,
}

impl ReplicationResult {
    pub fn infidelity(&self) -> f64 {
        1.0 - self.fidelity
    }
}

/// Worst-case fidelity of `flt` followed by the anchor shift.
pub fn exact_fidelity(s: &Spectrum, n: u64, m: u64, flt: &Filter) -> Result<ReplicationResult> {
    let inst = ReplicationInstance::new(s, n, m, Limits::default())?;
    exact_fidelity_in(&inst, flt)
}

pub fn exact_fidelity_in(inst: &ReplicationInstance, flt: &Filter) -> Result<ReplicationResult> {
    flt.check_compatible(&inst.spectrum, inst.n)?;
    if let Some(m) = flt.m_copies() {
        if m != inst.m {
            return Err(Error::Domain(format!(
                "filter was built for M={m}, evaluated at M={}",
                inst.m
            )));
        }
    }
    let delta = inst.anchor.delta_e0;
    let amp_terms: Vec<f64> = flt
        .coeffs()
        .iter()
        .map(|c| c.log_pi + 0.5 * (inst.p_n.log_prob(c.energy) + inst.p_m.log_prob(c.energy + delta)))
        .collect();
    let log_amp = log_sum_exp(&amp_terms);
    let log_p_yes = log_success_probability(flt, &inst.p_n);
    if log_p_yes == f64::NEG_INFINITY {
        return Err(Error::Numeric("filter annihilates the input state".into()));
    }
    let fidelity = (2.0 * log_amp - log_p_yes).exp().clamp(0.0, 1.0);
    Ok(ReplicationResult {
        n: inst.n,
        m: inst.m,
        fidelity,
        p_yes: log_p_yes.exp().min(1.0),
        filter_kind: flt.kind(),
        delta_e0: delta,
        log_p_yes: log_p_yes.min(0.0),
    })
}

/// Best shift-channel fidelity without filtering. The shift is scanned over
/// `δE0 ± W`, `W` the grid width of `p_{N,·}`; the reported `delta_e0` is
/// the maximiser (lowest one on ties).
pub fn deterministic_fidelity(s: &Spectrum, n: u64, m: u64) -> Result<ReplicationResult> {
    let inst = ReplicationInstance::new(s, n, m, Limits::default())?;
    Ok(deterministic_fidelity_in(&inst))
}

pub fn deterministic_fidelity_in(inst: &ReplicationInstance) -> ReplicationResult {
    let width = inst.p_n.max_energy() - inst.p_n.offset();
    let centre = inst.anchor.delta_e0;
    let mut best = (f64::NEG_INFINITY, centre);
    for shift in centre - width..=centre + width {
        let lo = inst.log_overlap(shift);
        if lo > best.0 {
            best = (lo, shift);
        }
    }
    ReplicationResult {
        n: inst.n,
        m: inst.m,
        fidelity: (2.0 * best.0).exp().clamp(0.0, 1.0),
        p_yes: 1.0,
        filter_kind: FilterKind::Identity,
        delta_e0: best.1,
        log_p_yes: 0.0,
    }
}

/// Hoeffding lower bound on the super-filter fidelity,
/// `1 - 2K exp(-2 N² p_min² / M + 4N / (K M))`, clamped at 0.
/// Valid only for `N >= 1 / p_min`.
pub fn fidelity_lower_bound(s: &Spectrum, n: u64, m: u64) -> Result<f64> {
    let p_min = s.p_min();
    if (n as f64) * p_min < 1.0 - 1e-12 {
        return Err(Error::Domain(format!(
            "lower bound requires N >= 1/p_min = {:.6}, got N = {n}",
            1.0 / p_min
        )));
    }
    if m < n {
        return Err(Error::Domain(format!("need M >= N, got N={n}, M={m}")));
    }
    let k = s.k() as f64;
    let (n, m) = (n as f64, m as f64);
    let exponent = -2.0 * n * n * p_min * p_min / m + 4.0 * n / (k * m);
    Ok((1.0 - 2.0 * k * exponent.exp()).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lower: f64,
    pub exact: Option<f64>,
    pub upper: f64,
    /// Energy cut in physical units, measured from the centred spectrum.
    pub e_delta: f64,
    pub p_yes_used: f64,
    /// `max_μ Σ_{|E| <= E_δ} p_{M,E+μ}`.
    pub first_term: f64,
    /// `(N+1)^K max_{|E| > E_δ} p_{N,E} / p_yes`, before clamping.
    pub second_term: f64,
}

/// Largest admissible energy cut, `N ‖H - <H>‖∞`.
pub fn max_e_delta(s: &Spectrum, n: u64) -> f64 {
    n as f64 * s.centered_norm_inf()
}

/// Upper bound on the fidelity of any covariant process whose filter
/// succeeds with probability `p_yes`:
///
/// ```text
/// [ sqrt(max_μ Σ_{|E|<=E_δ} p_{M,E+μ}) + sqrt((N+1)^K max_{|E|>E_δ} p_{N,E} / p_yes) ]²
/// ```
///
/// Energies are centred on `N<H>`; `e_delta` is in physical units.
pub fn lemma1_upper_bound(
    s: &Spectrum,
    n: u64,
    m: u64,
    p_yes: f64,
    e_delta: f64,
) -> Result<BoundReport> {
    let inst = ReplicationInstance::new(s, n, m, Limits::default())?;
    lemma1_upper_bound_in(&inst, p_yes, e_delta)
}

pub fn lemma1_upper_bound_in(
    inst: &ReplicationInstance,
    p_yes: f64,
    e_delta: f64,
) -> Result<BoundReport> {
    let s = &inst.spectrum;
    if !(p_yes > 0.0 && p_yes <= 1.0 + 1e-12) {
        return Err(Error::Domain(format!("p_yes must lie in (0, 1], got {p_yes}")));
    }
    let e_max = max_e_delta(s, inst.n);
    let tol = 1e-9 * e_max.max(1.0);
    if !(e_delta >= 0.0 && e_delta <= e_max + tol) {
        return Err(Error::Domain(format!(
            "E_delta must lie in [0, {e_max}], got {e_delta}"
        )));
    }

    let unit = s.grid_unit_f64();
    let centre = inst.n as f64 * s.mean_grid();
    let mut inner = Vec::new();
    let mut outer_max = f64::NEG_INFINITY;
    for (e, lpn) in inst.p_n.support() {
        if ((e as f64 - centre) * unit).abs() <= e_delta + tol {
            inner.push(e);
        } else {
            outer_max = outer_max.max(lpn);
        }
    }

    let first_term = if inner.is_empty() {
        0.0
    } else {
        max_window_mass(&inner, &inst.p_m)
    };
    let log_second = if outer_max == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        outer_max - p_yes.ln() + s.k() as f64 * (inst.n as f64 + 1.0).ln()
    };
    let second_term = log_second.exp();
    let upper = if log_second >= 0.0 {
        1.0
    } else {
        (first_term.sqrt() + (0.5 * log_second).exp()).powi(2).min(1.0)
    };
    let lower = fidelity_lower_bound(s, inst.n, inst.m).unwrap_or(0.0);
    Ok(BoundReport {
        lower,
        exact: None,
        upper,
        e_delta,
        p_yes_used: p_yes,
        first_term,
        second_term,
    })
}

/// `max_μ Σ_{e ∈ set} p_M(e + μ)` over every shift whose translate meets the
/// grid range of `p_M`.
fn max_window_mass(set: &[i64], p_m: &EnergyDistribution) -> f64 {
    let lin: Vec<f64> = p_m.log_weights().iter().map(|w| w.exp()).collect();
    let off = p_m.offset();
    let len = lin.len() as i64;
    let lo_set = set[0];
    let hi_set = set[set.len() - 1];
    let mut best = 0.0_f64;
    for mu in (off - hi_set)..=(p_m.max_energy() - lo_set) {
        let mass = neumaier_sum(set.iter().filter_map(|&e| {
            let idx = e + mu - off;
            (0..len).contains(&idx).then(|| lin[idx as usize])
        }));
        best = best.max(mass);
    }
    best.min(1.0)
}

/// Super-filter fidelity sandwiched between the Hoeffding and energy-cut
/// bounds at cut `e_delta`.
pub fn super_bound_report(inst: &ReplicationInstance, e_delta: f64) -> Result<BoundReport> {
    let flt = crate::filters::super_filter_for(inst)?;
    let exact = exact_fidelity_in(inst, &flt)?;
    let mut report = lemma1_upper_bound_in(inst, exact.p_yes, e_delta)?;
    report.exact = Some(exact.fidelity);
    Ok(report)
}

/// Hoeffding lower bound for the windowed filter,
/// `1 - 2K exp(-2 ξ f + 4 sqrt(ξ f / M))`, clamped at 0.
pub fn windowed_fidelity_bound(s: &Spectrum, m: u64, f_value: f64, xi: f64) -> Result<f64> {
    if !(f_value > 0.0) || !(xi > 0.0) || m == 0 {
        return Err(Error::Domain(format!(
            "need f > 0, xi > 0, M >= 1; got f={f_value}, xi={xi}, M={m}"
        )));
    }
    let k = s.k() as f64;
    let xf = xi * f_value;
    if xf.is_infinite() {
        return Ok(1.0);
    }
    let exponent = -2.0 * xf + 4.0 * (xf / m as f64).sqrt();
    Ok((1.0 - 2.0 * k * exponent.exp()).max(0.0))
}

/// Asymptotic decay constant of the super filter's success probability,
/// `ln(1 / p_{E*})` with `E*` the level of largest centred modulus.
pub fn pyes_decay_rate(s: &Spectrum) -> f64 {
    -s.levels()[s.extreme_level()].prob.ln()
}
