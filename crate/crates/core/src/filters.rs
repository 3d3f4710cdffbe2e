//! Diagonal probabilistic filters over `Spec(H^(N))`.
//!
//! A filter is the "yes" branch `M_yes = Σ_E π_E |N,E⟩⟨N,E|` of a two-outcome
//! measurement. Coefficients are kept as `ln π_E` so that filters built for
//! hundreds of copies (where `π_E` spans hundreds of orders of magnitude)
//! remain exact to double precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::{log_sum_exp, log_sum_exp_iter};
use crate::replication::ReplicationInstance;
use crate::spectra::{
    enumerate_partitions_with_cap, log_multinomial, EnergyDistribution, Limits, Spectrum,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Super,
    Windowed,
    Identity,
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FilterKind::Super => "super",
            FilterKind::Windowed => "windowed",
            FilterKind::Identity => "identity",
        })
    }
}

/// Truncation of a windowed filter: partitions with every
/// `|n_E - n0_E| <= radius` pass, where `radius = sqrt(xi · M · f_value)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub xi: Option<f64>,
    pub f_value: Option<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterCoeff {
    pub energy: i64,
    pub log_pi: f64,
}

impl FilterCoeff {
    pub fn pi(&self) -> f64 {
        self.log_pi.exp()
    }
}

#[derive(Serialize, Deserialize)]
struct CoeffWire {
    energy: i64,
    pi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    log_pi: Option<f64>,
}

impl From<&FilterCoeff> for CoeffWire {
    fn from(c: &FilterCoeff) -> Self {
        CoeffWire {
            energy: c.energy,
            pi: c.pi(),
            log_pi: c.log_pi.is_finite().then_some(c.log_pi),
        }
    }
}

impl From<CoeffWire> for FilterCoeff {
    fn from(w: CoeffWire) -> Self {
        let log_pi = match w.log_pi {
            Some(l) => l,
            None if w.pi > 0.0 => w.pi.ln(),
            None => f64::NEG_INFINITY,
        };
        FilterCoeff {
            energy: w.energy,
            log_pi,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct FilterWire {
    kind: FilterKind,
    gamma_log: f64,
    coeffs: Vec<CoeffWire>,
    n_copies: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m_copies: Option<u64>,
    delta_e0: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    window: Option<Window>,
    level_grid: Vec<i64>,
    grid_unit: String,
}

/// A diagonal filter built for a specific spectrum and copy number.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    kind: FilterKind,
    n_copies: u64,
    m_copies: Option<u64>,
    gamma_log: f64,
    delta_e0: i64,
    window: Option<Window>,
    coeffs: Vec<FilterCoeff>,
    level_grid: Vec<i64>,
    grid_unit: String,
}

impl Filter {
    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn n_copies(&self) -> u64 {
        self.n_copies
    }

    /// Output copy number the filter was tailored to, if any.
    pub fn m_copies(&self) -> Option<u64> {
        self.m_copies
    }

    pub fn gamma_log(&self) -> f64 {
        self.gamma_log
    }

    pub fn gamma(&self) -> f64 {
        self.gamma_log.exp()
    }

    pub fn delta_e0(&self) -> i64 {
        self.delta_e0
    }

    pub fn window(&self) -> Option<&Window> {
        self.window.as_ref()
    }

    /// Coefficients over the support of `p_{N,·}`, ascending in energy.
    pub fn coeffs(&self) -> &[FilterCoeff] {
        &self.coeffs
    }

    /// `ln π_E`; `-inf` for energies outside the filter's support.
    pub fn log_pi(&self, energy: i64) -> f64 {
        self.coeffs
            .binary_search_by_key(&energy, |c| c.energy)
            .map(|i| self.coeffs[i].log_pi)
            .unwrap_or(f64::NEG_INFINITY)
    }

    pub fn pi(&self, energy: i64) -> f64 {
        self.log_pi(energy).exp()
    }

    pub fn max_pi(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|c| c.log_pi)
            .fold(f64::NEG_INFINITY, f64::max)
            .exp()
    }

    /// Fails unless the filter was built for `s` with `n_copies` inputs.
    pub fn check_compatible(&self, s: &Spectrum, n_copies: u64) -> Result<()> {
        if self.n_copies != n_copies
            || self.level_grid != s.int_energies()
            || self.grid_unit != s.grid_unit().to_string()
        {
            return Err(Error::Domain(format!(
                "filter was built for N={} on levels {:?} (unit {}), not N={} on levels {:?} (unit {})",
                self.n_copies,
                self.level_grid,
                self.grid_unit,
                n_copies,
                s.int_energies(),
                s.grid_unit()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_wire()).expect("filter serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: FilterWire =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut coeffs: Vec<FilterCoeff> = wire.coeffs.into_iter().map(Into::into).collect();
        coeffs.sort_by_key(|c| c.energy);
        if coeffs.iter().any(|c| c.log_pi > 1e-12 || c.log_pi.is_nan()) {
            return Err(Error::Validation("filter coefficients must lie in [0, 1]".into()));
        }
        Ok(Filter {
            kind: wire.kind,
            n_copies: wire.n_copies,
            m_copies: wire.m_copies,
            gamma_log: wire.gamma_log,
            delta_e0: wire.delta_e0,
            window: wire.window,
            coeffs,
            level_grid: wire.level_grid,
            grid_unit: wire.grid_unit,
        })
    }

    fn to_wire(&self) -> FilterWire {
        FilterWire {
            kind: self.kind,
            gamma_log: self.gamma_log,
            coeffs: self.coeffs.iter().map(CoeffWire::from).collect(),
            n_copies: self.n_copies,
            m_copies: self.m_copies,
            delta_e0: self.delta_e0,
            window: self.window,
            level_grid: self.level_grid.clone(),
            grid_unit: self.grid_unit.clone(),
        }
    }
}

impl Serialize for Filter {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_wire().serialize(serializer)
    }
}

/// The super-replication filter `π_E = γ sqrt(p_{M,E+δE0} / p_{N,E})` with the
/// largest `γ` keeping every `π_E <= 1`.
pub fn build_super_filter(s: &Spectrum, n_copies: u64, m_copies: u64) -> Result<Filter> {
    let inst = ReplicationInstance::new(s, n_copies, m_copies, Limits::default())?;
    super_filter_for(&inst)
}

pub fn super_filter_for(inst: &ReplicationInstance) -> Result<Filter> {
    let delta = inst.anchor.delta_e0;
    let mut half_log_ratio = Vec::with_capacity(inst.p_n.support_size());
    for (e, lpn) in inst.p_n.support() {
        let lpm = inst.p_m.log_prob(e + delta);
        if lpm == f64::NEG_INFINITY {
            return Err(Error::Construction(format!(
                "shift misalignment: p_M vanishes at E + δE0 = {} (E = {e}, δE0 = {delta})",
                e + delta
            )));
        }
        half_log_ratio.push((e, 0.5 * (lpm - lpn)));
    }
    // ln γ = min_E ½ ln(p_N / p_M)
    let gamma_log = half_log_ratio
        .iter()
        .map(|&(_, r)| -r)
        .fold(f64::INFINITY, f64::min);
    let coeffs = half_log_ratio
        .into_iter()
        .map(|(energy, r)| FilterCoeff {
            energy,
            log_pi: (gamma_log + r).min(0.0),
        })
        .collect();
    Ok(Filter {
        kind: FilterKind::Super,
        n_copies: inst.n,
        m_copies: Some(inst.m),
        gamma_log,
        delta_e0: delta,
        window: None,
        coeffs,
        level_grid: inst.spectrum.int_energies().to_vec(),
        grid_unit: inst.spectrum.grid_unit().to_string(),
    })
}

/// Default window growth function `f(N) = ln(N + 1)`.
pub fn default_window_f(n_copies: u64) -> f64 {
    (n_copies as f64 + 1.0).ln()
}

/// Window constant `ξ = 2 p_min / (K (c₂ - 1))` tuned for `M <= c₂ N`.
pub fn linear_rate_xi(s: &Spectrum, c2: f64) -> f64 {
    2.0 * s.p_min() / (s.k() as f64 * (c2 - 1.0))
}

/// Filter restricted to partitions near the anchor `n0`.
///
/// Each in-window partition `n` gets `π_n = γ sqrt(q_M(n - n0 + m0) / q_N(n))`
/// with `γ` the largest value keeping all `π_n <= 1`. Partitions sharing a
/// grid energy are merged into one diagonal coefficient carrying the summed
/// weights, which leaves `p_yes` unchanged and coincides with the
/// partition-level filter whenever energies label partitions uniquely (K = 2).
pub fn build_windowed_filter(
    s: &Spectrum,
    n_copies: u64,
    m_copies: u64,
    f_value: f64,
    xi: f64,
) -> Result<Filter> {
    let inst = ReplicationInstance::new(s, n_copies, m_copies, Limits::default())?;
    windowed_filter_for(&inst, f_value, xi)
}

pub fn windowed_filter_for(inst: &ReplicationInstance, f_value: f64, xi: f64) -> Result<Filter> {
    if !(f_value > 0.0 && f_value.is_finite()) || !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::Domain(format!(
            "window parameters must be positive and finite, got f={f_value}, xi={xi}"
        )));
    }
    let radius = (xi * inst.m as f64 * f_value).sqrt();
    windowed_filter_with_radius(inst, radius, Some((xi, f_value)))
}

/// Windowed filter with an explicit radius (`radius = 0` keeps only `n0`).
pub fn windowed_filter_with_radius(
    inst: &ReplicationInstance,
    radius: f64,
    params: Option<(f64, f64)>,
) -> Result<Filter> {
    if radius.is_nan() || radius < 0.0 {
        return Err(Error::Domain(format!("window radius must be >= 0, got {radius}")));
    }
    let s = &inst.spectrum;
    let lp = s.log_probs();
    let n0 = inst.anchor.n0.counts();
    let m0 = inst.anchor.m0.counts();
    let partitions = enumerate_partitions_with_cap(inst.n, s.k(), inst.limits.partition_cap)?;

    let tol = 1e-9 * radius.max(1.0);
    // (energy, ln q_N(n), ln q_M(m)) for in-window partitions
    let mut inside: Vec<(i64, f64, f64)> = Vec::new();
    let mut m_counts = vec![0u64; s.k()];
    'outer: for n in &partitions {
        for (i, &c) in n.counts().iter().enumerate() {
            let x = c as i64 - n0[i] as i64;
            if (x as f64).abs() > radius + tol {
                continue 'outer;
            }
            let m = x + m0[i] as i64;
            if m < 0 {
                continue 'outer;
            }
            m_counts[i] = m as u64;
        }
        inside.push((
            s.partition_energy(n),
            log_multinomial(&lp, n.counts()),
            log_multinomial(&lp, &m_counts),
        ));
    }
    if inside.is_empty() {
        return Err(Error::Construction(format!(
            "empty window: no partition of N={} lies within radius {radius} of n0",
            inst.n
        )));
    }

    let gamma_log = inside
        .iter()
        .map(|&(_, lqn, lqm)| 0.5 * (lqn - lqm))
        .fold(f64::INFINITY, f64::min);

    inside.sort_by_key(|&(e, _, _)| e);
    let mut coeffs = Vec::with_capacity(inst.p_n.support_size());
    let mut idx = 0;
    for (e, lpn) in inst.p_n.support() {
        let start = idx;
        while idx < inside.len() && inside[idx].0 == e {
            idx += 1;
        }
        let log_pi = if idx > start {
            let lqm_sum = log_sum_exp_iter(inside[start..idx].iter().map(|t| t.2));
            (gamma_log + 0.5 * (lqm_sum - lpn)).min(0.0)
        } else {
            f64::NEG_INFINITY
        };
        coeffs.push(FilterCoeff { energy: e, log_pi });
    }

    let (xi, f_value) = params.unzip();
    Ok(Filter {
        kind: FilterKind::Windowed,
        n_copies: inst.n,
        m_copies: Some(inst.m),
        gamma_log,
        delta_e0: inst.anchor.delta_e0,
        window: Some(Window { xi, f_value, radius }),
        coeffs,
        level_grid: s.int_energies().to_vec(),
        grid_unit: s.grid_unit().to_string(),
    })
}

/// `π_E = 1` on the whole support: the deterministic regime.
pub fn identity_filter(s: &Spectrum, n_copies: u64) -> Result<Filter> {
    let p_n = crate::spectra::n_copy_distribution(s, n_copies)?;
    Ok(identity_filter_for(s, &p_n))
}

pub fn identity_filter_for(s: &Spectrum, p_n: &EnergyDistribution) -> Filter {
    Filter {
        kind: FilterKind::Identity,
        n_copies: p_n.n_copies(),
        m_copies: None,
        gamma_log: 0.0,
        delta_e0: 0,
        window: None,
        coeffs: p_n
            .support()
            .map(|(energy, _)| FilterCoeff { energy, log_pi: 0.0 })
            .collect(),
        level_grid: s.int_energies().to_vec(),
        grid_unit: s.grid_unit().to_string(),
    }
}

/// `p_yes = Σ_E π_E² p_{N,E}`.
pub fn success_probability(flt: &Filter, s: &Spectrum, n_copies: u64) -> Result<f64> {
    flt.check_compatible(s, n_copies)?;
    let p_n = crate::spectra::n_copy_distribution(s, n_copies)?;
    Ok(log_success_probability(flt, &p_n).exp())
}

/// `ln p_yes` against a precomputed `p_{N,·}`.
pub fn log_success_probability(flt: &Filter, p_n: &EnergyDistribution) -> f64 {
    let terms: Vec<f64> = flt
        .coeffs
        .iter()
        .map(|c| 2.0 * c.log_pi + p_n.log_prob(c.energy))
        .collect();
    log_sum_exp(&terms)
}
