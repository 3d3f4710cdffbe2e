//! Sweeps over `(N, M)` and exponent fits on the resulting datasets.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{default_window_f, identity_filter_for, super_filter_for, windowed_filter_for};
use crate::fmt::format_float;
use crate::replication::{
    deterministic_fidelity_in, exact_fidelity_in, fidelity_lower_bound, lemma1_upper_bound_in,
    max_e_delta, windowed_fidelity_bound, ReplicationInstance,
};
use crate::spectra::{Limits, Spectrum};

/// Largest replication rate a sweep accepts.
pub const MAX_ALPHA: f64 = 3.0;

/// Header of the sweep CSV.
pub const CSV_HEADER: [&str; 7] = ["N", "M", "F_super", "F_det", "F_lower", "F_upper", "p_yes"];

/// Which filter a sweep evaluates in its `f_super` column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FilterPolicy {
    Super,
    /// `f_value: None` uses `f(N) = ln(N + 1)` row by row.
    Windowed { f_value: Option<f64>, xi: f64 },
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SweepGrid {
    /// `M = ⌈c N^α⌉` for each `N`.
    Rate { alpha: f64, c: f64, n_values: Vec<u64> },
    /// One `N`, explicit list of `M`.
    FixedN { n: u64, m_values: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub spectrum: Spectrum,
    pub grid: SweepGrid,
    pub filter_policy: FilterPolicy,
    #[serde(skip)]
    pub limits: Limits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: u64,
    pub m: u64,
    pub f_super: f64,
    pub f_det: f64,
    pub f_lower: f64,
    pub f_upper: f64,
    pub p_yes: f64,
}

/// `⌈c N^α⌉`, with values within `1e-9` (relative) of an integer rounded to
/// it so that e.g. `10^1.5 * 10^0.5` does not become 101.
pub fn rate_m(n: u64, alpha: f64, c: f64) -> u64 {
    let x = c * (n as f64).powf(alpha);
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as u64
    } else {
        x.ceil() as u64
    }
}

impl SweepSpec {
    pub fn rate(spectrum: Spectrum, alpha: f64, c: f64, n_values: Vec<u64>, policy: FilterPolicy) -> Self {
        Self {
            spectrum,
            grid: SweepGrid::Rate { alpha, c, n_values },
            filter_policy: policy,
            limits: Limits::default(),
        }
    }

    pub fn fixed_n(spectrum: Spectrum, n: u64, m_values: Vec<u64>, policy: FilterPolicy) -> Self {
        Self {
            spectrum,
            grid: SweepGrid::FixedN { n, m_values },
            filter_policy: policy,
            limits: Limits::default(),
        }
    }

    /// The `(N, M)` points in sweep order, after validation.
    pub fn points(&self) -> Result<Vec<(u64, u64)>> {
        let ascending = |v: &[u64]| v.windows(2).all(|w| w[0] < w[1]);
        let points: Vec<(u64, u64)> = match &self.grid {
            SweepGrid::Rate { alpha, c, n_values } => {
                if !(*alpha >= 1.0 && *alpha <= MAX_ALPHA) {
                    return Err(Error::Validation(format!(
                        "alpha must lie in [1, {MAX_ALPHA}], got {alpha}"
                    )));
                }
                if !(*c > 0.0 && c.is_finite()) {
                    return Err(Error::Validation(format!("c must be positive, got {c}")));
                }
                if n_values.is_empty() || !ascending(n_values) || n_values[0] == 0 {
                    return Err(Error::Validation(
                        "N values must be nonempty, positive and strictly ascending".into(),
                    ));
                }
                n_values.iter().map(|&n| (n, rate_m(n, *alpha, *c))).collect()
            }
            SweepGrid::FixedN { n, m_values } => {
                if *n == 0 || m_values.is_empty() || !ascending(m_values) {
                    return Err(Error::Validation(
                        "need N >= 1 and a nonempty, strictly ascending M list".into(),
                    ));
                }
                m_values.iter().map(|&m| (*n, m)).collect()
            }
        };
        if let Some(&(n, m)) = points.iter().find(|(n, m)| m < n) {
            return Err(Error::Validation(format!("M={m} is below N={n}")));
        }
        if let FilterPolicy::Windowed { f_value, xi } = self.filter_policy {
            if !(xi > 0.0) || f_value.is_some_and(|f| !(f > 0.0)) {
                return Err(Error::Validation("window parameters must be positive".into()));
            }
        }
        Ok(points)
    }
}

/// Energy cuts tried for the upper bound: five evenly spaced values in
/// `[0, N ‖H - <H>‖∞]`. The smallest resulting bound is reported.
fn e_delta_grid(s: &Spectrum, n: u64) -> [f64; 5] {
    let top = max_e_delta(s, n);
    [0.0, 0.25 * top, 0.5 * top, 0.75 * top, top]
}

fn sweep_row(spec: &SweepSpec, n: u64, m: u64) -> Result<SweepRow> {
    let s = &spec.spectrum;
    let inst = ReplicationInstance::new(s, n, m, spec.limits)?;
    let (flt, f_lower) = match spec.filter_policy {
        FilterPolicy::Super => (
            super_filter_for(&inst)?,
            fidelity_lower_bound(s, n, m).unwrap_or(0.0),
        ),
        FilterPolicy::Windowed { f_value, xi } => {
            let f = f_value.unwrap_or_else(|| default_window_f(n));
            (
                windowed_filter_for(&inst, f, xi)?,
                windowed_fidelity_bound(s, m, f, xi)?,
            )
        }
        FilterPolicy::Identity => (identity_filter_for(s, &inst.p_n), 0.0),
    };
    let result = exact_fidelity_in(&inst, &flt)?;
    let det = deterministic_fidelity_in(&inst);
    let mut f_upper = 1.0_f64;
    for e_delta in e_delta_grid(s, n) {
        let report = lemma1_upper_bound_in(&inst, result.p_yes, e_delta)?;
        f_upper = f_upper.min(report.upper);
    }
    Ok(SweepRow {
        n,
        m,
        f_super: result.fidelity,
        f_det: det.fidelity,
        f_lower,
        f_upper,
        p_yes: result.p_yes,
    })
}

/// Evaluates every point of the sweep in order.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.points()?
        .into_iter()
        .map(|(n, m)| sweep_row(spec, n, m).map_err(|e| e.at_point(n, m)))
        .collect()
}

/// Column a fit is taken on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitColumn {
    /// `1 - F_super`.
    NegLogInfidelity,
    /// `p_yes`.
    NegLogPyes,
}

/// Chart the fit is taken in, for a column value `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitTransform {
    /// `ln(-ln q)` against `ln N`: stretched exponentials `q = e^{-a N^b}`.
    VsLogN,
    /// `ln q` against `N`: plain exponentials `q = e^{-a N}`.
    VsN,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares fit of `y` on `x`.
pub fn least_squares(x: &[f64], y: &[f64]) -> Result<ExponentFit> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(Error::Validation("need at least two paired points".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Validation("all x values coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (intercept + slope * a);
            r * r
        })
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(ExponentFit { slope, intercept, r2 })
}

/// Fits the scaling of `column` across sweep rows in the chosen chart.
pub fn fit_exponent(rows: &[SweepRow], column: FitColumn, transform: FitTransform) -> Result<ExponentFit> {
    if rows.len() < 4 {
        return Err(Error::Validation(format!(
            "need at least 4 rows for a fit, got {}",
            rows.len()
        )));
    }
    let mut xs = Vec::with_capacity(rows.len());
    let mut ys = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let q = match column {
            FitColumn::NegLogInfidelity => 1.0 - row.f_super,
            FitColumn::NegLogPyes => row.p_yes,
        };
        if !(q > 0.0) {
            return Err(Error::Domain(format!(
                "row {i} (N={}, M={}): value {q} is not positive",
                row.n, row.m
            )));
        }
        let (x, y) = match transform {
            FitTransform::VsN => (row.n as f64, q.ln()),
            FitTransform::VsLogN => {
                if q >= 1.0 {
                    return Err(Error::Domain(format!(
                        "row {i} (N={}, M={}): value {q} has nonpositive -ln",
                        row.n, row.m
                    )));
                }
                ((row.n as f64).ln(), (-q.ln()).ln())
            }
        };
        xs.push(x);
        ys.push(y);
    }
    least_squares(&xs, &ys)
}

/// Writes rows as CSV with the fixed header; floats carry 12 significant
/// digits.
pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Numeric(format!("CSV write failed: {e}"));
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.m.to_string(),
            format_float(r.f_super),
            format_float(r.f_det),
            format_float(r.f_lower),
            format_float(r.f_upper),
            format_float(r.p_yes),
        ])
        .map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::Numeric(format!("CSV write failed: {e}")))
}

pub fn to_csv_string(rows: &[SweepRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
}

/// Rows together with the spec that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepDataset {
    pub spec: SweepSpec,
    pub rows: Vec<SweepRow>,
}

impl SweepDataset {
    pub fn to_json_value(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("dataset serializes");
        crate::fmt::round_json(&mut v);
        v
    }
}
