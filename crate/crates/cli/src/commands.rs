use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use heisenclone_core::filters::{
    default_window_f, identity_filter_for, linear_rate_xi, super_filter_for, windowed_filter_for,
};
use heisenclone_core::qcore::{
    avg_qfi_uniform, choi_matrix, decompose_instrument, eigenbasis_diagonal, gaussian_twirl,
    hl_variance_bound, prob_qfi, qfi, trace_preservation_error, CMatrix, FilterOperator,
    QuantumSystem, DEGENERACY_GAP,
};
use heisenclone_core::replication::{
    deterministic_fidelity_in, exact_fidelity_in, lemma1_upper_bound_in, max_e_delta,
};
use heisenclone_core::scaling::CSV_HEADER;
use heisenclone_core::{
    fit_exponent, pyes_decay_rate, run_sweep, Error, FilterPolicy, FitColumn, FitTransform,
    ReplicationInstance, Spectrum, SweepDataset, SweepGrid, SweepSpec,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use crate::report::{to_map, CliError, Report};
use crate::{
    BoundsArgs, FilterChoice, FitChoice, MetrologyCommand, ReplicateArgs, RunConfig, SweepArgs,
    SystemArgs, ValidateArgs, WindowArgs,
};

type CliResult<T> = Result<T, CliError>;

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn load_spectrum(config: &RunConfig) -> CliResult<Spectrum> {
    match &config.spectrum {
        Some(path) => Ok(Spectrum::from_json(&read(path)?)?),
        None => Ok(Spectrum::equatorial_qubit()),
    }
}

fn load_system(config: &RunConfig, args: &SystemArgs) -> CliResult<QuantumSystem> {
    match &args.system {
        Some(path) => Ok(QuantumSystem::from_json(&read(path)?)?),
        None => Ok(QuantumSystem::from_spectrum(&load_spectrum(config)?)?),
    }
}

fn rng(config: &RunConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(config.seed)
}

fn window_params(s: &Spectrum, n: u64, w: &WindowArgs) -> (f64, f64) {
    let f = w.f_value.unwrap_or_else(|| default_window_f(n));
    let xi = w.xi.unwrap_or_else(|| linear_rate_xi(s, w.c2));
    (f, xi)
}

fn record(value: Value) -> Report {
    match value {
        Value::Object(map) => Report::Record(map),
        other => Report::Record(Map::from_iter([("value".to_string(), other)])),
    }
}

pub fn replicate(config: &RunConfig, args: &ReplicateArgs) -> CliResult<Report> {
    let s = load_spectrum(config)?;
    let inst = ReplicationInstance::new(&s, args.n, args.m, config.limits())?;
    let result = match args.filter {
        FilterChoice::Super => exact_fidelity_in(&inst, &super_filter_for(&inst)?)?,
        FilterChoice::Windowed => {
            let (f, xi) = window_params(&s, args.n, &args.window);
            exact_fidelity_in(&inst, &windowed_filter_for(&inst, f, xi)?)?
        }
        FilterChoice::Identity => exact_fidelity_in(&inst, &identity_filter_for(&s, &inst.p_n))?,
        FilterChoice::Deterministic => deterministic_fidelity_in(&inst),
    };
    Ok(Report::Record(to_map(&result)))
}

pub fn sweep(config: &RunConfig, args: &SweepArgs) -> CliResult<Report> {
    let s = load_spectrum(config)?;
    let grid = if args.fig2 {
        SweepGrid::FixedN {
            n: 20,
            m_values: (1..=20).map(|k| 20 * k).collect(),
        }
    } else if let Some(alpha) = args.alpha {
        SweepGrid::Rate {
            alpha,
            c: args.c,
            n_values: args.n_values.clone(),
        }
    } else {
        SweepGrid::FixedN {
            n: args.n.unwrap_or_default(),
            m_values: args.m_values.clone(),
        }
    };
    let policy = match args.filter {
        FilterChoice::Super => FilterPolicy::Super,
        FilterChoice::Windowed => FilterPolicy::Windowed {
            f_value: args.window.f_value,
            xi: args.window.xi.unwrap_or_else(|| linear_rate_xi(&s, args.window.c2)),
        },
        FilterChoice::Identity => FilterPolicy::Identity,
        FilterChoice::Deterministic => {
            return Err(CliError::Unsupported(
                "sweeps always report the deterministic column; pick super, windowed or identity"
                    .into(),
            ))
        }
    };
    let spec = SweepSpec {
        spectrum: s,
        grid,
        filter_policy: policy,
        limits: config.limits(),
    };

    if args.bound.is_some() {
        return lemma1_table(&spec);
    }

    let rows = run_sweep(&spec)?;
    let fit = args
        .fit
        .map(|choice| {
            let (column, transform) = match choice {
                FitChoice::Pyes => (FitColumn::NegLogPyes, FitTransform::VsN),
                FitChoice::Infidelity => (FitColumn::NegLogInfidelity, FitTransform::VsLogN),
            };
            fit_exponent(&rows, column, transform).map(|f| (column, transform, f))
        })
        .transpose()?;

    let dataset = SweepDataset { spec, rows };
    let Value::Object(mut extra) = dataset.to_json_value() else {
        unreachable!("datasets serialize to objects")
    };
    let rows: Vec<Map<String, Value>> = match extra.remove("rows") {
        Some(Value::Array(items)) => items
            .into_iter()
            .filter_map(|v| match v {
                Value::Object(map) => Some(upper_case_keys(map)),
                _ => None,
            })
            .collect(),
        _ => Vec::new(),
    };
    let mut notes = Vec::new();
    if let Some((column, transform, f)) = fit {
        let summary = json!({
            "column": column,
            "transform": transform,
            "slope": f.slope,
            "intercept": f.intercept,
            "r2": f.r2,
        });
        notes.push(format!(
            "fit column={} transform={} slope={} intercept={} r2={}",
            summary["column"].as_str().unwrap_or_default(),
            summary["transform"].as_str().unwrap_or_default(),
            heisenclone_core::fmt::format_float(f.slope),
            heisenclone_core::fmt::format_float(f.intercept),
            heisenclone_core::fmt::format_float(f.r2),
        ));
        extra.insert("fit".into(), summary);
    }
    Ok(Report::Table {
        columns: CSV_HEADER.iter().map(|c| c.to_string()).collect(),
        rows,
        extra,
        notes,
    })
}

/// Renames sweep-row fields to the CSV column names.
fn upper_case_keys(map: Map<String, Value>) -> Map<String, Value> {
    map.into_iter()
        .map(|(k, v)| {
            let key = match k.as_str() {
                "n" => "N".to_string(),
                "m" => "M".to_string(),
                "f_super" => "F_super".to_string(),
                "f_det" => "F_det".to_string(),
                "f_lower" => "F_lower".to_string(),
                "f_upper" => "F_upper".to_string(),
                _ => k,
            };
            (key, v)
        })
        .collect()
}

/// Upper bound at the largest cut for every sweep point, with the super
/// filter's success probability.
fn lemma1_table(spec: &SweepSpec) -> CliResult<Report> {
    let s = &spec.spectrum;
    let mut rows = Vec::new();
    for (n, m) in spec.points()? {
        let at = |e: Error| e.at_point(n, m);
        let inst = ReplicationInstance::new(s, n, m, spec.limits).map_err(at)?;
        let p_yes = exact_fidelity_in(&inst, &super_filter_for(&inst).map_err(at)?)
            .map_err(at)?
            .p_yes;
        let b = lemma1_upper_bound_in(&inst, p_yes, max_e_delta(s, n)).map_err(at)?;
        rows.push(Map::from_iter([
            ("N".to_string(), json!(n)),
            ("M".to_string(), json!(m)),
            ("e_delta".to_string(), json!(b.e_delta)),
            ("first_term".to_string(), json!(b.first_term)),
            ("second_term".to_string(), json!(b.second_term)),
            ("upper".to_string(), json!(b.upper)),
            ("p_yes".to_string(), json!(p_yes)),
        ]));
    }
    let mut extra = Map::new();
    extra.insert("bound".into(), json!("lemma1"));
    extra.insert("spec".into(), serde_json::to_value(spec).expect("spec serializes"));
    Ok(Report::Table {
        columns: ["N", "M", "e_delta", "first_term", "second_term", "upper", "p_yes"]
            .map(String::from)
            .to_vec(),
        rows,
        extra,
        notes: Vec::new(),
    })
}

pub fn bounds(config: &RunConfig, args: &BoundsArgs) -> CliResult<Report> {
    let s = load_spectrum(config)?;
    let inst = ReplicationInstance::new(&s, args.n, args.m, config.limits())?;
    let exact = exact_fidelity_in(&inst, &super_filter_for(&inst)?)?;
    let p_yes = args.p_yes.unwrap_or(exact.p_yes);
    let cuts = match args.e_delta {
        Some(e) => vec![e],
        None => {
            let top = max_e_delta(&s, args.n);
            (0..=4).map(|j| top * j as f64 / 4.0).collect()
        }
    };
    let mut rows = Vec::new();
    for e_delta in cuts {
        let mut b = lemma1_upper_bound_in(&inst, p_yes, e_delta)?;
        if args.p_yes.is_none() {
            b.exact = Some(exact.fidelity);
        }
        let mut row = Map::from_iter([
            ("N".to_string(), json!(args.n)),
            ("M".to_string(), json!(args.m)),
        ]);
        row.extend(to_map(&b));
        rows.push(row);
    }
    Ok(Report::Table {
        columns: [
            "N",
            "M",
            "e_delta",
            "lower",
            "exact",
            "upper",
            "first_term",
            "second_term",
            "p_yes_used",
        ]
        .map(String::from)
        .to_vec(),
        rows,
        extra: Map::new(),
        notes: Vec::new(),
    })
}

pub fn metrology(config: &RunConfig, cmd: &MetrologyCommand) -> CliResult<Report> {
    match cmd {
        MetrologyCommand::Qfi { system, t } => {
            let sys = load_system(config, system)?;
            Ok(record(json!({ "t": t, "qfi": qfi(&sys, *t) })))
        }
        MetrologyCommand::ProbQfi { system, t, epsilon } => {
            let sys = load_system(config, system)?;
            let q = qfi(&sys, *t);
            match epsilon {
                Some(eps) => {
                    let flt = FilterOperator::epsilon_filter(&sys, *t, *eps)?;
                    let p = prob_qfi(&sys, &flt, *t)?;
                    let expected = q / (eps * eps);
                    Ok(record(json!({
                        "t": t,
                        "epsilon": eps,
                        "qfi": q,
                        "prob_qfi": p,
                        "qfi_over_eps_sq": expected,
                        "rel_err": ((p - expected) / expected).abs(),
                    })))
                }
                None => {
                    let p = prob_qfi(&sys, &FilterOperator::identity(sys.dim()), *t)?;
                    Ok(record(json!({ "t": t, "qfi": q, "prob_qfi": p })))
                }
            }
        }
        MetrologyCommand::AvgBound {
            system,
            samples,
            period,
        } => avg_bound(config, system, *samples, *period),
        MetrologyCommand::Hl { n } => {
            let s = load_spectrum(config)?;
            Ok(record(json!({ "n": n, "variance_bound": hl_variance_bound(&s, *n)? })))
        }
        MetrologyCommand::Twirl { system, sigma } => twirl(config, system, *sigma),
        MetrologyCommand::Decompose {
            dim,
            dim_out,
            kraus,
        } => decompose(config, *dim, dim_out.unwrap_or(*dim), *kraus),
    }
}

/// Largest average QFI over random diagonal filters, against the squared
/// spectral width and the NOON filter.
fn avg_bound(
    config: &RunConfig,
    system: &SystemArgs,
    samples: usize,
    period: Option<f64>,
) -> CliResult<Report> {
    if samples == 0 {
        return Err(Error::Validation("need at least one sample".into()).into());
    }
    let sys = load_system(config, system)?;
    let period = match (period, &system.system) {
        (Some(p), _) => p,
        (None, None) => 2.0 * PI / load_spectrum(config)?.grid_unit_f64(),
        (None, Some(_)) => {
            return Err(CliError::Usage("--period is required with --system".into()))
        }
    };
    const POINTS: usize = 64;
    let mut rng = rng(config);
    let mut max_avg = f64::NEG_INFINITY;
    for _ in 0..samples {
        let values: Vec<f64> = (0..sys.dim()).map(|_| rng.random_range(0.0..=1.0)).collect();
        let flt = FilterOperator::diagonal_in_eigenbasis(&sys, &values)?;
        max_avg = max_avg.max(avg_qfi_uniform(&sys, &flt, period, POINTS)?);
    }
    let width_sq = sys.spectral_width().powi(2);
    let noon = avg_qfi_uniform(&sys, &FilterOperator::noon(&sys)?, period, POINTS)?;
    Ok(record(json!({
        "samples": samples,
        "seed": config.seed,
        "period": period,
        "width_sq": width_sq,
        "max_avg_qfi": max_avg,
        "noon_avg_qfi": noon,
        "holds": max_avg <= width_sq + 1e-9,
    })))
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

fn max_abs_entry(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Twirls a random positive operator and checks the per-entry damping in
/// the energy eigenbasis.
fn twirl(config: &RunConfig, system: &SystemArgs, sigma: f64) -> CliResult<Report> {
    let sys = load_system(config, system)?;
    let d = sys.dim();
    let a = random_matrix(&mut rng(config), d, d);
    let p = &a * a.adjoint();
    let twirled = gaussian_twirl(&p, &sys, sigma)?;
    let u = sys.eigenvectors();
    let (p_eig, t_eig) = (u.adjoint() * &p * u, u.adjoint() * &twirled * u);
    let e = sys.energies();
    let mut scaling_err = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let gap = e[i] - e[j];
            let factor = if gap.abs() <= DEGENERACY_GAP {
                1.0
            } else {
                (-0.5 * sigma * sigma * gap * gap).exp()
            };
            scaling_err = scaling_err.max((t_eig[(i, j)] - p_eig[(i, j)] * factor).norm());
        }
    }
    let to_diag = max_abs_entry(&(twirled - eigenbasis_diagonal(&p, &sys)?));
    Ok(record(json!({
        "sigma": sigma,
        "dim": d,
        "max_scaling_error": scaling_err,
        "distance_to_diagonal": to_diag,
    })))
}

/// Splits a random trace-non-increasing CP map into filter and channel.
fn decompose(config: &RunConfig, d_in: usize, d_out: usize, count: usize) -> CliResult<Report> {
    let max = heisenclone_core::qcore::MAX_DIM;
    if !(1..=max).contains(&d_in) || !(1..=max).contains(&d_out) || count == 0 {
        return Err(Error::Validation(format!(
            "need dimensions in 1..={max} and at least one Kraus operator"
        ))
        .into());
    }
    let mut rng = rng(config);
    let kraus: Vec<CMatrix> = (0..count).map(|_| random_matrix(&mut rng, d_out, d_in)).collect();
    let mut gram = CMatrix::zeros(d_in, d_in);
    for k in &kraus {
        gram += k.adjoint() * k;
    }
    let top = gram.symmetric_eigen().eigenvalues.max();
    let scale = Complex64::new(1.0 / top.sqrt(), 0.0);
    let kraus: Vec<CMatrix> = kraus.iter().map(|k| k * scale).collect();
    let dec = decompose_instrument(&kraus)?;
    let choi_err = max_abs_entry(&(dec.reconstructed_choi() - choi_matrix(&kraus)));
    Ok(record(json!({
        "dim_in": d_in,
        "dim_out": d_out,
        "kraus": count,
        "channel_kraus": dec.channel_kraus.len(),
        "choi_error": choi_err,
        "trace_preservation_error": trace_preservation_error(&dec.channel_kraus),
    })))
}

pub fn validate(config: &RunConfig, args: &ValidateArgs) -> CliResult<Report> {
    let s = load_spectrum(config)?;
    let mut out = json!({
        "valid": true,
        "k": s.k(),
        "grid_unit": s.grid_unit().to_string(),
        "p_min": s.p_min(),
        "mean_energy": s.mean_energy(),
        "norm_inf": s.norm_inf(),
        "pyes_decay_rate": pyes_decay_rate(&s),
    });
    if args.system.system.is_some() {
        let sys = load_system(config, &args.system)?;
        out["system_dim"] = json!(sys.dim());
        out["spectral_width"] = json!(sys.spectral_width());
    }
    Ok(record(out))
}
