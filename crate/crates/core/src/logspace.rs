//! Log-domain probability arithmetic.
//!
//! Reductions run in a fixed order with Neumaier-compensated accumulation, so
//! the same input slice always produces bit-identical output.

/// Compensated sum of `values` in iteration order.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `ln Σ exp(x_i)`; returns `-inf` for an empty slice or all `-inf` entries.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + neumaier_sum(values.iter().map(|&x| (x - max).exp())).ln()
}

/// Streaming variant of [`log_sum_exp`] for iterators; collects once.
pub fn log_sum_exp_iter<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let buf: Vec<f64> = values.into_iter().collect();
    log_sum_exp(&buf)
}

/// `ln(exp(a) + exp(b))`.
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(1 - exp(x))` for `x <= 0`, accurate near both ends.
pub fn log1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}
