//! Fixed-precision number formatting for reports.

use serde_json::Value;

/// Significant digits used for every float written by reports.
pub const SIG_DIGITS: usize = 12;

/// Rounds `x` to `digits` significant digits. Non-finite values pass through.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let text = format!("{:.*e}", digits.saturating_sub(1), x);
    text.parse().unwrap_or(x)
}

/// Shortest decimal representation of `x` rounded to 12 significant digits.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let r = round_sig(x, SIG_DIGITS);
    if r == 0.0 {
        return "0".into();
    }
    format!("{r}")
        .parse::<f64>()
        .map(|_| {
            let plain = format!("{r}");
            let sci = format!("{r:e}");
            if plain.len() <= sci.len() + 2 {
                plain
            } else {
                sci
            }
        })
        .unwrap_or_else(|_| format!("{r:e}"))
}

/// Rounds every float inside a JSON value to 12 significant digits.
/// Integers are left alone.
pub fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64() {
                if let Some(r) = serde_json::Number::from_f64(round_sig(x, SIG_DIGITS)) {
                    *n = r;
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_json),
        Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(round_sig(0.123456789012345, 12), 0.123456789012);
        assert_eq!(round_sig(-98_765.432_198_765_43, 12), -98765.4321988);
        assert_eq!(format_float(0.5), "0.5");
        assert_eq!(format_float(1e-30), "1e-30");
        assert_eq!(format_float(0.1 + 0.2), "0.3");
        assert_eq!(format_float(1234.0), "1234");
    }

    #[test]
    fn json_rounding() {
        let mut v = serde_json::json!({"a": [0.1 + 0.2, 3], "b": {"c": 3.0f64.sqrt()}});
        round_json(&mut v);
        assert_eq!(v["a"][0].as_f64(), Some(0.3));
        assert_eq!(v["a"][1].as_u64(), Some(3));
        assert_eq!(v["b"]["c"].as_f64(), Some(1.732_050_807_57));
    }
}
