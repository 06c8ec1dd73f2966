//! Number formatting shared by the CSV writers.

/// Format like C's `%.{sig}g`: `sig` significant digits, trailing zeros
/// trimmed, scientific notation outside `1e-4 ≤ |v| < 10^sig`.
pub fn format_g(v: f64, sig: usize) -> String {
    let sig = sig.max(1);
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    // Round first so that e.g. 9.9999999999 picks the right exponent.
    let sci = format!("{:.*e}", sig - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= sig as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (sig as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Shortest round-trip representation, used where CSV values must reload exactly.
pub fn format_exact(v: f64) -> String {
    format!("{v:?}")
}
