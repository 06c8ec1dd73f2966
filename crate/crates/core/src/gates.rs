//! Gate (activation) functions for GLUs and their exact derivatives.
//!
//! The Signed Quadratic Shrink gate is
//!
//! ```text
//! σ(x) = sgn(x) · (|x| − c) / (1 + (λ|x|)^p)^(1/p)
//! ```
//!
//! with `sgn(0) = +1`. For `p = 1` this is `(x − c·s) / (1 + λ·x·s)` with
//! `s = sgn(x)`, which is the form used in training. Inside a GLU the product
//! `(Wx) ⊙ σ(Vx)` behaves like a signed quadratic for moderate inputs and
//! saturates towards `±1/λ` in the gate.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::format_g;

/// Which gate a GLU applies to its V-path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    Sqs,
    Relu,
    Gelu,
    Swish,
    /// No gate: the GLU becomes a bilinear layer.
    Identity,
}

impl GateKind {
    pub const ALL: [GateKind; 5] = [
        GateKind::Sqs,
        GateKind::Relu,
        GateKind::Gelu,
        GateKind::Swish,
        GateKind::Identity,
    ];

    pub fn code(self) -> u32 {
        match self {
            GateKind::Sqs => 0,
            GateKind::Relu => 1,
            GateKind::Gelu => 2,
            GateKind::Swish => 3,
            GateKind::Identity => 4,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        GateKind::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            GateKind::Sqs => "sqs",
            GateKind::Relu => "relu",
            GateKind::Gelu => "gelu",
            GateKind::Swish => "swish",
            GateKind::Identity => "bilinear",
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sqs" => Ok(GateKind::Sqs),
            "relu" => Ok(GateKind::Relu),
            "gelu" => Ok(GateKind::Gelu),
            "swish" | "swiglu" | "silu" => Ok(GateKind::Swish),
            "bilinear" | "identity" | "none" => Ok(GateKind::Identity),
            other => Err(Error::Parameter(format!("unknown gate `{other}`"))),
        }
    }
}

/// Gate kind plus SQS hyperparameters (ignored by the other kinds).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    pub kind: GateKind,
    pub shift_c: f64,
    pub shrink_lambda: f64,
    pub power_p: f64,
}

impl Default for GateSpec {
    fn default() -> Self {
        GateSpec::sqs_default()
    }
}

impl GateSpec {
    pub const DEFAULT_C: f64 = 0.01;
    pub const DEFAULT_LAMBDA: f64 = 0.5;
    pub const DEFAULT_P: f64 = 1.0;

    /// SQS with c = 0.01, λ = 0.5, p = 1.
    pub fn sqs_default() -> Self {
        GateSpec::of(GateKind::Sqs)
    }

    pub fn sqs(shift_c: f64, shrink_lambda: f64, power_p: f64) -> Self {
        GateSpec {
            kind: GateKind::Sqs,
            shift_c,
            shrink_lambda,
            power_p,
        }
    }

    /// `kind` with default SQS parameters attached.
    pub fn of(kind: GateKind) -> Self {
        GateSpec {
            kind,
            shift_c: Self::DEFAULT_C,
            shrink_lambda: Self::DEFAULT_LAMBDA,
            power_p: Self::DEFAULT_P,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != GateKind::Sqs {
            return Ok(());
        }
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.shift_c) {
            return Err(Error::Parameter(format!("shift c must be ≥ 0, got {}", self.shift_c)));
        }
        if !ok(self.shrink_lambda) {
            return Err(Error::Parameter(format!(
                "shrink λ must be ≥ 0, got {}",
                self.shrink_lambda
            )));
        }
        if !(self.power_p.is_finite() && self.power_p >= 1.0) {
            return Err(Error::Parameter(format!("power p must be ≥ 1, got {}", self.power_p)));
        }
        Ok(())
    }

    /// `(σ(x), σ'(x))`. SQS with `p = 1` takes the pow-free path.
    #[inline]
    pub fn eval(&self, x: f64) -> (f64, f64) {
        match self.kind {
            GateKind::Sqs if self.power_p == 1.0 => (sqs_p1(x, self), sqs_p1_derivative(x, self)),
            GateKind::Sqs => sqs_general_eval(x, self),
            other => standard_gate(other, x),
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self.kind {
            GateKind::Sqs if self.power_p == 1.0 => sqs_p1(x, self),
            _ => self.eval(x).0,
        }
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// SQS with `p = 1`: `(x − c·s) / (1 + λ·x·s)`, `s = 1` for `x ≥ 0` else `−1`.
#[inline]
pub fn sqs_p1(x: f64, spec: &GateSpec) -> f64 {
    let s = sign(x);
    (x - spec.shift_c * s) / (1.0 + spec.shrink_lambda * x * s)
}

/// `(1 + λc) / (1 + λ|x|)²`; at `x = 0` this is the `x ≥ 0` branch value.
#[inline]
pub fn sqs_p1_derivative(x: f64, spec: &GateSpec) -> f64 {
    let d = 1.0 + spec.shrink_lambda * x.abs();
    (1.0 + spec.shrink_lambda * spec.shift_c) / (d * d)
}

/// Reference SQS for any `p ≥ 1`: `sgn(x)·(|x| − c) / (1 + (λ|x|)^p)^(1/p)`.
pub fn sqs_general(x: f64, spec: &GateSpec) -> Result<f64> {
    check_power(spec)?;
    Ok(sqs_general_eval(x, spec).0)
}

/// Derivative of [`sqs_general`].
pub fn sqs_general_derivative(x: f64, spec: &GateSpec) -> Result<f64> {
    check_power(spec)?;
    Ok(sqs_general_eval(x, spec).1)
}

fn check_power(spec: &GateSpec) -> Result<()> {
    if spec.power_p.is_finite() && spec.power_p >= 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("power p must be ≥ 1, got {}", spec.power_p)))
    }
}

fn sqs_general_eval(x: f64, spec: &GateSpec) -> (f64, f64) {
    let (c, lam, p) = (spec.shift_c, spec.shrink_lambda, spec.power_p);
    let a = x.abs();
    let la = lam * a;
    let inner = 1.0 + la.powf(p);
    let denom = inner.powf(1.0 / p);
    let value = sign(x) * (a - c) / denom;
    // d/da of the shrink factor: λ (λa)^(p−1) (1 + (λa)^p)^(1/p − 1)
    let ddenom = if la == 0.0 && p > 1.0 {
        0.0
    } else {
        lam * la.powf(p - 1.0) * inner.powf(1.0 / p - 1.0)
    };
    let deriv = 1.0 / denom - (a - c) * ddenom / (denom * denom);
    (value, deriv)
}

/// The quadratic-with-shrink function SQS is derived from:
/// `((|x| + c)² − c²) / (1 + (λ|x|)^p)^(1/p)`.
pub fn quad_shrink_reference(x: f64, spec: &GateSpec) -> Result<f64> {
    check_power(spec)?;
    let a = x.abs();
    let c = spec.shift_c;
    let num = (a + c) * (a + c) - c * c;
    Ok(num / (1.0 + (spec.shrink_lambda * a).powf(spec.power_p)).powf(1.0 / spec.power_p))
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(value, derivative)` of a parameter-free gate. `Sqs` falls back to defaults.
pub fn standard_gate(kind: GateKind, x: f64) -> (f64, f64) {
    match kind {
        GateKind::Relu => {
            if x > 0.0 {
                (x, 1.0)
            } else {
                (0.0, 0.0)
            }
        }
        GateKind::Gelu => {
            let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
            let pdf = FRAC_1_SQRT_2PI * (-0.5 * x * x).exp();
            (x * cdf, cdf + x * pdf)
        }
        GateKind::Swish => {
            let s = sigmoid(x);
            (x * s, s + x * s * (1.0 - s))
        }
        GateKind::Identity => (x, 1.0),
        GateKind::Sqs => GateSpec::sqs_default().eval(x),
    }
}

/// One sample of a gate curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub x: f64,
    pub gate: f64,
    pub gated_x: f64,
}

/// `n` evenly spaced samples of `σ(x)` and `x·σ(x)` over `[lo, hi]`.
pub fn sample_gate_curve(spec: &GateSpec, lo: f64, hi: f64, n: usize) -> Result<Vec<CurveRow>> {
    spec.validate()?;
    if !(lo < hi) {
        return Err(Error::Parameter(format!("curve range needs lo < hi, got [{lo}, {hi}]")));
    }
    if n < 2 {
        return Err(Error::Parameter(format!("curve needs at least 2 samples, got {n}")));
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| {
            let x = if i == n - 1 { hi } else { lo + step * i as f64 };
            let g = spec.value(x);
            CurveRow {
                x,
                gate: g,
                gated_x: x * g,
            }
        })
        .collect())
}

/// CSV with header `x,gate,gated_x`, 9 significant digits.
pub fn write_curve_csv<W: Write>(rows: &[CurveRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "x,gate,gated_x")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{}",
            format_g(r.x, 9),
            format_g(r.gate, 9),
            format_g(r.gated_x, 9)
        )?;
    }
    Ok(())
}
