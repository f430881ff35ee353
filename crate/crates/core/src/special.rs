//! Kummer's confluent hypergeometric function ₁F₁(a; b; x).
//!
//! Negative arguments go through the Kummer transform
//! ₁F₁(a; b; x) = eˣ ₁F₁(b − a; b; −x), which for b > a turns the
//! alternating series into one with positive terms. The series is summed
//! with running rescaling so that arguments up to |x| ~ 10³ do not overflow.

use crate::error::{Error, Result};

const MAX_TERMS: usize = 200_000;
const TERM_TOL: f64 = 1e-17;
const RESCALE_AT: f64 = 1e250;

/// Log of the Taylor series Σ (a)ₖ/(b)ₖ xᵏ/k! for x ≥ 0 and a, b > 0
/// (all terms positive).
fn ln_positive_series(a: f64, b: f64, x: f64) -> Result<f64> {
    debug_assert!(x >= 0.0);
    if x == 0.0 {
        return Ok(0.0);
    }
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut log_scale = 0.0f64;
    for k in 0..MAX_TERMS {
        let kf = k as f64;
        term *= (a + kf) / (b + kf) * x / (kf + 1.0);
        sum += term;
        if sum > RESCALE_AT {
            sum /= RESCALE_AT;
            term /= RESCALE_AT;
            log_scale += RESCALE_AT.ln();
        }
        // terms decrease monotonically once k + 1 > x (a/b ≤ … ratio < 1)
        if term < TERM_TOL * sum && kf + 1.0 > x * (a + kf) / (b + kf) {
            return Ok(sum.ln() + log_scale);
        }
    }
    Err(Error::Numeric {
        msg: format!("1F1({a}, {b}, {x}) series did not converge"),
        residual: term / sum,
    })
}

/// Plain Taylor series with signed terms. Used only for small |x| and as an
/// independent check of the transformed evaluation.
pub fn hyp1f1_direct_series(a: f64, b: f64, x: f64) -> Result<f64> {
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    let mut max_abs = 1.0f64;
    for k in 0..MAX_TERMS {
        let kf = k as f64;
        term *= (a + kf) / (b + kf) * x / (kf + 1.0);
        sum += term;
        max_abs = max_abs.max(term.abs());
        if term.abs() < TERM_TOL * sum.abs().max(f64::MIN_POSITIVE) && kf > x.abs() {
            return Ok(sum);
        }
        if !sum.is_finite() {
            break;
        }
    }
    Err(Error::Numeric {
        msg: format!("direct 1F1({a}, {b}, {x}) series did not converge"),
        residual: term.abs() / max_abs,
    })
}

fn check_params(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::domain(format!("1F1 requires a > 0, got {a}")));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::domain(format!("1F1 requires b > 0, got {b}")));
    }
    Ok(())
}

/// ln ₁F₁(a; b; x) for a > 0, b > 0 and any real x, provided the value is
/// positive (always the case for x ≥ 0 or b ≥ a).
pub fn ln_hyp1f1(a: f64, b: f64, x: f64) -> Result<f64> {
    check_params(a, b)?;
    if x >= 0.0 {
        return ln_positive_series(a, b, x);
    }
    let c = b - a;
    if c > 0.0 {
        Ok(x + ln_positive_series(c, b, -x)?)
    } else if c == 0.0 {
        Ok(x)
    } else {
        // b < a with negative argument: transformed series alternates.
        let v = hyp1f1_direct_series(a, b, x)?;
        if v > 0.0 {
            Ok(v.ln())
        } else {
            Err(Error::domain(format!(
                "1F1({a}, {b}, {x}) is not positive; log form undefined"
            )))
        }
    }
}

/// Kummer's ₁F₁(a; b; x).
pub fn hyp1f1(a: f64, b: f64, x: f64) -> Result<f64> {
    check_params(a, b)?;
    if x < 0.0 && b < a {
        return hyp1f1_direct_series(a, b, x);
    }
    Ok(ln_hyp1f1(a, b, x)?.exp())
}
