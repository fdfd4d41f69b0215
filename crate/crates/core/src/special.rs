//! Gamma, Kummer 1F1 and Whittaker M/W for real arguments.
//!
//! The ranges covered are the ones the small-cost expansion needs: second
//! Whittaker index `m = ±1/4`, positive argument, moderate to very large
//! first index `k`.
//!
//! Evaluation paths for `W(k, m, x)`:
//!
//! * `x <= X_SWITCH`: the defining combination of `M(k, m, x)` and
//!   `M(k, -m, x)` with a cancellation monitor. When the large-argument series
//!   below already has a smaller error bound than the cancelled combination,
//!   that series is used instead.
//! * `x > X_SWITCH`: the large-argument series
//!   `W ~ x^k e^{-x/2} sum_n (1/2+m-k)_n (1/2-m-k)_n / n! (-x)^{-n}`, truncated
//!   at its smallest term.
//!
//! For the ratio `W(k+1, m, x) / W(k, m, x)` there is additionally a
//! continued fraction built from the three-term recurrence of Tricomi's `U`
//! in its first parameter. It stays accurate when `k^2` is large compared to
//! `x`, where the large-argument series no longer converges usefully.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Argument above which `W` switches from the M-combination to the large-x series.
pub const X_SWITCH: f64 = 30.0;

/// Largest number of decimal digits the M-combination may cancel.
pub const MAX_CANCELLED_DIGITS: f64 = 10.0;

/// Relative accuracy required from the large-x series in [`whittaker_w`].
pub const ASYMPTOTIC_RTOL: f64 = 1e-6;

const SERIES_MAX_TERMS: usize = 20_000;
/// Relative error of each of the two cancelling M-terms before cancellation.
const COMBINATION_TERM_ERROR: f64 = 8.0 * f64::EPSILON;
const CF_MAX_ITERATIONS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SpecialFnError {
    #[error("pole of the Gamma function at {0}")]
    GammaPole(f64),
    #[error("Gamma function overflows at {0}")]
    Overflow(f64),
    #[error("Kummer series parameter b = {0} is a non-positive integer")]
    KummerPole(f64),
    #[error("|x| = {0} exceeds the series range; use the large-argument path")]
    OutOfRange(f64),
    #[error("Whittaker argument must be positive, got {0}")]
    NonPositiveArgument(f64),
    #[error("2m = {0} is an integer; the defining combination is singular")]
    IntegerOrder(f64),
    #[error("M-combination cancelled {digits:.1} decimal digits")]
    LossOfSignificance { digits: f64 },
    #[error("large-argument series reached only relative accuracy {0:.2e}")]
    AsymptoticInaccurate(f64),
    #[error("series or continued fraction failed to converge")]
    NoConvergence,
}

/// Which evaluation route produced a Whittaker value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WhittakerMethod {
    Series,
    Asymptotic,
    ContinuedFraction,
}

// ---------------------------------------------------------------------------
// Compensated summation

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

/// Running sum carrying the rounding error of every addition separately.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    hi: f64,
    lo: f64,
}

impl CompensatedSum {
    #[inline]
    pub(crate) fn add(&mut self, v: f64) {
        let (s, e) = two_sum(self.hi, v);
        self.hi = s;
        self.lo += e;
    }

    #[inline]
    pub(crate) fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

// ---------------------------------------------------------------------------
// Gamma

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `sin(pi x)` with the argument reduced exactly before scaling by pi.
pub fn sin_pi(x: f64) -> f64 {
    if !x.is_finite() {
        return f64::NAN;
    }
    // r in [-1, 1]
    let r = x - 2.0 * (x / 2.0).round();
    let (sign, r) = if r < 0.0 { (-1.0, -r) } else { (1.0, r) };
    let v = if r <= 0.25 {
        (PI * r).sin()
    } else if r <= 0.75 {
        (PI * (0.5 - r)).cos()
    } else {
        (PI * (1.0 - r)).sin()
    };
    sign * v
}

fn is_nonpositive_integer(x: f64) -> bool {
    x <= 0.0 && x == x.floor()
}

fn gamma_positive(x: f64) -> f64 {
    // x >= 0.5
    let z = x - 1.0;
    let mut a = LANCZOS[0];
    let t = z + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (z + i as f64);
    }
    let half = t.powf((z + 0.5) / 2.0);
    (2.0 * PI).sqrt() * half * (-t).exp() * half * a
}

/// Euler's Gamma function.
pub fn gamma_fn(x: f64) -> Result<f64, SpecialFnError> {
    if is_nonpositive_integer(x) {
        return Err(SpecialFnError::GammaPole(x));
    }
    let v = if x < 0.5 {
        PI / (sin_pi(x) * gamma_positive(1.0 - x))
    } else {
        gamma_positive(x)
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(SpecialFnError::Overflow(x))
    }
}

/// `1 / Gamma(x)`, zero at the poles.
pub fn recip_gamma(x: f64) -> Result<f64, SpecialFnError> {
    if is_nonpositive_integer(x) {
        return Ok(0.0);
    }
    if x < 0.5 {
        let g = gamma_positive(1.0 - x);
        if !g.is_finite() {
            return Err(SpecialFnError::Overflow(x));
        }
        Ok(sin_pi(x) * g / PI)
    } else {
        let g = gamma_positive(x);
        if g.is_finite() {
            Ok(1.0 / g)
        } else {
            // 1/Gamma underflows gracefully for large positive x.
            Ok(0.0)
        }
    }
}

// ---------------------------------------------------------------------------
// Kummer

#[derive(Debug, Clone, Copy)]
pub(crate) struct SeriesValue {
    pub value: f64,
    /// Largest |term| seen; `max_term / |value|` measures internal cancellation.
    pub max_term: f64,
}

pub(crate) fn kummer_series(a: f64, b: f64, x: f64) -> Result<SeriesValue, SpecialFnError> {
    if is_nonpositive_integer(b) {
        return Err(SpecialFnError::KummerPole(b));
    }
    let mut acc = CompensatedSum::default();
    let mut term = 1.0_f64;
    let mut max_term = 1.0_f64;
    acc.add(term);
    if x == 0.0 {
        return Ok(SeriesValue {
            value: 1.0,
            max_term,
        });
    }
    for n in 0..SERIES_MAX_TERMS {
        let nf = n as f64;
        term *= (a + nf) * x / ((b + nf) * (nf + 1.0));
        if term == 0.0 {
            // a is a non-positive integer: the series is a polynomial
            return Ok(SeriesValue {
                value: acc.value(),
                max_term,
            });
        }
        acc.add(term);
        max_term = max_term.max(term.abs());
        let next_ratio = ((a + nf + 1.0) * x / ((b + nf + 1.0) * (nf + 2.0))).abs();
        if next_ratio < 0.5 && term.abs() <= f64::EPSILON * 1e-2 * acc.value().abs() {
            return Ok(SeriesValue {
                value: acc.value(),
                max_term,
            });
        }
    }
    Err(SpecialFnError::NoConvergence)
}

/// Confluent hypergeometric function `1F1(a; b; x)` by its power series.
pub fn kummer_1f1(a: f64, b: f64, x: f64) -> Result<f64, SpecialFnError> {
    if is_nonpositive_integer(b) {
        return Err(SpecialFnError::KummerPole(b));
    }
    if x.abs() > X_SWITCH {
        return Err(SpecialFnError::OutOfRange(x.abs()));
    }
    kummer_series(a, b, x).map(|s| s.value)
}

// ---------------------------------------------------------------------------
// Whittaker

struct MValue {
    value: f64,
    /// |value| times the internal cancellation factor of the Kummer series.
    magnitude: f64,
}

fn whittaker_m_parts(k: f64, m: f64, x: f64) -> Result<MValue, SpecialFnError> {
    if x <= 0.0 || x.is_nan() {
        return Err(SpecialFnError::NonPositiveArgument(x));
    }
    let s = kummer_series(0.5 + m - k, 1.0 + 2.0 * m, x)?;
    let pre = x.powf(0.5 + m) * (-0.5 * x).exp();
    let cond = if s.value == 0.0 {
        f64::INFINITY
    } else {
        (s.max_term / s.value.abs()).max(1.0)
    };
    Ok(MValue {
        value: pre * s.value,
        magnitude: (pre * s.value).abs() * cond,
    })
}

/// Whittaker's `M(k, m, x) = x^{1/2+m} e^{-x/2} 1F1(1/2+m-k; 1+2m; x)`.
pub fn whittaker_m(k: f64, m: f64, x: f64) -> Result<f64, SpecialFnError> {
    if x > X_SWITCH {
        return Err(SpecialFnError::OutOfRange(x));
    }
    whittaker_m_parts(k, m, x).map(|v| v.value)
}

/// M-combination value and the number of decimal digits it cancelled.
fn w_combination_parts(k: f64, m: f64, x: f64) -> Result<(f64, f64), SpecialFnError> {
    let two_m = 2.0 * m;
    if two_m == two_m.round() {
        return Err(SpecialFnError::IntegerOrder(two_m));
    }
    let mp = whittaker_m_parts(k, m, x)?;
    let mm = whittaker_m_parts(k, -m, x)?;
    let c1 = recip_gamma(0.5 - m - k)? * recip_gamma(1.0 + two_m)?;
    let c2 = recip_gamma(0.5 + m - k)? * recip_gamma(1.0 - two_m)?;
    let t1 = -mp.value * c1;
    let t2 = mm.value * c2;
    let sum = t1 + t2;
    let scale = (mp.magnitude * c1.abs()).max(mm.magnitude * c2.abs());
    if !sum.is_finite() || !scale.is_finite() {
        return Err(SpecialFnError::Overflow(k));
    }
    let digits = if scale == 0.0 {
        0.0
    } else if sum == 0.0 {
        f64::INFINITY
    } else {
        (scale / sum.abs()).log10().max(0.0)
    };
    if digits > MAX_CANCELLED_DIGITS {
        return Err(SpecialFnError::LossOfSignificance { digits });
    }
    Ok((PI / sin_pi(two_m) * sum, digits))
}

fn w_combination(k: f64, m: f64, x: f64) -> Result<f64, SpecialFnError> {
    w_combination_parts(k, m, x).map(|(v, _)| v)
}

/// Relative error bound of the M-combination after cancelling `digits` digits.
fn combination_error(digits: f64) -> f64 {
    COMBINATION_TERM_ERROR * 10f64.powf(digits)
}

/// Sum of the large-argument series and the magnitude of the first omitted term.
fn asymptotic_sum(k: f64, m: f64, x: f64) -> (f64, f64) {
    let p = 0.5 + m - k;
    let q = 0.5 - m - k;
    let mut acc = CompensatedSum::default();
    let mut term = 1.0_f64;
    acc.add(term);
    let mut n = 0usize;
    loop {
        let nf = n as f64;
        let next = term * (p + nf) * (q + nf) / ((nf + 1.0) * -x);
        if next == 0.0 {
            return (acc.value(), 0.0);
        }
        // Always keep leading term plus two corrections; beyond that stop at
        // the smallest term or when it no longer matters.
        if n >= 2 && (next.abs() >= term.abs() || next.abs() <= 1e-17 * acc.value().abs()) {
            return (acc.value(), next.abs());
        }
        if n > SERIES_MAX_TERMS {
            return (acc.value(), next.abs());
        }
        acc.add(next);
        term = next;
        n += 1;
    }
}

/// Whittaker's `W(k, m, x)`.
pub fn whittaker_w(k: f64, m: f64, x: f64) -> Result<f64, SpecialFnError> {
    whittaker_w_with_method(k, m, x).map(|(v, _)| v)
}

/// [`whittaker_w`] plus the route that produced it.
pub fn whittaker_w_with_method(
    k: f64,
    m: f64,
    x: f64,
) -> Result<(f64, WhittakerMethod), SpecialFnError> {
    if x <= 0.0 || x.is_nan() {
        return Err(SpecialFnError::NonPositiveArgument(x));
    }
    let scale = || x.powf(k) * (-0.5 * x).exp();
    if x <= X_SWITCH {
        let combo = w_combination_parts(k, m, x);
        let (s, err) = asymptotic_sum(k, m, x);
        let asym_err = err / s.abs();
        return match combo {
            Ok((v, digits)) if combination_error(digits) <= asym_err => {
                Ok((v, WhittakerMethod::Series))
            }
            Ok(_) | Err(SpecialFnError::LossOfSignificance { .. })
                if asym_err <= ASYMPTOTIC_RTOL =>
            {
                Ok((scale() * s, WhittakerMethod::Asymptotic))
            }
            Ok((v, _)) => Ok((v, WhittakerMethod::Series)),
            Err(e) => Err(e),
        };
    }
    let s = asymptotic_normalized(k, m, x, ASYMPTOTIC_RTOL)?;
    Ok((scale() * s, WhittakerMethod::Asymptotic))
}

fn asymptotic_normalized(k: f64, m: f64, x: f64, rtol: f64) -> Result<f64, SpecialFnError> {
    let (s, err) = asymptotic_sum(k, m, x);
    let rel = err / s.abs();
    if rel.is_nan() || rel > rtol {
        return Err(SpecialFnError::AsymptoticInaccurate(rel));
    }
    Ok(s)
}

/// `W(k, m, x) / (x^k e^{-x/2})`, which tends to one as `x` grows.
///
/// Stays finite where `W` itself under- or overflows.
pub fn whittaker_w_normalized(k: f64, m: f64, x: f64) -> Result<f64, SpecialFnError> {
    if x <= 0.0 || x.is_nan() {
        return Err(SpecialFnError::NonPositiveArgument(x));
    }
    if x <= X_SWITCH {
        let (w, _) = whittaker_w_with_method(k, m, x)?;
        return Ok(w / (x.powf(k) * (-0.5 * x).exp()));
    }
    asymptotic_normalized(k, m, x, ASYMPTOTIC_RTOL)
}

/// `U(a+1, b, x) / U(a, b, x)` from the backward recurrence in `a`, as a
/// continued fraction evaluated with the modified Lentz method.
fn u_ratio_cf(a: f64, b: f64, x: f64) -> Result<f64, SpecialFnError> {
    const TINY: f64 = 1e-300;
    let mut f = 2.0 * (a + 1.0) + x - b;
    if f == 0.0 {
        f = TINY;
    }
    let mut c = f;
    let mut d = 0.0;
    for j in 1..CF_MAX_ITERATIONS {
        let aj = a + j as f64;
        let num = -aj * (aj - b + 1.0);
        let den = 2.0 * (aj + 1.0) + x - b;
        d = den + num * d;
        if d == 0.0 {
            d = TINY;
        }
        c = den + num / c;
        if c == 0.0 {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            return Ok(1.0 / f);
        }
        if !f.is_finite() {
            break;
        }
    }
    Err(SpecialFnError::NoConvergence)
}

/// `W(k+1, m, x) / W(k, m, x)`.
///
/// Tries the large-argument series (only when it is accurate to near machine
/// precision), then the continued fraction, then the M-combination.
pub fn whittaker_w_ratio(
    k: f64,
    m: f64,
    x: f64,
) -> Result<(f64, WhittakerMethod), SpecialFnError> {
    if x <= 0.0 || x.is_nan() {
        return Err(SpecialFnError::NonPositiveArgument(x));
    }
    if x > X_SWITCH {
        if let (Ok(lo), Ok(hi)) = (
            asymptotic_normalized(k, m, x, 1e-14),
            asymptotic_normalized(k + 1.0, m, x, 1e-14),
        ) {
            return Ok((x * hi / lo, WhittakerMethod::Asymptotic));
        }
    }
    let a = 0.5 + m - k;
    let b = 1.0 + 2.0 * m;
    let mut last_err = SpecialFnError::NoConvergence;
    match u_ratio_cf(a, b, x) {
        Ok(r) => {
            let v = 2.0 * a + x - b - a * (a - b + 1.0) * r;
            if v.is_finite() {
                return Ok((v, WhittakerMethod::ContinuedFraction));
            }
        }
        Err(e) => last_err = e,
    }
    if x <= X_SWITCH {
        let hi = w_combination(k + 1.0, m, x)?;
        let lo = w_combination(k, m, x)?;
        return Ok((hi / lo, WhittakerMethod::Series));
    }
    Err(last_err)
}
