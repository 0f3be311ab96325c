//! Taylor profiles of the ridge generator `h` and the β-coefficient series.
//!
//! The degree-ℓ coefficient of a ridge function `f(x) = h(⟨w,x⟩)` on 𝕊^{d−1}
//! is `β_ℓ = λ · Σ_m h^{(ℓ+2m)}(0) / (2^{ℓ+2m} · m! · (λ)_{ℓ+m+1})` with
//! `λ = (d−2)/2`. Derivatives of the limiting-kernel profile grow like
//! squared double factorials, so every factorial-like quantity lives in log
//! space; terms are reconstructed by `exp` only after full cancellation.

use statrs::function::gamma::ln_gamma;

use crate::error::SpectrumError;
use crate::Real;

/// Default series tolerance: stop once three consecutive terms are below
/// `tol` relative to the running sum.
pub const DEFAULT_SERIES_TOL: Real = 1e-14;
/// Hard cap on series length; hitting it reports a truncated partial sum.
pub const DEFAULT_SERIES_CAP: usize = 500;

/// `ln (2t−1)!!` for the odd double factorial, `t ≥ 0` (`(−1)!! = 1`).
fn ln_double_factorial_odd(t: usize) -> Real {
    let tf = t as Real;
    tf * std::f64::consts::LN_2 + ln_gamma(tf + 0.5) - ln_gamma(0.5)
}

/// `(ln|v|, sign)` representation of a possibly huge value; sign 0 encodes
/// an exact zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SignedLn {
    pub ln_abs: Real,
    pub sign: i8,
}

impl SignedLn {
    const ZERO: SignedLn = SignedLn {
        ln_abs: f64::NEG_INFINITY,
        sign: 0,
    };

    fn of(v: Real) -> SignedLn {
        if v == 0.0 {
            SignedLn::ZERO
        } else {
            SignedLn {
                ln_abs: v.abs().ln(),
                sign: if v > 0.0 { 1 } else { -1 },
            }
        }
    }
}

/// Taylor derivative `h^{(k)}(0)` of the limiting-kernel profile:
/// `h_0 = 0`, `h_1 = 1/4`, `h_{2i} = (i/π)[(2i−3)!!]²`, odd `k ≥ 3` vanish.
/// Overflows to `+∞` for `k ≳ 240`; the series machinery uses the log form.
pub fn ntk_h_derivative(k: usize) -> Real {
    let s = ln_ntk_h_derivative(k);
    match s.sign {
        0 => 0.0,
        _ => s.sign as Real * s.ln_abs.exp(),
    }
}

pub(crate) fn ln_ntk_h_derivative(k: usize) -> SignedLn {
    match k {
        0 => SignedLn::ZERO,
        1 => SignedLn {
            ln_abs: 0.25f64.ln(),
            sign: 1,
        },
        k if k % 2 == 1 => SignedLn::ZERO,
        k => {
            let i = k / 2;
            // (2i−3)!! = (2t−1)!! at t = i−1.
            SignedLn {
                ln_abs: (i as Real / std::f64::consts::PI).ln()
                    + 2.0 * ln_double_factorial_odd(i - 1),
                sign: 1,
            }
        }
    }
}

/// Taylor profile of a ridge generator `h`: the limiting-kernel profile, the
/// two closed forms used as reference targets, or explicit derivatives.
#[derive(Debug, Clone, PartialEq)]
pub enum HProfile {
    /// `h(u) = (u/2π)(π − arccos u)`.
    Ntk,
    /// `h(u) = u`.
    Linear,
    /// `h(u) ≡ 1`.
    Constant,
    /// Explicit Taylor derivatives `h^{(k)}(0)`, zero beyond the list.
    Custom { derivs: Vec<Real> },
}

impl HProfile {
    pub(crate) fn ln_deriv(&self, k: usize) -> SignedLn {
        match self {
            HProfile::Ntk => ln_ntk_h_derivative(k),
            HProfile::Linear => {
                if k == 1 {
                    SignedLn { ln_abs: 0.0, sign: 1 }
                } else {
                    SignedLn::ZERO
                }
            }
            HProfile::Constant => {
                if k == 0 {
                    SignedLn { ln_abs: 0.0, sign: 1 }
                } else {
                    SignedLn::ZERO
                }
            }
            HProfile::Custom { derivs } => {
                SignedLn::of(derivs.get(k).copied().unwrap_or(0.0))
            }
        }
    }

    /// Whether any odd derivative of order ≥ 3 can be nonzero (controls the
    /// odd-degree tail in remainder sums).
    pub(crate) fn has_high_odd_terms(&self) -> bool {
        match self {
            HProfile::Ntk | HProfile::Linear | HProfile::Constant => false,
            HProfile::Custom { derivs } => derivs
                .iter()
                .enumerate()
                .any(|(k, &v)| k >= 3 && k % 2 == 1 && v != 0.0),
        }
    }

    /// Exclusive upper bound on nonzero derivative orders, when finite. A
    /// finite-support profile has an exactly finite β series.
    pub(crate) fn support_bound(&self) -> Option<usize> {
        match self {
            HProfile::Ntk => None,
            HProfile::Linear => Some(2),
            HProfile::Constant => Some(1),
            HProfile::Custom { derivs } => Some(derivs.len()),
        }
    }
}

/// Result of a β series evaluation, including truncation diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SeriesOutcome {
    /// Partial (or converged) sum.
    pub value: Real,
    /// True when the three-consecutive-small-terms stop fired before the cap.
    pub converged: bool,
    /// Relative size of the last computed term.
    pub last_rel: Real,
    /// Number of terms evaluated.
    pub terms: usize,
}

/// Evaluate the β_ℓ series for `profile` on 𝕊^{d−1} up to `cap` terms.
pub(crate) fn beta_series(
    d: usize,
    ell: usize,
    profile: &HProfile,
    tol: Real,
    cap: usize,
) -> Result<SeriesOutcome, SpectrumError> {
    if d < 3 {
        return Err(SpectrumError::Domain(format!(
            "β series requires d ≥ 3, got {d}"
        )));
    }
    if !(tol > 0.0) {
        return Err(SpectrumError::Domain(format!(
            "series tolerance {tol} must be positive"
        )));
    }
    let lambda = (d as Real - 2.0) / 2.0;
    let ln_lambda = lambda.ln();
    // Finite-support profiles have an exactly finite series: sum it whole,
    // no stopping heuristic. The infinite profile uses the three-small-terms
    // stop below.
    let exact_len = profile.support_bound().map(|bound| {
        if bound <= ell {
            0
        } else {
            (bound - ell).div_ceil(2)
        }
    });
    if let Some(len) = exact_len {
        if len > cap + 1 {
            return Err(SpectrumError::Domain(format!(
                "profile support needs {len} series terms, above the cap {cap}"
            )));
        }
    }
    // Running logs of m! and (λ)_{ℓ+m+1}; the spec's term-ratio recurrence
    // (h-ratio · 1/4 · 1/(m+1) · 1/(λ+ℓ+m+1)) telescoped into absolute form.
    let mut ln_m_fact = 0.0;
    let mut ln_poch = ln_gamma(lambda + ell as Real + 1.0) - ln_gamma(lambda);
    let mut sum = 0.0f64;
    let mut small_streak = 0usize;
    let mut last_rel = f64::INFINITY;
    for m in 0..=cap {
        if exact_len.is_some_and(|len| m >= len) {
            return Ok(SeriesOutcome {
                value: sum,
                converged: true,
                last_rel: 0.0,
                terms: m,
            });
        }
        let h = profile.ln_deriv(ell + 2 * m);
        let term = if h.sign == 0 {
            0.0
        } else {
            let ln_term = ln_lambda + h.ln_abs
                - (ell + 2 * m) as Real * std::f64::consts::LN_2
                - ln_m_fact
                - ln_poch;
            h.sign as Real * ln_term.exp()
        };
        sum += term;
        last_rel = term.abs() / sum.abs().max(f64::MIN_POSITIVE);
        if exact_len.is_none() {
            if last_rel < tol {
                small_streak += 1;
                if small_streak == 3 {
                    return Ok(SeriesOutcome {
                        value: sum,
                        converged: true,
                        last_rel,
                        terms: m + 1,
                    });
                }
            } else {
                small_streak = 0;
            }
        }
        ln_m_fact += ((m + 1) as Real).ln();
        ln_poch += (lambda + (ell + m) as Real + 1.0).ln();
    }
    if let Some(len) = exact_len {
        // Reachable only when the support ends exactly at the cap.
        return Ok(SeriesOutcome {
            value: sum,
            converged: true,
            last_rel,
            terms: len,
        });
    }
    Err(SpectrumError::Truncation {
        partial_sum: sum,
        last_rel,
        terms: cap + 1,
    })
}

/// Like [`beta_series`] but recovers the partial sum when the cap is hit,
/// reporting `converged = false` instead of failing.
pub(crate) fn beta_series_lenient(
    d: usize,
    ell: usize,
    profile: &HProfile,
    tol: Real,
    cap: usize,
) -> Result<SeriesOutcome, SpectrumError> {
    match beta_series(d, ell, profile, tol, cap) {
        Ok(out) => Ok(out),
        Err(SpectrumError::Truncation {
            partial_sum,
            last_rel,
            terms,
        }) => Ok(SeriesOutcome {
            value: partial_sum,
            converged: false,
            last_rel,
            terms,
        }),
        Err(e) => Err(e),
    }
}

/// Single series term (test support for validating the ratio recurrence).
#[cfg(test)]
pub(crate) fn beta_term(d: usize, ell: usize, profile: &HProfile, m: usize) -> Real {
    let lambda = (d as Real - 2.0) / 2.0;
    let h = profile.ln_deriv(ell + 2 * m);
    if h.sign == 0 {
        return 0.0;
    }
    let ln_term = lambda.ln() + h.ln_abs
        - (ell + 2 * m) as Real * std::f64::consts::LN_2
        - ln_gamma(m as Real + 1.0)
        - (ln_gamma(lambda + (ell + m) as Real + 1.0) - ln_gamma(lambda));
    h.sign as Real * ln_term.exp()
}

/// Degree-ℓ coefficient `β_ℓ` of the ridge function with generator
/// `profile` on 𝕊^{d−1}.
///
/// Errors with the partial sum and last-term magnitude when the series does
/// not meet `tol` within the cap; the limiting-kernel profile's even series
/// decay only polynomially, so at tight tolerances callers should expect and
/// recover truncated partial sums (see `ntk_spectrum`).
pub fn beta_coefficient(
    d: usize,
    ell: usize,
    profile: &HProfile,
    tol: Real,
) -> Result<Real, SpectrumError> {
    beta_series(d, ell, profile, tol, DEFAULT_SERIES_CAP).map(|out| out.value)
}
