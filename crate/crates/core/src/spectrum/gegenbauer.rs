//! Gegenbauer polynomials and harmonic-subspace dimensions on 𝕊^{d−1}.

use statrs::function::gamma::ln_gamma;

use crate::error::SpectrumError;
use crate::Real;

/// `C_n^λ(x)` by the three-term recurrence
/// `n·C_n = 2x(n+λ−1)·C_{n−1} − (n+2λ−2)·C_{n−2}`, `C_0 = 1`, `C_1 = 2λx`.
pub fn gegenbauer(lambda: Real, n: usize, x: Real) -> Result<Real, SpectrumError> {
    if !(lambda > 0.0) {
        return Err(SpectrumError::Domain(format!(
            "gegenbauer parameter λ = {lambda} must be positive (d ≥ 3)"
        )));
    }
    if !(-1.0..=1.0).contains(&x) {
        return Err(SpectrumError::Domain(format!(
            "gegenbauer argument {x} outside [−1, 1]"
        )));
    }
    if n == 0 {
        return Ok(1.0);
    }
    let mut c_prev = 1.0;
    let mut c = 2.0 * lambda * x;
    for k in 2..=n {
        let kf = k as Real;
        let next = (2.0 * x * (kf + lambda - 1.0) * c - (kf + 2.0 * lambda - 2.0) * c_prev) / kf;
        c_prev = c;
        c = next;
    }
    Ok(c)
}

/// `C_n^λ(x)` by the defining finite sum
/// `((2λ)_n/n!) · Σ_k [(−n)_k (n+2λ)_k / ((λ+1/2)_k k!)] ((1−x)/2)^k`.
/// Independent of the recurrence; used to cross-check it at small `n`.
/// Returns `(value, absolute-term mass)`; the second component bounds the
/// cancellation in the alternating sum and hence the achievable accuracy.
#[cfg(test)]
pub(crate) fn gegenbauer_explicit_sum(lambda: Real, n: usize, x: Real) -> (Real, Real) {
    let mut lead = 1.0; // (2λ)_n / n!
    for j in 0..n {
        lead *= (2.0 * lambda + j as Real) / (j as Real + 1.0);
    }
    let z = (1.0 - x) / 2.0;
    let nf = n as Real;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut abs_sum = 1.0;
    for k in 0..n {
        let kf = k as Real;
        term *= (kf - nf) * (nf + 2.0 * lambda + kf) / ((lambda + 0.5 + kf) * (kf + 1.0));
        term *= z;
        sum += term;
        abs_sum += term.abs();
    }
    (lead * sum, lead * abs_sum)
}

/// `ln C_n^λ(1) = ln (2λ)_n/n!` via log-gamma (stable for large `n`, `λ`).
pub(crate) fn ln_gegenbauer_at_one(lambda: Real, n: usize) -> Real {
    ln_gamma(2.0 * lambda + n as Real) - ln_gamma(2.0 * lambda) - ln_gamma(n as Real + 1.0)
}

/// Binomial coefficient in exact u128 arithmetic; errors when the value
/// exceeds the representable range.
fn binom_u128(n: usize, k: usize) -> Result<u128, SpectrumError> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 1..=k {
        // c = c·(n−k+i)/i stays integral at every step.
        c = c
            .checked_mul((n - k + i) as u128)
            .ok_or_else(|| {
                SpectrumError::Numerical(format!(
                    "binomial C({n},{k}) exceeds 128-bit range"
                ))
            })?
            / i as u128;
    }
    Ok(c)
}

/// Dimension `N_ℓ` of the degree-`ℓ` spherical-harmonic subspace on 𝕊^{d−1}:
/// `N_ℓ = ((ℓ+λ)/λ)·C_ℓ^λ(1)` with `λ = (d−2)/2`, computed exactly as
/// `C(d+ℓ−1, ℓ) − C(d+ℓ−3, ℓ−2)` and cross-checked against the floating
/// evaluation whenever the value is below 2^53.
pub fn harmonic_dim(d: usize, ell: usize) -> Result<u128, SpectrumError> {
    if d < 3 {
        return Err(SpectrumError::Domain(format!(
            "harmonic dimension requires d ≥ 3, got {d}"
        )));
    }
    let a = binom_u128(d + ell - 1, ell)?;
    let b = if ell >= 2 {
        binom_u128(d + ell - 3, ell - 2)?
    } else {
        0
    };
    let n = a - b;
    if n < (1u128 << 53) {
        let lambda = (d as Real - 2.0) / 2.0;
        let ln_float =
            (((ell as Real) + lambda) / lambda).ln() + ln_gegenbauer_at_one(lambda, ell);
        let float = ln_float.exp();
        let residual = (float - n as Real).abs();
        // Absolute agreement for small blocks, relative once float spacing
        // dominates.
        if residual > Real::max(1e-6, 1e-12 * n as Real) {
            return Err(SpectrumError::Numerical(format!(
                "harmonic dimension mismatch at d={d}, ℓ={ell}: exact {n}, float {float}"
            )));
        }
    }
    Ok(n)
}
