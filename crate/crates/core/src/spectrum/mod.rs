//! Spectral engine for the limiting-kernel integral operator on 𝕊^{d−1}.
//!
//! Eigenspaces are spherical-harmonic degree blocks. For the
//! limiting-kernel profile the top eigenvalue is `λ_1 = β_1` on the degree-1
//! block, followed by `β_0, β_2, β_4, …` on blocks `0, 2, 4, …`; odd degrees
//! ≥ 3 lie in the operator's kernel. Projection remainders, Parseval sums,
//! the convergence-bound evaluator, and the width requirement build on the
//! same block machinery.

mod gegenbauer;
mod series;

pub use gegenbauer::{gegenbauer, harmonic_dim};
pub use series::{
    beta_coefficient, ntk_h_derivative, HProfile, DEFAULT_SERIES_CAP, DEFAULT_SERIES_TOL,
};

use serde::{Deserialize, Serialize};

use crate::error::SpectrumError;
use crate::network::StepSchedule;
use crate::Real;

use series::beta_series_lenient;

/// Maximum harmonic degree scanned when summing spectral tails.
pub const DEFAULT_BLOCK_CAP: usize = 200;

/// One eigenvalue block of the spectral table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBlock {
    /// Harmonic degree ℓ of the block.
    pub ell: u32,
    /// Block eigenvalue `β_ℓ`.
    pub beta: Real,
    /// Subspace dimension `N_ℓ`.
    pub multiplicity: u64,
    /// 1-based inclusive eigenfunction index range `[lo, hi]` in the global
    /// non-increasing eigenvalue ordering.
    pub eigen_index_range: (u64, u64),
    /// Whether the β series met the tolerance before the term cap.
    pub converged: bool,
    /// Series terms evaluated.
    pub terms: u32,
    /// Relative magnitude of the last series term.
    pub last_rel: Real,
}

/// Truncation settings and outcome for a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationInfo {
    pub tol: Real,
    pub series_cap: u32,
    pub max_ell: u32,
    pub all_converged: bool,
}

/// Ordered eigenvalue blocks of the limiting kernel on 𝕊^{d−1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralTable {
    pub d: u32,
    /// `λ = (d−2)/2`.
    pub lambda: Real,
    /// Blocks in non-increasing eigenvalue order.
    pub blocks: Vec<SpectralBlock>,
    pub truncation: TruncationInfo,
}

impl SpectralTable {
    /// Eigenvalue of the `k`-th block, 1-based.
    pub fn eigenvalue(&self, k: usize) -> Option<Real> {
        if k == 0 {
            return None;
        }
        self.blocks.get(k - 1).map(|b| b.beta)
    }

    /// Block eigenvalue by harmonic degree.
    pub fn beta_of_degree(&self, ell: usize) -> Option<Real> {
        self.blocks.iter().find(|b| b.ell as usize == ell).map(|b| b.beta)
    }

    /// Eigenvalue at a 1-based eigenfunction index (blocks expanded by
    /// multiplicity).
    pub fn eigenvalue_at_index(&self, index: u64) -> Option<Real> {
        self.blocks
            .iter()
            .find(|b| b.eigen_index_range.0 <= index && index <= b.eigen_index_range.1)
            .map(|b| b.beta)
    }
}

/// Harmonic degrees of the first `k` blocks in eigenvalue order:
/// `1, 0, 2, 4, 6, …`.
fn block_degrees(k: usize) -> Vec<usize> {
    let mut ells = Vec::with_capacity(k);
    if k >= 1 {
        ells.push(1);
    }
    for i in 2..=k {
        ells.push(2 * (i - 2));
    }
    ells
}

fn block_multiplicity(d: usize, ell: usize) -> Result<u64, SpectrumError> {
    let n = harmonic_dim(d, ell)?;
    u64::try_from(n).map_err(|_| {
        SpectrumError::Numerical(format!(
            "block ℓ = {ell} multiplicity {n} exceeds the supported range"
        ))
    })
}

/// Build the table of the first `k_blocks` eigenvalue blocks of the
/// limiting kernel on 𝕊^{d−1}.
///
/// β series that only truncate (the even series decay polynomially, so at
/// tight tolerances they hit the term cap) contribute their partial sums and
/// are flagged per block; genuine chain-ordering violations beyond `tol`
/// abort with a numerical error.
pub fn ntk_spectrum(d: usize, k_blocks: usize, tol: Real) -> Result<SpectralTable, SpectrumError> {
    if d < 3 {
        return Err(SpectrumError::Domain(format!(
            "spectral table requires d ≥ 3, got {d}"
        )));
    }
    if k_blocks < 1 {
        return Err(SpectrumError::Domain("need at least one block".into()));
    }
    let lambda = (d as Real - 2.0) / 2.0;
    let degrees = block_degrees(k_blocks);
    let mut blocks = Vec::with_capacity(k_blocks);
    let mut next_index: u64 = 1;
    let mut all_converged = true;
    let mut max_ell = 0u32;
    for ell in degrees {
        let out = beta_series_lenient(d, ell, &HProfile::Ntk, tol, DEFAULT_SERIES_CAP)?;
        let mult = block_multiplicity(d, ell)?;
        let lo = next_index;
        let hi = next_index + (mult - 1);
        next_index = hi + 1;
        all_converged &= out.converged;
        max_ell = max_ell.max(ell as u32);
        if !(out.value > 0.0) {
            return Err(SpectrumError::Numerical(format!(
                "block ℓ = {ell} eigenvalue {} is not positive",
                out.value
            )));
        }
        blocks.push(SpectralBlock {
            ell: ell as u32,
            beta: out.value,
            multiplicity: mult,
            eigen_index_range: (lo, hi),
            converged: out.converged,
            terms: out.terms as u32,
            last_rel: out.last_rel,
        });
    }
    for pair in blocks.windows(2) {
        if pair[1].beta > pair[0].beta + tol {
            return Err(SpectrumError::Monotonicity {
                block: pair[1].ell as usize,
                lo: pair[0].beta,
                hi: pair[1].beta,
            });
        }
    }
    Ok(SpectralTable {
        d: d as u32,
        lambda,
        blocks,
        truncation: TruncationInfo {
            tol,
            series_cap: DEFAULT_SERIES_CAP as u32,
            max_ell,
            all_converged,
        },
    })
}

/// Partial Parseval sum `Σ_{ℓ ≤ max_ell} β_ℓ²·N_ℓ` (the squared L² norm of
/// the ridge function with the given generator profile), with a convergence
/// flag covering both the β series and the block tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParsevalReport {
    /// Partial sum value (squared norm).
    pub value: Real,
    /// True when every β series converged and the final block contributions
    /// are negligible relative to the total.
    pub converged: bool,
    /// Blocks evaluated (degrees 0..=max_ell).
    pub blocks: usize,
}

pub fn parseval_norm(
    d: usize,
    profile: &HProfile,
    max_ell: usize,
    tol: Real,
) -> Result<ParsevalReport, SpectrumError> {
    if d < 3 {
        return Err(SpectrumError::Domain(format!(
            "Parseval sum requires d ≥ 3, got {d}"
        )));
    }
    let mut total = 0.0f64;
    let mut series_ok = true;
    let mut trailing = [0.0f64; 3];
    for ell in 0..=max_ell {
        let out = beta_series_lenient(d, ell, profile, tol, DEFAULT_SERIES_CAP)?;
        series_ok &= out.converged;
        let contribution = out.value * out.value * block_multiplicity(d, ell)? as Real;
        total += contribution;
        trailing[ell % 3] = contribution;
    }
    // Converged when the trailing blocks are negligible against the total.
    let tail_small = trailing
        .iter()
        .all(|&c| c <= tol * total.max(f64::MIN_POSITIVE));
    Ok(ParsevalReport {
        value: total,
        converged: series_ok && tail_small,
        blocks: max_ell + 1,
    })
}

/// Projection remainder after the first `r` eigenvalue blocks, with
/// truncation diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemainderReport {
    /// `R(f, r) = √(Σ β_ℓ²N_ℓ over blocks outside the first r)`, a lower
    /// bound on the true remainder when not converged.
    pub value: Real,
    /// True when every scanned tail met the stopping rule before the degree
    /// cap.
    pub converged: bool,
    /// Upper bracket from a geometric tail estimate; infinite when the tail
    /// gave no usable decay ratio.
    pub bracket_high: Real,
    /// Degree blocks accumulated into the remainder.
    pub blocks_used: usize,
}

/// Sum one parity chain of remainder contributions. Returns
/// (sum, blocks_used, converged, tail_estimate).
fn remainder_chain<I: Iterator<Item = usize>>(
    d: usize,
    profile: &HProfile,
    degrees: I,
    tol: Real,
) -> Result<(Real, usize, bool, Real), SpectrumError> {
    let mut sum = 0.0f64;
    let mut used = 0usize;
    let mut streak = 0usize;
    let mut prev_contribution = 0.0f64;
    let mut last_contribution = 0.0f64;
    for ell in degrees {
        let out = beta_series_lenient(d, ell, profile, tol, DEFAULT_SERIES_CAP)?;
        let contribution = out.value * out.value * block_multiplicity(d, ell)? as Real;
        sum += contribution;
        used += 1;
        if contribution > 0.0 {
            prev_contribution = last_contribution;
            last_contribution = contribution;
        }
        if contribution <= tol * sum.max(f64::MIN_POSITIVE) {
            streak += 1;
            if streak == 3 {
                return Ok((sum, used, true, 0.0));
            }
        } else {
            streak = 0;
        }
    }
    // Degree cap hit: bracket the tail by geometric extrapolation of the
    // last observed contribution ratio.
    let tail = if prev_contribution > 0.0 && last_contribution > 0.0 {
        let q = last_contribution / prev_contribution;
        if q < 1.0 {
            last_contribution * q / (1.0 - q)
        } else {
            f64::INFINITY
        }
    } else {
        f64::INFINITY
    };
    Ok((sum, used, false, tail))
}

/// `R(f, r)`: the L² mass of the ridge function with generator `profile`
/// outside the first `r` eigenvalue blocks of the limiting kernel.
///
/// Blocks follow the kernel's eigenvalue ordering `ℓ = 1, 0, 2, 4, …`; odd
/// degrees ≥ 3 lie in the kernel's null space, so any odd-degree target mass
/// stays in the remainder for every `r`.
pub fn projection_remainder(
    d: usize,
    profile: &HProfile,
    r: usize,
    tol: Real,
) -> Result<RemainderReport, SpectrumError> {
    if r < 1 {
        return Err(SpectrumError::Domain(
            "remainder index r must be ≥ 1".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(SpectrumError::Domain(format!(
            "tail tolerance {tol} must be positive"
        )));
    }
    let included = block_degrees(r);
    // Even-and-degree-1 chain in eigenvalue order, minus the included blocks.
    let even_tail = std::iter::once(1usize)
        .chain((0..=DEFAULT_BLOCK_CAP).step_by(2))
        .filter(|ell| !included.contains(ell));
    let (even_sum, even_used, even_ok, even_tail_est) =
        remainder_chain(d, profile, even_tail, tol)?;
    let (odd_sum, odd_used, odd_ok, odd_tail_est) = if profile.has_high_odd_terms() {
        let odd_tail = (3..=DEFAULT_BLOCK_CAP).step_by(2);
        remainder_chain(d, profile, odd_tail, tol)?
    } else {
        (0.0, 0, true, 0.0)
    };
    let sum = even_sum + odd_sum;
    let converged = even_ok && odd_ok;
    let bracket_high = (sum + even_tail_est + odd_tail_est).sqrt();
    Ok(RemainderReport {
        value: sum.sqrt(),
        converged,
        bracket_high,
        blocks_used: even_used + odd_used,
    })
}

/// Parameters of the convergence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// Inverse-time step parameter θ ∈ (0, 1/4).
    pub theta: Real,
    /// Initialization-quality parameter δ ∈ (0, 1); `None` selects the
    /// symmetric-initialization specialization.
    pub delta: Option<Real>,
    /// Label-noise standard deviation τ ≥ 0.
    pub tau: Real,
    /// Target norm `‖f*‖`.
    pub f_star_norm: Real,
    /// Eigen-block index ℓ ≥ 1 the bound contracts against.
    pub ell: usize,
    /// Training horizon T.
    pub horizon: u64,
}

impl BoundParams {
    pub fn symmetric(&self) -> bool {
        self.delta.is_none()
    }

    /// The bound's additive constant
    /// `c₁ = θ·e^{2θ}·√(((2−4θ)/(1−4θ))·v)` with `v = ‖f*‖² + τ²` in
    /// symmetric mode and `v = (‖f*‖²+1)/δ² + τ²` otherwise.
    pub fn c1(&self) -> Result<Real, SpectrumError> {
        if !(self.theta > 0.0 && self.theta < 0.25) {
            return Err(SpectrumError::Domain(format!(
                "theta {} outside (0, 1/4); the constant diverges at 1/4",
                self.theta
            )));
        }
        let v = match self.delta {
            None => self.f_star_norm.powi(2) + self.tau.powi(2),
            Some(delta) => {
                if !(delta > 0.0 && delta < 1.0) {
                    return Err(SpectrumError::Domain(format!(
                        "delta {delta} outside (0, 1)"
                    )));
                }
                (self.f_star_norm.powi(2) + 1.0) / (delta * delta) + self.tau.powi(2)
            }
        };
        let ratio = (2.0 - 4.0 * self.theta) / (1.0 - 4.0 * self.theta);
        Ok(self.theta * (2.0 * self.theta).exp() * (ratio * v).sqrt())
    }

    /// Initial error scale `‖Δ_0‖`: `‖f*‖` under symmetric initialization,
    /// `√(‖f*‖²+1)/δ` otherwise.
    pub fn delta0_norm(&self) -> Real {
        match self.delta {
            None => self.f_star_norm,
            Some(delta) => (self.f_star_norm.powi(2) + 1.0).sqrt() / delta,
        }
    }
}

/// Evaluate the convergence bound
/// `∏_{k<t}(1 − η_k λ_ℓ)·‖Δ_0‖ + R + 2c₁` at iteration `t`, with the product
/// accumulated in log space.
pub fn theorem_bound(
    params: &BoundParams,
    schedule: StepSchedule,
    table: &SpectralTable,
    remainder: Real,
    t: u64,
) -> Result<Real, SpectrumError> {
    let c1 = params.c1()?;
    let lam = table.eigenvalue(params.ell).ok_or_else(|| {
        SpectrumError::Domain(format!(
            "eigen-block index {} outside the table's {} blocks",
            params.ell,
            table.blocks.len()
        ))
    })?;
    let mut ln_prod = 0.0f64;
    for k in 0..t {
        let step = schedule.eta(k) * lam;
        if step >= 1.0 {
            return Err(SpectrumError::Precondition(format!(
                "η_k·λ_ℓ = {step} ≥ 1 at k = {k}; the contraction factor leaves (0, 1]"
            )));
        }
        ln_prod += (-step).ln_1p();
    }
    Ok(ln_prod.exp() * params.delta0_norm() + remainder + 2.0 * c1)
}

/// The width requirement `c·(d² + ((T+1)^{2θ}/θ)⁹ + ((log T)/δ)⁹)`, carried
/// in log space with the three summands itemized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthReport {
    /// `c·(sum of the three summands)`; may overflow to `+∞` (see
    /// `ln_value`).
    pub value: Real,
    /// Exact log of the total, finite even when `value` overflows.
    pub ln_value: Real,
    /// `d²`.
    pub dimension_term: Real,
    /// `((T+1)^{2θ}/θ)⁹`.
    pub horizon_term: Real,
    /// `((log T)/δ)⁹` with the log clamped below by 1.
    pub log_term: Real,
    /// True when `log T < 1` forced the clamp.
    pub log_clamped: bool,
}

pub fn required_width(
    d: usize,
    horizon: u64,
    theta: Real,
    delta: Real,
    c: Real,
) -> Result<WidthReport, SpectrumError> {
    if d == 0 || horizon == 0 {
        return Err(SpectrumError::Domain(
            "width requirement needs d ≥ 1 and T ≥ 1".into(),
        ));
    }
    if !(theta > 0.0 && theta < 0.25) || !(delta > 0.0 && delta < 1.0) || !(c > 0.0) {
        return Err(SpectrumError::Domain(format!(
            "width parameters out of range: theta {theta}, delta {delta}, c {c}"
        )));
    }
    let ln_d2 = 2.0 * (d as Real).ln();
    let ln_horizon = 9.0 * (2.0 * theta * ((horizon as Real) + 1.0).ln() - theta.ln());
    let ln_t = (horizon as Real).ln();
    let log_clamped = ln_t < 1.0;
    let ln_log = 9.0 * (ln_t.max(1.0).ln() - delta.ln());
    // log-sum-exp of the three summands.
    let peak = ln_d2.max(ln_horizon).max(ln_log);
    let ln_sum = peak
        + ((ln_d2 - peak).exp() + (ln_horizon - peak).exp() + (ln_log - peak).exp()).ln();
    let ln_value = c.ln() + ln_sum;
    Ok(WidthReport {
        value: ln_value.exp(),
        ln_value,
        dimension_term: (d as Real) * (d as Real),
        horizon_term: ln_horizon.exp(),
        log_term: ln_log.exp(),
        log_clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn table_structure_and_leading_eigenvalue() {
        let table = ntk_spectrum(5, 4, 1e-14).unwrap();
        assert_eq!(table.d, 5);
        assert_eq!(table.lambda, 1.5);
        assert_abs_diff_eq!(table.eigenvalue(1).unwrap(), 0.05, epsilon = 1e-12);
        let b = &table.blocks[0];
        assert_eq!((b.ell, b.multiplicity, b.eigen_index_range), (1, 5, (1, 5)));
        assert_eq!(table.blocks[1].ell, 0);
        assert_eq!(table.blocks[1].eigen_index_range, (6, 6));
        assert_eq!(table.blocks[2].ell, 2);
        assert_eq!(table.blocks[2].eigen_index_range, (7, 20));
        assert_eq!(table.blocks[3].ell, 4);
        // N_4(d=5) = 55, so the degree-4 block covers indices 21..=75.
        assert_eq!(table.blocks[3].eigen_index_range, (21, 75));
        // λ_2 = β_0 > λ_3 = β_2.
        assert!(table.eigenvalue(2).unwrap() > table.eigenvalue(3).unwrap());
        // Degree-ordered lookups agree with block lookups.
        assert_eq!(table.beta_of_degree(0), table.eigenvalue(2));
        assert_eq!(table.eigenvalue_at_index(3), table.eigenvalue(1));
        assert_eq!(table.eigenvalue_at_index(6), table.eigenvalue(2));
        assert_eq!(table.eigenvalue_at_index(7), table.eigenvalue(3));
        assert_eq!(table.eigenvalue_at_index(75), table.eigenvalue(4));
        assert_eq!(table.eigenvalue_at_index(76), None);
        let d3 = ntk_spectrum(3, 1, 1e-14).unwrap();
        assert_abs_diff_eq!(d3.eigenvalue(1).unwrap(), 1.0 / 12.0, epsilon = 1e-12);
    }

    #[test]
    fn table_round_trips_through_json() {
        let table = ntk_spectrum(5, 3, 1e-14).unwrap();
        let json = serde_json::to_string(&table).unwrap();
        let back: SpectralTable = serde_json::from_str(&json).unwrap();
        assert_eq!(table, back);
    }

    #[test]
    fn parseval_of_linear_profile() {
        for &d in &[3usize, 5, 10] {
            let rep = parseval_norm(d, &HProfile::Linear, 40, 1e-14).unwrap();
            assert!(
                (rep.value - 1.0 / d as Real).abs() < 1e-10,
                "Parseval {} at d = {d}",
                rep.value
            );
            assert!(rep.converged);
        }
        let c = parseval_norm(5, &HProfile::Constant, 10, 1e-14).unwrap();
        assert_abs_diff_eq!(c.value, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn remainders_of_reference_targets() {
        for r in 1..=4usize {
            let rep = projection_remainder(5, &HProfile::Linear, r, 1e-14).unwrap();
            assert_abs_diff_eq!(rep.value, 0.0, epsilon = 1e-12);
            assert!(rep.converged);
        }
        let r1 = projection_remainder(5, &HProfile::Constant, 1, 1e-14).unwrap();
        assert_abs_diff_eq!(r1.value, 1.0, epsilon = 1e-12);
        let r2 = projection_remainder(5, &HProfile::Constant, 2, 1e-14).unwrap();
        assert_abs_diff_eq!(r2.value, 0.0, epsilon = 1e-12);
        // Remainders of the kernel-as-target profile strictly decrease.
        let n1 = projection_remainder(5, &HProfile::Ntk, 1, 1e-14).unwrap();
        let n2 = projection_remainder(5, &HProfile::Ntk, 2, 1e-14).unwrap();
        let n3 = projection_remainder(5, &HProfile::Ntk, 3, 1e-14).unwrap();
        assert!(n1.value > n2.value && n2.value > n3.value);
        assert!(n1.bracket_high >= n1.value);
    }

    #[test]
    fn remainder_pinches_against_parseval() {
        // R(f,r)² + (first r block masses) = ‖f‖².
        let table = ntk_spectrum(5, 6, 1e-14).unwrap();
        let parseval = parseval_norm(5, &HProfile::Ntk, DEFAULT_BLOCK_CAP, 1e-14)
            .unwrap()
            .value;
        for r in 1..=5usize {
            let rem = projection_remainder(5, &HProfile::Ntk, r, 1e-14).unwrap();
            let prefix: Real = table.blocks[..r]
                .iter()
                .map(|b| b.beta * b.beta * b.multiplicity as Real)
                .sum();
            assert_relative_eq!(
                rem.value * rem.value + prefix,
                parseval,
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn bound_constant_matches_frozen_values() {
        let p = BoundParams {
            theta: 0.1,
            delta: None,
            tau: 0.0,
            f_star_norm: 1.0,
            ell: 1,
            horizon: 1000,
        };
        assert_abs_diff_eq!(p.c1().unwrap(), 0.1994542352, epsilon = 1e-9);
        let steep = BoundParams { theta: 0.249, ..p };
        assert_abs_diff_eq!(steep.c1().unwrap(), 6.491048585, epsilon = 1e-8);
        assert!(steep.c1().unwrap() > 10.0 * p.c1().unwrap());
        assert!(BoundParams { theta: 0.25, ..p }.c1().is_err());
        assert!(BoundParams { theta: 0.0, ..p }.c1().is_err());
    }

    #[test]
    fn bound_decreases_from_the_initial_value() {
        let table = ntk_spectrum(5, 3, 1e-14).unwrap();
        let params = BoundParams {
            theta: 0.2,
            delta: None,
            tau: 0.1,
            f_star_norm: 1.0,
            ell: 1,
            horizon: 1000,
        };
        let schedule = StepSchedule::InverseTime { theta: 0.2 };
        let rem = projection_remainder(5, &HProfile::Linear, 1, 1e-14)
            .unwrap()
            .value;
        let at0 = theorem_bound(&params, schedule, &table, rem, 0).unwrap();
        assert_abs_diff_eq!(
            at0,
            params.f_star_norm + rem + 2.0 * params.c1().unwrap(),
            epsilon = 1e-12
        );
        let mut prev = at0;
        for t in [1u64, 10, 100, 1000, 10_000] {
            let b = theorem_bound(&params, schedule, &table, rem, t).unwrap();
            assert!(b < prev, "bound must strictly decrease while λ_ℓ > 0");
            prev = b;
        }
    }

    #[test]
    fn bound_rejects_non_contracting_steps() {
        let mut table = ntk_spectrum(5, 1, 1e-14).unwrap();
        table.blocks[0].beta = 0.9;
        let params = BoundParams {
            theta: 0.1,
            delta: None,
            tau: 0.0,
            f_star_norm: 1.0,
            ell: 1,
            horizon: 10,
        };
        let err = theorem_bound(
            &params,
            StepSchedule::Constant { eta: 1.5 },
            &table,
            0.0,
            5,
        );
        assert!(matches!(err, Err(SpectrumError::Precondition(_))));
        assert!(matches!(
            theorem_bound(&params, StepSchedule::Constant { eta: 0.1 }, &table, 0.0, 5),
            Ok(_)
        ));
        let bad_ell = BoundParams { ell: 7, ..params };
        assert!(matches!(
            theorem_bound(&bad_ell, StepSchedule::Constant { eta: 0.1 }, &table, 0.0, 5),
            Err(SpectrumError::Domain(_))
        ));
    }

    #[test]
    fn width_requirement_shape() {
        let w = required_width(5, 1000, 0.1, 0.1, 1.0).unwrap();
        assert_eq!(w.dimension_term, 25.0);
        assert!(w.horizon_term.is_finite() && w.horizon_term > 0.0);
        assert!(w.log_term.is_finite() && w.log_term > 0.0);
        assert!(!w.log_clamped);
        assert_relative_eq!(
            w.value,
            w.dimension_term + w.horizon_term + w.log_term,
            max_relative = 1e-12
        );
        // Monotone in T and in 1/δ.
        let w2 = required_width(5, 2000, 0.1, 0.1, 1.0).unwrap();
        assert!(w2.value > w.value);
        let w3 = required_width(5, 1000, 0.1, 0.05, 1.0).unwrap();
        assert!(w3.value > w.value);
        // Doubling d scales the d² summand by exactly 4.
        let w4 = required_width(10, 1000, 0.1, 0.1, 1.0).unwrap();
        assert_eq!(w4.dimension_term, 100.0);
        // Tiny horizons clamp the log term and say so.
        let w5 = required_width(5, 1, 0.1, 0.1, 1.0).unwrap();
        assert!(w5.log_clamped);
        assert_relative_eq!(w5.log_term, 1e9, max_relative = 1e-9);
    }
}
