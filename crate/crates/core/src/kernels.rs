//! Closed-form and empirical kernels, sign-flip statistics, and the per-step
//! residual sandwich.
//!
//! The limiting kernel is `Φ(x,x̃) = h(⟨x,x̃⟩)` with
//! `h(u) = (u/2π)(π − arccos u)`. The empirical kernel replaces the Gaussian
//! expectation with the width-`m` average of activation-indicator products.
//! For one SGD step taken on `(X_t, y_t)`, the change of `f` at any probe `x`
//! is sandwiched between `η(H_t+M_t)g` and `η(H_t+L_t)g`, where `g` is the
//! step's residual and `L_t`/`M_t` collect indicator changes over the rows
//! with positive/negative outer sign.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::NetworkError;
use crate::network::NetworkState;
use crate::stream::sample_sphere;
use crate::unit::UnitVector;
use crate::{dot, Real, Scalar};

/// `h(u) = (u/2π)(π − arccos u)` with `u` clamped to [−1, 1].
pub fn ntk_h<F: Scalar>(u: F) -> F {
    let u = u.min(F::one()).max(-F::one());
    u / (F::from_f64_lossy(2.0) * F::PI()) * (F::PI() - u.acos())
}

/// Limiting kernel `Φ(x, x̃) = h(⟨x, x̃⟩)` for unit vectors.
pub fn ntk_phi<F: Scalar>(x: &UnitVector<F>, x_tilde: &UnitVector<F>) -> F {
    ntk_h(dot(x.as_slice(), x_tilde.as_slice()))
}

/// A pair of unit-norm probe points for kernel evaluation.
#[derive(Debug, Clone)]
pub struct KernelProbe<F> {
    pub x: UnitVector<F>,
    pub x_tilde: UnitVector<F>,
}

/// Empirical kernel `⟨x,x̃⟩ · (1/m) Σᵢ 1{⟨Wᵢ,x⟩≥0} 1{⟨Wᵢ,x̃⟩≥0}`, using the
/// current weights or the initialization per `at_init`.
pub fn empirical_kernel<F: Scalar>(
    state: &NetworkState<F>,
    probe: &KernelProbe<F>,
    at_init: bool,
) -> F {
    let u = dot(probe.x.as_slice(), probe.x_tilde.as_slice());
    let mask_x = state.activation_mask(probe.x.as_slice(), at_init);
    let mask_t = state.activation_mask(probe.x_tilde.as_slice(), at_init);
    let both = mask_x
        .iter()
        .zip(&mask_t)
        .filter(|(a, b)| **a && **b)
        .count();
    u * F::from_usize(both).unwrap() / F::from_usize(state.width()).unwrap()
}

/// Count of rows whose activation indicator at `x` differs between the
/// current weights and the initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct SignFlipStat<F> {
    /// Probe point the count was taken at.
    pub x: Vec<F>,
    /// Rows with `1{⟨Wᵢ(t),x⟩≥0} ≠ 1{⟨Wᵢ(0),x⟩≥0}`.
    pub count: usize,
    /// `count / m`.
    pub fraction: F,
}

/// Sign-flip statistic `S_t(x)` relative to the initialization.
pub fn sign_flip_count<F: Scalar>(state: &NetworkState<F>, x: &UnitVector<F>) -> SignFlipStat<F> {
    let now = state.activation_mask(x.as_slice(), false);
    let init = state.activation_mask(x.as_slice(), true);
    let count = now.iter().zip(&init).filter(|(a, b)| a != b).count();
    SignFlipStat {
        x: x.as_slice().to_vec(),
        count,
        fraction: F::from_usize(count).unwrap() / F::from_usize(state.width()).unwrap(),
    }
}

/// All per-step sandwich quantities at one probe point.
///
/// With `g = y_t − f(X_t;W(t))`: `lower = η(H+M)g`, `upper = η(H+L)g`,
/// `lower ≤ f_change ≤ upper`, and `ε = −f_change + ηHg` satisfies
/// `−ηLg ≤ ε ≤ −ηMg`. These orientations hold for either sign of `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport<F> {
    /// `f(x;W(t+1)) − f(x;W(t))`.
    pub f_change: F,
    /// `H_t(x, X_t)` (both indicators at `W(t)`).
    pub h: F,
    /// Indicator-change kernel over rows with positive outer sign.
    pub l: F,
    /// Indicator-change kernel over rows with negative outer sign.
    pub m: F,
    /// `−f_change + η·H·g`.
    pub epsilon: F,
    /// `η(H+M)g`.
    pub lower: F,
    /// `η(H+L)g`.
    pub upper: F,
}

/// Evaluate the residual sandwich at probe `x` for the step that took `prev`
/// to `next` on `sample = (X_t, y_t)` with step size `eta`.
///
/// `next` must be `prev` advanced by exactly one step; anything else is a
/// snapshot-mismatch usage error.
pub fn residual_bounds<F: Scalar>(
    prev: &NetworkState<F>,
    next: &NetworkState<F>,
    sample: (&UnitVector<F>, F),
    eta: F,
    x: &UnitVector<F>,
) -> Result<ResidualReport<F>, NetworkError> {
    if next.iteration() != prev.iteration() + 1 {
        return Err(NetworkError::SnapshotMismatch(format!(
            "next snapshot at t = {} is not prev (t = {}) advanced by one step",
            next.iteration(),
            prev.iteration()
        )));
    }
    if prev.width() != next.width()
        || prev.dim() != next.dim()
        || prev.outer_signs() != next.outer_signs()
    {
        return Err(NetworkError::SnapshotMismatch(
            "snapshots disagree in shape or outer signs".into(),
        ));
    }
    let (x_t, y_t) = sample;
    if x_t.dim() != prev.dim() || x.dim() != prev.dim() {
        return Err(NetworkError::Dimension(format!(
            "probe/sample dimension must be {}",
            prev.dim()
        )));
    }

    let m_f = F::from_usize(prev.width()).unwrap();
    let u = dot(x.as_slice(), x_t.as_slice());
    let g = y_t - prev.forward(x_t);

    let mask_prev_x = prev.activation_mask(x.as_slice(), false);
    let mask_next_x = next.activation_mask(x.as_slice(), false);
    let mask_prev_s = prev.activation_mask(x_t.as_slice(), false);

    let mut h_count = 0i64;
    let mut l_count = 0i64;
    let mut m_count = 0i64;
    for i in 0..prev.width() {
        if !mask_prev_s[i] {
            continue;
        }
        if mask_prev_x[i] {
            h_count += 1;
        }
        let change = (mask_next_x[i] as i64) - (mask_prev_x[i] as i64);
        if prev.outer_signs()[i] > 0 {
            l_count += change;
        } else {
            m_count += change;
        }
    }
    let h = u * F::from_i64(h_count).unwrap() / m_f;
    let l = u * F::from_i64(l_count).unwrap() / m_f;
    let m = u * F::from_i64(m_count).unwrap() / m_f;

    let f_change = next.forward(x) - prev.forward(x);
    let lower = eta * (h + m) * g;
    let upper = eta * (h + l) * g;
    let epsilon = -f_change + eta * h * g;
    Ok(ResidualReport {
        f_change,
        h,
        l,
        m,
        epsilon,
        lower,
        upper,
    })
}

/// Which sampled sup-norm deviation to estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviationMode {
    /// `|H_0(x,x̃) − Φ(x,x̃)|` over random pairs.
    H0VsPhi,
    /// `|H_t(x,x̃) − H_0(x,x̃)|` over random pairs.
    HtVsH0,
    /// `|(1/m) Σᵢ 1{|⟨Wᵢ(0),x⟩| ≤ R} − P(|N(0,1)| ≤ R)|` over random `(x, R)`
    /// with `R` log-uniform in [1e−3, 3].
    BandIndicator,
}

/// The probe attaining the reported maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum DeviationProbe {
    Pair { x: Vec<Real>, x_tilde: Vec<Real> },
    Band { x: Vec<Real>, radius: Real },
}

/// Sampled estimate of a sup-norm deviation. The reported maximum over a
/// finite probe set is a lower bound on the true supremum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub mode: DeviationMode,
    pub m: usize,
    pub d: usize,
    pub n_probes: usize,
    pub max_abs: Real,
    pub probe: DeviationProbe,
}

/// Estimate a sampled sup-norm deviation with `n_probes` fresh probes.
pub fn kernel_sup_deviation<F: Scalar, R: Rng>(
    state: &NetworkState<F>,
    n_probes: usize,
    rng: &mut R,
    mode: DeviationMode,
) -> DeviationReport {
    assert!(n_probes >= 1, "need at least one probe");
    let d = state.dim();
    let mut max_abs = -1.0f64;
    let mut best: Option<DeviationProbe> = None;
    for _ in 0..n_probes {
        let (dev, probe) = match mode {
            DeviationMode::H0VsPhi | DeviationMode::HtVsH0 => {
                let probe = KernelProbe {
                    x: sample_sphere::<F, R>(d, rng),
                    x_tilde: sample_sphere::<F, R>(d, rng),
                };
                let dev = match mode {
                    DeviationMode::H0VsPhi => {
                        empirical_kernel(state, &probe, true) - ntk_phi(&probe.x, &probe.x_tilde)
                    }
                    _ => {
                        empirical_kernel(state, &probe, false)
                            - empirical_kernel(state, &probe, true)
                    }
                };
                (
                    dev.to_f64_lossy().abs(),
                    DeviationProbe::Pair {
                        x: probe.x.iter().map(|v| v.to_f64_lossy()).collect(),
                        x_tilde: probe.x_tilde.iter().map(|v| v.to_f64_lossy()).collect(),
                    },
                )
            }
            DeviationMode::BandIndicator => {
                let x = sample_sphere::<F, R>(d, rng);
                let (lo, hi) = (1e-3f64.ln(), 3f64.ln());
                let radius = (lo + rng.gen::<f64>() * (hi - lo)).exp();
                let r_f = F::from_f64_lossy(radius);
                let inside = (0..state.width())
                    .filter(|&i| dot(state.row_init(i), x.as_slice()).abs() <= r_f)
                    .count();
                let frac = inside as f64 / state.width() as f64;
                let gaussian_mass = f64::erf_fn(radius / 2f64.sqrt());
                (
                    (frac - gaussian_mass).abs(),
                    DeviationProbe::Band {
                        x: x.iter().map(|v| v.to_f64_lossy()).collect(),
                        radius,
                    },
                )
            }
        };
        if dev > max_abs {
            max_abs = dev;
            best = Some(probe);
        }
    }
    DeviationReport {
        mode,
        m: state.width(),
        d,
        n_probes,
        max_abs,
        probe: best.expect("n_probes ≥ 1"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, StreamKind, StreamRng};
    use crate::unit::InputPolicy;
    use approx::assert_abs_diff_eq;

    fn rng(seed: u64) -> StreamRng {
        derive_stream(seed, StreamKind::Audit, 0)
    }

    fn unit(v: Vec<f64>) -> UnitVector<f64> {
        UnitVector::new(v, InputPolicy::Normalize).unwrap()
    }

    #[test]
    fn ntk_h_closed_form_values() {
        assert_abs_diff_eq!(ntk_h(1.0f64), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(ntk_h(0.0f64), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ntk_h(0.5f64), 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ntk_h(-1.0f64), 0.0, epsilon = 1e-15);
        // Clamping absorbs rounding overshoot.
        assert_abs_diff_eq!(ntk_h(1.0 + 1e-12), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(ntk_h(-1.0 - 1e-12), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn phi_on_probe_pairs() {
        let x = unit(vec![1.0, 0.0]);
        let y = unit(vec![0.0, 1.0]);
        assert_eq!(ntk_phi(&x, &y), 0.0);
        assert_abs_diff_eq!(ntk_phi(&x, &x), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn empirical_kernel_structure() {
        let state = NetworkState::<f64>::init_iid(512, 4, 1).unwrap();
        let x = unit(vec![1.0, 0.0, 0.0, 0.0]);
        let y = unit(vec![0.0, 1.0, 0.0, 0.0]);
        let probe = KernelProbe { x: x.clone(), x_tilde: y };
        // Orthogonal prefactor kills the kernel exactly.
        assert_eq!(empirical_kernel(&state, &probe, false), 0.0);
        // Diagonal value is the active fraction.
        let diag = KernelProbe { x: x.clone(), x_tilde: x.clone() };
        let v = empirical_kernel(&state, &diag, false);
        let active = state
            .activation_mask(x.as_slice(), false)
            .iter()
            .filter(|&&b| b)
            .count();
        assert_eq!(v, active as f64 / 512.0);
        assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn initialization_kernel_approximates_phi() {
        let state = NetworkState::<f64>::init_iid(100_000, 5, 7).unwrap();
        let mut r = rng(2);
        for _ in 0..100 {
            let probe = KernelProbe {
                x: sample_sphere(5, &mut r),
                x_tilde: sample_sphere(5, &mut r),
            };
            let h0 = empirical_kernel(&state, &probe, true);
            let phi = ntk_phi(&probe.x, &probe.x_tilde);
            assert!(
                (h0 - phi).abs() < 0.02,
                "H0 = {h0}, Phi = {phi} at width 1e5"
            );
        }
    }

    #[test]
    fn sign_flips_track_weight_changes() {
        let mut state = NetworkState::<f64>::init_iid(64, 3, 3).unwrap();
        let x = unit(vec![0.3, -0.5, 0.9]);
        assert_eq!(sign_flip_count(&state, &x).count, 0);
        state.scale_weights(2.0);
        assert_eq!(sign_flip_count(&state, &x).count, 0);
        state.negate_weights();
        let stat = sign_flip_count(&state, &x);
        assert_eq!(stat.count, 64);
        assert_eq!(stat.fraction, 1.0);
    }

    #[test]
    fn zero_residual_step_pinches_the_sandwich() {
        let mut state = NetworkState::<f64>::init_iid(16, 3, 5).unwrap();
        let x_t = unit(vec![1.0, 0.5, -0.5]);
        let y = state.forward(&x_t);
        let prev = state.clone();
        state.sgd_step((&x_t, y), 0.3).unwrap();
        let probe = unit(vec![-0.2, 1.0, 0.4]);
        let rep = residual_bounds(&prev, &state, (&x_t, y), 0.3, &probe).unwrap();
        assert_eq!(rep.f_change, 0.0);
        assert_eq!(rep.epsilon, 0.0);
        assert_eq!(rep.lower, 0.0);
        assert_eq!(rep.upper, 0.0);
    }

    #[test]
    fn sandwich_holds_on_seeded_steps() {
        let mut state = NetworkState::<f64>::init_symmetric(64, 3, 11).unwrap();
        let mut r = rng(4);
        for step in 0..200 {
            let x_t: UnitVector<f64> = sample_sphere(3, &mut r);
            let y = f64::standard_normal(&mut r);
            let prev = state.clone();
            let rep_step = state.sgd_step((&x_t, y), 0.2).unwrap();
            for _ in 0..5 {
                let probe: UnitVector<f64> = sample_sphere(3, &mut r);
                let rep =
                    residual_bounds(&prev, &state, (&x_t, y), rep_step.eta, &probe).unwrap();
                assert!(
                    rep.lower <= rep.f_change + 1e-9 && rep.f_change <= rep.upper + 1e-9,
                    "sandwich violated at step {step}: {} ≤ {} ≤ {}",
                    rep.lower,
                    rep.f_change,
                    rep.upper
                );
                // ε identity is a definition; check it to rounding.
                let g = y - prev.forward(&x_t);
                assert_abs_diff_eq!(
                    rep.epsilon,
                    -rep.f_change + rep_step.eta * rep.h * g,
                    epsilon = 1e-12
                );
                // If no indicators moved at the probe, the sandwich pinches.
                if rep.l == 0.0 && rep.m == 0.0 {
                    assert_abs_diff_eq!(
                        rep.f_change,
                        rep_step.eta * rep.h * g,
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn flip_counts_dominate_kernel_changes() {
        let mut state = NetworkState::<f64>::init_iid(32, 3, 13).unwrap();
        let mut r = rng(6);
        for _ in 0..100 {
            let x_t: UnitVector<f64> = sample_sphere(3, &mut r);
            let y = f64::standard_normal(&mut r);
            let prev = state.clone();
            state.sgd_step((&x_t, y), 0.5).unwrap();
            for _ in 0..3 {
                let x: UnitVector<f64> = sample_sphere(3, &mut r);
                let x_tilde: UnitVector<f64> = sample_sphere(3, &mut r);
                // |L|, |M| ≤ (S_t(x) + S_{t+1}(x))/m with flips against W(0).
                let rep = residual_bounds(&prev, &state, (&x_t, y), 0.5, &x).unwrap();
                let s_t = sign_flip_count(&prev, &x).count;
                let s_t1 = sign_flip_count(&state, &x).count;
                let budget = (s_t + s_t1) as f64 / 32.0;
                assert!(rep.l.abs() <= budget, "L = {} > {budget}", rep.l);
                assert!(rep.m.abs() <= budget, "M = {} > {budget}", rep.m);
                // |H_t − H_0| ≤ (S_t(x) + S_t(x̃))/m.
                let probe = KernelProbe { x: x.clone(), x_tilde: x_tilde.clone() };
                let drift = (empirical_kernel(&state, &probe, false)
                    - empirical_kernel(&state, &probe, true))
                .abs();
                let s_x = sign_flip_count(&state, &x).count;
                let s_xt = sign_flip_count(&state, &x_tilde).count;
                assert!(drift <= (s_x + s_xt) as f64 / 32.0);
            }
        }
    }

    #[test]
    fn snapshot_mismatch_is_rejected() {
        let state = NetworkState::<f64>::init_iid(8, 3, 17).unwrap();
        let x = unit(vec![1.0, 0.0, 0.0]);
        let err = residual_bounds(&state, &state, (&x, 0.5), 0.2, &x);
        assert!(matches!(err, Err(NetworkError::SnapshotMismatch(_))));
    }

    #[test]
    fn deviation_modes_behave() {
        let state = NetworkState::<f64>::init_iid(10_000, 5, 19).unwrap();
        let mut r = rng(8);
        let rep = kernel_sup_deviation(&state, 200, &mut r, DeviationMode::HtVsH0);
        assert_eq!(rep.max_abs, 0.0, "untouched weights have zero kernel drift");
        let rep = kernel_sup_deviation(&state, 200, &mut r, DeviationMode::H0VsPhi);
        assert!(rep.max_abs < 0.05, "H0 vs Phi deviation {}", rep.max_abs);
        assert!(matches!(rep.probe, DeviationProbe::Pair { .. }));
        let rep = kernel_sup_deviation(&state, 200, &mut r, DeviationMode::BandIndicator);
        assert!(rep.max_abs < 0.02, "band deviation {}", rep.max_abs);
        assert!(matches!(rep.probe, DeviationProbe::Band { .. }));
        let json = serde_json::to_string(&rep).unwrap();
        let back: DeviationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(rep, back);
    }
}
