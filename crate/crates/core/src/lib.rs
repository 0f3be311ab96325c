//! One-pass SGD for wide two-layer ReLU networks, with exact NTK spectral
//! diagnostics on the unit sphere.
//!
//! The crate is organized around five subsystems:
//!
//! - [`network`]: the width-`m` two-layer ReLU model `f(x;W) = (1/√m) Σ aᵢ σ(⟨Wᵢ,x⟩)`
//!   and its streaming SGD update, with checkpointing.
//! - [`stream`]: i.i.d. data sources `y = f*(X) + e` over the unit sphere (or an
//!   empirical dataset such as MNIST 0/1), for all supported target families.
//! - [`kernels`]: the closed-form kernel `Φ`, finite-width kernels `H_t`/`L_t`/`M_t`,
//!   sign-flip statistics, one-step residual sandwich checks, and sampled
//!   sup-deviation estimators.
//! - [`spectrum`]: Gegenbauer machinery, the `β_ℓ` coefficient series, eigenvalue
//!   tables, projection remainders, Parseval checks, and the convergence-bound
//!   evaluator.
//! - [`experiment`]: seeded multi-run training orchestration with Monte Carlo error
//!   tracking, audits, aggregation, and bound comparison.
//!
//! Numerical kernels are generic over the floating-point type through [`Scalar`];
//! the harness, tables, and CLI use the crate-level alias [`Real`] (`f64`).

pub mod error;
pub mod experiment;
pub mod kernels;
pub mod network;
pub mod rng;
pub mod spectrum;
pub mod stream;
pub mod unit;

use std::fmt;
use std::iter::Sum;

use num_traits::float::FloatConst;
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Default precision used by tables, traces, configuration, and the CLI.
pub type Real = f64;

/// Floating-point scalar usable by the numerical kernels.
///
/// Implemented for `f32` and `f64`. Special functions (log-gamma, erf) are
/// evaluated in `f64` and converted, which is precision-correct for both types.
pub trait Scalar:
    Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum<Self>
    + for<'a> Sum<&'a Self>
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Unit-norm validation tolerance for this precision.
    fn unit_tolerance() -> Self;

    /// Draw one standard-normal variate.
    fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> Self;

    /// Lossless-enough conversion from `f64` (saturating at infinities for `f32`).
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(|| {
            if v > 0.0 {
                Self::infinity()
            } else {
                Self::neg_infinity()
            }
        })
    }

    /// Widening conversion to `f64` (exact for `f32` and `f64`).
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Natural log of the gamma function.
    #[inline]
    fn ln_gamma_fn(self) -> Self {
        Self::from_f64_lossy(statrs::function::gamma::ln_gamma(self.to_f64_lossy()))
    }

    /// Error function.
    #[inline]
    fn erf_fn(self) -> Self {
        Self::from_f64_lossy(statrs::function::erf::erf(self.to_f64_lossy()))
    }
}

impl Scalar for f64 {
    #[inline]
    fn unit_tolerance() -> Self {
        1e-9
    }
    #[inline]
    fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(rand_distr::StandardNormal)
    }
}

impl Scalar for f32 {
    #[inline]
    fn unit_tolerance() -> Self {
        1e-5
    }
    #[inline]
    fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(rand_distr::StandardNormal)
    }
}

/// Dot product with four-way accumulator splitting.
///
/// The fixed association order keeps results bit-deterministic while letting the
/// compiler schedule independent multiply-adds (the row/input products in the hot
/// training loop all funnel through here).
#[inline]
pub fn dot<F: Scalar>(xs: &[F], ys: &[F]) -> F {
    debug_assert_eq!(xs.len(), ys.len());
    let mut cx = xs.chunks_exact(4);
    let mut cy = ys.chunks_exact(4);
    let (mut s0, mut s1, mut s2, mut s3) = (F::zero(), F::zero(), F::zero(), F::zero());
    for (a, b) in (&mut cx).zip(&mut cy) {
        s0 = s0 + a[0] * b[0];
        s1 = s1 + a[1] * b[1];
        s2 = s2 + a[2] * b[2];
        s3 = s3 + a[3] * b[3];
    }
    let mut s = (s0 + s2) + (s1 + s3);
    for (&a, &b) in cx.remainder().iter().zip(cy.remainder()) {
        s = s + a * b;
    }
    s
}

/// Euclidean norm of a slice.
#[inline]
pub fn norm2<F: Scalar>(xs: &[F]) -> F {
    dot(xs, xs).sqrt()
}

/// Format a float with 12 significant digits (scientific), the fixed format used
/// by every CSV/JSON artifact so outputs diff reproducibly.
pub fn fmt_g12(v: Real) -> String {
    if v == 0.0 {
        // Normalize the sign of zero so traces never differ on -0.
        return "0.00000000000e0".to_string();
    }
    format!("{:.11e}", v)
}
