//! Unit-norm input vectors.
//!
//! Every input the network or the kernels consume must lie on the unit sphere.
//! [`UnitVector`] enforces that at construction time, so hot paths never
//! re-validate. Non-unit inputs are rejected by default; callers that want
//! silent normalization opt in through [`InputPolicy::Normalize`].

use std::ops::Deref;

use crate::error::StreamError;
use crate::{norm2, Scalar};

/// What to do with an input whose norm deviates from 1 beyond tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputPolicy {
    /// Return an error (the default; catches data-pipeline bugs).
    Reject,
    /// Rescale the vector to unit norm.
    Normalize,
}

/// A validated unit-norm vector.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector<F>(Vec<F>);

impl<F: Scalar> UnitVector<F> {
    /// Validate (or normalize, per `policy`) and wrap a vector.
    pub fn new(mut v: Vec<F>, policy: InputPolicy) -> Result<Self, StreamError> {
        if v.is_empty() {
            return Err(StreamError::Dimension("empty input vector".into()));
        }
        let n = norm2(&v);
        let dev = (n - F::one()).abs();
        if dev <= F::unit_tolerance() {
            return Ok(UnitVector(v));
        }
        match policy {
            InputPolicy::Reject => Err(StreamError::NonUnit {
                deviation: dev.to_f64_lossy(),
            }),
            InputPolicy::Normalize => {
                if n == F::zero() || !n.is_finite() {
                    return Err(StreamError::NonUnit {
                        deviation: dev.to_f64_lossy(),
                    });
                }
                for x in &mut v {
                    *x = *x / n;
                }
                Ok(UnitVector(v))
            }
        }
    }

    /// Wrap a vector already known to be unit norm (dataset rows validated at
    /// load time, freshly normalized sphere samples).
    #[inline]
    pub fn from_unit_unchecked(v: Vec<F>) -> Self {
        debug_assert!((norm2(&v) - F::one()).abs() <= F::unit_tolerance() + F::unit_tolerance());
        UnitVector(v)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[F] {
        &self.0
    }

    #[inline]
    pub fn into_inner(self) -> Vec<F> {
        self.0
    }
}

impl<F> Deref for UnitVector<F> {
    type Target = [F];
    #[inline]
    fn deref(&self) -> &[F] {
        &self.0
    }
}
