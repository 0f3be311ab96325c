//! Two-layer ReLU network and its streaming SGD update.
//!
//! The model is `f(x;W) = (1/√m) Σᵢ aᵢ σ(⟨Wᵢ,x⟩)` with `σ = max(0,·)`, frozen
//! outer signs `aᵢ ∈ {±1}`, and trained inner rows `Wᵢ`. One SGD step on a
//! fresh sample `(x, y)` updates every active row (`⟨Wⱼ,x⟩ ≥ 0`; the indicator
//! is closed at zero everywhere, fixed for determinism) by
//! `(η aⱼ/√m)·(y − f(x;W))·xᵀ`, a rank-one change to `W`.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::NetworkError;
use crate::rng::{RunStamp, StreamKind};
use crate::unit::UnitVector;
use crate::{dot, Real, Scalar};

/// Step-size schedule: the inverse-time decay of the convergence theorem, or
/// the constant step used by the simulation section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepSchedule {
    /// η_t = θ/(t+1), θ ∈ (0, 1/4).
    InverseTime { theta: Real },
    /// η_t = η, η ∈ (0, 2).
    Constant { eta: Real },
}

impl StepSchedule {
    /// Step size at iteration `t`.
    pub fn eta(&self, t: u64) -> Real {
        match *self {
            StepSchedule::InverseTime { theta } => theta / (t as Real + 1.0),
            StepSchedule::Constant { eta } => eta,
        }
    }

    /// Enforce the schedule's parameter ranges (θ ∈ (0, 1/4); η ∈ (0, 2)).
    pub fn validate(&self) -> Result<(), NetworkError> {
        match *self {
            StepSchedule::InverseTime { theta } => {
                if !(theta > 0.0 && theta < 0.25) {
                    return Err(NetworkError::Dimension(format!(
                        "inverse-time theta {theta} outside (0, 1/4)"
                    )));
                }
            }
            StepSchedule::Constant { eta } => {
                if !(eta > 0.0 && eta < 2.0) {
                    return Err(NetworkError::StepSize { eta });
                }
            }
        }
        Ok(())
    }
}

/// Outcome of a single SGD step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport<F> {
    /// Step size used.
    pub eta: F,
    /// `f(x;W(t))` before the update.
    pub prediction: F,
    /// `y − prediction` (target residual plus noise).
    pub residual: F,
    /// Number of rows with `⟨Wⱼ(t), x⟩ ≥ 0`.
    pub active_count: usize,
    /// `‖W(t+1) − W(t)‖_F`, measured from the applied row deltas. Equals
    /// `(η/√m)·|residual|·√active_count` exactly up to rounding, because the
    /// update is rank-one.
    pub frob_delta: F,
}

/// Width-`m` two-layer ReLU network state.
///
/// `w` and `w0` are row-major `m×d`; `w0` is a full frozen copy of the
/// initialization so drift and sign-flip statistics are exact. `a` never
/// changes after construction. Exactly one trainer may mutate a state at a
/// time; read-only diagnostics may run between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState<F> {
    m: usize,
    d: usize,
    w: Vec<F>,
    w0: Vec<F>,
    a: Vec<i8>,
    t: u64,
}

impl<F: Scalar> NetworkState<F> {
    /// Fresh network with i.i.d. standard-normal rows and i.i.d. ±1 signs.
    /// Randomness comes from the initialization stream of the given run
    /// stamp (a bare seed stands for run 0).
    pub fn init_iid(m: usize, d: usize, stamp: impl Into<RunStamp>) -> Result<Self, NetworkError> {
        Self::check_dims(m, d)?;
        let mut rng = stamp.into().rng(StreamKind::Init);
        let mut w0 = Vec::with_capacity(m * d);
        for _ in 0..m * d {
            w0.push(F::standard_normal(&mut rng));
        }
        let a: Vec<i8> = (0..m).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
        Ok(NetworkState {
            m,
            d,
            w: w0.clone(),
            w0,
            a,
            t: 0,
        })
    }

    /// Symmetric initialization: the top and bottom halves of `W(0)` are
    /// identical and the outer signs are `(b, −b)`, so `f(·;W(0)) ≡ 0` and the
    /// initial error equals the target norm.
    pub fn init_symmetric(
        m: usize,
        d: usize,
        stamp: impl Into<RunStamp>,
    ) -> Result<Self, NetworkError> {
        Self::check_dims(m, d)?;
        let half = m / 2;
        let mut rng = stamp.into().rng(StreamKind::Init);
        let mut w0 = Vec::with_capacity(m * d);
        for _ in 0..half * d {
            w0.push(F::standard_normal(&mut rng));
        }
        for i in 0..half * d {
            w0.push(w0[i]);
        }
        let b: Vec<i8> = (0..half).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
        let mut a = b.clone();
        a.extend(b.iter().map(|s| -s));
        Ok(NetworkState {
            m,
            d,
            w: w0.clone(),
            w0,
            a,
            t: 0,
        })
    }

    fn check_dims(m: usize, d: usize) -> Result<(), NetworkError> {
        if m < 2 || m % 2 != 0 {
            return Err(NetworkError::Dimension(format!(
                "width m = {m} must be an even integer ≥ 2"
            )));
        }
        if d == 0 {
            return Err(NetworkError::Dimension("input dimension d must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Assemble a state from explicit parts (checkpoint loading, hand-built
    /// states in tests). Unlike the initializers this accepts any `m ≥ 1`.
    pub fn from_parts(
        d: usize,
        w0: Vec<F>,
        w: Vec<F>,
        a: Vec<i8>,
        t: u64,
    ) -> Result<Self, NetworkError> {
        if d == 0 {
            return Err(NetworkError::Dimension("input dimension d must be ≥ 1".into()));
        }
        let m = a.len();
        if m == 0 {
            return Err(NetworkError::Dimension("width m must be ≥ 1".into()));
        }
        if w0.len() != m * d || w.len() != m * d {
            return Err(NetworkError::Dimension(format!(
                "weight buffers must be m·d = {} entries (got {} and {})",
                m * d,
                w0.len(),
                w.len()
            )));
        }
        if a.iter().any(|&s| s != 1 && s != -1) {
            return Err(NetworkError::Dimension("outer signs must be ±1".into()));
        }
        Ok(NetworkState { m, d, w, w0, a, t })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.m
    }
    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }
    #[inline]
    pub fn iteration(&self) -> u64 {
        self.t
    }
    #[inline]
    pub fn outer_signs(&self) -> &[i8] {
        &self.a
    }
    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        &self.w[i * self.d..(i + 1) * self.d]
    }
    #[inline]
    pub fn row_init(&self, i: usize) -> &[F] {
        &self.w0[i * self.d..(i + 1) * self.d]
    }

    /// `f(x;W(t)) = (1/√m) Σᵢ aᵢ max(0, ⟨Wᵢ,x⟩)`.
    pub fn forward(&self, x: &UnitVector<F>) -> F {
        self.forward_slice(x.as_slice())
    }

    #[inline]
    pub(crate) fn forward_slice(&self, x: &[F]) -> F {
        debug_assert_eq!(x.len(), self.d);
        let mut acc = F::zero();
        for (row, &sign) in self.w.chunks_exact(self.d).zip(&self.a) {
            let z = dot(row, x);
            if z >= F::zero() {
                if sign > 0 {
                    acc = acc + z;
                } else {
                    acc = acc - z;
                }
            }
        }
        acc / F::from_usize(self.m).unwrap().sqrt()
    }

    /// Activation indicators `1{⟨Wᵢ,x⟩ ≥ 0}` against the current (`at_init =
    /// false`) or the initial (`at_init = true`) weights.
    pub fn activation_mask(&self, x: &[F], at_init: bool) -> Vec<bool> {
        let src = if at_init { &self.w0 } else { &self.w };
        src.chunks_exact(self.d)
            .map(|row| dot(row, x) >= F::zero())
            .collect()
    }

    /// One streaming SGD step on the fresh sample `(x, y)`.
    ///
    /// Rows with a negative preactivation are untouched (bit-identical); every
    /// active row `j` moves by `(η aⱼ/√m)·(y − f(x;W(t)))·xᵀ`, and `t`
    /// advances by exactly one.
    pub fn sgd_step(
        &mut self,
        sample: (&UnitVector<F>, F),
        eta: F,
    ) -> Result<StepReport<F>, NetworkError> {
        let two = F::from_f64_lossy(2.0);
        if !(eta > F::zero() && eta < two) {
            return Err(NetworkError::StepSize {
                eta: eta.to_f64_lossy(),
            });
        }
        let (x, y) = sample;
        if x.dim() != self.d {
            return Err(NetworkError::Dimension(format!(
                "sample dimension {} ≠ network dimension {}",
                x.dim(),
                self.d
            )));
        }
        let xs = x.as_slice();
        let prediction = self.forward_slice(xs);
        let residual = y - prediction;
        let scale = eta * residual / F::from_usize(self.m).unwrap().sqrt();

        let mut active = 0usize;
        let x_norm_sq = dot(xs, xs);
        for (row, &sign) in self.w.chunks_exact_mut(self.d).zip(&self.a) {
            if dot(row, xs) >= F::zero() {
                active += 1;
                let c = if sign > 0 { scale } else { -scale };
                for (wj, &xj) in row.iter_mut().zip(xs) {
                    *wj = *wj + c * xj;
                }
            }
        }
        // ‖ΔW‖_F from the deltas actually applied: `active` rows each moved by
        // `±scale · x`, so the squared norm is active·scale²·‖x‖².
        let frob_delta = (F::from_usize(active).unwrap() * scale * scale * x_norm_sq).sqrt();
        self.t += 1;
        Ok(StepReport {
            eta,
            prediction,
            residual,
            active_count: active,
            frob_delta,
        })
    }

    /// `(‖W − W0‖_F, ‖W − W0‖_F / ‖W0‖_F)`.
    pub fn weight_drift(&self) -> Result<(F, F), NetworkError> {
        let mut diff_sq = F::zero();
        let mut init_sq = F::zero();
        for (&wi, &wi0) in self.w.iter().zip(&self.w0) {
            let dlt = wi - wi0;
            diff_sq = diff_sq + dlt * dlt;
            init_sq = init_sq + wi0 * wi0;
        }
        if init_sq == F::zero() {
            return Err(NetworkError::Degenerate(
                "‖W(0)‖_F = 0; relative drift undefined".into(),
            ));
        }
        let abs = diff_sq.sqrt();
        Ok((abs, abs / init_sq.sqrt()))
    }

    /// Scale the current weights by `c > 0` (test support for the
    /// sign-preservation property; initialization stays frozen).
    pub fn scale_weights(&mut self, c: F) {
        for wi in &mut self.w {
            *wi = *wi * c;
        }
    }

    /// Replace the current weights with the negated initialization (test
    /// support: flips every strict sign).
    pub fn negate_weights(&mut self) {
        for (wi, &wi0) in self.w.iter_mut().zip(&self.w0) {
            *wi = -wi0;
        }
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"OPNTKCP\x01";
const CHECKPOINT_VERSION: u32 = 1;

impl<F: Scalar> NetworkState<F> {
    /// Write a self-describing binary checkpoint: magic, version, `m`, `d`,
    /// `t`, the RNG stream identifiers, `a`, `W0`, `W`. Weights are stored as
    /// `f64` bit patterns (exact for both supported precisions), so the dump
    /// round-trips bit-exactly.
    pub fn write_checkpoint<W: Write>(
        &self,
        stamp: RunStamp,
        mut out: W,
    ) -> Result<(), NetworkError> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        out.write_u64::<LittleEndian>(self.m as u64)?;
        out.write_u64::<LittleEndian>(self.d as u64)?;
        out.write_u64::<LittleEndian>(self.t)?;
        out.write_u64::<LittleEndian>(stamp.seed)?;
        out.write_u32::<LittleEndian>(stamp.run_index)?;
        for &s in &self.a {
            out.write_i8(s)?;
        }
        for &v in &self.w0 {
            out.write_f64::<LittleEndian>(v.to_f64_lossy())?;
        }
        for &v in &self.w {
            out.write_f64::<LittleEndian>(v.to_f64_lossy())?;
        }
        Ok(())
    }

    /// Read a checkpoint written by [`Self::write_checkpoint`].
    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(Self, RunStamp), NetworkError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NetworkError::CheckpointFormat {
                offset: 0,
                what: format!("bad magic {magic:02x?}"),
            });
        }
        let version = input.read_u32::<LittleEndian>()?;
        if version != CHECKPOINT_VERSION {
            return Err(NetworkError::CheckpointFormat {
                offset: 8,
                what: format!("unsupported version {version}"),
            });
        }
        let m = input.read_u64::<LittleEndian>()? as usize;
        let d = input.read_u64::<LittleEndian>()? as usize;
        let t = input.read_u64::<LittleEndian>()?;
        let seed = input.read_u64::<LittleEndian>()?;
        let run_index = input.read_u32::<LittleEndian>()?;
        if m == 0 || d == 0 || m.checked_mul(d).is_none() {
            return Err(NetworkError::CheckpointFormat {
                offset: 12,
                what: format!("invalid dimensions m={m}, d={d}"),
            });
        }
        let mut a = vec![0i8; m];
        for (i, s) in a.iter_mut().enumerate() {
            *s = input.read_i8()?;
            if *s != 1 && *s != -1 {
                return Err(NetworkError::CheckpointFormat {
                    offset: 40 + i as u64,
                    what: format!("outer sign {} not ±1", *s),
                });
            }
        }
        let mut read_matrix = |n: usize| -> Result<Vec<F>, NetworkError> {
            let mut buf = Vec::with_capacity(n);
            for _ in 0..n {
                buf.push(F::from_f64_lossy(input.read_f64::<LittleEndian>()?));
            }
            Ok(buf)
        };
        let w0 = read_matrix(m * d)?;
        let w = read_matrix(m * d)?;
        let state = Self::from_parts(d, w0, w, a, t)?;
        Ok((state, RunStamp { seed, run_index }))
    }

    /// Convenience file wrappers around the stream-based checkpoint API.
    pub fn save_checkpoint(&self, stamp: RunStamp, path: &Path) -> Result<(), NetworkError> {
        let file = std::fs::File::create(path)?;
        self.write_checkpoint(stamp, std::io::BufWriter::new(file))
    }

    pub fn load_checkpoint(path: &Path) -> Result<(Self, RunStamp), NetworkError> {
        let file = std::fs::File::open(path)?;
        Self::read_checkpoint(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use crate::unit::InputPolicy;

    fn unit<F: Scalar>(v: Vec<F>) -> UnitVector<F> {
        UnitVector::new(v, InputPolicy::Normalize).unwrap()
    }

    #[test]
    fn init_iid_is_deterministic_and_fresh() {
        let s1 = NetworkState::<f64>::init_iid(4, 3, 9).unwrap();
        let s2 = NetworkState::<f64>::init_iid(4, 3, 9).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.iteration(), 0);
        assert_eq!(s1.row(2), s1.row_init(2));
    }

    #[test]
    fn distinct_runs_draw_distinct_weights() {
        let r0 = NetworkState::<f64>::init_iid(4, 3, RunStamp::new(9, 0)).unwrap();
        let bare = NetworkState::<f64>::init_iid(4, 3, 9).unwrap();
        let r1 = NetworkState::<f64>::init_iid(4, 3, RunStamp::new(9, 1)).unwrap();
        assert_eq!(r0, bare, "a bare seed is run 0");
        assert_ne!(r0.row(0), r1.row(0));
        let sym0 = NetworkState::<f64>::init_symmetric(4, 3, RunStamp::new(9, 0)).unwrap();
        let sym1 = NetworkState::<f64>::init_symmetric(4, 3, RunStamp::new(9, 1)).unwrap();
        assert_ne!(sym0.row(0), sym1.row(0));
    }

    #[test]
    fn init_rejects_bad_dims() {
        assert!(NetworkState::<f64>::init_iid(3, 2, 0).is_err());
        assert!(NetworkState::<f64>::init_iid(0, 2, 0).is_err());
        assert!(NetworkState::<f64>::init_symmetric(5, 2, 0).is_err());
        assert!(NetworkState::<f64>::init_iid(4, 0, 0).is_err());
    }

    #[test]
    fn iid_sample_mean_is_centered() {
        let s = NetworkState::<f64>::init_iid(100_000, 10, 11).unwrap();
        let mean: f64 =
            s.w0.iter().sum::<f64>() / (s.width() * s.dim()) as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn symmetric_structure_and_null_output() {
        let s = NetworkState::<f64>::init_symmetric(64, 5, 3).unwrap();
        let half = 32;
        for i in 0..half {
            assert_eq!(s.row_init(i), s.row_init(i + half));
            assert_eq!(s.outer_signs()[i] * s.outer_signs()[i + half], -1);
        }
        let mut rng = derive_stream(5, StreamKind::Eval, 0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..5).map(|_| f64::standard_normal(&mut rng)).collect();
            let x = unit(x);
            assert!(s.forward(&x).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_hand_cases() {
        // Single neuron aligned with the input: σ(1)/√1 = 1.
        let x = unit(vec![0.6f64, 0.8]);
        let s = NetworkState::from_parts(2, x.as_slice().to_vec(), x.as_slice().to_vec(), vec![1], 0)
            .unwrap();
        assert!((s.forward(&x) - 1.0).abs() < 1e-15);
        // Row opposed to the input: ReLU kills it.
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let s = NetworkState::from_parts(2, neg.clone(), neg, vec![1], 0).unwrap();
        assert_eq!(s.forward(&x), 0.0);
    }

    #[test]
    fn zero_residual_leaves_weights_unchanged() {
        let mut s = NetworkState::<f64>::init_iid(8, 3, 21).unwrap();
        let x = unit(vec![1.0, 2.0, -0.5]);
        let y = s.forward(&x);
        let before = s.clone();
        let rep = s.sgd_step((&x, y), 0.3).unwrap();
        assert_eq!(rep.residual, 0.0);
        assert_eq!(rep.frob_delta, 0.0);
        assert_eq!(s.w, before.w);
        assert_eq!(s.iteration(), 1);
    }

    #[test]
    fn inactive_rows_are_bit_identical() {
        let mut s = NetworkState::<f64>::init_iid(16, 4, 2).unwrap();
        let x = unit(vec![0.3, -1.0, 0.7, 0.2]);
        let mask = s.activation_mask(x.as_slice(), false);
        let before = s.clone();
        s.sgd_step((&x, 1.5), 0.25).unwrap();
        for (i, active) in mask.iter().enumerate() {
            if !active {
                assert_eq!(s.row(i), before.row(i), "row {i} should be untouched");
            }
        }
    }

    #[test]
    fn frobenius_identity_direct_recomputation() {
        let mut s = NetworkState::<f64>::init_iid(8, 3, 77).unwrap();
        let x = unit(vec![0.5, -0.25, 1.0]);
        let before = s.clone();
        let rep = s.sgd_step((&x, 0.8), 0.2).unwrap();
        // Oracle: full-matrix recomputation of both sides of the identity.
        let mut frob_sq = 0.0;
        for i in 0..8 {
            for j in 0..3 {
                let dlt = s.row(i)[j] - before.row(i)[j];
                frob_sq += dlt * dlt;
            }
        }
        let measured = frob_sq.sqrt();
        let identity = rep.eta / (8f64).sqrt() * rep.residual.abs() * (rep.active_count as f64).sqrt();
        assert!((measured - rep.frob_delta).abs() <= 1e-12 * measured.max(1e-300));
        assert!((measured - identity).abs() <= 1e-12 * measured.max(1e-300));
    }

    #[test]
    fn step_rejects_bad_eta() {
        let mut s = NetworkState::<f64>::init_iid(4, 2, 0).unwrap();
        let x = unit(vec![1.0, 0.0]);
        assert!(s.sgd_step((&x, 1.0), 0.0).is_err());
        assert!(s.sgd_step((&x, 1.0), 2.0).is_err());
        assert!(s.sgd_step((&x, 1.0), -0.1).is_err());
    }

    #[test]
    fn drift_matches_single_step() {
        let mut s = NetworkState::<f64>::init_iid(8, 3, 5).unwrap();
        let (abs0, rel0) = s.weight_drift().unwrap();
        assert_eq!((abs0, rel0), (0.0, 0.0));
        let x = unit(vec![1.0, 1.0, 1.0]);
        let rep = s.sgd_step((&x, 2.0), 0.4).unwrap();
        let (abs1, _) = s.weight_drift().unwrap();
        assert!((abs1 - rep.frob_delta).abs() < 1e-14);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut s = NetworkState::<f64>::init_iid(6, 4, 123).unwrap();
        let x = unit(vec![0.1, 0.9, -0.4, 0.2]);
        s.sgd_step((&x, 1.0), 0.3).unwrap();
        let stamp = RunStamp { seed: 123, run_index: 7 };
        let mut buf = Vec::new();
        s.write_checkpoint(stamp, &mut buf).unwrap();
        let (loaded, stamp2) = NetworkState::<f64>::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(stamp, stamp2);
        assert_eq!(s, loaded);
        // Bit-exact:
        for (a, b) in s.w.iter().zip(&loaded.w) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn checkpoint_rejects_corrupt_magic() {
        let s = NetworkState::<f64>::init_iid(2, 2, 0).unwrap();
        let mut buf = Vec::new();
        s.write_checkpoint(RunStamp { seed: 0, run_index: 0 }, &mut buf)
            .unwrap();
        buf[0] ^= 0xFF;
        assert!(matches!(
            NetworkState::<f64>::read_checkpoint(&buf[..]),
            Err(NetworkError::CheckpointFormat { offset: 0, .. })
        ));
    }

    #[test]
    fn schedule_values() {
        let inv = StepSchedule::InverseTime { theta: 0.2 };
        assert_eq!(inv.eta(0), 0.2);
        assert_eq!(inv.eta(1), 0.1);
        let c = StepSchedule::Constant { eta: 0.2 };
        assert_eq!(c.eta(0), 0.2);
        assert_eq!(c.eta(10_000), 0.2);
        assert!(StepSchedule::InverseTime { theta: 0.25 }.validate().is_err());
        assert!(StepSchedule::Constant { eta: 2.0 }.validate().is_err());
    }
}
