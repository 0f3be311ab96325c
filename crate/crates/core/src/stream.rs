//! The i.i.d. data stream `(X_t, y_t)` with `y = f*(X) + e`, `e ~ N(0, τ²)`.
//!
//! Inputs are uniform on the unit sphere (implemented as a normalized
//! standard Gaussian) except for the empirical family, which draws rows of a
//! fixed dataset. Targets cover the simulation families: linear, quadratic,
//! a three-unit sigmoid teacher, deterministic pseudo-random binary labels,
//! ridge functions given by a truncated Taylor profile, and empirical labels.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::StreamError;
use crate::rng::{derive_stream, StreamKind, StreamRng};
use crate::unit::UnitVector;
use crate::{dot, Real, Scalar};

/// SplitMix64 finalizer; drives the deterministic pseudo-random labels.
#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-insensitive-free fingerprint of a vector's exact bit pattern; used
/// to look dataset rows up by value.
fn bit_fingerprint<F: Scalar>(x: &[F]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for &v in x {
        h = splitmix64(h ^ v.to_f64_lossy().to_bits());
    }
    h
}

/// Uniform draw from the unit sphere in ℝ^d: normalized standard Gaussian,
/// redrawn in the (measure-zero) event of a zero vector.
pub fn sample_sphere<F: Scalar, R: Rng>(d: usize, rng: &mut R) -> UnitVector<F> {
    assert!(d >= 1, "sphere dimension must be ≥ 1");
    loop {
        let mut v: Vec<F> = (0..d).map(|_| F::standard_normal(rng)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > F::zero() && norm.is_finite() {
            for vi in &mut v {
                *vi = *vi / norm;
            }
            return UnitVector::from_unit_unchecked(v);
        }
    }
}

/// Fixed dataset of unit-norm rows with ±1 labels (the empirical input law).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution<F> {
    d: usize,
    xs: Vec<F>,
    ys: Vec<F>,
    index: HashMap<u64, Vec<usize>>,
}

impl<F: Scalar> EmpiricalDistribution<F> {
    /// Validate rows (unit norm to tolerance, ±1 labels) and build the
    /// by-value row index.
    pub fn new(d: usize, xs: Vec<F>, ys: Vec<F>) -> Result<Self, StreamError> {
        if d == 0 {
            return Err(StreamError::Dimension("dataset dimension must be ≥ 1".into()));
        }
        let n = ys.len();
        if n == 0 || xs.len() != n * d {
            return Err(StreamError::Dimension(format!(
                "dataset shape mismatch: {} coordinates for {} labels at d = {d}",
                xs.len(),
                n
            )));
        }
        let one = F::one();
        for (i, row) in xs.chunks_exact(d).enumerate() {
            let dev = (dot(row, row).sqrt() - one).abs();
            if !(dev <= F::unit_tolerance()) {
                return Err(StreamError::NonUnit {
                    deviation: dev.to_f64_lossy(),
                });
            }
            let y = ys[i];
            if !(y == one || y == -one) {
                return Err(StreamError::Dimension(format!(
                    "label at row {i} is {}, expected ±1",
                    y.to_f64_lossy()
                )));
            }
        }
        let mut index: HashMap<u64, Vec<usize>> = HashMap::with_capacity(n * 2);
        for (i, row) in xs.chunks_exact(d).enumerate() {
            index.entry(bit_fingerprint(row)).or_default().push(i);
        }
        Ok(EmpiricalDistribution { d, xs, ys, index })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.ys.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }
    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }
    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        &self.xs[i * self.d..(i + 1) * self.d]
    }
    #[inline]
    pub fn label(&self, i: usize) -> F {
        self.ys[i]
    }

    /// Index of the row whose bits equal `x`, if any.
    pub fn lookup(&self, x: &[F]) -> Option<usize> {
        if x.len() != self.d {
            return None;
        }
        self.index.get(&bit_fingerprint(x))?.iter().copied().find(|&i| {
            self.row(i)
                .iter()
                .zip(x)
                .all(|(a, b)| a.to_f64_lossy().to_bits() == b.to_f64_lossy().to_bits())
        })
    }
}

const DATASET_MAGIC: &[u8; 8] = b"OPNTKDS\x01";
const DATASET_VERSION: u32 = 1;

impl<F: Scalar> EmpiricalDistribution<F> {
    /// Write the dataset as a versioned binary cache (coordinates stored as
    /// `f64` bit patterns; round-trips bit-exactly).
    pub fn write_cache<W: Write>(&self, mut out: W) -> Result<(), StreamError> {
        out.write_all(DATASET_MAGIC)?;
        out.write_u32::<LittleEndian>(DATASET_VERSION)?;
        out.write_u64::<LittleEndian>(self.len() as u64)?;
        out.write_u64::<LittleEndian>(self.d as u64)?;
        for &y in &self.ys {
            out.write_i8(if y > F::zero() { 1 } else { -1 })?;
        }
        for &v in &self.xs {
            out.write_f64::<LittleEndian>(v.to_f64_lossy())?;
        }
        Ok(())
    }

    /// Read a cache written by [`Self::write_cache`].
    pub fn read_cache<R: Read>(mut input: R) -> Result<Self, StreamError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(StreamError::Format {
                offset: 0,
                what: format!("bad dataset magic {magic:02x?}"),
            });
        }
        let version = input.read_u32::<LittleEndian>()?;
        if version != DATASET_VERSION {
            return Err(StreamError::Format {
                offset: 8,
                what: format!("unsupported dataset version {version}"),
            });
        }
        let n = input.read_u64::<LittleEndian>()? as usize;
        let d = input.read_u64::<LittleEndian>()? as usize;
        if n == 0 || d == 0 || n.checked_mul(d).is_none() {
            return Err(StreamError::Format {
                offset: 12,
                what: format!("invalid dataset shape n={n}, d={d}"),
            });
        }
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let s = input.read_i8()?;
            if s != 1 && s != -1 {
                return Err(StreamError::Format {
                    offset: 28,
                    what: format!("label {s} not ±1"),
                });
            }
            ys.push(if s == 1 { F::one() } else { -F::one() });
        }
        let mut xs = Vec::with_capacity(n * d);
        for _ in 0..n * d {
            xs.push(F::from_f64_lossy(input.read_f64::<LittleEndian>()?));
        }
        Self::new(d, xs, ys)
    }

    pub fn save_cache(&self, path: &Path) -> Result<(), StreamError> {
        let file = std::fs::File::create(path)?;
        self.write_cache(std::io::BufWriter::new(file))
    }

    pub fn load_cache(path: &Path) -> Result<Self, StreamError> {
        let file = std::fs::File::open(path)?;
        Self::read_cache(std::io::BufReader::new(file))
    }
}

const IDX_IMAGES_MAGIC: u32 = 2051;
const IDX_LABELS_MAGIC: u32 = 2049;

fn read_u32_be<R: Read>(input: &mut R, offset: u64, what: &str) -> Result<u32, StreamError> {
    input.read_u32::<BigEndian>().map_err(|_| StreamError::Format {
        offset,
        what: format!("truncated while reading {what}"),
    })
}

/// Read an IDX image/label pair, keep only digits 0 and 1, flatten images to
/// vectors, normalize each to unit norm, and label digit 1 as `+1`, digit 0
/// as `−1`.
pub fn load_mnist<F: Scalar>(
    images_path: &Path,
    labels_path: &Path,
) -> Result<EmpiricalDistribution<F>, StreamError> {
    let mut img = std::io::BufReader::new(std::fs::File::open(images_path)?);
    let magic = read_u32_be(&mut img, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(StreamError::Format {
            offset: 0,
            what: format!("image magic {magic}, expected {IDX_IMAGES_MAGIC}"),
        });
    }
    let n_img = read_u32_be(&mut img, 4, "image count")? as usize;
    let rows = read_u32_be(&mut img, 8, "image rows")? as usize;
    let cols = read_u32_be(&mut img, 12, "image cols")? as usize;
    let d = rows * cols;
    if d == 0 {
        return Err(StreamError::Format {
            offset: 8,
            what: format!("degenerate image shape {rows}×{cols}"),
        });
    }
    let mut pixels = vec![0u8; n_img * d];
    img.read_exact(&mut pixels).map_err(|_| StreamError::Format {
        offset: 16,
        what: format!("truncated image payload (expected {} bytes)", n_img * d),
    })?;

    let mut lab = std::io::BufReader::new(std::fs::File::open(labels_path)?);
    let magic = read_u32_be(&mut lab, 0, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(StreamError::Format {
            offset: 0,
            what: format!("label magic {magic}, expected {IDX_LABELS_MAGIC}"),
        });
    }
    let n_lab = read_u32_be(&mut lab, 4, "label count")? as usize;
    if n_lab != n_img {
        return Err(StreamError::Format {
            offset: 4,
            what: format!("label count {n_lab} ≠ image count {n_img}"),
        });
    }
    let mut labels = vec![0u8; n_lab];
    lab.read_exact(&mut labels).map_err(|_| StreamError::Format {
        offset: 8,
        what: format!("truncated label payload (expected {n_lab} bytes)"),
    })?;

    let mut xs: Vec<F> = Vec::new();
    let mut ys: Vec<F> = Vec::new();
    for (i, &digit) in labels.iter().enumerate() {
        if digit > 1 {
            continue;
        }
        let raw = &pixels[i * d..(i + 1) * d];
        let mut row: Vec<F> = raw.iter().map(|&p| F::from_f64_lossy(p as f64)).collect();
        let norm = dot(&row, &row).sqrt();
        if !(norm > F::zero()) {
            return Err(StreamError::Format {
                offset: (16 + i * d) as u64,
                what: format!("image {i} is all-zero; cannot normalize"),
            });
        }
        for v in &mut row {
            *v = *v / norm;
        }
        xs.extend_from_slice(&row);
        ys.push(if digit == 1 { F::one() } else { -F::one() });
    }
    if ys.is_empty() {
        return Err(StreamError::Format {
            offset: 8,
            what: "no digit-0/1 rows found".into(),
        });
    }
    EmpiricalDistribution::new(d, xs, ys)
}

/// A target function `f*` from the simulation families.
#[derive(Debug, Clone)]
pub enum TargetFunction<F> {
    /// `f*(x) = ⟨b, x⟩`.
    Linear { b: Vec<F> },
    /// `f*(x) = xᵀAx + ⟨b, x⟩` with `A` row-major d×d.
    Quadratic { a: Vec<F>, b: Vec<F> },
    /// `f*(x) = Σᵢ signsᵢ ψ(⟨vᵢ, x⟩)` over three sigmoid units,
    /// `ψ(z) = 1/(1+e^{−z})`; `v` row-major 3×d.
    TeacherNet { signs: [i8; 3], v: Vec<F> },
    /// Deterministic pseudo-random label in {0, 1}, keyed by the seed and the
    /// input quantized to a 1e−9 grid; repeated evaluation agrees.
    RandomLabel { label_seed: u64 },
    /// `f*(x) = h(⟨w, x⟩)` with `h` given by its Taylor derivatives at 0,
    /// truncated at the configured order; `w` a unit vector.
    RidgeProfile { h_derivs: Vec<F>, w: Vec<F> },
    /// Labels of a fixed dataset; defined only on its rows.
    Empirical(Arc<EmpiricalDistribution<F>>),
}

impl<F: Scalar> TargetFunction<F> {
    /// Input dimension the variant requires, if it fixes one.
    pub fn dim_requirement(&self) -> Option<usize> {
        match self {
            TargetFunction::Linear { b } => Some(b.len()),
            TargetFunction::Quadratic { b, .. } => Some(b.len()),
            TargetFunction::TeacherNet { v, .. } => Some(v.len() / 3),
            TargetFunction::RandomLabel { .. } => None,
            TargetFunction::RidgeProfile { w, .. } => Some(w.len()),
            TargetFunction::Empirical(ds) => Some(ds.dim()),
        }
    }

    /// `f*(x)`. For the empirical family `x` must be a dataset row.
    pub fn eval(&self, x: &[F]) -> Result<F, StreamError> {
        if let Some(d) = self.dim_requirement() {
            if x.len() != d {
                return Err(StreamError::Dimension(format!(
                    "input dimension {} ≠ target dimension {d}",
                    x.len()
                )));
            }
        }
        Ok(match self {
            TargetFunction::Linear { b } => dot(b, x),
            TargetFunction::Quadratic { a, b } => {
                let d = b.len();
                let mut quad = F::zero();
                for (i, &xi) in x.iter().enumerate() {
                    quad = quad + xi * dot(&a[i * d..(i + 1) * d], x);
                }
                quad + dot(b, x)
            }
            TargetFunction::TeacherNet { signs, v } => {
                let d = v.len() / 3;
                let mut acc = F::zero();
                for (i, &s) in signs.iter().enumerate() {
                    let z = dot(&v[i * d..(i + 1) * d], x);
                    let psi = F::one() / (F::one() + (-z).exp());
                    acc = if s > 0 { acc + psi } else { acc - psi };
                }
                acc
            }
            TargetFunction::RandomLabel { label_seed } => {
                let mut h = splitmix64(*label_seed);
                for &xi in x {
                    let q = (xi.to_f64_lossy() / 1e-9).round() as i64;
                    h = splitmix64(h ^ (q as u64));
                }
                F::from_f64_lossy((h >> 63) as f64)
            }
            TargetFunction::RidgeProfile { h_derivs, w } => {
                let u = dot(w, x);
                // h(u) = Σ_k h^{(k)}(0) u^k / k!, truncated at the stored order.
                let mut acc = F::zero();
                let mut term = F::one();
                for (k, &hk) in h_derivs.iter().enumerate() {
                    if k > 0 {
                        term = term * u / F::from_usize(k).unwrap();
                    }
                    acc = acc + hk * term;
                }
                acc
            }
            TargetFunction::Empirical(ds) => {
                let i = ds.lookup(x).ok_or(StreamError::ForeignProbe)?;
                ds.label(i)
            }
        })
    }

    /// Monte Carlo estimate of `‖f*‖ = √E[f*(X)²]` under the input law, with
    /// a delta-method standard error.
    pub fn l2_norm_mc<R: Rng>(
        &self,
        d: usize,
        n_mc: usize,
        rng: &mut R,
    ) -> Result<(F, F), StreamError> {
        if n_mc == 0 {
            return Err(StreamError::Dimension("n_mc must be ≥ 1".into()));
        }
        let mut sum = 0.0f64;
        let mut sum_sq = 0.0f64;
        for _ in 0..n_mc {
            let fx = match self {
                TargetFunction::Empirical(ds) => {
                    let i = rng.gen_range(0..ds.len());
                    ds.label(i)
                }
                _ => {
                    let x = sample_sphere::<F, R>(d, rng);
                    self.eval(x.as_slice())?
                }
            }
            .to_f64_lossy();
            let sq = fx * fx;
            sum += sq;
            sum_sq += sq * sq;
        }
        let n = n_mc as f64;
        let mean_sq = sum / n;
        let var_sq = (sum_sq / n - mean_sq * mean_sq).max(0.0);
        let se_mean_sq = (var_sq / n).sqrt();
        let norm = mean_sq.max(0.0).sqrt();
        // Delta method: se(√u) = se(u) / (2√u); fall back near zero.
        let se = if norm > 0.0 {
            se_mean_sq / (2.0 * norm)
        } else {
            se_mean_sq.sqrt()
        };
        Ok((F::from_f64_lossy(norm), F::from_f64_lossy(se)))
    }
}

/// One fresh sample: `x` from the input law (sphere, or a dataset row for the
/// empirical family) and `y = f*(x) + τ·ξ`, `ξ ~ N(0,1)` independent of `x`.
pub fn draw_sample<F: Scalar, R: Rng>(
    target: &TargetFunction<F>,
    d: usize,
    tau: F,
    rng: &mut R,
) -> Result<(UnitVector<F>, F), StreamError> {
    if tau < F::zero() {
        return Err(StreamError::Dimension("noise level tau must be ≥ 0".into()));
    }
    let (x, f_star) = match target {
        TargetFunction::Empirical(ds) => {
            if ds.dim() != d {
                return Err(StreamError::Dimension(format!(
                    "dataset dimension {} ≠ configured d = {d}",
                    ds.dim()
                )));
            }
            let i = rng.gen_range(0..ds.len());
            (
                UnitVector::from_unit_unchecked(ds.row(i).to_vec()),
                ds.label(i),
            )
        }
        _ => {
            let x = sample_sphere::<F, R>(d, rng);
            let f_star = target.eval(x.as_slice())?;
            (x, f_star)
        }
    };
    let noise = tau * F::standard_normal(rng);
    Ok((x, f_star + noise))
}

/// Declarative target description used by configuration files. Parameters
/// (coefficient vectors, teacher units, ridge direction) are drawn once per
/// experiment from the dedicated parameter RNG stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    /// `⟨b, x⟩`, `b ~ N(0, I_d)`.
    Linear,
    /// `xᵀAx + ⟨b, x⟩`, entries of `A` and `b` i.i.d. N(0, 1).
    Quadratic,
    /// Three-unit sigmoid teacher: ±1 signs i.i.d., unit vectors `vᵢ ~ N(0, I_d)`.
    TeacherNet,
    /// Pseudo-random binary labels; `label_seed` defaults to a drawn value.
    RandomLabel { label_seed: Option<u64> },
    /// Ridge function with the given Taylor derivatives of `h` at 0 and a
    /// uniformly drawn unit direction.
    RidgeProfile { h_derivs: Vec<Real> },
    /// Dataset labels: `dataset` is a cache file produced by `mnist-prep`, or
    /// a directory holding `train-images-idx3-ubyte` / `train-labels-idx1-ubyte`.
    Empirical { dataset: PathBuf },
}

impl TargetSpec {
    /// Draw concrete target parameters from the experiment's parameter stream
    /// (kind 5, run 0), so every run in an experiment shares one target.
    pub fn materialize(&self, d: usize, seed: u64) -> Result<TargetFunction<Real>, StreamError> {
        let mut rng: StreamRng = derive_stream(seed, StreamKind::TargetParams, 0);
        Ok(match self {
            TargetSpec::Linear => TargetFunction::Linear {
                b: (0..d).map(|_| Real::standard_normal(&mut rng)).collect(),
            },
            TargetSpec::Quadratic => {
                let a = (0..d * d).map(|_| Real::standard_normal(&mut rng)).collect();
                let b = (0..d).map(|_| Real::standard_normal(&mut rng)).collect();
                TargetFunction::Quadratic { a, b }
            }
            TargetSpec::TeacherNet => {
                let v = (0..3 * d).map(|_| Real::standard_normal(&mut rng)).collect();
                let mut signs = [0i8; 3];
                for s in &mut signs {
                    *s = if rng.gen::<bool>() { 1 } else { -1 };
                }
                TargetFunction::TeacherNet { signs, v }
            }
            TargetSpec::RandomLabel { label_seed } => TargetFunction::RandomLabel {
                label_seed: label_seed.unwrap_or_else(|| rng.gen()),
            },
            TargetSpec::RidgeProfile { h_derivs } => {
                if h_derivs.is_empty() {
                    return Err(StreamError::Dimension(
                        "ridge profile needs at least one Taylor coefficient".into(),
                    ));
                }
                let w = sample_sphere::<Real, _>(d, &mut rng);
                TargetFunction::RidgeProfile {
                    h_derivs: h_derivs.clone(),
                    w: w.into_inner(),
                }
            }
            TargetSpec::Empirical { dataset } => {
                let ds = load_empirical(dataset)?;
                if ds.dim() != d {
                    return Err(StreamError::Dimension(format!(
                        "dataset dimension {} ≠ configured d = {d}",
                        ds.dim()
                    )));
                }
                TargetFunction::Empirical(Arc::new(ds))
            }
        })
    }
}

/// Load an empirical dataset from a cache file or from a directory holding
/// the standard IDX pair.
pub fn load_empirical(path: &Path) -> Result<EmpiricalDistribution<Real>, StreamError> {
    if path.is_dir() {
        load_mnist(
            &path.join("train-images-idx3-ubyte"),
            &path.join("train-labels-idx1-ubyte"),
        )
    } else {
        EmpiricalDistribution::load_cache(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, StreamKind};
    use approx::assert_abs_diff_eq;

    fn rng(seed: u64) -> StreamRng {
        derive_stream(seed, StreamKind::Eval, 0)
    }

    #[test]
    fn sphere_draws_are_unit_norm() {
        let mut r = rng(1);
        for _ in 0..100 {
            let x = sample_sphere::<f64, _>(7, &mut r);
            assert_abs_diff_eq!(dot(&x, &x).sqrt(), 1.0, epsilon = 1e-12);
        }
        for _ in 0..20 {
            let x = sample_sphere::<f64, _>(1, &mut r);
            assert!(x[0] == 1.0 || x[0] == -1.0);
        }
    }

    #[test]
    fn sphere_coordinates_are_centered() {
        let mut r = rng(2);
        let n = 1_000_000usize;
        let mut sums = [0.0f64; 5];
        for _ in 0..n {
            let x = sample_sphere::<f64, _>(5, &mut r);
            for (s, &xi) in sums.iter_mut().zip(x.iter()) {
                *s += xi;
            }
        }
        for s in sums {
            assert!((s / n as f64).abs() < 0.005, "coordinate mean {}", s / n as f64);
        }
    }

    #[test]
    fn linear_and_quadratic_hand_cases() {
        let e1 = vec![1.0f64, 0.0, 0.0];
        let lin = TargetFunction::Linear { b: e1.clone() };
        assert_eq!(lin.eval(&e1).unwrap(), 1.0);
        let mut a = vec![0.0f64; 9];
        for i in 0..3 {
            a[i * 3 + i] = 1.0;
        }
        let quad = TargetFunction::Quadratic { a, b: vec![0.0; 3] };
        let x = vec![0.6f64, 0.0, 0.8];
        assert_abs_diff_eq!(quad.eval(&x).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn teacher_matches_direct_recomputation() {
        let t = TargetFunction::TeacherNet {
            signs: [1, -1, 1],
            v: vec![0.5f64, -1.0, 0.25, 0.0, 2.0, -0.5],
        };
        let x = vec![0.6f64, 0.8];
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let expect = sig(0.5 * 0.6 - 1.0 * 0.8) - sig(0.25 * 0.6 + 0.0)
            + sig(2.0 * 0.6 - 0.5 * 0.8);
        assert_abs_diff_eq!(t.eval(&x).unwrap(), expect, epsilon = 1e-14);
    }

    #[test]
    fn random_labels_are_deterministic_and_balanced() {
        let t = TargetFunction::RandomLabel { label_seed: 42 };
        let mut r = rng(3);
        let mut ones = 0usize;
        for _ in 0..2000 {
            let x = sample_sphere::<f64, _>(5, &mut r);
            let y1 = t.eval(x.as_slice()).unwrap();
            let y2 = t.eval(x.as_slice()).unwrap();
            assert_eq!(y1, y2);
            assert!(y1 == 0.0 || y1 == 1.0);
            ones += y1 as usize;
        }
        let frac = ones as f64 / 2000.0;
        assert!((frac - 0.5).abs() < 0.05, "ones fraction {frac}");
        let other = TargetFunction::RandomLabel { label_seed: 43 };
        let mut diff = 0usize;
        let mut r = rng(3);
        for _ in 0..200 {
            let x = sample_sphere::<f64, _>(5, &mut r);
            if t.eval(x.as_slice()).unwrap() != other.eval(x.as_slice()).unwrap() {
                diff += 1;
            }
        }
        assert!(diff > 50, "seeds should disagree often, got {diff}/200");
    }

    #[test]
    fn ridge_profile_truncated_taylor() {
        let w = vec![0.0f64, 1.0];
        let x = vec![0.8f64, 0.6];
        let constant = TargetFunction::RidgeProfile {
            h_derivs: vec![1.0],
            w: w.clone(),
        };
        assert_eq!(constant.eval(&x).unwrap(), 1.0);
        let identity = TargetFunction::RidgeProfile {
            h_derivs: vec![0.0, 1.0],
            w: w.clone(),
        };
        assert_abs_diff_eq!(identity.eval(&x).unwrap(), 0.6, epsilon = 1e-15);
        // h'' = 2 → h(u) = u²; ⟨w,x⟩² = 0.36.
        let square = TargetFunction::RidgeProfile {
            h_derivs: vec![0.0, 0.0, 2.0],
            w,
        };
        assert_abs_diff_eq!(square.eval(&x).unwrap(), 0.36, epsilon = 1e-15);
    }

    #[test]
    fn noiseless_samples_hit_the_target_exactly() {
        let mut r = rng(4);
        let b: Vec<f64> = (0..4).map(|_| f64::standard_normal(&mut r)).collect();
        let t = TargetFunction::Linear { b: b.clone() };
        let mut stream = rng(5);
        for _ in 0..50 {
            let (x, y) = draw_sample(&t, 4, 0.0, &mut stream).unwrap();
            assert_eq!(y, dot(&b, x.as_slice()));
        }
    }

    #[test]
    fn noise_variance_matches_tau_squared() {
        let t = TargetFunction::Linear { b: vec![1.0, 0.0, 0.0] };
        let mut stream = rng(6);
        let n = 100_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let (x, y) = draw_sample(&t, 3, 0.1, &mut stream).unwrap();
            let e = y - t.eval(x.as_slice()).unwrap();
            sum += e;
            sum_sq += e * e;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!((var - 0.01).abs() < 0.0005, "noise variance {var}");
    }

    #[test]
    fn noise_is_uncorrelated_with_coordinates() {
        let t = TargetFunction::Linear { b: vec![1.0, -0.5, 0.25] };
        let mut stream = rng(7);
        let n = 100_000usize;
        let mut se = 0.0;
        let mut sx = [0.0f64; 3];
        let mut sex = [0.0f64; 3];
        let mut see = 0.0;
        let mut sxx = [0.0f64; 3];
        for _ in 0..n {
            let (x, y) = draw_sample(&t, 3, 1.0, &mut stream).unwrap();
            let e = y - t.eval(x.as_slice()).unwrap();
            se += e;
            see += e * e;
            for j in 0..3 {
                sx[j] += x[j];
                sxx[j] += x[j] * x[j];
                sex[j] += e * x[j];
            }
        }
        let nf = n as f64;
        let var_e = see / nf - (se / nf).powi(2);
        for j in 0..3 {
            let cov = sex[j] / nf - (se / nf) * (sx[j] / nf);
            let var_x = sxx[j] / nf - (sx[j] / nf).powi(2);
            let corr = cov / (var_e * var_x).sqrt();
            assert!(corr.abs() < 3.0 / nf.sqrt() * 1.5, "corr[{j}] = {corr}");
        }
    }

    #[test]
    fn l2_norm_estimates() {
        let mut r = rng(8);
        // Unit b on the sphere: E⟨b,X⟩² = 1/d.
        let t = TargetFunction::Linear { b: vec![1.0, 0.0, 0.0, 0.0, 0.0] };
        let (norm, se) = t.l2_norm_mc(5, 100_000, &mut r).unwrap();
        let expect = (1.0f64 / 5.0).sqrt();
        assert!((norm - expect).abs() < 3.0 * se, "norm {norm} ± {se}");
        // Constant profile: exactly 1, zero spread.
        let c = TargetFunction::RidgeProfile {
            h_derivs: vec![1.0],
            w: vec![1.0, 0.0],
        };
        let (norm, se) = c.l2_norm_mc(2, 100, &mut r).unwrap();
        assert_eq!(norm, 1.0);
        assert_eq!(se, 0.0);
        // Random labels: E[y²] = 1/2.
        let rl: TargetFunction<f64> = TargetFunction::RandomLabel { label_seed: 9 };
        let (norm, se) = rl.l2_norm_mc(5, 100_000, &mut r).unwrap();
        assert!((norm - 0.5f64.sqrt()).abs() < 3.0 * se, "norm {norm} ± {se}");
    }

    fn toy_dataset() -> EmpiricalDistribution<f64> {
        EmpiricalDistribution::new(
            2,
            vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0],
            vec![1.0, -1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn empirical_lookup_and_foreign_probe() {
        let ds = toy_dataset();
        let t = TargetFunction::Empirical(Arc::new(ds));
        assert_eq!(t.eval(&[0.0, 1.0]).unwrap(), -1.0);
        assert_eq!(t.eval(&[-1.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(
            t.eval(&[0.6, 0.8]),
            Err(StreamError::ForeignProbe)
        ));
    }

    #[test]
    fn empirical_draws_are_dataset_rows() {
        let ds = Arc::new(toy_dataset());
        let t = TargetFunction::Empirical(ds.clone());
        let mut r = rng(9);
        for _ in 0..50 {
            let (x, y) = draw_sample(&t, 2, 0.0, &mut r).unwrap();
            let i = ds.lookup(x.as_slice()).expect("draw must be a row");
            assert_eq!(y, ds.label(i));
        }
        let (norm, se) = t.l2_norm_mc(2, 1000, &mut r).unwrap();
        assert_eq!((norm, se), (1.0, 0.0));
    }

    #[test]
    fn empirical_rejects_bad_rows() {
        assert!(EmpiricalDistribution::new(2, vec![0.5, 0.0], vec![1.0]).is_err());
        assert!(EmpiricalDistribution::new(2, vec![1.0, 0.0], vec![0.5]).is_err());
        assert!(EmpiricalDistribution::new(2, vec![1.0, 0.0], vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn dataset_cache_round_trips_bit_exactly() {
        let ds = toy_dataset();
        let mut buf = Vec::new();
        ds.write_cache(&mut buf).unwrap();
        let loaded = EmpiricalDistribution::<f64>::read_cache(&buf[..]).unwrap();
        assert_eq!(ds, loaded);
        buf[3] ^= 0x01;
        assert!(matches!(
            EmpiricalDistribution::<f64>::read_cache(&buf[..]),
            Err(StreamError::Format { offset: 0, .. })
        ));
    }

    fn write_idx_pair(dir: &Path, labels: &[u8]) -> (PathBuf, PathBuf) {
        let img_path = dir.join("imgs");
        let lab_path = dir.join("labs");
        let mut img = Vec::new();
        img.write_u32::<BigEndian>(IDX_IMAGES_MAGIC).unwrap();
        img.write_u32::<BigEndian>(labels.len() as u32).unwrap();
        img.write_u32::<BigEndian>(2).unwrap();
        img.write_u32::<BigEndian>(2).unwrap();
        for i in 0..labels.len() {
            for j in 0..4 {
                img.push((i * 4 + j + 1) as u8);
            }
        }
        std::fs::write(&img_path, img).unwrap();
        let mut lab = Vec::new();
        lab.write_u32::<BigEndian>(IDX_LABELS_MAGIC).unwrap();
        lab.write_u32::<BigEndian>(labels.len() as u32).unwrap();
        lab.extend_from_slice(labels);
        std::fs::write(&lab_path, lab).unwrap();
        (img_path, lab_path)
    }

    #[test]
    fn idx_loader_filters_and_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_idx_pair(dir.path(), &[0, 7, 1]);
        let ds = load_mnist::<f64>(&img, &lab).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.label(0), -1.0);
        assert_eq!(ds.label(1), 1.0);
        for i in 0..2 {
            let row = ds.row(i);
            assert_abs_diff_eq!(dot(row, row).sqrt(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn idx_loader_reports_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_idx_pair(dir.path(), &[0, 1]);
        // Corrupt image magic.
        let mut bytes = std::fs::read(&img).unwrap();
        bytes[0] = 0xFF;
        let bad = dir.path().join("bad_magic");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(
            load_mnist::<f64>(&bad, &lab),
            Err(StreamError::Format { offset: 0, .. })
        ));
        // Truncate the image payload.
        let bytes = std::fs::read(&img).unwrap();
        let cut = dir.path().join("truncated");
        std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            load_mnist::<f64>(&cut, &lab),
            Err(StreamError::Format { offset: 16, .. })
        ));
        // Mismatched label count.
        let mut lab3 = Vec::new();
        lab3.write_u32::<BigEndian>(IDX_LABELS_MAGIC).unwrap();
        lab3.write_u32::<BigEndian>(3).unwrap();
        lab3.extend_from_slice(&[0, 1, 1]);
        let lab3_path = dir.path().join("labs3");
        std::fs::write(&lab3_path, lab3).unwrap();
        assert!(matches!(
            load_mnist::<f64>(&img, &lab3_path),
            Err(StreamError::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn target_spec_materializes_deterministically() {
        let spec = TargetSpec::TeacherNet;
        let t1 = spec.materialize(5, 11).unwrap();
        let t2 = spec.materialize(5, 11).unwrap();
        let mut r = rng(10);
        let x = sample_sphere::<f64, _>(5, &mut r);
        assert_eq!(t1.eval(x.as_slice()).unwrap(), t2.eval(x.as_slice()).unwrap());
        if let (TargetFunction::TeacherNet { signs: s1, v: v1 },
                TargetFunction::TeacherNet { signs: s2, v: v2 }) = (&t1, &t2) {
            assert_eq!(s1, s2);
            assert_eq!(v1, v2);
        } else {
            panic!("materialize produced wrong variant");
        }
    }
}
