//! Experiment harness: seeded one-pass SGD runs with Monte Carlo error
//! tracking, in-run invariant audits, cross-run aggregation, and an
//! informational comparison against the spectral convergence bound.
//!
//! Every run is a pure function of `(config, seed, run_index)`: each labeled
//! RNG stream (initialization, training data, evaluation data, audit probes)
//! is derived independently, so audits and evaluation never perturb the
//! training trajectory.

use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ExperimentError;
use crate::kernels::{
    empirical_kernel, kernel_sup_deviation, residual_bounds, sign_flip_count, DeviationMode,
    KernelProbe,
};
use crate::network::{NetworkState, StepSchedule};
use crate::rng::{derive_stream, RunStamp, StreamKind, StreamRng};
use crate::spectrum::{theorem_bound, BoundParams, SpectralTable};
use crate::stream::{draw_sample, sample_sphere, TargetFunction, TargetSpec};
use crate::unit::UnitVector;
use crate::{fmt_g12, Real};

/// Config-file schema version accepted by this build.
pub const CONFIG_VERSION: u32 = 1;
/// Hard ceiling on the sandwich-audit slack; any audited step beyond it
/// aborts the run.
pub const SANDWICH_SLACK_LIMIT: Real = 1e-9;
/// Monte Carlo sample count for the per-experiment `‖f*‖` estimate.
pub const NORM_MC_SAMPLES: usize = 100_000;

/// Weight initialization family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// Mirrored rows with opposite outer signs: the initial predictor is
    /// identically zero.
    Symmetric,
    /// Fully i.i.d. rows and signs.
    Iid,
}

/// In-run audit cadence and probe counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    /// Audit every this-many steps; 0 disables audits. Omitted → every step
    /// for small problems (`m·d ≤ 10⁶`), every 50 steps otherwise.
    #[serde(default)]
    pub sandwich_every: Option<u64>,
    /// Fresh probe points per audited step.
    #[serde(default = "default_probes_per_audit")]
    pub probes_per_audit: usize,
    /// Probe pairs for the sampled kernel-deviation estimate at audited
    /// steps; 0 disables that estimate.
    #[serde(default)]
    pub deviation_probes: usize,
}

fn default_probes_per_audit() -> usize {
    5
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            sandwich_every: None,
            probes_per_audit: default_probes_per_audit(),
            deviation_probes: 0,
        }
    }
}

fn default_n_eval() -> usize {
    400
}

fn default_n_runs() -> usize {
    20
}

/// Full description of one experiment: model, target, schedule, horizon,
/// evaluation cadence, audits, and the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must equal [`CONFIG_VERSION`].
    pub version: u32,
    /// Input dimension.
    pub d: usize,
    /// Network width.
    pub m: usize,
    /// Target-function family (parameters drawn from the experiment seed).
    pub target: TargetSpec,
    /// Label-noise standard deviation.
    pub tau: Real,
    /// Step-size schedule.
    pub schedule: StepSchedule,
    /// Number of one-pass SGD steps T.
    pub iterations: u64,
    /// Weight initialization family.
    pub init: InitKind,
    /// Checkpoint cadence; must divide `iterations`. Omitted → the largest
    /// divisor of T at most max(1, T/100).
    #[serde(default)]
    pub eval_every: Option<u64>,
    /// Fresh Monte Carlo points per error estimate.
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    /// Independent runs to aggregate.
    #[serde(default = "default_n_runs")]
    pub n_runs: usize,
    #[serde(default)]
    pub audit: AuditConfig,
    /// Master seed; all streams derive from it.
    pub seed: u64,
}

impl ExperimentConfig {
    /// Parse a TOML config, rejecting unknown keys and version mismatches.
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| ExperimentError::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.version != CONFIG_VERSION {
            return Err(ExperimentError::Config(format!(
                "config version {} not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.d == 0 {
            return Err(ExperimentError::Config("d must be ≥ 1".into()));
        }
        match self.init {
            InitKind::Symmetric => {
                if self.m < 2 || self.m % 2 != 0 {
                    return Err(ExperimentError::Config(format!(
                        "symmetric initialization needs even m ≥ 2, got {}",
                        self.m
                    )));
                }
            }
            InitKind::Iid => {
                if self.m == 0 {
                    return Err(ExperimentError::Config("m must be ≥ 1".into()));
                }
            }
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(ExperimentError::Config(format!(
                "tau {} must be a finite non-negative number",
                self.tau
            )));
        }
        self.schedule
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        if let Some(e) = self.eval_every {
            if e == 0 {
                return Err(ExperimentError::Config("eval_every must be ≥ 1".into()));
            }
            if self.iterations > 0 && self.iterations % e != 0 {
                return Err(ExperimentError::Config(format!(
                    "eval_every {e} does not divide iterations {}",
                    self.iterations
                )));
            }
        }
        if self.n_eval == 0 {
            return Err(ExperimentError::Config("n_eval must be ≥ 1".into()));
        }
        if self.n_runs == 0 {
            return Err(ExperimentError::Config("n_runs must be ≥ 1".into()));
        }
        if self.audit.sandwich_cadence_for(self.m, self.d) > 0 && self.audit.probes_per_audit == 0
        {
            return Err(ExperimentError::Config(
                "probes_per_audit must be ≥ 1 while audits are enabled".into(),
            ));
        }
        Ok(())
    }

    /// Checkpoint cadence with the default rule applied: the largest divisor
    /// of T at most max(1, T/100), so checkpoints always land on T.
    pub fn eval_cadence(&self) -> u64 {
        if let Some(e) = self.eval_every {
            return e;
        }
        let t = self.iterations;
        if t == 0 {
            return 1;
        }
        let target = (t / 100).max(1);
        (1..=target).rev().find(|k| t % k == 0).unwrap_or(1)
    }

    /// Audit cadence with the default rule applied (0 = disabled).
    pub fn sandwich_cadence(&self) -> u64 {
        self.audit.sandwich_cadence_for(self.m, self.d)
    }

    /// The config with every defaulted field made explicit; hashing and
    /// grid-compatibility checks go through this canonical form.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.eval_every = Some(self.eval_cadence());
        out.audit.sandwich_every = Some(self.sandwich_cadence());
        out
    }

    /// FNV-1a hash of the canonical JSON encoding of the resolved config.
    pub fn config_hash(&self) -> u64 {
        let bytes = serde_json::to_vec(&self.resolved())
            .expect("config serialization cannot fail");
        fnv1a(&bytes)
    }
}

impl AuditConfig {
    fn sandwich_cadence_for(&self, m: usize, d: usize) -> u64 {
        match self.sandwich_every {
            Some(e) => e,
            None => {
                if m.saturating_mul(d) <= 1_000_000 {
                    1
                } else {
                    50
                }
            }
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// One checkpoint of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    /// Iteration count at the checkpoint.
    pub t: u64,
    /// `√(Δ̂_t² + τ²)`: the Monte Carlo estimate of the prediction error
    /// with the noise floor folded in.
    pub mc_error: Real,
    /// `mc_error / √(‖f*‖² + τ²)`; starts near 1 under symmetric
    /// initialization and is floored at `τ/√(‖f*‖²+τ²)` by the noise.
    pub mc_error_normalized: Real,
    /// Fraction of rows whose activation at the upcoming training sample
    /// differs from initialization.
    pub sign_flip_fraction: Real,
    /// `‖W(t)−W(0)‖_F / ‖W(0)‖_F`.
    pub drift_relative: Real,
    /// Step size the schedule prescribes at this iteration.
    pub eta: Real,
}

/// Worst slacks observed across all audited steps of one run. The sandwich
/// slack must stay ≤ the hard limit; the two cap violations are
/// `quantity − cap` values and must stay ≤ 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub audited_steps: u64,
    pub max_sandwich_slack: Real,
    pub max_lm_violation: Real,
    pub max_kernel_drift_violation: Real,
    /// Sampled sup of `|H_t − H_0|` when deviation probes are enabled.
    pub max_ht_deviation: Option<Real>,
}

impl Default for AuditSummary {
    fn default() -> Self {
        AuditSummary {
            audited_steps: 0,
            max_sandwich_slack: 0.0,
            max_lm_violation: 0.0,
            max_kernel_drift_violation: 0.0,
            max_ht_deviation: None,
        }
    }
}

/// Run identity and the norm estimate used for normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub seed: u64,
    pub run_index: u32,
    pub config_hash: u64,
    /// Monte Carlo estimate of `‖f*‖` (shared by all runs of an experiment).
    pub f_star_norm: Real,
    pub f_star_norm_se: Real,
}

/// Complete record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub meta: TraceMeta,
    pub records: Vec<CheckpointRecord>,
    pub audit: AuditSummary,
}

/// Noiseless Monte Carlo prediction error
/// `√((1/n) Σ (f*(Xᵢ) − f(Xᵢ))²)` over fresh draws, with its delta-method
/// standard error. The caller must pass an RNG stream disjoint from
/// training.
pub fn mc_prediction_error<R: rand::Rng>(
    state: &NetworkState<Real>,
    target: &TargetFunction<Real>,
    n_eval: usize,
    rng: &mut R,
) -> Result<(Real, Real), ExperimentError> {
    if n_eval == 0 {
        return Err(ExperimentError::Config("n_eval must be ≥ 1".into()));
    }
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for _ in 0..n_eval {
        let (x, f_star) = draw_sample(target, state.dim(), 0.0, rng)?;
        let e = f_star - state.forward(&x);
        let sq = e * e;
        sum += sq;
        sum_sq += sq * sq;
    }
    let n = n_eval as Real;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    let se_mean = (var / n).sqrt();
    let rmse = mean.sqrt();
    // Delta method: se(√u) = se(u) / (2√u); degenerate at zero error.
    let se = if rmse > 0.0 { se_mean / (2.0 * rmse) } else { 0.0 };
    Ok((rmse, se))
}

/// Mutable audit accumulators for one run.
struct AuditState {
    summary: AuditSummary,
}

impl AuditState {
    fn new() -> Self {
        AuditState {
            summary: AuditSummary::default(),
        }
    }

    fn observe(&mut self, slot: AuditSlot, value: Real) {
        let cell = match slot {
            AuditSlot::Sandwich => &mut self.summary.max_sandwich_slack,
            AuditSlot::LmCap => &mut self.summary.max_lm_violation,
            AuditSlot::KernelDrift => &mut self.summary.max_kernel_drift_violation,
        };
        if self.summary.audited_steps == 0 {
            *cell = value;
        } else {
            *cell = cell.max(value);
        }
    }
}

#[derive(Clone, Copy)]
enum AuditSlot {
    Sandwich,
    LmCap,
    KernelDrift,
}

/// Audit one transition `W(t) → W(t+1)`: the sandwich bounds on the
/// prediction change at fresh probes, the sign-flip caps on the kernel
/// cross terms, and the sign-flip cap on kernel drift. Any violation aborts
/// the run with a forensic record.
#[allow(clippy::too_many_arguments)]
fn audit_transition(
    cfg: &ExperimentConfig,
    t: u64,
    prev: &NetworkState<Real>,
    next: &NetworkState<Real>,
    sample: (&UnitVector<Real>, Real),
    eta: Real,
    audit_rng: &mut StreamRng,
    acc: &mut AuditState,
) -> Result<(), ExperimentError> {
    let m = cfg.m as Real;
    let (x_t, y_t) = sample;
    let flips_next_at_sample = sign_flip_count(next, x_t).count;
    for probe in 0..cfg.audit.probes_per_audit {
        let p = sample_sphere::<Real, _>(cfg.d, audit_rng);
        let rb = residual_bounds(prev, next, (x_t, y_t), eta, &p)?;
        let slack = (rb.lower - rb.f_change).max(rb.f_change - rb.upper);
        acc.observe(AuditSlot::Sandwich, slack);
        if slack > SANDWICH_SLACK_LIMIT {
            return Err(ExperimentError::AuditViolation {
                step: t,
                probe,
                what: "prediction change escaped the kernel sandwich bounds".into(),
                value: slack,
                limit: SANDWICH_SLACK_LIMIT,
            });
        }
        let s_prev = sign_flip_count(prev, &p).count;
        let s_next = sign_flip_count(next, &p).count;
        let cap = (s_prev + s_next) as Real / m;
        let lm = rb.l.abs().max(rb.m.abs()) - cap;
        acc.observe(AuditSlot::LmCap, lm);
        if lm > 0.0 {
            return Err(ExperimentError::AuditViolation {
                step: t,
                probe,
                what: "kernel cross term exceeded the sign-flip cap".into(),
                value: lm,
                limit: 0.0,
            });
        }
        // Kernel drift at the (probe, training-sample) pair against the
        // flip counts of the current iterate.
        let pair = KernelProbe {
            x: p,
            x_tilde: x_t.clone(),
        };
        let h_now = empirical_kernel(next, &pair, false);
        let h_init = empirical_kernel(next, &pair, true);
        let drift_cap = (s_next + flips_next_at_sample) as Real / m;
        let drift_violation = (h_now - h_init).abs() - drift_cap;
        acc.observe(AuditSlot::KernelDrift, drift_violation);
        if drift_violation > 0.0 {
            return Err(ExperimentError::AuditViolation {
                step: t,
                probe,
                what: "kernel drift exceeded the sign-flip cap".into(),
                value: drift_violation,
                limit: 0.0,
            });
        }
    }
    if cfg.audit.deviation_probes > 0 {
        let dev = kernel_sup_deviation(
            next,
            cfg.audit.deviation_probes,
            audit_rng,
            DeviationMode::HtVsH0,
        );
        let worst = acc.summary.max_ht_deviation.unwrap_or(0.0);
        acc.summary.max_ht_deviation = Some(worst.max(dev.max_abs));
    }
    acc.summary.audited_steps += 1;
    Ok(())
}

fn record_checkpoint<R: rand::Rng>(
    cfg: &ExperimentConfig,
    state: &NetworkState<Real>,
    target: &TargetFunction<Real>,
    denom: Real,
    t: u64,
    flip_sample: &UnitVector<Real>,
    eval_rng: &mut R,
) -> Result<CheckpointRecord, ExperimentError> {
    let (delta_hat, _se) = mc_prediction_error(state, target, cfg.n_eval, eval_rng)?;
    let mc_error = (delta_hat * delta_hat + cfg.tau * cfg.tau).sqrt();
    let flips = sign_flip_count(state, flip_sample).fraction;
    let (_abs, drift_rel) = state.weight_drift()?;
    Ok(CheckpointRecord {
        t,
        mc_error,
        mc_error_normalized: mc_error / denom,
        sign_flip_fraction: flips,
        drift_relative: drift_rel,
        eta: cfg.schedule.eta(t),
    })
}

/// Execute one seeded run: `iterations` one-pass SGD steps with checkpoints
/// every `eval_cadence()` steps and audits every `sandwich_cadence()` steps.
/// Deterministic given `(config, run_index)`.
pub fn run_training(cfg: &ExperimentConfig, run_index: u32) -> Result<Trace, ExperimentError> {
    cfg.validate()?;
    let target = cfg.target.materialize(cfg.d, cfg.seed)?;
    run_training_with(cfg, &target, run_index)
}

/// As [`run_training`], with the target already materialized so batch
/// drivers can share one instance (datasets load once).
pub fn run_training_with(
    cfg: &ExperimentConfig,
    target: &TargetFunction<Real>,
    run_index: u32,
) -> Result<Trace, ExperimentError> {
    if let Some(dt) = target.dim_requirement() {
        if dt != cfg.d {
            return Err(ExperimentError::Config(format!(
                "target dimension {dt} ≠ configured d = {}",
                cfg.d
            )));
        }
    }
    let mut norm_rng = derive_stream(cfg.seed, StreamKind::NormEstimate, 0);
    let (f_star_norm, f_star_norm_se) =
        target.l2_norm_mc(cfg.d, NORM_MC_SAMPLES, &mut norm_rng)?;
    let denom = (f_star_norm * f_star_norm + cfg.tau * cfg.tau).sqrt();
    if denom == 0.0 {
        return Err(ExperimentError::Config(
            "‖f*‖ and τ are both zero; the normalized error is undefined".into(),
        ));
    }
    let stamp = RunStamp::new(cfg.seed, run_index);
    let mut state = match cfg.init {
        InitKind::Symmetric => NetworkState::<Real>::init_symmetric(cfg.m, cfg.d, stamp)?,
        InitKind::Iid => NetworkState::<Real>::init_iid(cfg.m, cfg.d, stamp)?,
    };
    let mut train_rng = stamp.rng(StreamKind::Train);
    let mut eval_rng = stamp.rng(StreamKind::Eval);
    let mut audit_rng = stamp.rng(StreamKind::Audit);
    let cadence = cfg.eval_cadence();
    let sandwich_every = cfg.sandwich_cadence();
    let mut audit_acc = AuditState::new();
    let mut records = Vec::with_capacity((cfg.iterations / cadence + 1) as usize);

    // The sample for step t doubles as the sign-flip probe of the
    // checkpoint at t, so draws stay strictly sequential on the training
    // stream no matter the cadences.
    let mut pending = draw_sample(target, cfg.d, cfg.tau, &mut train_rng)?;
    records.push(record_checkpoint(
        cfg, &state, target, denom, 0, &pending.0, &mut eval_rng,
    )?);
    for t in 0..cfg.iterations {
        let (x, y) = pending;
        let eta = cfg.schedule.eta(t);
        if sandwich_every > 0 && t % sandwich_every == 0 {
            let prev = state.clone();
            state.sgd_step((&x, y), eta)?;
            audit_transition(
                cfg,
                t,
                &prev,
                &state,
                (&x, y),
                eta,
                &mut audit_rng,
                &mut audit_acc,
            )?;
        } else {
            state.sgd_step((&x, y), eta)?;
        }
        pending = draw_sample(target, cfg.d, cfg.tau, &mut train_rng)?;
        let t_next = t + 1;
        if t_next % cadence == 0 || t_next == cfg.iterations {
            records.push(record_checkpoint(
                cfg, &state, target, denom, t_next, &pending.0, &mut eval_rng,
            )?);
        }
    }
    Ok(Trace {
        meta: TraceMeta {
            seed: cfg.seed,
            run_index,
            config_hash: cfg.config_hash(),
            f_star_norm,
            f_star_norm_se,
        },
        records,
        audit: audit_acc.summary,
    })
}

/// Run all `n_runs` of the experiment (parallel across runs, sequential
/// within each run), returning the traces in run order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<Trace>, ExperimentError> {
    cfg.validate()?;
    let target = cfg.target.materialize(cfg.d, cfg.seed)?;
    (0..cfg.n_runs as u32)
        .into_par_iter()
        .map(|run| run_training_with(cfg, &target, run))
        .collect()
}

/// Pointwise mean and population standard deviation of one recorded series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: Vec<Real>,
    pub std: Vec<Real>,
}

/// Cross-run aggregate of a set of traces sharing one config and grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTrace {
    pub config_hash: u64,
    pub n_runs: usize,
    pub t: Vec<u64>,
    pub mc_error: SeriesStats,
    pub mc_error_normalized: SeriesStats,
    pub sign_flip_fraction: SeriesStats,
    pub drift_relative: SeriesStats,
    pub eta: SeriesStats,
}

fn aggregate_series(
    traces: &[Trace],
    extract: impl Fn(&CheckpointRecord) -> Real,
) -> SeriesStats {
    let n_points = traces[0].records.len();
    let n = traces.len() as Real;
    let mut mean = vec![0.0; n_points];
    let mut second = vec![0.0; n_points];
    for trace in traces {
        for (i, rec) in trace.records.iter().enumerate() {
            let v = extract(rec);
            mean[i] += v;
            second[i] += v * v;
        }
    }
    for i in 0..n_points {
        mean[i] /= n;
        second[i] = (second[i] / n - mean[i] * mean[i]).max(0.0).sqrt();
    }
    SeriesStats { mean, std: second }
}

/// Pointwise mean/std across runs. All traces must share the config hash
/// and the checkpoint grid.
pub fn aggregate_runs(traces: &[Trace]) -> Result<AggregateTrace, ExperimentError> {
    let first = traces
        .first()
        .ok_or_else(|| ExperimentError::Aggregation("no traces to aggregate".into()))?;
    let grid: Vec<u64> = first.records.iter().map(|r| r.t).collect();
    for (i, trace) in traces.iter().enumerate() {
        if trace.meta.config_hash != first.meta.config_hash {
            return Err(ExperimentError::Aggregation(format!(
                "trace {i} has config hash {:016x}, expected {:016x}",
                trace.meta.config_hash, first.meta.config_hash
            )));
        }
        let g: Vec<u64> = trace.records.iter().map(|r| r.t).collect();
        if g != grid {
            return Err(ExperimentError::Aggregation(format!(
                "trace {i} checkpoint grid {g:?} differs from {grid:?}"
            )));
        }
    }
    Ok(AggregateTrace {
        config_hash: first.meta.config_hash,
        n_runs: traces.len(),
        t: grid,
        mc_error: aggregate_series(traces, |r| r.mc_error),
        mc_error_normalized: aggregate_series(traces, |r| r.mc_error_normalized),
        sign_flip_fraction: aggregate_series(traces, |r| r.sign_flip_fraction),
        drift_relative: aggregate_series(traces, |r| r.drift_relative),
        eta: aggregate_series(traces, |r| r.eta),
    })
}

/// One checkpoint of the bound comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundComparisonRow {
    pub t: u64,
    /// Mean recorded error across runs.
    pub empirical_mean: Real,
    /// Theoretical bound minimized over the table's blocks.
    pub bound: Real,
    /// 1-based block index attaining the minimum.
    pub argmin_block: usize,
    /// Informational flag: the bound fell below the empirical mean (its
    /// width condition need not hold at desk scale).
    pub below_empirical: bool,
}

/// Informational comparison of an aggregate against the convergence bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundComparison {
    pub rows: Vec<BoundComparisonRow>,
    pub flagged: usize,
}

/// Evaluate the bound per checkpoint, minimized over eigenvalue blocks.
/// `remainders[k−1]` must hold `R(f, k)` for block count `k`; the schedule
/// is the inverse-time one the convergence theorem assumes.
pub fn compare_to_bound(
    agg: &AggregateTrace,
    table: &SpectralTable,
    params: &BoundParams,
    remainders: &[Real],
) -> Result<BoundComparison, ExperimentError> {
    if remainders.len() != table.blocks.len() {
        return Err(ExperimentError::Config(format!(
            "got {} remainders for {} blocks",
            remainders.len(),
            table.blocks.len()
        )));
    }
    let schedule = StepSchedule::InverseTime {
        theta: params.theta,
    };
    let mut rows = Vec::with_capacity(agg.t.len());
    let mut flagged = 0;
    for (i, &t) in agg.t.iter().enumerate() {
        let mut best = Real::INFINITY;
        let mut argmin = 1;
        for k in 1..=table.blocks.len() {
            let p = BoundParams { ell: k, ..*params };
            let b = theorem_bound(&p, schedule, table, remainders[k - 1], t)?;
            if b < best {
                best = b;
                argmin = k;
            }
        }
        let empirical_mean = agg.mc_error.mean[i];
        let below = best < empirical_mean;
        flagged += usize::from(below);
        rows.push(BoundComparisonRow {
            t,
            empirical_mean,
            bound: best,
            argmin_block: argmin,
            below_empirical: below,
        });
    }
    Ok(BoundComparison { rows, flagged })
}

/// Header of the per-run trace CSV.
pub const TRACE_CSV_HEADER: &str = "t,mc_error,mc_error_norm,sign_flip_frac,drift_rel,eta";

/// Write one trace as CSV (12-significant-digit floats).
pub fn write_trace_csv<W: io::Write>(trace: &Trace, out: &mut W) -> io::Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for r in &trace.records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.t,
            fmt_g12(r.mc_error),
            fmt_g12(r.mc_error_normalized),
            fmt_g12(r.sign_flip_fraction),
            fmt_g12(r.drift_relative),
            fmt_g12(r.eta)
        )?;
    }
    Ok(())
}

/// JSON sidecar for a trace: run metadata plus the audit summary.
pub fn trace_sidecar_json(trace: &Trace) -> String {
    serde_json::json!({
        "meta": trace.meta,
        "audit": trace.audit,
    })
    .to_string()
}

/// Header of the aggregate CSV.
pub const AGGREGATE_CSV_HEADER: &str = "t,mc_error_mean,mc_error_std,mc_error_norm_mean,\
mc_error_norm_std,sign_flip_frac_mean,sign_flip_frac_std,drift_rel_mean,drift_rel_std,\
eta_mean,eta_std";

/// Write an aggregate as CSV with mean/std columns.
pub fn write_aggregate_csv<W: io::Write>(agg: &AggregateTrace, out: &mut W) -> io::Result<()> {
    writeln!(out, "{AGGREGATE_CSV_HEADER}")?;
    for i in 0..agg.t.len() {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            agg.t[i],
            fmt_g12(agg.mc_error.mean[i]),
            fmt_g12(agg.mc_error.std[i]),
            fmt_g12(agg.mc_error_normalized.mean[i]),
            fmt_g12(agg.mc_error_normalized.std[i]),
            fmt_g12(agg.sign_flip_fraction.mean[i]),
            fmt_g12(agg.sign_flip_fraction.std[i]),
            fmt_g12(agg.drift_relative.mean[i]),
            fmt_g12(agg.drift_relative.std[i]),
            fmt_g12(agg.eta.mean[i]),
            fmt_g12(agg.eta.std[i])
        )?;
    }
    Ok(())
}

/// Write a bound comparison as CSV.
pub fn write_bound_csv<W: io::Write>(cmp: &BoundComparison, out: &mut W) -> io::Result<()> {
    writeln!(out, "t,empirical_mean,bound,argmin_block,below_empirical")?;
    for r in &cmp.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.t,
            fmt_g12(r.empirical_mean),
            fmt_g12(r.bound),
            r.argmin_block,
            r.below_empirical
        )?;
    }
    Ok(())
}
