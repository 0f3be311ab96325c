//! Command-line entry point: spectral tables, bound curves, training runs,
//! experiment batteries, MNIST preparation, and the invariant-audit suite.
//!
//! Exit codes: 0 ok, 2 config error, 3 I/O error, 4 invariant violation,
//! 5 numerical failure.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use onepass_ntk::error::ToolError;
use onepass_ntk::experiment::{
    aggregate_runs, compare_to_bound, run_experiment, run_training, trace_sidecar_json,
    write_aggregate_csv, write_bound_csv, write_trace_csv, ExperimentConfig,
};
use onepass_ntk::kernels::{residual_bounds, sign_flip_count};
use onepass_ntk::network::{NetworkState, StepSchedule};
use onepass_ntk::rng::{derive_stream, RunStamp, StreamKind};
use onepass_ntk::spectrum::{
    ntk_spectrum, parseval_norm, projection_remainder, theorem_bound, BoundParams, HProfile,
};
use onepass_ntk::stream::{draw_sample, load_mnist, sample_sphere, TargetSpec};
use onepass_ntk::Real;

#[derive(Parser)]
#[command(
    name = "onepass-ntk",
    version,
    about = "Streaming SGD for wide two-layer ReLU networks, with kernel diagnostics"
)]
struct Cli {
    /// Cap worker threads for run-level parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Print progress to stderr (-v, -vv for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Leading eigenvalue blocks of the limiting kernel, as JSON.
    Spectrum {
        /// Sphere dimension d (inputs live on S^{d-1}), d ≥ 3.
        #[arg(long)]
        d: usize,
        /// Number of leading eigenvalue blocks.
        #[arg(long)]
        blocks: usize,
        /// Series tolerance.
        #[arg(long, default_value_t = 1e-14)]
        tol: Real,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convergence-bound curve over iterations, as CSV.
    Bound {
        /// Sphere dimension d ≥ 3.
        #[arg(long)]
        d: usize,
        /// Inverse-time step parameter θ ∈ (0, 1/4).
        #[arg(long)]
        theta: Real,
        /// Initialization-quality δ ∈ (0, 1); omit for symmetric initialization.
        #[arg(long)]
        delta: Option<Real>,
        /// Label-noise standard deviation.
        #[arg(long, default_value_t = 0.0)]
        tau: Real,
        /// Target norm ‖f*‖.
        #[arg(long, default_value_t = 1.0)]
        f_star_norm: Real,
        /// Iteration horizon T.
        #[arg(long)]
        horizon: u64,
        /// Eigenvalue blocks to minimize over.
        #[arg(long, default_value_t = 8)]
        blocks: usize,
        /// Checkpoint spacing for the curve.
        #[arg(long, default_value_t = 1)]
        eval_every: u64,
        /// Target generator profile for projection remainders
        /// (zero remainders when omitted).
        #[arg(long, value_parser = ["linear", "constant", "ntk"])]
        profile: Option<String>,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One seeded training run: trace CSV plus a JSON metadata sidecar.
    Train {
        /// Experiment config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Run index within the experiment.
        #[arg(long, default_value_t = 0)]
        run: u32,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path; the sidecar lands next to it with a .json suffix.
        #[arg(long)]
        out: PathBuf,
    },
    /// All runs of an experiment: per-run CSVs plus the aggregate.
    Experiment {
        /// Experiment config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (created if missing).
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Convert MNIST IDX files (digits 0/1) into the binary dataset cache.
    MnistPrep {
        /// IDX image file (train-images-idx3-ubyte).
        #[arg(long)]
        images: PathBuf,
        /// IDX label file (train-labels-idx1-ubyte).
        #[arg(long)]
        labels: PathBuf,
        /// Cache file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in invariant suite; nonzero exit on any violation.
    Check {
        /// Also run one audited training run of this config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
        {
            eprintln!("error: could not configure {jobs} worker threads: {e}");
            std::process::exit(2);
        }
    }
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), ToolError> {
    match cli.command {
        Command::Spectrum { d, blocks, tol, out } => cmd_spectrum(d, blocks, tol, out.as_deref()),
        Command::Bound {
            d,
            theta,
            delta,
            tau,
            f_star_norm,
            horizon,
            blocks,
            eval_every,
            profile,
            out,
        } => cmd_bound(
            d,
            theta,
            delta,
            tau,
            f_star_norm,
            horizon,
            blocks,
            eval_every,
            profile.as_deref(),
            out.as_deref(),
        ),
        Command::Train {
            config,
            run,
            seed,
            out,
        } => cmd_train(&config, run, seed, &out, cli.verbose),
        Command::Experiment {
            config,
            seed,
            out_dir,
        } => cmd_experiment(&config, seed, &out_dir, cli.verbose),
        Command::MnistPrep { images, labels, out } => cmd_mnist_prep(&images, &labels, &out),
        Command::Check { config } => cmd_check(config.as_deref()),
    }
}

fn load_config(path: &Path, seed_override: Option<u64>) -> Result<ExperimentConfig, ToolError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ToolError::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_toml_str(&text).map_err(ToolError::from)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<(), ToolError> {
    match path {
        Some(p) => fs::write(p, bytes)
            .map_err(|e| ToolError::Io(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| ToolError::Io(format!("cannot write to stdout: {e}"))),
    }
}

fn cmd_spectrum(
    d: usize,
    blocks: usize,
    tol: Real,
    out: Option<&Path>,
) -> Result<(), ToolError> {
    let table = ntk_spectrum(d, blocks, tol)?;
    let mut json = serde_json::to_string_pretty(&table)
        .map_err(|e| ToolError::Numerical(format!("table serialization failed: {e}")))?;
    json.push('\n');
    write_output(out, json.as_bytes())
}

fn profile_from_name(name: &str) -> HProfile {
    match name {
        "linear" => HProfile::Linear,
        "constant" => HProfile::Constant,
        _ => HProfile::Ntk,
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_bound(
    d: usize,
    theta: Real,
    delta: Option<Real>,
    tau: Real,
    f_star_norm: Real,
    horizon: u64,
    blocks: usize,
    eval_every: u64,
    profile: Option<&str>,
    out: Option<&Path>,
) -> Result<(), ToolError> {
    if eval_every == 0 {
        return Err(ToolError::Config("eval-every must be ≥ 1".into()));
    }
    let table = ntk_spectrum(d, blocks, 1e-14)?;
    let remainders: Vec<Real> = match profile {
        Some(name) => {
            let p = profile_from_name(name);
            (1..=blocks)
                .map(|r| projection_remainder(d, &p, r, 1e-12).map(|rep| rep.value))
                .collect::<Result<_, _>>()?
        }
        None => vec![0.0; blocks],
    };
    let params = BoundParams {
        theta,
        delta,
        tau,
        f_star_norm,
        ell: 1,
        horizon,
    };
    // Fail fast on bad parameters before the sweep.
    params.c1()?;
    let schedule = StepSchedule::InverseTime { theta };
    let mut csv = String::from("t,bound,argmin_block\n");
    let mut t = 0;
    loop {
        let mut best = Real::INFINITY;
        let mut argmin = 1;
        for k in 1..=blocks {
            let p = BoundParams { ell: k, ..params };
            let b = theorem_bound(&p, schedule, &table, remainders[k - 1], t)?;
            if b < best {
                best = b;
                argmin = k;
            }
        }
        csv.push_str(&format!(
            "{t},{},{argmin}\n",
            onepass_ntk::fmt_g12(best)
        ));
        if t >= horizon {
            break;
        }
        t = (t + eval_every).min(horizon);
    }
    write_output(out, csv.as_bytes())
}

fn cmd_train(
    config: &Path,
    run: u32,
    seed: Option<u64>,
    out: &Path,
    verbose: u8,
) -> Result<(), ToolError> {
    let cfg = load_config(config, seed)?;
    let trace = run_training(&cfg, run)?;
    if verbose > 0 {
        eprintln!(
            "run {run}: {} checkpoints, {} audited steps, final error {:.6e}",
            trace.records.len(),
            trace.audit.audited_steps,
            trace.records.last().map_or(f64::NAN, |r| r.mc_error)
        );
    }
    let mut buf = Vec::new();
    write_trace_csv(&trace, &mut buf)
        .map_err(|e| ToolError::Io(format!("cannot format trace: {e}")))?;
    write_output(Some(out), &buf)?;
    let sidecar_path = out.with_extension("json");
    write_output(Some(&sidecar_path), trace_sidecar_json(&trace).as_bytes())
}

fn cmd_experiment(
    config: &Path,
    seed: Option<u64>,
    out_dir: &Path,
    verbose: u8,
) -> Result<(), ToolError> {
    let cfg = load_config(config, seed)?;
    fs::create_dir_all(out_dir)
        .map_err(|e| ToolError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    let traces = run_experiment(&cfg)?;
    for trace in &traces {
        let base = out_dir.join(format!("run_{:03}", trace.meta.run_index));
        let mut buf = Vec::new();
        write_trace_csv(trace, &mut buf)
            .map_err(|e| ToolError::Io(format!("cannot format trace: {e}")))?;
        write_output(Some(&base.with_extension("csv")), &buf)?;
        write_output(
            Some(&base.with_extension("json")),
            trace_sidecar_json(trace).as_bytes(),
        )?;
        if verbose > 0 {
            eprintln!(
                "run {}: final error {:.6e}",
                trace.meta.run_index,
                trace.records.last().map_or(f64::NAN, |r| r.mc_error)
            );
        }
    }
    let agg = aggregate_runs(&traces)?;
    let mut buf = Vec::new();
    write_aggregate_csv(&agg, &mut buf)
        .map_err(|e| ToolError::Io(format!("cannot format aggregate: {e}")))?;
    write_output(Some(&out_dir.join("aggregate.csv")), &buf)?;

    // Informational bound comparison when the run sits in the theorem's
    // regime (inverse-time schedule) and the target has a series profile.
    if let StepSchedule::InverseTime { theta } = cfg.schedule {
        let profile = match &cfg.target {
            TargetSpec::Linear => Some(HProfile::Linear),
            TargetSpec::RidgeProfile { h_derivs } => Some(HProfile::Custom {
                derivs: h_derivs.clone(),
            }),
            _ => None,
        };
        if let Some(profile) = profile {
            if cfg.d >= 3 {
                let blocks = 8;
                let table = ntk_spectrum(cfg.d, blocks, 1e-14)?;
                let remainders: Vec<Real> = (1..=blocks)
                    .map(|r| projection_remainder(cfg.d, &profile, r, 1e-12).map(|rep| rep.value))
                    .collect::<Result<_, _>>()?;
                let params = BoundParams {
                    theta,
                    delta: None,
                    tau: cfg.tau,
                    f_star_norm: traces[0].meta.f_star_norm,
                    ell: 1,
                    horizon: cfg.iterations,
                };
                let cmp = compare_to_bound(&agg, &table, &params, &remainders)?;
                let mut bbuf = Vec::new();
                write_bound_csv(&cmp, &mut bbuf)
                    .map_err(|e| ToolError::Io(format!("cannot format bound: {e}")))?;
                write_output(Some(&out_dir.join("bound.csv")), &bbuf)?;
                if verbose > 0 && cmp.flagged > 0 {
                    eprintln!(
                        "note: bound below empirical mean at {} of {} checkpoints \
                         (width condition not certified at this scale)",
                        cmp.flagged,
                        cmp.rows.len()
                    );
                }
            }
        }
    }
    Ok(())
}

fn cmd_mnist_prep(images: &Path, labels: &Path, out: &Path) -> Result<(), ToolError> {
    let ds = load_mnist::<Real>(images, labels)?;
    ds.save_cache(out)?;
    println!(
        "wrote {}: {} samples of dimension {}",
        out.display(),
        ds.len(),
        ds.dim()
    );
    Ok(())
}

/// The built-in invariant suite: spectral identities, the symmetric-null
/// property, an audited training run, and checkpoint round-trips. Prints one
/// line per check; any violation aborts with a nonzero exit.
fn cmd_check(config: Option<&Path>) -> Result<(), ToolError> {
    let mut passed = 0usize;
    let mut check = |name: &str, ok: bool, detail: String| -> Result<(), ToolError> {
        if ok {
            println!("ok: {name}");
            passed += 1;
            Ok(())
        } else {
            Err(ToolError::Invariant(format!("{name}: {detail}")))
        }
    };

    // 1. Leading eigenvalue identity and chain ordering per dimension.
    for d in [3usize, 5, 10] {
        let table = ntk_spectrum(d, 8, 1e-14)?;
        let lam1 = table.eigenvalue(1).unwrap();
        check(
            &format!("spectrum d={d}: top eigenvalue = 1/(4d)"),
            (lam1 - 1.0 / (4.0 * d as Real)).abs() < 1e-12,
            format!("λ₁ = {lam1}"),
        )?;
        let ordered = table
            .blocks
            .windows(2)
            .all(|p| p[0].beta >= p[1].beta && p[1].beta > 0.0);
        check(
            &format!("spectrum d={d}: eigenvalue chain ordered and positive"),
            ordered,
            "chain violation".into(),
        )?;
    }

    // 2. Parseval and remainder identities for the linear target.
    let parseval = parseval_norm(5, &HProfile::Linear, 40, 1e-14)?;
    check(
        "parseval: linear target has squared norm 1/d",
        (parseval.value - 0.2).abs() < 1e-10,
        format!("value {}", parseval.value),
    )?;
    let rem = projection_remainder(5, &HProfile::Linear, 1, 1e-14)?;
    check(
        "remainder: linear target lies in the first block",
        rem.value.abs() < 1e-12,
        format!("R = {}", rem.value),
    )?;

    // 3. Symmetric initialization predicts exactly zero.
    let state = NetworkState::<Real>::init_symmetric(1000, 5, 7u64)?;
    let mut rng = derive_stream(7, StreamKind::Deviation, 0);
    let worst = (0..100)
        .map(|_| state.forward(&sample_sphere(5, &mut rng)).abs())
        .fold(0.0, Real::max);
    check(
        "symmetric initialization: |f| < 1e-12 at 100 probes",
        worst < 1e-12,
        format!("max |f| = {worst}"),
    )?;

    // 4. Step-level identities on a fresh audited run.
    let mut state = NetworkState::<Real>::init_iid(256, 5, 13u64)?;
    let target = TargetSpec::TeacherNet.materialize(5, 13)?;
    let mut train = derive_stream(13, StreamKind::Train, 0);
    let mut audit = derive_stream(13, StreamKind::Audit, 0);
    let mut worst_slack: Real = 0.0;
    let mut worst_cap: Real = -1.0;
    for t in 0..200u64 {
        let (x, y) = draw_sample(&target, 5, 0.1, &mut train)?;
        let prev = state.clone();
        state.sgd_step((&x, y), 0.2)?;
        for _ in 0..3 {
            let p = sample_sphere::<Real, _>(5, &mut audit);
            let rb = residual_bounds(&prev, &state, (&x, y), 0.2, &p)?;
            worst_slack = worst_slack
                .max(rb.lower - rb.f_change)
                .max(rb.f_change - rb.upper);
            let flips =
                (sign_flip_count(&prev, &p).count + sign_flip_count(&state, &p).count) as Real;
            worst_cap = worst_cap.max(rb.l.abs().max(rb.m.abs()) - flips / 256.0);
        }
        let _ = t;
    }
    check(
        "sandwich bounds hold across 200 audited steps",
        worst_slack <= 1e-9,
        format!("worst slack {worst_slack}"),
    )?;
    check(
        "kernel cross terms stay within sign-flip caps",
        worst_cap <= 0.0,
        format!("worst excess {worst_cap}"),
    )?;

    // 5. Checkpoint round-trip is bit-exact.
    let dir = std::env::temp_dir().join(format!("onepass-ntk-check-{}", std::process::id()));
    fs::create_dir_all(&dir).map_err(|e| ToolError::Io(e.to_string()))?;
    let ckpt = dir.join("state.ckpt");
    let stamp = RunStamp::new(13, 0);
    state.save_checkpoint(stamp, &ckpt)?;
    let (loaded, loaded_stamp) = NetworkState::<Real>::load_checkpoint(&ckpt)?;
    let round_trip = loaded == state && loaded_stamp == stamp;
    let _ = fs::remove_dir_all(&dir);
    check(
        "checkpoint round-trip is bit-exact",
        round_trip,
        "reloaded state differs".into(),
    )?;

    // 6. Training determinism (and, with --config, the user's own run).
    let cfg = match config {
        Some(path) => load_config(path, None)?,
        None => ExperimentConfig::from_toml_str(
            r#"
                version = 1
                d = 5
                m = 64
                tau = 0.1
                iterations = 200
                init = "symmetric"
                n_eval = 100
                n_runs = 2
                seed = 29

                [target]
                kind = "linear"

                [schedule]
                kind = "constant"
                eta = 0.2
            "#,
        )?,
    };
    let t0 = run_training(&cfg, 0)?;
    let t1 = run_training(&cfg, 0)?;
    check(
        "training run is deterministic",
        t0 == t1,
        "replay differs".into(),
    )?;
    check(
        "audited run reports no violations",
        t0.audit.max_sandwich_slack <= 1e-9
            && t0.audit.max_lm_violation <= 0.0
            && t0.audit.max_kernel_drift_violation <= 0.0,
        format!(
            "slacks: sandwich {}, cross-term {}, drift {}",
            t0.audit.max_sandwich_slack,
            t0.audit.max_lm_violation,
            t0.audit.max_kernel_drift_violation
        ),
    )?;

    println!("all {passed} checks passed");
    Ok(())
}
