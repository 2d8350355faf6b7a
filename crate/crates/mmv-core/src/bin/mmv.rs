//! Batch CLI: every subcommand loads a JSON run configuration, runs one
//! experiment, and writes data-only artifacts (CSV/JSON) plus a manifest
//! with content hashes.
//!
//! Exit codes: 0 success, 1 configuration/validation error, 2 runtime
//! failure, 3 selftest criterion failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mmv_core::averaging::{
    averaged_coefficients, simulate_averaged, write_coefficient_table, AveragedModel,
    AveragedVariant, SlowTrajectory,
};
use mmv_core::config::{load_config, write_manifest, OutputFormat, RunConfig};
use mmv_core::diagnostics::{
    fast_limit_error, fluctuation_estimate, mollifier_rate, strong_rate, weak_rate,
    wrong_limit_demo, TestFn,
};
use mmv_core::engine::{record_grid, simulate, SimMode, Trajectory};
use mmv_core::frozen::{
    ergodicity_fit, solve_frozen_fixed_point, solve_frozen_pooled, solve_poisson, FrozenConfig,
};
use mmv_core::iteration::{cross_validate, iterate_averaged, iterate_full, metrics_report};
use mmv_core::measure::{Moments, EmpiricalMeasure};
use mmv_core::model::{check_dissipativity, check_measure_lipschitz, ProbePlan};
use mmv_core::rng::SamplerSpec;
use mmv_core::{MmvError, ModelSpec, Result};

#[derive(Parser)]
#[command(name = "mmv", about = "Two-scale McKean-Vlasov simulation toolkit", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Worker-thread cap (results do not depend on it); falls back to
    /// MMV_THREADS, then to the machine default.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override for the sim and frozen blocks.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Coupled slow-fast particle run with snapshot output.
    Simulate(Common),
    /// Frozen invariant family at a fixed slow law.
    Frozen(Common),
    /// Averaged coefficient table and averaged trajectory.
    Avg(Common),
    /// Iterated linearization, full and averaged, with cross-validation.
    Iterate(Common),
    /// Rate sweep; the experiment name picks strong|weak|fast|fluctuation.
    Rates(Common),
    /// Correct vs naive averaged limit comparison.
    DemoWrongLimit(Common),
    /// Exponential-ergodicity fit of the frozen fast equation.
    Ergodicity(Common),
    /// Model assumption reports (dissipativity, measure-Lipschitz).
    Check(Common),
    /// Built-in oracle suite; exits 3 on any FAIL.
    Selftest(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&Common, fn(&Ctx) -> Result<Vec<PathBuf>>) = match &cli.cmd {
        Cmd::Simulate(c) => (c, cmd_simulate),
        Cmd::Frozen(c) => (c, cmd_frozen),
        Cmd::Avg(c) => (c, cmd_avg),
        Cmd::Iterate(c) => (c, cmd_iterate),
        Cmd::Rates(c) => (c, cmd_rates),
        Cmd::DemoWrongLimit(c) => (c, cmd_wrong_limit),
        Cmd::Ergodicity(c) => (c, cmd_ergodicity),
        Cmd::Check(c) => (c, cmd_check),
        Cmd::Selftest(c) => (c, cmd_selftest),
    };
    let started = Instant::now();
    let ctx = match prepare(common) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(&ctx) {
        Ok(files) => {
            match write_manifest(&ctx.out, &ctx.cfg, ctx.threads, &files, started) {
                Ok(m) => println!("manifest: {}", m.display()),
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            }
            ExitCode::SUCCESS
        }
        Err(MmvError::Precondition(msg)) if msg == SELFTEST_FAILED => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

const SELFTEST_FAILED: &str = "selftest criteria failed";

struct Ctx {
    cfg: RunConfig,
    model: ModelSpec,
    out: PathBuf,
    threads: usize,
}

impl Ctx {
    fn frozen(&self) -> &FrozenConfig {
        self.cfg.frozen.as_ref().expect("injected by finalize")
    }

    fn avg_model(&self) -> AveragedModel {
        let variant = match self.cfg.experiment.variant.as_deref() {
            Some("naive") => AveragedVariant::Naive,
            _ => AveragedVariant::Correct,
        };
        AveragedModel::new(self.model.clone(), self.frozen().clone(), variant)
    }

    fn record(&self) -> Vec<f64> {
        self.cfg
            .experiment
            .record
            .clone()
            .unwrap_or_else(|| record_grid(self.cfg.sim.t_end, 2))
    }

    fn seeds(&self) -> Vec<u64> {
        self.cfg
            .experiment
            .seeds
            .clone()
            .unwrap_or_else(|| (0..8).map(|i| self.cfg.sim.seed + i).collect())
    }

    fn eps_list(&self) -> Result<Vec<f64>> {
        self.cfg.experiment.eps_list.clone().ok_or_else(|| {
            MmvError::InvalidConfig("experiment.eps_list: required for rate sweeps".into())
        })
    }

    fn json_on(&self) -> bool {
        matches!(self.cfg.format, OutputFormat::Json | OutputFormat::Both)
    }

    fn csv_on(&self) -> bool {
        matches!(self.cfg.format, OutputFormat::Csv | OutputFormat::Both)
    }
}

fn prepare(common: &Common) -> Result<Ctx> {
    let mut cfg = load_config(&common.config)?;
    if let Some(s) = common.seed {
        cfg.sim.seed = s;
        if let Some(f) = cfg.frozen.as_mut() {
            f.seed = s;
        }
    }
    let model = cfg.finalize()?;
    let threads = common
        .threads
        .or_else(|| {
            std::env::var("MMV_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    if threads > 0 {
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("mmv-out"));
    std::fs::create_dir_all(&out)?;
    let threads = if threads > 0 {
        threads
    } else {
        rayon::current_num_threads()
    };
    Ok(Ctx {
        cfg,
        model,
        out,
        threads,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[derive(Serialize)]
struct NodeMoments {
    t: f64,
    mean: Vec<f64>,
    var: Vec<f64>,
    m2: f64,
}

fn moments_json(times: &[f64], moments: Vec<Moments>) -> Vec<NodeMoments> {
    times
        .iter()
        .zip(moments)
        .map(|(&t, m)| NodeMoments {
            t,
            mean: m.mean,
            var: m.var,
            m2: m.m2,
        })
        .collect()
}

fn mu_from_experiment(ctx: &Ctx) -> Result<EmpiricalMeasure> {
    match &ctx.cfg.experiment.mu {
        Some(atoms) if !atoms.is_empty() => Ok(EmpiricalMeasure::from_points_1d(atoms)),
        Some(_) => Err(MmvError::InvalidConfig("experiment.mu: empty".into())),
        None => match &ctx.cfg.sim.initial_slow {
            SamplerSpec::Point { v } => Ok(EmpiricalMeasure::dirac(&[*v])),
            SamplerSpec::Atoms { atoms } => Ok(EmpiricalMeasure::from_points_1d(atoms)),
            _ => Err(MmvError::InvalidConfig(
                "experiment.mu: required for non-atomic initial laws".into(),
            )),
        },
    }
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_simulate(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let traj = simulate(&ctx.model, &ctx.cfg.sim, SimMode::Coupled, &ctx.record())?;
    write_trajectory(ctx, &traj, "trajectory")
}

fn write_trajectory(ctx: &Ctx, traj: &Trajectory, stem: &str) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    if ctx.csv_on() {
        let p = ctx.out.join(format!("{stem}.csv"));
        let mut f = std::fs::File::create(&p)?;
        traj.write_csv(&mut f)?;
        files.push(p);
    }
    if ctx.json_on() {
        #[derive(Serialize)]
        struct Out {
            slow: Vec<NodeMoments>,
            fast: Vec<NodeMoments>,
        }
        let p = ctx.out.join(format!("{stem}.json"));
        write_json(
            &p,
            &Out {
                slow: moments_json(&traj.times, traj.slow.iter().map(|m| m.moments()).collect()),
                fast: moments_json(&traj.times, traj.fast.iter().map(|m| m.moments()).collect()),
            },
        )?;
        files.push(p);
    }
    Ok(files)
}

fn cmd_frozen(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let mu = mu_from_experiment(ctx)?;
    let mut files = Vec::new();
    if let Some(n_max) = ctx.cfg.experiment.n_max {
        let run = solve_frozen_fixed_point(&ctx.model, &mu, ctx.frozen(), Some(n_max))?;
        #[derive(Serialize)]
        struct Out {
            pooled_means: Vec<f64>,
            deltas: Vec<f64>,
            ratios: Vec<f64>,
            converged: bool,
        }
        let p = ctx.out.join("frozen_recursion.json");
        write_json(
            &p,
            &Out {
                pooled_means: run.iterates.iter().map(|f| f.pooled.mean()[0]).collect(),
                deltas: run.deltas,
                ratios: run.ratios,
                converged: run.converged,
            },
        )?;
        files.push(p);
        if let Some(last) = run.iterates.last() {
            last.save_dir(&ctx.out)?;
            files.push(ctx.out.join("pooled.csv"));
        }
    } else {
        let family = solve_frozen_pooled(&ctx.model, &mu, ctx.frozen())?;
        family.save_dir(&ctx.out)?;
        files.push(ctx.out.join("pooled.csv"));
        let p = ctx.out.join("frozen_diagnostics.json");
        write_json(&p, &family.diag)?;
        files.push(p);
    }
    Ok(files)
}

fn cmd_avg(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let avg = ctx.avg_model();
    let mu = mu_from_experiment(ctx)?;
    let mut points: Vec<Vec<f64>> = (0..mu.len()).map(|i| mu.atom(i).to_vec()).collect();
    if let Some(extra) = &ctx.cfg.experiment.x_points {
        points.extend(extra.iter().map(|&x| vec![x]));
    }
    let refs: Vec<&[f64]> = points.iter().map(|p| p.as_slice()).collect();
    let rows = averaged_coefficients(&ctx.model, &mu, &refs, ctx.frozen(), avg.variant)?;
    let mut files = Vec::new();
    if ctx.csv_on() {
        let p = ctx.out.join("avg_coefficients.csv");
        let mu_hash = format!("{:016x}", mmv_core::rng::key_hash(
            &mu.atoms_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        ));
        let mut f = std::fs::File::create(&p)?;
        write_coefficient_table(&mut f, &rows, avg.variant, &mu_hash)?;
        files.push(p);
    }
    if ctx.json_on() {
        let p = ctx.out.join("avg_coefficients.json");
        write_json(&p, &rows)?;
        files.push(p);
    }
    let traj = simulate_averaged(&avg, &ctx.cfg.sim, &ctx.record())?;
    files.extend(write_slow_trajectory(ctx, &traj, "avg_trajectory")?);
    Ok(files)
}

fn write_slow_trajectory(ctx: &Ctx, traj: &SlowTrajectory, stem: &str) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    if ctx.csv_on() {
        let p = ctx.out.join(format!("{stem}.csv"));
        let mut f = std::fs::File::create(&p)?;
        use std::io::Write;
        writeln!(f, "t,w,x1")?;
        for (idx, &t) in traj.times.iter().enumerate() {
            let m = &traj.laws[idx];
            for i in 0..m.len() {
                writeln!(f, "{t},{},{}", m.weights()[i], m.atom(i)[0])?;
            }
        }
        files.push(p);
    }
    if ctx.json_on() {
        let p = ctx.out.join(format!("{stem}.json"));
        write_json(
            &p,
            &moments_json(&traj.times, traj.laws.iter().map(|m| m.moments()).collect()),
        )?;
        files.push(p);
    }
    Ok(files)
}

fn cmd_iterate(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let n_max = ctx.cfg.experiment.n_max.unwrap_or(4);
    let tol = ctx.cfg.experiment.tol.unwrap_or(0.0);
    let nodes = ctx.cfg.experiment.nodes.unwrap_or(5);
    let full = iterate_full(&ctx.model, &ctx.cfg.sim, n_max, tol, nodes)?;
    let avg = ctx.avg_model();
    let bar = iterate_averaged(&avg, &ctx.cfg.sim, n_max, tol, nodes)?;
    let mut files = Vec::new();

    let p = ctx.out.join("iteration_full.json");
    write_json(&p, &metrics_report(&full))?;
    files.push(p);
    let p = ctx.out.join("iteration_averaged.json");
    let bar_metrics: Vec<_> = bar.iter().filter_map(|s| s.metrics.clone()).collect();
    write_json(&p, &bar_metrics)?;
    files.push(p);
    let report = cross_validate(&ctx.model, &full, &bar, ctx.cfg.sim.epsilon)?;
    let p = ctx.out.join("cross_validation.json");
    write_json(&p, &report)?;
    files.push(p);
    Ok(files)
}

fn cmd_rates(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let name = ctx.cfg.experiment.name.as_str();
    let eps = ctx.eps_list()?;
    let seeds = ctx.seeds();
    let avg = ctx.avg_model();
    let mut files = Vec::new();
    let mut emit = |ctx: &Ctx, report: &mmv_core::diagnostics::RateReport| -> Result<()> {
        let stem = report.experiment.replace(['[', ']'], "_");
        if ctx.json_on() {
            let p = ctx.out.join(format!("{stem}.json"));
            write_json(&p, report)?;
            files.push(p);
        }
        if ctx.csv_on() {
            let p = ctx.out.join(format!("{stem}.csv"));
            let mut f = std::fs::File::create(&p)?;
            report.write_csv(&mut f)?;
            files.push(p);
        }
        Ok(())
    };
    match name {
        "strong" => {
            let r = strong_rate(&ctx.model, &avg, &ctx.cfg.sim, &eps, &seeds)?;
            emit(ctx, &r)?;
        }
        "weak" => {
            let fns = weak_test_fns(ctx)?;
            for r in weak_rate(&ctx.model, &avg, &ctx.cfg.sim, &eps, &fns, &seeds)? {
                emit(ctx, &r)?;
            }
        }
        "fast" => {
            let transient = ctx
                .cfg
                .experiment
                .transient_eps
                .unwrap_or(eps[eps.len() / 2]);
            let r = fast_limit_error(&ctx.model, &avg, &ctx.cfg.sim, &eps, transient, &seeds)?;
            let p = ctx.out.join("fast_limit.json");
            write_json(&p, &r)?;
            files.push(p);
        }
        "fluctuation" => {
            let f = builtin_centered_fn(&ctx.cfg)?;
            let r = fluctuation_estimate(&ctx.model, &ctx.cfg.sim, &f, &eps, &seeds)?;
            emit(ctx, &r)?;
        }
        other => {
            return Err(MmvError::InvalidConfig(format!(
                "experiment.name: `rates` expects strong|weak|fast|fluctuation, got `{other}`"
            )))
        }
    }
    Ok(files)
}

fn weak_test_fns(ctx: &Ctx) -> Result<Vec<TestFn>> {
    let names = ctx
        .cfg
        .experiment
        .test_fns
        .clone()
        .unwrap_or_else(|| vec!["mean".into(), "second_moment".into()]);
    names
        .iter()
        .map(|n| match n.as_str() {
            "mean" => Ok(TestFn::Mean),
            "second_moment" => Ok(TestFn::SecondMoment),
            "tanh_mean" => Ok(TestFn::TanhMean),
            other => Err(MmvError::InvalidConfig(format!(
                "experiment.test_fns: unknown functional `{other}`"
            ))),
        })
        .collect()
}

/// The centered fluctuation integrand y - m(x, mu) for the builtin linear
/// models, with m the frozen slice mean.
fn builtin_centered_fn(
    cfg: &RunConfig,
) -> Result<Box<dyn Fn(&[f64], &[f64], &Moments) -> f64 + Sync>> {
    let (name, params) = match (&cfg.model.builtin, &cfg.model.params) {
        (Some(n), Some(p)) => (n.clone(), p.clone()),
        _ => {
            return Err(MmvError::InvalidConfig(
                "experiment fluctuation: requires a builtin linear model".into(),
            ))
        }
    };
    let get = |k: &str| -> Result<f64> {
        params
            .get(k)
            .copied()
            .ok_or_else(|| MmvError::MissingParameter(k.into()))
    };
    match name.as_str() {
        "linear_ou" | "nu_only_drift" => {
            let (a, c, k0) = (get("a")?, get("c")?, get("k0")?);
            Ok(Box::new(move |x: &[f64], y: &[f64], mu: &Moments| {
                let m_bar = c * mu.mean[0] / (a - k0);
                y[0] - (c * x[0] + k0 * m_bar) / a
            }))
        }
        other => Err(MmvError::InvalidConfig(format!(
            "experiment fluctuation: no closed-form centering for builtin `{other}`"
        ))),
    }
}

fn cmd_wrong_limit(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let report = wrong_limit_demo(&ctx.model, ctx.frozen(), &ctx.cfg.sim, &ctx.seeds())?;
    let p = ctx.out.join("wrong_limit.json");
    write_json(&p, &report)?;
    if report.degenerate {
        println!("wrong-limit demo: degenerate instance (candidate drifts coincide)");
    } else {
        println!(
            "wrong-limit demo: D_correct = {:.4}, D_naive = {:.4}, floor = {:.4}, pass = {}",
            report.d_correct, report.d_naive, report.mc_stderr, report.pass
        );
    }
    Ok(vec![p])
}

fn cmd_ergodicity(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let mu = mu_from_experiment(ctx)?;
    let family = solve_frozen_pooled(&ctx.model, &mu, ctx.frozen())?;
    let fit = ergodicity_fit(
        &ctx.model,
        mu.atom(0),
        &mu,
        &family.pooled,
        &ctx.cfg.sim.initial_fast,
        ctx.frozen(),
    )?;
    let p = ctx.out.join("ergodicity.json");
    write_json(&p, &fit)?;
    println!("gamma_hat = {:.3}", fit.gamma_hat);
    Ok(vec![p])
}

fn cmd_check(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let probe = ProbePlan::default();
    let q_list = ctx
        .cfg
        .experiment
        .q_list
        .clone()
        .unwrap_or_else(|| vec![2.0, ctx.model.meta.p]);
    let diss = check_dissipativity(&ctx.model, &probe, &q_list)?;
    let lip = check_measure_lipschitz(&ctx.model, &probe, 0.2)?;
    let p1 = ctx.out.join("check_dissipativity.json");
    write_json(&p1, &diss)?;
    let p2 = ctx.out.join("check_measure_lipschitz.json");
    write_json(&p2, &lip)?;
    println!(
        "dissipativity: {}; measure-lipschitz: {}",
        if diss.iter().all(|r| r.pass) { "PASS" } else { "FAIL" },
        if lip.pass { "PASS" } else { "FAIL" }
    );
    Ok(vec![p1, p2])
}

// ---------------------------------------------------------------------------
// Selftest
// ---------------------------------------------------------------------------

fn cmd_selftest(ctx: &Ctx) -> Result<Vec<PathBuf>> {
    let suite = ctx.cfg.experiment.suite.as_deref().unwrap_or("oracle");
    if suite != "oracle" && suite != "all" {
        return Err(MmvError::InvalidConfig(format!(
            "experiment.suite: expected \"oracle\" or \"all\", got \"{suite}\""
        )));
    }
    let mut results: Vec<(String, bool, String)> = Vec::new();
    run_oracle_suite(ctx, &mut results)?;
    if suite == "all" {
        run_extended_suite(ctx, &mut results)?;
    }
    let mut all_pass = true;
    for (name, pass, detail) in &results {
        println!(
            "SELFTEST {name}: {} ({detail})",
            if *pass { "PASS" } else { "FAIL" }
        );
        all_pass &= *pass;
    }
    #[derive(Serialize)]
    struct Row {
        name: String,
        pass: bool,
        detail: String,
    }
    let p = ctx.out.join("selftest.json");
    write_json(
        &p,
        &results
            .iter()
            .map(|(name, pass, detail)| Row {
                name: name.clone(),
                pass: *pass,
                detail: detail.clone(),
            })
            .collect::<Vec<_>>(),
    )?;
    if !all_pass {
        return Err(MmvError::Precondition(SELFTEST_FAILED.into()));
    }
    Ok(vec![p])
}

fn oracle_model() -> Result<ModelSpec> {
    let params: std::collections::BTreeMap<String, f64> = [
        ("a", 2.0),
        ("c", 1.0),
        ("k0", 0.5),
        ("g0", std::f64::consts::SQRT_2),
        ("b0", 1.0),
        ("b1", 1.0),
        ("b2", 0.0),
        ("s0", 1.0),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), *v))
    .collect();
    mmv_core::model::builtin("linear_ou", &params)
}

fn run_oracle_suite(ctx: &Ctx, results: &mut Vec<(String, bool, String)>) -> Result<()> {
    let model = oracle_model()?;
    let seed = ctx.cfg.sim.seed;
    let mu = EmpiricalMeasure::dirac(&[1.0]);
    let cfg = FrozenConfig {
        k: 1024,
        burn_in: 4.0,
        avg_window: 16.0,
        picard_tol: 0.05,
        picard_max: 30,
        h_fast: 1e-3,
        seed,
        init_fast: SamplerSpec::point(0.0),
        snapshots: 64,
    };

    let family = solve_frozen_pooled(&model, &mu, &cfg)?;
    let m_hat = family.pooled.mean()[0];
    let v_hat = family.slices[0].moments().var[0];
    results.push((
        "frozen-fixed-point".into(),
        (m_hat - 2.0 / 3.0).abs() <= 0.02 && (v_hat - 0.5).abs() <= 0.04,
        format!("m_hat = {m_hat:.4} (2/3), v_hat = {v_hat:.4} (0.5)"),
    ));

    let run = solve_frozen_fixed_point(&model, &mu, &cfg, Some(4))?;
    let means: Vec<f64> = run.iterates.iter().map(|f| f.pooled.mean()[0]).collect();
    let want = [0.5, 0.625, 0.65625];
    let rec_ok = means.len() >= 3
        && means
            .iter()
            .zip(&want)
            .all(|(m, w)| (m - w).abs() <= 0.02);
    results.push((
        "recursion-geometry".into(),
        rec_ok,
        format!("pooled means {means:.4?} vs {want:?}"),
    ));

    let m_slice = family.slices[0].mean()[0];
    let u = solve_poisson(
        &model,
        |y: &[f64]| y[0] - m_slice,
        &[1.0],
        &mu,
        &family.slices[0],
        &[m_slice + 1.0],
        &cfg,
        None,
        4096,
        0.05,
    )?;
    results.push((
        "poisson-cell".into(),
        (u - 0.5).abs() <= 0.03,
        format!("U = {u:.4} (0.5)"),
    ));

    let fit = ergodicity_fit(
        &model,
        &[1.0],
        &mu,
        &family.pooled,
        &SamplerSpec::point(5.0),
        &cfg,
    )?;
    results.push((
        "ergodic-decay".into(),
        fit.gamma_hat >= 1.2 && fit.gamma_hat <= 2.8,
        format!("gamma_hat = {:.3} (a = 2)", fit.gamma_hat),
    ));
    Ok(())
}

fn run_extended_suite(ctx: &Ctx, results: &mut Vec<(String, bool, String)>) -> Result<()> {
    let r = mollifier_rate(&[2, 4, 8, 16, 32], ctx.cfg.sim.seed)?;
    results.push((
        "mollifier-decay".into(),
        r.pass,
        format!("slope = {:.3} (<= -0.8)", r.slope),
    ));
    Ok(())
}
