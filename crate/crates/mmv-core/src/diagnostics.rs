//! Rate fitting and the headline verification experiments: strong/weak
//! convergence sweeps, the fast-motion limit, fluctuation integrals, the
//! wrong-limit demonstration, and mollification decay.

use rayon::prelude::*;
use serde::Serialize;

use crate::averaging::{
    averaged_coefficients, fast_limit, simulate_averaged, AveragedModel, AveragedVariant,
};
use crate::engine::{simulate, simulate_with_integral, SimConfig, SimMode};
use crate::error::{MmvError, Result};
use crate::frozen::{least_squares, FrozenConfig};
use crate::measure::{
    mollify_measure, w2_distance, weighted_tv_distance, BinningPolicy, EmpiricalMeasure,
    KernelSpec, Moments, WeightFunction,
};
use crate::model::ModelSpec;
use crate::rng::{normal, StreamTag};

/// Seed offset decoupling the two legs of weak-error experiments.
const WEAK_LEG_OFFSET: u64 = 1_000_003;

/// Log-log rate fit of one experiment.
#[derive(Clone, Debug, Serialize)]
pub struct RateReport {
    pub experiment: String,
    /// Sweep abscissa (epsilon, or n for mollification).
    pub eps: Vec<f64>,
    pub errors: Vec<f64>,
    pub stderr: Vec<f64>,
    pub slope: f64,
    /// Jackknife (leave-one-seed-out) half-width of the slope; 0 when only
    /// one replicate is available.
    pub halfwidth: f64,
    pub target: f64,
    pub band: (f64, f64),
    pub pass: bool,
    /// Half-batch replicate disagreement, the MC noise floor.
    pub noise_floor: f64,
    /// Sweep points excluded from the fit as floor-dominated.
    pub excluded: Vec<f64>,
    /// Too few points above the floor for an assertable fit; `pass` is then
    /// vacuous.
    pub floor_limited: bool,
}

impl RateReport {
    /// Companion CSV: `eps,error,stderr,excluded`.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "eps,error,stderr,excluded")?;
        for (i, &e) in self.eps.iter().enumerate() {
            let ex = self.excluded.contains(&e) as u8;
            writeln!(out, "{e},{},{},{ex}", self.errors[i], self.stderr[i])?;
        }
        Ok(())
    }
}

fn check_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.len() < 3 {
        return Err(MmvError::Precondition(
            "rate sweep needs at least 3 epsilon values".into(),
        ));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) || eps_list.iter().any(|&e| e <= 0.0) {
        return Err(MmvError::Precondition(
            "epsilon list must be positive and strictly decreasing".into(),
        ));
    }
    Ok(())
}

/// Column means and standard errors of a seeds x points error table.
fn summarize(per_seed: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let s = per_seed.len();
    let p = per_seed[0].len();
    let mut means = vec![0.0; p];
    let mut sds = vec![0.0; p];
    for col in 0..p {
        let m = per_seed.iter().map(|r| r[col]).sum::<f64>() / s as f64;
        means[col] = m;
        if s > 1 {
            let v = per_seed.iter().map(|r| (r[col] - m).powi(2)).sum::<f64>() / (s - 1) as f64;
            sds[col] = (v / s as f64).sqrt();
        }
    }
    (means, sds)
}

/// Half-batch disagreement per point: |mean(first half) - mean(second half)|.
fn half_batch_floor(per_seed: &[Vec<f64>]) -> Vec<f64> {
    let s = per_seed.len();
    let p = per_seed[0].len();
    if s < 2 {
        return vec![0.0; p];
    }
    let half = s / 2;
    (0..p)
        .map(|col| {
            let a = per_seed[..half].iter().map(|r| r[col]).sum::<f64>() / half as f64;
            let b = per_seed[half..].iter().map(|r| r[col]).sum::<f64>() / (s - half) as f64;
            (a - b).abs()
        })
        .collect()
}

fn fit_slope(xs: &[f64], errs: &[f64]) -> Result<f64> {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    Ok(least_squares(&lx, &ly)?.0)
}

/// Builds a RateReport from a per-seed error table: floor exclusion, mean
/// fit, jackknife half-width, band test.
fn assemble_rate_report(
    experiment: &str,
    xs: &[f64],
    per_seed: &[Vec<f64>],
    target: f64,
    band: (f64, f64),
) -> Result<RateReport> {
    assemble_rate_report_inner(experiment, xs, per_seed, target, band, false)
}

/// Signed variant: the table holds signed per-seed differences; the error is
/// |seed mean| so the MC noise averages out instead of folding into a floor.
fn assemble_rate_report_signed(
    experiment: &str,
    xs: &[f64],
    per_seed: &[Vec<f64>],
    target: f64,
    band: (f64, f64),
) -> Result<RateReport> {
    assemble_rate_report_inner(experiment, xs, per_seed, target, band, true)
}

fn assemble_rate_report_inner(
    experiment: &str,
    xs: &[f64],
    per_seed: &[Vec<f64>],
    target: f64,
    band: (f64, f64),
    signed: bool,
) -> Result<RateReport> {
    let (raw_errors, stderr) = summarize(per_seed);
    let errors: Vec<f64> = if signed {
        raw_errors.iter().map(|e| e.abs()).collect()
    } else {
        raw_errors
    };
    let floors = half_batch_floor(per_seed);
    let noise_floor = floors.iter().cloned().fold(0.0, f64::max);

    let mut keep = Vec::new();
    let mut excluded = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        // 1e-20 absolute cut: squared quantities at pure rounding scale.
        if errors[i] > 1e-20 && errors[i] >= 2.0 * floors[i] {
            keep.push(i);
        } else {
            excluded.push(x);
        }
    }
    let floor_limited = keep.len() < 3;
    let (slope, halfwidth) = if floor_limited {
        (f64::NAN, f64::NAN)
    } else {
        let kx: Vec<f64> = keep.iter().map(|&i| xs[i]).collect();
        let ke: Vec<f64> = keep.iter().map(|&i| errors[i]).collect();
        let slope = fit_slope(&kx, &ke)?;
        // Leave-one-seed-out jackknife on the kept points.
        let s = per_seed.len();
        let hw = if s > 2 {
            let mut thetas = Vec::with_capacity(s);
            for drop in 0..s {
                let sub: Vec<&Vec<f64>> = per_seed
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != drop)
                    .map(|(_, r)| r)
                    .collect();
                let means: Vec<f64> = keep
                    .iter()
                    .map(|&i| {
                        let m = sub.iter().map(|r| r[i]).sum::<f64>() / sub.len() as f64;
                        if signed {
                            m.abs()
                        } else {
                            m
                        }
                    })
                    .collect();
                if means.iter().any(|&m| m <= 0.0) {
                    continue;
                }
                thetas.push(fit_slope(&kx, &means)?);
            }
            if thetas.len() > 1 {
                let n = thetas.len() as f64;
                let mean = thetas.iter().sum::<f64>() / n;
                let var = thetas.iter().map(|t| (t - mean).powi(2)).sum::<f64>() * (n - 1.0) / n;
                2.0 * var.sqrt()
            } else {
                0.0
            }
        } else {
            0.0
        };
        (slope, hw)
    };
    let pass = floor_limited
        || (slope >= band.0 && slope <= band.1)
        || (halfwidth.is_finite() && (slope - target).abs() <= halfwidth);
    Ok(RateReport {
        experiment: experiment.to_string(),
        eps: xs.to_vec(),
        errors,
        stderr,
        slope,
        halfwidth,
        target,
        band,
        pass,
        noise_floor,
        excluded,
        floor_limited,
    })
}

fn with_seed_eps(cfg: &SimConfig, seed: u64, eps: f64) -> SimConfig {
    let mut c = cfg.clone();
    c.seed = seed;
    c.epsilon = eps;
    c
}

// ---------------------------------------------------------------------------
// Strong rate
// ---------------------------------------------------------------------------

/// Pathwise strong error sweep: E|X^eps_T - X_bar_T|^2 with common random
/// numbers (same seed keys both legs), fitted against epsilon.
pub fn strong_rate(
    model: &ModelSpec,
    avg: &AveragedModel,
    cfg_base: &SimConfig,
    eps_list: &[f64],
    seeds: &[u64],
) -> Result<RateReport> {
    check_eps_list(eps_list)?;
    if seeds.is_empty() {
        return Err(MmvError::Precondition("at least one seed required".into()));
    }
    let t_end = cfg_base.t_end;
    let per_seed: Result<Vec<Vec<f64>>> = seeds
        .par_iter()
        .map(|&s| {
            // The averaged law is epsilon-independent: one run per seed.
            let cfg_avg = with_seed_eps(cfg_base, s, eps_list[0]);
            let bar = simulate_averaged(avg, &cfg_avg, &[t_end])?;
            let xbar = bar.terminal().atoms_flat().to_vec();
            let d1 = model.d1;
            let mut row = Vec::with_capacity(eps_list.len());
            for &eps in eps_list {
                let cfg = with_seed_eps(cfg_base, s, eps);
                let traj = simulate(model, &cfg, SimMode::Coupled, &[t_end])?;
                let xe = traj.terminal_slow().atoms_flat();
                let err = xe
                    .iter()
                    .zip(&xbar)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / (xe.len() / d1) as f64;
                row.push(err);
            }
            Ok(row)
        })
        .collect();
    assemble_rate_report("strong_rate", eps_list, &per_seed?, 1.0, (0.7, 1.3))
}

// ---------------------------------------------------------------------------
// Weak rate
// ---------------------------------------------------------------------------

/// Built-in test functionals for weak-error sweeps.
#[derive(Clone, Debug)]
pub enum TestFn {
    Mean,
    SecondMoment,
    TanhMean,
    W2Ref(EmpiricalMeasure),
}

impl TestFn {
    pub fn name(&self) -> &'static str {
        match self {
            TestFn::Mean => "mean",
            TestFn::SecondMoment => "second_moment",
            TestFn::TanhMean => "tanh_mean",
            TestFn::W2Ref(_) => "w2_ref",
        }
    }

    pub fn eval(&self, mu: &EmpiricalMeasure) -> Result<f64> {
        Ok(match self {
            TestFn::Mean => mu.moments().mean[0],
            TestFn::SecondMoment => mu.moments().m2,
            TestFn::TanhMean => {
                let mut acc = 0.0;
                for i in 0..mu.len() {
                    acc += mu.weights()[i] * mu.atom(i)[0].tanh();
                }
                acc
            }
            TestFn::W2Ref(reference) => w2_distance(mu, reference)?,
        })
    }
}

/// Distributional error sweep: |phi(L(X^eps_T)) - phi(L(X_bar_T))| with
/// INDEPENDENT noise between the legs; one report per test functional.
pub fn weak_rate(
    model: &ModelSpec,
    avg: &AveragedModel,
    cfg_base: &SimConfig,
    eps_list: &[f64],
    test_fns: &[TestFn],
    seeds: &[u64],
) -> Result<Vec<RateReport>> {
    check_eps_list(eps_list)?;
    if test_fns.is_empty() || seeds.is_empty() {
        return Err(MmvError::Precondition(
            "weak_rate needs test functions and seeds".into(),
        ));
    }
    let t_end = cfg_base.t_end;
    // tables[phi][seed][eps]
    let rows: Result<Vec<Vec<Vec<f64>>>> = seeds
        .par_iter()
        .map(|&s| {
            let cfg_avg = with_seed_eps(cfg_base, s, eps_list[0]);
            let bar = simulate_averaged(avg, &cfg_avg, &[t_end])?;
            let phi_bar: Vec<f64> = test_fns
                .iter()
                .map(|f| f.eval(bar.terminal()))
                .collect::<Result<_>>()?;
            let mut per_phi = vec![Vec::with_capacity(eps_list.len()); test_fns.len()];
            for &eps in eps_list {
                let cfg = with_seed_eps(cfg_base, s.wrapping_add(WEAK_LEG_OFFSET), eps);
                let traj = simulate(model, &cfg, SimMode::Coupled, &[t_end])?;
                for (p, f) in test_fns.iter().enumerate() {
                    per_phi[p].push(f.eval(traj.terminal_slow())? - phi_bar[p]);
                }
            }
            Ok(per_phi)
        })
        .collect();
    let rows = rows?;
    test_fns
        .iter()
        .enumerate()
        .map(|(p, f)| {
            let per_seed: Vec<Vec<f64>> = rows.iter().map(|r| r[p].clone()).collect();
            assemble_rate_report_signed(
                &format!("weak_rate[{}]", f.name()),
                eps_list,
                &per_seed,
                1.0,
                (0.65, 1.35),
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Fast-motion limit
// ---------------------------------------------------------------------------

/// Two-regime report on the fast marginal's approach to the frozen mixture.
#[derive(Clone, Debug, Serialize)]
pub struct FastLimitReport {
    pub eps: Vec<f64>,
    /// rho_V at t = T per epsilon, median over seeds.
    pub errors_t_end: Vec<f64>,
    pub monotone_decreasing: bool,
    pub slope: f64,
    /// Transient regime: fixed epsilon, small t.
    pub transient_eps: f64,
    pub transient_t_over_eps: Vec<f64>,
    pub transient_errors: Vec<f64>,
    pub gamma_hat: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Regime (a): rho_V(L(Y^eps_T), frozen mixture at L(X_bar_T)) vs epsilon.
/// Regime (b): at `transient_eps`, log-error vs t/eps over t in [0, 5 eps],
/// recovering the relaxation rate gamma_hat.
pub fn fast_limit_error(
    model: &ModelSpec,
    avg: &AveragedModel,
    cfg_base: &SimConfig,
    eps_list: &[f64],
    transient_eps: f64,
    seeds: &[u64],
) -> Result<FastLimitReport> {
    check_eps_list(eps_list)?;
    if seeds.is_empty() || !(transient_eps > 0.0) {
        return Err(MmvError::Precondition(
            "fast_limit_error needs seeds and a positive transient epsilon".into(),
        ));
    }
    let t_end = cfg_base.t_end;
    let v = WeightFunction::new(model.meta.p)?;
    let bins = BinningPolicy::default();

    // Transient sampling times over [0, 5 eps], denser early where the
    // relaxation happens, snapped to slow steps.
    let t_small: Vec<f64> = [0.2, 0.4, 0.6, 0.8, 1.2, 1.6, 2.4, 5.0]
        .iter()
        .map(|u| {
            let t = u * transient_eps;
            (t / cfg_base.h_slow).round().max(1.0) * cfg_base.h_slow
        })
        .collect();
    let mut t_small = t_small;
    t_small.dedup();

    // One averaged run supplies the slow laws for all mixtures.
    let mut record = t_small.clone();
    record.push(t_end);
    let cfg_avg = with_seed_eps(cfg_base, cfg_base.seed, eps_list[0]);
    let bar = simulate_averaged(avg, &cfg_avg, &record)?;
    let mixtures = fast_limit(&bar, model, &avg.frozen, 64)?;
    let mix_at = |t: f64| -> Result<&EmpiricalMeasure> {
        mixtures
            .times
            .iter()
            .position(|&u| (u - t).abs() < 1e-9)
            .map(|i| &mixtures.mixtures[i])
            .ok_or_else(|| MmvError::Precondition(format!("no mixture at t = {t}")))
    };

    // Regime (a).
    let table: Result<Vec<Vec<f64>>> = seeds
        .par_iter()
        .map(|&s| {
            let mut row = Vec::with_capacity(eps_list.len());
            for &eps in eps_list {
                let cfg = with_seed_eps(cfg_base, s, eps);
                let traj = simulate(model, &cfg, SimMode::Coupled, &[t_end])?;
                row.push(weighted_tv_distance(
                    traj.terminal_fast(),
                    mix_at(t_end)?,
                    &v,
                    &bins,
                )?);
            }
            Ok(row)
        })
        .collect();
    let table = table?;
    let errors_t_end: Vec<f64> = (0..eps_list.len())
        .map(|col| {
            let mut v: Vec<f64> = table.iter().map(|r| r[col]).collect();
            median(&mut v)
        })
        .collect();
    let monotone_decreasing = errors_t_end.windows(2).all(|w| w[1] < w[0]);
    let slope = fit_slope(eps_list, &errors_t_end)?;

    // Regime (b).
    let trans_table: Result<Vec<Vec<f64>>> = seeds
        .par_iter()
        .map(|&s| {
            let cfg = with_seed_eps(cfg_base, s, transient_eps);
            let traj = simulate(model, &cfg, SimMode::Coupled, &t_small)?;
            let mut row = Vec::with_capacity(t_small.len());
            for (idx, &t) in traj.times.iter().enumerate() {
                row.push(weighted_tv_distance(
                    &traj.fast[idx],
                    mix_at(t)?,
                    &v,
                    &bins,
                )?);
            }
            Ok(row)
        })
        .collect();
    let trans_table = trans_table?;
    let transient_errors: Vec<f64> = (0..t_small.len())
        .map(|col| {
            let mut v: Vec<f64> = trans_table.iter().map(|r| r[col]).collect();
            median(&mut v)
        })
        .collect();
    let transient_t_over_eps: Vec<f64> = t_small.iter().map(|&t| t / transient_eps).collect();
    // The error settles onto a plateau (quasi-static lag plus sampling
    // floor) rather than decaying to zero; the relaxation rate lives in the
    // excess above it. Fit ln(e - plateau) on the points carrying a real
    // excess, skipping those already lost in plateau noise.
    let plateau = transient_errors.last().copied().unwrap_or(0.0);
    let excess0 = transient_errors.first().copied().unwrap_or(0.0) - plateau;
    let mut fx = Vec::new();
    let mut fy = Vec::new();
    for (i, &e) in transient_errors.iter().enumerate() {
        let excess = e - plateau;
        if excess > 0.15 * excess0 && excess > 0.0 {
            fx.push(transient_t_over_eps[i]);
            fy.push(excess.ln());
        }
    }
    let gamma_hat = if fx.len() >= 3 {
        -least_squares(&fx, &fy)?.0
    } else if transient_errors.len() >= 2 && excess0 > 0.0 {
        // Two-point decay estimate on the excess.
        let e1 = (transient_errors[1] - plateau).max(1e-12 * excess0);
        (excess0 / e1).ln() / (transient_t_over_eps[1] - transient_t_over_eps[0]).max(1e-12)
    } else {
        f64::NAN
    };

    Ok(FastLimitReport {
        eps: eps_list.to_vec(),
        errors_t_end,
        monotone_decreasing,
        slope,
        transient_eps,
        transient_t_over_eps,
        transient_errors,
        gamma_hat,
    })
}

// ---------------------------------------------------------------------------
// Fluctuation estimate
// ---------------------------------------------------------------------------

/// Centered path functional used by [`fluctuation_estimate`].
pub type CenteredFn = dyn Fn(&[f64], &[f64], &Moments) -> f64 + Sync;

/// E|int_0^T f(X_s, Y_s, mu_s) ds|^2 vs epsilon. `f` must be centered
/// against the fast marginal along the trajectory; this is checked
/// numerically at three probe times on a pilot run.
pub fn fluctuation_estimate(
    model: &ModelSpec,
    cfg_base: &SimConfig,
    f: &CenteredFn,
    eps_list: &[f64],
    seeds: &[u64],
) -> Result<RateReport> {
    check_eps_list(eps_list)?;
    if seeds.is_empty() {
        return Err(MmvError::Precondition("at least one seed required".into()));
    }
    let t_end = cfg_base.t_end;

    // Centering check on a pilot run at the largest epsilon.
    let pilot_cfg = with_seed_eps(cfg_base, cfg_base.seed, eps_list[0]);
    let probes = [0.25 * t_end, 0.5 * t_end, t_end];
    let pilot = simulate(model, &pilot_cfg, SimMode::Coupled, &probes)?;
    for (idx, _) in pilot.times.iter().enumerate() {
        let mu_m = pilot.slow[idx].moments();
        let xs = &pilot.slow[idx];
        let ys = &pilot.fast[idx];
        let mut mean = 0.0;
        let mut scale = 0.0;
        for i in 0..xs.len() {
            let val = f(xs.atom(i), ys.atom(i), &mu_m);
            mean += xs.weights()[i] * val;
            scale += xs.weights()[i] * val * val;
        }
        let tol = 0.05 * (1.0 + scale.sqrt());
        if mean.abs() > tol {
            return Err(MmvError::CenteringViolated(mean, tol));
        }
    }

    let per_seed: Result<Vec<Vec<f64>>> = seeds
        .par_iter()
        .map(|&s| {
            let mut row = Vec::with_capacity(eps_list.len());
            for &eps in eps_list {
                let cfg = with_seed_eps(cfg_base, s, eps);
                let (_, acc) = simulate_with_integral(model, &cfg, &f, &[t_end])?;
                row.push(acc.iter().map(|a| a * a).sum::<f64>() / acc.len() as f64);
            }
            Ok(row)
        })
        .collect();
    assemble_rate_report("fluctuation", eps_list, &per_seed?, 1.0, (0.7, 1.3))
}

// ---------------------------------------------------------------------------
// Wrong-limit demonstration
// ---------------------------------------------------------------------------

/// Outcome of the wrong-limit demonstration.
#[derive(Clone, Debug, Serialize)]
pub struct WrongLimitReport {
    pub epsilon: f64,
    /// W2 gap between the coupled terminal slow law and each candidate limit.
    pub d_correct: f64,
    pub d_naive: f64,
    /// W2 between two independent coupled replicates (the MC floor).
    pub mc_stderr: f64,
    pub mean_coupled: f64,
    pub var_coupled: f64,
    pub mean_correct: f64,
    pub var_correct: f64,
    pub mean_naive: f64,
    pub var_naive: f64,
    /// The two candidate drifts coincide (slice laws x-independent); the
    /// gap statistics are then uninformative.
    pub degenerate: bool,
    pub pass: bool,
}

/// Simulates the coupled system at small epsilon against BOTH candidate
/// averaged limits and reports the distribution gaps.
pub fn wrong_limit_demo(
    model: &ModelSpec,
    frozen: &FrozenConfig,
    cfg: &SimConfig,
    seeds: &[u64],
) -> Result<WrongLimitReport> {
    if seeds.len() < 2 {
        return Err(MmvError::Precondition(
            "wrong_limit_demo needs at least 2 seeds".into(),
        ));
    }
    let t_end = cfg.t_end;
    let avg_c = AveragedModel::new(model.clone(), frozen.clone(), AveragedVariant::Correct);
    let avg_n = AveragedModel::new(model.clone(), frozen.clone(), AveragedVariant::Naive);

    struct Leg {
        coupled: EmpiricalMeasure,
        correct: EmpiricalMeasure,
        naive: EmpiricalMeasure,
    }
    let legs: Result<Vec<Leg>> = seeds
        .par_iter()
        .map(|&s| {
            let c = with_seed_eps(cfg, s, cfg.epsilon);
            let coupled = simulate(model, &c, SimMode::Coupled, &[t_end])?
                .terminal_slow()
                .clone();
            let correct = simulate_averaged(&avg_c, &c, &[t_end])?.terminal().clone();
            let naive = simulate_averaged(&avg_n, &c, &[t_end])?.terminal().clone();
            Ok(Leg {
                coupled,
                correct,
                naive,
            })
        })
        .collect();
    let legs = legs?;

    let mut dc = Vec::new();
    let mut dn = Vec::new();
    for leg in &legs {
        dc.push(w2_distance(&leg.coupled, &leg.correct)?);
        dn.push(w2_distance(&leg.coupled, &leg.naive)?);
    }
    let d_correct = dc.iter().sum::<f64>() / dc.len() as f64;
    let d_naive = dn.iter().sum::<f64>() / dn.len() as f64;
    // MC floor: W2 between coupled replicates under different seeds.
    let mut floors = Vec::new();
    for pair in legs.windows(2) {
        floors.push(w2_distance(&pair[0].coupled, &pair[1].coupled)?);
    }
    let mc_stderr = floors.iter().sum::<f64>() / floors.len() as f64;

    // Degeneracy probe: the two candidate drifts at the initial atoms,
    // solved at higher fidelity than the tracking replicas need.
    let mut probe_cfg = frozen.clone();
    probe_cfg.k = probe_cfg.k.max(512);
    probe_cfg.burn_in = probe_cfg.burn_in.max(4.0);
    probe_cfg.avg_window = probe_cfg.avg_window.max(8.0);
    let mu0 = legs[0].coupled.clone();
    let probe = crate::measure::compress(&mu0, 4);
    let pts: Vec<&[f64]> = (0..probe.len()).map(|i| probe.atom(i)).collect();
    let rows_c = averaged_coefficients(model, &probe, &pts, &probe_cfg, AveragedVariant::Correct)?;
    let rows_n = averaged_coefficients(model, &probe, &pts, &probe_cfg, AveragedVariant::Naive)?;
    let drift_gap = rows_c
        .iter()
        .zip(&rows_n)
        .map(|(a, b)| (a.b_bar[0] - b.b_bar[0]).abs())
        .fold(0.0, f64::max);
    let degenerate = drift_gap < 0.05;

    let mc = legs[0].coupled.moments();
    let mcor = legs[0].correct.moments();
    let mnai = legs[0].naive.moments();
    let pass = !degenerate
        && d_naive >= 5.0 * d_correct.max(mc_stderr)
        && d_correct <= 2.0 * mc_stderr + 0.02;
    Ok(WrongLimitReport {
        epsilon: cfg.epsilon,
        d_correct,
        d_naive,
        mc_stderr,
        mean_coupled: mc.mean[0],
        var_coupled: mc.var[0],
        mean_correct: mcor.mean[0],
        var_correct: mcor.var[0],
        mean_naive: mnai.mean[0],
        var_naive: mnai.var[0],
        degenerate,
        pass,
    })
}

// ---------------------------------------------------------------------------
// Mollification decay
// ---------------------------------------------------------------------------

/// Decay of |f(mu * rho^n) - f(mu)| for f = E tanh over a probe set of
/// Gaussian clouds; slope fitted against n.
pub fn mollifier_rate(n_list: &[u32], seed: u64) -> Result<RateReport> {
    if n_list.len() < 3 || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MmvError::Precondition(
            "n list must be strictly increasing with at least 3 entries".into(),
        ));
    }
    let f = TestFn::TanhMean;
    // Probe clouds: Gaussians of various locations and spreads.
    let k = 512usize;
    let mut probes = Vec::new();
    for (pi, &(m, sd)) in [(-1.0, 0.5), (0.0, 1.0), (1.0, 1.5)].iter().enumerate() {
        let atoms: Vec<f64> = (0..k)
            .map(|i| m + sd * normal(seed, StreamTag::Probe, (pi * k + i) as u64, 0, 0))
            .collect();
        probes.push(EmpiricalMeasure::equal_weights(1, atoms)?);
    }
    // Replicates over kernel seeds stand in for seed batches.
    let reps = 4u64;
    let per_rep: Result<Vec<Vec<f64>>> = (0..reps)
        .map(|r| {
            let mut row = Vec::with_capacity(n_list.len());
            for &n in n_list {
                let mut sup = 0.0f64;
                for mu in &probes {
                    let base = f.eval(mu)?;
                    let moll = mollify_measure(mu, n, KernelSpec::default(), seed ^ (r + 1))?;
                    sup = sup.max((f.eval(&moll)? - base).abs());
                }
                row.push(sup);
            }
            Ok(row)
        })
        .collect();
    let xs: Vec<f64> = n_list.iter().map(|&n| n as f64).collect();
    let mut report = assemble_rate_report("mollifier", &xs, &per_rep?, -1.0, (-3.0, -0.8))?;
    report.pass = !report.slope.is_nan() && report.slope <= -0.8;
    Ok(report)
}
