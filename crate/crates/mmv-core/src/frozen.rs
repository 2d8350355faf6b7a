//! Frozen fast equation: self-consistent invariant-measure families, their
//! recursive approximations, ergodicity fits, and the Poisson cell problem.
//!
//! A family is parameterized by a slow measure mu with atoms x_j. Slice j
//! estimates the invariant law of the fast equation with the slow slot
//! frozen at x_j; the pooled measure is the w_j-mixture of the slices. In
//! the self-consistent (McKean-Vlasov) form the coefficients' fast-law slot
//! reads the live pooled law; in the recursive form it is frozen at the
//! previous iterate's pooled measure.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MmvError, Result};
use crate::measure::{
    mixture, weighted_tv_distance, BinningPolicy, EmpiricalMeasure, Moments, WeightFunction,
};
use crate::model::expr::EvalCtx;
use crate::model::ModelSpec;
use crate::engine::law_view;
use crate::rng::{key_hash, normal, SamplerSpec, StreamTag};

fn default_k() -> usize {
    1024
}
fn default_picard_tol() -> f64 {
    1e-3
}
fn default_picard_max() -> usize {
    30
}
fn default_h_fast() -> f64 {
    2e-3
}
fn default_init_fast() -> SamplerSpec {
    SamplerSpec::gauss(0.0, 1.0)
}
fn default_snapshots() -> usize {
    64
}

/// Parameters of one frozen solve.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrozenConfig {
    #[serde(rename = "K", default = "default_k")]
    pub k: usize,
    /// Transient discarded before averaging (fast-time units).
    pub burn_in: f64,
    /// Time-averaging window after burn-in.
    pub avg_window: f64,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_max")]
    pub picard_max: usize,
    #[serde(default = "default_h_fast")]
    pub h_fast: f64,
    #[serde(default)]
    pub seed: u64,
    /// Initial fast law eta (also the zeroth recursion iterate).
    #[serde(default = "default_init_fast")]
    pub init_fast: SamplerSpec,
    /// Number of time-averaged snapshots kept per slice.
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
}

impl FrozenConfig {
    /// Defaults tied to the declared dissipativity rate: burn_in = 8 / (C1/2),
    /// avg_window = 4 * burn_in.
    pub fn for_model(model: &ModelSpec, seed: u64) -> FrozenConfig {
        let gamma_prior = model.meta.c1 / 2.0;
        let burn_in = 8.0 / gamma_prior;
        FrozenConfig {
            k: default_k(),
            burn_in,
            avg_window: 4.0 * burn_in,
            picard_tol: default_picard_tol(),
            picard_max: default_picard_max(),
            h_fast: default_h_fast(),
            seed,
            init_fast: default_init_fast(),
            snapshots: default_snapshots(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 16 {
            return Err(MmvError::InvalidConfig("K must be >= 16".into()));
        }
        if !(self.burn_in > 0.0 && self.avg_window > 0.0) {
            return Err(MmvError::InvalidConfig(
                "burn_in and avg_window must be > 0".into(),
            ));
        }
        if !(self.picard_tol > 0.0) {
            return Err(MmvError::InvalidConfig("picard_tol must be > 0".into()));
        }
        if !(self.h_fast > 0.0) {
            return Err(MmvError::InvalidConfig("h_fast must be > 0".into()));
        }
        Ok(())
    }
}

/// Stationarity and convergence diagnostics of a frozen solve.
#[derive(Clone, Debug, Serialize)]
pub struct FrozenDiagnostics {
    pub burn_in: f64,
    /// rho_V between the pooled estimates from the two halves of the
    /// averaging window.
    pub residual: f64,
    /// Fitted ergodicity decay rate, when a fit has been attached.
    pub gamma_hat: Option<f64>,
    /// True when the residual exceeds 10 x picard_tol.
    pub stationarity_warning: bool,
}

/// Estimated invariant-measure family at a fixed slow measure mu.
#[derive(Clone, Debug)]
pub struct InvariantFamily {
    pub mu: EmpiricalMeasure,
    /// Per-atom slice estimates of the frozen invariant law.
    pub slices: Vec<EmpiricalMeasure>,
    /// w-mixture of the slices: the fast-motion limit component at mu.
    pub pooled: EmpiricalMeasure,
    pub diag: FrozenDiagnostics,
}

impl InvariantFamily {
    /// Writes `mu.csv`, `slice_<j>.csv`, `pooled.csv` and `diag.json`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let write_measure = |name: &str, m: &EmpiricalMeasure| -> Result<()> {
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
            m.write_csv(&mut f)?;
            Ok(())
        };
        write_measure("mu.csv", &self.mu)?;
        write_measure("pooled.csv", &self.pooled)?;
        for (j, s) in self.slices.iter().enumerate() {
            write_measure(&format!("slice_{j}.csv"), s)?;
        }
        let mut f = std::fs::File::create(dir.join("diag.json"))?;
        writeln!(f, "{}", serde_json::to_string_pretty(&self.diag)?)?;
        Ok(())
    }
}

/// Fast-law slot source during a frozen solve.
enum NuSource<'a> {
    /// Live weight-pooled empirical law of all fast particles.
    SelfPooled,
    /// Static moments (recursion / tagged solves).
    Fixed(&'a Moments),
}

/// Weighted pooled moments of all fast particles, accumulated slice-by-slice
/// in the given order so the result does not depend on atom positions in mu.
fn pooled_moments(d2: usize, k: usize, y: &[f64], points: &[(&[f64], f64)], order: &[usize]) -> Moments {
    let mut mean = vec![0.0; d2];
    let mut sq = vec![0.0; d2];
    let mut slice_mean = vec![0.0; d2];
    let mut slice_sq = vec![0.0; d2];
    for &j in order {
        slice_mean.iter_mut().for_each(|v| *v = 0.0);
        slice_sq.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..k {
            for c in 0..d2 {
                let v = y[(j * k + r) * d2 + c];
                slice_mean[c] += v;
                slice_sq[c] += v * v;
            }
        }
        let w = points[j].1 / k as f64;
        for c in 0..d2 {
            mean[c] += w * slice_mean[c];
            sq[c] += w * slice_sq[c];
        }
    }
    let mut m2 = 0.0;
    let mut var = vec![0.0; d2];
    for c in 0..d2 {
        m2 += sq[c];
        var[c] = (sq[c] - mean[c] * mean[c]).max(0.0);
    }
    Moments { mean, var, m2 }
}

/// Intrinsic stream id for the slice at slow point x, so slice noise is a
/// function of the atom's coordinates rather than its position in mu.
fn slice_stream_id(x: &[f64]) -> u64 {
    let words: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
    key_hash(&words)
}

struct SliceEstimate {
    slices: Vec<EmpiricalMeasure>,
    residual: f64,
}

/// Core integrator: evolves K fast particles per slow point, accumulates
/// time-averaged snapshots per slice, and reports the half-window residual.
fn evolve_slices(
    model: &ModelSpec,
    points: &[(&[f64], f64)],
    mu_m: &Moments,
    nu_source: NuSource<'_>,
    cfg: &FrozenConfig,
) -> Result<SliceEstimate> {
    cfg.validate()?;
    let d2 = model.d2;
    let j_count = points.len();
    let k = cfg.k;
    let n_particles = j_count * k;
    let h = cfg.h_fast;
    let burn_steps = (cfg.burn_in / h).round() as usize;
    let window_steps = ((cfg.avg_window / h).round() as usize).max(2);
    let thin = (window_steps / cfg.snapshots.max(1)).max(1);
    let total_steps = burn_steps + window_steps;

    let stream_ids: Vec<u64> = points.iter().map(|(x, _)| slice_stream_id(x)).collect();
    // Pooled reductions run in stream-id order, so results are invariant
    // under permutations of mu's atoms.
    let mut reduce_order: Vec<usize> = (0..j_count).collect();
    reduce_order.sort_by_key(|&j| stream_ids[j]);

    // Initial fast positions from eta.
    let mut y = vec![0.0; n_particles * d2];
    for j in 0..j_count {
        for r in 0..k {
            let pid = key_hash(&[stream_ids[j], r as u64]);
            for c in 0..d2 {
                y[(j * k + r) * d2 + c] =
                    cfg.init_fast
                        .sample(cfg.seed, StreamTag::FrozenInit, pid, c as u64);
            }
        }
    }
    let mut fbuf = vec![0.0; d2];
    let mut gbuf = vec![0.0; d2 * d2];
    let mut y_new = vec![0.0; n_particles * d2];
    let sqrt_h = h.sqrt();

    // Snapshot accumulators per slice, split into window halves for the
    // stationarity residual.
    let mut snaps: Vec<Vec<f64>> = vec![Vec::new(); j_count];
    let mut first_half: Vec<f64> = Vec::new();
    let mut second_half: Vec<f64> = Vec::new();
    let mut fh_w: Vec<f64> = Vec::new();
    let mut sh_w: Vec<f64> = Vec::new();

    for step in 0..total_steps {
        let own_nu;
        let nu_m: &Moments = match &nu_source {
            NuSource::SelfPooled => {
                own_nu = pooled_moments(d2, k, &y, points, &reduce_order);
                &own_nu
            }
            NuSource::Fixed(m) => m,
        };
        for j in 0..j_count {
            let xj = points[j].0;
            for r in 0..k {
                let i = j * k + r;
                let yi = &y[i * d2..(i + 1) * d2];
                let ctx = EvalCtx {
                    x: xj,
                    y: yi,
                    mu: law_view(mu_m),
                    nu: law_view(nu_m),
                };
                model.eval_f(&ctx, &mut fbuf)?;
                model.eval_g(&ctx, &mut gbuf)?;
                let pid = key_hash(&[stream_ids[j], r as u64]);
                for c in 0..d2 {
                    let mut noise = 0.0;
                    for jj in 0..d2 {
                        if gbuf[c * d2 + jj] != 0.0 {
                            noise += gbuf[c * d2 + jj]
                                * normal(
                                    cfg.seed,
                                    StreamTag::FrozenNoise,
                                    pid,
                                    step as u64,
                                    jj as u64,
                                );
                        }
                    }
                    let v = yi[c] + fbuf[c] * h + sqrt_h * noise;
                    if !v.is_finite() || v.abs() > crate::engine::BLOWUP_GUARD {
                        return Err(MmvError::BlowUp {
                            t: step as f64 * h,
                            particle: i,
                            guard: crate::engine::BLOWUP_GUARD,
                        });
                    }
                    y_new[i * d2 + c] = v;
                }
            }
        }
        std::mem::swap(&mut y, &mut y_new);

        if step >= burn_steps && (step - burn_steps) % thin == 0 {
            let in_first_half = step - burn_steps < window_steps / 2;
            for j in 0..j_count {
                let chunk = &y[j * k * d2..(j + 1) * k * d2];
                snaps[j].extend_from_slice(chunk);
                if in_first_half {
                    first_half.extend_from_slice(chunk);
                    fh_w.extend(std::iter::repeat(points[j].1 / k as f64).take(k));
                } else {
                    second_half.extend_from_slice(chunk);
                    sh_w.extend(std::iter::repeat(points[j].1 / k as f64).take(k));
                }
            }
        }
    }

    let slices: Vec<EmpiricalMeasure> = snaps
        .into_iter()
        .map(|coords| EmpiricalMeasure::equal_weights(d2, coords))
        .collect::<Result<_>>()?;

    // Residual is only defined when both window halves captured snapshots.
    let residual = if fh_w.is_empty() || sh_w.is_empty() {
        0.0
    } else {
        let norm = |w: &[f64]| -> Vec<f64> {
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        };
        let a = EmpiricalMeasure::new(d2, first_half, norm(&fh_w))?;
        let b = EmpiricalMeasure::new(d2, second_half, norm(&sh_w))?;
        weighted_tv_distance(
            &a,
            &b,
            &WeightFunction::new(model.meta.p)?,
            &BinningPolicy::default(),
        )?
    };

    Ok(SliceEstimate { slices, residual })
}

fn assemble_family(
    mu: &EmpiricalMeasure,
    est: SliceEstimate,
    cfg: &FrozenConfig,
) -> Result<InvariantFamily> {
    let pairs: Vec<(&EmpiricalMeasure, f64)> = est
        .slices
        .iter()
        .zip(mu.weights())
        .map(|(s, &w)| (s, w))
        .collect();
    let pooled = mixture(&pairs)?;
    Ok(InvariantFamily {
        mu: mu.clone(),
        slices: est.slices,
        pooled,
        diag: FrozenDiagnostics {
            burn_in: cfg.burn_in,
            residual: est.residual,
            gamma_hat: None,
            stationarity_warning: est.residual > 10.0 * cfg.picard_tol,
        },
    })
}

fn mu_points(mu: &EmpiricalMeasure) -> Vec<(&[f64], f64)> {
    (0..mu.len()).map(|j| (mu.atom(j), mu.weights()[j])).collect()
}

/// Self-consistent solve: the fast-law slot reads the live pooled empirical
/// law of all slices, so the joint system relaxes to the McKean-Vlasov
/// frozen equation's fixed point.
pub fn solve_frozen_pooled(
    model: &ModelSpec,
    mu: &EmpiricalMeasure,
    cfg: &FrozenConfig,
) -> Result<InvariantFamily> {
    if mu.dim() != model.d1 {
        return Err(MmvError::DimensionMismatch {
            expected: model.d1,
            got: mu.dim(),
        });
    }
    let mu_m = mu.moments();
    let points = mu_points(mu);
    let est = evolve_slices(model, &points, &mu_m, NuSource::SelfPooled, cfg)?;
    assemble_family(mu, est, cfg)
}

/// One recursion step: the fast-law slot is FROZEN at the previous iterate's
/// pooled measure (or at the initial fast law when `prev` is absent).
pub fn solve_frozen_recursive(
    model: &ModelSpec,
    mu: &EmpiricalMeasure,
    prev: Option<&InvariantFamily>,
    cfg: &FrozenConfig,
) -> Result<InvariantFamily> {
    if mu.dim() != model.d1 {
        return Err(MmvError::DimensionMismatch {
            expected: model.d1,
            got: mu.dim(),
        });
    }
    let nu_m = match prev {
        Some(fam) => fam.pooled.moments(),
        None => initial_law_measure(model.d2, cfg)?.moments(),
    };
    let mu_m = mu.moments();
    let points = mu_points(mu);
    let est = evolve_slices(model, &points, &mu_m, NuSource::Fixed(&nu_m), cfg)?;
    assemble_family(mu, est, cfg)
}

/// Sampled representation of the initial fast law (the zeroth iterate).
pub fn initial_law_measure(d2: usize, cfg: &FrozenConfig) -> Result<EmpiricalMeasure> {
    let mut atoms = vec![0.0; cfg.k * d2];
    for r in 0..cfg.k {
        for c in 0..d2 {
            atoms[r * d2 + c] =
                cfg.init_fast
                    .sample(cfg.seed, StreamTag::FrozenInit, r as u64, c as u64);
        }
    }
    EmpiricalMeasure::equal_weights(d2, atoms)
}

/// Result of iterating the recursion to (approximate) fixed point.
pub struct FixedPointRun {
    pub iterates: Vec<InvariantFamily>,
    /// rho_V(pooled_n, pooled_{n-1}) for n = 1..
    pub deltas: Vec<f64>,
    /// Observed contraction ratios delta_{n+1} / delta_n.
    pub ratios: Vec<f64>,
    pub converged: bool,
}

/// Iterates `solve_frozen_recursive` until the pooled measure moves less
/// than `picard_tol` in rho_V, or `picard_max` iterations.
pub fn solve_frozen_fixed_point(
    model: &ModelSpec,
    mu: &EmpiricalMeasure,
    cfg: &FrozenConfig,
    n_max: Option<usize>,
) -> Result<FixedPointRun> {
    let v = WeightFunction::new(model.meta.p)?;
    let bins = BinningPolicy::default();
    let limit = n_max.unwrap_or(cfg.picard_max);
    let mut iterates: Vec<InvariantFamily> = Vec::new();
    let mut deltas = Vec::new();
    let mut converged = false;
    for n in 0..limit {
        let prev = iterates.last();
        let fam = solve_frozen_recursive(model, mu, prev, cfg)?;
        if let Some(p) = prev {
            let d = weighted_tv_distance(&p.pooled, &fam.pooled, &v, &bins)?;
            deltas.push(d);
            if d < cfg.picard_tol && n + 1 >= 2 {
                iterates.push(fam);
                converged = true;
                break;
            }
        }
        iterates.push(fam);
    }
    let ratios = deltas
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { f64::NAN })
        .collect();
    Ok(FixedPointRun {
        iterates,
        deltas,
        ratios,
        converged,
    })
}

/// Slice estimates at arbitrary slow points, solved against a STATIC pooled
/// fast law (tagged particles carry no mass, so they do not feed back).
pub fn solve_frozen_tagged(
    model: &ModelSpec,
    pooled: &EmpiricalMeasure,
    mu: &EmpiricalMeasure,
    x_points: &[&[f64]],
    cfg: &FrozenConfig,
) -> Result<Vec<EmpiricalMeasure>> {
    let nu_m = pooled.moments();
    let mu_m = mu.moments();
    let points: Vec<(&[f64], f64)> = x_points.iter().map(|x| (*x, 1.0)).collect();
    let est = evolve_slices(model, &points, &mu_m, NuSource::Fixed(&nu_m), cfg)?;
    Ok(est.slices)
}

// ---------------------------------------------------------------------------
// Ergodicity fit
// ---------------------------------------------------------------------------

/// Least-squares fit of the exponential decay of rho_V towards the frozen
/// invariant law.
#[derive(Clone, Debug, Serialize)]
pub struct ErgodicityFit {
    pub gamma_hat: f64,
    pub c_hat: f64,
    pub noise_floor: f64,
    pub n_points_used: usize,
}

/// Runs the frozen-slot fast equation from `y0` and fits
/// `log rho_V(L(Y_s), zeta) ~ log c - gamma s` over the pre-plateau region.
pub fn ergodicity_fit(
    model: &ModelSpec,
    x: &[f64],
    mu: &EmpiricalMeasure,
    nu_frozen: &EmpiricalMeasure,
    y0: &SamplerSpec,
    cfg: &FrozenConfig,
) -> Result<ErgodicityFit> {
    cfg.validate()?;
    let d2 = model.d2;
    let mu_m = mu.moments();
    let nu_m = nu_frozen.moments();
    let v = WeightFunction::new(model.meta.p)?;
    let bins = BinningPolicy::default();

    // Reference stationary law: burned-in, time-averaged run from eta.
    let ref_est = evolve_slices(model, &[(x, 1.0)], &mu_m, NuSource::Fixed(&nu_m), cfg)?;
    let zeta = &ref_est.slices[0];

    // Noise floor: an independent stationary instantaneous K-cloud vs zeta.
    let floor = {
        let mut alt = cfg.clone();
        alt.seed = cfg.seed.wrapping_add(0x9e3779b97f4a7c15);
        alt.snapshots = 1;
        let est = evolve_slices(model, &[(x, 1.0)], &mu_m, NuSource::Fixed(&nu_m), &alt)?;
        weighted_tv_distance(&est.slices[0], zeta, &v, &bins)?
    };

    // Transient run from y0, recording the instantaneous cloud.
    let k = cfg.k;
    let h = cfg.h_fast;
    let horizon_steps = (cfg.burn_in / h).round() as usize;
    let record_every = (horizon_steps / 60).max(1);
    let mut y = vec![0.0; k * d2];
    for r in 0..k {
        for c in 0..d2 {
            y[r * d2 + c] = y0.sample(
                cfg.seed.wrapping_add(1),
                StreamTag::FrozenInit,
                r as u64,
                c as u64,
            );
        }
    }
    let mut fbuf = vec![0.0; d2];
    let mut gbuf = vec![0.0; d2 * d2];
    let sqrt_h = h.sqrt();
    let mut series: Vec<(f64, f64)> = Vec::new();
    for step in 0..=horizon_steps {
        if step % record_every == 0 {
            let cloud = EmpiricalMeasure::equal_weights(d2, y.clone())?;
            let rho = weighted_tv_distance(&cloud, zeta, &v, &bins)?;
            series.push((step as f64 * h, rho));
        }
        if step == horizon_steps {
            break;
        }
        for r in 0..k {
            let yi: Vec<f64> = y[r * d2..(r + 1) * d2].to_vec();
            let ctx = EvalCtx {
                x,
                y: &yi,
                mu: law_view(&mu_m),
                nu: law_view(&nu_m),
            };
            model.eval_f(&ctx, &mut fbuf)?;
            model.eval_g(&ctx, &mut gbuf)?;
            for c in 0..d2 {
                let mut noise = 0.0;
                for jj in 0..d2 {
                    if gbuf[c * d2 + jj] != 0.0 {
                        noise += gbuf[c * d2 + jj]
                            * normal(
                                cfg.seed.wrapping_add(1),
                                StreamTag::FrozenNoise,
                                r as u64,
                                step as u64,
                                jj as u64,
                            );
                    }
                }
                y[r * d2 + c] = yi[c] + fbuf[c] * h + sqrt_h * noise;
            }
        }
    }

    // Pre-plateau region: strictly above twice the noise floor, skipping s=0
    // where the initial law may be singular against the grid.
    let pts: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|&(s, rho)| s > 0.0 && rho > 2.0 * floor && rho > 0.0)
        .collect();
    if pts.len() < 3 {
        return Err(MmvError::DegenerateFit(format!(
            "only {} points above the noise floor {floor:.3e}",
            pts.len()
        )));
    }
    let (slope, intercept) = least_squares(
        &pts.iter().map(|&(s, _)| s).collect::<Vec<_>>(),
        &pts.iter().map(|&(_, r)| r.ln()).collect::<Vec<_>>(),
    )?;
    if slope >= 0.0 {
        return Err(MmvError::DegenerateFit(format!(
            "no decay: fitted slope {slope:.3}"
        )));
    }
    Ok(ErgodicityFit {
        gamma_hat: -slope,
        c_hat: intercept.exp(),
        noise_floor: floor,
        n_points_used: pts.len(),
    })
}

/// Ordinary least squares y ~ intercept + slope * x.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(MmvError::DegenerateFit("need at least 2 points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(MmvError::DegenerateFit("zero variance in x".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

// ---------------------------------------------------------------------------
// Poisson cell problem
// ---------------------------------------------------------------------------

/// Monte Carlo estimate of `U(y) = int_0^Tmax E f(Y_s^{x,mu}(y)) ds` for a
/// centered test function f; the fast-law slot is frozen at the stationary
/// slice `zeta` (estimated upstream).
pub fn solve_poisson<F: Fn(&[f64]) -> f64>(
    model: &ModelSpec,
    f: F,
    x: &[f64],
    mu: &EmpiricalMeasure,
    zeta: &EmpiricalMeasure,
    y_start: &[f64],
    cfg: &FrozenConfig,
    t_max: Option<f64>,
    n_paths: usize,
    centering_tol: f64,
) -> Result<f64> {
    // Centering check against the stationary slice.
    let mut integral = 0.0;
    let mut scale = 0.0;
    for i in 0..zeta.len() {
        let w = zeta.weights()[i];
        let fv = f(zeta.atom(i));
        integral += w * fv;
        scale += w * fv * fv;
    }
    let tol = centering_tol * (scale.sqrt() + 1.0);
    if integral.abs() > tol {
        return Err(MmvError::CenteringViolated(integral.abs(), tol));
    }

    let gamma = model.meta.c1 / 2.0;
    let t_max = t_max.unwrap_or((1000.0f64).ln() / gamma);
    let d2 = model.d2;
    let h = cfg.h_fast;
    let steps = (t_max / h).ceil() as usize;
    let mu_m = mu.moments();
    let nu_m = zeta.moments();

    let mut y = vec![0.0; n_paths * d2];
    for r in 0..n_paths {
        y[r * d2..(r + 1) * d2].copy_from_slice(y_start);
    }
    let mut fbuf = vec![0.0; d2];
    let mut gbuf = vec![0.0; d2 * d2];
    let sqrt_h = h.sqrt();
    let seed = cfg.seed.wrapping_add(2);

    // Trapezoidal accumulation of the path-averaged integrand.
    let mean_f = |y: &[f64]| -> f64 {
        let mut s = 0.0;
        for r in 0..n_paths {
            s += f(&y[r * d2..(r + 1) * d2]);
        }
        s / n_paths as f64
    };
    let mut acc = 0.0;
    let mut prev = mean_f(&y);
    for step in 0..steps {
        for r in 0..n_paths {
            let yi: Vec<f64> = y[r * d2..(r + 1) * d2].to_vec();
            let ctx = EvalCtx {
                x,
                y: &yi,
                mu: law_view(&mu_m),
                nu: law_view(&nu_m),
            };
            model.eval_f(&ctx, &mut fbuf)?;
            model.eval_g(&ctx, &mut gbuf)?;
            for c in 0..d2 {
                let mut noise = 0.0;
                for jj in 0..d2 {
                    if gbuf[c * d2 + jj] != 0.0 {
                        noise += gbuf[c * d2 + jj]
                            * normal(seed, StreamTag::FrozenNoise, r as u64, step as u64, jj as u64);
                    }
                }
                let v = yi[c] + fbuf[c] * h + sqrt_h * noise;
                if !v.is_finite() || v.abs() > crate::engine::BLOWUP_GUARD {
                    return Err(MmvError::BlowUp {
                        t: step as f64 * h,
                        particle: r,
                        guard: crate::engine::BLOWUP_GUARD,
                    });
                }
                y[r * d2 + c] = v;
            }
        }
        let cur = mean_f(&y);
        acc += 0.5 * (prev + cur) * h;
        prev = cur;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin;
    use std::collections::BTreeMap;

    fn params(kv: &[(&str, f64)]) -> BTreeMap<String, f64> {
        kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn oracle_model(k0: f64, c: f64) -> crate::model::ModelSpec {
        builtin(
            "linear_ou",
            &params(&[
                ("a", 2.0),
                ("c", c),
                ("k0", k0),
                ("g0", std::f64::consts::SQRT_2),
                ("b0", 1.0),
                ("b1", 1.0),
                ("b2", 0.0),
                ("s0", 1.0),
            ]),
        )
        .unwrap()
    }

    fn quick_cfg(seed: u64) -> FrozenConfig {
        FrozenConfig {
            k: 1024,
            burn_in: 3.0,
            avg_window: 8.0,
            picard_tol: 0.05,
            picard_max: 10,
            h_fast: 2e-3,
            seed,
            init_fast: SamplerSpec::point(0.0),
            snapshots: 32,
        }
    }

    #[test]
    fn pooled_fixed_point_matches_oracle() {
        // m_bar = c / (a - k0) = 1 / 1.5 = 2/3; slice variance = g0^2/(2a) = 0.5.
        let model = oracle_model(0.5, 1.0);
        let mu = EmpiricalMeasure::dirac(&[1.0]);
        let fam = solve_frozen_pooled(&model, &mu, &quick_cfg(3)).unwrap();
        let m = fam.pooled.moments();
        assert!((m.mean[0] - 2.0 / 3.0).abs() < 0.03, "mean {}", m.mean[0]);
        assert!((m.var[0] - 0.5).abs() < 0.05, "var {}", m.var[0]);
        assert!(!fam.diag.stationarity_warning, "residual {}", fam.diag.residual);
    }

    #[test]
    fn decoupled_slices_have_scaled_means() {
        // k0 = 0: slice mean at atom x is (c/a) x.
        let model = oracle_model(0.0, 1.0);
        let mu = EmpiricalMeasure::from_points_1d(&[0.0, 2.0]);
        let fam = solve_frozen_pooled(&model, &mu, &quick_cfg(4)).unwrap();
        let m0 = fam.slices[0].moments().mean[0];
        let m1 = fam.slices[1].moments().mean[0];
        assert!(m0.abs() < 0.03, "slice 0 mean {m0}");
        assert!((m1 - 1.0).abs() < 0.03, "slice 1 mean {m1}");
    }

    #[test]
    fn recursion_matches_affine_iteration() {
        // zeta_0 = delta_0: means (c + k0 m_{n-1})/a = 1/2, 5/8, 21/32.
        let model = oracle_model(0.5, 1.0);
        let mu = EmpiricalMeasure::dirac(&[1.0]);
        let cfg = quick_cfg(5);
        let f1 = solve_frozen_recursive(&model, &mu, None, &cfg).unwrap();
        let f2 = solve_frozen_recursive(&model, &mu, Some(&f1), &cfg).unwrap();
        let f3 = solve_frozen_recursive(&model, &mu, Some(&f2), &cfg).unwrap();
        for (fam, want) in [(&f1, 0.5), (&f2, 0.625), (&f3, 21.0 / 32.0)] {
            let got = fam.pooled.moments().mean[0];
            assert!((got - want).abs() < 0.02, "got {got}, want {want}");
        }
    }

    #[test]
    fn slice_order_is_permutation_equivariant() {
        let model = oracle_model(0.5, 1.0);
        let cfg = quick_cfg(6);
        let mu_a = EmpiricalMeasure::from_points_1d(&[-1.0, 2.0]);
        let mu_b = EmpiricalMeasure::from_points_1d(&[2.0, -1.0]);
        let fa = solve_frozen_pooled(&model, &mu_a, &cfg).unwrap();
        let fb = solve_frozen_pooled(&model, &mu_b, &cfg).unwrap();
        assert_eq!(fa.slices[0].atoms_flat(), fb.slices[1].atoms_flat());
        assert_eq!(fa.slices[1].atoms_flat(), fb.slices[0].atoms_flat());
    }

    #[test]
    fn ergodicity_rate_near_ou_relaxation() {
        let model = oracle_model(0.0, 0.0);
        let mu = EmpiricalMeasure::dirac(&[0.0]);
        let nu = EmpiricalMeasure::dirac(&[0.0]);
        let mut cfg = quick_cfg(7);
        cfg.burn_in = 4.0;
        let fit = ergodicity_fit(
            &model,
            &[0.0],
            &mu,
            &nu,
            &SamplerSpec::point(5.0),
            &cfg,
        )
        .unwrap();
        assert!(
            fit.gamma_hat > 1.2 && fit.gamma_hat < 2.8,
            "gamma_hat {}",
            fit.gamma_hat
        );
    }

    #[test]
    fn poisson_matches_ou_relaxation_integral() {
        // f(y) = y - m, started at m + 1: U = 1/a = 0.5.
        let model = oracle_model(0.5, 1.0);
        let mu = EmpiricalMeasure::dirac(&[1.0]);
        let cfg = quick_cfg(8);
        let fam = solve_frozen_pooled(&model, &mu, &cfg).unwrap();
        let m = fam.slices[0].moments().mean[0];
        let u = solve_poisson(
            &model,
            |y| y[0] - m,
            &[1.0],
            &mu,
            &fam.slices[0],
            &[m + 1.0],
            &cfg,
            None,
            2048,
            0.05,
        )
        .unwrap();
        assert!((u - 0.5).abs() < 0.03, "U {u}");
    }

    #[test]
    fn poisson_rejects_uncentered_f() {
        let model = oracle_model(0.0, 0.0);
        let mu = EmpiricalMeasure::dirac(&[0.0]);
        let cfg = quick_cfg(9);
        let fam = solve_frozen_pooled(&model, &mu, &cfg).unwrap();
        let err = solve_poisson(
            &model,
            |y| y[0] + 5.0,
            &[0.0],
            &mu,
            &fam.slices[0],
            &[0.0],
            &cfg,
            None,
            64,
            0.01,
        )
        .unwrap_err();
        assert!(matches!(err, MmvError::CenteringViolated(_, _)));
    }
}
