//! Averaged dynamics: the corrected averaged coefficients (fast-law slot =
//! pooled mixture), the naive variant (fast-law slot = the x-slice itself),
//! the averaged McKean-Vlasov simulation with warm-started fast micro-solves,
//! and the fast-motion limit mixture.

use serde::Serialize;

use crate::engine::{
    law_view, record_grid, simulate, DistributionFlow, SimConfig, SimMode, Trajectory,
};
use crate::error::{MmvError, Result};
use crate::frozen::{solve_frozen_pooled, solve_frozen_tagged, FrozenConfig, InvariantFamily};
use crate::measure::{compress, w2_distance, EmpiricalMeasure, Moments};
use crate::model::expr::EvalCtx;
use crate::model::ModelSpec;
use crate::rng::{key_hash, normal, StreamTag};

/// Which measure the fast-law slot of (b, sigma) is fed during averaging.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AveragedVariant {
    /// Pooled mixture over mu — the actual averaged limit.
    Correct,
    /// The x-slice itself — the classical formula, wrong under fast-law
    /// coupling; kept as the comparison baseline.
    Naive,
}

/// Averaged model: coefficients are evaluated by frozen micro-solves rather
/// than closed forms.
#[derive(Clone, Debug)]
pub struct AveragedModel {
    pub model: ModelSpec,
    pub frozen: FrozenConfig,
    pub variant: AveragedVariant,
    /// Warm-start relaxation time of the tracking replicas per slow step.
    pub relax: f64,
    /// Time-averaging window per slow step (two passes of this length:
    /// one measuring the laws, one measuring the drift).
    pub window: f64,
    /// Re-relax when W2(mu_now, mu_at_last_relax) exceeds this fraction of
    /// the mu scale; infinity freezes the micro-solve laws after step one.
    pub refresh_threshold: f64,
}

impl AveragedModel {
    pub fn new(model: ModelSpec, frozen: FrozenConfig, variant: AveragedVariant) -> AveragedModel {
        let gamma_prior = model.meta.c1 / 2.0;
        AveragedModel {
            model,
            frozen,
            variant,
            relax: 0.5 / gamma_prior,
            window: 0.5 / gamma_prior,
            refresh_threshold: 0.05,
        }
    }
}

/// Slow-only trajectory of an averaged run.
#[derive(Clone, Debug)]
pub struct SlowTrajectory {
    pub times: Vec<f64>,
    pub laws: Vec<EmpiricalMeasure>,
}

impl SlowTrajectory {
    pub fn terminal(&self) -> &EmpiricalMeasure {
        self.laws.last().expect("non-empty trajectory")
    }
}

/// One (b_bar, sigma_bar) evaluation.
#[derive(Clone, Debug, Serialize)]
pub struct AveragedCoefficient {
    pub x: Vec<f64>,
    pub b_bar: Vec<f64>,
    /// Row-major d1 x d1.
    pub sigma_bar: Vec<f64>,
}

fn integrate_b_over_slice(
    model: &ModelSpec,
    x: &[f64],
    mu_m: &Moments,
    slice: &EmpiricalMeasure,
    nu_slot: &Moments,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d1 = model.d1;
    let mut b_bar = vec![0.0; d1];
    let mut bbuf = vec![0.0; d1];
    for i in 0..slice.len() {
        let ctx = EvalCtx {
            x,
            y: slice.atom(i),
            mu: law_view(mu_m),
            nu: law_view(nu_slot),
        };
        model.eval_b(&ctx, &mut bbuf)?;
        let w = slice.weights()[i];
        for c in 0..d1 {
            b_bar[c] += w * bbuf[c];
        }
    }
    let mut sigma_bar = vec![0.0; d1 * d1];
    let ctx = EvalCtx {
        x,
        y: &vec![0.0; model.d2],
        mu: law_view(mu_m),
        nu: law_view(nu_slot),
    };
    model.eval_sigma(&ctx, &mut sigma_bar)?;
    Ok((b_bar, sigma_bar))
}

/// Evaluates (b_bar, sigma_bar) at the given slow points against one frozen
/// family solve at mu. Points that are atoms of mu reuse the family's
/// slices; others get tagged-particle solves against the pooled law.
pub fn averaged_coefficients(
    model: &ModelSpec,
    mu: &EmpiricalMeasure,
    x_points: &[&[f64]],
    cfg: &FrozenConfig,
    variant: AveragedVariant,
) -> Result<Vec<AveragedCoefficient>> {
    let family = solve_frozen_pooled(model, mu, cfg)?;
    averaged_coefficients_from_family(model, &family, x_points, cfg, variant)
}

/// Same as [`averaged_coefficients`] but reusing an existing family solve.
pub fn averaged_coefficients_from_family(
    model: &ModelSpec,
    family: &InvariantFamily,
    x_points: &[&[f64]],
    cfg: &FrozenConfig,
    variant: AveragedVariant,
) -> Result<Vec<AveragedCoefficient>> {
    let mu = &family.mu;
    let mu_m = mu.moments();
    let pooled_m = family.pooled.moments();

    // Map each requested point to a family slice or queue a tagged solve.
    let mut slice_of: Vec<Option<usize>> = Vec::with_capacity(x_points.len());
    let mut tagged: Vec<&[f64]> = Vec::new();
    for &x in x_points {
        let hit = (0..mu.len()).find(|&j| mu.atom(j) == x);
        if hit.is_none() {
            tagged.push(x);
        }
        slice_of.push(hit);
    }
    let tagged_slices = if tagged.is_empty() {
        Vec::new()
    } else {
        solve_frozen_tagged(model, &family.pooled, mu, &tagged, cfg)?
    };

    let mut out = Vec::with_capacity(x_points.len());
    let mut tagged_idx = 0usize;
    for (p, &x) in x_points.iter().enumerate() {
        let slice: &EmpiricalMeasure = match slice_of[p] {
            Some(j) => &family.slices[j],
            None => {
                tagged_idx += 1;
                &tagged_slices[tagged_idx - 1]
            }
        };
        let slice_m;
        let nu_slot: &Moments = match variant {
            AveragedVariant::Correct => &pooled_m,
            AveragedVariant::Naive => {
                slice_m = slice.moments();
                &slice_m
            }
        };
        let (b_bar, sigma_bar) = integrate_b_over_slice(model, x, &mu_m, slice, nu_slot)?;
        out.push(AveragedCoefficient {
            x: x.to_vec(),
            b_bar,
            sigma_bar,
        });
    }
    Ok(out)
}

/// CSV export `x,bbar,sigmabar,variant,mu_hash` (1-d coefficients).
pub fn write_coefficient_table<W: std::io::Write>(
    out: &mut W,
    rows: &[AveragedCoefficient],
    variant: AveragedVariant,
    mu_hash: &str,
) -> Result<()> {
    writeln!(out, "x,bbar,sigmabar,variant,mu_hash")?;
    let tag = match variant {
        AveragedVariant::Correct => "correct",
        AveragedVariant::Naive => "naive",
    };
    for r in rows {
        writeln!(
            out,
            "{},{},{},{tag},{mu_hash}",
            r.x[0], r.b_bar[0], r.sigma_bar[0]
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Averaged simulation (HMM with warm-started tracking replicas)
// ---------------------------------------------------------------------------

struct Replicas {
    /// Flat N x K x d2 fast tracking replicas.
    y: Vec<f64>,
    k: usize,
    substep: u64,
}

impl Replicas {
    /// Evolves all replicas `steps` fast steps with the slow slot frozen at
    /// each owner particle's position and a live pooled fast law, optionally
    /// accumulating running law statistics.
    #[allow(clippy::too_many_arguments)]
    fn evolve(
        &mut self,
        model: &ModelSpec,
        x: &[f64],
        mu_m: &Moments,
        h: f64,
        steps: usize,
        seed: u64,
        nu_fixed: Option<&Moments>,
        mut law_acc: Option<&mut LawAccumulator>,
        mut drift_acc: Option<&mut DriftAccumulator<'_>>,
    ) -> Result<()> {
        let (d1, d2) = (model.d1, model.d2);
        let n = x.len() / d1;
        let k = self.k;
        let mut fbuf = vec![0.0; d2];
        let mut gbuf = vec![0.0; d2 * d2];
        let mut bbuf = vec![0.0; d1];
        let sqrt_h = h.sqrt();
        let mut y_new = vec![0.0; self.y.len()];
        for _ in 0..steps {
            let nu_live;
            let nu_m: &Moments = match nu_fixed {
                Some(m) => m,
                None => {
                    nu_live = Moments::from_flat(d2, &self.y, None);
                    &nu_live
                }
            };
            if let Some(acc) = law_acc.as_mut() {
                acc.add(&self.y, n, k, d2);
            }
            if let Some(acc) = drift_acc.as_mut() {
                for i in 0..n {
                    let xi = &x[i * d1..(i + 1) * d1];
                    let nu_slot = acc.nu_slot(i);
                    for r in 0..k {
                        let yi = &self.y[(i * k + r) * d2..(i * k + r + 1) * d2];
                        let ctx = EvalCtx {
                            x: xi,
                            y: yi,
                            mu: law_view(acc.mu_m),
                            nu: law_view(nu_slot),
                        };
                        model.eval_b(&ctx, &mut bbuf)?;
                        for c in 0..d1 {
                            acc.b_sum[i * d1 + c] += bbuf[c];
                        }
                    }
                    acc.count[i] += k as u64;
                }
            }
            for i in 0..n {
                let xi = &x[i * d1..(i + 1) * d1];
                for r in 0..k {
                    let idx = i * k + r;
                    let yi = &self.y[idx * d2..(idx + 1) * d2];
                    let ctx = EvalCtx {
                        x: xi,
                        y: yi,
                        mu: law_view(mu_m),
                        nu: law_view(nu_m),
                    };
                    model.eval_f(&ctx, &mut fbuf)?;
                    model.eval_g(&ctx, &mut gbuf)?;
                    let pid = key_hash(&[i as u64, r as u64]);
                    for c in 0..d2 {
                        let mut noise = 0.0;
                        for jj in 0..d2 {
                            if gbuf[c * d2 + jj] != 0.0 {
                                noise += gbuf[c * d2 + jj]
                                    * normal(seed, StreamTag::FrozenNoise, pid, self.substep, jj as u64);
                            }
                        }
                        let v = yi[c] + fbuf[c] * h + sqrt_h * noise;
                        if !v.is_finite() || v.abs() > crate::engine::BLOWUP_GUARD {
                            return Err(MmvError::BlowUp {
                                t: 0.0,
                                particle: i,
                                guard: crate::engine::BLOWUP_GUARD,
                            });
                        }
                        y_new[idx * d2 + c] = v;
                    }
                }
            }
            std::mem::swap(&mut self.y, &mut y_new);
            self.substep += 1;
        }
        Ok(())
    }
}

/// Running per-particle slice moments and global pooled moments over a
/// measuring window.
struct LawAccumulator {
    slice_sum: Vec<f64>,
    slice_sq: Vec<f64>,
    count: u64,
    d2: usize,
    n: usize,
}

impl LawAccumulator {
    fn new(n: usize, d2: usize) -> LawAccumulator {
        LawAccumulator {
            slice_sum: vec![0.0; n * d2],
            slice_sq: vec![0.0; n * d2],
            count: 0,
            d2,
            n,
        }
    }

    fn add(&mut self, y: &[f64], n: usize, k: usize, d2: usize) {
        for i in 0..n {
            for r in 0..k {
                for c in 0..d2 {
                    let v = y[(i * k + r) * d2 + c];
                    self.slice_sum[i * d2 + c] += v;
                    self.slice_sq[i * d2 + c] += v * v;
                }
            }
        }
        self.count += k as u64;
    }

    fn slice_moments(&self, i: usize) -> Moments {
        let d2 = self.d2;
        let cnt = self.count as f64;
        let mut mean = vec![0.0; d2];
        let mut var = vec![0.0; d2];
        let mut m2 = 0.0;
        for c in 0..d2 {
            mean[c] = self.slice_sum[i * d2 + c] / cnt;
            let sq = self.slice_sq[i * d2 + c] / cnt;
            m2 += sq;
            var[c] = (sq - mean[c] * mean[c]).max(0.0);
        }
        Moments { mean, var, m2 }
    }

    fn pooled_moments(&self) -> Moments {
        let d2 = self.d2;
        let cnt = self.count as f64 * self.n as f64;
        let mut mean = vec![0.0; d2];
        let mut var = vec![0.0; d2];
        let mut m2 = 0.0;
        for c in 0..d2 {
            let (mut s, mut sq) = (0.0, 0.0);
            for i in 0..self.n {
                s += self.slice_sum[i * d2 + c];
                sq += self.slice_sq[i * d2 + c];
            }
            mean[c] = s / cnt;
            let sqm = sq / cnt;
            m2 += sqm;
            var[c] = (sqm - mean[c] * mean[c]).max(0.0);
        }
        Moments { mean, var, m2 }
    }
}

/// Time-averages b over the drift-measuring pass with the fast-law slot
/// frozen at the window-estimated laws.
struct DriftAccumulator<'a> {
    b_sum: Vec<f64>,
    count: Vec<u64>,
    mu_m: &'a Moments,
    pooled: &'a Moments,
    slices: &'a [Moments],
    variant: AveragedVariant,
}

impl<'a> DriftAccumulator<'a> {
    fn nu_slot(&self, i: usize) -> &'a Moments {
        match self.variant {
            AveragedVariant::Correct => self.pooled,
            AveragedVariant::Naive => &self.slices[i],
        }
    }
}

/// Where the slow-law slot and the recursion's frozen fast-law slot read
/// from during an averaged run.
pub enum AveragedSource<'a> {
    /// The run's own slow particles and live replica pooling.
    SelfConsistent,
    /// A previous iterate: mu-slot from the flow's slow laws, the replica
    /// dynamics' fast-law slot frozen at the flow's fast laws.
    Flow(&'a DistributionFlow),
}

/// Averaged run with its fast tracking-replica clouds at the record nodes.
#[derive(Clone, Debug)]
pub struct AveragedRun {
    pub traj: SlowTrajectory,
    /// Pooled replica cloud at each record node (the mixture of the frozen
    /// slices over the current slow law).
    pub fast_pooled: Vec<EmpiricalMeasure>,
}

/// Simulates the averaged McKean-Vlasov slow equation. The slow noise and
/// initial particles use the same stream keys as the coupled engine, so a
/// run with the same seed is CRN-coupled to the full system.
pub fn simulate_averaged(
    avg: &AveragedModel,
    cfg: &SimConfig,
    record: &[f64],
) -> Result<SlowTrajectory> {
    Ok(simulate_averaged_run(avg, cfg, record, AveragedSource::SelfConsistent)?.traj)
}

/// Full-control averaged run; see [`AveragedSource`] for the linearized
/// (iterate) variant.
pub fn simulate_averaged_run(
    avg: &AveragedModel,
    cfg: &SimConfig,
    record: &[f64],
    source: AveragedSource<'_>,
) -> Result<AveragedRun> {
    cfg.validate()?;
    avg.frozen.validate()?;
    let model = &avg.model;
    let (d1, d2, n) = (model.d1, model.d2, cfg.n);
    let h_fast = avg.frozen.h_fast;
    let k = avg.frozen.k;
    let burn_steps = (avg.frozen.burn_in / h_fast).round().max(1.0) as usize;
    let relax_steps = (avg.relax / h_fast).round().max(1.0) as usize;
    let window_steps = (avg.window / h_fast).round().max(2.0) as usize;

    // Slow particles: identical init streams to the coupled engine.
    let mut x = vec![0.0; n * d1];
    for i in 0..n {
        for c in 0..d1 {
            x[i * d1 + c] = cfg
                .initial_slow
                .sample(cfg.seed, StreamTag::InitSlow, i as u64, c as u64);
        }
    }
    // Tracking replicas from the fast initial law.
    let mut reps = Replicas {
        y: (0..n * k * d2)
            .map(|idx| {
                let (i, rest) = (idx / (k * d2), idx % (k * d2));
                let (r, c) = (rest / d2, rest % d2);
                avg.frozen.init_fast.sample(
                    cfg.seed,
                    StreamTag::FrozenInit,
                    key_hash(&[i as u64, r as u64]),
                    c as u64,
                )
            })
            .collect(),
        k,
        substep: 0,
    };

    let n_steps = cfg.n_steps();
    let mut record_steps: Vec<usize> = record
        .iter()
        .map(|&t| ((t / cfg.h_slow).round() as usize).min(n_steps))
        .collect();
    record_steps.sort_unstable();
    record_steps.dedup();
    let mut traj = SlowTrajectory {
        times: Vec::new(),
        laws: Vec::new(),
    };
    let mut fast_pooled = Vec::new();
    let mut next = record_steps.iter().copied().peekable();
    let mut mu_at_last_relax: Option<EmpiricalMeasure> = None;

    let mut sbuf = vec![0.0; d1 * d1];
    for step in 0..=n_steps {
        if next.peek() == Some(&step) {
            traj.times.push(step as f64 * cfg.h_slow);
            traj.laws
                .push(EmpiricalMeasure::equal_weights(d1, x.clone())?);
            fast_pooled.push(EmpiricalMeasure::equal_weights(d2, reps.y.clone())?);
            next.next();
        }
        if step == n_steps {
            break;
        }

        let t_now = step as f64 * cfg.h_slow;
        let (mu_now, mu_m, nu_fixed): (EmpiricalMeasure, Moments, Option<Moments>) = match &source
        {
            AveragedSource::SelfConsistent => {
                let m = EmpiricalMeasure::equal_weights(d1, x.clone())?;
                let mm = m.moments();
                (m, mm, None)
            }
            AveragedSource::Flow(flow) => {
                let (mu_meas, _) = flow.measures_at(t_now)?;
                let (mu_mom, nu_mom) = flow.moments_at(t_now)?;
                (mu_meas.clone(), mu_mom.clone(), Some(nu_mom.clone()))
            }
        };

        // Warm-start relaxation, skipped while mu has barely moved.
        let settle = match &mu_at_last_relax {
            None => Some(burn_steps),
            Some(prev) => {
                let drift = w2_distance(prev, &mu_now)?;
                let scale = mu_m.m2.sqrt().max(1e-6);
                if drift > avg.refresh_threshold * scale {
                    Some(relax_steps)
                } else {
                    None
                }
            }
        };
        if let Some(steps) = settle {
            reps.evolve(
                model,
                &x,
                &mu_m,
                h_fast,
                steps,
                cfg.seed,
                nu_fixed.as_ref(),
                None,
                None,
            )?;
            mu_at_last_relax = Some(mu_now.clone());
        }

        // Pass 1: measure the slice and pooled laws.
        let mut laws = LawAccumulator::new(n, d2);
        reps.evolve(
            model,
            &x,
            &mu_m,
            h_fast,
            window_steps,
            cfg.seed,
            nu_fixed.as_ref(),
            Some(&mut laws),
            None,
        )?;
        let pooled = laws.pooled_moments();
        let slices: Vec<Moments> = (0..n).map(|i| laws.slice_moments(i)).collect();

        // Pass 2: time-average the drift with the fast-law slot frozen.
        let mut drift = DriftAccumulator {
            b_sum: vec![0.0; n * d1],
            count: vec![0; n],
            mu_m: &mu_m,
            pooled: &pooled,
            slices: &slices,
            variant: avg.variant,
        };
        reps.evolve(
            model,
            &x,
            &mu_m,
            h_fast,
            window_steps,
            cfg.seed,
            nu_fixed.as_ref(),
            None,
            Some(&mut drift),
        )?;

        // Slow Euler step with the same noise keys as the coupled engine.
        let h = cfg.h_slow;
        let sqrt_h = h.sqrt();
        for i in 0..n {
            let nu_slot = match avg.variant {
                AveragedVariant::Correct => &pooled,
                AveragedVariant::Naive => &slices[i],
            };
            let xi: Vec<f64> = x[i * d1..(i + 1) * d1].to_vec();
            let ctx = EvalCtx {
                x: &xi,
                y: &vec![0.0; d2],
                mu: law_view(&mu_m),
                nu: law_view(nu_slot),
            };
            model.eval_sigma(&ctx, &mut sbuf)?;
            let cnt = drift.count[i] as f64;
            for c in 0..d1 {
                let b_bar = drift.b_sum[i * d1 + c] / cnt;
                let mut noise = 0.0;
                for j in 0..d1 {
                    if sbuf[c * d1 + j] != 0.0 {
                        noise += sbuf[c * d1 + j]
                            * normal(cfg.seed, StreamTag::SlowNoise, i as u64, step as u64, j as u64);
                    }
                }
                let v = xi[c] + b_bar * h + sqrt_h * noise;
                if !v.is_finite() || v.abs() > crate::engine::BLOWUP_GUARD {
                    return Err(MmvError::BlowUp {
                        t: step as f64 * h,
                        particle: i,
                        guard: crate::engine::BLOWUP_GUARD,
                    });
                }
                x[i * d1 + c] = v;
            }
        }
    }
    Ok(AveragedRun { traj, fast_pooled })
}

/// Full system and averaged limit driven by the SAME slow noise and initial
/// slow particles (common random numbers); fast noise independent.
pub fn coupled_pair_simulate(
    model: &ModelSpec,
    avg: &AveragedModel,
    cfg: &SimConfig,
    record: &[f64],
) -> Result<(Trajectory, SlowTrajectory)> {
    if avg.model.d1 != model.d1 {
        return Err(MmvError::DimensionMismatch {
            expected: model.d1,
            got: avg.model.d1,
        });
    }
    let full = simulate(model, cfg, SimMode::Coupled, record)?;
    let bar = simulate_averaged(avg, cfg, record)?;
    Ok((full, bar))
}

// ---------------------------------------------------------------------------
// Fast-motion limit
// ---------------------------------------------------------------------------

/// Per-node mixtures of the frozen family over the averaged slow law.
#[derive(Clone, Debug)]
pub struct FastLimit {
    pub times: Vec<f64>,
    pub mixtures: Vec<EmpiricalMeasure>,
}

/// Solves the frozen family at each recorded averaged law (compressed to
/// `mu_atoms` support points) and returns the pooled mixtures.
pub fn fast_limit(
    avg_traj: &SlowTrajectory,
    model: &ModelSpec,
    cfg: &FrozenConfig,
    mu_atoms: usize,
) -> Result<FastLimit> {
    if avg_traj.times.is_empty() {
        return Err(MmvError::Precondition("empty averaged trajectory".into()));
    }
    let mut mixtures = Vec::with_capacity(avg_traj.times.len());
    for law in &avg_traj.laws {
        let mu_c = compress(law, mu_atoms);
        let fam = solve_frozen_pooled(model, &mu_c, cfg)?;
        mixtures.push(fam.pooled);
    }
    Ok(FastLimit {
        times: avg_traj.times.clone(),
        mixtures,
    })
}

/// Uniform recording grid re-exported for callers building experiments.
pub fn default_record(t_end: f64, nodes: usize) -> Vec<f64> {
    record_grid(t_end, nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, ModelSpec, RegularityMeta};
    use crate::rng::SamplerSpec;
    use std::collections::BTreeMap;

    fn params(kv: &[(&str, f64)]) -> BTreeMap<String, f64> {
        kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn frozen_cfg(seed: u64) -> FrozenConfig {
        FrozenConfig {
            k: 512,
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

    fn hmm_cfg(seed: u64) -> FrozenConfig {
        FrozenConfig {
            k: 16,
            burn_in: 4.0,
            avg_window: 0.5,
            picard_tol: 0.05,
            picard_max: 10,
            h_fast: 0.01,
            seed,
            init_fast: SamplerSpec::point(0.0),
            snapshots: 32,
        }
    }

    #[test]
    fn averaging_is_exact_without_fast_dependence() {
        let meta = RegularityMeta {
            alpha: 2.0,
            beta: 2.0,
            c1: 2.0,
            c2: 0.0,
            c3: 2.0,
            kappa: 0.0,
            p: 2.0,
            varrho: 1.0,
            k: 0.0,
        };
        let model = ModelSpec::from_exprs(
            "slow_only",
            1,
            1,
            &["-3 * x[0]".into()],
            &[vec!["2".into()]],
            &["-2 * y[0]".into()],
            &[vec!["1".into()]],
            meta,
        )
        .unwrap();
        let mu = EmpiricalMeasure::from_points_1d(&[0.5, -1.0]);
        for variant in [AveragedVariant::Correct, AveragedVariant::Naive] {
            let rows =
                averaged_coefficients(&model, &mu, &[&[0.5], &[-1.0]], &frozen_cfg(1), variant)
                    .unwrap();
            assert!((rows[0].b_bar[0] - (-1.5)).abs() < 1e-12);
            assert!((rows[1].b_bar[0] - 3.0).abs() < 1e-12);
            assert!((rows[0].sigma_bar[0] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_ou_bbar_matches_fixed_point() {
        // b = -x + y: b_bar(1, delta_1) = -1 + 2/3.
        let model = builtin(
            "linear_ou",
            &params(&[
                ("a", 2.0),
                ("c", 1.0),
                ("k0", 0.5),
                ("g0", std::f64::consts::SQRT_2),
                ("b0", 1.0),
                ("b1", 1.0),
                ("b2", 0.0),
                ("s0", 1.0),
            ]),
        )
        .unwrap();
        let mu = EmpiricalMeasure::dirac(&[1.0]);
        let rows = averaged_coefficients(
            &model,
            &mu,
            &[&[1.0]],
            &frozen_cfg(2),
            AveragedVariant::Correct,
        )
        .unwrap();
        assert!(
            (rows[0].b_bar[0] - (-1.0 / 3.0)).abs() < 0.02,
            "b_bar {}",
            rows[0].b_bar[0]
        );
    }

    #[test]
    fn variants_diverge_on_nu_only_drift() {
        // Correct b_bar is the mixture constant; naive varies across atoms.
        let model = builtin(
            "nu_only_drift",
            &params(&[("a", 2.0), ("c", 1.0), ("k0", 0.25), ("g0", 1.0)]),
        )
        .unwrap();
        let mu = EmpiricalMeasure::from_points_1d(&[0.0, 2.0]);
        let pts: Vec<&[f64]> = vec![&[0.0], &[2.0]];
        let cfg = frozen_cfg(3);
        let correct =
            averaged_coefficients(&model, &mu, &pts, &cfg, AveragedVariant::Correct).unwrap();
        let naive =
            averaged_coefficients(&model, &mu, &pts, &cfg, AveragedVariant::Naive).unwrap();
        let spread_c = (correct[0].b_bar[0] - correct[1].b_bar[0]).abs();
        let spread_n = (naive[0].b_bar[0] - naive[1].b_bar[0]).abs();
        // m_bar = c * mean(mu) / (a - k0) = 1/1.75; naive means differ by c*2/a = 1.
        assert!(spread_c < 0.03, "correct spread {spread_c}");
        assert!((spread_n - 1.0).abs() < 0.05, "naive spread {spread_n}");
        let m_bar = 1.0 / 1.75;
        assert!((correct[0].b_bar[0] - m_bar).abs() < 0.03);
    }

    #[test]
    fn averaged_simulation_tracks_mean_ode() {
        // b = -x + y: mean ODE m' = -m/3, so m(1) = e^{-1/3}.
        let model = builtin(
            "linear_ou",
            &params(&[
                ("a", 2.0),
                ("c", 1.0),
                ("k0", 0.5),
                ("g0", std::f64::consts::SQRT_2),
                ("b0", 1.0),
                ("b1", 1.0),
                ("b2", 0.0),
                ("s0", 1.0),
            ]),
        )
        .unwrap();
        let avg = AveragedModel::new(model, hmm_cfg(4), AveragedVariant::Correct);
        let cfg = SimConfig {
            epsilon: 1.0,
            h_slow: 0.02,
            eta_fast: 0.1,
            n: 2048,
            t_end: 1.0,
            seed: 11,
            initial_slow: SamplerSpec::point(1.0),
            initial_fast: SamplerSpec::point(0.0),
        };
        let traj = simulate_averaged(&avg, &cfg, &[1.0]).unwrap();
        let m = traj.terminal().moments().mean[0];
        let want = (-1.0f64 / 3.0).exp();
        assert!((m - want).abs() < 0.05, "mean {m} vs {want}");
    }

    #[test]
    fn driftless_averaged_run_is_brownian() {
        let meta = RegularityMeta {
            alpha: 2.0,
            beta: 2.0,
            c1: 2.0,
            c2: 0.0,
            c3: 1.0,
            kappa: 0.0,
            p: 2.0,
            varrho: 1.0,
            k: 0.0,
        };
        let model = ModelSpec::from_exprs(
            "bm",
            1,
            1,
            &["0".into()],
            &[vec!["1".into()]],
            &["-y[0]".into()],
            &[vec!["1".into()]],
            meta,
        )
        .unwrap();
        let avg = AveragedModel::new(model, hmm_cfg(5), AveragedVariant::Correct);
        let cfg = SimConfig {
            epsilon: 1.0,
            h_slow: 0.02,
            eta_fast: 0.1,
            n: 4096,
            t_end: 1.0,
            seed: 12,
            initial_slow: SamplerSpec::point(0.0),
            initial_fast: SamplerSpec::point(0.0),
        };
        let traj = simulate_averaged(&avg, &cfg, &[1.0]).unwrap();
        let m = traj.terminal().moments();
        assert!(m.mean[0].abs() < 0.05, "mean {}", m.mean[0]);
        assert!((m.var[0] - 1.0).abs() < 0.08, "var {}", m.var[0]);
    }
}
