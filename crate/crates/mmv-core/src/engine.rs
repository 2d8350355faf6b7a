//! Euler–Maruyama particle integrator for the coupled slow–fast system and
//! its non-autonomous (frozen-flow) variant.
//!
//! The fast component is advanced with `n_sub = ceil(h / (eps * eta_fast))`
//! substeps per slow step, so its relaxation is resolved uniformly in eps.
//! Within a slow step the slow positions and their empirical law are frozen;
//! the fast empirical law is refreshed every substep.

use serde::{Deserialize, Serialize};

use crate::error::{MmvError, Result};
use crate::measure::{EmpiricalMeasure, Moments};
use crate::model::expr::{EvalCtx, LawView};
use crate::model::ModelSpec;
use crate::rng::{normal, SamplerSpec, StreamTag};

pub const BLOWUP_GUARD: f64 = 1e8;

fn default_eta_fast() -> f64 {
    0.1
}

/// Discretization and ensemble parameters of one simulation.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub epsilon: f64,
    pub h_slow: f64,
    #[serde(default = "default_eta_fast")]
    pub eta_fast: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub seed: u64,
    /// Initial law of the slow component, applied per coordinate.
    pub initial_slow: SamplerSpec,
    /// Initial law of the fast component, applied per coordinate.
    pub initial_fast: SamplerSpec,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(MmvError::InvalidConfig("epsilon must be > 0".into()));
        }
        if !(self.h_slow > 0.0 && self.h_slow <= self.t_end) {
            return Err(MmvError::InvalidConfig(
                "h_slow must satisfy 0 < h_slow <= T".into(),
            ));
        }
        if self.n < 2 {
            return Err(MmvError::InvalidConfig("N must be >= 2".into()));
        }
        if !(self.eta_fast > 0.0 && self.eta_fast <= 1.0) {
            return Err(MmvError::InvalidConfig("eta_fast must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn n_sub(&self) -> usize {
        (self.h_slow / (self.epsilon * self.eta_fast)).ceil().max(1.0) as usize
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.h_slow).round().max(1.0) as usize
    }
}

/// N interacting slow–fast particles with their noise-stream bookkeeping.
#[derive(Clone, Debug)]
pub struct SlowFastEnsemble {
    pub t: f64,
    /// Flat N x d1 slow positions.
    pub x: Vec<f64>,
    /// Flat N x d2 fast positions.
    pub y: Vec<f64>,
    pub n: usize,
    pub d1: usize,
    pub d2: usize,
    /// Slow-step counter; keys the slow noise stream.
    pub step_index: u64,
    /// Global fast-substep counter; keys the fast noise stream.
    pub substep_index: u64,
}

impl SlowFastEnsemble {
    /// Samples the initial ensemble from the config's coordinate samplers.
    pub fn init(model: &ModelSpec, cfg: &SimConfig) -> SlowFastEnsemble {
        let (d1, d2, n) = (model.d1, model.d2, cfg.n);
        let mut x = vec![0.0; n * d1];
        let mut y = vec![0.0; n * d2];
        for i in 0..n {
            for k in 0..d1 {
                x[i * d1 + k] =
                    cfg.initial_slow
                        .sample(cfg.seed, StreamTag::InitSlow, i as u64, k as u64);
            }
            for k in 0..d2 {
                y[i * d2 + k] =
                    cfg.initial_fast
                        .sample(cfg.seed, StreamTag::InitFast, i as u64, k as u64);
            }
        }
        SlowFastEnsemble {
            t: 0.0,
            x,
            y,
            n,
            d1,
            d2,
            step_index: 0,
            substep_index: 0,
        }
    }

    pub fn slow_measure(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::equal_weights(self.d1, self.x.clone()).expect("finite ensemble")
    }

    pub fn fast_measure(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::equal_weights(self.d2, self.y.clone()).expect("finite ensemble")
    }

    fn guard(&self) -> Result<()> {
        for (i, chunk) in self.x.chunks(self.d1).enumerate() {
            if chunk.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_GUARD) {
                return Err(MmvError::BlowUp {
                    t: self.t,
                    particle: i,
                    guard: BLOWUP_GUARD,
                });
            }
        }
        for (i, chunk) in self.y.chunks(self.d2).enumerate() {
            if chunk.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_GUARD) {
                return Err(MmvError::BlowUp {
                    t: self.t,
                    particle: i,
                    guard: BLOWUP_GUARD,
                });
            }
        }
        Ok(())
    }
}

/// Piecewise-constant left-continuous flow of (slow, fast) laws, used as the
/// measure source of the non-autonomous systems.
#[derive(Clone, Debug)]
pub struct DistributionFlow {
    times: Vec<f64>,
    mus: Vec<Moments>,
    nus: Vec<Moments>,
    mu_measures: Vec<EmpiricalMeasure>,
    nu_measures: Vec<EmpiricalMeasure>,
}

impl DistributionFlow {
    pub fn new(
        times: Vec<f64>,
        mus: Vec<EmpiricalMeasure>,
        nus: Vec<EmpiricalMeasure>,
    ) -> Result<DistributionFlow> {
        if times.is_empty() || times.len() != mus.len() || times.len() != nus.len() {
            return Err(MmvError::InvalidConfig(
                "flow needs equal, non-zero numbers of times and measures".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) && times.len() > 1 {
            return Err(MmvError::InvalidConfig("flow grid must be strictly increasing".into()));
        }
        let mu_m = mus.iter().map(|m| m.moments()).collect();
        let nu_m = nus.iter().map(|m| m.moments()).collect();
        Ok(DistributionFlow {
            times,
            mus: mu_m,
            nus: nu_m,
            mu_measures: mus,
            nu_measures: nus,
        })
    }

    /// Constant-in-time flow (iterate 0 convention).
    pub fn constant(t_end: f64, mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> DistributionFlow {
        DistributionFlow {
            times: vec![0.0, t_end],
            mus: vec![mu.moments(), mu.moments()],
            nus: vec![nu.moments(), nu.moments()],
            mu_measures: vec![mu.clone(), mu],
            nu_measures: vec![nu.clone(), nu],
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    fn node_at(&self, t: f64) -> Result<usize> {
        let tol = 1e-9;
        if t < self.times[0] - tol || t > *self.times.last().unwrap() + tol {
            return Err(MmvError::FlowGap(t));
        }
        // Last node with time <= t (left-continuous lookup).
        let mut idx = match self
            .times
            .binary_search_by(|probe| probe.partial_cmp(&(t + tol)).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        if idx >= self.times.len() {
            idx = self.times.len() - 1;
        }
        Ok(idx)
    }

    pub fn moments_at(&self, t: f64) -> Result<(&Moments, &Moments)> {
        let i = self.node_at(t)?;
        Ok((&self.mus[i], &self.nus[i]))
    }

    pub fn measures_at(&self, t: f64) -> Result<(&EmpiricalMeasure, &EmpiricalMeasure)> {
        let i = self.node_at(t)?;
        Ok((&self.mu_measures[i], &self.nu_measures[i]))
    }
}

#[inline]
pub fn law_view(m: &Moments) -> LawView<'_> {
    LawView {
        mean: &m.mean,
        var: &m.var,
        m2: m.m2,
    }
}

/// Where the coefficient measure slots read from during a step.
enum MeasureSource<'a> {
    /// The ensemble's own empirical laws (the nonlinear system).
    SelfConsistent,
    /// A recorded flow (the linearized, non-autonomous system).
    Flow(&'a DistributionFlow),
}

/// Per-particle pathwise integrand `f(x_i, y_i, mu_hat)`; accumulated at
/// every fast substep so fast-scale fluctuations are resolved.
pub type PathIntegrand<'a> = &'a dyn Fn(&[f64], &[f64], &Moments) -> f64;

fn step_inner(
    model: &ModelSpec,
    ens: &mut SlowFastEnsemble,
    cfg: &SimConfig,
    source: &MeasureSource<'_>,
    mut accumulate: Option<(PathIntegrand<'_>, &mut [f64])>,
) -> Result<()> {
    let (d1, d2, n) = (ens.d1, ens.d2, ens.n);
    let h = cfg.h_slow;
    let n_sub = cfg.n_sub();
    let delta = h / n_sub as f64;
    let eps = cfg.epsilon;
    let t0 = ens.t;

    // Laws at the start of the slow step.
    let own_mu;
    let own_nu;
    let (mu0, nu0): (&Moments, &Moments) = match source {
        MeasureSource::SelfConsistent => {
            own_mu = Moments::from_flat(d1, &ens.x, None);
            own_nu = Moments::from_flat(d2, &ens.y, None);
            (&own_mu, &own_nu)
        }
        MeasureSource::Flow(flow) => flow.moments_at(t0)?,
    };

    // Slow update from time-t0 values, written to a buffer so the fast
    // substeps below still see the frozen slow positions.
    let mut x_new = ens.x.clone();
    let mut bbuf = vec![0.0; d1];
    let mut sbuf = vec![0.0; d1 * d1];
    let sqrt_h = h.sqrt();
    for i in 0..n {
        let xi = &ens.x[i * d1..(i + 1) * d1];
        let yi = &ens.y[i * d2..(i + 1) * d2];
        let ctx = EvalCtx {
            x: xi,
            y: yi,
            mu: law_view(mu0),
            nu: law_view(nu0),
        };
        model.eval_b(&ctx, &mut bbuf)?;
        model.eval_sigma(&ctx, &mut sbuf)?;
        for c in 0..d1 {
            let mut noise = 0.0;
            for j in 0..d1 {
                if sbuf[c * d1 + j] != 0.0 {
                    noise += sbuf[c * d1 + j]
                        * normal(cfg.seed, StreamTag::SlowNoise, i as u64, ens.step_index, j as u64);
                }
            }
            x_new[i * d1 + c] = xi[c] + bbuf[c] * h + sqrt_h * noise;
        }
    }

    // Fast substeps with frozen slow positions; the fast law is refreshed
    // every substep (self-consistent mode) or read from the flow.
    let mut fbuf = vec![0.0; d2];
    let mut gbuf = vec![0.0; d2 * d2];
    let mut y_new = vec![0.0; n * d2];
    let sqrt_de = (delta / eps).sqrt();
    for k in 0..n_sub {
        let tk = t0 + k as f64 * delta;
        let own_nu_k;
        let (mu_k, nu_k): (&Moments, &Moments) = match source {
            MeasureSource::SelfConsistent => {
                own_nu_k = Moments::from_flat(d2, &ens.y, None);
                (mu0, &own_nu_k)
            }
            MeasureSource::Flow(flow) => flow.moments_at(tk)?,
        };
        if let Some((f, acc)) = accumulate.as_mut() {
            for i in 0..n {
                acc[i] += delta
                    * f(
                        &ens.x[i * d1..(i + 1) * d1],
                        &ens.y[i * d2..(i + 1) * d2],
                        mu0,
                    );
            }
        }
        for i in 0..n {
            let xi = &ens.x[i * d1..(i + 1) * d1];
            let yi = &ens.y[i * d2..(i + 1) * d2];
            let ctx = EvalCtx {
                x: xi,
                y: yi,
                mu: law_view(mu_k),
                nu: law_view(nu_k),
            };
            model.eval_f(&ctx, &mut fbuf)?;
            model.eval_g(&ctx, &mut gbuf)?;
            for c in 0..d2 {
                let mut noise = 0.0;
                for j in 0..d2 {
                    if gbuf[c * d2 + j] != 0.0 {
                        noise += gbuf[c * d2 + j]
                            * normal(
                                cfg.seed,
                                StreamTag::FastNoise,
                                i as u64,
                                ens.substep_index,
                                j as u64,
                            );
                    }
                }
                y_new[i * d2 + c] = yi[c] + fbuf[c] * delta / eps + sqrt_de * noise;
            }
        }
        std::mem::swap(&mut ens.y, &mut y_new);
        ens.substep_index += 1;
    }

    ens.x = x_new;
    ens.t = t0 + h;
    ens.step_index += 1;
    ens.guard()
}

/// One slow step of the coupled (self-consistent) system.
pub fn step_coupled(model: &ModelSpec, ens: &mut SlowFastEnsemble, cfg: &SimConfig) -> Result<()> {
    step_inner(model, ens, cfg, &MeasureSource::SelfConsistent, None)
}

/// One slow step with measure slots read from a frozen distribution flow.
pub fn step_nonautonomous(
    model: &ModelSpec,
    flow: &DistributionFlow,
    ens: &mut SlowFastEnsemble,
    cfg: &SimConfig,
) -> Result<()> {
    step_inner(model, ens, cfg, &MeasureSource::Flow(flow), None)
}

/// Coupled run that also returns each particle's pathwise integral
/// `int_0^T f(X_s, Y_s, mu_hat_s) ds`, accumulated at fast-substep
/// resolution.
pub fn simulate_with_integral(
    model: &ModelSpec,
    cfg: &SimConfig,
    f: PathIntegrand<'_>,
    record: &[f64],
) -> Result<(Trajectory, Vec<f64>)> {
    cfg.validate()?;
    let n_steps = cfg.n_steps();
    let mut record_steps: Vec<usize> = record
        .iter()
        .map(|&t| ((t / cfg.h_slow).round() as usize).min(n_steps))
        .collect();
    record_steps.sort_unstable();
    record_steps.dedup();
    let mut ens = SlowFastEnsemble::init(model, cfg);
    let mut acc = vec![0.0; cfg.n];
    let mut traj = Trajectory {
        times: Vec::new(),
        slow: Vec::new(),
        fast: Vec::new(),
    };
    let mut next = record_steps.iter().copied().peekable();
    for step in 0..=n_steps {
        if next.peek() == Some(&step) {
            traj.times.push(step as f64 * cfg.h_slow);
            traj.slow.push(ens.slow_measure());
            traj.fast.push(ens.fast_measure());
            next.next();
        }
        if step == n_steps {
            break;
        }
        step_inner(
            model,
            &mut ens,
            cfg,
            &MeasureSource::SelfConsistent,
            Some((f, &mut acc)),
        )?;
    }
    Ok((traj, acc))
}

/// Recorded empirical snapshots of one run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub slow: Vec<EmpiricalMeasure>,
    pub fast: Vec<EmpiricalMeasure>,
}

impl Trajectory {
    pub fn to_flow(&self) -> Result<DistributionFlow> {
        DistributionFlow::new(self.times.clone(), self.slow.clone(), self.fast.clone())
    }

    pub fn terminal_slow(&self) -> &EmpiricalMeasure {
        self.slow.last().expect("non-empty trajectory")
    }

    pub fn terminal_fast(&self) -> &EmpiricalMeasure {
        self.fast.last().expect("non-empty trajectory")
    }

    /// CSV rows `t,kind,w,x1..xd` for every snapshot.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        let dmax = self
            .slow
            .first()
            .map(|m| m.dim())
            .unwrap_or(0)
            .max(self.fast.first().map(|m| m.dim()).unwrap_or(0));
        write!(out, "t,kind,w")?;
        for k in 0..dmax {
            write!(out, ",x{}", k + 1)?;
        }
        writeln!(out)?;
        for (idx, &t) in self.times.iter().enumerate() {
            for (kind, m) in [("slow", &self.slow[idx]), ("fast", &self.fast[idx])] {
                for i in 0..m.len() {
                    write!(out, "{t},{kind},{}", m.weights()[i])?;
                    for &c in m.atom(i) {
                        write!(out, ",{c}")?;
                    }
                    for _ in m.dim()..dmax {
                        write!(out, ",")?;
                    }
                    writeln!(out)?;
                }
            }
        }
        Ok(())
    }
}

/// Simulation mode: self-consistent or linearized against a flow.
pub enum SimMode<'a> {
    Coupled,
    Nonautonomous(&'a DistributionFlow),
}

/// Runs the system and records empirical snapshots at the requested times
/// (each snapped to the nearest slow-step boundary).
pub fn simulate(
    model: &ModelSpec,
    cfg: &SimConfig,
    mode: SimMode<'_>,
    record: &[f64],
) -> Result<Trajectory> {
    cfg.validate()?;
    let n_steps = cfg.n_steps();
    let mut record_steps: Vec<usize> = record
        .iter()
        .map(|&t| ((t / cfg.h_slow).round() as usize).min(n_steps))
        .collect();
    record_steps.sort_unstable();
    record_steps.dedup();
    let mut ens = SlowFastEnsemble::init(model, cfg);
    let mut traj = Trajectory {
        times: Vec::new(),
        slow: Vec::new(),
        fast: Vec::new(),
    };
    let mut next = record_steps.iter().copied().peekable();
    for step in 0..=n_steps {
        if next.peek() == Some(&step) {
            traj.times.push(step as f64 * cfg.h_slow);
            traj.slow.push(ens.slow_measure());
            traj.fast.push(ens.fast_measure());
            next.next();
        }
        if step == n_steps {
            break;
        }
        match &mode {
            SimMode::Coupled => step_coupled(model, &mut ens, cfg)?,
            SimMode::Nonautonomous(flow) => step_nonautonomous(model, flow, &mut ens, cfg)?,
        }
    }
    Ok(traj)
}

/// Uniform recording grid with `count` intervals over [0, T].
pub fn record_grid(t_end: f64, count: usize) -> Vec<f64> {
    (0..=count).map(|i| t_end * i as f64 / count as f64).collect()
}
