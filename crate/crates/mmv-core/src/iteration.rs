//! Iterated linearization: the sequence of non-autonomous systems whose
//! measure slots read the previous iterate's recorded laws, its averaged
//! counterpart, and the cross-validation between the two.

use serde::Serialize;

use crate::averaging::{
    simulate_averaged_run, AveragedModel, AveragedRun, AveragedSource, SlowTrajectory,
};
use crate::engine::{
    record_grid, simulate, DistributionFlow, SimConfig, SimMode, SlowFastEnsemble, Trajectory,
};
use crate::error::{MmvError, Result};
use crate::measure::{
    mixture, w2_distance, weighted_tv_distance, BinningPolicy, EmpiricalMeasure, WeightFunction,
};
use crate::model::ModelSpec;

/// Per-iteration convergence metrics against the previous iterate's flow.
#[derive(Clone, Debug, Serialize)]
pub struct IterationMetrics {
    pub n: usize,
    pub sup_w2_slow: f64,
    #[serde(rename = "sup_rhoV_fast")]
    pub sup_rho_v_fast: f64,
    /// Combined metric of this iterate divided by the previous one.
    pub contraction_ratio: Option<f64>,
}

impl IterationMetrics {
    pub fn combined(&self) -> f64 {
        self.sup_w2_slow + self.sup_rho_v_fast
    }
}

/// One iterate of the full (slow, fast) linearized system.
pub struct IterationState {
    pub n: usize,
    /// Recorded laws of this iterate; iterate n+1 reads its measure slots
    /// from here.
    pub flow: DistributionFlow,
    /// Recorded trajectory (absent for the constant iterate 0).
    pub last_traj: Option<Trajectory>,
    /// Absent for iterate 0.
    pub metrics: Option<IterationMetrics>,
}

fn initial_laws(model: &ModelSpec, cfg: &SimConfig) -> (EmpiricalMeasure, EmpiricalMeasure) {
    let ens = SlowFastEnsemble::init(model, cfg);
    (ens.slow_measure(), ens.fast_measure())
}

fn sup_distances(
    model: &ModelSpec,
    prev: &DistributionFlow,
    traj: &Trajectory,
) -> Result<(f64, f64)> {
    let v = WeightFunction::new(model.meta.p)?;
    let bins = BinningPolicy::default();
    let mut sup_w2 = 0.0f64;
    let mut sup_rho = 0.0f64;
    for (idx, &t) in traj.times.iter().enumerate() {
        let (mu_prev, nu_prev) = prev.measures_at(t)?;
        sup_w2 = sup_w2.max(w2_distance(mu_prev, &traj.slow[idx])?);
        sup_rho = sup_rho.max(weighted_tv_distance(nu_prev, &traj.fast[idx], &v, &bins)?);
    }
    Ok((sup_w2, sup_rho))
}

/// Runs the iterated non-autonomous approximation of the coupled system.
/// Iterate 0 is the constant flow of the initial laws; iterate n reads its
/// measure slots from iterate n-1. Stops early once the combined sup-metric
/// drops below `tol`; non-convergence is reported through the metric series,
/// not as an error.
pub fn iterate_full(
    model: &ModelSpec,
    cfg: &SimConfig,
    n_max: usize,
    tol: f64,
    nodes: usize,
) -> Result<Vec<IterationState>> {
    cfg.validate()?;
    if nodes < 1 {
        return Err(MmvError::InvalidConfig("nodes must be >= 1".into()));
    }
    let grid = record_grid(cfg.t_end, nodes);
    let (mu0, nu0) = initial_laws(model, cfg);
    let mut states = vec![IterationState {
        n: 0,
        flow: DistributionFlow::constant(cfg.t_end, mu0, nu0),
        last_traj: None,
        metrics: None,
    }];
    let mut prev_combined: Option<f64> = None;
    for n in 1..=n_max {
        let traj = {
            let prev = &states.last().unwrap().flow;
            simulate(model, cfg, SimMode::Nonautonomous(prev), &grid)?
        };
        let (sup_w2, sup_rho) = sup_distances(model, &states.last().unwrap().flow, &traj)?;
        let combined = sup_w2 + sup_rho;
        let metrics = IterationMetrics {
            n,
            sup_w2_slow: sup_w2,
            sup_rho_v_fast: sup_rho,
            contraction_ratio: prev_combined.map(|p| if p > 0.0 { combined / p } else { f64::NAN }),
        };
        prev_combined = Some(combined);
        states.push(IterationState {
            n,
            flow: traj.to_flow()?,
            last_traj: Some(traj),
            metrics: Some(metrics),
        });
        if combined < tol {
            break;
        }
    }
    Ok(states)
}

/// One iterate of the averaged recursion: the averaged slow law together
/// with the pooled replica cloud standing in for the recursive frozen
/// family's mixture.
pub struct AveragedIterationState {
    pub n: usize,
    pub traj: SlowTrajectory,
    pub fast_pooled: Vec<EmpiricalMeasure>,
    pub metrics: Option<IterationMetrics>,
}

impl AveragedIterationState {
    fn to_flow(&self, t_end: f64) -> Result<DistributionFlow> {
        let mut times = self.traj.times.clone();
        let mut mus = self.traj.laws.clone();
        let mut nus = self.fast_pooled.clone();
        if let Some(&last) = times.last() {
            if last < t_end {
                times.push(t_end);
                mus.push(mus.last().unwrap().clone());
                nus.push(nus.last().unwrap().clone());
            }
        }
        DistributionFlow::new(times, mus, nus)
    }
}

/// Runs the averaged counterpart of [`iterate_full`]: iterate 0 is the
/// constant pair (initial slow law, initial fast law); iterate n solves the
/// recursion-frozen fast replicas against iterate n-1's laws and advances
/// the averaged slow particles with the resulting drift.
pub fn iterate_averaged(
    avg: &AveragedModel,
    cfg: &SimConfig,
    n_max: usize,
    tol: f64,
    nodes: usize,
) -> Result<Vec<AveragedIterationState>> {
    cfg.validate()?;
    if nodes < 1 {
        return Err(MmvError::InvalidConfig("nodes must be >= 1".into()));
    }
    let grid = record_grid(cfg.t_end, nodes);
    let (mu0, nu0) = initial_laws(&avg.model, cfg);
    let v = WeightFunction::new(avg.model.meta.p)?;
    let bins = BinningPolicy::default();
    let mut states = vec![AveragedIterationState {
        n: 0,
        traj: SlowTrajectory {
            times: grid.clone(),
            laws: vec![mu0; grid.len()],
        },
        fast_pooled: vec![nu0; grid.len()],
        metrics: None,
    }];
    let mut prev_combined: Option<f64> = None;
    for n in 1..=n_max {
        let prev = states.last().unwrap();
        let flow = prev.to_flow(cfg.t_end)?;
        let AveragedRun { traj, fast_pooled } =
            simulate_averaged_run(avg, cfg, &grid, AveragedSource::Flow(&flow))?;
        let mut sup_w2 = 0.0f64;
        let mut sup_rho = 0.0f64;
        for (idx, &t) in traj.times.iter().enumerate() {
            let (mu_prev, nu_prev) = flow.measures_at(t)?;
            sup_w2 = sup_w2.max(w2_distance(mu_prev, &traj.laws[idx])?);
            sup_rho = sup_rho.max(weighted_tv_distance(nu_prev, &fast_pooled[idx], &v, &bins)?);
        }
        let combined = sup_w2 + sup_rho;
        let metrics = IterationMetrics {
            n,
            sup_w2_slow: sup_w2,
            sup_rho_v_fast: sup_rho,
            contraction_ratio: prev_combined.map(|p| if p > 0.0 { combined / p } else { f64::NAN }),
        };
        prev_combined = Some(combined);
        states.push(AveragedIterationState {
            n,
            traj,
            fast_pooled,
            metrics: Some(metrics),
        });
        if combined < tol {
            break;
        }
    }
    Ok(states)
}

/// Per-n terminal-time comparison of the full and averaged iterates.
#[derive(Clone, Debug, Serialize)]
pub struct CrossValidationRow {
    pub n: usize,
    /// W2 between the terminal slow laws.
    pub w2_slow: f64,
    /// rho_V between the terminal fast law and the averaged replica mixture.
    #[serde(rename = "rhoV_fast")]
    pub rho_v_fast: f64,
}

/// Cross-validation report at one epsilon.
#[derive(Clone, Debug, Serialize)]
pub struct CrossValidationReport {
    pub epsilon: f64,
    pub rows: Vec<CrossValidationRow>,
    /// max over n >= 1 of w2_slow divided by the n=1 value.
    pub uniformity_factor: f64,
}

/// Compares matching iterates of the full and averaged runs at terminal
/// time. Iterate 0 of both runs is the shared constant flow and is skipped.
pub fn cross_validate(
    model: &ModelSpec,
    full_states: &[IterationState],
    avg_states: &[AveragedIterationState],
    epsilon: f64,
) -> Result<CrossValidationReport> {
    let v = WeightFunction::new(model.meta.p)?;
    let bins = BinningPolicy::default();
    let n_common = full_states.len().min(avg_states.len());
    if n_common < 2 {
        return Err(MmvError::Precondition(
            "cross_validate needs at least one completed iterate on each side".into(),
        ));
    }
    let mut rows = Vec::new();
    for idx in 1..n_common {
        let full = full_states[idx]
            .last_traj
            .as_ref()
            .ok_or_else(|| MmvError::Precondition("full iterate missing trajectory".into()))?;
        let avg = &avg_states[idx];
        let w2_slow = w2_distance(full.terminal_slow(), avg.traj.terminal())?;
        let mix = mixture(&[(avg.fast_pooled.last().unwrap(), 1.0)])?;
        let rho_v_fast = weighted_tv_distance(full.terminal_fast(), &mix, &v, &bins)?;
        rows.push(CrossValidationRow {
            n: full_states[idx].n,
            w2_slow,
            rho_v_fast,
        });
    }
    let base = rows[0].w2_slow.max(1e-12);
    let uniformity_factor = rows.iter().map(|r| r.w2_slow / base).fold(0.0, f64::max);
    Ok(CrossValidationReport {
        epsilon,
        rows,
        uniformity_factor,
    })
}

/// JSON metric report of an iteration run.
pub fn metrics_report(states: &[IterationState]) -> Vec<IterationMetrics> {
    states.iter().filter_map(|s| s.metrics.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::AveragedVariant;
    use crate::frozen::FrozenConfig;
    use crate::model::{builtin, ModelSpec};
    use crate::rng::SamplerSpec;
    use std::collections::BTreeMap;

    fn params(kv: &[(&str, f64)]) -> BTreeMap<String, f64> {
        kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn linear_ou(k0: f64) -> ModelSpec {
        builtin(
            "linear_ou",
            &params(&[
                ("a", 2.0),
                ("c", 1.0),
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

    fn cfg(n: usize, seed: u64) -> SimConfig {
        SimConfig {
            epsilon: 0.1,
            h_slow: 0.02,
            eta_fast: 0.1,
            n,
            t_end: 0.5,
            seed,
            initial_slow: SamplerSpec::point(1.0),
            initial_fast: SamplerSpec::point(0.0),
        }
    }

    #[test]
    fn measure_free_iterates_stabilize_at_n1() {
        // No measure feedback: iterate 1 is the coupled run; iterate 2 only
        // differs by its flow input, which it ignores.
        let model = builtin(
            "linear_ou",
            &params(&[
                ("a", 2.0),
                ("c", 1.0),
                ("k0", 0.0),
                ("g0", 1.0),
                ("b0", 1.0),
                ("b1", 1.0),
                ("b2", 0.0),
                ("s0", 1.0),
            ]),
        )
        .unwrap();
        let c = cfg(128, 3);
        let states = iterate_full(&model, &c, 3, 0.0, 5).unwrap();
        let coupled = simulate(&model, &c, SimMode::Coupled, &record_grid(0.5, 5)).unwrap();
        let t1 = states[1].last_traj.as_ref().unwrap();
        assert_eq!(
            t1.terminal_slow().atoms_flat(),
            coupled.terminal_slow().atoms_flat()
        );
        let m2 = states[2].metrics.as_ref().unwrap();
        assert!(m2.combined() < 1e-12, "residual {}", m2.combined());
    }

    #[test]
    fn n_max_zero_returns_constant_state() {
        let model = linear_ou(0.25);
        let states = iterate_full(&model, &cfg(64, 1), 0, 1e-3, 4).unwrap();
        assert_eq!(states.len(), 1);
        assert!(states[0].metrics.is_none());
        let (mu, _) = states[0].flow.measures_at(0.3).unwrap();
        assert_eq!(mu.atom(0), &[1.0]);
    }

    #[test]
    fn contraction_regime_metric_decays() {
        let model = linear_ou(0.25);
        let states = iterate_full(&model, &cfg(512, 9), 5, 0.0, 5).unwrap();
        let combined: Vec<f64> = states
            .iter()
            .filter_map(|s| s.metrics.as_ref().map(|m| m.combined()))
            .collect();
        assert!(combined.len() >= 4);
        // After the first corrective iterate the metric keeps shrinking.
        assert!(
            combined[2] < combined[1] && combined[3] < combined[2],
            "metrics {combined:?}"
        );
        assert!(combined[3] < 0.5 * combined[1], "metrics {combined:?}");
    }

    #[test]
    fn averaged_iterates_converge_and_cross_validate() {
        let model = linear_ou(0.25);
        let frozen = FrozenConfig {
            k: 16,
            burn_in: 4.0,
            avg_window: 0.5,
            picard_tol: 0.05,
            picard_max: 10,
            h_fast: 0.01,
            seed: 5,
            init_fast: SamplerSpec::point(0.0),
            snapshots: 32,
        };
        let avg = AveragedModel::new(model.clone(), frozen, AveragedVariant::Correct);
        let c = cfg(256, 7);
        let full = iterate_full(&model, &c, 3, 0.0, 5).unwrap();
        let bar = iterate_averaged(&avg, &c, 3, 0.0, 5).unwrap();
        let m2 = bar[2].metrics.as_ref().unwrap();
        let m1 = bar[1].metrics.as_ref().unwrap();
        assert!(
            m2.combined() < m1.combined(),
            "averaged metrics {} -> {}",
            m1.combined(),
            m2.combined()
        );
        let report = cross_validate(&model, &full, &bar, c.epsilon).unwrap();
        assert_eq!(report.rows.len(), 3);
        for row in &report.rows {
            assert!(row.w2_slow < 0.5, "n={} w2 {}", row.n, row.w2_slow);
        }
    }

    #[test]
    fn telescoping_triangle_holds() {
        // |phi(full) - phi(limit)| <= leg1 + leg2 + leg3 for phi = mean, m2,
        // with W2 bounding the mean gap (pipeline wiring check).
        let model = linear_ou(0.25);
        let frozen = FrozenConfig {
            k: 16,
            burn_in: 4.0,
            avg_window: 0.5,
            picard_tol: 0.05,
            picard_max: 10,
            h_fast: 0.01,
            seed: 5,
            init_fast: SamplerSpec::point(0.0),
            snapshots: 32,
        };
        let avg = AveragedModel::new(model.clone(), frozen, AveragedVariant::Correct);
        let c = cfg(256, 13);
        let grid = record_grid(c.t_end, 5);
        let coupled = simulate(&model, &c, SimMode::Coupled, &grid).unwrap();
        let full = iterate_full(&model, &c, 2, 0.0, 5).unwrap();
        let bar = iterate_averaged(&avg, &c, 2, 0.0, 5).unwrap();
        let limit = crate::averaging::simulate_averaged(&avg, &c, &grid).unwrap();

        let full_n = full[2].last_traj.as_ref().unwrap().terminal_slow();
        let bar_n = bar[2].traj.terminal();
        let leg1 = w2_distance(coupled.terminal_slow(), full_n).unwrap();
        let leg2 = w2_distance(full_n, bar_n).unwrap();
        let leg3 = w2_distance(bar_n, limit.terminal()).unwrap();
        let direct = w2_distance(coupled.terminal_slow(), limit.terminal()).unwrap();
        assert!(
            direct <= leg1 + leg2 + leg3 + 1e-12,
            "{direct} vs {leg1}+{leg2}+{leg3}"
        );
        let mean_gap = (coupled.terminal_slow().moments().mean[0]
            - limit.terminal().moments().mean[0])
            .abs();
        assert!(mean_gap <= direct + 1e-12);
    }
}
