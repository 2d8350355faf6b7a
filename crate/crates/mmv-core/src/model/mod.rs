//! Coefficient quadruple (b, sigma, F, G) with declared regularity metadata
//! and probe-based assumption checks.

pub mod expr;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{MmvError, Result};
use crate::measure::{weighted_tv_distance, BinningPolicy, EmpiricalMeasure, WeightFunction};
use crate::rng::{uniform, StreamTag};
use expr::{parse_coeff, CompiledExpr, EvalCtx, SlotPolicy};

/// Declared regularity and dissipativity constants of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularityMeta {
    /// Hoelder index in the slow variable, in (0, 2].
    pub alpha: f64,
    /// Hoelder index in the fast variable, in (0, 2].
    pub beta: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "C3")]
    pub c3: f64,
    /// Measure-Lipschitz constant of (F, G) in the fast-law slot.
    #[serde(default)]
    pub kappa: f64,
    /// Polynomial growth exponent of the weight V(y) = 1 + |y|^p.
    #[serde(default = "default_p")]
    pub p: f64,
    /// Nondegeneracy lower bound for sigma sigma*.
    #[serde(default = "default_varrho")]
    pub varrho: f64,
    /// Allowed degeneracy growth exponent of G.
    #[serde(default)]
    pub k: f64,
}

fn default_p() -> f64 {
    2.0
}

fn default_varrho() -> f64 {
    1.0
}

impl RegularityMeta {
    pub fn validate(&self) -> Result<()> {
        if !(self.c2 >= 0.0 && self.c1 > self.c2) {
            return Err(MmvError::InvalidModel(format!(
                "dissipativity constants require C1 > C2 >= 0, got C1 = {}, C2 = {}",
                self.c1, self.c2
            )));
        }
        if self.c3 < 0.0 {
            return Err(MmvError::InvalidModel("C3 must be >= 0".into()));
        }
        if self.kappa < 0.0 {
            return Err(MmvError::InvalidModel("kappa must be >= 0".into()));
        }
        if !(self.varrho > 0.0) {
            return Err(MmvError::InvalidModel("varrho must be > 0".into()));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v <= 2.0) {
                return Err(MmvError::InvalidModel(format!(
                    "{name} must lie in (0, 2], got {v}"
                )));
            }
        }
        if self.p < 1.0 {
            return Err(MmvError::InvalidModel("p must be >= 1".into()));
        }
        Ok(())
    }
}

/// Immutable model: compiled coefficient expressions plus metadata.
/// Evaluation is pure; instances are safe to share across threads.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub name: String,
    pub d1: usize,
    pub d2: usize,
    b: Vec<CompiledExpr>,            // length d1
    sigma: Vec<CompiledExpr>,        // row-major d1 x d1
    f: Vec<CompiledExpr>,            // length d2
    g: Vec<CompiledExpr>,            // row-major d2 x d2
    pub meta: RegularityMeta,
}

impl ModelSpec {
    pub fn from_exprs(
        name: &str,
        d1: usize,
        d2: usize,
        b_src: &[String],
        sigma_src: &[Vec<String>],
        f_src: &[String],
        g_src: &[Vec<String>],
        meta: RegularityMeta,
    ) -> Result<ModelSpec> {
        if d1 == 0 || d2 == 0 {
            return Err(MmvError::InvalidModel("dimensions must be positive".into()));
        }
        meta.validate()?;
        let check_rows = |what: &str, rows: &[Vec<String>], n: usize| -> Result<()> {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(MmvError::InvalidModel(format!("{what} must be {n}x{n}")));
            }
            Ok(())
        };
        if b_src.len() != d1 {
            return Err(MmvError::InvalidModel(format!("b must have {d1} rows")));
        }
        if f_src.len() != d2 {
            return Err(MmvError::InvalidModel(format!("F must have {d2} rows")));
        }
        check_rows("sigma", sigma_src, d1)?;
        check_rows("G", g_src, d2)?;
        let compile_vec = |srcs: &[String], policy: SlotPolicy| -> Result<Vec<CompiledExpr>> {
            srcs.iter()
                .map(|s| Ok(CompiledExpr::compile(&parse_coeff(s, d1, d2, policy)?)))
                .collect()
        };
        let flat = |rows: &[Vec<String>]| -> Vec<String> { rows.concat() };
        Ok(ModelSpec {
            name: name.to_string(),
            d1,
            d2,
            b: compile_vec(b_src, SlotPolicy::ALL)?,
            sigma: compile_vec(&flat(sigma_src), SlotPolicy::NO_Y)?,
            f: compile_vec(f_src, SlotPolicy::ALL)?,
            g: compile_vec(&flat(g_src), SlotPolicy::ALL)?,
            meta,
        })
    }

    /// Slow drift b(x, mu, y, nu) into `out` (length d1).
    #[inline]
    pub fn eval_b(&self, ctx: &EvalCtx<'_>, out: &mut [f64]) -> Result<()> {
        for (o, e) in out.iter_mut().zip(&self.b) {
            *o = e.eval(ctx)?;
        }
        Ok(())
    }

    /// Slow diffusion sigma(x, mu, nu) into `out` (row-major d1 x d1).
    /// The `y` entries of `ctx` are ignored by construction.
    #[inline]
    pub fn eval_sigma(&self, ctx: &EvalCtx<'_>, out: &mut [f64]) -> Result<()> {
        for (o, e) in out.iter_mut().zip(&self.sigma) {
            *o = e.eval(ctx)?;
        }
        Ok(())
    }

    /// Fast drift F(x, mu, y, nu) into `out` (length d2), WITHOUT the 1/eps
    /// scale; the engine applies the time-scale separation.
    #[inline]
    pub fn eval_f(&self, ctx: &EvalCtx<'_>, out: &mut [f64]) -> Result<()> {
        for (o, e) in out.iter_mut().zip(&self.f) {
            *o = e.eval(ctx)?;
        }
        Ok(())
    }

    /// Fast diffusion G(x, mu, y, nu) into `out` (row-major d2 x d2),
    /// without the 1/sqrt(eps) scale.
    #[inline]
    pub fn eval_g(&self, ctx: &EvalCtx<'_>, out: &mut [f64]) -> Result<()> {
        for (o, e) in out.iter_mut().zip(&self.g) {
            *o = e.eval(ctx)?;
        }
        Ok(())
    }

    pub fn sources(&self) -> ModelSources {
        let rows = |v: &[CompiledExpr], n: usize| -> Vec<Vec<String>> {
            v.chunks(n).map(|r| r.iter().map(|e| e.source().to_string()).collect()).collect()
        };
        ModelSources {
            b: self.b.iter().map(|e| e.source().to_string()).collect(),
            sigma: rows(&self.sigma, self.d1),
            f: self.f.iter().map(|e| e.source().to_string()).collect(),
            g: rows(&self.g, self.d2),
        }
    }
}

/// Pretty-printed coefficient sources, for manifests and hashing.
#[derive(Clone, Debug, Serialize)]
pub struct ModelSources {
    pub b: Vec<String>,
    pub sigma: Vec<Vec<String>>,
    pub f: Vec<String>,
    pub g: Vec<Vec<String>>,
}

// ---------------------------------------------------------------------------
// Probe-based assumption checks
// ---------------------------------------------------------------------------

/// Randomized but deterministic probe plan shared by both checks.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbePlan {
    #[serde(default = "default_probe_points")]
    pub n_points: usize,
    /// Fast-coordinate range: |y_j| <= y_max.
    #[serde(default = "default_y_max")]
    pub y_max: f64,
    #[serde(default = "default_cloud_atoms")]
    pub cloud_atoms: usize,
    /// Measure clouds live in [-cloud_half_width, cloud_half_width]^d.
    #[serde(default = "default_cloud_half_width")]
    pub cloud_half_width: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_probe_points() -> usize {
    256
}
fn default_y_max() -> f64 {
    10.0
}
fn default_cloud_atoms() -> usize {
    8
}
fn default_cloud_half_width() -> f64 {
    5.0
}

impl Default for ProbePlan {
    fn default() -> Self {
        ProbePlan {
            n_points: default_probe_points(),
            y_max: default_y_max(),
            cloud_atoms: default_cloud_atoms(),
            cloud_half_width: default_cloud_half_width(),
            seed: 0,
        }
    }
}

impl ProbePlan {
    fn point(&self, i: u64, slot: u64, dim: usize, half_width: f64) -> Vec<f64> {
        (0..dim)
            .map(|k| {
                half_width * (2.0 * uniform(self.seed, StreamTag::Probe, i, slot, k as u64) - 1.0)
            })
            .collect()
    }

    fn cloud(&self, i: u64, slot: u64, dim: usize) -> EmpiricalMeasure {
        let mut atoms = Vec::with_capacity(self.cloud_atoms * dim);
        for a in 0..self.cloud_atoms {
            for k in 0..dim {
                let u = uniform(
                    self.seed,
                    StreamTag::Probe,
                    i,
                    slot * 1000 + a as u64,
                    k as u64,
                );
                atoms.push(self.cloud_half_width * (2.0 * u - 1.0));
            }
        }
        EmpiricalMeasure::equal_weights(dim, atoms).expect("probe cloud is valid")
    }
}

/// Worst-case margin of the dissipativity inequality on the probe set.
#[derive(Clone, Debug, Serialize)]
pub struct DissipativityReport {
    pub q: f64,
    pub n_points: usize,
    /// max over probe of LHS - RHS; PASS iff <= 0.
    pub worst_margin: f64,
    pub worst_y_norm: f64,
    pub pass: bool,
}

/// Evaluates `2<F, y> + (q-1)|G|^2 <= -C1|y|^2 + C2 m2(nu) + C3` on the
/// probe grid for each requested q.
pub fn check_dissipativity(
    model: &ModelSpec,
    probe: &ProbePlan,
    q_list: &[f64],
) -> Result<Vec<DissipativityReport>> {
    let mut reports = Vec::with_capacity(q_list.len());
    let mut fbuf = vec![0.0; model.d2];
    let mut gbuf = vec![0.0; model.d2 * model.d2];
    for &q in q_list {
        if q < 2.0 {
            return Err(MmvError::Precondition(format!("q must be >= 2, got {q}")));
        }
        let mut worst = f64::NEG_INFINITY;
        let mut worst_y = 0.0;
        for i in 0..probe.n_points as u64 {
            let x = probe.point(i, 0, model.d1, probe.cloud_half_width);
            let y = probe.point(i, 1, model.d2, probe.y_max);
            let mu = probe.cloud(i, 2, model.d1);
            let nu = probe.cloud(i, 3, model.d2);
            let (mm, nm) = (mu.moments(), nu.moments());
            let ctx = EvalCtx {
                x: &x,
                y: &y,
                mu: expr::LawView { mean: &mm.mean, var: &mm.var, m2: mm.m2 },
                nu: expr::LawView { mean: &nm.mean, var: &nm.var, m2: nm.m2 },
            };
            model.eval_f(&ctx, &mut fbuf)?;
            model.eval_g(&ctx, &mut gbuf)?;
            let fy: f64 = fbuf.iter().zip(&y).map(|(f, yk)| f * yk).sum();
            let g2: f64 = gbuf.iter().map(|g| g * g).sum();
            let y2: f64 = y.iter().map(|v| v * v).sum();
            let lhs = 2.0 * fy + (q - 1.0) * g2;
            let rhs = -model.meta.c1 * y2 + model.meta.c2 * nm.m2 + model.meta.c3;
            let margin = lhs - rhs;
            if margin > worst {
                worst = margin;
                worst_y = y2.sqrt();
            }
        }
        reports.push(DissipativityReport {
            q,
            n_points: probe.n_points,
            worst_margin: worst,
            worst_y_norm: worst_y,
            pass: worst <= 0.0,
        });
    }
    Ok(reports)
}

/// Worst observed measure-Lipschitz ratio of (F, G) in the fast-law slot.
#[derive(Clone, Debug, Serialize)]
pub struct MeasureLipschitzReport {
    pub kappa: f64,
    pub tolerance: f64,
    pub n_pairs: usize,
    pub worst_ratio: f64,
    pub pass: bool,
}

/// Samples pairs (nu1, nu2) and compares |F(.,nu1) - F(.,nu2)| + |G(.,nu1) -
/// G(.,nu2)| against kappa * rho_V(nu1, nu2).
pub fn check_measure_lipschitz(
    model: &ModelSpec,
    probe: &ProbePlan,
    tolerance: f64,
) -> Result<MeasureLipschitzReport> {
    let v = WeightFunction::new(model.meta.p)?;
    let bins = BinningPolicy::default();
    let mut worst = 0.0f64;
    let mut f1 = vec![0.0; model.d2];
    let mut f2 = vec![0.0; model.d2];
    let mut g1 = vec![0.0; model.d2 * model.d2];
    let mut g2 = vec![0.0; model.d2 * model.d2];
    for i in 0..probe.n_points as u64 {
        let x = probe.point(i, 0, model.d1, probe.cloud_half_width);
        let y = probe.point(i, 1, model.d2, probe.y_max);
        let mu = probe.cloud(i, 2, model.d1);
        let nu1 = probe.cloud(i, 3, model.d2);
        let nu2 = probe.cloud(i, 4, model.d2);
        let rho = weighted_tv_distance(&nu1, &nu2, &v, &bins)?;
        if rho < 1e-12 {
            continue;
        }
        let mm = mu.moments();
        let (n1, n2) = (nu1.moments(), nu2.moments());
        let mu_view = expr::LawView { mean: &mm.mean, var: &mm.var, m2: mm.m2 };
        let ctx1 = EvalCtx {
            x: &x,
            y: &y,
            mu: mu_view,
            nu: expr::LawView { mean: &n1.mean, var: &n1.var, m2: n1.m2 },
        };
        let ctx2 = EvalCtx {
            x: &x,
            y: &y,
            mu: mu_view,
            nu: expr::LawView { mean: &n2.mean, var: &n2.var, m2: n2.m2 },
        };
        model.eval_f(&ctx1, &mut f1)?;
        model.eval_f(&ctx2, &mut f2)?;
        model.eval_g(&ctx1, &mut g1)?;
        model.eval_g(&ctx2, &mut g2)?;
        let df: f64 = f1
            .iter()
            .zip(&f2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let dg: f64 = g1
            .iter()
            .zip(&g2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        worst = worst.max((df + dg) / rho);
    }
    Ok(MeasureLipschitzReport {
        kappa: model.meta.kappa,
        tolerance,
        n_pairs: probe.n_points,
        worst_ratio: worst,
        pass: worst <= model.meta.kappa * (1.0 + tolerance),
    })
}

// ---------------------------------------------------------------------------
// Builtin registry
// ---------------------------------------------------------------------------

fn req(params: &BTreeMap<String, f64>, name: &str) -> Result<f64> {
    params
        .get(name)
        .copied()
        .ok_or_else(|| MmvError::MissingParameter(name.to_string()))
}

fn lit(v: f64) -> String {
    format!("({v})")
}

/// Builds a registered 1-d benchmark model with parameters substituted.
pub fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<ModelSpec> {
    let xw = default_cloud_half_width();
    match name {
        // b = -b0 x + b1 y + b2 mean(nu); sigma = s0; F = -a y + c x + k0 mean(nu); G = g0
        "linear_ou" => {
            let (a, c, k0, g0) = (
                req(params, "a")?,
                req(params, "c")?,
                req(params, "k0")?,
                req(params, "g0")?,
            );
            let (b0, b1, b2, s0) = (
                req(params, "b0")?,
                req(params, "b1")?,
                req(params, "b2")?,
                req(params, "s0")?,
            );
            if a <= 0.0 {
                return Err(MmvError::InvalidModel("linear_ou requires a > 0".into()));
            }
            let meta = linear_fast_meta(a, c, k0, g0, xw)?;
            ModelSpec::from_exprs(
                "linear_ou",
                1,
                1,
                &[format!(
                    "{} * x[0] + {} * y[0] + {} * mean(nu)[0]",
                    lit(-b0),
                    lit(b1),
                    lit(b2)
                )],
                &[vec![lit(s0)]],
                &[format!(
                    "{} * y[0] + {} * x[0] + {} * mean(nu)[0]",
                    lit(-a),
                    lit(c),
                    lit(k0)
                )],
                &[vec![lit(g0)]],
                meta,
            )
        }
        // Slow drift reads ONLY the fast law; slice means depend on x through
        // the fast drift, so the naive and corrected averaged limits differ.
        "nu_only_drift" => {
            let (a, c, k0, g0) = (
                req(params, "a")?,
                req(params, "c")?,
                req(params, "k0")?,
                req(params, "g0")?,
            );
            if a <= 0.0 {
                return Err(MmvError::InvalidModel("nu_only_drift requires a > 0".into()));
            }
            let meta = linear_fast_meta(a, c, k0, g0, xw)?;
            ModelSpec::from_exprs(
                "nu_only_drift",
                1,
                1,
                &["mean(nu)[0]".to_string()],
                &[vec!["1".to_string()]],
                &[format!(
                    "{} * y[0] + {} * x[0] + {} * mean(nu)[0]",
                    lit(-a),
                    lit(c),
                    lit(k0)
                )],
                &[vec![lit(g0)]],
                meta,
            )
        }
        // b = x - x^3 + b1 y; sigma = s0; F = -a y + c x; G = g0
        "doublewell_slow_linear_fast" => {
            let (a, c, g0) = (req(params, "a")?, req(params, "c")?, req(params, "g0")?);
            let (b1, s0) = (req(params, "b1")?, req(params, "s0")?);
            if a <= 0.0 {
                return Err(MmvError::InvalidModel(
                    "doublewell_slow_linear_fast requires a > 0".into(),
                ));
            }
            let mut meta = linear_fast_meta(a, c, 0.0, g0, xw)?;
            meta.alpha = 1.0;
            ModelSpec::from_exprs(
                "doublewell_slow_linear_fast",
                1,
                1,
                &[format!(
                    "x[0] - x[0] * x[0] * x[0] + {} * y[0]",
                    lit(b1)
                )],
                &[vec![lit(s0)]],
                &[format!("{} * y[0] + {} * x[0]", lit(-a), lit(c))],
                &[vec![lit(g0)]],
                meta,
            )
        }
        // Globally bounded smooth nonlinearities in both couplings.
        "smooth_bench" => {
            let (a, c, k0, g0) = (
                req(params, "a")?,
                req(params, "c")?,
                req(params, "k0")?,
                req(params, "g0")?,
            );
            let (b0, b1, b2, s0) = (
                req(params, "b0")?,
                req(params, "b1")?,
                req(params, "b2")?,
                req(params, "s0")?,
            );
            if a <= 0.0 {
                return Err(MmvError::InvalidModel("smooth_bench requires a > 0".into()));
            }
            // tanh is bounded by 1, so the cross term needs no x-range factor.
            let meta = linear_fast_meta(a, c, k0, g0, 1.0)?;
            ModelSpec::from_exprs(
                "smooth_bench",
                1,
                1,
                &[format!(
                    "{} * x[0] + {} * tanh(y[0]) + {} * mean(nu)[0]",
                    lit(-b0),
                    lit(b1),
                    lit(b2)
                )],
                &[vec![lit(s0)]],
                &[format!(
                    "{} * y[0] + {} * tanh(x[0]) + {} * mean(nu)[0]",
                    lit(-a),
                    lit(c),
                    lit(k0)
                )],
                &[vec![lit(g0)]],
                meta,
            )
        }
        other => Err(MmvError::UnknownBuiltin(other.to_string())),
    }
}

/// Dissipativity constants for F = -a y + c x + k0 mean(nu), G = g0, valid
/// on probe sets with |x| <= x_range (Young's inequality on the cross terms):
/// 2<F,y> + |G|^2 <= -a|y|^2 + (2c^2/a) x^2 + (2 k0^2/a) m2(nu) + g0^2.
fn linear_fast_meta(a: f64, c: f64, k0: f64, g0: f64, x_range: f64) -> Result<RegularityMeta> {
    let c2 = 2.0 * k0 * k0 / a;
    if c2 >= a {
        return Err(MmvError::InvalidModel(format!(
            "fast coupling too strong: need k0 < a/sqrt(2), got k0 = {k0}, a = {a}"
        )));
    }
    Ok(RegularityMeta {
        alpha: 2.0,
        beta: 2.0,
        c1: a,
        c2,
        c3: g0 * g0 + 2.0 * c * c / a * x_range * x_range,
        kappa: k0,
        p: 2.0,
        varrho: 1.0,
        k: 0.0,
    })
}

// ---------------------------------------------------------------------------
// JSON configuration block
// ---------------------------------------------------------------------------

/// Model block of a run configuration: either a builtin reference or a full
/// coefficient table. Unknown keys are rejected.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d1: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d2: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<String>>>,
    #[serde(default, rename = "F", skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<String>>,
    #[serde(default, rename = "G", skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<RegularityMeta>,
}

impl ModelConfig {
    pub fn of_builtin(name: &str, params: &[(&str, f64)]) -> ModelConfig {
        ModelConfig {
            builtin: Some(name.to_string()),
            params: Some(
                params
                    .iter()
                    .map(|(k, v)| (k.to_string(), *v))
                    .collect(),
            ),
            ..ModelConfig::default()
        }
    }

    pub fn build(&self) -> Result<ModelSpec> {
        match (&self.builtin, &self.b) {
            (Some(name), None) => {
                if self.d1.is_some() || self.d2.is_some() || self.meta.is_some() {
                    return Err(MmvError::InvalidConfig(
                        "model: builtin form takes only `builtin` and `params`".into(),
                    ));
                }
                let empty = BTreeMap::new();
                builtin(name, self.params.as_ref().unwrap_or(&empty))
            }
            (None, Some(b)) => {
                let missing = |k: &str| MmvError::InvalidConfig(format!("model: missing `{k}`"));
                let d1 = self.d1.ok_or_else(|| missing("d1"))?;
                let d2 = self.d2.ok_or_else(|| missing("d2"))?;
                let sigma = self.sigma.as_ref().ok_or_else(|| missing("sigma"))?;
                let f = self.f.as_ref().ok_or_else(|| missing("F"))?;
                let g = self.g.as_ref().ok_or_else(|| missing("G"))?;
                let meta = self.meta.clone().ok_or_else(|| missing("meta"))?;
                ModelSpec::from_exprs("custom", d1, d2, b, sigma, f, g, meta)
            }
            _ => Err(MmvError::InvalidConfig(
                "model: give either `builtin` or an explicit coefficient table, not both".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use expr::LawView;

    fn linear_ou(a: f64, c: f64, k0: f64, g0: f64) -> ModelSpec {
        let params: BTreeMap<String, f64> = [
            ("a", a),
            ("c", c),
            ("k0", k0),
            ("g0", g0),
            ("b0", 1.0),
            ("b1", 1.0),
            ("b2", 0.0),
            ("s0", 1.0),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        builtin("linear_ou", &params).unwrap()
    }

    fn ctx_for<'a>(
        x: &'a [f64],
        y: &'a [f64],
        mu: &'a crate::measure::Moments,
        nu: &'a crate::measure::Moments,
    ) -> EvalCtx<'a> {
        EvalCtx {
            x,
            y,
            mu: LawView { mean: &mu.mean, var: &mu.var, m2: mu.m2 },
            nu: LawView { mean: &nu.mean, var: &nu.var, m2: nu.m2 },
        }
    }

    #[test]
    fn linear_ou_coefficients_evaluate() {
        let m = linear_ou(2.0, 1.0, 0.5, std::f64::consts::SQRT_2);
        let mu = EmpiricalMeasure::dirac(&[1.0]).moments();
        let nu = EmpiricalMeasure::dirac(&[4.0]).moments();
        let ctx = ctx_for(&[1.5], &[2.0], &mu, &nu);
        let mut out = [0.0];
        m.eval_b(&ctx, &mut out).unwrap();
        assert!((out[0] - (-1.5 + 2.0)).abs() < 1e-12);
        m.eval_f(&ctx, &mut out).unwrap();
        assert!((out[0] - (-4.0 + 1.5 + 2.0)).abs() < 1e-12);
        m.eval_sigma(&ctx, &mut out).unwrap();
        assert_eq!(out[0], 1.0);
    }

    #[test]
    fn dissipativity_passes_on_pure_ou() {
        // F = -2y, G = sqrt(2): LHS = -4|y|^2 + 2 <= -3.9|y|^2 + 2.1.
        let mut m = linear_ou(2.0, 0.0, 0.0, std::f64::consts::SQRT_2);
        m.meta.c1 = 3.9;
        m.meta.c2 = 0.0;
        m.meta.c3 = 2.1;
        let reports = check_dissipativity(&m, &ProbePlan::default(), &[2.0]).unwrap();
        assert!(reports[0].pass, "margin {}", reports[0].worst_margin);
    }

    #[test]
    fn dissipativity_fails_on_anti_dissipative_drift() {
        let meta = RegularityMeta {
            alpha: 1.0,
            beta: 1.0,
            c1: 1.0,
            c2: 0.0,
            c3: 1.0,
            kappa: 0.0,
            p: 2.0,
            varrho: 1.0,
            k: 0.0,
        };
        let m = ModelSpec::from_exprs(
            "anti",
            1,
            1,
            &["0".into()],
            &[vec!["1".into()]],
            &["y[0]".into()],
            &[vec!["1".into()]],
            meta,
        )
        .unwrap();
        let reports = check_dissipativity(&m, &ProbePlan::default(), &[2.0]).unwrap();
        assert!(!reports[0].pass);
        assert!(reports[0].worst_margin > 0.0);
    }

    #[test]
    fn construction_rejects_c1_le_c2() {
        let meta = RegularityMeta {
            alpha: 1.0,
            beta: 1.0,
            c1: 1.0,
            c2: 1.0,
            c3: 0.0,
            kappa: 0.0,
            p: 2.0,
            varrho: 1.0,
            k: 0.0,
        };
        assert!(meta.validate().is_err());
    }

    #[test]
    fn measure_lipschitz_zero_for_nu_free_fast_drift() {
        let m = linear_ou(2.0, 1.0, 0.0, 1.0);
        let rep = check_measure_lipschitz(&m, &ProbePlan::default(), 0.25).unwrap();
        assert_eq!(rep.worst_ratio, 0.0);
        assert!(rep.pass);
    }

    #[test]
    fn measure_lipschitz_bounded_by_coupling() {
        let m = linear_ou(2.0, 1.0, 0.5, 1.0);
        let rep = check_measure_lipschitz(&m, &ProbePlan::default(), 0.25).unwrap();
        assert!(rep.worst_ratio > 0.0);
        assert!(rep.pass, "ratio {} vs kappa {}", rep.worst_ratio, rep.kappa);
    }

    #[test]
    fn sigma_rejects_fast_coordinate() {
        let meta = RegularityMeta {
            alpha: 1.0,
            beta: 1.0,
            c1: 2.0,
            c2: 0.0,
            c3: 1.0,
            kappa: 0.0,
            p: 2.0,
            varrho: 1.0,
            k: 0.0,
        };
        let err = ModelSpec::from_exprs(
            "bad",
            1,
            1,
            &["0".into()],
            &[vec!["y[0]".into()]],
            &["0".into()],
            &[vec!["1".into()]],
            meta,
        )
        .unwrap_err();
        assert!(matches!(err, MmvError::UnknownIdentifier { .. }));
    }

    #[test]
    fn unknown_builtin_and_missing_param() {
        assert!(matches!(
            builtin("nope", &BTreeMap::new()),
            Err(MmvError::UnknownBuiltin(_))
        ));
        assert!(matches!(
            builtin("linear_ou", &BTreeMap::new()),
            Err(MmvError::MissingParameter(_))
        ));
    }

    #[test]
    fn config_roundtrip_builtin() {
        let cfg: ModelConfig = serde_json::from_str(
            r#"{"builtin":"nu_only_drift","params":{"a":2.0,"c":1.0,"k0":0.25,"g0":1.4142135623730951}}"#,
        )
        .unwrap();
        let m = cfg.build().unwrap();
        assert_eq!(m.name, "nu_only_drift");
        assert_eq!((m.d1, m.d2), (1, 1));
    }

    #[test]
    fn config_rejects_unknown_key() {
        let r: std::result::Result<ModelConfig, _> =
            serde_json::from_str(r#"{"builtin":"linear_ou","paramz":{}}"#);
        let msg = r.unwrap_err().to_string();
        assert!(msg.contains("paramz"), "{msg}");
    }
}
