//! Weighted atom clouds and the metric / smoothing / moment operations on
//! them. Every probability law in the toolkit is carried by an
//! [`EmpiricalMeasure`].

use crate::error::{MmvError, Result};
use crate::rng::{self, StreamTag};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Weighted atom cloud representing a square-integrable probability measure
/// on `R^dim`. Atoms are stored flat (`atoms.len() == weights.len() * dim`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    dim: usize,
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

/// Cached first and second moments of a weighted cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Second moment: sum_i w_i |x_i|^2.
    pub m2: f64,
}

impl Moments {
    /// Moments of a flat coordinate array with optional weights
    /// (uniform weights when `weights` is `None`).
    pub fn from_flat(dim: usize, coords: &[f64], weights: Option<&[f64]>) -> Moments {
        let n = coords.len() / dim;
        let mut mean = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        match weights {
            Some(w) => {
                for i in 0..n {
                    let wi = w[i];
                    for k in 0..dim {
                        let c = coords[i * dim + k];
                        mean[k] += wi * c;
                        sq[k] += wi * c * c;
                    }
                }
            }
            None => {
                let wi = 1.0 / n as f64;
                for i in 0..n {
                    for k in 0..dim {
                        let c = coords[i * dim + k];
                        mean[k] += wi * c;
                        sq[k] += wi * c * c;
                    }
                }
            }
        }
        let mut m2 = 0.0;
        let mut var = vec![0.0; dim];
        for k in 0..dim {
            m2 += sq[k];
            var[k] = (sq[k] - mean[k] * mean[k]).max(0.0);
        }
        Moments { mean, var, m2 }
    }
}

impl EmpiricalMeasure {
    /// Builds a measure from a flat coordinate array. Weights must be
    /// non-negative and sum to one within `1e-9`; they are renormalized
    /// exactly afterwards.
    pub fn new(dim: usize, atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(MmvError::InvalidMeasure("dim must be positive".into()));
        }
        if weights.is_empty() {
            return Err(MmvError::EmptyMeasure);
        }
        if atoms.len() != weights.len() * dim {
            return Err(MmvError::InvalidMeasure(format!(
                "atom storage has {} coordinates, expected {} * {}",
                atoms.len(),
                weights.len(),
                dim
            )));
        }
        if atoms.iter().any(|c| !c.is_finite()) {
            return Err(MmvError::InvalidMeasure("non-finite atom coordinate".into()));
        }
        let mut sum = 0.0;
        for &w in &weights {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(MmvError::InvalidMeasure(format!("invalid weight {w}")));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MmvError::InvalidMeasure(format!(
                "weights sum to {sum}, expected 1 within 1e-9"
            )));
        }
        let mut m = EmpiricalMeasure { dim, atoms, weights };
        m.renormalize(sum);
        Ok(m)
    }

    /// Signed-weight variant used only by the linear-functional-derivative
    /// diagnostic; weights must still sum to one but may be negative.
    pub(crate) fn signed_unchecked(dim: usize, atoms: Vec<f64>, weights: Vec<f64>) -> Self {
        EmpiricalMeasure { dim, atoms, weights }
    }

    fn renormalize(&mut self, sum: f64) {
        if sum != 1.0 {
            let inv = 1.0 / sum;
            for w in &mut self.weights {
                *w *= inv;
            }
        }
    }

    /// Point mass at `point`.
    pub fn dirac(point: &[f64]) -> Self {
        EmpiricalMeasure {
            dim: point.len(),
            atoms: point.to_vec(),
            weights: vec![1.0],
        }
    }

    /// Equal-weight cloud from 1-d points.
    pub fn from_points_1d(points: &[f64]) -> Self {
        let n = points.len();
        EmpiricalMeasure {
            dim: 1,
            atoms: points.to_vec(),
            weights: vec![1.0 / n as f64; n],
        }
    }

    /// Equal-weight cloud from a flat coordinate array.
    pub fn equal_weights(dim: usize, atoms: Vec<f64>) -> Result<Self> {
        let n = atoms.len() / dim;
        let w = vec![1.0 / n as f64; n];
        EmpiricalMeasure::new(dim, atoms, w)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms_flat(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn moments(&self) -> Moments {
        Moments::from_flat(self.dim, &self.atoms, Some(&self.weights))
    }

    pub fn mean(&self) -> Vec<f64> {
        self.moments().mean
    }

    /// True when all weights are equal (within 1e-12 of 1/n).
    pub fn equally_weighted(&self) -> bool {
        let w0 = 1.0 / self.len() as f64;
        self.weights.iter().all(|&w| (w - w0).abs() <= 1e-12)
    }

    /// CSV with header `w,x1,...,xd`, weights column first.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        write!(out, "w")?;
        for k in 1..=self.dim {
            write!(out, ",x{k}")?;
        }
        writeln!(out)?;
        for i in 0..self.len() {
            write!(out, "{}", fmt_f64(self.weights[i]))?;
            for c in self.atom(i) {
                write!(out, ",{}", fmt_f64(*c))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Reads the CSV format written by [`write_csv`](Self::write_csv).
    /// Renormalizes when the weight sum is within 1e-9 of one, rejects
    /// otherwise.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| MmvError::InvalidMeasure("empty CSV".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"w") || cols.len() < 2 {
            return Err(MmvError::InvalidMeasure(format!(
                "bad CSV header `{header}`, expected `w,x1,...,xd`"
            )));
        }
        let dim = cols.len() - 1;
        let mut atoms = Vec::new();
        let mut weights = Vec::new();
        for (ln, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != dim + 1 {
                return Err(MmvError::InvalidMeasure(format!(
                    "row {} has {} fields, expected {}",
                    ln + 2,
                    fields.len(),
                    dim + 1
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| MmvError::InvalidMeasure(format!("bad number `{s}`")))
            };
            weights.push(parse(fields[0])?);
            for f in &fields[1..] {
                atoms.push(parse(f)?);
            }
        }
        EmpiricalMeasure::new(dim, atoms, weights)
    }
}

fn fmt_f64(v: f64) -> String {
    // Round-trippable without being noisy for exact values.
    let s = format!("{v}");
    if s.parse::<f64>() == Ok(v) {
        s
    } else {
        format!("{v:.17e}")
    }
}

/// Second moment `sum_i w_i |x_i|^2`.
pub fn second_moment(mu: &EmpiricalMeasure) -> f64 {
    mu.moments().m2
}

/// The weight `V(y) = 1 + |y|^p` entering the weighted total variation
/// distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightFunction {
    pub p: f64,
}

impl Default for WeightFunction {
    fn default() -> Self {
        WeightFunction { p: 2.0 }
    }
}

impl WeightFunction {
    pub fn new(p: f64) -> Result<Self> {
        if !(p >= 1.0) {
            return Err(MmvError::Precondition(format!("weight exponent p = {p} must be >= 1")));
        }
        Ok(WeightFunction { p })
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        let norm = y.iter().map(|c| c * c).sum::<f64>().sqrt();
        1.0 + norm.powf(self.p)
    }
}

// ---------------------------------------------------------------------------
// Wasserstein-2
// ---------------------------------------------------------------------------

/// Exact atoms beyond which the multi-dimensional distance falls back to
/// weight-proportional subsampling.
pub const W2_EXACT_LIMIT: usize = 512;

/// W2 distance between two empirical measures. Exact quantile coupling in
/// dimension one; exact assignment for equally-weighted clouds of matching
/// size up to [`W2_EXACT_LIMIT`] atoms in higher dimension, subsampled
/// otherwise (see [`w2_distance_detailed`]).
pub fn w2_distance(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure) -> Result<f64> {
    w2_distance_detailed(mu1, mu2).map(|(d, _)| d)
}

/// Like [`w2_distance`] but also reports whether the value is exact
/// (`false` means the subsampling fallback was used).
pub fn w2_distance_detailed(
    mu1: &EmpiricalMeasure,
    mu2: &EmpiricalMeasure,
) -> Result<(f64, bool)> {
    if mu1.dim() != mu2.dim() {
        return Err(MmvError::DimensionMismatch {
            expected: mu1.dim(),
            got: mu2.dim(),
        });
    }
    if mu1.is_empty() || mu2.is_empty() {
        return Err(MmvError::EmptyMeasure);
    }
    if mu1.dim() == 1 {
        return Ok((w2_1d(mu1, mu2), true));
    }
    let exact_ok = mu1.len() <= W2_EXACT_LIMIT
        && mu2.len() <= W2_EXACT_LIMIT
        && mu1.len() == mu2.len()
        && mu1.equally_weighted()
        && mu2.equally_weighted();
    if exact_ok {
        Ok((w2_assignment(mu1, mu2), true))
    } else {
        let a = subsample(mu1, W2_EXACT_LIMIT, 0);
        let b = subsample(mu2, W2_EXACT_LIMIT, 1);
        Ok((w2_assignment(&a, &b), false))
    }
}

/// Exact 1-d quantile coupling with weight splitting.
fn w2_1d(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure) -> f64 {
    let sorted = |m: &EmpiricalMeasure| -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = (0..m.len()).map(|i| (m.atom(i)[0], m.weights()[i])).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    };
    let a = sorted(mu1);
    let b = sorted(mu2);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut cost = 0.0;
    loop {
        let w = ra.min(rb);
        let d = a[i].0 - b[j].0;
        cost += w * d * d;
        ra -= w;
        rb -= w;
        if ra <= 1e-15 {
            i += 1;
            if i >= a.len() {
                break;
            }
            ra = a[i].1;
        }
        if rb <= 1e-15 {
            j += 1;
            if j >= b.len() {
                break;
            }
            rb = b[j].1;
        }
    }
    cost.max(0.0).sqrt()
}

/// Exact assignment (equal weights, equal counts): min over permutations of
/// the mean squared pairing cost, via shortest augmenting paths.
fn w2_assignment(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure) -> f64 {
    let n = mu1.len();
    let cost = |i: usize, j: usize| -> f64 {
        mu1.atom(i)
            .iter()
            .zip(mu2.atom(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    let total = hungarian(n, &cost);
    (total / n as f64).max(0.0).sqrt()
}

/// Jonker-Volgenant style shortest augmenting path assignment; returns the
/// optimal total cost for the dense n x n problem.
fn hungarian(n: usize, cost: &dyn Fn(usize, usize) -> f64) -> f64 {
    // Row/column potentials with 1-based virtual row 0.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut matched = vec![0usize; n + 1]; // matched[j] = row assigned to column j (1-based)
    for i in 1..=n {
        matched[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut total = 0.0;
    for j in 1..=n {
        total += cost(matched[j] - 1, j - 1);
    }
    total
}

/// Weight-proportional systematic subsampling to at most `target` atoms,
/// deterministic for a fixed `salt`.
fn subsample(m: &EmpiricalMeasure, target: usize, salt: u64) -> EmpiricalMeasure {
    if m.len() <= target && m.equally_weighted() {
        return m.clone();
    }
    let offset = rng::uniform(salt, StreamTag::Subsample, 0, 0, 0) / target as f64;
    let mut atoms = Vec::with_capacity(target * m.dim());
    let mut cum = 0.0;
    let mut i = 0usize;
    for k in 0..target {
        let pos = offset + k as f64 / target as f64;
        while i + 1 < m.len() && cum + m.weights()[i] < pos {
            cum += m.weights()[i];
            i += 1;
        }
        atoms.extend_from_slice(m.atom(i));
    }
    EmpiricalMeasure {
        dim: m.dim(),
        atoms,
        weights: vec![1.0 / target as f64; target],
    }
}

// ---------------------------------------------------------------------------
// Weighted total variation
// ---------------------------------------------------------------------------

/// Deterministic binning policy for the weighted TV estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinningPolicy {
    /// Cells per axis; `None` resolves to `ceil(2 * atoms^(1/3))` clamped to
    /// `[16, 256]`.
    pub cells_per_axis: Option<usize>,
    /// Padding of the union support, as a fraction of its extent.
    pub pad_frac: f64,
}

impl Default for BinningPolicy {
    fn default() -> Self {
        BinningPolicy {
            cells_per_axis: None,
            pad_frac: 0.1,
        }
    }
}

impl BinningPolicy {
    fn resolve_cells(&self, total_atoms: usize) -> usize {
        match self.cells_per_axis {
            Some(c) => c.max(1),
            None => {
                let c = (2.0 * (total_atoms as f64).cbrt()).ceil() as usize;
                c.clamp(16, 256)
            }
        }
    }
}

/// Weighted total variation distance `rho_V` between two measures on the
/// same space, estimated on a shared deterministic grid:
/// `sum_cells (1 + V(center)) * |nu1(cell) - nu2(cell)|`.
pub fn weighted_tv_distance(
    nu1: &EmpiricalMeasure,
    nu2: &EmpiricalMeasure,
    v: &WeightFunction,
    bins: &BinningPolicy,
) -> Result<f64> {
    if nu1.dim() != nu2.dim() {
        return Err(MmvError::DimensionMismatch {
            expected: nu1.dim(),
            got: nu2.dim(),
        });
    }
    if nu1.is_empty() || nu2.is_empty() {
        return Err(MmvError::EmptyMeasure);
    }
    let d = nu1.dim();
    let cells = bins.resolve_cells(nu1.len() + nu2.len());
    if (cells as f64).powi(d as i32) > 1e7 {
        return Err(MmvError::DegenerateBinning(format!(
            "{cells} cells per axis in dimension {d} is too large"
        )));
    }
    // Union support, padded.
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for m in [nu1, nu2] {
        for i in 0..m.len() {
            for (k, &c) in m.atom(i).iter().enumerate() {
                lo[k] = lo[k].min(c);
                hi[k] = hi[k].max(c);
            }
        }
    }
    for k in 0..d {
        let span = hi[k] - lo[k];
        let pad = if span > 0.0 {
            bins.pad_frac * span
        } else {
            // Point support along this axis: give it a token width.
            bins.pad_frac.max(1e-9)
        };
        lo[k] -= pad;
        hi[k] += pad;
        if !(hi[k] > lo[k]) {
            return Err(MmvError::DegenerateBinning(format!(
                "zero-width cells on axis {k}"
            )));
        }
    }
    let total_cells = cells.pow(d as u32);
    let mut m1 = vec![0.0f64; total_cells];
    let mut m2 = vec![0.0f64; total_cells];
    let index_of = |atom: &[f64]| -> usize {
        let mut idx = 0usize;
        for k in 0..d {
            let f = ((atom[k] - lo[k]) / (hi[k] - lo[k]) * cells as f64) as usize;
            idx = idx * cells + f.min(cells - 1);
        }
        idx
    };
    for i in 0..nu1.len() {
        m1[index_of(nu1.atom(i))] += nu1.weights()[i];
    }
    for i in 0..nu2.len() {
        m2[index_of(nu2.atom(i))] += nu2.weights()[i];
    }
    let mut total = 0.0;
    let mut center = vec![0.0f64; d];
    for idx in 0..total_cells {
        let diff = (m1[idx] - m2[idx]).abs();
        if diff == 0.0 {
            continue;
        }
        let mut rem = idx;
        for k in (0..d).rev() {
            let f = rem % cells;
            rem /= cells;
            center[k] = lo[k] + (f as f64 + 0.5) / cells as f64 * (hi[k] - lo[k]);
        }
        total += (1.0 + v.eval(&center)) * diff;
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Mollification, mixtures, derivatives
// ---------------------------------------------------------------------------

/// Smooth radial kernel for sampled mollification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    Gauss { sd: f64 },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Gauss { sd: 1.0 }
    }
}

/// Sampled representation of `mu * rho^n`: each atom perturbed by one
/// independent kernel draw at bandwidth `1/n`, weights preserved.
/// Deterministic for a fixed `seed`.
pub fn mollify_measure(
    mu: &EmpiricalMeasure,
    n: u32,
    kernel: KernelSpec,
    seed: u64,
) -> Result<EmpiricalMeasure> {
    if n == 0 {
        return Err(MmvError::Precondition("mollification index n must be >= 1".into()));
    }
    let KernelSpec::Gauss { sd } = kernel;
    let bw = sd / n as f64;
    let d = mu.dim();
    let mut atoms = mu.atoms_flat().to_vec();
    for i in 0..mu.len() {
        for k in 0..d {
            atoms[i * d + k] += bw * rng::normal(seed, StreamTag::Mollify, i as u64, n as u64, k as u64);
        }
    }
    Ok(EmpiricalMeasure {
        dim: d,
        atoms,
        weights: mu.weights().to_vec(),
    })
}

/// Weighted mixture of a family of measures over a common space
/// (atom concatenation with weight scaling).
pub fn mixture(family: &[(&EmpiricalMeasure, f64)]) -> Result<EmpiricalMeasure> {
    if family.is_empty() {
        return Err(MmvError::EmptyMeasure);
    }
    let d = family[0].0.dim();
    let wsum: f64 = family.iter().map(|(_, w)| w).sum();
    if (wsum - 1.0).abs() > 1e-9 {
        return Err(MmvError::InvalidMeasure(format!(
            "mixture weights sum to {wsum}, expected 1"
        )));
    }
    let total: usize = family.iter().map(|(m, _)| m.len()).sum();
    let mut atoms = Vec::with_capacity(total * d);
    let mut weights = Vec::with_capacity(total);
    for (m, w) in family {
        if m.dim() != d {
            return Err(MmvError::DimensionMismatch {
                expected: d,
                got: m.dim(),
            });
        }
        let scale = w / wsum;
        atoms.extend_from_slice(m.atoms_flat());
        weights.extend(m.weights().iter().map(|wi| wi * scale));
    }
    Ok(EmpiricalMeasure { dim: d, atoms, weights })
}

/// Central-difference estimate of the linear functional derivative of `f`
/// along the segment from `mu1` towards `mu2`:
/// `[f(mu1 + theta*(mu2-mu1)) - f(mu1 - theta*(mu2-mu1))] / (2 theta)`.
///
/// The backward endpoint is a signed combination; `f` must be evaluable on
/// signed atom clouds (all built-in moment functionals are).
pub fn lfd_estimate<F: Fn(&EmpiricalMeasure) -> f64>(
    f: F,
    mu1: &EmpiricalMeasure,
    mu2: &EmpiricalMeasure,
    theta: f64,
) -> Result<f64> {
    if mu1.dim() != mu2.dim() {
        return Err(MmvError::DimensionMismatch {
            expected: mu1.dim(),
            got: mu2.dim(),
        });
    }
    if !(theta > 0.0 && theta <= 0.5) {
        return Err(MmvError::Precondition(format!("theta = {theta} not in (0, 1/2]")));
    }
    let combo = |c1: f64, c2: f64| -> EmpiricalMeasure {
        let mut atoms = mu1.atoms_flat().to_vec();
        atoms.extend_from_slice(mu2.atoms_flat());
        let mut weights: Vec<f64> = mu1.weights().iter().map(|w| w * c1).collect();
        weights.extend(mu2.weights().iter().map(|w| w * c2));
        EmpiricalMeasure::signed_unchecked(mu1.dim(), atoms, weights)
    };
    let fwd = f(&combo(1.0 - theta, theta));
    let bwd = f(&combo(1.0 + theta, -theta));
    Ok((fwd - bwd) / (2.0 * theta))
}

/// Deterministic compression of a 1-d measure to at most `target` atoms by
/// equal-weight quantile bins (bin atom = weighted mean of its members).
pub fn compress_1d(m: &EmpiricalMeasure, target: usize) -> EmpiricalMeasure {
    assert_eq!(m.dim(), 1);
    if m.len() <= target {
        return m.clone();
    }
    let mut v: Vec<(f64, f64)> = (0..m.len()).map(|i| (m.atom(i)[0], m.weights()[i])).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let per = 1.0 / target as f64;
    let mut atoms = Vec::with_capacity(target);
    let mut weights = Vec::with_capacity(target);
    let mut acc_w = 0.0;
    let mut acc_wx = 0.0;
    let mut budget = per;
    let mut iter = v.into_iter();
    let mut cur = iter.next();
    while let Some((x, mut w)) = cur {
        if w >= budget {
            acc_w += budget;
            acc_wx += budget * x;
            w -= budget;
            atoms.push(acc_wx / acc_w);
            weights.push(acc_w);
            acc_w = 0.0;
            acc_wx = 0.0;
            budget = per;
            cur = if w > 1e-15 { Some((x, w)) } else { iter.next() };
        } else {
            acc_w += w;
            acc_wx += w * x;
            budget -= w;
            cur = iter.next();
        }
    }
    if acc_w > 1e-12 {
        atoms.push(acc_wx / acc_w);
        weights.push(acc_w);
    }
    let sum: f64 = weights.iter().sum();
    let mut out = EmpiricalMeasure {
        dim: 1,
        atoms,
        weights,
    };
    out.renormalize(sum);
    out
}

/// General compression: quantile bins in 1-d, systematic subsampling above.
pub fn compress(m: &EmpiricalMeasure, target: usize) -> EmpiricalMeasure {
    if m.len() <= target {
        return m.clone();
    }
    if m.dim() == 1 {
        compress_1d(m, target)
    } else {
        subsample(m, target, 0x5eed)
    }
}
