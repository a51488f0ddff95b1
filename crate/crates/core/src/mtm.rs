//! Monotonically transformed modular (MTM) functions `v(S) = f(w0 + sum_{i in S} w_i)`.
//!
//! `f` is a nondecreasing piecewise-linear map given by its knots. Fitting
//! alternates between an isotonic (pool-adjacent-violators) fit of `f` for
//! fixed weights and gradient steps on the weights for fixed `f`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::{DenseTable, UtilityFn};
use crate::selection::{brute_force_optimal, top_k_select};
use crate::subsets::{enumerate_subsets, RngSeed, Subset, SubsetSampler};
use crate::values::exact_shapley;

/// Nondecreasing piecewise-linear function through sorted knots.
///
/// Outside the knot range the boundary segments are extended. A single knot
/// is a constant function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct MonotoneTransform {
    knots: Vec<(f64, f64)>,
}

impl TryFrom<Vec<[f64; 2]>> for MonotoneTransform {
    type Error = Error;
    fn try_from(k: Vec<[f64; 2]>) -> Result<Self> {
        MonotoneTransform::new(k.into_iter().map(|[x, y]| (x, y)).collect())
    }
}

impl From<MonotoneTransform> for Vec<[f64; 2]> {
    fn from(f: MonotoneTransform) -> Self {
        f.knots.into_iter().map(|(x, y)| [x, y]).collect()
    }
}

impl MonotoneTransform {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::domain("a transform needs at least one knot"));
        }
        if knots.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::domain("knots must be finite"));
        }
        for pair in knots.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::domain("knot x positions must be strictly increasing"));
            }
            if pair[1].1 < pair[0].1 {
                return Err(Error::domain("knot values must be nondecreasing"));
            }
        }
        Ok(MonotoneTransform { knots })
    }

    pub fn identity() -> Self {
        MonotoneTransform {
            knots: vec![(0.0, 0.0), (1.0, 1.0)],
        }
    }

    pub fn constant(c: f64) -> Self {
        MonotoneTransform {
            knots: vec![(0.0, c)],
        }
    }

    /// Steep ramp from 0 to 1 on `[threshold - width, threshold]`, flat elsewhere
    /// within `span` of the threshold and beyond.
    pub fn step(threshold: f64, width: f64, span: f64) -> Result<Self> {
        if !(width > 0.0) || !(span > width) {
            return Err(Error::domain("step needs 0 < width < span"));
        }
        MonotoneTransform::new(vec![
            (threshold - span, 0.0),
            (threshold - width, 0.0),
            (threshold, 1.0),
            (threshold + span, 1.0),
        ])
    }

    /// Random strictly increasing transform on `[lo, hi]` with values in `[0, 1]`.
    pub fn random_increasing<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64, knots: usize) -> Self {
        let knots = knots.max(2);
        let (lo, hi) = (lo - 1.0, hi + 1.0);
        let mut xs: Vec<f64> = (0..knots - 2).map(|_| rng.random_range(lo..hi)).collect();
        xs.push(lo);
        xs.push(hi);
        xs.sort_by(|a, b| a.total_cmp(b));
        xs.dedup();
        let steps: Vec<f64> = (1..xs.len()).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = steps.iter().sum();
        let mut y = 0.0;
        let mut out = vec![(xs[0], 0.0)];
        for (x, s) in xs[1..].iter().zip(steps) {
            y += s / total;
            out.push((*x, y));
        }
        MonotoneTransform { knots: out }
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    fn slope(&self, seg: usize) -> f64 {
        let (x0, y0) = self.knots[seg];
        let (x1, y1) = self.knots[seg + 1];
        (y1 - y0) / (x1 - x0)
    }

    /// Index of the segment used at `t`, with the right segment at breakpoints.
    #[inline]
    fn segment(&self, t: f64) -> usize {
        let m = self.knots.len();
        let j = self.knots.partition_point(|(x, _)| *x <= t);
        j.saturating_sub(1).min(m - 2)
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        if self.knots.len() == 1 {
            return self.knots[0].1;
        }
        let seg = self.segment(t);
        let (x0, y0) = self.knots[seg];
        y0 + self.slope(seg) * (t - x0)
    }

    /// Right-hand derivative at `t`.
    #[inline]
    pub fn right_slope(&self, t: f64) -> f64 {
        if self.knots.len() == 1 {
            return 0.0;
        }
        self.slope(self.segment(t))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtmModel {
    pub w0: f64,
    pub w: Vec<f64>,
    pub knots: MonotoneTransform,
}

impl MtmModel {
    pub fn new(w0: f64, w: Vec<f64>, f: MonotoneTransform) -> Result<Self> {
        if !w0.is_finite() || w.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("MTM weights must be finite"));
        }
        Ok(MtmModel { w0, w, knots: f })
    }

    /// Random MTM game: uniform weights in `[-1, 1)` and a random strictly increasing transform.
    pub fn random(n: usize, seed: RngSeed) -> Self {
        let mut rng = seed.stream(0);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w0 = rng.random_range(-0.5..0.5);
        let lo = w0 + w.iter().filter(|x| **x < 0.0).sum::<f64>();
        let hi = w0 + w.iter().filter(|x| **x > 0.0).sum::<f64>();
        let f = MonotoneTransform::random_increasing(&mut rng, lo, hi, 8);
        MtmModel { w0, w, knots: f }
    }

    pub fn n(&self) -> usize {
        self.w.len()
    }

    pub fn transform(&self) -> &MonotoneTransform {
        &self.knots
    }

    #[inline]
    pub fn score(&self, s: &Subset) -> f64 {
        self.w0 + s.iter().map(|i| self.w[i]).sum::<f64>()
    }

    #[inline]
    pub fn value(&self, s: &Subset) -> f64 {
        self.knots.eval(self.score(s))
    }
}

pub fn mtm_eval(m: &MtmModel, s: &Subset) -> Result<f64> {
    if s.n() != m.n() {
        return Err(Error::domain("subset and model sizes differ"));
    }
    Ok(m.value(s))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilitySample {
    pub subset: Subset,
    pub utility: f64,
    pub split: Split,
}

/// Observed `(S, v(S))` pairs tagged train or validation.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct UtilitySampleSet {
    pub n: usize,
    pub samples: Vec<UtilitySample>,
}

impl UtilitySampleSet {
    pub fn new(n: usize) -> Self {
        UtilitySampleSet {
            n,
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, subset: Subset, utility: f64, split: Split) -> Result<()> {
        if subset.n() != self.n {
            return Err(Error::domain("sample subset has the wrong player count"));
        }
        if !utility.is_finite() {
            return Err(Error::domain("sample utility must be finite"));
        }
        self.samples.push(UtilitySample {
            subset,
            utility,
            split,
        });
        Ok(())
    }

    /// Every coalition once, all tagged train.
    pub fn complete_enumeration(v: &UtilityFn) -> Result<Self> {
        let mut out = UtilitySampleSet::new(v.n());
        for s in enumerate_subsets(v.n(), None)? {
            out.push(s, v.value(&s), Split::Train)?;
        }
        Ok(out)
    }

    /// `count` uniform draws; the first `round(train_fraction * count)` are train.
    pub fn sample_uniform(v: &UtilityFn, count: usize, train_fraction: f64, seed: RngSeed) -> Result<Self> {
        let mut sampler = SubsetSampler::new(v.n(), seed)?;
        let cut = split_point(count, train_fraction)?;
        let mut out = UtilitySampleSet::new(v.n());
        for j in 0..count {
            let s = sampler.uniform();
            let split = if j < cut { Split::Train } else { Split::Validation };
            out.push(s, v.value(&s), split)?;
        }
        Ok(out)
    }

    /// Wraps existing observations (for instance prefixes collected during
    /// permutation sampling), shuffled by `seed` and split train/validation.
    pub fn from_pairs(
        n: usize,
        mut pairs: Vec<(Subset, f64)>,
        train_fraction: f64,
        seed: RngSeed,
    ) -> Result<Self> {
        let cut = split_point(pairs.len(), train_fraction)?;
        pairs.shuffle(&mut seed.stream(0));
        let mut out = UtilitySampleSet::new(n);
        for (j, (s, u)) in pairs.into_iter().enumerate() {
            out.push(s, u, if j < cut { Split::Train } else { Split::Validation })?;
        }
        Ok(out)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &UtilitySample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// The split residuals are reported on: validation when present, else train.
    pub fn evaluation_split(&self) -> Split {
        if self.count(Split::Validation) > 0 {
            Split::Validation
        } else {
            Split::Train
        }
    }
}

fn split_point(count: usize, train_fraction: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::domain("train fraction must be in [0, 1]"));
    }
    Ok((train_fraction * count as f64).round() as usize)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: MtmModel,
    /// Mean squared error on the evaluation split.
    pub residual: f64,
    /// `residual / Var(utility)` on the evaluation split; `None` when the variance is zero.
    pub normalized_residual: Option<f64>,
    pub degenerate: bool,
    pub evaluation_split: Split,
    pub train_loss: f64,
    /// Training loss after initialisation and after every iteration.
    pub loss_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Whether the ridge fallback was needed for the least-squares solve.
    pub ridge: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MtmFitConfig {
    pub max_iters: usize,
    /// Stop once the relative train-loss improvement of an iteration falls below this.
    pub tol: f64,
    pub knot_count: usize,
    /// Gradient steps on the weights per iteration.
    pub gradient_steps: usize,
}

impl Default for MtmFitConfig {
    fn default() -> Self {
        MtmFitConfig {
            max_iters: 500,
            tol: 1e-8,
            knot_count: 32,
            gradient_steps: 20,
        }
    }
}

pub const RIDGE_LAMBDA: f64 = 1e-8;

/// Training rows with duplicate coalitions averaged; `weight` is the multiplicity.
struct Rows {
    members: Vec<Vec<usize>>,
    y: Vec<f64>,
    weight: Vec<f64>,
    total_weight: f64,
}

impl Rows {
    fn from_split(samples: &UtilitySampleSet, split: Split) -> Rows {
        let mut acc: HashMap<Subset, (f64, f64)> = HashMap::new();
        for s in samples.split(split) {
            let e = acc.entry(s.subset).or_insert((0.0, 0.0));
            e.0 += s.utility;
            e.1 += 1.0;
        }
        let mut keyed: Vec<(Subset, (f64, f64))> = acc.into_iter().collect();
        keyed.sort_by_key(|a| a.0);
        let mut rows = Rows {
            members: Vec::with_capacity(keyed.len()),
            y: Vec::with_capacity(keyed.len()),
            weight: Vec::with_capacity(keyed.len()),
            total_weight: 0.0,
        };
        for (s, (sum, count)) in keyed {
            rows.members.push(s.to_indices());
            rows.y.push(sum / count);
            rows.weight.push(count);
            rows.total_weight += count;
        }
        rows
    }

    fn len(&self) -> usize {
        self.y.len()
    }

    fn scores(&self, w0: f64, w: &[f64]) -> Vec<f64> {
        self.members
            .iter()
            .map(|m| w0 + m.iter().map(|&i| w[i]).sum::<f64>())
            .collect()
    }

    fn loss(&self, w0: f64, w: &[f64], f: &MonotoneTransform) -> f64 {
        let mut total = 0.0;
        for (j, m) in self.members.iter().enumerate() {
            let t = w0 + m.iter().map(|&i| w[i]).sum::<f64>();
            let r = f.eval(t) - self.y[j];
            total += self.weight[j] * r * r;
        }
        total / self.total_weight
    }
}

fn solve_normal_equations(rows: &Rows, n: usize) -> (f64, Vec<f64>, bool) {
    let dim = n + 1;
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    let mut b = DVector::<f64>::zeros(dim);
    let mut idx = Vec::with_capacity(dim);
    for (j, m) in rows.members.iter().enumerate() {
        idx.clear();
        idx.push(0);
        idx.extend(m.iter().map(|&i| i + 1));
        let (wt, y) = (rows.weight[j], rows.y[j]);
        for &p in &idx {
            b[p] += wt * y;
            for &q in &idx {
                a[(p, q)] += wt;
            }
        }
    }
    let svd = a.clone().svd(false, false);
    let max_sv = svd.singular_values.max();
    let rank = svd.rank(1e-10 * max_sv.max(f64::MIN_POSITIVE));
    let mut ridge = rank < dim;
    let solve = |m: DMatrix<f64>| m.cholesky().map(|c| c.solve(&b));
    let mut sol = if ridge { None } else { solve(a.clone()) };
    if sol.is_none() {
        ridge = true;
        let mut reg = a;
        for d in 0..dim {
            reg[(d, d)] += RIDGE_LAMBDA;
        }
        sol = solve(reg);
    }
    // The regularised matrix is positive definite, so the solve cannot fail.
    let sol = sol.unwrap_or_else(|| DVector::zeros(dim));
    (sol[0], sol.iter().skip(1).copied().collect(), ridge)
}

fn check_fit_preconditions(samples: &UtilitySampleSet, rows: &Rows) -> Result<()> {
    if rows.len() == 0 {
        return Err(Error::domain("training split is empty"));
    }
    if rows.len() < samples.n + 2 {
        return Err(Error::domain(format!(
            "need at least {} distinct training subsets, got {}",
            samples.n + 2,
            rows.len()
        )));
    }
    Ok(())
}

/// MSE and utility variance (population) over the given samples.
fn residual_stats<'a>(m: &MtmModel, samples: impl Iterator<Item = &'a UtilitySample>) -> (f64, f64, usize) {
    let mut count = 0usize;
    let (mut se, mut sum, mut sumsq) = (0.0, 0.0, 0.0);
    let data: Vec<&UtilitySample> = samples.collect();
    for s in &data {
        let r = m.value(&s.subset) - s.utility;
        se += r * r;
        sum += s.utility;
        count += 1;
    }
    if count == 0 {
        return (f64::NAN, 0.0, 0);
    }
    let mean = sum / count as f64;
    for s in &data {
        sumsq += (s.utility - mean).powi(2);
    }
    (se / count as f64, sumsq / count as f64, count)
}

fn variance_is_degenerate(var: f64, count: usize) -> bool {
    count < 2 || !(var > 1e-300)
}

fn report(
    samples: &UtilitySampleSet,
    model: MtmModel,
    train_loss: f64,
    loss_history: Vec<f64>,
    iterations: usize,
    converged: bool,
    ridge: bool,
) -> FitReport {
    let split = samples.evaluation_split();
    let (mse, var, count) = residual_stats(&model, samples.split(split));
    let degenerate = variance_is_degenerate(var, count);
    FitReport {
        model,
        residual: mse,
        normalized_residual: if degenerate { None } else { Some(mse / var) },
        degenerate,
        evaluation_split: split,
        train_loss,
        loss_history,
        iterations,
        converged,
        ridge,
    }
}

/// Least-squares modular fit (`f` = identity) on the train split.
pub fn fit_linear_ls(samples: &UtilitySampleSet) -> Result<FitReport> {
    let rows = Rows::from_split(samples, Split::Train);
    check_fit_preconditions(samples, &rows)?;
    let (w0, w, ridge) = solve_normal_equations(&rows, samples.n);
    let f = MonotoneTransform::identity();
    let train_loss = rows.loss(w0, &w, &f);
    let model = MtmModel::new(w0, w, f)?;
    Ok(report(
        samples,
        model,
        train_loss,
        vec![train_loss],
        0,
        true,
        ridge,
    ))
}

#[derive(Clone, Copy, Debug)]
struct Block {
    weight: f64,
    sum_y: f64,
    sum_x: f64,
}

impl Block {
    fn mean(&self) -> f64 {
        self.sum_y / self.weight
    }

    fn merge(&self, other: &Block) -> Block {
        Block {
            weight: self.weight + other.weight,
            sum_y: self.sum_y + other.sum_y,
            sum_x: self.sum_x + other.sum_x,
        }
    }

    /// Increase in weighted squared error from pooling two blocks.
    fn merge_cost(&self, other: &Block) -> f64 {
        let d = self.mean() - other.mean();
        self.weight * other.weight / (self.weight + other.weight) * d * d
    }
}

/// Pool-adjacent-violators on points sorted by `x` with distinct `x`.
fn pava(points: &[(f64, f64, f64)]) -> Vec<Block> {
    let mut blocks: Vec<Block> = Vec::with_capacity(points.len());
    for &(x, y, w) in points {
        let mut cur = Block {
            weight: w,
            sum_y: w * y,
            sum_x: w * x,
        };
        while let Some(last) = blocks.last() {
            if last.mean() > cur.mean() {
                cur = last.merge(&cur);
                blocks.pop();
            } else {
                break;
            }
        }
        blocks.push(cur);
    }
    blocks
}

#[derive(PartialEq)]
struct Candidate {
    cost: f64,
    left: usize,
    stamp: (u64, u64),
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on cost, then leftmost first.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.left.cmp(&self.left))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Greedily merges the cheapest adjacent pair until at most `max_blocks` remain.
fn compress_blocks(blocks: Vec<Block>, max_blocks: usize) -> Vec<Block> {
    let max_blocks = max_blocks.max(1);
    let m = blocks.len();
    if m <= max_blocks {
        return blocks;
    }
    let mut slot: Vec<Option<Block>> = blocks.into_iter().map(Some).collect();
    let mut version = vec![0u64; m];
    let mut next: Vec<usize> = (1..=m).collect();
    let mut prev: Vec<usize> = (0..m).map(|i| i.wrapping_sub(1)).collect();
    let mut heap = BinaryHeap::new();
    let push =
        |heap: &mut BinaryHeap<Candidate>, slot: &[Option<Block>], version: &[u64], l: usize, r: usize| {
            if let (Some(a), Some(b)) = (slot[l], slot[r]) {
                heap.push(Candidate {
                    cost: a.merge_cost(&b),
                    left: l,
                    stamp: (version[l], version[r]),
                });
            }
        };
    for l in 0..m - 1 {
        push(&mut heap, &slot, &version, l, l + 1);
    }
    let mut alive = m;
    while alive > max_blocks {
        let Some(c) = heap.pop() else { break };
        let l = c.left;
        if slot[l].is_none() {
            continue;
        }
        let r = next[l];
        if r >= m || slot[r].is_none() || c.stamp != (version[l], version[r]) {
            continue;
        }
        let merged = slot[l].unwrap().merge(&slot[r].unwrap());
        slot[l] = Some(merged);
        slot[r] = None;
        version[l] += 1;
        next[l] = next[r];
        if next[l] < m {
            prev[next[l]] = l;
            push(&mut heap, &slot, &version, l, next[l]);
        }
        if prev[l] < m {
            push(&mut heap, &slot, &version, prev[l], l);
        }
        alive -= 1;
    }
    slot.into_iter().flatten().collect()
}

/// Best nondecreasing fit of `y` against `x`, compressed to at most `knot_count`
/// knots placed at the weighted centroid of each pooled block.
pub fn isotonic_transform(
    x: &[f64],
    y: &[f64],
    weight: &[f64],
    knot_count: usize,
) -> Result<MonotoneTransform> {
    if x.is_empty() || x.len() != y.len() || x.len() != weight.len() {
        return Err(Error::domain("isotonic fit needs equally sized nonempty inputs"));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut points: Vec<(f64, f64, f64)> = Vec::with_capacity(x.len());
    for &j in &order {
        match points.last_mut() {
            Some(last) if last.0 == x[j] => {
                let w = last.2 + weight[j];
                last.1 = (last.1 * last.2 + y[j] * weight[j]) / w;
                last.2 = w;
            }
            _ => points.push((x[j], y[j], weight[j])),
        }
    }
    let blocks = compress_blocks(pava(&points), knot_count);
    let knots = blocks
        .iter()
        .map(|b| (b.sum_x / b.weight, b.mean()))
        .collect::<Vec<_>>();
    // Centroids can tie only through rounding; keep the first in that case.
    let mut cleaned: Vec<(f64, f64)> = Vec::with_capacity(knots.len());
    for (kx, ky) in knots {
        match cleaned.last() {
            Some(&(px, _)) if kx <= px => continue,
            Some(&(_, py)) => cleaned.push((kx, ky.max(py))),
            None => cleaned.push((kx, ky)),
        }
    }
    MonotoneTransform::new(cleaned)
}

fn gradient(rows: &Rows, w0: f64, w: &[f64], f: &MonotoneTransform) -> (f64, Vec<f64>) {
    let mut g0 = 0.0;
    let mut g = vec![0.0; w.len()];
    for (j, m) in rows.members.iter().enumerate() {
        let t = w0 + m.iter().map(|&i| w[i]).sum::<f64>();
        let coef = 2.0 * rows.weight[j] * (f.eval(t) - rows.y[j]) * f.right_slope(t);
        g0 += coef;
        for &i in m {
            g[i] += coef;
        }
    }
    let inv = 1.0 / rows.total_weight;
    (g0 * inv, g.into_iter().map(|x| x * inv).collect())
}

/// Alternating isotonic / gradient fit of an MTM model to the train split.
pub fn fit_mtm(samples: &UtilitySampleSet, config: &MtmFitConfig) -> Result<FitReport> {
    let rows = Rows::from_split(samples, Split::Train);
    check_fit_preconditions(samples, &rows)?;
    if config.knot_count < 1 {
        return Err(Error::domain("knot count must be at least 1"));
    }
    let (mut w0, mut w, ridge) = solve_normal_equations(&rows, samples.n);
    let mut f = MonotoneTransform::identity();
    let mut loss = rows.loss(w0, &w, &f);
    let mut history = vec![loss];
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..config.max_iters {
        iterations += 1;
        let before = loss;

        let t = rows.scores(w0, &w);
        let candidate = isotonic_transform(&t, &rows.y, &rows.weight, config.knot_count)?;
        let cand_loss = rows.loss(w0, &w, &candidate);
        if cand_loss <= loss {
            f = candidate;
            loss = cand_loss;
        }

        for _ in 0..config.gradient_steps {
            let (g0, g) = gradient(&rows, w0, &w, &f);
            let norm2 = g0 * g0 + g.iter().map(|x| x * x).sum::<f64>();
            if !(norm2 > 0.0) {
                break;
            }
            let mut accepted = false;
            for _ in 0..40 {
                let nw0 = w0 - step * g0;
                let nw: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a - step * b).collect();
                let nl = rows.loss(nw0, &nw, &f);
                if nl <= loss - 1e-4 * step * norm2 {
                    w0 = nw0;
                    w = nw;
                    loss = nl;
                    step *= 2.0;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                step = step.max(1e-12);
                break;
            }
        }

        history.push(loss);
        if before - loss <= config.tol * before.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    let model = MtmModel::new(w0, w, f)?;
    Ok(report(
        samples, model, loss, history, iterations, converged, ridge,
    ))
}

/// Mean squared error of `m` over every sample, divided by the utility variance.
pub fn normalized_residual(m: &MtmModel, eval_samples: &UtilitySampleSet) -> Result<f64> {
    let (mse, var, count) = residual_stats(m, eval_samples.samples.iter());
    if variance_is_degenerate(var, count) {
        return Err(Error::Degenerate(
            "utility variance is zero or fewer than two samples".into(),
        ));
    }
    Ok(mse / var)
}

/// Largest player count accepted by [`mtm_topk_optimality_check`].
pub const MAX_OPTIMALITY_PLAYERS: usize = 16;

/// Whether the top-k players by exact Shapley value reach the best size-k utility.
pub fn mtm_topk_optimality_check(m: &MtmModel, k: usize) -> Result<bool> {
    let n = m.n();
    if n > MAX_OPTIMALITY_PLAYERS {
        return Err(Error::capacity(
            format!("optimality check over {n} players"),
            MAX_OPTIMALITY_PLAYERS,
        ));
    }
    let game = UtilityFn::Dense(DenseTable::tabulate(n, |s| m.value(s))?);
    topk_is_optimal(&game, k)
}

/// Same check for any game small enough to enumerate.
pub fn topk_is_optimal(game: &UtilityFn, k: usize) -> Result<bool> {
    let phi = exact_shapley(game)?;
    let chosen = top_k_select(&phi, k)?;
    let (_, best) = brute_force_optimal(game, k)?;
    let got = game.value(&chosen.subset);
    Ok((got - best).abs() <= 1e-12 * best.abs().max(1.0))
}

/// Upper bound `(1 - cor) / (1 - rho^2)` on the best normalised MTM residual.
pub fn mtm_bound(rho: f64, cor_rho: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::domain(format!("rho = {rho} must lie in [0, 1)")));
    }
    Ok((1.0 - cor_rho) / (1.0 - rho * rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{fixtures::random_dense, make_modular};

    #[test]
    fn transform_eval_and_extrapolation() {
        let f = MonotoneTransform::new(vec![(0.0, 0.0), (1.0, 2.0), (3.0, 3.0)]).unwrap();
        assert_eq!(f.eval(0.5), 1.0);
        assert_eq!(f.eval(2.0), 2.5);
        assert_eq!(f.eval(-1.0), -2.0);
        assert_eq!(f.eval(5.0), 4.0);
        assert_eq!(f.right_slope(1.0), 0.5);
        assert_eq!(f.right_slope(0.999), 2.0);
        assert_eq!(MonotoneTransform::constant(0.3).eval(17.0), 0.3);
        assert!(MonotoneTransform::new(vec![(0.0, 1.0), (1.0, 0.0)]).is_err());
        assert!(MonotoneTransform::new(vec![(0.0, 0.0), (0.0, 1.0)]).is_err());
        assert!(MonotoneTransform::new(vec![]).is_err());
    }

    #[test]
    fn identity_model_is_modular() {
        let w = vec![0.2, -0.4, 0.9, 0.1];
        let m = MtmModel::new(0.0, w.clone(), MonotoneTransform::identity()).unwrap();
        let modular = make_modular(4, 0.0, w).unwrap();
        for s in enumerate_subsets(4, None).unwrap() {
            assert!((mtm_eval(&m, &s).unwrap() - modular.value(&s)).abs() < 1e-15);
        }
        assert!(mtm_eval(&m, &Subset::empty(5)).is_err());
    }

    #[test]
    fn model_json_shape() {
        let m = MtmModel::new(0.5, vec![1.0], MonotoneTransform::identity()).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"w0":0.5,"w":[1.0],"knots":[[0.0,0.0],[1.0,1.0]]}"#);
        let back: MtmModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<MtmModel>(r#"{"w0":0,"w":[],"knots":[[1,1],[0,0]]}"#).is_err());
    }

    #[test]
    fn pava_pools_violators() {
        let pts = [(0.0, 1.0, 1.0), (1.0, 3.0, 1.0), (2.0, 2.0, 1.0), (3.0, 4.0, 1.0)];
        let blocks = pava(&pts);
        let means: Vec<f64> = blocks.iter().map(|b| b.mean()).collect();
        assert_eq!(means, vec![1.0, 2.5, 4.0]);
    }

    #[test]
    fn isotonic_output_is_monotone() {
        let mut rng = RngSeed(3).stream(0);
        let x: Vec<f64> = (0..500).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = x.iter().map(|t| t.tanh() + rng.random_range(-0.5..0.5)).collect();
        let w = vec![1.0; x.len()];
        for knots in [1, 4, 32, 1000] {
            let f = isotonic_transform(&x, &y, &w, knots).unwrap();
            assert!(f.knots().len() <= knots);
            for pair in f.knots().windows(2) {
                assert!(pair[0].0 < pair[1].0 && pair[0].1 <= pair[1].1);
            }
        }
    }

    #[test]
    fn compression_keeps_weighted_mean() {
        let pts: Vec<(f64, f64, f64)> = (0..50)
            .map(|i| (i as f64, (i as f64).sqrt(), 1.0 + (i % 3) as f64))
            .collect();
        let blocks = compress_blocks(pava(&pts), 5);
        assert_eq!(blocks.len(), 5);
        let total_w: f64 = blocks.iter().map(|b| b.weight).sum();
        let total_y: f64 = blocks.iter().map(|b| b.sum_y).sum();
        let expect_y: f64 = pts.iter().map(|p| p.1 * p.2).sum();
        assert!((total_w - pts.iter().map(|p| p.2).sum::<f64>()).abs() < 1e-12);
        assert!((total_y - expect_y).abs() < 1e-9);
    }

    #[test]
    fn linear_fit_recovers_modular() {
        let w = vec![0.3, -0.2, 0.5, 0.05, 0.9, -0.7, 0.0, 0.25];
        let v = make_modular(8, 0.1, w.clone()).unwrap();
        let samples = UtilitySampleSet::complete_enumeration(&v).unwrap();
        let fit = fit_linear_ls(&samples).unwrap();
        assert!(fit.residual < 1e-20, "residual {}", fit.residual);
        assert!((fit.model.w0 - 0.1).abs() < 1e-12);
        for (a, b) in fit.model.w.iter().zip(&w) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(!fit.ridge);
    }

    #[test]
    fn linear_fit_rejects_small_train_sets() {
        let v = make_modular(3, 0.0, vec![1.0, 2.0, 3.0]).unwrap();
        let empty = UtilitySampleSet::new(3);
        assert!(matches!(fit_linear_ls(&empty), Err(Error::Domain(_))));
        let mut few = UtilitySampleSet::new(3);
        for m in 0..4u64 {
            let s = Subset::from_mask(3, m).unwrap();
            few.push(s, v.value(&s), Split::Train).unwrap();
        }
        assert!(fit_linear_ls(&few).is_err());
    }

    #[test]
    fn ridge_fallback_on_rank_deficiency() {
        // Players 0 and 1 always appear together, so their weights are not identifiable.
        let v = make_modular(4, 0.0, vec![1.0, 1.0, 0.5, -0.5]).unwrap();
        let mut set = UtilitySampleSet::new(4);
        for s in enumerate_subsets(4, None).unwrap() {
            if s.contains(0) == s.contains(1) {
                set.push(s, v.value(&s), Split::Train).unwrap();
            }
        }
        let fit = fit_linear_ls(&set).unwrap();
        assert!(fit.ridge);
        assert!(fit.residual < 1e-10);
        assert!((fit.model.w[0] + fit.model.w[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn duplicates_are_averaged() {
        let v = make_modular(3, 0.0, vec![1.0, 2.0, 3.0]).unwrap();
        let mut set = UtilitySampleSet::complete_enumeration(&v).unwrap();
        let s = Subset::from_indices(3, &[0]).unwrap();
        set.push(s, 1.5, Split::Train).unwrap();
        set.push(s, 0.5, Split::Train).unwrap();
        // Three observations of {0} averaging to 1.0 leave the modular fit exact.
        let fit = fit_linear_ls(&set).unwrap();
        for (w, expect) in fit.model.w.iter().zip([1.0, 2.0, 3.0]) {
            assert!((w - expect).abs() < 1e-9, "{:?}", fit.model.w);
        }
    }

    #[test]
    fn normalized_residual_identities() {
        let v = random_dense(6, RngSeed(9)).unwrap();
        let samples = UtilitySampleSet::complete_enumeration(&v).unwrap();
        let mean = samples.samples.iter().map(|s| s.utility).sum::<f64>() / 64.0;
        let constant = MtmModel::new(0.0, vec![0.0; 6], MonotoneTransform::constant(mean)).unwrap();
        assert!((normalized_residual(&constant, &samples).unwrap() - 1.0).abs() < 1e-12);

        let m = MtmModel::random(5, RngSeed(2));
        let game = UtilityFn::Mtm(m.clone());
        let own = UtilitySampleSet::complete_enumeration(&game).unwrap();
        assert_eq!(normalized_residual(&m, &own).unwrap(), 0.0);

        let flat =
            UtilityFn::Mtm(MtmModel::new(0.0, vec![1.0; 4], MonotoneTransform::constant(2.0)).unwrap());
        let flat_samples = UtilitySampleSet::complete_enumeration(&flat).unwrap();
        assert!(matches!(
            normalized_residual(&constant_for(4), &flat_samples),
            Err(Error::Degenerate(_))
        ));
        let fit = fit_linear_ls(&flat_samples).unwrap();
        assert!(fit.degenerate && fit.normalized_residual.is_none());
    }

    fn constant_for(n: usize) -> MtmModel {
        MtmModel::new(0.0, vec![0.0; n], MonotoneTransform::constant(0.0)).unwrap()
    }

    #[test]
    fn fit_mtm_loss_never_increases() {
        let v = random_dense(7, RngSeed(12)).unwrap();
        let samples = UtilitySampleSet::sample_uniform(&v, 400, 0.8, RngSeed(1)).unwrap();
        let fit = fit_mtm(&samples, &MtmFitConfig::default()).unwrap();
        for pair in fit.loss_history.windows(2) {
            assert!(pair[1] <= pair[0], "{:?}", fit.loss_history);
        }
        assert_eq!(fit.loss_history.len(), fit.iterations + 1);
    }

    #[test]
    fn fit_mtm_on_small_realizable_game() {
        let truth = MtmModel::random(8, RngSeed(4));
        let v = UtilityFn::Mtm(truth);
        let samples = UtilitySampleSet::complete_enumeration(&v).unwrap();
        let lin = fit_linear_ls(&samples).unwrap();
        let fit = fit_mtm(&samples, &MtmFitConfig::default()).unwrap();
        assert!(fit.residual <= lin.residual);
        assert!(
            fit.normalized_residual.unwrap() < 0.05,
            "{:?}",
            fit.normalized_residual
        );
    }

    #[test]
    fn bound_values() {
        assert_eq!(mtm_bound(0.0, 1.0).unwrap(), 0.0);
        assert!((mtm_bound(0.3, 0.8).unwrap() - 0.2 / 0.91).abs() < 1e-15);
        assert!(matches!(mtm_bound(1.0, 0.5), Err(Error::Domain(_))));
        assert!(mtm_bound(-0.1, 0.5).is_err());
    }

    #[test]
    fn sorted_weights_give_prefix_topk() {
        let w = vec![0.9, 0.7, 0.5, 0.3, 0.1, -0.2];
        let m = MtmModel::new(
            0.0,
            w,
            MonotoneTransform::new(vec![(-1.0, 0.0), (0.5, 0.2), (3.0, 1.0)]).unwrap(),
        )
        .unwrap();
        let game = UtilityFn::Mtm(m.clone());
        let phi = exact_shapley(&game).unwrap();
        for k in 1..6 {
            let top = top_k_select(&phi, k).unwrap();
            assert_eq!(top.subset.to_indices(), (0..k).collect::<Vec<_>>());
            assert!(mtm_topk_optimality_check(&m, k).unwrap());
        }
    }

    #[test]
    fn optimality_check_capacity() {
        let m = MtmModel::random(17, RngSeed(0));
        assert!(matches!(
            mtm_topk_optimality_check(&m, 3),
            Err(Error::Capacity { .. })
        ));
    }
}
