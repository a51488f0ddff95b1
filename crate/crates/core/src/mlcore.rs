//! Deterministic learners backing realistic utility functions.

use std::sync::Arc;

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::{SetFunction, UtilityFn};
use crate::subsets::{RngSeed, Subset};

/// Binary classification data with labels in `{-1, +1}`, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularDataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<i8>,
    ids: Vec<usize>,
}

impl TabularDataset {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<i8>) -> Result<Self> {
        let ids = (0..labels.len()).collect();
        Self::with_ids(dim, features, labels, ids)
    }

    pub fn with_ids(dim: usize, features: Vec<f64>, labels: Vec<i8>, ids: Vec<usize>) -> Result<Self> {
        if features.len() != dim * labels.len() {
            return Err(Error::domain(format!(
                "{} feature values do not form {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(pos) = labels.iter().position(|&y| y != 1 && y != -1) {
            return Err(Error::domain(format!(
                "label {} at row {pos} is not -1 or 1",
                labels[pos]
            )));
        }
        if ids.len() != labels.len() {
            return Err(Error::domain("one id per row is required"));
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::domain("row ids must be unique"));
        }
        Ok(TabularDataset {
            dim,
            features,
            labels,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.features[r * self.dim..(r + 1) * self.dim]
    }

    pub fn label(&self, r: usize) -> i8 {
        self.labels[r]
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Rows at the given positions, in that order.
    pub fn select(&self, rows: &[usize]) -> TabularDataset {
        let mut features = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        TabularDataset {
            dim: self.dim,
            features,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
        }
    }

    /// Per-column mean and standard deviation (std of a constant column is 1).
    pub fn column_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len().max(1) as f64;
        let mut mean = vec![0.0; self.dim];
        for r in 0..self.len() {
            for (m, x) in mean.iter_mut().zip(self.row(r)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; self.dim];
        for r in 0..self.len() {
            for ((v, x), m) in var.iter_mut().zip(self.row(r)).zip(&mean) {
                *v += (x - m).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        (mean, std)
    }

    pub fn standardized(&self, mean: &[f64], std: &[f64]) -> TabularDataset {
        let mut out = self.clone();
        for r in 0..self.len() {
            for c in 0..self.dim {
                let x = &mut out.features[r * self.dim + c];
                *x = (*x - mean[c]) / std[c];
            }
        }
        out
    }
}

/// Two spherical unit Gaussians centred at `+-(separation / 2) e_1`.
/// Labels alternate `+1, -1, ...` so classes are balanced.
pub fn generate_gaussian_dataset(
    n_points: usize,
    dim: usize,
    class_separation: f64,
    seed: RngSeed,
) -> Result<TabularDataset> {
    if n_points < 2 || dim < 1 {
        return Err(Error::domain("need at least two points and one feature"));
    }
    let mut rng = seed.stream(0);
    let mut features = Vec::with_capacity(n_points * dim);
    let mut labels = Vec::with_capacity(n_points);
    for r in 0..n_points {
        let y: i8 = if r % 2 == 0 { 1 } else { -1 };
        for c in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            let centre = if c == 0 {
                y as f64 * class_separation / 2.0
            } else {
                0.0
            };
            features.push(centre + z);
        }
        labels.push(y);
    }
    TabularDataset::new(dim, features, labels)
}

/// Negates the labels of `round(ratio * n)` uniformly chosen rows.
/// Returns the new dataset and the sorted ids of the flipped rows.
pub fn flip_labels(d: &TabularDataset, ratio: f64, seed: RngSeed) -> Result<(TabularDataset, Vec<usize>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::domain(format!("flip ratio {ratio} outside [0, 1]")));
    }
    let count = (ratio * d.len() as f64).round() as usize;
    let mut rng = seed.stream(0);
    let mut rows: Vec<usize> = index::sample(&mut rng, d.len(), count).into_vec();
    rows.sort_unstable();
    let mut out = d.clone();
    for &r in &rows {
        out.labels[r] = -out.labels[r];
    }
    let mut ids: Vec<usize> = rows.iter().map(|&r| d.ids[r]).collect();
    ids.sort_unstable();
    Ok((out, ids))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    /// Unused by full-batch training from zero; kept so the hyperparameters fully
    /// identify a model.
    pub seed: u64,
}

impl Default for LogRegHyper {
    fn default() -> Self {
        LogRegHyper {
            learning_rate: 0.1,
            epochs: 300,
            l2: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub hyper: LogRegHyper,
}

impl LogRegModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
    }

    /// Predicted label; a zero score predicts `+1`.
    pub fn predict(&self, x: &[f64]) -> i8 {
        if self.decision(x) >= 0.0 {
            1
        } else {
            -1
        }
    }

    pub fn accuracy(&self, data: &TabularDataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = (0..data.len())
            .filter(|&r| self.predict(data.row(r)) == data.label(r))
            .count();
        hits as f64 / data.len() as f64
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss plus `l2 / 2 * |w|^2` (intercept unpenalised).
pub fn logistic_loss(data: &TabularDataset, coef: &[f64], intercept: f64, l2: f64) -> f64 {
    let m = data.len() as f64;
    let mut loss = 0.0;
    for r in 0..data.len() {
        let z = intercept + coef.iter().zip(data.row(r)).map(|(w, x)| w * x).sum::<f64>();
        loss += softplus(-(data.label(r) as f64) * z);
    }
    loss / m + 0.5 * l2 * coef.iter().map(|w| w * w).sum::<f64>()
}

/// Gradient of [`logistic_loss`]: `(d/dw, d/db)`.
pub fn logistic_gradient(data: &TabularDataset, coef: &[f64], intercept: f64, l2: f64) -> (Vec<f64>, f64) {
    let m = data.len() as f64;
    let mut g = vec![0.0; coef.len()];
    let mut gb = 0.0;
    for r in 0..data.len() {
        let x = data.row(r);
        let y = data.label(r) as f64;
        let z = intercept + coef.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        let c = -y * sigmoid(-y * z);
        gb += c;
        for (gi, xi) in g.iter_mut().zip(x) {
            *gi += c * xi;
        }
    }
    for (gi, w) in g.iter_mut().zip(coef) {
        *gi = *gi / m + l2 * w;
    }
    (g, gb / m)
}

/// Full-batch gradient descent from zero for a fixed number of epochs.
/// Also returns the training loss before each epoch and after the last.
pub fn train_logistic_with_history(
    train: &TabularDataset,
    hyper: &LogRegHyper,
) -> Result<(LogRegModel, Vec<f64>)> {
    if train.is_empty() {
        return Err(Error::domain("cannot train on an empty dataset"));
    }
    let mut coef = vec![0.0; train.dim()];
    let mut intercept = 0.0;
    let mut history = Vec::with_capacity(hyper.epochs + 1);
    for _ in 0..hyper.epochs {
        history.push(logistic_loss(train, &coef, intercept, hyper.l2));
        let (g, gb) = logistic_gradient(train, &coef, intercept, hyper.l2);
        for (w, gi) in coef.iter_mut().zip(&g) {
            *w -= hyper.learning_rate * gi;
        }
        intercept -= hyper.learning_rate * gb;
    }
    history.push(logistic_loss(train, &coef, intercept, hyper.l2));
    Ok((
        LogRegModel {
            coefficients: coef,
            intercept,
            hyper: hyper.clone(),
        },
        history,
    ))
}

/// Same arithmetic as [`train_logistic_with_history`] without evaluating the loss.
pub fn train_logistic_regression(train: &TabularDataset, hyper: &LogRegHyper) -> Result<LogRegModel> {
    if train.is_empty() {
        return Err(Error::domain("cannot train on an empty dataset"));
    }
    let mut coef = vec![0.0; train.dim()];
    let mut intercept = 0.0;
    for _ in 0..hyper.epochs {
        let (g, gb) = logistic_gradient(train, &coef, intercept, hyper.l2);
        for (w, gi) in coef.iter_mut().zip(&g) {
            *w -= hyper.learning_rate * gi;
        }
        intercept -= hyper.learning_rate * gb;
    }
    Ok(LogRegModel {
        coefficients: coef,
        intercept,
        hyper: hyper.clone(),
    })
}

/// `v(S)` = validation accuracy of logistic regression trained on the pool rows in `S`.
#[derive(Debug)]
pub struct ValidationAccuracy {
    pool: TabularDataset,
    validation: TabularDataset,
    hyper: LogRegHyper,
}

impl ValidationAccuracy {
    /// Standardises both sets with the pool's column statistics.
    pub fn new(pool: &TabularDataset, validation: &TabularDataset, hyper: LogRegHyper) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::domain("training pool is empty"));
        }
        if pool.dim() != validation.dim() {
            return Err(Error::domain("pool and validation feature widths differ"));
        }
        let (mean, std) = pool.column_stats();
        Ok(ValidationAccuracy {
            pool: pool.standardized(&mean, &std),
            validation: validation.standardized(&mean, &std),
            hyper,
        })
    }
}

impl SetFunction for ValidationAccuracy {
    fn players(&self) -> usize {
        self.pool.len()
    }

    fn value(&self, s: &Subset) -> f64 {
        if s.is_empty() {
            return 0.0;
        }
        let rows: Vec<usize> = s.iter().collect();
        let train = self.pool.select(&rows);
        match train_logistic_regression(&train, &self.hyper) {
            Ok(model) => model.accuracy(&self.validation),
            Err(_) => 0.0,
        }
    }
}

/// Utility oracle for validation accuracy; players are pool rows `0..n`.
pub fn validation_accuracy_utility(
    pool: &TabularDataset,
    val: &TabularDataset,
    hyper: LogRegHyper,
) -> Result<UtilityFn> {
    Ok(UtilityFn::Oracle(Arc::new(ValidationAccuracy::new(
        pool, val, hyper,
    )?)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Rbf { gamma: f64 },
    Linear,
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Rbf { gamma } => {
                (-gamma * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).exp()
            }
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        }
    }
}

/// Correctness of an unnormalised kernel vote on one test point:
/// `v(S) = 1[y_test * sum_{i in S} y_i k(x_i, x_test) >= 0]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelUtility {
    /// `y_i * k(x_i, x_test)` per training point.
    votes: Vec<f64>,
    test_label: i8,
}

impl KernelUtility {
    /// Kernel game whose per-player terms `y_i y_test k_i` are given directly.
    pub fn from_weights(weights: Vec<f64>) -> Self {
        KernelUtility {
            votes: weights,
            test_label: 1,
        }
    }

    pub fn n(&self) -> usize {
        self.votes.len()
    }

    /// The MTM weights `w_i = y_i y_test k(x_i, x_test)`.
    pub fn weights(&self) -> Vec<f64> {
        let y = self.test_label as f64;
        self.votes.iter().map(|v| v * y).collect()
    }

    #[inline]
    pub fn value(&self, s: &Subset) -> f64 {
        let score: f64 = s.iter().map(|i| self.votes[i]).sum();
        if self.test_label as f64 * score >= 0.0 {
            1.0
        } else {
            0.0
        }
    }
}

pub fn kernel_threshold_utility(
    train_pool: &TabularDataset,
    test_point: (&[f64], i8),
    kernel: Kernel,
) -> Result<(UtilityFn, Vec<f64>)> {
    if let Kernel::Rbf { gamma } = kernel {
        if !(gamma > 0.0) {
            return Err(Error::domain("rbf gamma must be positive"));
        }
    }
    let (x, y) = test_point;
    if x.len() != train_pool.dim() {
        return Err(Error::domain("test point width differs from the pool"));
    }
    if y != 1 && y != -1 {
        return Err(Error::domain("test label must be -1 or 1"));
    }
    let votes = (0..train_pool.len())
        .map(|r| train_pool.label(r) as f64 * kernel.eval(train_pool.row(r), x))
        .collect();
    let k = KernelUtility { votes, test_label: y };
    let w = k.weights();
    Ok((UtilityFn::Kernel(k), w))
}
