//! Exact Shapley values and semivalues, and the permutation-sampling estimator.
//!
//! Semivalues use per-subset weights: `q[t][k-1]` is the weight given to each
//! coalition of size `k - 1` in a `t`-player game, normalised so that
//! `sum_k C(t-1, k-1) * q[t][k-1] = 1`. With this convention the Shapley value
//! is `q = 1 / (t * C(t-1, k-1))`, Banzhaf is `2^-(t-1)` and leave-one-out is
//! the indicator of `k = t`.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::{DenseTable, UtilityFn, MAX_EXACT_PLAYERS};
use crate::subsets::{RngSeed, Subset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Exact,
    PermutationMc { budget: usize, seed: RngSeed },
}

/// Per-player scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueVector {
    pub phi: Vec<f64>,
    pub provenance: Provenance,
}

impl ValueVector {
    pub fn exact(phi: Vec<f64>) -> Self {
        ValueVector {
            phi,
            provenance: Provenance::Exact,
        }
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    /// `phi[S]`, the summed score of a coalition.
    pub fn coalition_score(&self, s: &Subset) -> f64 {
        s.iter().map(|i| self.phi[i]).sum()
    }

    /// CSV with header `player_index,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "player_index,value")?;
        for (i, v) in self.phi.iter().enumerate() {
            writeln!(w, "{i},{v:?}")?;
        }
        Ok(())
    }
}

/// Exact binomial coefficient; exact for every argument used here (`n <= 24`).
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for j in 0..k {
        acc = acc * (n - j) as u64 / (j + 1) as u64;
    }
    acc
}

/// Per-size semivalue weights for game sizes `1..=n_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemivalueFamily {
    pub name: String,
    /// `tables[t - 1][k - 1]` is `q^(t)_k`.
    tables: Vec<Vec<f64>>,
}

impl SemivalueFamily {
    pub fn from_tables(name: impl Into<String>, tables: Vec<Vec<f64>>) -> Result<Self> {
        for (t, row) in tables.iter().enumerate() {
            if row.len() != t + 1 {
                return Err(Error::domain(format!(
                    "weight table for t = {} must have {} entries, got {}",
                    t + 1,
                    t + 1,
                    row.len()
                )));
            }
        }
        Ok(SemivalueFamily {
            name: name.into(),
            tables,
        })
    }

    fn build(name: &str, n_max: usize, q: impl Fn(usize, usize) -> f64) -> Self {
        let tables = (1..=n_max).map(|t| (1..=t).map(|k| q(t, k)).collect()).collect();
        SemivalueFamily {
            name: name.to_string(),
            tables,
        }
    }

    pub fn shapley(n_max: usize) -> Self {
        Self::build("shapley", n_max, |t, k| {
            1.0 / (t as u64 * binomial(t - 1, k - 1)) as f64
        })
    }

    pub fn banzhaf(n_max: usize) -> Self {
        Self::build("banzhaf", n_max, |t, _| 0.5f64.powi(t as i32 - 1))
    }

    pub fn leave_one_out(n_max: usize) -> Self {
        Self::build("loo", n_max, |t, k| if k == t { 1.0 } else { 0.0 })
    }

    pub fn by_name(name: &str, n_max: usize) -> Result<Self> {
        match name {
            "shapley" => Ok(Self::shapley(n_max)),
            "banzhaf" => Ok(Self::banzhaf(n_max)),
            "loo" | "leave_one_out" => Ok(Self::leave_one_out(n_max)),
            other => Err(Error::domain(format!("unknown semivalue family {other:?}"))),
        }
    }

    pub fn n_max(&self) -> usize {
        self.tables.len()
    }

    /// Weights `q^(t)_1 ..= q^(t)_t`.
    pub fn weights(&self, t: usize) -> Result<&[f64]> {
        if t == 0 || t > self.tables.len() {
            return Err(Error::domain(format!(
                "family {:?} is defined up to t = {}, requested t = {t}",
                self.name,
                self.tables.len()
            )));
        }
        Ok(&self.tables[t - 1])
    }

    /// `q^(t)_k` with 1-based `k`.
    pub fn weight(&self, t: usize, k: usize) -> f64 {
        self.tables[t - 1][k - 1]
    }

    pub fn weight_mut(&mut self, t: usize, k: usize) -> &mut f64 {
        &mut self.tables[t - 1][k - 1]
    }

    /// Checks nonnegativity and `sum_k C(t-1, k-1) q^(t)_k = 1` at size `t`.
    pub fn check_normalization(&self, t: usize) -> Result<()> {
        let w = self.weights(t)?;
        if let Some(k) = w.iter().position(|&q| !(q >= 0.0) || !q.is_finite()) {
            return Err(Error::domain(format!(
                "negative or non-finite weight q^({t})_{}",
                k + 1
            )));
        }
        let total: f64 = w
            .iter()
            .enumerate()
            .map(|(k, &q)| binomial(t - 1, k) as f64 * q)
            .sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!(
                "family {:?} at t = {t} sums to {total}, expected 1",
                self.name
            )));
        }
        Ok(())
    }
}

fn dense_for_exact(v: &UtilityFn) -> Result<DenseTable> {
    let n = v.n();
    if n > MAX_EXACT_PLAYERS {
        return Err(Error::capacity(
            format!("exact values over {n} players"),
            MAX_EXACT_PLAYERS,
        ));
    }
    v.to_dense()
}

/// `sums[i][k]` = sum over coalitions `S` without `i`, `|S| = k`, of `v(S + i) - v(S)`.
fn marginal_sums_by_size(table: &DenseTable) -> Vec<Vec<f64>> {
    let n = table.n();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let bit = 1usize << i;
            let mut sums = vec![0.0; n];
            for mask in 0..1usize << n {
                if mask & bit != 0 {
                    continue;
                }
                sums[mask.count_ones() as usize] += table.at(mask | bit) - table.at(mask);
            }
            sums
        })
        .collect()
}

/// Semivalue with the given per-size weights for an `n`-player game; no normalisation check.
///
/// `weights[k - 1]` multiplies each coalition of size `k - 1`.
pub fn semivalue_with_weights(v: &UtilityFn, weights: &[f64]) -> Result<ValueVector> {
    if weights.len() != v.n() {
        return Err(Error::domain(format!(
            "need {} per-size weights, got {}",
            v.n(),
            weights.len()
        )));
    }
    let table = dense_for_exact(v)?;
    let phi = marginal_sums_by_size(&table)
        .into_iter()
        .map(|sums| sums.iter().zip(weights).map(|(s, q)| s * q).sum())
        .collect();
    Ok(ValueVector::exact(phi))
}

/// Exact Shapley value.
///
/// Above the dense limit, modular and commander games use their closed forms;
/// everything else is tabulated and summed in `O(n 2^n)`.
pub fn exact_shapley(v: &UtilityFn) -> Result<ValueVector> {
    let n = v.n();
    match v {
        UtilityFn::Modular(m) if n > MAX_EXACT_PLAYERS => return Ok(ValueVector::exact(m.w.clone())),
        UtilityFn::Commander(c) if n > MAX_EXACT_PLAYERS => {
            let mut phi = vec![0.0; n];
            if c.t.len() == 1 {
                phi[c.t.iter().next().unwrap_or(0)] = 1.0;
            }
            return Ok(ValueVector::exact(phi));
        }
        _ => {}
    }
    let weights: Vec<f64> = (1..=n)
        .map(|k| 1.0 / (n as u64 * binomial(n - 1, k - 1)) as f64)
        .collect();
    semivalue_with_weights(v, &weights)
}

pub fn exact_semivalue(v: &UtilityFn, fam: &SemivalueFamily) -> Result<ValueVector> {
    let n = v.n();
    fam.check_normalization(n)?;
    semivalue_with_weights(v, fam.weights(n)?)
}

/// Witness `(t, k)` of a failed recurrence `q^(t-1)_k = q^(t)_k + q^(t)_(k+1)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PascalViolation {
    pub t: usize,
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PascalCheck {
    pub holds: bool,
    pub violation: Option<PascalViolation>,
}

/// Checks the inverse Pascal triangle recurrence for `2 <= t <= n_max`, `1 <= k <= t-1`.
pub fn check_inverse_pascal(fam: &SemivalueFamily, n_max: usize) -> PascalCheck {
    let n_max = n_max.min(fam.n_max());
    for t in 2..=n_max {
        for k in 1..t {
            let lhs = fam.weight(t - 1, k);
            let rhs = fam.weight(t, k) + fam.weight(t, k + 1);
            let scale = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
            if (lhs - rhs).abs() > 1e-12 * scale {
                return PascalCheck {
                    holds: false,
                    violation: Some(PascalViolation { t, k, lhs, rhs }),
                };
            }
        }
    }
    PascalCheck {
        holds: true,
        violation: None,
    }
}

#[derive(Clone, Debug)]
pub struct McOptions {
    /// Permutations per work unit. Fixed so results do not depend on thread count.
    pub chunk_size: usize,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    /// Record every prefix coalition and its utility for the first this-many permutations.
    pub record_permutations: usize,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            chunk_size: 64,
            threads: None,
            record_permutations: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct McRun {
    pub values: ValueVector,
    /// Per-player standard error of the mean marginal contribution.
    pub stderr: Vec<f64>,
    /// `(coalition, utility)` pairs seen along the recorded permutations.
    pub samples: Vec<(Subset, f64)>,
}

struct ChunkAcc {
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    samples: Vec<(Subset, f64)>,
}

#[allow(clippy::too_many_arguments)]
fn mc_chunk(
    v: &UtilityFn,
    seed: RngSeed,
    chunk: usize,
    start: usize,
    count: usize,
    empty_value: f64,
    full_value: f64,
    record: usize,
) -> ChunkAcc {
    let n = v.n();
    let mut rng = seed.stream(chunk as u64);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut acc = ChunkAcc {
        sum: vec![0.0; n],
        sumsq: vec![0.0; n],
        samples: Vec::new(),
    };
    for p in 0..count {
        perm.shuffle(&mut rng);
        let keep = start + p < record;
        let mut coalition = Subset::empty(n);
        let mut prev = empty_value;
        for (pos, &player) in perm.iter().enumerate() {
            coalition.insert(player);
            let cur = if pos + 1 == n {
                full_value
            } else {
                v.value(&coalition)
            };
            let delta = cur - prev;
            acc.sum[player] += delta;
            acc.sumsq[player] += delta * delta;
            if keep {
                acc.samples.push((coalition, cur));
            }
            prev = cur;
        }
    }
    acc
}

/// Permutation-sampling estimate of the Shapley value with extra outputs.
pub fn permutation_mc_shapley_with(
    v: &UtilityFn,
    budget: usize,
    seed: RngSeed,
    opts: &McOptions,
) -> Result<McRun> {
    if budget == 0 {
        return Err(Error::domain("permutation budget must be at least 1"));
    }
    if opts.chunk_size == 0 {
        return Err(Error::domain("chunk size must be at least 1"));
    }
    let n = v.n();
    let empty_value = v.value(&Subset::empty(n));
    let full_value = v.value(&Subset::full(n));
    let chunks = budget.div_ceil(opts.chunk_size);
    let work = || -> Vec<ChunkAcc> {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let start = c * opts.chunk_size;
                let count = opts.chunk_size.min(budget - start);
                mc_chunk(
                    v,
                    seed,
                    c,
                    start,
                    count,
                    empty_value,
                    full_value,
                    opts.record_permutations,
                )
            })
            .collect()
    };
    let parts = match opts.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };

    let mut sum = vec![0.0; n];
    let mut sumsq = vec![0.0; n];
    let mut samples = Vec::new();
    for part in parts {
        for i in 0..n {
            sum[i] += part.sum[i];
            sumsq[i] += part.sumsq[i];
        }
        samples.extend(part.samples);
    }
    let m = budget as f64;
    let phi: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let stderr = (0..n)
        .map(|i| {
            if budget < 2 {
                return f64::NAN;
            }
            let var = (sumsq[i] - m * phi[i] * phi[i]).max(0.0) / (m - 1.0);
            (var / m).sqrt()
        })
        .collect();
    Ok(McRun {
        values: ValueVector {
            phi,
            provenance: Provenance::PermutationMc { budget, seed },
        },
        stderr,
        samples,
    })
}

/// Permutation-sampling estimate of the Shapley value.
pub fn permutation_mc_shapley(v: &UtilityFn, budget: usize, seed: RngSeed) -> Result<ValueVector> {
    Ok(permutation_mc_shapley_with(v, budget, seed, &McOptions::default())?.values)
}
