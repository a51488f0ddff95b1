//! The rho-consistency index: correlation of `v(S)` and `v(S')` over
//! rho-correlated coalition pairs.
//!
//! The exact path uses the Fourier expansion of `v` over `{-1, 1}^n`: with
//! coefficients `c_U`, `E[v(S) v(S')] = sum_U rho^|U| c_U^2`, and the variance
//! is `sum_{U != empty} c_U^2`. The coefficients come from one fast
//! Walsh-Hadamard transform of the dense table.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::UtilityFn;
use crate::subsets::{rho_correlated_pair, validate_rho, RngSeed};

/// Largest player count accepted by [`consistency_index_exact`].
pub const MAX_EXACT_CONSISTENCY_PLAYERS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConsistencyMethod {
    Exact,
    Mc { budget: usize, seed: RngSeed },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyEstimate {
    pub rho: f64,
    pub cor: f64,
    pub method: ConsistencyMethod,
    /// Jackknife standard error; Monte Carlo only.
    pub stderr: Option<f64>,
}

/// In-place unnormalised Walsh-Hadamard transform.
pub fn walsh_hadamard(values: &mut [f64]) {
    let len = values.len();
    debug_assert!(len.is_power_of_two());
    let mut h = 1;
    while h < len {
        for block in values.chunks_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

pub fn consistency_index_exact(v: &UtilityFn, rho: f64) -> Result<ConsistencyEstimate> {
    validate_rho(rho)?;
    let n = v.n();
    if n > MAX_EXACT_CONSISTENCY_PLAYERS {
        return Err(Error::capacity(
            format!("exact consistency index over {n} players"),
            MAX_EXACT_CONSISTENCY_PLAYERS,
        ));
    }
    let mut coef = v.to_dense()?.values().to_vec();
    walsh_hadamard(&mut coef);
    let scale = 1.0 / (1u64 << n) as f64;
    // rho^|U| for every popcount.
    let powers: Vec<f64> = (0..=n as i32).map(|d| rho.powi(d)).collect();
    let (mut var, mut cov) = (0.0, 0.0);
    for (u, c) in coef.iter().enumerate().skip(1) {
        let c2 = (c * scale).powi(2);
        var += c2;
        cov += powers[u.count_ones() as usize] * c2;
    }
    let mean = coef[0] * scale;
    if !(var > 1e-24 * mean.abs().max(1.0).powi(2)) {
        return Err(Error::Degenerate(
            "utility has zero variance under uniform coalitions".into(),
        ));
    }
    Ok(ConsistencyEstimate {
        rho,
        cor: cov / var,
        method: ConsistencyMethod::Exact,
        stderr: None,
    })
}

const PAIR_CHUNK: usize = 256;

/// Plug-in estimate from `budget` sampled pairs, using the pooled mean and
/// variance of both coordinates.
pub fn consistency_index_mc(
    v: &UtilityFn,
    rho: f64,
    budget: usize,
    seed: RngSeed,
) -> Result<ConsistencyEstimate> {
    validate_rho(rho)?;
    if budget < 2 {
        return Err(Error::domain("consistency estimate needs at least two pairs"));
    }
    let n = v.n();
    let chunks = budget.div_ceil(PAIR_CHUNK);
    let parts: Vec<Vec<(f64, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seed.stream(c as u64);
            let count = PAIR_CHUNK.min(budget - c * PAIR_CHUNK);
            (0..count)
                .map(|_| {
                    let (s, t) = rho_correlated_pair(n, rho, &mut rng);
                    (v.value(&s), v.value(&t))
                })
                .collect()
        })
        .collect();
    let pairs: Vec<(f64, f64)> = parts.into_iter().flatten().collect();

    // Shift by the first observation; correlation is shift invariant.
    let shift = pairs[0].0;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(a, b) in &pairs {
        let (a, b) = (a - shift, b - shift);
        sa += a;
        sb += b;
        saa += a * a;
        sbb += b * b;
        sab += a * b;
    }
    let cor_from = |m: f64, sa: f64, sb: f64, saa: f64, sbb: f64, sab: f64| {
        let mean = (sa + sb) / (2.0 * m);
        let var = (saa + sbb) / (2.0 * m) - mean * mean;
        let cov = sab / m - mean * mean;
        (cov, var)
    };
    let m = pairs.len() as f64;
    let (cov, var) = cor_from(m, sa, sb, saa, sbb, sab);
    if !(var > 1e-24) {
        return Err(Error::Degenerate("sampled utilities have zero variance".into()));
    }
    let cor = cov / var;

    let mut loo = Vec::with_capacity(pairs.len());
    for &(a, b) in &pairs {
        let (a, b) = (a - shift, b - shift);
        let (c, vv) = cor_from(m - 1.0, sa - a, sb - b, saa - a * a, sbb - b * b, sab - a * b);
        if vv > 0.0 {
            loo.push(c / vv);
        }
    }
    let k = loo.len() as f64;
    let mean_loo = loo.iter().sum::<f64>() / k;
    let jack = ((k - 1.0) / k * loo.iter().map(|x| (x - mean_loo).powi(2)).sum::<f64>()).sqrt();

    Ok(ConsistencyEstimate {
        rho,
        cor,
        method: ConsistencyMethod::Mc { budget, seed },
        stderr: Some(jack),
    })
}
