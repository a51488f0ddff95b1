//! Size-k data selection: top-k by value, brute-force optima, random baselines.
//!
//! Ties are broken towards the lower player index (top-k) or the smaller
//! mask (brute force) everywhere.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::UtilityFn;
use crate::subsets::{enumerate_subsets, RngSeed, Subset, MAX_DENSE_PLAYERS};
use crate::values::{binomial, ValueVector};

/// Most coalitions [`brute_force_optimal`] will evaluate.
pub const MAX_BRUTE_FORCE: u64 = 10_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub subset: Subset,
    /// Whether the k-th and (k+1)-th values were equal.
    pub tie_broken: bool,
}

pub fn top_k_select(values: &ValueVector, k: usize) -> Result<TopK> {
    let n = values.len();
    if k == 0 || k > n {
        return Err(Error::domain(format!("k = {k} outside 1..={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps ascending index among equal values.
    order.sort_by(|&a, &b| values.phi[b].total_cmp(&values.phi[a]));
    let tie_broken = k < n && values.phi[order[k - 1]] == values.phi[order[k]];
    let mut subset = Subset::empty(n);
    for &i in &order[..k] {
        subset.insert(i);
    }
    Ok(TopK { subset, tie_broken })
}

/// Exhaustive argmax of `v` over coalitions of size `k`; the smallest mask wins ties.
pub fn brute_force_optimal(v: &UtilityFn, k: usize) -> Result<(Subset, f64)> {
    let n = v.n();
    if k > n {
        return Err(Error::domain(format!("k = {k} exceeds n = {n}")));
    }
    if n > MAX_DENSE_PLAYERS {
        return Err(Error::capacity(
            format!("brute force over {n} players"),
            MAX_DENSE_PLAYERS,
        ));
    }
    let count = binomial(n, k);
    if count > MAX_BRUTE_FORCE {
        return Err(Error::capacity(
            format!("brute force over C({n}, {k}) = {count} coalitions"),
            MAX_BRUTE_FORCE as usize,
        ));
    }
    let mut best: Option<(Subset, f64)> = None;
    for s in enumerate_subsets(n, Some(k))? {
        let u = v.value(&s);
        if best.is_none_or(|(_, b)| u > b) {
            best = Some((s, u));
        }
    }
    best.ok_or_else(|| Error::Internal("no coalition of the requested size".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub k: usize,
    pub sample_count: usize,
    pub mean_utility: f64,
    pub max_utility: f64,
    pub min_utility: f64,
    pub seed: RngSeed,
}

const BASELINE_CHUNK: usize = 256;

/// Utility statistics of `sample_count` uniform size-k coalitions.
pub fn random_baseline(
    v: &UtilityFn,
    k: usize,
    sample_count: usize,
    seed: RngSeed,
) -> Result<RandomBaseline> {
    let n = v.n();
    if sample_count == 0 {
        return Err(Error::domain("baseline needs at least one sample"));
    }
    if k > n {
        return Err(Error::domain(format!("k = {k} exceeds n = {n}")));
    }
    let chunks = sample_count.div_ceil(BASELINE_CHUNK);
    let parts: Vec<(f64, f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seed.stream(c as u64);
            let count = BASELINE_CHUNK.min(sample_count - c * BASELINE_CHUNK);
            let (mut sum, mut max, mut min) = (0.0, f64::NEG_INFINITY, f64::INFINITY);
            for _ in 0..count {
                let mut s = Subset::empty(n);
                for i in index::sample(&mut rng, n, k) {
                    s.insert(i);
                }
                let u = v.value(&s);
                sum += u;
                max = max.max(u);
                min = min.min(u);
            }
            (sum, max, min)
        })
        .collect();
    let (mut sum, mut max, mut min) = (0.0, f64::NEG_INFINITY, f64::INFINITY);
    for (s, hi, lo) in parts {
        sum += s;
        max = max.max(hi);
        min = min.min(lo);
    }
    Ok(RandomBaseline {
        k,
        sample_count,
        mean_utility: sum / sample_count as f64,
        max_utility: max,
        min_utility: min,
        seed,
    })
}

/// `(v(chosen) - optimal) / (optimal - random_mean)`.
pub fn normalized_utility_difference(
    v: &UtilityFn,
    chosen: &Subset,
    optimal_utility: f64,
    random_mean: f64,
) -> Result<f64> {
    let denom = optimal_utility - random_mean;
    if !(denom > 0.0) {
        return Err(Error::Degenerate(format!(
            "optimal utility {optimal_utility} does not exceed the random mean {random_mean}"
        )));
    }
    Ok((v.eval(chosen)? - optimal_utility) / denom)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub k: usize,
    pub chosen: Subset,
    pub chosen_utility: f64,
    pub optimal_utility: f64,
    /// False when `optimal_utility` is the random-baseline maximum.
    pub optimal_exact: bool,
    pub random_mean_utility: f64,
    pub random_max_utility: f64,
    /// `None` when the denominator is not positive.
    pub normalized_diff: Option<f64>,
    pub tie_broken: bool,
}

/// Selects the top-k players by `values` and scores the choice against the
/// optimum (exact when `exact_optimum`, otherwise the baseline maximum).
pub fn evaluate_selection(
    v: &UtilityFn,
    values: &ValueVector,
    k: usize,
    baseline: &RandomBaseline,
    exact_optimum: bool,
) -> Result<SelectionOutcome> {
    let top = top_k_select(values, k)?;
    let chosen_utility = v.eval(&top.subset)?;
    let optimal_utility = if exact_optimum {
        brute_force_optimal(v, k)?.1
    } else {
        baseline.max_utility
    };
    let normalized_diff =
        normalized_utility_difference(v, &top.subset, optimal_utility, baseline.mean_utility).ok();
    Ok(SelectionOutcome {
        k,
        chosen: top.subset,
        chosen_utility,
        optimal_utility,
        optimal_exact: exact_optimum,
        random_mean_utility: baseline.mean_utility,
        random_max_utility: baseline.max_utility,
        normalized_diff,
        tie_broken: top.tie_broken,
    })
}

/// Whether brute force is affordable for `v` at size `k` (`limit` caps oracle games).
pub fn brute_force_feasible(v: &UtilityFn, k: usize, oracle_limit: u64) -> bool {
    let n = v.n();
    if n > MAX_DENSE_PLAYERS || k > n {
        return false;
    }
    let count = binomial(n, k);
    if v.is_oracle() {
        count <= oracle_limit
    } else {
        count <= MAX_BRUTE_FORCE
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::fixtures::{random_dense, table1};
    use crate::games::make_modular;

    #[test]
    fn top_k_basic_and_ties() {
        let vv = ValueVector::exact(vec![0.1, 0.5, 0.3]);
        let top = top_k_select(&vv, 2).unwrap();
        assert_eq!(top.subset.to_indices(), vec![1, 2]);
        assert!(!top.tie_broken);

        let tied = ValueVector::exact(vec![0.3, 0.3, 0.1]);
        let top = top_k_select(&tied, 1).unwrap();
        assert_eq!(top.subset.to_indices(), vec![0]);
        assert!(top.tie_broken);

        assert!(top_k_select(&vv, 0).is_err());
        assert!(top_k_select(&vv, 4).is_err());
        assert_eq!(top_k_select(&vv, 3).unwrap().subset, Subset::full(3));
    }

    #[test]
    fn brute_force_examples() {
        let m = make_modular(5, 0.0, vec![0.2, 0.9, -0.1, 0.5, 0.4]).unwrap();
        assert_eq!(brute_force_optimal(&m, 2).unwrap().0.to_indices(), vec![1, 3]);

        let (v, _) = table1();
        let (s, u) = brute_force_optimal(&v, 2).unwrap();
        assert_eq!(s.to_indices(), vec![0, 1]);
        assert_eq!(u, 2.0 / 3.0);
        assert!(brute_force_optimal(&v, 4).is_err());
    }

    #[test]
    fn brute_force_matches_second_pass() {
        let v = random_dense(12, RngSeed(6)).unwrap();
        let (s, u) = brute_force_optimal(&v, 6).unwrap();
        // Independent pass over all masks with popcount 6.
        let mut best = (0u64, f64::NEG_INFINITY);
        for mask in 0u64..1 << 12 {
            if mask.count_ones() == 6 {
                let val = v.value(&Subset::from_mask(12, mask).unwrap());
                if val > best.1 {
                    best = (mask, val);
                }
            }
        }
        assert_eq!((s.mask(), u), best);
    }

    #[test]
    fn baseline_constant_and_replay() {
        let c = make_modular(6, 0.7, vec![0.0; 6]).unwrap();
        let b = random_baseline(&c, 3, 100, RngSeed(1)).unwrap();
        assert_eq!((b.max_utility, b.min_utility), (0.7, 0.7));
        assert!((b.mean_utility - 0.7).abs() < 1e-12);

        let v = random_dense(8, RngSeed(2)).unwrap();
        let a = random_baseline(&v, 4, 1000, RngSeed(5)).unwrap();
        assert_eq!(a, random_baseline(&v, 4, 1000, RngSeed(5)).unwrap());
        assert!(a.max_utility >= a.mean_utility && a.mean_utility >= a.min_utility);
        assert!(random_baseline(&v, 4, 0, RngSeed(5)).is_err());
    }

    #[test]
    fn baseline_covers_optimum() {
        let n = 10;
        let v = random_dense(n, RngSeed(3)).unwrap();
        let k = 3;
        let samples = binomial(n, k) as usize * 50;
        let b = random_baseline(&v, k, samples, RngSeed(4)).unwrap();
        assert_eq!(b.max_utility, brute_force_optimal(&v, k).unwrap().1);
    }

    #[test]
    fn normalized_difference_identities() {
        let m = make_modular(4, 0.0, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let best = Subset::from_indices(4, &[2, 3]).unwrap();
        assert_eq!(normalized_utility_difference(&m, &best, 7.0, 5.0).unwrap(), 0.0);
        let avg = Subset::from_indices(4, &[0, 3]).unwrap();
        assert_eq!(normalized_utility_difference(&m, &avg, 7.0, 5.0).unwrap(), -1.0);
        assert!(matches!(
            normalized_utility_difference(&m, &avg, 5.0, 5.0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn feasibility() {
        let v = random_dense(10, RngSeed(0)).unwrap();
        assert!(brute_force_feasible(&v, 5, 0));
        let big = crate::mlcore::KernelUtility::from_weights(vec![1.0; 40]);
        assert!(!brute_force_feasible(&UtilityFn::Kernel(big), 3, 1 << 40));
    }
}
