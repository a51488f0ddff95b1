//! Coalitions of players and seeded subset sampling.
//!
//! A [`Subset`] is a fixed-width bit set over at most [`MAX_PLAYERS`] players.
//! Dense paths (anything that enumerates `2^n` coalitions) are limited to
//! [`MAX_DENSE_PLAYERS`]; sampling-based paths accept any `n <= MAX_PLAYERS`.
//!
//! Randomness comes from [`RngSeed::stream`], a ChaCha8 generator whose
//! stream id selects an independent sequence. Parallel workers derive their
//! generator from `(seed, chunk index)`, so results never depend on how work
//! is scheduled.

use std::cmp::Ordering;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const WORDS: usize = 4;

/// Largest player count a [`Subset`] can hold.
pub const MAX_PLAYERS: usize = 64 * WORDS;

/// Largest player count for which `2^n` enumeration is allowed.
pub const MAX_DENSE_PLAYERS: usize = 24;

/// A coalition of players `0..n`. Bit `i` is set iff player `i` is a member.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Subset {
    words: [u64; WORDS],
    n: u16,
}

impl Subset {
    pub fn empty(n: usize) -> Self {
        assert!(n <= MAX_PLAYERS, "player count {n} exceeds {MAX_PLAYERS}");
        Subset {
            words: [0; WORDS],
            n: n as u16,
        }
    }

    pub fn full(n: usize) -> Self {
        let mut s = Subset::empty(n);
        for (w, word) in s.words.iter_mut().enumerate() {
            let lo = w * 64;
            if n >= lo + 64 {
                *word = u64::MAX;
            } else if n > lo {
                *word = (1u64 << (n - lo)) - 1;
            }
        }
        s
    }

    /// Builds a subset from a dense mask. Bits at or above `n` are rejected.
    pub fn from_mask(n: usize, mask: u64) -> Result<Self> {
        if n > 64 {
            return Err(Error::capacity("dense mask over more than 64 players", 64));
        }
        if n < 64 && mask >> n != 0 {
            return Err(Error::domain(format!("mask {mask:#x} has bits beyond n = {n}")));
        }
        let mut s = Subset::empty(n);
        s.words[0] = mask;
        Ok(s)
    }

    /// Like [`Subset::from_mask`] but trusts the caller on the bit range.
    #[inline]
    pub(crate) fn from_mask_unchecked(n: usize, mask: u64) -> Self {
        let mut words = [0; WORDS];
        words[0] = mask;
        Subset { words, n: n as u16 }
    }

    pub fn from_indices(n: usize, members: &[usize]) -> Result<Self> {
        if n > MAX_PLAYERS {
            return Err(Error::capacity("player count", MAX_PLAYERS));
        }
        let mut s = Subset::empty(n);
        for &i in members {
            if i >= n {
                return Err(Error::domain(format!("player {i} out of range for n = {n}")));
            }
            s.insert(i);
        }
        Ok(s)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n as usize
    }

    /// Low 64 bits of the membership mask; the whole mask when `n <= 64`.
    #[inline]
    pub fn mask(&self) -> u64 {
        self.words[0]
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        i < self.n() && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn insert(&mut self, i: usize) {
        debug_assert!(i < self.n());
        self.words[i / 64] |= 1 << (i % 64);
    }

    #[inline]
    pub fn remove(&mut self, i: usize) {
        self.words[i / 64] &= !(1 << (i % 64));
    }

    #[inline]
    pub fn with(mut self, i: usize) -> Self {
        self.insert(i);
        self
    }

    #[inline]
    pub fn without(mut self, i: usize) -> Self {
        self.remove(i);
        self
    }

    /// Number of members.
    #[inline]
    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn intersection(&self, other: &Subset) -> Subset {
        let mut out = *self;
        for (a, b) in out.words.iter_mut().zip(other.words.iter()) {
            *a &= b;
        }
        out
    }

    pub fn union(&self, other: &Subset) -> Subset {
        let mut out = *self;
        for (a, b) in out.words.iter_mut().zip(other.words.iter()) {
            *a |= b;
        }
        out
    }

    pub fn difference(&self, other: &Subset) -> Subset {
        let mut out = *self;
        for (a, b) in out.words.iter_mut().zip(other.words.iter()) {
            *a &= !b;
        }
        out
    }

    pub fn complement(&self) -> Subset {
        Subset::full(self.n()).difference(self)
    }

    pub fn is_subset_of(&self, other: &Subset) -> bool {
        self.difference(other).is_empty()
    }

    /// Member indices in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let b = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(w * 64 + b)
            })
        })
    }

    pub fn to_indices(&self) -> Vec<usize> {
        self.iter().collect()
    }
}

// Ordering is numeric order of the mask (most significant word first).
impl Ord for Subset {
    fn cmp(&self, other: &Self) -> Ordering {
        self.n
            .cmp(&other.n)
            .then_with(|| self.words.iter().rev().cmp(other.words.iter().rev()))
    }
}

impl PartialOrd for Subset {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Subset(n={}, {{", self.n)?;
        for (j, i) in self.iter().enumerate() {
            if j > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}})")
    }
}

#[derive(Serialize, Deserialize)]
struct SubsetRepr {
    n: usize,
    members: Vec<usize>,
}

impl Serialize for Subset {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        SubsetRepr {
            n: self.n(),
            members: self.to_indices(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Subset {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = SubsetRepr::deserialize(deserializer)?;
        Subset::from_indices(repr.n, &repr.members).map_err(serde::de::Error::custom)
    }
}

/// Seed for every stochastic operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Generator for an independent stream derived from this seed.
    pub fn stream(self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(stream);
        rng
    }

    /// A new seed derived from this one and a label, for nesting stochastic stages.
    pub fn derive(self, label: u64) -> RngSeed {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0 ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(label);
        RngSeed(rng.random())
    }
}

impl From<u64> for RngSeed {
    fn from(seed: u64) -> Self {
        RngSeed(seed)
    }
}

fn check_dense(n: usize) -> Result<()> {
    if n == 0 || n > MAX_DENSE_PLAYERS {
        return Err(Error::capacity(
            format!("dense enumeration over n = {n} players"),
            MAX_DENSE_PLAYERS,
        ));
    }
    Ok(())
}

/// Iterates subsets of `0..n` in ascending mask order, optionally only those
/// of size `k`.
pub fn enumerate_subsets(n: usize, size_filter: Option<usize>) -> Result<SubsetIter> {
    check_dense(n)?;
    let end = 1u64 << n;
    let (next, k) = match size_filter {
        None => (0, None),
        Some(k) if k > n => (end, Some(k)),
        Some(0) => (0, Some(0)),
        Some(k) => ((1u64 << k) - 1, Some(k)),
    };
    Ok(SubsetIter { n, next, end, k })
}

pub struct SubsetIter {
    n: usize,
    next: u64,
    end: u64,
    k: Option<usize>,
}

impl Iterator for SubsetIter {
    type Item = Subset;

    fn next(&mut self) -> Option<Subset> {
        if self.next >= self.end {
            return None;
        }
        let cur = self.next;
        self.next = match self.k {
            None => cur + 1,
            Some(0) => self.end,
            // Gosper's hack: next larger mask with the same popcount.
            Some(_) => {
                let c = cur & cur.wrapping_neg();
                let r = cur + c;
                (((r ^ cur) >> 2) / c) | r
            }
        };
        Some(Subset::from_mask_unchecked(self.n, cur))
    }
}

/// Draws a subset with every element present independently with probability 1/2.
pub fn uniform_subset<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Subset {
    let mut s = Subset::empty(n);
    let mut i = 0;
    while i < n {
        let bits: u64 = rng.random();
        let take = (n - i).min(64);
        for b in 0..take {
            if bits >> b & 1 == 1 {
                s.insert(i + b);
            }
        }
        i += take;
    }
    s
}

/// Draws a rho-correlated pair: `S` uniform, and each element's membership
/// flipped in `S'` independently with probability `(1 - rho) / 2`.
pub fn rho_correlated_pair<R: Rng + ?Sized>(n: usize, rho: f64, rng: &mut R) -> (Subset, Subset) {
    let first = uniform_subset(n, rng);
    let flip = (1.0 - rho) / 2.0;
    let mut second = first;
    for i in 0..n {
        if flip > 0.0 && rng.random::<f64>() < flip {
            if second.contains(i) {
                second.remove(i);
            } else {
                second.insert(i);
            }
        }
    }
    (first, second)
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::domain(format!("rho = {rho} outside [0, 1]")));
    }
    Ok(())
}

fn check_players(n: usize) -> Result<()> {
    if n == 0 || n > MAX_PLAYERS {
        return Err(Error::capacity(format!("player count {n}"), MAX_PLAYERS));
    }
    Ok(())
}

/// A seeded, replayable source of random subsets.
pub struct SubsetSampler {
    n: usize,
    rng: ChaCha8Rng,
}

impl SubsetSampler {
    pub fn new(n: usize, seed: RngSeed) -> Result<Self> {
        check_players(n)?;
        Ok(SubsetSampler {
            n,
            rng: seed.stream(0),
        })
    }

    pub fn uniform(&mut self) -> Subset {
        uniform_subset(self.n, &mut self.rng)
    }

    pub fn rho_pair(&mut self, rho: f64) -> Result<(Subset, Subset)> {
        check_rho(rho)?;
        Ok(rho_correlated_pair(self.n, rho, &mut self.rng))
    }
}

/// Single uniform draw; equal to the first draw of a [`SubsetSampler`] with the same seed.
pub fn sample_uniform_subset(n: usize, seed: RngSeed) -> Result<Subset> {
    Ok(SubsetSampler::new(n, seed)?.uniform())
}

/// Single rho-correlated pair; equal to the first pair of a [`SubsetSampler`] with the same seed.
pub fn sample_rho_correlated_pair(n: usize, rho: f64, seed: RngSeed) -> Result<(Subset, Subset)> {
    SubsetSampler::new(n, seed)?.rho_pair(rho)
}

pub(crate) fn validate_rho(rho: f64) -> Result<()> {
    check_rho(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn power_set_of_two() {
        let masks: Vec<u64> = enumerate_subsets(2, None).unwrap().map(|s| s.mask()).collect();
        assert_eq!(masks, vec![0, 1, 2, 3]);
    }

    #[test]
    fn size_filtered_enumeration() {
        let got: Vec<Vec<usize>> = enumerate_subsets(3, Some(2))
            .unwrap()
            .map(|s| s.to_indices())
            .collect();
        assert_eq!(got, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(enumerate_subsets(10, Some(4)).unwrap().count(), 210);
        assert_eq!(enumerate_subsets(5, Some(0)).unwrap().count(), 1);
        assert_eq!(enumerate_subsets(5, Some(6)).unwrap().count(), 0);
        assert_eq!(enumerate_subsets(24, Some(24)).unwrap().count(), 1);
    }

    #[test]
    fn twenty_players_enumerate_fully() {
        let mut count = 0usize;
        let mut last = None;
        for s in enumerate_subsets(20, None).unwrap() {
            if let Some(prev) = last {
                assert!(s.mask() > prev);
            }
            last = Some(s.mask());
            count += 1;
        }
        assert_eq!(count, 1 << 20);
    }

    #[test]
    fn enumeration_rejects_out_of_range() {
        assert!(matches!(enumerate_subsets(0, None), Err(Error::Capacity { .. })));
        assert!(matches!(enumerate_subsets(25, None), Err(Error::Capacity { .. })));
    }

    #[test]
    fn set_algebra() {
        let a = Subset::from_indices(70, &[0, 3, 65]).unwrap();
        let b = Subset::from_indices(70, &[3, 69]).unwrap();
        assert_eq!(a.intersection(&b).to_indices(), vec![3]);
        assert_eq!(a.union(&b).to_indices(), vec![0, 3, 65, 69]);
        assert_eq!(a.difference(&b).to_indices(), vec![0, 65]);
        assert_eq!(a.complement().len(), 67);
        assert!(Subset::full(70).contains(69));
        assert!(!Subset::full(70).contains(70));
        assert_eq!(Subset::full(256).len(), 256);
        assert!(Subset::from_indices(4, &[4]).is_err());
        assert!(Subset::from_mask(3, 0b1000).is_err());
    }

    #[test]
    fn ordering_follows_mask_value() {
        let lo = Subset::from_indices(80, &[63]).unwrap();
        let hi = Subset::from_indices(80, &[64]).unwrap();
        assert!(lo < hi);
        assert!(Subset::from_mask(4, 3).unwrap() < Subset::from_mask(4, 4).unwrap());
    }

    #[test]
    fn serde_round_trip() {
        let s = Subset::from_indices(9, &[1, 8]).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"n":9,"members":[1,8]}"#);
        let back: Subset = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<Subset>(r#"{"n":2,"members":[2]}"#).is_err());
    }

    #[test]
    fn single_player_is_fair_coin() {
        let mut sampler = SubsetSampler::new(1, RngSeed(3)).unwrap();
        let draws = 100_000;
        let hits = (0..draws).filter(|_| sampler.uniform().contains(0)).count();
        let p = hits as f64 / draws as f64;
        // 3 sigma of Bernoulli(1/2) at 1e5 draws is about 0.0047.
        assert!((p - 0.5).abs() < 0.005, "p = {p}");
    }

    #[test]
    fn mean_size_matches_binomial() {
        let mut sampler = SubsetSampler::new(8, RngSeed(11)).unwrap();
        let draws = 1_000_000;
        let total: usize = (0..draws).map(|_| sampler.uniform().len()).sum();
        let mean = total as f64 / draws as f64;
        // Var(size) = n/4 = 2, so sigma of the mean is sqrt(2 / 1e6).
        let sigma = (2.0f64 / draws as f64).sqrt();
        assert!((mean - 4.0).abs() <= 3.0 * sigma, "mean = {mean}");
    }

    #[test]
    fn seeded_replay() {
        let a: Vec<u64> = {
            let mut s = SubsetSampler::new(3, RngSeed(42)).unwrap();
            (0..50).map(|_| s.uniform().mask()).collect()
        };
        let b: Vec<u64> = {
            let mut s = SubsetSampler::new(3, RngSeed(42)).unwrap();
            (0..50).map(|_| s.uniform().mask()).collect()
        };
        assert_eq!(a, b);
        assert_eq!(sample_uniform_subset(3, RngSeed(42)).unwrap().mask(), a[0]);
    }

    #[test]
    fn rho_one_gives_identical_pair() {
        let mut s = SubsetSampler::new(12, RngSeed(5)).unwrap();
        for _ in 0..1000 {
            let (a, b) = s.rho_pair(1.0).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rho_out_of_range_is_rejected() {
        assert!(matches!(
            sample_rho_correlated_pair(4, 1.5, RngSeed(0)),
            Err(Error::Domain(_))
        ));
        assert!(sample_rho_correlated_pair(4, -0.1, RngSeed(0)).is_err());
    }

    fn flip_rate(rho: f64, seed: u64) -> f64 {
        let n = 6;
        let pairs = 100_000;
        let mut s = SubsetSampler::new(n, RngSeed(seed)).unwrap();
        let mut flips = 0usize;
        for _ in 0..pairs {
            let (a, b) = s.rho_pair(rho).unwrap();
            flips += (a.mask() ^ b.mask()).count_ones() as usize;
        }
        flips as f64 / (pairs * n) as f64
    }

    #[test]
    fn rho_zero_agreement_is_half() {
        let rate = flip_rate(0.0, 9);
        let sigma = (0.25f64 / 600_000.0).sqrt();
        assert!((rate - 0.5).abs() <= 3.0 * sigma, "rate = {rate}");
    }

    #[test]
    fn rho_half_flip_rate_is_quarter() {
        let rate = flip_rate(0.5, 10);
        let sigma = (0.25f64 * 0.75 / 600_000.0).sqrt();
        assert!((rate - 0.25).abs() <= 3.0 * sigma, "rate = {rate}");
    }

    #[test]
    fn second_marginal_is_uniform() {
        // Chi-square goodness of fit of S' over 2^4 cells, 15 dof.
        let n = 4;
        let draws = 100_000;
        let mut s = SubsetSampler::new(n, RngSeed(77)).unwrap();
        let mut counts = [0usize; 16];
        for _ in 0..draws {
            let (_, b) = s.rho_pair(0.3).unwrap();
            counts[b.mask() as usize] += 1;
        }
        let expected = draws as f64 / 16.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 99.9th percentile of chi-square with 15 dof.
        assert!(chi2 < 37.7, "chi2 = {chi2}");
    }

    #[test]
    fn enumeration_is_distinct() {
        let set: HashSet<u64> = enumerate_subsets(10, None).unwrap().map(|s| s.mask()).collect();
        assert_eq!(set.len(), 1024);
    }

    #[test]
    fn derived_seeds_differ() {
        let s = RngSeed(1);
        assert_ne!(s.derive(0), s.derive(1));
        assert_eq!(s.derive(4), s.derive(4));
    }
}
