//! Utility pairs that no value-based test can tell apart.
//!
//! Each [`GamePair`] holds two dense games with the same value vector `s`
//! whose orderings of two coalitions `S1`, `S2` disagree: `v(S1) >= v(S2)`
//! while `v'(S1) < v'(S2)`. Shapley pairs perturb a modular game with
//! commander games `u_T(S) = 1[|S & T| = 1]`, which have zero Shapley value
//! for `|T| >= 2`. Semivalue pairs work in the basis `w_T` of games whose
//! semivalue vanishes (`1 <= |T| <= n - 2`, plus one combination of the top
//! two layers).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::{Commander, DenseTable, UtilityFn};
use crate::subsets::{enumerate_subsets, Subset};
use crate::values::{
    binomial, check_inverse_pascal, exact_semivalue, exact_shapley, SemivalueFamily, ValueVector,
};

/// Largest player count for dense pair construction.
pub const MAX_PAIR_PLAYERS: usize = 16;

/// Default strict margin `v'(S2) - v'(S1)`.
pub const DEFAULT_MARGIN: f64 = 1e-3;

const VERIFY_TOL: f64 = 1e-9;

/// One perturbation term: `coefficient * g_T` for the commander or basis game on `set`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCoefficient {
    pub set: Subset,
    pub coefficient: f64,
    /// Which of the two games the term belongs to.
    pub target: PairSide,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSide {
    V,
    VPrime,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GamePair {
    pub v: DenseTable,
    pub v_prime: DenseTable,
    pub s: Vec<f64>,
    pub s1: Subset,
    pub s2: Subset,
    pub family: String,
    pub coefficients: Vec<PairCoefficient>,
    /// Achieved `v'(S2) - v'(S1)`.
    pub margin: f64,
}

impl GamePair {
    pub fn v_game(&self) -> UtilityFn {
        UtilityFn::Dense(self.v.clone())
    }

    pub fn v_prime_game(&self) -> UtilityFn {
        UtilityFn::Dense(self.v_prime.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn check_pair_request(s: &[f64], s1: &Subset, s2: &Subset, eps: f64) -> Result<usize> {
    let n = s.len();
    if n == 0 || n > MAX_PAIR_PLAYERS {
        return Err(Error::capacity(
            format!("pair construction over {n} players"),
            MAX_PAIR_PLAYERS,
        ));
    }
    if s1.n() != n || s2.n() != n {
        return Err(Error::domain(
            "S1 and S2 must be coalitions over the scored players",
        ));
    }
    if s1 == s2 {
        return Err(Error::domain("S1 and S2 must differ"));
    }
    for (name, set) in [("S1", s1), ("S2", s2)] {
        if set.is_empty() || set.len() == n {
            return Err(Error::domain(format!(
                "{name} must be neither empty nor the full set"
            )));
        }
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::domain(format!("margin {eps} must be positive")));
    }
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("target scores must be finite"));
    }
    Ok(n)
}

fn commander(t: &Subset, s: &Subset) -> f64 {
    Commander { t: *t }.value(s)
}

/// First `|T| >= 2` (ascending mask) with `u_T(a) = 1`, `u_T(b) = 0`.
/// Falls back to any `T` separating the two coalitions, reporting the sign of
/// `u_T(a) - u_T(b)`.
fn find_commander(n: usize, a: &Subset, b: &Subset) -> Option<(Subset, f64)> {
    let mut fallback = None;
    for t in enumerate_subsets(n, None).ok()? {
        if t.len() < 2 {
            continue;
        }
        let d = commander(&t, a) - commander(&t, b);
        if d == 1.0 && t.intersection(b).len() != 1 {
            return Some((t, 1.0));
        }
        if d != 0.0 && fallback.is_none() {
            fallback = Some((t, d));
        }
    }
    fallback
}

/// Pair of games with Shapley value `s` and opposite orderings of `S1`, `S2`.
pub fn construct_shapley_pair(s: &[f64], s1: &Subset, s2: &Subset, eps: f64) -> Result<GamePair> {
    let n = check_pair_request(s, s1, s2, eps)?;
    let base = |x: &Subset| x.iter().map(|i| s[i]).sum::<f64>();
    let gap = base(s1) - base(s2);

    let no_direction = || {
        Error::domain(format!(
            "no commander game separates {:?} and {:?} at n = {n}",
            s1.to_indices(),
            s2.to_indices()
        ))
    };
    // v: push the gap to at least +1 (or keep it if already nonnegative).
    let (t, sign) = find_commander(n, s1, s2).ok_or_else(no_direction)?;
    let alpha = sign * ((-gap).max(0.0) + 1.0);
    // v': force v'(S2) - v'(S1) >= eps.
    let (tp, sign_p) = find_commander(n, s2, s1).ok_or_else(no_direction)?;
    let alpha_p = sign_p * (eps + gap).max(0.0);

    let v = DenseTable::tabulate(n, |x| base(x) + alpha * commander(&t, x))?;
    let v_prime = DenseTable::tabulate(n, |x| base(x) + alpha_p * commander(&tp, x))?;
    let pair = GamePair {
        margin: v_prime.at(s2.mask() as usize) - v_prime.at(s1.mask() as usize),
        v,
        v_prime,
        s: s.to_vec(),
        s1: *s1,
        s2: *s2,
        family: "shapley".into(),
        coefficients: vec![
            PairCoefficient {
                set: t,
                coefficient: alpha,
                target: PairSide::V,
            },
            PairCoefficient {
                set: tp,
                coefficient: alpha_p,
                target: PairSide::VPrime,
            },
        ],
    };
    verify_pair(&pair, exact_shapley, eps)?;
    Ok(pair)
}

fn verify_pair(pair: &GamePair, values: impl Fn(&UtilityFn) -> Result<ValueVector>, eps: f64) -> Result<()> {
    for (name, game) in [("v", pair.v_game()), ("v'", pair.v_prime_game())] {
        let phi = values(&game)?;
        let worst = phi
            .phi
            .iter()
            .zip(&pair.s)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if worst > VERIFY_TOL * pair.s.iter().fold(1.0f64, |m, x| m.max(x.abs())) {
            return Err(Error::Internal(format!(
                "{name} values deviate from the target by {worst:e}"
            )));
        }
    }
    let (a, b) = (pair.s1.mask() as usize, pair.s2.mask() as usize);
    if !(pair.v.at(a) >= pair.v.at(b)) {
        return Err(Error::Internal("v does not rank S1 at or above S2".into()));
    }
    // Allow rounding in the tabulated sums; the coefficient targets exactly eps.
    if !(pair.margin >= eps * (1.0 - 1e-6)) {
        return Err(Error::Internal(format!("margin {} below {eps}", pair.margin)));
    }
    Ok(())
}

/// The game `w_T` whose semivalue vanishes for `1 <= |T| <= n - 2`:
/// `w_T(S) = sum_{c=0}^{|S|-|T|} (-1)^c C(|S|-|T|, c) / q^(c+|T|)_(c+|T|)` for `S ⊇ T`,
/// zero otherwise.
pub fn dragan_basis_game(fam: &SemivalueFamily, n: usize, t: &Subset) -> Result<UtilityFn> {
    Ok(UtilityFn::Dense(basis_table(fam, n, t)?))
}

fn check_family(fam: &SemivalueFamily, n: usize) -> Result<()> {
    if fam.n_max() < n {
        return Err(Error::domain(format!(
            "family {:?} is defined up to n = {}, need {n}",
            fam.name,
            fam.n_max()
        )));
    }
    let pascal = check_inverse_pascal(fam, n);
    if let Some(bad) = pascal.violation {
        return Err(Error::domain(format!(
            "family {:?} fails the inverse Pascal condition at t = {}, k = {}: {} vs {}",
            fam.name, bad.t, bad.k, bad.lhs, bad.rhs
        )));
    }
    Ok(())
}

fn basis_table(fam: &SemivalueFamily, n: usize, t: &Subset) -> Result<DenseTable> {
    if n == 0 || n > MAX_PAIR_PLAYERS {
        return Err(Error::capacity(
            format!("basis game over {n} players"),
            MAX_PAIR_PLAYERS,
        ));
    }
    if t.n() != n || t.is_empty() {
        return Err(Error::domain(
            "basis set must be a nonempty coalition over n players",
        ));
    }
    check_family(fam, n)?;
    let tl = t.len();
    let mut inv = vec![0.0; n + 1];
    for (m, slot) in inv.iter_mut().enumerate().skip(tl) {
        let q = fam.weight(m, m);
        if q == 0.0 {
            return Err(Error::SingularBasis(format!(
                "family {:?} has q^({m})_{m} = 0",
                fam.name
            )));
        }
        *slot = 1.0 / q;
    }
    // Value depends only on |S| - |T| for S ⊇ T.
    let by_excess: Vec<f64> = (0..=n - tl)
        .map(|e| {
            (0..=e)
                .map(|c| {
                    let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                    sign * binomial(e, c) as f64 * inv[c + tl]
                })
                .sum()
        })
        .collect();
    DenseTable::tabulate(n, |x| {
        if t.is_subset_of(x) {
            by_excess[x.len() - tl]
        } else {
            0.0
        }
    })
}

/// Null directions of the semivalue, in a fixed order: `w_T` for
/// `1 <= |T| <= n - 2` by ascending mask, then `w_N + sum_i w_(N - i)`.
fn null_directions(fam: &SemivalueFamily, n: usize) -> Result<Vec<(Subset, DenseTable)>> {
    let mut out = Vec::new();
    for t in enumerate_subsets(n, None)? {
        if (1..=n.saturating_sub(2)).contains(&t.len()) {
            out.push((t, basis_table(fam, n, &t)?));
        }
    }
    let full = Subset::full(n);
    let mut top = basis_table(fam, n, &full)?.values().to_vec();
    for i in 0..n {
        let w = basis_table(fam, n, &full.without(i))?;
        for (a, b) in top.iter_mut().zip(w.values()) {
            *a += b;
        }
    }
    out.push((full, DenseTable::new_unshifted(n, top)?));
    Ok(out)
}

/// Pair of games with semivalue `s` under `fam` and opposite orderings of `S1`, `S2`.
///
/// The base game is `-sum_i s_i w_(N - i)`, whose semivalue is `s`; the two
/// games add multiples of one null direction each. In the `coefficients`, the
/// set `N` stands for the combined top-layer direction.
pub fn construct_semivalue_pair(
    fam: &SemivalueFamily,
    s: &[f64],
    s1: &Subset,
    s2: &Subset,
    eps: f64,
) -> Result<GamePair> {
    let n = check_pair_request(s, s1, s2, eps)?;
    check_family(fam, n)?;
    fam.check_normalization(n)?;
    let full = Subset::full(n);
    let mut base = vec![0.0; 1 << n];
    for (i, si) in s.iter().enumerate() {
        let w = basis_table(fam, n, &full.without(i))?;
        for (a, b) in base.iter_mut().zip(w.values()) {
            *a -= si * b;
        }
    }
    let (a, b) = (s1.mask() as usize, s2.mask() as usize);
    let gap = base[a] - base[b];
    let dirs = null_directions(fam, n)?;
    let (t, dir) = dirs.iter().find(|(_, d)| d.at(a) != d.at(b)).ok_or_else(|| {
        Error::domain(format!(
            "every {:?}-null game agrees on {:?} and {:?}; no pair exists",
            fam.name,
            s1.to_indices(),
            s2.to_indices()
        ))
    })?;
    let d = dir.at(a) - dir.at(b);
    let beta = ((-gap).max(0.0) + 1.0) / d;
    let beta_p = -(eps + gap).max(0.0) / d;

    let shifted = |coef: f64| -> Result<DenseTable> {
        DenseTable::new_unshifted(
            n,
            base.iter().zip(dir.values()).map(|(x, y)| x + coef * y).collect(),
        )
    };
    let v = shifted(beta)?;
    let v_prime = shifted(beta_p)?;
    let pair = GamePair {
        margin: v_prime.at(b) - v_prime.at(a),
        v,
        v_prime,
        s: s.to_vec(),
        s1: *s1,
        s2: *s2,
        family: fam.name.clone(),
        coefficients: vec![
            PairCoefficient {
                set: *t,
                coefficient: beta,
                target: PairSide::V,
            },
            PairCoefficient {
                set: *t,
                coefficient: beta_p,
                target: PairSide::VPrime,
            },
        ],
    };
    verify_pair(&pair, |g| exact_semivalue(g, fam), eps)?;
    Ok(pair)
}

/// A decision rule on value vectors: probability of rejecting `v(S1) >= v(S2)`.
pub trait HypothesisTest {
    fn reject_probability(&self, values: &ValueVector) -> f64;
}

/// Rejects with a fixed probability regardless of the values.
#[derive(Clone, Copy, Debug)]
pub struct ConstantTest(pub f64);

impl HypothesisTest for ConstantTest {
    fn reject_probability(&self, _: &ValueVector) -> f64 {
        self.0
    }
}

/// Rejects exactly when `sum_{S1} phi < sum_{S2} phi`.
#[derive(Clone, Debug)]
pub struct SubsetSumTest {
    pub s1: Subset,
    pub s2: Subset,
}

impl HypothesisTest for SubsetSumTest {
    fn reject_probability(&self, values: &ValueVector) -> f64 {
        if values.coalition_score(&self.s1) < values.coalition_score(&self.s2) {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    /// Infimum of `1 - h` over games with `v(S1) >= v(S2)`; `+inf` when none.
    pub true_neg: f64,
    /// Infimum of `h` over games with `v(S1) < v(S2)`; `+inf` when none.
    pub true_pos: f64,
    pub null_vacuous: bool,
    pub alternative_vacuous: bool,
    pub null_count: usize,
    pub alternative_count: usize,
}

/// Metrics of `h` over a finite family of games, using exact Shapley values.
/// Ties `v(S1) = v(S2)` count towards the null bucket.
pub fn evaluate_test_metrics(
    h: &dyn HypothesisTest,
    games: &[UtilityFn],
    s1: &Subset,
    s2: &Subset,
) -> Result<TestMetrics> {
    let (mut true_neg, mut true_pos) = (f64::INFINITY, f64::INFINITY);
    let (mut null_count, mut alternative_count) = (0, 0);
    for g in games {
        let phi = exact_shapley(g)?;
        let p = h.reject_probability(&phi);
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("test returned {p}, outside [0, 1]")));
        }
        if g.eval(s1)? >= g.eval(s2)? {
            null_count += 1;
            true_neg = true_neg.min(1.0 - p);
        } else {
            alternative_count += 1;
            true_pos = true_pos.min(p);
        }
    }
    Ok(TestMetrics {
        true_neg,
        true_pos,
        null_vacuous: null_count == 0,
        alternative_vacuous: alternative_count == 0,
        null_count,
        alternative_count,
    })
}
