//! Utility functions `v: 2^N -> R` and the named game constructions.

use std::fmt;
use std::io::{BufRead, Read, Write};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlcore::KernelUtility;
use crate::mtm::{MonotoneTransform, MtmModel};
use crate::subsets::{enumerate_subsets, RngSeed, Subset, MAX_DENSE_PLAYERS};

/// Player-count ceiling for exhaustive certification and exact values.
pub const MAX_EXACT_PLAYERS: usize = 20;

/// A set function evaluated by arbitrary code, e.g. a training pipeline.
///
/// Implementations must be pure: equal subsets give bit-identical values.
pub trait SetFunction: Send + Sync + fmt::Debug {
    fn players(&self) -> usize;
    fn value(&self, s: &Subset) -> f64;
}

/// Values of a game for every coalition, indexed by mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseTable {
    n: usize,
    values: Vec<f64>,
}

impl DenseTable {
    /// Builds a table and shifts it so that `v(empty) = 0`.
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        let mut table = DenseTable::new_unshifted(n, values)?;
        let offset = table.values[0];
        if offset != 0.0 {
            log::warn!("shifting dense game by {offset} so that v(empty) = 0");
            for v in &mut table.values {
                *v -= offset;
            }
        }
        Ok(table)
    }

    /// Builds a table keeping `v(empty)` as given.
    pub fn new_unshifted(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || n > MAX_DENSE_PLAYERS {
            return Err(Error::capacity(
                format!("dense table over {n} players"),
                MAX_DENSE_PLAYERS,
            ));
        }
        if values.len() != 1 << n {
            return Err(Error::domain(format!(
                "dense table for n = {n} needs {} values, got {}",
                1usize << n,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite value at mask {pos}")));
        }
        Ok(DenseTable { n, values })
    }

    /// Tabulates any set function over all `2^n` coalitions (no shift applied).
    pub fn tabulate(n: usize, f: impl Fn(&Subset) -> f64) -> Result<Self> {
        let values = enumerate_subsets(n, None)?.map(|s| f(&s)).collect();
        DenseTable::new_unshifted(n, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, mask: usize) -> f64 {
        self.values[mask]
    }

    /// True when some entry falls outside `[0, 1]`.
    pub fn range_violation(&self) -> bool {
        self.values.iter().any(|v| !(0.0..=1.0).contains(v))
    }

    /// Text form: player count on the first line, then one value per line in mask order.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.n)?;
        for v in &self.values {
            writeln!(w, "{v:?}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(l) if l.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let (line, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let header = header?;
        let n: usize = header.trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad player count {header:?}"),
        })?;
        if n == 0 || n > MAX_DENSE_PLAYERS {
            return Err(Error::capacity(
                format!("dense table over {n} players"),
                MAX_DENSE_PLAYERS,
            ));
        }
        let mut values = Vec::with_capacity(1 << n);
        for (line, text) in lines {
            let text = text?;
            let v: f64 = text.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad value {text:?}"),
            })?;
            values.push(v);
        }
        DenseTable::new_unshifted(n, values)
    }

    const MAGIC: &'static [u8; 4] = b"SHPT";

    /// Binary form: `SHPT`, `n` as little-endian u32, then `2^n` little-endian f64.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Parse {
                line: 0,
                message: "not a binary dense table".into(),
            });
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        let n = u32::from_le_bytes(buf4) as usize;
        if n == 0 || n > MAX_DENSE_PLAYERS {
            return Err(Error::capacity(
                format!("dense table over {n} players"),
                MAX_DENSE_PLAYERS,
            ));
        }
        let mut values = Vec::with_capacity(1 << n);
        let mut buf8 = [0u8; 8];
        for _ in 0..1usize << n {
            r.read_exact(&mut buf8)?;
            values.push(f64::from_le_bytes(buf8));
        }
        DenseTable::new_unshifted(n, values)
    }
}

/// `v(S) = w0 + sum of w_i over i in S`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Modular {
    pub w0: f64,
    pub w: Vec<f64>,
}

impl Modular {
    #[inline]
    pub fn value(&self, s: &Subset) -> f64 {
        self.w0 + s.iter().map(|i| self.w[i]).sum::<f64>()
    }
}

/// Commander game: 1 when the coalition meets `t` in exactly one player.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Commander {
    pub t: Subset,
}

impl Commander {
    #[inline]
    pub fn value(&self, s: &Subset) -> f64 {
        if s.intersection(&self.t).len() == 1 {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug)]
pub enum UtilityFn {
    Dense(DenseTable),
    Modular(Modular),
    Mtm(MtmModel),
    Commander(Commander),
    Kernel(KernelUtility),
    Oracle(Arc<dyn SetFunction>),
}

impl UtilityFn {
    pub fn n(&self) -> usize {
        match self {
            UtilityFn::Dense(t) => t.n,
            UtilityFn::Modular(m) => m.w.len(),
            UtilityFn::Mtm(m) => m.n(),
            UtilityFn::Commander(c) => c.t.n(),
            UtilityFn::Kernel(k) => k.n(),
            UtilityFn::Oracle(o) => o.players(),
        }
    }

    /// Evaluates without the dimension check.
    #[inline]
    pub fn value(&self, s: &Subset) -> f64 {
        debug_assert_eq!(s.n(), self.n());
        match self {
            UtilityFn::Dense(t) => t.values[s.mask() as usize],
            UtilityFn::Modular(m) => m.value(s),
            UtilityFn::Mtm(m) => m.value(s),
            UtilityFn::Commander(c) => c.value(s),
            UtilityFn::Kernel(k) => k.value(s),
            UtilityFn::Oracle(o) => o.value(s),
        }
    }

    pub fn eval(&self, s: &Subset) -> Result<f64> {
        utility_eval(self, s)
    }

    /// Whether evaluation is expensive (training-backed).
    pub fn is_oracle(&self) -> bool {
        matches!(self, UtilityFn::Oracle(_))
    }

    /// Dense table of this game. Closed forms are tabulated as-is, without
    /// forcing `v(empty) = 0`.
    pub fn to_dense(&self) -> Result<DenseTable> {
        match self {
            UtilityFn::Dense(t) => Ok(t.clone()),
            other => DenseTable::tabulate(other.n(), |s| other.value(s)),
        }
    }

    /// The same game as a dense table variant.
    pub fn densified(&self) -> Result<UtilityFn> {
        Ok(UtilityFn::Dense(self.to_dense()?))
    }
}

impl From<DenseTable> for UtilityFn {
    fn from(t: DenseTable) -> Self {
        UtilityFn::Dense(t)
    }
}

pub fn utility_eval(v: &UtilityFn, s: &Subset) -> Result<f64> {
    if s.n() != v.n() {
        return Err(Error::domain(format!(
            "subset over {} players passed to a {}-player game",
            s.n(),
            v.n()
        )));
    }
    Ok(v.value(s))
}

pub fn make_commander_game(n: usize, t: Subset) -> Result<UtilityFn> {
    if t.n() != n {
        return Err(Error::domain("commander set has the wrong player count"));
    }
    if t.is_empty() {
        return Err(Error::domain("commander set must be nonempty"));
    }
    Ok(UtilityFn::Commander(Commander { t }))
}

pub fn make_modular(n: usize, w0: f64, w: Vec<f64>) -> Result<UtilityFn> {
    if w.len() != n {
        return Err(Error::domain(format!("expected {n} weights, got {}", w.len())));
    }
    if !w0.is_finite() || w.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("modular weights must be finite"));
    }
    Ok(UtilityFn::Modular(Modular { w0, w }))
}

/// Partition of the players into low-quality (`bad_set`) and clean points.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeterogeneousSpec {
    pub n: usize,
    pub bad_set: Subset,
}

impl HeterogeneousSpec {
    pub fn clean_set(&self) -> Subset {
        self.bad_set.complement()
    }
}

/// Random game where swapping any bad point for a clean one never lowers utility.
///
/// Built as an MTM game whose clean weights all exceed the bad weights,
/// under a random strictly increasing transform, then certified exhaustively.
pub fn make_heterogeneous(spec: &HeterogeneousSpec, seed: RngSeed) -> Result<UtilityFn> {
    let n = spec.n;
    if spec.bad_set.n() != n {
        return Err(Error::domain("bad set has the wrong player count"));
    }
    if spec.bad_set.is_empty() || spec.bad_set.len() == n {
        return Err(Error::domain("bad set must be nonempty and proper"));
    }
    if n > MAX_EXACT_PLAYERS {
        return Err(Error::capacity(
            format!("heterogeneous certification over {n} players"),
            MAX_EXACT_PLAYERS,
        ));
    }
    let mut rng = seed.stream(0);
    let w: Vec<f64> = (0..n)
        .map(|i| {
            if spec.bad_set.contains(i) {
                rng.random_range(-1.0..0.9)
            } else {
                rng.random_range(1.0..2.0)
            }
        })
        .collect();
    let w0 = rng.random_range(-0.5..0.5);
    let lo = w0 + w.iter().filter(|x| **x < 0.0).sum::<f64>();
    let hi = w0 + w.iter().filter(|x| **x > 0.0).sum::<f64>();
    let f = MonotoneTransform::random_increasing(&mut rng, lo, hi, 8);
    let model = MtmModel::new(w0, w, f)?;
    let table = DenseTable::new(n, DenseTable::tabulate(n, |s| model.value(s))?.values)?;
    let game = UtilityFn::Dense(table);
    let check = check_heterogeneous_condition(&game, &spec.bad_set)?;
    if !check.holds {
        return Err(Error::Internal(format!(
            "heterogeneous construction violated its premise at {:?}",
            check.witness
        )));
    }
    Ok(game)
}

/// A triple `(i, j, S)` with `v(S + i) > v(S + j)`, `i` bad and `j` clean.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeterogeneityWitness {
    pub bad: usize,
    pub clean: usize,
    pub rest: Subset,
    pub with_bad: f64,
    pub with_clean: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HeterogeneityCheck {
    pub holds: bool,
    pub witness: Option<HeterogeneityWitness>,
}

/// Checks `v(S + i) <= v(S + j)` for every bad `i`, clean `j` and `S` avoiding both.
pub fn check_heterogeneous_condition(v: &UtilityFn, bad_set: &Subset) -> Result<HeterogeneityCheck> {
    let n = v.n();
    if n > MAX_EXACT_PLAYERS {
        return Err(Error::capacity(
            format!("exhaustive premise check over {n} players"),
            MAX_EXACT_PLAYERS,
        ));
    }
    if bad_set.n() != n {
        return Err(Error::domain("bad set has the wrong player count"));
    }
    let table = v.to_dense()?;
    let clean = bad_set.complement();
    for i in bad_set.iter() {
        for j in clean.iter() {
            let pair = (1usize << i) | (1usize << j);
            for mask in 0..1usize << n {
                if mask & pair != 0 {
                    continue;
                }
                let with_bad = table.at(mask | 1 << i);
                let with_clean = table.at(mask | 1 << j);
                if with_bad > with_clean {
                    return Ok(HeterogeneityCheck {
                        holds: false,
                        witness: Some(HeterogeneityWitness {
                            bad: i,
                            clean: j,
                            rest: Subset::from_mask_unchecked(n, mask as u64),
                            with_bad,
                            with_clean,
                        }),
                    });
                }
            }
        }
    }
    Ok(HeterogeneityCheck {
        holds: true,
        witness: None,
    })
}

pub mod fixtures {
    //! Small hand-written games.

    use super::*;

    /// The three-player pair with identical Shapley values `(1/3, 1/3, 1/3)`.
    ///
    /// In `v` every pair is worth 2/3; in `v'` players 0 and 1 are duplicates,
    /// so `v'({0,1}) = 2/3 < v'({0,2}) = 1`.
    pub fn table1() -> (UtilityFn, UtilityFn) {
        let third = 1.0 / 3.0;
        let two_thirds = 2.0 / 3.0;
        // mask order: {}, {0}, {1}, {0,1}, {2}, {0,2}, {1,2}, {0,1,2}
        let v = vec![0.0, third, third, two_thirds, third, two_thirds, two_thirds, 1.0];
        let v_prime = vec![0.0, two_thirds, two_thirds, two_thirds, third, 1.0, 1.0, 1.0];
        (
            UtilityFn::Dense(DenseTable::new(3, v).expect("fixture")),
            UtilityFn::Dense(DenseTable::new(3, v_prime).expect("fixture")),
        )
    }

    /// Dense game with independent uniform `[0, 1)` entries and `v(empty) = 0`.
    pub fn random_dense(n: usize, seed: RngSeed) -> Result<UtilityFn> {
        let mut rng = seed.stream(0);
        let mut values: Vec<f64> = (0..1usize << n).map(|_| rng.random()).collect();
        values[0] = 0.0;
        Ok(UtilityFn::Dense(DenseTable::new(n, values)?))
    }
}
