//! Quick property suites behind `shapsel verify`.

use std::time::Instant;

use serde::Serialize;

use shapsel::adversary::{
    construct_semivalue_pair, construct_shapley_pair, dragan_basis_game, DEFAULT_MARGIN,
};
use shapsel::consistency::consistency_index_exact;
use shapsel::games::fixtures::{random_dense, table1};
use shapsel::games::{
    check_heterogeneous_condition, make_commander_game, make_heterogeneous, HeterogeneousSpec,
};
use shapsel::mtm::{fit_linear_ls, mtm_bound, mtm_topk_optimality_check, MtmModel, UtilitySampleSet};
use shapsel::selection::top_k_select;
use shapsel::subsets::enumerate_subsets;
use shapsel::values::{check_inverse_pascal, exact_semivalue, exact_shapley, SemivalueFamily};
use shapsel::{RngSeed, Subset, UtilityFn};

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub millis: u128,
}

type Outcome = Result<String, String>;
type Suite = (&'static str, fn() -> Outcome);

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn table_one() -> Outcome {
    let (v, vp) = table1();
    for g in [&v, &vp] {
        let phi = exact_shapley(g).map_err(fail)?;
        if phi.phi.iter().any(|x| (x - 1.0 / 3.0).abs() > 1e-12) {
            return Err(format!("values {:?}", phi.phi));
        }
    }
    let a = Subset::from_indices(3, &[0, 1]).map_err(fail)?;
    let b = Subset::from_indices(3, &[0, 2]).map_err(fail)?;
    if v.value(&a) >= v.value(&b) && vp.value(&a) < vp.value(&b) {
        Ok("equal values, opposite orderings".into())
    } else {
        Err("orderings do not disagree".into())
    }
}

fn commander_null() -> Outcome {
    let mut count = 0;
    for n in 2..=6 {
        for t in enumerate_subsets(n, None).map_err(fail)?.filter(|t| t.len() >= 2) {
            let phi = exact_shapley(&make_commander_game(n, t).map_err(fail)?).map_err(fail)?;
            if max_abs(&phi.phi) > 1e-12 {
                return Err(format!("T = {:?}", t.to_indices()));
            }
            count += 1;
        }
    }
    Ok(format!("{count} games"))
}

fn basis_null() -> Outcome {
    let mut count = 0;
    for n in 3..=5 {
        for fam in [
            SemivalueFamily::shapley(n),
            SemivalueFamily::banzhaf(n),
            SemivalueFamily::leave_one_out(n),
        ] {
            if !check_inverse_pascal(&fam, n).holds {
                return Err(format!("{} fails the inverse Pascal condition", fam.name));
            }
            for t in enumerate_subsets(n, None)
                .map_err(fail)?
                .filter(|t| (1..=n - 2).contains(&t.len()))
            {
                let w = dragan_basis_game(&fam, n, &t).map_err(fail)?;
                if max_abs(&exact_semivalue(&w, &fam).map_err(fail)?.phi) > 1e-9 {
                    return Err(format!("{} T = {:?}", fam.name, t.to_indices()));
                }
                count += 1;
            }
        }
    }
    Ok(format!("{count} games"))
}

fn pairs() -> Outcome {
    let s = [0.4, -0.1, 0.3, 0.2];
    let sets: Vec<Subset> = enumerate_subsets(4, None)
        .map_err(fail)?
        .filter(|x| !x.is_empty() && x.len() < 4)
        .collect();
    let banzhaf = SemivalueFamily::banzhaf(4);
    let mut count = 0;
    for a in &sets {
        for b in &sets {
            if a != b {
                construct_shapley_pair(&s, a, b, DEFAULT_MARGIN).map_err(fail)?;
                construct_semivalue_pair(&banzhaf, &s, a, b, DEFAULT_MARGIN).map_err(fail)?;
                count += 2;
            }
        }
    }
    Ok(format!("{count} verified pairs"))
}

fn mtm_optimality() -> Outcome {
    for g in 0..20 {
        let m = MtmModel::random(8, RngSeed(g));
        for k in 1..8 {
            if !mtm_topk_optimality_check(&m, k).map_err(fail)? {
                return Err(format!("game {g}, k = {k}"));
            }
        }
    }
    Ok("20 games".into())
}

fn heterogeneous() -> Outcome {
    for g in 0..10u64 {
        let bad = Subset::from_indices(8, &[(g % 8) as usize, ((g + 3) % 8) as usize]).map_err(fail)?;
        let spec = HeterogeneousSpec { n: 8, bad_set: bad };
        let v = make_heterogeneous(&spec, RngSeed(g)).map_err(fail)?;
        if !check_heterogeneous_condition(&v, &bad).map_err(fail)?.holds {
            return Err(format!("game {g}: premise"));
        }
        let top = top_k_select(&exact_shapley(&v).map_err(fail)?, 6)
            .map_err(fail)?
            .subset;
        if top != spec.clean_set() {
            return Err(format!("game {g}: selected {:?}", top.to_indices()));
        }
    }
    Ok("10 games".into())
}

fn consistency_bound() -> Outcome {
    for g in 0..5 {
        let v: UtilityFn = random_dense(6, RngSeed(g)).map_err(fail)?;
        let set = UtilitySampleSet::complete_enumeration(&v).map_err(fail)?;
        let res = fit_linear_ls(&set)
            .map_err(fail)?
            .normalized_residual
            .ok_or("zero variance")?;
        for rho in [0.0, 0.1, 0.2, 0.3] {
            let bound = mtm_bound(rho, consistency_index_exact(&v, rho).map_err(fail)?.cor).map_err(fail)?;
            if res > bound + 1e-9 {
                return Err(format!("game {g}, rho {rho}: {res} > {bound}"));
            }
        }
    }
    Ok("5 games x 4 rho".into())
}

/// Runs every suite; callers decide what to do with failures.
pub fn run_all() -> Vec<SuiteResult> {
    let suites: [Suite; 7] = [
        ("table-one", table_one),
        ("commander-null-space", commander_null),
        ("basis-null-space", basis_null),
        ("indistinguishable-pairs", pairs),
        ("mtm-top-k-optimality", mtm_optimality),
        ("heterogeneous-quality", heterogeneous),
        ("consistency-bound", consistency_bound),
    ];
    suites
        .into_iter()
        .map(|(name, run)| {
            let start = Instant::now();
            let out = run();
            SuiteResult {
                name,
                passed: out.is_ok(),
                detail: out.unwrap_or_else(|e| e),
                millis: start.elapsed().as_millis(),
            }
        })
        .collect()
}
