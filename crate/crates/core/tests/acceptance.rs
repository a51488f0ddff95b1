//! End-to-end acceptance criteria. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits nonzero if any criterion fails.

use std::time::{Duration, Instant};

use rand::Rng;
use shapsel::adversary::{
    construct_shapley_pair, dragan_basis_game, evaluate_test_metrics, HypothesisTest, SubsetSumTest,
    DEFAULT_MARGIN,
};
use shapsel::consistency::{consistency_index_exact, consistency_index_mc};
use shapsel::games::fixtures::{random_dense, table1};
use shapsel::games::{
    check_heterogeneous_condition, make_commander_game, make_heterogeneous, DenseTable, HeterogeneousSpec,
};
use shapsel::mlcore::{
    flip_labels, generate_gaussian_dataset, kernel_threshold_utility, validation_accuracy_utility, Kernel,
    LogRegHyper,
};
use shapsel::mtm::{
    fit_linear_ls, fit_mtm, mtm_bound, mtm_topk_optimality_check, MtmFitConfig, MtmModel, UtilitySampleSet,
};
use shapsel::selection::{brute_force_optimal, random_baseline, top_k_select};
use shapsel::subsets::enumerate_subsets;
use shapsel::values::{
    exact_semivalue, exact_shapley, permutation_mc_shapley, permutation_mc_shapley_with, McOptions,
    SemivalueFamily,
};
use shapsel::{RngSeed, Subset, UtilityFn};

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Shapley value by averaging marginals over all `n!` orderings.
fn shapley_by_permutations(v: &UtilityFn) -> Vec<f64> {
    fn orders(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in orders(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }
    let n = v.n();
    let all = orders(n);
    let mut phi = vec![0.0; n];
    for order in &all {
        let mut s = Subset::empty(n);
        let mut prev = v.value(&s);
        for &i in order {
            s.insert(i);
            let cur = v.value(&s);
            phi[i] += cur - prev;
            prev = cur;
        }
    }
    phi.iter().map(|x| x / all.len() as f64).collect()
}

/// Correlation of `v(S)` and `v(S')` by summing over all `4^n` coalition pairs.
fn consistency_by_double_enumeration(v: &UtilityFn, rho: f64) -> f64 {
    let n = v.n();
    let keep = (1.0 + rho) / 2.0;
    let flip = (1.0 - rho) / 2.0;
    let size = 1u64 << n;
    let vals: Vec<f64> = (0..size)
        .map(|m| v.value(&Subset::from_mask(n, m).unwrap()))
        .collect();
    let p = 1.0 / size as f64;
    let mean: f64 = vals.iter().sum::<f64>() * p;
    let var: f64 = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() * p;
    let mut cross = 0.0;
    for a in 0..size as usize {
        for b in 0..size as usize {
            let d = (a ^ b).count_ones() as i32;
            cross += p * keep.powi(n as i32 - d) * flip.powi(d) * (vals[a] - mean) * (vals[b] - mean);
        }
    }
    cross / var
}

/// Best size-k utility by scanning every mask.
fn best_of_size(v: &UtilityFn, k: usize) -> f64 {
    let n = v.n();
    (0u64..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| v.value(&Subset::from_mask(n, m).unwrap()))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn c1_table_one() -> Check {
    let (v, vp) = table1();
    let third = 1.0 / 3.0;
    for (name, g) in [("v", &v), ("v'", &vp)] {
        let phi = exact_shapley(g).map_err(fail)?;
        let oracle = shapley_by_permutations(g);
        for (i, (x, y)) in phi.phi.iter().zip(&oracle).enumerate() {
            ensure((x - third).abs() <= 1e-12, || format!("{name} phi[{i}] = {x}"))?;
            ensure((y - third).abs() <= 1e-12, || {
                format!("{name} oracle phi[{i}] = {y}")
            })?;
        }
    }
    // Players 1, 2, 3 are indices 0, 1, 2.
    let a = Subset::from_indices(3, &[0, 1]).unwrap();
    let b = Subset::from_indices(3, &[0, 2]).unwrap();
    ensure(v.value(&a) >= v.value(&b), || "v ranks {1,3} above {1,2}".into())?;
    ensure(vp.value(&a) < vp.value(&b), || {
        "v' does not rank {1,3} above {1,2}".into()
    })?;
    Ok(format!(
        "v: {:.4} vs {:.4}, v': {:.4} vs {:.4}",
        v.value(&a),
        v.value(&b),
        vp.value(&a),
        vp.value(&b)
    ))
}

fn c2_shapley_pairs() -> Check {
    let n = 5;
    let mut rng = RngSeed(2024).stream(0);
    let s: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let proper: Vec<Subset> = enumerate_subsets(n, None)
        .map_err(fail)?
        .filter(|x| !x.is_empty() && x.len() < n)
        .collect();
    let mut pairs = 0;
    let mut worst_sum = f64::NEG_INFINITY;
    for a in &proper {
        for b in &proper {
            if a == b {
                continue;
            }
            let pair = construct_shapley_pair(&s, a, b, DEFAULT_MARGIN).map_err(fail)?;
            let (v, vp) = (pair.v_game(), pair.v_prime_game());
            for g in [&v, &vp] {
                let phi = exact_shapley(g).map_err(fail)?;
                let err = phi
                    .phi
                    .iter()
                    .zip(&s)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                ensure(err <= 1e-9, || {
                    format!("phi error {err:e} at {:?} {:?}", a.to_indices(), b.to_indices())
                })?;
            }
            ensure(v.value(a) >= v.value(b), || "v ordering".into())?;
            ensure(vp.value(a) < vp.value(b), || "v' ordering".into())?;
            ensure(vp.value(b) - vp.value(a) >= DEFAULT_MARGIN * (1.0 - 1e-6), || {
                "margin".into()
            })?;
            let h = SubsetSumTest { s1: *a, s2: *b };
            let pv = h.reject_probability(&exact_shapley(&v).map_err(fail)?);
            let pw = h.reject_probability(&exact_shapley(&vp).map_err(fail)?);
            ensure(pv.to_bits() == pw.to_bits(), || "test separated the pair".into())?;
            let m = evaluate_test_metrics(&h, &[v, vp], a, b).map_err(fail)?;
            let total = m.true_neg + m.true_pos;
            ensure(total <= 1.0, || format!("true_neg + true_pos = {total}"))?;
            worst_sum = worst_sum.max(total);
            pairs += 1;
        }
    }
    Ok(format!(
        "{pairs} ordered pairs, max true_neg + true_pos = {worst_sum}"
    ))
}

fn c3_null_spaces() -> Check {
    let mut commanders = 0;
    for n in 2..=8 {
        for t in enumerate_subsets(n, None).map_err(fail)?.filter(|t| t.len() >= 2) {
            let phi = exact_shapley(&make_commander_game(n, t).map_err(fail)?).map_err(fail)?;
            let err = phi.phi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            ensure(err <= 1e-12, || {
                format!("commander {:?}: {err:e}", t.to_indices())
            })?;
            commanders += 1;
        }
    }
    let mut basis = 0;
    for n in 2..=6 {
        for fam in [
            SemivalueFamily::shapley(n),
            SemivalueFamily::banzhaf(n),
            SemivalueFamily::leave_one_out(n),
        ] {
            for t in enumerate_subsets(n, None)
                .map_err(fail)?
                .filter(|t| (1..=n - 2).contains(&t.len()))
            {
                let w = dragan_basis_game(&fam, n, &t).map_err(fail)?;
                let phi = exact_semivalue(&w, &fam).map_err(fail)?;
                let err = phi.phi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                ensure(err <= 1e-9, || {
                    format!("{} n={n} T={:?}: {err:e}", fam.name, t.to_indices())
                })?;
                basis += 1;
            }
            let full = Subset::full(n);
            let mut top = dragan_basis_game(&fam, n, &full)
                .map_err(fail)?
                .to_dense()
                .map_err(fail)?
                .values()
                .to_vec();
            for i in 0..n {
                let w = dragan_basis_game(&fam, n, &full.without(i)).map_err(fail)?;
                for (x, y) in top.iter_mut().zip(w.to_dense().map_err(fail)?.values()) {
                    *x += y;
                }
            }
            let top = UtilityFn::Dense(DenseTable::new_unshifted(n, top).map_err(fail)?);
            let phi = exact_semivalue(&top, &fam).map_err(fail)?;
            let err = phi.phi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            ensure(err <= 1e-9, || {
                format!("{} n={n} combined top layer: {err:e}", fam.name)
            })?;
        }
    }
    Ok(format!(
        "{commanders} commander games, {basis} basis games, 15 combined games"
    ))
}

fn c4_mtm_optimality() -> Check {
    for g in 0..100 {
        let m = MtmModel::random(10, RngSeed(4000 + g));
        let game = UtilityFn::Mtm(m.clone());
        let phi = exact_shapley(&game).map_err(fail)?;
        for k in 1..=9 {
            ensure(mtm_topk_optimality_check(&m, k).map_err(fail)?, || {
                format!("game {g}, k = {k}")
            })?;
            // Independent scan of all size-k masks.
            let chosen = top_k_select(&phi, k).map_err(fail)?.subset;
            ensure(game.value(&chosen) == best_of_size(&game, k), || {
                format!("scan: game {g}, k = {k}")
            })?;
        }
    }
    Ok("100 games x 9 sizes".into())
}

fn c5_heterogeneous() -> Check {
    let n = 10;
    for g in 0..50u64 {
        let mut rng = RngSeed(5000 + g).stream(0);
        let bad_size = 2 + (g % 3) as usize;
        let bad: Vec<usize> = rand::seq::index::sample(&mut rng, n, bad_size).into_vec();
        let spec = HeterogeneousSpec {
            n,
            bad_set: Subset::from_indices(n, &bad).unwrap(),
        };
        let v = make_heterogeneous(&spec, RngSeed(6000 + g)).map_err(fail)?;
        let check = check_heterogeneous_condition(&v, &spec.bad_set).map_err(fail)?;
        ensure(check.holds, || format!("game {g}: premise fails"))?;
        let clean = spec.clean_set();
        let k = clean.len();
        let top = top_k_select(&exact_shapley(&v).map_err(fail)?, k)
            .map_err(fail)?
            .subset;
        ensure(top == clean, || {
            format!(
                "game {g}: top-k {:?} != clean {:?}",
                top.to_indices(),
                clean.to_indices()
            )
        })?;
        let (opt, best) = brute_force_optimal(&v, k).map_err(fail)?;
        ensure(v.value(&clean) == best, || {
            format!("game {g}: clean set is not optimal")
        })?;
        ensure(best == best_of_size(&v, k), || {
            format!("game {g}: brute force disagrees with scan")
        })?;
        ensure(opt == clean || v.value(&opt) == v.value(&clean), || {
            format!("game {g}: optimum")
        })?;
    }
    Ok("50 games".into())
}

fn c6_consistency_bound() -> Check {
    let mut max_slack = f64::NEG_INFINITY;
    let mut max_ratio = 0.0f64;
    for g in 0..20 {
        let v = random_dense(8, RngSeed(600 + g)).map_err(fail)?;
        let samples = UtilitySampleSet::complete_enumeration(&v).map_err(fail)?;
        let linear = fit_linear_ls(&samples).map_err(fail)?;
        let lin_res = linear.normalized_residual.ok_or("degenerate utility")?;
        for rho in [0.0, 0.1, 0.2, 0.3] {
            let cor = consistency_index_exact(&v, rho).map_err(fail)?.cor;
            let bound = mtm_bound(rho, cor).map_err(fail)?;
            ensure(lin_res <= bound + 1e-9, || {
                format!("game {g} rho {rho}: {lin_res} > {bound}")
            })?;
            max_slack = max_slack.max(lin_res - bound);
        }
        let fit = fit_mtm(&samples, &MtmFitConfig::default()).map_err(fail)?;
        let res = fit.normalized_residual.ok_or("degenerate utility")?;
        ensure(res <= lin_res * 1.05, || {
            format!("game {g}: mtm {res} vs linear {lin_res}")
        })?;
        max_ratio = max_ratio.max(res / lin_res);
    }
    Ok(format!(
        "max residual - bound = {max_slack:.3e}, max mtm/linear = {max_ratio:.4}"
    ))
}

fn c7_consistency_oracle() -> Check {
    let mut worst_exact = 0.0f64;
    let mut worst_z = 0.0f64;
    for n in 1..=8usize {
        let v = random_dense(n, RngSeed(700 + n as u64)).map_err(fail)?;
        for (j, rho) in [0.0, 0.1, 0.2, 0.3].into_iter().enumerate() {
            let exact = consistency_index_exact(&v, rho).map_err(fail)?.cor;
            let oracle = consistency_by_double_enumeration(&v, rho);
            ensure((exact - oracle).abs() <= 1e-10, || {
                format!("n={n} rho={rho}: {exact} vs {oracle}")
            })?;
            worst_exact = worst_exact.max((exact - oracle).abs());
            let est = consistency_index_mc(&v, rho, 100_000, RngSeed(7000 + 10 * n as u64 + j as u64))
                .map_err(fail)?;
            let se = est.stderr.ok_or("missing standard error")?;
            let z = (est.cor - exact).abs() / se;
            ensure(z <= 3.0, || {
                format!("n={n} rho={rho}: mc {} exact {exact} se {se}", est.cor)
            })?;
            worst_z = worst_z.max(z);
        }
    }
    Ok(format!(
        "max |exact - oracle| = {worst_exact:.2e}, max |z| = {worst_z:.2}"
    ))
}

fn c8_mc_shapley() -> Check {
    let v = random_dense(12, RngSeed(800)).map_err(fail)?;
    let exact = exact_shapley(&v).map_err(fail)?.phi;
    let est = permutation_mc_shapley(&v, 50_000, RngSeed(801))
        .map_err(fail)?
        .phi;
    let max_err = est
        .iter()
        .zip(&exact)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(max_err <= 0.01, || format!("max error {max_err}"))?;

    let runs: Vec<Vec<f64>> = (0..30)
        .map(|r| {
            permutation_mc_shapley_with(&v, 50_000, RngSeed(900 + r), &McOptions::default())
                .map(|run| run.values.phi)
        })
        .collect::<shapsel::Result<_>>()
        .map_err(fail)?;
    let mut worst_z = 0.0f64;
    for i in 0..12 {
        let xs: Vec<f64> = runs.iter().map(|r| r[i]).collect();
        let mean = xs.iter().sum::<f64>() / 30.0;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 29.0).sqrt();
        let z = (mean - exact[i]).abs() / (sd / 30f64.sqrt());
        ensure(z <= 3.0, || format!("player {i}: z = {z}"))?;
        worst_z = worst_z.max(z);
    }
    Ok(format!(
        "max error {max_err:.4}, max |z| over 30 seeds = {worst_z:.2}"
    ))
}

fn c9_mtm_recovery() -> Check {
    let truth = MtmModel::random(15, RngSeed(900));
    let v = UtilityFn::Mtm(truth);
    let samples = UtilitySampleSet::sample_uniform(&v, 10_000, 0.8, RngSeed(901)).map_err(fail)?;
    let fit = fit_mtm(&samples, &MtmFitConfig::default()).map_err(fail)?;
    let res = fit.normalized_residual.ok_or("degenerate utility")?;
    ensure(res <= 0.01, || format!("normalized residual {res}"))?;
    Ok(format!(
        "normalized residual {res:.2e} after {} iterations",
        fit.iterations
    ))
}

fn c10_kernel() -> Check {
    let pool = generate_gaussian_dataset(12, 3, 1.0, RngSeed(1000)).map_err(fail)?;
    let x = [0.3, -0.4, 0.1];
    let (v, w) = kernel_threshold_utility(&pool, (&x, 1), Kernel::Rbf { gamma: 0.5 }).map_err(fail)?;
    let mut checked = 0;
    for s in enumerate_subsets(12, None).map_err(fail)? {
        let total: f64 = s.iter().map(|i| w[i]).sum();
        let expect = if total >= 0.0 { 1.0 } else { 0.0 };
        ensure(v.value(&s) == expect, || {
            format!("mismatch at {:?}", s.to_indices())
        })?;
        checked += 1;
    }
    let phi = exact_shapley(&v).map_err(fail)?;
    for k in 1..=12 {
        let chosen = top_k_select(&phi, k).map_err(fail)?.subset;
        let best = best_of_size(&v, k);
        ensure(v.value(&chosen) == best, || {
            format!("k = {k}: {} < {best}", v.value(&chosen))
        })?;
    }
    Ok(format!("{checked} subsets agree; top-k optimal for k = 1..12"))
}

fn c11_label_flips() -> Check {
    let n = 50;
    let k = 35;
    let hyper = LogRegHyper::default();
    let clean_pool = generate_gaussian_dataset(n, 5, 4.0, RngSeed(1100)).map_err(fail)?;
    let val = generate_gaussian_dataset(500, 5, 4.0, RngSeed(1101)).map_err(fail)?;
    let mut summary = Vec::new();
    for ratio in [0.3, 0.0] {
        let (pool, flipped) = flip_labels(&clean_pool, ratio, RngSeed(1102)).map_err(fail)?;
        let v = validation_accuracy_utility(&pool, &val, hyper.clone()).map_err(fail)?;
        let phi = permutation_mc_shapley(&v, 10_000, RngSeed(1103)).map_err(fail)?;
        let chosen = top_k_select(&phi, k).map_err(fail)?.subset;
        let utility = v.value(&chosen);
        let baseline = random_baseline(&v, k, 10_000, RngSeed(1104)).map_err(fail)?;
        if ratio > 0.0 {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| phi.phi[a].total_cmp(&phi.phi[b]));
            let bottom = &order[..(0.3 * n as f64).round() as usize];
            let caught = flipped.iter().filter(|id| bottom.contains(id)).count();
            let frac = caught as f64 / flipped.len() as f64;
            ensure(frac >= 0.8, || {
                format!("only {caught}/{} flipped ids in the bottom 30%", flipped.len())
            })?;
            ensure(utility > baseline.mean_utility, || {
                format!("selected {utility} <= random mean {}", baseline.mean_utility)
            })?;
            summary.push(format!(
                "30%: {caught}/{} flipped in bottom 30%, selected {utility:.3} vs mean {:.3}",
                flipped.len(),
                baseline.mean_utility
            ));
        } else {
            ensure(
                baseline.min_utility <= utility && utility <= baseline.max_utility,
                || {
                    format!(
                        "selected {utility} outside [{}, {}]",
                        baseline.min_utility, baseline.max_utility
                    )
                },
            )?;
            summary.push(format!(
                "0%: selected {utility:.3} in [{:.3}, {:.3}]",
                baseline.min_utility, baseline.max_utility
            ));
        }
    }
    Ok(summary.join("; "))
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("1 table-one pair", Duration::from_millis(1), c1_table_one),
        (
            "2 shapley pair constructor",
            Duration::from_secs(30),
            c2_shapley_pairs,
        ),
        ("3 null-space suites", Duration::from_secs(60), c3_null_spaces),
        (
            "4 mtm top-k optimality",
            Duration::from_secs(60),
            c4_mtm_optimality,
        ),
        (
            "5 heterogeneous quality",
            Duration::from_secs(60),
            c5_heterogeneous,
        ),
        (
            "6 consistency bound chain",
            Duration::from_secs(300),
            c6_consistency_bound,
        ),
        (
            "7 consistency oracle",
            Duration::from_secs(600),
            c7_consistency_oracle,
        ),
        ("8 mc shapley accuracy", Duration::from_secs(120), c8_mc_shapley),
        (
            "9 mtm realizable recovery",
            Duration::from_secs(120),
            c9_mtm_recovery,
        ),
        ("10 kernel utility identity", Duration::from_secs(600), c10_kernel),
        (
            "11 label-flip selection",
            Duration::from_secs(600),
            c11_label_flips,
        ),
    ];
    let mut failures = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; took {elapsed:?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS criterion {name} ({elapsed:.2?}): {detail}"),
            Err(why) => {
                failures += 1;
                println!("FAIL criterion {name} ({elapsed:.2?}): {why}");
            }
        }
    }
    println!("acceptance: {} of 11 criteria passed", 11 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
