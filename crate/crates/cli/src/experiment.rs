//! The end-to-end selection pipeline for one config.

use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use serde::{Deserialize, Serialize};

use shapsel::consistency::{
    consistency_index_exact, consistency_index_mc, ConsistencyEstimate, MAX_EXACT_CONSISTENCY_PLAYERS,
};
use shapsel::games::MAX_EXACT_PLAYERS;
use shapsel::mlcore::{flip_labels, kernel_threshold_utility, validation_accuracy_utility, TabularDataset};
use shapsel::mtm::{fit_mtm, mtm_bound, FitReport, UtilitySampleSet};
use shapsel::selection::{
    brute_force_feasible, evaluate_selection, random_baseline, RandomBaseline, SelectionOutcome,
};
use shapsel::values::{exact_shapley, permutation_mc_shapley_with, McOptions};
use shapsel::{Error, RngSeed, UtilityFn, ValueVector};

use crate::config::{build_datasets, LoadedConfig, Source, UtilitySpec, ValuesMethod};
use crate::error::{AtStage, CliError, CliResult, Stage};

/// Seed labels for the stages of one record; combined with the flip index.
const SEED_FLIP: u64 = 10;
const SEED_VALUES: u64 = 11;
const SEED_BASELINE: u64 = 12;
const SEED_FIT: u64 = 13;
const SEED_CONSISTENCY: u64 = 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub outcome: SelectionOutcome,
    pub baseline: RandomBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub seed: RngSeed,
    pub sample_count: usize,
    pub report: Option<FitReport>,
    /// Why no fit was produced, if so.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRecord {
    pub estimate: Option<ConsistencyEstimate>,
    pub rho: f64,
    /// `(1 - cor) / (1 - rho^2)`; absent for `rho = 1` or failed estimates.
    pub mtm_bound: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipRecord {
    /// `None` for game sources.
    pub flip_ratio: Option<f64>,
    pub flip_seed: Option<RngSeed>,
    pub flipped_ids: Vec<usize>,
    pub players: usize,
    pub values: ValueVector,
    /// Per-player standard errors for Monte Carlo values.
    pub value_stderr: Option<Vec<f64>>,
    pub selections: Vec<SelectionRecord>,
    pub fit: FitRecord,
    pub consistency: Vec<ConsistencyRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub tool: ToolInfo,
    pub config_hash: String,
    /// Seconds since the Unix epoch; the only field that differs between reruns.
    pub timestamp: u64,
    pub config: crate::config::ExperimentConfig,
    pub records: Vec<FlipRecord>,
}

fn default_k_grid(n: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = (1..=9)
        .map(|j| ((n * j) as f64 / 10.0).round() as usize)
        .filter(|&k| k >= 1 && k <= n)
        .collect();
    ks.dedup();
    ks
}

fn build_utility(pool: &TabularDataset, val: &TabularDataset, spec: &UtilitySpec) -> CliResult<UtilityFn> {
    match spec {
        UtilitySpec::Logistic { hyper } => {
            validation_accuracy_utility(pool, val, hyper.clone()).at(Stage::Utility)
        }
        UtilitySpec::Kernel { kernel, test_index } => {
            if *test_index >= val.len() {
                return Err(CliError::invalid(
                    Stage::Utility,
                    format!("test_index {test_index} beyond {} validation rows", val.len()),
                ));
            }
            let point = (val.row(*test_index), val.label(*test_index));
            Ok(kernel_threshold_utility(pool, point, *kernel)
                .at(Stage::Utility)?
                .0)
        }
    }
}

/// Runs the whole pipeline. Nothing is written to disk here.
pub fn run_experiment(cfg: &LoadedConfig) -> CliResult<SelectionReport> {
    let c = &cfg.config;
    let root = RngSeed(c.seed);
    let mut records = Vec::new();
    match &c.source {
        Source::Game(spec) => {
            let v = spec.build(&cfg.base_dir)?;
            records.push(run_record(cfg, &v, None, None, Vec::new(), root.derive(100))?);
        }
        Source::Dataset { data, utility } => {
            let (pool, val) = build_datasets(data, cfg)?;
            for (idx, &ratio) in c.flip_ratios.iter().enumerate() {
                let base = root.derive(100 + idx as u64);
                let flip_seed = base.derive(SEED_FLIP);
                let (flipped, ids) = flip_labels(&pool, ratio, flip_seed).at(Stage::Ingest)?;
                let v = build_utility(&flipped, &val, utility)?;
                info!("flip ratio {ratio}: {} flipped labels", ids.len());
                records.push(run_record(cfg, &v, Some(ratio), Some(flip_seed), ids, base)?);
            }
        }
    }
    let mut config = c.clone();
    if config.k_grid.is_none() {
        config.k_grid = Some(
            records
                .first()
                .map_or_else(Vec::new, |r| default_k_grid(r.players)),
        );
    }
    Ok(SelectionReport {
        tool: ToolInfo {
            name: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
        config_hash: cfg.hash.clone(),
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        config,
        records,
    })
}

fn run_record(
    cfg: &LoadedConfig,
    v: &UtilityFn,
    flip_ratio: Option<f64>,
    flip_seed: Option<RngSeed>,
    flipped_ids: Vec<usize>,
    base: RngSeed,
) -> CliResult<FlipRecord> {
    let c = &cfg.config;
    let n = v.n();
    let fit_seed = base.derive(SEED_FIT);

    // Values, keeping the utility samples they touched for the MTM fit.
    let (values, value_stderr, samples) = match c.values {
        ValuesMethod::Exact => {
            if n > MAX_EXACT_PLAYERS {
                return Err(CliError::invalid(
                    Stage::Values,
                    format!("exact values need n <= {MAX_EXACT_PLAYERS}, got {n}"),
                ));
            }
            let values = exact_shapley(v).at(Stage::Values)?;
            let samples = if (1usize << n) <= c.mtm.samples {
                UtilitySampleSet::complete_enumeration(v).at(Stage::Fit)?
            } else {
                UtilitySampleSet::sample_uniform(v, c.mtm.samples, c.mtm.train_fraction, fit_seed)
                    .at(Stage::Fit)?
            };
            (values, None, samples)
        }
        ValuesMethod::PermutationMc { budget } => {
            let opts = McOptions {
                record_permutations: c.mtm.samples.div_ceil(n.max(1)).min(budget),
                ..McOptions::default()
            };
            let run =
                permutation_mc_shapley_with(v, budget, base.derive(SEED_VALUES), &opts).at(Stage::Values)?;
            let samples = UtilitySampleSet::from_pairs(n, run.samples, c.mtm.train_fraction, fit_seed)
                .at(Stage::Fit)?;
            (run.values, Some(run.stderr), samples)
        }
    };

    let ks = c.k_grid.clone().unwrap_or_else(|| default_k_grid(n));
    let mut selections = Vec::with_capacity(ks.len());
    for (j, &k) in ks.iter().enumerate() {
        if k == 0 || k > n {
            return Err(CliError::invalid(
                Stage::Selection,
                format!("k = {k} outside 1..={n}"),
            ));
        }
        let seed = base.derive(SEED_BASELINE).derive(j as u64);
        let baseline = random_baseline(v, k, c.baseline_samples, seed).at(Stage::Selection)?;
        let exact = brute_force_feasible(v, k, c.brute_force_oracle_limit);
        let outcome = evaluate_selection(v, &values, k, &baseline, exact).at(Stage::Selection)?;
        selections.push(SelectionRecord { outcome, baseline });
    }

    let fit = match fit_mtm(&samples, &c.mtm.fit) {
        Ok(report) => FitRecord {
            seed: fit_seed,
            sample_count: samples.samples.len(),
            report: Some(report),
            error: None,
        },
        Err(e @ (Error::Domain(_) | Error::Degenerate(_) | Error::SingularBasis(_))) => FitRecord {
            seed: fit_seed,
            sample_count: samples.samples.len(),
            report: None,
            error: Some(e.to_string()),
        },
        Err(e) => return Err(e).at(Stage::Fit),
    };

    let cons_seed = base.derive(SEED_CONSISTENCY);
    let use_exact = n <= MAX_EXACT_CONSISTENCY_PLAYERS && !v.is_oracle();
    let mut consistency = Vec::with_capacity(c.rho_grid.len());
    for (j, &rho) in c.rho_grid.iter().enumerate() {
        let est = if use_exact {
            consistency_index_exact(v, rho)
        } else {
            consistency_index_mc(v, rho, c.consistency_pairs, cons_seed.derive(j as u64))
        };
        consistency.push(match est {
            Ok(e) => ConsistencyRecord {
                rho,
                mtm_bound: if rho < 1.0 {
                    mtm_bound(rho, e.cor).ok()
                } else {
                    None
                },
                estimate: Some(e),
                error: None,
            },
            Err(err @ Error::Degenerate(_)) => ConsistencyRecord {
                rho,
                estimate: None,
                mtm_bound: None,
                error: Some(err.to_string()),
            },
            Err(err) => return Err(err).at(Stage::Consistency),
        });
    }

    Ok(FlipRecord {
        flip_ratio,
        flip_seed,
        flipped_ids,
        players: n,
        values,
        value_stderr,
        selections,
        fit,
        consistency,
    })
}
