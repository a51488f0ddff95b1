//! Subcommand definitions and their handlers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use shapsel::adversary::{construct_semivalue_pair, construct_shapley_pair, DEFAULT_MARGIN};
use shapsel::consistency::{consistency_index_exact, consistency_index_mc, MAX_EXACT_CONSISTENCY_PLAYERS};
use shapsel::mtm::{fit_mtm, MtmFitConfig, UtilitySampleSet};
use shapsel::selection::{brute_force_feasible, evaluate_selection, random_baseline};
use shapsel::values::{exact_semivalue, exact_shapley, permutation_mc_shapley, SemivalueFamily};
use shapsel::{RngSeed, Subset, UtilityFn, ValueVector};

use crate::config::{load_config, load_game};
use crate::error::{AtStage, CliError, CliResult, Stage};
use crate::experiment::run_experiment;
use crate::report::emit_report;
use crate::verify;

#[derive(Debug, Parser)]
#[command(
    name = "shapsel",
    version,
    about = "Shapley-based data valuation and selection toolkit"
)]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Shapley values of a game.
    Shapley(ShapleyArgs),
    /// Exact semivalue of a game under a named family.
    Semivalue(SemivalueArgs),
    /// Build two games with equal values and opposite orderings of S1, S2.
    Adversary(AdversaryArgs),
    /// Fit a monotonically transformed modular model to a game.
    FitMtm(FitArgs),
    /// Rho-consistency index of a game.
    Consistency(ConsistencyArgs),
    /// Top-k selection by Shapley value, scored against baselines.
    Select(SelectArgs),
    /// Run a full experiment from a JSON config.
    Experiment(ExperimentArgs),
    /// Run the built-in property suites.
    Verify(VerifyArgs),
}

/// A game: `.json` files hold a game spec, anything else a dense table.
#[derive(Debug, Args)]
pub struct GameArg {
    #[arg(long)]
    pub game: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Exact,
    Mc,
}

#[derive(Debug, Args)]
pub struct ValueArgs {
    #[arg(long, value_enum, default_value_t = Method::Exact)]
    pub method: Method,
    /// Permutations for `--method mc`.
    #[arg(long, default_value_t = 10_000)]
    pub budget: usize,
    /// Required for every sampled quantity.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ShapleyArgs {
    #[command(flatten)]
    pub game: GameArg,
    #[command(flatten)]
    pub values: ValueArgs,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SemivalueArgs {
    #[command(flatten)]
    pub game: GameArg,
    /// shapley, banzhaf or loo.
    #[arg(long, default_value = "shapley")]
    pub family: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AdversaryArgs {
    /// Target value vector, comma separated.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub scores: Vec<f64>,
    /// Members of S1 (0-based, comma separated).
    #[arg(long, value_delimiter = ',', required = true)]
    pub s1: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub s2: Vec<usize>,
    #[arg(long, default_value = "shapley")]
    pub family: String,
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub eps: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub game: GameArg,
    /// Uniform samples to fit on; 0 uses every coalition.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 32)]
    pub knots: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConsistencyArgs {
    #[command(flatten)]
    pub game: GameArg,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3")]
    pub rho: Vec<f64>,
    /// Sampled pairs; when set (or the game is large) the estimate is Monte Carlo.
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub game: GameArg,
    #[arg(long, value_delimiter = ',', required = true)]
    pub k: Vec<usize>,
    #[command(flatten)]
    pub values: ValueArgs,
    #[arg(long, default_value_t = 10_000)]
    pub baseline_samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Print results as JSON.
    #[arg(long)]
    pub json: bool,
}

fn write_out(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::io(Stage::Report, p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io(Stage::Report, "<stdout>", e)),
    }
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::invalid(Stage::Report, e.to_string()))
}

fn require_seed(seed: Option<u64>, what: &str) -> CliResult<RngSeed> {
    seed.map(RngSeed)
        .ok_or_else(|| CliError::invalid(Stage::Config, format!("{what} is sampled and needs --seed")))
}

fn compute_values(v: &UtilityFn, args: &ValueArgs) -> CliResult<ValueVector> {
    match args.method {
        Method::Exact => exact_shapley(v).at(Stage::Values),
        Method::Mc => {
            let seed = require_seed(args.seed, "permutation sampling")?;
            permutation_mc_shapley(v, args.budget, seed).at(Stage::Values)
        }
    }
}

fn values_csv(values: &ValueVector) -> CliResult<String> {
    let mut buf = Vec::new();
    values.write_csv(&mut buf).at(Stage::Report)?;
    Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
}

fn family(name: &str, n: usize) -> CliResult<SemivalueFamily> {
    SemivalueFamily::by_name(name, n).at(Stage::Config)
}

pub fn shapley(args: &ShapleyArgs) -> CliResult<()> {
    let v = load_game(&args.game.game)?;
    let values = compute_values(&v, &args.values)?;
    write_out(args.out.as_deref(), &values_csv(&values)?)
}

pub fn semivalue(args: &SemivalueArgs) -> CliResult<()> {
    let v = load_game(&args.game.game)?;
    let fam = family(&args.family, v.n())?;
    let values = exact_semivalue(&v, &fam).at(Stage::Values)?;
    write_out(args.out.as_deref(), &values_csv(&values)?)
}

pub fn adversary(args: &AdversaryArgs) -> CliResult<()> {
    let n = args.scores.len();
    let s1 = Subset::from_indices(n, &args.s1).at(Stage::Config)?;
    let s2 = Subset::from_indices(n, &args.s2).at(Stage::Config)?;
    let pair = if args.family == "shapley" {
        construct_shapley_pair(&args.scores, &s1, &s2, args.eps)
    } else {
        construct_semivalue_pair(&family(&args.family, n)?, &args.scores, &s1, &s2, args.eps)
    }
    .at(Stage::Adversary)?;
    write_out(args.out.as_deref(), &to_json(&pair)?)
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    let v = load_game(&args.game.game)?;
    let samples = if args.samples == 0 {
        UtilitySampleSet::complete_enumeration(&v)
    } else {
        let seed = require_seed(args.seed, "the fitting sample")?;
        UtilitySampleSet::sample_uniform(&v, args.samples, args.train_fraction, seed)
    }
    .at(Stage::Fit)?;
    let config = MtmFitConfig {
        knot_count: args.knots,
        ..MtmFitConfig::default()
    };
    let report = fit_mtm(&samples, &config).at(Stage::Fit)?;
    write_out(args.out.as_deref(), &to_json(&report)?)
}

pub fn consistency(args: &ConsistencyArgs) -> CliResult<()> {
    let v = load_game(&args.game.game)?;
    let sampled = args.pairs.is_some() || v.n() > MAX_EXACT_CONSISTENCY_PLAYERS;
    let mut out = Vec::with_capacity(args.rho.len());
    for (j, &rho) in args.rho.iter().enumerate() {
        let est = if sampled {
            let seed = require_seed(args.seed, "the consistency estimate")?;
            consistency_index_mc(&v, rho, args.pairs.unwrap_or(5_000), seed.derive(j as u64))
        } else {
            consistency_index_exact(&v, rho)
        };
        out.push(est.at(Stage::Consistency)?);
    }
    write_out(args.out.as_deref(), &to_json(&out)?)
}

pub fn select(args: &SelectArgs) -> CliResult<()> {
    let v = load_game(&args.game.game)?;
    let values = compute_values(&v, &args.values)?;
    let seed = require_seed(args.values.seed, "the random baseline")?;
    let mut outcomes = Vec::with_capacity(args.k.len());
    for (j, &k) in args.k.iter().enumerate() {
        let baseline = random_baseline(&v, k, args.baseline_samples, seed.derive(1000 + j as u64))
            .at(Stage::Selection)?;
        let exact = brute_force_feasible(&v, k, 0);
        outcomes.push(evaluate_selection(&v, &values, k, &baseline, exact).at(Stage::Selection)?);
    }
    write_out(args.out.as_deref(), &to_json(&outcomes)?)
}

pub fn experiment(args: &ExperimentArgs) -> CliResult<PathBuf> {
    let cfg = load_config(&args.config)?;
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.config.output.as_ref().map(|p| cfg.resolve(p)))
        .ok_or_else(|| CliError::invalid(Stage::Config, "no output directory: pass --out or set output"))?;
    let report = run_experiment(&cfg)?;
    emit_report(&report, &dir)?;
    Ok(dir)
}

/// Returns whether every suite passed.
pub fn verify(args: &VerifyArgs) -> CliResult<bool> {
    let results = verify::run_all();
    if args.json {
        write_out(None, &to_json(&results)?)?;
    } else {
        for r in &results {
            let tag = if r.passed { "PASS" } else { "FAIL" };
            println!("{tag} {} ({} ms): {}", r.name, r.millis, r.detail);
        }
    }
    Ok(results.iter().all(|r| r.passed))
}
