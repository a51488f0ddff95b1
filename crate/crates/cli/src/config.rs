//! Experiment configuration: one JSON document, defaults filled in on load.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use shapsel::games::{
    fixtures, make_commander_game, make_heterogeneous, make_modular, DenseTable, HeterogeneousSpec,
};
use shapsel::mlcore::{generate_gaussian_dataset, Kernel, LogRegHyper, TabularDataset};
use shapsel::mtm::{MtmFitConfig, MtmModel};
use shapsel::{RngSeed, Subset, UtilityFn};

use crate::dataset::load_csv_dataset;
use crate::error::{AtStage, CliError, CliResult, Stage};

/// A utility given directly as a game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GameSpec {
    /// Dense table file: text (`n` then `2^n` values) or binary (`.bin`).
    DenseFile {
        path: PathBuf,
    },
    RandomDense {
        n: usize,
        seed: u64,
    },
    RandomMtm {
        n: usize,
        seed: u64,
    },
    Mtm(MtmModel),
    Modular {
        w0: f64,
        w: Vec<f64>,
    },
    Commander {
        n: usize,
        t: Vec<usize>,
    },
    Heterogeneous {
        n: usize,
        bad: Vec<usize>,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Gaussian {
        n_points: usize,
        dim: usize,
        separation: f64,
        #[serde(default = "default_validation_points")]
        validation_points: usize,
    },
    Csv {
        path: PathBuf,
        validation_path: PathBuf,
    },
}

fn default_validation_points() -> usize {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilitySpec {
    /// Validation accuracy of logistic regression.
    Logistic {
        #[serde(default)]
        hyper: LogRegHyper,
    },
    /// Kernel vote on one validation row.
    Kernel { kernel: Kernel, test_index: usize },
}

impl Default for UtilitySpec {
    fn default() -> Self {
        UtilitySpec::Logistic {
            hyper: LogRegHyper::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    Game(GameSpec),
    Dataset {
        data: DatasetSpec,
        #[serde(default)]
        utility: UtilitySpec,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValuesMethod {
    Exact,
    PermutationMc { budget: usize },
}

impl Default for ValuesMethod {
    fn default() -> Self {
        ValuesMethod::PermutationMc { budget: 10_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MtmSection {
    pub fit: MtmFitConfig,
    /// Target number of utility samples reused from value estimation.
    pub samples: usize,
    pub train_fraction: f64,
}

impl Default for MtmSection {
    fn default() -> Self {
        MtmSection {
            fit: MtmFitConfig::default(),
            samples: 10_000,
            train_fraction: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    /// Root seed; every stochastic stage derives its own seed from it.
    pub seed: u64,
    pub source: Source,
    /// Label-flip ratios; dataset sources only.
    #[serde(default = "default_flip_ratios")]
    pub flip_ratios: Vec<f64>,
    #[serde(default)]
    pub values: ValuesMethod,
    /// Selection sizes; defaults to `round(n * j / 10)` for `j = 1..=9`.
    #[serde(default)]
    pub k_grid: Option<Vec<usize>>,
    #[serde(default = "default_baseline_samples")]
    pub baseline_samples: usize,
    /// Most utility evaluations brute force may spend on an ML-backed utility.
    #[serde(default = "default_oracle_limit")]
    pub brute_force_oracle_limit: u64,
    #[serde(default)]
    pub mtm: MtmSection,
    #[serde(default = "default_rho_grid")]
    pub rho_grid: Vec<f64>,
    #[serde(default = "default_consistency_pairs")]
    pub consistency_pairs: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_flip_ratios() -> Vec<f64> {
    vec![0.0]
}

fn default_baseline_samples() -> usize {
    10_000
}

fn default_oracle_limit() -> u64 {
    5_000
}

fn default_rho_grid() -> Vec<f64> {
    vec![0.1, 0.2, 0.3]
}

fn default_consistency_pairs() -> usize {
    5_000
}

/// A parsed config plus the hash of its canonical form.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
    /// Directory relative paths in the config resolve against.
    pub base_dir: PathBuf,
}

/// SHA-256 of the document re-serialised with sorted keys and no whitespace.
pub fn canonical_hash(value: &serde_json::Value) -> String {
    // serde_json maps keep keys sorted, so re-serialising canonicalises.
    let text = serde_json::to_string(value).expect("JSON values always serialise");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parse_config(text: &str, base_dir: &Path) -> CliResult<LoadedConfig> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| CliError::invalid(Stage::Config, format!("config is not JSON: {e}")))?;
    let hash = canonical_hash(&value);
    let config: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| CliError::invalid(Stage::Config, e.to_string()))?;
    let loaded = LoadedConfig {
        config,
        hash,
        base_dir: base_dir.to_path_buf(),
    };
    loaded.validate()?;
    Ok(loaded)
}

pub fn load_config(path: &Path) -> CliResult<LoadedConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(Stage::Config, path, e))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    parse_config(&text, &base)
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn validate(&self) -> CliResult<()> {
        let c = &self.config;
        let bad = |m: String| Err(CliError::invalid(Stage::Config, m));
        for files in self.referenced_files() {
            if !files.exists() {
                return bad(format!("referenced file {} does not exist", files.display()));
            }
        }
        if c.flip_ratios.is_empty() {
            return bad("flip_ratios must not be empty".into());
        }
        if let Some(r) = c.flip_ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return bad(format!("flip ratio {r} outside [0, 1]"));
        }
        if matches!(c.source, Source::Game(_)) && c.flip_ratios != [0.0] {
            return bad("flip ratios apply to dataset sources only".into());
        }
        if let Some(r) = c.rho_grid.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return bad(format!("rho {r} outside [0, 1]"));
        }
        if c.baseline_samples == 0 {
            return bad("baseline_samples must be positive".into());
        }
        if !(c.mtm.train_fraction > 0.0 && c.mtm.train_fraction <= 1.0) {
            return bad("mtm.train_fraction must lie in (0, 1]".into());
        }
        if let ValuesMethod::PermutationMc { budget: 0 } = c.values {
            return bad("permutation budget must be positive".into());
        }
        Ok(())
    }

    fn referenced_files(&self) -> Vec<PathBuf> {
        match &self.config.source {
            Source::Game(GameSpec::DenseFile { path }) => vec![self.resolve(path)],
            Source::Dataset {
                data:
                    DatasetSpec::Csv {
                        path,
                        validation_path,
                    },
                ..
            } => vec![self.resolve(path), self.resolve(validation_path)],
            _ => vec![],
        }
    }
}

fn subset_of(n: usize, idx: &[usize], stage: Stage) -> CliResult<Subset> {
    Subset::from_indices(n, idx).at(stage)
}

/// Reads a dense table from text or, for `.bin` files, the binary layout.
pub fn read_dense_file(path: &Path) -> CliResult<DenseTable> {
    let file = fs::File::open(path).map_err(|e| CliError::io(Stage::Ingest, path, e))?;
    if path.extension().is_some_and(|e| e == "bin") {
        DenseTable::read_binary(BufReader::new(file)).at(Stage::Ingest)
    } else {
        DenseTable::read_text(BufReader::new(file)).at(Stage::Ingest)
    }
}

impl GameSpec {
    pub fn build(&self, base_dir: &Path) -> CliResult<UtilityFn> {
        let stage = Stage::Utility;
        match self {
            GameSpec::DenseFile { path } => {
                let p = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                Ok(UtilityFn::Dense(read_dense_file(&p)?))
            }
            GameSpec::RandomDense { n, seed } => fixtures::random_dense(*n, RngSeed(*seed)).at(stage),
            GameSpec::RandomMtm { n, seed } => Ok(UtilityFn::Mtm(MtmModel::random(*n, RngSeed(*seed)))),
            GameSpec::Mtm(m) => Ok(UtilityFn::Mtm(m.clone())),
            GameSpec::Modular { w0, w } => make_modular(w.len(), *w0, w.clone()).at(stage),
            GameSpec::Commander { n, t } => make_commander_game(*n, subset_of(*n, t, stage)?).at(stage),
            GameSpec::Heterogeneous { n, bad, seed } => {
                let spec = HeterogeneousSpec {
                    n: *n,
                    bad_set: subset_of(*n, bad, stage)?,
                };
                make_heterogeneous(&spec, RngSeed(*seed)).at(stage)
            }
        }
    }
}

/// Reads a game spec from a JSON file, or treats any other file as a dense table.
pub fn load_game(path: &Path) -> CliResult<UtilityFn> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(Stage::Ingest, path, e))?;
        let spec: GameSpec = serde_json::from_str(&text)
            .map_err(|e| CliError::invalid(Stage::Ingest, format!("{}: {e}", path.display())))?;
        spec.build(path.parent().unwrap_or(Path::new(".")))
    } else {
        Ok(UtilityFn::Dense(read_dense_file(path)?))
    }
}

/// Pool and validation data for a dataset source.
pub fn build_datasets(spec: &DatasetSpec, cfg: &LoadedConfig) -> CliResult<(TabularDataset, TabularDataset)> {
    match spec {
        DatasetSpec::Gaussian {
            n_points,
            dim,
            separation,
            validation_points,
        } => {
            let root = RngSeed(cfg.config.seed);
            let pool =
                generate_gaussian_dataset(*n_points, *dim, *separation, root.derive(1)).at(Stage::Ingest)?;
            let val = generate_gaussian_dataset(*validation_points, *dim, *separation, root.derive(2))
                .at(Stage::Ingest)?;
            Ok((pool, val))
        }
        DatasetSpec::Csv {
            path,
            validation_path,
        } => Ok((
            load_csv_dataset(&cfg.resolve(path))?,
            load_csv_dataset(&cfg.resolve(validation_path))?,
        )),
    }
}
