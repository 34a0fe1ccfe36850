//! Resolved pipeline configuration. Precedence: command-line flags, then the
//! `--config` TOML file, then the defaults below.

use std::path::Path;

use acf_core::bounds::BoundConfig;
use acf_core::data::{CsvSchema, FilterMode, SplitSpec};
use acf_core::eval::ExperimentConfig;
use acf_core::format::ModelKind;
use acf_core::synthetic::SeparatedSpec;
use acf_core::training::TrainConfig;
use acf_service::engine::PruningChoice;
use anyhow::Context;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Seed for every random choice in the pipeline.
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub demo: DemoConfig,
    pub ingest: IngestConfig,
    pub train: TrainSection,
    pub bounds: BoundConfig,
    pub prototypes: PrototypeConfig,
    pub evaluate: EvaluateConfig,
    pub serve: ServeConfig,
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text =
            std::fs::read_to_string(path).with_context(|| format!("config file not found: {}", path.display()))?;
        let table: toml::Table =
            toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))?;
        check_keys(&table, &Self::key_template()?, "").with_context(|| format!("invalid config file {}", path.display()))?;
        table.try_into().with_context(|| format!("invalid config file {}", path.display()))
    }

    /// Every accepted key. Flattened sections ignore unknown keys, so they
    /// are checked against this instead.
    fn key_template() -> anyhow::Result<toml::Table> {
        let mut c = Self::default();
        c.prototypes.beta = Some(0.0);
        c.serve.store = Some(String::new());
        c.evaluate.params.pruning = Some(Default::default());
        Ok(toml::Table::try_from(&c)?)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}

fn check_keys(table: &toml::Table, template: &toml::Table, prefix: &str) -> anyhow::Result<()> {
    for (k, v) in table {
        let Some(t) = template.get(k) else { anyhow::bail!("unknown key `{prefix}{k}`") };
        if let (toml::Value::Table(v), toml::Value::Table(t)) = (v, t) {
            check_keys(v, t, &format!("{prefix}{k}."))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub n_users: usize,
    pub density: f64,
    #[serde(flatten)]
    pub model: SeparatedSpec,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { n_users: 600, density: 0.8, model: SeparatedSpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub min_ratings_per_user: usize,
    pub min_ratings_per_item: usize,
    pub n_test_users: usize,
    pub filter_mode: FilterMode,
    pub user_column: usize,
    pub item_column: usize,
    pub rating_column: usize,
    pub has_header: bool,
    pub delimiter: char,
    pub rho: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            min_ratings_per_user: 1,
            min_ratings_per_item: 1,
            n_test_users: 100,
            filter_mode: FilterMode::FixedPoint,
            user_column: 0,
            item_column: 1,
            rating_column: 2,
            has_header: true,
            delimiter: ',',
            rho: 6,
        }
    }
}

impl IngestConfig {
    pub fn schema(&self) -> anyhow::Result<CsvSchema> {
        anyhow::ensure!(self.delimiter.is_ascii(), "delimiter must be an ASCII character");
        Ok(CsvSchema {
            user_column: self.user_column,
            item_column: self.item_column,
            rating_column: self.rating_column,
            has_header: self.has_header,
            delimiter: self.delimiter as u8,
            rho: self.rho,
        })
    }

    pub fn split_spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            min_ratings_per_user: self.min_ratings_per_user,
            min_ratings_per_item: self.min_ratings_per_item,
            n_test_users: self.n_test_users,
            seed,
            filter_mode: self.filter_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub model_kind: ModelKind,
    #[serde(flatten)]
    pub params: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { model_kind: ModelKind::Mcvq, params: TrainConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrototypeConfig {
    /// Target share of items to keep; ignored when `beta` is set.
    pub fraction: f64,
    pub beta: Option<f64>,
}

impl Default for PrototypeConfig {
    fn default() -> Self {
        Self { fraction: 0.4, beta: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Query,
    Pruning,
    Prototype,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    pub experiments: Vec<Experiment>,
    /// Also write SVG plots.
    pub svg: bool,
    #[serde(flatten)]
    pub params: ExperimentConfig,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            experiments: vec![Experiment::Query, Experiment::Pruning, Experiment::Prototype],
            svg: false,
            params: ExperimentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub addr: String,
    /// Session log; sessions are kept in memory only when unset.
    pub store: Option<String>,
    pub evoi_threshold: f64,
    pub pruning: PruningChoice,
    pub use_prototypes: bool,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            store: None,
            evoi_threshold: 0.0,
            pruning: PruningChoice::PerResponse,
            use_prototypes: false,
        }
    }
}
