//! Experiment configuration (TOML, schema `hdr-experiment/1`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cvrmodel::{HiddenSource, ModelConfig, TrainConfig};
use crate::dayvec;
use crate::error::{Error, Result};
use crate::nn::OptimizerKind;
use crate::shiftcorr::{Alignment, ShiftConfig, ShiftMode};
use crate::synthgen::{CalendarConfig, DayType, GeneratorConfig};
use crate::transblock::FinetuneConfig;

pub const CONFIG_SCHEMA: &str = "hdr-experiment/1";
pub const GRID_SCHEMA: &str = "hdr-grid/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Main model only.
    Base,
    /// Main model trained on fully attributed (72h) labels, three days late.
    BaseNoDfm,
    /// Main model fine-tuned directly on the retrieved days at `eta1`.
    BaseDirectRetrain,
    Hdr,
    /// HDR with importance weights forced to `(1, 1)`.
    HdrNoDsc,
    /// Main model fine-tuned at `eta1` on the weighted retrieved days.
    HdrNoTransblock,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Base,
        Variant::BaseNoDfm,
        Variant::BaseDirectRetrain,
        Variant::Hdr,
        Variant::HdrNoDsc,
        Variant::HdrNoTransblock,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::BaseNoDfm => "base_no_dfm",
            Variant::BaseDirectRetrain => "base_direct_retrain",
            Variant::Hdr => "hdr",
            Variant::HdrNoDsc => "hdr_no_dsc",
            Variant::HdrNoTransblock => "hdr_no_transblock",
        }
    }

    /// Whether the variant retrieves history and adapts on promotion days.
    pub fn uses_retrieval(self) -> bool {
        !matches!(self, Variant::Base | Variant::BaseNoDfm)
    }

    pub fn uses_transblock(self) -> bool {
        matches!(self, Variant::Hdr | Variant::HdrNoDsc)
    }

    pub fn uses_shift_correction(self) -> bool {
        matches!(self, Variant::Hdr | Variant::HdrNoTransblock)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    #[serde(default = "default_preset")]
    pub preset: String,
    pub clicks_per_day: Option<usize>,
    pub truth_seed: Option<u64>,
    /// Full replacement of the preset, for experiments outside the presets.
    pub custom: Option<GeneratorConfig>,
}

fn default_preset() -> String {
    "default".into()
}

impl Default for GeneratorSection {
    fn default() -> Self {
        GeneratorSection { preset: default_preset(), clicks_per_day: None, truth_seed: None, custom: None }
    }
}

impl GeneratorSection {
    pub fn resolve(&self) -> Result<GeneratorConfig> {
        let mut cfg = match &self.custom {
            Some(c) => c.clone(),
            None => GeneratorConfig::preset(&self.preset)?,
        };
        if let Some(n) = self.clicks_per_day {
            cfg.clicks_per_day = n;
        }
        if let Some(s) = self.truth_seed {
            cfg.truth_seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// TransBlock input. The embedding output keeps user and category
    /// identity, which the last hidden layer of an ordinary-day model blurs.
    #[serde(default = "default_hidden_source")]
    pub hidden_source: HiddenSource,
}

fn default_hidden_source() -> HiddenSource {
    HiddenSource::Embedding
}

fn default_embedding_dim() -> usize {
    8
}
fn default_hidden() -> Vec<usize> {
    vec![64, 32]
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { embedding_dim: 8, hidden: default_hidden(), hidden_source: default_hidden_source() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_desk_batch")]
    pub batch_size: usize,
    #[serde(default = "default_one")]
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
}

fn default_lr() -> f64 {
    1e-3
}
/// Desk-scale batch: 10k clicks per day would give only two steps at 5000.
fn default_desk_batch() -> usize {
    250
}
fn default_one() -> usize {
    1
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: 1e-3,
            batch_size: default_desk_batch(),
            epochs: 1,
            optimizer: OptimizerKind::Adam,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSection {
    #[serde(default = "default_lr")]
    pub eta1: f64,
    #[serde(default = "default_eta2")]
    pub eta2: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Two retrieved days of 10k clicks give 200 steps at 100.
    #[serde(default = "default_finetune_batch")]
    pub batch_size: usize,
    #[serde(default = "default_one")]
    pub epochs: usize,
    #[serde(default = "default_tb_hidden")]
    pub hidden: Vec<usize>,
}

fn default_finetune_batch() -> usize {
    100
}
fn default_eta2() -> f64 {
    1e-5
}
fn default_lambda() -> f64 {
    1.0
}
fn default_tb_hidden() -> Vec<usize> {
    vec![100]
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection {
            eta1: 1e-3,
            eta2: 1e-5,
            lambda: 1.0,
            batch_size: default_finetune_batch(),
            epochs: 1,
            hidden: default_tb_hidden(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSection {
    #[serde(default)]
    pub mode: ShiftMode,
    #[serde(default)]
    pub alignment: Alignment,
    #[serde(default = "default_one")]
    pub min_count: usize,
}

impl Default for ShiftSection {
    fn default() -> Self {
        ShiftSection { mode: ShiftMode::Soft, alignment: Alignment::HourAligned, min_count: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSection {
    /// Hour cutoff `h`: features and shift statistics use hours `< h`, the
    /// served model is evaluated on hours `>= h`.
    #[serde(default = "default_hour")]
    pub hour: u8,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_num_categories")]
    pub num_categories: usize,
    /// Explicit category list; selected on a calibration calendar otherwise.
    pub categories: Option<Vec<u16>>,
    #[serde(default = "default_history_lag")]
    pub history_lag: usize,
    #[serde(default = "default_calibration_seed")]
    pub calibration_seed: u64,
}

fn default_hour() -> u8 {
    dayvec::DEFAULT_HOUR
}
fn default_k() -> usize {
    dayvec::DEFAULT_K
}
fn default_num_categories() -> usize {
    dayvec::DEFAULT_NUM_CATEGORIES
}
fn default_history_lag() -> usize {
    dayvec::DEFAULT_HISTORY_LAG
}
fn default_calibration_seed() -> u64 {
    0x00C0_FFEE
}

impl Default for RetrievalSection {
    fn default() -> Self {
        RetrievalSection {
            hour: default_hour(),
            k: default_k(),
            num_categories: default_num_categories(),
            categories: None,
            history_lag: default_history_lag(),
            calibration_seed: default_calibration_seed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    /// Label window of the daily main-model update.
    #[serde(default = "default_waiting")]
    pub waiting_window_hours: f64,
    /// Label window of the `base_no_dfm` trajectory.
    #[serde(default = "default_attribution")]
    pub no_dfm_window_hours: f64,
    /// First day with a report; earlier days only train the main model.
    #[serde(default = "default_eval_start")]
    pub eval_start_day: usize,
    /// Day types on which retrieval variants adapt.
    #[serde(default = "default_adapt_types")]
    pub adapt_day_types: Vec<DayType>,
    #[serde(default = "default_ece_buckets")]
    pub ece_buckets: usize,
    /// Start each day's TransBlock from the previous fine-tuned one instead
    /// of a fresh identity head. Experimental.
    #[serde(default)]
    pub transblock_carry_over: bool,
}

fn default_waiting() -> f64 {
    24.0
}
fn default_attribution() -> f64 {
    72.0
}
fn default_eval_start() -> usize {
    14
}
fn default_adapt_types() -> Vec<DayType> {
    vec![DayType::PromoPeak]
}
fn default_ece_buckets() -> usize {
    crate::metrics::DEFAULT_ECE_BUCKETS
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            waiting_window_hours: default_waiting(),
            no_dfm_window_hours: default_attribution(),
            eval_start_day: default_eval_start(),
            adapt_day_types: default_adapt_types(),
            ece_buckets: default_ece_buckets(),
            transblock_carry_over: false,
        }
    }
}

fn default_schema() -> String {
    CONFIG_SCHEMA.into()
}
fn default_name() -> String {
    "experiment".into()
}
fn default_variants() -> Vec<Variant> {
    vec![Variant::Base, Variant::Hdr, Variant::HdrNoDsc, Variant::HdrNoTransblock]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Variants run by default.
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    pub output_dir: Option<PathBuf>,
    #[serde(default = "CalendarConfig::desk_default")]
    pub calendar: CalendarConfig,
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub shift: ShiftSection,
    #[serde(default)]
    pub retrieval: RetrievalSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema: default_schema(),
            name: default_name(),
            seed: 0,
            variants: default_variants(),
            output_dir: None,
            calendar: CalendarConfig::desk_default(),
            generator: GeneratorSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            finetune: FinetuneSection::default(),
            shift: ShiftSection::default(),
            retrieval: RetrievalSection::default(),
            schedule: ScheduleSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported config schema '{}', expected '{CONFIG_SCHEMA}'",
                self.schema
            )));
        }
        let generator = self.generator.resolve()?;
        self.model_config(&generator).validate()?;
        self.train_config(0).validate()?;
        self.finetune_config(0).validate()?;
        let r = &self.retrieval;
        if r.hour == 0 || r.hour > 24 {
            return Err(Error::Config(format!("retrieval.hour must be in 1..=24, got {}", r.hour)));
        }
        if r.k == 0 {
            return Err(Error::Config("retrieval.k must be at least 1".into()));
        }
        if r.history_lag < 4 {
            return Err(Error::Config("retrieval.history_lag below 4 would read labels that are not final yet".into()));
        }
        match &r.categories {
            Some(c) if c.iter().any(|&c| c as usize >= generator.num_categories) => {
                return Err(Error::Config("retrieval.categories contains an unknown category".into()));
            }
            None if r.num_categories == 0 || r.num_categories > generator.num_categories => {
                return Err(Error::Config(format!(
                    "retrieval.num_categories must be in 1..={}",
                    generator.num_categories
                )));
            }
            _ => {}
        }
        let s = &self.schedule;
        for w in [s.waiting_window_hours, s.no_dfm_window_hours] {
            if !(w > 0.0 && w <= generator.attribution_window_hours) {
                return Err(Error::Config(format!(
                    "label window {w}h must be in (0, {}]",
                    generator.attribution_window_hours
                )));
            }
        }
        if s.eval_start_day >= self.calendar.num_days {
            return Err(Error::Config("schedule.eval_start_day is past the calendar".into()));
        }
        if s.ece_buckets == 0 {
            return Err(Error::Config("schedule.ece_buckets must be positive".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, generator: &GeneratorConfig) -> ModelConfig {
        ModelConfig {
            num_user_groups: generator.num_user_groups,
            num_categories: generator.num_categories,
            embedding_dim: self.model.embedding_dim,
            hidden: self.model.hidden.clone(),
            hidden_source: self.model.hidden_source,
            init_seed: 0,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            importance_weights: None,
            seed,
            optimizer: self.train.optimizer,
        }
    }

    pub fn finetune_config(&self, seed: u64) -> FinetuneConfig {
        let f = &self.finetune;
        FinetuneConfig {
            eta1: f.eta1,
            eta2: f.eta2,
            lambda: f.lambda,
            batch_size: f.batch_size,
            epochs: f.epochs,
            seed,
            hidden: f.hidden.clone(),
        }
    }

    pub fn shift_config(&self) -> ShiftConfig {
        ShiftConfig {
            hour: self.retrieval.hour,
            lambda: self.finetune.lambda,
            mode: self.shift.mode,
            alignment: self.shift.alignment,
            min_count: self.shift.min_count,
        }
    }
}

/// One column of an ablation: a variant plus optional fine-tuning overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub label: String,
    pub variant: Variant,
    pub eta2: Option<f64>,
    pub epochs: Option<usize>,
}

impl Arm {
    pub fn of(variant: Variant) -> Self {
        Arm { label: variant.as_str().into(), variant, eta2: None, epochs: None }
    }

    pub fn with_eta2(variant: Variant, eta2: f64) -> Self {
        Arm { label: format!("{variant}[eta2={eta2:e}]"), variant, eta2: Some(eta2), epochs: None }
    }
}

/// Ablation grid file (TOML, schema `hdr-grid/1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_grid_schema")]
    pub schema: String,
    pub seeds: Vec<u64>,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    /// Extra `hdr` arms, one per main-model learning rate.
    #[serde(default)]
    pub eta2: Vec<f64>,
}

fn default_grid_schema() -> String {
    GRID_SCHEMA.into()
}

impl GridConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let grid: GridConfig = toml::from_str(text)?;
        if grid.schema != GRID_SCHEMA {
            return Err(Error::Config(format!("unsupported grid schema '{}', expected '{GRID_SCHEMA}'", grid.schema)));
        }
        if grid.seeds.is_empty() {
            return Err(Error::Config("grid needs at least one seed".into()));
        }
        Ok(grid)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn arms(&self) -> Vec<Arm> {
        let mut arms: Vec<Arm> = self.variants.iter().map(|&v| Arm::of(v)).collect();
        arms.extend(self.eta2.iter().map(|&e| Arm::with_eta2(Variant::Hdr, e)));
        arms
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert!(text.starts_with("schema = \"hdr-experiment/1\""));
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = ExperimentConfig::from_toml("schema = \"hdr-experiment/1\"\nseed = 4\n").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.calendar, CalendarConfig::desk_default());
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        for text in [
            "schema = \"hdr-experiment/9\"",
            "[finetune]\neta1 = 1e-5\neta2 = 1e-3",
            "[generator]\npreset = \"missing\"",
            "[retrieval]\nhistory_lag = 2",
            "unknown_key = 1",
            "variants = [\"nope\"]",
        ] {
            let err = ExperimentConfig::from_toml(text).unwrap_err();
            assert!(err.is_config(), "{text}: {err}");
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
    }

    #[test]
    fn grid_arms() {
        let grid =
            GridConfig::from_toml("schema = \"hdr-grid/1\"\nseeds = [1, 2]\nvariants = [\"base\"]\neta2 = [0.0, 1e-4]")
                .unwrap();
        let labels: Vec<String> = grid.arms().into_iter().map(|a| a.label).collect();
        assert_eq!(labels, vec!["base", "hdr[eta2=0e0]", "hdr[eta2=1e-4]"]);
    }
}
