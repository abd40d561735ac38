//! Experiment configuration file.
//!
//! Every stage seed is derived from the single global `seed`, so the config
//! sections must not carry their own.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::CliError;
use crate::codec::{CodecConfig, CodecTrainConfig};
use crate::nclm::{ModelConfig, SamplingConfig};
use crate::prompting::{MaterialConfig, PromptConfig, TaskSpec};
use crate::synthworld::CorpusConfig;
use crate::trainer::{RunConfig, Stage};
use crate::util::derive_seed;

/// Training-set compilation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub examples_per_task: usize,
    pub materials: MaterialConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            examples_per_task: 500,
            materials: MaterialConfig::train(),
        }
    }
}

/// Held-out evaluation set and inference settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub items_per_task: usize,
    pub materials: MaterialConfig,
    pub sampling: SamplingConfig,
    /// Utterances per subset in the codec round-trip comparison.
    pub impact_items: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            items_per_task: 50,
            materials: MaterialConfig::eval(),
            sampling: SamplingConfig::default(),
            impact_items: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Run directory; relative paths resolve against the config file.
    pub out_root: PathBuf,
    pub corpus: CorpusConfig,
    pub codec: CodecConfig,
    pub codec_train: CodecTrainConfig,
    pub prompt: PromptConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub stage1: RunConfig,
    pub stage2: RunConfig,
    pub eval: EvalConfig,
}

const SEEDED_SECTIONS: [&str; 4] = ["corpus", "codec_train", "stage1", "stage2"];

fn config_error(field: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.into(),
        message: message.into(),
    }
}

fn section<T: DeserializeOwned>(table: &toml::Table, name: &str) -> Result<T, CliError> {
    let value = table
        .get(name)
        .cloned()
        .unwrap_or_else(|| toml::Value::Table(toml::Table::new()));
    value
        .try_into()
        .map_err(|e: toml::de::Error| config_error(name, e.message().to_string()))
}

impl ExperimentConfig {
    /// Desk-scale pipeline: 2000 utterances, 10 Hz codec, 4-layer LM.
    pub fn desk(seed: u64) -> Self {
        let mut cfg = Self {
            seed,
            out_root: PathBuf::from("run"),
            corpus: CorpusConfig::default(),
            codec: CodecConfig::symbol_rate(),
            codec_train: CodecTrainConfig::default(),
            prompt: PromptConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::desk(),
            stage1: RunConfig::desk_stage1(),
            stage2: RunConfig::desk_stage1(),
            eval: EvalConfig::default(),
        };
        cfg.stage2.stage = Stage::Multitask;
        cfg.derive_seeds();
        cfg
    }

    /// The desk pipeline with a 2-layer, width-64 LM at peak lr 1e-3, small
    /// enough to train both stages on one CPU core in well under an hour.
    pub fn trend_ci(seed: u64) -> Self {
        let mut cfg = Self::desk(seed);
        cfg.model = ModelConfig::trend_ci();
        for run in [&mut cfg.stage1, &mut cfg.stage2] {
            run.peak_lr = 1e-3;
        }
        cfg.eval.impact_items = 40;
        cfg
    }

    fn derive_seeds(&mut self) {
        self.corpus.seed = derive_seed(self.seed, "corpus");
        self.codec_train.seed = derive_seed(self.seed, "codec_train");
        self.stage1.seed = derive_seed(self.seed, "stage1");
        self.stage2.seed = derive_seed(self.seed, "stage2");
    }

    /// Parses a TOML config. `seed_override` replaces the global seed.
    pub fn from_toml(text: &str, seed_override: Option<u64>) -> Result<Self, CliError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| config_error("", e.message()))?;
        let known = [
            "seed", "out_root", "corpus", "codec", "codec_train", "prompt", "data", "model", "stage1", "stage2", "eval",
        ];
        if let Some(k) = table.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(config_error(k.clone(), "unknown key"));
        }
        for name in SEEDED_SECTIONS {
            if let Some(t) = table.get(name).and_then(|v| v.as_table()) {
                if t.contains_key("seed") {
                    return Err(config_error(format!("{name}.seed"), "derived from the global seed; remove it"));
                }
            }
        }
        let seed = match (seed_override, table.get("seed")) {
            (Some(s), _) if i64::try_from(s).is_ok() => s,
            (Some(_), _) => return Err(config_error("seed", "must fit in a signed 64-bit integer")),
            (None, Some(v)) => v
                .as_integer()
                .and_then(|s| u64::try_from(s).ok())
                .ok_or_else(|| config_error("seed", "must be a non-negative integer"))?,
            (None, None) => return Err(config_error("seed", "missing")),
        };
        let defaults: toml::Table = Self::desk(0).to_toml().parse().expect("desk preset parses");
        for (name, base) in defaults {
            if let toml::Value::Table(mut merged) = base {
                match table.remove(&name) {
                    Some(toml::Value::Table(given)) => merged.extend(given),
                    Some(other) => {
                        table.insert(name, other);
                        continue;
                    }
                    None => {}
                }
                table.insert(name, toml::Value::Table(merged));
            }
        }
        for name in SEEDED_SECTIONS {
            if let Some(t) = table.get_mut(name).and_then(|v| v.as_table_mut()) {
                // Placeholder so required fields deserialize; replaced below.
                t.insert("seed".into(), toml::Value::Integer(0));
            }
        }
        let out_root = match table.get("out_root") {
            Some(v) => PathBuf::from(v.as_str().ok_or_else(|| config_error("out_root", "must be a string"))?),
            None => PathBuf::from("run"),
        };
        let mut cfg = Self {
            seed,
            out_root,
            corpus: section(&table, "corpus")?,
            codec: section(&table, "codec")?,
            codec_train: section(&table, "codec_train")?,
            prompt: section(&table, "prompt")?,
            data: section(&table, "data")?,
            model: section(&table, "model")?,
            stage1: section(&table, "stage1")?,
            stage2: section(&table, "stage2")?,
            eval: section(&table, "eval")?,
        };
        cfg.derive_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text, seed_override)?;
        if cfg.out_root.is_relative() {
            cfg.out_root = path.parent().unwrap_or(Path::new(".")).join(&cfg.out_root);
        }
        Ok(cfg)
    }

    /// TOML text that loads back to this config (seeds omitted per section).
    pub fn to_toml(&self) -> String {
        let mut plain = self.clone();
        plain.corpus.seed = 0;
        plain.codec_train.seed = 0;
        plain.stage1.seed = 0;
        plain.stage2.seed = 0;
        let mut table = toml::Table::try_from(&plain).expect("config serializes");
        for name in SEEDED_SECTIONS {
            if let Some(t) = table.get_mut(name).and_then(|v| v.as_table_mut()) {
                t.remove("seed");
            }
        }
        toml::to_string(&table).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        fn at(section: &'static str) -> impl Fn((String, String)) -> CliError {
            move |(field, message)| config_error(format!("{section}.{field}"), message)
        }
        self.corpus.validate().map_err(at("corpus"))?;
        self.codec.validate().map_err(at("codec"))?;
        self.model.validate().map_err(at("model"))?;
        for (name, run) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            if let Err(crate::trainer::TrainerError::Config { field, message }) = run.validate() {
                return Err(config_error(format!("{name}.{field}"), message));
            }
        }
        if self.stage1.stage != Stage::TtsOnly {
            return Err(config_error("stage1.stage", "the first stage trains text-to-speech only"));
        }
        if self.model.num_layers != self.codec.num_layers {
            return Err(config_error("model.num_layers", "must equal codec.num_layers"));
        }
        if self.model.codebook_size != self.codec.codebook_size {
            return Err(config_error("model.codebook_size", "must equal codec.codebook_size"));
        }
        if self.data.examples_per_task == 0 {
            return Err(config_error("data.examples_per_task", "must be at least 1"));
        }
        if self.eval.items_per_task == 0 {
            return Err(config_error("eval.items_per_task", "must be at least 1"));
        }
        if self.codec_train.steps == 0 {
            return Err(config_error("codec_train.steps", "must be at least 1"));
        }
        Ok(())
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.out_root.join("corpus")
    }

    pub fn codec_path(&self) -> PathBuf {
        self.out_root.join("codec").join("codec.bin")
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out_root.join("data")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out_root.join("eval")
    }

    pub fn train_dir(&self, name: &str) -> PathBuf {
        self.out_root.join("train").join(name)
    }

    pub fn infer_dir(&self, label: &str) -> PathBuf {
        self.out_root.join("infer").join(label)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out_root.join("reports")
    }

    pub fn plots_dir(&self) -> PathBuf {
        self.out_root.join("plots")
    }
}

/// Parses `ns,tse` style task lists; empty means every task.
pub fn parse_tasks(list: &str) -> Result<Vec<TaskSpec>, CliError> {
    if list.trim().is_empty() || list == "all" {
        return Ok(TaskSpec::ALL.to_vec());
    }
    list.split(',')
        .map(|s| {
            let s = s.trim();
            TaskSpec::ALL
                .into_iter()
                .find(|t| t.short_name() == s)
                .ok_or_else(|| CliError::Usage(format!("unknown task `{s}`")))
        })
        .collect()
}
