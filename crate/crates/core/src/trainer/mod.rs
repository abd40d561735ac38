//! Two-stage multi-task training of the AR and NAR models.
//!
//! Stage one trains zero-shot TTS only. Stage two starts from the stage-one
//! checkpoint, redraws the task-token embeddings and samples one task per
//! update from the enabled set. Every random decision comes from its own
//! seeded ChaCha stream so that, for example, changing the text-dropout rate
//! leaves the task sequence untouched.

mod checkpoint;
mod data;
mod optim;
mod run;

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::{TaskSpec, TrainingExample};

pub use checkpoint::{LmCheckpoint, RngState, CHECKPOINT_VERSION};
pub use data::TrainingData;
pub use optim::{AdamW, AdamWConfig};
pub use run::{read_metrics, train_stage, write_metrics, MetricRow, Trainer};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("config error at {field}: {message}")]
    Config { field: String, message: String },
    #[error("incompatible artifacts: expected {expected}, found {found}")]
    Compat { expected: String, found: String },
    #[error("no training examples for task {0}")]
    MissingTask(TaskSpec),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] crate::nclm::NclmError),
    #[error(transparent)]
    Prompt(#[from] crate::prompting::PromptError),
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainerError>;

fn config_error(field: &str, message: impl Into<String>) -> TrainerError {
    TrainerError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    TtsOnly,
    Multitask,
    SingleTask(TaskSpec),
    Subset(Vec<TaskSpec>),
}

impl Stage {
    pub fn enabled_tasks(&self) -> Vec<TaskSpec> {
        match self {
            Stage::TtsOnly => vec![TaskSpec::ZsTts],
            Stage::Multitask => TaskSpec::ALL.to_vec(),
            Stage::SingleTask(t) => vec![*t],
            Stage::Subset(ts) => {
                let mut ts = ts.clone();
                ts.sort();
                ts.dedup();
                ts
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSource {
    #[default]
    Random,
    Checkpoint(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub stage: Stage,
    pub steps: usize,
    pub warmup_steps: usize,
    pub peak_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_text_dropout")]
    pub text_dropout_p: f64,
    #[serde(default)]
    pub init: InitSource,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_grad_clip")]
    pub grad_clip: f64,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_text_dropout() -> f64 {
    0.5
}

fn default_weight_decay() -> f64 {
    0.01
}

fn default_grad_clip() -> f64 {
    1.0
}

impl RunConfig {
    fn base(stage: Stage, steps: usize, warmup_steps: usize, peak_lr: f64, batch_size: usize) -> Self {
        Self {
            stage,
            steps,
            warmup_steps,
            peak_lr,
            batch_size,
            seed: 0,
            text_dropout_p: default_text_dropout(),
            init: InitSource::Random,
            weight_decay: default_weight_decay(),
            grad_clip: default_grad_clip(),
            checkpoint_every: 0,
        }
    }

    /// 4k TTS-only steps, warmup 200, peak 3e-4, batch 16.
    pub fn desk_stage1() -> Self {
        Self::base(Stage::TtsOnly, 4000, 200, 3e-4, 16)
    }

    /// 4k multi-task steps continuing from `init`.
    pub fn desk_stage2(init: PathBuf) -> Self {
        Self {
            init: InitSource::Checkpoint(init),
            ..Self::base(Stage::Multitask, 4000, 200, 3e-4, 16)
        }
    }

    /// 400k TTS-only steps, 32k warmup, peak 5e-4.
    pub fn paper_parity_stage1() -> Self {
        Self::base(Stage::TtsOnly, 400_000, 32_000, 5e-4, 16)
    }

    /// 400k multi-task steps from the stage-one checkpoint with 20k warmup.
    pub fn paper_parity_stage2(init: PathBuf) -> Self {
        Self {
            init: InitSource::Checkpoint(init),
            ..Self::base(Stage::Multitask, 400_000, 20_000, 5e-4, 16)
        }
    }

    /// Multi-task run from random init for 800k steps with 32k warmup.
    pub fn paper_parity_random_multitask() -> Self {
        Self::base(Stage::Multitask, 800_000, 32_000, 5e-4, 16)
    }

    pub fn enabled_tasks(&self) -> Vec<TaskSpec> {
        self.stage.enabled_tasks()
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled_tasks().is_empty() {
            return Err(config_error("stage", "enabled task set is empty"));
        }
        if !(0.0..=1.0).contains(&self.text_dropout_p) {
            return Err(config_error("text_dropout_p", "must lie in [0, 1]"));
        }
        if self.steps == 0 {
            return Err(config_error("steps", "must be positive"));
        }
        if self.warmup_steps >= self.steps {
            return Err(config_error("warmup_steps", "must be smaller than steps"));
        }
        if !(self.peak_lr > 0.0) {
            return Err(config_error("peak_lr", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(config_error("batch_size", "must be positive"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(config_error("grad_clip", "must be positive"));
        }
        if self.weight_decay < 0.0 {
            return Err(config_error("weight_decay", "must be non-negative"));
        }
        Ok(())
    }
}

/// Named ablation runs: random-init TTS-only and multi-task rows, single-task
/// continuations from `stage1`, the full multi-task continuation, and the
/// task-subset continuations with steps scaled by `|tasks| / 6`.
pub fn ablation_presets(stage1_steps: usize, stage2: &RunConfig, stage1: PathBuf) -> Vec<(String, RunConfig)> {
    let total = stage1_steps + stage2.steps;
    let mut out = Vec::new();
    let random = |stage: Stage| RunConfig {
        stage,
        steps: total,
        init: InitSource::Random,
        ..stage2.clone()
    };
    out.push(("random_tts".to_string(), random(Stage::TtsOnly)));
    out.push(("random_multitask".to_string(), random(Stage::Multitask)));
    let cont = |stage: Stage, steps: usize| RunConfig {
        stage,
        steps,
        warmup_steps: stage2.warmup_steps.min(steps.saturating_sub(1)),
        init: InitSource::Checkpoint(stage1.clone()),
        ..stage2.clone()
    };
    for t in [TaskSpec::Cse, TaskSpec::Nse, TaskSpec::Ns, TaskSpec::Sr, TaskSpec::Tse] {
        out.push((format!("single_{}", t.short_name()), cont(Stage::SingleTask(t), stage2.steps)));
    }
    out.push(("stage2_multitask".to_string(), cont(Stage::Multitask, stage2.steps)));
    let subsets = [
        ("subset_tts_edit", vec![TaskSpec::ZsTts, TaskSpec::Cse, TaskSpec::Nse]),
        (
            "subset_tts_edit_ns_sr",
            vec![TaskSpec::ZsTts, TaskSpec::Cse, TaskSpec::Nse, TaskSpec::Ns, TaskSpec::Sr],
        ),
    ];
    for (name, tasks) in subsets {
        let steps = stage2.steps * tasks.len() / TaskSpec::ALL.len();
        out.push((name.to_string(), cont(Stage::Subset(tasks), steps)));
    }
    out
}

/// Uniform draw over `enabled`; consumes exactly one value from `rng`.
pub fn sample_task(rng: &mut ChaCha8Rng, enabled: &[TaskSpec]) -> Result<TaskSpec> {
    if enabled.is_empty() {
        return Err(config_error("stage", "enabled task set is empty"));
    }
    Ok(enabled[rng.random_range(0..enabled.len())])
}

/// Empties the text of an NS/SR/TSE example with probability `p`. Other
/// tasks are returned unchanged and consume no randomness.
pub fn apply_text_dropout(mut example: TrainingExample, rng: &mut ChaCha8Rng, p: f64) -> TrainingExample {
    if !example.task.text_required() && rng.random::<f64>() < p {
        example.text.clear();
    }
    example
}

/// Linear warmup from 0 to `peak` over `[0, warmup]`, then linear decay to 0
/// at `total`.
pub fn lr_schedule(step: usize, warmup: usize, peak: f64, total: usize) -> Result<f64> {
    if warmup >= total {
        return Err(config_error("warmup_steps", "must be smaller than steps"));
    }
    if step > total {
        return Err(config_error("step", format!("{step} exceeds total {total}")));
    }
    Ok(if step <= warmup && warmup > 0 {
        peak * step as f64 / warmup as f64
    } else {
        peak * (total - step) as f64 / (total - warmup) as f64
    })
}
