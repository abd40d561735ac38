use std::collections::BTreeMap;
use std::path::Path;

use super::{Result, TrainerError};
use crate::prompting::{read_dataset, DatasetHeader, TaskSpec, TrainingExample, VocabMap};

/// Compiled examples grouped by task, plus the vocabulary and codec they
/// were built against.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub vocab: VocabMap,
    pub codec_checksum: String,
    pub by_task: BTreeMap<TaskSpec, Vec<TrainingExample>>,
}

impl TrainingData {
    pub fn new(vocab: VocabMap, codec_checksum: String, examples: Vec<TrainingExample>) -> Self {
        let mut by_task: BTreeMap<TaskSpec, Vec<TrainingExample>> = BTreeMap::new();
        for ex in examples {
            by_task.entry(ex.task).or_default().push(ex);
        }
        Self {
            vocab,
            codec_checksum,
            by_task,
        }
    }

    /// File name of one task's dataset inside a data directory.
    pub fn file_name(task: TaskSpec) -> String {
        format!("{}.clmdata", task.short_name())
    }

    /// Reads every `<task>.clmdata` present in `dir`; all files must agree on
    /// vocabulary and codec.
    pub fn load_dir(dir: &Path, expected_codec: Option<&str>) -> Result<Self> {
        let mut header: Option<DatasetHeader> = None;
        let mut examples = Vec::new();
        for task in TaskSpec::ALL {
            let path = dir.join(Self::file_name(task));
            if !path.exists() {
                continue;
            }
            let (h, ex) = read_dataset(&path, expected_codec)?;
            if let Some(prev) = &header {
                if prev.vocab != h.vocab || prev.codec_checksum != h.codec_checksum {
                    return Err(TrainerError::Compat {
                        expected: prev.codec_checksum.clone(),
                        found: h.codec_checksum,
                    });
                }
            }
            header = Some(h);
            examples.extend(ex);
        }
        let header = header.ok_or_else(|| {
            TrainerError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no datasets in {}", dir.display()),
            ))
        })?;
        Ok(Self::new(header.vocab, header.codec_checksum, examples))
    }

    pub fn examples(&self, task: TaskSpec) -> Result<&[TrainingExample]> {
        match self.by_task.get(&task) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(TrainerError::MissingTask(task)),
        }
    }

    pub fn check_covers(&self, tasks: &[TaskSpec]) -> Result<()> {
        for &t in tasks {
            self.examples(t)?;
        }
        Ok(())
    }
}
