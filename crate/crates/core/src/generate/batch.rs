//! JSONL batch inference: one request per line in, one result per line out.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{run_task, GenerateError, ModelBundle, Result, TaskRequest};
use crate::codec::CodecModel;
use crate::nclm::{SamplingConfig, StopReason};
use crate::prompting::{PromptInputs, TaskSpec, VocabMap};
use crate::synthworld::{read_waveform, write_waveform, SymbolSeq, Waveform, SAMPLE_RATE};
use crate::util::{atomic_write, deterministic_mode, rng_for};

/// One inference request. Input paths are relative to the request file.
///
/// Input names per task: `noisy` (ns, sr), `enrollment` and `mixture` (tse),
/// `prompt` (tts), `pre` and `post` (cse, both optional), `pre`, `mid` and
/// `post` (nse, context optional).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestSpec {
    pub id: String,
    pub task: TaskSpec,
    pub inputs: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub text: Vec<u8>,
    #[serde(default)]
    pub sampling: Option<SamplingConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutput {
    pub id: String,
    pub task: TaskSpec,
    /// Waveform file name inside the output directory.
    pub output: String,
    /// Code-matrix JSON file name inside the output directory.
    pub codes: String,
    pub stop_reason: StopReason,
    pub frames: usize,
    pub edit_frames: Option<(usize, usize)>,
    pub context_fidelity: Option<f64>,
    /// Wall-clock time; omitted in deterministic mode.
    pub millis: Option<u64>,
}

/// Reads the waveforms named in `inputs` into the task's prompt inputs.
pub fn inputs_from_files(task: TaskSpec, inputs: &BTreeMap<String, PathBuf>, base: &Path) -> Result<PromptInputs> {
    let load = |name: &str| -> Result<Waveform> {
        let path = inputs
            .get(name)
            .ok_or_else(|| GenerateError::Request(format!("{task} request needs input `{name}`")))?;
        Ok(read_waveform(&base.join(path))?)
    };
    let optional = |name: &str| -> Result<Waveform> {
        match inputs.get(name) {
            Some(path) => Ok(read_waveform(&base.join(path))?),
            None => Ok(Waveform::silence(0, SAMPLE_RATE)),
        }
    };
    let allowed: &[&str] = match task {
        TaskSpec::Ns | TaskSpec::Sr => &["noisy"],
        TaskSpec::Tse => &["enrollment", "mixture"],
        TaskSpec::ZsTts => &["prompt"],
        TaskSpec::Cse => &["pre", "post"],
        TaskSpec::Nse => &["pre", "mid", "post"],
    };
    if let Some(extra) = inputs.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(GenerateError::Request(format!("{task} request has unknown input `{extra}`")));
    }
    Ok(match task {
        TaskSpec::Ns => PromptInputs::Ns { noisy: load("noisy")? },
        TaskSpec::Sr => PromptInputs::Sr { noisy: load("noisy")? },
        TaskSpec::Tse => PromptInputs::Tse {
            enrollment: load("enrollment")?,
            mixture: load("mixture")?,
        },
        TaskSpec::ZsTts => PromptInputs::ZsTts { prompt: load("prompt")? },
        TaskSpec::Cse => PromptInputs::Cse {
            pre: optional("pre")?,
            post: optional("post")?,
        },
        TaskSpec::Nse => PromptInputs::Nse {
            pre: optional("pre")?,
            mid: load("mid")?,
            post: optional("post")?,
        },
    })
}

pub fn read_requests(path: &Path) -> Result<Vec<RequestSpec>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Runs every request in `requests` and writes `<id>.f32`, `<id>.codes.json`
/// and `outputs.jsonl` into `out_dir`. Each request draws from its own
/// stream derived from `seed` and its id.
pub fn run_batch(
    requests: &Path,
    out_dir: &Path,
    models: &ModelBundle,
    codec: &CodecModel,
    vocab: &VocabMap,
    default_sampling: &SamplingConfig,
    seed: u64,
) -> Result<Vec<BatchOutput>> {
    let base = requests.parent().unwrap_or(Path::new("."));
    let specs = read_requests(requests)?;
    std::fs::create_dir_all(out_dir)?;
    let timed = !deterministic_mode();
    let mut outputs = Vec::with_capacity(specs.len());
    for spec in specs {
        let start = Instant::now();
        let mut request = TaskRequest::new(
            inputs_from_files(spec.task, &spec.inputs, base)?,
            SymbolSeq::new(spec.text.clone())?,
        );
        request.sampling = spec.sampling.clone().unwrap_or_else(|| default_sampling.clone());
        let mut rng = rng_for(seed, &format!("generate/{}", spec.id));
        let result = run_task(&request, models, codec, vocab, &mut rng)?;
        let output = format!("{}.f32", spec.id);
        let codes = format!("{}.codes.json", spec.id);
        write_waveform(&out_dir.join(&output), &result.waveform)?;
        atomic_write(&out_dir.join(&codes), &serde_json::to_vec(&result.codes)?)?;
        outputs.push(BatchOutput {
            id: spec.id,
            task: spec.task,
            output,
            codes,
            stop_reason: result.stop_reason,
            frames: result.codes.num_frames(),
            edit_frames: result.meta.edit_frames,
            context_fidelity: result.meta.context_fidelity,
            millis: timed.then(|| start.elapsed().as_millis() as u64),
        });
    }
    let mut lines = String::new();
    for o in &outputs {
        lines.push_str(&serde_json::to_string(o)?);
        lines.push('\n');
    }
    atomic_write(&out_dir.join("outputs.jsonl"), lines.as_bytes())?;
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_inputs_are_validated() {
        let dir = tempfile::tempdir().unwrap();
        let wave = Waveform::new(vec![0.1; 800], SAMPLE_RATE);
        write_waveform(&dir.path().join("x.f32"), &wave).unwrap();
        let mut inputs = BTreeMap::new();
        inputs.insert("noisy".to_string(), PathBuf::from("x.f32"));
        let got = inputs_from_files(TaskSpec::Ns, &inputs, dir.path()).unwrap();
        assert!(matches!(got, PromptInputs::Ns { .. }));
        assert!(matches!(
            inputs_from_files(TaskSpec::Tse, &inputs, dir.path()),
            Err(GenerateError::Request(_))
        ));
        let got = inputs_from_files(TaskSpec::Cse, &BTreeMap::new(), dir.path()).unwrap();
        assert!(matches!(got, PromptInputs::Cse { pre, post } if pre.is_empty() && post.is_empty()));
        let line = r#"{"id":"a","task":"ns","inputs":{"noisy":"x.f32"}}"#;
        let spec: RequestSpec = serde_json::from_str(line).unwrap();
        assert!(spec.text.is_empty() && spec.sampling.is_none());
    }
}
