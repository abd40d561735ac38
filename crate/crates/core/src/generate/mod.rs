//! End-to-end task inference: acoustic prompt, AR layer-1 generation, the
//! NAR layer loop, and codec decoding.

mod batch;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{AcousticTokenMatrix, CodecModel};
use crate::nclm::{ar_generate, nar_infer, CodecLm, LmKind, SamplingConfig, StopReason};
use crate::prompting::{
    build_prompt, g2p_lite, layout_check, ExampleMeta, LayoutReason, PromptConfig, PromptElement, PromptInputs,
    TaskSpec, TrainingExample, VocabMap,
};
use crate::synthworld::{SymbolSeq, Waveform};
use crate::trainer::LmCheckpoint;

pub use batch::{inputs_from_files, run_batch, BatchOutput, RequestSpec};

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("incompatible artifacts: expected {expected}, found {found}")]
    CompatError { expected: String, found: String },
    #[error("task {0} requires a non-empty text prompt")]
    InvalidText(TaskSpec),
    #[error("acoustic prompt fails the {task} layout: {reason:?}")]
    Layout { task: TaskSpec, reason: LayoutReason },
    #[error("bad request: {0}")]
    Request(String),
    #[error(transparent)]
    Prompt(#[from] crate::prompting::PromptError),
    #[error(transparent)]
    Model(#[from] crate::nclm::NclmError),
    #[error(transparent)]
    Codec(#[from] crate::codec::CodecError),
    #[error(transparent)]
    Synth(#[from] crate::synthworld::SynthError),
    #[error(transparent)]
    Trainer(#[from] crate::trainer::TrainerError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GenerateError>;

#[derive(Debug, Clone)]
pub struct TaskRequest {
    pub inputs: PromptInputs,
    /// Empty means no text prompt.
    pub text: SymbolSeq,
    pub sampling: SamplingConfig,
    pub prompt: PromptConfig,
}

impl TaskRequest {
    pub fn new(inputs: PromptInputs, text: SymbolSeq) -> Self {
        Self {
            inputs,
            text,
            sampling: SamplingConfig::default(),
            prompt: PromptConfig::default(),
        }
    }

    pub fn task(&self) -> TaskSpec {
        self.inputs.task()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationMeta {
    pub prompt_code_frames: usize,
    /// Edited region in output frames, between the re-emitted context blocks.
    pub edit_frames: Option<(usize, usize)>,
    /// Fraction of context frames whose codes match the input context.
    pub context_fidelity: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GenerationResult {
    pub waveform: Waveform,
    pub codes: AcousticTokenMatrix,
    pub stop_reason: StopReason,
    pub meta: GenerationMeta,
}

/// AR and NAR models plus the identifiers of the artifacts they were trained on.
pub struct ModelBundle {
    pub ar: CodecLm,
    pub nar: CodecLm,
    pub vocab_hash: String,
    pub codec_checksum: String,
}

impl ModelBundle {
    pub fn from_checkpoint(ckpt: &LmCheckpoint) -> Result<Self> {
        let (ar, nar) = ckpt.models()?;
        Ok(Self {
            ar,
            nar,
            vocab_hash: ckpt.header.vocab_hash.clone(),
            codec_checksum: ckpt.header.codec_checksum.clone(),
        })
    }

    fn check(&self, codec: &CodecModel, vocab: &VocabMap) -> Result<()> {
        let compat = |expected: String, found: String| GenerateError::CompatError { expected, found };
        if self.ar.kind != LmKind::Ar || self.nar.kind != LmKind::Nar {
            return Err(compat("AR and NAR models".into(), "swapped model kinds".into()));
        }
        if self.vocab_hash != vocab.hash() {
            return Err(compat(self.vocab_hash.clone(), vocab.hash()));
        }
        let codec_sum = codec.checksum();
        if self.codec_checksum != codec_sum {
            return Err(compat(self.codec_checksum.clone(), codec_sum));
        }
        let cfg = &self.ar.config;
        if cfg.codebook_size != vocab.codebook_size || cfg.num_layers != vocab.num_layers {
            return Err(compat(
                format!("{}x{}", vocab.num_layers, vocab.codebook_size),
                format!("{}x{}", cfg.num_layers, cfg.codebook_size),
            ));
        }
        Ok(())
    }
}

fn context_blocks(task: TaskSpec, prompt: &[PromptElement]) -> (Option<&AcousticTokenMatrix>, Option<&AcousticTokenMatrix>) {
    if !matches!(task, TaskSpec::Cse | TaskSpec::Nse) {
        return (None, None);
    }
    fn codes(e: Option<&PromptElement>) -> Option<&AcousticTokenMatrix> {
        match e {
            Some(PromptElement::Codes(m)) => Some(m),
            _ => None,
        }
    }
    (codes(prompt.first()), codes(prompt.last()))
}

/// Verifies the acoustic prompt against the task's layout row, using a
/// placeholder target that carries the context blocks around one frame.
fn verify_prompt(task: TaskSpec, text: &[u32], prompt: &[PromptElement], layers: usize, codebook: usize) -> Result<()> {
    let (pre, post) = context_blocks(task, prompt);
    let filler = AcousticTokenMatrix::zeros(1, layers);
    let mut parts = Vec::new();
    parts.extend(pre);
    parts.push(&filler);
    parts.extend(post);
    let probe = TrainingExample {
        task,
        text: text.to_vec(),
        prompt: prompt.to_vec(),
        target: AcousticTokenMatrix::concat(&parts),
        meta: ExampleMeta::default(),
    };
    match layout_check(&probe, codebook).reason {
        None => Ok(()),
        Some(LayoutReason::EmptyText) => Err(GenerateError::InvalidText(task)),
        Some(reason) => Err(GenerateError::Layout { task, reason }),
    }
}

/// Fraction of context frames reproduced exactly, with the realized edit span.
fn editing_meta(task: TaskSpec, prompt: &[PromptElement], out: &AcousticTokenMatrix) -> (Option<(usize, usize)>, Option<f64>) {
    if !matches!(task, TaskSpec::Cse | TaskSpec::Nse) {
        return (None, None);
    }
    let (pre, post) = context_blocks(task, prompt);
    let n = out.num_frames();
    let pre_n = pre.map_or(0, |m| m.num_frames());
    let post_n = post.map_or(0, |m| m.num_frames());
    let span = (pre_n.min(n), n.saturating_sub(post_n).max(pre_n.min(n)));
    let total = pre_n + post_n;
    if total == 0 {
        return (Some(span), Some(1.0));
    }
    let mut matched = 0;
    if let Some(m) = pre {
        matched += (0..pre_n.min(n)).filter(|&t| out.frame(t) == m.frame(t)).count();
    }
    if let Some(m) = post {
        for k in 0..post_n.min(n) {
            if out.frame(n - post_n.min(n) + k) == m.frame(post_n - post_n.min(n) + k) {
                matched += 1;
            }
        }
    }
    (Some(span), Some(matched as f64 / total as f64))
}

/// Runs one task request end to end.
pub fn run_task(
    request: &TaskRequest,
    models: &ModelBundle,
    codec: &CodecModel,
    vocab: &VocabMap,
    rng: &mut ChaCha8Rng,
) -> Result<GenerationResult> {
    models.check(codec, vocab)?;
    let task = request.task();
    if task.text_required() && request.text.is_empty() {
        return Err(GenerateError::InvalidText(task));
    }
    let text = g2p_lite(&request.text)?;
    let prompt = build_prompt(&request.inputs, vocab, codec, &request.prompt)?;
    verify_prompt(task, &text, &prompt, vocab.num_layers, vocab.codebook_size)?;

    let (layer1, stop_reason) = ar_generate(&models.ar, &text, &prompt, &request.sampling, rng)?;
    let mut layers = vec![layer1];
    if !layers[0].is_empty() {
        for l in 2..=vocab.num_layers {
            let partial = AcousticTokenMatrix::from_layers(&layers);
            layers.push(nar_infer(&models.nar, &text, &prompt, &partial, l)?);
        }
    }
    let codes = if layers[0].is_empty() {
        AcousticTokenMatrix::empty(vocab.num_layers)
    } else {
        AcousticTokenMatrix::from_layers(&layers)
    };
    let waveform = if codes.is_empty() {
        Waveform::silence(0, codec.config.sample_rate)
    } else {
        codec.decode(&codes)?
    };
    let (edit_frames, context_fidelity) = editing_meta(task, &prompt, &codes);
    let prompt_code_frames = prompt
        .iter()
        .map(|e| match e {
            PromptElement::Codes(m) => m.num_frames(),
            PromptElement::Special(_) => 0,
        })
        .sum();
    Ok(GenerationResult {
        waveform,
        codes,
        stop_reason,
        meta: GenerationMeta {
            prompt_code_frames,
            edit_frames,
            context_fidelity,
        },
    })
}
