use serde::{Deserialize, Serialize};

use super::{
    g2p_lite, ExampleMeta, PromptElement, PromptError, PromptInputs, Result, Special, TaskMaterials,
    TaskSpec, TrainingExample, VocabMap,
};
use crate::codec::{AcousticTokenMatrix, CodecModel};
use crate::synthworld::{Waveform, SAMPLE_RATE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    /// Enrollment and voice prompts are trimmed or zero-padded to this length.
    pub enrollment_seconds: f64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            enrollment_seconds: 3.0,
        }
    }
}

impl PromptConfig {
    pub fn enrollment_samples(&self) -> usize {
        (self.enrollment_seconds * SAMPLE_RATE as f64).round() as usize
    }
}

fn check_vocab(vocab: &VocabMap, codec: &CodecModel) -> Result<()> {
    if vocab.codebook_size != codec.config.codebook_size || vocab.num_layers != codec.config.num_layers {
        return Err(PromptError::CompatError {
            expected: format!("{}x{}", vocab.num_layers, vocab.codebook_size),
            found: format!("{}x{}", codec.config.num_layers, codec.config.codebook_size),
        });
    }
    Ok(())
}

fn encode(codec: &CodecModel, wave: &Waveform) -> Result<AcousticTokenMatrix> {
    if wave.is_empty() {
        return Ok(AcousticTokenMatrix::empty(codec.config.num_layers));
    }
    Ok(codec.encode(wave)?)
}

fn required(codec: &CodecModel, wave: &Waveform, what: &str) -> Result<PromptElement> {
    if wave.is_empty() {
        return Err(PromptError::MaterialError(format!("{what} is empty")));
    }
    Ok(PromptElement::Codes(encode(codec, wave)?))
}

fn push_optional(out: &mut Vec<PromptElement>, codes: AcousticTokenMatrix) {
    if !codes.is_empty() {
        out.push(PromptElement::Codes(codes));
    }
}

/// Assembles the acoustic prompt `A` for the task implied by `inputs`.
pub fn build_prompt(
    inputs: &PromptInputs,
    vocab: &VocabMap,
    codec: &CodecModel,
    config: &PromptConfig,
) -> Result<Vec<PromptElement>> {
    check_vocab(vocab, codec)?;
    let enroll = |w: &Waveform| w.fit_to(config.enrollment_samples());
    let prompt = match inputs {
        PromptInputs::Ns { noisy } => vec![
            PromptElement::Special(Special::Ns),
            required(codec, noisy, "noisy input")?,
        ],
        PromptInputs::Sr { noisy } => vec![
            PromptElement::Special(Special::Sr),
            required(codec, noisy, "noisy input")?,
        ],
        PromptInputs::Tse {
            enrollment,
            mixture,
        } => vec![
            required(codec, &enroll(enrollment), "enrollment")?,
            PromptElement::Special(Special::Tse),
            required(codec, mixture, "mixture")?,
        ],
        PromptInputs::ZsTts { prompt } => {
            if prompt.is_empty() {
                return Err(PromptError::MaterialError("voice prompt is empty".into()));
            }
            vec![required(codec, &enroll(prompt), "voice prompt")?]
        }
        PromptInputs::Cse { pre, post } => {
            let mut out = Vec::with_capacity(5);
            push_optional(&mut out, encode(codec, pre)?);
            out.push(PromptElement::Special(Special::Soe));
            out.push(PromptElement::Special(Special::Mask));
            out.push(PromptElement::Special(Special::Eoe));
            push_optional(&mut out, encode(codec, post)?);
            out
        }
        PromptInputs::Nse { pre, mid, post } => {
            let mut out = Vec::with_capacity(5);
            push_optional(&mut out, encode(codec, pre)?);
            out.push(PromptElement::Special(Special::Soe));
            out.push(required(codec, mid, "edited region")?);
            out.push(PromptElement::Special(Special::Eoe));
            push_optional(&mut out, encode(codec, post)?);
            out
        }
    };
    Ok(prompt)
}

/// Compiles task materials into a `(T, A, O)` example.
///
/// For the editing tasks the target is the concatenation of the separately
/// encoded pre, edited and post segments, so its context frames coincide
/// with the prompt's context blocks. `include_text` only matters for the
/// tasks where the text prompt is optional.
pub fn build_example(
    materials: &TaskMaterials,
    include_text: bool,
    vocab: &VocabMap,
    codec: &CodecModel,
    config: &PromptConfig,
) -> Result<TrainingExample> {
    let task = materials.inputs.task();
    if task.text_required() && materials.text.is_empty() {
        return Err(PromptError::InvalidText(task));
    }
    let text = if task.text_required() || include_text {
        g2p_lite(&materials.text)?
    } else {
        Vec::new()
    };
    let prompt = build_prompt(&materials.inputs, vocab, codec, config)?;

    let expected_segments = match task {
        TaskSpec::Cse | TaskSpec::Nse => 3,
        _ => 1,
    };
    if materials.target.len() != expected_segments {
        return Err(PromptError::MaterialError(format!(
            "{task} expects {expected_segments} target segment(s), got {}",
            materials.target.len()
        )));
    }
    let segments = materials
        .target
        .iter()
        .map(|w| encode(codec, w))
        .collect::<Result<Vec<_>>>()?;
    let target = AcousticTokenMatrix::concat(&segments.iter().collect::<Vec<_>>());
    if target.is_empty() {
        return Err(PromptError::MaterialError("target is empty".into()));
    }
    let mut meta: ExampleMeta = materials.meta.clone();
    if expected_segments == 3 {
        let start = segments[0].num_frames();
        meta.edit_span = Some((start, start + segments[1].num_frames()));
    }
    Ok(TrainingExample {
        task,
        text,
        prompt,
        target,
        meta,
    })
}
