//! Token vocabulary, textual prompts and the per-task prompt compiler that
//! turns task materials into `(T, A, O)` examples.

mod build;
mod dataset;
mod layout;
mod materials;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{AcousticTokenMatrix, CodecError};
use crate::synthworld::{SymbolSeq, SynthError, ALPHABET_SIZE};

pub use build::{build_example, build_prompt, PromptConfig};
pub use dataset::{read_dataset, write_dataset, DatasetHeader};
pub use layout::{layout_check, LayoutReason, LayoutVerdict};
pub use materials::{
    sample_materials, EvalReferences, MaterialConfig, PromptInputs, TaskMaterials, UtterancePool,
};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("symbol {0} is outside the text alphabet")]
    VocabError(u32),
    #[error("missing or mismatched material: {0}")]
    MaterialError(String),
    #[error("task {0} requires a non-empty text prompt")]
    InvalidText(TaskSpec),
    #[error("dataset was compiled with codec {found}, expected {expected}")]
    CompatError { expected: String, found: String },
    #[error("corrupt dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PromptError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskSpec {
    #[serde(rename = "ns")]
    Ns,
    #[serde(rename = "sr")]
    Sr,
    #[serde(rename = "tse")]
    Tse,
    #[serde(rename = "tts")]
    ZsTts,
    #[serde(rename = "cse")]
    Cse,
    #[serde(rename = "nse")]
    Nse,
}

impl TaskSpec {
    pub const ALL: [TaskSpec; 6] = [
        TaskSpec::Ns,
        TaskSpec::Sr,
        TaskSpec::Tse,
        TaskSpec::ZsTts,
        TaskSpec::Cse,
        TaskSpec::Nse,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            TaskSpec::Ns => "ns",
            TaskSpec::Sr => "sr",
            TaskSpec::Tse => "tse",
            TaskSpec::ZsTts => "tts",
            TaskSpec::Cse => "cse",
            TaskSpec::Nse => "nse",
        }
    }

    /// Text is mandatory for synthesis and editing; optional otherwise.
    pub fn text_required(self) -> bool {
        matches!(self, TaskSpec::ZsTts | TaskSpec::Cse | TaskSpec::Nse)
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&t| t == self).expect("listed task")
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for TaskSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|t| t.short_name() == s)
            .ok_or_else(|| format!("unknown task '{s}' (expected one of ns, sr, tse, tts, cse, nse)"))
    }
}

/// Reserved tokens appended after the codec codes in the acoustic vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Special {
    Eos,
    Ns,
    Sr,
    Tse,
    Soe,
    Eoe,
    Mask,
    Sep,
}

impl Special {
    pub const ALL: [Special; 8] = [
        Special::Eos,
        Special::Ns,
        Special::Sr,
        Special::Tse,
        Special::Soe,
        Special::Eoe,
        Special::Mask,
        Special::Sep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Special::Eos => "<eos>",
            Special::Ns => "<ns>",
            Special::Sr => "<sr>",
            Special::Tse => "<tse>",
            Special::Soe => "<soe>",
            Special::Eoe => "<eoe>",
            Special::Mask => "<mask>",
            Special::Sep => "<sep>",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&s| s == self).expect("listed special")
    }

    /// Tokens that only exist once multi-task training starts.
    pub fn is_task_token(self) -> bool {
        matches!(
            self,
            Special::Ns | Special::Sr | Special::Tse | Special::Soe | Special::Eoe | Special::Mask
        )
    }
}

/// Dense id layout shared by the prompt compiler and the models.
///
/// Text ids are `[0, 16)` plus a pad id 16. Acoustic ids are the codec codes
/// `[0, V_c)` followed by the eight specials in [`Special::ALL`] order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabMap {
    pub text_symbols: usize,
    pub codebook_size: usize,
    pub num_layers: usize,
    pub specials: Vec<String>,
}

impl VocabMap {
    pub fn new(codebook_size: usize, num_layers: usize) -> Self {
        Self {
            text_symbols: ALPHABET_SIZE,
            codebook_size,
            num_layers,
            specials: Special::ALL.iter().map(|s| s.name().to_string()).collect(),
        }
    }

    pub fn text_pad(&self) -> u32 {
        self.text_symbols as u32
    }

    pub fn text_vocab_size(&self) -> usize {
        self.text_symbols + 1
    }

    pub fn special_id(&self, special: Special) -> u32 {
        (self.codebook_size + special.index()) as u32
    }

    pub fn eos(&self) -> u32 {
        self.special_id(Special::Eos)
    }

    pub fn acoustic_vocab_size(&self) -> usize {
        self.codebook_size + self.specials.len()
    }

    pub fn special_from_id(&self, id: u32) -> Option<Special> {
        (id as usize)
            .checked_sub(self.codebook_size)
            .and_then(|i| Special::ALL.get(i).copied())
    }

    /// `(id, name)` for every acoustic id.
    pub fn acoustic_table(&self) -> Vec<(u32, String)> {
        let mut out: Vec<(u32, String)> = (0..self.codebook_size)
            .map(|c| (c as u32, format!("code{c}")))
            .collect();
        for (i, name) in self.specials.iter().enumerate() {
            out.push(((self.codebook_size + i) as u32, name.clone()));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("vocab serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: Self = serde_json::from_str(s).map_err(|e| PromptError::Format(e.to_string()))?;
        let expected: Vec<String> = Special::ALL.iter().map(|s| s.name().to_string()).collect();
        if v.specials != expected {
            return Err(PromptError::Format("special token table changed".into()));
        }
        Ok(v)
    }

    pub fn hash(&self) -> String {
        crate::util::sha256_hex(self.to_json().as_bytes())
    }
}

/// One element of the acoustic prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PromptElement {
    Codes(AcousticTokenMatrix),
    Special(Special),
}

impl PromptElement {
    /// Frames for a code block, one for a special token.
    pub fn len(&self) -> usize {
        match self {
            PromptElement::Codes(m) => m.num_frames(),
            PromptElement::Special(_) => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Total prompt length with each code frame and each special counted once.
pub fn prompt_len(prompt: &[PromptElement]) -> usize {
    prompt.iter().map(PromptElement::len).sum()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExampleMeta {
    pub utterance_ids: Vec<String>,
    pub snr_db: Option<f64>,
    /// Edited span in target frames, `[start, end)`.
    pub edit_span: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub task: TaskSpec,
    pub text: Vec<u32>,
    pub prompt: Vec<PromptElement>,
    pub target: AcousticTokenMatrix,
    pub meta: ExampleMeta,
}

/// Identity mapping from content symbols to text ids.
pub fn g2p_lite(text: &SymbolSeq) -> Result<Vec<u32>> {
    text.0
        .iter()
        .map(|&s| {
            if (s as usize) < ALPHABET_SIZE {
                Ok(s as u32)
            } else {
                Err(PromptError::VocabError(s as u32))
            }
        })
        .collect()
}

pub fn detokenize(ids: &[u32]) -> Result<SymbolSeq> {
    ids.iter()
        .map(|&i| {
            if (i as usize) < ALPHABET_SIZE {
                Ok(i as u8)
            } else {
                Err(PromptError::VocabError(i))
            }
        })
        .collect::<Result<Vec<u8>>>()
        .map(SymbolSeq)
}
