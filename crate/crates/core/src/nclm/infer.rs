use candle_core::DType;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{CodecLm, LmKind};
use super::sequence::{LmItem, SequenceBatch};
use super::{NclmError, Result};
use crate::codec::AcousticTokenMatrix;
use crate::prompting::PromptElement;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// 0 selects the argmax.
    pub temperature: f64,
    /// 0 disables top-k filtering.
    pub top_k: usize,
    /// `None` uses `2 * |A code frames| + 50`.
    pub max_frames: Option<usize>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: 16,
            max_frames: None,
        }
    }
}

impl SamplingConfig {
    pub fn greedy() -> Self {
        Self {
            temperature: 0.0,
            top_k: 0,
            max_frames: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    Eos,
    Cap,
}

/// Index of the largest value, ties to the lowest index.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn sample(logits: &[f64], cfg: &SamplingConfig, rng: &mut ChaCha8Rng) -> usize {
    if cfg.temperature <= 0.0 {
        return argmax(logits);
    }
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    if cfg.top_k > 0 {
        order.truncate(cfg.top_k);
    }
    let max = logits[order[0]];
    let weights: Vec<f64> = order
        .iter()
        .map(|&i| ((logits[i] - max) / cfg.temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (w, &i) in weights.iter().zip(&order) {
        if u < *w {
            return i;
        }
        u -= w;
    }
    *order.last().expect("non-empty vocabulary")
}

fn prompt_code_frames(prompt: &[PromptElement]) -> usize {
    prompt
        .iter()
        .map(|e| match e {
            PromptElement::Codes(m) => m.num_frames(),
            PromptElement::Special(_) => 0,
        })
        .sum()
}

fn last_logits(model: &CodecLm, batch: &SequenceBatch, nar_layer: Option<usize>) -> Result<Vec<Vec<f64>>> {
    Ok(model
        .logits(batch, nar_layer, None)?
        .to_dtype(DType::F64)?
        .to_vec2()?)
}

/// Samples layer-1 codes one frame at a time until `<eos>` or the cap.
///
/// Each step re-runs the full forward pass over `[T, <sep>, A, <sep>, O<t]`.
pub fn ar_generate(
    model: &CodecLm,
    text: &[u32],
    prompt: &[PromptElement],
    sampling: &SamplingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<u32>, StopReason)> {
    if model.kind != LmKind::Ar {
        return Err(NclmError::Config("ar_generate needs an AR model".into()));
    }
    if prompt.is_empty() {
        return Err(NclmError::EmptyPrompt);
    }
    let cap = sampling
        .max_frames
        .unwrap_or(2 * prompt_code_frames(prompt) + 50);
    let eos = model.config.codebook_size;
    let mut codes: Vec<u32> = Vec::new();
    while codes.len() < cap {
        let so_far = AcousticTokenMatrix::new(codes.len(), 1, codes.clone());
        let batch = SequenceBatch::for_ar(
            &model.config,
            &[LmItem {
                text,
                prompt,
                target: &so_far,
            }],
            false,
        )?;
        let logits = last_logits(model, &batch, None)?;
        let next = sample(&logits[0], sampling, rng);
        if next == eos {
            return Ok((codes, StopReason::Eos));
        }
        codes.push(next as u32);
    }
    Ok((codes, StopReason::Cap))
}

/// Argmax codes of layer `l` for every output frame, given layers `1..l-1`.
pub fn nar_infer(
    model: &CodecLm,
    text: &[u32],
    prompt: &[PromptElement],
    partial: &AcousticTokenMatrix,
    l: usize,
) -> Result<Vec<u32>> {
    if model.kind != LmKind::Nar {
        return Err(NclmError::Config("nar_infer needs a NAR model".into()));
    }
    if partial.num_layers() + 1 < l {
        return Err(NclmError::LayerError {
            layer: l,
            layers: partial.num_layers(),
        });
    }
    if partial.is_empty() {
        return Ok(Vec::new());
    }
    let batch = SequenceBatch::for_nar(
        &model.config,
        &[LmItem {
            text,
            prompt,
            target: partial,
        }],
        l,
        false,
    )?;
    let logits = last_logits(model, &batch, Some(l))?;
    Ok(logits.iter().map(|row| argmax(row) as u32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nclm::ModelConfig;
    use rand::SeedableRng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            depth: 1,
            heads: 2,
            d_model: 16,
            d_ff: 32,
            dropout: 0.0,
            num_layers: 2,
            codebook_size: 8,
            max_positions: 128,
            init_std: 0.1,
        }
    }

    fn prompt() -> Vec<PromptElement> {
        vec![PromptElement::Codes(AcousticTokenMatrix::new(2, 2, vec![1, 2, 3, 4]))]
    }

    #[test]
    fn zero_cap_and_empty_prompt() {
        let m = CodecLm::new(tiny(), LmKind::Ar, 0, DType::F32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = SamplingConfig {
            max_frames: Some(0),
            ..SamplingConfig::greedy()
        };
        let (codes, reason) = ar_generate(&m, &[1], &prompt(), &cfg, &mut rng).unwrap();
        assert!(codes.is_empty());
        assert_eq!(reason, StopReason::Cap);
        assert!(matches!(
            ar_generate(&m, &[1], &[], &cfg, &mut rng),
            Err(NclmError::EmptyPrompt)
        ));
    }

    #[test]
    fn greedy_is_deterministic_and_capped() {
        let m = CodecLm::new(tiny(), LmKind::Ar, 0, DType::F32).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let a = ar_generate(&m, &[1, 2], &prompt(), &SamplingConfig::greedy(), &mut r1).unwrap();
        let b = ar_generate(&m, &[1, 2], &prompt(), &SamplingConfig::greedy(), &mut r2).unwrap();
        assert_eq!(a, b);
        assert!(a.0.len() <= 2 * 2 + 50);
    }

    #[test]
    fn nar_output_length_and_layer_check() {
        let m = CodecLm::new(tiny(), LmKind::Nar, 0, DType::F32).unwrap();
        let partial = AcousticTokenMatrix::new(5, 1, vec![0, 1, 2, 3, 4]);
        let out = nar_infer(&m, &[], &prompt(), &partial, 2).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|&c| c < 8));
        assert_eq!(out, nar_infer(&m, &[], &prompt(), &partial, 2).unwrap());
        let tiny3 = ModelConfig {
            num_layers: 3,
            ..tiny()
        };
        let m3 = CodecLm::new(tiny3, LmKind::Nar, 0, DType::F32).unwrap();
        assert!(matches!(
            nar_infer(&m3, &[], &[PromptElement::Codes(AcousticTokenMatrix::new(1, 3, vec![0, 0, 0]))], &partial, 3),
            Err(NclmError::LayerError { .. })
        ));
    }

    #[test]
    fn top_k_sampling_stays_in_top_k() {
        let logits = vec![0.0, 5.0, 4.0, -1.0, 3.0];
        let cfg = SamplingConfig {
            temperature: 1.0,
            top_k: 2,
            max_frames: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let i = sample(&logits, &cfg, &mut rng);
            assert!(i == 1 || i == 2);
        }
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
